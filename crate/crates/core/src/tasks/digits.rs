//! Digit images for the max-digit sets: an IDX (MNIST) reader and a
//! deterministic synthetic stand-in built from 7×5 glyphs.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, DatasetHeader, SetInstance, TaskKind};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const DIGIT_CLASSES: usize = 10;

/// Labelled grayscale images with pixels in `[0, 1]`, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub source: String,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("IDX file truncated in {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}

fn expect_magic(c: &mut Cursor<'_>, magic: u32) -> Result<()> {
    let got = c.u32("magic")?;
    if got != magic {
        return Err(Error::Format(format!("bad IDX magic {got:#010x}, expected {magic:#010x}")));
    }
    Ok(())
}

/// Images file: magic `0x803`, count, rows, cols, then one byte per pixel.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let mut c = Cursor { bytes, pos: 0 };
    expect_magic(&mut c, IDX_IMAGES_MAGIC)?;
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let px = c.take(rows * cols, "pixels")?;
        images.push(px.iter().map(|&p| f64::from(p) / 255.0).collect());
    }
    Ok((rows, cols, images))
}

/// Labels file: magic `0x801`, count, then one byte per label.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor { bytes, pos: 0 };
    expect_magic(&mut c, IDX_LABELS_MAGIC)?;
    let count = c.u32("label count")? as usize;
    let labels = c.take(count, "labels")?.to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= DIGIT_CLASSES) {
        return Err(Error::Format(format!("IDX label {bad} is not a digit")));
    }
    Ok(labels)
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<ImageSet> {
    let (rows, cols, imgs) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if imgs.len() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            imgs.len(),
            labels.len()
        )));
    }
    Ok(ImageSet {
        rows,
        cols,
        images: imgs,
        labels,
        source: "mnist".into(),
    })
}

const GLYPHS: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

pub const GLYPH_ROWS: usize = 7;
pub const GLYPH_COLS: usize = 5;
/// Probability that a synthetic pixel is inverted.
pub const GLYPH_FLIP: f64 = 0.05;
/// Standard deviation of the additive pixel noise, before clamping.
pub const GLYPH_NOISE: f64 = 0.15;

/// Noisy rendering of `digit`: glyph pixels inverted with probability
/// [`GLYPH_FLIP`], Gaussian noise added, clamped to `[0, 1]`.
pub fn synthetic_digit(digit: u8, rng: &mut impl Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, GLYPH_NOISE).expect("valid std");
    GLYPHS[digit as usize]
        .iter()
        .flat_map(|row| row.bytes())
        .map(|b| {
            let mut on = b == b'#';
            if rng.random::<f64>() < GLYPH_FLIP {
                on = !on;
            }
            let base = if on { 1.0 } else { 0.0 };
            (base + noise.sample(&mut *rng)).clamp(0.0, 1.0)
        })
        .collect()
}

/// `per_digit` synthetic images of every digit.
pub fn synthetic_digits(per_digit: usize, seed: u64) -> ImageSet {
    let mut rng = rng_for(seed, "synthetic-digits", 0);
    let mut images = Vec::with_capacity(per_digit * DIGIT_CLASSES);
    let mut labels = Vec::with_capacity(per_digit * DIGIT_CLASSES);
    for _ in 0..per_digit {
        for digit in 0..DIGIT_CLASSES as u8 {
            images.push(synthetic_digit(digit, &mut rng));
            labels.push(digit);
        }
    }
    ImageSet {
        rows: GLYPH_ROWS,
        cols: GLYPH_COLS,
        images,
        labels,
        source: "synthetic".into(),
    }
}

pub fn one_hot(class: usize, classes: usize) -> Tensor {
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    Tensor::vector(v)
}

/// Sets of `set_size` images with distinct digits, labelled by the one-hot
/// maximum digit. With `biased` the maximum sits last; otherwise the order
/// is uniformly random.
pub fn gen_biased_maxdigit(images: &ImageSet, set_size: usize, count: usize, seed: u64, biased: bool) -> Result<Dataset> {
    if set_size == 0 || set_size > DIGIT_CLASSES {
        return Err(Error::invalid(format!("max-digit sets hold 1 to 10 distinct digits, got {set_size}")));
    }
    let mut by_digit: Vec<Vec<usize>> = vec![Vec::new(); DIGIT_CLASSES];
    for (i, &l) in images.labels.iter().enumerate() {
        by_digit[l as usize].push(i);
    }
    if let Some(missing) = by_digit.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("image set has no example of digit {missing}")));
    }
    let d = images.rows * images.cols;
    let all: Vec<u8> = (0..DIGIT_CLASSES as u8).collect();
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng_for(seed, "maxdigit", i as u64);
        let mut digits: Vec<u8> = all.choose_multiple(&mut rng, set_size).copied().collect();
        digits.shuffle(&mut rng);
        let max = *digits.iter().max().expect("non-empty");
        if biased {
            let pos = digits.iter().position(|&x| x == max).expect("present");
            digits.swap(pos, set_size - 1);
        }
        let mut data = Vec::with_capacity(set_size * d);
        for &digit in &digits {
            let &idx = by_digit[digit as usize].choose(&mut rng).expect("non-empty");
            data.extend_from_slice(&images.images[idx]);
        }
        instances.push(SetInstance {
            set: Tensor::new(vec![set_size, d], data)?,
            label: one_hot(max as usize, DIGIT_CLASSES),
            digits: Some(digits),
        });
    }
    let mut header = DatasetHeader::new(TaskKind::Maxdigit, set_size, d, DIGIT_CLASSES, seed, count);
    header.biased = Some(biased);
    header.source = Some(images.source.clone());
    Ok(Dataset { header, instances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(magic: u32, count: u32, rows: u32, cols: u32, px: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [magic, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(px);
        b
    }

    #[test]
    fn idx_magic_and_scaling() {
        let ok = idx_images(0x803, 1, 1, 2, &[0, 255]);
        let (r, c, imgs) = parse_idx_images(&ok).unwrap();
        assert_eq!((r, c), (1, 2));
        assert_eq!(imgs, vec![vec![0.0, 1.0]]);
        let bad = idx_images(0x804, 1, 1, 2, &[0, 255]);
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format(_))));
        let short = idx_images(0x803, 2, 1, 2, &[0, 255]);
        assert!(matches!(parse_idx_images(&short), Err(Error::Format(_))));
    }

    #[test]
    fn idx_labels() {
        let mut b = 0x801u32.to_be_bytes().to_vec();
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&b).unwrap(), vec![7, 0, 9]);
        b[3] = 0x03;
        assert!(parse_idx_labels(&b).is_err());
    }

    #[test]
    fn glyphs_are_seven_by_five() {
        for g in GLYPHS {
            assert!(g.iter().all(|row| row.len() == GLYPH_COLS));
        }
        let pool = synthetic_digits(2, 0);
        assert_eq!(pool.images.len(), 20);
        assert!(pool.images.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }
}
