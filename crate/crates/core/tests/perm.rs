use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spanlab::perm::{
    apply_soft_matrix, greedy_round, hard_match, sinkhorn, sinkhorn_matrix, DoublyStochastic, PermMatrix,
};
use spanlab::tensor::finite_difference_check;
use spanlab::Tensor;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Heap's algorithm over all n! permutations; returns the best weight found.
fn brute_force_best(score: &Tensor) -> f64 {
    let n = score.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let weight = |p: &[usize]| PermMatrix::new(p.to_vec()).unwrap().weight(score);
    let mut best = weight(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(weight(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

#[test]
fn sinkhorn_marginals_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=32);
        let logits = uniform(&[n, n], -2.0, 2.0, &mut rng);
        let ds = sinkhorn_matrix(&logits, 1.0, 100).unwrap();
        worst = worst.max(ds.marginal_error());
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn random_positive_eight_by_eight() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = uniform(&[8, 8], 0.0, 1.0, &mut rng);
    let ds = sinkhorn_matrix(&logits, 1.0, 100).unwrap();
    assert!(ds.marginal_error() <= 1e-6);
}

#[test]
fn hungarian_matches_brute_force() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=8);
        let score = uniform(&[n, n], 0.0, 1.0, &mut rng);
        let got = hard_match(&score).unwrap().weight(&score);
        assert_eq!(got, brute_force_best(&score), "seed {seed}, n {n}");
    }
}

#[test]
fn greedy_rounding_of_sharp_sinkhorn_agrees_with_hungarian() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut agree = 0;
    for _ in 0..100 {
        let logits = uniform(&[8, 8], 0.0, 1.0, &mut rng);
        let soft = sinkhorn_matrix(&logits, 0.01, 100).unwrap();
        if greedy_round(soft.matrix()).unwrap() == hard_match(&logits).unwrap() {
            agree += 1;
        }
    }
    assert!(agree >= 95, "{agree}/100");
}

#[test]
fn rounding_is_stable_as_temperature_drops() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let planted = random_perm(n, &mut rng);
        let logits = uniform(&[n, n], 0.0, 1.0, &mut rng);
        let logits = logits.add(&planted.to_matrix()).unwrap();
        let warm = greedy_round(sinkhorn_matrix(&logits, 0.1, 100).unwrap().matrix()).unwrap();
        let cold = greedy_round(sinkhorn_matrix(&logits, 0.01, 100).unwrap().matrix()).unwrap();
        assert_eq!(warm, cold);
    }
}

#[test]
fn diagonal_dominant_rounds_to_identity() {
    for n in [2, 5, 16] {
        let logits = Tensor::eye(n).map(|x| 3.0 * x);
        let ds = sinkhorn_matrix(&logits, 0.1, 100).unwrap();
        assert_eq!(greedy_round(ds.matrix()).unwrap(), PermMatrix::identity(n));
        assert_eq!(hard_match(ds.matrix()).unwrap(), PermMatrix::identity(n));
    }
}

#[test]
fn gradient_through_sinkhorn_relu_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for &(n, d, tau) in &[(3usize, 2usize, 0.5), (4, 3, 1.0), (5, 2, 0.7)] {
        let x = uniform(&[n, d], 0.1, 1.5, &mut rng);
        let w = uniform(&[d, n], -1.0, 1.0, &mut rng);
        let probe = uniform(&[n, n], -1.0, 1.0, &mut rng);
        let err = finite_difference_check(
            |v| {
                let scores = v[0].matmul(&v[1])?.relu();
                let p = sinkhorn(&scores, tau, 30)?;
                Ok(p.mul(&v[0].tape().constant(probe.clone()))?.sum_all())
            },
            &[x.clone(), w.clone()],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "n={n} tau={tau}: {err}");
    }
}

fn random_perm(n: usize, rng: &mut impl Rng) -> PermMatrix {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    PermMatrix::new(idx).unwrap()
}

proptest! {
    #[test]
    fn lifted_permutation_equals_reindexing(n in 1usize..12, d in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&[n, d], -5.0, 5.0, &mut rng);
        let p = random_perm(n, &mut rng);
        let ds = DoublyStochastic::new(p.to_matrix(), 0.0).unwrap();
        prop_assert_eq!(apply_soft_matrix(&ds, &x).unwrap(), p.apply(&x).unwrap());
    }

    #[test]
    fn transpose_is_inverse(n in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_perm(n, &mut rng);
        let m: Tensor = p.to_matrix();
        prop_assert_eq!(m.transpose().unwrap().matmul(&m).unwrap(), Tensor::eye(n));
        prop_assert_eq!(p.inverse().to_matrix::<f64>(), m.transpose().unwrap());
    }
}
