//! Hard permutations: exact maximum-weight matching and greedy rounding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A permutation stored as `source[i]`: the input row that lands in output
/// row `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PermMatrix {
    source: Vec<usize>,
}

impl PermMatrix {
    pub fn new(source: Vec<usize>) -> Result<Self> {
        let n = source.len();
        let mut seen = vec![false; n];
        for &s in &source {
            if s >= n || std::mem::replace(&mut seen[s], true) {
                return Err(Error::invalid(format!("{source:?} is not a permutation")));
            }
        }
        Ok(PermMatrix { source })
    }

    pub fn identity(n: usize) -> Self {
        PermMatrix {
            source: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.source.len()];
        for (i, &s) in self.source.iter().enumerate() {
            inv[s] = i;
        }
        PermMatrix { source: inv }
    }

    /// 0/1 matrix `M` with `M[source[j], j] = 1`, so that `Mᵀ · X` reorders
    /// the rows of `X` exactly like [`PermMatrix::apply`].
    pub fn to_matrix<S: Scalar>(&self) -> Tensor<S> {
        let n = self.source.len();
        let mut m = Tensor::zeros(&[n, n]);
        for (j, &s) in self.source.iter().enumerate() {
            m.set(s, j, S::one());
        }
        m
    }

    /// Output row `i` is input row `source[i]`.
    pub fn apply<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rank() != 2 || x.rows() != self.len() {
            return Err(Error::shape("permute", x.shape(), &[self.len()]));
        }
        x.select_rows(&self.source)
    }

    /// Sum of `score[source[j], j]`, accumulated in column order.
    pub fn weight<S: Scalar>(&self, score: &Tensor<S>) -> S {
        self.source
            .iter()
            .enumerate()
            .fold(S::zero(), |acc, (j, &s)| acc + score.at(s, j))
    }
}

fn square<S: Scalar>(op: &'static str, score: &Tensor<S>) -> Result<usize> {
    if score.rank() != 2 || score.rows() != score.cols() {
        return Err(Error::shape(op, score.shape(), &[]));
    }
    if !score.all_finite() {
        return Err(Error::NonFinite(op.into()));
    }
    Ok(score.rows())
}

/// Minimum-cost assignment over the rows in `rows` and columns in `cols`
/// (Hungarian method with potentials, O(k³)). Returns `assign[r] = c` as
/// positions within `cols`.
fn hungarian_min<S: Scalar>(cost: impl Fn(usize, usize) -> S, k: usize) -> Vec<usize> {
    // 1-based arrays, index 0 is the virtual column.
    let inf = S::infinity();
    let mut u = vec![S::zero(); k + 1];
    let mut v = vec![S::zero(); k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for c in 1..=k {
                if used[c] {
                    continue;
                }
                let cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=k {
                if used[c] {
                    u[owner[c]] = u[owner[c]] + delta;
                    v[c] = v[c] - delta;
                } else {
                    minv[c] = minv[c] - delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; k];
    for c in 1..=k {
        assign[owner[c] - 1] = c - 1;
    }
    assign
}

/// Optimal weight of the sub-problem with some (row, column) pairs fixed.
fn best_with_fixed<S: Scalar>(score: &Tensor<S>, fixed: &[(usize, usize)]) -> S {
    let n = score.rows();
    let rows: Vec<usize> = (0..n).filter(|r| fixed.iter().all(|f| f.0 != *r)).collect();
    let cols: Vec<usize> = (0..n).filter(|c| fixed.iter().all(|f| f.1 != *c)).collect();
    let assign = hungarian_min(|r, c| -score.at(rows[r], cols[c]), rows.len());
    let free = rows
        .iter()
        .zip(&assign)
        .fold(S::zero(), |acc, (&r, &c)| acc + score.at(r, cols[c]));
    fixed.iter().fold(free, |acc, &(r, c)| acc + score.at(r, c))
}

/// Exact maximum-weight perfect matching of rows (set elements) to columns
/// (positions). Among optimal matchings the lexicographically smallest
/// `source` sequence is returned; ties are compared with a relative
/// tolerance of `1e-12` on the total weight.
///
/// One Hungarian solve is O(n³). Tie resolution re-solves a reduced problem
/// only for candidates smaller than the current choice.
pub fn hard_match<S: Scalar>(score: &Tensor<S>) -> Result<PermMatrix> {
    let n = square("hard_match", score)?;
    if n == 0 {
        return Ok(PermMatrix::identity(0));
    }
    let assign = hungarian_min(|r, c| -score.at(r, c), n);
    let mut current = vec![0; n];
    for (r, &c) in assign.iter().enumerate() {
        current[c] = r;
    }
    let optimum = best_with_fixed(score, &[]);
    let tol = S::lit(1e-12) * (S::one() + optimum.abs());

    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(n);
    for col in 0..n {
        let taken = |r: usize, fixed: &[(usize, usize)]| fixed.iter().any(|f| f.0 == r);
        let mut choice = current[col];
        for cand in 0..current[col] {
            if taken(cand, &fixed) {
                continue;
            }
            let mut trial = fixed.clone();
            trial.push((cand, col));
            if best_with_fixed(score, &trial) >= optimum - tol {
                choice = cand;
                break;
            }
        }
        fixed.push((choice, col));
        if choice != current[col] {
            // Re-solve the rest so later columns compare against an optimal completion.
            let rows: Vec<usize> = (0..n).filter(|r| !taken(*r, &fixed)).collect();
            let cols: Vec<usize> = (col + 1..n).collect();
            let sub = hungarian_min(|r, c| -score.at(rows[r], cols[c]), rows.len());
            for (ri, &ci) in sub.iter().enumerate() {
                current[cols[ci]] = rows[ri];
            }
        }
    }
    let mut source = vec![0; n];
    for (r, c) in fixed {
        source[c] = r;
    }
    PermMatrix::new(source)
}

/// Rounds a (near) doubly-stochastic matrix to a permutation by repeatedly
/// taking the largest remaining entry and striking out its row and column.
/// Ties go to the lower row, then the lower column. O(n² log n).
pub fn greedy_round<S: Scalar>(p: &Tensor<S>) -> Result<PermMatrix> {
    let n = square("greedy_round", p)?;
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    entries.sort_by(|&(i1, j1), &(i2, j2)| {
        p.at(i2, j2)
            .as_f64()
            .total_cmp(&p.at(i1, j1).as_f64())
            .then(i1.cmp(&i2))
            .then(j1.cmp(&j2))
    });
    let mut row_used = vec![false; n];
    let mut source = vec![usize::MAX; n];
    let mut placed = 0;
    for (i, j) in entries {
        if row_used[i] || source[j] != usize::MAX {
            continue;
        }
        row_used[i] = true;
        source[j] = i;
        placed += 1;
        if placed == n {
            break;
        }
    }
    PermMatrix::new(source)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn small_matchings() {
        let a = hard_match(&m(&[vec![0.9, 0.1], vec![0.2, 0.8]])).unwrap();
        assert_eq!(a.source(), &[0, 1]);
        let b = hard_match(&m(&[vec![0.1, 0.9], vec![0.8, 0.2]])).unwrap();
        assert_eq!(b.source(), &[1, 0]);
    }

    #[test]
    fn ties_prefer_lexicographically_smallest() {
        let all_equal = m(&[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]]);
        assert_eq!(hard_match(&all_equal).unwrap().source(), &[0, 1, 2]);
        // Optimal sources (0,1,2) and (1,0,2) both weigh 2.
        let s = m(&[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert_eq!(hard_match(&s).unwrap().source(), &[0, 1, 2]);
    }

    #[test]
    fn non_square_rejected() {
        assert!(hard_match(&Tensor::<f64>::zeros(&[2, 3])).is_err());
        assert!(greedy_round(&Tensor::<f64>::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn greedy_cases() {
        let near = m(&[vec![0.005, 0.99, 0.005], vec![0.99, 0.005, 0.005], vec![0.005, 0.005, 0.99]]);
        assert_eq!(greedy_round(&near).unwrap().source(), &[1, 0, 2]);
        let uniform = Tensor::<f64>::full(&[4, 4], 0.25);
        assert_eq!(greedy_round(&uniform).unwrap(), PermMatrix::identity(4));
    }

    #[test]
    fn permutation_validation_and_inverse() {
        assert!(PermMatrix::new(vec![0, 0]).is_err());
        assert!(PermMatrix::new(vec![0, 2]).is_err());
        let p = PermMatrix::new(vec![2, 0, 3, 1]).unwrap();
        let x = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let back = p.inverse().apply(&p.apply(&x).unwrap()).unwrap();
        assert_eq!(back, x);
        let mt: Tensor<f64> = p.to_matrix::<f64>().transpose().unwrap();
        let pm: Tensor<f64> = p.to_matrix();
        assert_eq!(mt.matmul(&pm).unwrap(), Tensor::eye(4));
    }
}
