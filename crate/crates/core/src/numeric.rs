//! Dense row-major matrices, stable reductions and seeded random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                axpy(aik, other.row(k), o);
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "matmul_t {:?} x {:?}ᵀ",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "t_matmul {:?}ᵀ x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                axpy(ai, b, out.row_mut(i));
            }
        }
        Ok(out)
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape(format!(
                "bias of length {} for {} columns",
                bias.len(),
                self.cols
            )));
        }
        for i in 0..self.rows {
            for (v, b) in self.row_mut(i).iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (acc, v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales every nonzero row to unit Euclidean norm. Zero rows pass through.
pub fn l2_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Backpropagates through [`l2_normalize_rows`]: given the raw rows and the
/// gradient with respect to the normalized rows, returns the gradient with
/// respect to the raw rows. Zero rows receive zero gradient.
pub fn l2_normalize_rows_backward(raw: &Matrix, grad_normalized: &Matrix) -> Result<Matrix> {
    if raw.shape() != grad_normalized.shape() {
        return Err(Error::Shape(format!(
            "normalization backward {:?} vs {:?}",
            raw.shape(),
            grad_normalized.shape()
        )));
    }
    let mut out = Matrix::zeros(raw.rows, raw.cols);
    for i in 0..raw.rows {
        let y = raw.row(i);
        let n = norm(y);
        if n == 0.0 {
            continue;
        }
        let g = grad_normalized.row(i);
        // d(y/|y|) = (g - u (u·g)) / |y| with u = y/|y|
        let ug = dot(y, g) / n;
        for ((o, &yi), &gi) in out.row_mut(i).iter_mut().zip(y).zip(g) {
            *o = (gi - yi / n * ug) / n;
        }
    }
    Ok(out)
}

/// `log Σ exp(v_i)` with a max shift.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let (max, tail) = lse_parts(v);
    Ok(max + tail)
}

/// Splits `log Σ exp(v_i)` into the maximum and `ln(1 + Σ_{i≠argmax} exp(v_i − max))`,
/// keeping full precision when one entry dominates.
fn lse_parts(v: &[f64]) -> (f64, f64) {
    let (am, max) = v
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) });
    let rest: f64 = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != am)
        .map(|(_, x)| (x - max).exp())
        .sum();
    (max, rest.ln_1p())
}

/// Replaces a row of logits by its softmax and returns `−log softmax[target]`.
pub(crate) fn softmax_nll_in_place(v: &mut [f64], target: usize) -> f64 {
    let (max, tail) = lse_parts(v);
    let nll = (max - v[target]) + tail;
    let denom = tail.exp();
    for x in v.iter_mut() {
        *x = (*x - max).exp() / denom;
    }
    nll
}

/// Deterministic random stream keyed by `(master_seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id selecting an independent keystream,
/// so any number of streams can be drawn in any order or concurrently without
/// affecting each other.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        Self {
            master_seed,
            stream_id,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::SampleTooLarge { k, n });
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        Ok(pool)
    }

    /// `k` distinct elements of `items`, in draw order.
    pub fn choose_from<T: Copy>(&mut self, items: &[T], k: usize) -> Result<Vec<T>> {
        Ok(self
            .choose(items.len(), k)?
            .into_iter()
            .map(|i| items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_rows() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let n = l2_normalize_rows(&m);
        assert!((n[(0, 0)] - 0.6).abs() < 1e-12);
        assert!((n[(0, 1)] - 0.8).abs() < 1e-12);
        assert_eq!(n.row(1), &[0.0, 0.0]);

        let single = Matrix::from_rows(&[vec![5.0]]).unwrap();
        assert_eq!(l2_normalize_rows(&single).row(0), &[1.0]);
    }

    #[test]
    fn log_sum_exp_cases() {
        assert!((log_sum_exp(&[0.0; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyReduction)));
        assert_eq!(Error::EmptyReduction.to_string(), "empty reduction");
    }

    #[test]
    fn choose_contract() {
        let mut r = RngStream::new(7, 0);
        let mut p = r.choose(10, 10).unwrap();
        p.sort_unstable();
        assert_eq!(p, (0..10).collect::<Vec<_>>());
        let err = r.choose(2, 3).unwrap_err();
        assert!(err.to_string().contains("sample larger than population"));
        let d = r.choose(100, 30).unwrap();
        let mut s = d.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 30);
    }

    #[test]
    fn streams_are_deterministic_and_independent() {
        let draw = |seed, stream| {
            let mut r = RngStream::new(seed, stream);
            (0..16).map(|_| r.uniform()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42, 3), draw(42, 3));
        assert_ne!(draw(42, 3), draw(42, 4));
        assert_ne!(draw(42, 3), draw(43, 3));

        // interleaving other streams does not disturb a stream
        let mut a = RngStream::new(1, 1);
        let mut b = RngStream::new(1, 2);
        let mut mixed = Vec::new();
        for _ in 0..16 {
            mixed.push(a.uniform());
            b.gaussian();
        }
        assert_eq!(mixed, draw(1, 1));
    }

    #[test]
    fn gaussian_mean_is_centered() {
        let n = 100_000;
        let mut r = RngStream::new(2024, 9);
        let mean = (0..n).map(|_| r.gaussian()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.to_rows(), vec![vec![7.0, -1.0], vec![16.0, -1.0]]);

        let bt = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, -1.0]]).unwrap();
        assert_eq!(a.matmul_t(&bt).unwrap(), ab);

        let at = Matrix::from_rows(&[vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(at.t_matmul(&b).unwrap(), ab);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let raw = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let weights = Matrix::from_rows(&[vec![0.5, 1.5, -0.7], vec![1.0, 1.0, 1.0]]).unwrap();
        let f = |m: &Matrix| dot(l2_normalize_rows(m).as_slice(), weights.as_slice());
        let g = l2_normalize_rows_backward(&raw, &weights).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut p = raw.clone();
            p[(0, j)] += h;
            let mut m = raw.clone();
            m[(0, j)] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[(0, j)]).abs() < 1e-8);
        }
        assert_eq!(g.row(1), &[0.0, 0.0, 0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = Matrix> {
            (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
                prop::collection::vec(-100.0f64..100.0, r * c)
                    .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn normalization_is_idempotent(m in matrix()) {
                let once = l2_normalize_rows(&m);
                let twice = l2_normalize_rows(&once);
                for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                for r in once.iter_rows() {
                    let n = norm(r);
                    prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn log_sum_exp_is_shift_equivariant(
                v in prop::collection::vec(-50.0f64..50.0, 1..20),
                c in -1e3f64..1e3,
            ) {
                let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
                let lhs = log_sum_exp(&shifted).unwrap();
                let rhs = log_sum_exp(&v).unwrap() + c;
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }

            #[test]
            fn log_sum_exp_survives_large_entries(v in prop::collection::vec(-1e4f64..1e4, 1..10)) {
                prop_assert!(log_sum_exp(&v).unwrap().is_finite());
            }
        }
    }
}
