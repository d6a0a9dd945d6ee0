//! Dense complex linear algebra for dimensions 2 through 4.
//!
//! Everything here works on fixed-capacity value types, so matrices and
//! vectors are `Copy` and never allocate. The eigensolver reduces to upper
//! Hessenberg form, runs single-shift complex QR with Wilkinson shifts and
//! closed-form 2x2 deflation, then recovers right eigenvectors by inverse
//! iteration. Left eigenvectors come from the inverse of the right-vector
//! matrix, which makes the pair biorthonormal.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64 as C64;
use thiserror::Error;

/// Largest supported dimension.
pub const MAX_DIM: usize = 4;

/// Below this reciprocal condition number the eigenbasis is treated as defective.
pub const DEFECTIVE_TOL: f64 = 1e-8;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("unsupported dimension {0} (expected 2..=4)")]
    Dimension(usize),
    #[error("expected {expected} entries, got {got}")]
    EntryCount { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    Mismatch(usize, usize),
    #[error("QR iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is singular")]
    Singular,
}

/// Square complex matrix of dimension 2, 3 or 4, stored row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: [C64; MAX_DIM * MAX_DIM],
}

/// Complex column vector of dimension 1 through 4.
#[derive(Clone, Copy, PartialEq)]
pub struct ComplexVector {
    dim: usize,
    data: [C64; MAX_DIM],
}

fn check_dim(dim: usize) -> Result<(), LinalgError> {
    if (2..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(LinalgError::Dimension(dim))
    }
}

impl ComplexMatrix {
    /// Zero matrix. Panics if `dim` is outside 2..=4.
    pub fn zeros(dim: usize) -> Self {
        check_dim(dim).expect("matrix dimension");
        Self { dim, data: [ZERO; MAX_DIM * MAX_DIM] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Build from row-major entries, rejecting wrong counts and non-finite values.
    pub fn from_row_major(dim: usize, entries: &[C64]) -> Result<Self, LinalgError> {
        check_dim(dim)?;
        if entries.len() != dim * dim {
            return Err(LinalgError::EntryCount { expected: dim * dim, got: entries.len() });
        }
        let mut m = Self::zeros(dim);
        for (k, &z) in entries.iter().enumerate() {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(LinalgError::NonFinite { row: k / dim, col: k % dim });
            }
            m.data[k] = z;
        }
        Ok(m)
    }

    /// Row-major entries as a fixed array of `N = dim*dim` elements.
    pub fn to_array<const N: usize>(&self) -> [C64; N] {
        assert_eq!(N, self.dim * self.dim, "array length must equal dim^2");
        let mut out = [ZERO; N];
        out.copy_from_slice(&self.data[..N]);
        out
    }

    /// Inverse of [`to_array`](Self::to_array); `N` must be 4, 9 or 16.
    pub fn from_array<const N: usize>(entries: &[C64; N]) -> Self {
        let dim = match N {
            4 => 2,
            9 => 3,
            16 => 4,
            _ => panic!("array length {N} is not a supported square"),
        };
        let mut m = Self::zeros(dim);
        m.data[..N].copy_from_slice(entries);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[C64] {
        &self.data[..self.dim * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] = self[(j, i)].conj();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                m[(i, j)] = self[(j, i)];
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        let mut m = *self;
        m.data.iter_mut().for_each(|z| *z = z.conj());
        m
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut m = *self;
        m.data[..self.dim * self.dim].iter_mut().for_each(|z| *z *= s);
        m
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max column sum of moduli.
    pub fn norm_one(&self) -> f64 {
        (0..self.dim).map(|j| (0..self.dim).map(|i| self[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Largest |A_ij - conj(A_ji)|.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// (A + A†)/2
    pub fn hermitian_part(&self) -> Self {
        (*self + self.adjoint()).scale(C64::new(0.5, 0.0))
    }

    pub fn column(&self, j: usize) -> ComplexVector {
        let mut v = ComplexVector::zeros(self.dim);
        for i in 0..self.dim {
            v[i] = self[(i, j)];
        }
        v
    }

    pub fn from_columns(cols: &[ComplexVector]) -> Self {
        let dim = cols.len();
        let mut m = Self::zeros(dim);
        for (j, c) in cols.iter().enumerate() {
            assert_eq!(c.dim(), dim);
            for i in 0..dim {
                m[(i, j)] = c[i];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &ComplexVector) -> ComplexVector {
        assert_eq!(self.dim, v.dim, "matrix-vector dimension mismatch");
        let mut out = ComplexVector::zeros(self.dim);
        for i in 0..self.dim {
            let mut acc = ZERO;
            for j in 0..self.dim {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// |u><v|
    pub fn outer(u: &ComplexVector, v: &ComplexVector) -> Self {
        assert_eq!(u.dim, v.dim);
        let mut m = Self::zeros(u.dim);
        for i in 0..u.dim {
            for j in 0..u.dim {
                m[(i, j)] = u[i] * v[j].conj();
            }
        }
        m
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self, LinalgError> {
        let n = self.dim;
        let mut a = *self;
        let mut inv = Self::identity(n);
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[(x, col)].norm().total_cmp(&a[(y, col)].norm())).unwrap();
            if a[(pivot, col)].norm() == 0.0 {
                return Err(LinalgError::Singular);
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == ZERO {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(i, j)] -= f * ac;
                    inv[(i, j)] -= f * ic;
                }
            }
        }
        if !inv.is_finite() {
            return Err(LinalgError::Singular);
        }
        Ok(inv)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.dim && c < self.dim);
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.dim && c < self.dim);
        &mut self.data[r * self.dim + c]
    }
}

impl Add for ComplexMatrix {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for ComplexMatrix {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
        self
    }
}

impl Neg for ComplexMatrix {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(C64::new(-1.0, 0.0))
    }
}

impl Mul for ComplexMatrix {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matrix dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<_> = (0..self.dim).map(|i| (0..self.dim).map(|j| self[(i, j)]).collect::<Vec<_>>()).collect();
        f.debug_struct("ComplexMatrix").field("dim", &self.dim).field("rows", &rows).finish()
    }
}

impl ComplexVector {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "vector dimension {dim}");
        Self { dim, data: [ZERO; MAX_DIM] }
    }

    pub fn from_slice(entries: &[C64]) -> Self {
        let mut v = Self::zeros(entries.len());
        v.data[..entries.len()].copy_from_slice(entries);
        v
    }

    /// Standard basis vector e_k.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = Self::zeros(dim);
        v[k] = ONE;
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data[..self.dim]
    }

    pub fn norm(&self) -> f64 {
        self.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Sesquilinear product <self|other>, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.dim, other.dim);
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut v = *self;
        v.data[..self.dim].iter_mut().for_each(|z| *z *= s);
        v
    }

    /// Unit-norm copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            *self
        } else {
            self.scale(C64::new(1.0 / n, 0.0))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<usize> for ComplexVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        debug_assert!(i < self.dim);
        &self.data[i]
    }
}

impl IndexMut<usize> for ComplexVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        debug_assert!(i < self.dim);
        &mut self.data[i]
    }
}

impl Add for ComplexVector {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for ComplexVector {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
        self
    }
}

impl fmt::Debug for ComplexVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// Eigenvalues with right and left eigenvectors of a non-Hermitian matrix.
///
/// Right vectors have unit Euclidean norm. Left vectors are stored as kets
/// `|l_i>` with `<l_i|r_j> = delta_ij`, so that `A† |l_i> = conj(lambda_i) |l_i>`.
/// When the right-vector matrix is numerically singular (defective matrix,
/// e.g. at an exceptional point) the left vectors are unit-norm solutions of
/// the adjoint problem instead and the pairing no longer holds.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<C64>,
    pub right: Vec<ComplexVector>,
    pub left: Vec<ComplexVector>,
    /// Reciprocal 1-norm condition number of the right-vector matrix.
    pub defectiveness: f64,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_defective(&self) -> bool {
        self.defectiveness <= DEFECTIVE_TOL
    }
}

/// Total order used for every spectrum: descending real part, then
/// descending imaginary part. Real parts are compared on a grid of width
/// `quantum` so that round-off noise does not reorder sheets.
fn spectral_order(a: C64, b: C64, quantum: f64) -> Ordering {
    let qa = (a.re / quantum).round();
    let qb = (b.re / quantum).round();
    qb.total_cmp(&qa).then_with(|| b.im.total_cmp(&a.im))
}

/// Sort eigenvalue indices with the global convention.
pub fn sort_spectrum(values: &[C64], scale: f64) -> Vec<usize> {
    let quantum = 1e-12 * scale.max(1.0);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| spectral_order(values[i], values[j], quantum));
    idx
}

/// Eigenvalues of [[a, b], [c, d]] in closed form. An exactly vanishing
/// discriminant yields an exactly repeated root.
pub fn eigenvalues_2x2(a: C64, b: C64, c: C64, d: C64) -> (C64, C64) {
    let mean = (a + d) * 0.5;
    let half = (a - d) * 0.5;
    let disc = (half * half + b * c).sqrt();
    if disc == ZERO {
        return (mean, mean);
    }
    let (big, other) = if (mean + disc).norm() >= (mean - disc).norm() {
        (mean + disc, mean - disc)
    } else {
        (mean - disc, mean + disc)
    };
    // Use the determinant for the smaller root to avoid cancellation.
    let det = a * d - b * c;
    let small = if big != ZERO && other.norm() < 1e-3 * big.norm() { det / big } else { other };
    (big, small)
}

fn hessenberg(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.dim();
    let mut h = *a;
    for k in 0..n.saturating_sub(2) {
        let mut v = [ZERO; MAX_DIM];
        let mut xnorm2 = 0.0;
        for i in (k + 1)..n {
            v[i] = h[(i, k)];
            xnorm2 += v[i].norm_sqr();
        }
        let xnorm = xnorm2.sqrt();
        if xnorm == 0.0 {
            continue;
        }
        let x0 = v[k + 1];
        let phase = if x0.norm() == 0.0 { ONE } else { x0 / x0.norm() };
        let alpha = -phase * xnorm;
        v[k + 1] -= alpha;
        let vnorm2: f64 = ((k + 1)..n).map(|i| v[i].norm_sqr()).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // H <- (I - beta v v^H) H
        for j in 0..n {
            let s: C64 = ((k + 1)..n).map(|i| v[i].conj() * h[(i, j)]).sum();
            for i in (k + 1)..n {
                h[(i, j)] -= v[i] * s * beta;
            }
        }
        // H <- H (I - beta v v^H)
        for i in 0..n {
            let s: C64 = ((k + 1)..n).map(|j| h[(i, j)] * v[j]).sum();
            for j in (k + 1)..n {
                h[(i, j)] -= s * v[j].conj() * beta;
            }
        }
        for i in (k + 2)..n {
            h[(i, k)] = ZERO;
        }
    }
    h
}

/// Givens rotation (c, s) with c real such that
/// [[c, s], [-conj(s), c]] * [a, b]^T = [r, 0]^T.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, ZERO);
    }
    if an == 0.0 {
        return (0.0, ONE);
    }
    let r = an.hypot(bn);
    let c = an / r;
    let s = (a / an) * b.conj() / r;
    (c, s)
}

const QR_ITERATIONS_PER_EIGENVALUE: usize = 40;

/// Eigenvalues of a matrix via Hessenberg QR. Unsorted.
pub fn eigenvalues(a: &ComplexMatrix) -> Result<Vec<C64>, LinalgError> {
    let n = a.dim();
    if !a.is_finite() {
        return Err(LinalgError::NonFinite { row: 0, col: 0 });
    }
    if n == 2 {
        let (l1, l2) = eigenvalues_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
        return Ok(vec![l1, l2]);
    }
    let mut h = hessenberg(a);
    let scale = h.max_abs().max(f64::MIN_POSITIVE);
    let eps = f64::EPSILON;
    let mut values = vec![ZERO; n];
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    let budget = QR_ITERATIONS_PER_EIGENVALUE * n;
    loop {
        if hi == 0 {
            values[0] = h[(0, 0)];
            break;
        }
        // Locate the start of the active unreduced block.
        let mut lo = hi;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let mut diag = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            if diag == 0.0 {
                diag = scale;
            }
            if sub <= eps * diag {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            values[hi] = h[(hi, hi)];
            hi -= 1;
            iter = 0;
            continue;
        }
        if lo + 1 == hi {
            let (l1, l2) = eigenvalues_2x2(h[(lo, lo)], h[(lo, hi)], h[(hi, lo)], h[(hi, hi)]);
            values[lo] = l1;
            values[hi] = l2;
            if lo == 0 {
                break;
            }
            hi = lo - 1;
            iter = 0;
            continue;
        }
        if total >= budget {
            return Err(LinalgError::NoConvergence { iterations: total, residual: h[(hi, hi - 1)].norm() });
        }
        iter += 1;
        total += 1;
        let shift = if iter.is_multiple_of(11) {
            // Exceptional shift to break cycles.
            h[(hi, hi)] + C64::new(0.75 * h[(hi, hi - 1)].norm(), 0.0)
        } else {
            let (l1, l2) = eigenvalues_2x2(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)]);
            if (l1 - h[(hi, hi)]).norm() <= (l2 - h[(hi, hi)]).norm() {
                l1
            } else {
                l2
            }
        };
        qr_step(&mut h, lo, hi, shift);
    }
    Ok(values)
}

/// One shifted QR sweep on the window lo..=hi of an upper Hessenberg matrix.
fn qr_step(h: &mut ComplexMatrix, lo: usize, hi: usize, shift: C64) {
    let n = h.dim();
    for k in lo..=hi {
        h[(k, k)] -= shift;
    }
    let mut rots = [(1.0, ZERO); MAX_DIM];
    for k in lo..hi {
        let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
        rots[k] = (c, s);
        for j in k..n {
            let x = h[(k, j)];
            let y = h[(k + 1, j)];
            h[(k, j)] = x * c + s * y;
            h[(k + 1, j)] = -s.conj() * x + y * c;
        }
        h[(k + 1, k)] = ZERO;
    }
    for k in lo..hi {
        let (c, s) = rots[k];
        let top = (k + 2).min(hi);
        for i in 0..=top {
            let x = h[(i, k)];
            let y = h[(i, k + 1)];
            h[(i, k)] = x * c + y * s.conj();
            h[(i, k + 1)] = -x * s + y * c;
        }
    }
    for k in lo..=hi {
        h[(k, k)] += shift;
    }
}

/// LU factorization with partial pivoting in which vanishing pivots are
/// replaced by a tiny value, so that shifted systems at an exact eigenvalue
/// stay solvable.
struct PerturbedLu {
    lu: ComplexMatrix,
    perm: [usize; MAX_DIM],
}

impl PerturbedLu {
    fn new(a: &ComplexMatrix, tiny: f64) -> Self {
        let n = a.dim();
        let mut lu = *a;
        let mut perm = [0, 1, 2, 3];
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| lu[(x, k)].norm().total_cmp(&lu[(y, k)].norm())).unwrap();
            if p != k {
                for j in 0..n {
                    lu.data.swap(p * n + j, k * n + j);
                }
                perm.swap(p, k);
            }
            if lu[(k, k)].norm() < tiny {
                lu[(k, k)] = C64::new(tiny, 0.0);
            }
            let piv = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= f * u;
                }
            }
        }
        Self { lu, perm }
    }

    fn solve(&self, b: &ComplexVector) -> ComplexVector {
        let n = self.lu.dim();
        let mut x = ComplexVector::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= l * xj;
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let u = self.lu[(i, j)];
                let xj = x[j];
                x[i] -= u * xj;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

fn start_vector(n: usize, seed: usize) -> ComplexVector {
    // Deterministic, generic start vectors (no special structure).
    const TABLE: [(f64, f64); 8] = [
        (1.0, 0.0),
        (0.618, 0.211),
        (-0.37, 0.529),
        (0.283, -0.447),
        (0.52, 0.31),
        (-0.19, -0.61),
        (0.73, -0.05),
        (0.11, 0.83),
    ];
    let mut v = ComplexVector::zeros(n);
    for i in 0..n {
        let (re, im) = TABLE[(i + 3 * seed) % TABLE.len()];
        v[i] = C64::new(re, im);
    }
    v.normalized()
}

fn orthogonalize(v: &mut ComplexVector, against: &[ComplexVector]) {
    for _ in 0..2 {
        for u in against {
            let c = u.inner(v);
            *v = *v - u.scale(c);
        }
    }
}

/// Inverse iteration for the eigenvector of `a` at `lambda`, optionally kept
/// orthogonal to `against`. Returns the unit vector and its residual norm.
fn inverse_iteration(
    a: &ComplexMatrix,
    lambda: C64,
    scale: f64,
    against: &[ComplexVector],
    seed: usize,
) -> (ComplexVector, f64) {
    let n = a.dim();
    let shifted = *a - ComplexMatrix::identity(n).scale(lambda);
    let lu = PerturbedLu::new(&shifted, f64::EPSILON * scale);
    let residual = |x: &ComplexVector| (a.mul_vec(x) - x.scale(lambda)).norm();
    let mut x = start_vector(n, seed);
    orthogonalize(&mut x, against);
    x = x.normalized();
    // At a defective eigenvalue successive iterates alternate between the
    // eigenvector and a generalized eigenvector, so keep the best iterate.
    let mut best = (x, residual(&x));
    for _ in 0..4 {
        let mut y = lu.solve(&x);
        if !y.is_finite() {
            break;
        }
        orthogonalize(&mut y, against);
        let ny = y.norm();
        if ny == 0.0 {
            break;
        }
        x = y.scale(C64::new(1.0 / ny, 0.0));
        let r = residual(&x);
        if r < best.1 {
            best = (x, r);
        }
        if best.1 <= 4.0 * f64::EPSILON * scale {
            break;
        }
    }
    best
}

/// Full non-Hermitian eigendecomposition with the global sort order.
pub fn eig(a: &ComplexMatrix) -> Result<EigenSystem, LinalgError> {
    let n = a.dim();
    let raw = eigenvalues(a)?;
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let order = sort_spectrum(&raw, scale);
    let values: Vec<C64> = order.iter().map(|&i| raw[i]).collect();

    let cluster_tol = 1e-9 * scale.max(1.0);
    let accept_tol = 1e-12 * scale.max(1.0);
    let mut right: Vec<ComplexVector> = Vec::with_capacity(n);
    for (i, &lambda) in values.iter().enumerate() {
        let cluster: Vec<ComplexVector> =
            (0..i).filter(|&j| (values[j] - lambda).norm() <= cluster_tol).map(|j| right[j]).collect();
        let (plain, plain_res) = inverse_iteration(a, lambda, scale, &[], i);
        let mut chosen = plain;
        if !cluster.is_empty() {
            // Degenerate eigenvalue: look for an independent eigenvector first,
            // falling back to the plain one (defective case).
            let (ortho, ortho_res) = inverse_iteration(a, lambda, scale, &cluster, i);
            if ortho_res <= accept_tol.max(plain_res) && ortho.norm() > 0.5 {
                chosen = ortho;
            }
        }
        right.push(chosen);
    }

    let r = ComplexMatrix::from_columns(&right);
    let (left, defectiveness) = match r.inverse() {
        Ok(rinv) => {
            let rcond = 1.0 / (r.norm_one() * rinv.norm_one());
            if rcond > 1e-14 {
                let left = (0..n)
                    .map(|i| {
                        let mut l = ComplexVector::zeros(n);
                        for k in 0..n {
                            l[k] = rinv[(i, k)].conj();
                        }
                        l
                    })
                    .collect();
                (left, rcond)
            } else {
                (adjoint_vectors(a, &values, scale), rcond)
            }
        }
        Err(_) => (adjoint_vectors(a, &values, scale), 0.0),
    };
    Ok(EigenSystem { eigenvalues: values, right, left, defectiveness })
}

fn adjoint_vectors(a: &ComplexMatrix, values: &[C64], scale: f64) -> Vec<ComplexVector> {
    let ah = a.adjoint();
    values.iter().enumerate().map(|(i, &l)| inverse_iteration(&ah, l.conj(), scale, &[], i).0).collect()
}

/// Real eigenvalues of a Hermitian matrix, descending.
pub fn hermitian_eigenvalues(m: &ComplexMatrix, tol: f64) -> Result<Vec<f64>, LinalgError> {
    let deviation = m.hermiticity_deviation();
    if deviation > tol * m.max_abs().max(1.0) {
        return Err(LinalgError::NotHermitian { deviation });
    }
    let h = m.hermitian_part();
    let mut vals: Vec<f64> = eigenvalues(&h)?.into_iter().map(|z| z.re).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Trace norm Tr sqrt(M† M) of a Hermitian matrix, i.e. the sum of the
/// absolute eigenvalues.
pub fn trace_norm_hermitian(m: &ComplexMatrix) -> Result<f64, LinalgError> {
    Ok(hermitian_eigenvalues(m, 1e-12)?.iter().map(|x| x.abs()).sum())
}
