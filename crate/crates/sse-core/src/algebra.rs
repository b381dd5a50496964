//! Dense complex small-matrix kernel.
//!
//! Everything here is sized for few-level systems: matrices are n×n with
//! n ≤ 4 in practice, superoperators are n²×n² acting on column-stacked
//! matrices. The matrix exponential uses Padé-13 scaling-and-squaring,
//! the steady state comes from a full-pivot null-space extraction, and
//! Hermitian eigenvalues from cyclic complex Jacobi sweeps.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Shorthand for a complex scalar.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("not a valid density matrix: {0}")]
    InvalidDensity(String),
    #[error("steady state is not unique: null space has dimension {0}")]
    DegenerateNullSpace(usize),
    #[error("steady-state residual too large: |L(rho)| = {0:.3e}")]
    SteadyStateResidual(f64),
}

// ---------------------------------------------------------------------------
// CMatrix
// ---------------------------------------------------------------------------

/// Dense square complex matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    data: Array2<C64>,
}

impl CMatrix {
    pub fn new(data: Array2<C64>) -> Result<Self, AlgebraError> {
        let (r, k) = data.dim();
        if r != k {
            return Err(AlgebraError::NotSquare(r, k));
        }
        if !data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(AlgebraError::NonFinite);
        }
        Ok(Self { data })
    }

    /// Row-major construction from a flat slice of length dim².
    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self, AlgebraError> {
        assert_eq!(entries.len(), dim * dim, "entry count must be dim^2");
        let data = Array2::from_shape_vec((dim, dim), entries.to_vec()).expect("shape");
        Self::new(data)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: Array2::eye(dim),
        }
    }

    /// Basis projector |k><k|.
    pub fn projector(dim: usize, k: usize) -> Self {
        let mut m = Self::zeros(dim);
        m.data[(k, k)] = c(1.0, 0.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[(i, j)] = v;
    }

    pub fn adjoint(&self) -> Self {
        Self {
            data: self.data.t().mapv(|z| z.conj()),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            data: self.data.t().to_owned(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            data: self.data.mapv(|z| z.conj()),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            data: self.data.mapv(|z| z * s),
        }
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self * other - other * self
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        self * other + other * self
    }

    /// Hermitian part (M + M†)/2.
    pub fn herm_part(&self) -> Self {
        (self + &self.adjoint()).scale(c(0.5, 0.0))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) <= tol
    }

    /// Column-stacking vectorization: vec(M)[i + n*j] = M[i, j].
    pub fn vectorize(&self) -> Array1<C64> {
        let n = self.dim();
        Array1::from_shape_fn(n * n, |k| self.data[(k % n, k / n)])
    }

    /// Inverse of [`CMatrix::vectorize`], same column-stacking convention.
    pub fn unvectorize(dim: usize, v: &Array1<C64>) -> Self {
        assert_eq!(v.len(), dim * dim);
        Self {
            data: Array2::from_shape_fn((dim, dim), |(i, j)| v[i + dim * j]),
        }
    }

    /// Eigenvalues of a Hermitian matrix, ascending. Cyclic complex Jacobi.
    pub fn herm_eigenvalues(&self) -> Vec<f64> {
        herm_eigenvalues(&self.data)
    }
}

macro_rules! impl_binop {
    ($trait:ident, $fn:ident, $op:tt) => {
        impl std::ops::$trait<&CMatrix> for &CMatrix {
            type Output = CMatrix;
            fn $fn(self, rhs: &CMatrix) -> CMatrix {
                CMatrix { data: &self.data $op &rhs.data }
            }
        }
        impl std::ops::$trait<CMatrix> for CMatrix {
            type Output = CMatrix;
            fn $fn(self, rhs: CMatrix) -> CMatrix {
                CMatrix { data: &self.data $op &rhs.data }
            }
        }
    };
}
impl_binop!(Add, add, +);
impl_binop!(Sub, sub, -);

impl std::ops::Mul<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        CMatrix {
            data: self.data.dot(&rhs.data),
        }
    }
}
impl std::ops::Mul<CMatrix> for CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: CMatrix) -> CMatrix {
        &self * &rhs
    }
}

// ---------------------------------------------------------------------------
// DensityMatrix
// ---------------------------------------------------------------------------

pub const DENSITY_TRACE_TOL: f64 = 1e-10;
pub const DENSITY_HERM_TOL: f64 = 1e-10;
/// Integrators commit O(dt) positivity violations; allow slightly negative
/// eigenvalues instead of demanding exact positivity.
pub const DENSITY_EIG_TOL: f64 = -1e-8;

/// Unit-trace, Hermitian, positive (up to tolerance) matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    pub fn new(mat: CMatrix) -> Result<Self, AlgebraError> {
        let tr = mat.trace();
        if (tr - c(1.0, 0.0)).norm() > DENSITY_TRACE_TOL {
            return Err(AlgebraError::InvalidDensity(format!(
                "trace = {tr} is not 1"
            )));
        }
        if !mat.is_hermitian(DENSITY_HERM_TOL) {
            return Err(AlgebraError::InvalidDensity("not Hermitian".into()));
        }
        let min_eig = mat
            .herm_eigenvalues()
            .first()
            .copied()
            .unwrap_or(f64::NAN);
        if !(min_eig >= DENSITY_EIG_TOL) {
            return Err(AlgebraError::InvalidDensity(format!(
                "minimum eigenvalue {min_eig:.3e} below tolerance"
            )));
        }
        Ok(Self { mat })
    }

    /// Hermitize and renormalize before validating. This is how integrator
    /// states re-enter the typed world.
    pub fn renormalized(mat: &CMatrix) -> Result<Self, AlgebraError> {
        let herm = mat.herm_part();
        let tr = herm.trace().re;
        if !tr.is_finite() || tr.abs() < 1e-300 {
            return Err(AlgebraError::InvalidDensity(format!(
                "trace {tr:.3e} cannot be normalized"
            )));
        }
        Self::new(herm.scale(c(1.0 / tr, 0.0)))
    }

    /// Pure basis state |k><k|.
    pub fn pure(dim: usize, k: usize) -> Self {
        Self {
            mat: CMatrix::projector(dim, k),
        }
    }

    /// Maximally mixed state I/n.
    pub fn mixed(dim: usize) -> Self {
        Self {
            mat: CMatrix::identity(dim).scale(c(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn mat(&self) -> &CMatrix {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    /// Tr(rho X).
    pub fn expect(&self, x: &CMatrix) -> C64 {
        (&self.mat * x).trace()
    }
}

// ---------------------------------------------------------------------------
// Superoperator
// ---------------------------------------------------------------------------

/// Linear map on n×n matrices stored as an n²×n² matrix acting on
/// column-stacked vectors: vec(A M B) = (Bᵀ ⊗ A) vec(M).
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    dim: usize,
    mat: Array2<C64>,
}

impl Superoperator {
    pub fn from_matrix(dim: usize, mat: Array2<C64>) -> Result<Self, AlgebraError> {
        let (r, k) = mat.dim();
        if r != dim * dim || k != dim * dim {
            return Err(AlgebraError::DimensionMismatch(r.max(k), dim * dim));
        }
        if !mat.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(AlgebraError::NonFinite);
        }
        Ok(Self { dim, mat })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            mat: Array2::zeros((dim * dim, dim * dim)),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            mat: Array2::eye(dim * dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    /// M ↦ A M, i.e. I ⊗ A in column-stacking.
    pub fn left_mul(a: &CMatrix) -> Self {
        Self::sandwich(a, &CMatrix::identity(a.dim()))
    }

    /// M ↦ M B, i.e. Bᵀ ⊗ I in column-stacking.
    pub fn right_mul(b: &CMatrix) -> Self {
        Self::sandwich(&CMatrix::identity(b.dim()), b)
    }

    /// M ↦ A M B, i.e. Bᵀ ⊗ A in column-stacking.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        assert_eq!(a.dim(), b.dim());
        let n = a.dim();
        let bt = b.transpose();
        Self {
            dim: n,
            mat: kron(bt.data(), a.data()),
        }
    }

    /// M ↦ A M A†, the completely positive conjugation by A.
    pub fn conjugation(a: &CMatrix) -> Self {
        Self::sandwich(a, &a.adjoint())
    }

    pub fn apply(&self, m: &CMatrix) -> CMatrix {
        assert_eq!(m.dim(), self.dim, "superoperator dimension mismatch");
        let v = self.mat.dot(&m.vectorize());
        CMatrix::unvectorize(self.dim, &v)
    }

    pub fn apply_vec(&self, v: &Array1<C64>) -> Array1<C64> {
        self.mat.dot(v)
    }

    /// self ∘ other (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            mat: self.mat.dot(&other.mat),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            mat: self.mat.mapv(|z| z * s),
        }
    }

    /// Heisenberg-picture dual: the adjoint map under the Frobenius pairing,
    /// whose matrix is the conjugate transpose.
    pub fn dual(&self) -> Self {
        Self {
            dim: self.dim,
            mat: self.mat.t().mapv(|z| z.conj()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// exp(t · self) by scaling-and-squaring with a Padé-13 approximant.
    pub fn expm(&self, t: f64) -> Result<Self, AlgebraError> {
        if !t.is_finite() {
            return Err(AlgebraError::NonFinite);
        }
        let scaled = self.mat.mapv(|z| z * t);
        Ok(Self {
            dim: self.dim,
            mat: expm_dense(&scaled),
        })
    }
}

macro_rules! impl_super_binop {
    ($trait:ident, $fn:ident, $op:tt) => {
        impl std::ops::$trait<&Superoperator> for &Superoperator {
            type Output = Superoperator;
            fn $fn(self, rhs: &Superoperator) -> Superoperator {
                assert_eq!(self.dim, rhs.dim);
                Superoperator { dim: self.dim, mat: &self.mat $op &rhs.mat }
            }
        }
        impl std::ops::$trait<Superoperator> for Superoperator {
            type Output = Superoperator;
            fn $fn(self, rhs: Superoperator) -> Superoperator {
                &self $op &rhs
            }
        }
    };
}
impl_super_binop!(Add, add, +);
impl_super_binop!(Sub, sub, -);

/// Kronecker product, row-major: (A ⊗ B)[(i p + k, j q + l)] = A[i,j] B[k,l].
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    Array2::from_shape_fn((m * p, n * q), |(r, s)| a[(r / p, s / q)] * b[(r % p, s % q)])
}

// ---------------------------------------------------------------------------
// Matrix exponential (Padé 13 with scaling and squaring)
// ---------------------------------------------------------------------------

const PADE13_THETA: f64 = 5.371_920_351_148_152;

const PADE13_B: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &Array2<C64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

/// Dense exp(A) for small complex matrices.
pub fn expm_dense(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    let norm = one_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let a = a.mapv(|z| z / c(2f64.powi(s), 0.0));

    let eye: Array2<C64> = Array2::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let b = &PADE13_B;

    let u_inner = a6.mapv(|z| z * b[13]) + a4.mapv(|z| z * b[11]) + a2.mapv(|z| z * b[9]);
    let u = a.dot(
        &(a6.dot(&u_inner)
            + a6.mapv(|z| z * b[7])
            + a4.mapv(|z| z * b[5])
            + a2.mapv(|z| z * b[3])
            + eye.mapv(|z| z * b[1])),
    );
    let v_inner = a6.mapv(|z| z * b[12]) + a4.mapv(|z| z * b[10]) + a2.mapv(|z| z * b[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * b[6])
        + a4.mapv(|z| z * b[4])
        + a2.mapv(|z| z * b[2])
        + eye.mapv(|z| z * b[0]);

    // (V - U) X = (V + U)
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = lu_solve_matrix(&lhs, &rhs);
    for _ in 0..s {
        x = x.dot(&x);
    }
    x
}

/// Solve A X = B by LU with partial pivoting. Panics on exactly singular A
/// (cannot happen for the Padé denominator).
fn lu_solve_matrix(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (piv, piv_val) = (k..n)
            .map(|i| (i, lu[(i, k)].norm()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        assert!(piv_val > 0.0, "singular matrix in LU solve");
        if piv != k {
            for j in 0..n {
                lu.swap((k, j), (piv, j));
            }
            perm.swap(k, piv);
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let f = lu[(i, k)] / pivot;
            lu[(i, k)] = f;
            for j in (k + 1)..n {
                let sub = f * lu[(k, j)];
                lu[(i, j)] -= sub;
            }
        }
    }
    let m = b.ncols();
    let mut x = Array2::zeros((n, m));
    for col in 0..m {
        // forward substitution on permuted rhs
        let mut y: Vec<C64> = (0..n).map(|i| b[(perm[i], col)]).collect();
        for i in 1..n {
            for j in 0..i {
                let sub = lu[(i, j)] * y[j];
                y[i] -= sub;
            }
        }
        // back substitution
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let sub = lu[(i, j)] * x[(j, col)];
                y[i] -= sub;
            }
            x[(i, col)] = y[i] / lu[(i, i)];
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Propagator table
// ---------------------------------------------------------------------------

const CHEB_MAX_MSIZE: usize = 16;

/// Chebyshev interpolation of s ↦ exp(s·G) on [0, t_max], entrywise.
///
/// The exponential of a fixed generator is entire in s, so a moderate
/// interpolation degree reproduces Padé evaluation to ~1e-12 while being
/// an order of magnitude cheaper per call. Used in the quadrature and
/// jump-refinement hot paths.
#[derive(Clone, Debug)]
pub struct PropagatorTable {
    dim: usize,
    msize: usize,
    t_max: f64,
    n_terms: usize,
    /// Chebyshev coefficient matrices, flattened: coeffs[k*msize² ..].
    coeffs: Vec<C64>,
}

impl PropagatorTable {
    pub fn build(gen: &Superoperator, t_max: f64, n_terms: usize) -> Result<Self, AlgebraError> {
        assert!(t_max > 0.0 && n_terms >= 2);
        let m = gen.dim() * gen.dim();
        assert!(m <= CHEB_MAX_MSIZE, "propagator table limited to small dims");
        let n = n_terms;
        // values at Chebyshev nodes x_j = cos(pi (j+1/2)/n), s = t_max (x+1)/2
        let mut values = Vec::with_capacity(n);
        for j in 0..n {
            let x = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
            let s = 0.5 * t_max * (x + 1.0);
            values.push(gen.expm(s)?);
        }
        let mut coeffs = vec![c(0.0, 0.0); n * m * m];
        for k in 0..n {
            let mut acc = Array2::<C64>::zeros((m, m));
            for (j, v) in values.iter().enumerate() {
                let w = (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
                acc = acc + v.matrix().mapv(|z| z * w);
            }
            let scale = 2.0 / n as f64;
            for (idx, z) in acc.iter().enumerate() {
                coeffs[k * m * m + idx] = z * scale;
            }
        }
        // drop the super-geometrically decaying tail
        let mut keep = n;
        while keep > 8 {
            let max = coeffs[(keep - 1) * m * m..keep * m * m]
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if max > 1e-14 {
                break;
            }
            keep -= 1;
        }
        coeffs.truncate(keep * m * m);
        Ok(Self {
            dim: gen.dim(),
            msize: m,
            t_max,
            n_terms: keep,
            coeffs,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// exp(s·G) v for 0 ≤ s ≤ t_max by Clenshaw evaluation.
    pub fn apply_vec(&self, s: f64, v: &Array1<C64>) -> Array1<C64> {
        assert!(
            (-1e-12..=self.t_max * (1.0 + 1e-12)).contains(&s),
            "s = {s} outside table domain [0, {}]",
            self.t_max
        );
        let m = self.msize;
        if m <= 4 {
            self.clenshaw_apply::<16>(s, v)
        } else {
            self.clenshaw_apply::<{ CHEB_MAX_MSIZE * CHEB_MAX_MSIZE }>(s, v)
        }
    }

    fn clenshaw_apply<const B: usize>(&self, s: f64, v: &Array1<C64>) -> Array1<C64> {
        let m = self.msize;
        let mm = m * m;
        debug_assert!(mm <= B);
        let x = (2.0 * s / self.t_max - 1.0).clamp(-1.0, 1.0);
        let two_x = 2.0 * x;
        let mut b1 = [c(0.0, 0.0); B];
        let mut b2 = [c(0.0, 0.0); B];
        for k in (1..self.n_terms).rev() {
            let ck = &self.coeffs[k * mm..(k + 1) * mm];
            for i in 0..mm {
                let b0 = ck[i] + b1[i].scale(two_x) - b2[i];
                b2[i] = b1[i];
                b1[i] = b0;
            }
        }
        // f = x b1 − b2 + c0/2
        let c0 = &self.coeffs[0..mm];
        let mut out = Array1::zeros(m);
        for row in 0..m {
            let mut acc = c(0.0, 0.0);
            for col in 0..m {
                let idx = row * m + col;
                let entry = b1[idx].scale(x) - b2[idx] + c0[idx].scale(0.5);
                acc += entry * v[col];
            }
            out[row] = acc;
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Trace of a column-stacked matrix.
pub fn vec_trace(dim: usize, v: &Array1<C64>) -> C64 {
    (0..dim).map(|i| v[i * (dim + 1)]).sum()
}

// ---------------------------------------------------------------------------
// Steady state (null space of the generator)
// ---------------------------------------------------------------------------

/// Unique trace-one fixed point of a Lindblad generator.
///
/// Extracts the null space by full-pivot Gaussian elimination; errors if the
/// null space dimension differs from one or the residual exceeds 1e-10.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix, AlgebraError> {
    let n = l.dim();
    let m = n * n;
    let scale = l.max_abs().max(1.0);
    let tol = scale * 1e-12 * m as f64;

    let mut a = l.matrix().clone();
    let mut col_perm: Vec<usize> = (0..m).collect();
    let mut rank = 0;
    for k in 0..m {
        // full pivot over the remaining block
        let mut best = (k, k, -1.0);
        for i in k..m {
            for j in k..m {
                let v = a[(i, j)].norm();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        let (pi, pj, _) = best;
        if pi != k {
            for j in 0..m {
                a.swap((k, j), (pi, j));
            }
        }
        if pj != k {
            for i in 0..m {
                a.swap((i, k), (i, pj));
            }
            col_perm.swap(k, pj);
        }
        let pivot = a[(k, k)];
        for i in (k + 1)..m {
            let f = a[(i, k)] / pivot;
            for j in k..m {
                let sub = f * a[(k, j)];
                a[(i, j)] -= sub;
            }
        }
        rank += 1;
    }
    let null_dim = m - rank;
    if null_dim != 1 {
        return Err(AlgebraError::DegenerateNullSpace(null_dim));
    }

    // back-substitute with the single free variable set to 1
    let mut x = vec![c(0.0, 0.0); m];
    x[m - 1] = c(1.0, 0.0);
    for i in (0..rank).rev() {
        let mut s = c(0.0, 0.0);
        for j in (i + 1)..m {
            s += a[(i, j)] * x[j];
        }
        x[i] = -s / a[(i, i)];
    }
    let mut v = Array1::zeros(m);
    for k in 0..m {
        v[col_perm[k]] = x[k];
    }

    let raw = CMatrix::unvectorize(n, &v);
    let herm = raw.herm_part();
    let tr = herm.trace().re;
    if tr.abs() < 1e-10 * herm.max_abs().max(1e-300) {
        // traceless null vector cannot be a state
        return Err(AlgebraError::DegenerateNullSpace(1));
    }
    let rho = herm.scale(c(1.0 / tr, 0.0));
    let residual = l.apply(&rho).max_abs();
    if residual > 1e-10 {
        return Err(AlgebraError::SteadyStateResidual(residual));
    }
    DensityMatrix::new(rho)
}

// ---------------------------------------------------------------------------
// Hermitian eigenvalues (complex Jacobi)
// ---------------------------------------------------------------------------

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn herm_eigenvalues(h: &Array2<C64>) -> Vec<f64> {
    let n = h.nrows();
    if n == 1 {
        return vec![h[(0, 0)].re];
    }
    let mut a = h.clone();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return vec![0.0; n];
    }
    let tol = scale * 1e-15;
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm())
            .fold(0.0, f64::max);
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.norm() <= tol * 1e-2 {
                    continue;
                }
                // unitary J = [[c, s], [-p̄ s, p̄ c]] with p the phase of
                // a[(p,q)] zeroes the (p,q) entry of J† A J
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let abs = apq.norm();
                let phase = apq / c(abs, 0.0);
                let tau = (aqq - app) / (2.0 * abs);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = aip * cs - aiq * phase.conj() * sn;
                    a[(i, q)] = aip * sn + aiq * phase.conj() * cs;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = apj * cs - aqj * phase * sn;
                    a[(q, j)] = apj * sn + aqj * phase * cs;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}
