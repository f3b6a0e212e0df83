// SPDX-License-Identifier: Apache-2.0

//! Dense complex linear algebra over qubit environments.
//!
//! Conventions used throughout the crate:
//!
//! * The basis index of an environment is the binary number whose bits are
//!   the variables in environment order, first variable most significant.
//! * Operators are vectorised column-major: `vec(X)[i + j*d] = X[i][j]`, so
//!   the map `X -> A X B` has matrix `B^T (x) A`.
//! * The Choi matrix of `S: L(C^m) -> L(C^n)` is
//!   `J = sum_ij |i><j| (x) S(|i><j|)`, indexed `(i*n + a, j*n + b)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::syntax::{Environment, Gate, VarName};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Entries with magnitude below this are treated as zero by PSD checks.
pub const PSD_TOL: f64 = 1e-9;
/// Tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum LinalgError {
    #[error("environments overlap on {0:?}")]
    EnvOverlap(Vec<VarName>),
    #[error("variable '{0}' is not in the environment")]
    VarMissing(VarName),
    #[error("variable '{0}' is already in the environment")]
    VarClash(VarName),
    #[error("{0} is not a subset of {1}")]
    NotSubset(Environment, Environment),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not Hermitian (defect {0:e})")]
    NotHermitian(f64),
    #[error("invalid Kraus set: {0}")]
    InvalidKraus(String),
    #[error("not a permutation of 0..{0}")]
    BadPermutation(usize),
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

pub fn cone() -> C64 {
    C64::new(1.0, 0.0)
}

/// Builds a matrix from row-major rows.
pub fn cmatrix(rows: &[&[C64]]) -> CMatrix {
    let r = rows.len();
    let k = if r == 0 { 0 } else { rows[0].len() };
    CMatrix::from_fn(r, k, |i, j| rows[i][j])
}

/// Builds a real matrix from row-major rows.
pub fn rmatrix(rows: &[&[f64]]) -> CMatrix {
    let r = rows.len();
    let k = if r == 0 { 0 } else { rows[0].len() };
    CMatrix::from_fn(r, k, |i, j| c(rows[i][j], 0.0))
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn zeros(r: usize, k: usize) -> CMatrix {
    CMatrix::zeros(r, k)
}

/// Computational basis vector `|i>` of dimension `d`.
pub fn basis(d: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[i] = cone();
    v
}

/// Matrix unit `|i><j|`.
pub fn matrix_unit(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = zeros(d, d);
    m[(i, j)] = cone();
    m
}

pub fn gate_matrix(g: &Gate) -> CMatrix {
    let m = g.matrix();
    CMatrix::from_fn(2, 2, |i, j| m[i][j])
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

/// Largest entrywise modulus of `a - b`; infinite on shape mismatch.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Column-major vectorisation.
pub fn vec_of(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Index bookkeeping for a sub-environment inside a larger environment.
///
/// `join[sub * rest_dim + rest]` is the index in the full environment of
/// the basis state whose `sub` part is `sub` and whose remaining part is
/// `rest`.
#[derive(Clone, Debug)]
pub struct Split {
    pub sub_dim: usize,
    pub rest_dim: usize,
    pub rest: Environment,
    join: Vec<usize>,
}

impl Split {
    pub fn new(full: &Environment, sub: &Environment) -> Result<Self, LinalgError> {
        if !sub.is_subset(full) {
            return Err(LinalgError::NotSubset(sub.clone(), full.clone()));
        }
        let rest = full.difference(sub);
        let n = full.len();
        let sub_pos: Vec<usize> = sub.iter().map(|v| full.position(v).unwrap()).collect();
        let rest_pos: Vec<usize> = rest.iter().map(|v| full.position(v).unwrap()).collect();
        let (sd, rd) = (sub.dim(), rest.dim());
        let mut join = vec![0usize; sd * rd];
        for s in 0..sd {
            for r in 0..rd {
                let mut idx = 0usize;
                for (k, &p) in sub_pos.iter().enumerate() {
                    let bit = (s >> (sub.len() - 1 - k)) & 1;
                    idx |= bit << (n - 1 - p);
                }
                for (k, &p) in rest_pos.iter().enumerate() {
                    let bit = (r >> (rest.len() - 1 - k)) & 1;
                    idx |= bit << (n - 1 - p);
                }
                join[s * rd + r] = idx;
            }
        }
        Ok(Split { sub_dim: sd, rest_dim: rd, rest, join })
    }

    #[inline]
    pub fn join(&self, sub: usize, rest: usize) -> usize {
        self.join[sub * self.rest_dim + rest]
    }
}

/// Basis index of the variable `q` within `env` as a bit mask.
pub fn bit_mask(env: &Environment, q: &VarName) -> Result<usize, LinalgError> {
    let p = env.position(q).ok_or_else(|| LinalgError::VarMissing(q.clone()))?;
    Ok(1usize << (env.len() - 1 - p))
}

/// Tensor product `psi (x) phi` laid out in the order of the merged
/// environment.
pub fn ordered_tensor(
    psi: &CVector,
    env_a: &Environment,
    phi: &CVector,
    env_b: &Environment,
) -> Result<(CVector, Environment), LinalgError> {
    let overlap: Vec<VarName> = env_a.intersection(env_b).iter().cloned().collect();
    if !overlap.is_empty() {
        return Err(LinalgError::EnvOverlap(overlap));
    }
    if psi.len() != env_a.dim() || phi.len() != env_b.dim() {
        return Err(LinalgError::ShapeMismatch("state length does not match environment".into()));
    }
    let full = env_a.union(env_b);
    let split = Split::new(&full, env_a)?;
    let mut out = CVector::zeros(full.dim());
    for i in 0..psi.len() {
        for j in 0..phi.len() {
            out[split.join(i, j)] = psi[i] * phi[j];
        }
    }
    Ok((out, full))
}

/// Lifts a single-qubit operator on `q` to `env`, which must contain `q`.
///
/// A 2x2 matrix yields an operator on `env`; a 1x2 row (a bra) yields a
/// map from `env` to `env` without `q`; a 2x1 column (a ket) yields a map
/// from `env` without `q` to `env`.
pub fn embed_on(q: &VarName, env: &Environment, m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let mask = bit_mask(env, q)?;
    let d = env.dim();
    let small = Split::new(env, &Environment::empty().with(q))?;
    match m.shape() {
        (2, 2) => Ok(CMatrix::from_fn(d, d, |i, j| {
            if (i & !mask) == (j & !mask) {
                m[(usize::from(i & mask != 0), usize::from(j & mask != 0))]
            } else {
                czero()
            }
        })),
        (1, 2) => {
            let mut out = zeros(d / 2, d);
            for r in 0..d / 2 {
                for b in 0..2 {
                    out[(r, small.join(b, r))] = m[(0, b)];
                }
            }
            Ok(out)
        }
        (2, 1) => {
            let mut out = zeros(d, d / 2);
            for r in 0..d / 2 {
                for b in 0..2 {
                    out[(small.join(b, r), r)] = m[(b, 0)];
                }
            }
            Ok(out)
        }
        (r, k) => Err(LinalgError::ShapeMismatch(format!("cannot embed a {r}x{k} matrix on one qubit"))),
    }
}

/// Left-multiplies `m` (rows indexed by `env`) by the 2x2 gate `g` acting
/// on `q`, without forming the full operator.
pub fn apply_gate_rows(q: &VarName, env: &Environment, g: &CMatrix, m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let mask = bit_mask(env, q)?;
    let mut out = m.clone();
    for i0 in 0..env.dim() {
        if i0 & mask != 0 {
            continue;
        }
        let i1 = i0 | mask;
        for col in 0..m.ncols() {
            let a = m[(i0, col)];
            let b = m[(i1, col)];
            out[(i0, col)] = g[(0, 0)] * a + g[(0, 1)] * b;
            out[(i1, col)] = g[(1, 0)] * a + g[(1, 1)] * b;
        }
    }
    Ok(out)
}

/// Permutation operator `|b_1..b_n> -> |b_pi(1)..b_pi(n)>` on `n` qubits,
/// with a 0-based permutation.
pub fn perm_matrix(pi: &[usize]) -> Result<CMatrix, LinalgError> {
    let n = pi.len();
    let mut seen = vec![false; n];
    for &p in pi {
        if p >= n || seen[p] {
            return Err(LinalgError::BadPermutation(n));
        }
        seen[p] = true;
    }
    let d = 1usize << n;
    let mut out = zeros(d, d);
    for x in 0..d {
        let bit = |k: usize| (x >> (n - 1 - k)) & 1;
        let mut y = 0usize;
        for (i, &p) in pi.iter().enumerate() {
            y |= bit(p) << (n - 1 - i);
        }
        out[(y, x)] = cone();
    }
    Ok(out)
}

/// Traces out the variables `sub` from an operator on `env`.
pub fn partial_trace(rho: &CMatrix, env: &Environment, sub: &Environment) -> Result<CMatrix, LinalgError> {
    if rho.shape() != (env.dim(), env.dim()) {
        return Err(LinalgError::ShapeMismatch("operator does not match environment".into()));
    }
    let split = Split::new(env, sub)?;
    let rd = split.rest_dim;
    let mut out = zeros(rd, rd);
    for s in 0..split.sub_dim {
        for i in 0..rd {
            for j in 0..rd {
                out[(i, j)] += rho[(split.join(s, i), split.join(s, j))];
            }
        }
    }
    Ok(out)
}

/// Hermitian part `(m + m^dagger) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn hermitian_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(m, &m.adjoint())
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    hermitian_defect(m) <= tol
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending and
/// eigenvectors as the matching columns.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), zeros(0, 0));
    }
    let h = hermitian_part(m);
    let (mut vals, mut vecs) = symmetric_eigen(h.clone());
    if vals.iter().any(|x| !x.is_finite()) || vecs.iter().any(|z| !z.is_finite()) {
        // The tridiagonal QR iteration can break down on sparse complex
        // input. A fixed dense change of basis avoids the degenerate pivots.
        let w = mixing_unitary(n);
        let (v2, q2) = symmetric_eigen(w.adjoint() * &h * &w);
        vals = v2;
        vecs = w * q2;
    }
    jacobi_refine(&h, &mut vals, &mut vecs);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let values = order.iter().map(|&k| vals[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    (values, vectors)
}

/// Polishes an approximate eigendecomposition with cyclic Jacobi sweeps on
/// `V^dagger H V`. The tridiagonal QR result can be off by ~1e-10 when
/// eigenvalues cluster; starting near diagonal, a sweep or two restores
/// working precision.
fn jacobi_refine(h: &CMatrix, vals: &mut [f64], vecs: &mut CMatrix) {
    let n = h.nrows();
    let mut a = vecs.adjoint() * h * &*vecs;
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for _ in 0..12 {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[(p, q)].norm());
            }
        }
        if off <= 4.0 * f64::EPSILON * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = a[(p, q)];
                let mag = b.norm();
                if mag <= f64::EPSILON * f64::EPSILON * scale {
                    continue;
                }
                let ph = b / mag;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // J acts on columns p, q: [[c, s], [-s conj(ph), c conj(ph)]].
                let (jqp, jqq) = (ph.conj() * -sn, ph.conj() * cs);
                for k in 0..n {
                    let (x, y) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = x * cs + y * jqp;
                    a[(k, q)] = x * sn + y * jqq;
                    let (x, y) = (vecs[(k, p)], vecs[(k, q)]);
                    vecs[(k, p)] = x * cs + y * jqp;
                    vecs[(k, q)] = x * sn + y * jqq;
                }
                for k in 0..n {
                    let (x, y) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = x * cs + y * jqp.conj();
                    a[(q, k)] = x * sn + y * jqq.conj();
                }
            }
        }
    }
    for (i, v) in vals.iter_mut().enumerate() {
        *v = a[(i, i)].re;
    }
}

fn symmetric_eigen(h: CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(h);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// A deterministic dense unitary: the Fourier matrix after irrational
/// quadratic phases.
fn mixing_unitary(n: usize) -> CMatrix {
    let tau = std::f64::consts::TAU;
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |j, k| {
        let phase = tau * ((j * k) as f64 / n as f64 + golden * (k * k) as f64);
        C64::from_polar(scale, phase)
    })
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0.first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0.last().copied().unwrap_or(0.0)
}

pub fn is_psd(m: &CMatrix) -> bool {
    is_hermitian(m, HERMITIAN_TOL) && min_eigenvalue(m) >= -PSD_TOL
}

/// Loewner order `a <= b`.
pub fn loewner_leq(a: &CMatrix, b: &CMatrix) -> Result<bool, LinalgError> {
    if a.shape() != b.shape() {
        return Err(LinalgError::ShapeMismatch("Loewner comparison of different shapes".into()));
    }
    for m in [a, b] {
        let d = hermitian_defect(m);
        if d > HERMITIAN_TOL {
            return Err(LinalgError::NotHermitian(d));
        }
    }
    Ok(min_eigenvalue(&(b - a)) >= -PSD_TOL)
}

pub fn sqrt_psd(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|&v| c(v.max(0.0).sqrt(), 0.0))));
    &vecs * d * vecs.adjoint()
}

/// Inverse square root of a positive definite matrix.
pub fn inv_sqrt_pd(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| c(1.0 / v.max(1e-300).sqrt(), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

/// Extends the orthonormal columns of `cols` (shape N x b) to an N x N
/// unitary whose first b columns are `cols`.
pub fn complete_isometry(cols: &CMatrix) -> CMatrix {
    let n = cols.nrows();
    let mut basis: Vec<CVector> = (0..cols.ncols()).map(|j| cols.column(j).into_owned()).collect();
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = self::basis(n, k);
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dotc(&v);
                v -= b * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / c(norm, 0.0));
        }
    }
    CMatrix::from_fn(n, n, |i, j| basis[j][i])
}

/// A unitary whose first column is the unit vector `psi`.
pub fn unitary_with_first_column(psi: &CVector) -> CMatrix {
    let m = CMatrix::from_column_slice(psi.len(), 1, psi.as_slice());
    complete_isometry(&m)
}

/// A linear map `L(C^in_dim) -> L(C^out_dim)` stored as its
/// `out_dim^2 x in_dim^2` matrix on column-major vectorisations.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    pub in_dim: usize,
    pub out_dim: usize,
    pub matrix: CMatrix,
}

impl Superoperator {
    pub fn identity(d: usize) -> Self {
        Superoperator { in_dim: d, out_dim: d, matrix: identity(d * d) }
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        Superoperator { in_dim, out_dim, matrix: zeros(out_dim * out_dim, in_dim * in_dim) }
    }

    /// `X -> sum_k K_k X K_k^dagger`.
    pub fn from_kraus(ops: &[CMatrix]) -> Result<Self, LinalgError> {
        let first = ops.first().ok_or_else(|| LinalgError::InvalidKraus("no operators".into()))?;
        let (out_dim, in_dim) = first.shape();
        let mut matrix = zeros(out_dim * out_dim, in_dim * in_dim);
        for k in ops {
            if k.shape() != (out_dim, in_dim) {
                return Err(LinalgError::InvalidKraus("operators have different shapes".into()));
            }
            matrix += kron(&k.conjugate(), k);
        }
        Ok(Superoperator { in_dim, out_dim, matrix })
    }

    /// `X -> A X A^dagger`.
    pub fn conjugation(a: &CMatrix) -> Self {
        Superoperator { in_dim: a.ncols(), out_dim: a.nrows(), matrix: kron(&a.conjugate(), a) }
    }

    /// `X -> A X B`.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        Superoperator { in_dim: b.nrows(), out_dim: a.nrows(), matrix: kron(&b.transpose(), a) }
    }

    /// Builds the map from its action on matrix units `|i><j|`.
    pub fn from_fn<F: FnMut(usize, usize) -> CMatrix>(in_dim: usize, out_dim: usize, mut f: F) -> Self {
        let mut matrix = zeros(out_dim * out_dim, in_dim * in_dim);
        for j in 0..in_dim {
            for i in 0..in_dim {
                let img = f(i, j);
                debug_assert_eq!(img.shape(), (out_dim, out_dim));
                matrix.set_column(i + j * in_dim, &vec_of(&img));
            }
        }
        Superoperator { in_dim, out_dim, matrix }
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        assert_eq!(x.shape(), (self.in_dim, self.in_dim), "superoperator input shape");
        unvec(&(&self.matrix * vec_of(x)), self.out_dim, self.out_dim)
    }

    /// Image of the matrix unit `|i><j|`.
    pub fn image(&self, i: usize, j: usize) -> CMatrix {
        let col = self.matrix.column(i + j * self.in_dim).into_owned();
        unvec(&col, self.out_dim, self.out_dim)
    }

    /// `self . first`.
    pub fn compose(&self, first: &Superoperator) -> Result<Self, LinalgError> {
        if first.out_dim != self.in_dim {
            return Err(LinalgError::ShapeMismatch(format!(
                "composing {}->{} after {}->{}",
                self.in_dim, self.out_dim, first.in_dim, first.out_dim
            )));
        }
        Ok(Superoperator { in_dim: first.in_dim, out_dim: self.out_dim, matrix: &self.matrix * &first.matrix })
    }

    pub fn add(&self, other: &Superoperator) -> Result<Self, LinalgError> {
        if (self.in_dim, self.out_dim) != (other.in_dim, other.out_dim) {
            return Err(LinalgError::ShapeMismatch("adding superoperators of different shapes".into()));
        }
        Ok(Superoperator { in_dim: self.in_dim, out_dim: self.out_dim, matrix: &self.matrix + &other.matrix })
    }

    /// Hilbert-Schmidt adjoint.
    pub fn adjoint(&self) -> Self {
        Superoperator { in_dim: self.out_dim, out_dim: self.in_dim, matrix: self.matrix.adjoint() }
    }

    pub fn choi(&self) -> CMatrix {
        let (m, n) = (self.in_dim, self.out_dim);
        let mut j = zeros(m * n, m * n);
        for i in 0..m {
            for k in 0..m {
                let col = i + k * m;
                for a in 0..n {
                    for b in 0..n {
                        j[(i * n + a, k * n + b)] = self.matrix[(a + b * n, col)];
                    }
                }
            }
        }
        j
    }

    pub fn from_choi(j: &CMatrix, in_dim: usize, out_dim: usize) -> Result<Self, LinalgError> {
        if j.shape() != (in_dim * out_dim, in_dim * out_dim) {
            return Err(LinalgError::ShapeMismatch("Choi matrix shape".into()));
        }
        let (m, n) = (in_dim, out_dim);
        let mut matrix = zeros(n * n, m * m);
        for i in 0..m {
            for k in 0..m {
                for a in 0..n {
                    for b in 0..n {
                        matrix[(a + b * n, i + k * m)] = j[(i * n + a, k * n + b)];
                    }
                }
            }
        }
        Ok(Superoperator { in_dim, out_dim, matrix })
    }

    /// Smallest eigenvalue of the Hermitian part of the Choi matrix.
    pub fn choi_min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.choi())
    }

    pub fn is_cp(&self) -> bool {
        let j = self.choi();
        is_hermitian(&j, HERMITIAN_TOL) && min_eigenvalue(&j) >= -PSD_TOL
    }

    /// `S*(I)`: the effect with `Tr S(rho) = Tr(E rho)`.
    pub fn trace_effect(&self) -> CMatrix {
        let mut e = zeros(self.in_dim, self.in_dim);
        for i in 0..self.in_dim {
            for j in 0..self.in_dim {
                let col = i + j * self.in_dim;
                let mut tr = czero();
                for a in 0..self.out_dim {
                    tr += self.matrix[(a + a * self.out_dim, col)];
                }
                e[(j, i)] = tr;
            }
        }
        e
    }

    /// `Tr S(rho) <= Tr rho` for every positive `rho`, that is `S*(I) <= I`.
    pub fn is_trace_nonincreasing(&self) -> bool {
        let e = self.trace_effect();
        is_hermitian(&e, HERMITIAN_TOL) && max_eigenvalue(&e) <= 1.0 + PSD_TOL
    }

    /// Kraus operators from the eigen-decomposition of the Choi matrix,
    /// dropping eigenvalues at or below `cutoff`.
    pub fn kraus(&self, cutoff: f64) -> Vec<CMatrix> {
        let (m, n) = (self.in_dim, self.out_dim);
        let (vals, vecs) = hermitian_eigen(&self.choi());
        let mut out = Vec::new();
        for (k, &lam) in vals.iter().enumerate().rev() {
            if lam <= cutoff {
                continue;
            }
            let s = lam.sqrt();
            out.push(CMatrix::from_fn(n, m, |a, i| vecs[(i * n + a, k)] * s));
        }
        out
    }
}

/// Kraus operators together with vacuum amplitudes, one per operator.
#[derive(Clone, Debug, PartialEq)]
pub struct KrausSet {
    pub ops: Vec<CMatrix>,
    pub vacuum: Vec<C64>,
}

impl KrausSet {
    pub fn new(ops: Vec<CMatrix>, vacuum: Vec<C64>) -> Result<Self, LinalgError> {
        let ks = KrausSet { ops, vacuum };
        ks.validate()?;
        Ok(ks)
    }

    pub fn in_dim(&self) -> usize {
        self.ops[0].ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.ops[0].nrows()
    }

    /// Checks equal shapes, `sum K^dagger K <= I` and unit total vacuum weight.
    pub fn validate(&self) -> Result<(), LinalgError> {
        let first = self.ops.first().ok_or_else(|| LinalgError::InvalidKraus("no operators".into()))?;
        if self.ops.len() != self.vacuum.len() {
            return Err(LinalgError::InvalidKraus("operator and amplitude counts differ".into()));
        }
        let shape = first.shape();
        if self.ops.iter().any(|k| k.shape() != shape) {
            return Err(LinalgError::InvalidKraus("operators have different shapes".into()));
        }
        let mut e = zeros(shape.1, shape.1);
        for k in &self.ops {
            e += k.adjoint() * k;
        }
        if !loewner_leq(&e, &identity(shape.1))? {
            return Err(LinalgError::InvalidKraus("sum of K^dagger K exceeds the identity".into()));
        }
        let w: f64 = self.vacuum.iter().map(|v| v.norm_sqr()).sum();
        if (w - 1.0).abs() > PSD_TOL {
            return Err(LinalgError::InvalidKraus(format!("vacuum amplitudes have total weight {w}")));
        }
        Ok(())
    }

    /// `sum_i conj(nu_i) K_i`.
    pub fn vacuum_transform(&self) -> CMatrix {
        let mut f = zeros(self.out_dim(), self.in_dim());
        for (k, nu) in self.ops.iter().zip(&self.vacuum) {
            f += k * nu.conj();
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{var, GateName};

    fn env(s: &str) -> Environment {
        Environment::parse_list(s).unwrap()
    }

    #[test]
    fn vectorisation_matches_sandwich_rule() {
        let a = cmatrix(&[&[c(1.0, 2.0), c(0.0, 1.0)], &[c(3.0, 0.0), c(-1.0, 0.5)]]);
        let b = cmatrix(&[&[c(0.5, 0.0), c(2.0, -1.0)], &[c(0.0, 0.0), c(1.0, 1.0)]]);
        let x = cmatrix(&[&[c(1.0, 0.0), c(2.0, 0.0)], &[c(3.0, 1.0), c(4.0, 0.0)]]);
        let s = Superoperator::sandwich(&a, &b);
        assert!(max_abs_diff(&s.apply(&x), &(&a * &x * &b)) < 1e-13);
    }

    #[test]
    fn cnot_from_embedding() {
        let e = env("c,t");
        let p1 = embed_on(&var("c"), &e, &rmatrix(&[&[0.0, 0.0], &[0.0, 1.0]])).unwrap();
        let p0 = embed_on(&var("c"), &e, &rmatrix(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap();
        let x = embed_on(&var("t"), &e, &gate_matrix(&Gate::Named(GateName::X))).unwrap();
        let cnot = p0 + &p1 * x;
        let expect = rmatrix(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 1.0, 0.0],
        ]);
        assert_eq!(max_abs_diff(&cnot, &expect), 0.0);
    }

    #[test]
    fn ordered_tensor_respects_variable_order() {
        let zero = basis(2, 0);
        let one = basis(2, 1);
        // |1>_b (x) |0>_a laid out as a,b gives |01>.
        let (v, full) = ordered_tensor(&one, &env("b"), &zero, &env("a")).unwrap();
        assert_eq!(full, env("a,b"));
        assert_eq!(v, basis(4, 1));
        assert!(ordered_tensor(&one, &env("a"), &zero, &env("a")).is_err());
    }

    #[test]
    fn bra_and_ket_embeddings() {
        let e = env("p,q");
        let bra0 = embed_on(&var("p"), &e, &rmatrix(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(bra0.shape(), (2, 4));
        assert_eq!(bra0[(1, 1)], cone());
        let ket0 = embed_on(&var("q"), &e, &rmatrix(&[&[1.0], &[0.0]])).unwrap();
        assert_eq!(ket0.shape(), (4, 2));
        assert_eq!(ket0[(2, 1)], cone());
    }

    #[test]
    fn swap_permutation() {
        let swap = perm_matrix(&[1, 0]).unwrap();
        assert_eq!(swap[(1, 2)], cone());
        assert_eq!(swap[(2, 1)], cone());
        assert_eq!(swap[(0, 0)], cone());
        assert!(perm_matrix(&[0, 0]).is_err());
    }

    #[test]
    fn partial_trace_of_product() {
        let rho_a = rmatrix(&[&[0.25, 0.0], &[0.0, 0.75]]);
        let rho_b = rmatrix(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let rho = kron(&rho_a, &rho_b);
        let ta = partial_trace(&rho, &env("a,b"), &env("b")).unwrap();
        assert!(max_abs_diff(&ta, &rho_a) < 1e-15);
        let tb = partial_trace(&rho, &env("a,b"), &env("a")).unwrap();
        assert!(max_abs_diff(&tb, &rho_b) < 1e-15);
    }

    #[test]
    fn identity_choi_is_unnormalised_bell_projector() {
        let j = Superoperator::identity(2).choi();
        let expect = rmatrix(&[
            &[1.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0, 1.0],
        ]);
        assert_eq!(max_abs_diff(&j, &expect), 0.0);
    }

    #[test]
    fn transpose_is_not_completely_positive() {
        let t = Superoperator::from_fn(2, 2, |i, j| matrix_unit(2, j, i));
        assert!(!t.is_cp());
        assert!((t.choi_min_eigenvalue() + 1.0).abs() < 1e-12);
        assert!(t.is_trace_nonincreasing());
    }

    #[test]
    fn choi_round_trip() {
        let k = cmatrix(&[&[c(0.5, 0.1), c(0.2, 0.0)], &[c(0.0, 0.0), c(0.3, -0.4)], &[c(1.0, 0.0), c(0.0, 0.0)]]);
        let s = Superoperator::from_kraus(&[k]).unwrap();
        let back = Superoperator::from_choi(&s.choi(), 2, 3).unwrap();
        assert_eq!(max_abs_diff(&back.matrix, &s.matrix), 0.0);
    }

    #[test]
    fn kraus_extraction_reproduces_map() {
        let k0 = rmatrix(&[&[1.0, 0.0], &[0.0, 0.6]]);
        let k1 = rmatrix(&[&[0.0, 0.8], &[0.0, 0.0]]);
        let s = Superoperator::from_kraus(&[k0, k1]).unwrap();
        let ks = s.kraus(1e-12);
        assert_eq!(ks.len(), 2);
        let back = Superoperator::from_kraus(&ks).unwrap();
        assert!(max_abs_diff(&back.matrix, &s.matrix) < 1e-12);
        assert!(s.is_trace_nonincreasing());
    }

    #[test]
    fn complete_isometry_is_unitary() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = CVector::from_vec(vec![c(h, 0.0), c(0.0, 0.0), c(0.0, h), c(0.0, 0.0)]);
        let u = unitary_with_first_column(&psi);
        assert!(max_abs_diff(&(u.adjoint() * &u), &identity(4)) < 1e-12);
        assert!((u.column(0) - &psi).norm() < 1e-15);
    }

    #[test]
    fn loewner_and_hermitian_checks() {
        let a = rmatrix(&[&[0.5, 0.0], &[0.0, 0.2]]);
        assert!(loewner_leq(&a, &identity(2)).unwrap());
        assert!(!loewner_leq(&identity(2), &a).unwrap());
        let skew = cmatrix(&[&[czero(), c(1.0, 0.0)], &[czero(), czero()]]);
        assert!(matches!(loewner_leq(&skew, &a), Err(LinalgError::NotHermitian(_))));
    }

    #[test]
    fn kraus_set_validation() {
        let k = rmatrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(KrausSet::new(vec![k.clone()], vec![cone()]).is_ok());
        assert!(KrausSet::new(vec![k.clone()], vec![c(0.5, 0.0)]).is_err());
        assert!(KrausSet::new(vec![k.clone() * c(1.1, 0.0)], vec![cone()]).is_err());
    }
}
