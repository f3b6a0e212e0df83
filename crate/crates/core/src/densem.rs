// SPDX-License-Identifier: Apache-2.0

//! Denotational semantics.
//!
//! A statement from `env` to `env'` denotes a vacuum extension: a pair
//! `(C, F)` of a completely positive trace non-increasing map
//! `C: L(H_env) -> L(H_env')` and a linear map `F: H_env -> H_env'` (the
//! vacuum transform), such that the extended map
//!
//! ```text
//! C~(rho) = C(P rho P) + F rho |v><v| + |v><v| rho F^dagger + |v><v| rho |v><v|
//! ```
//!
//! on `H_env (+) C|v>` is again completely positive and trace non-increasing.
//!
//! Two evaluators are provided. [`denote_compositional`] builds the dense
//! pair for every sub-statement over its full environment with the
//! combinators of this module. [`denote`] pushes a batch of operators
//! through the program and only materialises dense pairs for loops, over the
//! loop's own input variables; it scales to the larger programs produced by
//! synthesis. Both use the same Kleene iteration for loops.

use thiserror::Error;

use crate::linalg::{
    apply_gate_rows, bit_mask, c, cone, czero, embed_on, gate_matrix, identity, matrix_unit, max_abs, max_abs_diff,
    outer, rmatrix, unvec, vec_of, zeros, CMatrix, CVector, KrausSet, LinalgError, Split, Superoperator,
};
use crate::syntax::{Environment, Gate, Program, Statement, VarName};
use crate::wellformed::{analyze, check, WellFormedError};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DenoteError {
    #[error("statement is not well-formed: {0}")]
    IllFormed(#[from] WellFormedError),
    #[error("loop iteration stopped with residual {residual:e}")]
    NonConvergence { residual: f64, partial: Box<Denotation> },
    #[error("environment mismatch: expected {{{expected}}}, found {{{found}}}")]
    EnvMismatch { expected: Environment, found: Environment },
    #[error("control '{0}' must not be in the branch environments")]
    ControlInEnv(VarName),
    #[error("variable '{0}' is not in the environment")]
    VarMissing(VarName),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A vacuum extension between two environments.
#[derive(Clone, Debug, PartialEq)]
pub struct VacExt {
    pub c: Superoperator,
    pub f: CMatrix,
    pub input: Environment,
    pub output: Environment,
}

fn projector(bit: usize) -> CMatrix {
    if bit == 0 {
        rmatrix(&[&[1.0, 0.0], &[0.0, 0.0]])
    } else {
        rmatrix(&[&[0.0, 0.0], &[0.0, 1.0]])
    }
}

fn ket(bit: usize) -> CMatrix {
    if bit == 0 {
        rmatrix(&[&[1.0], &[0.0]])
    } else {
        rmatrix(&[&[0.0], &[1.0]])
    }
}

fn bra(bit: usize) -> CMatrix {
    ket(bit).transpose()
}

impl VacExt {
    pub fn identity(env: &Environment) -> Self {
        let d = env.dim();
        VacExt { c: Superoperator::identity(d), f: identity(d), input: env.clone(), output: env.clone() }
    }

    pub fn zero(input: &Environment, output: &Environment) -> Self {
        VacExt {
            c: Superoperator::zero(input.dim(), output.dim()),
            f: zeros(output.dim(), input.dim()),
            input: input.clone(),
            output: output.clone(),
        }
    }

    /// `new qbit q` on `env`, which must not contain `q`.
    pub fn new_qbit(q: &VarName, env: &Environment) -> Result<Self, DenoteError> {
        if env.contains(q) {
            return Err(LinalgError::VarClash(q.clone()).into());
        }
        let output = env.with(q);
        let v = embed_on(q, &output, &ket(0))?;
        Ok(VacExt { c: Superoperator::conjugation(&v), f: v, input: env.clone(), output })
    }

    /// `discard q` on `env`, which must contain `q`.
    pub fn discard(q: &VarName, env: &Environment) -> Result<Self, DenoteError> {
        if !env.contains(q) {
            return Err(DenoteError::VarMissing(q.clone()));
        }
        let b0 = embed_on(q, env, &bra(0))?;
        let b1 = embed_on(q, env, &bra(1))?;
        let c = Superoperator::from_kraus(&[b0.clone(), b1])?;
        Ok(VacExt { c, f: b0, input: env.clone(), output: env.without(q) })
    }

    /// `q *= g` on `env`.
    pub fn unitary(q: &VarName, env: &Environment, g: &Gate) -> Result<Self, DenoteError> {
        let u = embed_on(q, env, &gate_matrix(g))?;
        Ok(VacExt { c: Superoperator::conjugation(&u), f: u, input: env.clone(), output: env.clone() })
    }

    /// `(U (.) U^dagger, U)` for an operator `U` on `env`.
    pub fn from_unitary(u: &CMatrix, env: &Environment) -> Result<Self, DenoteError> {
        if u.shape() != (env.dim(), env.dim()) {
            return Err(LinalgError::ShapeMismatch("unitary does not match environment".into()).into());
        }
        Ok(VacExt { c: Superoperator::conjugation(u), f: u.clone(), input: env.clone(), output: env.clone() })
    }

    /// `(sum K (.) K^dagger, sum conj(nu) K)`.
    pub fn from_kraus(ks: &KrausSet, input: &Environment, output: &Environment) -> Result<Self, DenoteError> {
        ks.validate()?;
        if ks.in_dim() != input.dim() || ks.out_dim() != output.dim() {
            return Err(LinalgError::ShapeMismatch("Kraus operators do not match environments".into()).into());
        }
        Ok(VacExt {
            c: Superoperator::from_kraus(&ks.ops)?,
            f: ks.vacuum_transform(),
            input: input.clone(),
            output: output.clone(),
        })
    }

    /// `C(rho)`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        self.c.apply(rho)
    }

    /// Largest entrywise distance between the two components.
    pub fn distance(&self, other: &VacExt) -> f64 {
        if self.input != other.input || self.output != other.output {
            return f64::INFINITY;
        }
        max_abs_diff(&self.c.matrix, &other.c.matrix).max(max_abs_diff(&self.f, &other.f))
    }

    /// The extended map on `H (+) C|v>`, with the vacuum as the last basis
    /// vector on both sides.
    pub fn extend(&self) -> Superoperator {
        let (m, n) = (self.input.dim(), self.output.dim());
        Superoperator::from_fn(m + 1, n + 1, |i, j| {
            let mut out = zeros(n + 1, n + 1);
            match (i < m, j < m) {
                (true, true) => {
                    let img = self.c.image(i, j);
                    out.view_mut((0, 0), (n, n)).copy_from(&img);
                }
                (true, false) => {
                    for a in 0..n {
                        out[(a, n)] = self.f[(a, i)];
                    }
                }
                (false, true) => {
                    for b in 0..n {
                        out[(n, b)] = self.f[(b, j)].conj();
                    }
                }
                (false, false) => out[(n, n)] = cone(),
            }
            out
        })
    }

    /// True when the extended map is completely positive and trace
    /// non-increasing.
    pub fn is_valid(&self) -> bool {
        let e = self.extend();
        e.is_cp() && e.is_trace_nonincreasing()
    }

    /// `(C (x) id, F (x) I)` on `self.input + frame`.
    pub fn with_frame(&self, frame: &Environment) -> Result<VacExt, DenoteError> {
        let full_in = self.input.union(frame);
        let d = full_in.dim();
        let basis_ops: Vec<CMatrix> = (0..d * d).map(|k| matrix_unit(d, k % d, k / d)).collect();
        let (imgs, full_out) = apply_local(self, &full_in, basis_ops)?;
        let dout = full_out.dim();
        let mut m = zeros(dout * dout, d * d);
        for (k, img) in imgs.iter().enumerate() {
            m.set_column(k, &vec_of(img));
        }
        let f = transform_local(self, &full_in, &identity(d))?;
        Ok(VacExt { c: Superoperator { in_dim: d, out_dim: dout, matrix: m }, f, input: full_in, output: full_out })
    }
}

/// True when the extended map of `v` is a valid quantum operation.
pub fn validate(v: &VacExt) -> bool {
    v.is_valid()
}

/// The pair `(sum K (.) K^dagger, sum conj(nu) K)` of a Kraus set.
pub fn kraus_to_vacext(ks: &KrausSet, input: &Environment, output: &Environment) -> Result<VacExt, DenoteError> {
    VacExt::from_kraus(ks, input, output)
}

/// `second . first`.
pub fn compose(second: &VacExt, first: &VacExt) -> Result<VacExt, DenoteError> {
    if first.output != second.input {
        return Err(DenoteError::EnvMismatch { expected: second.input.clone(), found: first.output.clone() });
    }
    Ok(VacExt {
        c: second.c.compose(&first.c)?,
        f: &second.f * &first.f,
        input: first.input.clone(),
        output: second.output.clone(),
    })
}

/// Measurement combinator: `(C0 . P0 + C1 . P1, F0 |0><0|_q)`.
pub fn meas_bar(q: &VarName, d0: &VacExt, d1: &VacExt) -> Result<VacExt, DenoteError> {
    let env = &d0.input;
    if !env.contains(q) {
        return Err(DenoteError::VarMissing(q.clone()));
    }
    if &d1.input != env || d1.output != d0.output {
        return Err(DenoteError::EnvMismatch { expected: d0.output.clone(), found: d1.output.clone() });
    }
    let p0 = embed_on(q, env, &projector(0))?;
    let p1 = embed_on(q, env, &projector(1))?;
    let c = d0
        .c
        .compose(&Superoperator::conjugation(&p0))?
        .add(&d1.c.compose(&Superoperator::conjugation(&p1))?)?;
    Ok(VacExt { c, f: &d0.f * p0, input: env.clone(), output: d0.output.clone() })
}

/// Quantum case combinator.
///
/// On the block form of an operator with respect to `q`, the result acts
/// as `[[A, B], [C, D]] -> [[C0(A), F0 B F1^dagger], [F1 C F0^dagger, C1(D)]]`,
/// and its vacuum transform is `|0><0| (x) F0 + |1><1| (x) F1`.
pub fn qcase_bar(q: &VarName, d0: &VacExt, d1: &VacExt) -> Result<VacExt, DenoteError> {
    if d0.input.contains(q) || d0.output.contains(q) {
        return Err(DenoteError::ControlInEnv(q.clone()));
    }
    if d1.input != d0.input || d1.output != d0.output {
        return Err(DenoteError::EnvMismatch { expected: d0.output.clone(), found: d1.output.clone() });
    }
    let qenv = Environment::empty().with(q);
    let input = d0.input.with(q);
    let output = d0.output.with(q);
    let si = Split::new(&input, &qenv)?;
    let so = Split::new(&output, &qenv)?;
    let (m, n) = (d0.input.dim(), d0.output.dim());
    // Index of each full input basis vector as (q bit, rest).
    let mut parts = vec![(0usize, 0usize); 2 * m];
    for b in 0..2 {
        for r in 0..m {
            parts[si.join(b, r)] = (b, r);
        }
    }
    let fs = [&d0.f, &d1.f];
    let cs = [&d0.c, &d1.c];
    let c_map = Superoperator::from_fn(2 * m, 2 * n, |i, j| {
        let (a, ri) = parts[i];
        let (b, rj) = parts[j];
        let block = if a == b {
            cs[a].image(ri, rj)
        } else {
            outer(&fs[a].column(ri).into_owned(), &fs[b].column(rj).into_owned())
        };
        let mut out = zeros(2 * n, 2 * n);
        for x in 0..n {
            for y in 0..n {
                out[(so.join(a, x), so.join(b, y))] = block[(x, y)];
            }
        }
        out
    });
    let mut f = zeros(2 * n, 2 * m);
    for b in 0..2 {
        for x in 0..n {
            for r in 0..m {
                f[(so.join(b, x), si.join(b, r))] = fs[b][(x, r)];
            }
        }
    }
    Ok(VacExt { c: c_map, f, input, output })
}

/// Stopping rule for loop fixpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfpConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LfpConfig {
    fn default() -> Self {
        LfpConfig { tol: 1e-12, max_iter: 2000 }
    }
}

/// How a single loop fixpoint computation ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfpReport {
    /// Steps taken, linear or doubling.
    pub iterations: usize,
    /// Index of the Kleene iterate returned, saturating.
    pub iterate: u64,
    pub residual: f64,
    pub converged: bool,
}

/// One application of the loop functional:
/// `(C, F) -> meas_bar[q]((I, I), (C, F) . body)`.
pub fn kleene_step(q: &VarName, body: &VacExt, cur: &VacExt) -> Result<VacExt, DenoteError> {
    let env = &body.input;
    meas_bar(q, &VacExt::identity(env), &compose(cur, body)?)
}

/// The first `n` Kleene iterates, starting after `(0, 0)`.
pub fn kleene_iterates(q: &VarName, body: &VacExt, n: usize) -> Result<Vec<VacExt>, DenoteError> {
    let mut cur = VacExt::zero(&body.input, &body.output);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        cur = kleene_step(q, body, &cur)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Linear steps taken before switching to doubling.
const LINEAR_STEPS: usize = 64;

/// Least fixpoint of the loop functional for `while q do body`.
///
/// Uses the equivalent recurrence `C' = P0 + C . M` with `M = C_body . P1`,
/// and `F = |0><0|_q` from the first iterate on. After [`LINEAR_STEPS`]
/// steps it switches to doubling, `C_2n = C_n + C_n . M^n`, so that slowly
/// terminating loops still converge; the residual is then the whole
/// increment from iterate `n` to `2n`. Stops on an exact repeat or when the
/// residual drops below `cfg.tol`. `cfg.max_iter` bounds the number of
/// steps of either kind, after which `converged` is false.
pub fn lfp_while(q: &VarName, body: &VacExt, cfg: &LfpConfig) -> Result<(VacExt, LfpReport), DenoteError> {
    let env = &body.input;
    if &body.output != env {
        return Err(DenoteError::EnvMismatch { expected: env.clone(), found: body.output.clone() });
    }
    if !env.contains(q) {
        return Err(DenoteError::VarMissing(q.clone()));
    }
    let p0 = embed_on(q, env, &projector(0))?;
    let p1 = embed_on(q, env, &projector(1))?;
    let p0_map = Superoperator::conjugation(&p0);
    let step = body.c.compose(&Superoperator::conjugation(&p1))?;
    let mut cur = Superoperator::zero(env.dim(), env.dim());
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut iterate: u64 = 0;
    let mut converged = false;
    while iterations < cfg.max_iter.min(LINEAR_STEPS) {
        iterations += 1;
        iterate += 1;
        let next = p0_map.add(&cur.compose(&step)?)?;
        residual = max_abs_diff(&next.matrix, &cur.matrix);
        if iterations == 1 {
            // F jumps from 0 to |0><0|_q on the first step.
            residual = residual.max(1.0);
        }
        let exact = next.matrix == cur.matrix;
        cur = next;
        if exact || residual < cfg.tol {
            converged = true;
            if exact {
                residual = 0.0;
            }
            break;
        }
    }
    if !converged && iterations < cfg.max_iter {
        let mut power = power_of(&step, iterate)?;
        while iterations < cfg.max_iter {
            iterations += 1;
            let increment = cur.compose(&power)?;
            residual = max_abs(&increment.matrix);
            cur = cur.add(&increment)?;
            iterate = iterate.saturating_mul(2);
            if residual < cfg.tol {
                converged = true;
                break;
            }
            power = power.compose(&power)?;
        }
    }
    let v = VacExt { c: cur, f: p0, input: env.clone(), output: env.clone() };
    Ok((v, LfpReport { iterations, iterate, residual, converged }))
}

/// `m` composed with itself `n` times, by repeated squaring.
fn power_of(m: &Superoperator, mut n: u64) -> Result<Superoperator, DenoteError> {
    let mut out = Superoperator::identity(m.in_dim);
    let mut base = m.clone();
    while n > 0 {
        if n & 1 == 1 {
            out = out.compose(&base)?;
        }
        n >>= 1;
        if n > 0 {
            base = base.compose(&base)?;
        }
    }
    Ok(out)
}

/// Aggregate loop statistics of a denotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfpSummary {
    pub loops: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

impl Default for LfpSummary {
    fn default() -> Self {
        LfpSummary { loops: 0, max_iterations: 0, max_residual: 0.0, converged: true }
    }
}

impl LfpSummary {
    fn record(&mut self, r: &LfpReport) {
        self.loops += 1;
        self.max_iterations = self.max_iterations.max(r.iterations);
        self.max_residual = self.max_residual.max(r.residual);
        self.converged &= r.converged;
    }
}

/// A program's denotation with its loop statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Denotation {
    pub value: VacExt,
    pub lfp: LfpSummary,
}

fn finish(value: VacExt, lfp: LfpSummary) -> Result<Denotation, DenoteError> {
    let d = Denotation { value, lfp };
    if !lfp.converged {
        return Err(DenoteError::NonConvergence { residual: lfp.max_residual, partial: Box::new(d) });
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// Compositional evaluator

/// Dense structural evaluation of `env |- s`.
pub fn denote_compositional(env: &Environment, s: &Statement, cfg: &LfpConfig) -> Result<Denotation, DenoteError> {
    check(env, s)?;
    let mut lfp = LfpSummary::default();
    let v = dense(env, s, cfg, &mut lfp)?;
    finish(v, lfp)
}

fn dense(env: &Environment, s: &Statement, cfg: &LfpConfig, lfp: &mut LfpSummary) -> Result<VacExt, DenoteError> {
    match s {
        Statement::Skip => Ok(VacExt::identity(env)),
        Statement::New(q) => VacExt::new_qbit(q, env),
        Statement::Discard(q) => VacExt::discard(q, env),
        Statement::Apply(q, g) => VacExt::unitary(q, env, g),
        Statement::Seq(..) => {
            let mut acc = VacExt::identity(env);
            for item in s.seq_items() {
                let next = dense(&acc.output.clone(), item, cfg, lfp)?;
                acc = compose(&next, &acc)?;
            }
            Ok(acc)
        }
        Statement::Meas { var, zero, one } => {
            let d0 = dense(env, zero, cfg, lfp)?;
            let d1 = dense(env, one, cfg, lfp)?;
            meas_bar(var, &d0, &d1)
        }
        Statement::While { var, body } => {
            let b = dense(env, body, cfg, lfp)?;
            let (v, report) = lfp_while(var, &b, cfg)?;
            lfp.record(&report);
            Ok(v)
        }
        Statement::QCase { var, zero, one } => {
            let inner = env.without(var);
            let d0 = dense(&inner, zero, cfg, lfp)?;
            let d1 = dense(&inner, one, cfg, lfp)?;
            qcase_bar(var, &d0, &d1)
        }
    }
}

// ---------------------------------------------------------------------------
// Batched forward evaluator

/// Applies a vacuum extension on `v.input` to operators on a larger
/// environment `full`, acting as the identity on the remaining variables.
pub fn apply_local(v: &VacExt, full: &Environment, ops: Vec<CMatrix>) -> Result<(Vec<CMatrix>, Environment), DenoteError> {
    let frame = full.difference(&v.input);
    if !frame.is_disjoint(&v.output) {
        return Err(LinalgError::EnvOverlap(frame.intersection(&v.output).vars().to_vec()).into());
    }
    let out_env = v.output.union(&frame);
    let si = Split::new(full, &v.input)?;
    let so = Split::new(&out_env, &v.output)?;
    let (m, n, fd) = (v.input.dim(), v.output.dim(), frame.dim());
    let mut out = Vec::with_capacity(ops.len());
    for x in ops {
        let mut y = zeros(out_env.dim(), out_env.dim());
        for r in 0..fd {
            for s in 0..fd {
                let sub = CMatrix::from_fn(m, m, |i, j| x[(si.join(i, r), si.join(j, s))]);
                if sub.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
                    continue;
                }
                let img = unvec(&(&v.c.matrix * vec_of(&sub)), n, n);
                for a in 0..n {
                    for b in 0..n {
                        y[(so.join(a, r), so.join(b, s))] = img[(a, b)];
                    }
                }
            }
        }
        out.push(y);
    }
    Ok((out, out_env))
}

/// `(F (x) I) m` for rows of `m` indexed by `full`.
pub fn transform_local(v: &VacExt, full: &Environment, m: &CMatrix) -> Result<CMatrix, DenoteError> {
    let frame = full.difference(&v.input);
    let out_env = v.output.union(&frame);
    let si = Split::new(full, &v.input)?;
    let so = Split::new(&out_env, &v.output)?;
    let mut out = zeros(out_env.dim(), m.ncols());
    for r in 0..frame.dim() {
        let rows = CMatrix::from_fn(v.input.dim(), m.ncols(), |i, k| m[(si.join(i, r), k)]);
        let img = &v.f * rows;
        for a in 0..v.output.dim() {
            for k in 0..m.ncols() {
                out[(so.join(a, r), k)] = img[(a, k)];
            }
        }
    }
    Ok(out)
}

/// True when the statement uses no discard, measurement or loop, so that
/// its map is `X -> F X F^dagger`.
pub fn is_isometric(s: &Statement) -> bool {
    s.seq_items().into_iter().all(|item| match item {
        Statement::Skip | Statement::New(_) | Statement::Apply(..) => true,
        Statement::Discard(_) | Statement::Meas { .. } | Statement::While { .. } => false,
        Statement::Seq(a, b) => is_isometric(a) && is_isometric(b),
        Statement::QCase { zero, one, .. } => is_isometric(zero) && is_isometric(one),
    })
}

fn qsplit(env: &Environment, q: &VarName) -> Result<Split, LinalgError> {
    Split::new(env, &Environment::empty().with(q))
}

/// Rows of `m` with `q = bit`, as a matrix over `env` without `q`.
fn row_slice(env: &Environment, q: &VarName, bit: usize, m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let sp = qsplit(env, q)?;
    Ok(CMatrix::from_fn(sp.rest_dim, m.ncols(), |r, k| m[(sp.join(bit, r), k)]))
}

fn block(env: &Environment, q: &VarName, a: usize, b: usize, x: &CMatrix) -> Result<CMatrix, LinalgError> {
    let sp = qsplit(env, q)?;
    Ok(CMatrix::from_fn(sp.rest_dim, sp.rest_dim, |r, s| x[(sp.join(a, r), sp.join(b, s))]))
}

fn project_rows(env: &Environment, q: &VarName, bit: usize, m: &CMatrix) -> Result<CMatrix, LinalgError> {
    let mask = bit_mask(env, q)?;
    let mut out = m.clone();
    for i in 0..m.nrows() {
        if usize::from(i & mask != 0) != bit {
            out.row_mut(i).fill(czero());
        }
    }
    Ok(out)
}

fn project_both(env: &Environment, q: &VarName, bit: usize, x: &CMatrix) -> Result<CMatrix, LinalgError> {
    let mask = bit_mask(env, q)?;
    Ok(CMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        if usize::from(i & mask != 0) == bit && usize::from(j & mask != 0) == bit {
            x[(i, j)]
        } else {
            czero()
        }
    }))
}

struct Forward<'a> {
    cfg: &'a LfpConfig,
    lfp: LfpSummary,
}

impl Forward<'_> {
    /// `F_s m` and the output environment.
    fn transform(&mut self, s: &Statement, env: &Environment, m: CMatrix) -> Result<(CMatrix, Environment), DenoteError> {
        match s {
            Statement::Skip => Ok((m, env.clone())),
            Statement::New(q) => {
                let out_env = env.with(q);
                let sp = qsplit(&out_env, q)?;
                let mut out = zeros(out_env.dim(), m.ncols());
                for r in 0..sp.rest_dim {
                    out.set_row(sp.join(0, r), &m.row(r));
                }
                Ok((out, out_env))
            }
            Statement::Discard(q) => Ok((row_slice(env, q, 0, &m)?, env.without(q))),
            Statement::Apply(q, g) => Ok((apply_gate_rows(q, env, &gate_matrix(g), &m)?, env.clone())),
            Statement::Seq(..) => {
                let mut cur = (m, env.clone());
                for item in s.seq_items() {
                    cur = self.transform(item, &cur.1, cur.0)?;
                }
                Ok(cur)
            }
            Statement::Meas { var, zero, .. } => self.transform(zero, env, project_rows(env, var, 0, &m)?),
            Statement::While { var, .. } => Ok((project_rows(env, var, 0, &m)?, env.clone())),
            Statement::QCase { var, zero, one } => {
                let inner = env.without(var);
                let (t0, out_inner) = self.transform(zero, &inner, row_slice(env, var, 0, &m)?)?;
                let (t1, _) = self.transform(one, &inner, row_slice(env, var, 1, &m)?)?;
                let out_env = out_inner.with(var);
                let sp = qsplit(&out_env, var)?;
                let mut out = zeros(out_env.dim(), m.ncols());
                for r in 0..sp.rest_dim {
                    out.set_row(sp.join(0, r), &t0.row(r));
                    out.set_row(sp.join(1, r), &t1.row(r));
                }
                Ok((out, out_env))
            }
        }
    }

    fn conjugate_all(&mut self, s: &[&Statement], env: &Environment, ops: Vec<CMatrix>) -> Result<(Vec<CMatrix>, Environment), DenoteError> {
        let mut f = identity(env.dim());
        let mut cur_env = env.clone();
        for item in s {
            let (nf, ne) = self.transform(item, &cur_env, f)?;
            f = nf;
            cur_env = ne;
        }
        let fa = f.adjoint();
        Ok((ops.into_iter().map(|x| &f * x * &fa).collect(), cur_env))
    }

    fn channel(&mut self, s: &Statement, env: &Environment, ops: Vec<CMatrix>) -> Result<(Vec<CMatrix>, Environment), DenoteError> {
        match s {
            Statement::Skip => Ok((ops, env.clone())),
            Statement::Apply(q, g) => {
                let gm = gate_matrix(g);
                let mut out = Vec::with_capacity(ops.len());
                for x in ops {
                    let y = apply_gate_rows(q, env, &gm, &x)?;
                    let z = apply_gate_rows(q, env, &gm, &y.adjoint())?;
                    out.push(z.adjoint());
                }
                Ok((out, env.clone()))
            }
            Statement::New(q) => {
                let out_env = env.with(q);
                let sp = qsplit(&out_env, q)?;
                let out = ops
                    .into_iter()
                    .map(|x| {
                        let mut y = zeros(out_env.dim(), out_env.dim());
                        for r in 0..sp.rest_dim {
                            for t in 0..sp.rest_dim {
                                y[(sp.join(0, r), sp.join(0, t))] = x[(r, t)];
                            }
                        }
                        y
                    })
                    .collect();
                Ok((out, out_env))
            }
            Statement::Discard(q) => {
                let out = ops
                    .into_iter()
                    .map(|x| Ok(block(env, q, 0, 0, &x)? + block(env, q, 1, 1, &x)?))
                    .collect::<Result<Vec<_>, LinalgError>>()?;
                Ok((out, env.without(q)))
            }
            Statement::Seq(..) => {
                let items = s.seq_items();
                let mut cur = (ops, env.clone());
                let mut k = 0;
                while k < items.len() {
                    let mut j = k;
                    while j < items.len() && is_isometric(items[j]) && !matches!(items[j], Statement::Seq(..)) {
                        j += 1;
                    }
                    if j - k >= 2 {
                        cur = self.conjugate_all(&items[k..j], &cur.1, cur.0)?;
                        k = j;
                    } else {
                        cur = self.channel(items[k], &cur.1, cur.0)?;
                        k += 1;
                    }
                }
                Ok(cur)
            }
            _ if is_isometric(s) => self.conjugate_all(&[s], env, ops),
            Statement::Meas { var, zero, one } => {
                let ops0 = ops.iter().map(|x| project_both(env, var, 0, x)).collect::<Result<Vec<_>, _>>()?;
                let ops1 = ops.iter().map(|x| project_both(env, var, 1, x)).collect::<Result<Vec<_>, _>>()?;
                let (a, out_env) = self.channel(zero, env, ops0)?;
                let (b, _) = self.channel(one, env, ops1)?;
                Ok((a.into_iter().zip(b).map(|(x, y)| x + y).collect(), out_env))
            }
            Statement::While { var, body } => {
                let local_env = analyze(s)?.input;
                let local = if local_env.is_subset(env) && check(&local_env, s).is_ok() { local_env } else { env.clone() };
                let body_v = self.dense_on(&local, body)?;
                let (v, report) = lfp_while(var, &body_v, self.cfg)?;
                self.lfp.record(&report);
                if local == *env {
                    let out = ops.into_iter().map(|x| v.c.apply(&x)).collect();
                    Ok((out, env.clone()))
                } else {
                    apply_local(&v, env, ops)
                }
            }
            Statement::QCase { var, zero, one } => {
                let inner = env.without(var);
                let (f0, out_inner) = self.transform(zero, &inner, identity(inner.dim()))?;
                let (f1, _) = self.transform(one, &inner, identity(inner.dim()))?;
                let mut a_in = Vec::with_capacity(ops.len());
                let mut d_in = Vec::with_capacity(ops.len());
                for x in &ops {
                    a_in.push(block(env, var, 0, 0, x)?);
                    d_in.push(block(env, var, 1, 1, x)?);
                }
                let (a_out, _) = self.channel(zero, &inner, a_in)?;
                let (d_out, _) = self.channel(one, &inner, d_in)?;
                let out_env = out_inner.with(var);
                let sp = qsplit(&out_env, var)?;
                let (f0a, f1a) = (f0.adjoint(), f1.adjoint());
                let mut out = Vec::with_capacity(ops.len());
                for (k, x) in ops.iter().enumerate() {
                    let b = &f0 * block(env, var, 0, 1, x)? * &f1a;
                    let cc = &f1 * block(env, var, 1, 0, x)? * &f0a;
                    let n = sp.rest_dim;
                    let mut y = zeros(out_env.dim(), out_env.dim());
                    for r in 0..n {
                        for t in 0..n {
                            y[(sp.join(0, r), sp.join(0, t))] = a_out[k][(r, t)];
                            y[(sp.join(0, r), sp.join(1, t))] = b[(r, t)];
                            y[(sp.join(1, r), sp.join(0, t))] = cc[(r, t)];
                            y[(sp.join(1, r), sp.join(1, t))] = d_out[k][(r, t)];
                        }
                    }
                    out.push(y);
                }
                Ok((out, out_env))
            }
        }
    }

    /// Dense pair for `env |- s`, built from the batch of matrix units.
    fn dense_on(&mut self, env: &Environment, s: &Statement) -> Result<VacExt, DenoteError> {
        let d = env.dim();
        let basis_ops: Vec<CMatrix> = (0..d * d).map(|k| matrix_unit(d, k % d, k / d)).collect();
        let (imgs, out_env) = self.channel(s, env, basis_ops)?;
        let n = out_env.dim();
        let mut m = zeros(n * n, d * d);
        for (k, img) in imgs.iter().enumerate() {
            m.set_column(k, &vec_of(img));
        }
        let (f, _) = self.transform(s, env, identity(d))?;
        Ok(VacExt { c: Superoperator { in_dim: d, out_dim: n, matrix: m }, f, input: env.clone(), output: out_env })
    }
}

/// Denotation of `env |- s`.
pub fn denote_stmt(env: &Environment, s: &Statement, cfg: &LfpConfig) -> Result<Denotation, DenoteError> {
    check(env, s)?;
    let mut fw = Forward { cfg, lfp: LfpSummary::default() };
    let v = fw.dense_on(env, s)?;
    finish(v, fw.lfp)
}

/// Denotation of a program.
pub fn denote(prog: &Program, cfg: &LfpConfig) -> Result<Denotation, DenoteError> {
    let d = denote_stmt(&prog.input, &prog.stmt, cfg)?;
    if d.value.output != prog.output {
        return Err(DenoteError::EnvMismatch { expected: prog.output.clone(), found: d.value.output });
    }
    Ok(d)
}

/// `C(rho)` for a single operator, without building the full map.
pub fn apply_program(prog: &Program, rho: &CMatrix, cfg: &LfpConfig) -> Result<(CMatrix, LfpSummary), DenoteError> {
    check(&prog.input, &prog.stmt)?;
    let mut fw = Forward { cfg, lfp: LfpSummary::default() };
    let (mut out, _) = fw.channel(&prog.stmt, &prog.input, vec![rho.clone()])?;
    Ok((out.pop().expect("one operator"), fw.lfp))
}

/// `F psi` for a single state.
pub fn transform_program(prog: &Program, psi: &CVector) -> Result<CVector, DenoteError> {
    check(&prog.input, &prog.stmt)?;
    let cfg = LfpConfig::default();
    let mut fw = Forward { cfg: &cfg, lfp: LfpSummary::default() };
    let m = CMatrix::from_column_slice(psi.len(), 1, psi.as_slice());
    let (out, _) = fw.transform(&prog.stmt, &prog.input, m)?;
    Ok(CVector::from_column_slice(out.as_slice()))
}

/// The vacuum transform of `env |- s` alone; loops contribute `|0><0|_q`.
pub fn vacuum_transform(env: &Environment, s: &Statement) -> Result<CMatrix, DenoteError> {
    check(env, s)?;
    let cfg = LfpConfig::default();
    let mut fw = Forward { cfg: &cfg, lfp: LfpSummary::default() };
    Ok(fw.transform(s, env, identity(env.dim()))?.0)
}

/// A scalar multiple of the identity, for building expected values.
pub fn scaled_identity(d: usize, x: f64) -> CMatrix {
    identity(d) * c(x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, rmatrix};
    use crate::syntax::{parse, var, GateName};
    use crate::wellformed::program;

    fn env(s: &str) -> Environment {
        Environment::parse_list(s).unwrap()
    }

    fn both(src: &str, e: &str) -> (Denotation, Denotation) {
        let s = parse(src).unwrap();
        let cfg = LfpConfig::default();
        (denote_compositional(&env(e), &s, &cfg).unwrap(), denote_stmt(&env(e), &s, &cfg).unwrap())
    }

    #[test]
    fn primitives_are_valid() {
        let e = env("p,q");
        for v in [
            VacExt::identity(&e),
            VacExt::discard(&var("p"), &e).unwrap(),
            VacExt::new_qbit(&var("r"), &e).unwrap(),
            VacExt::unitary(&var("q"), &e, &Gate::Named(GateName::H)).unwrap(),
            VacExt::zero(&e, &env("q")),
        ] {
            assert!(v.is_valid());
        }
    }

    #[test]
    fn invalid_pair_is_rejected() {
        let e = env("q");
        let mut v = VacExt::identity(&e);
        v.f = identity(2) * c(2.0, 0.0);
        assert!(!v.is_valid());
    }

    #[test]
    fn coin_converges_to_reset() {
        let (a, b) = both("while q do q *= H", "q");
        for d in [&a, &b] {
            let reset = Superoperator::from_fn(2, 2, |i, j| if i == j { matrix_unit(2, 0, 0) } else { zeros(2, 2) });
            assert!(max_abs_diff(&d.value.c.matrix, &reset.matrix) < 1e-11);
            assert!(max_abs_diff(&d.value.f, &rmatrix(&[&[1.0, 0.0], &[0.0, 0.0]])) == 0.0);
            assert!(d.lfp.max_iterations <= 200);
        }
    }

    #[test]
    fn loop_fixpoint_is_found_exactly() {
        let (a, b) = both("new qbit r; r *= X; while r do skip; discard r", "");
        for d in [&a, &b] {
            assert_eq!(d.value.c.matrix[(0, 0)], czero());
            assert_eq!(d.value.f[(0, 0)], czero());
            assert!(d.lfp.max_iterations <= 3);
        }
    }

    #[test]
    fn recurrence_matches_literal_iteration() {
        let e = env("p,q");
        let body = denote_compositional(&e, &parse("p *= H; qcase p (0 -> q *= T, 1 -> q *= H)").unwrap(), &LfpConfig::default())
            .unwrap()
            .value;
        let iters = kleene_iterates(&var("q"), &body, 30).unwrap();
        let (fix, _) = lfp_while(&var("q"), &body, &LfpConfig { tol: 0.0, max_iter: 30 }).unwrap();
        assert!(iters[29].distance(&fix) < 1e-13);
    }

    #[test]
    fn doubling_phase_matches_literal_iteration() {
        let e = env("p,q");
        let body = denote_compositional(&e, &parse("p *= H; qcase p (0 -> q *= T, 1 -> q *= H)").unwrap(), &LfpConfig::default())
            .unwrap()
            .value;
        let iters = kleene_iterates(&var("q"), &body, 256).unwrap();
        let (fix, report) = lfp_while(&var("q"), &body, &LfpConfig { tol: 0.0, max_iter: LINEAR_STEPS + 2 }).unwrap();
        assert_eq!(report.iterate, 256);
        assert!(iters[255].distance(&fix) < 1e-12);
    }

    #[test]
    fn slowly_terminating_loop_converges() {
        let (s, k) = (1e-3f64.sin(), 1e-3f64.cos());
        let src = format!("while q do q *= U({k}, 0, {}, 0, {s}, 0, {k}, 0)", -s);
        let d = denote_compositional(&env("q"), &parse(&src).unwrap(), &LfpConfig::default()).unwrap();
        assert!(d.lfp.converged);
        assert!(max_abs_diff(&d.value.c.trace_effect(), &identity(2)) < 1e-9);
    }

    #[test]
    fn evaluators_agree_on_nested_program() {
        let src = "new qbit r; r *= H; qcase q (0 -> meas r (0 -> skip, 1 -> r *= X), 1 -> while r do r *= H); discard q; r *= T";
        let (a, b) = both(src, "q");
        assert!(a.value.distance(&b.value) < 1e-12);
    }

    #[test]
    fn qcase_vacuum_transform_is_block_diagonal() {
        let e = env("c,t");
        let s = parse("qcase c (0 -> skip, 1 -> t *= X)").unwrap();
        let d = denote_stmt(&e, &s, &LfpConfig::default()).unwrap();
        let x = rmatrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let p0 = rmatrix(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let p1 = rmatrix(&[&[0.0, 0.0], &[0.0, 1.0]]);
        let cnot = kron(&p0, &identity(2)) + kron(&p1, &x);
        assert_eq!(max_abs_diff(&d.value.f, &cnot), 0.0);
    }

    #[test]
    fn frame_extension_matches_direct_denotation() {
        let s = parse("q *= H; meas q (0 -> skip, 1 -> q *= X)").unwrap();
        let small = denote_stmt(&env("q"), &s, &LfpConfig::default()).unwrap().value;
        let big = denote_stmt(&env("a,q"), &s, &LfpConfig::default()).unwrap().value;
        assert!(small.with_frame(&env("a")).unwrap().distance(&big) < 1e-14);
    }

    #[test]
    fn single_operator_application_matches_full_map() {
        let prog = program(env("q"), parse("q *= H; while q do q *= H").unwrap()).unwrap();
        let d = denote(&prog, &LfpConfig::default()).unwrap();
        let rho = rmatrix(&[&[0.3, 0.1], &[0.1, 0.7]]);
        let (out, _) = apply_program(&prog, &rho, &LfpConfig::default()).unwrap();
        assert!(max_abs_diff(&out, &d.value.apply(&rho)) < 1e-13);
    }

    #[test]
    fn non_convergence_returns_partial_result() {
        let s = parse("while q do q *= H").unwrap();
        let err = denote_stmt(&env("q"), &s, &LfpConfig { tol: 1e-12, max_iter: 5 }).unwrap_err();
        match err {
            DenoteError::NonConvergence { residual, partial } => {
                assert!(residual > 1e-12);
                assert!(partial.value.is_valid());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn combinator_preconditions() {
        let e = env("q");
        let v = VacExt::identity(&e);
        assert!(matches!(qcase_bar(&var("q"), &v, &v), Err(DenoteError::ControlInEnv(_))));
        assert!(matches!(compose(&VacExt::identity(&env("p")), &v), Err(DenoteError::EnvMismatch { .. })));
        assert!(matches!(meas_bar(&var("r"), &v, &v), Err(DenoteError::VarMissing(_))));
    }
}
