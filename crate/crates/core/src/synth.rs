// SPDX-License-Identifier: Apache-2.0

//! Program synthesis from denotations.
//!
//! Any valid pair `(C, F)` is compiled into a program denoting it:
//!
//! 1. a Kraus decomposition `K_i` with vacuum amplitudes `nu_i` is read off
//!    the extended Choi matrix;
//! 2. the operators are stacked into one sub-unitary `U` whose ancilla
//!    register indexes the Kraus operator;
//! 3. `U` is completed to a unitary on a power-of-two register, which is
//!    factored into two-level rotations and emitted as multi-controlled
//!    single-qubit gates built from nested `qcase`;
//! 4. the ancillas are rotated so that `|0..0>` maps to the vacuum state
//!    `sum nu_i |i>` and discarded.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::densem::VacExt;
use crate::linalg::{
    c, cone, czero, hermitian_eigen, identity, inv_sqrt_pd, loewner_leq, max_abs_diff, unitary_with_first_column,
    zeros, CMatrix, CVector, KrausSet, LinalgError, Split, C64,
};
use crate::syntax::{Environment, Gate, GateName, Program, Statement, VarName};

/// Tolerance for treating a matrix as unitary.
pub const UNITARY_TOL: f64 = 1e-9;
/// Entries below this size are treated as already eliminated.
const ELIM_EPS: f64 = 1e-15;
/// Cores this close to a built-in gate are emitted as that gate.
const SNAP_TOL: f64 = 1e-13;
/// Eigenvalue cutoff for Kraus extraction and defect rank.
pub const KRAUS_CUTOFF: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SynthError {
    #[error("matrix is not unitary (defect {0:e})")]
    NotUnitary(f64),
    #[error("matrix is not sub-unitary")]
    NotSubUnitary,
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("matrix shape does not match the environments: {0}")]
    ShapeMismatch(String),
    #[error("pair is not a valid vacuum extension")]
    InvalidVacExt,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Generator of variable names `_a0, _a1, ...` avoiding a reserved set.
#[derive(Clone, Debug, Default)]
pub struct FreshNames {
    used: BTreeSet<String>,
    next: usize,
}

impl FreshNames {
    pub fn avoiding<'a, I: IntoIterator<Item = &'a VarName>>(vars: I) -> Self {
        FreshNames { used: vars.into_iter().map(|v| v.as_str().to_string()).collect(), next: 0 }
    }

    pub fn reserve(&mut self, v: &VarName) {
        self.used.insert(v.as_str().to_string());
    }

    pub fn fresh(&mut self) -> VarName {
        loop {
            let name = format!("_a{}", self.next);
            self.next += 1;
            if self.used.insert(name.clone()) {
                return VarName::new(name).expect("generated names are valid");
            }
        }
    }
}

fn log2_exact(d: usize) -> Result<usize, SynthError> {
    if d == 0 || !d.is_power_of_two() {
        return Err(SynthError::NotPowerOfTwo(d));
    }
    Ok(d.trailing_zeros() as usize)
}

fn unitarity_defect(u: &CMatrix) -> f64 {
    max_abs_diff(&(u.adjoint() * u), &identity(u.ncols()))
}

// ---------------------------------------------------------------------------
// Two-level factorisation

/// A unitary that acts as `core` on the span of basis vectors `i` and `j`
/// (in that order) and as the identity elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLevelFactor {
    pub i: usize,
    pub j: usize,
    pub core: CMatrix,
}

impl TwoLevelFactor {
    pub fn matrix(&self, d: usize) -> CMatrix {
        let mut m = identity(d);
        m[(self.i, self.i)] = self.core[(0, 0)];
        m[(self.i, self.j)] = self.core[(0, 1)];
        m[(self.j, self.i)] = self.core[(1, 0)];
        m[(self.j, self.j)] = self.core[(1, 1)];
        m
    }

    /// The same factor with `i < j`.
    fn normalized(&self) -> TwoLevelFactor {
        if self.i < self.j {
            return self.clone();
        }
        let k = &self.core;
        let core = CMatrix::from_row_slice(2, 2, &[k[(1, 1)], k[(1, 0)], k[(0, 1)], k[(0, 0)]]);
        TwoLevelFactor { i: self.j, j: self.i, core }
    }
}

/// Gray code ordering of `0..d`.
fn gray(d: usize) -> Vec<usize> {
    (0..d).map(|k| k ^ (k >> 1)).collect()
}

fn apply_rows(w: &mut CMatrix, f: &TwoLevelFactor) {
    for col in 0..w.ncols() {
        let (a, b) = (w[(f.i, col)], w[(f.j, col)]);
        w[(f.i, col)] = f.core[(0, 0)] * a + f.core[(0, 1)] * b;
        w[(f.j, col)] = f.core[(1, 0)] * a + f.core[(1, 1)] * b;
    }
}

/// Factors a unitary of power-of-two dimension `d >= 2` as
/// `U = factors[0] * factors[1] * ... * factors[k-1]`, where every factor
/// acts on two basis indices that differ in exactly one bit.
pub fn two_level_decompose(u: &CMatrix) -> Result<Vec<TwoLevelFactor>, SynthError> {
    let d = u.nrows();
    if u.ncols() != d {
        return Err(SynthError::ShapeMismatch("unitary must be square".into()));
    }
    log2_exact(d)?;
    let defect = unitarity_defect(u);
    if defect > UNITARY_TOL {
        return Err(SynthError::NotUnitary(defect));
    }
    if d < 2 {
        return Err(SynthError::ShapeMismatch("two-level factors need dimension at least 2".into()));
    }
    let g = gray(d);
    let mut w = u.clone();
    // G_K ... G_1 U = I, collected as G_1, ..., G_K.
    let mut eliminators = Vec::new();
    for k in 0..d - 1 {
        let col = g[k];
        for m in (k + 1..d).rev() {
            let (a, b) = (w[(g[m - 1], col)], w[(g[m], col)]);
            if b.norm() <= ELIM_EPS {
                continue;
            }
            let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let rr = c(r, 0.0);
            let core = CMatrix::from_row_slice(2, 2, &[a.conj() / rr, b.conj() / rr, -b / rr, a / rr]);
            let f = TwoLevelFactor { i: g[m - 1], j: g[m], core };
            apply_rows(&mut w, &f);
            w[(g[m], col)] = czero();
            eliminators.push(f);
        }
        let p = w[(col, col)];
        let phase = p / c(p.norm(), 0.0);
        if (phase - cone()).norm() > ELIM_EPS {
            let core = CMatrix::from_row_slice(2, 2, &[phase.conj(), czero(), czero(), cone()]);
            let f = TwoLevelFactor { i: col, j: g[k + 1], core };
            apply_rows(&mut w, &f);
            eliminators.push(f);
        }
    }
    let last = g[d - 1];
    let p = w[(last, last)];
    let phase = p / c(p.norm(), 0.0);
    if (phase - cone()).norm() > ELIM_EPS {
        let core = CMatrix::from_row_slice(2, 2, &[cone(), czero(), czero(), phase.conj()]);
        eliminators.push(TwoLevelFactor { i: g[d - 2], j: last, core });
    }
    Ok(eliminators
        .into_iter()
        .map(|f| TwoLevelFactor { i: f.i, j: f.j, core: f.core.adjoint() })
        .collect())
}

/// `factors[0] * ... * factors[k-1]` in dimension `d`.
pub fn reconstruct(factors: &[TwoLevelFactor], d: usize) -> CMatrix {
    let mut m = identity(d);
    for f in factors.iter().rev() {
        apply_rows(&mut m, f);
    }
    m
}

// ---------------------------------------------------------------------------
// Gates and small gadgets

fn snap_gate(core: &CMatrix) -> Option<Gate> {
    for g in GateName::ALL {
        let m = crate::linalg::gate_matrix(&Gate::Named(g));
        if max_abs_diff(core, &m) <= SNAP_TOL {
            return if g == GateName::I { None } else { Some(Gate::Named(g)) };
        }
    }
    let m = [[core[(0, 0)], core[(0, 1)]], [core[(1, 0)], core[(1, 1)]]];
    Some(Gate::from_matrix(m).expect("cores of unitary factors are unitary"))
}

/// A single-qubit gate on `target` applied only on the basis states where
/// every control has the given bit value.
pub fn controlled_gate(controls: &[(VarName, usize)], target: &VarName, gate: Gate) -> Statement {
    let mut s = Statement::apply(target.clone(), gate);
    for (v, bit) in controls.iter().rev() {
        s = if *bit == 0 {
            Statement::qcase(v.clone(), s, Statement::Skip)
        } else {
            Statement::qcase(v.clone(), Statement::Skip, s)
        };
    }
    s
}

fn factor_statement(env: &Environment, f: &TwoLevelFactor) -> Option<Statement> {
    let f = f.normalized();
    let n = env.len();
    let diff = f.i ^ f.j;
    debug_assert_eq!(diff.count_ones(), 1);
    let gate = snap_gate(&f.core)?;
    let mut target = None;
    let mut controls = Vec::new();
    for (p, v) in env.iter().enumerate() {
        let mask = 1usize << (n - 1 - p);
        if diff == mask {
            target = Some(v.clone());
        } else {
            controls.push((v.clone(), usize::from(f.i & mask != 0)));
        }
    }
    Some(controlled_gate(&controls, &target.expect("factor differs in one bit"), gate))
}

/// `qcase control (0 -> skip, 1 -> target *= X)`.
pub fn cnot(control: &VarName, target: &VarName) -> Statement {
    controlled_gate(&[(control.clone(), 1)], target, Gate::Named(GateName::X))
}

/// Exchanges two qubits with three controlled-NOT gates.
pub fn swap(p: &VarName, q: &VarName) -> Statement {
    Statement::seq_all([cnot(p, q), cnot(q, p), cnot(p, q)])
}

/// `new qbit q; swap p q; discard p`.
pub fn rename(p: &VarName, q: &VarName) -> Statement {
    Statement::seq_all([Statement::new_qbit(q.clone()), swap(p, q), Statement::discard(p.clone())])
}

/// A statement that never terminates: `new qbit z; z *= X; while z do skip; discard z`.
pub fn loop_forever(z: &VarName) -> Statement {
    Statement::seq_all([
        Statement::new_qbit(z.clone()),
        Statement::apply(z.clone(), Gate::Named(GateName::X)),
        Statement::while_loop(z.clone(), Statement::Skip),
        Statement::discard(z.clone()),
    ])
}

/// Continues only on the branch where every variable in `vars` reads 0 and
/// diverges otherwise.
pub fn filter_zero(vars: &[VarName], z: &VarName) -> Statement {
    let mut s = Statement::Skip;
    for v in vars.iter().rev() {
        s = Statement::meas(v.clone(), s, loop_forever(z));
    }
    s
}

// ---------------------------------------------------------------------------
// Unitaries

/// A statement on `env` denoting `(U (.) U^dagger, U)`.
pub fn unitary_to_program(u: &CMatrix, env: &Environment) -> Result<Statement, SynthError> {
    let reserved: Vec<&VarName> = env.iter().collect();
    unitary_to_program_with(u, env, &mut FreshNames::avoiding(reserved))
}

/// As [`unitary_to_program`], drawing any auxiliary names from `fresh`.
pub fn unitary_to_program_with(u: &CMatrix, env: &Environment, fresh: &mut FreshNames) -> Result<Statement, SynthError> {
    let d = env.dim();
    if u.shape() != (d, d) {
        return Err(SynthError::ShapeMismatch(format!("expected {d}x{d}, found {}x{}", u.nrows(), u.ncols())));
    }
    let defect = unitarity_defect(u);
    if defect > UNITARY_TOL {
        return Err(SynthError::NotUnitary(defect));
    }
    if d == 1 {
        return Ok(global_phase(u[(0, 0)], fresh));
    }
    let factors = two_level_decompose(u)?;
    // Program order applies the rightmost factor first.
    let mut merged: Vec<TwoLevelFactor> = Vec::new();
    for f in factors.iter().rev().map(TwoLevelFactor::normalized) {
        match merged.last_mut() {
            Some(prev) if prev.i == f.i && prev.j == f.j => prev.core = &f.core * &prev.core,
            _ => merged.push(f),
        }
    }
    let items: Vec<Statement> = merged.iter().filter_map(|f| factor_statement(env, f)).collect();
    Ok(Statement::seq_all(items))
}

/// A closed statement whose vacuum transform is the scalar `z` of unit modulus.
fn global_phase(z: C64, fresh: &mut FreshNames) -> Statement {
    let phase = z / c(z.norm(), 0.0);
    if (phase - cone()).norm() <= SNAP_TOL {
        return Statement::Skip;
    }
    let a = fresh.fresh();
    let gate = Gate::from_matrix([[phase, czero()], [czero(), cone()]]).expect("phase gate is unitary");
    Statement::seq_all([Statement::new_qbit(a.clone()), Statement::apply(a.clone(), gate), Statement::discard(a)])
}

// ---------------------------------------------------------------------------
// Sub-unitaries

/// Completes a sub-unitary `U` (shape `b x a`, `U^dagger U <= I`) to a
/// unitary of power-of-two dimension `N >= max(a, b)` whose top-left
/// `b x a` block is `U`. `N` is the smallest such size.
pub fn complete_subunitary(u: &CMatrix) -> Result<CMatrix, SynthError> {
    let (b, a) = u.shape();
    let defect = identity(a) - u.adjoint() * u;
    if !loewner_leq(&(u.adjoint() * u), &identity(a))? {
        return Err(SynthError::NotSubUnitary);
    }
    let (vals, vecs) = hermitian_eigen(&defect);
    let rank = vals.iter().filter(|&&l| l > KRAUS_CUTOFF).count();
    let mut n = a.max(b).max(1).next_power_of_two();
    while n - b < rank {
        n *= 2;
    }
    let extra = n - b;
    let mut q = zeros(n, a);
    q.view_mut((0, 0), (b, a)).copy_from(u);
    // Largest defect eigenvalues first.
    for (row, k) in (0..a).rev().take(extra).enumerate() {
        let s = vals[k].max(0.0).sqrt();
        for col in 0..a {
            q[(b + row, col)] = vecs[(col, k)].conj() * s;
        }
    }
    let mut w = crate::linalg::complete_isometry(&q);
    if unitarity_defect(&w) > 1e-15 {
        w = &w * inv_sqrt_pd(&(w.adjoint() * &w));
    }
    Ok(w)
}

fn index_of(env: &Environment, bit: impl Fn(&VarName) -> usize) -> usize {
    let n = env.len();
    env.iter().enumerate().fold(0, |acc, (p, v)| acc | (bit(v) << (n - 1 - p)))
}

fn bit_of(env: &Environment, v: &VarName, idx: usize) -> usize {
    let p = env.position(v).expect("variable in environment");
    (idx >> (env.len() - 1 - p)) & 1
}

/// A statement from `input` to `output` denoting `(U (.) U^dagger, U)` for a
/// sub-unitary `U` of shape `2^|output| x 2^|input|`.
pub fn subunitary_to_program(u: &CMatrix, input: &Environment, output: &Environment) -> Result<Statement, SynthError> {
    let mut fresh = FreshNames::avoiding(input.iter().chain(output.iter()));
    subunitary_to_program_with(u, input, output, &mut fresh)
}

/// As [`subunitary_to_program`], drawing auxiliary names from `fresh`.
pub fn subunitary_to_program_with(
    u: &CMatrix,
    input: &Environment,
    output: &Environment,
    fresh: &mut FreshNames,
) -> Result<Statement, SynthError> {
    let (b, a) = (output.dim(), input.dim());
    if u.shape() != (b, a) {
        return Err(SynthError::ShapeMismatch(format!("expected {b}x{a}, found {}x{}", u.nrows(), u.ncols())));
    }
    for v in input.iter().chain(output.iter()) {
        fresh.reserve(v);
    }
    let full = complete_subunitary(u)?;
    let n = log2_exact(full.nrows())?;

    // Register: the inputs plus padding qubits, preferring output names.
    let npads = n - input.len();
    let mut pads: Vec<VarName> = output.difference(input).iter().take(npads).cloned().collect();
    while pads.len() < npads {
        pads.push(fresh.fresh());
    }
    let pads_env = Environment::from_vars(pads.iter().cloned());
    let reg = input.union(&pads_env);

    // Output register: the outputs already present, filled with other
    // register qubits that are renamed at the end.
    let kept = output.intersection(&reg);
    let missing = output.difference(&reg);
    let spare: Vec<VarName> = reg.difference(output).iter().take(missing.len()).cloned().collect();
    let renames: Vec<(VarName, VarName)> = spare.iter().cloned().zip(missing.iter().cloned()).collect();
    let out_reg = kept.union(&Environment::from_vars(spare.iter().cloned()));
    let rest = reg.difference(&out_reg);
    // Output variable that each register qubit of `out_reg` ends up as.
    let final_name = |v: &VarName| -> VarName {
        renames.iter().find(|(p, _)| p == v).map(|(_, q)| q.clone()).unwrap_or_else(|| v.clone())
    };

    let (na, nb, npad_dim) = (a, b, pads_env.dim());
    let dim = reg.dim();
    let mut phys_in = vec![0usize; dim];
    for pad in 0..npad_dim {
        for i in 0..na {
            phys_in[pad * na + i] = index_of(&reg, |v| {
                if pads_env.contains(v) {
                    bit_of(&pads_env, v, pad)
                } else {
                    bit_of(input, v, i)
                }
            });
        }
    }
    let mut phys_out = vec![0usize; dim];
    for r in 0..rest.dim() {
        for o in 0..nb {
            phys_out[r * nb + o] = index_of(&reg, |v| {
                if rest.contains(v) {
                    bit_of(&rest, v, r)
                } else {
                    bit_of(output, &final_name(v), o)
                }
            });
        }
    }
    let mut phys = zeros(dim, dim);
    for y in 0..dim {
        for x in 0..dim {
            phys[(phys_out[y], phys_in[x])] = full[(y, x)];
        }
    }

    let mut items: Vec<Statement> = pads.iter().map(|p| Statement::new_qbit(p.clone())).collect();
    items.push(unitary_to_program_with(&phys, &reg, fresh)?);
    if !rest.is_empty() {
        let z = fresh.fresh();
        items.push(filter_zero(rest.vars(), &z));
        items.extend(rest.iter().map(|v| Statement::discard(v.clone())));
    }
    items.extend(renames.iter().map(|(p, q)| rename(p, q)));
    Ok(Statement::seq_all(items))
}

// ---------------------------------------------------------------------------
// Kraus stacking and the full pipeline

/// The sub-unitary stacking of a Kraus set.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedKraus {
    /// Maps `H_input` to `H_(output + ancillas)`.
    pub u: CMatrix,
    pub ancillas: Environment,
    /// The ancilla state `sum nu_i |i>`; the vacuum transform is `(<psi| (x) I) U`.
    pub psi: CVector,
    pub output: Environment,
}

/// Stacks `ks` into `U = sum_i |i>_anc (x) K_i`, padding the operator count
/// to a power of two. A single operator needs no ancilla and is scaled by
/// `conj(nu)`.
pub fn stack_kraus(ks: &KrausSet, output: &Environment, fresh: &mut FreshNames) -> Result<StackedKraus, SynthError> {
    ks.validate()?;
    if ks.out_dim() != output.dim() {
        return Err(SynthError::ShapeMismatch("Kraus operators do not match the output environment".into()));
    }
    if ks.ops.len() == 1 {
        let nu = ks.vacuum[0];
        let unit = if nu.norm() > 0.0 { nu / c(nu.norm(), 0.0) } else { cone() };
        return Ok(StackedKraus {
            u: &ks.ops[0] * unit.conj(),
            ancillas: Environment::empty(),
            psi: CVector::from_element(1, cone()),
            output: output.clone(),
        });
    }
    let count = ks.ops.len().next_power_of_two();
    let s = log2_exact(count)?;
    let ancillas = Environment::from_vars((0..s).map(|_| fresh.fresh()));
    let full = output.union(&ancillas);
    let sp = Split::new(&full, &ancillas)?;
    let (m, n) = (ks.in_dim(), ks.out_dim());
    let mut u = zeros(full.dim(), m);
    let mut psi = CVector::zeros(count);
    for (i, (k, nu)) in ks.ops.iter().zip(&ks.vacuum).enumerate() {
        psi[i] = *nu;
        for o in 0..n {
            for x in 0..m {
                u[(sp.join(i, o), x)] = k[(o, x)];
            }
        }
    }
    Ok(StackedKraus { u, ancillas, psi, output: full })
}

/// A Kraus set with vacuum amplitudes for a valid pair, read off the
/// eigendecomposition of the extended Choi matrix.
pub fn vacext_to_kraus(v: &VacExt) -> Result<KrausSet, SynthError> {
    let (m, n) = (v.input.dim(), v.output.dim());
    let ext = v.extend();
    let tilde = ext.kraus(KRAUS_CUTOFF);
    if tilde.is_empty() {
        return Err(SynthError::InvalidVacExt);
    }
    let ops: Vec<CMatrix> = tilde.iter().map(|k| k.view((0, 0), (n, m)).into_owned()).collect();
    let mut vacuum: Vec<C64> = tilde.iter().map(|k| k[(n, m)]).collect();
    let w: f64 = vacuum.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if w == 0.0 {
        return Err(SynthError::InvalidVacExt);
    }
    for z in &mut vacuum {
        *z /= c(w, 0.0);
    }
    KrausSet::new(ops, vacuum).map_err(|_| SynthError::InvalidVacExt)
}

/// A program from `input` to `output` denoting the Kraus set `ks`.
pub fn synthesize_kraus(ks: &KrausSet, input: &Environment, output: &Environment) -> Result<Program, SynthError> {
    if ks.in_dim() != input.dim() {
        return Err(SynthError::ShapeMismatch("Kraus operators do not match the input environment".into()));
    }
    let mut fresh = FreshNames::avoiding(input.iter().chain(output.iter()));
    let st = stack_kraus(ks, output, &mut fresh)?;
    let mut items = vec![subunitary_to_program_with(&st.u, input, &st.output, &mut fresh)?];
    if !st.ancillas.is_empty() {
        let v = unitary_with_first_column(&st.psi);
        items.push(unitary_to_program_with(&v.adjoint(), &st.ancillas, &mut fresh)?);
        items.extend(st.ancillas.iter().map(|a| Statement::discard(a.clone())));
    }
    Ok(Program { input: input.clone(), stmt: Statement::seq_all(items), output: output.clone() })
}

/// A program denoting the valid pair `v`.
pub fn synthesize(v: &VacExt) -> Result<Program, SynthError> {
    if !v.is_valid() {
        return Err(SynthError::InvalidVacExt);
    }
    let ks = vacext_to_kraus(v)?;
    synthesize_kraus(&ks, &v.input, &v.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densem::{denote, denote_stmt, LfpConfig};
    use crate::linalg::{kron, rmatrix};
    use crate::syntax::{parse, var};
    use crate::wellformed::check;

    fn env(s: &str) -> Environment {
        Environment::parse_list(s).unwrap()
    }

    fn assert_denotes(s: &Statement, input: &Environment, u: &CMatrix, tol: f64) {
        let d = denote_stmt(input, s, &LfpConfig::default()).unwrap().value;
        let expect = VacExt { c: crate::linalg::Superoperator::conjugation(u), f: u.clone(), input: input.clone(), output: d.output.clone() };
        assert!(d.distance(&expect) <= tol, "distance {}", d.distance(&expect));
    }

    #[test]
    fn pauli_x_is_a_single_gate() {
        let x = rmatrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = unitary_to_program(&x, &env("q")).unwrap();
        assert_eq!(s.pretty(), "q *= X");
    }

    #[test]
    fn cnot_is_a_single_qcase() {
        let p0 = rmatrix(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let p1 = rmatrix(&[&[0.0, 0.0], &[0.0, 1.0]]);
        let x = rmatrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let m = kron(&p0, &identity(2)) + kron(&p1, &x);
        let s = unitary_to_program(&m, &env("c,t")).unwrap();
        assert_eq!(s, parse("qcase c (0 -> skip, 1 -> t *= X)").unwrap());
    }

    #[test]
    fn identity_is_skip() {
        assert_eq!(unitary_to_program(&identity(4), &env("a,b")).unwrap(), Statement::Skip);
    }

    #[test]
    fn scalar_phase_uses_an_ancilla() {
        let u = CMatrix::from_element(1, 1, c(0.0, 1.0));
        let s = unitary_to_program(&u, &Environment::empty()).unwrap();
        assert_denotes(&s, &Environment::empty(), &u, 1e-14);
    }

    #[test]
    fn two_level_factors_reconstruct_and_touch_one_bit() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u = kron(&rmatrix(&[&[h, h], &[h, -h]]), &crate::linalg::cmatrix(&[&[cone(), czero()], &[czero(), c(0.0, 1.0)]]));
        let fs = two_level_decompose(&u).unwrap();
        assert!(max_abs_diff(&reconstruct(&fs, 4), &u) < 1e-12);
        assert!(fs.iter().all(|f| (f.i ^ f.j).count_ones() == 1));
    }

    #[test]
    fn subunitary_completion_keeps_block() {
        let u = identity(2) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let w = complete_subunitary(&u).unwrap();
        assert_eq!(w.shape(), (4, 4));
        assert!(unitarity_defect(&w) < 1e-14);
        assert!(max_abs_diff(&w.view((0, 0), (2, 2)).into_owned(), &u) < 1e-14);
        let bra0 = rmatrix(&[&[1.0, 0.0]]);
        let w = complete_subunitary(&bra0).unwrap();
        assert_eq!(w.shape(), (2, 2));
        assert!(max_abs_diff(&w.view((0, 0), (1, 2)).into_owned(), &bra0) < 1e-15);
    }

    #[test]
    fn not_subunitary_is_rejected() {
        assert_eq!(complete_subunitary(&(identity(2) * c(2.0, 0.0))), Err(SynthError::NotSubUnitary));
    }

    #[test]
    fn projection_onto_zero_is_synthesized() {
        let bra0 = rmatrix(&[&[1.0, 0.0]]);
        let s = subunitary_to_program(&bra0, &env("q"), &Environment::empty()).unwrap();
        assert_eq!(check(&env("q"), &s).unwrap(), Environment::empty());
        assert_denotes(&s, &env("q"), &bra0, 1e-12);
    }

    #[test]
    fn renaming_subunitary_is_exact() {
        let s = subunitary_to_program(&identity(2), &env("p"), &env("q")).unwrap();
        assert_eq!(check(&env("p"), &s).unwrap(), env("q"));
        assert_denotes(&s, &env("p"), &identity(2), 1e-14);
    }

    #[test]
    fn rename_gadget_denotes_identity() {
        let s = rename(&var("p"), &var("q"));
        assert_denotes(&s, &env("p"), &identity(2), 0.0);
    }

    #[test]
    fn coin_denotation_round_trips() {
        let coin = crate::wellformed::program(env("q"), parse("while q do q *= H").unwrap()).unwrap();
        let v = denote(&coin, &LfpConfig::default()).unwrap().value;
        let p = synthesize(&v).unwrap();
        let w = denote(&p, &LfpConfig::default()).unwrap().value;
        assert!(w.distance(&v) < 1e-9);
    }

    #[test]
    fn fresh_names_skip_reserved() {
        let mut f = FreshNames::avoiding([&var("_a0"), &var("_a2")]);
        assert_eq!(f.fresh().as_str(), "_a1");
        assert_eq!(f.fresh().as_str(), "_a3");
    }
}
