// SPDX-License-Identifier: Apache-2.0

//! Checks that relate the two semantics, and observational equivalence.
//!
//! Because the denotational semantics is fully abstract, two programs are
//! observationally equivalent exactly when their denotations agree. When
//! they differ, [`make_distinguisher`] builds a closed context whose
//! termination probability separates them.

use thiserror::Error;

use crate::densem::{apply_program, denote, transform_program, DenoteError, LfpConfig, VacExt};
use crate::linalg::{c, hermitian_eigen, max_abs_diff, outer, unitary_with_first_column, CMatrix, CVector, LinalgError};
use crate::opsem::{eval_program, EvalOptions, OpsemError};
use crate::synth::{filter_zero, unitary_to_program_with, FreshNames, SynthError};
use crate::syntax::{Context, Environment, Program, Statement};
use crate::wellformed::{check_program, compatible, WellFormedError};

/// Default tolerance for denotational equality.
pub const EQUIV_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum AnalysisError {
    #[error("program is not well-formed: {0}")]
    IllFormed(#[from] WellFormedError),
    #[error(transparent)]
    Denote(#[from] DenoteError),
    #[error(transparent)]
    Opsem(#[from] OpsemError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("programs have different environments: ({0} -> {1}) and ({2} -> {3})")]
    EnvMismatch(Environment, Environment, Environment, Environment),
    #[error("state has dimension {found}, environment needs {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("input state is zero")]
    ZeroInput,
    #[error("programs have the same denotation")]
    NotDistinct,
}

/// Agreement between the ensemble of a state and the denotation.
#[derive(Clone, Debug, PartialEq)]
pub struct AdequacyReport {
    /// `max |C(psi psi^dagger) - sum psi_i psi_i^dagger|`.
    pub density_residual: f64,
    /// `max |F psi - sum nu_i psi_i|`.
    pub transform_residual: f64,
    pub truncated_mass: f64,
    pub verdict: bool,
}

/// Compares the denotation of `prog` on `psi` with its ensemble at `fuel`.
pub fn check_adequacy(prog: &Program, psi: &CVector, fuel: usize, tol: f64) -> Result<AdequacyReport, AnalysisError> {
    check_adequacy_with(prog, psi, &EvalOptions::with_fuel(fuel), tol)
}

/// As [`check_adequacy`] with explicit evaluation options.
pub fn check_adequacy_with(prog: &Program, psi: &CVector, opts: &EvalOptions, tol: f64) -> Result<AdequacyReport, AnalysisError> {
    check_program(prog)?;
    let ens = eval_program(prog, psi, opts)?;
    let (c_rho, _) = apply_program(prog, &outer(psi, psi), &LfpConfig::default())?;
    let f_psi = transform_program(prog, psi)?;
    let density_residual = max_abs_diff(&c_rho, &ens.density());
    let diff = f_psi - ens.default_state();
    let transform_residual = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let truncated_mass = ens.truncated_mass;
    let verdict = density_residual <= tol + truncated_mass && transform_residual <= tol;
    Ok(AdequacyReport { density_residual, transform_residual, truncated_mass, verdict })
}

/// `Tr C(psi psi^dagger) / |psi|^2`.
pub fn probability_denotational(prog: &Program, psi: &CVector) -> Result<f64, AnalysisError> {
    check_program(prog)?;
    if psi.len() != prog.input.dim() {
        return Err(AnalysisError::DimMismatch { expected: prog.input.dim(), found: psi.len() });
    }
    let n2 = psi.norm_squared();
    if n2 == 0.0 {
        return Err(AnalysisError::ZeroInput);
    }
    let (rho, _) = apply_program(prog, &outer(psi, psi), &LfpConfig::default())?;
    Ok(rho.trace().re / n2)
}

/// A closed context separating two programs.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub context: Context,
    /// The gap `p(C[S1]) - p(C[S2])` predicted from the denotations.
    pub predicted_gap: f64,
    /// Termination probabilities of the two filled contexts, computed
    /// afresh from their denotations.
    pub probabilities: (f64, f64),
}

impl Witness {
    pub fn measured_gap(&self) -> f64 {
        self.probabilities.0 - self.probabilities.1
    }
}

/// Outcome of an equivalence query.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivVerdict {
    pub equivalent: bool,
    /// Largest entrywise difference of the two superoperators.
    pub c_distance: f64,
    /// Largest entrywise difference of the two vacuum transforms.
    pub f_distance: f64,
    pub witness: Option<Witness>,
}

fn same_envs(p1: &Program, p2: &Program) -> Result<(), AnalysisError> {
    if p1.input != p2.input || p1.output != p2.output {
        return Err(AnalysisError::EnvMismatch(
            p1.input.clone(),
            p1.output.clone(),
            p2.input.clone(),
            p2.output.clone(),
        ));
    }
    Ok(())
}

/// Decides observational equivalence by comparing denotations within `tol`,
/// and builds a witness context when they differ.
pub fn equivalent(p1: &Program, p2: &Program, tol: f64) -> Result<EquivVerdict, AnalysisError> {
    same_envs(p1, p2)?;
    let cfg = LfpConfig::default();
    let d1 = denote(p1, &cfg)?.value;
    let d2 = denote(p2, &cfg)?.value;
    let c_distance = max_abs_diff(&d1.c.matrix, &d2.c.matrix);
    let f_distance = max_abs_diff(&d1.f, &d2.f);
    if c_distance <= tol && f_distance <= tol {
        return Ok(EquivVerdict { equivalent: true, c_distance, f_distance, witness: None });
    }
    let witness = distinguish(p1, p2, &d1, &d2, tol)?;
    Ok(EquivVerdict { equivalent: false, c_distance, f_distance, witness: Some(witness) })
}

/// Builds a closed context whose termination probabilities on the two
/// programs differ.
pub fn make_distinguisher(p1: &Program, p2: &Program, tol: f64) -> Result<Witness, AnalysisError> {
    same_envs(p1, p2)?;
    let cfg = LfpConfig::default();
    let d1 = denote(p1, &cfg)?.value;
    let d2 = denote(p2, &cfg)?.value;
    distinguish(p1, p2, &d1, &d2, tol)
}

/// Largest-magnitude eigenvalue of a Hermitian matrix and its eigenvector,
/// with the full eigenbasis reordered so that it comes first.
fn leading_eigen(m: &CMatrix) -> (f64, CMatrix) {
    let (vals, vecs) = hermitian_eigen(m);
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    let basis = CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| vecs[(i, order[j])]);
    (vals[order[0]], basis)
}

/// Picks an input state on which the two maps differ the most, by a sweep
/// over basis states and their pairwise superpositions followed by a few
/// rounds of alternating refinement.
fn separating_state(delta: &crate::linalg::Superoperator) -> CVector {
    let d = delta.in_dim;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut candidates: Vec<CVector> = (0..d).map(|i| crate::linalg::basis(d, i)).collect();
    for i in 0..d {
        for j in i + 1..d {
            let mut a = CVector::zeros(d);
            a[i] = c(h, 0.0);
            a[j] = c(h, 0.0);
            let mut b = a.clone();
            b[j] = c(0.0, h);
            candidates.push(a);
            candidates.push(b);
        }
    }
    let score = |psi: &CVector| leading_eigen(&delta.apply(&outer(psi, psi))).0.abs();
    let mut best = candidates
        .into_iter()
        .map(|v| (score(&v), v))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one candidate");
    let adjoint = delta.adjoint();
    for _ in 0..8 {
        let (lam, basis) = leading_eigen(&delta.apply(&outer(&best.1, &best.1)));
        let phi = basis.column(0).into_owned();
        // Maximise <phi| delta(psi psi^dagger) |phi> with the sign of lam.
        let back = adjoint.apply(&outer(&phi, &phi));
        let (vals, vecs) = hermitian_eigen(&(&back * c(lam.signum(), 0.0)));
        let k = vals.len() - 1;
        let cand = vecs.column(k).into_owned();
        let s = score(&cand);
        if s > best.0 * (1.0 + 1e-12) {
            best = (s, cand);
        } else {
            break;
        }
    }
    best.1
}

fn distinguish(p1: &Program, p2: &Program, d1: &VacExt, d2: &VacExt, tol: f64) -> Result<Witness, AnalysisError> {
    let c_distance = max_abs_diff(&d1.c.matrix, &d2.c.matrix);
    let f_distance = max_abs_diff(&d1.f, &d2.f);
    if c_distance <= tol && f_distance <= tol {
        return Err(AnalysisError::NotDistinct);
    }
    let mut fresh = FreshNames::avoiding(
        p1.stmt.vars().iter().chain(p2.stmt.vars().iter()).chain(p1.input.iter()).chain(p1.output.iter()),
    );
    let (gamma, delta_env) = (p1.input.clone(), p1.output.clone());
    let hole = Context::hole(gamma.clone(), delta_env.clone());

    // When only the vacuum transforms differ, run the hole in superposition
    // with a padding statement so that the difference becomes observable.
    let (inner, wrapped1, wrapped2, gamma_s, delta_s) = if c_distance > tol {
        (hole, p1.clone(), p2.clone(), gamma.clone(), delta_env.clone())
    } else {
        let r = fresh.fresh();
        let mut pad: Vec<Statement> = delta_env.difference(&gamma).iter().map(|v| Statement::new_qbit(v.clone())).collect();
        pad.extend(gamma.difference(&delta_env).iter().map(|v| Statement::discard(v.clone())));
        let pad = Statement::seq_all(pad);
        let wrap = |p: &Program| Program {
            input: gamma.with(&r),
            stmt: Statement::qcase(r.clone(), p.stmt.clone(), pad.clone()),
            output: delta_env.with(&r),
        };
        let ctx = Context::QCaseZero(r.clone(), Box::new(hole), pad.clone());
        (ctx, wrap(p1), wrap(p2), gamma.with(&r), delta_env.with(&r))
    };

    let cfg = LfpConfig::default();
    let e1 = denote(&wrapped1, &cfg)?.value;
    let e2 = denote(&wrapped2, &cfg)?.value;
    let diff = e1.c.add(&scaled(&e2.c, -1.0))?;
    let psi = separating_state(&diff);
    let (lambda0, basis) = leading_eigen(&diff.apply(&outer(&psi, &psi)));

    let mut before: Vec<Statement> = gamma_s.iter().map(|v| Statement::new_qbit(v.clone())).collect();
    if !gamma_s.is_empty() {
        before.push(unitary_to_program_with(&unitary_with_first_column(&psi), &gamma_s, &mut fresh)?);
    }
    let mut after: Vec<Statement> = Vec::new();
    if !delta_s.is_empty() {
        after.push(unitary_to_program_with(&basis.adjoint(), &delta_s, &mut fresh)?);
        let z = fresh.fresh();
        after.push(filter_zero(delta_s.vars(), &z));
        after.extend(delta_s.iter().map(|v| Statement::discard(v.clone())));
    }
    let opt = |items: Vec<Statement>| if items.is_empty() { None } else { Some(Statement::seq_all(items)) };
    let context = Context::between(opt(before), inner, opt(after));
    compatible(&context, p1)?;
    compatible(&context, p2)?;
    let prob = |p: &Program| -> Result<f64, AnalysisError> {
        let closed = Program { input: Environment::empty(), stmt: context.substitute(&p.stmt), output: Environment::empty() };
        let d = denote(&closed, &cfg)?.value;
        Ok(d.c.matrix[(0, 0)].re)
    };
    let probabilities = (prob(p1)?, prob(p2)?);
    Ok(Witness { context, predicted_gap: lambda0, probabilities })
}

fn scaled(s: &crate::linalg::Superoperator, x: f64) -> crate::linalg::Superoperator {
    crate::linalg::Superoperator { in_dim: s.in_dim, out_dim: s.out_dim, matrix: &s.matrix * c(x, 0.0) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::basis;
    use crate::syntax::parse;
    use crate::wellformed::program;

    fn prog(src: &str, e: &str) -> Program {
        program(Environment::parse_list(e).unwrap(), parse(src).unwrap()).unwrap()
    }

    #[test]
    fn coin_terminates_and_loop_does_not() {
        let coin = prog("while q do q *= H", "q");
        let psi = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        assert!((probability_denotational(&coin, &psi).unwrap() - 1.0).abs() < 1e-10);
        let lp = prog("new qbit r; r *= X; while r do skip; discard r", "q");
        assert_eq!(probability_denotational(&lp, &psi).unwrap(), 0.0);
    }

    #[test]
    fn skip_is_adequate_exactly() {
        let r = check_adequacy(&prog("skip", "q"), &basis(2, 1), 8, 0.0).unwrap();
        assert_eq!((r.density_residual, r.transform_residual), (0.0, 0.0));
        assert!(r.verdict);
    }

    #[test]
    fn coin_adequacy_residual_is_within_truncation() {
        let psi = CVector::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)]);
        let r = check_adequacy(&prog("while q do q *= H", "q"), &psi, 60, 1e-12).unwrap();
        assert!(r.density_residual <= 0.64 * 2f64.powi(-60) + 1e-12);
        assert!(r.transform_residual <= 1e-12);
        assert!(r.verdict);
    }

    #[test]
    fn coin_is_equivalent_to_reset() {
        let v = equivalent(&prog("while q do q *= H", "q"), &prog("discard q; new qbit q", "q"), EQUIV_TOL).unwrap();
        assert!(v.equivalent);
        assert!(v.witness.is_none());
    }

    #[test]
    fn identical_programs_are_not_distinguished() {
        let p = prog("q *= H", "q");
        assert_eq!(make_distinguisher(&p, &p, EQUIV_TOL), Err(AnalysisError::NotDistinct));
    }

    #[test]
    fn different_discard_bases_are_distinguished() {
        let a = prog("discard q", "q");
        let b = prog("q *= H; discard q", "q");
        let w = make_distinguisher(&a, &b, EQUIV_TOL).unwrap();
        assert!(w.predicted_gap.abs() > 1e-3);
        assert!((w.measured_gap() - w.predicted_gap).abs() < 1e-9);
    }

    #[test]
    fn phase_only_difference_uses_superposed_control() {
        // Same channel, vacuum transforms differ by a sign.
        let a = prog("skip", "q");
        let b = prog("q *= Z; q *= X; q *= Z; q *= X", "q");
        let v = equivalent(&a, &b, EQUIV_TOL).unwrap();
        assert!(!v.equivalent);
        assert!(v.c_distance < 1e-12);
        let w = v.witness.unwrap();
        assert!(matches!(w.context, Context::SeqRight(_, _)));
        assert!(w.predicted_gap.abs() > 1e-3);
        assert!((w.measured_gap() - w.predicted_gap).abs() < 1e-9);
    }

    #[test]
    fn mismatched_environments_are_rejected() {
        let a = prog("skip", "q");
        let b = prog("skip", "p");
        assert!(matches!(equivalent(&a, &b, EQUIV_TOL), Err(AnalysisError::EnvMismatch(..))));
    }
}
