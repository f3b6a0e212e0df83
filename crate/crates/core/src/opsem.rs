// SPDX-License-Identifier: Apache-2.0

//! Operational semantics.
//!
//! A configuration `[S, psi]` over an environment evaluates to an ensemble:
//! the multiset of final values `(psi', nu)` over all derivations, where
//! `psi'` is an unnormalised state and the flag `nu` records whether the
//! derivation took only the vacuum-default branches (the only branches that
//! keep `nu = 1`). Values `(0, 0)` are dropped; every ensemble keeps exactly
//! one value with `nu = 1`.
//!
//! Loops are unrolled up to `fuel` body iterations per loop entry. Weight
//! that is still inside a loop when the fuel runs out is reported as
//! `truncated_mass`, an upper bound on the squared norm of all values that
//! would have been produced by further unrolling. A loop that provably makes
//! no progress (it does not exit and its body maps the state to itself) is
//! cut off without contributing truncated mass, since it cannot produce
//! non-zero values.

use thiserror::Error;

use crate::linalg::{bit_mask, ordered_tensor, outer, basis, gate_matrix, CMatrix, CVector, LinalgError, Split};
use crate::syntax::{Environment, Program, Statement, VarName};
use crate::wellformed::{check, WellFormedError};

/// Upper bound on the norm of input states.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum OpsemError {
    #[error("statement is not well-formed: {0}")]
    IllFormed(#[from] WellFormedError),
    #[error("state has dimension {found}, environment needs {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("state norm {0} exceeds 1")]
    NormTooLarge(f64),
    #[error("input state is zero")]
    ZeroInput,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// An unnormalised output state with its vacuum-default flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Value {
    pub state: CVector,
    pub nu: bool,
}

impl Value {
    pub fn mass(&self) -> f64 {
        self.state.norm_squared()
    }

    fn is_exact_zero(&self) -> bool {
        is_exact_zero(&self.state)
    }
}

fn is_exact_zero(v: &CVector) -> bool {
    v.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

/// A statement paired with an input state over an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub stmt: Statement,
    pub env: Environment,
    pub state: CVector,
}

impl Configuration {
    pub fn new(stmt: Statement, env: Environment, state: CVector) -> Result<Self, OpsemError> {
        check(&env, &stmt)?;
        if state.len() != env.dim() {
            return Err(OpsemError::DimMismatch { expected: env.dim(), found: state.len() });
        }
        let n = state.norm();
        if n > 1.0 + NORM_TOL {
            return Err(OpsemError::NormTooLarge(n));
        }
        Ok(Configuration { stmt, env, state })
    }

    pub fn from_program(prog: &Program, state: CVector) -> Result<Self, OpsemError> {
        Configuration::new(prog.stmt.clone(), prog.input.clone(), state)
    }
}

/// The values reached from a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub items: Vec<Value>,
    pub truncated_mass: f64,
    pub out_env: Environment,
}

impl Ensemble {
    /// Total squared norm of the produced values.
    pub fn mass(&self) -> f64 {
        self.items.iter().map(Value::mass).sum()
    }

    /// Bounds `(lower, upper)` on the unnormalised termination weight.
    pub fn mass_bounds(&self) -> (f64, f64) {
        let m = self.mass();
        (m, m + self.truncated_mass)
    }

    /// `sum_i psi_i psi_i^dagger`.
    pub fn density(&self) -> CMatrix {
        let d = self.out_env.dim();
        let mut rho = CMatrix::zeros(d, d);
        for v in &self.items {
            rho += outer(&v.state, &v.state);
        }
        rho
    }

    /// `sum_i nu_i psi_i`: the state of the unique default value.
    pub fn default_state(&self) -> CVector {
        let mut out = CVector::zeros(self.out_env.dim());
        for v in self.items.iter().filter(|v| v.nu) {
            out += &v.state;
        }
        out
    }

    pub fn default_count(&self) -> usize {
        self.items.iter().filter(|v| v.nu).count()
    }
}

/// Knobs for ensemble evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Maximum number of body iterations per loop entry.
    pub fuel: usize,
    /// Non-default values with squared norm below this are dropped and
    /// their weight moved to the truncated mass.
    pub prune_eps: f64,
    /// Once this many evaluation steps have been spent, loops stop
    /// unrolling and their remaining weight is truncated.
    pub max_steps: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { fuel: 64, prune_eps: 0.0, max_steps: 2_000_000 }
    }
}

impl EvalOptions {
    pub fn with_fuel(fuel: usize) -> Self {
        EvalOptions { fuel, ..Default::default() }
    }
}

struct Outcome {
    items: Vec<Value>,
    truncated: f64,
    env: Environment,
}

struct Evaluator<'a> {
    opts: &'a EvalOptions,
    steps: usize,
}

fn project(env: &Environment, q: &VarName, bit: usize, psi: &CVector) -> Result<CVector, LinalgError> {
    let mask = bit_mask(env, q)?;
    let mut out = psi.clone();
    for (i, z) in out.iter_mut().enumerate() {
        if usize::from(i & mask != 0) != bit {
            *z = num_complex::Complex64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// `<bit|_q psi`, a state over `env` without `q`.
fn slice(env: &Environment, q: &VarName, bit: usize, psi: &CVector) -> Result<CVector, LinalgError> {
    let split = Split::new(env, &Environment::empty().with(q))?;
    Ok(CVector::from_fn(split.rest_dim, |r, _| psi[split.join(bit, r)]))
}

impl Evaluator<'_> {
    fn keep(&self, v: Value, items: &mut Vec<Value>, truncated: &mut f64) {
        if v.nu {
            items.push(v);
            return;
        }
        if v.is_exact_zero() {
            return;
        }
        let m = v.mass();
        if m < self.opts.prune_eps {
            *truncated += m;
        } else {
            items.push(v);
        }
    }

    fn run(&mut self, s: &Statement, env: &Environment, psi: CVector) -> Result<Outcome, OpsemError> {
        let items = s.seq_items();
        if items.len() == 1 {
            return self.atom(s, env, psi);
        }
        let mut cur = vec![Value { state: psi, nu: true }];
        let mut truncated = 0.0;
        let mut cur_env = env.clone();
        for item in items {
            let mut next = Vec::new();
            let mut next_env = None;
            for v in cur {
                let out = self.run(item, &cur_env, v.state)?;
                truncated += out.truncated;
                for w in out.items {
                    self.keep(Value { state: w.state, nu: v.nu && w.nu }, &mut next, &mut truncated);
                }
                next_env = Some(out.env);
            }
            cur = next;
            cur_env = next_env.expect("sequence keeps a default value");
        }
        Ok(Outcome { items: cur, truncated, env: cur_env })
    }

    fn atom(&mut self, s: &Statement, env: &Environment, psi: CVector) -> Result<Outcome, OpsemError> {
        self.steps += 1;
        let single = |state: CVector, env: Environment| Outcome { items: vec![Value { state, nu: true }], truncated: 0.0, env };
        match s {
            Statement::Skip => Ok(single(psi, env.clone())),
            Statement::New(q) => {
                let qenv = Environment::empty().with(q);
                let (state, out_env) = ordered_tensor(&basis(2, 0), &qenv, &psi, env)?;
                Ok(single(state, out_env))
            }
            Statement::Discard(q) => {
                let out_env = env.without(q);
                let mut items = Vec::new();
                let mut truncated = 0.0;
                for bit in 0..2 {
                    let v = Value { state: slice(env, q, bit, &psi)?, nu: bit == 0 };
                    self.keep(v, &mut items, &mut truncated);
                }
                Ok(Outcome { items, truncated, env: out_env })
            }
            Statement::Apply(q, g) => {
                let m = CMatrix::from_column_slice(psi.len(), 1, psi.as_slice());
                let out = crate::linalg::apply_gate_rows(q, env, &gate_matrix(g), &m)?;
                Ok(single(CVector::from_column_slice(out.as_slice()), env.clone()))
            }
            Statement::Seq(..) => self.run(s, env, psi),
            Statement::Meas { var, zero, one } => {
                let p0 = project(env, var, 0, &psi)?;
                let p1 = project(env, var, 1, &psi)?;
                let o0 = self.run(zero, env, p0)?;
                let o1 = self.run(one, env, p1)?;
                let mut items = o0.items;
                let mut truncated = o0.truncated + o1.truncated;
                for w in o1.items {
                    self.keep(Value { state: w.state, nu: false }, &mut items, &mut truncated);
                }
                Ok(Outcome { items, truncated, env: o0.env })
            }
            Statement::While { var, body } => self.run_while(var, body, env, psi, self.opts.fuel),
            Statement::QCase { var, zero, one } => {
                let inner = env.without(var);
                let o0 = self.run(zero, &inner, slice(env, var, 0, &psi)?)?;
                let o1 = self.run(one, &inner, slice(env, var, 1, &psi)?)?;
                let out_env = o0.env.with(var);
                let split = Split::new(&out_env, &Environment::empty().with(var))?;
                let mut items = Vec::new();
                let mut truncated = o0.truncated + o1.truncated;
                for a in &o0.items {
                    for b in &o1.items {
                        if !a.nu && !b.nu {
                            continue;
                        }
                        let mut state = CVector::zeros(out_env.dim());
                        for r in 0..split.rest_dim {
                            if b.nu {
                                state[split.join(0, r)] = a.state[r];
                            }
                            if a.nu {
                                state[split.join(1, r)] = b.state[r];
                            }
                        }
                        self.keep(Value { state, nu: a.nu && b.nu }, &mut items, &mut truncated);
                    }
                }
                Ok(Outcome { items, truncated, env: out_env })
            }
        }
    }

    fn run_while(
        &mut self,
        q: &VarName,
        body: &Statement,
        env: &Environment,
        psi: CVector,
        remaining: usize,
    ) -> Result<Outcome, OpsemError> {
        self.steps += 1;
        let p0 = project(env, q, 0, &psi)?;
        let p1 = project(env, q, 1, &psi)?;
        let exits = is_exact_zero(&p0);
        let mut items = vec![Value { state: p0, nu: true }];
        let mut truncated = 0.0;
        if is_exact_zero(&p1) {
            return Ok(Outcome { items, truncated, env: env.clone() });
        }
        if remaining == 0 || self.steps > self.opts.max_steps {
            truncated += p1.norm_squared();
            return Ok(Outcome { items, truncated, env: env.clone() });
        }
        let stepped = self.run(body, env, p1.clone())?;
        if exits && stepped.truncated == 0.0 && stepped.items.len() == 1 && stepped.items[0].state == p1 {
            // The loop neither exits nor changes the state: it diverges.
            return Ok(Outcome { items, truncated, env: env.clone() });
        }
        truncated += stepped.truncated;
        for v in stepped.items {
            let rest = self.run_while(q, body, env, v.state, remaining - 1)?;
            truncated += rest.truncated;
            for w in rest.items {
                self.keep(Value { state: w.state, nu: false }, &mut items, &mut truncated);
            }
        }
        Ok(Outcome { items, truncated, env: env.clone() })
    }
}

/// Evaluates a configuration to its (possibly truncated) ensemble.
pub fn eval(cfg: &Configuration, opts: &EvalOptions) -> Result<Ensemble, OpsemError> {
    let mut ev = Evaluator { opts, steps: 0 };
    let out = ev.run(&cfg.stmt, &cfg.env, cfg.state.clone())?;
    Ok(Ensemble { items: out.items, truncated_mass: out.truncated, out_env: out.env })
}

/// Evaluates a program on an input state.
pub fn eval_program(prog: &Program, state: &CVector, opts: &EvalOptions) -> Result<Ensemble, OpsemError> {
    eval(&Configuration::from_program(prog, state.clone())?, opts)
}

/// The value of the unique derivation that only takes default branches.
///
/// This needs no fuel: loops take their exit branch.
pub fn default_value(cfg: &Configuration) -> Result<Value, OpsemError> {
    let (state, _) = default_run(&cfg.stmt, &cfg.env, cfg.state.clone())?;
    Ok(Value { state, nu: true })
}

fn default_run(s: &Statement, env: &Environment, psi: CVector) -> Result<(CVector, Environment), OpsemError> {
    if let Statement::Seq(..) = s {
        let mut cur = (psi, env.clone());
        for item in s.seq_items() {
            cur = default_run(item, &cur.1, cur.0)?;
        }
        return Ok(cur);
    }
    match s {
        Statement::Skip | Statement::Apply(..) | Statement::New(_) => {
            let opts = EvalOptions::default();
            let mut ev = Evaluator { opts: &opts, steps: 0 };
            let out = ev.atom(s, env, psi)?;
            Ok((out.items.into_iter().next().expect("one value").state, out.env))
        }
        Statement::Discard(q) => Ok((slice(env, q, 0, &psi)?, env.without(q))),
        Statement::Meas { var, zero, .. } => default_run(zero, env, project(env, var, 0, &psi)?),
        Statement::While { var, .. } => Ok((project(env, var, 0, &psi)?, env.clone())),
        Statement::QCase { var, zero, one } => {
            let inner = env.without(var);
            let (a, e0) = default_run(zero, &inner, slice(env, var, 0, &psi)?)?;
            let (b, _) = default_run(one, &inner, slice(env, var, 1, &psi)?)?;
            let (s0, full) = ordered_tensor(&basis(2, 0), &Environment::empty().with(var), &a, &e0)?;
            let (s1, _) = ordered_tensor(&basis(2, 1), &Environment::empty().with(var), &b, &e0)?;
            Ok((s0 + s1, full))
        }
        Statement::Seq(..) => unreachable!(),
    }
}

/// Bounds `(lower, upper)` on the termination probability of `prog` on
/// the normalised input `state`.
pub fn probability(prog: &Program, state: &CVector, opts: &EvalOptions) -> Result<(f64, f64), OpsemError> {
    let n2 = state.norm_squared();
    if n2 == 0.0 {
        return Err(OpsemError::ZeroInput);
    }
    let unit = state / num_complex::Complex64::new(n2.sqrt(), 0.0);
    let ens = eval_program(prog, &unit, opts)?;
    let (lo, hi) = ens.mass_bounds();
    Ok((lo, hi.min(1.0).max(lo)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::syntax::parse;
    use crate::wellformed::program;

    fn env(s: &str) -> Environment {
        Environment::parse_list(s).unwrap()
    }

    fn cfg(src: &str, e: &str, state: CVector) -> Configuration {
        Configuration::new(parse(src).unwrap(), env(e), state).unwrap()
    }

    #[test]
    fn cnot_flips_target_when_control_set() {
        let ens = eval(&cfg("qcase c (0 -> skip, 1 -> t *= X)", "c,t", basis(4, 2)), &EvalOptions::default()).unwrap();
        assert_eq!(ens.items.len(), 1);
        assert_eq!(ens.items[0].state, basis(4, 3));
        assert!(ens.items[0].nu);
    }

    #[test]
    fn discard_of_superposition_splits_into_two_values() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = CVector::from_vec(vec![c(h, 0.0), c(h, 0.0)]);
        let ens = eval(&cfg("discard q", "q", plus), &EvalOptions::default()).unwrap();
        assert_eq!(ens.items.len(), 2);
        assert_eq!(ens.default_count(), 1);
        assert!((ens.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loop_keeps_only_the_zero_default() {
        let ens = eval(&cfg("new qbit r; r *= X; while r do skip; discard r", "", basis(1, 0)), &EvalOptions::default()).unwrap();
        assert_eq!(ens.items.len(), 1);
        assert!(ens.items[0].nu);
        assert_eq!(ens.mass(), 0.0);
        assert_eq!(ens.truncated_mass, 0.0);
    }

    #[test]
    fn coin_fuel_counts_body_iterations() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = CVector::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)]);
        let ens = eval(&cfg("while q do q *= H", "q", psi), &EvalOptions::with_fuel(3)).unwrap();
        // One default value plus one value per completed body iteration.
        assert_eq!(ens.items.len(), 4);
        assert!((ens.truncated_mass - 0.64 / 8.0).abs() < 1e-15);
        let first = &ens.items[1].state;
        assert!((first[0] - c(0.8 * h, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn meas_forces_non_default_on_one_branch() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let ens = eval(&cfg("new qbit q; q *= H; meas q (0 -> skip, 1 -> skip)", "", basis(1, 0)), &EvalOptions::default()).unwrap();
        assert_eq!(ens.items.len(), 2);
        assert!((ens.items[0].state[0] - c(h, 0.0)).norm() < 1e-15);
        assert!(ens.items[0].nu);
        assert!(!ens.items[1].nu);
    }

    #[test]
    fn default_value_matches_ensemble_default() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = CVector::from_vec(vec![c(h, 0.0), c(0.0, h)]);
        let src = "new qbit r; qcase q (0 -> r *= H; meas r (0 -> skip, 1 -> r *= X), 1 -> while r do r *= H)";
        let conf = cfg(src, "q", psi);
        let ens = eval(&conf, &EvalOptions::default()).unwrap();
        let dv = default_value(&conf).unwrap();
        assert_eq!(ens.default_count(), 1);
        assert!((ens.default_state() - dv.state).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = parse("skip").unwrap();
        assert!(matches!(Configuration::new(s.clone(), env("q"), basis(4, 0)), Err(OpsemError::DimMismatch { .. })));
        let big = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(Configuration::new(s, env("q"), big), Err(OpsemError::NormTooLarge(_))));
        let prog = program(env("q"), parse("skip").unwrap()).unwrap();
        assert!(matches!(probability(&prog, &CVector::zeros(2), &EvalOptions::default()), Err(OpsemError::ZeroInput)));
    }

    #[test]
    fn pruning_moves_weight_into_truncation() {
        let psi = CVector::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)]);
        let opts = EvalOptions { fuel: 60, prune_eps: 1e-6, ..Default::default() };
        let ens = eval(&cfg("while q do q *= H", "q", psi), &opts).unwrap();
        let (lo, hi) = ens.mass_bounds();
        assert!(lo <= 1.0 && hi >= 1.0 - 1e-12);
        assert!(ens.items.len() < 30);
    }
}
