// SPDX-License-Identifier: Apache-2.0

//! Random programs, states, unitaries and Kraus sets for property checks.
//!
//! Every generator takes the caller's RNG so that runs are reproducible
//! from a seed.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::densem::VacExt;
use crate::linalg::{c, identity, inv_sqrt_pd, max_eigenvalue, CMatrix, CVector, KrausSet, C64};
use crate::syntax::{var, Environment, Gate, GateName, Program, Statement, VarName};

/// Shape limits for [`random_program`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramShape {
    /// Most qubits alive at any point, counting `qcase` controls.
    pub max_qubits: usize,
    /// Maximum nesting depth of compound statements.
    pub max_depth: usize,
    /// Variable names to draw from.
    pub names: Vec<VarName>,
}

impl Default for ProgramShape {
    fn default() -> Self {
        ProgramShape { max_qubits: 3, max_depth: 4, names: ["a", "b", "c", "d"].iter().map(|s| var(s)).collect() }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im)
}

/// A matrix with independent standard complex Gaussian entries.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// A uniformly random unit vector.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CVector {
    let v = CVector::from_fn(d, |_, _| gaussian(rng));
    let n = v.norm();
    v / c(n, 0.0)
}

/// A Haar random unitary, from the QR decomposition of a Ginibre matrix
/// with the phases of `R`'s diagonal moved into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMatrix {
    let qr = ginibre(rng, d, d).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = q;
    for j in 0..d {
        let z = r[(j, j)];
        let phase = if z.norm() > 0.0 { z / c(z.norm(), 0.0) } else { c(1.0, 0.0) };
        for i in 0..d {
            out[(i, j)] *= phase;
        }
    }
    out
}

/// A random Kraus set with `count` operators `C^d_in -> C^d_out`.
///
/// With `trace_preserving` the operators satisfy `sum K^dagger K = I`;
/// otherwise the sum is a random strict contraction. A trace-preserving set
/// needs `count * d_out >= d_in`; below that the request is downgraded. The vacuum amplitudes
/// are a random unit vector.
pub fn random_kraus_set<R: Rng + ?Sized>(
    rng: &mut R,
    d_in: usize,
    d_out: usize,
    count: usize,
    trace_preserving: bool,
) -> KrausSet {
    let gs: Vec<CMatrix> = (0..count).map(|_| ginibre(rng, d_out, d_in)).collect();
    let mut s = CMatrix::zeros(d_in, d_in);
    for g in &gs {
        s += g.adjoint() * g;
    }
    if !trace_preserving || count * d_out < d_in {
        let shift = max_eigenvalue(&s) * rng.gen_range(0.05..1.0);
        s += identity(d_in) * c(shift, 0.0);
    }
    let norm = inv_sqrt_pd(&s);
    let ops = gs.iter().map(|g| g * &norm).collect();
    let vacuum: Vec<C64> = random_state(rng, count).iter().copied().collect();
    KrausSet::new(ops, vacuum).expect("normalised operators form a valid set")
}

/// A random valid pair between the given environments, with one to four
/// Kraus operators.
pub fn random_vacext_between<R: Rng + ?Sized>(rng: &mut R, input: &Environment, output: &Environment) -> VacExt {
    let count = rng.gen_range(1..=4);
    let tp = rng.gen_bool(0.5);
    let ks = random_kraus_set(rng, input.dim(), output.dim(), count, tp);
    VacExt::from_kraus(&ks, input, output).expect("shapes match")
}

/// A random valid pair whose environments are subsets of `{p, q}` and
/// `{q, r}`.
pub fn random_vacext<R: Rng + ?Sized>(rng: &mut R) -> VacExt {
    let pick = |rng: &mut R, names: [&str; 2]| -> Environment {
        Environment::from_vars(names.iter().filter(|_| rng.gen_bool(0.5)).map(|s| var(s)))
    };
    let input = pick(rng, ["p", "q"]);
    let output = pick(rng, ["q", "r"]);
    random_vacext_between(rng, &input, &output)
}

fn random_gate<R: Rng + ?Sized>(rng: &mut R) -> Gate {
    if rng.gen_bool(0.2) {
        let u = random_unitary(rng, 2);
        Gate::from_matrix([[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]).expect("Haar sample is unitary")
    } else {
        Gate::Named(*GateName::ALL.choose(rng).expect("non-empty"))
    }
}

struct Gen<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    shape: &'a ProgramShape,
}

impl<R: Rng + ?Sized> Gen<'_, R> {
    fn pick_var(&mut self, env: &Environment) -> VarName {
        env.vars().choose(self.rng).expect("non-empty environment").clone()
    }

    fn new_name(&mut self, env: &Environment, forbid: &BTreeSet<VarName>) -> Option<VarName> {
        let free: Vec<&VarName> =
            self.shape.names.iter().filter(|v| !env.contains(v) && !forbid.contains(*v)).collect();
        free.choose(self.rng).map(|v| (*v).clone())
    }

    /// A statement from `env` that keeps at most `room` qubits alive.
    fn stmt(&mut self, env: &Environment, depth: usize, room: usize, forbid: &BTreeSet<VarName>) -> (Statement, Environment) {
        let compound = depth > 0 && self.rng.gen_bool(0.6);
        if !compound {
            return self.atom(env, room, forbid);
        }
        match self.rng.gen_range(0..4) {
            0 => {
                let (a, mid) = self.stmt(env, depth - 1, room, forbid);
                let (b, out) = self.stmt(&mid, depth - 1, room, forbid);
                (Statement::seq(a, b), out)
            }
            1 if !env.is_empty() => {
                let q = self.pick_var(env);
                let (s0, out) = self.stmt(env, depth - 1, room, forbid);
                let (s1, out1) = self.stmt(env, depth - 1, room, forbid);
                let s1 = conform(s1, &out1, &out);
                (Statement::meas(q, s0, s1), out)
            }
            2 if !env.is_empty() => {
                let q = self.pick_var(env);
                let body = self.loop_body(env);
                (Statement::while_loop(q, body), env.clone())
            }
            3 if !env.is_empty() && room >= 1 => {
                let q = self.pick_var(env);
                let inner = env.without(&q);
                let mut forbid2 = forbid.clone();
                forbid2.insert(q.clone());
                let (s0, out) = self.stmt(&inner, depth - 1, room - 1, &forbid2);
                let (s1, out1) = self.stmt(&inner, depth - 1, room - 1, &forbid2);
                let s1 = conform(s1, &out1, &out);
                (Statement::qcase(q.clone(), s0, s1), out.with(&q))
            }
            _ => self.atom(env, room, forbid),
        }
    }

    /// Loop bodies are unitary so that the ensemble stays small.
    fn loop_body(&mut self, env: &Environment) -> Statement {
        let n = self.rng.gen_range(1..=2);
        let mut items = Vec::new();
        for _ in 0..n {
            match self.rng.gen_range(0..3) {
                0 if env.len() >= 2 => {
                    let c = self.pick_var(env);
                    let t = self.pick_var(&env.without(&c));
                    let g = random_gate(self.rng);
                    items.push(Statement::qcase(c, Statement::Skip, Statement::apply(t, g)));
                }
                _ => {
                    let q = self.pick_var(env);
                    let g = random_gate(self.rng);
                    items.push(Statement::apply(q, g));
                }
            }
        }
        Statement::seq_all(items)
    }

    fn atom(&mut self, env: &Environment, room: usize, forbid: &BTreeSet<VarName>) -> (Statement, Environment) {
        let choice = self.rng.gen_range(0..10);
        if choice < 5 && !env.is_empty() {
            let q = self.pick_var(env);
            return (Statement::apply(q, random_gate(self.rng)), env.clone());
        }
        if choice < 7 && env.len() < room {
            if let Some(q) = self.new_name(env, forbid) {
                return (Statement::new_qbit(q.clone()), env.with(&q));
            }
        }
        if choice < 9 && !env.is_empty() {
            let q = self.pick_var(env);
            return (Statement::discard(q.clone()), env.without(&q));
        }
        (Statement::Skip, env.clone())
    }
}

/// Appends discards and allocations turning output `from` into `to`.
pub fn conform(s: Statement, from: &Environment, to: &Environment) -> Statement {
    let mut items = vec![s];
    items.extend(from.difference(to).iter().map(|v| Statement::discard(v.clone())));
    items.extend(to.difference(from).iter().map(|v| Statement::new_qbit(v.clone())));
    Statement::seq_all(items)
}

/// A random well-formed program within `shape`.
pub fn random_program<R: Rng + ?Sized>(rng: &mut R, shape: &ProgramShape) -> Program {
    let k = rng.gen_range(0..=shape.max_qubits.min(shape.names.len()));
    let mut names = shape.names.clone();
    names.shuffle(rng);
    let input = Environment::from_vars(names.into_iter().take(k));
    random_program_from(rng, &input, shape)
}

/// A random well-formed program with the given input environment. Names in
/// `input` outside `shape.names` are used but never reallocated.
pub fn random_program_from<R: Rng + ?Sized>(rng: &mut R, input: &Environment, shape: &ProgramShape) -> Program {
    let mut g = Gen { rng, shape };
    let room = shape.max_qubits.max(input.len());
    let (stmt, output) = g.stmt(input, shape.max_depth, room, &BTreeSet::new());
    Program { input: input.clone(), stmt, output }
}

/// Two random programs with the same input and output environments.
pub fn random_program_pair<R: Rng + ?Sized>(rng: &mut R, input: &Environment, shape: &ProgramShape) -> (Program, Program) {
    let p = random_program_from(rng, input, shape);
    let q = random_program_from(rng, input, shape);
    let stmt = conform(q.stmt, &q.output, &p.output);
    let q = Program { input: input.clone(), stmt, output: p.output.clone() };
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::wellformed::{check, check_program};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_programs_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let p = random_program(&mut rng, &ProgramShape::default());
            check_program(&p).unwrap();
            assert_eq!(check(&p.input, &p.stmt).unwrap(), p.output);
        }
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_unitary(&mut rng, 8);
        assert!(max_abs_diff(&(u.adjoint() * &u), &identity(8)) < 1e-12);
    }

    #[test]
    fn random_pairs_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert!(random_vacext(&mut rng).is_valid());
        }
    }
}
