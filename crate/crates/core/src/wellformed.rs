// SPDX-License-Identifier: Apache-2.0

//! Well-formedness judgments `env |- S |> env'` and the input/output
//! variable analysis.
//!
//! Errors carry the pre-order index of the offending AST node, which lines
//! up with the span list returned by [`crate::syntax::parse_spanned`].

use std::fmt;

use thiserror::Error;

use crate::syntax::{Context, Environment, Program, Statement, VarName};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum WellFormedError {
    #[error("variable '{var}' is not in the environment")]
    VarMissing { var: VarName, node: usize },
    #[error("variable '{var}' is already in the environment")]
    VarClash { var: VarName, node: usize },
    #[error("branches of '{var}' end in different environments {{{zero}}} and {{{one}}}")]
    BranchMismatch {
        var: VarName,
        zero: Environment,
        one: Environment,
        node: usize,
    },
    #[error("qcase control '{var}' is used inside a branch")]
    ControlCaptured { var: VarName, node: usize },
    #[error("body of 'while {var}' must end in {{{expected}}} but ends in {{{found}}}")]
    WhileShape {
        var: VarName,
        expected: Environment,
        found: Environment,
        node: usize,
    },
    #[error("hole expects {{{expected}}} but the surrounding environment is {{{found}}}")]
    HoleMismatch {
        expected: Environment,
        found: Environment,
    },
    #[error("program ends in {{{found}}} but declares {{{declared}}}")]
    OutputMismatch {
        declared: Environment,
        found: Environment,
    },
    #[error("statement is not well-formed under any environment")]
    NotWellFormed,
    #[error("context is not closed: it ends in {{{0}}}")]
    ContextNotClosed(Environment),
    #[error("hole is annotated {{{hole_in}}} -> {{{hole_out}}} but the program is {{{prog_in}}} -> {{{prog_out}}}")]
    HoleProgramMismatch {
        hole_in: Environment,
        hole_out: Environment,
        prog_in: Environment,
        prog_out: Environment,
    },
    #[error("bound variables of the program clash with the context: {0:?}")]
    BoundCapture(Vec<VarName>),
}

impl WellFormedError {
    /// Pre-order index of the node the error refers to, if any.
    pub fn node(&self) -> Option<usize> {
        match self {
            WellFormedError::VarMissing { node, .. }
            | WellFormedError::VarClash { node, .. }
            | WellFormedError::BranchMismatch { node, .. }
            | WellFormedError::ControlCaptured { node, .. }
            | WellFormedError::WhileShape { node, .. } => Some(*node),
            _ => None,
        }
    }
}

struct Checker {
    next: usize,
}

impl Checker {
    fn take(&mut self) -> usize {
        let n = self.next;
        self.next += 1;
        n
    }

    fn stmt(&mut self, env: &Environment, s: &Statement) -> Result<Environment, WellFormedError> {
        let items = s.seq_items();
        let last = items.len() - 1;
        let mut cur = env.clone();
        for (i, item) in items.into_iter().enumerate() {
            if i < last {
                self.take();
            }
            cur = self.atom(&cur, item)?;
        }
        Ok(cur)
    }

    fn atom(&mut self, env: &Environment, s: &Statement) -> Result<Environment, WellFormedError> {
        if let Statement::Seq(..) = s {
            return self.stmt(env, s);
        }
        let node = self.take();
        match s {
            Statement::Skip => Ok(env.clone()),
            Statement::New(v) => {
                if env.contains(v) {
                    Err(WellFormedError::VarClash { var: v.clone(), node })
                } else {
                    Ok(env.with(v))
                }
            }
            Statement::Discard(v) => {
                require(env, v, node)?;
                Ok(env.without(v))
            }
            Statement::Apply(v, _) => {
                require(env, v, node)?;
                Ok(env.clone())
            }
            Statement::Meas { var, zero, one } => {
                require(env, var, node)?;
                let z = self.stmt(env, zero)?;
                let o = self.stmt(env, one)?;
                if z != o {
                    return Err(WellFormedError::BranchMismatch { var: var.clone(), zero: z, one: o, node });
                }
                Ok(z)
            }
            Statement::While { var, body } => {
                require(env, var, node)?;
                let out = self.stmt(env, body)?;
                if &out != env {
                    return Err(WellFormedError::WhileShape {
                        var: var.clone(),
                        expected: env.clone(),
                        found: out,
                        node,
                    });
                }
                Ok(out)
            }
            Statement::QCase { var, zero, one } => {
                require(env, var, node)?;
                if zero.mentions(var) || one.mentions(var) {
                    return Err(WellFormedError::ControlCaptured { var: var.clone(), node });
                }
                let inner = env.without(var);
                let z = self.stmt(&inner, zero)?;
                let o = self.stmt(&inner, one)?;
                if z != o {
                    return Err(WellFormedError::BranchMismatch { var: var.clone(), zero: z, one: o, node });
                }
                Ok(z.with(var))
            }
            Statement::Seq(..) => unreachable!(),
        }
    }
}

fn require(env: &Environment, v: &VarName, node: usize) -> Result<(), WellFormedError> {
    if env.contains(v) {
        Ok(())
    } else {
        Err(WellFormedError::VarMissing { var: v.clone(), node })
    }
}

/// Checks `env |- s |> env'` and returns `env'`.
pub fn check(env: &Environment, s: &Statement) -> Result<Environment, WellFormedError> {
    Checker { next: 0 }.stmt(env, s)
}

/// Builds a program from its input environment, computing the output.
pub fn program(input: Environment, stmt: Statement) -> Result<Program, WellFormedError> {
    let output = check(&input, &stmt)?;
    Ok(Program { input, stmt, output })
}

/// Checks that `prog.stmt` maps `prog.input` to exactly `prog.output`.
pub fn check_program(prog: &Program) -> Result<(), WellFormedError> {
    let found = check(&prog.input, &prog.stmt)?;
    if found != prog.output {
        return Err(WellFormedError::OutputMismatch { declared: prog.output.clone(), found });
    }
    Ok(())
}

/// One node of a well-formedness derivation.
#[derive(Clone, Debug, PartialEq)]
pub struct Derivation {
    pub rule: &'static str,
    pub input: Environment,
    pub stmt: String,
    pub output: Environment,
    pub premises: Vec<Derivation>,
}

impl Derivation {
    fn write(&self, f: &mut fmt::Formatter<'_>, indent: usize) -> fmt::Result {
        writeln!(
            f,
            "{:indent$}[{}] {{{}}} |- {} |> {{{}}}",
            "",
            self.rule,
            self.input,
            self.stmt,
            self.output,
            indent = indent
        )?;
        for p in &self.premises {
            p.write(f, indent + 2)?;
        }
        Ok(())
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0)
    }
}

/// Builds the full derivation tree of `env |- s |> env'`.
pub fn derive(env: &Environment, s: &Statement) -> Result<Derivation, WellFormedError> {
    let output = check(env, s)?;
    Ok(derive_checked(env, s, output))
}

fn derive_checked(env: &Environment, s: &Statement, output: Environment) -> Derivation {
    let sub = |e: &Environment, t: &Statement| {
        let o = check(e, t).expect("sub-derivation of a checked statement");
        derive_checked(e, t, o)
    };
    let (rule, premises) = match s {
        Statement::Skip => ("skip", vec![]),
        Statement::New(_) => ("new", vec![]),
        Statement::Discard(_) => ("discard", vec![]),
        Statement::Apply(..) => ("unitary", vec![]),
        Statement::Seq(a, b) => {
            let first = sub(env, a);
            let second = sub(&first.output.clone(), b);
            ("seq", vec![first, second])
        }
        Statement::Meas { zero, one, .. } => ("meas", vec![sub(env, zero), sub(env, one)]),
        Statement::While { body, .. } => ("while", vec![sub(env, body)]),
        Statement::QCase { var, zero, one } => {
            let inner = env.without(var);
            ("qcase", vec![sub(&inner, zero), sub(&inner, one)])
        }
    };
    Derivation { rule, input: env.clone(), stmt: s.pretty(), output, premises }
}

/// Result of the input/output variable analysis of a statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarAnalysis {
    /// Variables the statement needs on entry.
    pub input: Environment,
    /// Variables the statement leaves on exit.
    pub output: Environment,
    /// Variables that are created and destroyed internally.
    pub bound: Environment,
    /// Every variable mentioned.
    pub vars: Environment,
}

fn in_out(s: &Statement) -> (Environment, Environment) {
    let items = s.seq_items();
    let mut iter = items.into_iter().rev();
    let last = iter.next().expect("at least one item");
    let mut acc = in_out_atom(last);
    for item in iter {
        let (i0, o0) = in_out_atom(item);
        let (i1, o1) = acc;
        let input = i0.union(&i1.difference(&o0));
        let output = o1.union(&o0.difference(&i1));
        acc = (input, output);
    }
    acc
}

fn in_out_atom(s: &Statement) -> (Environment, Environment) {
    match s {
        Statement::Skip => (Environment::empty(), Environment::empty()),
        Statement::New(v) => (Environment::empty(), Environment::empty().with(v)),
        Statement::Discard(v) => (Environment::empty().with(v), Environment::empty()),
        Statement::Apply(v, _) => (Environment::empty().with(v), Environment::empty().with(v)),
        Statement::Seq(..) => in_out(s),
        Statement::Meas { var, zero, one } => {
            let (i0, o0) = in_out(zero);
            let (i1, o1) = in_out(one);
            let ins = i0.union(&i1);
            let mut outs = o0.union(&o1);
            if !ins.contains(var) {
                outs = outs.with(var);
            }
            (ins.with(var), outs)
        }
        Statement::QCase { var, zero, one } => {
            let (i0, o0) = in_out(zero);
            let (i1, o1) = in_out(one);
            (i0.union(&i1).with(var), o0.union(&o1).with(var))
        }
        Statement::While { var, body } => {
            let (i, o) = in_out(body);
            (i.with(var), o.with(var))
        }
    }
}

/// Computes the input, output and bound variables of `s`.
///
/// Fails with [`WellFormedError::NotWellFormed`] when `s` is not well-formed
/// under its own input set, which is the case exactly when it is not
/// well-formed under any environment.
pub fn analyze(s: &Statement) -> Result<VarAnalysis, WellFormedError> {
    let (input, output) = in_out(s);
    match check(&input, s) {
        Ok(out) if out == output => {}
        _ => return Err(WellFormedError::NotWellFormed),
    }
    let vars: Environment = s.vars().into_iter().collect();
    let bound = vars.difference(&input.union(&output));
    Ok(VarAnalysis { input, output, bound, vars })
}

/// Bound variables of a well-formed statement.
pub fn bound_vars(s: &Statement) -> Result<Environment, WellFormedError> {
    analyze(s).map(|a| a.bound)
}

fn check_ctx(env: &Environment, c: &Context) -> Result<Environment, WellFormedError> {
    match c {
        Context::Hole { input, output } => {
            if !input.is_subset(env) {
                return Err(WellFormedError::HoleMismatch { expected: input.clone(), found: env.clone() });
            }
            let frame = env.difference(input);
            if !frame.is_disjoint(output) {
                return Err(WellFormedError::HoleMismatch { expected: input.clone(), found: env.clone() });
            }
            Ok(output.union(&frame))
        }
        Context::SeqLeft(inner, t) => {
            let mid = check_ctx(env, inner)?;
            check(&mid, t)
        }
        Context::SeqRight(t, inner) => {
            let mid = check(env, t)?;
            check_ctx(&mid, inner)
        }
        Context::MeasZero(q, inner, t) | Context::MeasOne(q, t, inner) => {
            if !env.contains(q) {
                return Err(WellFormedError::VarMissing { var: q.clone(), node: 0 });
            }
            let a = check_ctx(env, inner)?;
            let b = check(env, t)?;
            if a != b {
                return Err(WellFormedError::BranchMismatch { var: q.clone(), zero: a, one: b, node: 0 });
            }
            Ok(a)
        }
        Context::QCaseZero(q, inner, t) | Context::QCaseOne(q, t, inner) => {
            if !env.contains(q) {
                return Err(WellFormedError::VarMissing { var: q.clone(), node: 0 });
            }
            if inner.vars().contains(q) || t.mentions(q) {
                return Err(WellFormedError::ControlCaptured { var: q.clone(), node: 0 });
            }
            let rest = env.without(q);
            let a = check_ctx(&rest, inner)?;
            let b = check(&rest, t)?;
            if a != b {
                return Err(WellFormedError::BranchMismatch { var: q.clone(), zero: a, one: b, node: 0 });
            }
            Ok(a.with(q))
        }
        Context::While(q, inner) => {
            if !env.contains(q) {
                return Err(WellFormedError::VarMissing { var: q.clone(), node: 0 });
            }
            let out = check_ctx(env, inner)?;
            if &out != env {
                return Err(WellFormedError::WhileShape {
                    var: q.clone(),
                    expected: env.clone(),
                    found: out,
                    node: 0,
                });
            }
            Ok(out)
        }
    }
}

/// Checks that the context is closed: it maps the empty environment to
/// the empty environment.
pub fn check_context(c: &Context) -> Result<(), WellFormedError> {
    let out = check_ctx(&Environment::empty(), c)?;
    if !out.is_empty() {
        return Err(WellFormedError::ContextNotClosed(out));
    }
    Ok(())
}

/// Checks that `c` is closed, that its hole matches the program's
/// environments, and that the program's bound variables do not occur in
/// the context.
pub fn compatible(c: &Context, prog: &Program) -> Result<(), WellFormedError> {
    check_context(c)?;
    let (hi, ho) = c.hole_envs();
    if hi != &prog.input || ho != &prog.output {
        return Err(WellFormedError::HoleProgramMismatch {
            hole_in: hi.clone(),
            hole_out: ho.clone(),
            prog_in: prog.input.clone(),
            prog_out: prog.output.clone(),
        });
    }
    let bound = bound_vars(&prog.stmt)?;
    let ctx_vars = c.vars();
    let clash: Vec<VarName> = bound.iter().filter(|v| ctx_vars.contains(v)).cloned().collect();
    if !clash.is_empty() {
        return Err(WellFormedError::BoundCapture(clash));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse, parse_context};

    fn env(s: &str) -> Environment {
        Environment::parse_list(s).unwrap()
    }

    #[test]
    fn cnot_preserves_environment() {
        let s = parse("qcase c (0 -> skip, 1 -> t *= X)").unwrap();
        assert_eq!(check(&env("c,t"), &s).unwrap(), env("c,t"));
    }

    #[test]
    fn coin_creates_its_qubit() {
        let s = parse("new qbit q; q *= H; while q do q *= H").unwrap();
        assert_eq!(check(&env(""), &s).unwrap(), env("q"));
    }

    #[test]
    fn control_may_not_appear_in_branches() {
        let s = parse("qcase q (0 -> q *= X, 1 -> skip)").unwrap();
        assert!(matches!(check(&env("q"), &s), Err(WellFormedError::ControlCaptured { .. })));
    }

    #[test]
    fn meas_branches_must_agree() {
        let s = parse("meas q (0 -> discard q, 1 -> skip)").unwrap();
        assert!(matches!(check(&env("q"), &s), Err(WellFormedError::BranchMismatch { .. })));
    }

    #[test]
    fn while_body_must_preserve_environment() {
        let s = parse("while q do discard q").unwrap();
        assert!(matches!(check(&env("q"), &s), Err(WellFormedError::WhileShape { .. })));
    }

    #[test]
    fn missing_and_clashing_variables() {
        assert!(matches!(check(&env(""), &parse("discard q").unwrap()), Err(WellFormedError::VarMissing { .. })));
        assert!(matches!(check(&env("q"), &parse("new qbit q").unwrap()), Err(WellFormedError::VarClash { .. })));
    }

    #[test]
    fn error_node_index_points_at_offender() {
        let (s, spans) = crate::syntax::parse_spanned("skip; skip; discard q").unwrap();
        let err = check(&env(""), &s).unwrap_err();
        let node = err.node().unwrap();
        assert_eq!(spans[node].start, (1, 13));
    }

    #[test]
    fn in_out_of_renaming_gadget() {
        let s = parse("new qbit q; qcase p (0 -> skip, 1 -> q *= X); qcase q (0 -> skip, 1 -> p *= X); qcase p (0 -> skip, 1 -> q *= X); discard p").unwrap();
        let a = analyze(&s).unwrap();
        assert_eq!(a.input, env("p"));
        assert_eq!(a.output, env("q"));
        assert!(a.bound.is_empty());
    }

    #[test]
    fn sequence_of_create_and_destroy_binds_the_variable() {
        let s = parse("new qbit q; discard q").unwrap();
        let a = analyze(&s).unwrap();
        assert!(a.input.is_empty());
        assert!(a.output.is_empty());
        assert_eq!(a.bound, env("q"));
    }

    #[test]
    fn meas_output_depends_on_branch_inputs() {
        let a = analyze(&parse("meas q (0 -> discard q, 1 -> discard q)").unwrap()).unwrap();
        assert!(a.output.is_empty());
        let b = analyze(&parse("meas q (0 -> skip, 1 -> skip)").unwrap()).unwrap();
        assert_eq!(b.output, env("q"));
    }

    #[test]
    fn ill_formed_everywhere_is_reported() {
        assert_eq!(analyze(&parse("new qbit q; new qbit q").unwrap()), Err(WellFormedError::NotWellFormed));
    }

    #[test]
    fn derivation_tree_mirrors_structure() {
        let d = derive(&env("q"), &parse("q *= H; meas q (0 -> skip, 1 -> skip)").unwrap()).unwrap();
        assert_eq!(d.rule, "seq");
        assert_eq!(d.premises[1].rule, "meas");
        assert!(d.to_string().contains("[unitary] {q} |- q *= H |> {q}"));
    }

    #[test]
    fn qcase_context_is_compatible_with_local_gate() {
        let c = parse_context(
            "new qbit p; new qbit q; new qbit r; qcase p (0 -> [q, r -> q, r], 1 -> skip); discard p; discard q; discard r",
        )
        .unwrap();
        let prog = program(env("q,r"), parse("q *= H").unwrap()).unwrap();
        compatible(&c, &prog).unwrap();
    }

    #[test]
    fn bound_variable_capture_is_rejected() {
        let c = parse_context("new qbit a; [a -> a]; discard a").unwrap();
        let prog = program(env("a"), parse("new qbit b; discard b").unwrap()).unwrap();
        compatible(&c, &prog).unwrap();
        let c2 = parse_context("new qbit a; new qbit b; discard b; [a -> a]; discard a").unwrap();
        assert!(matches!(compatible(&c2, &prog), Err(WellFormedError::BoundCapture(_))));
    }

    #[test]
    fn hole_inside_open_frame() {
        let c = parse_context("new qbit a; new qbit b; [a -> a]; discard a; discard b").unwrap();
        check_context(&c).unwrap();
        let open = parse_context("new qbit a; [a -> a]").unwrap();
        assert!(matches!(check_context(&open), Err(WellFormedError::ContextNotClosed(_))));
    }
}
