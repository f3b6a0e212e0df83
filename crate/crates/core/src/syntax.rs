// SPDX-License-Identifier: Apache-2.0

//! Abstract syntax, parser and pretty-printer for the program language.
//!
//! Concrete grammar:
//!
//! ```text
//! stmt  ::= atom ( ";" atom )*                  (sequence, right-associative)
//! atom  ::= "skip" | "new" "qbit" var | "discard" var | var "*=" gate
//!         | "meas" var "(" "0" "->" stmt "," "1" "->" stmt ")"
//!         | "while" var "do" atom
//!         | "qcase" var "(" "0" "->" stmt "," "1" "->" stmt ")"
//!         | "(" stmt ")"
//! gate  ::= "I" | "X" | "Y" | "Z" | "H" | "T" | "S"
//!         | "U" "(" real ("," real){7} ")"       (row-major, re/im interleaved)
//! ```
//!
//! Contexts additionally accept exactly one hole `[ vars -> vars ]`.
//! Comments run from `#` to the end of the line.

use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Tolerance used when validating user-supplied gate literals.
pub const GATE_UNITARY_TOL: f64 = 1e-12;

const KEYWORDS: &[&str] = &["skip", "new", "qbit", "discard", "meas", "while", "do", "qcase"];

/// A quantum variable name.
///
/// Names start with an ASCII letter or `_` and continue with letters,
/// digits, `_` or `'`. Keywords are rejected. Ordering is byte-lexicographic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarName(String);

impl VarName {
    pub fn new(name: impl Into<String>) -> Result<Self, SyntaxError> {
        let name = name.into();
        if is_valid_name(&name) {
            Ok(VarName(name))
        } else {
            Err(SyntaxError::InvalidName(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

fn is_valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) => {}
        _ => return false,
    }
    chars.all(is_ident_continue) && !KEYWORDS.contains(&s)
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shorthand for building a variable name that is known to be valid.
///
/// # Panics
/// Panics if `s` is not a valid name.
pub fn var(s: &str) -> VarName {
    VarName::new(s).unwrap_or_else(|_| panic!("invalid variable name {s:?}"))
}

/// A finite set of variables kept sorted by the variable order.
///
/// The position of a variable in this order is also its position in the
/// tensor-product layout of the environment's state space: the first
/// variable is the most significant bit of a basis index.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Environment(Vec<VarName>);

impl Environment {
    pub fn empty() -> Self {
        Environment(Vec::new())
    }

    pub fn from_vars<I: IntoIterator<Item = VarName>>(vars: I) -> Self {
        let set: BTreeSet<VarName> = vars.into_iter().collect();
        Environment(set.into_iter().collect())
    }

    /// Parses a comma-separated list such as `"c,t"`. The empty string is
    /// the empty environment.
    pub fn parse_list(text: &str) -> Result<Self, SyntaxError> {
        let mut vars = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            vars.push(VarName::new(part)?);
        }
        let n = vars.len();
        let env = Environment::from_vars(vars);
        if env.len() != n {
            return Err(SyntaxError::DuplicateVariable(text.to_string()));
        }
        Ok(env)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dimension `2^len` of the environment's state space.
    pub fn dim(&self) -> usize {
        1usize << self.0.len()
    }

    pub fn vars(&self) -> &[VarName] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &VarName> {
        self.0.iter()
    }

    pub fn contains(&self, v: &VarName) -> bool {
        self.0.binary_search(v).is_ok()
    }

    pub fn position(&self, v: &VarName) -> Option<usize> {
        self.0.binary_search(v).ok()
    }

    pub fn with(&self, v: &VarName) -> Self {
        let mut out = self.clone();
        if let Err(pos) = out.0.binary_search(v) {
            out.0.insert(pos, v.clone());
        }
        out
    }

    pub fn without(&self, v: &VarName) -> Self {
        let mut out = self.clone();
        if let Ok(pos) = out.0.binary_search(v) {
            out.0.remove(pos);
        }
        out
    }

    pub fn union(&self, other: &Environment) -> Self {
        Environment::from_vars(self.0.iter().chain(other.0.iter()).cloned())
    }

    pub fn difference(&self, other: &Environment) -> Self {
        Environment(self.0.iter().filter(|v| !other.contains(v)).cloned().collect())
    }

    pub fn intersection(&self, other: &Environment) -> Self {
        Environment(self.0.iter().filter(|v| other.contains(v)).cloned().collect())
    }

    pub fn is_subset(&self, other: &Environment) -> bool {
        self.0.iter().all(|v| other.contains(v))
    }

    pub fn is_disjoint(&self, other: &Environment) -> bool {
        self.0.iter().all(|v| !other.contains(v))
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromIterator<VarName> for Environment {
    fn from_iter<I: IntoIterator<Item = VarName>>(iter: I) -> Self {
        Environment::from_vars(iter)
    }
}

/// The built-in single-qubit gates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateName {
    I,
    X,
    Y,
    Z,
    H,
    T,
    S,
}

impl GateName {
    pub const ALL: [GateName; 7] = [
        GateName::I,
        GateName::X,
        GateName::Y,
        GateName::Z,
        GateName::H,
        GateName::T,
        GateName::S,
    ];

    fn from_ident(s: &str) -> Option<Self> {
        Some(match s {
            "I" => GateName::I,
            "X" => GateName::X,
            "Y" => GateName::Y,
            "Z" => GateName::Z,
            "H" => GateName::H,
            "T" => GateName::T,
            "S" => GateName::S,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            GateName::I => "I",
            GateName::X => "X",
            GateName::Y => "Y",
            GateName::Z => "Z",
            GateName::H => "H",
            GateName::T => "T",
            GateName::S => "S",
        }
    }

    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        match self {
            GateName::I => [[l, o], [o, l]],
            GateName::X => [[o, l], [l, o]],
            GateName::Y => [[o, -i], [i, o]],
            GateName::Z => [[l, o], [o, -l]],
            GateName::H => [[h, h], [h, -h]],
            GateName::T => [[l, o], [o, Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]],
            GateName::S => [[l, o], [o, i]],
        }
    }
}

/// A single-qubit unitary: either a named gate or a literal matrix.
///
/// Literal entries are stored exactly as written so that printing and
/// re-parsing reproduces the same value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    Named(GateName),
    /// Row-major entries, real and imaginary parts interleaved.
    Custom([f64; 8]),
}

impl Gate {
    /// Builds a literal gate, checking unitarity.
    pub fn custom(entries: [f64; 8]) -> Result<Self, SyntaxError> {
        let g = Gate::Custom(entries);
        if entries.iter().any(|x| !x.is_finite()) || unitarity_defect(&g.matrix()) > GATE_UNITARY_TOL {
            return Err(SyntaxError::NotUnitary);
        }
        Ok(g)
    }

    /// Builds a literal gate from a 2x2 matrix, without rounding. Negative
    /// zeros are stored as zeros.
    pub fn from_matrix(m: [[Complex64; 2]; 2]) -> Result<Self, SyntaxError> {
        let e = [
            m[0][0].re, m[0][0].im, m[0][1].re, m[0][1].im, m[1][0].re, m[1][0].im, m[1][1].re,
            m[1][1].im,
        ];
        Gate::custom(e.map(|x| x + 0.0))
    }

    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        match self {
            Gate::Named(n) => n.matrix(),
            Gate::Custom(e) => [
                [Complex64::new(e[0], e[1]), Complex64::new(e[2], e[3])],
                [Complex64::new(e[4], e[5]), Complex64::new(e[6], e[7])],
            ],
        }
    }
}

/// Largest entry of `|U^dagger U - I|`.
fn unitarity_defect(m: &[[Complex64; 2]; 2]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let mut s: Complex64 = m.iter().map(|row| row[i].conj() * row[j]).sum();
            if i == j {
                s -= 1.0;
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::Named(n) => f.write_str(n.symbol()),
            Gate::Custom(e) => {
                f.write_str("U(")?;
                for (i, x) in e.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A program statement.
#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    Skip,
    New(VarName),
    Discard(VarName),
    Apply(VarName, Gate),
    Seq(Box<Statement>, Box<Statement>),
    Meas {
        var: VarName,
        zero: Box<Statement>,
        one: Box<Statement>,
    },
    While {
        var: VarName,
        body: Box<Statement>,
    },
    QCase {
        var: VarName,
        zero: Box<Statement>,
        one: Box<Statement>,
    },
}

impl Statement {
    pub fn new_qbit(v: VarName) -> Self {
        Statement::New(v)
    }

    pub fn discard(v: VarName) -> Self {
        Statement::Discard(v)
    }

    pub fn apply(v: VarName, g: Gate) -> Self {
        Statement::Apply(v, g)
    }

    pub fn seq(a: Statement, b: Statement) -> Self {
        Statement::Seq(Box::new(a), Box::new(b))
    }

    pub fn meas(var: VarName, zero: Statement, one: Statement) -> Self {
        Statement::Meas { var, zero: Box::new(zero), one: Box::new(one) }
    }

    pub fn while_loop(var: VarName, body: Statement) -> Self {
        Statement::While { var, body: Box::new(body) }
    }

    pub fn qcase(var: VarName, zero: Statement, one: Statement) -> Self {
        Statement::QCase { var, zero: Box::new(zero), one: Box::new(one) }
    }

    /// Right-nested sequence of `items`; `skip` when empty.
    pub fn seq_all<I>(items: I) -> Self
    where
        I: IntoIterator<Item = Statement>,
        I::IntoIter: DoubleEndedIterator,
    {
        let mut iter = items.into_iter().rev();
        let mut acc = match iter.next() {
            Some(s) => s,
            None => return Statement::Skip,
        };
        for s in iter {
            acc = Statement::seq(s, acc);
        }
        acc
    }

    /// The statements along the right spine of a sequence, in execution
    /// order. Non-sequence statements yield themselves.
    pub fn seq_items(&self) -> Vec<&Statement> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Statement::Seq(a, b) = cur {
            out.push(a.as_ref());
            cur = b;
        }
        out.push(cur);
        out
    }

    /// Every variable mentioned anywhere in the statement.
    pub fn vars(&self) -> BTreeSet<VarName> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<VarName>) {
        for item in self.seq_items() {
            match item {
                Statement::Skip => {}
                Statement::New(v) | Statement::Discard(v) | Statement::Apply(v, _) => {
                    out.insert(v.clone());
                }
                Statement::Seq(a, b) => {
                    a.collect_vars(out);
                    b.collect_vars(out);
                }
                Statement::Meas { var, zero, one } | Statement::QCase { var, zero, one } => {
                    out.insert(var.clone());
                    zero.collect_vars(out);
                    one.collect_vars(out);
                }
                Statement::While { var, body } => {
                    out.insert(var.clone());
                    body.collect_vars(out);
                }
            }
        }
    }

    pub fn mentions(&self, v: &VarName) -> bool {
        self.vars().contains(v)
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        let mut n = 0;
        for item in self.seq_items() {
            n += match item {
                Statement::Skip | Statement::New(_) | Statement::Discard(_) | Statement::Apply(..) => 1,
                Statement::Seq(a, b) => 1 + a.size() + b.size(),
                Statement::Meas { zero, one, .. } | Statement::QCase { zero, one, .. } => {
                    1 + zero.size() + one.size()
                }
                Statement::While { body, .. } => 1 + body.size(),
            };
        }
        // Each spine link is itself a node.
        n + self.seq_items().len() - 1
    }

    /// Nesting depth: leaves have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Statement::Skip | Statement::New(_) | Statement::Discard(_) | Statement::Apply(..) => 1,
            Statement::Seq(a, b) => 1 + a.depth().max(b.depth()),
            Statement::Meas { zero, one, .. } | Statement::QCase { zero, one, .. } => {
                1 + zero.depth().max(one.depth())
            }
            Statement::While { body, .. } => 1 + body.depth(),
        }
    }

    /// Renders the statement in concrete syntax.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        write_stmt(&mut s, self);
        s
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

/// A statement together with its input and output environments.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub input: Environment,
    pub stmt: Statement,
    pub output: Environment,
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {} ({})", self.input, self.stmt, self.output)
    }
}

/// A statement with exactly one hole.
#[derive(Clone, Debug, PartialEq)]
pub enum Context {
    Hole {
        input: Environment,
        output: Environment,
    },
    /// `C; S`
    SeqLeft(Box<Context>, Statement),
    /// `S; C`
    SeqRight(Statement, Box<Context>),
    /// `meas q (0 -> C, 1 -> S)`
    MeasZero(VarName, Box<Context>, Statement),
    /// `meas q (0 -> S, 1 -> C)`
    MeasOne(VarName, Statement, Box<Context>),
    /// `qcase q (0 -> C, 1 -> S)`
    QCaseZero(VarName, Box<Context>, Statement),
    /// `qcase q (0 -> S, 1 -> C)`
    QCaseOne(VarName, Statement, Box<Context>),
    While(VarName, Box<Context>),
}

impl Context {
    pub fn hole(input: Environment, output: Environment) -> Self {
        Context::Hole { input, output }
    }

    /// `before; self; after`, omitting absent parts.
    pub fn between(before: Option<Statement>, inner: Context, after: Option<Statement>) -> Self {
        let inner = match after {
            Some(s) => Context::SeqLeft(Box::new(inner), s),
            None => inner,
        };
        match before {
            Some(s) => Context::SeqRight(s, Box::new(inner)),
            None => inner,
        }
    }

    /// The environments annotating the hole.
    pub fn hole_envs(&self) -> (&Environment, &Environment) {
        match self {
            Context::Hole { input, output } => (input, output),
            Context::SeqLeft(c, _)
            | Context::SeqRight(_, c)
            | Context::MeasZero(_, c, _)
            | Context::MeasOne(_, _, c)
            | Context::QCaseZero(_, c, _)
            | Context::QCaseOne(_, _, c)
            | Context::While(_, c) => c.hole_envs(),
        }
    }

    /// Replaces the hole by `s`.
    pub fn substitute(&self, s: &Statement) -> Statement {
        match self {
            Context::Hole { .. } => s.clone(),
            Context::SeqLeft(c, t) => Statement::seq(c.substitute(s), t.clone()),
            Context::SeqRight(t, c) => Statement::seq(t.clone(), c.substitute(s)),
            Context::MeasZero(q, c, t) => Statement::meas(q.clone(), c.substitute(s), t.clone()),
            Context::MeasOne(q, t, c) => Statement::meas(q.clone(), t.clone(), c.substitute(s)),
            Context::QCaseZero(q, c, t) => Statement::qcase(q.clone(), c.substitute(s), t.clone()),
            Context::QCaseOne(q, t, c) => Statement::qcase(q.clone(), t.clone(), c.substitute(s)),
            Context::While(q, c) => Statement::while_loop(q.clone(), c.substitute(s)),
        }
    }

    /// Every variable mentioned by the context outside the hole.
    pub fn vars(&self) -> BTreeSet<VarName> {
        let mut out = BTreeSet::new();
        let mut cur = self;
        loop {
            match cur {
                Context::Hole { .. } => return out,
                Context::SeqLeft(c, t) | Context::SeqRight(t, c) => {
                    out.extend(t.vars());
                    cur = c;
                }
                Context::MeasZero(q, c, t)
                | Context::MeasOne(q, t, c)
                | Context::QCaseZero(q, c, t)
                | Context::QCaseOne(q, t, c) => {
                    out.insert(q.clone());
                    out.extend(t.vars());
                    cur = c;
                }
                Context::While(q, c) => {
                    out.insert(q.clone());
                    cur = c;
                }
            }
        }
    }

    /// Number of nodes, counting the hole as one.
    pub fn size(&self) -> usize {
        match self {
            Context::Hole { .. } => 1,
            Context::SeqLeft(c, t) | Context::SeqRight(t, c) => 1 + c.size() + t.size(),
            Context::MeasZero(_, c, t)
            | Context::MeasOne(_, t, c)
            | Context::QCaseZero(_, c, t)
            | Context::QCaseOne(_, t, c) => 1 + c.size() + t.size(),
            Context::While(_, c) => 1 + c.size(),
        }
    }

    pub fn pretty(&self) -> String {
        // Render through a statement with a marker in place of the hole.
        let (input, output) = self.hole_envs();
        let hole_text = format!("[{input} -> {output}]");
        let mut s = String::new();
        write_ctx(&mut s, self, &hole_text);
        s
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pretty())
    }
}

// ---------------------------------------------------------------------------
// Pretty-printing

fn write_stmt(out: &mut String, s: &Statement) {
    let items = s.seq_items();
    let last = items.len() - 1;
    for (i, item) in items.into_iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        if i < last && matches!(item, Statement::Seq(..)) {
            out.push('(');
            write_stmt(out, item);
            out.push(')');
        } else {
            write_atom(out, item);
        }
    }
}

fn write_atom(out: &mut String, s: &Statement) {
    match s {
        Statement::Skip => out.push_str("skip"),
        Statement::New(v) => {
            out.push_str("new qbit ");
            out.push_str(v.as_str());
        }
        Statement::Discard(v) => {
            out.push_str("discard ");
            out.push_str(v.as_str());
        }
        Statement::Apply(v, g) => {
            out.push_str(v.as_str());
            out.push_str(" *= ");
            out.push_str(&g.to_string());
        }
        Statement::Seq(..) => write_stmt(out, s),
        Statement::Meas { var, zero, one } | Statement::QCase { var, zero, one } => {
            out.push_str(if matches!(s, Statement::Meas { .. }) { "meas " } else { "qcase " });
            out.push_str(var.as_str());
            out.push_str(" (0 -> ");
            write_stmt(out, zero);
            out.push_str(", 1 -> ");
            write_stmt(out, one);
            out.push(')');
        }
        Statement::While { var, body } => {
            out.push_str("while ");
            out.push_str(var.as_str());
            out.push_str(" do ");
            if matches!(**body, Statement::Seq(..)) {
                out.push('(');
                write_stmt(out, body);
                out.push(')');
            } else {
                write_atom(out, body);
            }
        }
    }
}

fn write_plain(out: &mut String, s: &Statement) {
    write_stmt(out, s);
}

fn write_plain_atom(out: &mut String, s: &Statement) {
    if matches!(s, Statement::Seq(..)) {
        out.push('(');
        write_plain(out, s);
        out.push(')');
    } else {
        write_stmt(out, s);
    }
}

/// True if the context renders as a sequence at its top level.
fn ctx_is_seq(c: &Context) -> bool {
    matches!(c, Context::SeqLeft(..) | Context::SeqRight(..))
}

fn write_ctx(out: &mut String, c: &Context, hole: &str) {
    match c {
        Context::Hole { .. } => out.push_str(hole),
        Context::SeqLeft(inner, t) => {
            if ctx_is_seq(inner) {
                out.push('(');
                write_ctx(out, inner, hole);
                out.push(')');
            } else {
                write_ctx(out, inner, hole);
            }
            out.push_str("; ");
            write_plain(out, t);
        }
        Context::SeqRight(t, inner) => {
            write_plain_atom(out, t);
            out.push_str("; ");
            write_ctx(out, inner, hole);
        }
        Context::MeasZero(q, inner, t) | Context::QCaseZero(q, inner, t) => {
            out.push_str(if matches!(c, Context::MeasZero(..)) { "meas " } else { "qcase " });
            out.push_str(q.as_str());
            out.push_str(" (0 -> ");
            write_ctx(out, inner, hole);
            out.push_str(", 1 -> ");
            write_plain(out, t);
            out.push(')');
        }
        Context::MeasOne(q, t, inner) | Context::QCaseOne(q, t, inner) => {
            out.push_str(if matches!(c, Context::MeasOne(..)) { "meas " } else { "qcase " });
            out.push_str(q.as_str());
            out.push_str(" (0 -> ");
            write_plain(out, t);
            out.push_str(", 1 -> ");
            write_ctx(out, inner, hole);
            out.push(')');
        }
        Context::While(q, inner) => {
            out.push_str("while ");
            out.push_str(q.as_str());
            out.push_str(" do ");
            if ctx_is_seq(inner) {
                out.push('(');
                write_ctx(out, inner, hole);
                out.push(')');
            } else {
                write_ctx(out, inner, hole);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SyntaxError {
    #[error("{line}:{col}: expected {}, found {found}", expected.join(" or "))]
    Unexpected {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}:{col}: invalid character {ch:?}")]
    BadChar { line: usize, col: usize, ch: char },
    #[error("{line}:{col}: invalid number {text:?}")]
    BadNumber { line: usize, col: usize, text: String },
    #[error("{line}:{col}: gate literal is not unitary")]
    NotUnitaryAt { line: usize, col: usize },
    #[error("gate literal is not unitary")]
    NotUnitary,
    #[error("invalid variable name {0:?}")]
    InvalidName(String),
    #[error("duplicate variable in list {0:?}")]
    DuplicateVariable(String),
    #[error("{line}:{col}: holes are only allowed in contexts")]
    UnexpectedHole { line: usize, col: usize },
    #[error("a context must contain exactly one hole, found {0}")]
    HoleCount(usize),
}

// ---------------------------------------------------------------------------
// Lexer

/// A source position range, 1-based line and column of the start and end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: (usize, usize),
    pub end: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Semi,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Arrow,
    StarEq,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Num(s) => format!("number '{s}'"),
            Tok::Semi => "';'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::Comma => "','".into(),
            Tok::Arrow => "'->'".into(),
            Tok::StarEq => "'*='".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    start: (usize, usize),
    end: (usize, usize),
}

fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let start = (line, col);
        let tok = if is_ident_start(c) {
            let mut s = String::new();
            while i < chars.len() && is_ident_continue(chars[i]) {
                s.push(chars[i]);
                bump!();
            }
            Tok::Ident(s)
        } else if c.is_ascii_digit()
            || c == '.'
            || (c == '-' && i + 1 < chars.len() && (chars[i + 1].is_ascii_digit() || chars[i + 1] == '.'))
            || c == '+'
        {
            let mut s = String::new();
            s.push(c);
            bump!();
            while i < chars.len() {
                let d = chars[i];
                let prev = s.chars().last().unwrap_or(' ');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || ((d == '-' || d == '+') && (prev == 'e' || prev == 'E')) {
                    s.push(d);
                    bump!();
                } else {
                    break;
                }
            }
            Tok::Num(s)
        } else {
            let two = if i + 1 < chars.len() { Some(chars[i + 1]) } else { None };
            let t = match (c, two) {
                ('-', Some('>')) => {
                    bump!();
                    Tok::Arrow
                }
                ('*', Some('=')) => {
                    bump!();
                    Tok::StarEq
                }
                (';', _) => Tok::Semi,
                ('(', _) => Tok::LParen,
                (')', _) => Tok::RParen,
                ('[', _) => Tok::LBracket,
                (']', _) => Tok::RBracket,
                (',', _) => Tok::Comma,
                _ => return Err(SyntaxError::BadChar { line, col, ch: c }),
            };
            bump!();
            t
        };
        toks.push(Token { tok, start, end: (line, col) });
    }
    toks.push(Token { tok: Tok::Eof, start: (line, col), end: (line, col) });
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

/// Parse tree shared by statements and contexts. Sequences are flattened.
#[derive(Clone, Debug)]
enum Node {
    Skip,
    New(VarName),
    Discard(VarName),
    Apply(VarName, Gate),
    Seq(Vec<PNode>),
    Meas(VarName, Box<PNode>, Box<PNode>),
    While(VarName, Box<PNode>),
    QCase(VarName, Box<PNode>, Box<PNode>),
    Hole(Environment, Environment),
}

#[derive(Clone, Debug)]
struct PNode {
    node: Node,
    span: Span,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> SyntaxError {
        let t = self.peek();
        SyntaxError::Unexpected {
            line: t.start.0,
            col: t.start.1,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, SyntaxError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.unexpected(&[what]))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<Token, SyntaxError> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => Ok(self.next()),
            _ => Err(self.unexpected(&[&format!("'{kw}'")])),
        }
    }

    fn expect_label(&mut self, label: &str) -> Result<(), SyntaxError> {
        match &self.peek().tok {
            Tok::Num(s) if s == label => {
                self.next();
                Ok(())
            }
            _ => Err(self.unexpected(&[&format!("'{label}'")])),
        }
    }

    fn var(&mut self) -> Result<VarName, SyntaxError> {
        match &self.peek().tok {
            Tok::Ident(s) if is_valid_name(s) => {
                let v = VarName(s.clone());
                self.next();
                Ok(v)
            }
            _ => Err(self.unexpected(&["variable"])),
        }
    }

    fn number(&mut self) -> Result<f64, SyntaxError> {
        match &self.peek().tok {
            Tok::Num(s) => {
                let t = self.peek().clone();
                let v: f64 = s.parse().map_err(|_| SyntaxError::BadNumber {
                    line: t.start.0,
                    col: t.start.1,
                    text: s.clone(),
                })?;
                if !v.is_finite() {
                    return Err(SyntaxError::BadNumber { line: t.start.0, col: t.start.1, text: s.clone() });
                }
                self.next();
                Ok(v)
            }
            _ => Err(self.unexpected(&["number"])),
        }
    }

    fn stmt(&mut self) -> Result<PNode, SyntaxError> {
        let first = self.atom()?;
        if self.peek().tok != Tok::Semi {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.peek().tok == Tok::Semi {
            self.next();
            items.push(self.atom()?);
        }
        let span = Span { start: items[0].span.start, end: items[items.len() - 1].span.end };
        Ok(PNode { node: Node::Seq(items), span })
    }

    fn branches(&mut self) -> Result<(PNode, PNode, (usize, usize)), SyntaxError> {
        self.expect(Tok::LParen, "'('")?;
        self.expect_label("0")?;
        self.expect(Tok::Arrow, "'->'")?;
        let zero = self.stmt()?;
        self.expect(Tok::Comma, "','")?;
        self.expect_label("1")?;
        self.expect(Tok::Arrow, "'->'")?;
        let one = self.stmt()?;
        let close = self.expect(Tok::RParen, "')'")?;
        Ok((zero, one, close.end))
    }

    fn var_list(&mut self, terminator: Tok) -> Result<Environment, SyntaxError> {
        let mut vars = Vec::new();
        if self.peek().tok != terminator {
            loop {
                let t = self.peek().clone();
                let v = self.var()?;
                if vars.contains(&v) {
                    return Err(SyntaxError::Unexpected {
                        line: t.start.0,
                        col: t.start.1,
                        expected: vec!["distinct variables".into()],
                        found: format!("repeated '{v}'"),
                    });
                }
                vars.push(v);
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        Ok(Environment::from_vars(vars))
    }

    fn atom(&mut self) -> Result<PNode, SyntaxError> {
        let start_tok = self.peek().clone();
        let start = start_tok.start;
        match &start_tok.tok {
            Tok::LParen => {
                self.next();
                let mut inner = self.stmt()?;
                let close = self.expect(Tok::RParen, "')'")?;
                inner.span = Span { start, end: close.end };
                Ok(inner)
            }
            Tok::LBracket => {
                self.next();
                let input = self.var_list(Tok::Arrow)?;
                self.expect(Tok::Arrow, "'->'")?;
                let output = self.var_list(Tok::RBracket)?;
                let close = self.expect(Tok::RBracket, "']'")?;
                Ok(PNode { node: Node::Hole(input, output), span: Span { start, end: close.end } })
            }
            Tok::Ident(word) => match word.as_str() {
                "skip" => {
                    let t = self.next();
                    Ok(PNode { node: Node::Skip, span: Span { start, end: t.end } })
                }
                "new" => {
                    self.next();
                    self.expect_keyword("qbit")?;
                    let end = self.peek().end;
                    let v = self.var()?;
                    Ok(PNode { node: Node::New(v), span: Span { start, end } })
                }
                "discard" => {
                    self.next();
                    let end = self.peek().end;
                    let v = self.var()?;
                    Ok(PNode { node: Node::Discard(v), span: Span { start, end } })
                }
                "meas" | "qcase" => {
                    let is_meas = word == "meas";
                    self.next();
                    let v = self.var()?;
                    let (zero, one, end) = self.branches()?;
                    let node = if is_meas {
                        Node::Meas(v, Box::new(zero), Box::new(one))
                    } else {
                        Node::QCase(v, Box::new(zero), Box::new(one))
                    };
                    Ok(PNode { node, span: Span { start, end } })
                }
                "while" => {
                    self.next();
                    let v = self.var()?;
                    self.expect_keyword("do")?;
                    let body = self.atom()?;
                    let end = body.span.end;
                    Ok(PNode { node: Node::While(v, Box::new(body)), span: Span { start, end } })
                }
                _ if is_valid_name(word) => {
                    let v = self.var()?;
                    self.expect(Tok::StarEq, "'*='")?;
                    let (gate, end) = self.gate()?;
                    Ok(PNode { node: Node::Apply(v, gate), span: Span { start, end } })
                }
                _ => Err(self.unexpected(&["statement"])),
            },
            _ => Err(self.unexpected(&["statement"])),
        }
    }

    fn gate(&mut self) -> Result<(Gate, (usize, usize)), SyntaxError> {
        let t = self.peek().clone();
        let name = match &t.tok {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.unexpected(&["gate"])),
        };
        if let Some(g) = GateName::from_ident(&name) {
            self.next();
            return Ok((Gate::Named(g), t.end));
        }
        if name != "U" {
            return Err(self.unexpected(&["gate"]));
        }
        self.next();
        self.expect(Tok::LParen, "'('")?;
        let mut e = [0.0; 8];
        for (k, slot) in e.iter_mut().enumerate() {
            if k > 0 {
                self.expect(Tok::Comma, "','")?;
            }
            *slot = self.number()?;
        }
        let close = self.expect(Tok::RParen, "')'")?;
        let g = Gate::custom(e).map_err(|_| SyntaxError::NotUnitaryAt { line: t.start.0, col: t.start.1 })?;
        Ok((g, close.end))
    }
}

fn parse_tree(src: &str) -> Result<PNode, SyntaxError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let tree = p.stmt()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.unexpected(&["';'", "end of input"]));
    }
    Ok(tree)
}

fn count_holes(n: &PNode) -> usize {
    match &n.node {
        Node::Hole(..) => 1,
        Node::Seq(items) => items.iter().map(count_holes).sum(),
        Node::Meas(_, a, b) | Node::QCase(_, a, b) => count_holes(a) + count_holes(b),
        Node::While(_, b) => count_holes(b),
        _ => 0,
    }
}

/// Converts a hole-free parse tree, recording spans in pre-order.
fn to_statement(n: &PNode, spans: &mut Vec<Span>) -> Result<Statement, SyntaxError> {
    Ok(match &n.node {
        Node::Skip => {
            spans.push(n.span);
            Statement::Skip
        }
        Node::New(v) => {
            spans.push(n.span);
            Statement::New(v.clone())
        }
        Node::Discard(v) => {
            spans.push(n.span);
            Statement::Discard(v.clone())
        }
        Node::Apply(v, g) => {
            spans.push(n.span);
            Statement::Apply(v.clone(), *g)
        }
        Node::Seq(items) => {
            let last_end = items[items.len() - 1].span.end;
            let mut stmts = Vec::with_capacity(items.len());
            for (i, item) in items.iter().enumerate() {
                if i + 1 < items.len() {
                    spans.push(Span { start: item.span.start, end: last_end });
                }
                stmts.push(to_statement(item, spans)?);
            }
            Statement::seq_all(stmts)
        }
        Node::Meas(v, a, b) => {
            spans.push(n.span);
            let za = to_statement(a, spans)?;
            let ob = to_statement(b, spans)?;
            Statement::meas(v.clone(), za, ob)
        }
        Node::QCase(v, a, b) => {
            spans.push(n.span);
            let za = to_statement(a, spans)?;
            let ob = to_statement(b, spans)?;
            Statement::qcase(v.clone(), za, ob)
        }
        Node::While(v, b) => {
            spans.push(n.span);
            Statement::while_loop(v.clone(), to_statement(b, spans)?)
        }
        Node::Hole(..) => {
            return Err(SyntaxError::UnexpectedHole { line: n.span.start.0, col: n.span.start.1 });
        }
    })
}

fn to_context(n: &PNode) -> Result<Context, SyntaxError> {
    let mut sink = Vec::new();
    match &n.node {
        Node::Hole(i, o) => Ok(Context::hole(i.clone(), o.clone())),
        Node::Seq(items) => {
            let idx = items.iter().position(|it| count_holes(it) == 1).expect("hole present");
            let before: Vec<Statement> =
                items[..idx].iter().map(|it| to_statement(it, &mut sink)).collect::<Result<_, _>>()?;
            let after: Vec<Statement> =
                items[idx + 1..].iter().map(|it| to_statement(it, &mut sink)).collect::<Result<_, _>>()?;
            let mut ctx = to_context(&items[idx])?;
            if !after.is_empty() {
                ctx = Context::SeqLeft(Box::new(ctx), Statement::seq_all(after));
            }
            for s in before.into_iter().rev() {
                ctx = Context::SeqRight(s, Box::new(ctx));
            }
            Ok(ctx)
        }
        Node::Meas(v, a, b) | Node::QCase(v, a, b) => {
            let is_meas = matches!(n.node, Node::Meas(..));
            if count_holes(a) == 1 {
                let c = Box::new(to_context(a)?);
                let s = to_statement(b, &mut sink)?;
                Ok(if is_meas { Context::MeasZero(v.clone(), c, s) } else { Context::QCaseZero(v.clone(), c, s) })
            } else {
                let s = to_statement(a, &mut sink)?;
                let c = Box::new(to_context(b)?);
                Ok(if is_meas { Context::MeasOne(v.clone(), s, c) } else { Context::QCaseOne(v.clone(), s, c) })
            }
        }
        Node::While(v, b) => Ok(Context::While(v.clone(), Box::new(to_context(b)?))),
        _ => unreachable!("hole-free node reached in context conversion"),
    }
}

/// Parses a statement.
pub fn parse(src: &str) -> Result<Statement, SyntaxError> {
    parse_spanned(src).map(|(s, _)| s)
}

/// Parses a statement and returns the source span of every AST node in
/// pre-order (a sequence node precedes its left operand, which precedes its
/// right operand).
pub fn parse_spanned(src: &str) -> Result<(Statement, Vec<Span>), SyntaxError> {
    let tree = parse_tree(src)?;
    let mut spans = Vec::new();
    let s = to_statement(&tree, &mut spans)?;
    Ok((s, spans))
}

/// Parses a context: a statement with exactly one hole `[in -> out]`.
pub fn parse_context(src: &str) -> Result<Context, SyntaxError> {
    let tree = parse_tree(src)?;
    match count_holes(&tree) {
        1 => to_context(&tree),
        n => Err(SyntaxError::HoleCount(n)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnot_parses_to_qcase() {
        let s = parse("qcase c (0 -> skip, 1 -> t *= X)").unwrap();
        assert_eq!(s, Statement::qcase(var("c"), Statement::Skip, Statement::apply(var("t"), Gate::Named(GateName::X))));
    }

    #[test]
    fn sequence_is_right_associative() {
        let s = parse("skip; skip; skip").unwrap();
        assert_eq!(
            s,
            Statement::seq(Statement::Skip, Statement::seq(Statement::Skip, Statement::Skip))
        );
    }

    #[test]
    fn while_body_is_an_atom() {
        let s = parse("while q do q *= H; skip").unwrap();
        assert!(matches!(s, Statement::Seq(ref a, _) if matches!(**a, Statement::While { .. })));
        let s = parse("while q do (q *= H; skip)").unwrap();
        assert!(matches!(s, Statement::While { .. }));
    }

    #[test]
    fn left_nested_sequence_round_trips_with_parentheses() {
        let s = Statement::seq(Statement::seq(Statement::Skip, Statement::Skip), Statement::Skip);
        assert_eq!(s.pretty(), "(skip; skip); skip");
        assert_eq!(parse(&s.pretty()).unwrap(), s);
    }

    #[test]
    fn trailing_semicolon_reports_position() {
        let err = parse("q *= H;").unwrap_err();
        match err {
            SyntaxError::Unexpected { line, col, found, .. } => {
                assert_eq!((line, col), (1, 8));
                assert_eq!(found, "end of input");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_are_ignored() {
        let s = parse("# header\nskip # trailing\n; discard q").unwrap();
        assert_eq!(s, Statement::seq(Statement::Skip, Statement::Discard(var("q"))));
    }

    #[test]
    fn custom_gate_literal_round_trips_exactly() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let g = Gate::custom([h, 0.0, 0.0, h, 0.0, h, h, 0.0]).unwrap();
        let s = Statement::apply(var("q"), g);
        assert_eq!(parse(&s.pretty()).unwrap(), s);
    }

    #[test]
    fn non_unitary_literal_is_rejected() {
        let err = parse("q *= U(1, 0, 1, 0, 0, 0, 1, 0)").unwrap_err();
        assert!(matches!(err, SyntaxError::NotUnitaryAt { .. }));
    }

    #[test]
    fn keywords_are_not_variables() {
        assert!(VarName::new("skip").is_err());
        assert!(VarName::new("q'").is_ok());
        assert!(VarName::new("_a0").is_ok());
        assert!(VarName::new("0q").is_err());
    }

    #[test]
    fn environment_is_sorted_bytewise() {
        let env = Environment::parse_list("t, c, B").unwrap();
        let names: Vec<&str> = env.iter().map(|v| v.as_str()).collect();
        assert_eq!(names, vec!["B", "c", "t"]);
        assert!(Environment::parse_list("a,a").is_err());
    }

    #[test]
    fn spans_follow_pre_order() {
        let (s, spans) = parse_spanned("skip; discard q").unwrap();
        assert_eq!(s.size(), 3);
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[0].start, (1, 1));
        assert_eq!(spans[2].start, (1, 7));
    }

    #[test]
    fn context_parses_and_prints() {
        let src = "new qbit p; qcase p (0 -> [q, r -> q, r], 1 -> skip); discard p";
        let c = parse_context(src).unwrap();
        assert_eq!(c.pretty(), src);
        assert_eq!(parse_context(&c.pretty()).unwrap(), c);
        assert!(matches!(parse_context("skip"), Err(SyntaxError::HoleCount(0))));
        assert!(parse("[ -> ]").is_err());
    }

    #[test]
    fn substitute_fills_the_hole() {
        let c = parse_context("new qbit p; qcase p (0 -> [q, r -> q, r], 1 -> skip); discard p").unwrap();
        let s = c.substitute(&parse("q *= H").unwrap());
        assert_eq!(s.pretty(), "new qbit p; qcase p (0 -> q *= H, 1 -> skip); discard p");
    }

    #[test]
    fn size_counts_every_node() {
        let s = parse("meas q (0 -> skip, 1 -> skip; skip)").unwrap();
        assert_eq!(s.size(), 5);
        let c = parse_context("skip; [ -> ]").unwrap();
        let t = parse("skip; skip").unwrap();
        assert_eq!(c.substitute(&t).size(), c.size() - 1 + t.size());
    }
}
