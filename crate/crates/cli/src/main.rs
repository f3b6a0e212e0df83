// SPDX-License-Identifier: Apache-2.0

//! `qctl`: parse, check, run, denote and synthesize quantum programs.
//!
//! Exit codes: 0 on success or a positive verdict, 1 on a negative verdict
//! (ill-formed program, inequivalent pair, failed adequacy check, loop
//! iteration that did not converge), 2 on usage, input or internal errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value as Json};

use qctl_core::analysis::{check_adequacy_with, equivalent, probability_denotational, EquivVerdict};
use qctl_core::densem::{denote, DenoteError, Denotation, LfpConfig};
use qctl_core::linalg::{c, CMatrix, CVector, KrausSet, C64};
use qctl_core::opsem::{eval_program, probability, EvalOptions};
use qctl_core::random::random_state;
use qctl_core::synth::synthesize_kraus;
use qctl_core::syntax::{parse_spanned, Environment, Program, Statement, SyntaxError};
use qctl_core::wellformed::{check, derive, WellFormedError};

#[derive(Parser)]
#[command(name = "qctl", version, about = "Quantum programs with quantum control flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Input environment as a comma-separated list of variables.
    #[arg(long, default_value = "")]
    env: String,
    /// Print machine-readable JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct StateArg {
    /// Input state: semicolon-separated `re,im` amplitudes in basis order,
    /// or `random` for a seeded random state. Defaults to `|0..0>`.
    #[arg(long)]
    state: Option<String>,
    /// Seed for `--state random`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct LfpArgs {
    /// Stop loop iteration once successive iterates differ by less than this.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    /// Maximum number of fixpoint steps per loop.
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a program and print it in canonical form.
    Parse {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check well-formedness under an input environment.
    Check {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Print the typing derivation.
        #[arg(long)]
        derivation: bool,
    },
    /// Evaluate a program on a state and print its output ensemble.
    Run {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        state: StateArg,
        /// Maximum loop iterations per loop entry.
        #[arg(long, default_value_t = 64)]
        fuel: usize,
        /// Drop non-default values whose squared norm is below this.
        #[arg(long, default_value_t = 0.0)]
        prune_eps: f64,
    },
    /// Compute the denotation `(C, F)` of a program.
    Denote {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        lfp: LfpArgs,
    },
    /// Termination probability, from both semantics.
    Prob {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        state: StateArg,
        #[arg(long, default_value_t = 64)]
        fuel: usize,
    },
    /// Compare the ensemble of a state with the denotation.
    Adequacy {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        state: StateArg,
        #[arg(long, default_value_t = 64)]
        fuel: usize,
        /// Allowed residual beyond the truncated mass.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Decide observational equivalence of two programs.
    Equiv {
        first: PathBuf,
        second: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Largest entrywise difference counted as equal.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Synthesize a program from Kraus operators and vacuum amplitudes.
    Synth {
        /// JSON list of matrices `{"rows", "cols", "data": [[re, im], ...]}`.
        #[arg(long)]
        kraus: PathBuf,
        /// Vacuum amplitudes as semicolon-separated `re,im` pairs;
        /// defaults to all weight on the first operator.
        #[arg(long)]
        nu: Option<String>,
        #[arg(long, default_value = "")]
        env_in: String,
        #[arg(long, default_value = "")]
        env_out: String,
        #[arg(long)]
        json: bool,
    },
}

/// Failure of a command: a negative verdict or an error.
enum Failure {
    Negative(String),
    Error(String),
}

type CmdResult = Result<Outcome, Failure>;

/// Text to print and whether the verdict was positive.
struct Outcome {
    text: String,
    positive: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, positive: true }
    }

    fn verdict(text: String, positive: bool) -> Self {
        Outcome { text, positive }
    }
}

fn err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Error(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Statement, Failure> {
    let src = read(path)?;
    parse_spanned(&src).map(|(s, _)| s).map_err(|e: SyntaxError| Failure::Error(format!("{}: {e}", path.display())))
}

fn env_arg(text: &str) -> Result<Environment, Failure> {
    Environment::parse_list(text).map_err(err)
}

/// Parses, checks and packages a program file.
fn load_program(path: &Path, env: &str) -> Result<Program, Failure> {
    let stmt = load(path)?;
    let input = env_arg(env)?;
    match check(&input, &stmt) {
        Ok(output) => Ok(Program { input, stmt, output }),
        Err(e) => Err(Failure::Negative(format!("ill-formed: {}", describe_wf(&e)))),
    }
}

fn describe_wf(e: &WellFormedError) -> String {
    match e.node() {
        Some(n) => format!("{e} (at node {n})"),
        None => e.to_string(),
    }
}

fn parse_amplitudes(text: &str) -> Result<Vec<C64>, Failure> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| Failure::Error(format!("bad number '{s}'")));
            match parts.as_slice() {
                [re] => Ok(c(num(re)?, 0.0)),
                [re, im] => Ok(c(num(re)?, num(im)?)),
                _ => Err(Failure::Error(format!("bad amplitude '{pair}'"))),
            }
        })
        .collect()
}

fn state_for(arg: &StateArg, env: &Environment) -> Result<CVector, Failure> {
    let d = env.dim();
    match arg.state.as_deref() {
        None => Ok(qctl_core::linalg::basis(d, 0)),
        Some("random") => Ok(random_state(&mut ChaCha8Rng::seed_from_u64(arg.seed), d)),
        Some(text) => {
            let amps = parse_amplitudes(text)?;
            if amps.len() != d {
                return Err(Failure::Error(format!("state has {} amplitudes, environment needs {d}", amps.len())));
            }
            Ok(CVector::from_vec(amps))
        }
    }
}

fn fmt_c(z: C64) -> String {
    let clean = |x: f64| if x.abs() < 5e-13 { 0.0 } else { x };
    let (re, im) = (clean(z.re), clean(z.im));
    if im == 0.0 {
        format!("{re:.6}")
    } else if re == 0.0 {
        format!("{im:.6}i")
    } else {
        format!("{re:.6}{im:+.6}i")
    }
}

fn fmt_matrix(m: &CMatrix) -> String {
    let cells: Vec<Vec<String>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| fmt_c(m[(i, j)])).collect()).collect();
    let width = cells.iter().flatten().map(String::len).max().unwrap_or(0);
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row.iter().map(|s| format!("{s:>width$}")).collect();
        let _ = writeln!(out, "  [{}]", line.join("  "));
    }
    out
}

fn json_c(z: C64) -> Json {
    json!([z.re, z.im])
}

fn json_matrix(m: &CMatrix) -> Json {
    let data: Vec<Json> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| json_c(m[(i, j)]))).collect();
    json!({ "rows": m.nrows(), "cols": m.ncols(), "data": data })
}

fn json_vector(v: &CVector) -> Json {
    Json::Array(v.iter().map(|z| json_c(*z)).collect())
}

fn pretty_json(v: &Json) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialise")
}

#[derive(Deserialize)]
struct JsonMatrix {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl JsonMatrix {
    fn to_matrix(&self) -> Result<CMatrix, Failure> {
        if self.data.len() != self.rows * self.cols {
            return Err(Failure::Error(format!(
                "matrix declares {}x{} but has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            c(re, im)
        }))
    }
}

fn cmd_parse(file: &Path, json_out: bool) -> CmdResult {
    let src = read(file)?;
    let (stmt, _) = parse_spanned(&src).map_err(|e| Failure::Error(format!("{}: {e}", file.display())))?;
    if json_out {
        return Ok(Outcome::ok(pretty_json(&json!({ "program": stmt.pretty(), "size": stmt.size() }))));
    }
    Ok(Outcome::ok(stmt.pretty()))
}

fn cmd_check(file: &Path, common: &Common, derivation: bool) -> CmdResult {
    let stmt = load(file)?;
    let input = env_arg(&common.env)?;
    match check(&input, &stmt) {
        Ok(output) => {
            if common.json {
                return Ok(Outcome::ok(pretty_json(&json!({ "well_formed": true, "output": output.to_string() }))));
            }
            let mut text = format!("ok: output env = {output}");
            if derivation {
                let d = derive(&input, &stmt).map_err(err)?;
                let _ = write!(text, "\n{d}");
            }
            Ok(Outcome::ok(text))
        }
        Err(e) => {
            if common.json {
                let j = json!({ "well_formed": false, "error": e.to_string(), "node": e.node() });
                return Ok(Outcome::verdict(pretty_json(&j), false));
            }
            Err(Failure::Negative(format!("ill-formed: {}", describe_wf(&e))))
        }
    }
}

fn cmd_run(file: &Path, common: &Common, state: &StateArg, fuel: usize, prune_eps: f64) -> CmdResult {
    let prog = load_program(file, &common.env)?;
    let psi = state_for(state, &prog.input)?;
    let opts = EvalOptions { fuel, prune_eps, ..Default::default() };
    let ens = eval_program(&prog, &psi, &opts).map_err(err)?;
    let (lo, hi) = ens.mass_bounds();
    if common.json {
        let items: Vec<Json> =
            ens.items.iter().map(|v| json!({ "state": json_vector(&v.state), "nu": u8::from(v.nu) })).collect();
        let j = json!({
            "output": ens.out_env.to_string(),
            "items": items,
            "truncated_mass": ens.truncated_mass,
            "mass": [lo, hi],
        });
        return Ok(Outcome::ok(pretty_json(&j)));
    }
    let mut text = format!("output env = {}\n", ens.out_env);
    for (k, v) in ens.items.iter().enumerate() {
        let amps: Vec<String> = v.state.iter().map(|z| fmt_c(*z)).collect();
        let _ = writeln!(text, "  #{k} nu={} mass={:.6e} state=[{}]", u8::from(v.nu), v.mass(), amps.join(", "));
    }
    let _ = write!(text, "truncated mass = {:.6e}\nmass in [{lo:.12}, {hi:.12}]", ens.truncated_mass);
    Ok(Outcome::ok(text))
}

fn denotation_json(d: &Denotation, converged: bool) -> Json {
    json!({
        "input": d.value.input.to_string(),
        "output": d.value.output.to_string(),
        "C": json_matrix(&d.value.c.matrix),
        "F": json_matrix(&d.value.f),
        "loops": d.lfp.loops,
        "iterations": d.lfp.max_iterations,
        "residual": d.lfp.max_residual,
        "converged": converged,
        "valid": d.value.is_valid(),
    })
}

fn cmd_denote(file: &Path, common: &Common, lfp: &LfpArgs) -> CmdResult {
    let prog = load_program(file, &common.env)?;
    let cfg = LfpConfig { tol: lfp.tol, max_iter: lfp.max_iter };
    let (d, converged) = match denote(&prog, &cfg) {
        Ok(d) => (d, true),
        Err(DenoteError::NonConvergence { partial, .. }) => (*partial, false),
        Err(e) => return Err(err(e)),
    };
    let valid = d.value.is_valid();
    if common.json {
        return Ok(Outcome::verdict(pretty_json(&denotation_json(&d, converged)), converged && valid));
    }
    let mut text = format!("denotation ({}) -> ({})\nC =\n", d.value.input, d.value.output);
    text.push_str(&fmt_matrix(&d.value.c.matrix));
    text.push_str("F =\n");
    text.push_str(&fmt_matrix(&d.value.f));
    let _ = write!(
        text,
        "loops = {}, iterations = {}, residual = {:.3e}, converged = {converged}\nvalid = {valid}",
        d.lfp.loops, d.lfp.max_iterations, d.lfp.max_residual
    );
    Ok(Outcome::verdict(text, converged && valid))
}

fn cmd_prob(file: &Path, common: &Common, state: &StateArg, fuel: usize) -> CmdResult {
    let prog = load_program(file, &common.env)?;
    let psi = state_for(state, &prog.input)?;
    let p = probability_denotational(&prog, &psi).map_err(err)?;
    let (lo, hi) = probability(&prog, &psi, &EvalOptions::with_fuel(fuel)).map_err(err)?;
    if common.json {
        return Ok(Outcome::ok(pretty_json(&json!({ "denotational": p, "operational": [lo, hi] }))));
    }
    Ok(Outcome::ok(format!("denotational p = {p:.12}\noperational p in [{lo:.12}, {hi:.12}] (fuel {fuel})")))
}

fn cmd_adequacy(file: &Path, common: &Common, state: &StateArg, fuel: usize, tol: f64) -> CmdResult {
    let prog = load_program(file, &common.env)?;
    let psi = state_for(state, &prog.input)?;
    let r = check_adequacy_with(&prog, &psi, &EvalOptions::with_fuel(fuel), tol).map_err(err)?;
    if common.json {
        let j = json!({
            "density_residual": r.density_residual,
            "transform_residual": r.transform_residual,
            "truncated_mass": r.truncated_mass,
            "verdict": r.verdict,
        });
        return Ok(Outcome::verdict(pretty_json(&j), r.verdict));
    }
    let text = format!(
        "density residual = {:.3e}\ntransform residual = {:.3e}\ntruncated mass = {:.3e}\n{}",
        r.density_residual,
        r.transform_residual,
        r.truncated_mass,
        if r.verdict { "adequate" } else { "NOT adequate" }
    );
    Ok(Outcome::verdict(text, r.verdict))
}

fn verdict_text(v: &EquivVerdict) -> String {
    if v.equivalent {
        return "equivalent".to_string();
    }
    let mut text = format!("not equivalent (C distance {:.3e}, F distance {:.3e})", v.c_distance, v.f_distance);
    if let Some(w) = &v.witness {
        let (p1, p2) = w.probabilities;
        let _ = write!(
            text,
            "\nwitness context:\n{}\np1 = {p1:.12}\np2 = {p2:.12}\ngap = {:.12} (predicted {:.12})",
            w.context.pretty(),
            w.measured_gap(),
            w.predicted_gap
        );
    }
    text
}

fn cmd_equiv(first: &Path, second: &Path, common: &Common, tol: f64) -> CmdResult {
    let p1 = load_program(first, &common.env)?;
    let p2 = load_program(second, &common.env)?;
    let v = equivalent(&p1, &p2, tol).map_err(err)?;
    if common.json {
        let witness = v.witness.as_ref().map(|w| {
            json!({
                "context": w.context.pretty(),
                "probabilities": [w.probabilities.0, w.probabilities.1],
                "gap": w.measured_gap(),
                "predicted_gap": w.predicted_gap,
            })
        });
        let j = json!({
            "equivalent": v.equivalent,
            "c_distance": v.c_distance,
            "f_distance": v.f_distance,
            "witness": witness,
        });
        return Ok(Outcome::verdict(pretty_json(&j), v.equivalent));
    }
    Ok(Outcome::verdict(verdict_text(&v), v.equivalent))
}

fn cmd_synth(kraus: &Path, nu: Option<&str>, env_in: &str, env_out: &str, json_out: bool) -> CmdResult {
    let text = read(kraus)?;
    let mats: Vec<JsonMatrix> = serde_json::from_str(&text).map_err(|e| Failure::Error(format!("{}: {e}", kraus.display())))?;
    let ops = mats.iter().map(JsonMatrix::to_matrix).collect::<Result<Vec<_>, _>>()?;
    if ops.is_empty() {
        return Err(Failure::Error("no Kraus operators given".into()));
    }
    let vacuum = match nu {
        Some(t) => parse_amplitudes(t)?,
        None => (0..ops.len()).map(|k| c(if k == 0 { 1.0 } else { 0.0 }, 0.0)).collect(),
    };
    let ks = KrausSet::new(ops, vacuum).map_err(err)?;
    let (input, output) = (env_arg(env_in)?, env_arg(env_out)?);
    let prog = synthesize_kraus(&ks, &input, &output).map_err(err)?;
    if json_out {
        let d = denote(&prog, &LfpConfig::default()).map_err(err)?;
        let j = json!({ "program": prog.stmt.pretty(), "denotation": denotation_json(&d, true) });
        return Ok(Outcome::ok(pretty_json(&j)));
    }
    Ok(Outcome::ok(prog.stmt.pretty()))
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Parse { file, json } => cmd_parse(file, *json),
        Command::Check { file, common, derivation } => cmd_check(file, common, *derivation),
        Command::Run { file, common, state, fuel, prune_eps } => cmd_run(file, common, state, *fuel, *prune_eps),
        Command::Denote { file, common, lfp } => cmd_denote(file, common, lfp),
        Command::Prob { file, common, state, fuel } => cmd_prob(file, common, state, *fuel),
        Command::Adequacy { file, common, state, fuel, tol } => cmd_adequacy(file, common, state, *fuel, *tol),
        Command::Equiv { first, second, common, tol } => cmd_equiv(first, second, common, *tol),
        Command::Synth { kraus, nu, env_in, env_out, json } => cmd_synth(kraus, nu.as_deref(), env_in, env_out, *json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.text);
            ExitCode::from(if out.positive { 0 } else { 1 })
        }
        Err(Failure::Negative(msg)) => {
            println!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
