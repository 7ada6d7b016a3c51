//! Batch front end behind the `mvrisk` binary.
//!
//! Exit codes: 0 success, 1 numerical failure or inconclusive check,
//! 2 invalid input, 3 detected property violation.

use std::fs;
use std::path::Path;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::fixtures::frictionless;
use crate::io::{self, IoError};
use crate::markets::{composed_avar_system, superhedging_system, MarketError};
use crate::riskcore::{AcceptanceSystem, DualPair, RiskError};
use crate::scalar::{Ext, Rational, Scalar};
use crate::timeconsistency::{
    check_acceptance_decomposition, moving_scalarization, recursion_gap, DecompositionMode, TimeError, Verdict,
};
use crate::tree::{AdaptedVector, ScenarioTree, TerminalClaim};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "mvrisk", version, about = "Dynamic multivariate scalar risk measures on finite scenario trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// ρ_t^w(X) per node with minimizers.
    Scalarize,
    /// Dual maximizer value against the primal value.
    DualVerify,
    /// Checks A_t = A_{t,s} + A_s.
    CheckMptc,
    /// Gap between ρ_t^w(X) and the recursion right-hand side.
    RecursionGap,
    /// Moving scalarization weight chain.
    MovingScalarization,
    /// Builds the superhedging system and scalarizes.
    Superhedge,
    /// Builds the composed AV@R system and scalarizes.
    ComposeAvar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arith {
    F64,
    Rational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sampled,
}

#[derive(clap::Args, Debug, Clone)]
pub struct RunConfig {
    #[arg(long, global = true)]
    pub tree: Option<String>,
    #[arg(long, global = true)]
    pub claim: Option<String>,
    /// Solvency JSON; a frictionless unit-rate market is used when absent.
    #[arg(long, global = true)]
    pub market: Option<String>,
    #[arg(long, global = true)]
    pub avar: Option<String>,
    /// Measure JSON for a weak-duality check in `dual-verify`.
    #[arg(long, global = true)]
    pub measure: Option<String>,
    /// Comma-separated d-vector or a weights JSON file.
    #[arg(long, global = true)]
    pub w: Option<String>,
    #[arg(long, global = true)]
    pub time: Option<usize>,
    #[arg(long, global = true)]
    pub step: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    #[arg(long, global = true, default_value_t = 64)]
    pub directions: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, global = true, value_enum, default_value = "f64")]
    pub arith: Arith,
    /// Report path; `.csv` selects a flat (time, node, value) table.
    #[arg(long, global = true)]
    pub out: Option<String>,
}

/// Result of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    /// Report text for standard output when no `--out` is given.
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Numerical(String),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::Lp(_) => CliError::Numerical(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::Risk(r) => r.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<TimeError> for CliError {
    fn from(e: TimeError) -> Self {
        match e {
            TimeError::Risk(r) => r.into(),
            TimeError::Poly(p) => CliError::Numerical(p.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

struct Report {
    body: Value,
    rows: Vec<(usize, i64, String)>,
    code: i32,
}

/// Parses `argv` (program name first), runs the command and writes the
/// report to `--out` when given.
pub fn run_command<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome { code, stdout: text, stderr: String::new() }
            } else {
                Outcome { code, stdout: String::new(), stderr: text }
            };
        }
    };
    let result = match cli.config.arith {
        Arith::F64 => execute::<f64>(cli.command, &cli.config),
        Arith::Rational => execute::<Rational>(cli.command, &cli.config),
    };
    match result {
        Ok(report) => {
            let text = match cli.config.out.as_deref() {
                Some(path) if path.ends_with(".csv") => csv_text(&report.rows),
                _ => serde_json::to_string_pretty(&report.body).expect("report serializes") + "\n",
            };
            match &cli.config.out {
                Some(path) => match fs::write(path, &text) {
                    Ok(()) => Outcome { code: report.code, stdout: String::new(), stderr: String::new() },
                    Err(e) => Outcome { code: EXIT_INVALID, stdout: String::new(), stderr: format!("--out {path}: {e}\n") },
                },
                None => Outcome { code: report.code, stdout: text, stderr: String::new() },
            }
        }
        Err(CliError::Invalid(msg)) => Outcome { code: EXIT_INVALID, stdout: String::new(), stderr: format!("error: {msg}\n") },
        Err(CliError::Numerical(msg)) => {
            Outcome { code: EXIT_NUMERICAL, stdout: String::new(), stderr: format!("numerical failure: {msg}\n") }
        }
    }
}

fn csv_text(rows: &[(usize, i64, String)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "node", "value"]).expect("in-memory write");
    for (t, n, v) in rows {
        w.write_record([t.to_string(), n.to_string(), v.clone()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn read_input(flag: &str, path: &Option<String>) -> Result<Option<(String, String, String)>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| CliError::Invalid(format!("--{flag} {p}: {e}")))?;
            let hash = format!("{:x}", Sha256::digest(&bytes));
            let text = String::from_utf8(bytes).map_err(|_| CliError::Invalid(format!("--{flag} {p}: not UTF-8")))?;
            Ok(Some((p.clone(), text, hash)))
        }
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Scalarize => "scalarize",
        Command::DualVerify => "dual-verify",
        Command::CheckMptc => "check-mptc",
        Command::RecursionGap => "recursion-gap",
        Command::MovingScalarization => "moving-scalarization",
        Command::Superhedge => "superhedge",
        Command::ComposeAvar => "compose-avar",
    }
}

struct Inputs<S> {
    tree: ScenarioTree<S>,
    claim: Option<TerminalClaim<S>>,
    system: AcceptanceSystem<S>,
    hashes: Map<String, Value>,
    weight_text: Option<(String, Option<String>)>,
}

fn load<S: Scalar>(command: Command, cfg: &RunConfig) -> Result<Inputs<S>, CliError> {
    if cfg.tol <= 0.0 || !cfg.tol.is_finite() {
        return Err(CliError::Invalid("--tol must be positive".into()));
    }
    if cfg.directions == 0 {
        return Err(CliError::Invalid("--directions must be at least 1".into()));
    }
    let mut hashes = Map::new();
    let mut record = |flag: &str, input: &Option<(String, String, String)>| {
        if let Some((p, _, h)) = input {
            hashes.insert(flag.to_string(), json!({"path": p, "sha256": h}));
        }
    };
    let tree_in = read_input("tree", &cfg.tree)?.ok_or_else(|| CliError::Invalid("--tree is required".into()))?;
    record("tree", &Some(tree_in.clone()));
    let tree: ScenarioTree<S> = io::parse_tree(&tree_in.1, &tree_in.0)?;
    let claim_in = read_input("claim", &cfg.claim)?;
    record("claim", &claim_in);
    let claim = claim_in.as_ref().map(|(p, text, _)| io::parse_claim(&tree, text, p)).transpose()?;
    let market_in = read_input("market", &cfg.market)?;
    let avar_in = read_input("avar", &cfg.avar)?;
    record("market", &market_in);
    record("avar", &avar_in);
    let use_avar = match command {
        Command::Superhedge => {
            if avar_in.is_some() {
                return Err(CliError::Invalid("superhedge takes --market, not --avar".into()));
            }
            false
        }
        Command::ComposeAvar => {
            if market_in.is_some() {
                return Err(CliError::Invalid("compose-avar takes --avar, not --market".into()));
            }
            if avar_in.is_none() {
                return Err(CliError::Invalid("--avar is required".into()));
            }
            true
        }
        _ => {
            if market_in.is_some() && avar_in.is_some() {
                return Err(CliError::Invalid("--market and --avar are mutually exclusive".into()));
            }
            avar_in.is_some()
        }
    };
    let system = if use_avar {
        let (p, text, _) = avar_in.as_ref().unwrap();
        composed_avar_system(&tree, &io::parse_avar(&tree, text, p)?)?
    } else {
        let solvency = match &market_in {
            Some((p, text, _)) => io::parse_solvency(&tree, text, p)?,
            None => frictionless(&tree),
        };
        superhedging_system(&tree, &solvency)?
    };
    let weight_text = match &cfg.w {
        None => None,
        Some(w) if Path::new(w).is_file() => {
            let input = read_input("w", &Some(w.clone()))?.unwrap();
            record("w", &Some(input.clone()));
            Some((input.0, Some(input.1)))
        }
        Some(w) => Some((w.clone(), None)),
    };
    Ok(Inputs { tree, claim, system, hashes, weight_text })
}

fn weight_at<S: Scalar>(inputs: &Inputs<S>, t: usize) -> Result<AdaptedVector<S>, CliError> {
    let tree = &inputs.tree;
    match &inputs.weight_text {
        None => {
            let ones: Vec<S> = (0..tree.d()).map(|i| if i < tree.m() { S::one() } else { S::zero() }).collect();
            Ok(AdaptedVector::constant(tree, t, &ones))
        }
        Some((inline, None)) => Ok(io::parse_inline_weight(tree, t, inline, "--w")?),
        Some((path, Some(text))) => {
            let w = io::parse_weights(tree, text, path)?;
            if w.time != t {
                return Err(CliError::Invalid(format!("{path}: time: weights at time {} but time {t} requested", w.time)));
            }
            Ok(w)
        }
    }
}

fn need_claim<S: Scalar>(inputs: &Inputs<S>) -> Result<&TerminalClaim<S>, CliError> {
    inputs.claim.as_ref().ok_or_else(|| CliError::Invalid("--claim is required".into()))
}

fn time_arg<S: Scalar>(tree: &ScenarioTree<S>, cfg: &RunConfig) -> Result<usize, CliError> {
    let t = cfg.time.unwrap_or(0);
    if t > tree.horizon() {
        return Err(CliError::Invalid(format!("--time {t} beyond horizon {}", tree.horizon())));
    }
    Ok(t)
}

fn pairs<S: Scalar>(tree: &ScenarioTree<S>, cfg: &RunConfig) -> Result<Vec<(usize, usize)>, CliError> {
    let horizon = tree.horizon();
    let all: Vec<(usize, usize)> = (0..horizon).flat_map(|t| (t + 1..=horizon).map(move |s| (t, s))).collect();
    let chosen: Vec<(usize, usize)> = all
        .into_iter()
        .filter(|(t, s)| cfg.time.is_none_or(|x| x == *t) && cfg.step.is_none_or(|x| x == *s))
        .collect();
    if chosen.is_empty() {
        return Err(CliError::Invalid(format!(
            "no time pair t < s <= {horizon} matches --time {:?} --step {:?}",
            cfg.time, cfg.step
        )));
    }
    Ok(chosen)
}

fn ext_beyond<S: Scalar>(gap: &Ext<S>, tol: f64) -> bool {
    match gap {
        Ext::Finite(g) => {
            if S::is_exact() {
                !g.is_exact_zero()
            } else {
                g.to_f64().abs() > tol
            }
        }
        _ => true,
    }
}

fn value_rows<S: Scalar>(tree: &ScenarioTree<S>, t: usize, values: &[Ext<S>]) -> Vec<(usize, i64, String)> {
    values.iter().enumerate().map(|(k, v)| (t, tree.id(tree.nodes_at(t)[k]), v.to_string())).collect()
}

fn execute<S: Scalar>(command: Command, cfg: &RunConfig) -> Result<Report, CliError> {
    let inputs = load::<S>(command, cfg)?;
    let tree = &inputs.tree;
    let system = &inputs.system;
    let mut code = EXIT_OK;
    let mut rows = Vec::new();
    let result = match command {
        Command::Scalarize | Command::Superhedge | Command::ComposeAvar => {
            let t = time_arg(tree, cfg)?;
            let x = need_claim(&inputs)?;
            let w = weight_at(&inputs, t)?;
            let v = system.scalarize(t, &w, x)?;
            rows = value_rows(tree, t, &v.values());
            json!({"weights": io::weights_to_json(tree, &w), "value": v.to_json(tree)})
        }
        Command::DualVerify => {
            let t = time_arg(tree, cfg)?;
            let x = need_claim(&inputs)?;
            let w = weight_at(&inputs, t)?;
            let (pair, primal) = system.dual_maximizer(t, x, &w)?;
            let dual = system.dual_value(t, x, &w, &pair)?;
            let mut nodes = Vec::new();
            for (k, (p, d)) in primal.nodes.iter().zip(&dual.values).enumerate() {
                let gap = p.value.try_sub(d).unwrap_or(Ext::zero());
                if ext_beyond(&gap, cfg.tol) {
                    code = EXIT_VIOLATION;
                }
                let id = tree.id(tree.nodes_at(t)[k]);
                rows.push((t, id, gap.to_string()));
                nodes.push(json!({"id": id, "primal": io::ext(&p.value), "dual": io::ext(d), "gap": io::ext(&gap)}));
            }
            let mut body = json!({"weights": io::weights_to_json(tree, &w), "pair": io::pair_to_json(tree, &pair), "nodes": nodes});
            if let Some((p, text, h)) = read_input("measure", &cfg.measure)? {
                let q = io::parse_measure(tree, &text, &p)?;
                let supplied = DualPair { q, m_perp: AdaptedVector::zeros(tree, t) };
                let weak = system.dual_value(t, x, &w, &supplied)?;
                let holds: Vec<bool> = weak
                    .values
                    .iter()
                    .zip(&primal.nodes)
                    .map(|(d, p)| if S::is_exact() { *d <= p.value } else { d.le_tol(&p.value) })
                    .collect();
                if holds.iter().any(|h| !h) {
                    code = EXIT_VIOLATION;
                }
                body["weak_duality"] = json!({"measure": {"path": p, "sha256": h}, "values": io::node_values(tree, t, &weak.values), "holds": holds});
            }
            body
        }
        Command::CheckMptc => {
            let mode = match cfg.mode {
                ModeArg::Exact => DecompositionMode::Exact,
                ModeArg::Sampled => DecompositionMode::Sampled,
            };
            let mut reports = Vec::new();
            for (t, s) in pairs(tree, cfg)? {
                let r = check_acceptance_decomposition(system, t, s, mode, cfg.directions, cfg.seed)?;
                match r.verdict {
                    Verdict::Violated => code = EXIT_VIOLATION,
                    Verdict::Inconclusive if code == EXIT_OK => code = EXIT_NUMERICAL,
                    _ => {}
                }
                for n in &r.nodes {
                    rows.push((t, tree.id(n.node), format!("{s}:{}", serde_json::to_value(n.verdict).unwrap().as_str().unwrap())));
                }
                reports.push(io::mptc_report_to_json(tree, &r));
            }
            json!({"reports": reports})
        }
        Command::RecursionGap => {
            let x = need_claim(&inputs)?;
            let mut out = Vec::new();
            for (t, s) in pairs(tree, cfg)? {
                let w = weight_at(&inputs, t)?;
                let gaps = recursion_gap(system, t, s, &w, x)?;
                if gaps.iter().any(|g| ext_beyond(g, cfg.tol)) {
                    code = EXIT_VIOLATION;
                }
                rows.extend(value_rows(tree, t, &gaps));
                out.push(json!({"t": t, "s": s, "gaps": io::node_values(tree, t, &gaps)}));
            }
            json!({"pairs": out})
        }
        Command::MovingScalarization => {
            let x = need_claim(&inputs)?;
            let w0 = weight_at(&inputs, 0)?;
            let mv = moving_scalarization(system, x, &w0)?;
            if !mv.telescopes() || !mv.transport_consistent {
                code = EXIT_VIOLATION;
            }
            for t in 0..mv.chain.len() {
                rows.extend(value_rows(tree, t, &mv.chain[t]));
            }
            io::moving_to_json(tree, &mv)
        }
    };
    let mut config = Map::new();
    config.insert("command".into(), json!(command_name(command)));
    config.insert("arith".into(), json!(S::NAME));
    config.insert("inputs".into(), Value::Object(inputs.hashes.clone()));
    config.insert("time".into(), json!(cfg.time));
    config.insert("step".into(), json!(cfg.step));
    config.insert("w".into(), json!(cfg.w));
    config.insert("mode".into(), json!(match cfg.mode {
        ModeArg::Exact => "exact",
        ModeArg::Sampled => "sampled",
    }));
    config.insert("directions".into(), json!(cfg.directions));
    config.insert("seed".into(), json!(cfg.seed));
    config.insert("tol".into(), json!(cfg.tol));
    let body = json!({
        "config": Value::Object(config),
        "system": {"label": system.label(), "coherent": system.is_coherent(), "d": tree.d(), "m": tree.m(), "T": tree.horizon()},
        "result": result,
        "exit_code": code,
    });
    Ok(Report { body, rows, code })
}
