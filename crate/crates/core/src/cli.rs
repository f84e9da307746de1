//! Command-line front end: configuration loading, experiment drivers and
//! CSV output.
//!
//! A configuration file is merged over the built-in reference experiment,
//! then `--set key=value` overrides are applied on dotted paths (array
//! elements by index, e.g. `simulation.sources.0.cell=2`). Values are read
//! as TOML literals and fall back to plain strings.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{ChannelState, NodeId, RelayLink};
use crate::controller::theorem1_constants;
use crate::dp::{self, DpOptions, DpProblem, LinkStatistics};
use crate::engine::{self, Metrics, SimConfig, Strategy, World};
use crate::oracle;
use crate::phy::Mode;
use crate::solver::{self, NodeCost, SolverInput};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("override `{0}` is not of the form key=value")]
    OverrideSyntax(String),
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeasibilityConfig {
    /// `(lambda, rho)` pairs.
    pub pairs: Vec<[f64; 2]>,
    pub strategies: Vec<Strategy>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotRelay {
    pub source_relay: f64,
    pub relay_destination: f64,
}

/// A single known-channel instance for `solve-slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotConfig {
    pub source_destination: f64,
    pub relays: Vec<SlotRelay>,
    pub source_weight: f64,
    pub relay_weight: f64,
    pub reward: f64,
    pub p_max: f64,
}

/// Unknown-channel instance for `dp-estimate`; weights come from the
/// given queue values and the simulation's `V`, `alpha` and `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub relays: usize,
    pub bins: usize,
    pub reliability_queue: f64,
    pub power_queue: f64,
    /// Sample sizes for the estimate table.
    pub samples: Vec<usize>,
    /// Deviations for the Chebyshev table.
    pub epsilon: Vec<f64>,
    pub source_power: f64,
    pub options: DpOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulation: SimConfig,
    pub sweep: SweepConfig,
    pub feasibility: FeasibilityConfig,
    pub slot: SlotConfig,
    pub dp: DpConfig,
}

/// The seven rate-reliability pairs of the feasibility study.
pub const FEASIBILITY_PAIRS: [[f64; 2]; 7] =
    [[0.1, 0.9], [0.2, 0.9], [0.2, 0.95], [0.5, 0.95], [0.5, 0.98], [0.6, 0.98], [0.7, 0.99]];

impl ExperimentConfig {
    pub fn reference() -> Self {
        Self {
            simulation: SimConfig::reference(),
            sweep: SweepConfig { v: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0] },
            feasibility: FeasibilityConfig {
                pairs: FEASIBILITY_PAIRS.to_vec(),
                strategies: Strategy::ALL.to_vec(),
                tolerance: 5e-3,
            },
            slot: SlotConfig {
                source_destination: 0.5,
                relays: vec![SlotRelay { source_relay: 2.0, relay_destination: 1.0 }],
                source_weight: 1.0,
                relay_weight: 1.0,
                reward: 5.0,
                p_max: 10.0,
            },
            dp: DpConfig {
                relays: 2,
                bins: 4,
                reliability_queue: 5.0,
                power_queue: 0.0,
                samples: vec![10, 100, 1_000, 10_000],
                epsilon: vec![0.1, 0.5, 1.0],
                source_power: 2.0,
                options: DpOptions::default(),
            },
        }
    }

    /// Canonical TOML text; the config hash is taken over this.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_literal(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("x = {text}"))
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (n, part) in parts.iter().enumerate() {
        let last = n + 1 == parts.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| format!("`{part}` is not an array index"))?;
                let len = a.len();
                let slot = a.get_mut(i).ok_or_else(|| format!("index {i} is out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("`{}` is not a table", parts[..n].join("."))),
        };
    }
    Err("empty key".into())
}

/// Reference experiment, merged with `text` (if any) and the overrides.
pub fn parse_config(text: Option<&str>, origin: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut value = toml::Value::try_from(ExperimentConfig::reference()).expect("reference serializes");
    if let Some(text) = text {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })?;
        merge(&mut value, toml::Value::Table(user));
        // Surface unknown keys of the file itself with their location.
        value.clone().try_into::<ExperimentConfig>().map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
    }
    for item in overrides {
        let (key, raw) = item.split_once('=').ok_or_else(|| ConfigError::OverrideSyntax(item.clone()))?;
        let key = key.trim();
        set_path(&mut value, key, parse_literal(raw.trim()))
            .map_err(|message| ConfigError::Override { key: key.to_string(), message })?;
        value
            .clone()
            .try_into::<ExperimentConfig>()
            .map_err(|e| ConfigError::Override { key: key.to_string(), message: e.to_string() })?;
    }
    let config: ExperimentConfig =
        value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })?;
    config.simulation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(config)
}

pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?),
        None => None,
    };
    let origin = path.map_or_else(|| "<reference>".to_string(), |p| p.display().to_string());
    let mut config = parse_config(text.as_deref(), &origin, overrides)?;
    if let Some(seed) = seed {
        config.simulation.seed = seed;
    }
    Ok(config)
}

/// `%g`-style formatting with 9 significant digits.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// One run of the controller; writes metrics.csv (and trace.csv).
    Simulate,
    /// Independent runs over the V list; writes sweep.csv.
    SweepV,
    /// Rate-reliability pairs times strategies; writes feasibility.csv.
    Feasibility,
    /// Per-mode costs of the [slot] instance.
    SolveSlot,
    /// Exact and sampled cost-to-go of the [dp] instance; writes dp.csv.
    DpEstimate,
}

#[derive(Debug, Parser)]
#[command(name = "dlcoop", version, about = "Delay-limited cooperative relaying experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML file merged over the reference experiment.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a config key, e.g. `--set simulation.v=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write the per-slot trace (simulate).
    #[arg(long, global = true)]
    pub trace: bool,
    /// Cross-check solver decisions against the brute-force oracle.
    #[arg(long, global = true, hide = true)]
    pub oracle: bool,
}

/// Parsed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    pub trace: bool,
    pub oracle: bool,
}

impl From<Cli> for ExperimentSpec {
    fn from(c: Cli) -> Self {
        Self {
            command: c.command,
            config: c.config,
            out: c.out,
            seed: c.seed,
            overrides: c.overrides,
            trace: c.trace,
            oracle: c.oracle,
        }
    }
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn write_metrics(dir: &Path, config: &ExperimentConfig, m: &Metrics) -> Result<()> {
    let mut w = writer(dir, "metrics.csv")?;
    w.write_record([
        "seed", "config_hash", "v", "kind", "id", "arrival_rate", "delivered_rate", "reliability", "average_power", "p_avg",
        "average_queue", "max_queue", "final_queue",
    ])?;
    let seed = config.simulation.seed.to_string();
    let hash = config.hash();
    for (i, s) in m.sources.iter().enumerate() {
        w.write_record([
            seed.clone(),
            hash.clone(),
            fmt_g(m.v),
            "source".into(),
            i.to_string(),
            fmt_g(s.arrival_rate),
            fmt_g(s.delivered_rate),
            fmt_g(s.reliability_target),
            String::new(),
            String::new(),
            fmt_g(s.average_queue),
            fmt_g(s.max_queue),
            fmt_g(s.final_queue),
        ])?;
    }
    for n in &m.nodes {
        w.write_record([
            seed.clone(),
            hash.clone(),
            fmt_g(m.v),
            "node".into(),
            n.node.0.to_string(),
            String::new(),
            String::new(),
            String::new(),
            fmt_g(n.average_power),
            fmt_g(n.p_avg),
            fmt_g(n.average_queue),
            fmt_g(n.max_queue),
            fmt_g(n.final_queue),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(dir: &Path, config: &ExperimentConfig, m: &Metrics) -> Result<()> {
    let Some(trace) = &m.trace else { return Ok(()) };
    let mut w = writer(dir, "trace.csv")?;
    w.write_record([
        "seed", "config_hash", "slot", "source", "arrival", "scheduled", "mode", "delivered", "source_power", "relay_power",
        "relays_used", "relays_available", "cost", "reliability_queue",
    ])?;
    let seed = config.simulation.seed.to_string();
    let hash = config.hash();
    for r in trace {
        w.write_record([
            seed.clone(),
            hash.clone(),
            r.slot.to_string(),
            r.source.to_string(),
            (r.arrival as u8).to_string(),
            (r.scheduled as u8).to_string(),
            r.mode.name().to_string(),
            (r.delivered as u8).to_string(),
            fmt_g(r.source_power),
            fmt_g(r.relay_power),
            r.relays_used.to_string(),
            r.relays_available.to_string(),
            fmt_g(r.cost),
            fmt_g(r.reliability_queue),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Resolved configuration; feeding it back with `--config` repeats the run.
fn write_echo(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("config.toml");
    fs::write(&path, config.canonical()).with_context(|| format!("writing {}", path.display()))
}

/// Largest |solver - oracle| seen while replaying decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleReport {
    pub checked: usize,
    pub worst_gap: f64,
}

/// Replays the first `slots` slots and compares every decision with at most
/// three available relays against the grid oracle.
pub fn oracle_replay(config: &SimConfig, slots: u64, limit: usize) -> Result<OracleReport> {
    let mut world = World::new(config.clone(), false)?;
    let mut report = OracleReport::default();
    let params = config.controller_params();
    for _ in 0..slots {
        if report.checked >= limit {
            break;
        }
        let queues = world.queues().clone();
        world.run_slot_observed(&mut |source, state: &ChannelState| {
            if state.relay_count() > oracle::MAX_RELAYS || report.checked >= limit {
                return;
            }
            let input = crate::controller::solver_input(&queues, source, state, &params, config.scheme, config.link, config.solver);
            let (best, _) = solver::best_action_among(&input, config.strategy.allowed_modes());
            let mut reference = oracle::grid_mode_cost(&input, Mode::Idle, None).expect("idle");
            for &mode in config.strategy.allowed_modes() {
                if let Ok(c) = oracle::grid_mode_cost(&input, mode, None) {
                    if c.cost < reference.cost {
                        reference = c;
                    }
                }
            }
            report.checked += 1;
            report.worst_gap = report.worst_gap.max((best.cost - reference.cost).abs());
        });
    }
    Ok(report)
}

fn simulate(spec: &ExperimentSpec, config: &ExperimentConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let sim = &config.simulation;
    let m = engine::run_with_trace(sim, spec.trace)?;
    write_metrics(&spec.out, config, &m)?;
    write_trace(&spec.out, config, &m)?;
    let verdict = engine::check_feasibility(&m, config.feasibility.tolerance);
    writeln!(out, "slots {}  V {}  scheme {}  strategy {}", m.slots, fmt_g(m.v), sim.scheme.name(), sim.strategy.name())?;
    writeln!(out, "{:>8} {:>10} {:>10} {:>10} {:>10}", "source", "lambda", "delivered", "target", "avg Z")?;
    for (i, s) in m.sources.iter().enumerate() {
        writeln!(
            out,
            "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            i,
            s.arrival_rate,
            s.delivered_rate,
            s.reliability_target * s.arrival_rate,
            s.average_queue
        )?;
    }
    writeln!(out, "average sum power {:.4}", m.sum_power())?;
    writeln!(out, "average power queue {:.4}", m.average_power_queue())?;
    writeln!(out, "constraints met (tol {}): {}", fmt_g(config.feasibility.tolerance), if verdict.feasible { "yes" } else { "no" })?;
    if spec.oracle {
        let r = oracle_replay(sim, sim.slots, 200)?;
        writeln!(out, "oracle: {} decisions checked, worst cost gap {:.3e}", r.checked, r.worst_gap)?;
    }
    Ok(())
}

fn sweep(spec: &ExperimentSpec, config: &ExperimentConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let runs = engine::sweep_v(&config.simulation, &config.sweep.v)?;
    let mut w = writer(&spec.out, "sweep.csv")?;
    w.write_record(["seed", "config_hash", "V", "avg_sum_power", "avg_Z", "avg_X", "max_queue", "worst_delivery_ratio"])?;
    writeln!(out, "{:>8} {:>14} {:>10} {:>10} {:>14}", "V", "avg sum power", "avg Z", "avg X", "delivery ratio")?;
    for (k, m) in runs.iter().enumerate() {
        let ratio = m
            .sources
            .iter()
            .map(|s| if s.arrival_rate > 0.0 { s.delivered_rate / s.arrival_rate } else { 1.0 })
            .fold(f64::INFINITY, f64::min);
        w.write_record([
            config.simulation.seed.wrapping_add(k as u64).to_string(),
            config.hash(),
            fmt_g(m.v),
            fmt_g(m.sum_power()),
            fmt_g(m.average_reliability_queue()),
            fmt_g(m.average_power_queue()),
            fmt_g(m.max_queue()),
            fmt_g(ratio),
        ])?;
        writeln!(
            out,
            "{:>8} {:>14.4} {:>10.4} {:>10.4} {:>14.4}",
            fmt_g(m.v),
            m.sum_power(),
            m.average_reliability_queue(),
            m.average_power_queue(),
            ratio
        )?;
    }
    w.flush()?;
    Ok(())
}

fn feasibility(spec: &ExperimentSpec, config: &ExperimentConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let f = &config.feasibility;
    let pairs: Vec<(f64, f64)> = f.pairs.iter().map(|p| (p[0], p[1])).collect();
    let cells = engine::feasibility_matrix(&config.simulation, &pairs, &f.strategies, f.tolerance)?;
    let mut w = writer(&spec.out, "feasibility.csv")?;
    w.write_record([
        "seed", "config_hash", "arrival_rate", "reliability", "strategy", "feasible", "worst_reliability_margin",
        "worst_power_margin", "avg_sum_power",
    ])?;
    for c in &cells {
        let worst = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        w.write_record([
            config.simulation.seed.to_string(),
            config.hash(),
            fmt_g(c.arrival_rate),
            fmt_g(c.reliability),
            c.strategy.name().to_string(),
            (c.verdict.feasible as u8).to_string(),
            fmt_g(worst(&c.verdict.reliability_margins)),
            fmt_g(worst(&c.verdict.power_margins)),
            fmt_g(c.metrics.sum_power()),
        ])?;
    }
    w.flush()?;
    write!(out, "{:>14}", "(lambda, rho)")?;
    for s in &f.strategies {
        write!(out, " {:>10}", s.name())?;
    }
    writeln!(out)?;
    for (l, r) in &pairs {
        write!(out, "{:>14}", format!("({l}, {r})"))?;
        for s in &f.strategies {
            let c = cells.iter().find(|c| c.arrival_rate == *l && c.reliability == *r && c.strategy == *s).expect("cell run");
            write!(out, " {:>10}", if c.verdict.feasible { "yes" } else { "no" })?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn solve_slot(spec: &ExperimentSpec, config: &ExperimentConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let s = &config.slot;
    let relays = s
        .relays
        .iter()
        .enumerate()
        .map(|(i, r)| RelayLink { id: NodeId(i as u32 + 1), source_relay: r.source_relay, relay_destination: r.relay_destination })
        .collect();
    let state = ChannelState::new(0, s.source_destination, relays);
    let input = SolverInput {
        state: &state,
        budget: config.simulation.link,
        scheme: config.simulation.scheme,
        source: NodeCost { weight: s.source_weight, p_max: s.p_max },
        relays: vec![NodeCost { weight: s.relay_weight, p_max: s.p_max }; state.relay_count()],
        reward: s.reward,
        options: config.simulation.solver,
    };
    let (best, table) = solver::best_action(&input);
    writeln!(out, "scheme {}  reward {}", input.scheme.name(), fmt_g(input.reward))?;
    writeln!(out, "{:>12} {:>12} {:>10}  relay powers", "mode", "cost", "P_s")?;
    for mode in Mode::ALL {
        let c = table.get(mode);
        match &c.action {
            Some(a) => {
                let relays: Vec<String> = a.alloc.relays.iter().map(|p| format!("{p:.4}")).collect();
                writeln!(out, "{:>12} {:>12.4} {:>10.4}  [{}]", mode.name(), c.cost, a.alloc.source, relays.join(", "))?;
            }
            None => writeln!(out, "{:>12} {:>12} {:>10}", mode.name(), "infeasible", "-")?,
        }
    }
    let chosen = best.action.as_ref().map_or("idle", |a| a.mode.name());
    writeln!(out, "chosen: {chosen} (cost {:.4})", best.cost)?;
    if spec.oracle {
        match oracle::grid_best_action(&input, None) {
            Ok(o) => writeln!(out, "oracle: cost {:.4}, gap {:.3e}", o.cost, (o.cost - best.cost).abs())?,
            Err(e) => writeln!(out, "oracle: {e}")?,
        }
    }
    Ok(())
}

fn dp_estimate(spec: &ExperimentSpec, config: &ExperimentConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let d = &config.dp;
    let sim = &config.simulation;
    let src = &sim.sources[0];
    let stats = LinkStatistics::from_fading(&sim.fading, d.relays);
    let source = NodeCost { weight: d.power_queue + sim.v * src.beta, p_max: src.p_max };
    let relay = NodeCost { weight: d.power_queue + sim.v * sim.relays.beta, p_max: sim.relays.p_max };
    let reward = d.reliability_queue + sim.v * src.alpha;
    let problem = DpProblem::new(stats, sim.link, sim.scheme, source, vec![relay; d.relays], reward, d.bins, d.options)?;
    let exact = dp::exact_dp(&problem);
    let exact_at = dp::exact_cost_to_go(&problem, d.source_power);
    writeln!(out, "outcomes {}  reward {}  source weight {}", problem.space.len(), fmt_g(reward), fmt_g(source.weight))?;
    writeln!(out, "J0* = {:.4} at P_s = {:.4}", exact.value, exact.source_power)?;
    writeln!(out, "J0(P_s = {}) = {:.4}", fmt_g(d.source_power), exact_at)?;
    let mut w = writer(&spec.out, "dp.csv")?;
    let mut header = vec!["seed".to_string(), "config_hash".into(), "source_power".into(), "n".into(), "estimate".into(), "exact".into(), "variance".into()];
    header.extend(d.epsilon.iter().map(|e| format!("chebyshev_{}", fmt_g(*e))));
    w.write_record(&header)?;
    writeln!(out, "{:>8} {:>12} {:>12}  Chebyshev bound per eps {:?}", "n", "estimate", "variance", d.epsilon)?;
    for (k, &n) in d.samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sim.seed.wrapping_add(k as u64));
        let e = dp::mc_estimate(&problem, d.source_power, n, &mut rng);
        let bounds: Vec<f64> = d.epsilon.iter().map(|&eps| dp::chebyshev_bound(e.variance, n, eps)).collect();
        let mut row = vec![sim.seed.to_string(), config.hash(), fmt_g(d.source_power), n.to_string(), fmt_g(e.value), fmt_g(exact_at), fmt_g(e.variance)];
        row.extend(bounds.iter().map(|b| fmt_g(*b)));
        w.write_record(&row)?;
        let shown: Vec<String> = bounds.iter().map(|b| format!("{b:.4}")).collect();
        writeln!(out, "{:>8} {:>12.4} {:>12.4}  [{}]", n, e.value, e.variance, shown.join(", "))?;
    }
    w.flush()?;
    let t = theorem1_constants(&sim.controller_params(), 0);
    writeln!(out, "bound constant B = {:.4}", t.b)?;
    Ok(())
}

/// Run one experiment, writing CSV files under `spec.out` and the summary
/// to `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &mut dyn std::io::Write) -> Result<()> {
    let config = load_config(spec.config.as_deref(), &spec.overrides, spec.seed)?;
    write_echo(&spec.out, &config)?;
    match spec.command {
        Command::Simulate => simulate(spec, &config, out),
        Command::SweepV => sweep(spec, &config, out),
        Command::Feasibility => feasibility(spec, &config, out),
        Command::SolveSlot => solve_slot(spec, &config, out),
        Command::DpEstimate => dp_estimate(spec, &config, out),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let spec = ExperimentSpec::from(cli);
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run_experiment(&spec, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
