//! Multi-seed experiment runner: per-round traces, perception and relevance
//! sweeps, and summary statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{run_scheme, run_scheme_from, BaselineResult, Scheme};
use crate::error::{Error, Result};
use crate::hypergame::EngineConfig;
use crate::perception::{Pair, PerceptionState, Player};
use crate::scenario::{generate_scenario, Scenario, Shape};
use crate::utilities::UtilityReport;

/// Decay parameters of the relevance sweep.
pub const RELEVANCE_DECAYS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];
/// Mixing coefficients of the perception sweep: 0 starts at the true
/// relevance, 1 at the relevance-blind belief.
pub const PERCEPTION_MIX: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Relative QoTE tolerance of the fixed-QoTE operating points.
pub const QOTE_TOLERANCE: f64 = 0.02;
pub const BUDGET_BISECTIONS: usize = 30;

pub const TRACE_COLUMNS: &str = "seed,scheme,round,player,role,utility,qote,bits,surprise,delay,misperception,strategy_change,misperception_change,config_hash";
pub const SWEEP_COLUMNS: &str = "sweep,seed,scheme,x,budget,bits_total,qote_mean,rx_utility_mean,qote_target,within_target,converged,rounds,config_hash";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    File(PathBuf),
    Generated { seed: u64, shape: Shape, decay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Perception,
    Relevance,
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(v: &str) -> Result<Self> {
        match v.trim() {
            "perception" => Ok(Sweep::Perception),
            "relevance" => Ok(Sweep::Relevance),
            _ => Err(Error::Parse(format!("unknown sweep {v:?} (expected perception or relevance)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: ScenarioSource,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    /// Not part of the config hash.
    pub out: PathBuf,
    pub sweep: Option<Sweep>,
    /// Fixed QoTE of the relevance sweep; when absent each (seed, scheme)
    /// targets the lowest QoTE it reaches over the decays at the scenario budget.
    pub qote_target: Option<f64>,
    pub emit_trace: bool,
    pub emit_summary: bool,
    pub emit_sweep: bool,
    pub engine: EngineConfig,
}

impl ExperimentConfig {
    pub fn new(source: ScenarioSource, out: impl Into<PathBuf>) -> Self {
        let seeds = match &source {
            ScenarioSource::Generated { seed, .. } => vec![*seed],
            ScenarioSource::File(_) => vec![0],
        };
        Self {
            source,
            schemes: vec![Scheme::Hypergame],
            seeds,
            out: out.into(),
            sweep: None,
            qote_target: None,
            emit_trace: true,
            emit_summary: true,
            emit_sweep: true,
            engine: EngineConfig::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("the seed list is empty".into()));
        }
        if self.engine.max_rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        if self.sweep == Some(Sweep::Relevance) && matches!(self.source, ScenarioSource::File(_)) {
            return Err(Error::Config("the relevance sweep regenerates scenarios and needs --generate".into()));
        }
        if let Some(t) = self.qote_target {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("QoTE target must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the JSON config with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Scenario of one seed, optionally at another relevance decay.
pub fn scenario_for(source: &ScenarioSource, seed: u64, decay: Option<f64>) -> Result<Scenario> {
    match source {
        ScenarioSource::Generated { shape, decay: d, .. } => generate_scenario(seed, *shape, decay.unwrap_or(*d)),
        ScenarioSource::File(path) => {
            let mut s = Scenario::load(path)?.validated()?;
            s.rng_seed = seed;
            Ok(s)
        }
    }
}

/// Initial beliefs whose perceived relevance is `(1 - t) * truth + t`.
pub fn mixed_perceptions(s: &Scenario, t: f64) -> PerceptionState {
    let mut p = PerceptionState::relevance_blind(s);
    for (k, b) in p.tx.iter_mut().enumerate() {
        for (j, row) in b.relevance.iter_mut().enumerate() {
            for (r, w) in row.iter_mut().enumerate() {
                *w = (1.0 - t) * s.relevance(j, k, r) + t;
            }
        }
    }
    p
}

/// L1 distance between perceived and true relevance over all TX beliefs.
pub fn relevance_error(s: &Scenario, p: &PerceptionState) -> f64 {
    let mut e = 0.0;
    for (k, b) in p.tx.iter().enumerate() {
        for (j, row) in b.relevance.iter().enumerate() {
            for (r, w) in row.iter().enumerate() {
                e += (w - s.relevance(j, k, r)).abs();
            }
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub seed: u64,
    pub scheme: Scheme,
    pub round: usize,
    pub player: String,
    pub role: String,
    pub utility: f64,
    pub qote: Option<f64>,
    pub bits: f64,
    pub surprise: Option<f64>,
    pub delay: f64,
    pub misperception: f64,
    pub strategy_change: f64,
    pub misperception_change: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: Sweep,
    pub seed: u64,
    pub scheme: Scheme,
    /// Relevance error for the perception sweep, decay for the relevance sweep.
    pub x: f64,
    pub budget: f64,
    pub bits_total: f64,
    pub qote_mean: f64,
    pub rx_utility_mean: f64,
    pub qote_target: Option<f64>,
    pub within_target: Option<bool>,
    pub converged: bool,
    pub rounds: usize,
    pub config_hash: String,
}

/// Final state of one (seed, scheme) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub scheme: Scheme,
    pub report: UtilityReport,
    pub rounds: usize,
    pub converged: bool,
}

impl RunRecord {
    pub fn of(seed: u64, r: &BaselineResult) -> Self {
        Self {
            seed,
            scheme: r.scheme,
            report: r.report.clone(),
            rounds: r.rounds(),
            converged: r.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub scheme: Scheme,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

/// Linearly interpolated percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p10: percentile(&v, 10.0),
            p50: percentile(&v, 50.0),
            p90: percentile(&v, 90.0),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub runs: usize,
    pub converged: usize,
    pub rx_utility: Stats,
    pub qote: Stats,
    pub bits: Stats,
    pub rounds: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schemes: Vec<SchemeSummary>,
    /// `(naive - hypergame) / (naive - complete)` on mean RX utility.
    pub gap_closure: Option<f64>,
    /// Percentage of classical bits saved by the hypergame, on mean bits.
    pub bit_reduction_pct: Option<f64>,
}

/// Share of the naive-to-complete utility gap closed by `candidate`.
pub fn gap_closure(naive: f64, candidate: f64, complete: f64) -> Option<f64> {
    let den = naive - complete;
    (den.abs() > 1e-12).then(|| (naive - candidate) / den)
}

fn finite_mean(v: &[f64]) -> f64 {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if f.is_empty() {
        f64::INFINITY
    } else {
        f.iter().sum::<f64>() / f.len() as f64
    }
}

pub fn summarize(records: &[RunRecord]) -> Result<Summary> {
    let first = records.first().ok_or_else(|| Error::Parse("no runs to summarize".into()))?;
    let shape = (first.report.tx_utilities.len(), first.report.rx_utilities.len());
    for r in records {
        let rp = &r.report;
        let ok = (rp.tx_utilities.len(), rp.rx_utilities.len()) == shape
            && rp.qote.len() == shape.1
            && rp.expected_bits.len() == shape.0;
        if !ok {
            return Err(Error::Parse(format!("schema mismatch in run (seed {}, {})", r.seed, r.scheme)));
        }
    }
    let mut schemes = Vec::new();
    for sc in Scheme::ALL {
        let rs: Vec<&RunRecord> = records.iter().filter(|r| r.scheme == sc).collect();
        if rs.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&RunRecord) -> f64| Stats::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        schemes.push(SchemeSummary {
            scheme: sc,
            runs: rs.len(),
            converged: rs.iter().filter(|r| r.converged).count(),
            rx_utility: col(&|r| r.report.mean_rx_utility()),
            qote: col(&|r| finite_mean(&r.report.qote)),
            bits: col(&|r| r.report.bits_total()),
            rounds: col(&|r| r.rounds as f64),
        });
    }
    let find = |sc: Scheme| schemes.iter().find(|x| x.scheme == sc);
    let gap = match (find(Scheme::NaiveMsse), find(Scheme::Hypergame), find(Scheme::CompleteInformation)) {
        (Some(n), Some(h), Some(c)) => gap_closure(n.rx_utility.mean, h.rx_utility.mean, c.rx_utility.mean),
        _ => None,
    };
    let red = match (find(Scheme::Hypergame), find(Scheme::Classical)) {
        (Some(h), Some(c)) if c.bits.mean > 0.0 => Some(100.0 * (c.bits.mean - h.bits.mean) / c.bits.mean),
        _ => None,
    };
    Ok(Summary {
        schemes,
        gap_closure: gap,
        bit_reduction_pct: red,
    })
}

/// Summary file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub summary: Option<Summary>,
    pub failures: Vec<Failure>,
}

/// Ordered parallel map over a worker pool.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                sc.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break local;
                        }
                        local.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Misperception held by each player (summed over the pairs it perceives),
/// in [`Player::all`] order.
pub fn perceiver_totals(s: &Scenario, per_pair: &[f64]) -> Vec<f64> {
    let players = Player::all(s);
    let mut out = vec![0.0; players.len()];
    for (pair, m) in Pair::all(s).into_iter().zip(per_pair) {
        if let Some(i) = players.iter().position(|p| *p == pair.perceiver) {
            out[i] += m;
        }
    }
    out
}

fn trace_rows(s: &Scenario, seed: u64, r: &BaselineResult, hash: &str) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    for rec in &r.trace {
        let held = perceiver_totals(s, &rec.misperception);
        for (p, u) in rec.report.rows(rec.round).into_iter().enumerate() {
            rows.push(TraceRow {
                seed,
                scheme: r.scheme,
                round: u.iter,
                player: u.player,
                role: u.role,
                utility: u.utility,
                qote: u.qote,
                bits: u.bits,
                surprise: u.surprise,
                delay: u.delay,
                misperception: held.get(p).copied().unwrap_or(0.0),
                strategy_change: rec.strategy_change,
                misperception_change: rec.misperception_change,
                config_hash: hash.to_string(),
            });
        }
    }
    rows
}

fn sweep_row(sweep: Sweep, seed: u64, x: f64, s: &Scenario, r: &BaselineResult, hash: &str) -> SweepRow {
    SweepRow {
        sweep,
        seed,
        scheme: r.scheme,
        x,
        budget: s.bit_budget,
        bits_total: r.bits_total,
        qote_mean: finite_mean(&r.qote),
        rx_utility_mean: r.report.mean_rx_utility(),
        qote_target: None,
        within_target: None,
        converged: r.converged,
        rounds: r.rounds(),
        config_hash: hash.to_string(),
    }
}

fn perception_sweep(cfg: &ExperimentConfig, seed: u64, sc: Scheme, hash: &str) -> Result<Vec<SweepRow>> {
    let s = scenario_for(&cfg.source, seed, None)?;
    PERCEPTION_MIX
        .iter()
        .map(|&t| {
            let p = mixed_perceptions(&s, t);
            let x = relevance_error(&s, &p);
            let r = run_scheme_from(&s, sc, &cfg.engine, p)?;
            Ok(sweep_row(Sweep::Perception, seed, x, &s, &r, hash))
        })
        .collect()
}

/// Smallest budget (by bisection) whose QoTE is within tolerance of `target`.
pub fn budget_for_qote(s: &Scenario, sc: Scheme, engine: &EngineConfig, target: f64) -> Result<(Scenario, BaselineResult, bool)> {
    let eval = |b: f64| -> Result<(Scenario, BaselineResult)> {
        let mut t = s.clone();
        t.bit_budget = b;
        let r = run_scheme(&t, sc, engine)?;
        Ok((t, r))
    };
    let near = |q: f64| (q - target).abs() <= QOTE_TOLERANCE * target;
    let hi_budget = (s.num_tx * s.concepts_per_tx) as f64 * s.bit_alphabet_max as f64;
    let top = eval(hi_budget)?;
    let q_top = finite_mean(&top.1.qote);
    if q_top < target && !near(q_top) {
        return Ok((top.0, top.1, false));
    }
    let (mut lo, mut hi) = (0.0, hi_budget);
    let mut best = top;
    for _ in 0..BUDGET_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let cand = eval(mid)?;
        let q = finite_mean(&cand.1.qote);
        if q >= target || near(q) {
            hi = mid;
            let done = near(q);
            best = cand;
            if done {
                break;
            }
        } else {
            lo = mid;
        }
    }
    let ok = near(finite_mean(&best.1.qote));
    Ok((best.0, best.1, ok))
}

/// Lowest QoTE over the sweep's decays at the scenario's own budget, so
/// every decay can reach it.
fn default_qote_target(cfg: &ExperimentConfig, seed: u64, sc: Scheme) -> Result<f64> {
    let mut target = f64::INFINITY;
    for &c in &RELEVANCE_DECAYS {
        let s = scenario_for(&cfg.source, seed, Some(c))?;
        target = target.min(finite_mean(&run_scheme(&s, sc, &cfg.engine)?.qote));
    }
    Ok(target)
}

fn relevance_sweep(cfg: &ExperimentConfig, seed: u64, sc: Scheme, hash: &str) -> Result<Vec<SweepRow>> {
    let target = match cfg.qote_target {
        Some(t) => t,
        None => default_qote_target(cfg, seed, sc)?,
    };
    RELEVANCE_DECAYS
        .iter()
        .map(|&c| {
            let s = scenario_for(&cfg.source, seed, Some(c))?;
            let (t, r, ok) = budget_for_qote(&s, sc, &cfg.engine, target)?;
            let mut row = sweep_row(Sweep::Relevance, seed, c, &t, &r, hash);
            row.qote_target = Some(target);
            row.within_target = Some(ok);
            Ok(row)
        })
        .collect()
}

struct JobOutput {
    seed: u64,
    scheme: Scheme,
    run: Result<(Scenario, BaselineResult)>,
    sweep: Result<Vec<SweepRow>>,
}

/// Everything an experiment produced, before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub trace: Vec<TraceRow>,
    pub sweep: Vec<SweepRow>,
    pub records: Vec<RunRecord>,
    pub failures: Vec<Failure>,
    pub summary: SummaryFile,
}

impl ExperimentOutput {
    /// Every (seed, scheme) job failed.
    pub fn all_failed(&self) -> bool {
        self.records.is_empty()
    }
}

/// Runs all jobs in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.check()?;
    let hash = cfg.hash();
    // Scenario errors are configuration errors and abort the run.
    for &seed in &cfg.seeds {
        scenario_for(&cfg.source, seed, None)?;
    }
    let jobs: Vec<(u64, Scheme)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| cfg.schemes.iter().map(move |&sc| (seed, sc)))
        .collect();
    let outputs = par_map(&jobs, |&(seed, scheme)| {
        let run = scenario_for(&cfg.source, seed, None).and_then(|s| {
            let r = run_scheme(&s, scheme, &cfg.engine)?;
            Ok((s, r))
        });
        let sweep = match cfg.sweep {
            None => Ok(Vec::new()),
            Some(Sweep::Perception) => perception_sweep(cfg, seed, scheme, &hash),
            Some(Sweep::Relevance) => relevance_sweep(cfg, seed, scheme, &hash),
        };
        JobOutput { seed, scheme, run, sweep }
    });
    let mut out = ExperimentOutput {
        trace: Vec::new(),
        sweep: Vec::new(),
        records: Vec::new(),
        failures: Vec::new(),
        summary: SummaryFile {
            config_hash: hash.clone(),
            seeds: cfg.seeds.clone(),
            summary: None,
            failures: Vec::new(),
        },
    };
    for job in outputs {
        match job.run {
            Ok((s, r)) => {
                out.trace.extend(trace_rows(&s, job.seed, &r, &hash));
                out.records.push(RunRecord::of(job.seed, &r));
            }
            Err(e) => out.failures.push(Failure {
                seed: job.seed,
                scheme: job.scheme,
                message: e.to_string(),
            }),
        }
        match job.sweep {
            Ok(rows) => out.sweep.extend(rows),
            Err(e) => out.failures.push(Failure {
                seed: job.seed,
                scheme: job.scheme,
                message: format!("sweep: {e}"),
            }),
        }
    }
    out.summary.summary = if out.records.is_empty() { None } else { Some(summarize(&out.records)?) };
    out.summary.failures = out.failures.clone();
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the experiment and writes `trace.csv`, `sweep.csv` and
/// `summary.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = execute(cfg)?;
    fs::create_dir_all(&cfg.out)?;
    if cfg.emit_trace {
        write_csv(&cfg.out.join("trace.csv"), TRACE_COLUMNS, &out.trace)?;
    }
    if cfg.emit_sweep {
        write_csv(&cfg.out.join("sweep.csv"), SWEEP_COLUMNS, &out.sweep)?;
    }
    if cfg.emit_summary {
        let json = serde_json::to_string_pretty(&out.summary)?;
        fs::write(cfg.out.join("summary.json"), json + "\n")?;
    }
    Ok(out)
}
