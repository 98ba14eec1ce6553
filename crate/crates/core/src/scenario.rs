//! Problem instance for the multi-user semantic communication game.
//!
//! A [`Scenario`] holds everything the solvers need: the concepts each
//! transmitter extracts, every receiver's task (relevance weights and
//! reasoning workloads), the channel abstraction per link, the bit budget,
//! utility weights, penalties and solver tolerances. Scenarios are immutable
//! once built and serialize to TOML with unknown keys rejected.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// One semantic concept extracted at a transmitter, modeled as a Gaussian
/// scalar source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Concept {
    pub mean: f64,
    pub variance: f64,
}

/// Task of one receiver: relevance of every transmitter's concepts and the
/// cycles needed to reason each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// `relevance[k][r]`, weight of concept `r` of TX `k` in `[0, 1]`.
    pub relevance: Vec<Vec<f64>>,
    /// `compute_cost[k][r]`, cycles to reason concept `r` of TX `k`.
    pub compute_cost: Vec<Vec<f64>>,
    /// Local reasoning capacity, cycles/s.
    pub local_capacity: f64,
    /// Cycles/s reserved for this receiver at the cloud server.
    pub cc_share: f64,
}

impl TaskSpec {
    /// Total cycles needed to reason every concept of TX `k`.
    pub fn link_workload(&self, k: usize) -> f64 {
        self.compute_cost[k].iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkChannel {
    /// Multiplier on the source variance giving the reconstruction error
    /// variance on this link at zero allocated bits.
    pub noise_variance: f64,
    /// Probability that a concept sent on this link is decoded.
    pub decode_reliability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcLink {
    /// Std of the zero-mean Gaussian whose magnitude is the RX-to-cloud gain.
    pub channel_gain_std: f64,
    /// Transmit power towards the cloud server, W.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSet {
    /// `links[k][j]` for the TX `k` to RX `j` link.
    pub links: Vec<Vec<LinkChannel>>,
    /// `cc_links[j]` for the RX `j` to cloud link.
    pub cc_links: Vec<CcLink>,
}

/// Numerical knobs shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub bisection_tol: f64,
    pub fixedpoint_tol: f64,
    pub fd_step: f64,
    pub damping: f64,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            bisection_tol: 1e-9,
            fixedpoint_tol: 1e-9,
            fd_step: 1e-6,
            damping: 0.5,
            max_iters: 500,
        }
    }
}

/// How the accept probability reads the tolerance radius `accept_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AcceptRule {
    /// Accept when the squared error is within the tolerated radius.
    #[default]
    WithinTolerance,
    /// Accept with probability `P(err^2 >= delta)`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub num_tx: usize,
    pub num_rx: usize,
    pub concepts_per_tx: usize,
    pub bit_alphabet_max: u32,
    /// Network-wide budget on expected relevance-weighted bits.
    pub bit_budget: f64,
    /// Bandwidth of the RX-to-cloud links, Hz.
    pub bandwidth: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_density: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau_max: f64,
    pub drop_penalty: f64,
    pub reasoning_failure_penalty: f64,
    pub rate_distortion_scale: f64,
    pub accept_threshold: f64,
    pub cc_capacity: f64,
    pub learning_rate: f64,
    pub rng_seed: u64,
    /// Reasoned-concept distortion relative to the communication distortion.
    pub kappa_local: f64,
    pub kappa_cc: f64,
    #[serde(default)]
    pub accept_rule: AcceptRule,
    pub tolerances: Tolerances,
    /// `concepts[k][r]`.
    pub concepts: Vec<Vec<Concept>>,
    /// `tasks[j]`.
    pub tasks: Vec<TaskSpec>,
    pub channels: ChannelSet,
}

/// Counts that fix the size of a generated scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub num_tx: usize,
    pub num_rx: usize,
    pub concepts_per_tx: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            num_tx: 2,
            num_rx: 2,
            concepts_per_tx: 4,
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = Error;

    /// Parses `TXxRXxD`, e.g. `2x2x4`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("shape `{s}` is not TXxRXxD")));
        }
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad count `{p}` in shape `{s}`")))
        };
        Ok(Shape {
            num_tx: parse(parts[0])?,
            num_rx: parse(parts[1])?,
            concepts_per_tx: parse(parts[2])?,
        })
    }
}

/// Scalar parameters applied by [`generate_with`]. The drawn quantities
/// (means, relevance permutations, channel qualities, workloads) come from
/// the seed; everything here is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub bit_alphabet_max: u32,
    pub bit_budget: f64,
    pub bandwidth: f64,
    pub noise_density: f64,
    pub alpha1: f64,
    pub tau_max: f64,
    pub drop_penalty: f64,
    pub reasoning_failure_penalty: f64,
    pub rate_distortion_scale: f64,
    pub accept_threshold: f64,
    pub cc_capacity: f64,
    pub local_capacity: f64,
    pub learning_rate: f64,
    pub kappa_local: f64,
    pub kappa_cc: f64,
    pub cc_power: f64,
    pub cc_gain_std: f64,
    /// Per-concept reasoning workload is drawn from this range, cycles.
    pub compute_cost_range: (f64, f64),
    pub decode_reliability_range: (f64, f64),
    pub noise_variance_range: (f64, f64),
    pub tolerances: Tolerances,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            bit_alphabet_max: 8,
            bit_budget: 28.0,
            bandwidth: 200.0,
            noise_density: 1e-3,
            alpha1: 0.05,
            tau_max: 0.2,
            drop_penalty: 1.0,
            reasoning_failure_penalty: 5.0,
            rate_distortion_scale: 4.0,
            accept_threshold: 0.1,
            cc_capacity: 4e8,
            local_capacity: 1e8,
            learning_rate: 1e-2,
            kappa_local: 1.0,
            kappa_cc: 1.0,
            cc_power: 1.0,
            cc_gain_std: 1.0,
            compute_cost_range: (1e6, 5e6),
            decode_reliability_range: (0.6, 0.95),
            noise_variance_range: (0.5, 1.5),
            tolerances: Tolerances::default(),
        }
    }
}

/// Generates a scenario with [`ScenarioParams::default`].
pub fn generate_scenario(seed: u64, shape: Shape, decay: f64) -> Result<Scenario> {
    generate_with(&ScenarioParams::default(), seed, shape, decay)
}

/// Draws a random scenario: concept means uniform on `[0, 10]` with unit
/// variance, and for every (RX, TX) pair relevance `decay^i` assigned to the
/// concepts through a seeded permutation.
pub fn generate_with(
    params: &ScenarioParams,
    seed: u64,
    shape: Shape,
    decay: f64,
) -> Result<Scenario> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::Config(format!(
            "relevance decay must lie in (0, 1], got {decay}"
        )));
    }
    if shape.num_tx == 0 || shape.num_rx == 0 || shape.concepts_per_tx == 0 {
        return Err(Error::Config(format!(
            "all counts must be at least 1, got {}x{}x{}",
            shape.num_tx, shape.num_rx, shape.concepts_per_tx
        )));
    }
    let Shape {
        num_tx,
        num_rx,
        concepts_per_tx: d,
    } = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let concepts: Vec<Vec<Concept>> = (0..num_tx)
        .map(|_| {
            (0..d)
                .map(|_| Concept {
                    mean: rng.gen_range(0.0..=10.0),
                    variance: 1.0,
                })
                .collect()
        })
        .collect();

    let profile: Vec<f64> = (0..d).map(|i| decay.powi(i as i32)).collect();
    let cc_share = params.cc_capacity / num_rx as f64;
    let (f_lo, f_hi) = params.compute_cost_range;
    let tasks: Vec<TaskSpec> = (0..num_rx)
        .map(|_| {
            let relevance = (0..num_tx)
                .map(|_| {
                    let mut order: Vec<usize> = (0..d).collect();
                    order.shuffle(&mut rng);
                    let mut row = vec![0.0; d];
                    for (rank, &r) in order.iter().enumerate() {
                        row[r] = profile[rank];
                    }
                    row
                })
                .collect();
            let compute_cost = (0..num_tx)
                .map(|_| (0..d).map(|_| rng.gen_range(f_lo..=f_hi)).collect())
                .collect();
            TaskSpec {
                relevance,
                compute_cost,
                local_capacity: params.local_capacity,
                cc_share,
            }
        })
        .collect();

    let (p_lo, p_hi) = params.decode_reliability_range;
    let (v_lo, v_hi) = params.noise_variance_range;
    let links = (0..num_tx)
        .map(|_| {
            (0..num_rx)
                .map(|_| LinkChannel {
                    noise_variance: rng.gen_range(v_lo..=v_hi),
                    decode_reliability: rng.gen_range(p_lo..=p_hi),
                })
                .collect()
        })
        .collect();
    let cc_links = (0..num_rx)
        .map(|_| CcLink {
            channel_gain_std: params.cc_gain_std,
            power: params.cc_power,
        })
        .collect();

    Ok(Scenario {
        num_tx,
        num_rx,
        concepts_per_tx: d,
        bit_alphabet_max: params.bit_alphabet_max,
        bit_budget: params.bit_budget,
        bandwidth: params.bandwidth,
        noise_density: params.noise_density,
        alpha1: params.alpha1,
        alpha2: 1.0 - params.alpha1,
        tau_max: params.tau_max,
        drop_penalty: params.drop_penalty,
        reasoning_failure_penalty: params.reasoning_failure_penalty,
        rate_distortion_scale: params.rate_distortion_scale,
        accept_threshold: params.accept_threshold,
        cc_capacity: params.cc_capacity,
        learning_rate: params.learning_rate,
        rng_seed: seed,
        kappa_local: params.kappa_local,
        kappa_cc: params.kappa_cc,
        accept_rule: AcceptRule::WithinTolerance,
        tolerances: params.tolerances,
        concepts,
        tasks,
        channels: ChannelSet { links, cc_links },
    })
}

/// One violated invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Lists every invariant the scenario breaks. An empty list means valid.
pub fn validate(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |field: &str, message: String| {
        out.push(Violation {
            field: field.to_string(),
            message,
        })
    };

    if (s.alpha1 + s.alpha2 - 1.0).abs() > 1e-9 {
        flag(
            "alpha1+alpha2",
            format!("alpha sum ≠ 1 ({} + {})", s.alpha1, s.alpha2),
        );
    }
    for (name, v) in [("alpha1", s.alpha1), ("alpha2", s.alpha2)] {
        if !(0.0..=1.0).contains(&v) {
            flag(name, format!("must lie in [0, 1], got {v}"));
        }
    }
    if s.num_tx == 0 || s.num_rx == 0 || s.concepts_per_tx == 0 {
        flag("shape", "counts must be at least 1".into());
    }
    if s.bit_alphabet_max < 1 {
        flag("bit_alphabet_max", "must be at least 1".into());
    }
    let positive = [
        ("bit_budget", s.bit_budget),
        ("bandwidth", s.bandwidth),
        ("noise_density", s.noise_density),
        ("tau_max", s.tau_max),
        ("drop_penalty", s.drop_penalty),
        ("reasoning_failure_penalty", s.reasoning_failure_penalty),
        ("rate_distortion_scale", s.rate_distortion_scale),
        ("accept_threshold", s.accept_threshold),
        ("cc_capacity", s.cc_capacity),
        ("learning_rate", s.learning_rate),
        ("kappa_local", s.kappa_local),
        ("kappa_cc", s.kappa_cc),
        ("tolerances.bisection_tol", s.tolerances.bisection_tol),
        ("tolerances.fixedpoint_tol", s.tolerances.fixedpoint_tol),
        ("tolerances.fd_step", s.tolerances.fd_step),
        ("tolerances.damping", s.tolerances.damping),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            flag(name, format!("must be finite and > 0, got {v}"));
        }
    }
    if s.tolerances.damping > 1.0 {
        flag("tolerances.damping", "must be at most 1".into());
    }
    if s.tolerances.max_iters == 0 {
        flag("tolerances.max_iters", "must be at least 1".into());
    }

    if s.concepts.len() != s.num_tx {
        flag("concepts", format!("expected {} TX rows", s.num_tx));
    }
    for (k, row) in s.concepts.iter().enumerate() {
        if row.len() != s.concepts_per_tx {
            flag(
                &format!("concepts[{k}]"),
                format!("expected {} concepts", s.concepts_per_tx),
            );
        }
        for (r, c) in row.iter().enumerate() {
            if !(c.variance > 0.0) {
                flag(&format!("concepts[{k}][{r}].variance"), "must be > 0".into());
            }
        }
    }

    if s.tasks.len() != s.num_rx {
        flag("tasks", format!("expected {} RX tasks", s.num_rx));
    }
    let mut share_sum = 0.0;
    for (j, t) in s.tasks.iter().enumerate() {
        share_sum += t.cc_share;
        let shape_ok = t.relevance.len() == s.num_tx
            && t.compute_cost.len() == s.num_tx
            && t
                .relevance
                .iter()
                .chain(t.compute_cost.iter())
                .all(|row| row.len() == s.concepts_per_tx);
        if !shape_ok {
            flag(
                &format!("tasks[{j}]"),
                format!(
                    "relevance and compute_cost must be {}x{}",
                    s.num_tx, s.concepts_per_tx
                ),
            );
        }
        if t.relevance.iter().flatten().any(|w| !(0.0..=1.0).contains(w)) {
            flag(&format!("tasks[{j}].relevance"), "weights must lie in [0, 1]".into());
        }
        if t.compute_cost.iter().flatten().any(|f| !(*f > 0.0)) {
            flag(&format!("tasks[{j}].compute_cost"), "cycles must be > 0".into());
        }
        if !(t.local_capacity > 0.0) {
            flag(&format!("tasks[{j}].local_capacity"), "must be > 0".into());
        }
        if !(t.cc_share > 0.0) {
            flag(&format!("tasks[{j}].cc_share"), "must be > 0".into());
        }
    }
    if share_sum > s.cc_capacity * (1.0 + 1e-12) {
        flag(
            "tasks.cc_share",
            format!(
                "CC share oversubscribed: {share_sum} > cc_capacity {}",
                s.cc_capacity
            ),
        );
    }

    let links = &s.channels.links;
    if links.len() != s.num_tx || links.iter().any(|row| row.len() != s.num_rx) {
        flag(
            "channels.links",
            format!("expected {}x{} links", s.num_tx, s.num_rx),
        );
    }
    for (k, row) in links.iter().enumerate() {
        for (j, l) in row.iter().enumerate() {
            if !(l.noise_variance > 0.0) {
                flag(&format!("channels.links[{k}][{j}].noise_variance"), "must be > 0".into());
            }
            if !(l.decode_reliability > 0.0 && l.decode_reliability <= 1.0) {
                flag(
                    &format!("channels.links[{k}][{j}].decode_reliability"),
                    "must lie in (0, 1]".into(),
                );
            }
        }
    }
    if s.channels.cc_links.len() != s.num_rx {
        flag("channels.cc_links", format!("expected {} links", s.num_rx));
    }
    for (j, c) in s.channels.cc_links.iter().enumerate() {
        if !(c.channel_gain_std > 0.0) {
            flag(&format!("channels.cc_links[{j}].channel_gain_std"), "must be > 0".into());
        }
        if !(c.power > 0.0) {
            flag(&format!("channels.cc_links[{j}].power"), "must be > 0".into());
        }
    }
    out
}

impl Scenario {
    /// Error variance of concept `r` of TX `k` as seen at RX `j` with no bits.
    pub fn error_variance(&self, k: usize, j: usize, r: usize) -> f64 {
        self.concepts[k][r].variance * self.channels.links[k][j].noise_variance
    }

    pub fn decode_reliability(&self, k: usize, j: usize) -> f64 {
        self.channels.links[k][j].decode_reliability
    }

    pub fn relevance(&self, j: usize, k: usize, r: usize) -> f64 {
        self.tasks[j].relevance[k][r]
    }

    /// Number of bit actions per concept, `A_max + 1`.
    pub fn bit_actions(&self) -> usize {
        self.bit_alphabet_max as usize + 1
    }

    pub fn num_players(&self) -> usize {
        self.num_tx + self.num_rx
    }

    /// Returns `self` if [`validate`] finds nothing, otherwise a config error
    /// listing every violation.
    pub fn validated(self) -> Result<Self> {
        let v = validate(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            let msg: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            Err(Error::Config(msg.join("; ")))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
