//! Reference schemes run through the same round loop as the hypergame.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergame::{run_from, EngineConfig, HypergameState, RoundRecord, RunResult};
use crate::perception::PerceptionState;
use crate::scenario::Scenario;
use crate::strategy::{RxStrategy, TxStrategy};
use crate::utilities::UtilityReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Hypergame,
    CompleteInformation,
    NaiveMsse,
    Classical,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Hypergame,
        Scheme::CompleteInformation,
        Scheme::NaiveMsse,
        Scheme::Classical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Hypergame => "hypergame",
            Scheme::CompleteInformation => "complete",
            Scheme::NaiveMsse => "naive",
            Scheme::Classical => "classical",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(v: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == v.trim())
            .ok_or_else(|| Error::Parse(format!("unknown scheme {v:?} (expected hypergame, complete, naive or classical)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub scheme: Scheme,
    pub tx: Vec<TxStrategy>,
    pub rx: Vec<RxStrategy>,
    pub report: UtilityReport,
    pub bits_total: f64,
    pub qote: Vec<f64>,
    pub converged: bool,
    pub trace: Vec<RoundRecord>,
    pub state: HypergameState,
}

impl BaselineResult {
    fn from_run(scheme: Scheme, run: RunResult) -> Result<Self> {
        let report = run
            .final_report()
            .cloned()
            .ok_or_else(|| Error::Solver(format!("{scheme}: no rounds were played")))?;
        Ok(Self {
            scheme,
            tx: run.state.tx.clone(),
            rx: run.state.rx.clone(),
            bits_total: report.bits_total(),
            qote: report.qote.clone(),
            report,
            converged: run.converged,
            trace: run.trace,
            state: run.state,
        })
    }

    pub fn rounds(&self) -> usize {
        self.trace.len()
    }
}

/// Perceptions of a TX that treats every concept as fully relevant.
pub fn relevance_blind(s: &Scenario) -> PerceptionState {
    PerceptionState::relevance_blind(s)
}

/// The hypergame itself, in baseline form.
pub fn solve_hypergame(s: &Scenario, cfg: &EngineConfig) -> Result<BaselineResult> {
    run_scheme_from(s, Scheme::Hypergame, cfg, PerceptionState::initial(s, cfg.initial))
}

/// Round loop with every perception pinned to the truth.
pub fn solve_complete_information(s: &Scenario, cfg: &EngineConfig) -> Result<BaselineResult> {
    run_scheme_from(s, Scheme::CompleteInformation, cfg, PerceptionState::initial(s, cfg.initial))
}

/// Round loop with perceptions held at `fixed_perception` throughout.
pub fn solve_naive_msse(s: &Scenario, fixed_perception: &PerceptionState, cfg: &EngineConfig) -> Result<BaselineResult> {
    run_scheme_from(s, Scheme::NaiveMsse, cfg, fixed_perception.clone())
}

/// Receivers only accept or drop; everything else as in the hypergame.
pub fn solve_classical_no_reasoning(s: &Scenario, cfg: &EngineConfig) -> Result<BaselineResult> {
    run_scheme_from(s, Scheme::Classical, cfg, PerceptionState::initial(s, cfg.initial))
}

/// Engine settings a scheme imposes on top of `cfg`.
pub fn scheme_config(scheme: Scheme, cfg: &EngineConfig) -> EngineConfig {
    let mut c = cfg.clone();
    match scheme {
        Scheme::Hypergame => {}
        Scheme::CompleteInformation => c.pin_truth = true,
        Scheme::NaiveMsse => {
            c.learning = false;
            c.pin_truth = false;
        }
        Scheme::Classical => c.reasoning = false,
    }
    c
}

/// Runs one scheme from the given starting perceptions (held fixed by the
/// naive scheme, overwritten by complete information).
pub fn run_scheme_from(s: &Scenario, scheme: Scheme, cfg: &EngineConfig, p: PerceptionState) -> Result<BaselineResult> {
    let c = scheme_config(scheme, cfg);
    let run = run_from(s, &c, HypergameState::new(s, p))?;
    BaselineResult::from_run(scheme, run)
}

/// Runs one scheme with its default perceptions.
pub fn run_scheme(s: &Scenario, scheme: Scheme, cfg: &EngineConfig) -> Result<BaselineResult> {
    match scheme {
        Scheme::Hypergame => solve_hypergame(s, cfg),
        Scheme::CompleteInformation => solve_complete_information(s, cfg),
        Scheme::NaiveMsse => solve_naive_msse(s, &relevance_blind(s), cfg),
        Scheme::Classical => solve_classical_no_reasoning(s, cfg),
    }
}
