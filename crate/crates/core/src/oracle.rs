//! Exhaustive bilevel grid search on tiny instances.
//!
//! Both players' costs depend on a TX strategy only through its expected
//! bits per concept, so the leader grid runs over those means. For every
//! leader point the follower best-responds over a grid of reasoning splits
//! (accept is fixed by the tolerance rule). Ties go to the earlier grid
//! point: fewer bits for the leader, less reasoning mass for the follower.

use serde::{Deserialize, Serialize};

use crate::baselines::solve_hypergame;
use crate::error::{Error, Result};
use crate::follower::FollowerProblem;
use crate::hypergame::EngineConfig;
use crate::leader::LeaderView;
use crate::perception::LeaderBeliefs;
use crate::scenario::{generate_scenario, Scenario, Shape};
use crate::strategy::{ActionProbs, RxStrategy, TxStrategy};
use crate::utilities::LinkModel;

pub const MAX_CONCEPTS: usize = 2;
pub const MAX_BITS: u32 = 4;
pub const MIN_RESOLUTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub tx: TxStrategy,
    pub rx: RxStrategy,
    pub means: Vec<f64>,
    pub leader_utility: f64,
    pub follower_utility: f64,
    /// Leader grid points that met the budget.
    pub feasible_points: usize,
}

fn check_size(s: &Scenario, resolution: f64) -> Result<()> {
    if s.num_tx != 1 || s.num_rx != 1 || s.concepts_per_tx > MAX_CONCEPTS || s.bit_alphabet_max > MAX_BITS {
        return Err(Error::OracleRefused(format!(
            "instance {}x{}x{} with A_max {} exceeds the bound 1x1, D <= {MAX_CONCEPTS}, A_max <= {MAX_BITS}",
            s.num_tx, s.num_rx, s.concepts_per_tx, s.bit_alphabet_max
        )));
    }
    if !(resolution >= MIN_RESOLUTION && resolution <= 1.0) {
        return Err(Error::OracleRefused(format!(
            "grid resolution {resolution} outside [{MIN_RESOLUTION}, 1]"
        )));
    }
    Ok(())
}

/// The follower's problem against a leader sending `means`, all under
/// complete information.
pub fn follower_at(s: &Scenario, means: &[f64]) -> FollowerProblem {
    let link = LinkModel::new(s, 0, 0, means.to_vec(), s.tasks[0].relevance[0].clone());
    FollowerProblem::from_links(s, 0, vec![link], 0.0)
}

/// Grid best response of the single follower.
pub fn follower_grid(prob: &FollowerProblem, steps: usize) -> (ActionProbs, f64) {
    let a0 = prob.accept[0];
    let room = (1.0 - a0).max(0.0);
    let mut best: Option<(ActionProbs, f64)> = None;
    for i in 0..=steps {
        for c in 0..=(steps - i) {
            let l = room * i as f64 / steps as f64;
            let cl = room * c as f64 / steps as f64;
            let probs = [a0, l, cl, (1.0 - a0 - l - cl).max(0.0)];
            let cand = RxStrategy::from_links(vec![probs]);
            if prob.violations(&cand).iter().any(|v| *v > 0.0) {
                continue;
            }
            let f = prob.link_cost(0, &probs);
            if best.map_or(true, |(_, b)| f < b) {
                best = Some((probs, f));
            }
        }
    }
    best.unwrap_or(([a0, 0.0, 0.0, 1.0 - a0], f64::INFINITY))
}

pub fn leader_cost(s: &Scenario, means: &[f64], rx: &ActionProbs) -> (LeaderView, f64) {
    let beliefs = LeaderBeliefs {
        rx_links: vec![*rx],
        relevance: vec![s.tasks[0].relevance[0].clone()],
        other_tx: vec![TxStrategy::from_means(means, s.bit_actions())],
    };
    let view = LeaderView::new(s, 0, &beliefs);
    let f = view.objective(means);
    (view, f)
}

/// Leader-optimal pair over the grid; the leader anticipates the follower.
pub fn brute_force_oracle(s: &Scenario, resolution: f64) -> Result<OracleResult> {
    check_size(s, resolution)?;
    let steps = (1.0 / resolution).round() as usize;
    let d = s.concepts_per_tx;
    let amax = s.bit_alphabet_max as f64;
    let mut idx = vec![0usize; d];
    let mut best: Option<(Vec<f64>, ActionProbs, f64, f64)> = None;
    let mut feasible = 0;
    loop {
        let means: Vec<f64> = idx.iter().map(|&i| amax * i as f64 / steps as f64).collect();
        let (rx, fu) = follower_grid(&follower_at(s, &means), steps);
        let (view, lu) = leader_cost(s, &means, &rx);
        if view.weighted_bits(&means) <= s.bit_budget * (1.0 + 1e-12) {
            feasible += 1;
            if best.as_ref().map_or(true, |b| lu < b.2) {
                best = Some((means, rx, lu, fu));
            }
        }
        let mut pos = 0;
        while pos < d && idx[pos] == steps {
            idx[pos] = 0;
            pos += 1;
        }
        if pos == d {
            break;
        }
        idx[pos] += 1;
    }
    let (means, rx, leader_utility, follower_utility) =
        best.ok_or_else(|| Error::Solver("oracle: no leader grid point meets the budget".into()))?;
    Ok(OracleResult {
        tx: TxStrategy::from_means(&means, s.bit_actions()),
        rx: RxStrategy::from_links(vec![rx]),
        means,
        leader_utility,
        follower_utility,
        feasible_points: feasible,
    })
}

/// Leader and follower costs of an arbitrary pair under complete information,
/// on the same scale as [`OracleResult`].
pub fn pair_utilities(s: &Scenario, tx: &TxStrategy, rx: &RxStrategy) -> (f64, f64) {
    let means = tx.means();
    let (_, lu) = leader_cost(s, &means, &rx.links[0]);
    let fu = follower_at(s, &means).cost(rx);
    (lu, fu)
}

/// Tiny instances used for the oracle comparison: seeds `0..count`,
/// alternating one and two concepts, `A_max = 4`.
pub fn tiny_fixtures(count: usize) -> Result<Vec<Scenario>> {
    (0..count as u64)
        .map(|seed| {
            let shape = Shape {
                num_tx: 1,
                num_rx: 1,
                concepts_per_tx: 1 + (seed % 2) as usize,
            };
            let mut s = generate_scenario(seed, shape, 0.5)?;
            s.bit_alphabet_max = MAX_BITS;
            s.validated()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub oracle: OracleResult,
    pub solver_leader: f64,
    pub solver_follower: f64,
    pub converged: bool,
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

impl OracleComparison {
    pub fn leader_gap(&self) -> f64 {
        rel_gap(self.solver_leader, self.oracle.leader_utility)
    }

    pub fn follower_gap(&self) -> f64 {
        rel_gap(self.solver_follower, self.oracle.follower_utility)
    }
}

/// Runs the hypergame on a tiny instance and scores it against the oracle.
pub fn compare_with_oracle(s: &Scenario, cfg: &EngineConfig, resolution: f64) -> Result<OracleComparison> {
    let oracle = brute_force_oracle(s, resolution)?;
    let run = solve_hypergame(s, cfg)?;
    let (solver_leader, solver_follower) = pair_utilities(s, &run.tx[0], &run.rx[0]);
    Ok(OracleComparison {
        oracle,
        solver_leader,
        solver_follower,
        converged: run.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64, d: usize, amax: u32) -> Scenario {
        let mut s = generate_scenario(seed, Shape { num_tx: 1, num_rx: 1, concepts_per_tx: d }, 0.5).unwrap();
        s.bit_alphabet_max = amax;
        s
    }

    #[test]
    fn refuses_large_instances() {
        let s = generate_scenario(1, Shape::default(), 0.5).unwrap();
        assert!(matches!(brute_force_oracle(&s, 0.01), Err(Error::OracleRefused(_))));
        let t = tiny(1, 2, 5);
        assert!(matches!(brute_force_oracle(&t, 0.01), Err(Error::OracleRefused(_))));
        let u = tiny(1, 1, 2);
        assert!(matches!(brute_force_oracle(&u, 0.001), Err(Error::OracleRefused(_))));
    }

    #[test]
    fn degenerate_instance_returns_one_point() {
        let s = tiny(2, 1, 1);
        let r = brute_force_oracle(&s, 0.5).unwrap();
        assert_eq!(r.means.len(), 1);
        assert!(r.tx.check(1e-12).is_ok());
    }

    #[test]
    fn ties_go_to_fewer_bits() {
        let mut s = tiny(3, 1, 2);
        s.alpha1 = 0.0;
        s.alpha2 = 1.0;
        s.channels.links[0][0].decode_reliability = 0.0;
        let r = brute_force_oracle(&s, 0.1).unwrap();
        assert_eq!(r.means, vec![0.0]);
    }
}
