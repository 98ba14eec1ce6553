//! Realized rounds and the misperception function built on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{link_rate, sample_gain, sample_link};
use crate::leader::LeaderView;
use crate::perception::{Pair, PerceptionState, Player};
use crate::scenario::Scenario;
use crate::strategy::{ActionProbs, RxAction, RxStrategy, TxStrategy};

/// What happened on link `(k, j)` in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkOutcome {
    pub action: RxAction,
    pub decoded: Vec<bool>,
    pub sq_errors: Vec<f64>,
    /// Seconds; zero unless the link was reasoned.
    pub delay: f64,
    /// Delay within the deadline.
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// `bits[k][r]` sent this round.
    pub bits: Vec<Vec<usize>>,
    /// `links[k][j]`.
    pub links: Vec<Vec<LinkOutcome>>,
}

impl Outcome {
    pub fn bits_sent(&self, k: usize) -> usize {
        self.bits[k].iter().sum()
    }
}

/// Inverse-CDF draw; consumes exactly one uniform regardless of `p`.
fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > 0.0 {
            last = i;
        }
        acc += x;
        if u < acc {
            return i;
        }
    }
    last
}

/// `n` independent rounds. The number of draws per round does not depend on
/// the strategies, so a fixed seed gives common random numbers across calls.
pub fn sample_outcomes<R: Rng + ?Sized>(
    s: &Scenario,
    tx: &[TxStrategy],
    rx: &[RxStrategy],
    rng: &mut R,
    n: usize,
) -> Vec<Outcome> {
    (0..n).map(|_| sample_one(s, tx, rx, rng)).collect()
}

fn sample_one<R: Rng + ?Sized>(s: &Scenario, tx: &[TxStrategy], rx: &[RxStrategy], rng: &mut R) -> Outcome {
    let bits: Vec<Vec<usize>> = tx
        .iter()
        .map(|t| t.concepts.iter().map(|row| draw(row, rng)).collect())
        .collect();
    let links = (0..s.num_tx)
        .map(|k| {
            (0..s.num_rx)
                .map(|j| {
                    let action = RxAction::from_index(draw(&rx[j].links[k], rng)).expect("four actions");
                    let task = &s.tasks[j];
                    let p = s.decode_reliability(k, j);
                    let mut decoded = Vec::with_capacity(s.concepts_per_tx);
                    let mut sq_errors = Vec::with_capacity(s.concepts_per_tx);
                    for r in 0..s.concepts_per_tx {
                        let c = s.concepts[k][r].mean;
                        let wb = task.relevance[k][r] * bits[k][r] as f64;
                        let d = sample_link(c, s.error_variance(k, j, r), p, wb, s.rate_distortion_scale, rng);
                        decoded.push(d.decoded);
                        sq_errors.push((d.estimate - c).powi(2));
                    }
                    let cc = s.channels.cc_links[j];
                    let gain = sample_gain(cc.channel_gain_std, rng);
                    let delay = match action {
                        RxAction::LocalReason => (0..s.concepts_per_tx)
                            .filter(|&r| decoded[r])
                            .map(|r| task.compute_cost[k][r] / task.local_capacity)
                            .sum(),
                        RxAction::CloudReason => {
                            let rate = link_rate(gain, cc.power, s.bandwidth, s.noise_density).unwrap_or(0.0);
                            (0..s.concepts_per_tx)
                                .filter(|&r| decoded[r])
                                .map(|r| {
                                    let up = task.relevance[k][r] * bits[k][r] as f64;
                                    let t_up = if up == 0.0 { 0.0 } else { up / rate };
                                    t_up + task.compute_cost[k][r] / task.cc_share
                                })
                                .sum()
                        }
                        _ => 0.0,
                    };
                    LinkOutcome {
                        action,
                        decoded,
                        sq_errors,
                        delay,
                        success: delay <= s.tau_max,
                    }
                })
                .collect()
        })
        .collect();
    Outcome { bits, links }
}

/// Realized RX cost of one link for a given action and relevance row.
pub fn realized_link_cost(s: &Scenario, lo: &LinkOutcome, relevance: &[f64]) -> f64 {
    let e: f64 = match lo.action {
        RxAction::Drop => s.drop_penalty * relevance.iter().sum::<f64>(),
        a => {
            let kappa = match a {
                RxAction::LocalReason => s.kappa_local,
                RxAction::CloudReason => s.kappa_cc,
                _ => 1.0,
            };
            kappa * relevance.iter().zip(&lo.sq_errors).map(|(w, e)| w * e).sum::<f64>()
        }
    };
    if lo.success {
        e
    } else {
        s.reasoning_failure_penalty
    }
}

/// RX `j`'s outcome utility: each link's realized cost weighted by the
/// probability the given strategy puts on the realized action.
pub fn rx_outcome_utility(
    s: &Scenario,
    j: usize,
    out: &Outcome,
    links: &[ActionProbs],
    relevance: &[&[f64]],
) -> f64 {
    (0..s.num_tx)
        .map(|k| {
            let lo = &out.links[k][j];
            links[k][lo.action.index()] * realized_link_cost(s, lo, relevance[k])
        })
        .sum()
}

/// TX outcome utility: each concept's realized cost weighted by the
/// probability of the realized bits.
pub fn tx_outcome_utility(view: &LeaderView, out: &Outcome, strategy: &TxStrategy) -> f64 {
    out.bits[view.k]
        .iter()
        .enumerate()
        .map(|(r, &a)| strategy.concepts[r][a] * view.concept_cost(r, a as f64))
        .sum()
}

/// Everything fixed while misperceptions are evaluated in one round.
#[derive(Debug, Clone)]
pub struct MisperceptionContext<'a> {
    pub scenario: &'a Scenario,
    pub tx: &'a [TxStrategy],
    pub rx: &'a [RxStrategy],
    pub outcomes: &'a [Outcome],
    /// Each TX's own perceived game, which fixes its per-concept costs.
    pub views: Vec<LeaderView>,
    /// `tx_costs[k][r][a]`: TX `k`'s cost of sending concept `r` with `a` bits.
    tx_costs: Vec<Vec<Vec<f64>>>,
    /// `link_costs[i][k][j]`: realized cost of link `(k, j)` in outcome `i`
    /// under true relevance.
    link_costs: Vec<Vec<Vec<f64>>>,
}

impl<'a> MisperceptionContext<'a> {
    pub fn new(
        s: &'a Scenario,
        tx: &'a [TxStrategy],
        rx: &'a [RxStrategy],
        outcomes: &'a [Outcome],
        perceptions: &PerceptionState,
    ) -> Self {
        let views: Vec<LeaderView> = (0..s.num_tx).map(|k| LeaderView::new(s, k, &perceptions.tx[k])).collect();
        let tx_costs = views
            .iter()
            .map(|v| {
                (0..v.concepts())
                    .map(|r| (0..s.bit_actions()).map(|a| v.concept_cost(r, a as f64)).collect())
                    .collect()
            })
            .collect();
        let link_costs = outcomes
            .iter()
            .map(|o| {
                (0..s.num_tx)
                    .map(|k| {
                        (0..s.num_rx)
                            .map(|j| realized_link_cost(s, &o.links[k][j], &s.tasks[j].relevance[k]))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            scenario: s,
            tx,
            rx,
            outcomes,
            views,
            tx_costs,
            link_costs,
        }
    }

    /// `sum_i |u_B(s_i; own game) - u_B(s_i; own game with A's view of B)|`.
    pub fn misperception(&self, pair: Pair, p: &PerceptionState) -> f64 {
        self.residuals(pair, p).iter().map(|r| r.abs()).sum()
    }

    /// The signed per-outcome differences inside [`Self::misperception`].
    pub fn residuals(&self, pair: Pair, p: &PerceptionState) -> Vec<f64> {
        let s = self.scenario;
        match (pair.subject, pair.perceiver) {
            (Player::Rx(j), perceiver) => {
                let truth = &self.rx[j].links;
                self.outcomes
                    .iter()
                    .zip(&self.link_costs)
                    .map(|(o, costs)| {
                        (0..s.num_tx)
                            .map(|k| {
                                let a = o.links[k][j].action.index();
                                let c = costs[k][j];
                                let seen = match perceiver {
                                    Player::Tx(i) if i == k => {
                                        let lo = &o.links[k][j];
                                        p.tx[k].rx_links[j][a] * realized_link_cost(s, lo, &p.tx[k].relevance[j])
                                    }
                                    Player::Tx(_) => truth[k][a] * c,
                                    Player::Rx(i) => p.rx[i].other_rx[j].links[k][a] * c,
                                };
                                truth[k][a] * c - seen
                            })
                            .sum()
                    })
                    .collect()
            }
            (Player::Tx(k), perceiver) => {
                let seen = match perceiver {
                    Player::Tx(i) => &p.tx[i].other_tx[k],
                    Player::Rx(j) => &p.rx[j].tx[k],
                };
                let costs = &self.tx_costs[k];
                let truth = &self.tx[k];
                self.outcomes
                    .iter()
                    .map(|o| {
                        o.bits[k]
                            .iter()
                            .enumerate()
                            .map(|(r, &a)| (truth.concepts[r][a] - seen.concepts[r][a]) * costs[r][a])
                            .sum()
                    })
                    .collect()
            }
        }
    }

    pub fn all(&self, p: &PerceptionState) -> Vec<f64> {
        Pair::all(self.scenario).into_iter().map(|pair| self.misperception(pair, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::PerceptionInit;
    use crate::scenario::{generate_scenario, Shape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draw_consumes_one_uniform() {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        draw(&[0.5, 0.5], &mut a);
        draw(&[1.0, 0.0, 0.0], &mut b);
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn deterministic_strategies_repeat() {
        let mut s = generate_scenario(2, Shape::default(), 0.5).unwrap();
        for row in &mut s.channels.links {
            for l in row {
                l.decode_reliability = 1.0;
            }
        }
        let tx = vec![TxStrategy::point(4, s.bit_actions(), 3); 2];
        let rx = vec![RxStrategy::from_links(vec![[1.0, 0.0, 0.0, 0.0]; 2]); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let outs = sample_outcomes(&s, &tx, &rx, &mut rng, 20);
        for o in &outs {
            assert_eq!(o.bits, outs[0].bits);
            assert!(o.links.iter().flatten().all(|l| l.action == RxAction::Accept && l.decoded.iter().all(|d| *d)));
        }
    }

    #[test]
    fn truth_has_zero_misperception() {
        let s = generate_scenario(3, Shape::default(), 0.5).unwrap();
        let tx = vec![TxStrategy::uniform(4, s.bit_actions()); 2];
        let rx = vec![RxStrategy::from_links(vec![[0.4, 0.3, 0.2, 0.1]; 2]); 2];
        let p = PerceptionState::truth(&s, &tx, &rx);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outs = sample_outcomes(&s, &tx, &rx, &mut rng, 16);
        let ctx = MisperceptionContext::new(&s, &tx, &rx, &outs, &p);
        assert!(ctx.all(&p).iter().all(|m| *m == 0.0));
        let q = PerceptionState::initial(&s, PerceptionInit::default());
        assert!(ctx.all(&q).iter().any(|m| *m > 0.0));
    }
}
