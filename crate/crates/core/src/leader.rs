//! Transmitter best response: per-concept bit allocation under a shared
//! Lagrange multiplier on the network bit budget.
//!
//! A TX's perceived cost depends on each concept's strategy only through
//! its expected bits `m`:
//!
//! ```text
//! alpha1 * wbar * m + alpha2 * (V_dec + (1/J) sum_j C_j 2^(-2 w_j m / T))
//! C_j = w_j * sigma^2 / (2 ln2 * p_j * (1 - pi_drop_j))
//! ```
//!
//! The stationarity condition in `m` is solved by bisection (it reduces to
//! the logarithmic closed form for a single receiver) and the optimal mixed
//! strategy puts mass `m / A_max` on `A_max` bits and the rest on zero.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::perception::{LeaderBeliefs, PerceptionState};
use crate::scenario::Scenario;
use crate::strategy::{RxAction, TxStrategy};

/// TX `k`'s perceived game, reduced to per-concept coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderView {
    pub k: usize,
    /// `relevance[j][r]`, perceived.
    pub relevance: Vec<Vec<f64>>,
    /// `coef[j][r]`, the `C_j` above; zero for concepts that are never worth
    /// bits on that link.
    pub coef: Vec<Vec<f64>>,
    /// `surprise[r]`, concept `r`'s share of the perceived semantic surprise.
    pub surprise: Vec<f64>,
    pub amax: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub scale: f64,
}

impl LeaderView {
    pub fn new(s: &Scenario, k: usize, beliefs: &LeaderBeliefs) -> Self {
        let d = s.concepts_per_tx;
        let mut coef = vec![vec![0.0; d]; s.num_rx];
        let mut surprise = vec![0.0; d];
        for j in 0..s.num_rx {
            let p = s.decode_reliability(k, j);
            let link = &beliefs.rx_links[j];
            let q = p * (1.0 - link[RxAction::Drop.index()]);
            for r in 0..d {
                let w = beliefs.relevance[j][r];
                if q > 0.0 && w > 0.0 {
                    coef[j][r] = w * s.error_variance(k, j, r) / (2.0 * LN_2 * q);
                }
                if w > 0.0 && link[0] > 0.0 {
                    surprise[r] -= link[0] * w * p.ln();
                }
            }
        }
        Self {
            k,
            relevance: beliefs.relevance.clone(),
            coef,
            surprise,
            amax: s.bit_alphabet_max as f64,
            alpha1: s.alpha1,
            alpha2: s.alpha2,
            scale: s.rate_distortion_scale,
        }
    }

    pub fn concepts(&self) -> usize {
        self.surprise.len()
    }

    /// Budget weight of concept `r`: relevance averaged over receivers.
    pub fn mean_relevance(&self, r: usize) -> f64 {
        self.relevance.iter().map(|row| row[r]).sum::<f64>() / self.relevance.len() as f64
    }

    fn distortion_term(&self, r: usize, bits: f64) -> f64 {
        let j = self.relevance.len() as f64;
        self.relevance
            .iter()
            .zip(&self.coef)
            .map(|(w, c)| c[r] * (-2.0 * w[r] * bits / self.scale).exp2())
            .sum::<f64>()
            / j
    }

    /// Cost attributed to concept `r` when it is sent with `bits` bits.
    pub fn concept_cost(&self, r: usize, bits: f64) -> f64 {
        self.alpha1 * self.mean_relevance(r) * bits
            + self.alpha2 * (self.surprise[r] + self.distortion_term(r, bits))
    }

    /// Perceived TX cost at the given expected bits.
    pub fn objective(&self, means: &[f64]) -> f64 {
        means.iter().enumerate().map(|(r, &m)| self.concept_cost(r, m)).sum()
    }

    /// Relevance-weighted bits counted against the shared budget.
    pub fn weighted_bits(&self, means: &[f64]) -> f64 {
        means
            .iter()
            .enumerate()
            .map(|(r, m)| self.mean_relevance(r) * m)
            .sum()
    }

    /// Perceived cost plus the budget term, at a full strategy.
    pub fn lagrangian(&self, strategy: &TxStrategy, lambda: f64) -> f64 {
        let means = strategy.means();
        self.objective(&means) + lambda * self.weighted_bits(&means)
    }

    /// Derivative of the Lagrangian in concept `r`'s expected bits.
    pub fn marginal(&self, r: usize, bits: f64, lambda: f64) -> f64 {
        let j = self.relevance.len() as f64;
        let pull: f64 = self
            .relevance
            .iter()
            .zip(&self.coef)
            .map(|(w, c)| c[r] * 2.0 * LN_2 * w[r] / self.scale * (-2.0 * w[r] * bits / self.scale).exp2())
            .sum::<f64>()
            / j;
        (self.alpha1 + lambda) * self.mean_relevance(r) - self.alpha2 * pull
    }

    /// Expected bits minimizing the Lagrangian for concept `r`, in `[0, A_max]`.
    pub fn best_mean(&self, r: usize, lambda: f64) -> f64 {
        if self.mean_relevance(r) == 0.0 {
            return 0.0;
        }
        if self.marginal(r, 0.0, lambda) >= 0.0 {
            return 0.0;
        }
        if self.marginal(r, self.amax, lambda) <= 0.0 {
            return self.amax;
        }
        let (mut lo, mut hi) = (0.0, self.amax);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.marginal(r, mid, lambda) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * self.amax {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn best_means(&self, lambda: f64) -> Vec<f64> {
        (0..self.concepts()).map(|r| self.best_mean(r, lambda)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSolution {
    pub strategy: TxStrategy,
    pub lambda: f64,
    pub stationarity_residual: f64,
    /// Budget minus the bits this solve counted against it.
    pub budget_slack: f64,
    /// The budget could not be met even with every concept at zero bits.
    pub infeasible: bool,
}

/// Unnormalized probability of sending `a` bits for concept `r` of TX `k`.
pub fn closed_form_pi(
    k: usize,
    r: usize,
    a: usize,
    lambda: f64,
    perception: &PerceptionState,
    s: &Scenario,
) -> f64 {
    let view = LeaderView::new(s, k, &perception.tx[k]);
    let amax = s.bit_alphabet_max as usize;
    let m = view.best_mean(r, lambda);
    if a == amax {
        m / amax as f64
    } else if a == 0 {
        1.0 - m / amax as f64
    } else {
        0.0
    }
}

/// Clips to `[0, inf)` and renormalizes; infinite entries share the mass;
/// all-zero input falls back to a point mass on zero bits.
pub fn normalize_strategy(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() || raw.iter().any(|v| v.is_nan()) {
        return Err(Error::Solver(format!("cannot normalize {raw:?}")));
    }
    let inf = raw.iter().filter(|v| **v == f64::INFINITY).count();
    let clipped: Vec<f64> = if inf > 0 {
        raw.iter()
            .map(|v| if *v == f64::INFINITY { 1.0 } else { 0.0 })
            .collect()
    } else {
        raw.iter().map(|v| v.max(0.0)).collect()
    };
    let sum: f64 = clipped.iter().sum();
    if sum == 0.0 {
        let mut out = vec![0.0; raw.len()];
        out[0] = 1.0;
        return Ok(out);
    }
    Ok(clipped.into_iter().map(|v| v / sum).collect())
}

fn strategy_from_closed_form(view: &LeaderView, lambda: f64, bit_actions: usize) -> Result<TxStrategy> {
    let amax = bit_actions - 1;
    let mut concepts = Vec::with_capacity(view.concepts());
    for r in 0..view.concepts() {
        let m = view.best_mean(r, lambda);
        let mut raw = vec![0.0; bit_actions];
        raw[amax] = m / amax as f64;
        raw[0] += 1.0 - m / amax as f64;
        concepts.push(normalize_strategy(&raw)?);
    }
    Ok(TxStrategy { concepts })
}

/// Signed stationarity residual per concept: derivative of the Lagrangian in
/// the probability of `A_max` bits. Negative at an upper clip, positive at
/// the zero-bit clip.
pub fn stationarity(view: &LeaderView, strategy: &TxStrategy, lambda: f64) -> Vec<f64> {
    strategy
        .means()
        .iter()
        .enumerate()
        .map(|(r, &m)| view.amax * view.marginal(r, m, lambda))
        .collect()
}

/// Max absolute stationarity residual over concepts strictly inside
/// `(0, A_max)`; zero when every concept sits at a clip.
pub fn stationarity_residual(view: &LeaderView, strategy: &TxStrategy, lambda: f64) -> f64 {
    let edge = 1e-9 * view.amax;
    stationarity(view, strategy, lambda)
        .iter()
        .zip(strategy.means())
        .filter(|(_, m)| *m > edge && *m < view.amax - edge)
        .map(|(g, _)| g.abs())
        .fold(0.0, f64::max)
}

/// Finds the smallest `lambda >= 0` whose allocation fits `budget`.
fn search_lambda<F: Fn(f64) -> f64>(total: F, budget: f64, tol: f64) -> (f64, bool) {
    if total(0.0) <= budget {
        return (0.0, false);
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while total(hi) > budget {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return (hi, true);
        }
    }
    let mut lo = 0.0;
    let slack_tol = tol * budget.max(1.0);
    for _ in 0..300 {
        let t = total(hi);
        if budget - t <= slack_tol || hi - lo <= f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if total(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi, false)
}

/// Best response of TX `k` alone, against the budget left after the bits it
/// perceives the other transmitters to use. Relevance of other transmitters'
/// concepts is unknown to `k`, so their bits count in full.
pub fn bisect_lambda(k: usize, perception: &PerceptionState, s: &Scenario) -> Result<LeaderSolution> {
    let beliefs = &perception.tx[k];
    let others: f64 = (0..s.num_tx)
        .filter(|&i| i != k)
        .map(|i| beliefs.other_tx[i].means().iter().sum::<f64>())
        .sum();
    let budget = (s.bit_budget - others).max(0.0);
    let view = LeaderView::new(s, k, beliefs);
    solve_views(&[view], budget, s).map(|mut v| v.remove(0))
}

/// Shared-multiplier best responses of every TX against its own perceptions.
pub fn solve_leaders(perception: &PerceptionState, s: &Scenario) -> Result<Vec<LeaderSolution>> {
    let views: Vec<LeaderView> = (0..s.num_tx)
        .map(|k| LeaderView::new(s, k, &perception.tx[k]))
        .collect();
    solve_views(&views, s.bit_budget, s)
}

/// Shared-multiplier solve over the given views and budget.
pub fn solve_views(views: &[LeaderView], budget: f64, s: &Scenario) -> Result<Vec<LeaderSolution>> {
    let total = |lambda: f64| -> f64 {
        views
            .iter()
            .map(|v| v.weighted_bits(&v.best_means(lambda)))
            .sum()
    };
    let (lambda, infeasible, zero) = if budget <= 0.0 {
        (0.0, false, true)
    } else {
        let (l, inf) = search_lambda(total, budget, s.tolerances.bisection_tol);
        (l, inf, false)
    };
    let bit_actions = s.bit_actions();
    let mut strategies = Vec::with_capacity(views.len());
    for v in views {
        let st = if zero {
            TxStrategy::point(v.concepts(), bit_actions, 0)
        } else {
            strategy_from_closed_form(v, lambda, bit_actions)?
        };
        strategies.push(st);
    }
    let used: f64 = views
        .iter()
        .zip(&strategies)
        .map(|(v, st)| v.weighted_bits(&st.means()))
        .sum();
    let slack = budget.max(0.0) - used;
    Ok(views
        .iter()
        .zip(strategies)
        .map(|(v, strategy)| LeaderSolution {
            stationarity_residual: if zero { 0.0 } else { stationarity_residual(v, &strategy, lambda) },
            strategy,
            lambda,
            budget_slack: slack,
            infeasible,
        })
        .collect())
}
