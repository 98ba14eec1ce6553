//! Utility and cost functionals of transmitters and receivers.

use serde::{Deserialize, Serialize};

use crate::channel::{beta_terms, gaussian_distortion, link_rate, BetaTerms, CloudLink, LinkLoad};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::strategy::{ActionProbs, RxAction, RxStrategy, TxStrategy};

/// Link `(k, j)` as seen by whoever evaluates it: expected bits of TX `k`,
/// relevance of its concepts to RX `j`, and the fixed channel and task
/// quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub means: Vec<f64>,
    pub relevance: Vec<f64>,
    pub compute_cost: Vec<f64>,
    /// Reconstruction error variance per concept at zero bits.
    pub variance: Vec<f64>,
    pub decode_reliability: f64,
    pub local_capacity: f64,
    pub cc_share: f64,
}

impl LinkModel {
    pub fn new(s: &Scenario, k: usize, j: usize, means: Vec<f64>, relevance: Vec<f64>) -> Self {
        let task = &s.tasks[j];
        Self {
            means,
            relevance,
            compute_cost: task.compute_cost[k].clone(),
            variance: (0..s.concepts_per_tx).map(|r| s.error_variance(k, j, r)).collect(),
            decode_reliability: s.decode_reliability(k, j),
            local_capacity: task.local_capacity,
            cc_share: task.cc_share,
        }
    }

    /// Link with the actual TX strategy and true relevance.
    pub fn truth(s: &Scenario, k: usize, j: usize, tx: &TxStrategy) -> Self {
        Self::new(s, k, j, tx.means(), s.tasks[j].relevance[k].clone())
    }

    pub fn load(&self) -> LinkLoad<'_> {
        LinkLoad {
            means: &self.means,
            relevance: &self.relevance,
            compute_cost: &self.compute_cost,
            decode_reliability: self.decode_reliability,
            local_capacity: self.local_capacity,
            cc_share: self.cc_share,
        }
    }

    /// Communication distortion per concept.
    pub fn distortions(&self, scale: f64) -> Vec<f64> {
        self.variance
            .iter()
            .zip(&self.relevance)
            .zip(&self.means)
            .map(|((v, w), m)| gaussian_distortion(*v, w * m, scale))
            .collect()
    }

    /// `sum_r w_r d_r`.
    pub fn weighted_distortion(&self, scale: f64) -> f64 {
        self.distortions(scale)
            .iter()
            .zip(&self.relevance)
            .map(|(d, w)| w * d)
            .sum()
    }

    pub fn relevance_sum(&self) -> f64 {
        self.relevance.iter().sum()
    }
}

/// Per-action reconstruction costs of one link, before mixing by the RX
/// strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ActionCosts {
    pub accept: f64,
    pub local: f64,
    pub cloud: f64,
    pub drop: f64,
}

impl ActionCosts {
    pub fn of(link: &LinkModel, s: &Scenario) -> Self {
        let a = link.weighted_distortion(s.rate_distortion_scale);
        Self {
            accept: a,
            local: s.kappa_local * a,
            cloud: s.kappa_cc * a,
            drop: s.drop_penalty * link.relevance_sum(),
        }
    }

    pub fn mix(&self, p: &ActionProbs) -> f64 {
        p[0] * self.accept + p[1] * self.local + p[2] * self.cloud + p[3] * self.drop
    }
}

/// One accepting link's contribution to a TX's semantic surprise.
#[derive(Debug, Clone, Copy)]
pub struct AcceptView<'a> {
    pub accept: f64,
    pub relevance: &'a [f64],
    pub decode_reliability: f64,
}

/// `-sum_j accept_j * sum_r w_jr * ln p_j`. Infinite when a link that is
/// accepted with positive probability never decodes.
pub fn semantic_surprise(views: &[AcceptView<'_>]) -> f64 {
    let mut v = 0.0;
    for view in views {
        if view.accept == 0.0 {
            continue;
        }
        let w: f64 = view.relevance.iter().sum();
        if w == 0.0 {
            continue;
        }
        if view.decode_reliability <= 0.0 {
            return f64::INFINITY;
        }
        v -= view.accept * w * view.decode_reliability.ln();
    }
    v
}

/// Semantic surprise of TX `k` under the actual RX strategies and true
/// relevance.
pub fn tx_surprise(s: &Scenario, k: usize, rx: &[RxStrategy]) -> f64 {
    let views: Vec<AcceptView<'_>> = (0..s.num_rx)
        .map(|j| AcceptView {
            accept: rx[j].prob(k, RxAction::Accept),
            relevance: &s.tasks[j].relevance[k],
            decode_reliability: s.decode_reliability(k, j),
        })
        .collect();
    semantic_surprise(&views)
}

/// Expected relevance-weighted reconstruction error on one link.
pub fn reconstruction_quality(probs: &ActionProbs, link: &LinkModel, s: &Scenario) -> f64 {
    ActionCosts::of(link, s).mix(probs)
}

/// Expected delay of link `(k, j)` with the nominal cloud gain.
pub fn expected_delay(
    k: usize,
    j: usize,
    probs: &ActionProbs,
    link: &LinkModel,
    s: &Scenario,
) -> Result<f64> {
    let beta = beta_terms(probs, &link.load())?;
    if beta.beta2 == 0.0 {
        return Ok(beta.beta1);
    }
    let cc = s.channels.cc_links[j];
    let rate = link_rate(cc.channel_gain_std, cc.power, s.bandwidth, s.noise_density)?;
    if rate <= 0.0 {
        return Err(Error::InfeasibleOffload { tx: k, rx: j });
    }
    Ok(beta.beta1 + beta.beta2 / rate)
}

/// Receiver cost contributed by one link.
pub fn link_rx_cost(probs: &ActionProbs, link: &LinkModel, s: &Scenario, j: usize) -> f64 {
    let e = reconstruction_quality(probs, link, s);
    let beta = beta_of(probs, link);
    let b = CloudLink::of(s, j).success_bound(beta);
    b * e + (1.0 - b) * s.reasoning_failure_penalty
}

pub(crate) fn beta_of(probs: &ActionProbs, link: &LinkModel) -> BetaTerms {
    crate::channel::beta_from(probs[1], probs[2], &link.load())
}

/// Cost of RX `j` under the actual strategies.
pub fn rx_utility(s: &Scenario, j: usize, tx: &[TxStrategy], rx: &RxStrategy) -> f64 {
    (0..s.num_tx)
        .map(|k| link_rx_cost(&rx.links[k], &LinkModel::truth(s, k, j, &tx[k]), s, j))
        .sum()
}

/// `alpha1 * (1/J) sum_j sum_r w_jr m_r + alpha2 * surprise`.
pub fn tx_utility_with(s: &Scenario, means: &[f64], relevance: &[Vec<f64>], surprise: f64) -> f64 {
    let j = relevance.len() as f64;
    let bits: f64 = relevance
        .iter()
        .map(|row| row.iter().zip(means).map(|(w, m)| w * m).sum::<f64>())
        .sum::<f64>()
        / j;
    s.alpha1 * bits + s.alpha2 * surprise
}

/// Cost of TX `k` under the actual strategies and true relevance.
pub fn tx_utility(s: &Scenario, k: usize, tx: &TxStrategy, rx: &[RxStrategy]) -> f64 {
    let relevance: Vec<Vec<f64>> = (0..s.num_rx).map(|j| s.tasks[j].relevance[k].clone()).collect();
    tx_utility_with(s, &tx.means(), &relevance, tx_surprise(s, k, rx))
}

/// Quality of task experience, the reciprocal of the RX cost.
pub fn qote(u_f: f64) -> Result<f64> {
    if !(u_f > 0.0) {
        return Err(Error::Domain(format!("QoTE needs a positive RX cost, got {u_f}")));
    }
    Ok(1.0 / u_f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub tx_utilities: Vec<f64>,
    pub rx_utilities: Vec<f64>,
    /// Infinite when the RX cost is zero.
    pub qote: Vec<f64>,
    pub surprise: Vec<f64>,
    /// Expected bits sent per TX, summed over concepts.
    pub expected_bits: Vec<f64>,
    /// `recon_quality[k][j]`.
    pub recon_quality: Vec<Vec<f64>>,
    /// `delays[k][j]`, seconds.
    pub delays: Vec<Vec<f64>>,
}

/// One row of the per-iteration utility CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRow {
    pub iter: usize,
    pub player: String,
    pub role: String,
    pub utility: f64,
    pub qote: Option<f64>,
    pub bits: f64,
    pub surprise: Option<f64>,
    pub delay: f64,
}

impl UtilityReport {
    pub fn evaluate(s: &Scenario, tx: &[TxStrategy], rx: &[RxStrategy]) -> Result<Self> {
        let mut recon = vec![vec![0.0; s.num_rx]; s.num_tx];
        let mut delays = vec![vec![0.0; s.num_rx]; s.num_tx];
        for k in 0..s.num_tx {
            for j in 0..s.num_rx {
                let link = LinkModel::truth(s, k, j, &tx[k]);
                recon[k][j] = reconstruction_quality(&rx[j].links[k], &link, s);
                delays[k][j] = expected_delay(k, j, &rx[j].links[k], &link, s)?;
            }
        }
        let rx_utilities: Vec<f64> = (0..s.num_rx).map(|j| rx_utility(s, j, tx, &rx[j])).collect();
        Ok(Self {
            tx_utilities: (0..s.num_tx).map(|k| tx_utility(s, k, &tx[k], rx)).collect(),
            qote: rx_utilities.iter().map(|&u| qote(u).unwrap_or(f64::INFINITY)).collect(),
            rx_utilities,
            surprise: (0..s.num_tx).map(|k| tx_surprise(s, k, rx)).collect(),
            expected_bits: tx.iter().map(|t| t.means().iter().sum()).collect(),
            recon_quality: recon,
            delays,
        })
    }

    /// Network-wide expected bits.
    pub fn bits_total(&self) -> f64 {
        self.expected_bits.iter().sum()
    }

    pub fn mean_rx_utility(&self) -> f64 {
        self.rx_utilities.iter().sum::<f64>() / self.rx_utilities.len() as f64
    }

    /// TX rows first, then RX rows. RX bits are the expected bits arriving
    /// on its links; delays are means over the player's links.
    pub fn rows(&self, iter: usize) -> Vec<UtilityRow> {
        let num_tx = self.tx_utilities.len();
        let num_rx = self.rx_utilities.len();
        let mut out = Vec::with_capacity(num_tx + num_rx);
        for k in 0..num_tx {
            out.push(UtilityRow {
                iter,
                player: format!("tx{k}"),
                role: "tx".into(),
                utility: self.tx_utilities[k],
                qote: None,
                bits: self.expected_bits[k],
                surprise: Some(self.surprise[k]),
                delay: self.delays[k].iter().sum::<f64>() / num_rx as f64,
            });
        }
        for j in 0..num_rx {
            out.push(UtilityRow {
                iter,
                player: format!("rx{j}"),
                role: "rx".into(),
                utility: self.rx_utilities[j],
                qote: Some(self.qote[j]),
                bits: self.expected_bits.iter().sum(),
                surprise: None,
                delay: (0..num_tx).map(|k| self.delays[k][j]).sum::<f64>() / num_tx as f64,
            });
        }
        out
    }
}
