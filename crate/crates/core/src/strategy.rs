//! Mixed strategies of transmitters (bits per concept) and receivers
//! (action per incoming link).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receiver action on one incoming link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxAction {
    Accept = 0,
    LocalReason = 1,
    CloudReason = 2,
    Drop = 3,
}

impl RxAction {
    pub const ALL: [RxAction; 4] = [
        RxAction::Accept,
        RxAction::LocalReason,
        RxAction::CloudReason,
        RxAction::Drop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Probability vector over the four receiver actions.
pub type ActionProbs = [f64; 4];

/// Factorized mixed strategy of one TX: a categorical over `{0, ..., A_max}`
/// bits for every concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxStrategy {
    /// `concepts[r][a]` is the probability of sending `a` bits for concept `r`.
    pub concepts: Vec<Vec<f64>>,
}

impl TxStrategy {
    pub fn uniform(concepts: usize, bit_actions: usize) -> Self {
        let p = 1.0 / bit_actions as f64;
        Self {
            concepts: vec![vec![p; bit_actions]; concepts],
        }
    }

    /// Every concept sends exactly `bits`.
    pub fn point(concepts: usize, bit_actions: usize, bits: usize) -> Self {
        let mut row = vec![0.0; bit_actions];
        row[bits] = 1.0;
        Self {
            concepts: vec![row; concepts],
        }
    }

    /// Two-point strategy on `{0, A_max}` with the given expected bits.
    pub fn from_means(means: &[f64], bit_actions: usize) -> Self {
        let amax = (bit_actions - 1) as f64;
        let concepts = means
            .iter()
            .map(|&m| {
                let hi = (m / amax).clamp(0.0, 1.0);
                let mut row = vec![0.0; bit_actions];
                row[0] = 1.0 - hi;
                row[bit_actions - 1] += hi;
                row
            })
            .collect();
        Self { concepts }
    }

    pub fn expected_bits(&self, r: usize) -> f64 {
        self.concepts[r]
            .iter()
            .enumerate()
            .map(|(a, p)| a as f64 * p)
            .sum()
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.concepts.len()).map(|r| self.expected_bits(r)).collect()
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        for (r, row) in self.concepts.iter().enumerate() {
            check_simplex(row, tol).map_err(|e| Error::Numeric(format!("concept {r}: {e}")))?;
        }
        Ok(())
    }

    /// Max absolute entry-wise difference.
    pub fn distance(&self, other: &Self) -> f64 {
        self.concepts
            .iter()
            .flatten()
            .zip(other.concepts.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Multipliers on an RX's local and cloud compute constraints, each
/// normalized by the corresponding capacity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComputeDuals {
    pub local: f64,
    pub cloud: f64,
}

/// Mixed strategy of one RX: a categorical over [`RxAction`] per TX link,
/// plus the compute-constraint multipliers used to produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxStrategy {
    /// `links[k]` for the link from TX `k`.
    pub links: Vec<ActionProbs>,
    pub duals: ComputeDuals,
}

impl RxStrategy {
    pub fn uniform(num_tx: usize) -> Self {
        Self {
            links: vec![[0.25; 4]; num_tx],
            duals: ComputeDuals::default(),
        }
    }

    pub fn from_links(links: Vec<ActionProbs>) -> Self {
        Self {
            links,
            duals: ComputeDuals::default(),
        }
    }

    pub fn prob(&self, k: usize, a: RxAction) -> f64 {
        self.links[k][a.index()]
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        for (k, row) in self.links.iter().enumerate() {
            check_simplex(row, tol).map_err(|e| Error::Numeric(format!("link {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.links
            .iter()
            .flatten()
            .zip(other.links.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn check_simplex(p: &[f64], tol: f64) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < -tol || *x > 1.0 + tol) {
        return Err(Error::Numeric(format!("entries outside [0, 1]: {p:?}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::Numeric(format!("sums to {s}")));
    }
    Ok(())
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut shift = 0.0;
    for (i, x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}
