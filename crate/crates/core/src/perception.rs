//! What each player believes about every other player.
//!
//! A transmitter holds beliefs about every receiver's action probabilities on
//! its own link and about every receiver's relevance weights for its own
//! concepts, plus beliefs about the other transmitters' strategies. A
//! receiver holds beliefs about every transmitter's strategy and about the
//! other receivers' strategies (which set its view of cloud-server load).

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::strategy::{check_simplex, project_simplex, ActionProbs, RxStrategy, TxStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Player {
    Tx(usize),
    Rx(usize),
}

impl Player {
    /// Leaders first, each group in ascending index.
    pub fn all(s: &Scenario) -> Vec<Player> {
        (0..s.num_tx)
            .map(Player::Tx)
            .chain((0..s.num_rx).map(Player::Rx))
            .collect()
    }

    pub fn role(self) -> &'static str {
        match self {
            Player::Tx(_) => "tx",
            Player::Rx(_) => "rx",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Player::Tx(i) | Player::Rx(i) => i,
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Player::Tx(k) => write!(f, "tx{k}"),
            Player::Rx(j) => write!(f, "rx{j}"),
        }
    }
}

/// Ordered pair: `subject`'s game as perceived by `perceiver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub subject: Player,
    pub perceiver: Player,
}

impl Pair {
    pub fn new(subject: Player, perceiver: Player) -> Self {
        Self { subject, perceiver }
    }

    /// All `K(K-1)` ordered pairs, perceivers in player order and subjects in
    /// player order within each perceiver.
    pub fn all(s: &Scenario) -> Vec<Pair> {
        let players = Player::all(s);
        let mut out = Vec::new();
        for &perceiver in &players {
            for &subject in &players {
                if subject != perceiver {
                    out.push(Pair { subject, perceiver });
                }
            }
        }
        out
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.subject, self.perceiver)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderBeliefs {
    /// `rx_links[j]`: perceived action probabilities of RX `j` on this TX's link.
    pub rx_links: Vec<ActionProbs>,
    /// `relevance[j][r]`: perceived relevance of this TX's concept `r` to RX `j`.
    pub relevance: Vec<Vec<f64>>,
    /// `other_tx[i]`: perceived strategy of TX `i` (own slot unused).
    pub other_tx: Vec<TxStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerBeliefs {
    /// `tx[k]`: perceived strategy of TX `k`.
    pub tx: Vec<TxStrategy>,
    /// `other_rx[i]`: perceived strategy of RX `i` (own slot unused).
    pub other_rx: Vec<RxStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionState {
    pub tx: Vec<LeaderBeliefs>,
    pub rx: Vec<FollowerBeliefs>,
}

/// Starting beliefs: uniform strategies everywhere and a constant perceived
/// relevance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptionInit {
    pub relevance: f64,
}

impl Default for PerceptionInit {
    fn default() -> Self {
        Self { relevance: 0.5 }
    }
}

impl PerceptionState {
    pub fn initial(s: &Scenario, init: PerceptionInit) -> Self {
        let tx_uniform = TxStrategy::uniform(s.concepts_per_tx, s.bit_actions());
        let rx_uniform = RxStrategy::uniform(s.num_tx);
        let tx = (0..s.num_tx)
            .map(|_| LeaderBeliefs {
                rx_links: vec![[0.25; 4]; s.num_rx],
                relevance: vec![vec![init.relevance; s.concepts_per_tx]; s.num_rx],
                other_tx: vec![tx_uniform.clone(); s.num_tx],
            })
            .collect();
        let rx = (0..s.num_rx)
            .map(|_| FollowerBeliefs {
                tx: vec![tx_uniform.clone(); s.num_tx],
                other_rx: vec![rx_uniform.clone(); s.num_rx],
            })
            .collect();
        Self { tx, rx }
    }

    /// Beliefs of a transmitter that treats every concept as fully relevant.
    pub fn relevance_blind(s: &Scenario) -> Self {
        Self::initial(s, PerceptionInit { relevance: 1.0 })
    }

    /// Every belief equal to the actual strategies and true relevance.
    pub fn truth(s: &Scenario, tx: &[TxStrategy], rx: &[RxStrategy]) -> Self {
        let mut p = Self::initial(s, PerceptionInit::default());
        p.pin_to_truth(s, tx, rx);
        p
    }

    pub fn pin_to_truth(&mut self, s: &Scenario, tx: &[TxStrategy], rx: &[RxStrategy]) {
        self.pin_leader_views(s, rx);
        for b in &mut self.tx {
            b.other_tx = tx.to_vec();
        }
        self.pin_follower_views(tx, rx);
    }

    /// Leaders see the receivers' actual strategies and true relevance.
    pub fn pin_leader_views(&mut self, s: &Scenario, rx: &[RxStrategy]) {
        for (k, b) in self.tx.iter_mut().enumerate() {
            b.rx_links = rx.iter().map(|r| r.links[k]).collect();
            b.relevance = (0..s.num_rx).map(|j| s.tasks[j].relevance[k].clone()).collect();
        }
    }

    /// Followers see the transmitters' and other receivers' actual strategies.
    pub fn pin_follower_views(&mut self, tx: &[TxStrategy], rx: &[RxStrategy]) {
        for b in &mut self.rx {
            b.tx = tx.to_vec();
            b.other_rx = rx.to_vec();
        }
    }

    /// Checks the simplex and box invariants of every belief.
    pub fn check(&self, tol: f64) -> Result<()> {
        for (k, b) in self.tx.iter().enumerate() {
            for row in &b.rx_links {
                check_simplex(row, tol).map_err(|e| Error::Numeric(format!("tx{k} rx view: {e}")))?;
            }
            if b.relevance.iter().flatten().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Numeric(format!("tx{k} relevance outside [0, 1]")));
            }
            for t in &b.other_tx {
                t.check(tol)?;
            }
        }
        for b in &self.rx {
            for t in &b.tx {
                t.check(tol)?;
            }
            for r in &b.other_rx {
                r.check(tol)?;
            }
        }
        Ok(())
    }

    /// Flattened perception parameters for `pair`: probabilities of every
    /// perceived categorical, followed by relevance weights when the
    /// perceiver is a transmitter looking at a receiver.
    pub fn params(&self, pair: Pair) -> Vec<f64> {
        let mut out = Vec::new();
        match (pair.perceiver, pair.subject) {
            (Player::Tx(k), Player::Rx(j)) => {
                let b = &self.tx[k];
                out.extend(b.rx_links[j].iter().copied());
                out.extend(b.relevance[j].iter().copied());
            }
            (Player::Tx(k), Player::Tx(i)) => {
                for row in &self.tx[k].other_tx[i].concepts {
                    out.extend(row.iter().copied());
                }
            }
            (Player::Rx(j), Player::Tx(k)) => {
                for row in &self.rx[j].tx[k].concepts {
                    out.extend(row.iter().copied());
                }
            }
            (Player::Rx(j), Player::Rx(i)) => {
                for row in &self.rx[j].other_rx[i].links {
                    out.extend(row.iter().copied());
                }
            }
        }
        out
    }

    /// Copy with `pair`'s beliefs replaced by `theta`, projected back onto
    /// the feasible set (Euclidean simplex projection for categoricals,
    /// `[0, 1]` box for weights).
    pub fn with_params(&self, pair: Pair, theta: &[f64]) -> Self {
        let mut next = self.clone();
        next.set_params(pair, theta);
        next
    }

    pub fn set_params(&mut self, pair: Pair, theta: &[f64]) {
        match (pair.perceiver, pair.subject) {
            (Player::Tx(k), Player::Rx(j)) => {
                let b = &mut self.tx[k];
                let p = project_simplex(&theta[..4]);
                b.rx_links[j].copy_from_slice(&p);
                for (w, t) in b.relevance[j].iter_mut().zip(&theta[4..]) {
                    *w = t.clamp(0.0, 1.0);
                }
            }
            (Player::Tx(k), Player::Tx(i)) => set_rows(&mut self.tx[k].other_tx[i].concepts, theta),
            (Player::Rx(j), Player::Tx(k)) => set_rows(&mut self.rx[j].tx[k].concepts, theta),
            (Player::Rx(j), Player::Rx(i)) => {
                for (n, row) in self.rx[j].other_rx[i].links.iter_mut().enumerate() {
                    let p = project_simplex(&theta[4 * n..4 * n + 4]);
                    row.copy_from_slice(&p);
                }
            }
        }
    }
}

fn set_rows(rows: &mut [Vec<f64>], theta: &[f64]) {
    let mut at = 0;
    for row in rows.iter_mut() {
        let n = row.len();
        *row = project_simplex(&theta[at..at + n]);
        at += n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, Shape};

    #[test]
    fn pair_counts() {
        let s = generate_scenario(1, Shape::default(), 0.5).unwrap();
        assert_eq!(Pair::all(&s).len(), 12);
        let one = generate_scenario(1, Shape { num_tx: 1, num_rx: 1, concepts_per_tx: 2 }, 0.5).unwrap();
        assert_eq!(Pair::all(&one).len(), 2);
        assert_eq!(Pair::all(&one)[0], Pair::new(Player::Rx(0), Player::Tx(0)));
    }

    #[test]
    fn params_round_trip_and_project() {
        let s = generate_scenario(2, Shape::default(), 0.5).unwrap();
        let p = PerceptionState::initial(&s, PerceptionInit::default());
        for pair in Pair::all(&s) {
            let theta = p.params(pair);
            let q = p.with_params(pair, &theta);
            q.check(1e-9).unwrap();
            let mut wild = theta.clone();
            for t in wild.iter_mut() {
                *t = *t * 3.0 + 2.0;
            }
            p.with_params(pair, &wild).check(1e-9).unwrap();
        }
    }
}
