//! Link rate, Gaussian rate-distortion, delay terms and the reasoning
//! success bound.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::strategy::{ActionProbs, RxAction};

/// Shannon rate of the RX-to-cloud link, bits/s.
pub fn link_rate(gain: f64, power: f64, bandwidth: f64, noise_density: f64) -> Result<f64> {
    if ![gain, power, bandwidth, noise_density].iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("link_rate: non-finite input".into()));
    }
    if bandwidth <= 0.0 || noise_density <= 0.0 || gain < 0.0 || power < 0.0 {
        return Err(Error::Domain(format!(
            "link_rate: need bandwidth, noise_density > 0 and gain, power >= 0 \
             (got {bandwidth}, {noise_density}, {gain}, {power})"
        )));
    }
    let snr = gain * power / (noise_density * bandwidth);
    Ok(bandwidth * snr.ln_1p() / std::f64::consts::LN_2)
}

/// Minimum mean squared error of a Gaussian source coded with
/// `weighted_bits` relevance-weighted bits.
pub fn gaussian_distortion(source_variance: f64, weighted_bits: f64, scale: f64) -> f64 {
    source_variance * (-2.0 * weighted_bits / scale).exp2()
}

/// Compute-delay (`beta1`, seconds) and upload-bit (`beta2`, bits) parts of
/// the expected delay on one link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BetaTerms {
    pub beta1: f64,
    pub beta2: f64,
}

/// Everything about link `(k, j)` the delay terms depend on, from the
/// point of view of whoever evaluates them.
#[derive(Debug, Clone, Copy)]
pub struct LinkLoad<'a> {
    /// Expected bits per concept of TX `k`.
    pub means: &'a [f64],
    /// Relevance of TX `k`'s concepts to RX `j`.
    pub relevance: &'a [f64],
    /// Reasoning cycles per concept.
    pub compute_cost: &'a [f64],
    pub decode_reliability: f64,
    pub local_capacity: f64,
    pub cc_share: f64,
}

impl LinkLoad<'_> {
    pub fn workload(&self) -> f64 {
        self.compute_cost.iter().sum()
    }

    pub fn weighted_bits(&self) -> f64 {
        self.relevance.iter().zip(self.means).map(|(w, m)| w * m).sum()
    }
}

pub fn beta_terms(probs: &ActionProbs, load: &LinkLoad<'_>) -> Result<BetaTerms> {
    if !(load.local_capacity > 0.0 && load.cc_share > 0.0) {
        return Err(Error::Config(format!(
            "beta_terms: capacities must be > 0 (local {}, cc share {})",
            load.local_capacity, load.cc_share
        )));
    }
    Ok(beta_from(
        probs[RxAction::LocalReason.index()],
        probs[RxAction::CloudReason.index()],
        load,
    ))
}

/// [`beta_terms`] from the two reasoning probabilities, capacities assumed
/// valid.
pub(crate) fn beta_from(local: f64, cloud: f64, load: &LinkLoad<'_>) -> BetaTerms {
    let p = load.decode_reliability;
    let s = load.workload();
    BetaTerms {
        beta1: p * (local * s / load.local_capacity + cloud * s / load.cc_share),
        beta2: p * cloud * load.weighted_bits(),
    }
}

/// Constants of RX `j`'s cloud link that enter `x`.
#[derive(Debug, Clone, Copy)]
pub struct CloudLink {
    pub bandwidth: f64,
    pub noise_density: f64,
    pub power: f64,
    pub gain_std: f64,
    pub tau_max: f64,
}

impl CloudLink {
    pub fn of(s: &Scenario, rx: usize) -> Self {
        let cc = s.channels.cc_links[rx];
        Self {
            bandwidth: s.bandwidth,
            noise_density: s.noise_density,
            power: cc.power,
            gain_std: cc.channel_gain_std,
            tau_max: s.tau_max,
        }
    }

    fn scale(&self) -> f64 {
        self.noise_density * self.bandwidth / (self.power * self.gain_std)
    }

    fn exponent(&self, beta: BetaTerms) -> f64 {
        beta.beta2 / (self.bandwidth * (self.tau_max - beta.beta1))
    }

    /// Normalized gain threshold `x`; infinite once `beta1` reaches the deadline.
    pub fn x(&self, beta: BetaTerms) -> f64 {
        if beta.beta1 >= self.tau_max {
            return f64::INFINITY;
        }
        self.scale() * (self.exponent(beta).exp2() - 1.0)
    }

    pub fn success_bound(&self, beta: BetaTerms) -> f64 {
        if beta.beta1 >= self.tau_max {
            return 0.0;
        }
        let x = self.x(beta);
        (-0.5 * x * x).exp().min(1.0)
    }

    /// `x` and `dx/dbeta1` at `beta1 = beta1_0`.
    pub fn x_taylor(&self, beta: BetaTerms, beta1_0: f64) -> Result<(f64, f64)> {
        if !(beta1_0 < self.tau_max) {
            return Err(Error::Domain(format!(
                "expansion point {beta1_0} is not below tau_max {}",
                self.tau_max
            )));
        }
        let at = BetaTerms {
            beta1: beta1_0,
            beta2: beta.beta2,
        };
        let e = self.exponent(at);
        let gap = self.tau_max - beta1_0;
        let x0 = self.scale() * (e.exp2() - 1.0);
        let dx = self.scale() * e.exp2() * std::f64::consts::LN_2 * beta.beta2
            / (self.bandwidth * gap * gap);
        Ok((x0, dx))
    }

    /// Success bound and its partial derivatives in `beta1` and `beta2`.
    pub fn bound_grad(&self, beta: BetaTerms) -> (f64, f64, f64) {
        if beta.beta1 >= self.tau_max {
            return (0.0, 0.0, 0.0);
        }
        let gap = self.tau_max - beta.beta1;
        let two = self.exponent(beta).exp2();
        let c = self.scale();
        let x = c * (two - 1.0);
        let b = (-0.5 * x * x).exp();
        let dx_db2 = c * two * std::f64::consts::LN_2 / (self.bandwidth * gap);
        let dx_db1 = dx_db2 * beta.beta2 / gap;
        (b, -x * b * dx_db1, -x * b * dx_db2)
    }

    /// Realized delay for the given compute part, upload bits and gain.
    pub fn delay(&self, beta: BetaTerms, power: f64, gain: f64) -> f64 {
        if beta.beta2 == 0.0 {
            return beta.beta1;
        }
        let snr = gain * power / (self.noise_density * self.bandwidth);
        let rate = self.bandwidth * snr.ln_1p() / std::f64::consts::LN_2;
        beta.beta1 + beta.beta2 / rate
    }
}

/// Upper bound on `P(delay <= tau_max)` for RX `rx`.
pub fn reasoning_success_bound(beta: BetaTerms, s: &Scenario, rx: usize) -> f64 {
    CloudLink::of(s, rx).success_bound(beta)
}

pub fn x_taylor(beta: BetaTerms, beta1_0: f64, s: &Scenario, rx: usize) -> Result<(f64, f64)> {
    CloudLink::of(s, rx).x_taylor(beta, beta1_0)
}

/// Draws a cloud-link gain `|h|`, `h ~ N(0, std^2)`.
pub fn sample_gain<R: Rng + ?Sized>(gain_std: f64, rng: &mut R) -> f64 {
    let n = Normal::new(0.0, gain_std).expect("gain std validated positive");
    n.sample(rng).abs()
}

/// One concept drawn through a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDraw {
    pub decoded: bool,
    pub estimate: f64,
}

/// Sends a concept with true value `value` over a link whose error variance
/// at zero bits is `error_variance`.
pub fn sample_link<R: Rng + ?Sized>(
    value: f64,
    error_variance: f64,
    decode_reliability: f64,
    weighted_bits: f64,
    scale: f64,
    rng: &mut R,
) -> LinkDraw {
    let decoded = rng.gen::<f64>() < decode_reliability;
    let sd = gaussian_distortion(error_variance, weighted_bits, scale).sqrt();
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    LinkDraw {
        decoded,
        estimate: value + sd * z,
    }
}
