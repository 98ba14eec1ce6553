//! Receiver best response: accept rule, reasoning split and compute
//! constraints.
//!
//! For every incoming link the accept probability is fixed first by the
//! error-tolerance rule. The local and cloud reasoning probabilities are
//! then chosen in the remaining mass and drop takes what is left. A damped
//! fixed point of the linearized stationarity condition gives a warm start;
//! a projected-gradient polish on the exact perceived cost finishes the
//! solve, and dual ascent enforces the shared compute constraints.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::channel::{beta_from, CloudLink};
use crate::error::{Error, Result};
use crate::perception::{FollowerBeliefs, PerceptionState};
use crate::scenario::{AcceptRule, Scenario, Tolerances};
use crate::strategy::{ActionProbs, ComputeDuals, RxStrategy};
use crate::utilities::{ActionCosts, LinkModel};

/// Dual ascent step on the normalized constraint violation.
pub const DUAL_STEP: f64 = 0.1;
const DUAL_ITERS: usize = 400;
const GRID: usize = 20;

/// Probability that a link's output is accepted: per-concept probability of
/// the squared error landing inside the tolerance radius, averaged with
/// relevance weights.
pub fn accept_probability(link: &LinkModel, s: &Scenario) -> f64 {
    accept_with(link, s.accept_threshold, s.rate_distortion_scale, s.accept_rule)
}

pub fn accept_with(link: &LinkModel, delta: f64, scale: f64, rule: AcceptRule) -> f64 {
    let d = link.distortions(scale);
    let within: Vec<f64> = d.iter().map(|&var| chi2_1_cdf(delta / var)).collect();
    let wsum: f64 = link.relevance.iter().sum();
    let p = if wsum > 0.0 {
        within.iter().zip(&link.relevance).map(|(p, w)| p * w).sum::<f64>() / wsum
    } else {
        within.iter().sum::<f64>() / within.len() as f64
    };
    match rule {
        AcceptRule::WithinTolerance => p,
        AcceptRule::Literal => 1.0 - p,
    }
}

/// `P(Z^2 <= t)` for standard normal `Z`.
fn chi2_1_cdf(t: f64) -> f64 {
    if t.is_nan() || t <= 0.0 {
        return 0.0;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    erf((t / 2.0).sqrt())
}

/// `1 - sum(partial)` clipped at zero.
pub fn drop_probability(partial: [f64; 3]) -> Result<f64> {
    let s: f64 = partial.iter().sum();
    if s > 1.0 + 1e-9 {
        return Err(Error::Simplex(s));
    }
    Ok((1.0 - s).max(0.0))
}

/// RX `j`'s perceived game.
#[derive(Debug, Clone)]
pub struct FollowerProblem {
    pub j: usize,
    pub links: Vec<LinkModel>,
    pub accept: Vec<f64>,
    pub cloud: CloudLink,
    pub failure_penalty: f64,
    pub local_capacity: f64,
    pub cc_capacity: f64,
    /// Cloud cycles/s perceived as used by the other receivers.
    pub cc_other_load: f64,
    /// Multiplies the success bound everywhere. One unless a test needs
    /// controlled bound changes.
    pub bound_scale: f64,
    /// Local and cloud reasoning allowed. When false only accept and drop remain.
    pub reasoning: bool,
    pub tolerances: Tolerances,
    /// Rate-distortion scale `T`.
    pub scale: f64,
    costs: Vec<ActionCosts>,
}

/// Output of a follower solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerSolution {
    pub strategy: RxStrategy,
    /// Largest iteration count of the damped fixed point over links.
    pub fixed_point_iterations: usize,
    /// Largest final fixed-point step over links.
    pub residual: f64,
    pub converged: bool,
    /// Normalized violation of the local and cloud constraints, zero when met.
    pub constraint_violations: [f64; 2],
}

/// Damped fixed-point run on one link.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointRun {
    pub local: f64,
    pub cloud: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Step size at every iteration.
    pub residuals: Vec<f64>,
}

impl FollowerProblem {
    pub fn new(s: &Scenario, j: usize, beliefs: &FollowerBeliefs) -> Self {
        let links: Vec<LinkModel> = (0..s.num_tx)
            .map(|k| LinkModel::new(s, k, j, beliefs.tx[k].means(), s.tasks[j].relevance[k].clone()))
            .collect();
        let cc_other_load = (0..s.num_rx)
            .filter(|&i| i != j)
            .map(|i| {
                (0..s.num_tx)
                    .map(|k| beliefs.other_rx[i].links[k][2] * s.tasks[i].link_workload(k))
                    .sum::<f64>()
            })
            .sum();
        Self::from_links(s, j, links, cc_other_load)
    }

    pub fn from_links(s: &Scenario, j: usize, links: Vec<LinkModel>, cc_other_load: f64) -> Self {
        let accept = links.iter().map(|l| accept_probability(l, s)).collect();
        let costs = links.iter().map(|l| ActionCosts::of(l, s)).collect();
        Self {
            j,
            links,
            accept,
            cloud: CloudLink::of(s, j),
            failure_penalty: s.reasoning_failure_penalty,
            local_capacity: s.tasks[j].local_capacity,
            cc_capacity: s.cc_capacity,
            cc_other_load,
            bound_scale: 1.0,
            reasoning: true,
            tolerances: s.tolerances,
            scale: s.rate_distortion_scale,
            costs,
        }
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    fn room(&self, k: usize) -> f64 {
        (1.0 - self.accept[k]).max(0.0)
    }

    fn cc_room(&self) -> f64 {
        (self.cc_capacity - self.cc_other_load).max(0.0)
    }

    /// Scaled success bound and its gradient in the two reasoning probabilities.
    fn bound(&self, k: usize, local: f64, cloud: f64) -> (f64, f64, f64) {
        let link = &self.links[k];
        let load = link.load();
        let beta = beta_from(local, cloud, &load);
        let (b, db1, db2) = self.cloud.bound_grad(beta);
        let ps = link.decode_reliability * load.workload();
        let g_local = db1 * ps / link.local_capacity;
        let g_cloud = db1 * ps / link.cc_share + db2 * link.decode_reliability * load.weighted_bits();
        let c = self.bound_scale;
        (c * b, c * g_local, c * g_cloud)
    }

    /// Perceived cost of link `k` and its gradient, with dual terms.
    fn link_eval(&self, k: usize, local: f64, cloud: f64, duals: ComputeDuals) -> (f64, f64, f64) {
        let c = &self.costs[k];
        let a0 = self.accept[k];
        let drop = 1.0 - a0 - local - cloud;
        let e = a0 * c.accept + local * c.local + cloud * c.cloud + drop * c.drop;
        let (b, gb1, gb2) = self.bound(k, local, cloud);
        let pq = self.failure_penalty;
        let w = self.links[k].load().workload();
        let (dl, dc) = (w / self.local_capacity, w / self.cc_capacity);
        let f = b * e + (1.0 - b) * pq + duals.local * dl * local + duals.cloud * dc * cloud;
        let g1 = gb1 * (e - pq) + b * (c.local - c.drop) + duals.local * dl;
        let g2 = gb2 * (e - pq) + b * (c.cloud - c.drop) + duals.cloud * dc;
        (f, g1, g2)
    }

    /// Perceived cost of link `k` without dual terms.
    pub fn link_cost(&self, k: usize, probs: &ActionProbs) -> f64 {
        let c = &self.costs[k];
        let e = c.mix(probs);
        let (b, _, _) = self.bound(k, probs[1], probs[2]);
        b * e + (1.0 - b) * self.failure_penalty
    }

    /// Perceived RX cost of a strategy.
    pub fn cost(&self, strategy: &RxStrategy) -> f64 {
        (0..self.num_links()).map(|k| self.link_cost(k, &strategy.links[k])).sum()
    }

    /// Local and own cloud loads, cycles/s.
    pub fn loads(&self, strategy: &RxStrategy) -> (f64, f64) {
        let mut local = 0.0;
        let mut cloud = 0.0;
        for (k, l) in self.links.iter().enumerate() {
            let w = l.load().workload();
            local += strategy.links[k][1] * w;
            cloud += strategy.links[k][2] * w;
        }
        (local, cloud)
    }

    /// Normalized violations `[local, cloud]`, zero when satisfied. Cloud
    /// load of other receivers that this one cannot offset is not counted.
    pub fn violations(&self, strategy: &RxStrategy) -> [f64; 2] {
        let (local, cloud) = self.loads(strategy);
        [
            ((local - self.local_capacity) / self.local_capacity).max(0.0),
            ((cloud - self.cc_room()) / self.cc_capacity).max(0.0),
        ]
    }

    /// Whether the strategy fits the accept rule exactly and the reasoning
    /// mass in the room it leaves.
    pub fn admissible(&self, strategy: &RxStrategy, tol: f64) -> bool {
        strategy.links.iter().enumerate().all(|(k, p)| {
            (p[0] - self.accept[k]).abs() <= tol
                && p[1] >= -tol
                && p[2] >= -tol
                && p[1] + p[2] <= self.room(k) + tol
                && (self.reasoning || p[1] + p[2] <= tol)
        })
    }

    /// One evaluation of the linearized stationarity map on link `k`.
    pub fn taylor_map(&self, k: usize, local: f64, cloud: f64, duals: ComputeDuals) -> (f64, f64) {
        let room = self.room(k);
        let link = &self.links[k];
        let load = link.load();
        let beta = beta_from(local, cloud, &load);
        let Ok((x, dx)) = self.cloud.x_taylor(beta, beta.beta1) else {
            return (0.0, 0.0);
        };
        let b = self.bound_scale * (-0.5 * x * x).exp();
        let p = link.decode_reliability;
        let w = load.workload();
        let a = p * link.weighted_distortion(self.scale);
        let sens = [p * w / link.local_capacity, p * w / link.cc_share];
        let pull = [duals.local * w / self.local_capacity, duals.cloud * w / self.cc_capacity];
        let mut out = [0.0; 2];
        for d in 0..2 {
            let den = dx * x * b * sens[d] * a;
            let v = (b * a + pull[d]) / den;
            out[d] = if v.is_finite() && den > 0.0 { v.clamp(0.0, room) } else { room };
        }
        let total = out[0] + out[1];
        if total > room && total > 0.0 {
            out[0] *= room / total;
            out[1] *= room / total;
        }
        (out[0], out[1])
    }

    /// Damped iteration of [`Self::taylor_map`] from `start`.
    pub fn fixed_point(&self, k: usize, start: (f64, f64), duals: ComputeDuals) -> FixedPointRun {
        let rho = self.tolerances.damping;
        let (mut l, mut c) = start;
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..self.tolerances.max_iters {
            let (fl, fc) = self.taylor_map(k, l, c, duals);
            let nl = (1.0 - rho) * l + rho * fl;
            let nc = (1.0 - rho) * c + rho * fc;
            let step = (nl - l).abs().max((nc - c).abs());
            residuals.push(step);
            l = nl;
            c = nc;
            if step <= self.tolerances.fixedpoint_tol {
                converged = true;
                break;
            }
        }
        FixedPointRun {
            local: l,
            cloud: c,
            iterations: residuals.len(),
            residual: residuals.last().copied().unwrap_or(0.0),
            converged,
            residuals,
        }
    }

    /// Projected-gradient minimization of link `k`'s cost from the best of
    /// a coarse grid, the given starts, and `keep`. `keep` wins ties.
    fn polish_link(&self, k: usize, starts: &[(f64, f64)], keep: Option<(f64, f64)>, duals: ComputeDuals) -> (f64, f64) {
        let room = self.room(k);
        let f = |x: (f64, f64)| self.link_eval(k, x.0, x.1, duals).0;
        let mut cands: Vec<(f64, f64)> = Vec::new();
        if let Some(x) = keep {
            cands.push(project(x, room));
        }
        cands.extend(starts.iter().map(|&x| project(x, room)));
        for a in 0..=GRID {
            for b in 0..=(GRID - a) {
                cands.push((room * a as f64 / GRID as f64, room * b as f64 / GRID as f64));
            }
        }
        let mut best = cands[0];
        let mut best_f = f(best);
        for &c in &cands[1..] {
            let v = f(c);
            if v < best_f - 1e-12 {
                best = c;
                best_f = v;
            }
        }
        let x = self.descend(k, best, room, duals);
        match keep.map(|x| project(x, room)) {
            Some(prev) if f(prev) <= f(x) + 1e-12 => prev,
            _ => x,
        }
    }

    fn descend(&self, k: usize, start: (f64, f64), room: f64, duals: ComputeDuals) -> (f64, f64) {
        let mut x = start;
        let (mut fx, mut g1, mut g2) = self.link_eval(k, x.0, x.1, duals);
        for _ in 0..self.tolerances.max_iters {
            let mut t = 1.0;
            let mut moved = None;
            for _ in 0..60 {
                let y = project((x.0 - t * g1, x.1 - t * g2), room);
                let (d1, d2) = (y.0 - x.0, y.1 - x.1);
                if d1.abs().max(d2.abs()) <= 1e-15 {
                    break;
                }
                let (fy, h1, h2) = self.link_eval(k, y.0, y.1, duals);
                if fy <= fx + 1e-4 * (g1 * d1 + g2 * d2) {
                    moved = Some((y, fy, h1, h2, d1.abs().max(d2.abs())));
                    break;
                }
                t *= 0.5;
            }
            let Some((y, fy, h1, h2, step)) = moved else { break };
            x = y;
            fx = fy;
            g1 = h1;
            g2 = h2;
            if step <= 1e-13 {
                break;
            }
        }
        x
    }

    fn solve_links(&self, prev: Option<&RxStrategy>, duals: ComputeDuals) -> (RxStrategy, usize, f64, bool) {
        let mut links = Vec::with_capacity(self.num_links());
        let mut iters = 0;
        let mut residual: f64 = 0.0;
        let mut converged = true;
        for k in 0..self.num_links() {
            let a0 = self.accept[k];
            if !self.reasoning {
                links.push([a0, 0.0, 0.0, 1.0 - a0]);
                continue;
            }
            let keep = prev.map(|p| (p.links[k][1], p.links[k][2]));
            let run = self.fixed_point(k, keep.unwrap_or((0.0, 0.0)), duals);
            iters = iters.max(run.iterations);
            residual = residual.max(run.residual);
            converged &= run.converged;
            let (l, c) = self.polish_link(k, &[(run.local, run.cloud)], keep, duals);
            links.push(close(a0, l, c));
        }
        let mut st = RxStrategy::from_links(links);
        st.duals = duals;
        (st, iters, residual, converged)
    }

    /// Full best response, optionally warm-started from (and tie-broken
    /// towards) `prev`.
    pub fn solve(&self, prev: Option<&RxStrategy>) -> FollowerSolution {
        let (strategy, iters, residual, converged) = self.solve_links(prev, ComputeDuals::default());
        let sol = FollowerSolution {
            constraint_violations: self.violations(&strategy),
            strategy,
            fixed_point_iterations: iters,
            residual,
            converged,
        };
        self.enforce(sol, prev)
    }

    /// Dual ascent on the two compute constraints, then a scale-down repair
    /// of any violation left.
    pub fn enforce(&self, mut sol: FollowerSolution, prev: Option<&RxStrategy>) -> FollowerSolution {
        let tol = self.tolerances.fixedpoint_tol;
        let mut duals = sol.strategy.duals;
        let mut it = 0;
        while violated(self.raw_violations(&sol.strategy), tol) && it < DUAL_ITERS {
            let v = self.raw_violations(&sol.strategy);
            duals.local = (duals.local + DUAL_STEP * v[0]).max(0.0);
            duals.cloud = (duals.cloud + DUAL_STEP * v[1]).max(0.0);
            let (st, iters, residual, converged) = self.solve_links(prev, duals);
            sol.strategy = st;
            sol.fixed_point_iterations = iters;
            sol.residual = residual;
            sol.converged = converged;
            it += 1;
        }
        self.repair(&mut sol.strategy);
        sol.constraint_violations = self.violations(&sol.strategy);
        sol
    }

    /// Signed normalized violations, used for the dual step. Positive
    /// entries mean the constraint is broken.
    fn raw_violations(&self, strategy: &RxStrategy) -> [f64; 2] {
        let (local, cloud) = self.loads(strategy);
        [
            (local - self.local_capacity) / self.local_capacity,
            (cloud - self.cc_room()) / self.cc_capacity,
        ]
    }

    /// Scales reasoning mass down until both constraints hold, moving it to
    /// drop.
    fn repair(&self, strategy: &mut RxStrategy) {
        let (local, cloud) = self.loads(strategy);
        let fl = if local > self.local_capacity { self.local_capacity / local } else { 1.0 };
        let room = self.cc_room();
        let fc = if cloud > room { if cloud > 0.0 { room / cloud } else { 1.0 } } else { 1.0 };
        if fl == 1.0 && fc == 1.0 {
            return;
        }
        for p in &mut strategy.links {
            let l = p[1] * fl;
            let c = p[2] * fc;
            *p = close(p[0], l, c);
        }
    }
}

fn violated(v: [f64; 2], tol: f64) -> bool {
    v[0] > tol || v[1] > tol
}

fn close(a0: f64, l: f64, c: f64) -> ActionProbs {
    let d = (1.0 - a0 - l - c).max(0.0);
    [a0, l, c, d]
}

/// Euclidean projection onto `{x >= 0, x1 + x2 <= room}`.
fn project(x: (f64, f64), room: f64) -> (f64, f64) {
    let a = x.0.max(0.0);
    let b = x.1.max(0.0);
    if a + b <= room {
        return (a, b);
    }
    let t = 0.5 * (x.0 + x.1 - room);
    let (a, b) = (x.0 - t, x.1 - t);
    if a < 0.0 {
        (0.0, room)
    } else if b < 0.0 {
        (room, 0.0)
    } else {
        (a, b)
    }
}

/// Best response of RX `j` against its perceptions.
pub fn reasoning_split_fixed_point(
    j: usize,
    perception: &PerceptionState,
    s: &Scenario,
    prev: Option<&RxStrategy>,
) -> FollowerSolution {
    FollowerProblem::new(s, j, &perception.rx[j]).solve(prev)
}

/// Dual ascent and repair on an existing solution for RX `j`.
pub fn enforce_compute_constraints(
    j: usize,
    solution: FollowerSolution,
    perception: &PerceptionState,
    s: &Scenario,
) -> FollowerSolution {
    FollowerProblem::new(s, j, &perception.rx[j]).enforce(solution, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, Shape};
    use crate::strategy::TxStrategy;

    #[test]
    fn drop_examples() {
        assert_eq!(drop_probability([1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((drop_probability([0.2, 0.3, 0.1]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(drop_probability([0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(drop_probability([0.6, 0.6, 0.0]), Err(Error::Simplex(_))));
    }

    #[test]
    fn accept_examples() {
        let s = generate_scenario(1, Shape { num_tx: 1, num_rx: 1, concepts_per_tx: 1 }, 1.0).unwrap();
        let mut link = LinkModel::truth(&s, 0, 0, &TxStrategy::point(1, s.bit_actions(), 0));
        link.variance = vec![1.0];
        let p = accept_with(&link, 1.0, 4.0, AcceptRule::WithinTolerance);
        assert!((p - 0.682_689_492_137_086).abs() < 1e-9, "{p}");
        assert_eq!(accept_with(&link, f64::INFINITY, 4.0, AcceptRule::WithinTolerance), 1.0);
        assert_eq!(accept_with(&link, 0.0, 4.0, AcceptRule::WithinTolerance), 0.0);
        let lit = accept_with(&link, 1.0, 4.0, AcceptRule::Literal);
        assert!((lit + p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_lands_in_triangle() {
        for &(x, room) in &[((-1.0, 5.0), 1.0), ((-1.0, 1.5), 1.0), ((0.7, 0.7), 1.0), ((0.2, 0.3), 0.6)] {
            let p = project(x, room);
            assert!(p.0 >= 0.0 && p.1 >= 0.0 && p.0 + p.1 <= room + 1e-15, "{x:?} -> {p:?}");
        }
        assert_eq!(project((0.2, 0.3), 0.6), (0.2, 0.3));
    }

    #[test]
    fn full_accept_leaves_nothing() {
        let s = generate_scenario(2, Shape { num_tx: 1, num_rx: 1, concepts_per_tx: 2 }, 0.5).unwrap();
        let p = PerceptionState::initial(&s, Default::default());
        let mut prob = FollowerProblem::new(&s, 0, &p.rx[0]);
        prob.accept = vec![1.0];
        let sol = prob.solve(None);
        assert_eq!(sol.strategy.links[0], [1.0, 0.0, 0.0, 0.0]);
    }
}
