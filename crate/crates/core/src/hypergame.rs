//! The alternating-minimization loop over strategies and perceptions, swap
//! learning, and local equilibrium certification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::follower::FollowerProblem;
use crate::leader::{solve_leaders, LeaderView};
use crate::outcome::{sample_outcomes, MisperceptionContext, Outcome};
use crate::perception::{Pair, PerceptionInit, PerceptionState, Player};
use crate::scenario::Scenario;
use crate::strategy::{RxStrategy, TxStrategy};
use crate::utilities::UtilityReport;

/// When a pair's perception is revised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Every pair takes a descent step every round.
    #[default]
    Always,
    /// Only pairs whose swap trigger fired.
    Triggered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_rounds: usize,
    /// Outcomes sampled per round for the misperception functions.
    pub outcomes: usize,
    pub update_mode: UpdateMode,
    /// Perceptions learn from outcomes.
    pub learning: bool,
    /// Perceptions are reset to the actual strategies and relevance every round.
    pub pin_truth: bool,
    /// Receivers may reason; when false they only accept or drop.
    pub reasoning: bool,
    pub initial: PerceptionInit,
    pub strategy_tol: f64,
    pub misperception_tol: f64,
    /// Halvings tried by the swap-learning line search.
    pub backtracks: usize,
    /// Per-round factor on the learning rate: round `t` starts its line
    /// search at `eta * rate_decay^(t-1)`.
    pub rate_decay: f64,
    /// Smallest drop in a pair's misperception for which a step is taken.
    pub min_decrease: f64,
    /// Passes of pairwise updates per round against the same outcomes.
    pub learning_steps: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_rounds: 500,
            outcomes: 64,
            update_mode: UpdateMode::Always,
            learning: true,
            pin_truth: false,
            reasoning: true,
            initial: PerceptionInit::default(),
            strategy_tol: 1e-6,
            misperception_tol: 1e-6,
            backtracks: 40,
            rate_decay: 1.0,
            min_decrease: 1e-10,
            learning_steps: 20,
        }
    }
}

/// Strategies and own-game utilities at the end of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tx: Vec<TxStrategy>,
    pub rx: Vec<RxStrategy>,
    /// Per player, in [`Player::all`] order, its cost in its own perceived game.
    pub own_utility: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypergameState {
    pub tx: Vec<TxStrategy>,
    pub rx: Vec<RxStrategy>,
    pub perceptions: PerceptionState,
    pub round: usize,
    /// One snapshot per completed round.
    pub history: Vec<Snapshot>,
    /// Outcomes of the most recent round.
    pub outcomes: Vec<Outcome>,
    /// Per round, misperception of every pair in [`Pair::all`] order.
    pub misperception_trace: Vec<Vec<f64>>,
    /// Receivers were allowed to reason.
    pub reasoning: bool,
}

impl HypergameState {
    pub fn new(s: &Scenario, perceptions: PerceptionState) -> Self {
        Self {
            tx: vec![TxStrategy::uniform(s.concepts_per_tx, s.bit_actions()); s.num_tx],
            rx: vec![RxStrategy::uniform(s.num_tx); s.num_rx],
            perceptions,
            round: 0,
            history: Vec::new(),
            outcomes: Vec::new(),
            misperception_trace: Vec::new(),
            reasoning: true,
        }
    }

    pub fn misperception(&self) -> &[f64] {
        self.misperception_trace.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// One round of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub report: UtilityReport,
    pub misperception: Vec<f64>,
    pub strategy_change: f64,
    pub misperception_change: f64,
    pub updates: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub state: HypergameState,
    pub trace: Vec<RoundRecord>,
    pub converged: bool,
}

impl RunResult {
    pub fn final_report(&self) -> Option<&UtilityReport> {
        self.trace.last().map(|r| &r.report)
    }
}

/// Seed of the common outcome stream for a scenario.
pub fn outcome_seed(s: &Scenario) -> u64 {
    s.rng_seed ^ 0x5eed_0f_0u64.rotate_left(17)
}

/// Each player's cost in its own perceived game.
pub fn own_utilities(s: &Scenario, tx: &[TxStrategy], rx: &[RxStrategy], p: &PerceptionState) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.num_players());
    for k in 0..s.num_tx {
        out.push(LeaderView::new(s, k, &p.tx[k]).objective(&tx[k].means()));
    }
    for j in 0..s.num_rx {
        out.push(FollowerProblem::new(s, j, &p.rx[j]).cost(&rx[j]));
    }
    out
}

fn strategy_of(snap: &Snapshot, player: Player) -> StrategyRef<'_> {
    match player {
        Player::Tx(k) => StrategyRef::Tx(&snap.tx[k]),
        Player::Rx(j) => StrategyRef::Rx(&snap.rx[j]),
    }
}

enum StrategyRef<'a> {
    Tx(&'a TxStrategy),
    Rx(&'a RxStrategy),
}

fn changed(a: StrategyRef<'_>, b: StrategyRef<'_>) -> f64 {
    match (a, b) {
        (StrategyRef::Tx(x), StrategyRef::Tx(y)) => x.distance(y),
        (StrategyRef::Rx(x), StrategyRef::Rx(y)) => x.distance(y),
        _ => f64::INFINITY,
    }
}

fn player_index(s: &Scenario, p: Player) -> usize {
    match p {
        Player::Tx(k) => k,
        Player::Rx(j) => s.num_tx + j,
    }
}

/// Per pair in [`Pair::all`] order: the subject changed its strategy and
/// lowered its own cost in the last round while the perceiver stayed put.
pub fn detect_swap_trigger(s: &Scenario, history: &[Snapshot], tol: f64) -> Vec<bool> {
    let pairs = Pair::all(s);
    if history.len() < 2 {
        return vec![false; pairs.len()];
    }
    let (prev, last) = (&history[history.len() - 2], &history[history.len() - 1]);
    pairs
        .iter()
        .map(|pair| {
            let b = pair.subject;
            let a = pair.perceiver;
            let b_moved = changed(strategy_of(last, b), strategy_of(prev, b)) > tol;
            let bi = player_index(s, b);
            let b_gained = last.own_utility[bi] < prev.own_utility[bi] - tol;
            let a_still = changed(strategy_of(last, a), strategy_of(prev, a)) <= tol;
            b_moved && b_gained && a_still
        })
        .collect()
}

/// Width of the smoothed absolute value used for the gradient, relative to
/// the mean absolute residual.
const SMOOTHING: f64 = 0.1;

/// Doublings tried when the first line-search trial already succeeds.
const EXPANSIONS: usize = 10;

/// Line-search settings of one swap-learning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub eta: f64,
    pub backtracks: usize,
    pub min_decrease: f64,
}

/// Result of one swap-learning step.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapStep {
    pub perceptions: PerceptionState,
    pub before: f64,
    pub after: f64,
    pub accepted: bool,
    /// The gradient was not finite and the step was skipped.
    pub skipped: bool,
}

/// Gradient step on `pair`'s misperception with central differences and a
/// line search starting at the learning rate: halved until it gives
/// sufficient decrease, or doubled while it keeps improving when the first
/// trial already does. A step that does not lower the misperception is not
/// taken.
pub fn swap_learning_step(
    pair: Pair,
    perceptions: &PerceptionState,
    ctx: &MisperceptionContext<'_>,
    rule: StepRule,
) -> SwapStep {
    let s = ctx.scenario;
    let before = ctx.misperception(pair, perceptions);
    let unchanged = |skipped| SwapStep {
        perceptions: perceptions.clone(),
        before,
        after: before,
        accepted: false,
        skipped,
    };
    let StepRule {
        eta,
        backtracks,
        min_decrease,
    } = rule;
    if before == 0.0 || eta == 0.0 {
        return unchanged(false);
    }
    let theta = perceptions.params(pair);
    let h = s.tolerances.fd_step;
    let res = ctx.residuals(pair, perceptions);
    let mu = SMOOTHING * before / res.len() as f64;
    let weights: Vec<f64> = res.iter().map(|r| r / (r * r + mu * mu).sqrt()).collect();
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.clone();
    let mut scratch = perceptions.clone();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        scratch.set_params(pair, &probe);
        let up = ctx.residuals(pair, &scratch);
        probe[i] = theta[i] - h;
        scratch.set_params(pair, &probe);
        let down = ctx.residuals(pair, &scratch);
        probe[i] = theta[i];
        grad[i] = weights
            .iter()
            .zip(up.iter().zip(&down))
            .map(|(w, (u, d))| w * (u - d))
            .sum::<f64>()
            / (2.0 * h);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return unchanged(true);
    }
    let g2: f64 = grad.iter().map(|g| g * g).sum();
    if g2 == 0.0 {
        return unchanged(false);
    }
    let trial = |t: f64| {
        let next: Vec<f64> = theta.iter().zip(&grad).map(|(x, g)| x - t * g).collect();
        let cand = perceptions.with_params(pair, &next);
        let after = ctx.misperception(pair, &cand);
        (cand, after)
    };
    let mut t = eta;
    for i in 0..=backtracks {
        let (mut cand, mut after) = trial(t);
        if after <= before - 1e-4 * t * g2 {
            if i == 0 {
                for _ in 0..EXPANSIONS {
                    let (c, a) = trial(2.0 * t);
                    if a > after || a > before - 2e-4 * t * g2 {
                        break;
                    }
                    t *= 2.0;
                    cand = c;
                    after = a;
                }
            }
            if before - after < min_decrease {
                return unchanged(false);
            }
            return SwapStep {
                perceptions: cand,
                before,
                after,
                accepted: true,
                skipped: false,
            };
        }
        t *= 0.5;
    }
    unchanged(false)
}

/// Applies one swap step to every selected pair in [`Pair::all`] order.
/// Returns the number of accepted steps.
pub fn pairwise_updates(
    perceptions: &mut PerceptionState,
    ctx: &MisperceptionContext<'_>,
    selected: &[bool],
    rule: StepRule,
) -> usize {
    let mut applied = 0;
    for (pair, &on) in Pair::all(ctx.scenario).into_iter().zip(selected) {
        if !on {
            continue;
        }
        let step = swap_learning_step(pair, perceptions, ctx, rule);
        if step.accepted {
            *perceptions = step.perceptions;
            applied += 1;
        }
    }
    applied
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the hypergame from uniform strategies and the configured initial
/// perceptions.
pub fn run_hypergame(s: &Scenario, cfg: &EngineConfig) -> Result<RunResult> {
    let p = PerceptionState::initial(s, cfg.initial);
    run_from(s, cfg, HypergameState::new(s, p))
}

/// Runs up to `cfg.max_rounds` rounds from `state`.
pub fn run_from(s: &Scenario, cfg: &EngineConfig, mut state: HypergameState) -> Result<RunResult> {
    let mut trace = Vec::new();
    let mut converged = false;
    let seed = outcome_seed(s);
    state.reasoning = cfg.reasoning;
    for _ in 0..cfg.max_rounds {
        let round = state.round + 1;
        let rec = play_round(s, cfg, &mut state, seed).map_err(|e| e.at_round(round))?;
        let done = trace.len() >= 1
            && rec.strategy_change <= cfg.strategy_tol
            && rec.misperception_change <= cfg.misperception_tol;
        trace.push(rec);
        if done {
            converged = true;
            break;
        }
    }
    Ok(RunResult {
        state,
        trace,
        converged,
    })
}

fn play_round(s: &Scenario, cfg: &EngineConfig, state: &mut HypergameState, seed: u64) -> Result<RoundRecord> {
    let prev_tx = state.tx.clone();
    let prev_rx = state.rx.clone();
    let p = &mut state.perceptions;
    if cfg.pin_truth {
        p.pin_leader_views(s, &prev_rx);
        for b in &mut p.tx {
            b.other_tx = prev_tx.clone();
        }
    }
    let leaders = solve_leaders(p, s)?;
    let lambda = leaders.first().map(|l| l.lambda).unwrap_or(0.0);
    let tx: Vec<TxStrategy> = leaders.into_iter().map(|l| l.strategy).collect();
    if cfg.pin_truth {
        p.pin_follower_views(&tx, &prev_rx);
    }
    let mut rx = Vec::with_capacity(s.num_rx);
    for j in 0..s.num_rx {
        let mut prob = FollowerProblem::new(s, j, &p.rx[j]);
        prob.reasoning = cfg.reasoning;
        let sol = prob.solve(Some(&prev_rx[j]));
        if sol.constraint_violations.iter().any(|v| *v > s.tolerances.fixedpoint_tol) {
            return Err(Error::Solver(format!(
                "rx{j} compute constraints violated by {:?}",
                sol.constraint_violations
            )));
        }
        rx.push(sol.strategy);
    }
    if cfg.pin_truth {
        p.pin_to_truth(s, &tx, &rx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcomes = sample_outcomes(s, &tx, &rx, &mut rng, cfg.outcomes);
    let own = own_utilities(s, &tx, &rx, p);
    state.history.push(Snapshot {
        tx: tx.clone(),
        rx: rx.clone(),
        own_utility: own,
    });
    let ctx = MisperceptionContext::new(s, &tx, &rx, &outcomes, p);
    let mut updates = 0;
    if cfg.learning && !cfg.pin_truth {
        let selected = match cfg.update_mode {
            UpdateMode::Always => vec![true; Pair::all(s).len()],
            UpdateMode::Triggered => detect_swap_trigger(s, &state.history, cfg.strategy_tol),
        };
        let rule = StepRule {
            eta: s.learning_rate * cfg.rate_decay.powi(state.round as i32),
            backtracks: cfg.backtracks,
            min_decrease: cfg.min_decrease,
        };
        for _ in 0..cfg.learning_steps {
            let n = pairwise_updates(p, &ctx, &selected, rule);
            updates += n;
            if n == 0 {
                break;
            }
        }
    }
    let mis = ctx.all(p);

    let strategy_change = prev_tx
        .iter()
        .zip(&tx)
        .map(|(a, b)| a.distance(b))
        .chain(prev_rx.iter().zip(&rx).map(|(a, b)| a.distance(b)))
        .fold(0.0, f64::max);
    let misperception_change = match state.misperception_trace.last() {
        Some(last) => max_abs_diff(last, &mis),
        None => f64::INFINITY,
    };
    let report = UtilityReport::evaluate(s, &tx, &rx)?;
    state.tx = tx;
    state.rx = rx;
    state.round += 1;
    state.outcomes = outcomes;
    state.misperception_trace.push(mis.clone());
    Ok(RoundRecord {
        round: state.round,
        report,
        misperception: mis,
        strategy_change,
        misperception_change,
        updates,
        lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HseReport {
    pub converged: bool,
    pub strategy_change_norm: f64,
    /// Per player in [`Player::all`] order.
    pub gaps: Vec<f64>,
    pub misperception_final: Vec<f64>,
    /// No probes were run, so the gaps say nothing.
    pub vacuous: bool,
}

/// Largest perturbation weight used by the probes.
pub const PROBE_RADIUS: f64 = 0.05;
/// Gap below which a player counts as best-responding.
pub const GAP_TOL: f64 = 1e-4;

fn dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).expect("unit gamma");
    let v: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Probes `probes` random feasible perturbations of every player's strategy
/// inside its own perceived game and reports the largest improvement found.
pub fn check_local_hse(
    s: &Scenario,
    state: &HypergameState,
    probes: usize,
    strategy_change_norm: f64,
) -> HseReport {
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed.wrapping_add(0x4853_45));
    let p = &state.perceptions;
    let mut gaps = Vec::with_capacity(s.num_players());
    let views: Vec<LeaderView> = (0..s.num_tx).map(|k| LeaderView::new(s, k, &p.tx[k])).collect();
    let used: Vec<f64> = views
        .iter()
        .zip(&state.tx)
        .map(|(v, t)| v.weighted_bits(&t.means()))
        .collect();
    let total_used: f64 = used.iter().sum();
    for (k, view) in views.iter().enumerate() {
        let room = (s.bit_budget - (total_used - used[k])).max(0.0);
        let base = &state.tx[k];
        let f0 = view.objective(&base.means());
        let mut gap: f64 = 0.0;
        for _ in 0..probes {
            let eps = PROBE_RADIUS * (1.0 - rng.gen::<f64>());
            let concepts = base
                .concepts
                .iter()
                .map(|row| {
                    let q = dirichlet(row.len(), &mut rng);
                    row.iter().zip(&q).map(|(a, b)| (1.0 - eps) * a + eps * b).collect()
                })
                .collect();
            let cand = TxStrategy { concepts };
            let m = cand.means();
            if view.weighted_bits(&m) > room + s.tolerances.bisection_tol * room.max(1.0) {
                continue;
            }
            gap = gap.max(f0 - view.objective(&m));
        }
        gaps.push(gap);
    }
    for j in 0..s.num_rx {
        let mut prob = FollowerProblem::new(s, j, &p.rx[j]);
        prob.reasoning = state.reasoning;
        let base = &state.rx[j];
        let f0 = prob.cost(base);
        let mut gap: f64 = 0.0;
        for _ in 0..probes {
            let eps = PROBE_RADIUS * (1.0 - rng.gen::<f64>());
            let mut cand = base.clone();
            for (k, link) in cand.links.iter_mut().enumerate() {
                let q = dirichlet(3, &mut rng);
                let room = 1.0 - prob.accept[k];
                if prob.reasoning {
                    for d in 0..3 {
                        link[d + 1] = (1.0 - eps) * link[d + 1] + eps * room * q[d];
                    }
                }
            }
            if prob.violations(&cand).iter().any(|v| *v > s.tolerances.fixedpoint_tol) {
                continue;
            }
            gap = gap.max(f0 - prob.cost(&cand));
        }
        gaps.push(gap);
    }
    HseReport {
        converged: gaps.iter().all(|g| *g <= GAP_TOL),
        strategy_change_norm,
        gaps,
        misperception_final: state.misperception().to_vec(),
        vacuous: probes == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, Shape};

    fn scenario(seed: u64) -> Scenario {
        generate_scenario(seed, Shape::default(), 0.5).unwrap()
    }

    fn one_round(s: &Scenario) -> HypergameState {
        let cfg = EngineConfig {
            max_rounds: 1,
            learning: false,
            ..EngineConfig::default()
        };
        run_hypergame(s, &cfg).unwrap().state
    }

    #[test]
    fn swap_steps_never_raise_misperception() {
        let s = scenario(21);
        let st = one_round(&s);
        let ctx = MisperceptionContext::new(&s, &st.tx, &st.rx, &st.outcomes, &st.perceptions);
        let rule = StepRule {
            eta: s.learning_rate,
            backtracks: 40,
            min_decrease: 0.0,
        };
        let mut p = st.perceptions.clone();
        for pair in Pair::all(&s) {
            for _ in 0..5 {
                let step = swap_learning_step(pair, &p, &ctx, rule);
                assert!(step.after <= step.before, "{pair}: {} -> {}", step.before, step.after);
                assert_eq!(step.after, ctx.misperception(pair, &step.perceptions));
                p = step.perceptions;
            }
        }
    }

    #[test]
    fn zero_rate_leaves_perceptions_alone() {
        let s = scenario(22);
        let st = one_round(&s);
        let ctx = MisperceptionContext::new(&s, &st.tx, &st.rx, &st.outcomes, &st.perceptions);
        let rule = StepRule {
            eta: 0.0,
            backtracks: 40,
            min_decrease: 0.0,
        };
        let mut p = st.perceptions.clone();
        let n = pairwise_updates(&mut p, &ctx, &vec![true; Pair::all(&s).len()], rule);
        assert_eq!(n, 0);
        assert_eq!(p, st.perceptions);
    }

    #[test]
    fn swap_trigger_needs_a_gain_and_a_still_perceiver() {
        let s = scenario(23);
        let st = one_round(&s);
        let base = st.history[0].clone();
        let mut moved = base.clone();
        moved.rx[0] = RxStrategy::from_links(vec![[0.1, 0.2, 0.3, 0.4]; s.num_tx]);
        let rx0 = s.num_tx;
        moved.own_utility[rx0] -= 1.0;
        let fired = detect_swap_trigger(&s, &[base.clone(), moved.clone()], 1e-9);
        for (pair, f) in Pair::all(&s).into_iter().zip(&fired) {
            assert_eq!(*f, pair.subject == Player::Rx(0), "{pair}");
        }
        let mut worse = moved;
        worse.own_utility[rx0] += 2.0;
        assert!(detect_swap_trigger(&s, &[base.clone(), worse], 1e-9).iter().all(|f| !f));
        assert!(detect_swap_trigger(&s, &[base], 1e-9).iter().all(|f| !f));
    }

    #[test]
    fn learning_lowers_misperception() {
        let s = scenario(24);
        let run = run_hypergame(&s, &EngineConfig::default()).unwrap();
        let first: f64 = run.state.misperception_trace[0].iter().sum();
        let last: f64 = run.state.misperception().iter().sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn complete_information_fixed_point_is_local_equilibrium() {
        let s = scenario(25);
        let cfg = EngineConfig {
            pin_truth: true,
            ..EngineConfig::default()
        };
        let run = run_hypergame(&s, &cfg).unwrap();
        assert!(run.converged);
        let change = run.trace.last().unwrap().strategy_change;
        let rep = check_local_hse(&s, &run.state, 256, change);
        assert!(rep.converged, "gaps {:?}", rep.gaps);
        assert!(!rep.vacuous);
        assert!(check_local_hse(&s, &run.state, 0, change).vacuous);
    }

    #[test]
    fn runs_are_reproducible() {
        let s = scenario(26);
        let cfg = EngineConfig {
            max_rounds: 30,
            ..EngineConfig::default()
        };
        assert_eq!(run_hypergame(&s, &cfg).unwrap(), run_hypergame(&s, &cfg).unwrap());
    }
}
