use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semhyper::follower::FollowerProblem;
use semhyper::leader::{solve_views, LeaderView};
use semhyper::perception::LeaderBeliefs;
use semhyper::scenario::{generate_scenario, Scenario, Shape};
use semhyper::strategy::{ActionProbs, RxStrategy, TxStrategy};
use semhyper::utilities::{rx_utility, LinkModel};

fn tiny(seed: u64, d: usize, amax: u32) -> Scenario {
    let mut s = generate_scenario(seed, Shape { num_tx: 1, num_rx: 1, concepts_per_tx: d }, 0.5).unwrap();
    s.bit_alphabet_max = amax;
    s
}

fn beliefs(s: &Scenario, rx: ActionProbs) -> LeaderBeliefs {
    LeaderBeliefs {
        rx_links: vec![rx],
        relevance: vec![s.tasks[0].relevance[0].clone()],
        other_tx: vec![TxStrategy::point(s.concepts_per_tx, s.bit_actions(), 0)],
    }
}

/// Leader cost of a single TX facing a single RX, written from the model.
fn leader_cost(s: &Scenario, rx: &ActionProbs, means: &[f64]) -> f64 {
    let p = s.channels.links[0][0].decode_reliability;
    let q = p * (1.0 - rx[3]);
    let mut f = 0.0;
    for (r, m) in means.iter().enumerate() {
        let w = s.tasks[0].relevance[0][r];
        let var = s.concepts[0][r].variance * s.channels.links[0][0].noise_variance;
        let dist = w * var / (2.0 * std::f64::consts::LN_2 * q) * 2f64.powf(-2.0 * w * m / s.rate_distortion_scale);
        f += s.alpha1 * w * m + s.alpha2 * (-rx[0] * w * p.ln() + dist);
    }
    f
}

fn weighted(s: &Scenario, means: &[f64]) -> f64 {
    means.iter().enumerate().map(|(r, m)| s.tasks[0].relevance[0][r] * m).sum()
}

fn grid_min(s: &Scenario, rx: &ActionProbs, budget: f64, steps: usize) -> f64 {
    let amax = s.bit_alphabet_max as f64;
    let d = s.concepts_per_tx;
    let mut best = f64::INFINITY;
    let total = (steps + 1).pow(d as u32);
    for code in 0..total {
        let means: Vec<f64> = (0..d)
            .map(|r| amax * ((code / (steps + 1).pow(r as u32)) % (steps + 1)) as f64 / steps as f64)
            .collect();
        if weighted(s, &means) <= budget + 1e-12 {
            best = best.min(leader_cost(s, rx, &means));
        }
    }
    best
}

#[test]
fn leader_matches_grid_on_one_concept() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let s = tiny(seed, 1, 2);
        let a = rng.gen_range(0.2..0.6);
        let rx = [a, 0.1, 0.2, 0.7 - a];
        let budget = rng.gen_range(0.1..2.0);
        let view = LeaderView::new(&s, 0, &beliefs(&s, rx));
        let sol = solve_views(&[view], budget, &s).unwrap().remove(0);
        let got = leader_cost(&s, &rx, &sol.strategy.means());
        let edge = (budget / s.tasks[0].relevance[0][0]).min(2.0);
        let want = grid_min(&s, &rx, budget, 2000).min(leader_cost(&s, &rx, &[edge]));
        assert!(weighted(&s, &sol.strategy.means()) <= budget + 1e-6);
        assert!(got <= want * 1.05 + 1e-12 && got >= want - 1e-6 * want.abs().max(1.0), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn leader_matches_grid_on_two_concepts_and_spends_budget() {
    for seed in 0..10 {
        let s = tiny(seed, 2, 4);
        let rx = [0.5, 0.1, 0.3, 0.1];
        let view = LeaderView::new(&s, 0, &beliefs(&s, rx));
        let sol = solve_views(&[view], 3.0, &s).unwrap().remove(0);
        let means = sol.strategy.means();
        let got = leader_cost(&s, &rx, &means);
        let want = grid_min(&s, &rx, 3.0, 200);
        assert!(got <= want * 1.05 + 1e-12, "seed {seed}: {got} vs {want}");
        if sol.lambda > 0.0 {
            assert!((weighted(&s, &means) - 3.0).abs() < 1e-6, "seed {seed}");
        }
        // Two-point mixture on {0, A_max}.
        for c in &sol.strategy.concepts {
            assert!(c[1..4].iter().all(|p| *p == 0.0));
        }
    }
}

proptest! {
    #[test]
    fn multiplier_falls_as_budget_grows(seed in 0u64..200, b in 0.05f64..4.0, more in 0.01f64..4.0) {
        let s = tiny(seed, 2, 4);
        let rx = [0.4, 0.2, 0.2, 0.2];
        let view = LeaderView::new(&s, 0, &beliefs(&s, rx));
        let tight = solve_views(&[view.clone()], b, &s).unwrap().remove(0);
        let loose = solve_views(&[view], b + more, &s).unwrap().remove(0);
        prop_assert!(loose.lambda <= tight.lambda + 1e-9);
        let (wt, wl) = (weighted(&s, &tight.strategy.means()), weighted(&s, &loose.strategy.means()));
        prop_assert!(wl >= wt - 1e-6);
    }
}

fn follower_case(seed: u64, amax: u32, bits: f64) -> (Scenario, TxStrategy, FollowerProblem) {
    let s = tiny(seed, 1, amax);
    let tx = TxStrategy::from_means(&[bits], s.bit_actions());
    let prob = FollowerProblem::from_links(&s, 0, vec![LinkModel::truth(&s, 0, 0, &tx)], 0.0);
    (s, tx, prob)
}

#[test]
fn follower_matches_grid_on_one_concept() {
    for seed in 0..20 {
        let (s, tx, prob) = follower_case(seed, 2, 0.3 + 0.08 * seed as f64);
        let tx = [tx];
        let sol = prob.solve(None);
        let got = rx_utility(&s, 0, &tx, &sol.strategy);
        let a0 = prob.accept[0];
        let room = 1.0 - a0;
        let steps = 400;
        let mut want = f64::INFINITY;
        for i in 0..=steps {
            for c in 0..=(steps - i) {
                let (l, cl) = (room * i as f64 / steps as f64, room * c as f64 / steps as f64);
                let cand = RxStrategy::from_links(vec![[a0, l, cl, (1.0 - a0 - l - cl).max(0.0)]]);
                if prob.violations(&cand).iter().all(|v| *v == 0.0) {
                    want = want.min(rx_utility(&s, 0, &tx, &cand));
                }
            }
        }
        assert!(prob.admissible(&sol.strategy, 1e-9));
        assert!(got <= want * 1.05 + 1e-12, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn follower_respects_tight_compute() {
    for seed in 0..10 {
        let mut s = tiny(seed, 1, 4);
        let tx = TxStrategy::from_means(&[1.0], s.bit_actions());
        let free = FollowerProblem::from_links(&s, 0, vec![LinkModel::truth(&s, 0, 0, &tx)], 0.0);
        let (l, c) = free.loads(&free.solve(None).strategy);
        if l + c == 0.0 {
            continue;
        }
        s.tasks[0].local_capacity = (l * 0.3).max(1.0);
        s.tasks[0].cc_share = (c * 0.3).max(1.0);
        let prob = FollowerProblem::from_links(&s, 0, vec![LinkModel::truth(&s, 0, 0, &tx)], 0.0);
        let sol = prob.solve(None);
        let (ls, cs) = prob.loads(&sol.strategy);
        assert!(ls <= prob.local_capacity * (1.0 + 1e-9), "seed {seed}");
        assert!(cs <= prob.cc_capacity * (1.0 + 1e-9), "seed {seed}");
        assert_eq!(sol.constraint_violations, [0.0, 0.0]);
    }
}

#[test]
fn follower_without_reasoning_only_accepts_or_drops() {
    let (_, _, mut prob) = follower_case(3, 4, 2.0);
    prob.reasoning = false;
    let sol = prob.solve(None);
    let p = sol.strategy.links[0];
    assert_eq!((p[1], p[2]), (0.0, 0.0));
    assert!((p[0] + p[3] - 1.0).abs() < 1e-12);
}
