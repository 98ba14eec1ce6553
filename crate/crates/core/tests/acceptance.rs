//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits nonzero if any fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use semhyper::baselines::{run_scheme, BaselineResult, Scheme};
use semhyper::channel::{BetaTerms, CloudLink};
use semhyper::experiments::{run_experiment, ExperimentConfig, ScenarioSource};
use semhyper::follower::FollowerProblem;
use semhyper::hypergame::{check_local_hse, run_hypergame, swap_learning_step, EngineConfig, StepRule};
use semhyper::leader::{solve_leaders, LeaderView};
use semhyper::oracle::{compare_with_oracle, tiny_fixtures, MIN_RESOLUTION};
use semhyper::outcome::MisperceptionContext;
use semhyper::perception::{Pair, PerceptionInit, PerceptionState};
use semhyper::scenario::{generate_scenario, generate_with, Scenario, ScenarioParams, Shape};
use semhyper::strategy::{RxStrategy, TxStrategy};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn ac1_bound_dominance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let samples = 100_000;
    let mut worst = f64::NEG_INFINITY;
    let mut fails = 0;
    for _ in 0..200 {
        let bw = rng.gen_range(50.0..1e4);
        let n0 = 10f64.powf(rng.gen_range(-5.0..-2.0));
        let power = rng.gen_range(0.1..5.0);
        let sigma = rng.gen_range(0.2..3.0);
        let tau = rng.gen_range(0.05..1.0);
        let beta1 = rng.gen_range(0.0..0.9) * tau;
        // Bits that put the normalized threshold anywhere in [0, 3].
        let x_target = rng.gen_range(0.0..3.0);
        let beta2 = bw * (tau - beta1) * (1.0 + x_target * sigma * power / (n0 * bw)).log2();
        let link = CloudLink {
            bandwidth: bw,
            noise_density: n0,
            power,
            gain_std: sigma,
            tau_max: tau,
        };
        let bound = link.success_bound(BetaTerms { beta1, beta2 });
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut hits = 0usize;
        for _ in 0..samples {
            let h: f64 = normal.sample(&mut rng);
            let rate = bw * (1.0 + h.abs() * power / (n0 * bw)).log2();
            let delay = if beta2 == 0.0 { beta1 } else { beta1 + beta2 / rate };
            if delay <= tau {
                hits += 1;
            }
        }
        let p = hits as f64 / samples as f64;
        let se = (p * (1.0 - p) / samples as f64).sqrt();
        let excess = p - (bound + 3.0 * se);
        worst = worst.max(excess);
        if excess > 0.0 {
            fails += 1;
        }
    }
    verdict(fails == 0, format!("200 sets, {fails} above bound + 3 SE, worst excess {worst:.3e}"))
}

fn ac2_stationarity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut found, mut tried) = (0, 0);
    let (mut worst_grad, mut worst_budget) = (0.0f64, 0.0f64);
    let h = 1e-6;
    while found < 100 && tried < 5000 {
        tried += 1;
        let mut s = generate_scenario(rng.gen(), Shape::default(), rng.gen_range(0.3..1.0)).unwrap();
        let mut p = PerceptionState::initial(&s, PerceptionInit::default());
        for b in &mut p.tx {
            for l in &mut b.rx_links {
                l.copy_from_slice(&simplex(4, &mut rng));
            }
            for row in &mut b.relevance {
                for w in row.iter_mut() {
                    *w = rng.gen_range(0.1..1.0);
                }
            }
        }
        let full: f64 = p
            .tx
            .iter()
            .enumerate()
            .map(|(k, b)| LeaderView::new(&s, k, b).weighted_bits(&vec![s.bit_alphabet_max as f64; s.concepts_per_tx]))
            .sum();
        s.bit_budget = rng.gen_range(0.1..0.7) * full;
        let sols = solve_leaders(&p, &s).unwrap();
        let views: Vec<LeaderView> = (0..s.num_tx).map(|k| LeaderView::new(&s, k, &p.tx[k])).collect();
        let lambda = sols[0].lambda;
        let amax = s.bit_alphabet_max as f64;
        let interior: Vec<(usize, usize)> = sols
            .iter()
            .enumerate()
            .flat_map(|(k, sol)| {
                sol.strategy
                    .means()
                    .into_iter()
                    .enumerate()
                    .filter(|(_, m)| *m > 1e-6 * amax && *m < amax * (1.0 - 1e-6))
                    .map(move |(r, _)| (k, r))
                    .collect::<Vec<_>>()
            })
            .collect();
        if lambda <= 0.0 || interior.is_empty() {
            continue;
        }
        found += 1;
        for &(k, r) in &interior {
            let base = &sols[k].strategy;
            for a in 1..s.bit_actions() {
                let shift = |d: f64| {
                    let mut t: TxStrategy = base.clone();
                    t.concepts[r][a] += d;
                    t.concepts[r][0] -= d;
                    views[k].lagrangian(&t, lambda)
                };
                let g = (shift(h) - shift(-h)) / (2.0 * h);
                worst_grad = worst_grad.max(g.abs());
            }
        }
        let used: f64 = views.iter().zip(&sols).map(|(v, sol)| v.weighted_bits(&sol.strategy.means())).sum();
        worst_budget = worst_budget.max((used - s.bit_budget).abs() / s.bit_budget);
    }
    verdict(
        found == 100 && worst_grad <= 1e-5 && worst_budget <= 1e-6,
        format!("{found} interior instances, max |dL| {worst_grad:.3e}, max budget error {worst_budget:.3e}"),
    )
}

fn random_follower<R: Rng>(s: &Scenario, rng: &mut R) -> FollowerProblem {
    let mut p = PerceptionState::initial(s, PerceptionInit::default());
    for k in 0..s.num_tx {
        let means: Vec<f64> = (0..s.concepts_per_tx)
            .map(|_| rng.gen::<f64>() * s.bit_alphabet_max as f64)
            .collect();
        p.rx[0].tx[k] = TxStrategy::from_means(&means, s.bit_actions());
    }
    for i in 1..s.num_rx {
        p.rx[0].other_rx[i] = RxStrategy::from_links((0..s.num_tx).map(|_| {
            let v = simplex(4, rng);
            [v[0], v[1], v[2], v[3]]
        }).collect());
    }
    FollowerProblem::new(s, 0, &p.rx[0])
}

fn reasoning_mass(st: &RxStrategy) -> f64 {
    st.links.iter().map(|l| l[1] + l[2]).sum()
}

fn ac3_feasibility_and_inverse_dependence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let regimes: [(f64, f64, f64); 4] = [(0.2, 1e8, 4e8), (0.02, 1e8, 4e8), (0.2, 2e6, 4e8), (0.05, 1e8, 5e6)];
    let (mut solved, mut infeasible, mut pairs, mut raised, mut interior) = (0, 0, 0, 0, 0);
    let (mut deadline_pairs, mut deadline_up) = (0, 0);
    for (tau, local, cc) in regimes {
        let params = ScenarioParams {
            tau_max: tau,
            local_capacity: local,
            cc_capacity: cc,
            ..ScenarioParams::default()
        };
        for _ in 0..50 {
            let s = generate_with(&params, rng.gen(), Shape::default(), 0.5).unwrap();
            let prob = random_follower(&s, &mut rng);
            let sol = prob.solve(None);
            solved += 1;
            // Both capacity constraints recomputed from the task data.
            let task = &s.tasks[0];
            let local_load: f64 = (0..s.num_tx).map(|k| sol.strategy.links[k][1] * task.link_workload(k)).sum();
            let cloud_load: f64 = (0..s.num_tx).map(|k| sol.strategy.links[k][2] * task.link_workload(k)).sum();
            let tol = s.tolerances.fixedpoint_tol;
            let cloud_room = (s.cc_capacity - prob.cc_other_load).max(0.0);
            let ok = sol.strategy.check(1e-9).is_ok()
                && prob.admissible(&sol.strategy, 1e-9)
                && local_load <= task.local_capacity * (1.0 + tol)
                && cloud_load <= cloud_room + tol * s.cc_capacity;
            if !ok {
                infeasible += 1;
            }
            let base = reasoning_mass(&sol.strategy);
            let room: f64 = prob.accept.iter().map(|a| 1.0 - a).sum();
            if base > 1e-6 && base < room - 1e-6 {
                interior += 1;
            }
            for c in [0.8, 0.6, 0.4] {
                let mut low = prob.clone();
                low.bound_scale = c;
                pairs += 1;
                if base > reasoning_mass(&low.solve(None).strategy) + 1e-6 {
                    raised += 1;
                }
            }
            let mut longer = s.clone();
            longer.tau_max *= 1.5;
            let mut p2 = FollowerProblem::new(&longer, 0, &semhyper::perception::FollowerBeliefs {
                tx: (0..s.num_tx).map(|k| TxStrategy::from_means(&prob.links[k].means, s.bit_actions())).collect(),
                other_rx: vec![RxStrategy::uniform(s.num_tx); s.num_rx],
            });
            p2.cc_other_load = prob.cc_other_load;
            deadline_pairs += 1;
            if reasoning_mass(&p2.solve(None).strategy) > base + 1e-6 {
                deadline_up += 1;
            }
        }
    }
    verdict(
        infeasible == 0 && raised == 0,
        format!(
            "{solved} solves, {infeasible} infeasible ({interior} with interior reasoning mass); \
             {raised}/{pairs} scaled-bound pairs where the higher bound reasoned more; \
             longer deadline raised reasoning mass on {deadline_up}/{deadline_pairs}"
        ),
    )
}

fn ac4_oracle() -> Verdict {
    let start = Instant::now();
    let cfg = EngineConfig::default();
    let mut worst_l: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    let mut misses = Vec::new();
    for (i, s) in tiny_fixtures(10).unwrap().iter().enumerate() {
        let c = compare_with_oracle(s, &cfg, MIN_RESOLUTION).unwrap();
        worst_l = worst_l.max(c.leader_gap());
        worst_f = worst_f.max(c.follower_gap());
        if c.leader_gap() > 0.05 || c.follower_gap() > 0.05 {
            misses.push(format!("#{i} (leader {:.2}%, follower {:.2}%)", 100.0 * c.leader_gap(), 100.0 * c.follower_gap()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        misses.is_empty() && secs < 300.0,
        format!(
            "10 fixtures in {secs:.1} s, worst leader gap {:.2}%, worst follower gap {:.2}%{}",
            100.0 * worst_l,
            100.0 * worst_f,
            if misses.is_empty() { String::new() } else { format!("; outside 5%: {}", misses.join(", ")) }
        ),
    )
}

fn ac5_monotone_misperception() -> Verdict {
    let s = generate_scenario(55, Shape { num_tx: 1, num_rx: 1, concepts_per_tx: 4 }, 0.5).unwrap();
    let cfg = EngineConfig {
        max_rounds: 1,
        learning: false,
        ..EngineConfig::default()
    };
    let st = run_hypergame(&s, &cfg).unwrap().state;
    let ctx = MisperceptionContext::new(&s, &st.tx, &st.rx, &st.outcomes, &st.perceptions);
    let rule = StepRule {
        eta: s.learning_rate,
        backtracks: EngineConfig::default().backtracks,
        min_decrease: EngineConfig::default().min_decrease,
    };
    let pairs = Pair::all(&s);
    let mut p = st.perceptions.clone();
    let mut worst = f64::NEG_INFINITY;
    let start: Vec<f64> = pairs.iter().map(|&q| ctx.misperception(q, &p)).collect();
    for step in 0..200 {
        let pair = pairs[step % pairs.len()];
        let before = ctx.misperception(pair, &p);
        let next = swap_learning_step(pair, &p, &ctx, rule).perceptions;
        let after = ctx.misperception(pair, &next);
        worst = worst.max(after - before);
        p = next;
    }
    let end: Vec<f64> = pairs.iter().map(|&q| ctx.misperception(q, &p)).collect();
    verdict(
        worst <= 1e-9,
        format!("200 steps, largest increase {worst:.3e}, M {start:.4?} -> {end:.4?}"),
    )
}

struct Batch {
    runs: Vec<[Option<BaselineResult>; 4]>,
    hse_ok: Vec<bool>,
}

fn batch() -> Batch {
    let cfg = EngineConfig::default();
    let mut runs = Vec::new();
    let mut hse_ok = Vec::new();
    for seed in 0..50u64 {
        let s = generate_scenario(seed, Shape::default(), 0.5).unwrap();
        let res: [Option<BaselineResult>; 4] = Scheme::ALL.map(|sc| run_scheme(&s, sc, &cfg).ok());
        let ok = match &res[0] {
            Some(h) if h.converged => {
                let change = h.trace.last().map_or(f64::INFINITY, |r| r.strategy_change);
                let rep = check_local_hse(&s, &h.state, 256, change);
                rep.converged && !rep.vacuous
            }
            _ => false,
        };
        runs.push(res);
        hse_ok.push(ok);
    }
    Batch { runs, hse_ok }
}

fn ac6_convergence(b: &Batch) -> Verdict {
    let converged = b.runs.iter().filter(|r| r[0].as_ref().is_some_and(|h| h.converged)).count();
    let hse = b.hse_ok.iter().filter(|x| **x).count();
    let max_rounds = b.runs.iter().filter_map(|r| r[0].as_ref()).map(|h| h.rounds()).max().unwrap_or(0);
    verdict(
        converged >= 48 && hse == converged,
        format!("{converged}/50 converged within 500 rounds (slowest {max_rounds}), {hse}/{converged} pass the 256-probe HSE check"),
    )
}

fn ac7_ordering(b: &Batch) -> Verdict {
    let slack = 1e-6;
    let (mut ordered, mut strict) = (0, 0);
    for r in &b.runs {
        if let [Some(h), Some(c), Some(n), _] = r {
            let (uh, uc, un) = (h.report.mean_rx_utility(), c.report.mean_rx_utility(), n.report.mean_rx_utility());
            if uc <= uh + slack && uh <= un + slack {
                ordered += 1;
            }
            if uh < un {
                strict += 1;
            }
        }
    }
    verdict(
        ordered >= 45 && strict >= 40,
        format!("ordering complete <= hypergame <= naive on {ordered}/50, hypergame strictly below naive on {strict}/50"),
    )
}

fn ac8_bits(b: &Batch) -> Verdict {
    let (mut ok, mut n) = (0, 0);
    let (mut hs, mut cs) = (0.0, 0.0);
    let mut pct = Vec::new();
    for r in &b.runs {
        if let [Some(h), _, _, Some(c)] = r {
            n += 1;
            if h.bits_total <= c.bits_total {
                ok += 1;
            }
            hs += h.bits_total;
            cs += c.bits_total;
            pct.push(100.0 * (c.bits_total - h.bits_total) / c.bits_total);
        }
    }
    let mean_pct = pct.iter().sum::<f64>() / pct.len().max(1) as f64;
    verdict(
        n == 50 && ok == 50,
        format!(
            "hypergame <= classical bits on {ok}/{n}; reduction {:.1}% on mean bits ({:.2} vs {:.2}), mean per-seed {mean_pct:.1}%",
            100.0 * (cs - hs) / cs,
            hs / n as f64,
            cs / n as f64
        ),
    )
}

fn ac9_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(
        ScenarioSource::Generated {
            seed: 9,
            shape: Shape::default(),
            decay: 0.5,
        },
        dir.path().join("a"),
    );
    cfg.seeds = vec![9, 10];
    cfg.schemes = vec![Scheme::Hypergame, Scheme::Classical];
    run_experiment(&cfg).unwrap();
    cfg.out = dir.path().join("b");
    run_experiment(&cfg).unwrap();
    let same = |f: &str| std::fs::read(dir.path().join("a").join(f)).unwrap() == std::fs::read(dir.path().join("b").join(f)).unwrap();
    let (t, s) = (same("trace.csv"), same("summary.json"));
    verdict(t && s, format!("trace.csv identical: {t}, summary.json identical: {s}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{name} {tag} [{:.1} s] {}", start.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    report("AC1 bound dominance:", &ac1_bound_dominance);
    report("AC2 leader stationarity:", &ac2_stationarity);
    report("AC3 follower feasibility / inverse dependence:", &ac3_feasibility_and_inverse_dependence);
    report("AC4 brute-force oracle:", &ac4_oracle);
    report("AC5 misperception monotonicity:", &ac5_monotone_misperception);
    let b = batch();
    report("AC6 convergence:", &|| ac6_convergence(&b));
    report("AC7 utility ordering:", &|| ac7_ordering(&b));
    report("AC8 bit reduction:", &|| ac8_bits(&b));
    report("AC9 determinism:", &ac9_determinism);
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
