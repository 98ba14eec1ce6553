use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use semhyper::experiments::{SWEEP_COLUMNS, TRACE_COLUMNS};
use semhyper::scenario::{generate_scenario, Shape};

fn semhyper(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_semhyper")).args(args).output().unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

/// Percentile with linear interpolation between closest ranks.
fn pct(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * q;
    let i = h as usize;
    if i + 1 == s.len() {
        s[i]
    } else {
        s[i] + (h - i as f64) * (s[i + 1] - s[i])
    }
}

#[test]
fn help_lists_columns_and_exit_codes() {
    let out = semhyper(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(TRACE_COLUMNS));
    assert!(text.contains(SWEEP_COLUMNS));
    assert!(text.contains("EXIT CODES"));
}

#[test]
fn run_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = semhyper(&["--generate", "2,1x1x2,0.5", "--seeds", "1,2", "--rounds", "15", "--schemes", "hypergame,naive", "--out", out]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(header(&dir.path().join("trace.csv")), TRACE_COLUMNS);
    assert_eq!(header(&dir.path().join("sweep.csv")), SWEEP_COLUMNS);
    let sum: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(sum["seeds"], serde_json::json!([1, 2]));
    assert_eq!(sum["summary"]["schemes"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(semhyper(&["--schemes", "oracle", "--out", out]).status.code(), Some(1));
    assert_eq!(semhyper(&["--seeds", "5-2", "--out", out]).status.code(), Some(1));
    assert_eq!(semhyper(&["--generate", "1,2x2,0.5", "--out", out]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    let mut s = generate_scenario(1, Shape::default(), 0.5).unwrap();
    s.alpha1 = 0.9;
    s.save(&bad).unwrap();
    assert_eq!(semhyper(&["--scenario", bad.to_str().unwrap(), "--out", out]).status.code(), Some(1));
    assert_eq!(semhyper(&["--scenario", "/nonexistent.toml", "--out", out]).status.code(), Some(1));
}

#[test]
fn solver_failure_everywhere_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dead_cloud.toml");
    let mut s = generate_scenario(1, Shape::default(), 0.5).unwrap();
    // Positive but so small that gain * power rounds to zero.
    for c in &mut s.channels.cc_links {
        c.channel_gain_std = 0.4;
        c.power = 5e-324;
    }
    s.save(&path).unwrap();
    let r = semhyper(&["--scenario", path.to_str().unwrap(), "--seeds", "1,2", "--rounds", "10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    let sum: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(sum["failures"].as_array().unwrap().len(), 2);
}

#[test]
fn summary_statistics_match_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let r = semhyper(&["--generate", "0,1x1x1,0.5", "--seeds", "0-49", "--rounds", "20", "--schemes", "hypergame", "--out", dir.path().to_str().unwrap()]);
    assert!(r.status.success());
    let mut last: BTreeMap<u64, (usize, f64, f64, f64)> = BTreeMap::new();
    let mut rd = csv::Reader::from_path(dir.path().join("trace.csv")).unwrap();
    for row in rd.records() {
        let row = row.unwrap();
        if &row[4] != "rx" {
            continue;
        }
        let seed: u64 = row[0].parse().unwrap();
        let round: usize = row[2].parse().unwrap();
        let vals = (round, row[5].parse().unwrap(), row[6].parse().unwrap(), row[7].parse().unwrap());
        if last.get(&seed).map_or(true, |v| v.0 < round) {
            last.insert(seed, vals);
        }
    }
    assert_eq!(last.len(), 50);
    let sum: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let sc = &sum["summary"]["schemes"][0];
    let cols: [(&str, Vec<f64>); 4] = [
        ("rx_utility", last.values().map(|v| v.1).collect()),
        ("qote", last.values().map(|v| v.2).collect()),
        ("bits", last.values().map(|v| v.3).collect()),
        ("rounds", last.values().map(|v| v.0 as f64).collect()),
    ];
    for (name, v) in &cols {
        let st = &sc[*name];
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let close = |k: &str, want: f64| {
            let got = st[k].as_f64().unwrap();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{name}.{k}: {got} vs {want}");
        };
        close("mean", mean);
        close("min", pct(v, 0.0));
        close("p10", pct(v, 0.1));
        close("p50", pct(v, 0.5));
        close("p90", pct(v, 0.9));
        close("max", pct(v, 1.0));
    }
}

#[test]
fn percentile_helper_by_hand() {
    let v: Vec<f64> = (1..=50).map(f64::from).collect();
    assert!((pct(&v, 0.1) - 5.9).abs() < 1e-12);
    assert!((pct(&v, 0.5) - 25.5).abs() < 1e-12);
    assert!((semhyper::experiments::percentile(&v, 90.0) - 45.1).abs() < 1e-12);
}
