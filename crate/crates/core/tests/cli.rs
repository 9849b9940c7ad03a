use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covert-isc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

fn floats(csv: &str, name: &str) -> Vec<f64> {
    column(csv, name)
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

#[test]
fn single_point_dep_sweep() {
    let o = run(&["dep", "--snr-db", "0", "--k", "4", "--trials", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("snr_db,k,dep_analytic,dep_mc_mean,dep_mc_se\n"));
}

#[test]
fn dep_sweep_monotone_and_matches_simulation() {
    // A small instance where DEP actually moves with SNR.
    let o = run(&[
        "dep",
        "--snr-db",
        "0:20:5",
        "--k",
        "2",
        "--trials",
        "20000",
        "--set",
        "q=4",
        "--set",
        "samples_per_block=2",
        "--set",
        "m=2",
        "--set",
        "threshold_mode=raw",
        "--set",
        "gamma_e=8",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    let exact = floats(&text, "dep_analytic");
    let mean = floats(&text, "dep_mc_mean");
    let se = floats(&text, "dep_mc_se");
    assert!(exact.windows(2).all(|w| w[1] <= w[0]), "{exact:?}");
    assert!(exact[0] - exact[exact.len() - 1] > 0.1);
    for i in 0..exact.len() {
        // Empirical SE is zero only when every trial agreed; allow a floor.
        assert!(
            (exact[i] - mean[i]).abs() <= 4.0 * se[i].max(1e-3),
            "row {i}"
        );
    }
}

#[test]
fn rtp_sweep_json() {
    let o = run(&[
        "rtp",
        "--snr-db",
        "-10:10:10",
        "--k",
        "4,8",
        "--trials",
        "0",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows[0]["rtp_mc_mean"].is_null());
    let by_k: Vec<f64> = rows
        .iter()
        .filter(|r| r["k"] == 4)
        .map(|r| r["rtp_analytic"].as_f64().unwrap())
        .collect();
    assert!(by_k.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn power_bounds_table() {
    let o = run(&["power-bounds", "--k", "2:6:2", "--trials", "20000"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    let low = floats(&text, "p_low");
    let up = floats(&text, "p_up");
    assert!(low.windows(2).all(|w| w[1] >= w[0]));
    assert!(up.windows(2).all(|w| w[1] >= w[0]));
    assert!(column(&text, "feasible").iter().all(|f| f == "true"));
    let rate = floats(&text, "rate_star");
    let mc = floats(&text, "rate_mc_mean");
    let se = floats(&text, "rate_mc_se");
    for i in 0..rate.len() {
        assert!((rate[i] - mc[i]).abs() <= 4.0 * se[i]);
    }
}

#[test]
fn infeasible_power_rows_are_flagged() {
    let o = run(&[
        "power-bounds",
        "--k",
        "2",
        "--trials",
        "0",
        "--set",
        "eps_u=1e-4",
        "--set",
        "p_max=100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(column(&text, "feasible"), vec!["false"]);
    assert_eq!(column(&text, "rate_star"), vec!["NaN"]);
}

#[test]
fn capacity_trends() {
    let o = run(&[
        "capacity",
        "--snr-db",
        "10:30:5",
        "--eps-u",
        "0.05,0.1",
        "--set",
        "q=8",
        "--set",
        "samples_per_block=2",
        "--set",
        "m=2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let k: Vec<u32> = column(&text, "k_star")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(k.len(), 10);
    assert!(k.iter().all(|&v| v <= 8));
    for row in k.chunks(5) {
        assert!(row.windows(2).all(|w| w[1] >= w[0]), "{k:?}");
    }
    assert!((0..5).all(|i| k[5 + i] >= k[i]));
}

#[test]
fn validate_fails_with_loose_series_tolerance() {
    let ok = run(&["validate", "--trials", "2000"]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = run(&["validate", "--trials", "2000", "--set", "series_rel_tol=1"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&bad)).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["group"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"identity"), "{failed:?}");
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(
        &path,
        "# small instance\nq = 4\nsamples_per_block = 2\nm = 2\nk = 2\n",
    )
    .unwrap();
    let o = run(&[
        "rtp",
        "--config",
        path.to_str().unwrap(),
        "--snr-db",
        "0",
        "--k",
        "2",
        "--trials",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0));

    fs::write(&path, "colour = blue\n").unwrap();
    let o = run(&["rtp", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    assert_eq!(run(&["dep", "--set", "eps_e=2"]).status.code(), Some(2));
    assert_eq!(run(&["dep", "--k", "100"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn output_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rtp.csv");
    let o = run(&[
        "rtp",
        "--snr-db",
        "0",
        "--k",
        "4",
        "--trials",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 2);
}

#[test]
fn schedule_perfect_sensing_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let args = [
        "schedule",
        "--episodes",
        "3",
        "--seed",
        "5",
        "--set",
        "users_per_bs=6",
        "--set",
        "p=200",
        "--trace",
        trace.to_str().unwrap(),
    ];
    let a = run(&args);
    assert_eq!(a.status.code(), Some(0));
    let text = stdout(&a);
    assert_eq!(text.lines().count(), 4);
    assert!(column(&text, "collisions").iter().all(|c| c == "0"));
    assert!(column(&text, "jammer_hits").iter().all(|c| c == "0"));
    let grid = fs::read_to_string(&trace).unwrap();
    assert_eq!(grid.lines().count(), 1 + 200 * 64);
    // Deterministic re-run.
    assert_eq!(run(&args).stdout, a.stdout);
}

#[test]
fn schedule_greedy_beats_random_hop_on_jammer_hits() {
    let common = [
        "--episodes",
        "4",
        "--seed",
        "11",
        "--set",
        "users_per_bs=8",
        "--set",
        "jammed_slots=3,20,41,60",
        "--set",
        "sense_miss_prob=0.1",
        "--format",
        "json",
    ];
    let rate = |policy: &str| -> f64 {
        let mut args = vec!["schedule", "--policy", policy];
        args.extend(common);
        let o = run(&args);
        let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        let rows = rows.as_array().unwrap();
        let hits: f64 = rows
            .iter()
            .map(|r| r["jammer_hits"].as_f64().unwrap())
            .sum();
        let tx: f64 = rows
            .iter()
            .map(|r| r["transmissions"].as_f64().unwrap())
            .sum();
        hits / tx
    };
    assert!(rate("greedy-belief") < rate("random-hop"));
}
