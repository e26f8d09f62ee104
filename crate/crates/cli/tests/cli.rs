use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn osdos(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osdos"))
        .args(args)
        .current_dir(dir)
        .env("OSDOS_OUT_DIR", dir.join("out"))
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const FIG2: [&str; 8] = ["--lower", "1", "--upper", "30", "--k", "10", "--coeff", "0.0625"];

#[test]
fn solve_single_unit_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&osdos(dir.path(), &["solve", "--lower", "1", "--upper", "2.718281828459045", "--marginals", "0"]));
    assert!((v["alpha_star"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn solve_regimes_agree_when_high_value() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["solve", "--lower", "1", "--upper", "10", "--k", "10", "--coeff", "0.01694915254237288"];
    let hv = json(&osdos(dir.path(), &[&base[..], &["--regime", "high-value"]].concat()));
    let gen = json(&osdos(dir.path(), &[&base[..], &["--regime", "general"]].concat()));
    let diff = hv["alpha_star"].as_f64().unwrap() - gen["alpha_star"].as_f64().unwrap();
    assert!(diff.abs() <= 1e-6);
}

#[test]
fn solve_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("model.json");
    std::fs::write(&cfg, r#"{"model": {"L": 1, "U": 2.718281828459045, "k": 1, "cost": {"type": "explicit", "marginals": [0]}}}"#).unwrap();
    let v = json(&osdos(dir.path(), &["solve", "--config", cfg.to_str().unwrap()]));
    assert!((v["alpha_star"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = osdos(dir.path(), &["solve", "--lower", "0.5", "--upper", "2", "--marginals", "0"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
    let wrong_regime = osdos(dir.path(), &[&["solve"][..], &FIG2, &["--regime", "high-value"]].concat());
    assert_eq!(wrong_regime.status.code(), Some(2));
    let usage = osdos(dir.path(), &["solve", "--no-such-flag"]);
    assert_eq!(usage.status.code(), Some(2));
    let stuck = osdos(dir.path(), &[&["solve"][..], &FIG2, &["--tol", "1e-300"]].concat());
    assert_eq!(stuck.status.code(), Some(3), "{}", String::from_utf8_lossy(&stuck.stderr));
}

#[test]
fn pricing_instances_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(osdos(d, &[&["pricing"][..], &FIG2].concat()).status.success());
    let csv = std::fs::read_to_string(d.join("out/pricing.csv")).unwrap();
    assert!(csv.starts_with("unit,s,phi\n"));
    assert_eq!(csv.lines().count(), 1 + 10 * 101);

    let gen = osdos(d, &[&["instances", "--kind", "sorted", "--n", "40", "--seed", "5"][..], &FIG2].concat());
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let scheme = d.join("out/scheme.json");
    let inst = d.join("out/sorted_0000.txt");
    let args = ["simulate", "--scheme", scheme.to_str().unwrap(), "--instance", inst.to_str().unwrap()];

    let a = osdos(d, &[&args[..], &["--trials", "500", "--seed", "9"]].concat());
    let b = osdos(d, &[&args[..], &["--trials", "500", "--seed", "9"]].concat());
    assert_eq!(a.stdout, b.stdout);
    let est = json(&a);
    assert_eq!(est["trials"], 500);
    assert!(est["ratio_to_opt"].as_f64().unwrap() >= 1.0);

    let trace = json(&osdos(d, &[&args[..], &["--pin-seeds", "0.5"]].concat()));
    assert_eq!(trace["mechanism"], "surrogate:pinned(0.5)");
    let decisions = trace["outcome"]["decisions"].as_array().unwrap();
    assert_eq!(decisions.len(), 40);
}

#[test]
fn simulate_hand_example_and_empty_instance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Every unit has a constant price: U = L makes the scheme deterministic.
    assert!(osdos(d, &["pricing", "--lower", "1.5", "--upper", "1.5", "--marginals", "0.1,0.2"]).status.success());
    std::fs::write(d.join("inst.txt"), "1.5\n1.5\n1.5\n").unwrap();
    std::fs::write(d.join("empty.txt"), "").unwrap();
    let scheme = d.join("out/scheme.json");
    let run = |inst: &str| {
        json(&osdos(d, &["simulate", "--scheme", scheme.to_str().unwrap(), "--instance", inst]))
    };
    let full = run("inst.txt");
    assert_eq!(full["outcome"]["units_sold"], 2);
    assert!((full["outcome"]["welfare"].as_f64().unwrap() - 2.7).abs() < 1e-12);
    let empty = run("empty.txt");
    assert_eq!(empty["outcome"]["welfare"], 0.0);
}

#[test]
fn experiment_writes_valid_cdfs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"instances": {"kind": "low2high", "count": 4, "n1": 30, "n2": 30}, "trials": 40, "master_seed": 2}"#,
    )
    .unwrap();
    let run = || osdos(d, &["experiment", "--config", cfg.to_str().unwrap()]);
    assert!(run().status.success());
    let first = std::fs::read(d.join("out/cdf.csv")).unwrap();
    assert!(run().status.success());
    assert_eq!(first, std::fs::read(d.join("out/cdf.csv")).unwrap());

    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mechanism,surrogate,empirical_ratio,cumulative_fraction"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 12);
    for chunk in rows.chunks(4) {
        let surrogate = chunk[0][0].starts_with("surrogate:");
        assert_eq!(chunk[0][1], surrogate.to_string());
        let fr: Vec<f64> = chunk.iter().map(|r| r[3].parse().unwrap()).collect();
        assert!(fr.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*fr.last().unwrap(), 1.0);
    }
}

#[test]
fn curves_flags_general_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = osdos(d, &["curves", "--k-min", "2", "--k-max", "32"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("out/curves.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let k: usize = f[0].parse().unwrap();
        let alpha: f64 = f[1].parse().unwrap();
        let cr: f64 = f[2].parse().unwrap();
        assert!(cr >= alpha);
        assert_eq!(f[3], if k >= 30 { "general" } else { "high_value" });
        if k == 2 {
            assert_eq!(f[1], f[2]);
        }
    }
}

#[test]
fn out_dir_flag_overrides_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = osdos(d, &["--out-dir", "elsewhere", "curves", "--k-min", "2", "--k-max", "3"]);
    assert!(out.status.success());
    assert!(d.join("elsewhere/curves.csv").exists());
    assert!(!d.join("out/curves.csv").exists());
}
