use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn samo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_samo"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SCENARIO: &str = r#"{
  "cluster": {"gpus": 128, "mem_cap": 6e9, "link_bw_p2p": 12.5e9, "link_bw_coll": 12.5e9, "link_latency": 5e-6},
  "workload": {"phi": 1e9, "p": 0.9, "batch_size": 2048, "microbatch_size": 1, "t_f": 0.1, "t_b": 0.2,
               "bytes_activation_msg": 8.4e6, "activation_bytes": 1e9},
  "mode": "both"
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn memory_model_rows() {
    let o = samo(&["memory-model", "--phi", "1e9", "--p", "0:1:0.05"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 22);
    assert!(lines.contains(&"1000000000,0.25,20000000000,20000000000,0,0"));
    assert!(lines
        .iter()
        .any(|l| l.starts_with("1000000000,0.9,") && l.ends_with(",0.78")));

    let single = samo(&["memory-model", "--phi", "100", "--p", "0.1:0.3:0.5"]);
    assert_eq!(stdout(&single).lines().count(), 2);
    assert_eq!(
        samo(&["memory-model", "--phi", "100", "--p", "0.5:0.1:0.1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        samo(&["memory-model", "--phi", "100", "--p", "0:1.5:0.5"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(samo(&["train", "--sparsity", "1.1"]).status.code(), Some(1));
    assert_eq!(samo(&["train", "--steps", "many"]).status.code(), Some(1));
    assert_eq!(samo(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(samo(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_verify_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("steps.csv");
    let ckpt = dir.path().join("ckpt.json");
    let ind = dir.path().join("ind.json");
    let o = Command::new(env!("CARGO_BIN_EXE_samo"))
        .args([
            "train",
            "--verify",
            "--sparsity",
            "0.9",
            "--steps",
            "20",
            "--seed",
            "7",
            "--out",
        ])
        .arg(&out)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--indices-out")
        .arg(&ind)
        .output()
        .unwrap();
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("PASS"));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("step,loss,grad_norm,skipped,peak_state_bytes\n"));
    assert_eq!(csv.lines().count(), 21);
    let ckpt: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(ckpt["step"], 20);

    // rerunning with the written index sets reproduces the run
    let again = dir.path().join("again.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_samo"))
        .args([
            "train",
            "--sparsity",
            "0.9",
            "--steps",
            "20",
            "--seed",
            "7",
            "--indices",
        ])
        .arg(&ind)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn train_config_rejects_unknown_keys_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"steps": 3, "learning_rat": 0.1}"#,
    );
    assert_eq!(samo(&["train", "--config", &bad]).status.code(), Some(1));
    let cfg = write(dir.path(), "cfg.json", r#"{"steps": 3, "sparsity": 0.5}"#);
    let o = samo(&["train", "--config", &cfg, "--steps", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 6);
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        r#"{"optimizer": {"learning_rate": 1e30}, "steps": 50}"#,
    );
    let o = samo(&["train", "--config", &cfg]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn simulate_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.json", "");
    assert_eq!(
        samo(&["simulate", "--config", &empty]).status.code(),
        Some(1)
    );

    let cfg = write(dir.path(), "s.json", SCENARIO);
    let o = samo(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let totals: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(totals[1] < totals[0]);

    let tight = write(
        dir.path(),
        "tight.json",
        &SCENARIO.replace("\"mem_cap\": 6e9", "\"mem_cap\": 1e9"),
    );
    let o = samo(&["simulate", "--config", &tight]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o)
        .lines()
        .skip(1)
        .all(|l| l.ends_with(",infeasible")));
}

#[test]
fn three_stage_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.json",
        r#"{"cluster": {"gpus": 3, "mem_cap": 1e12, "link_bw_p2p": 1e9, "link_bw_coll": 1e9, "link_latency": 0},
            "workload": {"phi": 1000, "p": 0, "batch_size": 5, "microbatch_size": 1, "t_f": 3, "t_b": 6,
                         "bytes_activation_msg": 0},
            "mode": "dense", "g_inter": 3}"#,
    );
    let tl = dir.path().join("tl.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_samo"))
        .args(["simulate", "--config", &cfg, "--timeline"])
        .arg(&tl)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let mut r = csv::Reader::from_path(&tl).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec!["gpu", "event", "kind", "start", "end"]
    );
    let mut idle = [0.0f64; 3];
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[2] == "idle" {
            let gpu: usize = rec[0].parse().unwrap();
            idle[gpu] += rec[4].parse::<f64>().unwrap() - rec[3].parse::<f64>().unwrap();
        }
    }
    assert_eq!(idle, [6.0; 3]);
}

#[test]
fn sweep_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SCENARIO);
    let sweep = samo(&["sweep", "--config", &cfg, "--gpus", "128"]);
    let simulate = samo(&["simulate", "--config", &cfg]);
    let strip = |s: String| {
        s.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(
        strip(stdout(&sweep)),
        stdout(&simulate)
            .lines()
            .map(String::from)
            .collect::<Vec<_>>()
    );

    // two GPUs cannot hold the dense state
    let o = samo(&["sweep", "--config", &cfg, "--gpus", "2,128"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text
        .lines()
        .any(|l| l.starts_with("2,,,dense,") && l.ends_with(",infeasible,")));
    assert!(text.lines().any(|l| l.starts_with("128,1,128,samo,")));
}
