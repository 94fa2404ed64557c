//! End-to-end runs of the `blockmix` binary on small configs.

use std::path::Path;
use std::process::Command;

use blockmix::experiment::ExperimentResult;
use blockmix::io::read_json;

const SMALL: &str = r#"
experiment = "kill_shot"
name = "small"
seed = 3
dims = [16, 32]

[task]
kind = "factorized_manifold"
dim = 16
groups = 2

[train]
steps = 60
batch = 16
lr = 1e-2
eval_every = 20

[[variants]]
name = "dense"
arch = "dense"

[[variants]]
name = "smart"
arch = "v2"
block_width = 8

[[orderings]]
lhs = "smart.param_count"
op = "<"
rhs = "dense.param_count"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockmix"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path) -> std::process::Output {
    bin().args(["run", "--config"]).arg(config).arg("--out").arg(out).output().unwrap()
}

#[test]
fn run_writes_results_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = run(&cfg, &a);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("HOLDS"));
    assert_eq!(run(&cfg, &b).status.code(), Some(0));
    let csv_a = std::fs::read(a.join("small.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("small.csv")).unwrap());
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 5);
    assert!(a.join("small.dense.32.history.csv").exists());

    let r: ExperimentResult = read_json(&a.join("small.result.json")).unwrap();
    assert!(r.provenance_valid().unwrap());
    assert_eq!((r.provenance.task_seed, r.provenance.init_seed, r.provenance.shuffle_seed), (3, 4, 5));
    assert_eq!(r.provenance.generator_laws.len(), 2);
    assert_eq!(r.records.len(), 4);
}

#[test]
fn violated_ordering_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &SMALL.replace("op = \"<\"", "op = \">\""));
    let out = run(&cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("VIOLATED"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", &SMALL.replace("steps = 60", "stepz = 60"));
    let out = run(&cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
    let cfg = write(dir.path(), "blocks.toml", &SMALL.replace("block_width = 8", "block_width = 5"));
    let out = run(&cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("block_width"));
}

#[test]
fn seed_override_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out_dir = dir.path().join("env_out");
    let out = bin().args(["run", "--seed", "11", "--config"]).arg(&cfg).env("BLOCKMIX_OUT", &out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: ExperimentResult = read_json(&out_dir.join("small.result.json")).unwrap();
    assert_eq!(r.provenance.seed, 11);
}

#[test]
fn report_dedupes_and_skips_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let res = dir.path().join("res");
    assert_eq!(run(&cfg, &res).status.code(), Some(0));
    std::fs::copy(res.join("small.result.json"), res.join("copy.result.json")).unwrap();
    std::fs::write(res.join("broken.result.json"), "{ not json").unwrap();
    let out = bin().args(["report", "--dir"]).arg(&res).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("broken.result.json"), "{err}");
    assert!(err.contains("same config hash"), "{err}");
    let summary = std::fs::read_to_string(res.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(bin().args(["report", "--dir"]).arg(&empty).output().unwrap().status.code(), Some(1));
}

#[test]
fn corpus_subcommand_writes_report_and_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let events = write(
        dir.path(),
        "events.jsonl",
        concat!(
            r#"{"events": [{"onset": 0, "dur": 480, "pitch": 60, "hand": "RH"}, {"onset": 0, "dur": 960, "pitch": 36, "hand": "LH"}]}"#,
            "\n\n",
            r#"{"events": [{"onset": 240, "dur": 240, "pitch": 72, "hand": "RH"}]}"#,
            "\n"
        ),
    );
    let report = dir.path().join("report.json");
    let tokens = dir.path().join("tokens.txt");
    let out = bin()
        .args(["corpus", "--in"])
        .arg(&events)
        .arg("--report")
        .arg(&report)
        .arg("--tokens")
        .arg(&tokens)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["pieces"], 2);
    assert_eq!(v["notes"], 3);
    let text = std::fs::read_to_string(&tokens).unwrap();
    let first: Vec<&str> = text.split("\n\n").next().unwrap().lines().collect();
    assert_eq!(
        first,
        [
            "SOS",
            "RH_NOTE_ON_60",
            "LH_NOTE_ON_36",
            "TIME_SHIFT_480",
            "RH_NOTE_OFF_60",
            "TIME_SHIFT_480",
            "LH_NOTE_OFF_36",
            "EOS"
        ]
    );
    assert_eq!(blockmix::io::tokens_from_text(&text).unwrap().len(), 2);

    let bad = write(dir.path(), "bad.jsonl", "{\"events\": []}\n{\"events\": [{\"onset\": 0}]}\n");
    let out = bin().args(["corpus", "--in"]).arg(&bad).arg("--report").arg(&report).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
