//! Drives the `affectkit` binary through every subcommand on a tiny dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affectkit"));
    c.env_remove("EXPR_DATA_ROOT").env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn affectkit")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

const TINY: &str = "[model]\nbackbone = \"resnet18\"\ninput_resolution = 112\nbase_width = 4\n\n\
[train]\ntotal_iters = 4\nbatch_size = 4\neval_every = 2\n\n\
[eval]\nsplit = \"Train_Set\"\n\n\
[pretrain]\nsteps = 2\nbatch_size = 2\nproj_dim = 8\n";

fn synth(out: &Path, extra: &[&str]) -> Output {
    run(bin()
        .args(["synth", "--out"])
        .arg(out)
        .args(["--videos", "8", "--frames", "10", "--seed", "1"])
        .args(extra))
}

#[test]
fn synth_writes_the_layout_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&synth(&a, &[])), 0);
    assert_eq!(code(&synth(&b, &[])), 0);
    let ann = std::fs::read_dir(a.join("annotations/Train_Set")).unwrap().count();
    let images: usize = std::fs::read_dir(a.join("images"))
        .unwrap()
        .map(|d| std::fs::read_dir(d.unwrap().path()).unwrap().count())
        .sum();
    assert_eq!((ann, images), (8, 80));
    assert!(a.join("manifest.json").is_file());
    let (fa, fb) = (files_under(&a), files_under(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        if x.file_name().unwrap() == "manifest.json" {
            continue;
        }
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn validation_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin().args(["synth", "--out"]).arg(tmp.path()).args(["--videos", "0"]));
    assert_eq!(code(&out), 2);

    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 1.0\n").unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&bad).args(["--data-root"]).arg(tmp.path()).args(["--out"]).arg(tmp.path().join("o")));
    assert_eq!(code(&out), 2);

    // no data root anywhere
    let out = run(bin().args(["train", "--out"]).arg(tmp.path().join("o")));
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_data_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data-root")
        .arg(tmp.path().join("nowhere"))
        .arg("--out")
        .arg(tmp.path().join("o")));
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_without_inputs_is_header_only() {
    let out = run(bin().arg("report"));
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("Backbone | Pre-trained | F1-score"));
}

#[test]
fn pipeline_pretrain_train_evaluate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, TINY).unwrap();
    assert_eq!(code(&synth(&data, &[])), 0);

    // data root through the environment
    let out = run(bin()
        .env("EXPR_DATA_ROOT", &data)
        .args(["pretrain", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("pre")));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pre = tmp.path().join("pre/pretrain.afk");
    assert!(pre.is_file() && tmp.path().join("pre/manifest.json").is_file());

    let train = |dir: &str| {
        run(bin()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--data-root")
            .arg(&data)
            .arg("--weights")
            .arg(&pre)
            .arg("--out")
            .arg(tmp.path().join(dir)))
    };
    let t1 = train("run1");
    assert_eq!(code(&t1), 0, "{}", String::from_utf8_lossy(&t1.stderr));
    let stdout = String::from_utf8(t1.stdout.clone()).unwrap();
    assert!(stdout.contains("missing 6 /"), "{stdout}");
    assert!(stdout.contains("shape_mismatch 0"), "{stdout}");
    let t2 = train("run2");
    let last = |o: &Output| String::from_utf8(o.stdout.clone()).unwrap().lines().last().unwrap().to_string();
    assert_eq!(last(&t1), last(&t2));

    let ck = tmp.path().join("run1/checkpoint.afk");
    let evaluate = |out: &str, extra: &[&str]| {
        run(bin()
            .arg("evaluate")
            .arg("--checkpoint")
            .arg(&ck)
            .arg("--data-root")
            .arg(&data)
            .arg("--out")
            .arg(tmp.path().join(out))
            .args(extra))
    };
    assert_eq!(code(&evaluate("e1", &[])), 0);
    assert_eq!(code(&evaluate("e2", &[])), 0);
    let r1 = std::fs::read(tmp.path().join("e1/eval_report.json")).unwrap();
    assert_eq!(r1, std::fs::read(tmp.path().join("e2/eval_report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    assert_eq!(report["n_frames"], 80);

    assert_eq!(code(&evaluate("e3", &["--split", "Validation_Set"])), 3);
    let other = tmp.path().join("other.toml");
    std::fs::write(&other, TINY.replace("total_iters = 4", "total_iters = 5")).unwrap();
    assert_eq!(code(&evaluate("e4", &["--config", other.to_str().unwrap()])), 2);
    assert_eq!(code(&evaluate("e5", &["--config", cfg.to_str().unwrap()])), 0);

    let out = run(bin()
        .args(["report", "--results"])
        .arg(tmp.path().join("e1/eval_report.json"))
        .arg("--out")
        .arg(tmp.path().join("rep")));
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(tmp.path().join("rep/report.txt")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().starts_with("resnet18 | none"));
    assert!(tmp.path().join("rep/manifest.json").is_file());
}
