//! Drives the command-line front end end to end: synthesise, train, evaluate,
//! then render a results table next to the stored reference rows.
//!
//!     cargo run --release --example evaluate_and_report

use affectkit::cli::main_with;

fn run(args: &[&str]) {
    let mut full = vec!["affectkit"];
    full.extend_from_slice(args);
    println!("$ {}", full.join(" "));
    let code = main_with(full);
    assert_eq!(code, 0, "command failed");
}

fn main() {
    let dir = std::env::temp_dir().join("affectkit-example-cli");
    let _ = std::fs::remove_dir_all(&dir);
    let d = |p: &str| dir.join(p).display().to_string();
    std::fs::create_dir_all(&dir).expect("work dir");
    std::fs::write(
        dir.join("run.toml"),
        "[model]\nbackbone = \"resnet18\"\ninput_resolution = 112\nbase_width = 8\n\n[train]\ntotal_iters = 60\nbatch_size = 16\n",
    )
    .expect("config");

    run(&["synth", "--out", &d("data"), "--videos", "8", "--frames", "20", "--seed", "1"]);
    run(&["synth", "--out", &d("data"), "--videos", "8", "--frames", "10", "--seed", "2", "--split", "Validation_Set"]);
    run(&["train", "--config", &d("run.toml"), "--data-root", &d("data"), "--out", &d("run")]);
    run(&[
        "evaluate",
        "--checkpoint",
        &d("run/checkpoint.afk"),
        "--data-root",
        &d("data"),
        "--pretrained",
        "none",
        "--out",
        &d("eval"),
    ]);
    run(&["report", "--reference-rows", "--results", &d("eval/eval_report.json"), "--out", &d("report")]);
}
