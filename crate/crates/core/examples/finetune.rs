//! Fine-tunes a narrow ResNet-18 on a synthetic dataset with the reference
//! recipe (scaled down), then reports macro F1 on both splits.
//!
//!     cargo run --release --example finetune

use affectkit::dataset::{load_split, synthesize_dataset, SynthOptions, TRAIN_SPLIT, VALIDATION_SPLIT};
use affectkit::metrics::{evaluate_split, make_report, ReportRow};
use affectkit::model::build_model;
use affectkit::trainer::train;
use affectkit::RunConfig;

fn main() -> affectkit::Result<()> {
    let dir = tempfile_dir("finetune");
    synthesize_dataset(&dir, &SynthOptions::new(8, 32, 112, 1))?;
    let mut val = SynthOptions::new(8, 16, 112, 2);
    val.split = VALIDATION_SPLIT.into();
    synthesize_dataset(&dir, &val)?;

    let run = RunConfig::from_toml_str(
        r#"
[model]
backbone = "resnet18"
input_resolution = 112
base_width = 8

[train]
total_iters = 150
batch_size = 32
eval_every = 50
"#,
    )?;
    let train_data = load_split(&dir, TRAIN_SPLIT, 112)?;
    let val_data = load_split(&dir, VALIDATION_SPLIT, 112)?;
    let mut model = build_model::<f32>(&run.model.backbone_spec()?, &run.model.head_config(), run.model.init_seed)?;
    let out = train(&mut model, &train_data, &run, Some(&val_data))?;
    for r in &out.log {
        println!("iter {:>4}  lr {:.5}  loss {:.4}  val F1 {:.2}", r.iter, r.lr, r.loss, r.macro_f1.unwrap_or(f64::NAN));
    }

    let mut rows = Vec::new();
    for (name, data) in [("train", &train_data), ("validation", &val_data)] {
        let s = evaluate_split(&mut model, data, 64)?;
        rows.push(ReportRow::new(&format!("Res-18/8 ({name})"), "none", s.macro_f1));
    }
    print!("{}", make_report(&rows));
    Ok(())
}

fn tempfile_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("affectkit-example-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}
