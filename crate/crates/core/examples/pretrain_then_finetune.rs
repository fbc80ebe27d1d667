//! Warp-contrastive pretraining of a narrow backbone, then fine-tuning from
//! those weights next to a randomly initialised twin.
//!
//!     cargo run --release --example pretrain_then_finetune

use affectkit::dataset::{load_split, synthesize_dataset, SynthOptions, TRAIN_SPLIT};
use affectkit::metrics::split_loss;
use affectkit::model::{build_model, NameMap};
use affectkit::pretrain::{build_encoder, pretrain};
use affectkit::trainer::train;
use affectkit::RunConfig;

fn main() -> affectkit::Result<()> {
    let dir = std::env::temp_dir().join("affectkit-example-pretrain");
    let _ = std::fs::remove_dir_all(&dir);
    synthesize_dataset(&dir, &SynthOptions::new(8, 32, 112, 1))?;
    let data = load_split(&dir, TRAIN_SPLIT, 112)?;

    let run = RunConfig::from_toml_str(
        r#"
[model]
backbone = "resnet18"
input_resolution = 112
base_width = 8

[train]
total_iters = 100
batch_size = 16
# reference rate scaled linearly from batch 128 down to 16
learning_rate = 0.000625

[pretrain]
steps = 200
batch_size = 8
"#,
    )?;

    let mut encoder = build_encoder::<f32>(&run)?;
    let pre = pretrain(&mut encoder, &data, &run)?;
    let l = &pre.losses;
    println!("contrastive loss {:.3} -> {:.3}", l[0], l[l.len() - 1]);
    let ck_path = dir.join("pretrain.afk");
    pre.checkpoint.save(&ck_path)?;

    for pretrained in [false, true] {
        let mut model = build_model::<f32>(&run.model.backbone_spec()?, &run.model.head_config(), run.model.init_seed)?;
        if pretrained {
            let ck = affectkit::model::checkpoint::Checkpoint::load(&ck_path)?;
            let report = model.import_weights(&ck.tensors, &NameMap::identity());
            println!("import: {}", report.summary());
        }
        train(&mut model, &data, &run, None)?;
        let loss = split_loss(&mut model, &data, 64)?;
        println!("{:<12} train loss after fine-tuning {loss:.4}", if pretrained { "pretrained" } else { "random init" });
    }
    Ok(())
}
