//! Writes a small synthetic dataset in the Aff-Wild2 layout and reads it back.
//!
//!     cargo run --example synth_dataset -- /tmp/affect-data

use affectkit::dataset::{load_split, synthesize_dataset, SynthOptions, CLASS_NAMES, TRAIN_SPLIT, VALIDATION_SPLIT};

fn main() -> affectkit::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let root = std::path::Path::new(&root);

    synthesize_dataset(root, &SynthOptions::new(16, 24, 112, 1))?;
    let mut val = SynthOptions::new(8, 24, 112, 2);
    val.split = VALIDATION_SPLIT.into();
    synthesize_dataset(root, &val)?;

    for split in [TRAIN_SPLIT, VALIDATION_SPLIT] {
        let data = load_split(root, split, 112)?;
        let mut per_class = [0usize; 8];
        for s in &data.samples {
            per_class[s.label] += 1;
        }
        println!("{split}: {} frames", data.len());
        for (name, n) in CLASS_NAMES.iter().zip(per_class) {
            println!("  {name:<10} {n}");
        }
    }
    Ok(())
}
