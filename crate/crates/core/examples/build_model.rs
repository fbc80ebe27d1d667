//! Assembles the reference ResNet-50 classifier at 224², freezes the first two
//! stages and prints the geometry, parameter budget and naming scheme.

use affectkit::model::{build_model, head_output_shape, BackboneSpec, HeadConfig, NameMap};
use affectkit::nn::Module;

fn main() -> affectkit::Result<()> {
    let spec = BackboneSpec::resnet50(224);
    let head = HeadConfig::default();
    let feature = spec.feature_shape()?;
    println!("{} feature map {:?} -> head output {}", spec.name, feature, head_output_shape(feature, &head)?);
    for s in spec.stages() {
        println!("  {:<7} {:>5} channels, stride {:>2}, {} blocks", s.name, s.out_channels, s.cumulative_stride, s.n_blocks);
    }

    let mut model = build_model::<f32>(&spec, &head, 0)?;
    model.freeze_stages(2)?;
    println!(
        "weights: {} total, {} frozen, {} trainable",
        model.count_weights(None),
        model.count_weights(Some(true)),
        model.count_weights(Some(false))
    );

    let names: Vec<String> = model.named_params("").into_iter().map(|(n, _)| n).collect();
    println!("{} named tensors, e.g.", names.len());
    for n in names.iter().filter(|n| n.contains(".0.conv1.") || n.starts_with("head.")) {
        println!("  {n}");
    }

    let tv = NameMap::torchvision();
    for n in ["conv1.weight", "layer1.0.downsample.0.weight", "layer4.2.bn3.running_mean"] {
        println!("torchvision {n} -> {}", tv.map(n));
    }
    Ok(())
}
