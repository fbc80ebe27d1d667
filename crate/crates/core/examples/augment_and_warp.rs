//! Renders one synthetic frame, then writes an augmented copy and two local
//! warps of it as JPEGs.
//!
//!     cargo run --example augment_and_warp -- /tmp/views

use affectkit::dataset::{augment, render_frame, AugmentConfig};
use affectkit::pretrain::WarpField;
use affectkit::seed;
use ndarray::Array3;

fn save(img: &Array3<u8>, path: &std::path::Path) {
    let (h, w, _) = img.dim();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, img.iter().copied().collect()).expect("rgb buffer");
    buf.save(path).expect("write jpeg");
    println!("wrote {}", path.display());
}

fn main() -> affectkit::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-views".into()));
    std::fs::create_dir_all(&out).expect("output dir");

    let mut rng = seed::stream(7, "example", &[]);
    let style = affectkit::dataset::VideoStyle::sample(&mut rng);
    let frame = render_frame(3, &style, 0, 160, 1);
    save(&frame, &out.join("frame.jpg"));

    let cropped = augment(&frame, &AugmentConfig::new(160), &mut rng)?;
    save(&cropped, &out.join("augmented.jpg"));

    let float = frame.mapv(f32::from);
    for (name, magnitude) in [("warp_small.jpg", 4.0), ("warp_large.jpg", 12.0)] {
        let field = WarpField::random(4, magnitude, &mut rng)?;
        let dense = field.dense(160, 160);
        let peak = dense.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        println!("{name}: bound {magnitude} px, largest dense displacement {peak:.2} px");
        let warped = field.apply(float.view()).mapv(|v| v.round().clamp(0.0, 255.0) as u8);
        save(&warped, &out.join(name));
    }
    Ok(())
}
