//! Parses an EXPR annotation file, remaps it to the canonical class order and
//! shows which frames survive 1-in-10 subsampling.

use affectkit::dataset::{parse_annotation_file, serialize_annotation, temporal_subsample, FrameSample, LabelSpace, AFFWILD2_HEADER};
use affectkit::seed;

fn main() -> affectkit::Result<()> {
    let text = "Neutral,Anger,Disgust,Fear,Happiness,Sadness,Surprise,Other\n\
                0\n0\n0\n4\n4\n4\n4\n-1\n-1\n6\n6\n6\n6\n6\n1\n1\n1\n7\n7\n7\n7\n0\n0\n";
    let ls = LabelSpace::canonical();
    let track = parse_annotation_file("video_42", text, &ls)?;
    println!("{} frames, {} labelled", track.frame_count(), track.valid_count());
    for (i, l) in track.labels.iter().enumerate().take(10) {
        let name = l.and_then(|id| ls.name_of(id)).unwrap_or("<invalid>");
        println!("  frame {i:>2}: {name}");
    }

    let samples: Vec<FrameSample> = track
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            l.map(|label| FrameSample {
                video_id: track.video_id.clone(),
                frame_index: i,
                image_ref: Default::default(),
                label,
            })
        })
        .collect();
    let kept = temporal_subsample(&samples, 10, &mut seed::stream(0, "example", &[]))?;
    println!("kept frames: {:?}", kept.iter().map(|s| s.frame_index).collect::<Vec<_>>());

    let back = serialize_annotation(&track, &AFFWILD2_HEADER, &ls)?;
    assert_eq!(back, text);
    println!("round trip ok");
    Ok(())
}
