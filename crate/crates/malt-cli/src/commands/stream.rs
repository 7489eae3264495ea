//! `malt stream`: online frame-by-frame inference over one stream file.
//! Emits one JSON record per frame and reports the measured frame rate.
//! The window builder asserts that no frame newer than t is ever read.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use malt_core::data::read_stream;
use malt_core::{Checkpoint, MaltError, Result};

pub fn run(checkpoint: &Path, stream_file: &Path, emit: &Path) -> Result<()> {
    let (stream, classes) = read_stream(stream_file)?;
    if stream.len() < 2 {
        return Err(MaltError::Contract(
            "stream command needs more than one frame".into(),
        ));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.config.d_in != stream.features.cols() || ckpt.config.classes != classes {
        return Err(MaltError::Data(format!(
            "checkpoint expects d_in {} / {} classes, stream has d_in {} / {} classes",
            ckpt.config.d_in,
            ckpt.config.classes,
            stream.features.cols(),
            classes
        )));
    }
    let (model, store, _) = ckpt.restore()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(emit)?);
    let started = Instant::now();
    for t in 0..stream.len() {
        let scores = model.predict_at(&store, &stream.features, t)?;
        let pred = (0..scores.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .unwrap();
        let record = serde_json::json!({ "t": t, "pred": pred, "scores": scores });
        writeln!(out, "{record}")?;
    }
    out.flush()?;
    let elapsed = started.elapsed().as_secs_f64();
    let fps = stream.len() as f64 / elapsed;
    println!(
        "processed {} frames in {:.2} s  ({:.1} frames/s, {:.2} ms/frame)",
        stream.len(),
        elapsed,
        fps,
        1e3 * elapsed / stream.len() as f64
    );
    println!("prediction log written to {}", emit.display());
    Ok(())
}
