//! `malt eval`: sliding-window evaluation of a checkpoint over a stream
//! directory, printing one JSON record per class plus a summary record.

use std::path::Path;

use malt_core::eval::{evaluate, evaluate_oracle};
use malt_core::{Checkpoint, MaltError, MetricReport, Result};

use crate::datadir::load_dir;

pub fn run(
    checkpoint: &Path,
    data_dir: &Path,
    stride: usize,
    oracle: bool,
    emit: Option<&Path>,
) -> Result<()> {
    // accept either a directory of .bin files or a gen-data root with eval/
    let dir = if data_dir.join("eval").is_dir()
        && !std::fs::read_dir(data_dir)?
            .filter_map(|e| e.ok())
            .any(|e| e.path().extension().is_some_and(|x| x == "bin"))
    {
        data_dir.join("eval")
    } else {
        data_dir.to_path_buf()
    };
    let (streams, classes) = load_dir(&dir)?;

    let ckpt = Checkpoint::load(checkpoint)?;
    let d_in = streams[0].features.cols();
    if ckpt.config.d_in != d_in || ckpt.config.classes != classes {
        return Err(MaltError::Data(format!(
            "checkpoint expects d_in {} / {} classes, data at {} has d_in {d_in} / {classes} classes",
            ckpt.config.d_in,
            ckpt.config.classes,
            dir.display()
        )));
    }

    let report = if oracle {
        // debug path: one-hot ground-truth scores bound the metrics at 1.0
        evaluate_oracle(&streams, classes, stride)?
    } else {
        let (model, store, _) = ckpt.restore()?;
        evaluate(&model, &store, &streams, stride)?
    };

    let text = render_report(&report)?;
    print!("{text}");
    if let Some(path) = emit {
        std::fs::write(path, &text)?;
    }
    Ok(())
}

pub fn render_report(report: &MetricReport) -> Result<String> {
    let mut out = String::new();
    for class in &report.per_class {
        let line = serde_json::to_string(class)
            .map_err(|e| MaltError::Format(format!("report serialization: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    let summary = serde_json::json!({
        "summary": true,
        "mean_ap": report.mean_ap,
        "mean_cap": report.mean_cap,
        "total_frames": report.total_frames,
        "skipped_classes": report.skipped_classes,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    Ok(out)
}
