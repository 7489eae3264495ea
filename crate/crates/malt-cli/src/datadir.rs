//! Loading and writing stream datasets on disk.
//!
//! `gen-data` lays out a dataset directory as `train/stream_###.bin` and
//! `eval/stream_###.bin`. Loading reads `*.bin` files in filename order so
//! hashes and splits stay deterministic.

use std::path::{Path, PathBuf};

use malt_core::data::{read_stream, write_stream, LabeledStream};
use malt_core::{MaltError, Result};
use sha2::{Digest, Sha256};

use crate::config::hex_string;

/// All `.bin` streams directly inside `dir`, filename-sorted. Every stream
/// must agree on feature dimension and class count.
pub fn load_dir(dir: &Path) -> Result<(Vec<LabeledStream>, usize)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(MaltError::Data(format!(
            "no .bin stream files in {}",
            dir.display()
        )));
    }
    let mut streams = Vec::with_capacity(paths.len());
    let mut classes = None;
    for path in &paths {
        let (stream, c) = read_stream(path)?;
        match classes {
            None => classes = Some(c),
            Some(expected) if expected != c => {
                return Err(MaltError::Data(format!(
                    "{}: {c} classes, previous streams had {expected}",
                    path.display()
                )));
            }
            _ => {}
        }
        if let Some(first) = streams.first() {
            let first: &LabeledStream = first;
            if first.features.cols() != stream.features.cols() {
                return Err(MaltError::Data(format!(
                    "{}: feature dim {} differs from {}",
                    path.display(),
                    stream.features.cols(),
                    first.features.cols()
                )));
            }
        }
        streams.push(stream);
    }
    Ok((streams, classes.unwrap()))
}

/// Train/eval splits of a dataset directory written by `gen-data`.
pub fn load_split(dir: &Path) -> Result<(Vec<LabeledStream>, Option<Vec<LabeledStream>>, usize)> {
    let train_dir = dir.join("train");
    if !train_dir.is_dir() {
        return Err(MaltError::Data(format!(
            "{} has no train/ subdirectory (generate it with `malt gen-data`)",
            dir.display()
        )));
    }
    let (train, classes) = load_dir(&train_dir)?;
    let eval_dir = dir.join("eval");
    let eval = if eval_dir.is_dir() {
        let (streams, eval_classes) = load_dir(&eval_dir)?;
        if eval_classes != classes {
            return Err(MaltError::Data(format!(
                "train split has {classes} classes, eval split {eval_classes}"
            )));
        }
        Some(streams)
    } else {
        None
    };
    Ok((train, eval, classes))
}

pub fn write_split(
    dir: &Path,
    train: &[LabeledStream],
    eval: &[LabeledStream],
    classes: usize,
) -> Result<()> {
    for (sub, streams) in [("train", train), ("eval", eval)] {
        let subdir = dir.join(sub);
        std::fs::create_dir_all(&subdir)?;
        for (i, stream) in streams.iter().enumerate() {
            write_stream(&subdir.join(format!("stream_{i:03}.bin")), stream, classes)?;
        }
    }
    Ok(())
}

/// Content hash over all streams in order; used by run manifests.
pub fn dataset_hash(streams: &[&[LabeledStream]]) -> String {
    let mut hasher = Sha256::new();
    for group in streams {
        for stream in *group {
            hasher.update(malt_core::data::stream_content_hash(stream).to_le_bytes());
        }
    }
    hex_string(&hasher.finalize())
}
