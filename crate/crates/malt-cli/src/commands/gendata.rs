//! `malt gen-data`: synthesize the benchmark streams and write them to disk
//! as a train/eval split.

use std::path::Path;

use malt_core::data::{generate_dataset, split_streams};
use malt_core::Result;

use crate::config::RunConfig;
use crate::datadir::{dataset_hash, write_split};

pub fn run(config: &RunConfig, out: &Path) -> Result<()> {
    let streams = generate_dataset(&config.data, config.dataset.streams)?;
    let (train, eval) = split_streams(
        streams,
        config.dataset.train_fraction,
        config.dataset.split_seed,
    )?;
    write_split(out, &train, &eval, config.data.classes)?;
    println!(
        "wrote {} train / {} eval streams ({} frames each, {} classes) to {}",
        train.len(),
        eval.len(),
        config.data.stream_len,
        config.data.classes,
        out.display()
    );
    println!("dataset hash: {}", dataset_hash(&[&train, &eval]));
    Ok(())
}
