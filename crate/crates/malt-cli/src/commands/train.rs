//! `malt train`: run epochs, log the loss breakdown per batch, track the best
//! checkpoint by eval mAP, and keep the run manifest up to date.

use std::path::Path;

use malt_core::data::{generate_dataset, split_streams, LabeledStream};
use malt_core::eval::evaluate;
use malt_core::train::train_epochs;
use malt_core::{
    Checkpoint, Malt, MaltError, ModelVariant, ParamStore, Result, Rng, TrainerState,
};

use crate::config::RunConfig;
use crate::datadir::{dataset_hash, load_split};
use crate::manifest::RunManifest;

/// Window-sampler seed derivation, kept distinct from the init stream.
pub const SAMPLER_SEED_XOR: u64 = 0x5EED;

pub fn run(
    config: &RunConfig,
    data_dir: Option<&Path>,
    out_dir: &Path,
    resume: Option<&Path>,
    eval_stride: usize,
    quiet: bool,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (train_streams, eval_streams) = obtain_streams(config, data_dir)?;
    let data_hash = match &eval_streams {
        Some(eval) => dataset_hash(&[&train_streams, eval]),
        None => dataset_hash(&[&train_streams]),
    };

    let (model, mut store, mut state, mut manifest) = match resume {
        Some(ckpt_path) => {
            let ckpt = Checkpoint::load(ckpt_path)?;
            // the epoch budget may be extended on resume; everything else
            // must match the checkpoint exactly
            let mut comparable = config.model.clone();
            comparable.epochs = ckpt.config.epochs;
            if ckpt.config != comparable {
                return Err(MaltError::Config(format!(
                    "checkpoint at {} was trained with a different model config; \
                     refusing to resume",
                    ckpt_path.display()
                )));
            }
            let (mut model, store, state) = ckpt.restore()?;
            // adopt the (possibly extended) epoch budget for the lr schedule
            model.config.epochs = config.model.epochs;
            let manifest_path = out_dir.join("manifest.json");
            let manifest = if manifest_path.is_file() {
                RunManifest::load(&manifest_path)?
            } else {
                RunManifest::new(config.hash()?, data_hash.clone(), config.model.seed)
            };
            println!(
                "resumed from {} at epoch {}, step {}",
                ckpt_path.display(),
                state.epoch,
                state.adam_t
            );
            (model, store, state, manifest)
        }
        None => {
            let mut store = ParamStore::new();
            let mut rng = Rng::new(config.model.seed);
            let model = Malt::init(
                config.model.clone(),
                ModelVariant::default(),
                &mut store,
                &mut rng,
            )?;
            let state = TrainerState::fresh(config.model.seed ^ SAMPLER_SEED_XOR);
            let manifest = RunManifest::new(config.hash()?, data_hash.clone(), config.model.seed);
            (model, store, state, manifest)
        }
    };

    let counts = malt_core::model::parameter_count(&store);
    println!(
        "model: {} parameters ({})",
        counts.total,
        counts
            .per_module
            .iter()
            .map(|(m, n)| format!("{m} {n}"))
            .collect::<Vec<_>>()
            .join(", ")
    );

    let remaining = config.model.epochs.saturating_sub(state.epoch as usize);
    if remaining == 0 {
        println!("no epochs to run; writing checkpoint only");
    }

    let mut best_map = manifest
        .history
        .iter()
        .filter_map(|e| e.eval_map)
        .fold(f64::NEG_INFINITY, f64::max);

    for _ in 0..remaining {
        let records = train_epochs(&model, &mut store, &train_streams, &mut state, 1, |step| {
            if !quiet {
                println!(
                    "epoch {:>3} step {:>4}  total {:.4}  main {:.4}  aux [{}]  acc {:.3}",
                    step.epoch,
                    step.step,
                    step.breakdown.total,
                    step.breakdown.main,
                    step.breakdown
                        .aux
                        .iter()
                        .map(|a| format!("{a:.4}"))
                        .collect::<Vec<_>>()
                        .join(", "),
                    step.batch_accuracy
                );
            }
        })?;
        let record = records.into_iter().next().expect("one epoch record");

        let eval_map = match &eval_streams {
            Some(eval) => Some(evaluate(&model, &store, eval, eval_stride)?.mean_ap),
            None => None,
        };
        println!(
            "epoch {:>3} done  total {:.4}  main {:.4}  batch-acc {:.3}{}",
            record.epoch,
            record.mean_total,
            record.mean_main,
            record.batch_accuracy,
            eval_map
                .map(|m| format!("  eval mAP {m:.4} (stride {eval_stride})"))
                .unwrap_or_default()
        );

        manifest.push(record, eval_map);
        let ckpt = Checkpoint::capture(&model, &store, &state);
        ckpt.save(&out_dir.join("last.ckpt"))?;
        if let Some(map) = eval_map {
            if map > best_map {
                best_map = map;
                ckpt.save(&out_dir.join("best.ckpt"))?;
            }
        }
        manifest.save(&out_dir.join("manifest.json"))?;
    }

    if remaining == 0 {
        Checkpoint::capture(&model, &store, &state).save(&out_dir.join("last.ckpt"))?;
        manifest.save(&out_dir.join("manifest.json"))?;
    }
    println!("checkpoints and manifest written to {}", out_dir.display());
    Ok(())
}

fn obtain_streams(
    config: &RunConfig,
    data_dir: Option<&Path>,
) -> Result<(Vec<LabeledStream>, Option<Vec<LabeledStream>>)> {
    match data_dir {
        Some(dir) => {
            let (train, eval, classes) = load_split(dir)?;
            let d_in = train[0].features.cols();
            if classes != config.model.classes || d_in != config.model.d_in {
                return Err(MaltError::Data(format!(
                    "dataset at {} has d_in {} / {} classes, config expects d_in {} / {} classes",
                    dir.display(),
                    d_in,
                    classes,
                    config.model.d_in,
                    config.model.classes
                )));
            }
            Ok((train, eval))
        }
        None => {
            // no data on disk: synthesize from the spec, deterministic
            let streams = generate_dataset(&config.data, config.dataset.streams)?;
            let (train, eval) = split_streams(
                streams,
                config.dataset.train_fraction,
                config.dataset.split_seed,
            )?;
            Ok((train, Some(eval)))
        }
    }
}
