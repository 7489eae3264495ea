//! Training loop: window sampling, batched gradient accumulation, Adam steps,
//! and per-batch loss logging.

use serde::{Deserialize, Serialize};

use crate::data::LabeledStream;
use crate::error::{MaltError, Result};
use crate::graph::Graph;
use crate::model::{window_labels, LossBreakdown, Malt};
use crate::optim::{adam_step, AdamParams};
use crate::params::ParamStore;
use crate::rng::Rng;

/// Mutable trainer state that survives checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub epoch: u64,
    pub adam_t: u64,
    pub rng: Rng,
}

impl TrainerState {
    pub fn fresh(seed: u64) -> Self {
        TrainerState {
            epoch: 0,
            adam_t: 0,
            rng: Rng::new(seed),
        }
    }
}

/// One optimizer step over a batch of sampled windows.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub epoch: u64,
    pub step: usize,
    pub breakdown: LossBreakdown,
    /// Fraction of valid window frames whose argmax matched the label.
    pub batch_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mean_total: f64,
    pub mean_main: f64,
    pub mean_aux: Vec<f64>,
    pub batch_accuracy: f64,
}

/// Cosine decay from the configured rate down to 10% of it across the
/// planned epoch budget; keeps late epochs from oscillating.
fn epoch_lr(base: f64, epoch: u64, total_epochs: usize) -> f64 {
    if total_epochs <= 1 {
        return base;
    }
    let progress = ((epoch.max(1) - 1) as f64 / (total_epochs - 1) as f64).min(1.0);
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (0.1 + 0.9 * cosine)
}

/// Run `epochs` additional epochs. Window positions are sampled uniformly
/// over frames with a full short-term window; gradients accumulate across the
/// batch, are averaged, and one Adam step is taken per batch. The loss
/// identity `total = alpha * main + sum beta * aux` is asserted on every
/// logged batch.
pub fn train_epochs(
    model: &Malt,
    store: &mut ParamStore,
    streams: &[LabeledStream],
    state: &mut TrainerState,
    epochs: usize,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<EpochRecord>> {
    if streams.is_empty() {
        return Err(MaltError::Contract("train: no streams".into()));
    }
    let cfg = &model.config;
    for stream in streams {
        if stream.len() < cfg.m_s {
            return Err(MaltError::Data(format!(
                "train: stream of {} frames is shorter than the short-term window {}",
                stream.len(),
                cfg.m_s
            )));
        }
    }
    let mut history = Vec::with_capacity(epochs);

    for _ in 0..epochs {
        state.epoch += 1;
        let adam = AdamParams::with_lr(epoch_lr(cfg.lr, state.epoch, cfg.epochs));
        let mut epoch_total = 0.0;
        let mut epoch_main = 0.0;
        let mut epoch_aux = vec![0.0; cfg.branches];
        let mut epoch_correct = 0usize;
        let mut epoch_frames = 0usize;

        for step in 0..cfg.steps_per_epoch {
            store.zero_grads();
            let mut batch_total = 0.0;
            let mut batch_main = 0.0;
            let mut batch_aux = vec![0.0; cfg.branches];
            let mut correct = 0usize;
            let mut frames = 0usize;

            for _ in 0..cfg.batch_size {
                let stream = &streams[state.rng.below(streams.len() as u64) as usize];
                let t_lo = cfg.m_s as u64 - 1;
                let t = state.rng.range_inclusive(t_lo, stream.len() as u64 - 1) as usize;

                let mut g = Graph::new();
                let (nodes, out) =
                    model.loss_at(&mut g, store, &stream.features, &stream.labels, t)?;
                let breakdown = model.breakdown(&g, &nodes);
                let gap = breakdown.identity_gap(cfg.alpha, cfg.beta);
                if gap > 1e-12 {
                    return Err(MaltError::Contract(format!(
                        "loss identity violated: |total - recomposed| = {gap:e}"
                    )));
                }
                batch_total += breakdown.total;
                batch_main += breakdown.main;
                for (acc, a) in batch_aux.iter_mut().zip(&breakdown.aux) {
                    *acc += a;
                }

                let logits = g.value(out.frame_logits);
                let (labels, valid) = window_labels(&stream.labels, t, cfg.m_s);
                for i in 0..cfg.m_s {
                    if !valid[i] {
                        continue;
                    }
                    let row = logits.row(i);
                    let argmax = (0..row.len())
                        .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                        .unwrap();
                    frames += 1;
                    if argmax == labels[i] {
                        correct += 1;
                    }
                }

                g.backward(nodes.total, store)?;
            }

            store.scale_grads(1.0 / cfg.batch_size as f64);
            state.adam_t += 1;
            adam_step(store, &adam, state.adam_t)?;

            let b = cfg.batch_size as f64;
            let record = StepRecord {
                epoch: state.epoch,
                step,
                breakdown: LossBreakdown {
                    main: batch_main / b,
                    aux: batch_aux.iter().map(|a| a / b).collect(),
                    total: batch_total / b,
                },
                batch_accuracy: correct as f64 / frames.max(1) as f64,
            };
            epoch_total += record.breakdown.total;
            epoch_main += record.breakdown.main;
            for (acc, a) in epoch_aux.iter_mut().zip(&record.breakdown.aux) {
                *acc += a;
            }
            epoch_correct += correct;
            epoch_frames += frames;
            on_step(&record);
        }

        let s = cfg.steps_per_epoch as f64;
        history.push(EpochRecord {
            epoch: state.epoch,
            mean_total: epoch_total / s,
            mean_main: epoch_main / s,
            mean_aux: epoch_aux.iter().map(|a| a / s).collect(),
            batch_accuracy: epoch_correct as f64 / epoch_frames.max(1) as f64,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, StreamSpec};
    use crate::model::{MaltConfig, ModelVariant};

    fn tiny_setup() -> (Malt, ParamStore, Vec<LabeledStream>) {
        let mut config = MaltConfig::tiny();
        config.steps_per_epoch = 4;
        config.batch_size = 2;
        let spec = StreamSpec {
            classes: config.classes,
            d_in: config.d_in,
            segments_per_action: 2,
            segment_len: (2, 4),
            gap_len: (1, 3),
            sigma: 0.1,
            stream_len: 64,
            seed: 5,
        };
        let streams = generate_dataset(&spec, 2).unwrap();
        let mut store = ParamStore::new();
        let mut rng = Rng::new(config.seed);
        let model = Malt::init(config, ModelVariant::default(), &mut store, &mut rng).unwrap();
        (model, store, streams)
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let run = || {
            let (model, mut store, streams) = tiny_setup();
            let mut state = TrainerState::fresh(99);
            let history =
                train_epochs(&model, &mut store, &streams, &mut state, 2, |_| {}).unwrap();
            (history, store)
        };
        let (h1, s1) = run();
        let (h2, s2) = run();
        assert_eq!(h1, h2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn epoch_counter_advances_across_calls() {
        let (model, mut store, streams) = tiny_setup();
        let mut state = TrainerState::fresh(1);
        train_epochs(&model, &mut store, &streams, &mut state, 1, |_| {}).unwrap();
        assert_eq!(state.epoch, 1);
        train_epochs(&model, &mut store, &streams, &mut state, 2, |_| {}).unwrap();
        assert_eq!(state.epoch, 3);
        assert_eq!(state.adam_t, 3 * model.config.steps_per_epoch as u64);
    }

    #[test]
    fn step_records_fire_per_batch() {
        let (model, mut store, streams) = tiny_setup();
        let mut state = TrainerState::fresh(2);
        let mut count = 0;
        train_epochs(&model, &mut store, &streams, &mut state, 2, |_| count += 1).unwrap();
        assert_eq!(count, 2 * model.config.steps_per_epoch);
    }
}
