//! Sliding-window evaluation: one forward pass per frame, scores pooled over
//! streams, then per-frame AP/cAP. Streams evaluate in parallel (they share
//! only the immutable parameter store); results are combined in stream order
//! so reports are deterministic.

use rayon::prelude::*;

use crate::data::LabeledStream;
use crate::error::{MaltError, Result};
use crate::metrics::{metric_report, MetricReport};
use crate::model::Malt;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Per-frame class probabilities for one stream at the given stride.
fn stream_scores(
    model: &Malt,
    store: &ParamStore,
    stream: &LabeledStream,
    stride: usize,
) -> Result<(Vec<Vec<f64>>, Vec<u16>)> {
    let mut scores = Vec::with_capacity(stream.len() / stride + 1);
    let mut labels = Vec::with_capacity(scores.capacity());
    for t in (0..stream.len()).step_by(stride) {
        scores.push(model.predict_at(store, &stream.features, t)?);
        labels.push(stream.labels[t]);
    }
    Ok((scores, labels))
}

/// Evaluate pooled per-frame mAP / mcAP over all streams. `stride = 1` scores
/// every frame; larger strides subsample for quick mid-training checks.
pub fn evaluate(
    model: &Malt,
    store: &ParamStore,
    streams: &[LabeledStream],
    stride: usize,
) -> Result<MetricReport> {
    if stride == 0 {
        return Err(MaltError::Contract("evaluate: stride must be >= 1".into()));
    }
    if streams.is_empty() {
        return Err(MaltError::Contract("evaluate: no streams".into()));
    }
    let per_stream: Result<Vec<_>> = streams
        .par_iter()
        .map(|s| stream_scores(model, store, s, stride))
        .collect();
    pooled_report(per_stream?, model.config.n_labels())
}

/// Metric-path oracle: score rows are the one-hot ground truth. Exercises the
/// full report pipeline and must come out at exactly mAP = mcAP = 1.
pub fn evaluate_oracle(
    streams: &[LabeledStream],
    classes: usize,
    stride: usize,
) -> Result<MetricReport> {
    if stride == 0 {
        return Err(MaltError::Contract("evaluate: stride must be >= 1".into()));
    }
    let per_stream: Vec<(Vec<Vec<f64>>, Vec<u16>)> = streams
        .iter()
        .map(|s| {
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for t in (0..s.len()).step_by(stride) {
                let mut row = vec![0.0; classes + 1];
                row[s.labels[t] as usize] = 1.0;
                scores.push(row);
                labels.push(s.labels[t]);
            }
            (scores, labels)
        })
        .collect();
    pooled_report(per_stream, classes + 1)
}

fn pooled_report(
    per_stream: Vec<(Vec<Vec<f64>>, Vec<u16>)>,
    n_labels: usize,
) -> Result<MetricReport> {
    let total: usize = per_stream.iter().map(|(s, _)| s.len()).sum();
    let mut data = Vec::with_capacity(total * n_labels);
    let mut labels = Vec::with_capacity(total);
    for (scores, stream_labels) in per_stream {
        for row in scores {
            debug_assert_eq!(row.len(), n_labels);
            data.extend_from_slice(&row);
        }
        labels.extend_from_slice(&stream_labels);
    }
    let scores = Tensor::new(vec![total, n_labels], data)?;
    metric_report(&scores, &labels)
}

/// Per-frame accuracy of the current-frame prediction, sampled at `stride`.
pub fn accuracy(
    model: &Malt,
    store: &ParamStore,
    streams: &[LabeledStream],
    stride: usize,
) -> Result<f64> {
    if stride == 0 || streams.is_empty() {
        return Err(MaltError::Contract("accuracy: need streams and stride >= 1".into()));
    }
    let counts: Result<Vec<(usize, usize)>> = streams
        .par_iter()
        .map(|stream| {
            let mut correct = 0usize;
            let mut total = 0usize;
            for t in (0..stream.len()).step_by(stride) {
                let probs = model.predict_at(store, &stream.features, t)?;
                let argmax = (0..probs.len())
                    .max_by(|&a, &b| probs[a].total_cmp(&probs[b]))
                    .unwrap();
                total += 1;
                if argmax == stream.labels[t] as usize {
                    correct += 1;
                }
            }
            Ok((correct, total))
        })
        .collect();
    let (correct, total) = counts?
        .into_iter()
        .fold((0, 0), |(c, t), (dc, dt)| (c + dc, t + dt));
    Ok(correct as f64 / total.max(1) as f64)
}
