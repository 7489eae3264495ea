//! End-to-end model assembly: memory partition, input embedding, hierarchical
//! encoder, recurrent decoder, classifier heads, and the composite loss
//! `total = alpha * main + sum_n beta * aux_n`.

use serde::{Deserialize, Serialize};

use crate::attention::{positional_encoding, SparsityConfig};
use crate::decoder::{
    frame_token_assignment, init_query_from_short_term, run_decoder, run_decoder_cascaded,
    CascadedDecoderParams, DecoderParams,
};
use crate::encoder::{run_encoder, EncoderParams};
use crate::error::{MaltError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

/// Every architecture and training hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaltConfig {
    /// Short-term memory frames (the window the per-frame loss covers).
    pub m_s: usize,
    /// Long-term memory frames preceding the short-term window.
    pub m_l: usize,
    /// Input feature dimension.
    pub d_in: usize,
    /// Model dimension.
    pub d_model: usize,
    pub heads: usize,
    /// Latent length L; branch n compresses to L / 2^(n-1) tokens.
    pub latent_len: usize,
    /// Number of encoder branches N.
    pub branches: usize,
    /// Top-k kept per attention score row.
    pub top_k: usize,
    /// Action classes; label 0 is background, labels 1..=classes are actions.
    pub classes: usize,
    /// Weight of the main loss.
    pub alpha: f64,
    /// Weight of each auxiliary loss.
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl MaltConfig {
    /// Desk-scale defaults sized to train in minutes on a laptop core.
    pub fn desk_default() -> Self {
        MaltConfig {
            m_s: 16,
            m_l: 128,
            d_in: 32,
            d_model: 64,
            heads: 4,
            latent_len: 16,
            branches: 2,
            top_k: 32,
            classes: 6,
            alpha: 1.0,
            beta: 0.4,
            lr: 3e-3,
            epochs: 20,
            batch_size: 8,
            steps_per_epoch: 100,
            seed: 1,
        }
    }

    /// Smallest config that still exercises every code path; used by the
    /// gradient checker, which needs cheap forward passes.
    pub fn tiny() -> Self {
        MaltConfig {
            m_s: 4,
            m_l: 8,
            d_in: 6,
            d_model: 8,
            heads: 2,
            latent_len: 4,
            branches: 2,
            top_k: 3,
            classes: 2,
            alpha: 1.0,
            beta: 0.4,
            lr: 1e-3,
            epochs: 2,
            batch_size: 2,
            steps_per_epoch: 8,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MaltError::Config(msg));
        if self.m_s < 1 {
            return fail("m_s must be >= 1".into());
        }
        if self.m_s >= self.m_l {
            return fail(format!(
                "short-term memory must be smaller than long-term: m_s = {} >= m_l = {}",
                self.m_s, self.m_l
            ));
        }
        if self.d_in < 1 || self.d_model < 1 {
            return fail("dimensions must be >= 1".into());
        }
        if self.heads < 1 || self.d_model % self.heads != 0 {
            return fail(format!(
                "head count {} must divide model dimension {}",
                self.heads, self.d_model
            ));
        }
        if self.branches < 1 {
            return fail("branches must be >= 1".into());
        }
        let depth_factor = 1usize << (self.branches - 1);
        if self.latent_len % depth_factor != 0 {
            return fail(format!(
                "latent length {} must be divisible by 2^(N-1) = {depth_factor}",
                self.latent_len
            ));
        }
        if self.top_k < 1 {
            return fail("top_k must be >= 1".into());
        }
        if self.classes < 1 {
            return fail("classes must be >= 1".into());
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() || self.beta < 0.0 {
            return fail(format!("loss weights out of range: alpha = {}, beta = {}", self.alpha, self.beta));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size < 1 || self.steps_per_epoch < 1 {
            return fail("batch_size and steps_per_epoch must be >= 1".into());
        }
        Ok(())
    }

    /// Logit columns: background plus action classes.
    pub fn n_labels(&self) -> usize {
        self.classes + 1
    }
}

/// How the encoder features are fused. `Recurrent` is the supported path;
/// the others exist for ablation comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionKind {
    /// Shared self+cross blocks folded over f_1..f_N.
    Recurrent,
    /// Per-stage unshared decoder weights.
    Cascaded,
    /// Sum f_1..f_N, decode once.
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub fusion: FusionKind,
    pub sparse: bool,
}

impl Default for ModelVariant {
    fn default() -> Self {
        ModelVariant {
            fusion: FusionKind::Recurrent,
            sparse: true,
        }
    }
}

#[derive(Debug, Clone)]
enum DecoderWeights {
    Shared(DecoderParams),
    Cascaded(CascadedDecoderParams),
}

/// Parameter layout for one model instance. Forward passes are pure
/// functions of (store, input); training owns the store mutably.
#[derive(Debug, Clone)]
pub struct Malt {
    pub config: MaltConfig,
    pub variant: ModelVariant,
    embed: String,
    encoder: EncoderParams,
    decoder: DecoderWeights,
    classifier_w: String,
    classifier_b: String,
    aux_heads: Vec<(String, String)>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardOut {
    /// Per-frame logits, `m_s x (classes + 1)`; row i classifies frame
    /// `t - m_s + 1 + i`, so the last row is the current frame.
    pub frame_logits: NodeId,
    /// Per-branch pooled classifier logits, each `1 x (classes + 1)`.
    pub aux_logits: Vec<NodeId>,
    /// Final encoder features {f_n}.
    pub features: Vec<NodeId>,
    /// Which short-term rows are real frames (false = stream-start padding).
    pub valid_short: Vec<bool>,
}

/// Loss nodes plus their scalar values.
#[derive(Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub main: NodeId,
    pub aux: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub main: f64,
    pub aux: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// |total - (alpha * main + sum beta * aux)|; must stay within 1e-12.
    pub fn identity_gap(&self, alpha: f64, beta: f64) -> f64 {
        let recomputed = alpha * self.main + self.aux.iter().map(|a| beta * a).sum::<f64>();
        (self.total - recomputed).abs()
    }
}

impl Malt {
    pub fn init(
        config: MaltConfig,
        variant: ModelVariant,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let embed = "embed.w".to_string();
        store.insert_normal(&embed, vec![config.d_in, config.d_model], INIT_STD, rng)?;
        let encoder = EncoderParams::register(
            store,
            rng,
            config.d_model,
            config.heads,
            config.latent_len,
            config.branches,
        )?;
        let decoder = match variant.fusion {
            FusionKind::Recurrent | FusionKind::Add => DecoderWeights::Shared(
                DecoderParams::register(store, rng, config.d_model, config.heads)?,
            ),
            FusionKind::Cascaded => DecoderWeights::Cascaded(CascadedDecoderParams::register(
                store,
                rng,
                config.d_model,
                config.heads,
                config.branches,
            )?),
        };
        let n_labels = config.n_labels();
        store.insert_normal("classifier.w", vec![config.d_model, n_labels], INIT_STD, rng)?;
        store.insert_const("classifier.b", vec![n_labels], 0.0)?;
        let mut aux_heads = Vec::with_capacity(config.branches);
        for n in 1..=config.branches {
            let w = format!("aux.branch{n}.w");
            let b = format!("aux.branch{n}.b");
            store.insert_normal(&w, vec![config.d_model, n_labels], INIT_STD, rng)?;
            store.insert_const(&b, vec![n_labels], 0.0)?;
            aux_heads.push((w, b));
        }
        Ok(Malt {
            config,
            variant,
            embed,
            encoder,
            decoder,
            classifier_w: "classifier.w".to_string(),
            classifier_b: "classifier.b".to_string(),
            aux_heads,
        })
    }

    fn sparsity(&self) -> SparsityConfig {
        if self.variant.sparse {
            SparsityConfig {
                k: self.config.top_k,
                enabled: true,
            }
        } else {
            SparsityConfig::dense()
        }
    }

    /// Embed frames and add the age-indexed positional encoding. The
    /// projection is scaled by sqrt(D) so content is not drowned out by the
    /// unit-amplitude positional signal at init.
    /// `newest_age` is the age of the LAST row of `frames`.
    fn embed_frames(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: Tensor,
        newest_age: usize,
    ) -> Result<NodeId> {
        let rows = frames.rows();
        let raw = g.input(frames);
        let w = g.param(store, &self.embed)?;
        let projected = g.matmul(raw, w)?;
        let projected = g.scale(projected, (self.config.d_model as f64).sqrt());
        let ages: Vec<usize> = (0..rows).map(|r| newest_age + (rows - 1 - r)).collect();
        let pe = g.input(positional_encoding(&ages, self.config.d_model));
        g.add(projected, pe)
    }

    /// Forward over the full history `h` (last row = current frame).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: &Tensor) -> Result<ForwardOut> {
        if h.rows() == 0 {
            return Err(MaltError::Contract("forward: empty stream".into()));
        }
        self.forward_at(g, store, h, h.rows() - 1)
    }

    /// Forward over the window ending at frame `t` of `stream`. Only rows
    /// with index <= t are ever read (asserted in the window builder).
    pub fn forward_at(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stream: &Tensor,
        t: usize,
    ) -> Result<ForwardOut> {
        let cfg = &self.config;
        let (short, long, valid_s, valid_l) =
            partition_window(stream, t, cfg.m_s, cfg.m_l, cfg.d_in)?;

        let long_e = self.embed_frames(g, store, long, cfg.m_s)?;
        let short_e = self.embed_frames(g, store, short, 0)?;

        let sparsity = self.sparsity();
        let enc_out = run_encoder(g, store, &self.encoder, long_e, &sparsity, Some(&valid_l))?;
        let features = enc_out.finals();

        let q0 = init_query_from_short_term(g, short_e, cfg.latent_len)?;
        let decoded = match (&self.decoder, self.variant.fusion) {
            (DecoderWeights::Shared(w), FusionKind::Recurrent) => {
                run_decoder(g, store, w, &features, q0, &sparsity)?
            }
            (DecoderWeights::Shared(w), FusionKind::Add) => {
                let mut summed = features[0];
                for &f in &features[1..] {
                    summed = g.add(summed, f)?;
                }
                run_decoder(g, store, w, &[summed], q0, &sparsity)?
            }
            (DecoderWeights::Cascaded(w), FusionKind::Cascaded) => {
                run_decoder_cascaded(g, store, w, &features, q0, &sparsity)?
            }
            _ => unreachable!("decoder weights registered per fusion kind"),
        };

        let cls_w = g.param(store, &self.classifier_w)?;
        let cls_b = g.param(store, &self.classifier_b)?;
        let token_logits = g.matmul(decoded, cls_w)?;
        let token_logits = g.add_row(token_logits, cls_b)?;
        let frame_logits = if cfg.m_s == cfg.latent_len {
            token_logits
        } else {
            g.gather_rows(token_logits, frame_token_assignment(cfg.m_s, cfg.latent_len))?
        };

        let mut aux_logits = Vec::with_capacity(features.len());
        for (f, (w_name, b_name)) in features.iter().zip(&self.aux_heads) {
            let pooled = g.mean_rows(*f)?;
            let w = g.param(store, w_name)?;
            let b = g.param(store, b_name)?;
            let logits = g.matmul(pooled, w)?;
            aux_logits.push(g.add_row(logits, b)?);
        }

        Ok(ForwardOut {
            frame_logits,
            aux_logits,
            features,
            valid_short: valid_s,
        })
    }

    /// Composite loss over the window ending at `t`; `labels` covers the
    /// whole stream. Returns the loss nodes with backward not yet run.
    pub fn loss_at(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stream: &Tensor,
        labels: &[u16],
        t: usize,
    ) -> Result<(LossNodes, ForwardOut)> {
        let out = self.forward_at(g, store, stream, t)?;
        let (window_labels, _) = window_labels(labels, t, self.config.m_s);
        let nodes = self.loss_from_forward(g, &out, &window_labels)?;
        Ok((nodes, out))
    }

    /// Loss from an existing forward pass; `labels` are the m_s window labels.
    pub fn loss_from_forward(
        &self,
        g: &mut Graph,
        out: &ForwardOut,
        labels: &[usize],
    ) -> Result<LossNodes> {
        let cfg = &self.config;
        if labels.len() != cfg.m_s {
            return Err(MaltError::Contract(format!(
                "loss: expected {} window labels, got {}",
                cfg.m_s,
                labels.len()
            )));
        }
        let main = main_loss(g, out.frame_logits, labels, &out.valid_short)?;
        let current_label = labels[cfg.m_s - 1];
        let aux = aux_loss(g, &out.aux_logits, current_label)?;
        let mut total = g.scale(main, cfg.alpha);
        for &a in &aux {
            let weighted = g.scale(a, cfg.beta);
            total = g.add(total, weighted)?;
        }
        Ok(LossNodes { total, main, aux })
    }

    pub fn breakdown(&self, g: &Graph, nodes: &LossNodes) -> LossBreakdown {
        LossBreakdown {
            main: g.value(nodes.main).item(),
            aux: nodes.aux.iter().map(|&a| g.value(a).item()).collect(),
            total: g.value(nodes.total).item(),
        }
    }

    /// Class probabilities for the current frame of the window ending at `t`.
    pub fn predict_at(&self, store: &ParamStore, stream: &Tensor, t: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward_at(&mut g, store, stream, t)?;
        let logits = g.value(out.frame_logits);
        let last = Tensor::new(
            vec![1, logits.cols()],
            logits.row(logits.rows() - 1).to_vec(),
        )?;
        Ok(crate::tensor::softmax_rows(&last)?.data().to_vec())
    }
}

/// Mean cross-entropy over the valid window frames.
pub fn main_loss(
    g: &mut Graph,
    frame_logits: NodeId,
    labels: &[usize],
    valid: &[bool],
) -> Result<NodeId> {
    g.cross_entropy_rows(frame_logits, labels, valid)
}

/// One scalar per branch: cross-entropy of the pooled branch feature against
/// the current-frame label.
pub fn aux_loss(g: &mut Graph, aux_logits: &[NodeId], current_label: usize) -> Result<Vec<NodeId>> {
    aux_logits
        .iter()
        .map(|&logits| g.cross_entropy_rows(logits, &[current_label], &[true]))
        .collect()
}

/// Split the history ending at `t` into short-term and long-term windows,
/// zero-padding positions before the stream start and flagging them invalid.
/// This is the causality guard: the assertion proves no frame newer than `t`
/// is ever read.
pub fn partition_window(
    stream: &Tensor,
    t: usize,
    m_s: usize,
    m_l: usize,
    d_in: usize,
) -> Result<(Tensor, Tensor, Vec<bool>, Vec<bool>)> {
    if stream.rows() == 0 {
        return Err(MaltError::Contract("partition: empty stream".into()));
    }
    if t >= stream.rows() {
        return Err(MaltError::Contract(format!(
            "partition: frame {t} out of range for stream of {} frames",
            stream.rows()
        )));
    }
    if stream.cols() != d_in {
        return Err(MaltError::ShapeMismatch {
            op: "partition",
            lhs: format!("{} feature columns", stream.cols()),
            rhs: format!("configured d_in {d_in}"),
        });
    }
    let build = |len: usize, newest: i64| -> (Tensor, Vec<bool>) {
        let mut out = Tensor::zeros(vec![len, d_in]);
        let mut valid = vec![false; len];
        for r in 0..len {
            let frame = newest - (len as i64 - 1 - r as i64);
            if frame >= 0 {
                let frame = frame as usize;
                assert!(frame <= t, "causality violation: read frame {frame} at time {t}");
                out.row_mut(r).copy_from_slice(stream.row(frame));
                valid[r] = true;
            }
        }
        (out, valid)
    };
    let (short, valid_s) = build(m_s, t as i64);
    let (long, valid_l) = build(m_l, t as i64 - m_s as i64);
    Ok((short, long, valid_s, valid_l))
}

/// Short/long split of a full history tensor (last row = current frame).
pub fn partition_memory(
    h: &Tensor,
    m_s: usize,
    m_l: usize,
) -> Result<(Tensor, Tensor, Vec<bool>, Vec<bool>)> {
    if h.rows() == 0 {
        return Err(MaltError::Contract("partition: empty stream".into()));
    }
    partition_window(h, h.rows() - 1, m_s, m_l, h.cols())
}

/// Labels for the window ending at `t`, padded with background before the
/// stream start (those positions are flagged invalid).
pub fn window_labels(labels: &[u16], t: usize, m_s: usize) -> (Vec<usize>, Vec<bool>) {
    let mut out = vec![0usize; m_s];
    let mut valid = vec![false; m_s];
    for r in 0..m_s {
        let frame = t as i64 - (m_s as i64 - 1 - r as i64);
        if frame >= 0 && (frame as usize) < labels.len() {
            out[r] = labels[frame as usize] as usize;
            valid[r] = true;
        }
    }
    (out, valid)
}

/// Per-module and total parameter counts, grouped by the first dotted name
/// component. Deterministic: the store iterates name-sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCountReport {
    pub per_module: Vec<(String, usize)>,
    pub total: usize,
}

pub fn parameter_count(store: &ParamStore) -> ParamCountReport {
    let mut per_module: Vec<(String, usize)> = Vec::new();
    let mut total = 0;
    for (name, entry) in store.iter() {
        let module = name.split('.').next().unwrap_or(name).to_string();
        let n = entry.value.numel();
        total += n;
        match per_module.last_mut() {
            Some((m, acc)) if *m == module => *acc += n,
            _ => per_module.push((module, n)),
        }
    }
    ParamCountReport { per_module, total }
}

impl ParamCountReport {
    pub fn module(&self, name: &str) -> usize {
        self.per_module
            .iter()
            .find(|(m, _)| m == name)
            .map(|(_, n)| *n)
            .unwrap_or(0)
    }
}
