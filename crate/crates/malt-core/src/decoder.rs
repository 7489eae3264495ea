//! Recurrent decoder: one shared self+cross attention pair applied stage by
//! stage over the encoder features, threading each stage's output in as the
//! next stage's query. Parameter count is therefore independent of the number
//! of stages. An unshared (cascaded) variant exists solely for ablations.

use crate::attention::{attention_block, AttnMode, BlockParams, SparsityConfig};
use crate::error::{MaltError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::rng::Rng;

/// Shared decoder weights: a self-attention block and a sparse cross-attention
/// block reused at every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub self_block: BlockParams,
    pub cross_block: BlockParams,
}

impl DecoderParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(DecoderParams {
            self_block: BlockParams::register(store, rng, "decoder.self", d_model, heads, false)?,
            cross_block: BlockParams::register(store, rng, "decoder.cross", d_model, heads, true)?,
        })
    }
}

/// Per-stage weights for the cascaded (unshared) ablation variant.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadedDecoderParams {
    pub stages: Vec<DecoderStageParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStageParams {
    pub self_block: BlockParams,
    pub cross_block: BlockParams,
}

impl CascadedDecoderParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        d_model: usize,
        heads: usize,
        n_stages: usize,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(n_stages);
        for n in 1..=n_stages {
            stages.push(DecoderStageParams {
                self_block: BlockParams::register(
                    store,
                    rng,
                    &format!("decoder.stage{n}.self"),
                    d_model,
                    heads,
                    false,
                )?,
                cross_block: BlockParams::register(
                    store,
                    rng,
                    &format!("decoder.stage{n}.cross"),
                    d_model,
                    heads,
                    true,
                )?,
            });
        }
        Ok(CascadedDecoderParams { stages })
    }
}

/// The running query and how many stages have consumed it.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub q: NodeId,
    pub stage: usize,
}

/// Frame indices (into the short-term window, oldest first) feeding each of
/// the `l` query tokens.
///
/// * `m_s == l`: one token per frame.
/// * `m_s > l`: uniform stride `m_s / l` walking back from the most recent
///   frame, presented oldest-to-newest.
/// * `m_s < l`: nearest-frame repetition, token `i` reads frame
///   `floor(i * m_s / l)`.
pub fn token_source_indices(m_s: usize, l: usize) -> Vec<usize> {
    assert!(m_s >= 1 && l >= 1);
    if m_s == l {
        return (0..l).collect();
    }
    if m_s > l {
        let stride = m_s / l;
        let mut picks: Vec<usize> = (0..l).map(|j| m_s - 1 - j * stride).collect();
        picks.reverse();
        picks
    } else {
        (0..l).map(|i| i * m_s / l).collect()
    }
}

/// Inverse of [`token_source_indices`]: for each of the `m_s` window frames,
/// the token whose source frame is nearest (ties resolved toward the later
/// token, so the current frame always maps to the last token).
pub fn frame_token_assignment(m_s: usize, l: usize) -> Vec<usize> {
    let sources = token_source_indices(m_s, l);
    (0..m_s)
        .map(|frame| {
            let mut best = 0usize;
            let mut best_dist = usize::MAX;
            for (tok, &src) in sources.iter().enumerate() {
                let dist = src.abs_diff(frame);
                if dist <= best_dist {
                    best_dist = dist;
                    best = tok;
                }
            }
            best
        })
        .collect()
}

/// Build the initial query from the embedded short-term memory
/// (`m_s x D`, positional encoding already added). Output is `l x D`.
pub fn init_query_from_short_term(
    g: &mut Graph,
    short_embedded: NodeId,
    l: usize,
) -> Result<NodeId> {
    let m_s = g.value(short_embedded).rows();
    if m_s == 0 {
        return Err(MaltError::Contract("init_query: empty short-term memory".into()));
    }
    if m_s == l {
        return Ok(short_embedded);
    }
    g.gather_rows(short_embedded, token_source_indices(m_s, l))
}

/// One decoding stage: self-attention over Q, then sparse cross-attention
/// with `f_n` as keys/values. The output becomes the next stage's query.
pub fn decode_stage(
    g: &mut Graph,
    store: &ParamStore,
    self_block: &BlockParams,
    cross_block: &BlockParams,
    state: DecoderState,
    feature: NodeId,
    s: &SparsityConfig,
) -> Result<DecoderState> {
    let refined = attention_block(
        g,
        store,
        state.q,
        state.q,
        self_block,
        &SparsityConfig::dense(),
        AttnMode::SelfAttn,
        None,
    )?;
    let out = attention_block(
        g,
        store,
        refined,
        feature,
        cross_block,
        s,
        AttnMode::CrossAttn,
        None,
    )?;
    Ok(DecoderState {
        q: out,
        stage: state.stage + 1,
    })
}

/// Fold the shared decode stage over f_1..f_N in order; returns Out_N.
pub fn run_decoder(
    g: &mut Graph,
    store: &ParamStore,
    w: &DecoderParams,
    features: &[NodeId],
    q0: NodeId,
    s: &SparsityConfig,
) -> Result<NodeId> {
    if features.is_empty() {
        return Err(MaltError::Contract("run_decoder: empty feature list".into()));
    }
    let mut state = DecoderState { q: q0, stage: 0 };
    for &f in features {
        state = decode_stage(g, store, &w.self_block, &w.cross_block, state, f, s)?;
    }
    Ok(state.q)
}

/// Ablation variant: per-stage unshared weights.
pub fn run_decoder_cascaded(
    g: &mut Graph,
    store: &ParamStore,
    w: &CascadedDecoderParams,
    features: &[NodeId],
    q0: NodeId,
    s: &SparsityConfig,
) -> Result<NodeId> {
    if features.is_empty() {
        return Err(MaltError::Contract("run_decoder: empty feature list".into()));
    }
    if features.len() != w.stages.len() {
        return Err(MaltError::Config(format!(
            "cascaded decoder has {} stages but got {} features",
            w.stages.len(),
            features.len()
        )));
    }
    let mut state = DecoderState { q: q0, stage: 0 };
    for (f, stage_w) in features.iter().zip(&w.stages) {
        state = decode_stage(
            g,
            store,
            &stage_w.self_block,
            &stage_w.cross_block,
            state,
            *f,
            s,
        )?;
    }
    Ok(state.q)
}
