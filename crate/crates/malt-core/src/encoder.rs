//! Hierarchical coarse-to-fine encoder.
//!
//! `N` branches of increasing depth compress long-term memory into an action
//! feature sequence {f_1, ..., f_N}. Branch `n` starts from a learned latent
//! query of `L / 2^(n-1)` tokens: self-attention over the latents, then sparse
//! cross-attention reading the long-term memory (stage 1), followed by `n - 1`
//! fusion stages. Each fusion stage is dense cross-attention whose queries are
//! the PREVIOUS branch's stage output and whose keys/values are THIS branch's
//! previous stage, which doubles the token length per stage until every final
//! feature is `L x D`. Weights are per branch and per stage; only the decoder
//! shares weights.

use crate::attention::{attention_block, AttnMode, BlockParams, SparsityConfig};
use crate::error::{MaltError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::rng::Rng;

const LATENT_STD: f64 = 0.02;

/// Parameter names for one encoding branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    /// Learned latent query, `L_n x D` with `L_n = L / 2^(n-1)`.
    pub lambda: String,
    pub compress_self: BlockParams,
    pub compress_cross: BlockParams,
    /// Fusion blocks for stages p = 2..=n, in stage order.
    pub fuse: Vec<BlockParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub branches: Vec<BranchParams>,
    pub latent_len: usize,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut Rng,
        d_model: usize,
        heads: usize,
        latent_len: usize,
        n_branches: usize,
    ) -> Result<Self> {
        if n_branches < 1 {
            return Err(MaltError::Config("encoder needs at least one branch".into()));
        }
        let depth_factor = 1usize << (n_branches - 1);
        if latent_len % depth_factor != 0 {
            return Err(MaltError::Config(format!(
                "latent length {latent_len} must be divisible by 2^(N-1) = {depth_factor}"
            )));
        }
        let mut branches = Vec::with_capacity(n_branches);
        for n in 1..=n_branches {
            let prefix = format!("encoder.branch{n}");
            let l_n = latent_len >> (n - 1);
            let lambda = format!("{prefix}.lambda");
            store.insert_normal(&lambda, vec![l_n, d_model], LATENT_STD, rng)?;
            let compress_self = BlockParams::register(
                store,
                rng,
                &format!("{prefix}.compress_self"),
                d_model,
                heads,
                false,
            )?;
            let compress_cross = BlockParams::register(
                store,
                rng,
                &format!("{prefix}.compress_cross"),
                d_model,
                heads,
                true,
            )?;
            let mut fuse = Vec::with_capacity(n - 1);
            for p in 2..=n {
                fuse.push(BlockParams::register(
                    store,
                    rng,
                    &format!("{prefix}.fuse{p}"),
                    d_model,
                    heads,
                    true,
                )?);
            }
            branches.push(BranchParams {
                lambda,
                compress_self,
                compress_cross,
                fuse,
            });
        }
        Ok(EncoderParams {
            branches,
            latent_len,
        })
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }
}

/// All stage outputs of one forward pass. `branches[n-1][p-1]` holds f_n^p;
/// the last entry of each branch is the final feature f_n.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub branches: Vec<Vec<NodeId>>,
}

impl EncoderOutput {
    /// Final features {f_1, ..., f_N}, each `L x D`.
    pub fn finals(&self) -> Vec<NodeId> {
        self.branches
            .iter()
            .map(|stages| *stages.last().expect("branch has stages"))
            .collect()
    }
}

/// Stage 1 of a branch: self-attention over the latents, then sparse
/// cross-attention with the long-term memory as keys/values. A `k` larger
/// than the memory is harmless; the mask degenerates to dense.
pub fn compress_stage(
    g: &mut Graph,
    store: &ParamStore,
    branch: &BranchParams,
    long_memory: NodeId,
    s: &SparsityConfig,
    key_valid: Option<&[bool]>,
) -> Result<NodeId> {
    if g.value(long_memory).rows() == 0 {
        return Err(MaltError::Contract("compress_stage: empty long-term memory".into()));
    }
    let lambda = g.param(store, &branch.lambda)?;
    let refined = attention_block(
        g,
        store,
        lambda,
        lambda,
        &branch.compress_self,
        &SparsityConfig::dense(),
        AttnMode::SelfAttn,
        None,
    )?;
    attention_block(
        g,
        store,
        refined,
        long_memory,
        &branch.compress_cross,
        s,
        AttnMode::CrossAttn,
        key_valid,
    )
}

/// One fusion stage: dense cross-attention with the previous branch's stage
/// output as queries and this branch's previous stage as keys/values.
pub fn fuse_stage(
    g: &mut Graph,
    store: &ParamStore,
    w: &BlockParams,
    f_prev_branch: NodeId,
    f_this_branch: NodeId,
) -> Result<NodeId> {
    attention_block(
        g,
        store,
        f_prev_branch,
        f_this_branch,
        w,
        &SparsityConfig::dense(),
        AttnMode::CrossAttn,
        None,
    )
}

/// Run all branches in order. Branch `n` executes `compress_stage` and then
/// `n - 1` fusion stages consuming branch `n-1`'s stage outputs. Shape law:
/// stage `p` of branch `n` has `L / 2^(n-p)` tokens, so every final feature
/// comes out `L x D`.
pub fn run_encoder(
    g: &mut Graph,
    store: &ParamStore,
    enc: &EncoderParams,
    long_memory: NodeId,
    s: &SparsityConfig,
    key_valid: Option<&[bool]>,
) -> Result<EncoderOutput> {
    let latent_len = enc.latent_len;
    let mut branches: Vec<Vec<NodeId>> = Vec::with_capacity(enc.branches.len());
    for (idx, branch) in enc.branches.iter().enumerate() {
        let n = idx + 1;
        let mut stages = Vec::with_capacity(n);
        let first = compress_stage(g, store, branch, long_memory, s, key_valid)?;
        debug_assert_eq!(g.value(first).rows(), latent_len >> (n - 1));
        stages.push(first);
        for (p, fuse_w) in (2..=n).zip(&branch.fuse) {
            let f_prev_branch = branches[idx - 1][p - 2];
            let f_this_branch = stages[p - 2];
            let fused = fuse_stage(g, store, fuse_w, f_prev_branch, f_this_branch)?;
            debug_assert_eq!(g.value(fused).rows(), latent_len >> (n - p));
            stages.push(fused);
        }
        debug_assert_eq!(g.value(*stages.last().unwrap()).rows(), latent_len);
        branches.push(stages);
    }
    Ok(EncoderOutput { branches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup(
        d: usize,
        heads: usize,
        latent_len: usize,
        n: usize,
        seed: u64,
    ) -> (ParamStore, EncoderParams, Rng) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let enc = EncoderParams::register(&mut store, &mut rng, d, heads, latent_len, n).unwrap();
        (store, enc, rng)
    }

    fn random_memory(rng: &mut Rng, rows: usize, d: usize) -> Tensor {
        Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn compress_output_shape_is_latent_by_model() {
        let (store, enc, mut rng) = setup(8, 2, 4, 1, 1);
        for m_l in [1usize, 3, 16] {
            let mut g = Graph::new();
            let ml = g.input(random_memory(&mut rng, m_l, 8));
            let s = SparsityConfig::top_k(2).unwrap();
            let out = compress_stage(&mut g, &store, &enc.branches[0], ml, &s, None).unwrap();
            assert_eq!(g.value(out).shape(), &[4, 8]);
        }
    }

    #[test]
    fn compress_sparse_identity_when_k_equals_memory() {
        let (store, enc, mut rng) = setup(8, 2, 4, 1, 2);
        let m_l = 4usize;
        let mem = random_memory(&mut rng, m_l, 8);
        let mut g = Graph::new();
        let ml = g.input(mem);
        let sparse = SparsityConfig::top_k(m_l).unwrap();
        let a = compress_stage(&mut g, &store, &enc.branches[0], ml, &sparse, None).unwrap();
        let b = compress_stage(
            &mut g,
            &store,
            &enc.branches[0],
            ml,
            &SparsityConfig::dense(),
            None,
        )
        .unwrap();
        assert_eq!(g.value(a), g.value(b), "must equal the dense pipeline exactly");
    }

    #[test]
    fn third_branch_latent_has_one_quarter_of_the_tokens() {
        // L = 32: lambda_3 is 32 / 2^2 = 8 tokens.
        let (store, _enc, _rng) = setup(8, 2, 32, 3, 3);
        assert_eq!(store.value("encoder.branch3.lambda").unwrap().shape(), &[8, 8]);
    }

    #[test]
    fn fuse_output_follows_query_length() {
        let (mut store, _enc, mut rng) = setup(8, 2, 4, 1, 4);
        let w = BlockParams::register(&mut store, &mut rng, "fuse_test", 8, 2, true).unwrap();
        let mut g = Graph::new();
        let q = g.input(random_memory(&mut rng, 6, 8));
        let kv = g.input(random_memory(&mut rng, 3, 8));
        let out = fuse_stage(&mut g, &store, &w, q, kv).unwrap();
        assert_eq!(g.value(out).shape(), &[6, 8]);
    }

    #[test]
    fn stage_token_counts_follow_the_shape_law() {
        // N = 3, L = 32: intermediates per branch are [32], [16, 32], [8, 16, 32].
        let (store, enc, mut rng) = setup(8, 2, 32, 3, 5);
        let mut g = Graph::new();
        let ml = g.input(random_memory(&mut rng, 10, 8));
        let out = run_encoder(
            &mut g,
            &store,
            &enc,
            ml,
            &SparsityConfig::top_k(4).unwrap(),
            None,
        )
        .unwrap();
        let token_counts: Vec<Vec<usize>> = out
            .branches
            .iter()
            .map(|stages| stages.iter().map(|&id| g.value(id).rows()).collect())
            .collect();
        assert_eq!(token_counts, vec![vec![32], vec![16, 32], vec![8, 16, 32]]);
        for f in out.finals() {
            assert_eq!(g.value(f).shape(), &[32, 8]);
        }
    }

    #[test]
    fn two_branch_fusion_produces_full_length_feature() {
        // N = 2, L = 32: fuse(f_1^1 [32 x D], f_2^1 [16 x D]) -> f_2 [32 x D].
        let (store, enc, mut rng) = setup(8, 2, 32, 2, 6);
        let mut g = Graph::new();
        let ml = g.input(random_memory(&mut rng, 12, 8));
        let out = run_encoder(
            &mut g,
            &store,
            &enc,
            ml,
            &SparsityConfig::top_k(6).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(g.value(out.branches[1][0]).rows(), 16);
        assert_eq!(g.value(out.branches[1][1]).rows(), 32);
    }

    #[test]
    fn single_branch_encoder_equals_compress_stage_bitwise() {
        let (store, enc, mut rng) = setup(8, 2, 8, 1, 7);
        let mem = random_memory(&mut rng, 9, 8);
        let s = SparsityConfig::top_k(3).unwrap();

        let mut g = Graph::new();
        let ml = g.input(mem.clone());
        let via_encoder = run_encoder(&mut g, &store, &enc, ml, &s, None).unwrap();

        let mut g2 = Graph::new();
        let ml2 = g2.input(mem);
        let direct = compress_stage(&mut g2, &store, &enc.branches[0], ml2, &s, None).unwrap();
        assert_eq!(g.value(via_encoder.finals()[0]), g2.value(direct));
    }

    #[test]
    fn indivisible_latent_length_is_a_config_error() {
        let mut rng = Rng::new(8);
        let mut store = ParamStore::new();
        let err = EncoderParams::register(&mut store, &mut rng, 8, 2, 6, 3).unwrap_err();
        assert!(matches!(err, MaltError::Config(_)));
    }

    #[test]
    fn every_latent_receives_gradient() {
        let (mut store, enc, mut rng) = setup(8, 2, 8, 3, 9);
        let mem = random_memory(&mut rng, 7, 8);
        let mut g = Graph::new();
        let ml = g.input(mem);
        let out = run_encoder(
            &mut g,
            &store,
            &enc,
            ml,
            &SparsityConfig::top_k(3).unwrap(),
            None,
        )
        .unwrap();
        // sum of squared entries of every final feature
        let mut loss = None;
        for f in out.finals() {
            let sq = g.mul(f, f).unwrap();
            let s = g.sum_all(sq);
            loss = Some(match loss {
                None => s,
                Some(acc) => g.add(acc, s).unwrap(),
            });
        }
        store.zero_grads();
        g.backward(loss.unwrap(), &mut store).unwrap();
        for n in 1..=3 {
            let grad = store.grad(&format!("encoder.branch{n}.lambda")).unwrap();
            let norm: f64 = grad.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "lambda_{n} received no gradient");
        }
    }
}
