//! `malt gradcheck`: finite-difference verification of the analytic
//! gradients, block-level and end-to-end, with a per-parameter error table.
//! Nonzero exit on any tolerance breach.

use malt_core::attention::{attention_block, AttnMode, BlockParams, SparsityConfig};
use malt_core::data::generate_dataset;
use malt_core::gradcheck::{check_sampled, CheckRow};
use malt_core::model::parameter_count;
use malt_core::{Graph, Malt, MaltError, ModelVariant, ParamStore, Result, Rng, Tensor};

use crate::config::RunConfig;

const PARAM_BUDGET: usize = 50_000;

pub fn run(config: &RunConfig, samples: usize, seed: u64, tolerance: f64) -> Result<()> {
    // block-level suite on a standalone attention block
    let mut rng = Rng::new(seed);
    let mut block_store = ParamStore::new();
    let block = BlockParams::register(&mut block_store, &mut rng, "block", 8, 2, true)?;
    let x1 = random_matrix(&mut rng, 3, 8);
    let x2 = random_matrix(&mut rng, 6, 8);
    let sparsity = SparsityConfig::top_k(3)?;
    let block_rows = check_sampled(&mut block_store, samples.min(16), 1e-5, seed, &{
        let (x1, x2, block, sparsity) = (x1.clone(), x2.clone(), block.clone(), sparsity);
        move |g: &mut Graph, store: &ParamStore| {
            let a = g.input(x1.clone());
            let b = g.input(x2.clone());
            let out = attention_block(g, store, a, b, &block, &sparsity, AttnMode::CrossAttn, None)?;
            let sq = g.mul(out, out)?;
            Ok(g.sum_all(sq))
        }
    })?;

    // end-to-end suite on the full model loss
    let mut store = ParamStore::new();
    let mut init_rng = Rng::new(config.model.seed);
    let model = Malt::init(
        config.model.clone(),
        ModelVariant::default(),
        &mut store,
        &mut init_rng,
    )?;
    let total = parameter_count(&store).total;
    if total >= PARAM_BUDGET {
        return Err(MaltError::Config(format!(
            "gradcheck needs a tiny config: {total} parameters >= budget {PARAM_BUDGET}"
        )));
    }
    let streams = generate_dataset(&config.data, 1)?;
    let stream = streams.into_iter().next().unwrap();
    let t = stream.len() - 1;
    let model_rows = check_sampled(&mut store, samples, 1e-5, seed ^ 0x9D, &{
        let model = model.clone();
        move |g: &mut Graph, store: &ParamStore| {
            let (nodes, _) = model.loss_at(g, store, &stream.features, &stream.labels, t)?;
            Ok(nodes.total)
        }
    })?;

    let mut failures = 0;
    println!("{:<44} {:>6}  {:>12}  result", "parameter", "index", "rel error");
    for (suite, rows) in [("block", &block_rows), ("model", &model_rows)] {
        for row in rows {
            let ok = row.rel_error < tolerance;
            if !ok {
                failures += 1;
            }
            println!(
                "{:<44} {:>6}  {:>12.3e}  {}",
                format!("{suite}:{}", row.name),
                row.index,
                row.rel_error,
                if ok { "pass" } else { "FAIL" }
            );
        }
    }
    let worst = worst_of(&block_rows).max(worst_of(&model_rows));
    println!(
        "worst relative error {worst:.3e} over {} checks (tolerance {tolerance:.0e})",
        block_rows.len() + model_rows.len()
    );
    if failures > 0 {
        return Err(MaltError::Contract(format!(
            "gradcheck: {failures} parameter(s) breached tolerance {tolerance:e}"
        )));
    }
    println!("gradcheck passed");
    Ok(())
}

fn worst_of(rows: &[CheckRow]) -> f64 {
    rows.iter().map(|r| r.rel_error).fold(0.0, f64::max)
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.normal()).collect(),
    )
    .unwrap()
}
