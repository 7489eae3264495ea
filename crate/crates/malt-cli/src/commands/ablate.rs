//! `malt ablate`: train a set of architecture variants with shared seeds and
//! report a comparison table (train accuracy, eval mAP/mcAP, parameters).

use std::path::Path;

use malt_core::data::{generate_dataset, split_streams, LabeledStream};
use malt_core::eval::{accuracy, evaluate};
use malt_core::model::{parameter_count, FusionKind};
use malt_core::train::train_epochs;
use malt_core::{Malt, MaltConfig, MaltError, ModelVariant, ParamStore, Result, Rng, TrainerState};

use crate::commands::train::SAMPLER_SEED_XOR;
use crate::config::RunConfig;
use crate::datadir::load_split;

#[derive(Debug, Clone)]
pub struct VariantSpec {
    pub name: String,
    pub config: MaltConfig,
    pub variant: ModelVariant,
}

/// Parse one variant token. Accepted: `full`, `no-sparse`, `no-aux`,
/// `no-recurrent` / `cascade`, `add`, `n=<int>`, `k=<int>`.
pub fn parse_variant(token: &str, base: &MaltConfig) -> Result<VariantSpec> {
    let mut config = base.clone();
    let mut variant = ModelVariant::default();
    match token {
        "full" => {}
        "no-sparse" => variant.sparse = false,
        "no-aux" => config.beta = 0.0,
        "no-recurrent" | "cascade" => variant.fusion = FusionKind::Cascaded,
        "add" => variant.fusion = FusionKind::Add,
        _ => {
            if let Some(n) = token.strip_prefix("n=") {
                config.branches = n.parse().map_err(|_| {
                    MaltError::Config(format!("bad branch count in variant {token:?}"))
                })?;
            } else if let Some(k) = token.strip_prefix("k=") {
                config.top_k = k.parse().map_err(|_| {
                    MaltError::Config(format!("bad top-k in variant {token:?}"))
                })?;
            } else {
                return Err(MaltError::Config(format!("unknown variant {token:?}")));
            }
        }
    }
    config.validate()?;
    Ok(VariantSpec {
        name: token.to_string(),
        config,
        variant,
    })
}

pub const DEFAULT_VARIANTS: &str = "full,no-sparse,no-aux,no-recurrent,add,n=1,n=2";

#[derive(Debug, serde::Serialize)]
pub struct VariantResult {
    pub name: String,
    pub parameters: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub eval_map: f64,
    pub eval_mcap: f64,
}

pub fn run(
    config: &RunConfig,
    variants: &str,
    data_dir: Option<&Path>,
    out_dir: &Path,
    eval_stride: usize,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let specs: Vec<VariantSpec> = variants
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| parse_variant(t, &config.model))
        .collect::<Result<_>>()?;
    if specs.is_empty() {
        return Err(MaltError::Config("ablate: empty variant list".into()));
    }

    let (train_streams, eval_streams) = shared_data(config, data_dir)?;
    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        let result = run_variant(spec, &train_streams, &eval_streams, eval_stride)?;
        println!(
            "{:<14} params {:>8}  loss {:>7.4}  train-acc {:>6.3}  mAP {:>6.4}  mcAP {:>6.4}",
            result.name,
            result.parameters,
            result.final_loss,
            result.train_accuracy,
            result.eval_map,
            result.eval_mcap
        );
        results.push(result);
    }

    let k_variants: Vec<&VariantResult> = results
        .iter()
        .filter(|r| r.name.starts_with("k="))
        .collect();
    if k_variants.len() > 1 {
        let best = k_variants
            .iter()
            .max_by(|a, b| a.eval_map.total_cmp(&b.eval_map))
            .unwrap();
        println!("best k by eval mAP: {} ({:.4})", best.name, best.eval_map);
    }

    let json = serde_json::to_string_pretty(&results)
        .map_err(|e| MaltError::Format(format!("ablation serialization: {e}")))?;
    let out_file = out_dir.join("ablation.json");
    std::fs::write(&out_file, json)?;
    println!("table written to {}", out_file.display());
    Ok(())
}

fn shared_data(
    config: &RunConfig,
    data_dir: Option<&Path>,
) -> Result<(Vec<LabeledStream>, Vec<LabeledStream>)> {
    match data_dir {
        Some(dir) => {
            let (train, eval, _) = load_split(dir)?;
            let eval = eval.ok_or_else(|| {
                MaltError::Data(format!("{} has no eval/ split", dir.display()))
            })?;
            Ok((train, eval))
        }
        None => {
            let streams = generate_dataset(&config.data, config.dataset.streams)?;
            split_streams(
                streams,
                config.dataset.train_fraction,
                config.dataset.split_seed,
            )
        }
    }
}

fn run_variant(
    spec: &VariantSpec,
    train_streams: &[LabeledStream],
    eval_streams: &[LabeledStream],
    eval_stride: usize,
) -> Result<VariantResult> {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(spec.config.seed);
    let model = Malt::init(spec.config.clone(), spec.variant, &mut store, &mut rng)?;
    let mut state = TrainerState::fresh(spec.config.seed ^ SAMPLER_SEED_XOR);
    let history = train_epochs(
        &model,
        &mut store,
        train_streams,
        &mut state,
        spec.config.epochs,
        |_| {},
    )?;
    let final_loss = history.last().map(|r| r.mean_total).unwrap_or(f64::NAN);
    let train_accuracy = accuracy(&model, &store, train_streams, 7)?;
    let report = evaluate(&model, &store, eval_streams, eval_stride)?;
    Ok(VariantResult {
        name: spec.name.clone(),
        parameters: parameter_count(&store).total,
        final_loss,
        train_accuracy,
        eval_map: report.mean_ap,
        eval_mcap: report.mean_cap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        let base = MaltConfig::desk_default();
        assert!(parse_variant("full", &base).is_ok());
        let no_aux = parse_variant("no-aux", &base).unwrap();
        assert_eq!(no_aux.config.beta, 0.0);
        let cascade = parse_variant("cascade", &base).unwrap();
        assert_eq!(cascade.variant.fusion, FusionKind::Cascaded);
        let add = parse_variant("add", &base).unwrap();
        assert_eq!(add.variant.fusion, FusionKind::Add);
        let n3 = parse_variant("n=4", &base).unwrap();
        assert_eq!(n3.config.branches, 4);
        let k8 = parse_variant("k=8", &base).unwrap();
        assert_eq!(k8.config.top_k, 8);
        assert!(parse_variant("bogus", &base).is_err());
        // n=5 needs latent_len divisible by 16
        assert!(parse_variant("n=5", &base).is_err());
    }
}
