// Scratch harness for sizing the desk-scale run. Not part of the deliverable.

use std::time::Instant;

use malt_core::data::{generate_dataset, split_streams, StreamSpec};
use malt_core::eval::{accuracy, evaluate};
use malt_core::graph::Graph;
use malt_core::model::{Malt, MaltConfig, ModelVariant};
use malt_core::params::ParamStore;
use malt_core::rng::Rng;
use malt_core::train::{train_epochs, TrainerState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("timing");

    let config = MaltConfig::desk_default();
    let spec = StreamSpec::desk_default();

    match mode {
        "timing" => timing(&config),
        "learn" => {
            let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
            let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
            let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
            let sparse: bool = args.get(5).map(|s| s != "dense").unwrap_or(true);
            let mut cfg = config.clone();
            cfg.lr = lr;
            learn(&cfg, &spec, epochs, seed, sparse);
        }
        "gradnorms" => gradnorms(&config, &spec),
        "nsweep" => nsweep(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn timing(config: &MaltConfig) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(1);
    let model = Malt::init(config.clone(), ModelVariant::default(), &mut store, &mut rng).unwrap();
    let spec = StreamSpec::desk_default();
    let streams = generate_dataset(&spec, 1).unwrap();
    let stream = &streams[0];

    // forward only
    let start = Instant::now();
    let reps = 50;
    for i in 0..reps {
        let mut g = Graph::new();
        let _ = model
            .forward_at(&mut g, &store, &stream.features, 200 + i)
            .unwrap();
    }
    let fwd = start.elapsed().as_secs_f64() / reps as f64;
    println!("forward: {:.2} ms", fwd * 1e3);

    // forward + loss + backward
    let start = Instant::now();
    for i in 0..reps {
        let mut g = Graph::new();
        let (nodes, _) = model
            .loss_at(&mut g, &store, &stream.features, &stream.labels, 200 + i)
            .unwrap();
        g.backward(nodes.total, &mut store).unwrap();
    }
    let fwdbwd = start.elapsed().as_secs_f64() / reps as f64;
    println!("forward+backward: {:.2} ms", fwdbwd * 1e3);
    println!(
        "one epoch ({} steps x {} batch): {:.1} s",
        config.steps_per_epoch,
        config.batch_size,
        fwdbwd * (config.steps_per_epoch * config.batch_size) as f64
    );
}

fn learn(config: &MaltConfig, spec: &StreamSpec, epochs: usize, seed: u64, sparse: bool) {
    let mut cfg = config.clone();
    cfg.seed = seed;
    cfg.epochs = epochs;
    let all = generate_dataset(spec, 24).unwrap();
    let (train, eval_set) = split_streams(all, 2.0 / 3.0, spec.seed).unwrap();
    println!(
        "train streams: {}, eval streams: {}, lr {}, sparse {}",
        train.len(),
        eval_set.len(),
        cfg.lr,
        sparse
    );

    let variant = ModelVariant {
        sparse,
        ..ModelVariant::default()
    };
    let mut store = ParamStore::new();
    let mut rng = Rng::new(cfg.seed);
    let model = Malt::init(cfg.clone(), variant, &mut store, &mut rng).unwrap();
    let mut state = TrainerState::fresh(cfg.seed ^ 0xABCD);

    let t0 = Instant::now();
    for epoch in 0..epochs {
        let hist = train_epochs(&model, &mut store, &train, &mut state, 1, |_| {}).unwrap();
        let rec = &hist[0];
        let eval_map = if (epoch + 1) % 3 == 0 || epoch + 1 == epochs {
            let report = evaluate(&model, &store, &eval_set, 16).unwrap();
            format!("eval mAP(str16) {:.3}", report.mean_ap)
        } else {
            String::new()
        };
        println!(
            "epoch {:2}  total {:.4}  main {:.4}  batch-acc {:.3}  {}  [{:.0} s]",
            rec.epoch,
            rec.mean_total,
            rec.mean_main,
            rec.batch_accuracy,
            eval_map,
            t0.elapsed().as_secs_f64()
        );
    }
    let train_acc = accuracy(&model, &store, &train, 7).unwrap();
    println!("train accuracy (stride 7): {train_acc:.4}");
    let t_eval = Instant::now();
    let report = evaluate(&model, &store, &eval_set, 4).unwrap();
    println!(
        "eval mAP(str4) {:.4}  mcAP {:.4}  [{:.0} s eval]",
        report.mean_ap,
        report.mean_cap,
        t_eval.elapsed().as_secs_f64()
    );
    println!("total {:.0} s", t0.elapsed().as_secs_f64());
}

fn mini_config(branches: usize, seed: u64) -> MaltConfig {
    MaltConfig {
        m_s: 8,
        m_l: 64,
        d_in: 16,
        d_model: 32,
        heads: 4,
        latent_len: 8,
        branches,
        top_k: 16,
        classes: 6,
        alpha: 1.0,
        beta: 0.4,
        lr: 3e-3,
        epochs: 24,
        batch_size: 6,
        steps_per_epoch: 80,
        seed,
    }
}

fn mini_spec() -> StreamSpec {
    StreamSpec {
        classes: 6,
        d_in: 16,
        segments_per_action: 3,
        segment_len: (8, 14),
        gap_len: (6, 12),
        sigma: 0.3,
        stream_len: 512,
        seed: 97,
    }
}

fn run_mini(branches: usize, seed: u64, streams: &(Vec<malt_core::LabeledStream>, Vec<malt_core::LabeledStream>)) -> f64 {
    let cfg = mini_config(branches, seed);
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let model = Malt::init(cfg.clone(), ModelVariant::default(), &mut store, &mut rng).unwrap();
    let mut state = TrainerState::fresh(seed ^ 0x5EED);
    train_epochs(&model, &mut store, &streams.0, &mut state, cfg.epochs, |_| {}).unwrap();
    evaluate(&model, &store, &streams.1, 1).unwrap().mean_ap
}

fn nsweep() {
    let spec = mini_spec();
    let all = generate_dataset(&spec, 10).unwrap();
    let split = split_streams(all, 0.6, spec.seed).unwrap();
    let mut diffs = Vec::new();
    let t0 = Instant::now();
    for seed in 1..=5u64 {
        let map1 = run_mini(1, seed, &split);
        let map2 = run_mini(2, seed, &split);
        println!(
            "seed {seed}: N=1 mAP {map1:.4}  N=2 mAP {map2:.4}  diff {:+.4}  [{:.0} s]",
            map2 - map1,
            t0.elapsed().as_secs_f64()
        );
        diffs.push(map2 - map1);
    }
    diffs.sort_by(|a, b| a.total_cmp(b));
    println!("median diff: {:+.4}", diffs[2]);
}

fn gradnorms(config: &MaltConfig, spec: &StreamSpec) {
    let streams = generate_dataset(spec, 2).unwrap();
    let mut store = ParamStore::new();
    let mut rng = Rng::new(1);
    let model = Malt::init(config.clone(), ModelVariant::default(), &mut store, &mut rng).unwrap();

    // a few steps so moments warm up, then inspect per-module gradient norms
    let mut state = TrainerState::fresh(3);
    train_epochs(&model, &mut store, &streams, &mut state, 1, |_| {}).unwrap();

    store.zero_grads();
    let stream = &streams[0];
    let mut g = Graph::new();
    let (nodes, _) = model
        .loss_at(&mut g, &store, &stream.features, &stream.labels, 600)
        .unwrap();
    g.backward(nodes.total, &mut store).unwrap();

    let mut by_module: std::collections::BTreeMap<String, (f64, f64)> = Default::default();
    for (name, entry) in store.iter() {
        let module: String = name.split('.').take(2).collect::<Vec<_>>().join(".");
        let gn: f64 = entry.grad.data().iter().map(|v| v * v).sum();
        let vn: f64 = entry.value.data().iter().map(|v| v * v).sum();
        let e = by_module.entry(module).or_insert((0.0, 0.0));
        e.0 += gn;
        e.1 += vn;
    }
    for (module, (gn, vn)) in by_module {
        println!("{module:40} grad {:>12.6e}  value {:>12.4e}", gn.sqrt(), vn.sqrt());
    }
}
