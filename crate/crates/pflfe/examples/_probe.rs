//! scratch diagnostics (removed before release)

use pflfe::data::{gen_client_dataset, hetero5};
use pflfe::fed::{derive_seed, init_federation, Protocol, RoundPlan, TrainParams};
use pflfe::segnet::{ModelConfig, PartitionBoundary, SegNet};

fn run(
    protocol: Protocol,
    seed: u64,
    rounds: usize,
    lr: f64,
    momentum: f64,
) -> pflfe::Result<(Vec<f64>, f64)> {
    let cfg = ModelConfig::benchmark_default();
    let net = SegNet::new(cfg.clone())?;
    let datasets = hetero5(64, 64)
        .iter()
        .map(|c| gen_client_dataset(c, cfg.image_side, derive_seed(seed, &[100, c.client_id as u64])))
        .collect::<pflfe::Result<Vec<_>>>()?;
    let plan = RoundPlan {
        protocol,
        lfe_epochs: std::env::var("LFE_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(1),
        sup_epochs: std::env::var("SUP_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(1),
        total_rounds: rounds,
        boundary: PartitionBoundary::AllDecoder,
    };
    let mut train = TrainParams::default();
    train.learning_rate = lr;
    train.momentum = momentum;
    if std::env::var("BENCH_AUGS").is_ok() {
        train.aug_a = pflfe::data::AugmentationSpec::bench_a();
        train.aug_a_prime = pflfe::data::AugmentationSpec::bench_a_prime();
    }
    if let Ok(v) = std::env::var("LFE_LR") {
        train.lfe_lr_scale = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("EMA") {
        train.ema_decay = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("SUP_EPOCHS") {
        // applied via plan below
        std::env::set_var("SUP_EPOCHS_PARSED", v);
    }
    let mut fed = init_federation(net, plan, train, datasets, seed)?;
    let out = fed.run()?;
    if let Some(m) = &out.cross_dice {
        let n = m.len();
        let own: f64 = (0..n).map(|i| m[i][i]).sum::<f64>() / n as f64;
        let cross: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j])
            .sum::<f64>()
            / (n * (n - 1)) as f64;
        println!("  cross matrix own {:.4} cross {:.4} deficit {:.4}", own, cross, own - cross);
    }
    let curve: Vec<f64> = out.records.iter().map(|r| r.dice_acli).collect();
    let drift = fed
        .feature_samples(200)
        .and_then(|s| pflfe::eval::kl_feature_divergence(&s, pflfe::eval::KlMode::Drift))
        .unwrap_or(f64::NAN);
    Ok((curve, drift))
}

fn main() -> pflfe::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let momentum: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let rounds: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(15);
    let seeds: Vec<u64> = args
        .get(4)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![17]);
    let protos: Vec<Protocol> = std::env::var("PROTOS")
        .unwrap_or_else(|_| "pflfe,decoupled_no_lfe,fc_pflfe,fedavg,local_only".into())
        .split(',')
        .map(|s| s.parse().unwrap())
        .collect();

    use rayon::prelude::*;
    let jobs: Vec<(Protocol, u64)> = protos
        .iter()
        .flat_map(|p| seeds.iter().map(move |s| (*p, *s)))
        .collect();
    let results: Vec<(Protocol, u64, Vec<f64>, f64)> = jobs
        .par_iter()
        .map(|(p, s)| {
            let (curve, drift) = run(*p, *s, rounds, lr, momentum).unwrap();
            (*p, *s, curve, drift)
        })
        .collect();
    for p in &protos {
        let rows: Vec<_> = results.iter().filter(|(rp, ..)| rp == p).collect();
        let finals: Vec<f64> = rows.iter().map(|(_, _, c, _)| *c.last().unwrap()).collect();
        let drifts: Vec<f64> = rows.iter().map(|(_, _, _, d)| *d).collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        println!(
            "{:<18} mean_final {:.4} finals {:?} drifts {:?}",
            p.as_str(),
            mean,
            finals.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            drifts.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
    Ok(())
}
