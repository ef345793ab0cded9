//! Trains pFLFE on the built-in five-client heterogeneous benchmark and
//! prints the per-round Dice table.
//!
//! ```bash
//! cargo run --release -p pflfe --example train_pflfe
//! ```

use pflfe::data::{gen_client_dataset, hetero5};
use pflfe::fed::{derive_seed, init_federation, Protocol, RoundPlan, TrainParams};
use pflfe::segnet::{ModelConfig, PartitionBoundary, SegNet};

fn main() -> pflfe::Result<()> {
    let seed = 17u64;
    let rounds = 10;
    let cfg = ModelConfig::benchmark_default();
    let net = SegNet::new(cfg.clone())?;

    let datasets = hetero5(64, 64)
        .iter()
        .map(|c| gen_client_dataset(c, cfg.image_side, derive_seed(seed, &[100, c.client_id as u64])))
        .collect::<pflfe::Result<Vec<_>>>()?;

    let plan = RoundPlan {
        protocol: Protocol::Pflfe,
        lfe_epochs: 1,
        sup_epochs: 1,
        total_rounds: rounds,
        boundary: PartitionBoundary::AllDecoder,
    };
    let mut fed = init_federation(net, plan, TrainParams::default(), datasets, seed)?;

    println!("round  dice_acli  dice_aimg  vdice   lfe_loss  emb_var   cum_MB");
    let start = std::time::Instant::now();
    for _ in 0..rounds {
        let (rec, lfe) = fed.run_round()?;
        let mean_lfe = lfe.iter().map(|s| s.mean_loss).sum::<f64>() / lfe.len().max(1) as f64;
        let mean_var = lfe.iter().map(|s| s.embedding_variance).sum::<f64>() / lfe.len().max(1) as f64;
        println!(
            "{:>5}  {:>9.4}  {:>9.4}  {:>6.4}  {:>8.4}  {:>8.5}  {:>7.3}",
            rec.round,
            rec.dice_acli,
            rec.dice_aimg,
            rec.vdice_acli,
            mean_lfe,
            mean_var,
            rec.comm_cumulative_bytes as f64 / 1e6
        );
    }
    println!("elapsed: {:.1?}", start.elapsed());
    Ok(())
}
