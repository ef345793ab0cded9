//! scratch diagnostics (removed before release)

use pflfe::data::{augment_pair, gen_client_dataset, hetero5, AugmentationSpec};
use pflfe::fed::derive_seed;
use pflfe::objectives::lfe_loss_graph;
use pflfe::segnet::{ModelConfig, SegNet, Segment};
use pflfe::tensor::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pflfe::Result<()> {
    let cfg = ModelConfig::benchmark_default();
    let net = SegNet::new(cfg.clone())?;
    let params = net.init_params(derive_seed(17, &[1]));
    let (train, _) = gen_client_dataset(&hetero5(64, 64)[1], 32, 99)?;
    let a = AugmentationSpec::bench_a();
    let ap = AugmentationSpec::bench_a_prime();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut enc_norm = 0.0;
    let mut proj_norm = 0.0;
    let mut loss_sum = 0.0;
    let n = 32;
    for i in 0..n {
        let sample = &train[i % train.len()];
        let (v, vp) = augment_pair(sample, &a, &ap, &mut rng);
        let t_v = net.forward_project(&params, &v)?;
        let t_vp = net.forward_project(&params, &vp)?;
        let mut g = Graph::new();
        let bound = net.bind_segments(&mut g, &params, &[Segment::Encoder, Segment::Projector]);
        let o_v = net.project_from(&mut g, &params, &bound, &v)?;
        let o_vp = net.project_from(&mut g, &params, &bound, &vp)?;
        let l = lfe_loss_graph(&mut g, o_v, &t_vp)?;
        let lp = lfe_loss_graph(&mut g, o_vp, &t_v)?;
        let total = g.add(l, lp)?;
        g.backward(total)?;
        loss_sum += g.data(total)[0];
        for (idx, e) in params.entries().iter().enumerate() {
            if let Some(id) = bound.ids[idx] {
                let norm: f64 = g.grad(id).iter().map(|x| x * x).sum::<f64>();
                match e.segment {
                    Segment::Encoder => enc_norm += norm,
                    Segment::Projector => proj_norm += norm,
                    _ => {}
                }
            }
        }
    }
    println!(
        "mean lfe loss {:.5}  enc grad rms {:.6}  proj grad rms {:.6}",
        loss_sum / n as f64,
        (enc_norm / n as f64).sqrt(),
        (proj_norm / n as f64).sqrt()
    );

    // how much do the two stages move the encoder per round?
    use pflfe::fed::{init_federation, Protocol, RoundPlan, TrainParams};
    let datasets = hetero5(64, 64)
        .iter()
        .map(|c| gen_client_dataset(c, 32, derive_seed(17, &[100, c.client_id as u64])))
        .collect::<pflfe::Result<Vec<_>>>()?;
    let plan = RoundPlan {
        protocol: Protocol::Pflfe,
        lfe_epochs: 1,
        sup_epochs: 1,
        total_rounds: 1,
        boundary: pflfe::segnet::PartitionBoundary::AllDecoder,
    };
    let mut train_params = TrainParams::default();
    train_params.learning_rate = 0.1;
    train_params.aug_a = AugmentationSpec::bench_a();
    train_params.aug_a_prime = AugmentationSpec::bench_a_prime();
    train_params.lfe_lr_scale = 0.3;
    let mut fed = init_federation(net.clone(), plan, train_params, datasets, 17)?;
    for round in 0..6 {
        let enc_idx = fed.clients[0].params.segment_indices(Segment::Encoder);
        let snap: Vec<f64> = enc_idx
            .iter()
            .flat_map(|&i| fed.clients[0].params.entries()[i].tensor.data().to_vec())
            .collect();
        let (rec, lfe) = fed.run_round()?;
        let now: Vec<f64> = enc_idx
            .iter()
            .flat_map(|&i| fed.clients[0].params.entries()[i].tensor.data().to_vec())
            .collect();
        let delta: f64 = snap
            .iter()
            .zip(&now)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        println!(
            "round {}: dice {:.4}  lfe_loss {:.5}  emb_var {:.5}  enc delta {:.4}",
            round + 1,
            rec.dice_acli,
            lfe[0].mean_loss,
            lfe[0].embedding_variance,
            delta
        );
    }
    Ok(())
}
