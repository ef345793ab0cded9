//! Loss functions for both training stages, and the EMA target update.
//!
//! Stage 1 (feature enhancement) uses the normalized-MSE loss between online
//! and target embeddings of two augmented views, summed symmetrically. Stage
//! 2 (supervised) uses soft Dice plus cross-entropy, unweighted. Each loss
//! exists twice: a pure evaluation on tensors and a tape builder used in
//! training; the two are cross-checked in tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segnet::ParameterSet;
use crate::tensor::{Graph, Tensor, ValueId};

/// Smoothing constant in the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;
/// Probability floor inside the cross-entropy log.
pub const CE_CLAMP: f64 = 1e-12;

/// EMA decay for the target network; tau is constant across a run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EmaConfig {
    pub decay: f64,
}

impl EmaConfig {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!(
                "EMA decay must lie in (0,1), got {decay}"
            )));
        }
        Ok(EmaConfig { decay })
    }
}

/// One online/target embedding pair for the feature-enhancement loss. The
/// target side never receives gradients.
#[derive(Clone, Debug)]
pub struct LfePair {
    pub online: Tensor,
    pub target: Tensor,
}

fn check_embeddings(op: &str, online: &Tensor, target: &Tensor) -> Result<(f64, f64)> {
    if online.shape() != target.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", online.shape(), target.shape()),
        ));
    }
    let no = online.norm();
    let nt = target.norm();
    if no < 1e-12 {
        return Err(Error::DegenerateEmbedding(no));
    }
    if nt < 1e-12 {
        return Err(Error::DegenerateEmbedding(nt));
    }
    Ok((no, nt))
}

/// `|| normalize(online) - normalize(target) ||^2
///   = 2 - 2 <online, target> / (||online|| ||target||)`.
pub fn lfe_loss(pair: &LfePair) -> Result<f64> {
    let (no, nt) = check_embeddings("lfe_loss", &pair.online, &pair.target)?;
    let dot: f64 = pair
        .online
        .data()
        .iter()
        .zip(pair.target.data())
        .map(|(a, b)| a * b)
        .sum();
    Ok(2.0 - 2.0 * dot / (no * nt))
}

/// Symmetric total: L(online(V), target(V')) + L(online(V'), target(V)).
pub fn lfe_total_loss(
    v_online: &Tensor,
    v_target: &Tensor,
    vp_online: &Tensor,
    vp_target: &Tensor,
) -> Result<f64> {
    let l = lfe_loss(&LfePair {
        online: v_online.clone(),
        target: vp_target.clone(),
    })?;
    let lp = lfe_loss(&LfePair {
        online: vp_online.clone(),
        target: v_target.clone(),
    })?;
    Ok(l + lp)
}

/// Tape version of [`lfe_loss`]: the online embedding lives on the graph, the
/// target embedding enters as a constant leaf, so gradients stop there.
pub fn lfe_loss_graph(g: &mut Graph, online: ValueId, target: &Tensor) -> Result<ValueId> {
    let nt = target.norm();
    if nt < 1e-12 {
        return Err(Error::DegenerateEmbedding(nt));
    }
    let t = g.input(target);
    let no = g.l2_normalize(online)?;
    let tn = g.l2_normalize(t)?;
    let d = g.sub(no, tn)?;
    let sq = g.mul(d, d)?;
    g.sum(sq)
}

/// Soft Dice loss over a foreground probability map and a binary mask:
/// `1 - (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps)` with eps = 1.
pub fn dice_loss(probs: &Tensor, mask: &Tensor) -> Result<f64> {
    if probs.shape() != mask.shape() {
        return Err(Error::shape(
            "dice_loss",
            format!("{:?} vs {:?}", probs.shape(), mask.shape()),
        ));
    }
    let inter: f64 = probs.data().iter().zip(mask.data()).map(|(p, y)| p * y).sum();
    let psum: f64 = probs.data().iter().sum();
    let ysum: f64 = mask.data().iter().sum();
    Ok(1.0 - (2.0 * inter + DICE_SMOOTH) / (psum + ysum + DICE_SMOOTH))
}

/// Mean over pixels of `-ln p(true class)`, with the probability clamped to
/// at least 1e-12. `probs` is (C,H,W); `mask` is (H,W) of class indices.
pub fn ce_loss(probs: &Tensor, mask: &Tensor) -> Result<f64> {
    let ps = probs.shape();
    let ms = mask.shape();
    if ps.len() != 3 || ms.len() != 2 || ps[1] != ms[0] || ps[2] != ms[1] {
        return Err(Error::shape(
            "ce_loss",
            format!("probs {:?} vs mask {:?}", ps, ms),
        ));
    }
    let (c, hw) = (ps[0], ps[1] * ps[2]);
    let mut total = 0.0;
    for p in 0..hw {
        let cls = mask.data()[p] as usize;
        if cls >= c {
            return Err(Error::Data(format!(
                "mask label {cls} out of range for {c} classes"
            )));
        }
        total -= probs.data()[cls * hw + p].max(CE_CLAMP).ln();
    }
    Ok(total / hw as f64)
}

/// Stage-2 loss: Dice + cross-entropy, unweighted. Dice is computed per
/// foreground class and averaged.
pub fn supervised_loss(probs: &Tensor, mask: &Tensor) -> Result<f64> {
    let ps = probs.shape();
    if ps.len() != 3 {
        return Err(Error::shape("supervised_loss", format!("probs {:?}", ps)));
    }
    let (c, h, w) = (ps[0], ps[1], ps[2]);
    let hw = h * w;
    let mut dice_sum = 0.0;
    for cls in 1..c {
        let p = Tensor::new(vec![h, w], probs.data()[cls * hw..(cls + 1) * hw].to_vec())?;
        let y = Tensor::new(
            vec![h, w],
            mask.data()
                .iter()
                .map(|&m| if m as usize == cls { 1.0 } else { 0.0 })
                .collect(),
        )?;
        dice_sum += dice_loss(&p, &y)?;
    }
    Ok(dice_sum / (c - 1) as f64 + ce_loss(probs, mask)?)
}

/// One-hot encoding of a class-index mask, (C,H,W).
pub fn one_hot(mask: &Tensor, num_classes: usize) -> Result<Tensor> {
    let ms = mask.shape();
    if ms.len() != 2 {
        return Err(Error::shape("one_hot", format!("mask {:?}", ms)));
    }
    let hw = ms[0] * ms[1];
    let mut data = vec![0.0; num_classes * hw];
    for (p, &m) in mask.data().iter().enumerate() {
        let cls = m as usize;
        if cls >= num_classes {
            return Err(Error::Data(format!(
                "mask label {cls} out of range for {num_classes} classes"
            )));
        }
        data[cls * hw + p] = 1.0;
    }
    Tensor::new(vec![num_classes, ms[0], ms[1]], data)
}

/// Tape version of [`supervised_loss`] over the (C,H,W) probability value.
pub fn supervised_loss_graph(g: &mut Graph, probs: ValueId, mask: &Tensor) -> Result<ValueId> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(
            "supervised_loss_graph",
            format!("probs {:?}", shape),
        ));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let hw = h * w;
    let onehot = one_hot(mask, c)?;

    // Per-foreground-class soft Dice, averaged.
    let mut dice_terms: Option<ValueId> = None;
    for cls in 1..c {
        // channel selector: 1 everywhere on channel cls
        let mut sel = vec![0.0; c * hw];
        sel[cls * hw..(cls + 1) * hw].fill(1.0);
        let sel = g.input_parts(vec![c, h, w], sel);
        let y = g.input(&onehot);

        let py = g.mul(probs, y)?;
        let ysel = g.mul(py, sel)?; // p*y restricted to channel cls
        let inter = g.sum(ysel)?;
        let psel = g.mul(probs, sel)?;
        let psum = g.sum(psel)?;
        let ysum: f64 = onehot.data()[cls * hw..(cls + 1) * hw].iter().sum();

        let num = g.scale(inter, 2.0)?;
        let num = g.offset(num, DICE_SMOOTH)?;
        let den = g.offset(psum, ysum + DICE_SMOOTH)?;
        let ratio = g.div(num, den)?;
        let neg = g.scale(ratio, -1.0)?;
        let term = g.offset(neg, 1.0)?;
        dice_terms = Some(match dice_terms {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let dice = g.scale(dice_terms.expect("num_classes >= 2"), 1.0 / (c - 1) as f64)?;

    // Cross-entropy: -(1/HW) sum(onehot * ln(max(p, clamp)))
    let y = g.input(&onehot);
    let logp = g.log_clamped(probs, CE_CLAMP)?;
    let sel = g.mul(y, logp)?;
    let s = g.sum(sel)?;
    let ce = g.scale(s, -1.0 / hw as f64)?;

    g.add(dice, ce)
}

/// `target <- tau*target + (1-tau)*online`, elementwise, for every entry of
/// `target` (matched to `online` by name). Used on the encoder+projector
/// target network.
pub fn ema_update(target: &mut ParameterSet, online: &ParameterSet, cfg: EmaConfig) -> Result<()> {
    let tau = cfg.decay;
    for e in target.entries_mut() {
        let src = online
            .get(&e.name)
            .ok_or_else(|| Error::shape("ema_update", format!("{} missing in online set", e.name)))?;
        if src.tensor.shape() != e.tensor.shape() {
            return Err(Error::shape(
                "ema_update",
                format!("{}: {:?} vs {:?}", e.name, e.tensor.shape(), src.tensor.shape()),
            ));
        }
        // Incremental form of tau*t + (1-tau)*o: keeps t == o an exact
        // fixed point.
        for (t, o) in e.tensor.data_mut().iter_mut().zip(src.tensor.data()) {
            *t += (1.0 - tau) * (o - *t);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecT(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn lfe_identical_directions_is_zero() {
        let t = vecT(&[1.0, 2.0, 3.0]);
        let loss = lfe_loss(&LfePair {
            online: t.clone(),
            target: t,
        })
        .unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn lfe_orthogonal_is_two_antipodal_is_four() {
        let l = lfe_loss(&LfePair {
            online: vecT(&[1.0, 0.0]),
            target: vecT(&[0.0, 1.0]),
        })
        .unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        let l = lfe_loss(&LfePair {
            online: vecT(&[1.0, 0.0]),
            target: vecT(&[-1.0, 0.0]),
        })
        .unwrap();
        assert!((l - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lfe_forty_five_degrees() {
        // 2 - 2/sqrt(2) = 0.585786...
        let l = lfe_loss(&LfePair {
            online: vecT(&[1.0, 0.0]),
            target: vecT(&[1.0, 1.0]),
        })
        .unwrap();
        assert!((l - (2.0 - 2.0 / 2.0_f64.sqrt())).abs() < 1e-12);
        assert!((l - 0.585786).abs() < 1e-6);
    }

    #[test]
    fn lfe_degenerate_embedding_errors() {
        let r = lfe_loss(&LfePair {
            online: vecT(&[0.0, 0.0]),
            target: vecT(&[1.0, 0.0]),
        });
        assert!(matches!(r, Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn lfe_total_is_symmetric_and_additive() {
        let (a, b, c, d) = (
            vecT(&[1.0, 0.5]),
            vecT(&[0.3, 1.0]),
            vecT(&[-0.2, 0.8]),
            vecT(&[0.9, 0.1]),
        );
        // swapping V and V' swaps (online, target) pairs within the sum
        let l1 = lfe_total_loss(&a, &b, &c, &d).unwrap();
        let l2 = lfe_total_loss(&c, &d, &a, &b).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        // all equal -> 0
        let z = lfe_total_loss(&a, &a, &a, &a).unwrap();
        assert!(z.abs() < 1e-12);
    }

    #[test]
    fn lfe_graph_matches_pure_and_stops_gradient() {
        let online = vecT(&[0.7, -0.4, 1.1]);
        let target = vecT(&[0.2, 0.9, -0.3]);
        let mut g = Graph::new();
        let o = g.input(&online);
        let loss = lfe_loss_graph(&mut g, o, &target).unwrap();
        let pure = lfe_loss(&LfePair {
            online: online.clone(),
            target: target.clone(),
        })
        .unwrap();
        assert!((g.data(loss)[0] - pure).abs() < 1e-12);
        g.backward(loss).unwrap();
        assert!(g.grad(o).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn dice_loss_values() {
        // all-zero prediction on a 100-pixel mask: 1 - 1/101
        let probs = Tensor::zeros(vec![10, 10]);
        let mask = Tensor::full(vec![10, 10], 1.0);
        let l = dice_loss(&probs, &mask).unwrap();
        assert!((l - (1.0 - 1.0 / 101.0)).abs() < 1e-12);
        assert!((l - 0.990099).abs() < 1e-6);

        // perfect prediction on a large mask: <= eps/(2*sum+eps)
        let l = dice_loss(&mask, &mask).unwrap();
        assert!(l <= DICE_SMOOTH / (2.0 * 100.0 + DICE_SMOOTH));

        // both empty: smoothing cancels to 0
        let z = Tensor::zeros(vec![4, 4]);
        assert_eq!(dice_loss(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn ce_loss_values() {
        let mask = Tensor::zeros(vec![2, 2]); // true class 0 everywhere
        // probability 1 on the true class
        let mut data = vec![0.0; 8];
        data[..4].fill(1.0);
        let probs = Tensor::new(vec![2, 2, 2], data).unwrap();
        assert!(ce_loss(&probs, &mask).unwrap().abs() < 1e-12);

        // uniform coin: ln 2
        let probs = Tensor::full(vec![2, 2, 2], 0.5);
        assert!((ce_loss(&probs, &mask).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        // p = 0.8 on the true class: -ln 0.8 = 0.223144
        let mut data = vec![0.2; 8];
        data[..4].fill(0.8);
        let probs = Tensor::new(vec![2, 2, 2], data).unwrap();
        assert!((ce_loss(&probs, &mask).unwrap() + 0.8_f64.ln()).abs() < 1e-12);
        assert!((ce_loss(&probs, &mask).unwrap() - 0.223144).abs() < 1e-6);
    }

    #[test]
    fn supervised_loss_adds_components() {
        let mask = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut data = vec![0.0; 8];
        // probs channel 1 = mask, channel 0 = complement (perfect prediction)
        for p in 0..4 {
            data[4 + p] = mask.data()[p];
            data[p] = 1.0 - mask.data()[p];
        }
        let probs = Tensor::new(vec![2, 2, 2], data).unwrap();
        let total = supervised_loss(&probs, &mask).unwrap();
        let d = dice_loss(
            &Tensor::new(vec![2, 2], probs.data()[4..].to_vec()).unwrap(),
            &mask,
        )
        .unwrap();
        let c = ce_loss(&probs, &mask).unwrap();
        assert!((total - (d + c)).abs() < 1e-12);
    }

    #[test]
    fn supervised_graph_matches_pure() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let logits = Tensor::uniform(vec![2, 4, 4], -1.0, 1.0, &mut rng);
        let mask = Tensor::new(
            vec![4, 4],
            (0..16).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap();
        let mut g = Graph::new();
        let x = g.input(&logits);
        let probs = g.softmax_channels(x).unwrap();
        let loss = supervised_loss_graph(&mut g, probs, &mask).unwrap();
        let pure = supervised_loss(&g.tensor(probs), &mask).unwrap();
        assert!((g.data(loss)[0] - pure).abs() < 1e-10);
    }

    #[test]
    fn ema_update_one_step_and_fixed_point() {
        use crate::segnet::{ModelConfig, SegNet, Segment};
        let cfg = ModelConfig {
            input_channels: 1,
            image_side: 4,
            encoder_widths: vec![2],
            decoder_widths: vec![2],
            num_classes: 2,
            projector_hidden: 3,
            projector_out: 2,
            skip_connections: false,
        };
        let net = SegNet::new(cfg).unwrap();
        let online = net.init_params(1);
        let mut target = online.clone_segments(&[Segment::Encoder, Segment::Projector]);

        // target == online -> unchanged
        let before = target.digest(&target.all_indices());
        ema_update(&mut target, &online, EmaConfig::new(0.99).unwrap()).unwrap();
        assert_eq!(before, target.digest(&target.all_indices()));

        // tau = 0.99, target 0, online 1 -> 0.01
        for e in target.entries_mut() {
            e.tensor.data_mut().fill(0.0);
        }
        let mut ones = online.clone_segments(&[Segment::Encoder, Segment::Projector]);
        for e in ones.entries_mut() {
            e.tensor.data_mut().fill(1.0);
        }
        ema_update(&mut target, &ones, EmaConfig::new(0.99).unwrap()).unwrap();
        for e in target.entries() {
            for v in e.tensor.data() {
                assert!((v - 0.01).abs() < 1e-15);
            }
        }

        // degenerate tau = 0 copies the online values exactly; the validated
        // constructor rejects it, so build the config directly
        let mut t2 = ones.clone();
        for e in t2.entries_mut() {
            e.tensor.data_mut().fill(5.0);
        }
        ema_update(&mut t2, &ones, EmaConfig { decay: 0.0 }).unwrap();
        for e in t2.entries() {
            for v in e.tensor.data() {
                assert_eq!(*v, 1.0);
            }
        }
        assert!(EmaConfig::new(0.0).is_err());
        assert!(EmaConfig::new(1.0).is_err());
    }

    #[test]
    fn ema_is_convex_combination() {
        use crate::segnet::{ModelConfig, SegNet, Segment};
        let cfg = ModelConfig {
            input_channels: 1,
            image_side: 4,
            encoder_widths: vec![2],
            decoder_widths: vec![2],
            num_classes: 2,
            projector_hidden: 3,
            projector_out: 2,
            skip_connections: false,
        };
        let net = SegNet::new(cfg).unwrap();
        let online = net.init_params(8);
        let mut target = net
            .init_params(9)
            .clone_segments(&[Segment::Encoder, Segment::Projector]);
        let before: Vec<Vec<f64>> = target
            .entries()
            .iter()
            .map(|e| e.tensor.data().to_vec())
            .collect();
        ema_update(&mut target, &online, EmaConfig::new(0.7).unwrap()).unwrap();
        for (e, prior) in target.entries().iter().zip(&before) {
            let online_vals = online.get(&e.name).unwrap().tensor.data();
            for ((now, was), o) in e.tensor.data().iter().zip(prior).zip(online_vals) {
                let lo = was.min(*o) - 1e-15;
                let hi = was.max(*o) + 1e-15;
                assert!(*now >= lo && *now <= hi);
            }
        }
    }
}
