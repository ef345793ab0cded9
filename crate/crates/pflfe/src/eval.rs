//! Dice statistics, KL feature diagnostics, convergence tracking, embedding
//! export, and CSV/TSV report emission.
//!
//! All floats in emitted files carry six decimal places; identical runs
//! produce byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::segnet::{ParameterSet, SegNet};
use crate::tensor::Tensor;

/// Variance floor when fitting diagonal Gaussians for KL diagnostics.
pub const KL_VARIANCE_FLOOR: f64 = 1e-6;

/// Per-round summary. `vdice_acli` is the population standard deviation of
/// per-client mean Dice: recomputing the published per-client values
/// reproduces the printed aggregate only under that reading, so "variance"
/// is implemented as standard deviation and documented here.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub round: usize,
    pub per_client_dice: Vec<f64>,
    pub dice_acli: f64,
    pub dice_aimg: f64,
    pub vdice_acli: f64,
    pub comm_cumulative_bytes: u64,
}

/// Hard overlap between binary masks: `2|P ∩ G| / (|P| + |G|)`, defined as
/// 1.0 when both masks are empty.
pub fn dice_coefficient(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "dice_coefficient",
            format!("{:?} vs {:?}", pred.shape(), gt.shape()),
        ));
    }
    let mut inter = 0usize;
    let mut p_count = 0usize;
    let mut g_count = 0usize;
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let p = *p > 0.5;
        let g = *g > 0.5;
        p_count += p as usize;
        g_count += g as usize;
        inter += (p && g) as usize;
    }
    if p_count + g_count == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p_count + g_count) as f64)
}

/// Argmax over channels of a (C,H,W) probability tensor -> (H,W) class mask.
pub fn argmax_mask(probs: &Tensor) -> Result<Tensor> {
    let s = probs.shape();
    if s.len() != 3 {
        return Err(Error::shape("argmax_mask", format!("{:?}", s)));
    }
    let (c, hw) = (s[0], s[1] * s[2]);
    let mut out = vec![0.0; hw];
    for p in 0..hw {
        let mut best = 0usize;
        let mut bestv = probs.data()[p];
        for ch in 1..c {
            let v = probs.data()[ch * hw + p];
            if v > bestv {
                bestv = v;
                best = ch;
            }
        }
        out[p] = best as f64;
    }
    Tensor::new(vec![s[1], s[2]], out)
}

/// Evaluation Dice of one prediction against a class-index ground truth:
/// per foreground class, binary Dice on the argmax mask, averaged.
pub fn eval_dice(probs: &Tensor, gt_mask: &Tensor, num_classes: usize) -> Result<f64> {
    let pred = argmax_mask(probs)?;
    let mut total = 0.0;
    for cls in 1..num_classes {
        let pc = Tensor::new(
            pred.shape().to_vec(),
            pred.data().iter().map(|&v| (v as usize == cls) as u8 as f64).collect(),
        )?;
        let gc = Tensor::new(
            gt_mask.shape().to_vec(),
            gt_mask.data().iter().map(|&v| (v as usize == cls) as u8 as f64).collect(),
        )?;
        total += dice_coefficient(&pc, &gc)?;
    }
    Ok(total / (num_classes - 1) as f64)
}

/// Aggregates per-client Dice lists into
/// `(dice_acli, dice_aimg, vdice_acli)`:
/// unweighted mean of client means, test-count-weighted pooled mean, and the
/// population standard deviation of client means.
pub fn aggregate_metrics(
    per_client: &[Vec<f64>],
    test_counts: &[usize],
) -> Result<(f64, f64, f64)> {
    if per_client.is_empty() || per_client.len() != test_counts.len() {
        return Err(Error::Data(format!(
            "need one dice list and test count per client ({} vs {})",
            per_client.len(),
            test_counts.len()
        )));
    }
    if per_client.iter().any(|l| l.is_empty()) {
        return Err(Error::Data("empty per-client dice list".into()));
    }
    let means: Vec<f64> = per_client
        .iter()
        .map(|l| l.iter().sum::<f64>() / l.len() as f64)
        .collect();
    let acli = means.iter().sum::<f64>() / means.len() as f64;
    let total: usize = test_counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("zero total test count".into()));
    }
    let aimg = means
        .iter()
        .zip(test_counts)
        .map(|(m, &n)| m * n as f64)
        .sum::<f64>()
        / total as f64;
    let var = means.iter().map(|m| (m - acli).powi(2)).sum::<f64>() / means.len() as f64;
    Ok((acli, aimg, var.sqrt()))
}

/// Foreground/background encoder-feature samples per client. Vectors all
/// share one dimension; an empty class list means the client had no labeled
/// pixels of that class.
#[derive(Clone, Debug, Default)]
pub struct FeatureSampleSet {
    pub dim: usize,
    /// per client: (foreground vectors, background vectors)
    pub clients: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl FeatureSampleSet {
    /// (client, "fg"/"bg") pairs whose sample list came out empty.
    pub fn flagged_empty(&self) -> Vec<(usize, &'static str)> {
        let mut out = Vec::new();
        for (i, (fg, bg)) in self.clients.iter().enumerate() {
            if fg.is_empty() {
                out.push((i, "fg"));
            }
            if bg.is_empty() {
                out.push((i, "bg"));
            }
        }
        out
    }
}

/// Collects the encoder feature vector under each labeled pixel. Pixel
/// (r, c) maps to feature coordinate (r / 2^L, c / 2^L) for L downsampling
/// stages; at most `max_per_class` vectors per class survive, chosen by a
/// seeded shuffle.
pub fn extract_pixel_features(
    net: &SegNet,
    params: &ParameterSet,
    samples: &[Sample],
    max_per_class: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let stride = 1usize << net.config().num_stages();
    let mut fg: Vec<Vec<f64>> = Vec::new();
    let mut bg: Vec<Vec<f64>> = Vec::new();
    for sample in samples {
        let fmap = net.forward_encoder(params, &sample.image)?;
        let fs = fmap.shape();
        let (c, fh, fw) = (fs[0], fs[1], fs[2]);
        let side = sample.mask.shape()[0];
        for r in 0..side {
            for col in 0..side {
                let (fr, fc) = (r / stride, col / stride);
                if fr >= fh || fc >= fw {
                    continue;
                }
                let vec: Vec<f64> = (0..c).map(|ch| fmap.data()[(ch * fh + fr) * fw + fc]).collect();
                if sample.mask.data()[r * side + col] > 0.5 {
                    fg.push(vec);
                } else {
                    bg.push(vec);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fg.shuffle(&mut rng);
    bg.shuffle(&mut rng);
    fg.truncate(max_per_class);
    bg.truncate(max_per_class);
    Ok((fg, bg))
}

/// Mean over dimensions of the per-dimension sample variance; collapse of
/// the embedding space shows up as this going to zero.
pub fn embedding_variance(vectors: &[Vec<f64>]) -> f64 {
    if vectors.len() < 2 {
        return 0.0;
    }
    let dim = vectors[0].len();
    let n = vectors.len() as f64;
    let mut total = 0.0;
    for d in 0..dim {
        let mean = vectors.iter().map(|v| v[d]).sum::<f64>() / n;
        total += vectors.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n;
    }
    total / dim as f64
}

fn fit_diag_gaussian(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 vectors to fit a Gaussian, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in samples {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for v in samples {
        for d in 0..dim {
            var[d] += (v[d] - mean[d]).powi(2) / n;
        }
    }
    for v in var.iter_mut() {
        *v = v.max(KL_VARIANCE_FLOOR);
    }
    Ok((mean, var))
}

/// Symmetric (Jeffreys) KL between diagonal Gaussians: the sum of both
/// one-way divergences, summed over dimensions. For univariate unit
/// variances it reduces to `(mu_p - mu_q)^2`.
pub fn symmetric_gaussian_kl(mu_p: &[f64], var_p: &[f64], mu_q: &[f64], var_q: &[f64]) -> f64 {
    let one_way = |mp: &[f64], vp: &[f64], mq: &[f64], vq: &[f64]| -> f64 {
        let mut kl = 0.0;
        for d in 0..mp.len() {
            kl += 0.5 * ((vq[d] / vp[d]).ln() + (vp[d] + (mp[d] - mq[d]).powi(2)) / vq[d] - 1.0);
        }
        kl
    };
    one_way(mu_p, var_p, mu_q, var_q) + one_way(mu_q, var_q, mu_p, var_p)
}

/// Which scalar the KL diagnostic reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KlMode {
    /// Client-drift scalar (smaller is better): per class and client, the
    /// symmetric KL between the client's feature distribution and the pooled
    /// global one, averaged, then normalized per dimension.
    Drift,
    /// Foreground/background separation (larger is better): symmetric KL
    /// between the pooled fg and pooled bg distributions per dimension.
    Interclass,
}

/// Fits diagonal Gaussians (variance floor 1e-6) and reports the selected
/// scalar, normalized by feature dimension.
pub fn kl_feature_divergence(set: &FeatureSampleSet, mode: KlMode) -> Result<f64> {
    if set.clients.is_empty() {
        return Err(Error::Data("no clients in feature set".into()));
    }
    let dim = set.dim.max(1) as f64;
    // The ML fit is invariant under repeating a multiset, but summing the
    // repetitions would round differently; when every client holds the same
    // samples, one copy keeps "no drift at all" an exact zero.
    let pool = |pick: fn(&(Vec<Vec<f64>>, Vec<Vec<f64>>)) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let first = pick(&set.clients[0]);
        if set.clients.iter().all(|c| pick(c) == first) {
            first.clone()
        } else {
            set.clients.iter().flat_map(|c| pick(c).clone()).collect()
        }
    };
    let pooled_fg = pool(|c| &c.0);
    let pooled_bg = pool(|c| &c.1);
    match mode {
        KlMode::Interclass => {
            let (mf, vf) = fit_diag_gaussian(&pooled_fg)?;
            let (mb, vb) = fit_diag_gaussian(&pooled_bg)?;
            Ok(symmetric_gaussian_kl(&mf, &vf, &mb, &vb) / dim)
        }
        KlMode::Drift => {
            let (gmf, gvf) = fit_diag_gaussian(&pooled_fg)?;
            let (gmb, gvb) = fit_diag_gaussian(&pooled_bg)?;
            let mut total = 0.0;
            let mut terms = 0usize;
            for (fg, bg) in &set.clients {
                if fg.len() >= 2 {
                    let (m, v) = fit_diag_gaussian(fg)?;
                    total += symmetric_gaussian_kl(&m, &v, &gmf, &gvf);
                    terms += 1;
                }
                if bg.len() >= 2 {
                    let (m, v) = fit_diag_gaussian(bg)?;
                    total += symmetric_gaussian_kl(&m, &v, &gmb, &gvb);
                    terms += 1;
                }
            }
            if terms == 0 {
                return Err(Error::Data("insufficient samples in every class".into()));
            }
            Ok(total / terms as f64 / dim)
        }
    }
}

/// First 1-based round index whose `dice_acli` reaches
/// `target_fraction x final dice_acli`, or None if never reached.
pub fn convergence_tracker(records: &[MetricsRecord], target_fraction: f64) -> Result<Option<usize>> {
    if records.is_empty() {
        return Err(Error::Data("no records".into()));
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "target_fraction must lie in (0,1], got {target_fraction}"
        )));
    }
    let target = target_fraction * records.last().unwrap().dice_acli;
    for r in records {
        if r.dice_acli >= target {
            return Ok(Some(r.round));
        }
    }
    Ok(None)
}

/// One ledger row for comm.csv.
#[derive(Clone, Debug)]
pub struct CommRow {
    pub round: usize,
    pub client: usize,
    pub direction: &'static str,
    pub segment: String,
    pub elements: u64,
    pub bytes: u64,
}

/// Everything one protocol run needs to write its reports.
#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub records: Vec<MetricsRecord>,
    pub comm_rows: Vec<CommRow>,
    /// cumulative aggregation events by end of each round
    pub agg_events_cum: Vec<usize>,
    /// (metric, value) pairs for kl.csv
    pub kl_values: Vec<(String, f64)>,
    /// feature vectors with class and client labels for embeddings.tsv
    pub embeddings: Vec<(Vec<f64>, &'static str, usize)>,
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    ))
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes metrics.csv, comm.csv, curves.csv, kl.csv, and embeddings.tsv into
/// `dir`; returns the paths written.
pub fn emit_reports(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let io = |p: &Path, e: std::io::Error| Error::io(p.display().to_string(), e);

    let path = dir.join("metrics.csv");
    {
        let mut w = create(&path)?;
        writeln!(w, "round,client,dice,dice_acli,dice_aimg,vdice_acli,cum_bytes")
            .map_err(|e| io(&path, e))?;
        for r in &bundle.records {
            for (ci, d) in r.per_client_dice.iter().enumerate() {
                writeln!(w, "{},{},{},,,,", r.round, ci, f6(*d)).map_err(|e| io(&path, e))?;
            }
            writeln!(
                w,
                "{},all,,{},{},{},{}",
                r.round,
                f6(r.dice_acli),
                f6(r.dice_aimg),
                f6(r.vdice_acli),
                r.comm_cumulative_bytes
            )
            .map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    written.push(path);

    let path = dir.join("comm.csv");
    {
        let mut w = create(&path)?;
        writeln!(w, "round,client,direction,segment,elements,bytes").map_err(|e| io(&path, e))?;
        for r in &bundle.comm_rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.round, r.client, r.direction, r.segment, r.elements, r.bytes
            )
            .map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    written.push(path);

    let path = dir.join("curves.csv");
    {
        let mut w = create(&path)?;
        writeln!(w, "round,dice_acli,agg_events,cum_bytes").map_err(|e| io(&path, e))?;
        for (i, r) in bundle.records.iter().enumerate() {
            let events = bundle.agg_events_cum.get(i).copied().unwrap_or(0);
            writeln!(
                w,
                "{},{},{},{}",
                r.round,
                f6(r.dice_acli),
                events,
                r.comm_cumulative_bytes
            )
            .map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    written.push(path);

    let path = dir.join("kl.csv");
    {
        let mut w = create(&path)?;
        writeln!(w, "metric,value").map_err(|e| io(&path, e))?;
        for (name, v) in &bundle.kl_values {
            writeln!(w, "{},{}", name, f6(*v)).map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    written.push(path);

    let path = dir.join("embeddings.tsv");
    {
        let mut w = create(&path)?;
        let dim = bundle.embeddings.first().map(|(v, _, _)| v.len()).unwrap_or(0);
        let header: Vec<String> = (0..dim)
            .map(|d| format!("f{d}"))
            .chain(["class".to_string(), "client".to_string()])
            .collect();
        writeln!(w, "{}", header.join("\t")).map_err(|e| io(&path, e))?;
        for (vec, class, client) in &bundle.embeddings {
            let mut row: Vec<String> = vec.iter().map(|v| f6(*v)).collect();
            row.push((*class).to_string());
            row.push(client.to_string());
            writeln!(w, "{}", row.join("\t")).map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))?;
    }
    written.push(path);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(side: usize, ones: &[usize]) -> Tensor {
        let mut d = vec![0.0; side * side];
        for &i in ones {
            d[i] = 1.0;
        }
        Tensor::new(vec![side, side], d).unwrap()
    }

    #[test]
    fn dice_perfect_disjoint_partial() {
        let a = mask(4, &[0, 1, 2, 3]);
        let b = mask(4, &[0, 1, 2, 3]);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 1.0);
        let c = mask(4, &[8, 9]);
        assert_eq!(dice_coefficient(&a, &c).unwrap(), 0.0);
        // 4-pixel masks sharing 2 pixels: 2*2/(4+4) = 0.5
        let d = mask(4, &[2, 3, 4, 5]);
        assert_eq!(dice_coefficient(&a, &d).unwrap(), 0.5);
        // both empty -> 1.0
        let e = mask(4, &[]);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn dice_is_symmetric() {
        let a = mask(4, &[0, 5, 6]);
        let b = mask(4, &[5, 6, 7, 9]);
        assert_eq!(
            dice_coefficient(&a, &b).unwrap(),
            dice_coefficient(&b, &a).unwrap()
        );
    }

    #[test]
    fn aggregate_metrics_reproduces_published_row() {
        // Seven per-client means; the printed aggregates are 0.9358 and
        // 0.0222, which pins vdice as a population standard deviation.
        let values = [0.9661, 0.9185, 0.9317, 0.9381, 0.9300, 0.9002, 0.9661];
        let lists: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        let counts = vec![10usize; 7];
        let (acli, _aimg, vdice) = aggregate_metrics(&lists, &counts).unwrap();
        assert!((acli - 0.9358).abs() < 5e-4, "acli {acli}");
        assert!((vdice - 0.0222).abs() < 5e-4, "vdice {vdice}");
    }

    #[test]
    fn aggregate_metrics_degenerate_and_two_point() {
        let lists = vec![vec![0.7, 0.7], vec![0.7]];
        let (acli, aimg, vdice) = aggregate_metrics(&lists, &[2, 1]).unwrap();
        assert!((acli - 0.7).abs() < 1e-12);
        assert!((aimg - 0.7).abs() < 1e-12);
        assert!(vdice.abs() < 1e-12);

        // two clients 0.4 / 0.8 with equal counts: acli = aimg = 0.6,
        // population std = 0.2
        let lists = vec![vec![0.4], vec![0.8]];
        let (acli, aimg, vdice) = aggregate_metrics(&lists, &[5, 5]).unwrap();
        assert!((acli - 0.6).abs() < 1e-12);
        assert!((aimg - 0.6).abs() < 1e-12);
        assert!((vdice - 0.2).abs() < 1e-12);
    }

    #[test]
    fn aggregate_metrics_weighted_pooling() {
        let lists = vec![vec![1.0], vec![0.0]];
        let (_, aimg, _) = aggregate_metrics(&lists, &[3, 1]).unwrap();
        assert!((aimg - 0.75).abs() < 1e-12);
    }

    #[test]
    fn symmetric_kl_unit_variance_closed_form() {
        // N(0,1) vs N(1,1): each direction 0.5, Jeffreys sum = 1.0
        let kl = symmetric_gaussian_kl(&[0.0], &[1.0], &[1.0], &[1.0]);
        assert!((kl - 1.0).abs() < 1e-12);
        // identical distributions -> 0
        assert_eq!(symmetric_gaussian_kl(&[0.3], &[0.5], &[0.3], &[0.5]), 0.0);
    }

    #[test]
    fn drift_kl_zero_for_identical_copies_and_small_for_shared_source() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let gen = |rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0) + shift).collect())
                .collect()
        };
        // every client's set is an identical copy of the global set
        let fg = gen(&mut rng, 50, 4, 2.0);
        let bg = gen(&mut rng, 50, 4, -2.0);
        let set = FeatureSampleSet {
            dim: 4,
            clients: vec![(fg.clone(), bg.clone()), (fg.clone(), bg.clone()), (fg, bg)],
        };
        let kl = kl_feature_divergence(&set, KlMode::Drift).unwrap();
        assert_eq!(kl, 0.0);

        // clients drawn independently from one distribution: near zero
        let clients: Vec<_> = (0..4)
            .map(|_| (gen(&mut rng, 2000, 4, 1.0), gen(&mut rng, 2000, 4, -1.0)))
            .collect();
        let set = FeatureSampleSet { dim: 4, clients };
        let kl = kl_feature_divergence(&set, KlMode::Drift).unwrap();
        assert!(kl >= 0.0);
        assert!(kl < 0.05, "drift kl {kl}");
    }

    #[test]
    fn interclass_kl_grows_with_mean_separation() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut gen = |shift: f64| -> Vec<Vec<f64>> {
            (0..500)
                .map(|_| vec![rng.gen_range(-1.0..1.0) + shift, rng.gen_range(-1.0..1.0)])
                .collect()
        };
        let bg = gen(0.0);
        let near = FeatureSampleSet {
            dim: 2,
            clients: vec![(gen(0.5), bg.clone())],
        };
        let far = FeatureSampleSet {
            dim: 2,
            clients: vec![(gen(3.0), bg)],
        };
        let kn = kl_feature_divergence(&near, KlMode::Interclass).unwrap();
        let kf = kl_feature_divergence(&far, KlMode::Interclass).unwrap();
        assert!(kf > kn, "{kf} vs {kn}");
    }

    #[test]
    fn insufficient_samples_error() {
        let set = FeatureSampleSet {
            dim: 2,
            clients: vec![(vec![vec![0.0, 0.0]], vec![])],
        };
        assert!(kl_feature_divergence(&set, KlMode::Drift).is_err());
        assert_eq!(set.flagged_empty(), vec![(0, "bg")]);
    }

    fn rec(round: usize, acli: f64) -> MetricsRecord {
        MetricsRecord {
            round,
            per_client_dice: vec![acli],
            dice_acli: acli,
            dice_aimg: acli,
            vdice_acli: 0.0,
            comm_cumulative_bytes: 0,
        }
    }

    #[test]
    fn convergence_first_crossing_boundary_flat() {
        let recs: Vec<MetricsRecord> = (1..=20)
            .map(|r| rec(r, if r >= 5 { 0.9 } else { 0.2 }))
            .collect();
        assert_eq!(convergence_tracker(&recs, 0.95).unwrap(), Some(5));

        // target_fraction 1.0 with the peak at the last round
        let recs: Vec<MetricsRecord> = (1..=4).map(|r| rec(r, r as f64 / 4.0)).collect();
        assert_eq!(convergence_tracker(&recs, 1.0).unwrap(), Some(4));

        // flat curve: immediate satisfaction
        let recs: Vec<MetricsRecord> = (1..=4).map(|r| rec(r, 0.5)).collect();
        assert_eq!(convergence_tracker(&recs, 0.9).unwrap(), Some(1));
    }

    #[test]
    fn embedding_variance_collapses_to_zero() {
        let same = vec![vec![1.0, 2.0]; 10];
        assert_eq!(embedding_variance(&same), 0.0);
        let spread = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        assert!(embedding_variance(&spread) > 0.0);
    }

    #[test]
    fn reports_have_documented_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ReportBundle {
            records: vec![
                MetricsRecord {
                    round: 1,
                    per_client_dice: vec![0.5, 0.75],
                    dice_acli: 0.625,
                    dice_aimg: 0.625,
                    vdice_acli: 0.125,
                    comm_cumulative_bytes: 800,
                },
                MetricsRecord {
                    round: 2,
                    per_client_dice: vec![0.6, 0.8],
                    dice_acli: 0.7,
                    dice_aimg: 0.7,
                    vdice_acli: 0.1,
                    comm_cumulative_bytes: 1600,
                },
            ],
            comm_rows: vec![CommRow {
                round: 1,
                client: 0,
                direction: "upload",
                segment: "encoder".into(),
                elements: 100,
                bytes: 800,
            }],
            agg_events_cum: vec![2, 4],
            kl_values: vec![("drift_kl".into(), 0.25)],
            embeddings: vec![(vec![0.1, 0.2, 0.3], "fg", 0)],
        };
        emit_reports(&bundle, dir.path()).unwrap();

        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        // header + rounds x (clients + 1)
        assert_eq!(lines.len(), 1 + 2 * (2 + 1));
        assert_eq!(lines[0], "round,client,dice,dice_acli,dice_aimg,vdice_acli,cum_bytes");
        assert_eq!(lines[1], "1,0,0.500000,,,,");
        assert_eq!(lines[3], "1,all,,0.625000,0.625000,0.125000,800");

        let emb = std::fs::read_to_string(dir.path().join("embeddings.tsv")).unwrap();
        let lines: Vec<&str> = emb.lines().collect();
        // embedding dim + 2 label columns
        assert_eq!(lines[0].split('\t').count(), 3 + 2);
        assert_eq!(lines[0], "f0\tf1\tf2\tclass\tclient");

        // byte-identical re-emission
        let before = std::fs::read(dir.path().join("metrics.csv")).unwrap();
        emit_reports(&bundle, dir.path()).unwrap();
        let after = std::fs::read(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(before, after);
    }
}
