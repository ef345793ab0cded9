//! Synthetic heterogeneous segmentation datasets and the paired augmentation
//! pipelines for the self-supervised stage.
//!
//! Each client draws shapes from its own family with client-specific
//! intensity ranges, background texture, and noise, emulating cross-silo
//! protocol differences. Two of the five default clients invert foreground/
//! background polarity, which is the main driver of client drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Amplitude of the sinusoidal background texture.
pub const TEXTURE_AMPLITUDE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    Ellipse,
    Rectangle,
    Blob,
}

/// Per-client generator configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClientDataConfig {
    pub client_id: usize,
    pub num_train: usize,
    pub num_test: usize,
    pub shape_family: ShapeFamily,
    /// Foreground intensity interval within [0,1].
    pub intensity_fg: (f64, f64),
    /// Background intensity interval within [0,1].
    pub intensity_bg: (f64, f64),
    pub noise_sigma: f64,
    /// Object size as a fraction of the image side.
    pub object_scale: (f64, f64),
    /// Cycles of sinusoidal background texture across the image; 0 disables.
    pub texture_frequency: f64,
}

impl ClientDataConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo >= 0.0 && hi <= 1.0 && lo <= hi;
        if !ok_range(self.intensity_fg) || !ok_range(self.intensity_bg) {
            return Err(Error::Config(format!(
                "client {}: intensity ranges must be sub-intervals of [0,1]",
                self.client_id
            )));
        }
        if self.intensity_fg == self.intensity_bg {
            return Err(Error::Config(format!(
                "client {}: fg and bg intensity ranges must not be identical",
                self.client_id
            )));
        }
        if self.num_train == 0 || self.num_test == 0 {
            return Err(Error::Config(format!(
                "client {}: need at least 1 train and 1 test sample",
                self.client_id
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "client {}: noise_sigma must be non-negative",
                self.client_id
            )));
        }
        let (lo, hi) = self.object_scale;
        if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "client {}: object_scale must be a sub-interval of (0,1]",
                self.client_id
            )));
        }
        Ok(())
    }
}

/// One image/mask pair. Image values live in [0,1]; the mask holds integer
/// class labels (0 background, 1 foreground).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// (1, side, side)
    pub image: Tensor,
    /// (side, side)
    pub mask: Tensor,
}

/// The five-client heterogeneous benchmark: shape families, contrast bands,
/// absolute intensity levels, textures, noise, and object scales all differ
/// per client, so a model trained on one client transfers poorly to the
/// others. Contrast is deliberately low against the noise, which keeps
/// feature quality the bottleneck for segmentation accuracy.
pub fn hetero5(num_train: usize, num_test: usize) -> Vec<ClientDataConfig> {
    let mk = |client_id, shape_family, fg, bg, noise, scale, tex| ClientDataConfig {
        client_id,
        num_train,
        num_test,
        shape_family,
        intensity_fg: fg,
        intensity_bg: bg,
        noise_sigma: noise,
        object_scale: scale,
        texture_frequency: tex,
    };
    vec![
        mk(0, ShapeFamily::Ellipse, (0.60, 0.75), (0.30, 0.45), 0.10, (0.25, 0.45), 2.0),
        mk(1, ShapeFamily::Rectangle, (0.50, 0.65), (0.20, 0.35), 0.12, (0.20, 0.40), 5.0),
        mk(2, ShapeFamily::Blob, (0.68, 0.82), (0.43, 0.57), 0.10, (0.30, 0.50), 3.0),
        mk(3, ShapeFamily::Ellipse, (0.15, 0.30), (0.45, 0.60), 0.12, (0.15, 0.30), 6.0),
        mk(4, ShapeFamily::Rectangle, (0.18, 0.32), (0.50, 0.64), 0.11, (0.25, 0.40), 4.0),
    ]
}

fn fill_shape(mask: &mut [f64], side: usize, family: ShapeFamily, rng: &mut ChaCha8Rng, scale: (f64, f64)) {
    let s = side as f64;
    let half = |r: &mut ChaCha8Rng| r.gen_range(scale.0..=scale.1) * s / 2.0;
    let cx = rng.gen_range(0.25 * s..0.75 * s);
    let cy = rng.gen_range(0.25 * s..0.75 * s);
    match family {
        ShapeFamily::Ellipse => {
            let a = half(rng).max(1.5);
            let b = half(rng).max(1.5);
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let (sin, cos) = theta.sin_cos();
            for y in 0..side {
                for x in 0..side {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    let u = (dx * cos + dy * sin) / a;
                    let v = (-dx * sin + dy * cos) / b;
                    if u * u + v * v <= 1.0 {
                        mask[y * side + x] = 1.0;
                    }
                }
            }
        }
        ShapeFamily::Rectangle => {
            let hw = half(rng).max(1.5);
            let hh = half(rng).max(1.5);
            for y in 0..side {
                for x in 0..side {
                    let dx = (x as f64 + 0.5 - cx).abs();
                    let dy = (y as f64 + 0.5 - cy).abs();
                    if dx <= hw && dy <= hh {
                        mask[y * side + x] = 1.0;
                    }
                }
            }
        }
        ShapeFamily::Blob => {
            // union of a core circle and two satellites
            let r0 = half(rng).max(2.0) * 0.8;
            let mut circles = vec![(cx, cy, r0)];
            for _ in 0..2 {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = rng.gen_range(0.4..1.0) * r0;
                let r = rng.gen_range(0.5..0.8) * r0;
                circles.push((cx + ang.cos() * dist, cy + ang.sin() * dist, r.max(1.5)));
            }
            for y in 0..side {
                for x in 0..side {
                    let px = x as f64 + 0.5;
                    let py = y as f64 + 0.5;
                    if circles
                        .iter()
                        .any(|&(ox, oy, r)| (px - ox).powi(2) + (py - oy).powi(2) <= r * r)
                    {
                        mask[y * side + x] = 1.0;
                    }
                }
            }
        }
    }
}

fn gen_sample(cfg: &ClientDataConfig, side: usize, rng: &mut ChaCha8Rng) -> Sample {
    let n = side * side;
    let mut mask = vec![0.0; n];
    let num_shapes = rng.gen_range(1..=3);
    for _ in 0..num_shapes {
        fill_shape(&mut mask, side, cfg.shape_family, rng, cfg.object_scale);
    }

    let bg_base = rng.gen_range(cfg.intensity_bg.0..=cfg.intensity_bg.1);
    let fg_val = rng.gen_range(cfg.intensity_fg.0..=cfg.intensity_fg.1);
    let phase_x = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_y = rng.gen_range(0.0..std::f64::consts::TAU);
    let freq = cfg.texture_frequency;

    let mut image = vec![0.0; n];
    for y in 0..side {
        for x in 0..side {
            let i = y * side + x;
            if mask[i] > 0.5 {
                image[i] = fg_val;
            } else {
                let tex = if freq > 0.0 {
                    TEXTURE_AMPLITUDE
                        * (std::f64::consts::TAU * freq * x as f64 / side as f64 + phase_x).sin()
                        * (std::f64::consts::TAU * freq * y as f64 / side as f64 + phase_y).sin()
                } else {
                    0.0
                };
                image[i] = bg_base + tex;
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        for v in image.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    for v in image.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    Sample {
        image: Tensor::new(vec![1, side, side], image).expect("sized to shape"),
        mask: Tensor::new(vec![side, side], mask).expect("sized to shape"),
    }
}

/// Deterministic per-client dataset: `(train, test)` of the configured sizes.
pub fn gen_client_dataset(
    cfg: &ClientDataConfig,
    side: usize,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..cfg.num_train).map(|_| gen_sample(cfg, side, &mut rng)).collect();
    let test = (0..cfg.num_test).map(|_| gen_sample(cfg, side, &mut rng)).collect();
    Ok((train, test))
}

/// One augmentation step; all steps preserve the tensor shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Augmentation {
    HorizontalFlip { p: f64 },
    VerticalFlip { p: f64 },
    GaussianNoise { sigma: f64 },
    /// Multiply by a factor drawn from U(1-range, 1+range).
    IntensityScale { range: f64 },
    /// Add an offset drawn from U(-range, range).
    IntensityShift { range: f64 },
    /// Random square crop of side fraction >= min_frac, resampled back to
    /// full size with bilinear interpolation.
    CropResize { min_frac: f64 },
}

/// Ordered augmentation pipeline; deterministic given an RNG stream. The
/// output is clamped to [0,1] after the last step.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub steps: Vec<Augmentation>,
}

impl AugmentationSpec {
    /// Default pipeline `a`: flips and light noise.
    pub fn default_a() -> Self {
        AugmentationSpec {
            steps: vec![
                Augmentation::HorizontalFlip { p: 0.5 },
                Augmentation::GaussianNoise { sigma: 0.05 },
            ],
        }
    }

    /// Default pipeline `a'`: intensity scaling and crop-resize.
    pub fn default_a_prime() -> Self {
        AugmentationSpec {
            steps: vec![
                Augmentation::IntensityScale { range: 0.2 },
                Augmentation::CropResize { min_frac: 0.8 },
            ],
        }
    }

    /// Benchmark pipeline `a`: both flips and light noise.
    pub fn bench_a() -> Self {
        AugmentationSpec {
            steps: vec![
                Augmentation::HorizontalFlip { p: 0.5 },
                Augmentation::VerticalFlip { p: 0.5 },
                Augmentation::GaussianNoise { sigma: 0.05 },
            ],
        }
    }

    /// Benchmark pipeline `a'`: intensity transforms wide enough to span the
    /// cross-client intensity spread, plus crop-resize.
    pub fn bench_a_prime() -> Self {
        AugmentationSpec {
            steps: vec![
                Augmentation::IntensityScale { range: 0.3 },
                Augmentation::IntensityShift { range: 0.25 },
                Augmentation::CropResize { min_frac: 0.7 },
            ],
        }
    }

    /// Applies the pipeline to a (1, side, side) image.
    pub fn apply(&self, image: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
        let side = image.shape()[1];
        let mut data = image.data().to_vec();
        for step in &self.steps {
            match *step {
                Augmentation::HorizontalFlip { p } => {
                    if rng.gen_bool(p.clamp(0.0, 1.0)) {
                        for y in 0..side {
                            data[y * side..(y + 1) * side].reverse();
                        }
                    }
                }
                Augmentation::VerticalFlip { p } => {
                    if rng.gen_bool(p.clamp(0.0, 1.0)) {
                        for y in 0..side / 2 {
                            for x in 0..side {
                                data.swap(y * side + x, (side - 1 - y) * side + x);
                            }
                        }
                    }
                }
                Augmentation::GaussianNoise { sigma } => {
                    if sigma > 0.0 {
                        let normal = Normal::new(0.0, sigma).expect("sigma positive");
                        for v in data.iter_mut() {
                            *v += normal.sample(rng);
                        }
                    }
                }
                Augmentation::IntensityScale { range } => {
                    let f = rng.gen_range(1.0 - range..=1.0 + range);
                    for v in data.iter_mut() {
                        *v *= f;
                    }
                }
                Augmentation::IntensityShift { range } => {
                    let off = rng.gen_range(-range..=range);
                    for v in data.iter_mut() {
                        *v += off;
                    }
                }
                Augmentation::CropResize { min_frac } => {
                    let frac = rng.gen_range(min_frac.min(1.0)..=1.0);
                    let crop = frac * side as f64;
                    let max_off = side as f64 - crop;
                    let ox = rng.gen_range(0.0..=max_off);
                    let oy = rng.gen_range(0.0..=max_off);
                    data = bilinear_resample(&data, side, ox, oy, crop);
                }
            }
        }
        for v in data.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Tensor::new(vec![1, side, side], data).expect("shape preserved")
    }
}

/// Samples the `crop x crop` window at (ox, oy) back to `side x side`.
fn bilinear_resample(data: &[f64], side: usize, ox: f64, oy: f64, crop: f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    let scale = crop / side as f64;
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, side as isize - 1) as usize;
        let yc = y.clamp(0, side as isize - 1) as usize;
        data[yc * side + xc]
    };
    for y in 0..side {
        for x in 0..side {
            let sx = ox + (x as f64 + 0.5) * scale - 0.5;
            let sy = oy + (y as f64 + 0.5) * scale - 0.5;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy;
            out[y * side + x] = v;
        }
    }
    out
}

/// Two independently augmented views of one image; the mask is unused.
/// Each pipeline draws from its own RNG stream derived from `rng`.
pub fn augment_pair(
    sample: &Sample,
    spec_a: &AugmentationSpec,
    spec_a_prime: &AugmentationSpec,
    rng: &mut ChaCha8Rng,
) -> (Tensor, Tensor) {
    let mut rng_a = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut rng_b = ChaCha8Rng::seed_from_u64(rng.gen());
    let v = spec_a.apply(&sample.image, &mut rng_a);
    let vp = spec_a_prime.apply(&sample.image, &mut rng_b);
    (v, vp)
}

/// Binary dataset dump: header (count, side, classes) as little-endian u32,
/// then per sample the f64 image payload and the byte mask payload.
pub fn dump_dataset(path: &std::path::Path, samples: &[Sample], classes: usize) -> Result<()> {
    use std::io::Write;
    let side = match samples.first() {
        Some(s) => s.mask.shape()[0],
        None => 0,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let fail = |e: std::io::Error| Error::io(path.display().to_string(), e);
    w.write_all(&(samples.len() as u32).to_le_bytes()).map_err(fail)?;
    w.write_all(&(side as u32).to_le_bytes()).map_err(fail)?;
    w.write_all(&(classes as u32).to_le_bytes()).map_err(fail)?;
    for s in samples {
        for v in s.image.data() {
            w.write_all(&v.to_le_bytes()).map_err(fail)?;
        }
        for m in s.mask.data() {
            w.write_all(&[*m as u8]).map_err(fail)?;
        }
    }
    w.flush().map_err(fail)
}

/// Reads a dump produced by [`dump_dataset`].
pub fn load_dataset(path: &std::path::Path) -> Result<(Vec<Sample>, usize)> {
    use std::io::Read;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = std::io::BufReader::new(file);
    let fail = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(fail)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(fail)?;
    let side = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf).map_err(fail)?;
    let classes = u32::from_le_bytes(u32buf) as usize;
    let n = side * side;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut image = Vec::with_capacity(n);
        let mut f64buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut f64buf).map_err(fail)?;
            image.push(f64::from_le_bytes(f64buf));
        }
        let mut mask_bytes = vec![0u8; n];
        r.read_exact(&mut mask_bytes).map_err(fail)?;
        samples.push(Sample {
            image: Tensor::new(vec![1, side, side], image)?,
            mask: Tensor::new(vec![side, side], mask_bytes.iter().map(|&b| b as f64).collect())?,
        });
    }
    Ok((samples, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ClientDataConfig {
        hetero5(8, 8).remove(0)
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg();
        let (tr1, te1) = gen_client_dataset(&c, 16, 5).unwrap();
        let (tr2, te2) = gen_client_dataset(&c, 16, 5).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        let (tr3, _) = gen_client_dataset(&c, 16, 6).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn disjoint_ranges_without_noise_separate_fg_bg() {
        let mut c = cfg();
        c.noise_sigma = 0.0;
        c.texture_frequency = 0.0;
        c.intensity_fg = (0.8, 0.9);
        c.intensity_bg = (0.1, 0.2);
        let (train, _) = gen_client_dataset(&c, 16, 3).unwrap();
        for s in &train {
            let mut min_fg = f64::INFINITY;
            let mut max_bg = f64::NEG_INFINITY;
            for (i, &m) in s.mask.data().iter().enumerate() {
                if m > 0.5 {
                    min_fg = min_fg.min(s.image.data()[i]);
                } else {
                    max_bg = max_bg.max(s.image.data()[i]);
                }
            }
            assert!(min_fg > max_bg);
        }
    }

    #[test]
    fn pixels_stay_in_unit_interval_and_masks_binary() {
        for c in hetero5(6, 6) {
            let (train, test) = gen_client_dataset(&c, 32, 11).unwrap();
            for s in train.iter().chain(&test) {
                assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(s.mask.data().iter().all(|v| *v == 0.0 || *v == 1.0));
                assert!(s.mask.data().iter().any(|v| *v == 1.0), "empty mask");
            }
        }
    }

    #[test]
    fn empty_pipelines_are_identity() {
        let c = cfg();
        let (train, _) = gen_client_dataset(&c, 16, 9).unwrap();
        let empty = AugmentationSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (v, vp) = augment_pair(&train[0], &empty, &empty, &mut rng);
        assert_eq!(v, train[0].image);
        assert_eq!(vp, train[0].image);
    }

    #[test]
    fn horizontal_flip_is_an_involution() {
        let c = cfg();
        let (train, _) = gen_client_dataset(&c, 16, 9).unwrap();
        let flip = AugmentationSpec {
            steps: vec![
                Augmentation::HorizontalFlip { p: 1.0 },
                Augmentation::HorizontalFlip { p: 1.0 },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = flip.apply(&train[0].image, &mut rng);
        assert_eq!(out, train[0].image);
    }

    #[test]
    fn gaussian_noise_perturbs_within_folded_normal_bounds() {
        // mean |V - image| over many draws lies in (0, 3*sigma)
        let c = cfg();
        let (train, _) = gen_client_dataset(&c, 16, 9).unwrap();
        let sigma = 0.1;
        let noise = AugmentationSpec {
            steps: vec![Augmentation::GaussianNoise { sigma }],
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = noise.apply(&train[0].image, &mut rng);
            for (a, b) in out.data().iter().zip(train[0].image.data()) {
                total += (a - b).abs();
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!(mean > 0.0 && mean < 3.0 * sigma, "mean abs delta {mean}");
    }

    #[test]
    fn augmentations_never_change_shape() {
        let c = cfg();
        let (train, _) = gen_client_dataset(&c, 32, 9).unwrap();
        let spec = AugmentationSpec {
            steps: vec![
                Augmentation::CropResize { min_frac: 0.5 },
                Augmentation::IntensityScale { range: 0.3 },
                Augmentation::IntensityShift { range: 0.2 },
                Augmentation::VerticalFlip { p: 1.0 },
                Augmentation::GaussianNoise { sigma: 0.02 },
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = spec.apply(&train[0].image, &mut rng);
        assert_eq!(out.shape(), train[0].image.shape());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn different_shape_families_shift_foreground_histograms() {
        // chi-squared statistic between per-pixel foreground-rate histograms
        // of two clients with different families must clear a threshold
        let mut ca = cfg();
        ca.shape_family = ShapeFamily::Ellipse;
        ca.num_train = 64;
        let mut cb = ca.clone();
        cb.client_id = 1;
        cb.shape_family = ShapeFamily::Rectangle;
        cb.object_scale = (0.15, 0.3);

        let side = 32;
        let fg_rate = |c: &ClientDataConfig, seed| -> Vec<f64> {
            let (train, _) = gen_client_dataset(c, side, seed).unwrap();
            let mut rate = vec![0.0; side * side];
            for s in &train {
                for (i, m) in s.mask.data().iter().enumerate() {
                    rate[i] += m / train.len() as f64;
                }
            }
            rate
        };
        let ra = fg_rate(&ca, 21);
        let rb = fg_rate(&cb, 22);
        let bins = 10;
        let mut ha = vec![0.0f64; bins];
        let mut hb = vec![0.0f64; bins];
        for (&a, &b) in ra.iter().zip(&rb) {
            ha[((a * bins as f64) as usize).min(bins - 1)] += 1.0;
            hb[((b * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let chi2: f64 = ha
            .iter()
            .zip(&hb)
            .filter(|(a, b)| **a + **b > 0.0)
            .map(|(a, b)| (a - b).powi(2) / (a + b))
            .sum();
        // observed ~101 for these seeds; anything past 20 is far outside
        // what identically-distributed masks produce
        assert!(chi2 > 20.0, "chi2 {chi2} too small for heterogeneous clients");
    }

    #[test]
    fn dataset_dump_roundtrip() {
        let c = cfg();
        let (train, _) = gen_client_dataset(&c, 16, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("client0.bin");
        dump_dataset(&path, &train, 2).unwrap();
        let (loaded, classes) = load_dataset(&path).unwrap();
        assert_eq!(classes, 2);
        assert_eq!(loaded.len(), train.len());
        for (a, b) in loaded.iter().zip(&train) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.mask, b.mask);
        }
    }
}
