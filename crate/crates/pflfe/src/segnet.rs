//! Encoder-decoder segmentation network with a projector head, and the
//! parameter partitioning that separates shared (aggregated) from
//! personalized layers.
//!
//! The backbone is a small U-Net-style stack without skip connections by
//! default: each encoder stage is a stride-2 3x3 convolution + relu, each
//! decoder stage a stride-2 2x2 transposed convolution + relu, followed by a
//! 1x1 classifier convolution and a per-pixel channel softmax. The projector
//! is a 2-layer MLP on globally average-pooled bottleneck features. Skip
//! connections (elementwise add of matching encoder activations) can be
//! switched on per config.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_tensors, save_tensors, Graph, SgdState, Tensor, ValueId};

/// Architecture hyperparameters. Two parameter sets built from the same
/// config are shape-congruent entry by entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Images are square, `image_side` pixels per axis.
    pub image_side: usize,
    /// Channels after each 2x downsampling stage.
    pub encoder_widths: Vec<usize>,
    /// Channels after each 2x upsampling stage; same length as
    /// `encoder_widths`. With skip connections enabled, stage j (for
    /// j < L-1) must produce `encoder_widths[L-2-j]` channels so the
    /// matching encoder activation can be added in.
    pub decoder_widths: Vec<usize>,
    pub num_classes: usize,
    pub projector_hidden: usize,
    pub projector_out: usize,
    #[serde(default)]
    pub skip_connections: bool,
}

impl ModelConfig {
    /// The desk-scale default used by the shipped benchmark.
    pub fn benchmark_default() -> Self {
        ModelConfig {
            input_channels: 1,
            image_side: 32,
            encoder_widths: vec![8, 16],
            decoder_widths: vec![8, 8],
            num_classes: 2,
            projector_hidden: 32,
            projector_out: 16,
            skip_connections: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.encoder_widths.len();
        if l == 0 {
            return Err(Error::Config("encoder_widths must be non-empty".into()));
        }
        if self.decoder_widths.len() != l {
            return Err(Error::Config(format!(
                "decoder_widths length {} != encoder_widths length {}",
                self.decoder_widths.len(),
                l
            )));
        }
        if self.image_side % (1 << l) != 0 {
            return Err(Error::Config(format!(
                "image_side {} not divisible by 2^{}",
                self.image_side, l
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.input_channels == 0
            || self.projector_hidden == 0
            || self.projector_out == 0
            || self.encoder_widths.iter().any(|&w| w == 0)
            || self.decoder_widths.iter().any(|&w| w == 0)
        {
            return Err(Error::Config("all widths must be positive".into()));
        }
        if self.skip_connections {
            for j in 0..l.saturating_sub(1) {
                if self.decoder_widths[j] != self.encoder_widths[l - 2 - j] {
                    return Err(Error::Config(format!(
                        "skip connections need decoder_widths[{}] == encoder_widths[{}] ({} != {})",
                        j,
                        l - 2 - j,
                        self.decoder_widths[j],
                        self.encoder_widths[l - 2 - j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spatial side of the encoder output (bottleneck).
    pub fn bottleneck_side(&self) -> usize {
        self.image_side >> self.encoder_widths.len()
    }

    /// Channels of the encoder output.
    pub fn bottleneck_channels(&self) -> usize {
        *self.encoder_widths.last().expect("validated non-empty")
    }

    /// Number of downsampling stages.
    pub fn num_stages(&self) -> usize {
        self.encoder_widths.len()
    }

    /// Decoder layers: one transposed conv per stage plus the classifier.
    pub fn decoder_layer_count(&self) -> usize {
        self.decoder_widths.len() + 1
    }
}

/// Which network part a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Encoder,
    Decoder,
    Projector,
}

impl std::fmt::Display for Segment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Segment::Encoder => write!(f, "encoder"),
            Segment::Decoder => write!(f, "decoder"),
            Segment::Projector => write!(f, "projector"),
        }
    }
}

/// One named parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub segment: Segment,
    /// Layer index within the segment (decoder layer k counts from the
    /// bottleneck; the classifier is the last decoder layer).
    pub layer: usize,
}

/// Named, ordered parameter collection. Order is a function of the
/// [`ModelConfig`] alone, so sets from the same config align name-for-name.
#[derive(Clone, Debug, Default)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
}

/// Boundary between shared (aggregated) and personalized parameters.
/// The projector is always local-only and belongs to neither side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionBoundary {
    /// The whole decoder is personalized; the encoder is shared.
    AllDecoder,
    /// Only the last k decoder layers are personalized; the encoder and the
    /// remaining decoder layers are shared.
    LastKLayers(usize),
}

impl std::fmt::Display for PartitionBoundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PartitionBoundary::AllDecoder => write!(f, "all_decoder"),
            PartitionBoundary::LastKLayers(k) => write!(f, "last_{k}"),
        }
    }
}

impl std::str::FromStr for PartitionBoundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all_decoder" {
            return Ok(PartitionBoundary::AllDecoder);
        }
        if let Some(k) = s.strip_prefix("last_") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Config(format!("bad boundary {s:?}")))?;
            return Ok(PartitionBoundary::LastKLayers(k));
        }
        Err(Error::Config(format!(
            "unknown boundary {s:?} (expected all_decoder or last_<k>)"
        )))
    }
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Indices of all entries in a segment, in declaration order.
    pub fn segment_indices(&self, segment: Segment) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.segment == segment)
            .map(|(i, _)| i)
            .collect()
    }

    /// Total elements across the given entries.
    pub fn element_count(&self, indices: &[usize]) -> u64 {
        indices.iter().map(|&i| self.entries[i].tensor.len() as u64).sum()
    }

    /// Splits encoder+decoder entry indices into (shared, personal) per the
    /// boundary. Projector entries appear in neither view.
    pub fn partition(&self, boundary: PartitionBoundary) -> Result<(Vec<usize>, Vec<usize>)> {
        let decoder_layers = self
            .entries
            .iter()
            .filter(|e| e.segment == Segment::Decoder)
            .map(|e| e.layer + 1)
            .max()
            .unwrap_or(0);
        let personal_from = match boundary {
            PartitionBoundary::AllDecoder => 0,
            PartitionBoundary::LastKLayers(k) => {
                if k > decoder_layers {
                    return Err(Error::Config(format!(
                        "last_{k} exceeds decoder layer count {decoder_layers}"
                    )));
                }
                decoder_layers - k
            }
        };
        let mut shared = Vec::new();
        let mut personal = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            match e.segment {
                Segment::Projector => {}
                Segment::Encoder => shared.push(i),
                Segment::Decoder => {
                    if e.layer >= personal_from {
                        personal.push(i);
                    } else {
                        shared.push(i);
                    }
                }
            }
        }
        Ok((shared, personal))
    }

    /// Entry-by-entry name and shape agreement.
    pub fn shape_congruent(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape())
    }

    /// Clones a subset into a new set (used for the EMA target network).
    pub fn clone_segments(&self, segments: &[Segment]) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .filter(|e| segments.contains(&e.segment))
                .cloned()
                .collect(),
        }
    }

    /// FNV-1a digest over the raw parameter bytes; detects any bit change.
    pub fn digest(&self, indices: &[usize]) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for &i in indices {
            for v in self.entries[i].tensor.data() {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.entries.len()).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        save_tensors(path, self.entries.iter().map(|e| (e.name.as_str(), &e.tensor)))
    }

    /// Loads tensor values into an existing, congruent set by name.
    pub fn load_into(&mut self, path: &std::path::Path) -> Result<()> {
        let loaded = load_tensors(path)?;
        for (name, tensor) in loaded {
            let entry = self
                .entries
                .iter_mut()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Config(format!("checkpoint names unknown tensor {name}")))?;
            if entry.tensor.shape() != tensor.shape() {
                return Err(Error::shape(
                    "ParameterSet::load_into",
                    format!("{name}: {:?} vs {:?}", entry.tensor.shape(), tensor.shape()),
                ));
            }
            entry.tensor = tensor;
        }
        Ok(())
    }

    /// Applies one optimizer step to the given entries and clears their
    /// gradients.
    pub fn sgd_step(&mut self, state: &mut SgdState, indices: &[usize]) -> Result<()> {
        let set: std::collections::HashSet<usize> = indices.iter().copied().collect();
        state.step(
            self.entries
                .iter_mut()
                .enumerate()
                .filter(|(i, _)| set.contains(i))
                .map(|(_, e)| (e.name.as_str(), &mut e.tensor)),
        )
    }
}

/// Network wiring for one [`ModelConfig`]; builds forward graphs over a
/// [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct SegNet {
    cfg: ModelConfig,
}

/// Mapping from parameter-set entries to graph leaves, so gradients can be
/// read back after `backward`.
pub struct BoundParams {
    /// entry index -> leaf id, for bound segments only
    pub ids: Vec<Option<ValueId>>,
}

impl BoundParams {
    /// Accumulates `scale` times the leaf gradients into the parameter
    /// gradient slots.
    pub fn accumulate_grads(&self, g: &Graph, params: &mut ParameterSet, scale: f64) {
        for (i, id) in self.ids.iter().enumerate() {
            if let Some(id) = id {
                params.entries_mut()[i].tensor.accumulate_grad(g.grad(*id), scale);
            }
        }
    }
}

impl SegNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SegNet { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Deterministic He-style initialization: weights from uniform(-s, s)
    /// with s = sqrt(6 / fan_in), biases zero. The same (config, seed) pair
    /// yields a bit-identical set.
    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        let cfg = &self.cfg;

        let push_conv = |entries: &mut Vec<ParamEntry>,
                             rng: &mut ChaCha8Rng,
                             name: &str,
                             segment: Segment,
                             layer: usize,
                             shape: Vec<usize>,
                             fan_in: usize,
                             bias_len: usize| {
            let s = (6.0 / fan_in as f64).sqrt();
            entries.push(ParamEntry {
                name: format!("{name}.weight"),
                tensor: Tensor::uniform(shape, -s, s, rng),
                segment,
                layer,
            });
            entries.push(ParamEntry {
                name: format!("{name}.bias"),
                tensor: Tensor::zeros(vec![bias_len]),
                segment,
                layer,
            });
        };

        // Encoder: stride-2 3x3 convs.
        let mut c = cfg.input_channels;
        for (i, &w) in cfg.encoder_widths.iter().enumerate() {
            push_conv(
                &mut entries,
                &mut rng,
                &format!("enc.{i}"),
                Segment::Encoder,
                i,
                vec![w, c, 3, 3],
                c * 9,
                w,
            );
            c = w;
        }

        // Decoder: stride-2 2x2 transposed convs, then a 1x1 classifier.
        for (j, &w) in cfg.decoder_widths.iter().enumerate() {
            push_conv(
                &mut entries,
                &mut rng,
                &format!("dec.{j}"),
                Segment::Decoder,
                j,
                vec![c, w, 2, 2],
                c * 4,
                w,
            );
            c = w;
        }
        let head_layer = cfg.decoder_widths.len();
        push_conv(
            &mut entries,
            &mut rng,
            &format!("dec.{head_layer}"),
            Segment::Decoder,
            head_layer,
            vec![cfg.num_classes, c, 1, 1],
            c,
            cfg.num_classes,
        );

        // Projector: GAP(bottleneck) -> hidden -> relu -> out.
        let bc = cfg.bottleneck_channels();
        push_conv(
            &mut entries,
            &mut rng,
            "proj.0",
            Segment::Projector,
            0,
            vec![cfg.projector_hidden, bc],
            bc,
            cfg.projector_hidden,
        );
        push_conv(
            &mut entries,
            &mut rng,
            "proj.1",
            Segment::Projector,
            1,
            vec![cfg.projector_out, cfg.projector_hidden],
            cfg.projector_hidden,
            cfg.projector_out,
        );

        ParameterSet { entries }
    }

    /// Re-initializes the given entries from a fresh seed (used to give each
    /// client its own personalized decoder and projector start).
    pub fn reinit_entries(&self, params: &mut ParameterSet, indices: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let upsample_layers = self.cfg.decoder_widths.len();
        for &i in indices {
            let e = &mut params.entries_mut()[i];
            if e.name.ends_with(".bias") {
                e.tensor = Tensor::zeros(e.tensor.shape().to_vec());
                continue;
            }
            let shape = e.tensor.shape().to_vec();
            let fan_in = match (e.segment, shape.len()) {
                // transposed conv (Cin, Cout, kh, kw): input channels first
                (Segment::Decoder, 4) if e.layer < upsample_layers => {
                    shape[0] * shape[2] * shape[3]
                }
                // plain conv (Cout, Cin, kh, kw)
                (_, 4) => shape[1] * shape[2] * shape[3],
                // linear (Out, In)
                _ => shape[1],
            };
            let s = (6.0 / fan_in as f64).sqrt();
            e.tensor = Tensor::uniform(shape, -s, s, &mut rng);
        }
    }

    /// Binds the given segments as graph leaves; the returned map routes
    /// gradients back to parameter entries after `backward`.
    pub fn bind_segments(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        segments: &[Segment],
    ) -> BoundParams {
        self.bind(g, params, segments)
    }

    /// Builds the encoder+projector path for one image against an existing
    /// binding, so several views can share parameters in one graph.
    pub fn project_from(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        bound: &BoundParams,
        image: &Tensor,
    ) -> Result<ValueId> {
        self.check_image(image)?;
        let x = g.input(image);
        let acts = self.encoder_graph(g, params, bound, x)?;
        self.projector_graph(g, params, bound, *acts.last().unwrap())
    }

    fn bind(&self, g: &mut Graph, params: &ParameterSet, segments: &[Segment]) -> BoundParams {
        let ids = params
            .entries()
            .iter()
            .map(|e| {
                if segments.contains(&e.segment) {
                    Some(g.input(&e.tensor))
                } else {
                    None
                }
            })
            .collect();
        BoundParams { ids }
    }

    fn entry_id(&self, params: &ParameterSet, bound: &BoundParams, name: &str) -> ValueId {
        let idx = params
            .entries()
            .iter()
            .position(|e| e.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing"));
        bound.ids[idx].unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Builds the encoder graph; returns per-stage activations (post-relu),
    /// the last being the bottleneck.
    fn encoder_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        bound: &BoundParams,
        x: ValueId,
    ) -> Result<Vec<ValueId>> {
        let mut acts = Vec::new();
        let mut cur = x;
        for i in 0..self.cfg.encoder_widths.len() {
            let w = self.entry_id(params, bound, &format!("enc.{i}.weight"));
            let b = self.entry_id(params, bound, &format!("enc.{i}.bias"));
            let conv = g.conv2d(cur, w, b, 2, 1)?;
            cur = g.relu(conv)?;
            acts.push(cur);
        }
        Ok(acts)
    }

    /// Decoder + classifier from the bottleneck; returns per-pixel class
    /// probabilities of shape (num_classes, side, side).
    fn decoder_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        bound: &BoundParams,
        encoder_acts: &[ValueId],
    ) -> Result<ValueId> {
        let l = self.cfg.decoder_widths.len();
        let mut cur = *encoder_acts.last().expect("encoder has stages");
        for j in 0..l {
            let w = self.entry_id(params, bound, &format!("dec.{j}.weight"));
            let b = self.entry_id(params, bound, &format!("dec.{j}.bias"));
            let up = g.conv_transpose2d(cur, w, b, 2, 0)?;
            let up = if self.cfg.skip_connections && j + 2 <= l {
                // encoder activation at the same resolution
                g.add(up, encoder_acts[l - 2 - j])?
            } else {
                up
            };
            cur = g.relu(up)?;
        }
        let w = self.entry_id(params, bound, &format!("dec.{l}.weight"));
        let b = self.entry_id(params, bound, &format!("dec.{l}.bias"));
        let logits = g.conv2d(cur, w, b, 1, 0)?;
        g.softmax_channels(logits)
    }

    /// Projector from the bottleneck; returns the embedding vector.
    fn projector_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        bound: &BoundParams,
        bottleneck: ValueId,
    ) -> Result<ValueId> {
        let pooled = g.global_avg_pool(bottleneck)?;
        let w0 = self.entry_id(params, bound, "proj.0.weight");
        let b0 = self.entry_id(params, bound, "proj.0.bias");
        let h = g.linear(pooled, w0, b0)?;
        let h = g.relu(h)?;
        let w1 = self.entry_id(params, bound, "proj.1.weight");
        let b1 = self.entry_id(params, bound, "proj.1.bias");
        g.linear(h, w1, b1)
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let want = [self.cfg.input_channels, self.cfg.image_side, self.cfg.image_side];
        if image.shape() != want {
            return Err(Error::shape(
                "SegNet",
                format!("image shape {:?}, model expects {:?}", image.shape(), want),
            ));
        }
        Ok(())
    }

    /// Graph-building entry point for training the segmentation path.
    /// Binds encoder+decoder parameters and returns (bound, probabilities).
    pub fn segment_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        image: &Tensor,
    ) -> Result<(BoundParams, ValueId)> {
        self.check_image(image)?;
        let bound = self.bind(g, params, &[Segment::Encoder, Segment::Decoder]);
        let x = g.input(image);
        let acts = self.encoder_graph(g, params, &bound, x)?;
        let probs = self.decoder_graph(g, params, &bound, &acts)?;
        Ok((bound, probs))
    }

    /// Graph-building entry point for the self-supervised path. Binds
    /// encoder+projector parameters and returns (bound, embedding).
    pub fn project_graph(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        image: &Tensor,
    ) -> Result<(BoundParams, ValueId)> {
        self.check_image(image)?;
        let bound = self.bind(g, params, &[Segment::Encoder, Segment::Projector]);
        let x = g.input(image);
        let acts = self.encoder_graph(g, params, &bound, x)?;
        let emb = self.projector_graph(g, params, &bound, *acts.last().unwrap())?;
        Ok((bound, emb))
    }

    /// Per-pixel class probabilities, (num_classes, side, side); channel sums
    /// are 1 at every pixel.
    pub fn forward_segment(&self, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (_, probs) = self.segment_graph(&mut g, params, image)?;
        Ok(g.tensor(probs))
    }

    /// Embedding of length `projector_out`: global-average-pooled encoder
    /// output through the 2-layer projector MLP.
    pub fn forward_project(&self, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (_, emb) = self.project_graph(&mut g, params, image)?;
        Ok(g.tensor(emb))
    }

    /// Encoder output feature map, (bottleneck_channels, side/2^L, side/2^L).
    pub fn forward_encoder(&self, params: &ParameterSet, image: &Tensor) -> Result<Tensor> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, params, &[Segment::Encoder]);
        let x = g.input(image);
        let acts = self.encoder_graph(&mut g, params, &bound, x)?;
        Ok(g.tensor(*acts.last().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            input_channels: 1,
            image_side: 8,
            encoder_widths: vec![4, 6],
            decoder_widths: vec![4, 4],
            num_classes: 2,
            projector_hidden: 8,
            projector_out: 5,
            skip_connections: false,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let net = SegNet::new(small_cfg()).unwrap();
        let a = net.init_params(42);
        let b = net.init_params(42);
        assert_eq!(a.digest(&a.all_indices()), b.digest(&b.all_indices()));
        let c = net.init_params(43);
        assert_ne!(a.digest(&a.all_indices()), c.digest(&c.all_indices()));
    }

    #[test]
    fn encoder_output_spatial_size() {
        // encoder_widths [8,16] on a 32-pixel side: two 2x downsamplings -> 8x8.
        let mut cfg = ModelConfig::benchmark_default();
        cfg.encoder_widths = vec![8, 16];
        cfg.image_side = 32;
        assert_eq!(cfg.bottleneck_side(), 8);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let net = SegNet::new(small_cfg()).unwrap();
        let params = net.init_params(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = Tensor::uniform(vec![1, 8, 8], 0.0, 1.0, &mut rng);
        let probs = net.forward_segment(&params, &img).unwrap();
        assert_eq!(probs.shape(), &[2, 8, 8]);
        for p in 0..64 {
            let s = probs.data()[p] + probs.data()[64 + p];
            assert!((s - 1.0).abs() < 1e-9);
            // binary: channel 1 is the complement of channel 0
            assert!((probs.data()[64 + p] - (1.0 - probs.data()[p])).abs() < 1e-9);
        }
    }

    #[test]
    fn projector_output_length_and_determinism() {
        let net = SegNet::new(small_cfg()).unwrap();
        let params = net.init_params(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::uniform(vec![1, 8, 8], 0.0, 1.0, &mut rng);
        let e1 = net.forward_project(&params, &img).unwrap();
        let e2 = net.forward_project(&params, &img).unwrap();
        assert_eq!(e1.shape(), &[5]);
        assert_eq!(e1, e2);
    }

    #[test]
    fn zero_projector_gives_zero_embedding() {
        let net = SegNet::new(small_cfg()).unwrap();
        let mut params = net.init_params(1);
        for i in params.segment_indices(Segment::Projector) {
            let e = &mut params.entries_mut()[i];
            e.tensor = Tensor::zeros(e.tensor.shape().to_vec());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::uniform(vec![1, 8, 8], 0.0, 1.0, &mut rng);
        let emb = net.forward_project(&params, &img).unwrap();
        assert!(emb.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn partition_is_disjoint_and_exhaustive() {
        let net = SegNet::new(small_cfg()).unwrap();
        let params = net.init_params(7);
        for boundary in [
            PartitionBoundary::AllDecoder,
            PartitionBoundary::LastKLayers(1),
            PartitionBoundary::LastKLayers(2),
            PartitionBoundary::LastKLayers(3),
        ] {
            let (shared, personal) = params.partition(boundary).unwrap();
            let mut seen = std::collections::HashSet::new();
            for &i in shared.iter().chain(&personal) {
                assert!(seen.insert(i), "index {i} in both views");
                assert_ne!(params.entries()[i].segment, Segment::Projector);
            }
            let non_proj: usize = params
                .entries()
                .iter()
                .filter(|e| e.segment != Segment::Projector)
                .count();
            assert_eq!(seen.len(), non_proj);
        }
    }

    #[test]
    fn last_k_counts_layers_not_tensors() {
        let net = SegNet::new(small_cfg()).unwrap();
        let params = net.init_params(7);
        // 3 decoder layers (2 tconvs + classifier); last_1 personalizes only
        // the classifier's weight+bias.
        let (shared, personal) = params.partition(PartitionBoundary::LastKLayers(1)).unwrap();
        assert_eq!(personal.len(), 2);
        let personal_names: Vec<&str> = personal
            .iter()
            .map(|&i| params.entries()[i].name.as_str())
            .collect();
        assert!(personal_names.contains(&"dec.2.weight"));
        assert!(personal_names.contains(&"dec.2.bias"));
        // shared covers both encoder convs and the first two decoder layers
        assert_eq!(shared.len(), 4 + 4);
    }

    #[test]
    fn last_k_out_of_range_is_rejected() {
        let net = SegNet::new(small_cfg()).unwrap();
        let params = net.init_params(7);
        assert!(params.partition(PartitionBoundary::LastKLayers(4)).is_err());
    }

    #[test]
    fn skip_connections_validate_width_mirror() {
        let mut cfg = small_cfg();
        cfg.skip_connections = true;
        // decoder stage 0 must match encoder stage 0's width (4): ok
        assert!(cfg.validate().is_ok());
        cfg.decoder_widths = vec![6, 4];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn skip_forward_runs() {
        let mut cfg = small_cfg();
        cfg.skip_connections = true;
        let net = SegNet::new(cfg).unwrap();
        let params = net.init_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::uniform(vec![1, 8, 8], 0.0, 1.0, &mut rng);
        let probs = net.forward_segment(&params, &img).unwrap();
        assert_eq!(probs.shape(), &[2, 8, 8]);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_bytes() {
        let net = SegNet::new(small_cfg()).unwrap();
        let params = net.init_params(11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        params.save(&path).unwrap();
        let mut fresh = net.init_params(99);
        fresh.load_into(&path).unwrap();
        assert_eq!(
            params.digest(&params.all_indices()),
            fresh.digest(&fresh.all_indices())
        );
    }
}
