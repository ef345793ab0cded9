//! The federation engine: client state, round schedules for both protocol
//! variants and the baselines, equal-weight aggregation of shared
//! parameters, communication accounting, and the frozen-encoder domain
//! adaptation procedure.
//!
//! Communication is simulated in-process; the ledger captures exactly what a
//! transport would move. Within a round, client-local stages run in parallel
//! (each client owns its state and RNG streams), and aggregation sums in
//! client-index order, so results are identical for serial and parallel
//! execution.

mod ledger;

pub use ledger::{CommLedger, Direction, BYTES_PER_ELEMENT};

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{augment_pair, AugmentationSpec, Sample};
use crate::error::{Error, Result};
use crate::eval::{aggregate_metrics, embedding_variance, eval_dice, MetricsRecord};
use crate::objectives::{ema_update, lfe_loss_graph, supervised_loss_graph, EmaConfig};
use crate::segnet::{ParameterSet, PartitionBoundary, SegNet, Segment};
use crate::tensor::{Graph, SgdState};

/// Protocols the engine can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Four stages: feature enhancement, aggregation, supervised learning,
    /// aggregation. Two aggregation events per round.
    Pflfe,
    /// Fast-converging variant: both local stages back to back, then a
    /// single aggregation event per round.
    FcPflfe,
    /// Full-model (encoder+decoder) averaging each round.
    FedAvg,
    /// FedAvg, then per-client supervised fine-tuning with no further
    /// aggregation.
    FedAvgFt,
    /// Each client trains in isolation; no communication at all.
    LocalOnly,
    /// One model trained on the pooled data of all clients.
    Centralized,
    /// pFLFE with the enhancement stage and its aggregation removed; one
    /// aggregation event per round.
    DecoupledNoLfe,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::Pflfe,
        Protocol::FcPflfe,
        Protocol::FedAvg,
        Protocol::FedAvgFt,
        Protocol::LocalOnly,
        Protocol::Centralized,
        Protocol::DecoupledNoLfe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Pflfe => "pflfe",
            Protocol::FcPflfe => "fc_pflfe",
            Protocol::FedAvg => "fedavg",
            Protocol::FedAvgFt => "fedavg_ft",
            Protocol::LocalOnly => "local_only",
            Protocol::Centralized => "centralized",
            Protocol::DecoupledNoLfe => "decoupled_no_lfe",
        }
    }

    /// Aggregation events per round.
    pub fn aggregations_per_round(self) -> usize {
        match self {
            Protocol::Pflfe => 2,
            Protocol::FcPflfe | Protocol::FedAvg | Protocol::FedAvgFt | Protocol::DecoupledNoLfe => 1,
            Protocol::LocalOnly | Protocol::Centralized => 0,
        }
    }

    fn is_federated(self) -> bool {
        !matches!(self, Protocol::Centralized)
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}

/// Declarative round schedule.
#[derive(Clone, Debug)]
pub struct RoundPlan {
    pub protocol: Protocol,
    pub lfe_epochs: usize,
    pub sup_epochs: usize,
    pub total_rounds: usize,
    pub boundary: PartitionBoundary,
}

impl RoundPlan {
    pub fn validate(&self) -> Result<()> {
        if self.lfe_epochs == 0 || self.sup_epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.total_rounds == 0 {
            return Err(Error::Config("total_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Local-training hyperparameters shared by all protocols.
#[derive(Clone, Debug)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub ema_decay: f64,
    /// Stage-1 learning-rate multiplier relative to the supervised stage.
    pub lfe_lr_scale: f64,
    /// Fine-tuning budget for FedAvg+FT and domain adaptation.
    pub finetune_epochs: usize,
    pub aug_a: AugmentationSpec,
    pub aug_a_prime: AugmentationSpec,
    /// Evaluate after the final aggregation of each round (the default), or
    /// just before it.
    pub eval_after_aggregation: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 8,
            ema_decay: 0.99,
            lfe_lr_scale: 1.0,
            finetune_epochs: 5,
            aug_a: AugmentationSpec::default_a(),
            aug_a_prime: AugmentationSpec::default_a_prime(),
            eval_after_aggregation: true,
        }
    }
}

/// One silo: its data, personalized parameters (the projector persists
/// across rounds), optimizer state, and RNG seed. The EMA target network
/// exists only while the feature-enhancement stage runs.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Encoder + decoder + projector entries.
    pub params: ParameterSet,
    /// Encoder+projector copy driven by EMA; absent outside stage 1.
    pub target: Option<ParameterSet>,
    pub optimizer: SgdState,
    pub seed: u64,
}

/// Per-client statistics from one feature-enhancement stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct LfeStats {
    pub mean_loss: f64,
    /// Collapse monitor: variance of online embeddings across the stage.
    pub embedding_variance: f64,
}

/// Everything a finished run reports.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub protocol: Protocol,
    pub records: Vec<MetricsRecord>,
    /// Cumulative aggregation events by the end of each round.
    pub agg_events_cum: Vec<usize>,
    /// Mean stage-1 loss per round per client (empty for protocols without
    /// the enhancement stage).
    pub lfe_stats: Vec<Vec<LfeStats>>,
    /// `cross_dice[i][j]`: client i's model on client j's test set; present
    /// only for the isolation baseline.
    pub cross_dice: Option<Vec<Vec<f64>>>,
}

/// Outcome of one frozen-encoder adaptation to an unseen client.
#[derive(Clone, Copy, Debug)]
pub struct DomainAdaptOutcome {
    pub dice: f64,
    /// Encoder bytes identical before and after fine-tuning.
    pub encoder_unchanged: bool,
}

const TAG_GLOBAL_INIT: u64 = 0x01;
const TAG_CLIENT: u64 = 0x02;
const TAG_CLIENT_INIT: u64 = 0x03;
const TAG_LFE: u64 = 0x04;
const TAG_SUP: u64 = 0x05;
const TAG_FEATURES: u64 = 0x06;
const TAG_ADAPT: u64 = 0x07;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    let mut x = z;
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic seed derivation: chains splitmix64 over the tag sequence.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = splitmix64(master);
    for &t in tags {
        z = splitmix64(z ^ t.wrapping_mul(0x9E3779B97F4A7C15));
    }
    z
}

/// Label for the shared view crossing the wire.
fn shared_label(boundary: PartitionBoundary, decoder_layers: usize) -> String {
    match boundary {
        PartitionBoundary::AllDecoder => "encoder".to_string(),
        PartitionBoundary::LastKLayers(k) => {
            format!("encoder+dec0..{}", decoder_layers.saturating_sub(k))
        }
    }
}

/// The whole simulated federation.
pub struct FederationState {
    pub net: SegNet,
    pub clients: Vec<ClientState>,
    pub plan: RoundPlan,
    pub train: TrainParams,
    pub ledger: CommLedger,
    pub round: usize,
    master_seed: u64,
}

/// Builds a federation: shared segments identical across clients (global
/// seed), personalized segments and projectors per-client, ledger zeroed.
pub fn init_federation(
    net: SegNet,
    plan: RoundPlan,
    train: TrainParams,
    datasets: Vec<(Vec<Sample>, Vec<Sample>)>,
    master_seed: u64,
) -> Result<FederationState> {
    plan.validate()?;
    let num_clients = datasets.len();
    if plan.protocol.is_federated() && plan.protocol != Protocol::LocalOnly && num_clients < 2 {
        return Err(Error::Config(format!(
            "federated protocols need at least 2 clients, got {num_clients}"
        )));
    }
    if num_clients == 0 {
        return Err(Error::Config("need at least 1 client".into()));
    }

    let global = net.init_params(derive_seed(master_seed, &[TAG_GLOBAL_INIT]));
    // Validate the boundary once against the architecture.
    let (_, personal) = global.partition(plan.boundary)?;

    let mut clients = Vec::with_capacity(num_clients);
    for (id, (train_data, test_data)) in datasets.into_iter().enumerate() {
        if train_data.is_empty() || test_data.is_empty() {
            return Err(Error::Data(format!("client {id} has an empty dataset")));
        }
        let mut params = global.clone();
        let mut personal_and_proj = personal.clone();
        personal_and_proj.extend(params.segment_indices(Segment::Projector));
        net.reinit_entries(
            &mut params,
            &personal_and_proj,
            derive_seed(master_seed, &[TAG_CLIENT_INIT, id as u64]),
        );
        clients.push(ClientState {
            id,
            train: train_data,
            test: test_data,
            params,
            target: None,
            optimizer: SgdState::new(train.learning_rate, train.momentum)?,
            seed: derive_seed(master_seed, &[TAG_CLIENT, id as u64]),
        });
    }

    Ok(FederationState {
        net,
        clients,
        plan,
        train,
        ledger: CommLedger::new(),
        round: 0,
        master_seed,
    })
}

/// One stage of feature enhancement on one client: two augmented views per
/// sample through the online and EMA-target branches, SGD on the online
/// encoder+projector only, target discarded at the end.
pub fn local_feature_enhancement(
    net: &SegNet,
    client: &mut ClientState,
    epochs: usize,
    train: &TrainParams,
    stage_seed: u64,
) -> Result<LfeStats> {
    if client.train.is_empty() {
        return Err(Error::Protocol(format!("client {} has no train data", client.id)));
    }
    // The target branch starts as a copy of the online network.
    client.target = Some(client.params.clone_segments(&[Segment::Encoder, Segment::Projector]));
    let ema = EmaConfig::new(train.ema_decay)?;
    let step_indices = {
        let mut v = client.params.segment_indices(Segment::Encoder);
        v.extend(client.params.segment_indices(Segment::Projector));
        v
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut embeddings: Vec<Vec<f64>> = Vec::new();

    let base_lr = client.optimizer.learning_rate();
    client.optimizer.set_learning_rate(base_lr * train.lfe_lr_scale);
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..client.train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            for &si in batch {
                let sample = &client.train[si];
                let (v, vp) = augment_pair(sample, &train.aug_a, &train.aug_a_prime, &mut rng);
                let target = client.target.as_ref().expect("created above");
                let t_v = net.forward_project(target, &v)?;
                let t_vp = net.forward_project(target, &vp)?;

                let mut g = Graph::new();
                let bound = net.bind_segments(&mut g, &client.params, &[Segment::Encoder, Segment::Projector]);
                let o_v = net.project_from(&mut g, &client.params, &bound, &v)?;
                let o_vp = net.project_from(&mut g, &client.params, &bound, &vp)?;
                let l = lfe_loss_graph(&mut g, o_v, &t_vp)?;
                let lp = lfe_loss_graph(&mut g, o_vp, &t_v)?;
                let total = g.add(l, lp)?;
                g.backward(total)?;
                bound.accumulate_grads(&g, &mut client.params, scale);

                loss_sum += g.data(total)[0];
                loss_count += 1;
                embeddings.push(g.data(o_v).to_vec());
            }
            client.params.sgd_step(&mut client.optimizer, &step_indices)?;
            let target = client.target.as_mut().expect("created above");
            ema_update(target, &client.params, ema)?;
        }
    }

    client.optimizer.set_learning_rate(base_lr);
    // Remove the target after the stage; only the projector is retained.
    client.target = None;
    Ok(LfeStats {
        mean_loss: loss_sum / loss_count.max(1) as f64,
        embedding_variance: embedding_variance(&embeddings),
    })
}

/// One supervised stage on one client: Dice+CE over encoder+decoder; the
/// projector is untouched.
pub fn local_supervised(
    net: &SegNet,
    client: &mut ClientState,
    epochs: usize,
    train: &TrainParams,
    stage_seed: u64,
) -> Result<f64> {
    if client.train.is_empty() {
        return Err(Error::Protocol(format!("client {} has no train data", client.id)));
    }
    let step_indices = {
        let mut v = client.params.segment_indices(Segment::Encoder);
        v.extend(client.params.segment_indices(Segment::Decoder));
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;

    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..client.train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(train.batch_size.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            for &si in batch {
                let sample = &client.train[si];
                let mut g = Graph::new();
                let (bound, probs) = net.segment_graph(&mut g, &client.params, &sample.image)?;
                let loss = supervised_loss_graph(&mut g, probs, &sample.mask)?;
                g.backward(loss)?;
                bound.accumulate_grads(&g, &mut client.params, scale);
                loss_sum += g.data(loss)[0];
                loss_count += 1;
            }
            client.params.sgd_step(&mut client.optimizer, &step_indices)?;
        }
    }
    Ok(loss_sum / loss_count.max(1) as f64)
}

/// Equal-weight elementwise mean of the given entries across clients,
/// broadcast back to every client. Sums in client-index order regardless of
/// how stages were parallelized.
fn aggregate_entries(clients: &mut [ClientState], indices: &[usize]) -> Result<()> {
    let n = clients.len() as f64;
    for &idx in indices {
        let shape = clients[0].params.entries()[idx].tensor.shape().to_vec();
        for c in clients.iter() {
            if c.params.entries()[idx].tensor.shape() != shape {
                return Err(Error::shape(
                    "aggregate_shared",
                    format!(
                        "client {} entry {} shape {:?} != {:?}",
                        c.id,
                        clients[0].params.entries()[idx].name,
                        c.params.entries()[idx].tensor.shape(),
                        shape
                    ),
                ));
            }
        }
        let len = clients[0].params.entries()[idx].tensor.len();
        let mut mean = vec![0.0; len];
        for c in clients.iter() {
            for (m, v) in mean.iter_mut().zip(c.params.entries()[idx].tensor.data()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for c in clients.iter_mut() {
            c.params.entries_mut()[idx].tensor.data_mut().copy_from_slice(&mean);
        }
    }
    Ok(())
}

/// Aggregates the shared view under `boundary` and records the event.
/// Optimizer momentum is dropped afterwards: the old velocity points away
/// from the replaced parameters.
pub fn aggregate_shared(
    clients: &mut [ClientState],
    boundary: PartitionBoundary,
    ledger: &mut CommLedger,
    round: usize,
) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::Protocol("no clients to aggregate".into()));
    }
    let (shared, _) = clients[0].params.partition(boundary)?;
    let label = shared_label(boundary, decoder_layer_count(&clients[0].params));
    let elements = clients[0].params.element_count(&shared);
    aggregate_entries(clients, &shared)?;
    for c in clients.iter_mut() {
        c.optimizer.reset_velocity();
    }
    let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    ledger.record_aggregation(round, &ids, &label, elements);
    Ok(())
}

/// Aggregates the full encoder+decoder model (FedAvg) and records the event.
pub fn aggregate_full_model(
    clients: &mut [ClientState],
    ledger: &mut CommLedger,
    round: usize,
) -> Result<()> {
    if clients.is_empty() {
        return Err(Error::Protocol("no clients to aggregate".into()));
    }
    let mut indices = clients[0].params.segment_indices(Segment::Encoder);
    indices.extend(clients[0].params.segment_indices(Segment::Decoder));
    let elements = clients[0].params.element_count(&indices);
    aggregate_entries(clients, &indices)?;
    for c in clients.iter_mut() {
        c.optimizer.reset_velocity();
    }
    let ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    ledger.record_aggregation(round, &ids, "encoder+decoder", elements);
    Ok(())
}

fn decoder_layer_count(params: &ParameterSet) -> usize {
    params
        .entries()
        .iter()
        .filter(|e| e.segment == Segment::Decoder)
        .map(|e| e.layer + 1)
        .max()
        .unwrap_or(0)
}

impl FederationState {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Per-client Dice lists on each client's own test set with its own
    /// (personalized) model.
    pub fn evaluate(&self) -> Result<Vec<Vec<f64>>> {
        let num_classes = self.net.config().num_classes;
        self.clients
            .par_iter()
            .map(|c| {
                c.test
                    .iter()
                    .map(|s| {
                        let probs = self.net.forward_segment(&c.params, &s.image)?;
                        eval_dice(&probs, &s.mask, num_classes)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    }

    /// Dice of `params` on one client's test set.
    fn evaluate_params_on(&self, params: &ParameterSet, test: &[Sample]) -> Result<Vec<f64>> {
        let num_classes = self.net.config().num_classes;
        test.iter()
            .map(|s| {
                let probs = self.net.forward_segment(params, &s.image)?;
                eval_dice(&probs, &s.mask, num_classes)
            })
            .collect()
    }

    fn record_from(&self, round: usize, dice_lists: Vec<Vec<f64>>) -> Result<MetricsRecord> {
        let counts: Vec<usize> = self.clients.iter().map(|c| c.test.len()).collect();
        let (acli, aimg, vdice) = aggregate_metrics(&dice_lists, &counts)?;
        let per_client: Vec<f64> = dice_lists
            .iter()
            .map(|l| l.iter().sum::<f64>() / l.len() as f64)
            .collect();
        Ok(MetricsRecord {
            round,
            per_client_dice: per_client,
            dice_acli: acli,
            dice_aimg: aimg,
            vdice_acli: vdice,
            comm_cumulative_bytes: self.ledger.cumulative_bytes_through(round),
        })
    }

    fn parallel_lfe(&mut self, round: usize) -> Result<Vec<LfeStats>> {
        let net = &self.net;
        let train = &self.train;
        let plan_epochs = self.plan.lfe_epochs;
        self.clients
            .par_iter_mut()
            .map(|c| {
                let seed = derive_seed(c.seed, &[TAG_LFE, round as u64]);
                local_feature_enhancement(net, c, plan_epochs, train, seed)
            })
            .collect()
    }

    fn parallel_supervised(&mut self, round: usize, epochs: usize) -> Result<Vec<f64>> {
        let net = &self.net;
        let train = &self.train;
        self.clients
            .par_iter_mut()
            .map(|c| {
                let seed = derive_seed(c.seed, &[TAG_SUP, round as u64]);
                local_supervised(net, c, epochs, train, seed)
            })
            .collect()
    }

    /// Runs one round of the planned protocol and returns its metrics.
    pub fn run_round(&mut self) -> Result<(MetricsRecord, Vec<LfeStats>)> {
        let round = self.round + 1;
        let mut lfe_stats = Vec::new();
        let eval_after = self.train.eval_after_aggregation;
        let boundary = self.plan.boundary;
        let sup_epochs = self.plan.sup_epochs;

        let dice_lists = match self.plan.protocol {
            Protocol::Pflfe => {
                lfe_stats = self.parallel_lfe(round)?;
                aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                self.parallel_supervised(round, sup_epochs)?;
                if eval_after {
                    aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                    self.evaluate()?
                } else {
                    let d = self.evaluate()?;
                    aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                    d
                }
            }
            Protocol::FcPflfe => {
                lfe_stats = self.parallel_lfe(round)?;
                self.parallel_supervised(round, sup_epochs)?;
                if eval_after {
                    aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                    self.evaluate()?
                } else {
                    let d = self.evaluate()?;
                    aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                    d
                }
            }
            Protocol::FedAvg | Protocol::FedAvgFt => {
                self.parallel_supervised(round, sup_epochs)?;
                if eval_after {
                    aggregate_full_model(&mut self.clients, &mut self.ledger, round)?;
                    self.evaluate()?
                } else {
                    let d = self.evaluate()?;
                    aggregate_full_model(&mut self.clients, &mut self.ledger, round)?;
                    d
                }
            }
            Protocol::DecoupledNoLfe => {
                self.parallel_supervised(round, sup_epochs)?;
                if eval_after {
                    aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                    self.evaluate()?
                } else {
                    let d = self.evaluate()?;
                    aggregate_shared(&mut self.clients, boundary, &mut self.ledger, round)?;
                    d
                }
            }
            Protocol::LocalOnly => {
                self.parallel_supervised(round, sup_epochs)?;
                self.evaluate()?
            }
            Protocol::Centralized => {
                self.centralized_round(round)?;
                let model = self.clients[0].params.clone();
                self.clients
                    .iter()
                    .map(|c| self.evaluate_params_on(&model, &c.test))
                    .collect::<Result<Vec<_>>>()?
            }
        };

        self.round = round;
        let record = self.record_from(round, dice_lists)?;
        Ok((record, lfe_stats))
    }

    /// One centralized epoch set: client 0's model trained over the pooled
    /// training data of all clients.
    fn centralized_round(&mut self, round: usize) -> Result<()> {
        let pooled: Vec<Sample> = self.clients.iter().flat_map(|c| c.train.clone()).collect();
        let net = self.net.clone();
        let train = self.train.clone();
        let epochs = self.plan.sup_epochs;
        let c0 = &mut self.clients[0];
        let seed = derive_seed(c0.seed, &[TAG_SUP, round as u64]);
        let saved = std::mem::take(&mut c0.train);
        c0.train = pooled;
        let r = local_supervised(&net, c0, epochs, &train, seed);
        c0.train = saved;
        r.map(|_| ())
    }

    /// Runs the full schedule.
    pub fn run(&mut self) -> Result<RunOutput> {
        let mut records = Vec::with_capacity(self.plan.total_rounds);
        let mut agg_events_cum = Vec::with_capacity(self.plan.total_rounds);
        let mut lfe_all = Vec::new();
        for _ in 0..self.plan.total_rounds {
            let (rec, lfe) = self.run_round()?;
            records.push(rec);
            agg_events_cum.push(self.ledger.total_events());
            lfe_all.push(lfe);
        }

        // FedAvg+FT: fine-tune every client on its own data after the last
        // aggregation, then re-evaluate the final round's record.
        if self.plan.protocol == Protocol::FedAvgFt {
            let round = self.round;
            let net = &self.net;
            let train = &self.train;
            let epochs = self.train.finetune_epochs.max(1);
            self.clients.par_iter_mut().try_for_each(|c| {
                let seed = derive_seed(c.seed, &[TAG_ADAPT, round as u64]);
                local_supervised(net, c, epochs, train, seed).map(|_| ())
            })?;
            let dice_lists = self.evaluate()?;
            let rec = self.record_from(round, dice_lists)?;
            *records.last_mut().expect("at least one round") = rec;
        }

        // Isolation baseline: cross-client evaluation matrix.
        let cross_dice = if self.plan.protocol == Protocol::LocalOnly {
            let matrix: Result<Vec<Vec<f64>>> = self
                .clients
                .par_iter()
                .map(|ci| {
                    self.clients
                        .iter()
                        .map(|cj| {
                            let dices = self.evaluate_params_on(&ci.params, &cj.test)?;
                            Ok(dices.iter().sum::<f64>() / dices.len() as f64)
                        })
                        .collect()
                })
                .collect();
            Some(matrix?)
        } else {
            None
        };

        Ok(RunOutput {
            protocol: self.plan.protocol,
            records,
            agg_events_cum,
            lfe_stats: lfe_all,
            cross_dice,
        })
    }

    /// Feature samples for the KL diagnostics, one (fg, bg) pair per client.
    pub fn feature_samples(&self, max_per_class: usize) -> Result<crate::eval::FeatureSampleSet> {
        let clients: Result<Vec<_>> = self
            .clients
            .par_iter()
            .map(|c| {
                crate::eval::extract_pixel_features(
                    &self.net,
                    &c.params,
                    &c.test,
                    max_per_class,
                    derive_seed(c.seed, &[TAG_FEATURES]),
                )
            })
            .collect();
        Ok(crate::eval::FeatureSampleSet {
            dim: self.net.config().bottleneck_channels(),
            clients: clients?,
        })
    }

    /// The aggregated encoder entries (taken from client 0, which is
    /// byte-identical to every other client right after an aggregation).
    pub fn aggregated_encoder(&self) -> Vec<(String, crate::tensor::Tensor)> {
        self.clients[0]
            .params
            .entries()
            .iter()
            .filter(|e| e.segment == Segment::Encoder)
            .map(|e| (e.name.clone(), e.tensor.clone()))
            .collect()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

/// Copies the federation's aggregated encoder to an unseen client, freezes
/// it, fine-tunes a freshly initialized decoder on the unseen training data,
/// and reports Dice on the unseen test set.
pub fn domain_adapt(
    fed: &FederationState,
    unseen_id: usize,
    unseen_train: &[Sample],
    unseen_test: &[Sample],
    finetune_epochs: usize,
) -> Result<DomainAdaptOutcome> {
    if fed.clients.iter().any(|c| c.id == unseen_id) {
        return Err(Error::Protocol(format!(
            "unseen client {unseen_id} overlaps the training federation"
        )));
    }
    if unseen_train.is_empty() || unseen_test.is_empty() {
        return Err(Error::Data("unseen client needs train and test data".into()));
    }

    let net = &fed.net;
    let mut params = net.init_params(derive_seed(
        fed.master_seed,
        &[TAG_ADAPT, TAG_CLIENT_INIT, unseen_id as u64],
    ));
    for (name, tensor) in fed.aggregated_encoder() {
        let idx = params
            .entries()
            .iter()
            .position(|e| e.name == name)
            .expect("same architecture");
        params.entries_mut()[idx].tensor = tensor;
    }
    let encoder_indices = params.segment_indices(Segment::Encoder);
    let decoder_indices = params.segment_indices(Segment::Decoder);
    let digest_before = params.digest(&encoder_indices);

    let mut optimizer = SgdState::new(fed.train.learning_rate, fed.train.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        fed.master_seed,
        &[TAG_ADAPT, unseen_id as u64],
    ));
    for _ in 0..finetune_epochs {
        let mut order: Vec<usize> = (0..unseen_train.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(fed.train.batch_size.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            for &si in batch {
                let sample = &unseen_train[si];
                let mut g = Graph::new();
                let (bound, probs) = net.segment_graph(&mut g, &params, &sample.image)?;
                let loss = supervised_loss_graph(&mut g, probs, &sample.mask)?;
                g.backward(loss)?;
                bound.accumulate_grads(&g, &mut params, scale);
            }
            // Only the decoder steps; encoder gradients are dropped.
            params.sgd_step(&mut optimizer, &decoder_indices)?;
            for &i in &encoder_indices {
                params.entries_mut()[i].tensor.clear_grad();
            }
        }
    }

    let digest_after = params.digest(&encoder_indices);
    let num_classes = net.config().num_classes;
    let dices: Result<Vec<f64>> = unseen_test
        .iter()
        .map(|s| {
            let probs = net.forward_segment(&params, &s.image)?;
            eval_dice(&probs, &s.mask, num_classes)
        })
        .collect();
    let dices = dices?;
    Ok(DomainAdaptOutcome {
        dice: dices.iter().sum::<f64>() / dices.len() as f64,
        encoder_unchanged: digest_before == digest_after,
    })
}
