//! Federated training: bootstrap of the global model on 4G data, per-client
//! local retraining, averaging of the shared layers, and both an in-process
//! driver and a TCP aggregator/client pair.

mod net;
mod wire;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::score_model;
use crate::nn::{encode_layers, train, DenseOwnership, Dtype, Layer, ModelShape, ModelWeights, TrainConfig};
use crate::preprocess::{PreparedSplit, ScalerMode};
use crate::trace::TraceDataset;

pub use net::{connect_client, serve, serve_on, ClientOptions, FrameLog, LoggedFrame, ServeOptions};
pub use wire::{read_frame, write_frame, Frame, FrameType, WireConfig, MAX_FRAME_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub history: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub epochs_local: usize,
    pub n_rounds: usize,
    pub client_fraction: f64,
    pub seed: u64,
    pub train_fraction: f64,
    pub hidden: usize,
    pub scaler_mode: ScalerMode,
    pub dense_ownership: DenseOwnership,
    /// Average by training-sample count instead of `1/U`.
    pub weighted: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            history: 5,
            horizon: 1,
            sigma: 2.0,
            epochs_local: 25,
            n_rounds: 10,
            client_fraction: 1.0,
            seed: 0,
            train_fraction: 0.7,
            hidden: 128,
            scaler_mode: ScalerMode::MinMax,
            dense_ownership: DenseOwnership::Local,
            weighted: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("history and horizon must be at least 1".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("client fraction {} is outside (0, 1]", self.client_fraction)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidSigma(self.sigma));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("train fraction {} is outside (0, 1)", self.train_fraction)));
        }
        if self.hidden == 0 || self.epochs_local == 0 {
            return Err(Error::InvalidConfig("hidden width and local epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn prepare(&self, ds: &TraceDataset) -> Result<PreparedSplit> {
        PreparedSplit::new(ds, self.sigma, self.history, self.horizon, self.train_fraction, self.scaler_mode)
    }
}

/// Result of training the bootstrap model.
#[derive(Clone, Debug)]
pub struct Bootstrap {
    pub weights: ModelWeights,
    pub loss_curve: Vec<f64>,
    pub test_r2: f64,
    pub test_mae: f64,
}

/// Trains the full model from scratch on the 4G trace. The returned weights
/// carry the 4G scaler.
pub fn train_global_lstm(ds_4g: &TraceDataset, cfg: &RoundConfig, tcfg: &TrainConfig) -> Result<Bootstrap> {
    cfg.validate()?;
    let data = cfg.prepare(ds_4g)?;
    let shape = ModelShape::new(data.train.input_dim, cfg.hidden);
    let mut w = ModelWeights::new(shape, tcfg.seed);
    w.dense_ownership = cfg.dense_ownership;
    let scaled = data.scaler.apply(&data.train)?;
    let (mut weights, loss_curve) = train(&w, &scaled, tcfg)?;
    weights.scaler = Some(data.scaler);
    let (test_r2, test_mae) = score_model(&weights, &data.test)?;
    Ok(Bootstrap { weights, loss_curve, test_r2, test_mae })
}

/// Training seed of one client in one round; identical in every driver.
pub fn client_seed(seed: u64, round: usize, client_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((round as u64).to_le_bytes());
    h.update(client_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// SHA-256 over the f64 `FPW1` encoding of a set of layers.
pub fn layers_checksum(layers: &[Layer]) -> String {
    crate::nn::hex_digest(&encode_layers(layers, Dtype::F64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    /// Final-epoch training MAE in the scaled domain.
    pub train_loss: f64,
    pub sample_count: u64,
    pub test_r2: f64,
    pub test_mae: f64,
}

/// Client-side state. `local` holds θ_u and never leaves the client.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: String,
    pub dataset: TraceDataset,
    pub local: Option<Vec<Layer>>,
    pub scaler: Option<crate::preprocess::Scaler>,
    pub last_metrics: Option<ClientMetrics>,
    /// First round (1-based) in which the client is registered.
    pub join_round: usize,
}

impl ClientState {
    pub fn new(dataset: TraceDataset) -> Self {
        Self {
            client_id: dataset.client_id().to_string(),
            dataset,
            local: None,
            scaler: None,
            last_metrics: None,
            join_round: 1,
        }
    }

    pub fn joining_at(mut self, round: usize) -> Self {
        self.join_round = round.max(1);
        self
    }

    /// The client's current full model: bootstrap shape, given θ_G, own θ_u
    /// (or the bootstrap's when it has not trained yet) and own scaler.
    pub fn assemble(&self, theta_g: &[Layer], bootstrap: &ModelWeights) -> Result<ModelWeights> {
        let mut w = bootstrap.clone();
        w.install_layers(theta_g)?;
        if let Some(local) = &self.local {
            w.install_layers(local)?;
        }
        if let Some(sc) = &self.scaler {
            w.scaler = Some(sc.clone());
        }
        Ok(w)
    }
}

#[derive(Clone, Debug)]
pub enum LocalOutcome {
    Update { candidate: Vec<Layer>, metrics: ClientMetrics },
    Skip(String),
}

/// One client's local step: installs θ_G and its own θ_u, refits the scaler,
/// retrains both parts, keeps the new θ_u and returns the new θ_G candidate.
pub fn client_local_round(
    cs: &mut ClientState,
    theta_g: &[Layer],
    bootstrap: &ModelWeights,
    round: usize,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
) -> Result<LocalOutcome> {
    let data = match cfg.prepare(&cs.dataset) {
        Ok(d) => d,
        Err(e @ (Error::TraceTooShort { .. } | Error::EmptyDataset)) => return Ok(LocalOutcome::Skip(e.to_string())),
        Err(e) => return Err(e),
    };
    if data.train.input_dim != bootstrap.shape().input_dim {
        return Err(Error::ShapeMismatch(format!(
            "client '{}' has {} input channels, model expects {}",
            cs.client_id,
            data.train.input_dim,
            bootstrap.shape().input_dim
        )));
    }
    let mut model = bootstrap.clone();
    model.install_layers(theta_g)?;
    if let Some(local) = &cs.local {
        model.install_layers(local)?;
    }
    let scaled = data.scaler.apply(&data.train)?;
    let local_cfg =
        TrainConfig { epochs: cfg.epochs_local, seed: client_seed(tcfg.seed, round, &cs.client_id), ..tcfg.clone() };
    let (mut trained, curve) = train(&model, &scaled, &local_cfg)?;
    trained.scaler = Some(data.scaler.clone());
    let (test_r2, test_mae) = score_model(&trained, &data.test)?;
    let metrics = ClientMetrics {
        train_loss: *curve.last().expect("at least one epoch"),
        sample_count: data.train.len() as u64,
        test_r2,
        test_mae,
    };
    cs.local = Some(trained.local_layers());
    cs.scaler = Some(data.scaler);
    cs.last_metrics = Some(metrics.clone());
    Ok(LocalOutcome::Update { candidate: trained.global_layers(), metrics })
}

fn check_same_layout(a: &[Layer], b: &[Layer]) -> Result<()> {
    if a.len() != b.len()
        || a.iter().zip(b).any(|(x, y)| x.name != y.name || x.dims != y.dims || x.values.len() != y.values.len())
    {
        return Err(Error::ShapeMismatch("candidates disagree on layer names or dimensions".into()));
    }
    Ok(())
}

/// Elementwise `1/U` mean of the candidates.
pub fn fed_average(candidates: &[Vec<Layer>]) -> Result<Vec<Layer>> {
    let weights = vec![1.0; candidates.len()];
    fed_average_weighted(candidates, &weights)
}

/// Elementwise mean weighted by `weights`. Computed as a running mean so
/// identical candidates come back bit-for-bit.
pub fn fed_average_weighted(candidates: &[Vec<Layer>], weights: &[f64]) -> Result<Vec<Layer>> {
    let (first, rest) = candidates.split_first().ok_or(Error::EmptyRound)?;
    if weights.len() != candidates.len() {
        return Err(Error::LengthMismatch { left: candidates.len(), right: weights.len() });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidConfig("averaging weights must be positive".into()));
    }
    for c in rest {
        check_same_layout(first, c)?;
    }
    let mut mean = first.clone();
    let mut total = weights[0];
    for (c, &wk) in rest.iter().zip(&weights[1..]) {
        total += wk;
        let frac = wk / total;
        for (m, l) in mean.iter_mut().zip(c) {
            for (mv, lv) in m.values.iter_mut().zip(&l.values) {
                *mv += frac * (lv - *mv);
            }
        }
    }
    Ok(mean)
}

/// Server-side state.
#[derive(Clone, Debug)]
pub struct GlobalState {
    pub theta_g: Vec<Layer>,
    pub bootstrap: ModelWeights,
    /// Number of completed rounds.
    pub round: usize,
    pub registry: Vec<String>,
}

impl GlobalState {
    pub fn new(bootstrap: ModelWeights) -> Self {
        Self { theta_g: bootstrap.global_layers(), bootstrap, round: 0, registry: Vec::new() }
    }

    pub fn checksum(&self) -> String {
        layers_checksum(&self.theta_g)
    }

    /// Bootstrap model with the current θ_G installed.
    pub fn global_model(&self) -> ModelWeights {
        let mut w = self.bootstrap.clone();
        w.install_layers(&self.theta_g).expect("θ_G keeps the bootstrap layout");
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundMetrics {
    pub client_id: String,
    #[serde(flatten)]
    pub metrics: ClientMetrics,
}

/// One line of the round log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedRoundReport {
    pub round: usize,
    pub participants: Vec<String>,
    pub skipped: Vec<String>,
    pub dropped: Vec<String>,
    pub clients: Vec<ClientRoundMetrics>,
    pub mean_test_r2: f64,
    pub global_checksum: String,
}

impl FedRoundReport {
    fn new(
        round: usize,
        clients: Vec<ClientRoundMetrics>,
        skipped: Vec<String>,
        dropped: Vec<String>,
        checksum: String,
    ) -> Self {
        let finite: Vec<f64> = clients.iter().map(|c| c.metrics.test_r2).filter(|v| v.is_finite()).collect();
        let mean_test_r2 = if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        Self {
            round,
            participants: clients.iter().map(|c| c.client_id.clone()).collect(),
            skipped,
            dropped,
            clients,
            mean_test_r2,
            global_checksum: checksum,
        }
    }
}

/// Appends reports as JSON lines.
pub fn write_report_log<W: Write>(mut out: W, reports: &[FedRoundReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Clients taking part in `round`: `round(f·n)` of the registered ids,
/// at least one, drawn with a generator seeded by `(seed, round)`.
pub fn sample_participants(registered: &[String], fraction: f64, seed: u64, round: usize) -> Vec<String> {
    let mut ids = registered.to_vec();
    ids.sort();
    let n = ids.len();
    if n == 0 {
        return ids;
    }
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    if k == n {
        return ids;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(client_seed(seed, round, "\u{0}sampling"));
    let mut chosen: Vec<String> = ids.choose_multiple(&mut rng, k).cloned().collect();
    chosen.sort();
    chosen
}

pub(crate) fn aggregate(
    gs: &GlobalState,
    updates: &[(String, Vec<Layer>, ClientMetrics)],
    cfg: &RoundConfig,
) -> Result<Vec<Layer>> {
    let cands: Vec<Vec<Layer>> = updates.iter().map(|u| u.1.clone()).collect();
    for c in &cands {
        check_same_layout(&gs.theta_g, c)?;
    }
    if cfg.weighted {
        let w: Vec<f64> = updates.iter().map(|u| u.2.sample_count.max(1) as f64).collect();
        fed_average_weighted(&cands, &w)
    } else {
        fed_average(&cands)
    }
}

/// In-process driver. Runs `cfg.n_rounds` rounds after the ones already in
/// `gs.round`; a client is registered from its `join_round` on.
pub fn run_federated(
    clients: &mut [ClientState],
    gs: &mut GlobalState,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
) -> Result<Vec<FedRoundReport>> {
    cfg.validate()?;
    if clients.is_empty() {
        return Err(Error::InvalidConfig("federation needs at least one client".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in clients.iter() {
        if !seen.insert(c.client_id.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate client id '{}'", c.client_id)));
        }
    }
    let mut reports = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let round = gs.round + 1;
        gs.registry = clients.iter().filter(|c| c.join_round <= round).map(|c| c.client_id.clone()).collect();
        gs.registry.sort();
        let chosen = sample_participants(&gs.registry, cfg.client_fraction, cfg.seed, round);
        let mut updates = Vec::new();
        let mut skipped = Vec::new();
        for id in &chosen {
            let cs = clients.iter_mut().find(|c| &c.client_id == id).expect("registered client");
            match client_local_round(cs, &gs.theta_g, &gs.bootstrap, round, cfg, tcfg)? {
                LocalOutcome::Update { candidate, metrics } => updates.push((id.clone(), candidate, metrics)),
                LocalOutcome::Skip(_) => skipped.push(id.clone()),
            }
        }
        if !updates.is_empty() {
            gs.theta_g = aggregate(gs, &updates, cfg)?;
        }
        gs.round = round;
        let metrics =
            updates.into_iter().map(|(client_id, _, metrics)| ClientRoundMetrics { client_id, metrics }).collect();
        reports.push(FedRoundReport::new(round, metrics, skipped, Vec::new(), gs.checksum()));
    }
    Ok(reports)
}
