//! TCP aggregator and client speaking the frame protocol in `wire`.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::wire::{read_frame, write_frame, Frame, FrameType, WireConfig};
use super::{
    aggregate, check_same_layout, client_local_round, sample_participants, ClientMetrics, ClientRoundMetrics,
    ClientState, FedRoundReport, GlobalState, LocalOutcome, RoundConfig,
};
use crate::error::{Error, Result};
use crate::nn::{decode_layers, encode_layers, Dtype, Layer, ModelWeights, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    ToServer,
    ToClient,
}

#[derive(Clone, Debug)]
pub struct LoggedFrame {
    pub client_id: String,
    pub direction: Direction,
    pub frame_type: FrameType,
    pub bytes: Vec<u8>,
}

/// Shared record of every frame crossing the wire, for auditing.
#[derive(Clone, Debug, Default)]
pub struct FrameLog(Arc<Mutex<Vec<LoggedFrame>>>);

impl FrameLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, client_id: &str, direction: Direction, frame: &Frame, bytes: Vec<u8>) {
        self.0.lock().unwrap().push(LoggedFrame {
            client_id: client_id.to_string(),
            direction,
            frame_type: frame.frame_type(),
            bytes,
        });
    }

    pub fn entries(&self) -> Vec<LoggedFrame> {
        self.0.lock().unwrap().clone()
    }
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub client_count: usize,
    pub registration_timeout: Duration,
    /// Barrier timeout for one round.
    pub round_timeout: Duration,
    pub log: Option<FrameLog>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            client_count: 1,
            registration_timeout: Duration::from_secs(300),
            round_timeout: Duration::from_secs(120),
            log: None,
        }
    }
}

struct Peer {
    id: String,
    stream: TcpStream,
    log: Option<FrameLog>,
}

impl Peer {
    fn send(&mut self, frame: &Frame) -> Result<()> {
        let bytes = write_frame(&mut self.stream, frame)?;
        if let Some(log) = &self.log {
            log.push(&self.id, Direction::ToClient, frame, bytes);
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame> {
        let (frame, bytes) = read_frame(&mut self.stream)?;
        if let Some(log) = &self.log {
            log.push(&self.id, Direction::ToServer, &frame, bytes);
        }
        Ok(frame)
    }
}

enum Reply {
    Update(Vec<Layer>, ClientMetrics),
    Skip,
    Lost,
}

pub fn serve(
    bind_address: &str,
    gs: &mut GlobalState,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
    opts: &ServeOptions,
) -> Result<Vec<FedRoundReport>> {
    serve_on(TcpListener::bind(bind_address)?, gs, cfg, tcfg, opts)
}

fn register(listener: &TcpListener, opts: &ServeOptions) -> Result<BTreeMap<String, Peer>> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + opts.registration_timeout;
    let mut peers = BTreeMap::new();
    while peers.len() < opts.client_count {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(Duration::from_secs(10)))?;
                let mut peer = Peer { id: String::new(), stream, log: opts.log.clone() };
                match peer.recv() {
                    Ok(Frame::Hello { client_id }) => {
                        peer.id = client_id.clone();
                        if peers.contains_key(&client_id) {
                            let _ = peer.send(&Frame::Error {
                                message: format!("client id '{client_id}' is already registered"),
                            });
                        } else {
                            log::info!("registered client {client_id}");
                            peers.insert(client_id, peer);
                        }
                    }
                    Ok(_) => {
                        let _ = peer.send(&Frame::Error { message: "expected HELLO".into() });
                    }
                    Err(e) => log::warn!("dropping connection before HELLO: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(Error::Timeout(format!(
                        "{} of {} clients registered before the deadline",
                        peers.len(),
                        opts.client_count
                    )));
                }
                thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(peers)
}

fn exchange(peer: &mut Peer, config: &Frame, blob: &[u8], expected: &[Layer], timeout: Duration) -> Reply {
    let run = |peer: &mut Peer| -> Result<Reply> {
        peer.stream.set_read_timeout(Some(timeout))?;
        peer.send(config)?;
        peer.send(&Frame::GlobalWeights(blob.to_vec()))?;
        match peer.recv()? {
            Frame::LocalUpdate { blob, sample_count, train_loss, test_r2, test_mae } => {
                let checked =
                    decode_layers(&blob).and_then(|layers| check_same_layout(expected, &layers).map(|_| layers));
                match checked {
                    Ok(layers) => {
                        Ok(Reply::Update(layers, ClientMetrics { train_loss, sample_count, test_r2, test_mae }))
                    }
                    Err(e) => {
                        let _ = peer.send(&Frame::Error { message: format!("rejected update: {e}") });
                        Ok(Reply::Lost)
                    }
                }
            }
            Frame::Skip { reason } => {
                log::info!("client {} skipped: {reason}", peer.id);
                Ok(Reply::Skip)
            }
            other => {
                let _ = peer.send(&Frame::Error { message: format!("unexpected {:?} frame", other.frame_type()) });
                Ok(Reply::Lost)
            }
        }
    };
    run(peer).unwrap_or_else(|e| {
        log::warn!("client {} dropped: {e}", peer.id);
        Reply::Lost
    })
}

/// Aggregator on an already bound listener. Waits for
/// `opts.client_count` registrations, then drives `cfg.n_rounds` rounds.
pub fn serve_on(
    listener: TcpListener,
    gs: &mut GlobalState,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
    opts: &ServeOptions,
) -> Result<Vec<FedRoundReport>> {
    cfg.validate()?;
    let mut peers = register(&listener, opts)?;
    let mut reports = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let round = gs.round + 1;
        let config = Frame::Config(WireConfig {
            history: cfg.history as u32,
            horizon: cfg.horizon as u32,
            sigma: cfg.sigma,
            epochs: cfg.epochs_local as u32,
            round: round as u32,
            seed: tcfg.seed,
        });
        let blob = encode_layers(&gs.theta_g, Dtype::F64);
        let mut dropped = Vec::new();
        let mut attempt = 0;
        let (updates, skipped) = loop {
            gs.registry = peers.keys().cloned().collect();
            let chosen = sample_participants(&gs.registry, cfg.client_fraction, cfg.seed, round);
            let replies: Vec<(String, Reply)> = thread::scope(|s| {
                let handles: Vec<_> = peers
                    .iter_mut()
                    .filter(|(id, _)| chosen.contains(id))
                    .map(|(id, peer)| {
                        let (config, blob, expected) = (&config, &blob, &gs.theta_g);
                        let id = id.clone();
                        s.spawn(move || (id, exchange(peer, config, blob, expected, opts.round_timeout)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("client handler panicked")).collect()
            });
            let mut updates = Vec::new();
            let mut skipped = Vec::new();
            let mut lost = 0;
            for (id, reply) in replies {
                match reply {
                    Reply::Update(layers, metrics) => updates.push((id, layers, metrics)),
                    Reply::Skip => skipped.push(id),
                    Reply::Lost => {
                        peers.remove(&id);
                        dropped.push(id);
                        lost += 1;
                    }
                }
            }
            if updates.is_empty() && lost > 0 {
                attempt += 1;
                if attempt < 2 && !peers.is_empty() {
                    log::warn!("round {round} produced no update; retrying once");
                    continue;
                }
                return Err(Error::EmptyRound);
            }
            break (updates, skipped);
        };
        if !updates.is_empty() {
            gs.theta_g = aggregate(gs, &updates, cfg)?;
        }
        gs.round = round;
        for id in updates.iter().map(|u| &u.0).chain(&skipped) {
            if let Some(peer) = peers.get_mut(id) {
                if peer.send(&Frame::RoundAck).is_err() {
                    log::warn!("client {id} unreachable after round {round}");
                }
            }
        }
        let metrics =
            updates.into_iter().map(|(client_id, _, metrics)| ClientRoundMetrics { client_id, metrics }).collect();
        let report = FedRoundReport::new(round, metrics, skipped, dropped, gs.checksum());
        log::info!("round {round}: mean test R2 {:.2}", report.mean_test_r2);
        reports.push(report);
    }
    for peer in peers.values_mut() {
        let _ = peer.send(&Frame::Shutdown);
    }
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct ClientOptions {
    /// How long to keep retrying the initial connection.
    pub connect_timeout: Duration,
    pub log: Option<FrameLog>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self { connect_timeout: Duration::from_secs(30), log: None }
    }
}

fn connect_with_retry(addr: &str, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    loop {
        let attempt = addr
            .to_socket_addrs()
            .map_err(Error::from)
            .and_then(|mut a| a.next().ok_or_else(|| Error::InvalidConfig(format!("cannot resolve '{addr}'"))))
            .and_then(|sa| TcpStream::connect(sa).map_err(Error::from));
        match attempt {
            Ok(s) => return Ok(s),
            Err(e @ Error::InvalidConfig(_)) => return Err(e),
            Err(e) if Instant::now() >= deadline => return Err(Error::Timeout(format!("could not reach {addr}: {e}"))),
            Err(_) => thread::sleep(Duration::from_millis(50)),
        }
    }
}

/// Client loop: registers, answers every round it is sampled for and
/// returns its per-round metrics once the server shuts down.
pub fn connect_client(
    server_address: &str,
    cs: &mut ClientState,
    bootstrap: &ModelWeights,
    cfg: &RoundConfig,
    tcfg: &TrainConfig,
    opts: &ClientOptions,
) -> Result<Vec<(usize, ClientMetrics)>> {
    let stream = connect_with_retry(server_address, opts.connect_timeout)?;
    let mut peer = Peer { id: cs.client_id.clone(), stream, log: opts.log.clone() };
    peer.send(&Frame::Hello { client_id: cs.client_id.clone() })?;
    let mut pending: Option<WireConfig> = None;
    let mut history = Vec::new();
    loop {
        match peer.recv()? {
            Frame::Config(c) => pending = Some(c),
            Frame::GlobalWeights(blob) => {
                let c = pending.take().ok_or_else(|| Error::Protocol("weights arrived before CONFIG".into()))?;
                let round_cfg = RoundConfig {
                    history: c.history as usize,
                    horizon: c.horizon as usize,
                    sigma: c.sigma,
                    epochs_local: c.epochs as usize,
                    seed: cfg.seed,
                    ..cfg.clone()
                };
                let round_tcfg = TrainConfig { seed: c.seed, ..tcfg.clone() };
                let theta_g = decode_layers(&blob)?;
                let outcome = client_local_round(cs, &theta_g, bootstrap, c.round as usize, &round_cfg, &round_tcfg);
                match outcome {
                    Ok(LocalOutcome::Update { candidate, metrics }) => {
                        peer.send(&Frame::LocalUpdate {
                            blob: encode_layers(&candidate, Dtype::F64),
                            sample_count: metrics.sample_count,
                            train_loss: metrics.train_loss,
                            test_r2: metrics.test_r2,
                            test_mae: metrics.test_mae,
                        })?;
                        history.push((c.round as usize, metrics));
                    }
                    Ok(LocalOutcome::Skip(reason)) => peer.send(&Frame::Skip { reason })?,
                    Err(e) => {
                        let _ = peer.send(&Frame::Error { message: e.to_string() });
                        return Err(e);
                    }
                }
            }
            Frame::RoundAck => {}
            Frame::Shutdown => return Ok(history),
            Frame::Error { message } => return Err(Error::Protocol(message)),
            other => return Err(Error::Protocol(format!("unexpected {:?} frame from server", other.frame_type()))),
        }
    }
}
