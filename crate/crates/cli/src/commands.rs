use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;
use tputfl_core::abr::{run_case_study, BitrateLadder, PredictorSpec, QoEParams, SessionConfig};
use tputfl_core::eval::{cross_eval, evaluate_model};
use tputfl_core::federation::{
    connect_client, run_federated, serve, train_global_lstm, write_report_log, ClientOptions, ClientState,
    FedRoundReport, GlobalState, RoundConfig, ServeOptions,
};
use tputfl_core::nn::{load_weights, save_weights, ModelWeights, TrainConfig};
use tputfl_core::trace::{
    normalize_schema, parse_csv_trace, synth_trace, write_canonical_csv, FeatureSchema, LinearMap, Regime,
    TraceDataset, CANONICAL_FEATURES,
};

use crate::args::*;
use crate::error::{CliError, CliResult};

impl Command {
    pub fn out_dir(&self) -> Option<&Path> {
        let out = match self {
            Command::Ingest(a) => &a.out,
            Command::Synth(a) => &a.out,
            Command::Bootstrap(a) => &a.out,
            Command::Federate(a) => &a.out,
            Command::Client(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::CrossEval(a) => &a.out,
            Command::AbrSim(a) => &a.out,
            Command::Replay(_) => return None,
        };
        Some(&out.out)
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        let out = match self {
            Command::Ingest(a) => &mut a.out,
            Command::Synth(a) => &mut a.out,
            Command::Bootstrap(a) => &mut a.out,
            Command::Federate(a) => &mut a.out,
            Command::Client(a) => &mut a.out,
            Command::Eval(a) => &mut a.out,
            Command::CrossEval(a) => &mut a.out,
            Command::AbrSim(a) => &mut a.out,
            Command::Replay(_) => return,
        };
        out.out = dir;
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Synth(a) => Some(a.seed),
            Command::Bootstrap(a) => Some(a.training.seed),
            Command::Federate(a) => Some(a.training.seed),
            Command::Client(a) => Some(a.training.seed),
            Command::CrossEval(a) => Some(a.training.seed),
            _ => None,
        }
    }

    /// Input files, in a stable order. Fails with a usage error when one is
    /// missing, before anything is written.
    pub fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Ingest(a) => vec![a.input.clone()],
            Command::Synth(_) | Command::Replay(_) => vec![],
            Command::Bootstrap(a) => vec![a.train.clone()],
            Command::Federate(a) => {
                let mut v = vec![a.bootstrap.clone()];
                if let Some(dir) = &a.clients {
                    v.extend(list_csvs(dir).unwrap_or_default());
                }
                v
            }
            Command::Client(a) => vec![a.data_file.clone(), a.bootstrap.clone()],
            Command::Eval(a) => vec![a.model.clone(), a.data_file.clone()],
            Command::CrossEval(a) => {
                let mut v = a.datasets.clone();
                v.extend(a.bootstrap.clone());
                v
            }
            Command::AbrSim(a) => {
                let mut v = a.traces.clone();
                v.extend(a.models.iter().filter_map(|m| m.split_once('=').map(|(_, p)| PathBuf::from(p))));
                v
            }
        }
    }

    pub fn check_inputs(&self) -> CliResult<()> {
        if let Command::Federate(FederateArgs { clients: Some(dir), .. }) = self {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("client directory {} does not exist", dir.display())));
            }
        }
        for path in self.inputs() {
            if !path.is_file() {
                return Err(CliError::Usage(format!("input file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn run(&self) -> CliResult<()> {
        match self {
            Command::Ingest(a) => ingest(a),
            Command::Synth(a) => synth(a),
            Command::Bootstrap(a) => bootstrap(a),
            Command::Federate(a) => federate(a),
            Command::Client(a) => client(a),
            Command::Eval(a) => eval(a),
            Command::CrossEval(a) => cross(a),
            Command::AbrSim(a) => abr_sim(a),
            Command::Replay(_) => unreachable!("replay is dispatched in main"),
        }
    }
}

fn list_csvs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

fn schema(data: &DataArgs) -> CliResult<FeatureSchema> {
    Ok(FeatureSchema::new(&data.features)?)
}

fn load_dataset(path: &Path, data: &DataArgs) -> CliResult<TraceDataset> {
    let raw = parse_csv_trace(path, data.source_tag)?;
    Ok(normalize_schema(&raw, &schema(data)?)?)
}

fn round_config(window: &WindowArgs, training: &TrainArgs, hidden: usize) -> RoundConfig {
    RoundConfig {
        history: window.history,
        horizon: window.horizon,
        sigma: window.sigma,
        epochs_local: training.epochs,
        seed: training.seed,
        train_fraction: window.train_fraction,
        hidden,
        scaler_mode: window.scaler.into(),
        ..RoundConfig::default()
    }
}

fn train_config(training: &TrainArgs) -> CliResult<TrainConfig> {
    let t = TrainConfig {
        epochs: training.epochs,
        batch_size: training.batch_size,
        learning_rate: training.learning_rate,
        dropout: training.dropout,
        seed: training.seed,
        ..TrainConfig::default()
    };
    t.validate()?;
    Ok(t)
}

fn create(path: PathBuf) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: PathBuf, value: &serde_json::Value) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(tputfl_core::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn fmt_pct(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}%")
    } else {
        "undefined".to_string()
    }
}

fn ingest(a: &IngestArgs) -> CliResult<()> {
    let raw = parse_csv_trace(&a.input, a.data.source_tag)?;
    let ds = normalize_schema(&raw, &schema(&a.data)?)?;
    let name = format!("{}.csv", ds.client_id());
    let target = a.out.out.join(&name);
    if target.canonicalize().ok() == a.input.canonicalize().ok() {
        return Err(CliError::Usage("--out would overwrite the input file".into()));
    }
    write_canonical_csv(&ds, create(a.out.out.join(&name))?)?;

    println!(
        "{}: {} valid rows, {} dropped, {} after resampling",
        a.input.display(),
        raw.len(),
        raw.dropped_count(),
        ds.len()
    );
    let mut columns = serde_json::Map::new();
    let names = CANONICAL_FEATURES.iter().copied().filter(|f| ds.schema().index_of(f).is_some()).chain(["throughput"]);
    for col in names {
        let values = if col == "throughput" { ds.throughput() } else { ds.column(col).unwrap_or_default() };
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("  {col:<18} min {lo:>12.3}  max {hi:>12.3}");
        columns.insert(col.to_string(), json!({ "min": lo, "max": hi }));
    }
    write_json(
        a.out.out.join("summary.json"),
        &json!({
            "source_tag": a.data.source_tag.as_str(),
            "client_id": ds.client_id(),
            "rows_parsed": raw.len(),
            "rows_dropped": raw.dropped_count(),
            "rows_out": ds.len(),
            "canonical_file": name,
            "columns": columns,
        }),
    )
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    if a.count == 0 || a.length == 0 {
        return Err(CliError::Usage("--count and --length must be at least 1".into()));
    }
    let regime = match a.regime {
        RegimeArg::Smooth => Regime::Smooth,
        RegimeArg::Bursty => Regime::Bursty,
        RegimeArg::Linear => {
            let w = [a.weights[0], a.weights[1], a.weights[2]];
            if !(0.0..1.0).contains(&a.persistence) || a.noise < 0.0 {
                return Err(CliError::Usage("--persistence must lie in [0, 1) and --noise be >= 0".into()));
            }
            Regime::ClientLinear(LinearMap::new(a.intercept, w).with_noise(a.noise).with_persistence(a.persistence))
        }
    };
    for k in 0..a.count as u64 {
        let ds = synth_trace(a.seed + k, a.length, regime);
        let path = a.out.out.join(format!("{}.csv", ds.client_id()));
        write_canonical_csv(&ds, create(path.clone())?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn bootstrap(a: &BootstrapArgs) -> CliResult<()> {
    let tcfg = train_config(&a.training)?;
    let mut cfg = round_config(&a.window, &a.training, a.hidden);
    cfg.dense_ownership = a.dense.into();
    cfg.validate()?;
    let ds = load_dataset(&a.train, &a.data)?;
    let b = train_global_lstm(&ds, &cfg, &tcfg)?;
    let model_path = a.out.out.join("model.fpw");
    save_weights(&b.weights, &model_path, a.dtype.into())?;

    let mut curve = create(a.out.out.join("loss_curve.csv"))?;
    writeln!(curve, "epoch,train_mae")?;
    for (i, l) in b.loss_curve.iter().enumerate() {
        writeln!(curve, "{},{l}", i + 1)?;
    }
    curve.flush()?;
    let counts = b.weights.count_params();
    write_json(
        a.out.out.join("metrics.json"),
        &json!({
            "dataset": ds.client_id(),
            "test_r2": b.test_r2,
            "test_mae": b.test_mae,
            "param_counts": counts,
            "total_params": counts.iter().sum::<usize>(),
        }),
    )?;
    println!("bootstrap on {}: test R2 {}  MAE {:.3} Mbps", ds.client_id(), fmt_pct(b.test_r2), b.test_mae);
    println!("params per layer {:?}, total {}", counts, counts.iter().sum::<usize>());
    println!("wrote {}", model_path.display());
    Ok(())
}

fn write_rounds(out: &Path, reports: &[FedRoundReport]) -> CliResult<()> {
    let mut log = create(out.join("rounds.jsonl"))?;
    write_report_log(&mut log, reports)?;
    log.flush()?;
    let mut csv = create(out.join("rounds.csv"))?;
    writeln!(csv, "round,participants,skipped,dropped,mean_test_r2,global_checksum")?;
    for r in reports {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.round,
            r.participants.len(),
            r.skipped.len(),
            r.dropped.len(),
            r.mean_test_r2,
            r.global_checksum
        )?;
        println!(
            "round {:>3}: {} participants, mean test R2 {}",
            r.round,
            r.participants.len(),
            fmt_pct(r.mean_test_r2)
        );
    }
    csv.flush()?;
    Ok(())
}

fn federate(a: &FederateArgs) -> CliResult<()> {
    let tcfg = train_config(&a.training)?;
    let mut boot = load_weights(&a.bootstrap)?;
    boot.dense_ownership = a.dense.into();
    let mut cfg = round_config(&a.window, &a.training, boot.shape().hidden1);
    cfg.n_rounds = a.rounds;
    cfg.client_fraction = a.fraction;
    cfg.weighted = a.weighted;
    cfg.dense_ownership = boot.dense_ownership;
    cfg.validate()?;
    let mut gs = GlobalState::new(boot);
    let out = &a.out.out;

    let clients = if let Some(addr) = &a.serve {
        let client_count = a
            .expect_clients
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage("--serve needs --expect-clients of at least 1".into()))?;
        let opts = ServeOptions {
            client_count,
            registration_timeout: Duration::from_secs(a.registration_timeout),
            round_timeout: Duration::from_secs(a.round_timeout),
            log: None,
        };
        println!("serving on {addr}, waiting for {client_count} clients");
        let reports = serve(addr, &mut gs, &cfg, &tcfg, &opts)?;
        write_rounds(out, &reports)?;
        None
    } else {
        let dir = a.clients.as_ref().ok_or_else(|| CliError::Usage("--clients is required in-process".into()))?;
        let files = list_csvs(dir)?;
        if files.is_empty() {
            return Err(CliError::Usage(format!("no CSV files in {}", dir.display())));
        }
        let mut clients = Vec::with_capacity(files.len());
        for (k, f) in files.iter().enumerate() {
            let cs = ClientState::new(load_dataset(f, &a.data)?);
            clients.push(if a.incremental { cs.joining_at(k + 1) } else { cs });
        }
        let reports = run_federated(&mut clients, &mut gs, &cfg, &tcfg)?;
        write_rounds(out, &reports)?;
        Some(clients)
    };

    let global = gs.global_model();
    save_weights(&global, out.join("global.fpw"), Default::default())?;
    println!("final global checksum {}", gs.checksum());
    if let Some(clients) = clients {
        fs::create_dir_all(out.join("clients"))?;
        let mut fin = create(out.join("final.csv"))?;
        writeln!(fin, "client_id,join_round,train_loss,sample_count,test_r2,test_mae")?;
        for cs in &clients {
            let model = cs.assemble(&gs.theta_g, &gs.bootstrap)?;
            save_weights(&model, out.join("clients").join(format!("{}.fpw", cs.client_id)), Default::default())?;
            match &cs.last_metrics {
                Some(m) => {
                    writeln!(
                        fin,
                        "{},{},{},{},{},{}",
                        cs.client_id, cs.join_round, m.train_loss, m.sample_count, m.test_r2, m.test_mae
                    )?;
                    println!(
                        "client {}: final test R2 {}  MAE {:.3} Mbps",
                        cs.client_id,
                        fmt_pct(m.test_r2),
                        m.test_mae
                    );
                }
                None => {
                    writeln!(fin, "{},{},,,,", cs.client_id, cs.join_round)?;
                    println!("client {}: never trained", cs.client_id);
                }
            }
        }
        fin.flush()?;
    }
    Ok(())
}

fn client(a: &ClientArgs) -> CliResult<()> {
    let tcfg = train_config(&a.training)?;
    let mut boot = load_weights(&a.bootstrap)?;
    boot.dense_ownership = a.dense.into();
    let mut cfg = round_config(&a.window, &a.training, boot.shape().hidden1);
    cfg.dense_ownership = boot.dense_ownership;
    cfg.validate()?;
    let mut cs = ClientState::new(load_dataset(&a.data_file, &a.data)?);
    let opts = ClientOptions { connect_timeout: Duration::from_secs(a.connect_timeout), log: None };
    let history = connect_client(&a.connect, &mut cs, &boot, &cfg, &tcfg, &opts)?;
    let mut w = create(a.out.out.join("metrics.csv"))?;
    writeln!(w, "round,train_loss,sample_count,test_r2,test_mae")?;
    for (round, m) in &history {
        writeln!(w, "{round},{},{},{},{}", m.train_loss, m.sample_count, m.test_r2, m.test_mae)?;
        println!("client {} round {round}: test R2 {}  MAE {:.3} Mbps", cs.client_id, fmt_pct(m.test_r2), m.test_mae);
    }
    w.flush()?;
    Ok(())
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let model = load_weights(&a.model)?;
    let ds = load_dataset(&a.data_file, &a.data)?;
    let cfg = round_config(&a.window, &TrainArgs::default_values(), model.shape().hidden1);
    cfg.validate()?;
    let res = evaluate_model(&model, &ds, &cfg, a.refit_scaler)?;
    let r2 = res.r2().unwrap_or(f64::NAN);
    let mae = res.mae()?;
    let mut w = create(a.out.out.join("predictions.csv"))?;
    writeln!(w, "index,target,prediction")?;
    for (i, (t, p)) in res.targets.iter().zip(&res.predictions).enumerate() {
        writeln!(w, "{i},{t},{p}")?;
    }
    w.flush()?;
    write_json(
        a.out.out.join("metrics.json"),
        &json!({ "dataset": ds.client_id(), "samples": res.targets.len(), "r2": r2, "mae": mae }),
    )?;
    println!(
        "{} on {}: test R2 {}  MAE {mae:.3} Mbps over {} samples",
        a.model.display(),
        ds.client_id(),
        fmt_pct(r2),
        res.targets.len()
    );
    Ok(())
}

fn cross(a: &CrossEvalArgs) -> CliResult<()> {
    let tcfg = train_config(&a.training)?;
    let cfg = round_config(&a.window, &a.training, a.hidden);
    cfg.validate()?;
    let datasets = a.datasets.iter().map(|p| load_dataset(p, &a.data)).collect::<CliResult<Vec<_>>>()?;
    let boot: Option<ModelWeights> = a.bootstrap.as_ref().map(load_weights).transpose()?;
    let m = cross_eval(&datasets, a.kind, &cfg, &tcfg, boot.as_ref())?;
    let path = a.out.out.join(format!("matrix_{}.csv", a.kind));
    let mut w = create(path.clone())?;
    m.write_csv(&mut w)?;
    w.flush()?;
    println!("{} R2 (%), rows train, columns test", a.kind);
    for (tag, row) in m.tags.iter().zip(&m.cells) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>8.2}")).collect();
        println!("{tag:>16} {}", cells.join(" "));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn predictor_spec(name: &str) -> CliResult<PredictorSpec> {
    match name.trim().to_ascii_lowercase().as_str() {
        "hm" | "harmonic_mean" => Ok(PredictorSpec::harmonic_mean()),
        "ewma" => Ok(PredictorSpec::ewma()),
        "ar" => Ok(PredictorSpec::ar()),
        "oracle" => Ok(PredictorSpec::oracle(4.0)),
        other => Err(CliError::Usage(format!("unknown predictor '{other}', expected hm, ewma, ar or oracle"))),
    }
}

fn abr_sim(a: &AbrSimArgs) -> CliResult<()> {
    let cfg = SessionConfig {
        chunk_duration_s: a.chunk_s,
        buffer_max_s: a.buffer_s,
        video_length_s: a.video_s,
        horizon: a.lookahead,
        ladder: BitrateLadder::new(a.ladder.clone())?,
        qoe: QoEParams { smoothness: a.smoothness_penalty, rebuffer: a.rebuffer_penalty },
    };
    cfg.validate()?;
    let mut specs =
        a.predictors.iter().filter(|p| !p.is_empty()).map(|p| predictor_spec(p)).collect::<CliResult<Vec<_>>>()?;
    for m in &a.models {
        let (name, path) =
            m.split_once('=').ok_or_else(|| CliError::Usage(format!("--model expects NAME=PATH, got '{m}'")))?;
        let model = load_weights(path)?;
        specs.push(PredictorSpec::Lstm { name: name.to_string(), model, sigma: a.sigma, history: a.history });
    }
    let traces = a.traces.iter().map(|p| load_dataset(p, &a.data)).collect::<CliResult<Vec<_>>>()?;
    let study = run_case_study(&traces, &specs, &cfg)?;
    let mut w = create(a.out.out.join("table.csv"))?;
    study.write_table_csv(&mut w)?;
    w.flush()?;
    study.write_ecdf_files(&a.out.out)?;
    println!("{:<16} {:>10} {:>12} {:>12} {:>14}", "scheme", "QoE", "bitrate", "variation", "rebuffer s/seg");
    for s in &study.summaries {
        println!(
            "{:<16} {:>10.2} {:>12.2} {:>12.2} {:>14.4}",
            s.scheme, s.mean_qoe, s.mean_bitrate_mbps, s.mean_bitrate_variation_mbps, s.mean_rebuffer_s_per_segment
        );
    }
    Ok(())
}

impl TrainArgs {
    fn default_values() -> Self {
        let d = TrainConfig::default();
        TrainArgs {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            dropout: d.dropout,
            seed: d.seed,
        }
    }
}
