use super::*;
use crate::trace::{synth_trace, Regime};
use proptest::prelude::*;

fn constant(mbps: f64, secs: usize) -> TraceDataset {
    TraceDataset::from_throughput("const", &vec![mbps; secs]).unwrap()
}

fn session(levels: &[f64], rebuf: &[f64]) -> StreamSession {
    StreamSession {
        chunk_duration_s: 4.0,
        buffer_max_s: 30.0,
        startup_delay_s: 0.0,
        chunks: levels
            .iter()
            .zip(rebuf)
            .map(|(&b, &r)| ChunkLog {
                level: 0,
                bitrate_mbps: b,
                download_s: 1.0,
                rebuffer_s: r,
                pause_s: 0.0,
                buffer_after_s: 4.0,
                predicted_mbps: None,
            })
            .collect(),
    }
}

/// Recursive enumeration of every plan, scored independently of the
/// controller's odometer loop.
fn brute_force(buffer: f64, last: usize, tput: f64, h: usize, cfg: &SessionConfig) -> usize {
    fn walk(plan: &mut Vec<usize>, h: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if plan.len() == h {
            out.push(plan.clone());
            return;
        }
        for l in 0..n {
            plan.push(l);
            walk(plan, h, n, out);
            plan.pop();
        }
    }
    let mut plans = Vec::new();
    walk(&mut Vec::new(), h, cfg.ladder.len(), &mut plans);
    let lv = cfg.ladder.levels();
    let score = |plan: &[usize]| {
        let mut b = buffer;
        let mut q = 0.0;
        for (k, &l) in plan.iter().enumerate() {
            let prev = if k == 0 { lv[last] } else { lv[plan[k - 1]] };
            let dt = cfg.chunk_duration_s * lv[l] / tput;
            let stall = if dt > b { dt - b } else { 0.0 };
            b = (if dt > b { 0.0 } else { b - dt }) + cfg.chunk_duration_s;
            if b > cfg.buffer_max_s {
                b = cfg.buffer_max_s;
            }
            q += lv[l] - cfg.qoe.smoothness * (lv[l] - prev).abs() - cfg.qoe.rebuffer * stall;
        }
        q
    };
    let best = plans.iter().map(|p| score(p)).fold(f64::NEG_INFINITY, f64::max);
    plans.iter().filter(|p| score(p) == best).map(|p| p[0]).min().unwrap()
}

#[test]
fn ladder_validation() {
    assert!(BitrateLadder::new(vec![5.0]).is_err());
    assert!(BitrateLadder::new(vec![5.0, 5.0]).is_err());
    assert!(BitrateLadder::new(vec![-1.0, 5.0]).is_err());
    assert_eq!(BitrateLadder::default().levels(), &[6.5, 10.0, 15.0, 20.0, 30.0, 50.0]);
}

#[test]
fn qoe_examples() {
    let q = QoEParams::default();
    assert_eq!(qoe_score(&session(&[10.0, 10.0], &[0.0, 0.0]), &q).unwrap().total, 20.0);
    assert_eq!(qoe_score(&session(&[10.0, 20.0], &[0.0, 0.0]), &q).unwrap().total, 20.0);
    assert!((qoe_score(&session(&[6.5], &[2.0]), &q).unwrap().total - (-2.1)).abs() < 1e-12);
    assert!(qoe_score(&session(&[], &[]), &q).is_err());
}

#[test]
fn chunk_count_rounds_partial_chunk_up() {
    assert_eq!(SessionConfig::default().chunk_count(), 63);
    assert_eq!(SessionConfig { video_length_s: 240.0, ..Default::default() }.chunk_count(), 60);
}

#[test]
fn download_steps_through_trace() {
    assert!((download_time(&[1.0, 3.0], 0.5, 2.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((download_time(&[0.0, 4.0], 0.0, 2.0).unwrap() - 1.5).abs() < 1e-12);
    assert!(matches!(download_time(&[1.0], 0.0, 5.0), Err(Error::TraceExhausted { .. })));
}

#[test]
fn fast_constant_trace_never_stalls() {
    let cfg = SessionConfig::default();
    let mut p = HarmonicMeanPredictor { window_s: 5 };
    let s = simulate_download(&constant(100.0, 400), &cfg, &mut p, Controller::Fixed(0)).unwrap();
    assert_eq!(s.chunks.len(), 63);
    for c in &s.chunks {
        assert_eq!(c.rebuffer_s, 0.0);
        assert!((c.download_s - 4.0 * 6.5 / 100.0).abs() < 1e-12);
    }
}

#[test]
fn slow_constant_trace_stalls_on_every_chunk() {
    let cfg = SessionConfig::default();
    let mut p = HarmonicMeanPredictor { window_s: 5 };
    let s = simulate_download(&constant(5.0, 4000), &cfg, &mut p, Controller::Fixed(5)).unwrap();
    assert!(s.chunks[1..].iter().all(|c| c.rebuffer_s > 0.0 && (c.download_s - 40.0).abs() < 1e-9));
}

#[test]
fn empty_trace_is_exhausted() {
    let cfg = SessionConfig::default();
    let mut p = HarmonicMeanPredictor { window_s: 5 };
    let empty = TraceDataset::from_throughput("e", &[]).unwrap();
    assert!(matches!(simulate_download(&empty, &cfg, &mut p, Controller::Mpc), Err(Error::TraceExhausted { .. })));
}

#[test]
fn mpc_extremes() {
    let cfg = SessionConfig::default();
    assert_eq!(mpc_select_bitrate(30.0, 5, &[100.0; 5], &cfg), 5);
    assert_eq!(mpc_select_bitrate(30.0, 0, &[100.0; 5], &cfg), 5);
    assert_eq!(mpc_select_bitrate(8.0, 1, &[0.001; 5], &cfg), 0);
}

#[test]
fn mpc_matches_exhaustive_oracle() {
    let cfg = SessionConfig::default();
    // 12 Mbps, 8 s buffer, previous chunk at 10 Mbps.
    let got = mpc_select_bitrate(8.0, 1, &[12.0; 5], &cfg);
    assert_eq!(got, brute_force(8.0, 1, 12.0, 5, &cfg));
    // Holding 15 Mbps drains 1 s per chunk from 8 s and never stalls, so it
    // beats staying at 10 Mbps.
    assert_eq!(cfg.ladder.rate(got), 15.0);
    for (buffer, last, tput) in [(2.0, 0, 7.0), (12.0, 3, 18.0), (0.5, 5, 40.0), (29.0, 2, 9.5), (4.0, 4, 26.0)] {
        for h in 1..=4 {
            assert_eq!(
                mpc_select_bitrate(buffer, last, &vec![tput; h], &cfg),
                brute_force(buffer, last, tput, h, &cfg)
            );
        }
    }
}

#[test]
fn constant_trace_makes_predictors_agree() {
    let cfg = SessionConfig::default();
    let trace = constant(20.0, 600);
    let specs =
        [PredictorSpec::harmonic_mean(), PredictorSpec::ewma(), PredictorSpec::ar(), PredictorSpec::oracle(4.0)];
    let study = run_case_study(&[trace], &specs, &cfg).unwrap();
    for s in &study.summaries[1..] {
        assert_eq!(s.mean_qoe, study.summaries[0].mean_qoe, "{}", s.scheme);
    }
}

#[test]
fn identical_predictors_identical_outputs() {
    let cfg = SessionConfig::default();
    let trace = synth_trace(3, 1500, Regime::Bursty);
    let specs = [PredictorSpec::harmonic_mean(), PredictorSpec::harmonic_mean()];
    let study = run_case_study(&[trace], &specs, &cfg).unwrap();
    assert_eq!(study.summaries[0], study.summaries[1]);
    assert!(run_case_study(&[constant(5.0, 10)], &specs[..1], &cfg).is_err());
}

#[test]
fn table_and_ecdf_files() {
    let cfg = SessionConfig::default();
    let study =
        run_case_study(&[constant(30.0, 500)], &[PredictorSpec::harmonic_mean(), PredictorSpec::oracle(4.0)], &cfg)
            .unwrap();
    let mut out = Vec::new();
    study.write_table_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scheme,mean_qoe,mean_bitrate_mbps,mean_bitrate_variation_mbps,mean_rebuffer_s_per_segment"
    );
    assert_eq!(lines.count(), 2);
    let dir = tempfile::tempdir().unwrap();
    study.write_ecdf_files(dir.path()).unwrap();
    assert!(dir.path().join("ecdf_oracle.txt").exists());
    assert!(dir.path().join("ecdf_harmonic_mean.txt").exists());
}

#[test]
fn buffer_stays_within_bounds_over_random_sessions() {
    for seed in 0..1000u64 {
        let trace = synth_trace(seed, 900, if seed % 2 == 0 { Regime::Bursty } else { Regime::Smooth });
        let cfg = SessionConfig { video_length_s: 80.0, horizon: 1 + (seed % 3) as usize, ..Default::default() };
        let controller = if seed % 3 == 0 { Controller::Mpc } else { Controller::Fixed((seed % 6) as usize) };
        let mut p = HarmonicMeanPredictor { window_s: 5 };
        let s = simulate_download(&trace, &cfg, &mut p, controller).unwrap();
        for c in &s.chunks {
            assert!(c.buffer_after_s >= 0.0 && c.buffer_after_s <= cfg.buffer_max_s + 1e-9, "seed {seed}");
            assert!(c.rebuffer_s >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn qoe_accounting_identity(
        rates in prop::collection::vec(1.0f64..80.0, 300..400),
        mu in 0.0f64..3.0,
        lambda in 0.0f64..10.0,
    ) {
        let trace = TraceDataset::from_throughput("p", &rates).unwrap();
        let cfg = SessionConfig { video_length_s: 40.0, qoe: QoEParams { smoothness: mu, rebuffer: lambda }, ..Default::default() };
        let mut p = EwmaPredictor { alpha: 0.5, window_s: 10 };
        let s = simulate_download(&trace, &cfg, &mut p, Controller::Mpc).unwrap();
        let q = qoe_score(&s, &cfg.qoe).unwrap();
        let b: f64 = s.chunks.iter().map(|c| c.bitrate_mbps).sum();
        let v: f64 = s.chunks.windows(2).map(|w| (w[1].bitrate_mbps - w[0].bitrate_mbps).abs()).sum();
        let r: f64 = s.chunks.iter().map(|c| c.rebuffer_s).sum();
        prop_assert_eq!(q.total, b - mu * v - lambda * r);
    }
}

#[test]
fn oracle_beats_harmonic_mean_on_bursty_traces() {
    let cfg = SessionConfig::default();
    let traces: Vec<TraceDataset> = (0..20).map(|s| synth_trace(500 + s, 1500, Regime::Bursty)).collect();
    let study = run_case_study(&traces, &[PredictorSpec::oracle(4.0), PredictorSpec::harmonic_mean()], &cfg).unwrap();
    assert!(study.summaries[0].mean_qoe >= study.summaries[1].mean_qoe, "{:?}", study.summaries);
}
/// With the lookahead spanning every remaining chunk and an exact
/// forecast, each MPC decision is optimal over all remaining plans.
fn full_horizon_cfg(lambda: f64) -> SessionConfig {
    SessionConfig {
        video_length_s: 24.0,
        horizon: 5,
        qoe: QoEParams { smoothness: 1.0, rebuffer: lambda },
        ..Default::default()
    }
}

#[test]
fn exact_full_horizon_mpc_dominates_fixed_plans() {
    for i in 0..60 {
        let rate = 2.0 + 1.3 * i as f64;
        let trace = constant(rate, 5000);
        let cfg = full_horizon_cfg(4.3);
        let mut o = OraclePredictor { mbps: trace.throughput(), window_s: 4.0 };
        let mpc =
            qoe_score(&simulate_download(&trace, &cfg, &mut o, Controller::Mpc).unwrap(), &cfg.qoe).unwrap().total;
        for level in 0..cfg.ladder.len() {
            let mut p = HarmonicMeanPredictor { window_s: 5 };
            let s = simulate_download(&trace, &cfg, &mut p, Controller::Fixed(level)).unwrap();
            let fixed = qoe_score(&s, &cfg.qoe).unwrap().total;
            assert!(mpc >= fixed - 1e-9, "rate {rate}, level {level}: {mpc} < {fixed}");
        }
    }
}

#[test]
fn exact_full_horizon_rebuffering_is_monotone_in_lambda() {
    for i in 0..60 {
        let rate = 2.0 + 1.3 * i as f64;
        let trace = constant(rate, 5000);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.5, 1.0, 2.0, 4.3, 8.0, 20.0, 100.0] {
            let cfg = full_horizon_cfg(lambda);
            let mut o = OraclePredictor { mbps: trace.throughput(), window_s: 4.0 };
            let s = simulate_download(&trace, &cfg, &mut o, Controller::Mpc).unwrap();
            let stalled: f64 = s.chunks.iter().map(|c| c.rebuffer_s).sum();
            assert!(stalled <= prev + 1e-9, "rate {rate}, lambda {lambda}: {stalled} > {prev}");
            prev = stalled;
        }
    }
}
