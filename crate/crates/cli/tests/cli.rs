mod common;

use std::fs;
use std::path::Path;

use common::*;

fn small_bootstrap(dir: &Path, seed: u64) -> std::path::PathBuf {
    ok(&["synth", "--regime", "smooth", "--seed", "7", "--length", "400", "--out", &p(&dir.join("g4"))]);
    ok(&[
        "bootstrap",
        "--train",
        &p(&dir.join("g4/synth-7.csv")),
        "--hidden",
        "8",
        "--epochs",
        "3",
        "--sigma",
        "0.5",
        "--seed",
        &seed.to_string(),
        "--out",
        &p(&dir.join("boot")),
    ]);
    dir.join("boot/model.fpw")
}

#[test]
fn ingest_irish_file_writes_canonical_csv_and_summary() {
    let t = tempfile::tempdir().unwrap();
    let raw = t.path().join("drive.csv");
    fs::write(
        &raw,
        "Timestamp,Speed,RSRP,CellID,DL_bitrate,State\n\
         2019.12.14_11.04.56,36,-95,10,2000,D\n\
         2019.12.14_11.04.57,36,-96,10,3000,D\n\
         2019.12.14_11.04.58,72,-97,11,0,I\n\
         2019.12.14_11.04.59,72,-97,11,bad,I\n",
    )
    .unwrap();
    let out = t.path().join("out");
    let text = ok(&["ingest", "--input", &p(&raw), "--source-tag", "irish", "--out", &p(&out)]);
    assert!(text.contains("3 valid rows, 1 dropped"), "{text}");
    let canon = fs::read_to_string(out.join("drive.csv")).unwrap();
    let mut lines = canon.lines();
    assert_eq!(lines.next().unwrap(), "timestamp,speed,rsrp,handover_count,distance_to_cell,data_state,throughput");
    assert_eq!(lines.count(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows_dropped"], 1);
    assert_eq!(summary["columns"]["throughput"]["max"], 3.0);
    assert_eq!(summary["columns"]["speed"]["min"], 10.0);
    assert!(outputs(&out).contains_key("drive.csv"));
}

#[test]
fn ingest_missing_file_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["ingest", "--input", "/no/such/trace.csv", "--source-tag", "lumos", "--out", &p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn ingest_unknown_source_tag_prints_usage() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["ingest", "--input", "x.csv", "--source-tag", "bogus", "--out", &p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("Usage"), "{err}");
}

#[test]
fn bootstrap_defaults_on_smooth_4g_fixture() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--regime", "smooth", "--seed", "1", "--length", "1500", "--out", &p(t.path())]);
    let out = t.path().join("boot");
    let text = ok(&["bootstrap", "--train", &p(&t.path().join("synth-1.csv")), "--out", &p(&out)]);
    assert!(out.join("model.fpw").is_file());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(m["test_r2"].as_f64().unwrap() > 90.0, "{text}");
    assert_eq!(m["total_params"], 200833);
    assert!(text.contains("test R2"));
}

#[test]
fn bootstrap_zero_epochs_is_validation_error() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--length", "100", "--out", &p(t.path())]);
    let o = run(&[
        "bootstrap",
        "--train",
        &p(&t.path().join("synth-0.csv")),
        "--epochs",
        "0",
        "--out",
        &p(&t.path().join("b")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("epochs"));
}

#[test]
fn bootstrap_same_seed_same_digest_and_env_override() {
    let t = tempfile::tempdir().unwrap();
    small_bootstrap(&t.path().join("a"), 4);
    small_bootstrap(&t.path().join("b"), 4);
    let (a, b) = (outputs(&t.path().join("a/boot")), outputs(&t.path().join("b/boot")));
    assert_eq!(a["model.fpw"], b["model.fpw"]);

    // TFL_SEED stands in for --seed
    let c = t.path().join("c");
    let o = bin()
        .env("TFL_SEED", "4")
        .args(["bootstrap", "--train", &p(&t.path().join("a/g4/synth-7.csv")), "--hidden", "8", "--epochs", "3"])
        .args(["--sigma", "0.5", "--out", &p(&c)])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(outputs(&c)["model.fpw"], a["model.fpw"]);
}

#[test]
fn federate_in_process_writes_round_log() {
    let t = tempfile::tempdir().unwrap();
    let boot = small_bootstrap(t.path(), 0);
    let clients = t.path().join("clients");
    linear_clients(&clients, 11, 200);
    let out = t.path().join("fed");
    let text = ok(&[
        "federate",
        "--bootstrap",
        &p(&boot),
        "--clients",
        &p(&clients),
        "--rounds",
        "8",
        "--local-epochs",
        "2",
        "--sigma",
        "0.5",
        "--out",
        &p(&out),
    ]);
    let log = fs::read_to_string(out.join("rounds.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 8);
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["round"], i + 1);
        assert_eq!(v["participants"].as_array().unwrap().len(), 4);
    }
    assert_eq!(text.matches("final test R2").count(), 4, "{text}");
    assert_eq!(fs::read_dir(out.join("clients")).unwrap().count(), 4);
    assert!(out.join("global.fpw").is_file());
}

#[test]
fn serve_without_clients_times_out_with_runtime_code() {
    let t = tempfile::tempdir().unwrap();
    let boot = small_bootstrap(t.path(), 0);
    let o = run(&[
        "federate",
        "--bootstrap",
        &p(&boot),
        "--serve",
        &free_addr(),
        "--expect-clients",
        "2",
        "--registration-timeout",
        "1",
        "--out",
        &p(&t.path().join("srv")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn networked_and_in_process_give_identical_global_weights() {
    let t = tempfile::tempdir().unwrap();
    let boot = small_bootstrap(t.path(), 2);
    let clients = t.path().join("clients");
    linear_clients(&clients, 21, 200);
    for f in ["synth-23.csv", "synth-24.csv"] {
        fs::remove_file(clients.join(f)).unwrap();
    }
    let common = ["--rounds", "2", "--local-epochs", "2", "--sigma", "0.5", "--seed", "9"];

    let local = t.path().join("local");
    ok(&[&["federate", "--bootstrap", &p(&boot), "--clients", &p(&clients), "--out", &p(&local)][..], &common[..]]
        .concat());

    let addr = free_addr();
    let served = t.path().join("served");
    let server =
        spawn(
            &[
                &[
                    "federate",
                    "--bootstrap",
                    &p(&boot),
                    "--serve",
                    &addr,
                    "--expect-clients",
                    "2",
                    "--out",
                    &p(&served),
                ][..],
                &common[..],
            ]
            .concat(),
        );
    let workers: Vec<_> = ["synth-21", "synth-22"]
        .iter()
        .map(|id| {
            let data = p(&clients.join(format!("{id}.csv")));
            let out = p(&t.path().join(id));
            spawn(&[
                "client",
                "--connect",
                &addr,
                "--data-file",
                &data,
                "--bootstrap",
                &p(&boot),
                "--sigma",
                "0.5",
                "--out",
                &out,
            ])
        })
        .collect();
    for w in workers {
        let o = w.wait_with_output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let o = server.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    assert_eq!(outputs(&local)["global.fpw"], outputs(&served)["global.fpw"]);
    assert_eq!(
        fs::read_to_string(local.join("rounds.jsonl")).unwrap(),
        fs::read_to_string(served.join("rounds.jsonl")).unwrap()
    );
    let metrics = fs::read_to_string(t.path().join("synth-21/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn cross_eval_three_datasets_gives_square_matrix() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--regime", "linear", "--count", "3", "--length", "200", "--out", &p(t.path())]);
    let files: Vec<String> = (0..3).map(|k| p(&t.path().join(format!("synth-{k}.csv")))).collect();
    let out = t.path().join("x");
    ok(&["cross-eval", "--data", &files.join(","), "--kind", "baseline", "--sigma", "0.5", "--out", &p(&out)]);
    let csv = fs::read_to_string(out.join("matrix_baseline.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').count() == 4), "{csv}");
}

#[test]
fn abr_sim_two_predictors_two_rows() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--regime", "bursty", "--count", "2", "--length", "400", "--out", &p(t.path())]);
    let traces = format!("{},{}", p(&t.path().join("synth-0.csv")), p(&t.path().join("synth-1.csv")));
    let out = t.path().join("abr");
    ok(&["abr-sim", "--traces", &traces, "--predictors", "hm,oracle", "--out", &p(&out)]);
    let csv = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(out.join("ecdf_harmonic_mean.txt").is_file() && out.join("ecdf_oracle.txt").is_file());
}

#[test]
fn abr_sim_unknown_predictor_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--regime", "bursty", "--length", "300", "--out", &p(t.path())]);
    let o = run(&[
        "abr-sim",
        "--traces",
        &p(&t.path().join("synth-0.csv")),
        "--predictors",
        "hm,psychic",
        "--out",
        &p(t.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_schema_mismatch_is_usage_error() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--length", "300", "--out", &p(t.path())]);
    let data = p(&t.path().join("synth-0.csv"));
    let boot = t.path().join("boot");
    ok(&[
        "bootstrap",
        "--train",
        &data,
        "--features",
        "speed,rsrp",
        "--hidden",
        "4",
        "--epochs",
        "1",
        "--out",
        &p(&boot),
    ]);
    let model = p(&boot.join("model.fpw"));
    let o = run(&["eval", "--model", &model, "--data-file", &data, "--out", &p(&t.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shape mismatch"), "{}", stderr(&o));
    let text = ok(&[
        "eval",
        "--model",
        &model,
        "--data-file",
        &data,
        "--features",
        "speed,rsrp",
        "--out",
        &p(&t.path().join("f")),
    ]);
    assert!(text.contains("test R2"));
    assert!(t.path().join("f/predictions.csv").is_file());
}

#[test]
fn replay_reproduces_output_digests() {
    let t = tempfile::tempdir().unwrap();
    small_bootstrap(t.path(), 5);
    let again = t.path().join("again");
    let text = ok(&["replay", "--manifest", &p(&t.path().join("boot/manifest.json")), "--out", &p(&again)]);
    assert!(text.contains("replay reproduced 3 output digests"), "{text}");
    assert_eq!(outputs(&again), outputs(&t.path().join("boot")));
}

#[test]
fn manifest_exists_even_when_the_run_fails() {
    let t = tempfile::tempdir().unwrap();
    ok(&["synth", "--length", "3", "--out", &p(t.path())]);
    let out = t.path().join("b");
    let o = run(&["bootstrap", "--train", &p(&t.path().join("synth-0.csv")), "--out", &p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["command"], "bootstrap");
    assert!(m["outputs"].as_object().unwrap().is_empty());
}
