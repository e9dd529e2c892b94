use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use tputfl_core::federation::{
    connect_client, read_frame, run_federated, serve_on, train_global_lstm, write_frame, ClientOptions, ClientState,
    Frame, FrameLog, FrameType, GlobalState, RoundConfig, ServeOptions,
};
use tputfl_core::nn::{encode_layers, Dtype, Layer, ModelWeights, TrainConfig};
use tputfl_core::trace::{synth_trace, LinearMap, Regime};
use tputfl_core::Error;

fn setup() -> (RoundConfig, TrainConfig, ModelWeights, Vec<ClientState>) {
    let cfg = RoundConfig { hidden: 6, epochs_local: 3, n_rounds: 2, sigma: 0.5, ..Default::default() };
    let tcfg = TrainConfig { epochs: 3, seed: 17, ..Default::default() };
    let boot = train_global_lstm(&synth_trace(2, 240, Regime::Smooth), &cfg, &tcfg).unwrap().weights;
    let clients = [(41, 12.0), (42, 40.0)]
        .iter()
        .map(|&(s, c)| {
            let map = LinearMap::new(c, [2.0, 7.0, -4.0]).with_noise(1.0);
            ClientState::new(synth_trace(s, 200, Regime::ClientLinear(map)))
        })
        .collect();
    (cfg, tcfg, boot, clients)
}

fn listener() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    (l, addr)
}

#[test]
fn wire_and_in_process_runs_agree_and_keep_local_layers_private() {
    let (cfg, tcfg, boot, clients) = setup();

    let mut local_clients = clients.clone();
    let mut gs_local = GlobalState::new(boot.clone());
    let local_reports = run_federated(&mut local_clients, &mut gs_local, &cfg, &tcfg).unwrap();

    let (l, addr) = listener();
    let log = FrameLog::new();
    let opts = ServeOptions {
        client_count: 2,
        registration_timeout: Duration::from_secs(30),
        log: Some(log.clone()),
        ..Default::default()
    };
    let mut gs_wire = GlobalState::new(boot.clone());
    let wire_clients: Vec<_> = clients
        .into_iter()
        .map(|mut cs| {
            let (addr, boot, cfg, tcfg) = (addr.clone(), boot.clone(), cfg.clone(), tcfg.clone());
            thread::spawn(move || {
                connect_client(&addr, &mut cs, &boot, &cfg, &tcfg, &ClientOptions::default()).unwrap();
                cs
            })
        })
        .collect();
    let wire_reports = serve_on(l, &mut gs_wire, &cfg, &tcfg, &opts).unwrap();
    let finished: Vec<ClientState> = wire_clients.into_iter().map(|h| h.join().unwrap()).collect();

    assert_eq!(gs_wire.checksum(), gs_local.checksum());
    assert_eq!(gs_wire.theta_g, gs_local.theta_g);
    assert_eq!(wire_reports, local_reports);

    let entries = log.entries();
    // Every participant received the same shared weights at the start of each round.
    for round_blobs in entries.iter().filter(|e| e.frame_type == FrameType::GlobalWeights).collect::<Vec<_>>().chunks(2)
    {
        assert_eq!(round_blobs[0].bytes, round_blobs[1].bytes);
    }
    let global_names = boot.global_layer_names();
    for e in entries.iter().filter(|e| e.frame_type == FrameType::LocalUpdate) {
        let (frame, _) = read_frame(&mut e.bytes.as_slice()).unwrap();
        let Frame::LocalUpdate { blob, .. } = frame else { unreachable!() };
        let names: Vec<String> = tputfl_core::nn::decode_layers(&blob).unwrap().into_iter().map(|l| l.name).collect();
        assert_eq!(names, global_names);
    }
    for cs in &finished {
        for layer in cs.local.as_ref().unwrap() {
            for v in &layer.values {
                let needle = v.to_le_bytes();
                for e in &entries {
                    assert!(
                        !e.bytes.windows(8).any(|w| w == needle),
                        "{} value leaked in {:?}",
                        layer.name,
                        e.frame_type
                    );
                }
            }
        }
    }
}

#[test]
fn duplicate_hello_gets_error_frame() {
    let (cfg, tcfg, boot, _) = setup();
    let (l, addr) = listener();
    let server = thread::spawn(move || {
        let mut gs = GlobalState::new(boot);
        let cfg = RoundConfig { n_rounds: 0, ..cfg };
        let opts =
            ServeOptions { client_count: 2, registration_timeout: Duration::from_secs(20), ..Default::default() };
        serve_on(l, &mut gs, &cfg, &tcfg, &opts)
    });
    let hello = |id: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        write_frame(&mut s, &Frame::Hello { client_id: id.into() }).unwrap();
        s
    };
    let mut first = hello("ue-1");
    let mut dup = hello("ue-1");
    let (reply, _) = read_frame(&mut dup).unwrap();
    assert!(matches!(reply, Frame::Error { .. }));
    let mut second = hello("ue-2");
    server.join().unwrap().unwrap();
    assert_eq!(read_frame(&mut first).unwrap().0, Frame::Shutdown);
    assert_eq!(read_frame(&mut second).unwrap().0, Frame::Shutdown);
}

#[test]
fn wrong_shape_update_is_rejected_and_excluded() {
    let (cfg, tcfg, boot, clients) = setup();
    let (l, addr) = listener();
    let cfg1 = RoundConfig { n_rounds: 1, ..cfg.clone() };
    let opts = ServeOptions { client_count: 2, registration_timeout: Duration::from_secs(30), ..Default::default() };
    let honest = clients[0].clone();
    let (a2, b2, c2, t2) = (addr.clone(), boot.clone(), cfg1.clone(), tcfg.clone());
    let good = thread::spawn(move || {
        let mut cs = honest;
        connect_client(&a2, &mut cs, &b2, &c2, &t2, &ClientOptions::default()).map(|_| cs)
    });
    let rogue = thread::spawn(move || {
        let mut s = TcpStream::connect(&addr).unwrap();
        write_frame(&mut s, &Frame::Hello { client_id: "rogue".into() }).unwrap();
        assert_eq!(read_frame(&mut s).unwrap().0.frame_type(), FrameType::Config);
        assert_eq!(read_frame(&mut s).unwrap().0.frame_type(), FrameType::GlobalWeights);
        let bad = encode_layers(&[Layer::new("lstm1.b", vec![3], vec![0.0; 3])], Dtype::F64);
        write_frame(
            &mut s,
            &Frame::LocalUpdate { blob: bad, sample_count: 1, train_loss: 0.0, test_r2: 0.0, test_mae: 0.0 },
        )
        .unwrap();
        read_frame(&mut s).unwrap().0
    });
    let mut gs = GlobalState::new(boot.clone());
    let reports = serve_on(l, &mut gs, &cfg1, &tcfg, &opts).unwrap();
    assert!(matches!(rogue.join().unwrap(), Frame::Error { .. }));
    good.join().unwrap().unwrap();
    assert_eq!(reports[0].participants, vec![clients[0].client_id.clone()]);
    assert_eq!(reports[0].dropped, vec!["rogue".to_string()]);

    // The average is the honest client's candidate alone.
    let mut solo = vec![clients[0].clone()];
    let mut gs_solo = GlobalState::new(boot);
    run_federated(&mut solo, &mut gs_solo, &cfg1, &tcfg).unwrap();
    assert_eq!(gs.checksum(), gs_solo.checksum());
}

#[test]
fn registration_times_out_without_clients() {
    let (cfg, tcfg, boot, _) = setup();
    let (l, _) = listener();
    let mut gs = GlobalState::new(boot);
    let opts = ServeOptions { client_count: 1, registration_timeout: Duration::from_millis(200), ..Default::default() };
    assert!(matches!(serve_on(l, &mut gs, &cfg, &tcfg, &opts), Err(Error::Timeout(_))));
}
