mod common;

use std::sync::Arc;

use common::fixtures::{conv_network as network, last_scores, random_script, run_online};
use eskin_core::live::{
    batch_pipeline, coalesce, events_from_messages, ClientMessage, ModeName, ServerMessage, Session, SessionConfig,
    Touch,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn lockstep_session_matches_batch_pipeline_on_twenty_scripts() {
    let model = Arc::new(network(4));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut nonzero_scores = 0;
    for i in 0..20 {
        let script = random_script(&mut rng);
        let mut cfg = SessionConfig { noise_seed: i, ..SessionConfig::default() };
        if i % 2 == 1 {
            cfg.acquisition.front_end.noise_sigma = 0.003;
        }
        let online = run_online(&script, cfg, Some(model.clone()), i % 3 == 0);
        let (stream, scores) = batch_pipeline(&script, &cfg, Some(&model)).unwrap();

        assert!(online.iter().all(|m| !matches!(m, ServerMessage::Error { .. })), "script {i}");
        assert_eq!(events_from_messages(&online), stream.events(), "script {i}");
        assert_eq!(last_scores(&online), scores, "script {i}");
        if scores.iter().any(|&s| s > 0.0) {
            nonzero_scores += 1;
        }
    }
    assert!(nonzero_scores > 0, "no script produced output spikes");
}

#[test]
fn short_window_forgets_old_strokes() {
    let model = Arc::new(network(9));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SessionConfig { window: 24, ..SessionConfig::default() };
    for _ in 0..5 {
        let script = random_script(&mut rng);
        let online = run_online(&script, cfg, Some(model.clone()), false);
        let (_, scores) = batch_pipeline(&script, &cfg, Some(&model)).unwrap();
        assert_eq!(last_scores(&online), scores);
    }
}

#[test]
fn idle_session_is_quiet() {
    let acq = SessionConfig::default().acquisition;
    let mut session = Session::new(0, SessionConfig::default(), Some(Arc::new(network(1)))).unwrap();
    let out = session.handle(ClientMessage::Tick { count: Some(1000) }, true);
    assert!(events_from_messages(&out).is_empty());
    assert!(session.scores().iter().all(|&s| s == 0.0));
    assert_eq!(session.mode(), ModeName::Searching);
    let c = session.counters();
    assert_eq!((c.frames, c.events, c.effective_macs), (1000, 0, 0));
    let searches = 1000u64.div_ceil(acq.scan.idle_search_every as u64);
    assert_eq!(c.scans, searches * 16);
}

#[test]
fn protocol_errors_are_reported_not_fatal() {
    let mut session = Session::new(0, SessionConfig::default(), None).unwrap();
    let code = |msgs: Vec<ServerMessage>| match msgs.as_slice() {
        [ServerMessage::Error { code, .. }] => code.clone(),
        other => panic!("expected one error, got {other:?}"),
    };
    assert_eq!(code(session.handle(ClientMessage::Hello { grid: [8, 8], binary: false }, true)), "grid");
    let bad = Touch { t: 0, x: 0.5, y: -0.1, pressure: 100.0 };
    assert_eq!(code(session.handle(ClientMessage::Touch(bad), true)), "range");
    assert_eq!(code(session.handle(ClientMessage::Tick { count: None }, false)), "mode");
    assert_eq!(session.frame(), 0);
    assert_eq!(session.handle(ClientMessage::Tick { count: Some(2) }, true).len(), 6);
}

#[test]
fn clear_resets_window_and_scores() {
    let model = Arc::new(network(4));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let script = random_script(&mut rng);
    let mut session = Session::new(0, SessionConfig::default(), Some(model)).unwrap();
    for frame in &script {
        for touch in frame {
            session.handle(ClientMessage::Touch(*touch), true);
        }
        session.handle(ClientMessage::Tick { count: None }, true);
    }
    let out = session.handle(ClientMessage::Clear, true);
    assert!(matches!(&out[..], [ServerMessage::Scores { scores, argmax: 1, .. }] if scores.iter().all(|&s| s == 0.0)));
    assert!(session.window_tensor().as_slice().iter().all(|&v| v == 0));
}

#[test]
fn coalesced_batches_keep_every_event() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let script = random_script(&mut rng);
    let online = run_online(&script, SessionConfig::default(), Some(Arc::new(network(2))), false);
    let merged = coalesce(online.clone());
    assert_eq!(events_from_messages(&merged), events_from_messages(&online));
    let scans = |ms: &[ServerMessage]| -> u64 {
        ms.iter()
            .map(|m| match m {
                ServerMessage::ScanStats { count, .. } => *count,
                _ => 0,
            })
            .sum()
    };
    assert_eq!(scans(&merged), scans(&online));
    assert_eq!(last_scores(&merged), last_scores(&online));
}
