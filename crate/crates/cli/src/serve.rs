use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use eskin_core::live::{coalesce, events_to_aer, ClientMessage, ServerMessage, Session, SessionConfig, WIRE_SCHEMA_VERSION};
use eskin_core::snn::{Checkpoint, Model, SpikingNetwork};
use eskin_core::FRAME_RATE_HZ;
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::sync::mpsc;

use crate::commands::sha256_hex;
use crate::config::ServeOpts;

/// Telemetry batches buffered per client before coalescing starts.
const OUTBOX_BATCHES: usize = 32;

struct AppState {
    model: Option<Arc<SpikingNetwork>>,
    checkpoint_hash: Option<String>,
    lockstep: bool,
    noise: f64,
    next_session: AtomicU64,
}

#[derive(Debug, Serialize)]
struct Health {
    version: &'static str,
    checkpoint_hash: Option<String>,
    schema: u32,
    lockstep: bool,
}

fn load_model(path: &PathBuf) -> Result<(Arc<SpikingNetwork>, String)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let checkpoint = Checkpoint::from_bytes(&bytes)?;
    match checkpoint.model()? {
        Model::Spiking(net) => Ok((Arc::new(net), sha256_hex(&bytes))),
        Model::Cnn(_) => bail!("{} holds a CNN; live scores need a spiking checkpoint", path.display()),
    }
}

pub async fn serve(opts: ServeOpts) -> Result<()> {
    let (model, checkpoint_hash) = match &opts.checkpoint {
        Some(path) => {
            let (m, h) = load_model(path)?;
            (Some(m), Some(h))
        }
        None => (None, None),
    };
    let state = Arc::new(AppState {
        model,
        checkpoint_hash,
        lockstep: opts.lockstep.unwrap_or(false),
        noise: opts.noise.unwrap_or(0.0),
        next_session: AtomicU64::new(1),
    });
    let host = opts.host.unwrap_or_else(|| "127.0.0.1".into());
    let addr: SocketAddr = format!("{host}:{}", opts.port.unwrap_or(8080))
        .parse()
        .with_context(|| format!("invalid listen address {host}"))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    println!("listening on {}", listener.local_addr()?);
    let app = Router::new()
        .route("/healthz", get(healthz))
        .route("/stream", get(stream))
        .with_state(state);
    axum::serve(listener, app).await.context("server failed")
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        version: env!("CARGO_PKG_VERSION"),
        checkpoint_hash: state.checkpoint_hash.clone(),
        schema: WIRE_SCHEMA_VERSION,
        lockstep: state.lockstep,
    })
}

async fn stream(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn run_session(socket: WebSocket, state: Arc<AppState>) {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let mut cfg = SessionConfig {
        noise_seed: id,
        ..SessionConfig::default()
    };
    cfg.acquisition.front_end.noise_sigma = state.noise;
    let mut session = match Session::new(id, cfg, state.model.clone()) {
        Ok(s) => s,
        Err(_) => return,
    };
    let (mut sink, mut source) = socket.split();
    let ready = ServerMessage::Ready {
        session: id,
        schema: WIRE_SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").into(),
        grid: session.grid(),
        lockstep: state.lockstep,
    };
    let (tx, mut rx) = mpsc::channel::<(Vec<ServerMessage>, bool, u16)>(OUTBOX_BATCHES);
    let writer = tokio::spawn(async move {
        while let Some((batch, binary, delta)) = rx.recv().await {
            for m in batch {
                let msg = match (&m, binary) {
                    (ServerMessage::Events { frame, events }, true) => match events_to_aer(*frame, events, delta) {
                        Ok(bytes) => Message::Binary(bytes.into()),
                        Err(_) => continue,
                    },
                    _ => match serde_json::to_string(&m) {
                        Ok(text) => Message::Text(text.into()),
                        Err(_) => continue,
                    },
                };
                if sink.send(msg).await.is_err() {
                    return;
                }
            }
        }
    });

    let mut backlog: Vec<ServerMessage> = vec![ready];
    let mut ticker = tokio::time::interval(Duration::from_secs_f64(1.0 / FRAME_RATE_HZ as f64));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Burst);
    loop {
        let produced = tokio::select! {
            biased;
            permit = tx.reserve(), if !backlog.is_empty() => {
                match permit {
                    Ok(p) => p.send((std::mem::take(&mut backlog), session.binary_events(), session.delta())),
                    Err(_) => break,
                }
                continue;
            }
            incoming = source.next() => match incoming {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(msg) => session.handle(msg, state.lockstep),
                    Err(e) => vec![ServerMessage::error(session.frame(), "parse", e.to_string())],
                },
                Some(Ok(Message::Binary(_))) => {
                    vec![ServerMessage::error(session.frame(), "parse", "client messages are JSON text")]
                }
                Some(Ok(_)) => Vec::new(),
                Some(Err(_)) | None => break,
            },
            _ = ticker.tick(), if !state.lockstep => match session.step_frame() {
                Ok(m) => m,
                Err(e) => vec![ServerMessage::error(session.frame(), "internal", e.to_string())],
            },
        };
        backlog.extend(produced);
        if backlog.is_empty() {
            continue;
        }
        match tx.try_reserve() {
            Ok(p) => p.send((std::mem::take(&mut backlog), session.binary_events(), session.delta())),
            Err(mpsc::error::TrySendError::Full(())) => backlog = coalesce(std::mem::take(&mut backlog)),
            Err(mpsc::error::TrySendError::Closed(())) => break,
        }
    }
    drop(tx);
    let _ = writer.await;
}
