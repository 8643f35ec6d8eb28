//! Per-session live pipeline: touches → pressure field → tracker scans →
//! delta events → sliding-window Conv-SNN scores, plus the JSON wire
//! protocol spoken over the `/stream` socket.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{delta_encode, AerEvent, DeltaEncoder, EventStream, Polarity};
use crate::dataset::{acquire, deposit_footprint, AcquisitionConfig, MAX_PRESSURE_KPA};
use crate::error::{Error, Result};
use crate::grid::Frames;
use crate::scan::{ScanMode, Tracker};
use crate::sensor::{Crossbar, PressureField};
use crate::snn::SpikingNetwork;
use crate::{ARRAY_SIDE, SAMPLE_FRAMES};

/// Version of the message schema in `docs/wire.schema.json`.
pub const WIRE_SCHEMA_VERSION: u32 = 1;

/// One pointer sample on the unit square; `pressure` in kPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Touch {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// `binary` requests event batches as `.taer` binary frames.
    Hello {
        grid: [usize; 2],
        #[serde(default)]
        binary: bool,
    },
    Touch(Touch),
    Clear,
    /// Advances a lockstep session by `count` frames (default 1).
    Tick {
        #[serde(default)]
        count: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Searching,
    Tracking,
}

/// One event on the wire: `[address, polarity (±1), frame]`.
pub type WireEvent = (u8, i8, u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ready {
        session: u64,
        schema: u32,
        version: String,
        grid: [usize; 2],
        lockstep: bool,
    },
    Events {
        frame: u64,
        events: Vec<WireEvent>,
    },
    Hotspot {
        frame: u64,
        r: usize,
        c: usize,
    },
    ScanStats {
        frame: u64,
        /// Scans spent on this frame (or on the coalesced frames).
        count: u64,
        mode: ModeName,
        total_scans: u64,
        total_events: u64,
        effective_macs: u64,
    },
    Scores {
        frame: u64,
        scores: Vec<f32>,
        /// Winning digit (1–9), ties to the smaller digit.
        argmax: u8,
    },
    Error {
        frame: u64,
        code: String,
        msg: String,
    },
}

impl ServerMessage {
    pub fn error(frame: u64, code: &str, msg: impl Into<String>) -> Self {
        ServerMessage::Error {
            frame,
            code: code.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub acquisition: AcquisitionConfig,
    /// Sliding classification window, frames.
    pub window: usize,
    pub noise_seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            acquisition: AcquisitionConfig::default(),
            window: SAMPLE_FRAMES,
            noise_seed: 0,
        }
    }
}

/// Monotone per-session counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub frames: u64,
    pub scans: u64,
    pub events: u64,
    pub effective_macs: u64,
}

/// Pressure field of one frame from its touches (footprints add, clipped
/// at the pressure ceiling).
pub fn render_touches(touches: &[Touch], rows: usize, cols: usize) -> PressureField {
    let mut field = PressureField::zeros(rows, cols);
    for t in touches {
        deposit_footprint(field.values_mut(), rows, cols, t.x, t.y, t.pressure);
    }
    field
}

fn check_touch(t: &Touch) -> Result<()> {
    let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
    if !unit(t.x) || !unit(t.y) {
        return Err(Error::domain(format!("touch position ({}, {}) outside the unit square", t.x, t.y)));
    }
    if !(t.pressure.is_finite() && (0.0..=MAX_PRESSURE_KPA).contains(&t.pressure)) {
        return Err(Error::domain(format!("touch pressure {} outside 0–{MAX_PRESSURE_KPA} kPa", t.pressure)));
    }
    Ok(())
}

/// State of one live session.
pub struct Session {
    pub id: u64,
    cfg: SessionConfig,
    rows: usize,
    cols: usize,
    crossbar: Crossbar,
    tracker: Tracker,
    encoder: DeltaEncoder,
    pending: BTreeMap<u64, Vec<Touch>>,
    window: VecDeque<Vec<(u8, i8)>>,
    model: Option<Arc<SpikingNetwork>>,
    scores: Vec<f32>,
    counters: Counters,
    binary_events: bool,
}

impl Session {
    pub fn new(id: u64, cfg: SessionConfig, model: Option<Arc<SpikingNetwork>>) -> Result<Self> {
        let (rows, cols) = (ARRAY_SIDE, ARRAY_SIDE);
        if cfg.window == 0 {
            return Err(Error::domain("classification window must be at least one frame"));
        }
        if let Some(m) = &model {
            if m.input_len() != rows * cols {
                return Err(Error::shape(format!("model expects {} inputs, array has {}", m.input_len(), rows * cols)));
            }
        }
        let classes = model.as_ref().map(|m| m.outputs()).unwrap_or(crate::snn::NUM_CLASSES);
        Ok(Session {
            id,
            crossbar: Crossbar::with_noise_seed(cfg.acquisition.model, cfg.acquisition.front_end, cfg.noise_seed)?,
            tracker: Tracker::new(rows, cols, cfg.acquisition.scan),
            encoder: DeltaEncoder::new(rows * cols, cfg.acquisition.delta)?,
            cfg,
            rows,
            cols,
            pending: BTreeMap::new(),
            window: VecDeque::with_capacity(cfg.window),
            model,
            scores: vec![0.0; classes],
            counters: Counters::default(),
            binary_events: false,
        })
    }

    pub fn delta(&self) -> u16 {
        self.cfg.acquisition.delta
    }

    pub fn grid(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    /// Index of the next frame `step_frame` will produce.
    pub fn frame(&self) -> u64 {
        self.counters.frames
    }

    /// Whether the client negotiated binary event batches.
    pub fn binary_events(&self) -> bool {
        self.binary_events
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn mode(&self) -> ModeName {
        match self.tracker.mode() {
            ScanMode::Searching => ModeName::Searching,
            ScanMode::Tracking(_) => ModeName::Tracking,
        }
    }

    /// Queues a touch for frame `touch.t` (or the next frame if that has
    /// already passed).
    pub fn ingest_touch(&mut self, touch: Touch) -> Result<()> {
        check_touch(&touch)?;
        let at = touch.t.max(self.frame());
        self.pending.entry(at).or_default().push(touch);
        Ok(())
    }

    /// Drops queued touches and the classification window.
    pub fn clear(&mut self) {
        self.pending.clear();
        self.window.clear();
        self.scores.iter_mut().for_each(|s| *s = 0.0);
    }

    /// One 120 Hz tick: render, scan, encode, classify.
    pub fn step_frame(&mut self) -> Result<Vec<ServerMessage>> {
        let frame = self.frame();
        let mut touches = Vec::new();
        while let Some(entry) = self.pending.first_entry() {
            if *entry.key() > frame {
                break;
            }
            touches.extend(entry.remove());
        }
        let field = render_touches(&touches, self.rows, self.cols);
        let acq = self.tracker.step(&field, &mut self.crossbar)?;
        let scans = acq.trace.scan_count() as u64;
        let mut events = Vec::new();
        self.encoder.push(&acq.codes, |addr, pol| events.push((addr as u8, pol.sign())))?;

        if self.window.len() == self.cfg.window {
            self.window.pop_front();
        }
        self.window.push_back(events.clone());
        self.counters.frames += 1;
        self.counters.scans += scans;
        self.counters.events += events.len() as u64;

        let mut out = Vec::with_capacity(4);
        out.push(ServerMessage::Events {
            frame,
            events: events.iter().map(|&(a, p)| (a, p, frame)).collect(),
        });
        if let Some(h) = acq.hotspot {
            out.push(ServerMessage::Hotspot {
                frame,
                r: h.center.0,
                c: h.center.1,
            });
        }
        if self.model.is_some() {
            let (scores, macs) = self.classify_window()?;
            self.scores = scores;
            self.counters.effective_macs += macs;
        }
        out.push(ServerMessage::ScanStats {
            frame,
            count: scans,
            mode: self.mode(),
            total_scans: self.counters.scans,
            total_events: self.counters.events,
            effective_macs: self.counters.effective_macs,
        });
        out.push(self.scores_message(frame));
        Ok(out)
    }

    fn scores_message(&self, frame: u64) -> ServerMessage {
        ServerMessage::Scores {
            frame,
            scores: self.scores.clone(),
            argmax: crate::snn::argmax(&self.scores) as u8 + 1,
        }
    }

    /// Current window as a spike tensor, zero-padded at the old end.
    pub fn window_tensor(&self) -> Frames<i8> {
        let mut t = Frames::zeros(self.cfg.window, self.rows, self.cols);
        let offset = self.cfg.window - self.window.len();
        for (k, events) in self.window.iter().enumerate() {
            let f = t.frame_mut(offset + k);
            for &(a, p) in events {
                f[a as usize] = p;
            }
        }
        t
    }

    /// Readout over the current window. Returns the scores and the
    /// effective MACs spent (zero when the window holds no events).
    pub fn classify_window(&self) -> Result<(Vec<f32>, u64)> {
        let Some(model) = &self.model else {
            return Ok((self.scores.clone(), 0));
        };
        if self.window.iter().all(Vec::is_empty) {
            return Ok((vec![0.0; model.outputs()], 0));
        }
        let out = model.forward(&self.window_tensor())?;
        Ok((out.scores, out.stats.effective_macs()))
    }

    /// Applies one client message; lockstep ticks advance the session.
    pub fn handle(&mut self, msg: ClientMessage, lockstep: bool) -> Vec<ServerMessage> {
        let frame = self.frame();
        match msg {
            ClientMessage::Hello { grid, binary } => {
                if grid != self.grid() {
                    return vec![ServerMessage::error(frame, "grid", format!("server array is {:?}", self.grid()))];
                }
                self.binary_events = binary;
                Vec::new()
            }
            ClientMessage::Touch(t) => match self.ingest_touch(t) {
                Ok(()) => Vec::new(),
                Err(e) => vec![ServerMessage::error(frame, "range", e.to_string())],
            },
            ClientMessage::Clear => {
                self.clear();
                vec![self.scores_message(frame)]
            }
            ClientMessage::Tick { count } => {
                if !lockstep {
                    return vec![ServerMessage::error(frame, "mode", "tick is only accepted in lockstep mode")];
                }
                let mut out = Vec::new();
                for _ in 0..count.unwrap_or(1) {
                    match self.step_frame() {
                        Ok(m) => out.extend(m),
                        Err(e) => {
                            out.push(ServerMessage::error(self.frame(), "internal", e.to_string()));
                            break;
                        }
                    }
                }
                out
            }
        }
    }
}

/// Merges telemetry of several frames into one batch: events are
/// concatenated, the latest hotspot, scores and counters win, and scan
/// counts add up. Errors are kept in order.
pub fn coalesce(batches: impl IntoIterator<Item = ServerMessage>) -> Vec<ServerMessage> {
    let mut events: Option<(u64, Vec<WireEvent>)> = None;
    let mut hotspot = None;
    let mut stats: Option<ServerMessage> = None;
    let mut scans = 0u64;
    let mut scores = None;
    let mut rest = Vec::new();
    for m in batches {
        match m {
            ServerMessage::Events { frame, events: ev } => match &mut events {
                Some((f, all)) => {
                    *f = frame;
                    all.extend(ev);
                }
                None => events = Some((frame, ev)),
            },
            ServerMessage::Hotspot { .. } => hotspot = Some(m),
            ServerMessage::ScanStats { count, .. } => {
                scans += count;
                stats = Some(m);
            }
            ServerMessage::Scores { .. } => scores = Some(m),
            other => rest.push(other),
        }
    }
    let mut out = rest;
    if let Some((frame, events)) = events {
        out.push(ServerMessage::Events { frame, events });
    }
    out.extend(hotspot);
    if let Some(ServerMessage::ScanStats { frame, mode, total_scans, total_events, effective_macs, .. }) = stats {
        out.push(ServerMessage::ScanStats {
            frame,
            count: scans,
            mode,
            total_scans,
            total_events,
            effective_macs,
        });
    }
    out.extend(scores);
    out
}

/// Touches per frame, as recorded from a client.
pub type Script = Vec<Vec<Touch>>;

/// Pressure frames of a script.
pub fn render_script(script: &Script) -> Frames<f32> {
    let (rows, cols) = (ARRAY_SIDE, ARRAY_SIDE);
    let mut frames = Frames::zeros(0, rows, cols);
    for touches in script {
        let field = render_touches(touches, rows, cols);
        frames
            .push_frame(field.values())
            .expect("field shape matches the array");
    }
    frames
}

/// Batch reference for a script: the full event stream and the scores of
/// the final window.
pub fn batch_pipeline(script: &Script, cfg: &SessionConfig, model: Option<&SpikingNetwork>) -> Result<(EventStream, Vec<f32>)> {
    for t in script.iter().flatten() {
        check_touch(t)?;
    }
    let frames = render_script(script);
    let (codes, _) = acquire(&frames, &cfg.acquisition, cfg.noise_seed)?;
    let stream = delta_encode(&codes, cfg.acquisition.delta)?;
    let Some(model) = model else {
        return Ok((stream, vec![0.0; crate::snn::NUM_CLASSES]));
    };
    let spikes = stream.to_spike_tensor();
    let (rows, cols) = (spikes.rows(), spikes.cols());
    let start = spikes.len().saturating_sub(cfg.window);
    let mut window = Frames::zeros(cfg.window - (spikes.len() - start), rows, cols);
    for t in start..spikes.len() {
        window.push_frame(spikes.frame(t))?;
    }
    if window.as_slice().iter().all(|&v| v == 0) {
        return Ok((stream, vec![0.0; model.outputs()]));
    }
    Ok((stream, model.forward(&window)?.scores))
}

/// Encodes one `events` message as a `.taer` chunk. Timestamps are frame
/// indices modulo 65535.
pub fn events_to_aer(frame: u64, events: &[WireEvent], delta: u16) -> Result<Vec<u8>> {
    const WRAP: u64 = u16::MAX as u64;
    let records = events
        .iter()
        .map(|&(address, pol, t)| AerEvent {
            address,
            timestamp: (t % WRAP) as u16,
            polarity: if pol > 0 { Polarity::On } else { Polarity::Off },
        })
        .collect();
    let stream = EventStream::new(ARRAY_SIDE, ARRAY_SIDE, (frame % WRAP) as usize + 1, delta, None, records)?;
    Ok(crate::codec::write_aer(&stream))
}

/// Events a session emitted, in stream form (timestamps are frame indices).
pub fn events_from_messages(messages: &[ServerMessage]) -> Vec<AerEvent> {
    messages
        .iter()
        .filter_map(|m| match m {
            ServerMessage::Events { events, .. } => Some(events),
            _ => None,
        })
        .flatten()
        .map(|&(address, pol, t)| AerEvent {
            address,
            timestamp: t as u16,
            polarity: if pol > 0 { Polarity::On } else { Polarity::Off },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::new(1, SessionConfig::default(), None).unwrap()
    }

    #[test]
    fn idle_session_emits_no_events() {
        let mut s = session();
        for _ in 0..5 {
            let msgs = s.step_frame().unwrap();
            assert!(matches!(&msgs[0], ServerMessage::Events { events, .. } if events.is_empty()));
        }
        assert_eq!(s.counters().events, 0);
    }

    #[test]
    fn out_of_range_touch_is_rejected() {
        let mut s = session();
        let bad = Touch { t: 0, x: 1.5, y: 0.5, pressure: 200.0 };
        let out = s.handle(ClientMessage::Touch(bad), true);
        assert!(matches!(&out[0], ServerMessage::Error { code, .. } if code == "range"));
    }

    #[test]
    fn hotspot_converges_to_centre() {
        let mut s = session();
        let mut last = None;
        for f in 0..3 {
            s.ingest_touch(Touch { t: f, x: 0.6, y: 0.4, pressure: 300.0 }).unwrap();
            for m in s.step_frame().unwrap() {
                if let ServerMessage::Hotspot { r, c, .. } = m {
                    last = Some((r, c));
                }
            }
        }
        assert_eq!(last, Some((6, 9)));
    }

    #[test]
    fn wire_format_is_tagged() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"touch","t":3,"x":0.5,"y":0.25,"pressure":120}"#).unwrap();
        assert_eq!(m, ClientMessage::Touch(Touch { t: 3, x: 0.5, y: 0.25, pressure: 120.0 }));
        let tick: ClientMessage = serde_json::from_str(r#"{"type":"tick"}"#).unwrap();
        assert_eq!(tick, ClientMessage::Tick { count: None });
        let s = serde_json::to_string(&ServerMessage::Hotspot { frame: 2, r: 1, c: 4 }).unwrap();
        assert_eq!(s, r#"{"type":"hotspot","frame":2,"r":1,"c":4}"#);
    }

    #[test]
    fn coalescing_keeps_counters_exact() {
        let stats = |frame, count, total| ServerMessage::ScanStats {
            frame,
            count,
            mode: ModeName::Tracking,
            total_scans: total,
            total_events: 0,
            effective_macs: 0,
        };
        let merged = coalesce(vec![
            ServerMessage::Events { frame: 0, events: vec![(1, 1, 0)] },
            stats(0, 20, 20),
            ServerMessage::Events { frame: 1, events: vec![(2, -1, 1)] },
            stats(1, 9, 29),
        ]);
        assert_eq!(merged[0], ServerMessage::Events { frame: 1, events: vec![(1, 1, 0), (2, -1, 1)] });
        assert_eq!(merged[1], stats(1, 29, 29));
    }
}
