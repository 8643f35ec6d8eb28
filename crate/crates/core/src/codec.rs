//! Delta modulation of ADC frame sequences into ternary AER events, the
//! `.taer` container, staircase decoding and stream statistics.
//!
//! `.taer` layout (little-endian):
//!
//! ```text
//! 0   "TAER"        magic
//! 4   u8  version   = 1
//! 5   u8  rows
//! 6   u8  cols
//! 7   u8  label     0 = unlabeled, else digit
//! 8   u16 frame_count
//! 10  u16 delta
//! 12  u32 event_count
//! 16  event_count × { u8 address, u8 polarity (0 = −1, 1 = +1), u16 timestamp }
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{AerError, Error, Result};
use crate::grid::Frames;

pub const AER_MAGIC: [u8; 4] = *b"TAER";
pub const AER_VERSION: u8 = 1;
pub const AER_HEADER_BYTES: usize = 16;
pub const AER_RECORD_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Off => -1,
            Polarity::On => 1,
        }
    }

    fn byte(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

/// One spike: taxel address `row·cols + col`, frame index, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AerEvent {
    pub address: u8,
    pub timestamp: u16,
    pub polarity: Polarity,
}

/// Time-ordered events of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    rows: u8,
    cols: u8,
    frame_count: u16,
    delta: u16,
    label: Option<u8>,
    events: Vec<AerEvent>,
}

impl EventStream {
    /// Validates ordering (by `(timestamp, address)`, no duplicates) and
    /// ranges.
    pub fn new(
        rows: usize,
        cols: usize,
        frame_count: usize,
        delta: u16,
        label: Option<u8>,
        events: Vec<AerEvent>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols > 256 || rows > 255 || cols > 255 {
            return Err(AerError::InvalidHeader(format!("{rows}×{cols} array does not fit 8-bit addresses")).into());
        }
        if frame_count > u16::MAX as usize {
            return Err(AerError::InvalidHeader(format!("{frame_count} frames exceed u16")).into());
        }
        if let Some(l) = label {
            if l == 0 {
                return Err(AerError::InvalidHeader("label 0 is reserved for unlabeled".into()).into());
            }
        }
        let n = rows * cols;
        for (i, e) in events.iter().enumerate() {
            if e.address as usize >= n {
                return Err(AerError::InvalidRecord {
                    index: i,
                    reason: format!("address {} outside {n} taxels", e.address),
                }
                .into());
            }
            if e.timestamp as usize >= frame_count {
                return Err(AerError::InvalidRecord {
                    index: i,
                    reason: format!("timestamp {} outside {frame_count} frames", e.timestamp),
                }
                .into());
            }
            if i > 0 {
                let p = &events[i - 1];
                if (p.timestamp, p.address) >= (e.timestamp, e.address) {
                    return Err(AerError::OutOfOrder(i).into());
                }
            }
        }
        Ok(EventStream {
            rows: rows as u8,
            cols: cols as u8,
            frame_count: frame_count as u16,
            delta,
            label,
            events,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows as usize
    }

    pub fn cols(&self) -> usize {
        self.cols as usize
    }

    pub fn taxels(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count as usize
    }

    pub fn delta(&self) -> u16 {
        self.delta
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn with_label(mut self, label: Option<u8>) -> Self {
        self.label = label.filter(|&l| l != 0);
        self
    }

    pub fn events(&self) -> &[AerEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Dense ternary tensor `T × rows × cols` with values in {−1, 0, +1}.
    pub fn to_spike_tensor(&self) -> Frames<i8> {
        let mut out = Frames::zeros(self.frame_count(), self.rows(), self.cols());
        let n = self.taxels();
        for e in &self.events {
            out.frame_mut(e.timestamp as usize)[e.address as usize % n] = e.polarity.sign();
        }
        out
    }
}

/// Per-pixel level-crossing encoder state. Shared by the batch encoder and
/// the live sessions so both emit identical events.
#[derive(Debug, Clone)]
pub struct DeltaEncoder {
    delta: i32,
    reference: Vec<i32>,
    frames_seen: usize,
}

impl DeltaEncoder {
    pub fn new(taxels: usize, delta: u16) -> Result<Self> {
        if delta < 1 {
            return Err(Error::domain("delta threshold must be at least 1"));
        }
        Ok(DeltaEncoder {
            delta: delta as i32,
            reference: vec![0; taxels],
            frames_seen: 0,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Feeds one frame; calls `emit(address, polarity)` in address order.
    /// The first frame only initializes the references.
    pub fn push(&mut self, frame: &[u16], mut emit: impl FnMut(usize, Polarity)) -> Result<()> {
        if frame.len() != self.reference.len() {
            return Err(Error::shape(format!(
                "frame of {} taxels fed to a {}-taxel encoder",
                frame.len(),
                self.reference.len()
            )));
        }
        if self.frames_seen == 0 {
            for (r, &v) in self.reference.iter_mut().zip(frame) {
                *r = v as i32;
            }
        } else {
            for (addr, (r, &v)) in self.reference.iter_mut().zip(frame).enumerate() {
                let v = v as i32;
                if v - *r >= self.delta {
                    *r += self.delta;
                    emit(addr, Polarity::On);
                } else if *r - v >= self.delta {
                    *r -= self.delta;
                    emit(addr, Polarity::Off);
                }
            }
        }
        self.frames_seen += 1;
        Ok(())
    }
}

/// Delta-modulates `frames` (ADC codes) into an event stream with at most
/// one event per pixel per frame.
pub fn delta_encode(frames: &Frames<u16>, delta: u16) -> Result<EventStream> {
    if frames.is_empty() {
        return Err(Error::domain("cannot encode zero frames"));
    }
    let mut enc = DeltaEncoder::new(frames.frame_size(), delta)?;
    let mut events = Vec::new();
    for t in 0..frames.len() {
        enc.push(frames.frame(t), |addr, polarity| {
            events.push(AerEvent {
                address: addr as u8,
                timestamp: t as u16,
                polarity,
            })
        })?;
    }
    EventStream::new(frames.rows(), frames.cols(), frames.len(), delta, None, events)
}

/// Staircase reconstruction relative to frame 0: each pixel starts at 0 and
/// steps by ±delta per event.
pub fn delta_decode(stream: &EventStream) -> Result<Frames<i32>> {
    let n = stream.taxels();
    let mut level = vec![0i32; n];
    let mut out = Frames::zeros(stream.frame_count(), stream.rows(), stream.cols());
    let mut prev: Option<(u16, u8)> = None;
    let mut idx = 0;
    let events = stream.events();
    for t in 0..stream.frame_count() {
        while idx < events.len() && events[idx].timestamp as usize == t {
            let e = events[idx];
            if prev.is_some_and(|p| p >= (e.timestamp, e.address)) {
                return Err(AerError::OutOfOrder(idx).into());
            }
            prev = Some((e.timestamp, e.address));
            level[e.address as usize] += stream.delta as i32 * e.polarity.sign() as i32;
            idx += 1;
        }
        out.frame_mut(t).copy_from_slice(&level);
    }
    if idx != events.len() {
        return Err(AerError::OutOfOrder(idx).into());
    }
    Ok(out)
}

pub fn write_aer(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(AER_HEADER_BYTES + AER_RECORD_BYTES * stream.len());
    out.extend_from_slice(&AER_MAGIC);
    out.push(AER_VERSION);
    out.push(stream.rows);
    out.push(stream.cols);
    out.push(stream.label.unwrap_or(0));
    out.extend_from_slice(&stream.frame_count.to_le_bytes());
    out.extend_from_slice(&stream.delta.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u32).to_le_bytes());
    for e in &stream.events {
        out.push(e.address);
        out.push(e.polarity.byte());
        out.extend_from_slice(&e.timestamp.to_le_bytes());
    }
    out
}

pub fn read_aer(bytes: &[u8]) -> Result<EventStream, AerError> {
    if bytes.len() < AER_HEADER_BYTES {
        return Err(AerError::Truncated {
            needed: AER_HEADER_BYTES,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != AER_MAGIC {
        return Err(AerError::BadMagic(magic));
    }
    if bytes[4] != AER_VERSION {
        return Err(AerError::UnsupportedVersion(bytes[4]));
    }
    let rows = bytes[5] as usize;
    let cols = bytes[6] as usize;
    let label = match bytes[7] {
        0 => None,
        l => Some(l),
    };
    let frame_count = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let delta = u16::from_le_bytes([bytes[10], bytes[11]]);
    let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    let payload = &bytes[AER_HEADER_BYTES..];
    let needed = count as usize * AER_RECORD_BYTES;
    if payload.len() < needed {
        return Err(AerError::Truncated {
            needed: AER_HEADER_BYTES + needed,
            actual: bytes.len(),
        });
    }
    if payload.len() != needed {
        return Err(AerError::EventCountMismatch {
            header: count,
            payload: payload.len(),
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    for (index, rec) in payload.chunks_exact(AER_RECORD_BYTES).enumerate() {
        let polarity = match rec[1] {
            0 => Polarity::Off,
            1 => Polarity::On,
            byte => return Err(AerError::InvalidPolarity { index, byte }),
        };
        events.push(AerEvent {
            address: rec[0],
            timestamp: u16::from_le_bytes([rec[2], rec[3]]),
            polarity,
        });
    }
    EventStream::new(rows, cols, frame_count, delta, label, events).map_err(|e| match e {
        Error::Aer(a) => a,
        other => AerError::InvalidHeader(other.to_string()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub event_count: usize,
    pub positive_count: usize,
    pub negative_count: usize,
    pub sparsity: f64,
    pub raw_bytes: usize,
    pub aer_bytes: usize,
    pub compression_ratio: f64,
    pub storage_saving: f64,
}

/// Compares the `.taer` size with packed `adc_bits`-per-sample raw frames.
pub fn compression_stats(stream: &EventStream, adc_bits: u8) -> CompressionStats {
    let cells = stream.frame_count() * stream.taxels();
    let raw_bytes = (cells * adc_bits as usize).div_ceil(8);
    let aer_bytes = AER_HEADER_BYTES + AER_RECORD_BYTES * stream.len();
    let positive_count = stream
        .events()
        .iter()
        .filter(|e| e.polarity == Polarity::On)
        .count();
    let event_count = stream.len();
    CompressionStats {
        event_count,
        positive_count,
        negative_count: event_count - positive_count,
        sparsity: if cells == 0 {
            1.0
        } else {
            1.0 - event_count as f64 / cells as f64
        },
        raw_bytes,
        aer_bytes,
        compression_ratio: raw_bytes as f64 / aer_bytes as f64,
        storage_saving: 1.0 - aer_bytes as f64 / raw_bytes.max(1) as f64,
    }
}

/// Per-pixel firing statistics and a histogram of pixels by firing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringRates {
    pub counts: Vec<u32>,
    /// Events per frame for each pixel.
    pub rates: Vec<f64>,
    /// Left edges of the rate bins; the last bin is closed on the right.
    pub bin_edges: Vec<f64>,
    /// Pixels per bin.
    pub pixels: Vec<u32>,
    /// Events contributed by the pixels of each bin.
    pub events: Vec<u64>,
}

/// Bins span `[0, max(0.2, max rate)]` in `bins` equal steps.
pub fn firing_rate_histogram(stream: &EventStream, bins: usize) -> FiringRates {
    let bins = bins.max(1);
    let mut counts = vec![0u32; stream.taxels()];
    for e in stream.events() {
        counts[e.address as usize] += 1;
    }
    let t = stream.frame_count().max(1) as f64;
    let rates: Vec<f64> = counts.iter().map(|&c| c as f64 / t).collect();
    let top = rates.iter().cloned().fold(0.2, f64::max);
    let width = top / bins as f64;
    let bin_edges = (0..bins).map(|i| i as f64 * width).collect();
    let mut pixels = vec![0u32; bins];
    let mut events = vec![0u64; bins];
    for (&c, &r) in counts.iter().zip(&rates) {
        let b = ((r / width) as usize).min(bins - 1);
        pixels[b] += 1;
        events[b] += c as u64;
    }
    FiringRates {
        counts,
        rates,
        bin_edges,
        pixels,
        events,
    }
}

/// `t,address,row,col,polarity` rows for raster plots.
pub fn raster_csv(stream: &EventStream) -> String {
    let mut out = String::from("t,address,row,col,polarity\n");
    let cols = stream.cols();
    for e in stream.events() {
        let a = e.address as usize;
        let _ = writeln!(out, "{},{},{},{},{}", e.timestamp, a, a / cols, a % cols, e.polarity.sign());
    }
    out
}

pub fn histogram_csv(rates: &FiringRates) -> String {
    let mut out = String::from("bin_start,pixels,events\n");
    for ((edge, p), e) in rates.bin_edges.iter().zip(&rates.pixels).zip(&rates.events) {
        let _ = writeln!(out, "{edge:.4},{p},{e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel_series(values: &[u16]) -> Frames<u16> {
        Frames::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    fn ev(t: u16, a: u8, p: Polarity) -> AerEvent {
        AerEvent { address: a, timestamp: t, polarity: p }
    }

    #[test]
    fn constant_frames_emit_nothing() {
        let f = Frames::from_vec(5, 2, 2, vec![100u16; 20]).unwrap();
        assert!(delta_encode(&f, 6).unwrap().is_empty());
    }

    #[test]
    fn hand_traced_ramps() {
        let s = delta_encode(&pixel_series(&[0, 6, 12]), 6).unwrap();
        assert_eq!(s.events(), &[ev(1, 0, Polarity::On), ev(2, 0, Polarity::On)]);
        let s = delta_encode(&pixel_series(&[0, 13, 13, 13]), 6).unwrap();
        assert_eq!(s.events(), &[ev(1, 0, Polarity::On), ev(2, 0, Polarity::On)]);
        let d = delta_decode(&s).unwrap();
        assert_eq!(d.as_slice(), &[0, 6, 12, 12]);
    }

    #[test]
    fn zero_delta_rejected() {
        assert!(matches!(delta_encode(&pixel_series(&[0, 1]), 0), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_stream_decodes_to_zeros() {
        let s = EventStream::new(16, 16, 240, 6, None, vec![]).unwrap();
        let d = delta_decode(&s).unwrap();
        assert_eq!(d.len(), 240);
        assert!(d.as_slice().iter().all(|&v| v == 0));
        assert_eq!(write_aer(&s).len(), 16);
    }

    #[test]
    fn out_of_order_rejected() {
        let err = EventStream::new(16, 16, 10, 6, None, vec![ev(3, 1, Polarity::On), ev(2, 0, Polarity::On)]);
        assert!(matches!(err, Err(Error::Aer(AerError::OutOfOrder(1)))));
        let dup = EventStream::new(16, 16, 10, 6, None, vec![ev(3, 1, Polarity::On), ev(3, 1, Polarity::Off)]);
        assert!(dup.is_err());
    }

    #[test]
    fn header_layout() {
        let s = EventStream::new(16, 16, 240, 6, Some(5), vec![ev(7, 0x21, Polarity::Off)]).unwrap();
        let b = write_aer(&s);
        assert_eq!(
            b,
            vec![b'T', b'A', b'E', b'R', 1, 16, 16, 5, 240, 0, 6, 0, 1, 0, 0, 0, 0x21, 0, 7, 0]
        );
        assert_eq!(read_aer(&b).unwrap(), s);
    }

    #[test]
    fn distinct_format_errors() {
        let s = EventStream::new(16, 16, 240, 6, None, vec![ev(7, 3, Polarity::On)]).unwrap();
        let good = write_aer(&s);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_aer(&bad), Err(AerError::BadMagic(_))));
        assert!(matches!(read_aer(&good[..18]), Err(AerError::Truncated { .. })));
        assert!(matches!(read_aer(&good[..10]), Err(AerError::Truncated { .. })));
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(read_aer(&extra), Err(AerError::EventCountMismatch { .. })));
        let mut pol = good.clone();
        pol[17] = 2;
        assert!(matches!(read_aer(&pol), Err(AerError::InvalidPolarity { index: 0, byte: 2 })));
        let mut ver = good;
        ver[4] = 2;
        assert!(matches!(read_aer(&ver), Err(AerError::UnsupportedVersion(2))));
    }

    fn stream_with(n: usize) -> EventStream {
        let events = (0..n)
            .map(|i| ev((i / 256) as u16, (i % 256) as u8, if i % 2 == 0 { Polarity::On } else { Polarity::Off }))
            .collect();
        EventStream::new(16, 16, 240, 6, None, events).unwrap()
    }

    #[test]
    fn reported_stream_arithmetic() {
        let s = stream_with(609);
        assert_eq!(write_aer(&s).len(), 2452);
        let st = compression_stats(&s, 12);
        assert_eq!(st.raw_bytes, 92160);
        assert_eq!(st.aer_bytes, 2452);
        assert!((st.sparsity - (1.0 - 609.0 / 61440.0)).abs() < 1e-15);
        assert!((st.sparsity - 0.9901).abs() < 5e-5);
        assert!((st.compression_ratio - 37.586).abs() < 1e-3);
        assert_eq!(st.positive_count + st.negative_count, 609);

        let empty = compression_stats(&stream_with(0), 12);
        assert_eq!(empty.sparsity, 1.0);
        assert_eq!(empty.compression_ratio, 5760.0);
    }

    #[test]
    fn firing_rates() {
        let empty = firing_rate_histogram(&stream_with(0), 10);
        assert!(empty.rates.iter().all(|&r| r == 0.0));
        let events = (0..48).map(|i| ev(i * 5, 17, Polarity::On)).collect();
        let s = EventStream::new(16, 16, 240, 6, None, events).unwrap();
        let h = firing_rate_histogram(&s, 10);
        assert_eq!(h.rates[17], 0.2);
        assert_eq!(h.events.iter().sum::<u64>(), 48);
        assert_eq!(h.pixels.iter().sum::<u32>(), 256);
        assert_eq!(h.pixels[9], 1);
    }

    #[test]
    fn spike_tensor_is_ternary() {
        let s = EventStream::new(2, 2, 3, 6, None, vec![ev(0, 1, Polarity::On), ev(2, 3, Polarity::Off)]).unwrap();
        let t = s.to_spike_tensor();
        assert_eq!(t.as_slice(), &[0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, -1]);
    }
}
