//! Software twin of an event-driven electronic skin.
//!
//! The crate models a piezoresistive crossbar and its readout chain
//! ([`sensor`]), the scan strategies that decide which taxels the ADC visits
//! ([`scan`]), the delta-modulation/AER event codec ([`codec`]), a synthetic
//! handwriting dataset ([`dataset`]), spiking and conventional classifiers
//! with MAC/sparsity/memory instrumentation ([`snn`]), the reproduction
//! harness ([`bench`]) and the per-session live pipeline ([`live`]).

pub mod bench;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod live;
pub mod scan;
pub mod sensor;
pub mod snn;

pub use codec::{AerEvent, CompressionStats, EventStream, Polarity};
pub use error::{AerError, Error, Result};
pub use grid::{Frames, LineSet, Taxel};
pub use scan::{Hotspot, ScanConfig, ScanStats, ScanTrace};
pub use sensor::{FrontEndConfig, PressureField, TaxelModel};

/// Rows and columns of the reference array.
pub const ARRAY_SIDE: usize = 16;
/// Taxels in the reference array.
pub const ARRAY_TAXELS: usize = ARRAY_SIDE * ARRAY_SIDE;
/// Frame clock of the acquisition system, Hz.
pub const FRAME_RATE_HZ: u32 = 120;
/// Frames in one 2 s sample.
pub const SAMPLE_FRAMES: usize = 240;
