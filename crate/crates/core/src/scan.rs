//! Scan strategies over the crossbar: full frame, row–column, the
//! event-based binary scan search, and 3×3 sampling redistribution.
//!
//! Every strategy drives a [`Crossbar`] and records each electrical read in
//! a [`ScanTrace`], so scan counts are observed rather than computed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LineSet, Taxel};
use crate::sensor::{Crossbar, PressureField};

/// One electrical read: the enabled rows, the sensed columns, and the code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanOp {
    pub rows: LineSet,
    pub cols: LineSet,
    pub code: u16,
}

impl ScanOp {
    /// The sensed column when exactly one is enabled (every op except the
    /// row pass of the row–column strategy).
    pub fn column(&self) -> Option<usize> {
        self.cols.as_single()
    }

    fn to_json_line(self) -> String {
        match self.column() {
            Some(c) => format!(r#"{{"rows":"{}","col":{},"code":{}}}"#, self.rows.to_hex(), c, self.code),
            None => format!(
                r#"{{"rows":"{}","cols":"{}","code":{}}}"#,
                self.rows.to_hex(),
                self.cols.to_hex(),
                self.code
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanTrace {
    pub ops: Vec<ScanOp>,
}

impl ScanTrace {
    pub fn scan_count(&self) -> usize {
        self.ops.len()
    }

    pub fn extend(&mut self, other: ScanTrace) {
        self.ops.extend(other.ops);
    }

    /// One JSON object per op: `{"rows":"0xffff","col":3,"code":4095}`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::with_capacity(self.ops.len() * 40);
        for op in &self.ops {
            let _ = writeln!(out, "{}", op.to_json_line());
        }
        out
    }

    fn read(&mut self, xb: &mut Crossbar, field: &PressureField, rows: LineSet, cols: LineSet) -> Result<u16> {
        let code = xb.read_group(field, rows, cols)?;
        self.ops.push(ScanOp { rows, cols, code });
        Ok(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Codes at or above this mark a group as active.
    pub activity_threshold: u16,
    /// Keep sweeping after the first active column and descend into every
    /// active half.
    pub multi_touch: bool,
    /// Consecutive inactive windows before tracking gives up.
    pub lost_after: usize,
    /// While tracking, re-run the global search every this many frames.
    pub redetect_every: usize,
    /// While searching, run the global search every this many frames.
    pub idle_search_every: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            activity_threshold: 64,
            multi_touch: false,
            lost_after: 3,
            redetect_every: 24,
            idle_search_every: 1,
        }
    }
}

/// Reads every taxel individually. Returns the row-major code frame.
pub fn scan_frame_full(field: &PressureField, xb: &mut Crossbar) -> Result<(Vec<u16>, ScanTrace)> {
    let mut trace = ScanTrace::default();
    let mut codes = Vec::with_capacity(field.rows() * field.cols());
    for r in 0..field.rows() {
        for c in 0..field.cols() {
            codes.push(trace.read(xb, field, LineSet::single(r), LineSet::single(c))?);
        }
    }
    Ok((codes, trace))
}

/// One read per column (all rows enabled) and one per row (all columns
/// tied), then the cross product of active rows and columns. Two touches on
/// a diagonal yield four candidates, two of them ghosts.
pub fn scan_row_column(
    field: &PressureField,
    xb: &mut Crossbar,
    activity_threshold: u16,
) -> Result<(Vec<Taxel>, ScanTrace)> {
    let mut trace = ScanTrace::default();
    let all_rows = LineSet::all(field.rows());
    let all_cols = LineSet::all(field.cols());
    let mut active_cols = Vec::new();
    for c in 0..field.cols() {
        if trace.read(xb, field, all_rows, LineSet::single(c))? >= activity_threshold {
            active_cols.push(c);
        }
    }
    let mut active_rows = Vec::new();
    for r in 0..field.rows() {
        if trace.read(xb, field, LineSet::single(r), all_cols)? >= activity_threshold {
            active_rows.push(r);
        }
    }
    let candidates = active_rows
        .iter()
        .flat_map(|&r| active_cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok((candidates, trace))
}

fn check_threshold(xb: &Crossbar, rows: usize, threshold: u16) -> Result<()> {
    let idle_code = xb.idle_column_code(rows);
    if threshold <= idle_code {
        return Err(Error::AmbiguousLocalization { threshold, idle_code });
    }
    Ok(())
}

/// Event-based binary scan search.
///
/// Columns are swept in ascending order with every row enabled; the first
/// active column is then bisected over its rows, enabling the upper half and
/// following whichever half is active. In multi-touch mode the sweep covers
/// all columns and both halves are read at every level.
pub fn scan_binary_search(
    field: &PressureField,
    xb: &mut Crossbar,
    cfg: &ScanConfig,
) -> Result<(Vec<Taxel>, ScanTrace)> {
    check_threshold(xb, field.rows(), cfg.activity_threshold)?;
    let mut trace = ScanTrace::default();
    let mut found = Vec::new();
    let all_rows = LineSet::all(field.rows());
    for c in 0..field.cols() {
        let col = LineSet::single(c);
        if trace.read(xb, field, all_rows, col)? < cfg.activity_threshold {
            continue;
        }
        if cfg.multi_touch {
            bisect_all(field, xb, cfg.activity_threshold, all_rows, c, &mut trace, &mut found)?;
        } else {
            let mut rows = all_rows;
            while rows.len() > 1 {
                let (upper, lower) = rows.halves();
                rows = if trace.read(xb, field, upper, col)? >= cfg.activity_threshold {
                    upper
                } else {
                    lower
                };
            }
            found.push((rows.iter().next().expect("non-empty"), c));
            break;
        }
    }
    found.sort_unstable();
    Ok((found, trace))
}

fn bisect_all(
    field: &PressureField,
    xb: &mut Crossbar,
    threshold: u16,
    rows: LineSet,
    col: usize,
    trace: &mut ScanTrace,
    found: &mut Vec<Taxel>,
) -> Result<()> {
    if let Some(r) = rows.as_single() {
        found.push((r, col));
        return Ok(());
    }
    let (upper, lower) = rows.halves();
    let cols = LineSet::single(col);
    let upper_active = trace.read(xb, field, upper, cols)? >= threshold;
    let lower_active = trace.read(xb, field, lower, cols)? >= threshold;
    if upper_active {
        bisect_all(field, xb, threshold, upper, col, trace, found)?;
    }
    if lower_active {
        bisect_all(field, xb, threshold, lower, col, trace, found)?;
    }
    Ok(())
}

/// Focus of sampling redistribution: a 3×3 window clipped at the borders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hotspot {
    pub center: Taxel,
    pub window: Vec<Taxel>,
    pub peak_code: u16,
}

impl Hotspot {
    pub fn new(center: Taxel, rows: usize, cols: usize) -> Self {
        let (r0, c0) = center;
        let mut window = Vec::with_capacity(9);
        for r in r0.saturating_sub(1)..=(r0 + 1).min(rows - 1) {
            for c in c0.saturating_sub(1)..=(c0 + 1).min(cols - 1) {
                window.push((r, c));
            }
        }
        Hotspot {
            center,
            window,
            peak_code: 0,
        }
    }

    pub fn contains(&self, taxel: Taxel) -> bool {
        self.window.contains(&taxel)
    }
}

/// Codes read from one window, in window order.
pub type Patch = Vec<(Taxel, u16)>;

/// Reads the hotspot window taxel by taxel and returns the re-centred
/// hotspot (argmax, ties to the smallest `(row, col)`).
pub fn sample_window(
    field: &PressureField,
    hotspot: &Hotspot,
    xb: &mut Crossbar,
    trace: &mut ScanTrace,
) -> Result<(Hotspot, Patch)> {
    let mut patch = Vec::with_capacity(hotspot.window.len());
    let mut best = (hotspot.center, 0u16);
    let mut first = true;
    for &(r, c) in &hotspot.window {
        let code = trace.read(xb, field, LineSet::single(r), LineSet::single(c))?;
        if first || code > best.1 {
            best = ((r, c), code);
            first = false;
        }
        patch.push(((r, c), code));
    }
    let mut next = Hotspot::new(best.0, field.rows(), field.cols());
    next.peak_code = best.1;
    Ok((next, patch))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Redistribution {
    /// Hotspot after each processed step.
    pub hotspots: Vec<Hotspot>,
    pub patches: Vec<Patch>,
    pub trace: ScanTrace,
    /// Step at which the touch was declared lost; processing stops there and
    /// the caller is expected to re-run the global search.
    pub lost_at: Option<usize>,
}

/// Tracks a touch across `frames`, reading only the 3×3 window each step.
pub fn redistribute_sampling(
    frames: &[PressureField],
    initial: Hotspot,
    xb: &mut Crossbar,
    cfg: &ScanConfig,
) -> Result<Redistribution> {
    let mut out = Redistribution {
        hotspots: Vec::with_capacity(frames.len()),
        patches: Vec::with_capacity(frames.len()),
        trace: ScanTrace::default(),
        lost_at: None,
    };
    let mut current = initial;
    let mut misses = 0;
    for (t, field) in frames.iter().enumerate() {
        let (next, patch) = sample_window(field, &current, xb, &mut out.trace)?;
        out.patches.push(patch);
        if next.peak_code < cfg.activity_threshold {
            misses += 1;
            // an inactive window keeps its place
            let mut stay = current.clone();
            stay.peak_code = next.peak_code;
            current = stay;
        } else {
            misses = 0;
            current = next;
        }
        out.hotspots.push(current.clone());
        if misses >= cfg.lost_after.max(1) {
            out.lost_at = Some(t);
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScanMode {
    Searching,
    Tracking(Hotspot),
}

/// Result of acquiring one frame through a [`Tracker`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAcquisition {
    /// Full code frame; taxels not visited this frame read 0.
    pub codes: Vec<u16>,
    pub visited: Vec<Taxel>,
    pub trace: ScanTrace,
    pub hotspot: Option<Hotspot>,
}

/// Per-session acquisition state machine: global binary search while
/// searching, 3×3 redistribution while tracking, periodic re-detection.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: ScanConfig,
    rows: usize,
    cols: usize,
    mode: ScanMode,
    misses: usize,
    since_search: usize,
    total_scans: u64,
}

impl Tracker {
    pub fn new(rows: usize, cols: usize, cfg: ScanConfig) -> Self {
        Tracker {
            cfg,
            rows,
            cols,
            mode: ScanMode::Searching,
            misses: 0,
            since_search: usize::MAX,
            total_scans: 0,
        }
    }

    pub fn mode(&self) -> &ScanMode {
        &self.mode
    }

    pub fn total_scans(&self) -> u64 {
        self.total_scans
    }

    pub fn step(&mut self, field: &PressureField, xb: &mut Crossbar) -> Result<FrameAcquisition> {
        if field.rows() != self.rows || field.cols() != self.cols {
            return Err(Error::shape(format!(
                "{}×{} field given to a {}×{} tracker",
                field.rows(),
                field.cols(),
                self.rows,
                self.cols
            )));
        }
        let mut trace = ScanTrace::default();
        let mut codes = vec![0u16; self.rows * self.cols];
        let mut visited = Vec::new();
        self.since_search = self.since_search.saturating_add(1);

        let search_due = match self.mode {
            ScanMode::Searching => self.since_search >= self.cfg.idle_search_every.max(1),
            ScanMode::Tracking(_) => self.since_search >= self.cfg.redetect_every.max(1),
        };
        if search_due {
            self.since_search = 0;
            let single = ScanConfig {
                multi_touch: false,
                ..self.cfg
            };
            let (found, t) = scan_binary_search(field, xb, &single)?;
            trace.extend(t);
            if let Some(&taxel) = found.first() {
                let outside = match &self.mode {
                    ScanMode::Searching => true,
                    ScanMode::Tracking(h) => !h.contains(taxel),
                };
                if outside {
                    self.mode = ScanMode::Tracking(Hotspot::new(taxel, self.rows, self.cols));
                    self.misses = 0;
                }
            }
        }

        let mut hotspot = None;
        if let ScanMode::Tracking(current) = &self.mode {
            let (next, patch) = sample_window(field, current, xb, &mut trace)?;
            for ((r, c), code) in patch {
                codes[r * self.cols + c] = code;
                visited.push((r, c));
            }
            if next.peak_code < self.cfg.activity_threshold {
                self.misses += 1;
                if self.misses >= self.cfg.lost_after.max(1) {
                    self.mode = ScanMode::Searching;
                    self.misses = 0;
                    self.since_search = usize::MAX;
                }
            } else {
                self.misses = 0;
                hotspot = Some(next.clone());
                self.mode = ScanMode::Tracking(next);
            }
            if hotspot.is_none() {
                if let ScanMode::Tracking(h) = &self.mode {
                    hotspot = Some(h.clone());
                }
            }
        }
        self.total_scans += trace.scan_count() as u64;
        Ok(FrameAcquisition {
            codes,
            visited,
            trace,
            hotspot,
        })
    }
}

/// Closed-form scan accounting for an `n`-taxel square array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanStats {
    pub n: usize,
    pub avg_scans: f64,
    pub worst_scans: usize,
    pub ratio_vs_frame: f64,
    pub ratio_vs_rowcol: f64,
    pub dr_gain: f64,
}

/// Equivalent dynamic-range gain of concentrating the ADC on a 3×3 window.
pub fn dynamic_range_gain(n: usize) -> f64 {
    n as f64 / 9.0
}

pub fn expected_scan_counts(n: usize) -> Result<ScanStats> {
    let side = (n as f64).sqrt().round() as usize;
    if n < 4 || side * side != n || !n.is_power_of_two() {
        return Err(Error::domain(format!(
            "{n} taxels is not a square power-of-two array"
        )));
    }
    let log2_n = n.trailing_zeros() as usize;
    let worst = side + log2_n / 2;
    Ok(ScanStats {
        n,
        avg_scans: 0.5 * (side as f64 + log2_n as f64),
        worst_scans: worst,
        ratio_vs_frame: n as f64 / worst as f64,
        ratio_vs_rowcol: (2 * side) as f64 / worst as f64,
        dr_gain: dynamic_range_gain(n),
    })
}

/// Exhaustive single-touch simulation of the binary scan search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCounts {
    pub side: usize,
    pub mean: f64,
    pub worst: usize,
    /// Every position was localized to exactly the pressed taxel.
    pub all_localized: bool,
}

/// Presses each taxel of a `side × side` array in turn and runs the binary
/// search on it.
pub fn simulate_single_touch(side: usize, xb: &mut Crossbar, cfg: &ScanConfig) -> Result<SimulatedCounts> {
    let mut total = 0usize;
    let mut worst = 0usize;
    let mut all_localized = true;
    for r in 0..side {
        for c in 0..side {
            let field = PressureField::single_touch(side, side, (r, c), 200.0);
            let (found, trace) = scan_binary_search(&field, xb, cfg)?;
            all_localized &= found == [(r, c)];
            total += trace.scan_count();
            worst = worst.max(trace.scan_count());
        }
    }
    Ok(SimulatedCounts {
        side,
        mean: total as f64 / (side * side) as f64,
        worst,
        all_localized,
    })
}
