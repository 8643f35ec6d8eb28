//! Small shared containers: row/column line sets, taxel coordinates and
//! dense `T × rows × cols` frame stacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum rows or columns a [`LineSet`] can address.
pub const MAX_LINES: usize = 64;

/// (row, col) coordinate of one taxel.
pub type Taxel = (usize, usize);

/// A set of crossbar lines (rows or columns) enabled together, as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineSet(pub u64);

impl LineSet {
    pub const EMPTY: LineSet = LineSet(0);

    pub fn single(line: usize) -> Self {
        debug_assert!(line < MAX_LINES);
        LineSet(1u64 << line)
    }

    /// Lines `start..end`.
    pub fn range(start: usize, end: usize) -> Self {
        debug_assert!(start <= end && end <= MAX_LINES);
        if start == end {
            return LineSet::EMPTY;
        }
        let width = end - start;
        let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
        LineSet(mask << start)
    }

    pub fn all(n: usize) -> Self {
        Self::range(0, n)
    }

    pub fn from_lines(lines: impl IntoIterator<Item = usize>) -> Self {
        LineSet(lines.into_iter().fold(0u64, |m, l| m | (1u64 << l)))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, line: usize) -> bool {
        line < MAX_LINES && self.0 & (1u64 << line) != 0
    }

    pub fn union(self, other: LineSet) -> LineSet {
        LineSet(self.0 | other.0)
    }

    /// Highest line index + 1 (0 for the empty set).
    pub fn span(self) -> usize {
        MAX_LINES - self.0.leading_zeros() as usize
    }

    /// The single line of a one-element set.
    pub fn as_single(self) -> Option<usize> {
        (self.len() == 1).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let line = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(line)
        })
    }

    /// Splits into (upper, lower) halves; the upper half takes the extra line
    /// when the count is odd.
    pub fn halves(self) -> (LineSet, LineSet) {
        let n = self.len();
        let upper = LineSet::from_lines(self.iter().take(n.div_ceil(2)));
        (upper, LineSet(self.0 & !upper.0))
    }

    pub fn to_hex(self) -> String {
        format!("{:#06x}", self.0)
    }
}

/// Dense stack of `len` frames, each `rows × cols`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frames<T> {
    len: usize,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Frames<T> {
    pub fn zeros(len: usize, rows: usize, cols: usize) -> Self {
        Frames {
            len,
            rows,
            cols,
            data: vec![T::default(); len * rows * cols],
        }
    }

    pub fn from_vec(len: usize, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != len * rows * cols {
            return Err(Error::shape(format!(
                "{} values for {len}×{rows}×{cols} frames",
                data.len()
            )));
        }
        Ok(Frames { len, rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frame_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.frame_size();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.frame_size();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn get(&self, t: usize, row: usize, col: usize) -> T {
        self.data[(t * self.rows + row) * self.cols + col]
    }

    pub fn set(&mut self, t: usize, row: usize, col: usize, value: T) {
        self.data[(t * self.rows + row) * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy + Default>(&self, f: impl FnMut(T) -> U) -> Frames<U> {
        Frames {
            len: self.len,
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn push_frame(&mut self, frame: &[T]) -> Result<()> {
        if frame.len() != self.frame_size() {
            return Err(Error::shape(format!(
                "frame of {} values pushed onto {}×{} frames",
                frame.len(),
                self.rows,
                self.cols
            )));
        }
        self.data.extend_from_slice(frame);
        self.len += 1;
        Ok(())
    }
}
