//! Flat row-major storage for time-indexed vector signals.

/// A sequence of fixed-dimension samples, one row per time step.
///
/// Rows are stored contiguously so million-step traces stay compact.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(dim: usize) -> Self {
        Signal {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Signal {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Self {
        let mut s = Signal::with_capacity(dim, rows.len());
        for r in rows {
            s.push(r.as_ref());
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row width must match signal dimension");
        self.data.extend_from_slice(row);
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn last(&self) -> Option<&[f64]> {
        let n = self.len();
        (n > 0).then(|| self.row(n - 1))
    }

    /// Component `i` at time `t`; times before zero (or past the end) read as rest.
    pub fn at(&self, t: i64, i: usize) -> f64 {
        if t < 0 || t as usize >= self.len() {
            0.0
        } else {
            self.data[t as usize * self.dim + i]
        }
    }

    /// Row at `t`, or a zero row before the start.
    pub fn row_or_zero(&self, t: i64) -> Vec<f64> {
        if t < 0 || t as usize >= self.len() {
            vec![0.0; self.dim]
        } else {
            self.row(t as usize).to_vec()
        }
    }

    /// `count` samples of component 0 ending at `t`, most recent first, zero-padded.
    pub fn lagged(&self, t: i64, count: usize) -> Vec<f64> {
        (0..count as i64).map(|k| self.at(t - k, 0)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn truncate(&mut self, rows: usize) {
        self.data.truncate(rows * self.dim);
    }
}
