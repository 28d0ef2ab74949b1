use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

/// Dense non-negative matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct NonNegMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for NonNegMatrix {
    type Error = Error;
    fn try_from(r: RawMatrix) -> Result<Self> {
        NonNegMatrix::new(r.rows, r.cols, r.data)
    }
}

impl NonNegMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(x) = data.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Invalid(format!(
                "entry {x} is not a finite non-negative number"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            data: vec![0.0; n * n],
        }
    }

    pub fn ones(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            data: vec![1.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Panics if `v` is negative or not finite.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            v.is_finite() && v >= 0.0,
            "entry must be finite and non-negative"
        );
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| compensated_sum(self.row(i).iter().copied()))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| compensated_sum((0..self.rows).map(|i| self.get(i, j))))
            .collect()
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|x| x * c).collect(),
        )
    }

    /// Matrix with rows and columns reordered: `out[i][j] = self[rp[i]][cp[j]]`.
    pub fn permuted(&self, rp: &[usize], cp: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in rp {
            for &j in cp {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: rp.len(),
            cols: cp.len(),
            data,
        }
    }

    pub(crate) fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }
}

/// True iff every row and column sum lies in [1 − tol, 1 + tol].
pub fn is_doubly_stochastic(m: &NonNegMatrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    m.row_sums()
        .iter()
        .chain(m.col_sums().iter())
        .all(|s| (s - 1.0).abs() <= tol)
}
