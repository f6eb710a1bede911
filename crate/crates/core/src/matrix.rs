//! Square logit matrices indexed `(key, query)`.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// `T x T` matrix stored query-major so each query's key column is contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitMatrix<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> LogitMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![S::zero(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, key: usize, query: usize) -> S {
        self.data[query * self.dim + key]
    }

    pub fn set(&mut self, key: usize, query: usize, value: S) {
        self.data[query * self.dim + key] = value;
    }

    pub fn add(&mut self, key: usize, query: usize, value: S) {
        self.data[query * self.dim + key] += value;
    }

    /// Logits of all keys for one query.
    pub fn column(&self, query: usize) -> &[S] {
        &self.data[query * self.dim..(query + 1) * self.dim]
    }

    pub fn column_mut(&mut self, query: usize) -> &mut [S] {
        &mut self.data[query * self.dim..(query + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, x| m.max(x.abs()))
    }

    /// Rows are keys, as in `w[j][m]`.
    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|m| self.get(j, m)).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Option<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        let mut out = Self::zeros(dim);
        for (j, row) in rows.iter().enumerate() {
            for (m, &v) in row.iter().enumerate() {
                out.set(j, m, v);
            }
        }
        Some(out)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> LogitMatrix<U> {
        LogitMatrix {
            dim: self.dim,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let mut w = LogitMatrix::<f64>::zeros(3);
        w.set(0, 2, 1.5);
        w.add(1, 2, -2.0);
        assert_eq!(w.column(2), &[1.5, -2.0, 0.0]);
        let rows = w.to_rows();
        assert_eq!(rows[1][2], -2.0);
        assert_eq!(LogitMatrix::from_rows(&rows).unwrap(), w);
        assert!(LogitMatrix::<f64>::from_rows(&vec![vec![1.0]; 2]).is_none());
        assert_eq!(w.max_abs(), 2.0);
    }
}
