//! Fixed-length multivariate windows and borrowed point sets.

use std::ops::Range;

use crate::error::{Error, Result};

/// A `T x D` window of observations, stored row-major (one row per time step).
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    t_len: usize,
    d_len: usize,
    data: Vec<f64>,
}

impl Window {
    pub fn new(t_len: usize, d_len: usize, data: Vec<f64>) -> Result<Self> {
        if t_len == 0 || d_len == 0 {
            return Err(Error::invalid(format!(
                "window must be non-empty, got {t_len}x{d_len}"
            )));
        }
        if data.len() != t_len * d_len {
            return Err(Error::shape(
                format!("{} values ({t_len}x{d_len})", t_len * d_len),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "window cell (t={}, d={})",
                i / d_len,
                i % d_len
            )));
        }
        Ok(Self { t_len, d_len, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d_len = rows.first().map_or(0, Vec::len);
        if let Some((t, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != d_len) {
            return Err(Error::shape(
                format!("{d_len} columns"),
                format!("{} columns in row {t}", row.len()),
            ));
        }
        Self::new(rows.len(), d_len, rows.concat())
    }

    pub fn filled(t_len: usize, d_len: usize, value: f64) -> Result<Self> {
        Self::new(t_len, d_len, vec![value; t_len * d_len])
    }

    #[inline]
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    #[inline]
    pub fn d_len(&self) -> usize {
        self.d_len
    }

    #[inline]
    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.d_len + d]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.d_len..(t + 1) * self.d_len]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.t_len).map(|t| self.get(t, d)).collect()
    }

    /// Row-major copy of the given columns, one point per time step.
    pub fn select_columns(&self, columns: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.t_len * columns.len());
        for t in 0..self.t_len {
            let row = self.row(t);
            out.extend(columns.iter().map(|&d| row[d]));
        }
        out
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.d_len).map(<[f64]>::to_vec).collect()
    }

    /// Applies the same column permutation to the window: output column `i`
    /// is input column `order[i]`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.d_len {
            return Err(Error::shape(self.d_len, order.len()));
        }
        Self::new(self.t_len, self.d_len, self.select_columns(order))
    }
}

/// A borrowed set of `dim`-dimensional points stored contiguously.
#[derive(Clone, Copy, Debug)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::shape(
                format!("a multiple of dimension {dim}"),
                data.len(),
            ));
        }
        Ok(Self { data, dim })
    }

    /// One-dimensional points.
    pub fn scalars(data: &'a [f64]) -> Self {
        Self { data, dim: 1 }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn slice(&self, range: Range<usize>) -> Points<'a> {
        Points {
            data: &self.data[range.start * self.dim..range.end * self.dim],
            dim: self.dim,
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("point {}", i / self.dim))),
            None => Ok(()),
        }
    }
}

/// One variable's pooled observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample1D(Vec<f64>);

impl Sample1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample must be non-empty"));
        }
        Points::scalars(&values).check_finite()?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> Points<'_> {
        Points::scalars(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_rows() {
        let err = Window::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn rejects_nan() {
        let err = Window::new(1, 2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn column_selection_is_row_major() {
        let w = Window::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(w.select_columns(&[2, 0]), vec![3.0, 1.0, 6.0, 4.0]);
        assert_eq!(w.column(1), vec![2.0, 5.0]);
    }
}
