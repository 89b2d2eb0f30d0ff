//! The symmetric coefficient matrix `A = (a^{ij})` with its symbolic first
//! partials, plus uniform positive-definiteness and sign checks over a grid.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::domain::SampleGrid;
use crate::expr::{ConstantTable, EvalError, Expression, ParseError};
use crate::linalg::{min_eigenvalue, Mat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoeffError {
    #[error("expected {expected} coefficient entries for dimension {dim}, got {got}")]
    EntryCount { dim: usize, expected: usize, got: usize },
    #[error("no coefficient entries given")]
    Empty,
    #[error("entry {index} has dimension {got}, expected {expected}")]
    EntryDimension { index: usize, expected: usize, got: usize },
    #[error("cannot parse coefficient entry {index}: {source}")]
    Parse { index: usize, source: ParseError },
    #[error("coefficient field is not diagonal")]
    NotDiagonal,
    #[error("coefficient evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
}

/// `A(x)` stored once per unordered index pair, with `∂_k a^{ij}` precomputed.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    dim: usize,
    diagonal: bool,
    /// Diagonal: `a^{ii}` for i = 0..n. Full: upper triangle in row-major order.
    entries: Vec<Expression>,
    /// `partials[e][k]` is the derivative of `entries[e]` along axis `k`.
    partials: Vec<Vec<Expression>>,
}

impl CoefficientField {
    /// Builds a field from `n` diagonal entries or `n(n+1)/2` upper-triangle
    /// entries (row-major: a11, a12, ..., a1n, a22, ...).
    pub fn build(entries: Vec<Expression>, diagonal: bool) -> Result<Self, CoeffError> {
        let dim = entries.first().ok_or(CoeffError::Empty)?.dim();
        if let Some((index, e)) = entries.iter().enumerate().find(|(_, e)| e.dim() != dim) {
            return Err(CoeffError::EntryDimension {
                index,
                expected: dim,
                got: e.dim(),
            });
        }
        let expected = if diagonal { dim } else { dim * (dim + 1) / 2 };
        if entries.len() != expected {
            return Err(CoeffError::EntryCount {
                dim,
                expected,
                got: entries.len(),
            });
        }
        let partials = entries
            .iter()
            .map(|e| (0..dim).map(|k| e.differentiate(k)).collect())
            .collect();
        Ok(CoefficientField {
            dim,
            diagonal,
            entries,
            partials,
        })
    }

    pub fn diagonal(entries: Vec<Expression>) -> Result<Self, CoeffError> {
        Self::build(entries, true)
    }

    /// Parses entries, binding the given constants before differentiation.
    pub fn parse(texts: &[&str], dim: usize, diagonal: bool, consts: &ConstantTable) -> Result<Self, CoeffError> {
        let entries = texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                Expression::parse(t, dim)
                    .map(|e| e.bind(consts))
                    .map_err(|source| CoeffError::Parse { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(entries, diagonal)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn entries(&self) -> &[Expression] {
        &self.entries
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        if self.diagonal {
            (i == j).then_some(i)
        } else {
            Some(packed_index(self.dim, i, j))
        }
    }

    /// `a^{ij}`, or `None` for a structural zero of a diagonal field.
    pub fn entry(&self, i: usize, j: usize) -> Option<&Expression> {
        self.slot(i, j).map(|s| &self.entries[s])
    }

    /// `∂a^{ij}/∂x_k`, or `None` for a structural zero.
    pub fn partial(&self, i: usize, j: usize, k: usize) -> Option<&Expression> {
        self.slot(i, j).map(|s| &self.partials[s][k])
    }

    pub fn eval(&self, p: &[f64]) -> Result<Mat, CoeffError> {
        self.fill(p, |s| &self.entries[s])
    }

    /// `∂A/∂x_k` at `p` for every axis k.
    pub fn eval_partials(&self, p: &[f64]) -> Result<Vec<Mat>, CoeffError> {
        (0..self.dim).map(|k| self.fill(p, |s| &self.partials[s][k])).collect()
    }

    fn fill<'a>(&'a self, p: &[f64], pick: impl Fn(usize) -> &'a Expression) -> Result<Mat, CoeffError> {
        let n = self.dim;
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in i..n {
                if let Some(s) = self.slot(i, j) {
                    let v = pick(s).eval(p).map_err(|source| CoeffError::Eval {
                        point: p.to_vec(),
                        source,
                    })?;
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        }
        Ok(m)
    }

    /// Smallest eigenvalue of `A(x)` over the grid.
    pub fn certify_positivity(&self, grid: &SampleGrid) -> Result<Positivity, CoeffError> {
        let values = grid
            .points
            .par_iter()
            .map(|p| self.eval(p).map(|a| min_eigenvalue(&a)))
            .collect::<Result<Vec<f64>, _>>()?;
        let (idx, alpha_min) = argmin(&values);
        Ok(Positivity {
            alpha_min,
            worst_point: grid.points[idx].clone(),
        })
    }

    /// Grid range of `∂a^{ii}/∂x_k` for a diagonal field.
    pub fn partial_sign(&self, i: usize, k: usize, grid: &SampleGrid) -> Result<SignRange, CoeffError> {
        if !self.diagonal {
            return Err(CoeffError::NotDiagonal);
        }
        let e = &self.partials[i][k];
        let values = grid
            .points
            .par_iter()
            .map(|p| {
                e.eval(p).map_err(|source| CoeffError::Eval {
                    point: p.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let (imin, min) = argmin(&values);
        let (imax, max) = argmax(&values);
        Ok(SignRange {
            min,
            max,
            min_point: grid.points[imin].clone(),
            max_point: grid.points[imax].clone(),
        })
    }

    /// Image under `x -> -x` on the flagged axes.
    pub fn reflected(&self, flip: &[bool]) -> CoefficientField {
        let entries = self.entries.iter().map(|e| e.reflect(flip)).collect();
        CoefficientField::build(entries, self.diagonal).expect("reflection keeps shape")
    }
}

/// Row `r` of the packed upper triangle holds `n - r` entries.
fn packed_index(n: usize, i: usize, j: usize) -> usize {
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

/// First index attaining the minimum (ties resolved by grid order).
pub(crate) fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Positivity {
    pub alpha_min: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignRange {
    pub min: f64,
    pub max: f64,
    pub min_point: Vec<f64>,
    pub max_point: Vec<f64>,
}

impl SignRange {
    pub fn uniformly_positive(&self) -> bool {
        self.min > 0.0
    }

    pub fn uniformly_negative(&self) -> bool {
        self.max < 0.0
    }
}
