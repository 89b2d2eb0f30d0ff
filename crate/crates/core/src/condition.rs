//! Pointwise assembly of the multiplier matrix `B` and grid certification
//! of the weight condition:
//!
//! * (con1) `ξᵀ M(x) ξ >= μ0 ξᵀ A(x) ξ` for all ξ, where `½(M + Mᵀ) = 2B`;
//! * (con2) `|∇d| > 0`.
//!
//! `μ0` is reported as the grid minimum of the smallest eigenvalue of the
//! pencil `(2B(x), A(x))`; the raw smallest eigenvalue of `B` and its leading
//! principal minors are reported alongside as cross-checks.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeff::{argmin, CoeffError, CoefficientField};
use crate::domain::{Region, RegionError, SampleGrid};
use crate::expr::{ConstantTable, EvalError, Expression, ParseError};
use crate::linalg::{leading_minors, min_eigenvalue, pencil_eigenvalues, Mat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("weight evaluation failed at {point:?}: {source}")]
    Weight { point: Vec<f64>, source: EvalError },
    #[error("weight has dimension {weight}, coefficients have {field}")]
    Dimension { field: usize, weight: usize },
    #[error("coefficient field is not diagonal")]
    NotDiagonal,
    #[error("A is not numerically positive definite at {point:?}")]
    Cholesky { point: Vec<f64> },
    #[error("non-finite matrix entries at {point:?}")]
    NonFinite { point: Vec<f64> },
}

/// The weight `d` with its symbolic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    d: Expression,
    grad: Vec<Expression>,
    /// Upper triangle, row-major.
    hess: Vec<Expression>,
}

impl WeightFunction {
    pub fn new(d: Expression) -> WeightFunction {
        let n = d.dim();
        let grad: Vec<Expression> = (0..n).map(|i| d.differentiate(i)).collect();
        let mut hess = Vec::with_capacity(n * (n + 1) / 2);
        for (i, g) in grad.iter().enumerate() {
            for j in i..n {
                hess.push(g.differentiate(j));
            }
        }
        WeightFunction { d, grad, hess }
    }

    pub fn parse(text: &str, dim: usize, consts: &ConstantTable) -> Result<WeightFunction, ParseError> {
        Ok(WeightFunction::new(Expression::parse(text, dim)?.bind(consts)))
    }

    pub fn expression(&self) -> &Expression {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    pub fn gradient(&self) -> &[Expression] {
        &self.grad
    }

    pub fn hessian(&self, i: usize, j: usize) -> &Expression {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.dim();
        &self.hess[i * n - i * i.saturating_sub(1) / 2 + (j - i)]
    }

    pub fn eval(&self, p: &[f64]) -> Result<WeightValues, EvalError> {
        let n = self.dim();
        let grad = self.grad.iter().map(|g| g.eval(p)).collect::<Result<Vec<_>, _>>()?;
        let mut hess = Mat::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = self.hessian(i, j).eval(p)?;
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(WeightValues {
            value: self.d.eval(p)?,
            grad,
            hess,
        })
    }

    /// `s·d` for a constant `s`.
    pub fn scaled(&self, s: f64) -> WeightFunction {
        WeightFunction::new(Expression::constant(s, self.dim()) * self.d.clone())
    }

    pub fn reflected(&self, flip: &[bool]) -> WeightFunction {
        WeightFunction::new(self.d.reflect(flip))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightValues {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Mat,
}

/// Everything the assembly formulas need at one point.
#[derive(Debug, Clone)]
pub struct PointData {
    pub a: Mat,
    /// `da[k]` is `∂A/∂x_k`.
    pub da: Vec<Mat>,
    pub grad: Vec<f64>,
    pub hess: Mat,
}

pub fn point_data(field: &CoefficientField, weight: &WeightFunction, p: &[f64]) -> Result<PointData, ConditionError> {
    if field.dim() != weight.dim() {
        return Err(ConditionError::Dimension {
            field: field.dim(),
            weight: weight.dim(),
        });
    }
    let a = field.eval(p)?;
    let da = field.eval_partials(p)?;
    let w = weight.eval(p).map_err(|source| ConditionError::Weight {
        point: p.to_vec(),
        source,
    })?;
    Ok(PointData {
        a,
        da,
        grad: w.grad,
        hess: w.hess,
    })
}

/// `B` from the general formula, before symmetrization.
pub fn b_general(data: &PointData) -> Mat {
    let PointData { a, da, grad, hess } = data;
    let n = a.n();
    let mut b = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for ip in 0..n {
                for jp in 0..n {
                    s += a[(i, jp)] * a[(ip, j)] * hess[(ip, jp)];
                    let first_order =
                        a[(i, jp)] * da[jp][(ip, j)] + a[(j, jp)] * da[jp][(ip, i)] - da[jp][(i, j)] * a[(ip, jp)];
                    s += 0.5 * first_order * grad[ip];
                }
            }
            b[(i, j)] = s;
        }
    }
    b
}

/// `B` for a diagonal field from the specialized row formula; the
/// `a^i a^j d_{x_i x_j}` cross term vanishes for separable weights.
pub fn b_diag(data: &PointData) -> Mat {
    let PointData { a, da, grad, hess } = data;
    let n = a.n();
    let coef = |i: usize| a[(i, i)];
    // ∂a^i/∂x_k
    let dcoef = |i: usize, k: usize| da[k][(i, i)];
    let mut b = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.5 * (coef(i) * dcoef(j, i) * grad[j] + coef(j) * dcoef(i, j) * grad[i]);
            if i == j {
                let drift: f64 = (0..n).map(|k| coef(k) * dcoef(i, k) * grad[k]).sum();
                v += coef(i) * coef(i) * hess[(i, i)] - 0.5 * drift;
            } else {
                v += coef(i) * coef(j) * hess[(i, j)];
            }
            b[(i, j)] = v;
        }
    }
    b
}

/// The (unsymmetrized) matrix of the con1 quadratic form, with the product
/// rule `(a^{i'j} d_{x_i'})_{x_j'}` expanded.
pub fn con1_form(data: &PointData) -> Mat {
    let PointData { a, da, grad, hess } = data;
    let n = a.n();
    let mut m = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for ip in 0..n {
                for jp in 0..n {
                    let product = da[jp][(ip, j)] * grad[ip] + a[(ip, j)] * hess[(ip, jp)];
                    s += 2.0 * a[(i, jp)] * product - da[jp][(i, j)] * a[(ip, jp)] * grad[ip];
                }
            }
            m[(i, j)] = s;
        }
    }
    m
}

pub fn assemble_b_general(field: &CoefficientField, weight: &WeightFunction, p: &[f64]) -> Result<Mat, ConditionError> {
    let mut b = b_general(&point_data(field, weight, p)?);
    b.symmetrize();
    Ok(b)
}

pub fn assemble_b_diag(field: &CoefficientField, weight: &WeightFunction, p: &[f64]) -> Result<Mat, ConditionError> {
    if !field.is_diagonal() {
        return Err(ConditionError::NotDiagonal);
    }
    let mut b = b_diag(&point_data(field, weight, p)?);
    b.symmetrize();
    Ok(b)
}

pub fn assemble_con1_form(field: &CoefficientField, weight: &WeightFunction, p: &[f64]) -> Result<Mat, ConditionError> {
    Ok(con1_form(&point_data(field, weight, p)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "certified")]
    Certified,
    #[serde(rename = "failed_con1")]
    FailedCon1,
    #[serde(rename = "failed_con2")]
    FailedCon2,
    #[serde(rename = "failed_A")]
    FailedA,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Certified => "certified",
            Verdict::FailedCon1 => "failed_con1",
            Verdict::FailedCon2 => "failed_con2",
            Verdict::FailedA => "failed_A",
        }
    }
}

/// Per-grid-point diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    /// Smallest eigenvalue of the pencil (2B, A).
    pub lambda_min_pencil: f64,
    pub lambda_min_b: f64,
    pub grad_norm: f64,
    pub minors: Vec<f64>,
    /// |b_ij - b_ji| before symmetrization, relative to max(1, max|b_ij|).
    pub relative_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub verdict: Verdict,
    pub resolution: usize,
    pub point_count: usize,
    pub alpha_min: f64,
    pub alpha_min_point: Vec<f64>,
    pub mu0: f64,
    pub worst_point_con1: Vec<f64>,
    pub lambda_min_b: f64,
    pub lambda_min_b_point: Vec<f64>,
    pub min_grad_norm: f64,
    pub worst_point_con2: Vec<f64>,
    pub max_relative_asymmetry: f64,
    /// Points where "all leading minors > 0" disagrees with "λ_min(B) > 0".
    pub sylvester_disagreements: usize,
    #[serde(skip)]
    pub per_point: Vec<PointRecord>,
}

impl ConditionReport {
    pub fn certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    /// CSV with columns `x1..xn, lambda_min_2B_vs_A, lambda_min_B, grad_norm, m1..mn`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.per_point.first().map_or(0, |r| r.x.len());
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["lambda_min_2B_vs_A", "lambda_min_B", "grad_norm"].map(String::from));
        header.extend((1..=n).map(|i| format!("m{i}")));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.per_point {
            let mut row: Vec<String> = r.x.iter().map(|v| format!("{v:.17e}")).collect();
            for v in [r.lambda_min_pencil, r.lambda_min_b, r.grad_norm] {
                row.push(format!("{v:.17e}"));
            }
            row.extend(r.minors.iter().map(|v| format!("{v:.17e}")));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn record_at(field: &CoefficientField, weight: &WeightFunction, p: &[f64]) -> Result<PointRecord, ConditionError> {
    let data = point_data(field, weight, p)?;
    let mut b = b_general(&data);
    if !b.is_finite() {
        return Err(ConditionError::NonFinite { point: p.to_vec() });
    }
    let relative_asymmetry = b.asymmetry() / b.max_abs().max(1.0);
    b.symmetrize();
    let pencil =
        pencil_eigenvalues(&b.scale(2.0), &data.a).ok_or_else(|| ConditionError::Cholesky { point: p.to_vec() })?;
    Ok(PointRecord {
        x: p.to_vec(),
        lambda_min_pencil: pencil[0],
        lambda_min_b: min_eigenvalue(&b),
        grad_norm: data.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        minors: leading_minors(&b),
        relative_asymmetry,
    })
}

pub fn check_condition(
    field: &CoefficientField,
    weight: &WeightFunction,
    region: &Region,
    resolution: usize,
) -> Result<ConditionReport, ConditionError> {
    let grid = region.sample(resolution)?;
    check_on_grid(field, weight, &grid)
}

pub fn check_on_grid(
    field: &CoefficientField,
    weight: &WeightFunction,
    grid: &SampleGrid,
) -> Result<ConditionReport, ConditionError> {
    if field.dim() != weight.dim() {
        return Err(ConditionError::Dimension {
            field: field.dim(),
            weight: weight.dim(),
        });
    }
    let positivity = field.certify_positivity(grid)?;
    if !(positivity.alpha_min > 0.0) {
        return Ok(ConditionReport {
            verdict: Verdict::FailedA,
            resolution: grid.resolution,
            point_count: grid.len(),
            alpha_min: positivity.alpha_min,
            alpha_min_point: positivity.worst_point,
            mu0: f64::NAN,
            worst_point_con1: Vec::new(),
            lambda_min_b: f64::NAN,
            lambda_min_b_point: Vec::new(),
            min_grad_norm: f64::NAN,
            worst_point_con2: Vec::new(),
            max_relative_asymmetry: f64::NAN,
            sylvester_disagreements: 0,
            per_point: Vec::new(),
        });
    }
    let records = grid
        .points
        .par_iter()
        .map(|p| record_at(field, weight, p))
        .collect::<Result<Vec<_>, _>>()?;

    let column = |f: fn(&PointRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let (i_mu, mu0) = argmin(&column(|r| r.lambda_min_pencil));
    let (i_b, lambda_min_b) = argmin(&column(|r| r.lambda_min_b));
    let (i_g, min_grad_norm) = argmin(&column(|r| r.grad_norm));
    let max_relative_asymmetry = records.iter().fold(0.0f64, |m, r| m.max(r.relative_asymmetry));
    let sylvester_disagreements = records
        .iter()
        .filter(|r| r.minors.iter().all(|&m| m > 0.0) != (r.lambda_min_b > 0.0))
        .count();

    let verdict = if !(mu0 > 0.0) {
        Verdict::FailedCon1
    } else if !(min_grad_norm > 0.0) {
        Verdict::FailedCon2
    } else {
        Verdict::Certified
    };
    Ok(ConditionReport {
        verdict,
        resolution: grid.resolution,
        point_count: grid.len(),
        alpha_min: positivity.alpha_min,
        alpha_min_point: positivity.worst_point,
        mu0,
        worst_point_con1: records[i_mu].x.clone(),
        lambda_min_b,
        lambda_min_b_point: records[i_b].x.clone(),
        min_grad_norm,
        worst_point_con2: records[i_g].x.clone(),
        max_relative_asymmetry,
        sylvester_disagreements,
        per_point: records,
    })
}
