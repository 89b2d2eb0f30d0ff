//! Sign of the curvature of two-dimensional diagonal metrics.
//!
//! `curvature_wang` is the closed form for coefficients depending on `x1`
//! only. `gauss_curvature` evaluates the general orthogonal-metric formula
//!
//! ```text
//! K = -1/(2W) [ ∂1(G_1 / W) + ∂2(E_2 / W) ],   W = sqrt(E G)
//! ```
//!
//! for the metric `diag(a1, a2)`, which is the metric the closed form
//! describes. The curvature of the inverse metric `diag(1/a1, 1/a2)` is
//! available separately.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::coeff::{argmax, argmin};
use crate::domain::{axis_points, Region, RegionError};
use crate::expr::{EvalError, Expression};

pub const FLAT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurvatureError {
    #[error("curvature is only defined here for two-dimensional metrics, got dimension {0}")]
    Dimension(usize),
    #[error("probe axis {0} out of range")]
    ProbeAxis(usize),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("curvature evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
}

fn require_2d(a1: &Expression, a2: &Expression) -> Result<(), CurvatureError> {
    match (a1.dim(), a2.dim()) {
        (2, 2) => Ok(()),
        (2, d) | (d, _) => Err(CurvatureError::Dimension(d)),
    }
}

/// Symbolic curvature of the orthogonal metric `E dx1² + G dx2²`.
pub fn orthogonal_metric_curvature(e: &Expression, g: &Expression) -> Expression {
    let w = (e.clone() * g.clone()).sqrt();
    let g1 = g.differentiate(0);
    let e2 = e.differentiate(1);
    let bracket = (g1 / w.clone()).differentiate(0) + (e2 / w.clone()).differentiate(1);
    (Expression::constant(-0.5, 2) / w * bracket).fold()
}

/// Symbolic closed form for coefficients depending on `x1` only.
pub fn wang_expression(a1: &Expression, a2: &Expression) -> Expression {
    let k = |v: f64| Expression::constant(v, 2);
    let a1x = a1.differentiate(0);
    let a2x = a2.differentiate(0);
    let a2xx = a2x.differentiate(0);
    let numerator = a2.clone() * a1x * a2x.clone() + a1.clone() * a2x.powi(2) - k(2.0) * a1.clone() * a2.clone() * a2xx;
    let denominator = k(4.0) * (a1.clone() * a2.clone()).powi(2);
    (numerator / denominator).fold()
}

/// A compiled curvature function: one expression per metric.
#[derive(Debug, Clone)]
pub struct CurvatureField {
    direct: Expression,
    inverse: Expression,
    wang: Expression,
}

impl CurvatureField {
    pub fn new(a1: &Expression, a2: &Expression) -> Result<CurvatureField, CurvatureError> {
        require_2d(a1, a2)?;
        let one = Expression::constant(1.0, 2);
        Ok(CurvatureField {
            direct: orthogonal_metric_curvature(a1, a2),
            inverse: orthogonal_metric_curvature(&(one.clone() / a1.clone()), &(one / a2.clone())),
            wang: wang_expression(a1, a2),
        })
    }

    fn at(e: &Expression, p: &[f64]) -> Result<f64, CurvatureError> {
        e.eval(p).map_err(|source| CurvatureError::Eval {
            point: p.to_vec(),
            source,
        })
    }

    pub fn gauss(&self, p: &[f64]) -> Result<f64, CurvatureError> {
        Self::at(&self.direct, p)
    }

    pub fn inverse(&self, p: &[f64]) -> Result<f64, CurvatureError> {
        Self::at(&self.inverse, p)
    }

    pub fn wang(&self, p: &[f64]) -> Result<f64, CurvatureError> {
        Self::at(&self.wang, p)
    }
}

pub fn curvature_wang(a1: &Expression, a2: &Expression, p: &[f64]) -> Result<f64, CurvatureError> {
    CurvatureField::new(a1, a2)?.wang(p)
}

pub fn gauss_curvature(a1: &Expression, a2: &Expression, p: &[f64]) -> Result<f64, CurvatureError> {
    CurvatureField::new(a1, a2)?.gauss(p)
}

pub fn inverse_metric_curvature(a1: &Expression, a2: &Expression, p: &[f64]) -> Result<f64, CurvatureError> {
    CurvatureField::new(a1, a2)?.inverse(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    UniformlyPositive,
    UniformlyNegative,
    SignChanging,
    Degenerate,
}

impl Classification {
    pub fn of(values: &[f64]) -> Classification {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.iter().all(|k| k.abs() <= FLAT_TOLERANCE) {
            Classification::Degenerate
        } else if min > 0.0 {
            Classification::UniformlyPositive
        } else if max < 0.0 {
            Classification::UniformlyNegative
        } else if min < 0.0 && max > 0.0 {
            Classification::SignChanging
        } else {
            Classification::Degenerate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::UniformlyPositive => "uniformly_positive",
            Classification::UniformlyNegative => "uniformly_negative",
            Classification::SignChanging => "sign_changing",
            Classification::Degenerate => "degenerate",
        }
    }
}

fn one_based<S: Serializer>(axis: &usize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(*axis as u64 + 1)
}

/// The slice `{x_axis = value}` of the region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    #[serde(serialize_with = "one_based")]
    pub axis: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    #[serde(flatten)]
    pub probe: Probe,
    pub point_count: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub k_min: f64,
    pub k_max: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub resolution: usize,
    pub point_count: usize,
    pub k_min: f64,
    pub k_min_point: Vec<f64>,
    pub k_max: f64,
    pub k_max_point: Vec<f64>,
    pub classification: Classification,
    pub witness_positive: Option<Vec<f64>>,
    pub witness_negative: Option<Vec<f64>>,
    pub probes: Vec<ProbeSummary>,
    /// Same sweep for the metric `diag(1/a1, 1/a2)`.
    pub inverse_metric: MetricSummary,
    #[serde(skip)]
    pub per_point: Vec<(Vec<f64>, f64)>,
}

impl CurvatureReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x1,x2,k")?;
        for (p, k) in &self.per_point {
            writeln!(out, "{:.17e},{:.17e},{:.17e}", p[0], p[1], k)?;
        }
        Ok(())
    }
}

/// Points of the region on the line `x_axis = value`, at the grid's
/// spacing along the other axis.
fn probe_points(region: &Region, probe: Probe, resolution: usize) -> Result<Vec<Vec<f64>>, CurvatureError> {
    if probe.axis >= 2 {
        return Err(CurvatureError::ProbeAxis(probe.axis));
    }
    let other = 1 - probe.axis;
    let (lo, hi) = region.bounds()[other];
    let mut out = Vec::new();
    for t in axis_points(lo, hi, resolution) {
        let mut p = vec![0.0; 2];
        p[probe.axis] = probe.value;
        p[other] = t;
        if region.contains(&p)? {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn classify_sign(
    a1: &Expression,
    a2: &Expression,
    region: &Region,
    resolution: usize,
    probes: &[Probe],
) -> Result<CurvatureReport, CurvatureError> {
    let field = CurvatureField::new(a1, a2)?;
    let grid = region.sample(resolution)?;
    let values = grid
        .points
        .par_iter()
        .map(|p| Ok((field.gauss(p)?, field.inverse(p)?)))
        .collect::<Result<Vec<(f64, f64)>, CurvatureError>>()?;
    let (ks, inv): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
    let (imin, k_min) = argmin(&ks);
    let (imax, k_max) = argmax(&ks);
    let classification = Classification::of(&ks);

    let mut summaries = Vec::with_capacity(probes.len());
    let mut probe_witness_pos = None;
    let mut probe_witness_neg = None;
    for &probe in probes {
        let pts = probe_points(region, probe, resolution)?;
        let vals = pts.iter().map(|p| field.gauss(p)).collect::<Result<Vec<_>, _>>()?;
        if vals.is_empty() {
            summaries.push(ProbeSummary {
                probe,
                point_count: 0,
                k_min: f64::NAN,
                k_max: f64::NAN,
                classification: Classification::Degenerate,
            });
            continue;
        }
        let (lmin, kmin) = argmin(&vals);
        let (lmax, kmax) = argmax(&vals);
        let class = Classification::of(&vals);
        match class {
            Classification::UniformlyPositive if probe_witness_pos.is_none() => {
                probe_witness_pos = Some(pts[lmax].clone());
            }
            Classification::UniformlyNegative if probe_witness_neg.is_none() => {
                probe_witness_neg = Some(pts[lmin].clone());
            }
            _ => {}
        }
        summaries.push(ProbeSummary {
            probe,
            point_count: pts.len(),
            k_min: kmin,
            k_max: kmax,
            classification: class,
        });
    }
    let degenerate = classification == Classification::Degenerate;
    let witness_positive =
        probe_witness_pos.or_else(|| (k_max > 0.0 && !degenerate).then(|| grid.points[imax].clone()));
    let witness_negative =
        probe_witness_neg.or_else(|| (k_min < 0.0 && !degenerate).then(|| grid.points[imin].clone()));

    Ok(CurvatureReport {
        resolution,
        point_count: grid.len(),
        k_min,
        k_min_point: grid.points[imin].clone(),
        k_max,
        k_max_point: grid.points[imax].clone(),
        classification,
        witness_positive,
        witness_negative,
        probes: summaries,
        inverse_metric: MetricSummary {
            k_min: inv.iter().copied().fold(f64::INFINITY, f64::min),
            k_max: inv.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            classification: Classification::of(&inv),
        },
        per_point: grid.points.into_iter().zip(ks).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct W32Check {
    pub mu1: f64,
    pub mu2: f64,
    pub mu1_positive: bool,
    pub mu2_positive: bool,
    /// `μ1 + 2μ2`, required below 2.
    pub upper_sum: f64,
    pub upper_ok: bool,
    /// `3μ1 + 18μ2`, required above 2.
    pub lower_sum: f64,
    pub lower_ok: bool,
    pub holds: bool,
}

pub fn check_w32(mu1: f64, mu2: f64) -> W32Check {
    let upper_sum = mu1 + 2.0 * mu2;
    let lower_sum = 3.0 * mu1 + 18.0 * mu2;
    let (mu1_positive, mu2_positive) = (mu1 > 0.0, mu2 > 0.0);
    let (upper_ok, lower_ok) = (upper_sum < 2.0, lower_sum > 2.0);
    W32Check {
        mu1,
        mu2,
        mu1_positive,
        mu2_positive,
        upper_sum,
        upper_ok,
        lower_sum,
        lower_ok,
        holds: mu1_positive && mu2_positive && upper_ok && lower_ok,
    }
}
