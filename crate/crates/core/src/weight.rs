//! Construction of exponential weights for diagonal coefficient fields whose
//! off-index partials `a^i_{x_j}` (i ≠ j) keep a strict sign.
//!
//! For an admissible axis `j` the weight is
//!
//! * negative partials: `d = e^{λ(c + x_j)} + Σ_{i≠j} e^{λ x_i}`
//! * positive partials: `d = e^{-λ(x_j - c)} + Σ_{i≠j} e^{-λ x_i}`
//!
//! with the shift `c` chosen from the grid, and `λ` found by doubling then
//! bisection until the condition check certifies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientField, SignRange};
use crate::condition::{assemble_b_general, check_on_grid, ConditionError, ConditionReport, Verdict, WeightFunction};
use crate::domain::{Region, RegionError, SampleGrid};
use crate::expr::Expression;
use crate::linalg::Mat;

/// `ln(1e300)`: largest exponent the search is allowed to evaluate.
pub const MAX_EXPONENT: f64 = 690.775_527_898_213_7;

pub const DEFAULT_LAMBDA_MAX: f64 = 1_048_576.0;

const BISECTION_ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignCase {
    /// `a^i_{x_j} < 0` for all i ≠ j.
    Negative,
    /// `a^i_{x_j} > 0` for all i ≠ j.
    Positive,
}

impl SignCase {
    pub fn as_str(self) -> &'static str {
        match self {
            SignCase::Negative => "negative",
            SignCase::Positive => "positive",
        }
    }

    pub fn flipped(self) -> SignCase {
        match self {
            SignCase::Negative => SignCase::Positive,
            SignCase::Positive => SignCase::Negative,
        }
    }
}

impl std::str::FromStr for SignCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" | "1" => Ok(SignCase::Negative),
            "positive" | "2" => Ok(SignCase::Positive),
            other => Err(format!("unknown sign case {other:?} (expected negative or positive)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("weight construction requires a diagonal coefficient field")]
    NotDiagonal,
    #[error("axis {axis} out of range for dimension {dim}")]
    Axis { axis: usize, dim: usize },
    #[error("lambda must be positive and finite, got {0}")]
    Lambda(f64),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error("lambda_max exceeded: no lambda <= {lambda_max} certified (best mu0 {} at lambda {})", best.report.mu0, best.lambda)]
    LambdaMaxExceeded {
        lambda_max: f64,
        best: Box<LambdaStep>,
        steps: Vec<LambdaStep>,
    },
    #[error(
        "exponent {exponent:.1} at lambda {lambda} would exceed 1e300; \
         translate the domain toward the origin to reduce the dynamic range"
    )]
    Overflow {
        lambda: f64,
        exponent: f64,
        steps: Vec<LambdaStep>,
    },
}

fn one_based<S: Serializer>(j: &usize, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(*j as u64 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissible {
    #[serde(serialize_with = "one_based")]
    pub j: usize,
    pub sign_case: SignCase,
    /// Distance from zero of the extremal off-index partial; infinite in 1D.
    pub sign_margin: f64,
}

/// Grid range of `a^i_{x_k}` for one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialRange {
    #[serde(serialize_with = "one_based")]
    pub i: usize,
    #[serde(serialize_with = "one_based")]
    pub k: usize,
    #[serde(flatten)]
    pub range: SignRange,
}

/// Ranges of every off-diagonal partial `a^i_{x_k}`, i ≠ k.
pub fn partial_ranges(field: &CoefficientField, grid: &SampleGrid) -> Result<Vec<PartialRange>, WeightError> {
    if !field.is_diagonal() {
        return Err(WeightError::NotDiagonal);
    }
    let n = field.dim();
    let mut out = Vec::new();
    for k in 0..n {
        for i in (0..n).filter(|&i| i != k) {
            out.push(PartialRange {
                i,
                k,
                range: field.partial_sign(i, k, grid)?,
            });
        }
    }
    Ok(out)
}

/// Every axis `j` whose off-index partials `a^i_{x_j}` share a strict sign
/// over the grid. `a^j_{x_j}` is not tested.
pub fn detect_index(field: &CoefficientField, grid: &SampleGrid) -> Result<Vec<Admissible>, WeightError> {
    let n = field.dim();
    if n == 1 {
        if !field.is_diagonal() {
            return Err(WeightError::NotDiagonal);
        }
        return Ok([SignCase::Negative, SignCase::Positive]
            .into_iter()
            .map(|sign_case| Admissible {
                j: 0,
                sign_case,
                sign_margin: f64::INFINITY,
            })
            .collect());
    }
    let ranges = partial_ranges(field, grid)?;
    let mut out = Vec::new();
    for j in 0..n {
        let column = ranges.iter().filter(|r| r.k == j);
        let max = column.clone().map(|r| r.range.max).fold(f64::NEG_INFINITY, f64::max);
        let min = column.map(|r| r.range.min).fold(f64::INFINITY, f64::min);
        if max < 0.0 {
            out.push(Admissible {
                j,
                sign_case: SignCase::Negative,
                sign_margin: -max,
            });
        } else if min > 0.0 {
            out.push(Admissible {
                j,
                sign_case: SignCase::Positive,
                sign_margin: min,
            });
        }
    }
    Ok(out)
}

/// Smallest grid-feasible shift for the negative case and its mirror for
/// the positive case.
pub fn compute_c(grid: &SampleGrid, j: usize, sign_case: SignCase) -> f64 {
    let off_axis = |p: &[f64]| -> f64 {
        p.iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, x)| x.abs())
            .sum()
    };
    let spread = grid.iter().map(off_axis).fold(f64::NEG_INFINITY, f64::max);
    match sign_case {
        SignCase::Negative => {
            let min_xj = grid.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
            1.0 + spread - min_xj
        }
        SignCase::Positive => {
            let max_xj = grid.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
            1.0 + spread + max_xj
        }
    }
}

pub fn construct_d(j: usize, sign_case: SignCase, c: f64, lambda: f64, dim: usize) -> WeightFunction {
    let k = |v: f64| Expression::constant(v, dim);
    let x = |i: usize| Expression::var(i, dim);
    let lead = match sign_case {
        SignCase::Negative => (k(lambda) * (k(c) + x(j))).exp(),
        SignCase::Positive => (k(-lambda) * (x(j) - k(c))).exp(),
    };
    let sigma = match sign_case {
        SignCase::Negative => lambda,
        SignCase::Positive => -lambda,
    };
    let d = (0..dim)
        .filter(|&i| i != j)
        .fold(lead, |acc, i| acc + (k(sigma) * x(i)).exp());
    WeightFunction::new(d)
}

/// Largest exponent appearing in the weight over the grid.
pub fn max_exponent(grid: &SampleGrid, j: usize, sign_case: SignCase, c: f64, lambda: f64) -> f64 {
    grid.iter()
        .flat_map(|p| {
            p.iter().enumerate().map(move |(i, &xi)| match (sign_case, i == j) {
                (SignCase::Negative, true) => lambda * (c + xi),
                (SignCase::Negative, false) => lambda * xi,
                (SignCase::Positive, true) => -lambda * (xi - c),
                (SignCase::Positive, false) => -lambda * xi,
            })
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaStep {
    pub lambda: f64,
    pub verdict: Verdict,
    pub mu0: f64,
    #[serde(skip)]
    pub report: ConditionReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub lambda_max: f64,
    pub target_margin: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            lambda_max: DEFAULT_LAMBDA_MAX,
            target_margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightCertificate {
    #[serde(serialize_with = "one_based")]
    pub j: usize,
    pub sign_case: SignCase,
    pub c: f64,
    pub lambda: f64,
    pub sign_margin: f64,
    pub weight_expression: String,
    #[serde(skip)]
    pub weight: WeightFunction,
    pub report: ConditionReport,
    pub steps: Vec<LambdaStep>,
}

fn check_axis(field: &CoefficientField, j: usize) -> Result<(), WeightError> {
    if !field.is_diagonal() {
        return Err(WeightError::NotDiagonal);
    }
    if j >= field.dim() {
        return Err(WeightError::Axis {
            axis: j,
            dim: field.dim(),
        });
    }
    Ok(())
}

/// Runs the condition check for the weight at a single `λ`, refusing
/// values whose exponentials would leave the floating-point range.
pub fn check_at(
    field: &CoefficientField,
    grid: &SampleGrid,
    j: usize,
    sign_case: SignCase,
    c: f64,
    lambda: f64,
) -> Result<LambdaStep, WeightError> {
    check_axis(field, j)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(WeightError::Lambda(lambda));
    }
    let exponent = max_exponent(grid, j, sign_case, c, lambda);
    if exponent > MAX_EXPONENT {
        return Err(WeightError::Overflow {
            lambda,
            exponent,
            steps: Vec::new(),
        });
    }
    let w = construct_d(j, sign_case, c, lambda, field.dim());
    let report = check_on_grid(field, &w, grid)?;
    Ok(LambdaStep {
        lambda,
        verdict: report.verdict,
        mu0: report.mu0,
        report,
    })
}

pub fn find_lambda(
    field: &CoefficientField,
    grid: &SampleGrid,
    admissible: &Admissible,
    c: f64,
    options: SearchOptions,
) -> Result<WeightCertificate, WeightError> {
    let Admissible {
        j,
        sign_case,
        sign_margin,
    } = *admissible;
    check_axis(field, j)?;
    let passes = |s: &LambdaStep| s.verdict == Verdict::Certified && s.mu0 >= options.target_margin;
    let mut steps: Vec<LambdaStep> = Vec::new();
    let attempt = |lambda: f64, steps: &mut Vec<LambdaStep>| -> Result<LambdaStep, WeightError> {
        match check_at(field, grid, j, sign_case, c, lambda) {
            Ok(step) => {
                steps.push(step.clone());
                Ok(step)
            }
            Err(WeightError::Overflow { lambda, exponent, .. }) => Err(WeightError::Overflow {
                lambda,
                exponent,
                steps: steps.clone(),
            }),
            Err(e) => Err(e),
        }
    };

    let mut lambda = 1.0;
    let mut last_fail: Option<f64> = None;
    let passing = loop {
        if lambda > options.lambda_max {
            let best = steps
                .iter()
                .fold(None::<&LambdaStep>, |best, s| match best {
                    Some(b) if !(s.mu0 > b.mu0) => Some(b),
                    _ => Some(s),
                })
                .cloned()
                .expect("lambda_max >= 1 guarantees one step");
            return Err(WeightError::LambdaMaxExceeded {
                lambda_max: options.lambda_max,
                best: Box::new(best),
                steps,
            });
        }
        let step = attempt(lambda, &mut steps)?;
        if passes(&step) {
            break step;
        }
        last_fail = Some(lambda);
        lambda *= 2.0;
    };

    let mut best = passing;
    if let Some(mut lo) = last_fail {
        let mut hi = best.lambda;
        for _ in 0..BISECTION_ROUNDS {
            let mid = 0.5 * (lo + hi);
            let step = attempt(mid, &mut steps)?;
            if passes(&step) {
                hi = mid;
                best = step;
            } else {
                lo = mid;
            }
        }
    }
    let weight = construct_d(j, sign_case, c, best.lambda, field.dim());
    Ok(WeightCertificate {
        j,
        sign_case,
        c,
        lambda: best.lambda,
        sign_margin,
        weight_expression: weight.expression().to_string(),
        weight,
        report: best.report,
        steps,
    })
}

impl WeightCertificate {
    /// Independent re-check of the certified weight on a fresh grid.
    pub fn reverify(
        &self,
        field: &CoefficientField,
        region: &Region,
        resolution: usize,
    ) -> Result<ConditionReport, ConditionError> {
        crate::condition::check_condition(field, &self.weight, region, resolution)
    }
}

/// `B` with rows `i ≠ j` divided by `±d_{x_j}` and row `j` by `d_{x_j x_j}`.
pub fn scaled_b(
    field: &CoefficientField,
    weight: &WeightFunction,
    j: usize,
    sign_case: SignCase,
    p: &[f64],
) -> Result<Mat, WeightError> {
    check_axis(field, j)?;
    let b = assemble_b_general(field, weight, p)?;
    let wv = weight.eval(p).map_err(|source| ConditionError::Weight {
        point: p.to_vec(),
        source,
    })?;
    let off_row = match sign_case {
        SignCase::Negative => wv.grad[j],
        SignCase::Positive => -wv.grad[j],
    };
    let row_j = wv.hess[(j, j)];
    let n = b.n();
    let mut out = Mat::zeros(n);
    for r in 0..n {
        let s = if r == j { row_j } else { off_row };
        for col in 0..n {
            out[(r, col)] = b[(r, col)] / s;
        }
    }
    Ok(out)
}

/// The `λ → ∞` limit of [`scaled_b`]: diagonal plus column `j`.
pub fn limit_matrix(field: &CoefficientField, j: usize, sign_case: SignCase, p: &[f64]) -> Result<Mat, WeightError> {
    check_axis(field, j)?;
    let a = field.eval(p)?;
    let da = field.eval_partials(p)?;
    let n = field.dim();
    let sign = match sign_case {
        SignCase::Negative => 1.0,
        SignCase::Positive => -1.0,
    };
    let mut m = Mat::zeros(n);
    m[(j, j)] = a[(j, j)] * a[(j, j)];
    for i in (0..n).filter(|&i| i != j) {
        m[(i, i)] = -0.5 * sign * a[(j, j)] * da[j][(i, i)];
        m[(i, j)] = 0.5 * sign * a[(i, i)] * da[i][(j, j)];
    }
    Ok(m)
}

/// Grid supremum of the entrywise distance between [`scaled_b`] at `λ` and
/// [`limit_matrix`].
pub fn limit_distance(
    field: &CoefficientField,
    grid: &SampleGrid,
    j: usize,
    sign_case: SignCase,
    c: f64,
    lambda: f64,
) -> Result<f64, WeightError> {
    let w = construct_d(j, sign_case, c, lambda, field.dim());
    let dists = grid
        .points
        .par_iter()
        .map(|p| {
            let s = scaled_b(field, &w, j, sign_case, p)?;
            let l = limit_matrix(field, j, sign_case, p)?;
            Ok(s.sub(&l).max_abs())
        })
        .collect::<Result<Vec<f64>, WeightError>>()?;
    Ok(dists.into_iter().fold(0.0, f64::max))
}

/// Grid suprema of the three weight ratios that vanish as `λ → ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioSup {
    /// `|d_{x_i} / d_{x_j x_j}|` over all i.
    pub grad_over_jj: f64,
    /// `|d_{x_i} / d_{x_j}|` over i ≠ j.
    pub grad_over_j: f64,
    /// `|d_{x_i x_i} / d_{x_j}|` over i ≠ j.
    pub hess_over_j: f64,
}

pub fn weight_ratios(
    grid: &SampleGrid,
    j: usize,
    sign_case: SignCase,
    c: f64,
    lambda: f64,
) -> Result<RatioSup, WeightError> {
    let n = grid.dim();
    if j >= n {
        return Err(WeightError::Axis { axis: j, dim: n });
    }
    let w = construct_d(j, sign_case, c, lambda, n);
    let mut sup = RatioSup {
        grad_over_jj: 0.0,
        grad_over_j: 0.0,
        hess_over_j: 0.0,
    };
    for p in grid.iter() {
        let v = w.eval(p).map_err(|source| ConditionError::Weight {
            point: p.to_vec(),
            source,
        })?;
        let (dj, djj) = (v.grad[j], v.hess[(j, j)]);
        for i in 0..n {
            sup.grad_over_jj = sup.grad_over_jj.max((v.grad[i] / djj).abs());
            if i != j {
                sup.grad_over_j = sup.grad_over_j.max((v.grad[i] / dj).abs());
                sup.hess_over_j = sup.hess_over_j.max((v.hess[(i, i)] / dj).abs());
            }
        }
    }
    Ok(sup)
}
