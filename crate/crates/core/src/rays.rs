//! Bicharacteristics of the principal symbol `H(x, ξ) = ½ ξᵀ A(x) ξ`:
//!
//! ```text
//! ẋ = A(x) ξ,    ξ̇_k = -½ ξᵀ ∂_k A(x) ξ
//! ```
//!
//! integrated with classical RK4 until the ray leaves the region or the
//! horizon is reached.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientField};
use crate::domain::{Region, RegionError};
use crate::expr::EvalError;

pub const DRIFT_TOLERANCE: f64 = 1e-6;
pub const MAX_HALVINGS: u32 = 8;
pub const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RayError {
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("boundary evaluation failed: {0}")]
    Exit(EvalError),
    #[error("start point {0:?} is outside the region")]
    StartOutside(Vec<f64>),
    #[error("state has dimension {got}, field has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("covector must be nonzero with A(x) positive along it")]
    DegenerateCovector,
    #[error("step and horizon must be positive, got step {step} and horizon {horizon}")]
    Parameters { step: f64, horizon: f64 },
    #[error("step collapse: Hamiltonian drift {drift:e} still above tolerance at step {step:e}")]
    StepCollapse { step: f64, drift: f64 },
    #[error("fan directions are enumerated for dimensions 1 to 3, got {0}")]
    FanDimension(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayState {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub t: f64,
}

impl RayState {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> RayState {
        RayState { x, xi, t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Escape {
    At(f64),
    TrappedUntilHorizon,
}

impl Escape {
    pub fn time(self) -> Option<f64> {
        match self {
            Escape::At(t) => Some(t),
            Escape::TrappedUntilHorizon => None,
        }
    }
}

impl Serialize for Escape {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Escape::At(t) => s.serialize_f64(*t),
            Escape::TrappedUntilHorizon => s.serialize_str("trapped_until_horizon"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayOutcome {
    pub start: Vec<f64>,
    pub direction: Vec<f64>,
    pub escape_time: Escape,
    /// Smallest interior clearance (negated exit function) along the path;
    /// zero once the ray reaches the boundary.
    pub min_boundary_distance: f64,
    pub max_relative_drift: f64,
    pub step: f64,
    pub halvings: u32,
    pub end: RayState,
    #[serde(skip)]
    pub path: Vec<Vec<f64>>,
}

/// `(H, ẋ, ξ̇)` at a phase-space point.
fn vector_field(field: &CoefficientField, x: &[f64], xi: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), RayError> {
    let n = x.len();
    let a = field.eval(x)?;
    let da = field.eval_partials(x)?;
    let quad = |m: &crate::linalg::Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += xi[i] * m[(i, j)] * xi[j];
            }
        }
        s
    };
    let xdot = (0..n).map(|i| (0..n).map(|j| a[(i, j)] * xi[j]).sum()).collect();
    let xidot = da.iter().map(|m| -0.5 * quad(m)).collect();
    Ok((0.5 * quad(&a), xdot, xidot))
}

fn hamiltonian(field: &CoefficientField, x: &[f64], xi: &[f64]) -> Result<f64, RayError> {
    Ok(vector_field(field, x, xi)?.0)
}

fn axpy(base: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    base.iter().zip(d).map(|(b, v)| b + h * v).collect()
}

fn rk4(field: &CoefficientField, x: &[f64], xi: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>), RayError> {
    let (_, k1x, k1p) = vector_field(field, x, xi)?;
    let (_, k2x, k2p) = vector_field(field, &axpy(x, h / 2.0, &k1x), &axpy(xi, h / 2.0, &k1p))?;
    let (_, k3x, k3p) = vector_field(field, &axpy(x, h / 2.0, &k2x), &axpy(xi, h / 2.0, &k2p))?;
    let (_, k4x, k4p) = vector_field(field, &axpy(x, h, &k3x), &axpy(xi, h, &k3p))?;
    let combine = |y: &[f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
        (0..y.len())
            .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    };
    Ok((combine(x, &k1x, &k2x, &k3x, &k4x), combine(xi, &k1p, &k2p, &k3p, &k4p)))
}

/// Rescales `ξ` so that `H(x, ξ) = ½`.
pub fn normalize_covector(field: &CoefficientField, x: &[f64], xi: &[f64]) -> Result<Vec<f64>, RayError> {
    let h = hamiltonian(field, x, xi)?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(RayError::DegenerateCovector);
    }
    let s = (2.0 * h).sqrt().recip();
    Ok(xi.iter().map(|v| v * s).collect())
}

struct Attempt {
    escape: Escape,
    clearance: f64,
    drift: f64,
    end: RayState,
    path: Vec<Vec<f64>>,
}

fn integrate(
    field: &CoefficientField,
    region: &Region,
    x0: &[f64],
    xi0: &[f64],
    horizon: f64,
    h: f64,
) -> Result<Attempt, RayError> {
    let exit = |x: &[f64]| region.exit_value(x).map_err(RayError::Exit);
    let h0 = hamiltonian(field, x0, xi0)?;
    let mut x = x0.to_vec();
    let mut xi = xi0.to_vec();
    let mut t = 0.0;
    let mut clearance = -exit(&x)?;
    let mut drift = 0.0f64;
    let mut path = vec![x.clone()];
    while t < horizon {
        let dt = h.min(horizon - t);
        let (nx, nxi) = rk4(field, &x, &xi, dt)?;
        if exit(&nx)? > 0.0 {
            let (mut lo, mut hi) = (0.0, dt);
            while hi - lo > TIME_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                let (mx, _) = rk4(field, &x, &xi, mid)?;
                if exit(&mx)? > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let tau = 0.5 * (lo + hi);
            let (ex, exi) = rk4(field, &x, &xi, tau)?;
            drift = drift.max((hamiltonian(field, &ex, &exi)? - h0).abs() / h0);
            path.push(ex.clone());
            return Ok(Attempt {
                escape: Escape::At(t + tau),
                clearance: 0.0,
                drift,
                end: RayState {
                    x: ex,
                    xi: exi,
                    t: t + tau,
                },
                path,
            });
        }
        x = nx;
        xi = nxi;
        t += dt;
        drift = drift.max((hamiltonian(field, &x, &xi)? - h0).abs() / h0);
        clearance = clearance.min(-exit(&x)?);
        path.push(x.clone());
    }
    Ok(Attempt {
        escape: Escape::TrappedUntilHorizon,
        clearance,
        drift,
        end: RayState { x, xi, t },
        path,
    })
}

fn check_dims(field: &CoefficientField, state: &RayState) -> Result<(), RayError> {
    let n = field.dim();
    for got in [state.x.len(), state.xi.len()] {
        if got != n {
            return Err(RayError::Dimension { expected: n, got });
        }
    }
    Ok(())
}

/// Traces one ray from `start`, halving the step while the Hamiltonian
/// drift exceeds [`DRIFT_TOLERANCE`].
pub fn trace(
    field: &CoefficientField,
    region: &Region,
    start: &RayState,
    horizon: f64,
    step: f64,
) -> Result<RayOutcome, RayError> {
    check_dims(field, start)?;
    if !(step > 0.0 && horizon > 0.0 && step.is_finite() && horizon.is_finite()) {
        return Err(RayError::Parameters { step, horizon });
    }
    if !region.contains(&start.x)? {
        return Err(RayError::StartOutside(start.x.clone()));
    }
    let xi0 = normalize_covector(field, &start.x, &start.xi)?;
    let mut h = step;
    let mut last_drift = f64::NAN;
    for halvings in 0..=MAX_HALVINGS {
        let run = integrate(field, region, &start.x, &xi0, horizon, h)?;
        if run.drift <= DRIFT_TOLERANCE {
            let mut end = run.end;
            end.t += start.t;
            return Ok(RayOutcome {
                start: start.x.clone(),
                direction: xi0,
                escape_time: run.escape,
                min_boundary_distance: run.clearance.max(0.0),
                max_relative_drift: run.drift,
                step: h,
                halvings,
                end,
                path: run.path,
            });
        }
        last_drift = run.drift;
        h /= 2.0;
    }
    Err(RayError::StepCollapse {
        step: h * 2.0,
        drift: last_drift,
    })
}

/// Integrates the flow for a fixed duration with no boundary, at a fixed
/// step. Negative durations are not supported; reverse `ξ` instead.
pub fn flow(field: &CoefficientField, state: &RayState, duration: f64, step: f64) -> Result<RayState, RayError> {
    check_dims(field, state)?;
    if !(step > 0.0 && duration >= 0.0) {
        return Err(RayError::Parameters {
            step,
            horizon: duration,
        });
    }
    let (mut x, mut xi) = (state.x.clone(), state.xi.clone());
    let mut t = 0.0;
    while t < duration {
        let dt = step.min(duration - t);
        (x, xi) = rk4(field, &x, &xi, dt)?;
        t += dt;
    }
    Ok(RayState {
        x,
        xi,
        t: state.t + duration,
    })
}

/// Deterministic, evenly spread unit directions.
pub fn fan_directions(dim: usize, count: usize) -> Result<Vec<Vec<f64>>, RayError> {
    let dirs = match dim {
        1 => (0..count).map(|k| vec![if k % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..count)
            .map(|k| {
                let theta = 2.0 * PI * k as f64 / count as f64;
                vec![theta.cos(), theta.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        other => return Err(RayError::FanDimension(other)),
    };
    Ok(dirs)
}

pub fn fan(
    field: &CoefficientField,
    region: &Region,
    center: &[f64],
    count: usize,
    horizon: f64,
    step: f64,
) -> Result<Vec<RayOutcome>, RayError> {
    let dirs = fan_directions(field.dim(), count)?;
    dirs.into_par_iter()
        .map(|xi| trace(field, region, &RayState::new(center.to_vec(), xi), horizon, step))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FanSummary {
    pub count: usize,
    pub escaped: usize,
    pub trapped: usize,
    pub min_escape_time: Option<f64>,
    pub max_escape_time: Option<f64>,
    pub max_relative_drift: f64,
}

impl FanSummary {
    pub fn of(outcomes: &[RayOutcome]) -> FanSummary {
        let times: Vec<f64> = outcomes.iter().filter_map(|o| o.escape_time.time()).collect();
        FanSummary {
            count: outcomes.len(),
            escaped: times.len(),
            trapped: outcomes.len() - times.len(),
            min_escape_time: times.iter().copied().reduce(f64::min),
            max_escape_time: times.iter().copied().reduce(f64::max),
            max_relative_drift: outcomes.iter().map(|o| o.max_relative_drift).fold(0.0, f64::max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{ConstantTable, Expression};

    fn diag(texts: &[&str]) -> CoefficientField {
        CoefficientField::parse(texts, texts.len(), true, &ConstantTable::new()).unwrap()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn disk_trap() -> (CoefficientField, Region) {
        let c = Expression::parse("x1^2 + x2^2 - 2", 2).unwrap();
        (
            diag(&["1 + x1^2 + x2^2", "1 + x1^2 + x2^2"]),
            Region::new(vec![(-1.5, 1.5), (-1.5, 1.5)], vec![c]).unwrap(),
        )
    }

    #[test]
    fn straight_ray_from_center() {
        let f = diag(&["1", "1"]);
        let r = Region::ball(&[0.0, 0.0], 2f64.sqrt());
        let o = trace(&f, &r, &RayState::new(vec![0.0, 0.0], vec![1.0, 0.0]), 10.0, 0.05).unwrap();
        assert!((o.escape_time.time().unwrap() - 2f64.sqrt()).abs() <= 1e-6);
        assert_eq!(o.halvings, 0);
        assert_eq!(o.min_boundary_distance, 0.0);
    }

    #[test]
    fn chord_lengths() {
        let f = diag(&["1", "1"]);
        let r = Region::ball(&[0.0, 0.0], 1.0);
        for (y, angle) in [(0.5, 0.0), (-0.3, 0.7), (0.0, 2.0)] {
            let (c, s) = (f64::cos(angle), f64::sin(angle));
            let start = [0.1, y];
            // distance to the unit circle along (c, s)
            let b = start[0] * c + start[1] * s;
            let q = start[0] * start[0] + start[1] * start[1] - 1.0;
            let chord = -b + (b * b - q).sqrt();
            let o = trace(&f, &r, &RayState::new(start.to_vec(), vec![3.0 * c, 3.0 * s]), 5.0, 0.1).unwrap();
            assert!((o.escape_time.time().unwrap() - chord).abs() <= 1e-6);
        }
    }

    #[test]
    fn identity_fan_is_symmetric() {
        let f = diag(&["1", "1"]);
        let r = Region::ball(&[2.0, 0.0], 1.0);
        let out = fan(&f, &r, &[2.0, 0.0], 8, 5.0, 0.1).unwrap();
        assert_eq!(out.len(), 8);
        for o in &out {
            assert!((o.escape_time.time().unwrap() - 1.0).abs() <= 1e-6);
        }
        assert!(fan(&f, &r, &[2.0, 0.0], 0, 5.0, 0.1).unwrap().is_empty());
    }

    #[test]
    fn trapped_until_horizon() {
        let f = diag(&["1", "1"]);
        let r = Region::ball(&[0.0, 0.0], 10.0);
        let o = trace(&f, &r, &RayState::new(vec![0.0, 0.0], vec![0.0, 1.0]), 2.0, 0.1).unwrap();
        assert_eq!(o.escape_time, Escape::TrappedUntilHorizon);
        assert!((o.end.t - 2.0).abs() < 1e-12);
        assert!((o.min_boundary_distance - 8.0).abs() < 1e-9);
    }

    #[test]
    fn disk_trap_energy_is_conserved() {
        let (f, r) = disk_trap();
        let out = fan(&f, &r, &[0.0, 0.0], 32, 20.0, 0.05).unwrap();
        for o in &out {
            assert!(o.max_relative_drift <= DRIFT_TOLERANCE);
            assert!(o.escape_time.time().is_some());
        }
    }

    #[test]
    fn time_reversal() {
        for (f, tol) in [(diag(&["1", "1"]), 1e-5), (disk_trap().0, 1e-4)] {
            let start = RayState::new(
                vec![0.2, -0.1],
                normalize_covector(&f, &[0.2, -0.1], &[0.6, 0.8]).unwrap(),
            );
            let end = flow(&f, &start, 1.0, 0.01).unwrap();
            let back = RayState::new(end.x.clone(), end.xi.iter().map(|v| -v).collect());
            let home = flow(&f, &back, 1.0, 0.01).unwrap();
            assert!(dist(&home.x, &start.x) <= tol);
        }
    }

    #[test]
    fn start_must_be_inside() {
        let f = diag(&["1", "1"]);
        let r = Region::ball(&[0.0, 0.0], 1.0);
        let err = trace(&f, &r, &RayState::new(vec![2.0, 0.0], vec![1.0, 0.0]), 1.0, 0.1).unwrap_err();
        assert_eq!(err, RayError::StartOutside(vec![2.0, 0.0]));
    }

    #[test]
    fn zero_covector_rejected() {
        let f = diag(&["1", "1"]);
        let r = Region::ball(&[0.0, 0.0], 1.0);
        let err = trace(&f, &r, &RayState::new(vec![0.0, 0.0], vec![0.0, 0.0]), 1.0, 0.1).unwrap_err();
        assert_eq!(err, RayError::DegenerateCovector);
    }

    #[test]
    fn directions_are_unit_and_deterministic() {
        for dim in 1..=3 {
            let d = fan_directions(dim, 7).unwrap();
            assert_eq!(d, fan_directions(dim, 7).unwrap());
            for v in d {
                assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(fan_directions(4, 3), Err(RayError::FanDimension(4)));
    }
}
