//! Bounded regions and the deterministic sample grids on which every
//! "uniformly over the closed domain" claim is checked.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{EvalError, Expression};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("bounding box must have {expected} axes, got {got}")]
    BoxDimension { expected: usize, got: usize },
    #[error("empty bounding box on axis {axis}: [{lo}, {hi}]")]
    EmptyAxis { axis: usize, lo: f64, hi: f64 },
    #[error("constraint has dimension {got}, region has {expected}")]
    ConstraintDimension { expected: usize, got: usize },
    #[error("margin must be nonnegative, got {0}")]
    NegativeMargin(f64),
    #[error("resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("region too thin for resolution {0}")]
    Empty(usize),
    #[error("constraint evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
}

/// A box intersected with `constraint(x) <= -margin` for every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    bounds: Vec<(f64, f64)>,
    constraints: Vec<Expression>,
    margin: f64,
}

impl Region {
    pub fn new(bounds: Vec<(f64, f64)>, constraints: Vec<Expression>) -> Result<Region, RegionError> {
        let dim = bounds.len();
        if dim == 0 {
            return Err(RegionError::BoxDimension { expected: 1, got: 0 });
        }
        for (axis, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(RegionError::EmptyAxis { axis, lo, hi });
            }
        }
        if let Some(c) = constraints.iter().find(|c| c.dim() != dim) {
            return Err(RegionError::ConstraintDimension {
                expected: dim,
                got: c.dim(),
            });
        }
        Ok(Region {
            bounds,
            constraints,
            margin: 0.0,
        })
    }

    /// Closed ball `|x - center|^2 <= radius^2` with its tight bounding box.
    pub fn ball(center: &[f64], radius: f64) -> Region {
        let dim = center.len();
        let mut constraint = Expression::constant(-(radius * radius), dim);
        for (k, &c) in center.iter().enumerate() {
            let shifted = Expression::var(k, dim) - Expression::constant(c, dim);
            constraint = shifted.powi(2) + constraint;
        }
        let bounds = center.iter().map(|&c| (c - radius, c + radius)).collect();
        Region::new(bounds, vec![constraint]).expect("ball with positive radius")
    }

    pub fn with_margin(mut self, margin: f64) -> Result<Region, RegionError> {
        if !(margin >= 0.0) {
            return Err(RegionError::NegativeMargin(margin));
        }
        self.margin = margin;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn constraints(&self) -> &[Expression] {
        &self.constraints
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn contains(&self, p: &[f64]) -> Result<bool, RegionError> {
        assert_eq!(p.len(), self.dim(), "point dimension");
        let in_box = self.bounds.iter().zip(p).all(|(&(lo, hi), &x)| lo <= x && x <= hi);
        if !in_box {
            return Ok(false);
        }
        for c in &self.constraints {
            let v = c.eval(p).map_err(|source| RegionError::Eval {
                point: p.to_vec(),
                source,
            })?;
            if v > -self.margin {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Scalar that is `<= 0` exactly inside the region: the largest of the
    /// shifted constraint values and the signed box-face excesses.
    pub fn exit_value(&self, p: &[f64]) -> Result<f64, EvalError> {
        let mut worst = f64::NEG_INFINITY;
        for (&(lo, hi), &x) in self.bounds.iter().zip(p) {
            worst = worst.max(lo - x).max(x - hi);
        }
        for c in &self.constraints {
            worst = worst.max(c.eval(p)? + self.margin);
        }
        Ok(worst)
    }

    /// Tensor grid of the box, filtered by the constraints, ordered
    /// lexicographically with axis 1 varying slowest.
    pub fn sample(&self, resolution: usize) -> Result<SampleGrid, RegionError> {
        if resolution < 2 {
            return Err(RegionError::Resolution(resolution));
        }
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|&(lo, hi)| axis_points(lo, hi, resolution))
            .collect();
        let dim = self.dim();
        let total = resolution.pow(dim as u32);
        let mut points = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let p: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect();
            if self.contains(&p)? {
                points.push(p);
            }
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < resolution {
                    break;
                }
                idx[k] = 0;
            }
        }
        if points.is_empty() {
            return Err(RegionError::Empty(resolution));
        }
        Ok(SampleGrid { resolution, points })
    }

    /// Image of the region under `x -> -x` on the flagged axes.
    pub fn reflected(&self, flip: &[bool]) -> Region {
        let bounds = self
            .bounds
            .iter()
            .zip(flip)
            .map(|(&(lo, hi), &f)| if f { (-hi, -lo) } else { (lo, hi) })
            .collect();
        Region {
            bounds,
            constraints: self.constraints.iter().map(|c| c.reflect(flip)).collect(),
            margin: self.margin,
        }
    }
}

pub(crate) fn axis_points(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    let last = resolution - 1;
    (0..resolution)
        .map(|i| {
            if i == last {
                hi
            } else {
                lo + (hi - lo) * (i as f64) / (last as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleGrid {
    pub resolution: usize,
    pub points: Vec<Vec<f64>>,
}

impl SampleGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_centered_2_0() -> Region {
        let c = Expression::parse("(x1-2)^2 + x2^2 - 1.5", 2).unwrap();
        Region::new(vec![(0.5, 3.5), (-1.5, 1.5)], vec![c]).unwrap()
    }

    #[test]
    fn contains_on_shifted_disk() {
        let r = disk_centered_2_0();
        assert!(r.contains(&[1.0, 0.0]).unwrap());
        assert!(r.contains(&[3.0, 0.0]).unwrap());
        assert!(!r.contains(&[0.0, 0.0]).unwrap());
        // outside the box is outside regardless of constraints
        assert!(!r.contains(&[2.0, 5.0]).unwrap());
    }

    #[test]
    fn margin_shrinks_region() {
        let r = Region::ball(&[0.0, 0.0], 1.0);
        assert!(r.contains(&[1.0, 0.0]).unwrap());
        let shrunk = r.with_margin(0.1).unwrap();
        assert!(!shrunk.contains(&[1.0, 0.0]).unwrap());
        assert!(shrunk.contains(&[0.9, 0.0]).unwrap());
    }

    #[test]
    fn unit_square_resolution_three() {
        let r = Region::new(vec![(0.0, 1.0), (0.0, 1.0)], vec![]).unwrap();
        let g = r.sample(3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.points[0], vec![0.0, 0.0]);
        assert_eq!(g.points[1], vec![0.0, 0.5]);
        assert_eq!(g.points[8], vec![1.0, 1.0]);
    }

    #[test]
    fn disk_sqrt2_resolution_three_enumerated() {
        // Oracle: enumerate the 9 tensor points and keep x^2 + y^2 <= 2.
        let ticks = [-1.5, 0.0, 1.5];
        let expected: Vec<Vec<f64>> = ticks
            .iter()
            .flat_map(|&x| ticks.iter().map(move |&y| vec![x, y]))
            .filter(|p| p[0] * p[0] + p[1] * p[1] <= 2.0)
            .collect();
        assert_eq!(expected.len(), 1);
        let c = Expression::parse("x1^2 + x2^2 - 2", 2).unwrap();
        let r = Region::new(vec![(-1.5, 1.5), (-1.5, 1.5)], vec![c]).unwrap();
        assert_eq!(r.sample(3).unwrap().points, expected);
    }

    #[test]
    fn resolution_one_rejected() {
        let r = Region::new(vec![(0.0, 1.0)], vec![]).unwrap();
        assert_eq!(r.sample(1), Err(RegionError::Resolution(1)));
    }

    #[test]
    fn thin_region_rejected() {
        let c = Expression::parse("x1^2 + x2^2 - 0.01", 2).unwrap();
        let r = Region::new(vec![(-1.0, 1.0), (-1.0, 1.0)], vec![c]).unwrap();
        assert_eq!(r.sample(2), Err(RegionError::Empty(2)));
        assert!(r.sample(3).is_ok());
    }

    #[test]
    fn empty_axis_rejected() {
        assert!(matches!(
            Region::new(vec![(1.0, 1.0)], vec![]),
            Err(RegionError::EmptyAxis { axis: 0, .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_inside() {
        let r = disk_centered_2_0();
        let a = r.sample(17).unwrap();
        let b = r.sample(17).unwrap();
        assert_eq!(a, b);
        let ticks = axis_points(0.5, 3.5, 17);
        for p in a.iter() {
            assert!(r.contains(p).unwrap());
            assert!(ticks.contains(&p[0]));
        }
    }

    #[test]
    fn ball_grid_contains_extreme_points() {
        let r = Region::ball(&[2.0, 0.0], 1.0);
        let g = r.sample(33).unwrap();
        for p in [[1.0, 0.0], [3.0, 0.0], [2.0, 1.0], [2.0, -1.0]] {
            assert!(g.points.contains(&p.to_vec()), "{p:?}");
        }
    }

    #[test]
    fn reflection_mirrors_grid_points() {
        let r = Region::ball(&[2.0, 0.0], 1.0);
        let m = r.reflected(&[true, true]);
        let g = r.sample(33).unwrap();
        let gm = m.sample(33).unwrap();
        assert_eq!(g.len(), gm.len());
        for p in gm.iter() {
            let back = vec![-p[0], -p[1]];
            assert!(g.points.contains(&back));
        }
    }

    #[test]
    fn exit_value_sign() {
        let r = Region::ball(&[0.0, 0.0], 1.0);
        assert!(r.exit_value(&[0.5, 0.0]).unwrap() < 0.0);
        assert!(r.exit_value(&[1.5, 0.0]).unwrap() > 0.0);
    }
}
