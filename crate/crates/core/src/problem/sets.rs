use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dist, norm};

/// Convex compact local action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeasibleSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl FeasibleSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0 && radius.is_finite(), "ball radius must be positive");
        FeasibleSet::Ball { center, radius }
    }

    pub fn origin_ball(dim: usize, radius: f64) -> Self {
        Self::ball(vec![0.0; dim], radius)
    }

    pub fn cube(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        FeasibleSet::Box { lower, upper }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::Box { lower, .. } => lower.len(),
        }
    }

    /// Euclidean projection, in place.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match self {
            FeasibleSet::Ball { center, radius } => {
                let r = dist(x, center);
                if r > *radius {
                    let scale = radius / r;
                    for (v, c) in x.iter_mut().zip(center) {
                        *v = c + (*v - c) * scale;
                    }
                }
            }
            FeasibleSet::Box { lower, upper } => {
                for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
                    *v = v.clamp(*lo, *hi);
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        out
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            FeasibleSet::Ball { center, radius } => dist(x, center) <= radius + tol,
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((v, lo), hi)| *v >= lo - tol && *v <= hi + tol),
        }
    }

    /// `sup_{x in set} ||x||`.
    pub fn norm_bound(&self) -> f64 {
        match self {
            FeasibleSet::Ball { center, radius } => norm(center) + radius,
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// A point drawn from the set: uniform for balls and boxes.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            FeasibleSet::Ball { center, radius } => {
                let d = center.len();
                let mut dir = vec![0.0; d];
                crate::zeroth_order::fill_gaussian(rng, &mut dir);
                let len = norm(&dir).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / d.max(1) as f64);
                dir.iter().zip(center).map(|(v, c)| c + v / len * r).collect()
            }
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
        }
    }
}

/// Projection onto `{y >= 0, ||y|| <= bound}`: clamp, then rescale.
pub fn project_dual_in_place(y: &mut [f64], bound: f64) {
    for v in y.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let r = norm(y);
    if r > bound {
        let s = bound / r;
        y.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn project_dual(y: &[f64], bound: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    project_dual_in_place(&mut out, bound);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interior_point_is_fixed() {
        let b = FeasibleSet::origin_ball(2, 1.0);
        assert_eq!(b.project(&[0.3, -0.2]), vec![0.3, -0.2]);
        let c = FeasibleSet::cube(vec![-1.0; 2], vec![1.0; 2]);
        assert_eq!(c.project(&[0.3, -0.2]), vec![0.3, -0.2]);
    }

    #[test]
    fn ball_scales_radially() {
        let b = FeasibleSet::origin_ball(2, 1.0);
        assert_eq!(b.project(&[2.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn box_clamps() {
        let c = FeasibleSet::cube(vec![-1.0; 2], vec![1.0; 2]);
        assert_eq!(c.project(&[3.0, -5.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn dual_projection_examples() {
        assert_eq!(project_dual(&[0.1, 0.2], 1.0), vec![0.1, 0.2]);
        let p = project_dual(&[-3.0, 4.0], 1.0);
        assert!(p[0] == 0.0 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn norm_bounds() {
        assert_eq!(FeasibleSet::ball(vec![3.0, 4.0], 1.0).norm_bound(), 6.0);
        let c = FeasibleSet::cube(vec![-1.0, -3.0], vec![2.0, 1.0]);
        assert!((c.norm_bound() - 13.0f64.sqrt()).abs() < 1e-15);
    }

    fn any_set() -> impl Strategy<Value = FeasibleSet> {
        prop_oneof![
            (prop::collection::vec(-2.0..2.0f64, 3), 0.1..3.0f64)
                .prop_map(|(c, r)| FeasibleSet::ball(c, r)),
            (prop::collection::vec(-2.0..0.0f64, 3), prop::collection::vec(0.0..2.0f64, 3))
                .prop_map(|(l, u)| FeasibleSet::cube(l, u)),
        ]
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            set in any_set(),
            a in prop::collection::vec(-10.0..10.0f64, 3),
            b in prop::collection::vec(-10.0..10.0f64, 3),
        ) {
            let pa = set.project(&a);
            let pb = set.project(&b);
            prop_assert!(set.contains(&pa, 1e-12));
            let again = set.project(&pa);
            for k in 0..3 {
                prop_assert!((again[k] - pa[k]).abs() < 1e-12);
            }
            prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-12);
        }

        #[test]
        fn dual_projection_lands_in_set(y in prop::collection::vec(-5.0..5.0f64, 1..5), c in 0.1..4.0f64) {
            let p = project_dual(&y, c);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!(norm(&p) <= c * (1.0 + 1e-12));
        }
    }
}
