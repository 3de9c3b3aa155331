//! Planar geometry: vectors, the radial space discretization shared by
//! observations, actions and neighbour grouping, and the smallest enclosing
//! circle.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    #[inline]
    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Angle in `(-π, π]`.
    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Scales the vector down so its length is at most `max_len`.
    pub fn clamp_norm(self, max_len: f64) -> Vec2 {
        let n = self.norm();
        if n > max_len && n > 0.0 {
            self * (max_len / n)
        } else {
            self
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Vec2,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Vec2, radius: f64) -> Self {
        Self { center, radius }
    }

    /// Containment with an absolute slack of `tol`.
    #[inline]
    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        self.center.distance(p) <= self.radius + tol
    }

    fn from_diameter(a: Vec2, b: Vec2) -> Self {
        let center = (a + b) * 0.5;
        let radius = center.distance(a).max(center.distance(b));
        Self { center, radius }
    }

    /// Circumscribed circle of a triangle; `None` for (nearly) collinear input.
    fn circumscribed(a: Vec2, b: Vec2, c: Vec2) -> Option<Self> {
        // work relative to `a` for conditioning
        let b = b - a;
        let c = c - a;
        let d = 2.0 * (b.x * c.y - b.y * c.x);
        let scale = b.norm_sq().max(c.norm_sq());
        if d.abs() <= 1e-14 * scale || scale == 0.0 {
            return None;
        }
        let bb = b.norm_sq();
        let cc = c.norm_sq();
        let ux = (c.y * bb - b.y * cc) / d;
        let uy = (b.x * cc - c.x * bb) / d;
        let rel = Vec2::new(ux, uy);
        let radius = rel.norm().max(rel.distance(b)).max(rel.distance(c));
        Some(Self {
            center: a + rel,
            radius,
        })
    }

    /// Smallest circle with all three points on or inside it, given that the
    /// first two must be on its boundary.
    fn through_three(a: Vec2, b: Vec2, c: Vec2) -> Self {
        match Self::circumscribed(a, b, c) {
            Some(circle) => circle,
            None => {
                // collinear: the two farthest points span the circle
                let candidates = [(a, b), (a, c), (b, c)];
                let (p, q) = candidates
                    .into_iter()
                    .max_by(|x, y| x.0.distance(x.1).total_cmp(&y.0.distance(y.1)))
                    .expect("three candidates");
                Self::from_diameter(p, q)
            }
        }
    }
}

fn containment_tol(scale: f64) -> f64 {
    1e-12 * scale.max(1.0)
}

/// Smallest circle enclosing every point.
///
/// Incremental move-to-front construction over an insertion order that is
/// shuffled with a fixed seed, so the result depends only on the input.
pub fn smallest_enclosing_circle(points: &[Vec2]) -> Result<Circle> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut pts = points.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC0_C1C1E);
    pts.shuffle(&mut rng);

    let scale = pts
        .iter()
        .fold(0.0_f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
    let tol = containment_tol(scale);

    let mut circle = Circle::new(pts[0], 0.0);
    for i in 1..pts.len() {
        if circle.contains(pts[i], tol) {
            continue;
        }
        circle = Circle::new(pts[i], 0.0);
        for j in 0..i {
            if circle.contains(pts[j], tol) {
                continue;
            }
            circle = Circle::from_diameter(pts[i], pts[j]);
            for k in 0..j {
                if !circle.contains(pts[k], tol) {
                    circle = Circle::through_three(pts[i], pts[j], pts[k]);
                }
            }
        }
    }
    Ok(circle)
}

/// Radial partition of an agent's visible disk.
///
/// Component 0 is the central disk of radius `inner_radius`; components
/// `1..sectors` split the annulus `(inner_radius, d_lim]` into equal angular
/// arcs. Sector `p` covers the half-open arc
/// `[start_angle + (p-1)w, start_angle + p*w)` with `w = 2π / (sectors - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    /// Total number of components, central disk included.
    pub sectors: usize,
    pub d_lim: f64,
    pub inner_radius: f64,
    /// Angle at which sector 1 begins. The default of `-π/(sectors-1)` puts
    /// sector centers on the compass directions.
    pub start_angle: f64,
}

impl Discretization {
    pub fn new(sectors: usize, d_lim: f64, inner_radius: f64) -> Result<Self> {
        let start_angle = if sectors > 1 {
            -PI / (sectors - 1) as f64
        } else {
            0.0
        };
        let disc = Self {
            sectors,
            d_lim,
            inner_radius,
            start_angle,
        };
        disc.validate()?;
        Ok(disc)
    }

    /// Nine components with the inner disk at a fifth of the visibility range.
    pub fn default_for(d_lim: f64) -> Self {
        Self::new(9, d_lim, 0.2 * d_lim).expect("default layout is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sectors < 2 {
            return Err(Error::InvalidDiscretization(format!(
                "need at least 2 components, got {}",
                self.sectors
            )));
        }
        if !(self.d_lim.is_finite() && self.d_lim > 0.0) {
            return Err(Error::InvalidDiscretization(format!(
                "d_lim = {}",
                self.d_lim
            )));
        }
        if !(self.inner_radius > 0.0 && self.inner_radius < self.d_lim) {
            return Err(Error::InvalidDiscretization(format!(
                "inner_radius {} must lie in (0, {})",
                self.inner_radius, self.d_lim
            )));
        }
        if !self.start_angle.is_finite() {
            return Err(Error::InvalidDiscretization(
                "start_angle is not finite".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.sectors
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.sectors == 0
    }

    #[inline]
    fn sector_width(&self) -> f64 {
        2.0 * PI / (self.sectors - 1) as f64
    }

    /// Component containing the relative position `rel`, or `None` when it
    /// lies beyond the visibility range.
    pub fn sector_index(&self, rel: Vec2) -> Option<usize> {
        let r = rel.norm();
        if r <= self.inner_radius {
            return Some(0);
        }
        if r > self.d_lim {
            return None;
        }
        let w = self.sector_width();
        let arcs = self.sectors - 1;
        let offset = (rel.angle() - self.start_angle).rem_euclid(2.0 * PI);
        let idx = ((offset / w).floor() as usize).min(arcs - 1);
        Some(idx + 1)
    }

    /// Center point of each component; these are the discrete actions.
    pub fn action_offsets(&self) -> Vec<Vec2> {
        let w = self.sector_width();
        let radius = 0.5 * (self.inner_radius + self.d_lim);
        let mut out = Vec::with_capacity(self.sectors);
        out.push(Vec2::ZERO);
        for p in 1..self.sectors {
            let angle = self.start_angle + (p as f64 - 0.5) * w;
            out.push(Vec2::from_polar(radius, angle));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Brute force over every pair and triple of candidate boundary points.
    fn brute_force_circle(points: &[Vec2]) -> Circle {
        let n = points.len();
        if n == 1 {
            return Circle::new(points[0], 0.0);
        }
        let covers = |c: &Circle| {
            points
                .iter()
                .all(|&p| c.center.distance(p) <= c.radius + 1e-9)
        };
        let mut best: Option<Circle> = None;
        let mut consider = |c: Circle| {
            if covers(&c) && best.is_none_or(|b| c.radius < b.radius) {
                best = Some(c);
            }
        };
        for i in 0..n {
            for j in i + 1..n {
                let center = (points[i] + points[j]) * 0.5;
                consider(Circle::new(center, center.distance(points[i])));
                for k in j + 1..n {
                    let (a, b, c) = (points[i], points[j], points[k]);
                    let d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
                    if d.abs() < 1e-12 {
                        continue;
                    }
                    let (aa, bb, cc) = (a.norm_sq(), b.norm_sq(), c.norm_sq());
                    let ux = (aa * (b.y - c.y) + bb * (c.y - a.y) + cc * (a.y - b.y)) / d;
                    let uy = (aa * (c.x - b.x) + bb * (a.x - c.x) + cc * (b.x - a.x)) / d;
                    let center = Vec2::new(ux, uy);
                    consider(Circle::new(center, center.distance(a)));
                }
            }
        }
        best.expect("some candidate always covers")
    }

    #[test]
    fn single_point_circle() {
        let c = smallest_enclosing_circle(&[Vec2::new(0.0, 0.0)]).unwrap();
        assert_eq!(c.center, Vec2::ZERO);
        assert_eq!(c.radius, 0.0);
    }

    #[test]
    fn two_point_circle() {
        let c = smallest_enclosing_circle(&[Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0)]).unwrap();
        assert!((c.center.x - 1.0).abs() < 1e-12 && c.center.y.abs() < 1e-12);
        assert!((c.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            smallest_enclosing_circle(&[]),
            Err(Error::EmptyPointSet)
        ));
    }

    #[test]
    fn collinear_and_duplicate_points() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(3.0, 3.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(2.0, 2.0),
        ];
        let c = smallest_enclosing_circle(&pts).unwrap();
        assert!((c.center.x - 1.5).abs() < 1e-12 && (c.center.y - 1.5).abs() < 1e-12);
        assert!((c.radius - 4.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let k = rng.random_range(1..=12);
            let pts: Vec<Vec2> = (0..k)
                .map(|_| Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let fast = smallest_enclosing_circle(&pts).unwrap();
            let slow = brute_force_circle(&pts);
            assert!(
                (fast.radius - slow.radius).abs() < 1e-9,
                "{fast:?} vs {slow:?}"
            );
            assert!(fast.center.distance(slow.center) < 1e-9);
        }
    }

    #[test]
    fn deterministic_for_fixed_input() {
        let pts: Vec<Vec2> = (0..40)
            .map(|i| Vec2::from_polar(1.0 + (i % 7) as f64, i as f64))
            .collect();
        let a = smallest_enclosing_circle(&pts).unwrap();
        let b = smallest_enclosing_circle(&pts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sector_examples() {
        let disc = Discretization::default_for(2.0);
        assert_eq!(disc.sector_index(Vec2::ZERO), Some(0));
        assert_eq!(disc.sector_index(Vec2::new(3.0, 0.0)), None);
        assert_eq!(disc.sector_index(Vec2::new(1.2, 0.0)), Some(1));
        // boundaries: inner radius belongs to the center, d_lim to the annulus
        assert_eq!(disc.sector_index(Vec2::new(0.4, 0.0)), Some(0));
        assert_eq!(disc.sector_index(Vec2::new(0.0, 2.0)), Some(3));
        // compass layout: north is sector 3, west 5, south 7
        assert_eq!(disc.sector_index(Vec2::new(-1.0, 0.0)), Some(5));
        assert_eq!(disc.sector_index(Vec2::new(0.0, -1.0)), Some(7));
    }

    #[test]
    fn boundary_ray_goes_to_later_sector() {
        let disc = Discretization::default_for(2.0);
        // the ray at +π/8 separates sectors 1 and 2
        let on_edge = Vec2::from_polar(1.0, PI / 8.0);
        let p = disc.sector_index(on_edge).unwrap();
        let just_before = disc
            .sector_index(Vec2::from_polar(1.0, PI / 8.0 - 1e-9))
            .unwrap();
        let just_after = disc
            .sector_index(Vec2::from_polar(1.0, PI / 8.0 + 1e-9))
            .unwrap();
        assert_eq!(just_before, 1);
        assert_eq!(just_after, 2);
        assert!(p == 1 || p == 2);
    }

    #[test]
    fn offsets_layout() {
        let disc = Discretization::default_for(2.0);
        let offs = disc.action_offsets();
        assert_eq!(offs.len(), 9);
        assert_eq!(offs[0], Vec2::ZERO);
        for (p, o) in offs.iter().enumerate().skip(1) {
            assert!((o.norm() - 1.2).abs() < 1e-12);
            assert_eq!(disc.sector_index(*o), Some(p));
        }
        assert!((offs[1].x - 1.2).abs() < 1e-12 && offs[1].y.abs() < 1e-12);
    }

    #[test]
    fn invalid_layouts_rejected() {
        assert!(Discretization::new(1, 2.0, 0.4).is_err());
        assert!(Discretization::new(9, 2.0, 2.0).is_err());
        assert!(Discretization::new(9, -1.0, 0.4).is_err());
    }

    #[test]
    fn dense_grid_partition() {
        let disc = Discretization::default_for(2.0);
        let mut counts = vec![0usize; 9];
        let steps = 201;
        for i in 0..steps {
            for j in 0..steps {
                let p = Vec2::new(
                    -2.0 + 4.0 * i as f64 / (steps - 1) as f64,
                    -2.0 + 4.0 * j as f64 / (steps - 1) as f64,
                );
                match disc.sector_index(p) {
                    Some(c) => {
                        assert!(p.norm() <= 2.0);
                        counts[c] += 1;
                    }
                    None => assert!(p.norm() > 2.0),
                }
            }
        }
        // the eight sectors have equal area so their sample counts are close
        let mean = counts[1..].iter().sum::<usize>() as f64 / 8.0;
        for c in &counts[1..] {
            assert!((*c as f64 - mean).abs() / mean < 0.05, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn circle_is_minimal_and_translation_invariant(
            raw in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..12),
            tx in -50.0f64..50.0,
            ty in -50.0f64..50.0,
        ) {
            let pts: Vec<Vec2> = raw.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let c = smallest_enclosing_circle(&pts).unwrap();
            for p in &pts {
                prop_assert!(c.contains(*p, 1e-9));
            }
            if c.radius > 1e-6 {
                let shrunk = Circle::new(c.center, c.radius - 1e-6);
                prop_assert!(pts.iter().any(|p| !shrunk.contains(*p, 0.0)));
            }
            let t = Vec2::new(tx, ty);
            let moved: Vec<Vec2> = pts.iter().map(|&p| p + t).collect();
            let cm = smallest_enclosing_circle(&moved).unwrap();
            prop_assert!(cm.center.distance(c.center + t) < 1e-9);
        }

        #[test]
        fn every_visible_point_has_one_component(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let disc = Discretization::default_for(2.0);
            let p = Vec2::new(x, y);
            let idx = disc.sector_index(p);
            prop_assert_eq!(idx.is_some(), p.norm() <= 2.0);
            if let Some(i) = idx {
                prop_assert!(i < 9);
            }
        }
    }
}
