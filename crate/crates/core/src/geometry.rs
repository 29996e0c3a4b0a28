//! State types, the switching-curve classifier, the set-valued Fuller field,
//! ice-cream cones and a sampled Bouligand tangency estimator.
//!
//! The switching curve is `x = ¼·y²·sgn y`. Its upper branch (`y > 0`) is
//! `C1`, its lower branch (`y < 0`) is `C2`. The feedback field pushes with
//! `u = +1` to the left of the curve and with `u = −1` to the right of it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default absolute tolerance for curve membership.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Default relative slack of the Bouligand estimator.
pub const DEFAULT_ETA: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub x: f64,
    pub y: f64,
}

impl StatePoint {
    pub const ORIGIN: StatePoint = StatePoint { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        StatePoint { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn neg(&self) -> StatePoint {
        StatePoint::new(-self.x, -self.y)
    }

    pub fn dist(&self, other: &StatePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn at(&self, t: f64) -> ExtendedPoint {
        ExtendedPoint::new(self.x, self.y, t)
    }

    /// The map `(x, y) ↦ (λ²x, λy)` that leaves the switching curve invariant.
    pub fn scaled(&self, lambda: f64) -> StatePoint {
        StatePoint::new(lambda * lambda * self.x, lambda * self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl ExtendedPoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        ExtendedPoint { x, y, t }
    }

    pub fn state(&self) -> StatePoint {
        StatePoint::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    pub fn offset(&self, v: &[f64; 3], s: f64) -> ExtendedPoint {
        ExtendedPoint::new(self.x + s * v[0], self.y + s * v[1], self.t + s * v[2])
    }

    pub fn dist(&self, other: &ExtendedPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dt = self.t - other.t;
        (dx * dx + dy * dy + dt * dt).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    LeftOpen,
    RightOpen,
    OnC1,
    OnC2,
    Origin,
}

/// The two closed feedback regions with their curve exclusions applied:
/// `D1` is `D1∖C1` (left region plus `C2`), `D2` is `D2∖C2` (right region
/// plus `C1`). The origin belongs to neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    D1,
    D2,
}

impl Side {
    /// Control of the feedback field on this side.
    pub fn control(self) -> f64 {
        match self {
            Side::D1 => 1.0,
            Side::D2 => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::D1 => Side::D2,
            Side::D2 => Side::D1,
        }
    }
}

/// Signed offset from the switching curve; negative on the left.
pub fn curve_gap(p: &StatePoint) -> f64 {
    p.x - 0.25 * p.y * p.y * p.y.signum()
}

pub fn classify(p: &StatePoint, tol: f64) -> Result<RegionLabel, GeometryError> {
    if !p.is_finite() {
        return Err(GeometryError::InvalidInput(format!("non-finite point {p:?}")));
    }
    if !(tol >= 0.0) {
        return Err(GeometryError::InvalidInput(format!("tolerance {tol} must be >= 0")));
    }
    if p.x.abs() <= tol && p.y.abs() <= tol {
        return Ok(RegionLabel::Origin);
    }
    let g = curve_gap(p);
    if g.abs() <= tol && p.y != 0.0 {
        return Ok(if p.y > 0.0 { RegionLabel::OnC1 } else { RegionLabel::OnC2 });
    }
    Ok(if g < 0.0 { RegionLabel::LeftOpen } else { RegionLabel::RightOpen })
}

pub fn side_of(p: &StatePoint, tol: f64) -> Result<Option<Side>, GeometryError> {
    Ok(match classify(p, tol)? {
        RegionLabel::LeftOpen | RegionLabel::OnC2 => Some(Side::D1),
        RegionLabel::RightOpen | RegionLabel::OnC1 => Some(Side::D2),
        RegionLabel::Origin => None,
    })
}

/// Relative tolerance of [`curve_side`].
pub const CURVE_REL_TOL: f64 = 1e-12;

/// Side with curve membership decided up to rounding: points whose curve
/// gap is below `CURVE_REL_TOL·(|x| + ¼y²)` count as curve points.
pub fn curve_side(p: &StatePoint) -> Result<Option<Side>, GeometryError> {
    let scale = p.x.abs() + 0.25 * p.y * p.y;
    side_of(p, CURVE_REL_TOL * scale)
}

/// A finite set of one or two velocity vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocitySet<const N: usize> {
    pub velocities: Vec<[f64; N]>,
}

impl<const N: usize> VelocitySet<N> {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn contains(&self, v: &[f64; N], tol: f64) -> bool {
        self.velocities.iter().any(|w| dist_n(w, v) <= tol)
    }

    /// Euclidean distance from `v` to the nearest member.
    pub fn distance_to(&self, v: &[f64; N]) -> f64 {
        self.velocities
            .iter()
            .map(|w| dist_n(w, v))
            .fold(f64::INFINITY, f64::min)
    }
}

fn dist_n<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

pub fn fuller_field(p: &StatePoint, tol: f64) -> Result<VelocitySet<2>, GeometryError> {
    let velocities = match classify(p, tol)? {
        RegionLabel::LeftOpen => vec![[p.y, 1.0]],
        RegionLabel::RightOpen => vec![[p.y, -1.0]],
        RegionLabel::OnC1 | RegionLabel::OnC2 => vec![[p.y, -1.0], [p.y, 1.0]],
        RegionLabel::Origin => vec![[0.0, 1.0], [0.0, -1.0]],
    };
    Ok(VelocitySet { velocities })
}

pub fn extended_field(z: &ExtendedPoint, tol: f64) -> Result<VelocitySet<3>, GeometryError> {
    if !z.t.is_finite() {
        return Err(GeometryError::InvalidInput(format!("non-finite time {}", z.t)));
    }
    let planar = fuller_field(&z.state(), tol)?;
    Ok(VelocitySet {
        velocities: planar.velocities.iter().map(|v| [v[0], v[1], 1.0]).collect(),
    })
}

/// Speed bound of the extended field's planar part on the ball of radius `r`.
pub fn speed_bound(r: f64) -> f64 {
    (r * r + 1.0).sqrt()
}

/// `{z : ‖z.xy − apex.xy‖ ≤ slope·(z.t − apex.t), z.t − apex.t ∈ [0, height)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IceCreamCone {
    pub apex: ExtendedPoint,
    pub slope: f64,
    pub height: f64,
}

impl IceCreamCone {
    pub fn new(apex: ExtendedPoint, slope: f64, height: f64) -> Result<Self, GeometryError> {
        if !apex.is_finite() || !(slope > 0.0) || !(height > 0.0) {
            return Err(GeometryError::InvalidInput(format!(
                "cone needs finite apex and positive slope/height, got {apex:?}, {slope}, {height}"
            )));
        }
        Ok(IceCreamCone { apex, slope, height })
    }

    pub fn contains(&self, z: &ExtendedPoint) -> bool {
        let dt = z.t - self.apex.t;
        if !(dt >= 0.0 && dt < self.height) {
            return false;
        }
        (z.x - self.apex.x).hypot(z.y - self.apex.y) <= self.slope * dt
    }

    /// Membership in the closure (top face included).
    pub fn closure_contains(&self, z: &ExtendedPoint) -> bool {
        let dt = z.t - self.apex.t;
        dt >= 0.0
            && dt <= self.height
            && (z.x - self.apex.x).hypot(z.y - self.apex.y) <= self.slope * dt
    }

    pub fn top_time(&self) -> f64 {
        self.apex.t + self.height
    }

    pub fn top_radius(&self) -> f64 {
        self.slope * self.height
    }
}

pub fn cone_contains(k: &IceCreamCone, z: &ExtendedPoint) -> bool {
    k.contains(z)
}

/// Fraction of `scales` at which some point of the set lies within `s·η` of
/// `z + s·v`. Nearby points are probed on a fixed stencil, so a score below 1
/// is evidence of non-tangency and a score of 1 is evidence of tangency.
pub fn bouligand_estimate<P>(
    set_pred: P,
    z: &ExtendedPoint,
    v: &[f64; 3],
    scales: &[f64],
) -> Result<f64, GeometryError>
where
    P: Fn(&ExtendedPoint) -> bool,
{
    bouligand_estimate_with(set_pred, z, v, scales, DEFAULT_ETA)
}

pub fn bouligand_estimate_with<P>(
    set_pred: P,
    z: &ExtendedPoint,
    v: &[f64; 3],
    scales: &[f64],
    eta: f64,
) -> Result<f64, GeometryError>
where
    P: Fn(&ExtendedPoint) -> bool,
{
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(GeometryError::InvalidInput("scales must be positive".into()));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(GeometryError::InvalidInput("scales must be decreasing".into()));
    }
    if !(eta > 0.0) {
        return Err(GeometryError::InvalidInput(format!("eta {eta} must be positive")));
    }
    if !set_pred(z) {
        return Err(GeometryError::Precondition(format!("{z:?} is not in the set")));
    }
    let stencil = probe_stencil();
    let hits = scales
        .iter()
        .filter(|&&s| {
            let target = z.offset(v, s);
            set_pred(&target)
                || stencil
                    .iter()
                    .any(|u| set_pred(&target.offset(u, s * eta)))
        })
        .count();
    Ok(hits as f64 / scales.len() as f64)
}

/// Unit directions of the 3×3×3 cube at radii ½ and 1, plus the half-radius
/// cube corners and face centers at radius ¼.
fn probe_stencil() -> Vec<[f64; 3]> {
    let mut dirs = Vec::with_capacity(26 * 3);
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if i == 0 && j == 0 && k == 0 {
                    continue;
                }
                let n = ((i * i + j * j + k * k) as f64).sqrt();
                let u = [i as f64 / n, j as f64 / n, k as f64 / n];
                for rho in [0.25, 0.5, 1.0] {
                    dirs.push([u[0] * rho, u[1] * rho, u[2] * rho]);
                }
            }
        }
    }
    dirs
}

pub fn dist_to_ball_complement(p: &StatePoint, r: f64) -> f64 {
    (r - p.norm()).max(0.0)
}

/// Euclidean distance from `p` to the closed branch `C1 ∪ {0}`.
pub fn distance_to_c1(p: &StatePoint) -> f64 {
    // Stationary points of |(¼y², y) − p|² solve y³ + 4(2 − x)y − 8·p.y = 0.
    let big_p = 4.0 * (2.0 - p.x);
    let big_q = -8.0 * p.y;
    let mut best = p.norm();
    for y in depressed_cubic_roots(big_p, big_q) {
        if y > 0.0 {
            let d = (0.25 * y * y - p.x).hypot(y - p.y);
            best = best.min(d);
        }
    }
    best
}

/// Euclidean distance from `p` to the closed branch `C2 ∪ {0}`.
pub fn distance_to_c2(p: &StatePoint) -> f64 {
    distance_to_c1(&p.neg())
}

/// Real roots of `y³ + P·y + Q = 0`, each polished by Newton steps.
fn depressed_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = if disc >= 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    };
    for y in roots.iter_mut() {
        for _ in 0..3 {
            let g = *y * *y * *y + p * *y + q;
            let dg = 3.0 * *y * *y + p;
            if dg.abs() < 1e-300 {
                break;
            }
            *y -= g / dg;
        }
    }
    roots
}
