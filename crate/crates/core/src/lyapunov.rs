//! Quasi-Lyapunov certificate for the Fuller field.
//!
//! For `a < 0` the zero set of
//!
//! ```text
//! f(x, y, a) = y + 4x/a − (2a/(a²+16))·(x − 4y/a)² + a(a²+16)/8
//! ```
//!
//! is a parabola through `A = (−a²/4, a)` on `C2` and `B = (a²/4, −a)` on
//! the mirror image of `C1`. Every point left of the curve lies on exactly one
//! such parabola, and `φ(x, y)` is its parameter. The certificate is
//! `w̄ = −36·φ` on the left side and its central mirror image on the right.
//! Along the feedback field it grows at unit rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{curve_side, side_of, ExtendedPoint, GeometryError, Side, StatePoint};
pub use crate::report::{Bound, Check};

pub const DEFAULT_A_BAR: f64 = 0.1;

/// Largest halving candidate from 0.5 that passes calibration at `ā = 0.1`.
pub const DEFAULT_R: f64 = 0.00390625;

/// Certified lower bound on the growth rate of `ψ` along the field.
pub const RATE: f64 = 1.0 / 36.0;

/// Scale factor turning `w` into a certificate with unit growth rate.
pub const SCALE: f64 = 36.0;

/// Below this norm `φ` is returned as zero.
pub const NEAR_ORIGIN: f64 = 1e-10;

/// Bracket width at which bisection hands over to Newton polishing.
pub const BISECTION_WIDTH: f64 = 1e-14;

pub const MAX_NEWTON_STEPS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlfError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("calibration invalid: {0}")]
    CalibrationInvalid(String),
    #[error("calibration failed: check `{check}` does not pass for any candidate radius")]
    CalibrationFailure { check: String, report: Box<QlfReport> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QlfParams {
    pub a_bar: f64,
    pub r: f64,
    pub rate: f64,
}

impl Default for QlfParams {
    fn default() -> Self {
        QlfParams { a_bar: DEFAULT_A_BAR, r: DEFAULT_R, rate: RATE }
    }
}

impl QlfParams {
    pub fn new(a_bar: f64, r: f64) -> Result<Self, QlfError> {
        if !(a_bar > 0.0 && a_bar.is_finite() && r > 0.0 && r.is_finite()) {
            return Err(QlfError::Domain(format!("need a_bar > 0 and r > 0, got {a_bar}, {r}")));
        }
        Ok(QlfParams { a_bar, r, rate: RATE })
    }

    pub fn contains(&self, p: &StatePoint) -> bool {
        p.norm() < self.r
    }
}

fn require_negative(a: f64) -> Result<(), QlfError> {
    if a < 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(QlfError::Domain(format!("parabola parameter must be negative, got {a}")))
    }
}

pub fn f(x: f64, y: f64, a: f64) -> Result<f64, QlfError> {
    require_negative(a)?;
    Ok(f_unchecked(x, y, a))
}

#[inline]
fn f_unchecked(x: f64, y: f64, a: f64) -> f64 {
    let k = a * a + 16.0;
    let x1 = x - 4.0 * y / a;
    y + 4.0 * x / a - (2.0 * a / k) * x1 * x1 + a * k / 8.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FPartials {
    pub fx: f64,
    pub fy: f64,
    pub fa: f64,
}

pub fn f_partials(x: f64, y: f64, a: f64) -> Result<FPartials, QlfError> {
    require_negative(a)?;
    Ok(partials_unchecked(x, y, a))
}

#[inline]
fn partials_unchecked(x: f64, y: f64, a: f64) -> FPartials {
    let k = a * a + 16.0;
    let fx = (16.0 * y - 4.0 * a * x) / k + 4.0 / a;
    let fy = 16.0 * x / k - 64.0 * y / (a * k) + 1.0;
    let fa = -32.0 * (2.0 * x * x + a * x * y - 2.0 * y * y) / (k * k)
        + (2.0 * y * y - 4.0 * x) / (a * a)
        + 2.0 * (x * x - y * y) / k
        + 3.0 * a * a / 8.0
        + 2.0;
    FPartials { fx, fy, fa }
}

/// The level parabola `f(·, ·, a) = 0` in its own coordinates
/// `x₁ = x − 4y/a`, `x₂ = y + 4x/a`, where it reads `x₂ = −p·x₁² + q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolaGeometry {
    pub a: f64,
    pub p: f64,
}

impl ParabolaGeometry {
    pub fn new(a: f64) -> Result<Self, QlfError> {
        require_negative(a)?;
        Ok(ParabolaGeometry { a, p: -2.0 * a / (a * a + 16.0) })
    }

    fn k(&self) -> f64 {
        self.a * self.a + 16.0
    }

    /// Vertex ordinate `q = −a(a²+16)/8` in transformed coordinates.
    pub fn q(&self) -> f64 {
        -self.a * self.k() / 8.0
    }

    pub fn endpoint_a(&self) -> StatePoint {
        StatePoint::new(-0.25 * self.a * self.a, self.a)
    }

    pub fn endpoint_b(&self) -> StatePoint {
        StatePoint::new(0.25 * self.a * self.a, -self.a)
    }

    pub fn interval(&self) -> (f64, f64) {
        let half = 0.25 * self.a * self.a + 4.0;
        (-half, half)
    }

    pub fn vertex_distance(&self) -> f64 {
        self.a * self.a * self.k().sqrt() / 8.0
    }

    pub fn to_transformed(&self, s: &StatePoint) -> (f64, f64) {
        (s.x - 4.0 * s.y / self.a, s.y + 4.0 * s.x / self.a)
    }

    pub fn from_transformed(&self, x1: f64, x2: f64) -> StatePoint {
        let a = self.a;
        let k = self.k();
        StatePoint::new((a * a * x1 + 4.0 * a * x2) / k, (-4.0 * a * x1 + a * a * x2) / k)
    }

    /// Point of the parabola with transformed abscissa `tau`.
    pub fn point_at(&self, tau: f64) -> StatePoint {
        self.from_transformed(tau, -self.p * tau * tau + self.q())
    }

    /// Largest `y² − 2x` over the band `|x₁| ≤ a²/4 + 4`, `0 ≤ x₂ ≤ q`, which
    /// contains the part of the parabola left of the switching curve. The
    /// objective is convex, so the maximum sits at a vertex of the band.
    pub fn band_q_max(&self) -> f64 {
        let (lo, hi) = self.interval();
        let mut best = f64::NEG_INFINITY;
        for x1 in [lo, hi] {
            for x2 in [0.0, self.q()] {
                let s = self.from_transformed(x1, x2);
                best = best.max(s.y * s.y - 2.0 * s.x);
            }
        }
        best
    }
}

/// Closed-form value of [`ParabolaGeometry::band_q_max`].
pub fn band_q_bound(a: f64) -> f64 {
    let a2 = a * a;
    a2 * (a2 * a2 - 16.0 * a2 + 160.0) / 64.0
}

/// `h(τ) = ⟨g(τ), v⟩`: the parabola normal `g = (2pτ, 1)` against the field
/// `(y, 1)` written in transformed coordinates.
pub fn h_inner(a: f64, tau: f64) -> Result<f64, QlfError> {
    let geo = ParabolaGeometry::new(a)?;
    let (lo, hi) = geo.interval();
    if !(tau >= lo && tau <= hi) {
        return Err(QlfError::Domain(format!("tau {tau} outside [{lo}, {hi}]")));
    }
    let k = geo.k();
    let x1 = tau;
    let x2 = -geo.p * tau * tau + geo.q();
    let s = x2 - 4.0 * x1 / a;
    let v1 = a * a / k * s - 4.0 / a;
    let v2 = 1.0 + 4.0 * a / k * s;
    Ok(2.0 * geo.p * tau * v1 + v2)
}

fn h_coefficients(a: f64) -> [f64; 4] {
    let a2 = a * a;
    let k = 16.0 + a2;
    [
        1.0 - a2 / 2.0,
        a2 * a2 / (32.0 + 2.0 * a2),
        24.0 * a2 / (k * k),
        -8.0 * a2 * a2 / (k * k * k),
    ]
}

pub fn h_closed(a: f64, tau: f64) -> Result<f64, QlfError> {
    require_negative(a)?;
    let c = h_coefficients(a);
    Ok(c[0] + tau * (c[1] + tau * (c[2] + tau * c[3])))
}

/// Minimum of the cubic `h` over the parameter interval, from its endpoints
/// and interior critical points.
pub fn h_min(a: f64) -> Result<f64, QlfError> {
    let geo = ParabolaGeometry::new(a)?;
    let (lo, hi) = geo.interval();
    let c = h_coefficients(a);
    let mut candidates = vec![lo, hi];
    // h'(τ) = c1 + 2·c2·τ + 3·c3·τ²
    let (qa, qb, qc) = (3.0 * c[3], 2.0 * c[2], c[1]);
    if qa == 0.0 {
        if qb != 0.0 {
            candidates.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let q = -0.5 * (qb + qb.signum() * disc.sqrt());
            if q != 0.0 {
                candidates.push(q / qa);
                candidates.push(qc / q);
            }
        }
    }
    Ok(candidates
        .into_iter()
        .filter(|t| *t >= lo && *t <= hi)
        .map(|t| c[0] + t * (c[1] + t * (c[2] + t * c[3])))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitSolveResult {
    pub a: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// The parameter of the level parabola through `(x, y)`.
///
/// Defined on `N ∪ {0}` where `N` is the part of the open ball with
/// `x < ½y²`. The root is bracketed in `[−ā, b)` with `b` halved toward zero
/// until `f > 0`, bisected to [`BISECTION_WIDTH`] and polished by Newton steps
/// that stay inside the bracket.
pub fn phi(x: f64, y: f64, params: &QlfParams) -> Result<ImplicitSolveResult, QlfError> {
    if !(x.is_finite() && y.is_finite()) {
        return Err(QlfError::Domain(format!("non-finite point ({x}, {y})")));
    }
    let norm = x.hypot(y);
    if norm < NEAR_ORIGIN {
        return Ok(ImplicitSolveResult { a: 0.0, residual: 0.0, iterations: 0 });
    }
    if norm >= params.r {
        return Err(QlfError::Domain(format!("({x}, {y}) lies outside the ball of radius {}", params.r)));
    }
    if !(x < 0.5 * y * y) {
        return Err(QlfError::Domain(format!("({x}, {y}) violates x < y²/2")));
    }
    let mut lo = -params.a_bar;
    if !(f_unchecked(x, y, lo) < 0.0) {
        return Err(QlfError::CalibrationInvalid(format!(
            "f({x}, {y}, −ā) = {} is not negative",
            f_unchecked(x, y, lo)
        )));
    }
    let mut hi = 0.5 * lo;
    let mut iterations = 0;
    loop {
        let v = f_unchecked(x, y, hi);
        iterations += 1;
        if v > 0.0 {
            break;
        }
        if v == 0.0 {
            return Ok(ImplicitSolveResult { a: hi, residual: 0.0, iterations });
        }
        lo = hi;
        hi *= 0.5;
        if hi > -1e-300 {
            return Err(QlfError::CalibrationInvalid(format!("no sign change for ({x}, {y})")));
        }
    }
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        if f_unchecked(x, y, mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut a = 0.5 * (lo + hi);
    let mut res = f_unchecked(x, y, a);
    for _ in 0..MAX_NEWTON_STEPS {
        if res == 0.0 {
            break;
        }
        let fa = partials_unchecked(x, y, a).fa;
        if !(fa > 0.0) {
            break;
        }
        let next = a - res / fa;
        if !(next >= lo && next <= hi) {
            break;
        }
        let next_res = f_unchecked(x, y, next);
        iterations += 1;
        if next_res.abs() >= res.abs() {
            break;
        }
        a = next;
        res = next_res;
    }
    Ok(ImplicitSolveResult { a, residual: res.abs(), iterations })
}

/// Gradient of `ψ = −φ` by the implicit function theorem.
pub fn grad_psi(x: f64, y: f64, params: &QlfParams) -> Result<(f64, f64), QlfError> {
    let sol = phi(x, y, params)?;
    if sol.a == 0.0 {
        return Err(QlfError::Domain("ψ is not differentiable at the origin".into()));
    }
    let d = partials_unchecked(x, y, sol.a);
    if !(d.fa > 0.0) {
        return Err(QlfError::CalibrationInvalid(format!("f_a = {} is not positive at ({x}, {y})", d.fa)));
    }
    Ok((d.fx / d.fa, d.fy / d.fa))
}

/// Unscaled certificate `w`.
pub fn w(p: &StatePoint, params: &QlfParams) -> Result<f64, QlfError> {
    if !params.contains(p) {
        return Err(QlfError::Domain(format!("{p:?} lies outside the ball of radius {}", params.r)));
    }
    Ok(match curve_side(p)? {
        None => 0.0,
        Some(Side::D1) => -phi(p.x, p.y, params)?.a,
        Some(Side::D2) => -phi(-p.x, -p.y, params)?.a,
    })
}

pub fn wbar(z: &ExtendedPoint, params: &QlfParams) -> Result<f64, QlfError> {
    Ok(SCALE * w(&z.state(), params)?)
}

/// Gradient of `w̄` in `(x, y, t)`; the time component is zero.
pub fn grad_wbar(z: &ExtendedPoint, params: &QlfParams) -> Result<[f64; 3], QlfError> {
    let p = z.state();
    if !params.contains(&p) {
        return Err(QlfError::Domain(format!("{p:?} lies outside the ball of radius {}", params.r)));
    }
    match curve_side(&p)? {
        None => Err(QlfError::Domain("w̄ is not differentiable at the origin".into())),
        Some(Side::D1) => {
            let (gx, gy) = grad_psi(p.x, p.y, params)?;
            Ok([SCALE * gx, SCALE * gy, 0.0])
        }
        Some(Side::D2) => {
            let (gx, gy) = grad_psi(-p.x, -p.y, params)?;
            Ok([-SCALE * gx, -SCALE * gy, 0.0])
        }
    }
}

/// Growth rate `⟨grad w̄, (y, u, 1)⟩` of the certificate along the feedback field.
pub fn feedback_rate(p: &StatePoint, params: &QlfParams) -> Result<f64, QlfError> {
    let side = curve_side(p)?.ok_or_else(|| QlfError::Domain("no feedback rate at the origin".into()))?;
    let g = grad_wbar(&p.at(0.0), params)?;
    Ok(g[0] * p.y + g[1] * side.control())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QlfReport {
    pub params: QlfParams,
    pub checks: Vec<Check>,
}

impl QlfReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Cell-centred `n × n` grid over the square of half-width `r`, restricted
/// to the open ball.
pub fn disk_grid(r: f64, n: usize) -> Vec<StatePoint> {
    let h = 2.0 * r / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let p = StatePoint::new(-r + (i as f64 + 0.5) * h, -r + (j as f64 + 0.5) * h);
            if p.norm() < r {
                out.push(p);
            }
        }
    }
    out
}

/// `n` values from `−ā` toward zero: `−ā·(1 − j/n)`.
pub fn a_grid(a_bar: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| -a_bar * (1.0 - j as f64 / n as f64)).collect()
}

/// Points in the left side set on a polar grid with geometrically spaced
/// radii in `[1e−4·r, 0.999·r]`. Right-side samples are their mirror images.
pub fn side_samples(r: f64, n: usize) -> Vec<StatePoint> {
    let (rho_lo, rho_hi) = (1e-4 * r, 0.999 * r);
    let ratio = if n > 1 { (rho_hi / rho_lo).powf(1.0 / (n - 1) as f64) } else { 1.0 };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let rho = rho_lo * ratio.powi(i as i32);
        for m in 0..n {
            let theta = 2.0 * std::f64::consts::PI * (m as f64 + 0.37) / n as f64;
            let p = StatePoint::new(rho * theta.cos(), rho * theta.sin());
            match side_of(&p, 0.0) {
                Ok(Some(Side::D1)) => out.push(p),
                Ok(Some(Side::D2)) => out.push(p.neg()),
                _ => {}
            }
        }
    }
    out
}

/// Halving schedule `start, start/2, …` of `count` candidate radii.
pub fn halving_candidates(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * 0.5f64.powi(k as i32)).collect()
}

fn max_of(values: impl ParallelIterator<Item = f64>) -> f64 {
    values.reduce(|| f64::NEG_INFINITY, f64::max)
}

fn min_of(values: impl ParallelIterator<Item = f64>) -> f64 {
    values.reduce(|| f64::INFINITY, f64::min)
}

/// Evaluates every calibration check for one `(ā, r)` pair.
pub fn calibration_checks(params: &QlfParams, grid_n: usize) -> QlfReport {
    let a_bar = params.a_bar;
    let r = params.r;
    let grid = disk_grid(r, grid_n);
    let a_vals = a_grid(a_bar, grid_n);
    let mut checks = Vec::new();

    let h = min_of(a_vals.par_iter().map(|&a| h_min(a).unwrap_or(f64::NEG_INFINITY)));
    checks.push(Check::new("h_min", grid_n, h, 0.5, Bound::Above, a_vals.len()));

    let m_pts: Vec<StatePoint> = grid.iter().copied().filter(|p| p.x <= 0.5 * p.y * p.y).collect();
    let bracket = max_of(m_pts.par_iter().map(|p| f_unchecked(p.x, p.y, -a_bar)));
    let bracket_check = Check::new("bracket", grid_n, bracket, 0.0, Bound::Below, m_pts.len());
    let bracket_ok = bracket_check.pass;
    checks.push(bracket_check);

    let n_pts: Vec<StatePoint> = grid.iter().copied().filter(|p| p.x < 0.5 * p.y * p.y).collect();
    let pairs = n_pts.len() * a_vals.len();
    let (fx_dev, fy_margin, fa_margin) = n_pts
        .par_iter()
        .map(|p| {
            let mut fx_dev: f64 = 0.0;
            let mut fy_margin = f64::INFINITY;
            let mut fa_margin = f64::INFINITY;
            for &a in &a_vals {
                let d = partials_unchecked(p.x, p.y, a);
                fx_dev = fx_dev.max((d.fx - 4.0 / a).abs());
                let fy = d.fy + 64.0 * p.y / (a * (a * a + 16.0));
                fy_margin = fy_margin.min((fy - 0.5).min(2.0 - fy));
                let fa = d.fa - (2.0 * p.y * p.y - 4.0 * p.x) / (a * a);
                fa_margin = fa_margin.min((fa - 1.0).min(3.0 - fa));
            }
            (fx_dev, fy_margin, fa_margin)
        })
        .reduce(
            || (0.0, f64::INFINITY, f64::INFINITY),
            |l, r| (l.0.max(r.0), l.1.min(r.1), l.2.min(r.2)),
        );
    checks.push(Check::new("estimate_fx", grid_n, fx_dev, 1.0, Bound::Below, pairs));
    checks.push(Check::new("estimate_fy", grid_n, fy_margin, 0.0, Bound::Above, pairs));
    checks.push(Check::new("estimate_fa", grid_n, fa_margin, 0.0, Bound::Above, pairs));

    let q_ratio = max_of(a_vals.par_iter().map(|&a| {
        ParabolaGeometry::new(a).map(|g| g.band_q_max() / (a * a)).unwrap_or(f64::INFINITY)
    }));
    checks.push(Check::new("q_band", grid_n, q_ratio, 3.0, Bound::AtMost, a_vals.len()));

    let d1: Vec<StatePoint> = grid
        .iter()
        .copied()
        .filter(|p| matches!(side_of(p, 0.0), Ok(Some(Side::D1))))
        .collect();
    let d2: Vec<StatePoint> = grid
        .iter()
        .copied()
        .filter(|p| matches!(side_of(p, 0.0), Ok(Some(Side::D2))))
        .collect();
    if bracket_ok {
        let fa_phi = max_of(d1.par_iter().map(|p| match phi(p.x, p.y, params) {
            Ok(s) if s.a < 0.0 => partials_unchecked(p.x, p.y, s.a).fa,
            _ => f64::INFINITY,
        }));
        checks.push(Check::new("fa_phi_bound", grid_n, fa_phi, 9.0, Bound::AtMost, d1.len()));

        let rate_d1 = |upper: bool| {
            let pts: Vec<&StatePoint> = d1.iter().filter(|p| (p.y >= 0.0) == upper).collect();
            let worst = min_of(pts.par_iter().map(|p| match grad_psi(p.x, p.y, params) {
                Ok((gx, gy)) => gx * p.y + gy,
                Err(_) => f64::NEG_INFINITY,
            }));
            (worst, pts.len())
        };
        let (up, n_up) = rate_d1(true);
        checks.push(Check::new("rate_d1_upper", grid_n, up, RATE, Bound::Above, n_up));
        let (low, n_low) = rate_d1(false);
        checks.push(Check::new("rate_d1_lower", grid_n, low, RATE, Bound::Above, n_low));
        let rate_d2 = min_of(d2.par_iter().map(|p| match grad_psi(-p.x, -p.y, params) {
            Ok((gx, gy)) => -gx * p.y + gy,
            Err(_) => f64::NEG_INFINITY,
        }));
        checks.push(Check::new("rate_d2", grid_n, rate_d2, RATE, Bound::Above, d2.len()));
    } else {
        checks.push(Check::skipped("fa_phi_bound", grid_n, 9.0, Bound::AtMost));
        for name in ["rate_d1_upper", "rate_d1_lower", "rate_d2"] {
            checks.push(Check::skipped(name, grid_n, RATE, Bound::Above));
        }
    }
    QlfReport { params: *params, checks }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: QlfParams,
    pub report: QlfReport,
}

/// Returns the first (largest) candidate radius on which every calibration
/// check passes.
pub fn calibrate(a_bar: f64, r_candidates: &[f64], grid_n: usize) -> Result<Calibration, QlfError> {
    if !(a_bar > 0.0 && a_bar.is_finite()) || grid_n == 0 {
        return Err(QlfError::Domain(format!("need a_bar > 0 and grid_n > 0, got {a_bar}, {grid_n}")));
    }
    if r_candidates.is_empty() || r_candidates.iter().any(|r| !(*r > 0.0)) {
        return Err(QlfError::Domain("candidate radii must be positive".into()));
    }
    if r_candidates.windows(2).any(|w| w[1] >= w[0]) {
        return Err(QlfError::Domain("candidate radii must be decreasing".into()));
    }
    let mut last = None;
    for &r in r_candidates {
        let params = QlfParams::new(a_bar, r)?;
        let report = calibration_checks(&params, grid_n);
        if report.pass() {
            return Ok(Calibration { params, report });
        }
        last = Some(report);
    }
    let report = last.expect("at least one candidate");
    let check = report.first_failure().map(|c| c.name.clone()).unwrap_or_default();
    Err(QlfError::CalibrationFailure { check, report: Box::new(report) })
}

/// Relative step of the finite-difference gradient check. Steps scale like
/// `a²` in `x` and `|a|` in `y`, matching the anisotropy of `φ`.
pub const FD_RELATIVE_STEP: f64 = 1e-4;

/// Relative error between `grad_psi` and central differences of `−φ`.
pub fn gradient_fd_error(p: &StatePoint, params: &QlfParams) -> Result<f64, QlfError> {
    let a = phi(p.x, p.y, params)?.a;
    let hx = FD_RELATIVE_STEP * a * a;
    let hy = FD_RELATIVE_STEP * a.abs();
    let psi = |x: f64, y: f64| phi(x, y, params).map(|s| -s.a);
    let dx = (psi(p.x + hx, p.y)? - psi(p.x - hx, p.y)?) / (2.0 * hx);
    let dy = (psi(p.x, p.y + hy)? - psi(p.x, p.y - hy)?) / (2.0 * hy);
    let (gx, gy) = grad_psi(p.x, p.y, params)?;
    Ok((dx - gx).hypot(dy - gy) / gx.hypot(gy))
}

/// Checks of the quasi-Lyapunov conditions on sampled grids: positivity off
/// the bad set, the Hölder modulus at the origin, gradient consistency and
/// unit growth along the feedback field on both sides.
pub fn verify_qlf(params: &QlfParams, grid_n: usize) -> QlfReport {
    verify_qlf_with(params, grid_n, feedback_rate)
}

/// As [`verify_qlf`], with a caller-supplied growth-rate evaluator.
pub fn verify_qlf_with<R>(params: &QlfParams, grid_n: usize, rate: R) -> QlfReport
where
    R: Fn(&StatePoint, &QlfParams) -> Result<f64, QlfError> + Sync,
{
    let r = params.r;
    let grid = disk_grid(r, grid_n);
    let mut checks = Vec::new();

    let at_origin = w(&StatePoint::ORIGIN, params).map(f64::abs).unwrap_or(f64::INFINITY);
    checks.push(Check::new("zero_at_origin", grid_n, at_origin, 0.0, Bound::AtMost, 1));
    let off_origin: Vec<&StatePoint> = grid.iter().filter(|p| p.norm() >= NEAR_ORIGIN).collect();
    let positive = min_of(off_origin.par_iter().map(|p| w(p, params).unwrap_or(f64::NEG_INFINITY) * SCALE));
    checks.push(Check::new("nonnegativity", grid_n, positive, 0.0, Bound::Above, off_origin.len()));

    let modulus = (params.a_bar * params.a_bar + 16.0).powf(0.25) / 2f64.sqrt();
    let near: Vec<&StatePoint> = grid.iter().filter(|p| p.norm() <= 0.5 * r).collect();
    let ratio = max_of(near.par_iter().map(|p| match w(p, params) {
        Ok(v) => v / (modulus * p.norm().sqrt()),
        Err(_) => f64::INFINITY,
    }));
    checks.push(Check::new("continuity_modulus", grid_n, ratio, 1.0, Bound::AtMost, near.len()));

    let fd_pts: Vec<&StatePoint> = grid
        .iter()
        .filter(|p| p.norm() >= 0.25 * r && p.norm() <= 0.9 * r)
        .filter(|p| matches!(side_of(p, 0.0), Ok(Some(Side::D1))))
        .collect();
    let fd = max_of(fd_pts.par_iter().map(|p| gradient_fd_error(p, params).unwrap_or(f64::INFINITY)));
    checks.push(Check::new("gradient_consistency", grid_n, fd, 1e-4, Bound::AtMost, fd_pts.len()));

    let left = side_samples(r, grid_n);
    let d1 = min_of(left.par_iter().map(|p| rate(p, params).unwrap_or(f64::NEG_INFINITY)));
    checks.push(Check::new("lyapunov_rate_d1", grid_n, d1, 1.0, Bound::AtLeast, left.len()));
    let d2 = min_of(left.par_iter().map(|p| rate(&p.neg(), params).unwrap_or(f64::NEG_INFINITY)));
    checks.push(Check::new("lyapunov_rate_d2", grid_n, d2, 1.0, Bound::AtLeast, left.len()));

    QlfReport { params: *params, checks }
}
