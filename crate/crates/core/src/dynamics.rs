//! Exact event-driven integration of the Fuller feedback field.
//!
//! Between switches the double integrator `ẋ = y, ẏ = u` is solved in closed
//! form, and switching times come from the quadratic hitting-time formulas.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    classify, fuller_field, ExtendedPoint, GeometryError, RegionLabel, StatePoint, DEFAULT_TOL,
};

/// Largest number of arcs a single simulation may emit.
pub const MAX_ARCS: usize = 1_000_000;

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("the origin is handled by the chattering construction")]
    OriginStart,
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlSign {
    Minus,
    Plus,
}

impl ControlSign {
    pub fn value(self) -> f64 {
        match self {
            ControlSign::Minus => -1.0,
            ControlSign::Plus => 1.0,
        }
    }

    pub fn flipped(self) -> ControlSign {
        match self {
            ControlSign::Minus => ControlSign::Plus,
            ControlSign::Plus => ControlSign::Minus,
        }
    }

    pub fn from_value(u: f64) -> Option<ControlSign> {
        if u == 1.0 {
            Some(ControlSign::Plus)
        } else if u == -1.0 {
            Some(ControlSign::Minus)
        } else {
            None
        }
    }
}

pub fn flow(s: &StatePoint, u: ControlSign, dt: f64) -> StatePoint {
    flow_with_control(s, u.value(), dt)
}

pub fn flow_with_control(s: &StatePoint, u: f64, dt: f64) -> StatePoint {
    StatePoint::new(s.x + s.y * dt + 0.5 * u * dt * dt, s.y + u * dt)
}

/// Time until the arc from `s` under `u` reaches the switching curve.
///
/// `u = −1` runs from the right region to `C2`, `u = +1` from the left
/// region to `C1`. Returns `None` when no strictly positive crossing exists.
pub fn hitting_time(s: &StatePoint, u: ControlSign) -> Result<Option<f64>, DynamicsError> {
    let label = classify(s, DEFAULT_TOL)?;
    let admissible = match u {
        ControlSign::Plus => matches!(label, RegionLabel::LeftOpen | RegionLabel::OnC2),
        ControlSign::Minus => matches!(label, RegionLabel::RightOpen | RegionLabel::OnC1),
    };
    if label == RegionLabel::Origin {
        return Ok(None);
    }
    if !admissible {
        return Err(DynamicsError::Contract(format!(
            "control {u:?} is not the feedback control at {s:?} ({label:?})"
        )));
    }
    let (disc, t) = match u {
        ControlSign::Minus => {
            let disc = 2.0 * s.y * s.y + 4.0 * s.x;
            (disc, s.y + disc.max(0.0).sqrt())
        }
        ControlSign::Plus => {
            let disc = 2.0 * s.y * s.y - 4.0 * s.x;
            (disc, -s.y + disc.max(0.0).sqrt())
        }
    };
    if disc < 0.0 || !(t > 0.0) {
        return Ok(None);
    }
    Ok(Some(t))
}

/// Point reached after `t` along `u`, snapped onto the curve branch it lands on.
pub fn landing_point(s: &StatePoint, u: ControlSign, t: f64) -> StatePoint {
    let y = s.y + u.value() * t;
    let x = match u {
        ControlSign::Plus => 0.25 * y * y,
        ControlSign::Minus => -0.25 * y * y,
    };
    StatePoint::new(x, y)
}

/// First time in `(0, horizon]` at which the arc reaches `‖p‖ ≥ r`.
pub fn ball_exit_time(s: &StatePoint, u: f64, r: f64, horizon: f64) -> Option<f64> {
    if s.norm() >= r {
        return Some(0.0);
    }
    // |y(t)| ≥ r once t ≥ r + |y|, so the exit happens before that.
    let window = horizon.min(r + s.y.abs() + 1.0);
    let outside = |t: f64| flow_with_control(s, u, t).norm() >= r;
    let n = 256;
    let mut lo = 0.0;
    for k in 1..=n {
        let hi = window * k as f64 / n as f64;
        if outside(hi) {
            let mut a = lo;
            let mut b = hi;
            while b - a > 1e-12 {
                let m = 0.5 * (a + b);
                if outside(m) {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Some(b);
        }
        lo = hi;
    }
    None
}

/// A closed-form arc of the double integrator under a constant control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub start: ExtendedPoint,
    pub control: f64,
    pub duration: f64,
}

impl Arc {
    pub fn new(start: ExtendedPoint, u: ControlSign, duration: f64) -> Self {
        Arc { start, control: u.value(), duration }
    }

    /// Arc under an arbitrary constant control, used for perturbed and
    /// relaxed trajectories.
    pub fn with_control(start: ExtendedPoint, control: f64, duration: f64) -> Self {
        Arc { start, control, duration }
    }

    pub fn sign(&self) -> Option<ControlSign> {
        ControlSign::from_value(self.control)
    }

    pub fn t_start(&self) -> f64 {
        self.start.t
    }

    pub fn t_end(&self) -> f64 {
        self.start.t + self.duration
    }

    /// State `dt` after the arc start.
    pub fn state_after(&self, dt: f64) -> ExtendedPoint {
        let p = flow_with_control(&self.start.state(), self.control, dt);
        ExtendedPoint::new(p.x, p.y, self.start.t + dt)
    }

    pub fn end(&self) -> ExtendedPoint {
        self.state_after(self.duration)
    }

    /// Derivative `(ẋ, ẏ)` at `dt` after the arc start.
    pub fn velocity_after(&self, dt: f64) -> [f64; 2] {
        [self.start.y + self.control * dt, self.control]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Horizon,
    BallExit,
    Truncated,
    Reversed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub eps: f64,
    pub truncation_radius: Option<f64>,
    /// Time between the true origin departure and the first arc start.
    pub time_offset: Option<f64>,
    pub stop: StopReason,
}

impl Default for TrajectoryMeta {
    fn default() -> Self {
        TrajectoryMeta { eps: 0.0, truncation_radius: None, time_offset: None, stop: StopReason::Horizon }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: ExtendedPoint,
    pub arcs: Vec<Arc>,
    pub switch_points: Vec<ExtendedPoint>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn at_rest(start: ExtendedPoint) -> Self {
        Trajectory { start, arcs: Vec::new(), switch_points: Vec::new(), meta: TrajectoryMeta::default() }
    }

    pub fn t_start(&self) -> f64 {
        self.start.t
    }

    pub fn t_end(&self) -> f64 {
        self.arcs.last().map_or(self.start.t, Arc::t_end)
    }

    pub fn duration(&self) -> f64 {
        self.t_end() - self.t_start()
    }

    pub fn end(&self) -> ExtendedPoint {
        self.arcs.last().map_or(self.start, Arc::end)
    }

    /// Index of the arc active at time `t` (the later arc at a shared endpoint).
    pub fn arc_index_at(&self, t: f64) -> Option<usize> {
        if self.arcs.is_empty() || t < self.t_start() || t > self.t_end() {
            return None;
        }
        let k = self.arcs.partition_point(|a| a.t_start() <= t);
        Some(k.saturating_sub(1))
    }

    pub fn state_at(&self, t: f64) -> Option<ExtendedPoint> {
        if self.arcs.is_empty() {
            return (t == self.start.t).then_some(self.start);
        }
        let k = self.arc_index_at(t)?;
        let arc = &self.arcs[k];
        Some(arc.state_after(t - arc.t_start()))
    }

    /// Arc-start rows plus intermediate samples every `step` and the end point.
    pub fn samples(&self, step: Option<f64>) -> Vec<(ExtendedPoint, Option<usize>)> {
        let mut out = Vec::new();
        for (k, arc) in self.arcs.iter().enumerate() {
            out.push((arc.start, Some(k)));
            if let Some(h) = step.filter(|h| *h > 0.0) {
                let n = (arc.duration / h).ceil() as usize;
                for j in 1..n {
                    out.push((arc.state_after(j as f64 * h), Some(k)));
                }
            }
        }
        if self.arcs.is_empty() {
            out.push((self.start, None));
        } else {
            out.push((self.end(), Some(self.arcs.len() - 1)));
        }
        out
    }

    /// Checks contiguity, monotone time and switch-point placement.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut cursor = self.start;
        for (k, arc) in self.arcs.iter().enumerate() {
            if !(arc.duration > 0.0) || !arc.duration.is_finite() {
                return Err(format!("arc {k} has duration {}", arc.duration));
            }
            if arc.start.dist(&cursor) > 1e-10 {
                return Err(format!("arc {k} starts {:e} away from its predecessor", arc.start.dist(&cursor)));
            }
            cursor = arc.end();
        }
        for (k, p) in self.switch_points.iter().enumerate() {
            let gap = crate::geometry::curve_gap(&p.state()).abs();
            if gap > 1e-9 || p.y == 0.0 {
                return Err(format!("switch point {k} is {gap:e} off the switching curve"));
            }
        }
        Ok(())
    }

    /// Image under `(x, y, t) ↦ (λ²x, λy, λt)`, which maps feedback
    /// trajectories to feedback trajectories.
    pub fn scaled(&self, lambda: f64) -> Trajectory {
        let sc = |z: &ExtendedPoint| ExtendedPoint::new(lambda * lambda * z.x, lambda * z.y, lambda * z.t);
        Trajectory {
            start: sc(&self.start),
            arcs: self
                .arcs
                .iter()
                .map(|a| Arc::with_control(sc(&a.start), a.control, lambda * a.duration))
                .collect(),
            switch_points: self.switch_points.iter().map(sc).collect(),
            meta: TrajectoryMeta {
                truncation_radius: None,
                time_offset: self.meta.time_offset.map(|t| lambda * t),
                ..self.meta.clone()
            },
        }
    }

    /// The reversed motion `s ↦ (x(T−s), −y(T−s))`, re-timed to start at the
    /// original start time. It solves the double integrator with the same controls.
    pub fn time_reversed(&self) -> Trajectory {
        let t0 = self.t_start();
        let t1 = self.t_end();
        let flip = |z: &ExtendedPoint| ExtendedPoint::new(z.x, -z.y, t0 + t1 - z.t);
        let arcs: Vec<Arc> = self
            .arcs
            .iter()
            .rev()
            .map(|a| Arc::with_control(flip(&a.end()), a.control, a.duration))
            .collect();
        let mut switch_points: Vec<ExtendedPoint> = self.switch_points.iter().rev().map(flip).collect();
        switch_points.retain(|p| crate::geometry::curve_gap(&p.state()).abs() <= 1e-9);
        Trajectory {
            start: flip(&self.end()),
            arcs,
            switch_points,
            meta: TrajectoryMeta { stop: StopReason::Reversed, ..self.meta.clone() },
        }
    }

    /// Largest distance between the two paths at shared sample times on the
    /// common interval, or `None` when the intervals do not overlap.
    pub fn sup_gap(&self, other: &Trajectory, step: f64) -> Option<f64> {
        let t0 = self.t_start().max(other.t_start());
        let t1 = self.t_end().min(other.t_end());
        if !(t1 >= t0) || step <= 0.0 {
            return None;
        }
        let n = ((t1 - t0) / step).ceil().max(1.0) as usize;
        let mut gap: f64 = 0.0;
        for j in 0..=n {
            let t = (t0 + j as f64 * step).min(t1);
            let a = self.state_at(t)?;
            let b = other.state_at(t)?;
            gap = gap.max(a.state().dist(&b.state()));
        }
        Some(gap)
    }
}

/// Event-driven simulation of the feedback field from a non-origin start.
pub fn simulate_feedback(s0: &StatePoint, t_max: f64, r: f64) -> Result<Trajectory, DynamicsError> {
    simulate_feedback_from(&s0.at(0.0), t_max, r)
}

/// As [`simulate_feedback`], starting at the time stamp of `z0`.
pub fn simulate_feedback_from(z0: &ExtendedPoint, t_max: f64, r: f64) -> Result<Trajectory, DynamicsError> {
    if !z0.is_finite() || !t_max.is_finite() || !r.is_finite() {
        return Err(DynamicsError::InvalidInput("non-finite simulation input".into()));
    }
    if t_max < 0.0 || r <= 0.0 {
        return Err(DynamicsError::InvalidInput(format!("need t_max >= 0 and r > 0, got {t_max}, {r}")));
    }
    let s0 = z0.state();
    let label = classify(&s0, DEFAULT_TOL)?;
    if label == RegionLabel::Origin {
        return Err(DynamicsError::OriginStart);
    }
    if s0.norm() >= r {
        return Err(DynamicsError::Domain(format!("start {s0:?} is outside the ball of radius {r}")));
    }
    let mut u = feedback_control(label);
    let mut traj = Trajectory::at_rest(*z0);
    let t_stop = z0.t + t_max;
    let mut z = *z0;
    while z.t < t_stop {
        if traj.arcs.len() >= MAX_ARCS {
            return Err(DynamicsError::Domain(format!("more than {MAX_ARCS} arcs")));
        }
        let p = z.state();
        let hit = hitting_time(&p, u)?.unwrap_or(f64::INFINITY);
        let remaining = t_stop - z.t;
        let limit = hit.min(remaining);
        let exit = ball_exit_time(&p, u.value(), r, limit);
        let (dt, reason) = match exit {
            Some(te) if te < limit => (te, Some(StopReason::BallExit)),
            _ if remaining <= hit => (remaining, Some(StopReason::Horizon)),
            _ => (hit, None),
        };
        if dt <= 0.0 {
            traj.meta.stop = reason.unwrap_or(StopReason::Horizon);
            break;
        }
        let arc = Arc::new(z, u, dt);
        traj.arcs.push(arc);
        match reason {
            Some(stop) => {
                traj.meta.stop = stop;
                break;
            }
            None => {
                let q = landing_point(&p, u, dt);
                z = ExtendedPoint::new(q.x, q.y, z.t + dt);
                traj.switch_points.push(z);
                u = u.flipped();
            }
        }
    }
    Ok(traj)
}

fn feedback_control(label: RegionLabel) -> ControlSign {
    match label {
        RegionLabel::LeftOpen | RegionLabel::OnC2 | RegionLabel::Origin => ControlSign::Plus,
        RegionLabel::RightOpen | RegionLabel::OnC1 => ControlSign::Minus,
    }
}

/// Truncation of the self-similar solution leaving the origin.
///
/// Arc `i` (for `i = n_arcs … 1`) starts on the switching curve at ordinate
/// magnitude `m_exit·3^(−i/2)` and lasts `(1 + √3)` times that magnitude. Odd
/// arcs start on `C2`, even arcs on `C1`, so the last arc ends on `C1` at
/// ordinate `m_exit`. Times start at zero on the first arc; the true origin
/// departure lies `time_offset` earlier.
pub fn chattering_from_origin(m_exit: f64, n_arcs: usize, r: f64) -> Result<Trajectory, DynamicsError> {
    if !(m_exit > 0.0) || !m_exit.is_finite() || n_arcs == 0 {
        return Err(DynamicsError::InvalidInput(format!(
            "need m_exit > 0 and n_arcs >= 1, got {m_exit}, {n_arcs}"
        )));
    }
    if !(m_exit * SQRT3 < r) {
        return Err(DynamicsError::Domain(format!("scale {m_exit} does not fit the ball of radius {r}")));
    }
    let mut arcs = Vec::with_capacity(n_arcs);
    let mut t = 0.0;
    for i in (1..=n_arcs).rev() {
        let m = m_exit * 3f64.powf(-(i as f64) / 2.0);
        let (start, u) = if i % 2 == 1 {
            (StatePoint::new(-0.25 * m * m, -m), ControlSign::Plus)
        } else {
            (StatePoint::new(0.25 * m * m, m), ControlSign::Minus)
        };
        let duration = m * (1.0 + SQRT3);
        arcs.push(Arc::new(start.at(t), u, duration));
        t += duration;
    }
    let switch_points = arcs.iter().skip(1).map(|a| a.start).collect();
    let first = arcs[0].start;
    let m_n = first.y.abs();
    Ok(Trajectory {
        start: first,
        arcs,
        switch_points,
        meta: TrajectoryMeta {
            eps: 0.0,
            truncation_radius: Some(first.state().norm()),
            time_offset: Some(m_n * (2.0 + SQRT3)),
            stop: StopReason::Truncated,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub q: f64,
    pub quadrature_step: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { q: 2.0, quadrature_step: 1e-3 }
    }
}

/// Composite Simpson quadrature of `∫|x(t)|^q dt`, with every arc split at
/// the zeros of `x` so each panel has a smooth integrand.
pub fn cost(traj: &Trajectory, cp: &CostParams) -> Result<f64, DynamicsError> {
    if !(cp.q > 1.0) || !(cp.quadrature_step > 0.0) {
        return Err(DynamicsError::InvalidInput(format!("bad cost parameters {cp:?}")));
    }
    let mut total = 0.0;
    for arc in &traj.arcs {
        let mut cuts = vec![0.0];
        let (a, b, c) = (0.5 * arc.control, arc.start.y, arc.start.x);
        for root in quadratic_roots(a, b, c) {
            if root > 0.0 && root < arc.duration {
                cuts.push(root);
            }
        }
        cuts.push(arc.duration);
        cuts.sort_by(f64::total_cmp);
        let integrand = |s: f64| arc.state_after(s).x.abs().powf(cp.q);
        for w in cuts.windows(2) {
            total += simpson(&integrand, w[0], w[1], cp.quadrature_step);
        }
    }
    Ok(total)
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, step: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut n = ((b - a) / step).ceil() as usize;
    n = n.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

/// Largest distance from the path velocity to the Fuller field, over interior
/// sample times of every arc.
pub fn eps_residual(traj: &Trajectory, sample_step: f64) -> Result<f64, DynamicsError> {
    if !(sample_step > 0.0) {
        return Err(DynamicsError::InvalidInput(format!("sample_step {sample_step} must be positive")));
    }
    let mut worst: f64 = 0.0;
    for arc in &traj.arcs {
        let n = ((arc.duration / sample_step).floor() as usize).max(1);
        for j in 0..n {
            let dt = (j as f64 + 0.5) * arc.duration / n as f64;
            let z = arc.state_after(dt);
            let field = fuller_field(&z.state(), DEFAULT_TOL)?;
            worst = worst.max(field.distance_to(&arc.velocity_after(dt)));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> StatePoint {
        StatePoint::new(x, y)
    }

    /// Sign-change bisection on the curve equation, the oracle for hitting times.
    fn bisection_hit(s: &StatePoint, u: ControlSign) -> f64 {
        let g = |t: f64| {
            let p = flow(s, u, t);
            match u {
                ControlSign::Minus => p.x + 0.25 * p.y * p.y,
                ControlSign::Plus => p.x - 0.25 * p.y * p.y,
            }
        };
        let s0 = g(1e-9).signum();
        let mut t = 1e-6;
        while g(t).signum() == s0 {
            t += 1e-6;
        }
        let (mut a, mut b) = (t - 1e-6, t);
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if g(m).signum() == s0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn flow_examples() {
        assert_eq!(flow(&pt(0.0, 0.0), ControlSign::Plus, 1.0), pt(0.5, 1.0));
        assert_eq!(flow(&pt(0.3, -0.2), ControlSign::Minus, 0.0), pt(0.3, -0.2));
        let p = flow(&pt(0.25, 1.0), ControlSign::Minus, 2.0);
        assert!((p.x - 0.25).abs() < 1e-15 && (p.y + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hitting_time_examples_match_bisection() {
        let s = pt(0.25, 1.0);
        let t = hitting_time(&s, ControlSign::Minus).unwrap().unwrap();
        assert!((t - (1.0 + SQRT3)).abs() < 1e-12);
        assert!((t - bisection_hit(&s, ControlSign::Minus)).abs() < 1e-9);
        assert!((flow(&s, ControlSign::Minus, t).y + SQRT3).abs() < 1e-12);

        let s = pt(-0.0025, -0.1);
        let t = hitting_time(&s, ControlSign::Plus).unwrap().unwrap();
        assert!((t - (0.1 + 0.03f64.sqrt())).abs() < 1e-12);
        assert!((t - bisection_hit(&s, ControlSign::Plus)).abs() < 1e-9);
        assert!((flow(&s, ControlSign::Plus, t).y - 0.1 * SQRT3).abs() < 1e-12);

        assert_eq!(hitting_time(&pt(0.0, 0.0), ControlSign::Minus).unwrap(), None);
        assert!(matches!(hitting_time(&pt(-1.0, 0.0), ControlSign::Minus), Err(DynamicsError::Contract(_))));
    }

    #[test]
    fn chattering_ratio_and_exit_time_match_bisection() {
        let m = 0.1;
        let mut s = pt(-0.25 * m * m / 3.0, -m / SQRT3);
        let mut u = ControlSign::Plus;
        let mut elapsed = 0.0;
        for _ in 0..4 {
            let t = bisection_hit(&s, u);
            let next = flow(&s, u, t);
            assert!((next.y.abs() / s.y.abs() - SQRT3).abs() < 1e-8);
            elapsed += t;
            s = next;
            u = u.flipped();
        }
        let expected: f64 = (1..=4).map(|i| m * 3f64.powf(i as f64 / 2.0 - 0.5) * (1.0 + SQRT3) / SQRT3).sum();
        assert!((elapsed - expected).abs() < 1e-8);
    }

    #[test]
    fn feedback_from_c2_grows_by_sqrt3() {
        let traj = simulate_feedback(&pt(-0.0025, -0.1), 20.0, 100.0).unwrap();
        traj.check_invariants().unwrap();
        assert!(traj.switch_points.len() > 5);
        let mut expected = 0.1 * SQRT3;
        for p in &traj.switch_points {
            assert!((p.y.abs() - expected).abs() < 1e-9 * expected.max(1.0));
            expected *= SQRT3;
        }
    }

    #[test]
    fn feedback_first_arc_from_c1() {
        let traj = simulate_feedback(&pt(0.25, 1.0), 10.0, 100.0).unwrap();
        assert!((traj.arcs[0].duration - (1.0 + SQRT3)).abs() < 1e-12);
    }

    #[test]
    fn feedback_stops_at_ball_and_horizon() {
        let traj = simulate_feedback(&pt(0.0, 0.1), 100.0, 0.5).unwrap();
        assert_eq!(traj.meta.stop, StopReason::BallExit);
        assert!((traj.end().state().norm() - 0.5).abs() < 1e-9);
        let traj = simulate_feedback(&pt(0.0, 0.1), 0.0, 0.5).unwrap();
        assert!(traj.arcs.is_empty());
        assert_eq!(simulate_feedback(&pt(0.0, 0.0), 1.0, 0.5), Err(DynamicsError::OriginStart));
    }

    #[test]
    fn chattering_examples() {
        let traj = chattering_from_origin(0.1, 20, 1.0).unwrap();
        traj.check_invariants().unwrap();
        let elapsed = traj.duration();
        assert!((elapsed - 0.1 * (2.0 + SQRT3)).abs() < 1e-4);
        let with_offset = elapsed + traj.meta.time_offset.unwrap();
        assert!((with_offset - 0.1 * (2.0 + SQRT3)).abs() < 1e-14);
        let end = traj.end();
        assert!((end.y - 0.1).abs() < 1e-12 && (end.x - 0.0025).abs() < 1e-12);
        let mags: Vec<f64> = traj.arcs.iter().map(|a| a.start.y.abs()).collect();
        for w in mags.windows(2) {
            assert!((w[1] / w[0] - SQRT3).abs() < 1e-12);
        }
        let radii: Vec<f64> = (1..8)
            .map(|n| chattering_from_origin(0.1, n, 1.0).unwrap().meta.truncation_radius.unwrap())
            .collect();
        assert!(radii.windows(2).all(|w| w[1] < w[0]));
        assert!(chattering_from_origin(0.6, 3, 1.0).is_err());
    }

    #[test]
    fn cost_examples() {
        let arc = Arc::new(ExtendedPoint::new(0.0, 0.0, 0.0), ControlSign::Plus, 1.0);
        let traj = Trajectory { start: arc.start, arcs: vec![arc], switch_points: vec![], meta: Default::default() };
        let c = cost(&traj, &CostParams { q: 2.0, quadrature_step: 1e-3 }).unwrap();
        assert!((c - 0.05).abs() < 1e-8);
        let zero = Trajectory::at_rest(ExtendedPoint::new(0.0, 0.0, 0.0));
        assert_eq!(cost(&zero, &CostParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn residual_examples() {
        let traj = simulate_feedback(&pt(0.01, 0.05), 3.0, 10.0).unwrap();
        assert!(eps_residual(&traj, 1e-3).unwrap() <= 1e-12);
        let delta = 0.037;
        let mut bent = traj.clone();
        let a = bent.arcs[0];
        bent.arcs.truncate(1);
        bent.arcs[0] = Arc::with_control(a.start, a.control * (1.0 + delta), 0.5 * a.duration);
        assert!((eps_residual(&bent, 1e-3).unwrap() - delta).abs() < 1e-12);
        let chat = chattering_from_origin(0.1, 12, 1.0).unwrap();
        assert!(eps_residual(&chat, 1e-4).unwrap() <= 1e-12);
    }

    #[test]
    fn time_reversal_solves_the_double_integrator() {
        let traj = simulate_feedback(&pt(0.01, 0.05), 3.0, 10.0).unwrap();
        let rev = traj.time_reversed();
        rev.check_invariants().unwrap();
        assert!((rev.duration() - traj.duration()).abs() < 1e-12);
        let e = traj.end();
        assert!((rev.start.x - e.x).abs() < 1e-15 && (rev.start.y + e.y).abs() < 1e-15);
    }
}
