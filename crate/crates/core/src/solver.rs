//! Patchy ε-solution engine and the limit harness.
//!
//! The engine is generic over a patchy approximation, which reports the
//! admissible controls `u` of velocities `(y, u, 1)` at a point, and over a
//! quasi-Lyapunov function. Inside a cell it follows the selection that
//! maximises the certificate growth, switching when the approximation says
//! the branch ends. Starts on the bad set are replaced by a family of nearby
//! starts whose solutions must form a Cauchy sequence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    ball_exit_time, eps_residual, flow_with_control, hitting_time, landing_point, Arc, ControlSign,
    DynamicsError, StopReason, Trajectory, MAX_ARCS,
};
use crate::geometry::{curve_side, dist_to_ball_complement, ExtendedPoint, StatePoint, VelocitySet};
use crate::lyapunov::{grad_wbar, wbar, QlfError, QlfParams};
use crate::partition::{cell_index_trace_clipped, summarize_trace, PartialApproximation, PartitionError, TraceSummary};

/// Bisection tolerance of the generic branch-exit search.
pub const EXIT_TOL: f64 = 1e-12;

/// Slack allowed in the sampled growth inequality.
pub const GROWTH_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Qlf(#[from] QlfError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("certificate violation: {0}")]
    CertificateViolation(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
}

pub trait QuasiLyapunov: Sync {
    fn value(&self, z: &ExtendedPoint) -> Result<f64, SolverError>;
    fn gradient(&self, z: &ExtendedPoint) -> Result<[f64; 3], SolverError>;
    /// Radius of the open ball on which the function is defined.
    fn radius(&self) -> f64;

    fn domain_contains(&self, z: &ExtendedPoint) -> bool {
        z.is_finite() && z.state().norm() < self.radius()
    }
}

/// The calibrated certificate `w̄`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WBar(pub QlfParams);

impl QuasiLyapunov for WBar {
    fn value(&self, z: &ExtendedPoint) -> Result<f64, SolverError> {
        Ok(wbar(z, &self.0)?)
    }

    fn gradient(&self, z: &ExtendedPoint) -> Result<[f64; 3], SolverError> {
        Ok(grad_wbar(z, &self.0)?)
    }

    fn radius(&self) -> f64 {
        self.0.r
    }
}

/// Negative control: the certificate with its sign flipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Negated<Q>(pub Q);

impl<Q: QuasiLyapunov> QuasiLyapunov for Negated<Q> {
    fn value(&self, z: &ExtendedPoint) -> Result<f64, SolverError> {
        Ok(-self.0.value(z)?)
    }

    fn gradient(&self, z: &ExtendedPoint) -> Result<[f64; 3], SolverError> {
        let g = self.0.gradient(z)?;
        Ok([-g[0], -g[1], -g[2]])
    }

    fn radius(&self) -> f64 {
        self.0.radius()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Good,
    Bad,
    Outside,
}

/// End of a constant-control branch: elapsed time and the point reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchExit {
    pub dt: f64,
    pub landing: ExtendedPoint,
}

pub trait PatchyApproximation: Sync {
    fn region(&self, z: &ExtendedPoint) -> Region;

    /// Controls `u` of the cell field `{(y, u, 1)}` at a good point.
    fn controls(&self, z: &ExtendedPoint) -> Result<Vec<f64>, SolverError>;

    /// Exact end of the branch started at `z` under `u`, when known in closed
    /// form. `Some` with infinite `dt` means the branch never ends.
    fn branch_exit(&self, _z: &ExtendedPoint, _u: f64) -> Option<BranchExit> {
        None
    }

    /// Distance of a path's velocity to the true right-hand side.
    fn field_residual(&self, traj: &Trajectory, step: f64) -> Result<f64, SolverError>;
}

impl PatchyApproximation for PartialApproximation {
    fn region(&self, z: &ExtendedPoint) -> Region {
        if !self.in_domain(z) {
            Region::Outside
        } else if z.x == 0.0 && z.y == 0.0 {
            Region::Bad
        } else {
            Region::Good
        }
    }

    fn controls(&self, z: &ExtendedPoint) -> Result<Vec<f64>, SolverError> {
        match curve_side(&z.state()).map_err(DynamicsError::from)? {
            Some(side) => Ok(vec![self.field_sign * side.control()]),
            None => Err(SolverError::Coverage(format!("{z:?} lies in the bad set"))),
        }
    }

    fn branch_exit(&self, z: &ExtendedPoint, u: f64) -> Option<BranchExit> {
        let sign = ControlSign::from_value(u)?;
        let p = z.state();
        match hitting_time(&p, sign) {
            Ok(Some(dt)) => {
                let q = landing_point(&p, sign, dt);
                Some(BranchExit { dt, landing: q.at(z.t + dt) })
            }
            Ok(None) => Some(BranchExit { dt: f64::INFINITY, landing: *z }),
            Err(_) => None,
        }
    }

    fn field_residual(&self, traj: &Trajectory, step: f64) -> Result<f64, SolverError> {
        Ok(eps_residual(traj, step)?)
    }
}

/// The cell velocities along which the certificate grows at unit rate,
/// best first. Empty selections are a certificate violation.
pub fn restricted_field<Q: QuasiLyapunov + ?Sized>(
    controls: &[f64],
    z: &ExtendedPoint,
    qlf: &Q,
) -> Result<VelocitySet<3>, SolverError> {
    let g = qlf.gradient(z)?;
    let mut scored: Vec<(f64, [f64; 3])> = controls
        .iter()
        .map(|&u| {
            let v = [z.y, u, 1.0];
            (g[0] * v[0] + g[1] * v[1] + g[2] * v[2], v)
        })
        .filter(|(score, _)| *score >= 1.0)
        .collect();
    if scored.is_empty() {
        return Err(SolverError::CertificateViolation(format!(
            "no cell velocity at {z:?} raises the certificate at unit rate"
        )));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.iter().zip(&b.1).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(VelocitySet { velocities: scored.into_iter().map(|(_, v)| v).collect() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eps: f64,
    /// Longest duration of a solution.
    pub t_end: f64,
    /// Step of the certificate checks along arcs and of the generic exit search.
    pub step_cap: f64,
    /// Decreasing absolute offsets used for starts on the bad set.
    pub start_offsets: Vec<f64>,
    /// Largest admissible ratio of consecutive offset gaps.
    pub cauchy_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { eps: 0.5, t_end: 1.0, step_cap: 1e-3, start_offsets: Vec::new(), cauchy_ratio: 0.5 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(SolverError::Config(format!("eps {} must lie in (0, 1]", self.eps)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SolverError::Config(format!("t_end {} must be finite and non-negative", self.t_end)));
        }
        if !(self.step_cap > 0.0 && self.step_cap.is_finite()) {
            return Err(SolverError::Config(format!("step_cap {} must be positive", self.step_cap)));
        }
        if self.start_offsets.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(SolverError::Config("offsets must be positive".into()));
        }
        if self.start_offsets.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SolverError::Config("offsets must be decreasing".into()));
        }
        Ok(())
    }
}

fn branch_end<P: PatchyApproximation + ?Sized>(
    pa: &P,
    z: &ExtendedPoint,
    u: f64,
    limit: f64,
    step: f64,
) -> BranchExit {
    if let Some(exit) = pa.branch_exit(z, u) {
        return exit;
    }
    let p = z.state();
    let at = |dt: f64| {
        let q = flow_with_control(&p, u, dt);
        q.at(z.t + dt)
    };
    let stays = |dt: f64| {
        let q = at(dt);
        pa.region(&q) == Region::Good && pa.controls(&q).is_ok_and(|c| c.contains(&u))
    };
    let mut lo = 0.0;
    while lo < limit {
        let hi = (lo + step).min(limit);
        if !stays(hi) {
            let (mut a, mut b) = (lo, hi);
            while b - a > EXIT_TOL {
                let m = 0.5 * (a + b);
                if stays(m) {
                    a = m;
                } else {
                    b = m;
                }
            }
            return BranchExit { dt: b, landing: at(b) };
        }
        lo = hi;
    }
    BranchExit { dt: f64::INFINITY, landing: *z }
}

fn check_arc<Q: QuasiLyapunov + ?Sized>(arc: &Arc, qlf: &Q, step: f64) -> Result<(), SolverError> {
    let n = (arc.duration / step).ceil().max(1.0) as usize;
    for j in 1..n {
        let z = arc.state_after(arc.duration * j as f64 / n as f64);
        if !qlf.domain_contains(&z) {
            break;
        }
        restricted_field(&[arc.control], &z, qlf)?;
    }
    Ok(())
}

/// Follows the certified selection from a good start until the ball
/// boundary, the bad set or the duration limit.
pub fn integrate<P, Q>(z0: &ExtendedPoint, pa: &P, qlf: &Q, cfg: &SolverConfig) -> Result<Trajectory, SolverError>
where
    P: PatchyApproximation + ?Sized,
    Q: QuasiLyapunov + ?Sized,
{
    cfg.validate()?;
    if !qlf.domain_contains(z0) {
        return Err(SolverError::Domain(format!("{z0:?} lies outside the certificate domain")));
    }
    match pa.region(z0) {
        Region::Good => {}
        Region::Bad => return Err(SolverError::Domain(format!("{z0:?} lies in the bad set"))),
        Region::Outside => return Err(SolverError::Domain(format!("{z0:?} lies outside the approximation"))),
    }
    let r = qlf.radius();
    let mut traj = Trajectory::at_rest(*z0);
    traj.meta.eps = cfg.eps;
    let t_stop = z0.t + cfg.t_end;
    let mut z = *z0;
    while z.t < t_stop {
        if traj.arcs.len() >= MAX_ARCS {
            return Err(SolverError::Domain(format!("more than {MAX_ARCS} arcs")));
        }
        match pa.region(&z) {
            Region::Good => {}
            Region::Bad => return Err(SolverError::Domain(format!("solution reached the bad set at {z:?}"))),
            Region::Outside => {
                traj.meta.stop = StopReason::Horizon;
                break;
            }
        }
        if !qlf.domain_contains(&z) {
            traj.meta.stop = StopReason::BallExit;
            break;
        }
        let controls = pa.controls(&z)?;
        let v = restricted_field(&controls, &z, qlf)?;
        let u = v.velocities[0][1];
        let remaining = t_stop - z.t;
        let exit = branch_end(pa, &z, u, remaining, cfg.step_cap);
        let limit = exit.dt.min(remaining);
        let ball = ball_exit_time(&z.state(), u, r, limit);
        let (dt, stop) = match ball {
            Some(te) if te < limit => (te, Some(StopReason::BallExit)),
            _ if remaining <= exit.dt => (remaining, Some(StopReason::Horizon)),
            _ => (exit.dt, None),
        };
        if dt <= 0.0 {
            traj.meta.stop = stop.unwrap_or(StopReason::Horizon);
            break;
        }
        let arc = Arc::with_control(z, u, dt);
        check_arc(&arc, qlf, cfg.step_cap)?;
        traj.arcs.push(arc);
        match stop {
            Some(reason) => {
                traj.meta.stop = reason;
                break;
            }
            None => {
                z = exit.landing;
                traj.switch_points.push(z);
            }
        }
    }
    Ok(traj)
}

/// Maps a bad-set point and an offset to a nearby good start.
pub trait BadSetApproach: Sync {
    fn approach(&self, z0: &ExtendedPoint, delta: f64) -> ExtendedPoint;
}

/// Switch points of one chattering orbit leaving the origin: the start for
/// offset `δ` is the first switch point of norm at most `δ` among ordinates
/// `±μ₀·3^(−i/2)`, `i ≥ 1`, placed at the time stamp of `z0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitApproach {
    pub mu0: f64,
}

impl OrbitApproach {
    pub fn point(&self, i: u32) -> StatePoint {
        let m = self.mu0 * 3f64.powf(-(i as f64) / 2.0);
        if i % 2 == 1 {
            StatePoint::new(-0.25 * m * m, -m)
        } else {
            StatePoint::new(0.25 * m * m, m)
        }
    }

    pub fn index_for(&self, delta: f64) -> u32 {
        let mut i = 1;
        while self.point(i).norm() > delta && i < 4000 {
            i += 1;
        }
        i
    }
}

impl BadSetApproach for OrbitApproach {
    fn approach(&self, z0: &ExtendedPoint, delta: f64) -> ExtendedPoint {
        let p = self.point(self.index_for(delta));
        ExtendedPoint::new(z0.x + p.x, z0.y + p.y, z0.t)
    }
}

/// Starts at `z0 + δ·dir`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionApproach {
    pub dir: [f64; 2],
}

impl BadSetApproach for DirectionApproach {
    fn approach(&self, z0: &ExtendedPoint, delta: f64) -> ExtendedPoint {
        ExtendedPoint::new(z0.x + delta * self.dir[0], z0.y + delta * self.dir[1], z0.t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetFamily {
    pub offsets: Vec<f64>,
    pub starts: Vec<ExtendedPoint>,
    pub trajectories: Vec<Trajectory>,
    pub sup_gaps: Vec<f64>,
    pub ratios: Vec<f64>,
    pub cauchy: bool,
}

/// Solutions from the offset starts of a bad-set point and their gaps.
pub fn offset_family<P, Q, A>(
    z0: &ExtendedPoint,
    pa: &P,
    qlf: &Q,
    cfg: &SolverConfig,
    approach: &A,
) -> Result<OffsetFamily, SolverError>
where
    P: PatchyApproximation + ?Sized,
    Q: QuasiLyapunov + ?Sized,
    A: BadSetApproach + ?Sized,
{
    cfg.validate()?;
    if cfg.start_offsets.len() < 2 {
        return Err(SolverError::Config("an offset family needs at least two offsets".into()));
    }
    let starts: Vec<ExtendedPoint> = cfg.start_offsets.iter().map(|&d| approach.approach(z0, d)).collect();
    let trajectories = starts
        .par_iter()
        .map(|s| integrate(s, pa, qlf, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let sup_gaps = consecutive_gaps(&trajectories, cfg.step_cap)?;
    let ratios: Vec<f64> = sup_gaps.windows(2).map(|w| w[1] / w[0]).collect();
    let cauchy = ratios.iter().all(|q| *q <= cfg.cauchy_ratio);
    Ok(OffsetFamily { offsets: cfg.start_offsets.clone(), starts, trajectories, sup_gaps, ratios, cauchy })
}

fn consecutive_gaps(trajs: &[Trajectory], step: f64) -> Result<Vec<f64>, SolverError> {
    trajs
        .windows(2)
        .map(|w| {
            w[0].sup_gap(&w[1], step)
                .ok_or_else(|| SolverError::Domain("solutions share no time interval".into()))
        })
        .collect()
}

/// The ε-solution from `z0`. Starts on the bad set go through the offset
/// family along the chattering orbit of scale `r`; the finest member is
/// returned once the family passes the Cauchy test.
pub fn epsilon_solution<P, Q>(z0: &ExtendedPoint, pa: &P, qlf: &Q, cfg: &SolverConfig) -> Result<Trajectory, SolverError>
where
    P: PatchyApproximation + ?Sized,
    Q: QuasiLyapunov + ?Sized,
{
    match pa.region(z0) {
        Region::Bad => {
            let family = offset_family(z0, pa, qlf, cfg, &OrbitApproach { mu0: qlf.radius() })?;
            if !family.cauchy {
                return Err(SolverError::NonConvergence(format!("offset gap ratios {:?}", family.ratios)));
            }
            Ok(family.trajectories.into_iter().last().expect("at least two offsets"))
        }
        _ => integrate(z0, pa, qlf, cfg),
    }
}

/// Guaranteed existence time `dist(z0, ∂V)/(c + 1)`, or half of it.
pub fn time_lower_bound(z0: &ExtendedPoint, r: f64, c: f64, halved: bool) -> Result<f64, SolverError> {
    if !(r > 0.0 && c > 0.0) {
        return Err(SolverError::Domain(format!("need r > 0 and c > 0, got {r}, {c}")));
    }
    let t = dist_to_ball_complement(&z0.state(), r) / (c + 1.0);
    Ok(if halved { 0.5 * t } else { t })
}

/// Smallest `w̄(φ(t)) − w̄(φ(t₀)) − (t − t₀)` over samples inside the domain.
pub fn growth_margin<Q: QuasiLyapunov + ?Sized>(traj: &Trajectory, qlf: &Q, step: f64) -> Result<f64, SolverError> {
    let w0 = qlf.value(&traj.start)?;
    let mut worst = f64::INFINITY;
    for (z, _) in traj.samples(Some(step)) {
        if !qlf.domain_contains(&z) {
            continue;
        }
        worst = worst.min(qlf.value(&z)? - w0 - (z.t - traj.t_start()));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub k_list: Vec<usize>,
    pub eps: Vec<f64>,
    pub offsets: Vec<f64>,
    pub sup_gaps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub durations: Vec<f64>,
    /// Gaps strictly decrease.
    pub cauchy: bool,
    pub final_residual: f64,
}

impl ConvergenceReport {
    pub fn pass(&self) -> bool {
        let k_max = *self.k_list.last().unwrap_or(&1) as f64;
        self.cauchy && self.final_residual <= 1.0 / k_max + 1e-9
    }
}

/// Solutions for `ε = 1/k`, `k = 1…k_max`, with the approximation and
/// certificate of each `k` supplied by the builders. Bad-set starts use the
/// offset `dist(z0, ∂V)/8 · 2^(1−k)` along the chattering orbit.
pub fn solve_via_limits<P, Q, FP, FQ>(
    z0: &ExtendedPoint,
    k_max: usize,
    base: &SolverConfig,
    pa_builder: FP,
    qlf_builder: FQ,
) -> Result<(Trajectory, ConvergenceReport), SolverError>
where
    P: PatchyApproximation,
    Q: QuasiLyapunov,
    FP: Fn(usize) -> P + Sync,
    FQ: Fn(usize) -> Q + Sync,
{
    if k_max < 2 {
        return Err(SolverError::Config(format!("k_max {k_max} must be at least 2")));
    }
    let ks: Vec<usize> = (1..=k_max).collect();
    let runs = ks
        .par_iter()
        .map(|&k| {
            let pa = pa_builder(k);
            let qlf = qlf_builder(k);
            let cfg = SolverConfig { eps: 1.0 / k as f64, start_offsets: Vec::new(), ..base.clone() };
            let (start, offset) = match pa.region(z0) {
                Region::Bad => {
                    let d0 = qlf.radius() / 8.0;
                    let delta = d0 * 0.5f64.powi(k as i32 - 1);
                    (OrbitApproach { mu0: qlf.radius() }.approach(z0, delta), delta)
                }
                _ => (*z0, 0.0),
            };
            let traj = integrate(&start, &pa, &qlf, &cfg)?;
            let residual = pa.field_residual(&traj, cfg.step_cap)?;
            Ok((traj, offset, residual))
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    let trajs: Vec<Trajectory> = runs.iter().map(|r| r.0.clone()).collect();
    let sup_gaps = consecutive_gaps(&trajs, base.step_cap)?;
    let cauchy = sup_gaps.windows(2).all(|w| w[1] < w[0]) || sup_gaps.iter().all(|g| *g == 0.0);
    let residuals: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let report = ConvergenceReport {
        k_list: ks.clone(),
        eps: ks.iter().map(|&k| 1.0 / k as f64).collect(),
        offsets: runs.iter().map(|r| r.1).collect(),
        sup_gaps,
        residuals: residuals.clone(),
        durations: trajs.iter().map(Trajectory::duration).collect(),
        cauchy,
        final_residual: *residuals.last().expect("k_max >= 2"),
    };
    if !report.cauchy {
        return Err(SolverError::NonConvergence(format!("sup gaps {:?}", report.sup_gaps)));
    }
    let last = trajs.into_iter().last().expect("k_max >= 2");
    Ok((last, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitVerdict {
    pub common_interval: (f64, f64),
    pub max_pairwise_gap: f64,
    pub consecutive_gaps: Vec<f64>,
    pub limit_residual: f64,
    pub residual_bound: f64,
    pub trace: TraceSummary,
    pub pass: bool,
}

/// Checks a family of solutions against the uniform-limit conclusions: the
/// last member is the limit candidate, its residual must stay within the
/// largest member tolerance and its cell trace must be monotone.
pub fn uniform_limit_check(
    trajs: &[Trajectory],
    pa: &PartialApproximation,
    step: f64,
) -> Result<LimitVerdict, SolverError> {
    if trajs.len() < 2 {
        return Err(SolverError::Domain("need at least two trajectories".into()));
    }
    let t0 = trajs.iter().map(Trajectory::t_start).fold(f64::NEG_INFINITY, f64::max);
    let t1 = trajs.iter().map(Trajectory::t_end).fold(f64::INFINITY, f64::min);
    if !(t1 > t0) {
        return Err(SolverError::Domain(format!("no common interval ({t0} ≥ {t1})")));
    }
    let mut max_gap: f64 = 0.0;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            let g = trajs[i].sup_gap(&trajs[j], step).unwrap_or(f64::INFINITY);
            max_gap = max_gap.max(g);
        }
    }
    let consecutive_gaps = consecutive_gaps(trajs, step)?;
    let limit = trajs.last().expect("non-empty");
    let limit_residual = pa.field_residual(limit, step)?;
    let residual_bound = trajs.iter().map(|t| t.meta.eps).fold(0.0, f64::max) + 1e-9;
    let trace = summarize_trace(pa, &cell_index_trace_clipped(limit, pa, step)?);
    let pass = limit_residual <= residual_bound && trace.monotone();
    Ok(LimitVerdict {
        common_interval: (t0, t1),
        max_pairwise_gap: max_gap,
        consecutive_gaps,
        limit_residual,
        residual_bound,
        trace,
        pass,
    })
}
