use std::path::PathBuf;

use fuller_core::dynamics::{chattering_from_origin, simulate_feedback, DynamicsError, Trajectory};
use fuller_core::geometry::{speed_bound, ExtendedPoint, StatePoint};
use fuller_core::lyapunov::{verify_qlf, Bound, Check, QlfError, QlfParams, QlfReport};
use fuller_core::partition::{
    build_ms_cover, cell_index_trace_clipped, summarize_trace, validate_approximation, PartialApproximation,
    PartitionError,
};
use fuller_core::solver::{
    growth_margin, integrate, offset_family, solve_via_limits, time_lower_bound, Negated, OrbitApproach,
    PatchyApproximation, QuasiLyapunov, Region, SolverConfig, SolverError, WBar, GROWTH_SLACK,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{write_trajectory_csv, CheckRow, Report};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Ball radius of the dynamics commands when neither the flag nor the
/// configuration fixes one.
pub const DEFAULT_BALL: f64 = 1.0;

fn finite(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Invalid(format!("{name} must be finite, got {v}")))
    }
}

fn dynamics_error(e: DynamicsError) -> CliError {
    match e {
        DynamicsError::OriginStart => {
            CliError::Invalid("the origin has no feedback solution; use the `chatter` command".into())
        }
        other => CliError::Invalid(other.to_string()),
    }
}

fn certificate(cfg: &RunConfig) -> Result<QlfParams, CliError> {
    match cfg.certificate() {
        Ok(c) => Ok(c.params),
        Err(QlfError::Domain(m)) => Err(CliError::Invalid(m)),
        Err(QlfError::CalibrationFailure { check, .. }) => {
            Err(CliError::Failed(format!("certificate calibration failed on check \"{check}\"")))
        }
        Err(e) => Err(CliError::Failed(e.to_string())),
    }
}

fn ball_radius(flag: Option<f64>, cfg: &RunConfig) -> Result<f64, CliError> {
    let r = finite("r", flag.or(cfg.r.fixed()).unwrap_or(DEFAULT_BALL))?;
    if r <= 0.0 {
        return Err(CliError::Invalid(format!("r must be positive, got {r}")));
    }
    Ok(r)
}

fn positive_step(step: f64) -> Result<f64, CliError> {
    if step > 0.0 && step.is_finite() {
        Ok(step)
    } else {
        Err(CliError::Invalid(format!("step must be positive, got {step}")))
    }
}

#[derive(Clone, Debug)]
pub struct SimulateArgs {
    pub x0: f64,
    pub y0: f64,
    pub t_max: Option<f64>,
    pub r: Option<f64>,
    pub step: f64,
}

pub fn simulate(args: &SimulateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let x0 = finite("x0", args.x0)?;
    let y0 = finite("y0", args.y0)?;
    let t_max = finite("t-max", args.t_max.unwrap_or(cfg.t))?;
    let step = positive_step(args.step)?;
    let ball = ball_radius(args.r, cfg)?;
    let traj = simulate_feedback(&StatePoint::new(x0, y0), t_max, ball).map_err(dynamics_error)?;
    let params = certificate(cfg)?;
    let path = cfg.out_path("trajectory.csv");
    let rows = write_trajectory_csv(&path, &traj, step, 0.0, &params)?;
    let end = traj.end();
    println!("switches: {}", traj.switch_points.len());
    println!("final state: t={:.12} x={:.12e} y={:.12e} ({:?})", end.t, end.x, end.y, traj.meta.stop);
    println!("wrote {} ({rows} rows)", path.display());
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ChatterArgs {
    pub scale: f64,
    pub arcs: usize,
    pub r: Option<f64>,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioCheck {
    pub expected: f64,
    pub worst_deviation: f64,
    pub ratios: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChatterSummary {
    pub scale: f64,
    pub arcs: usize,
    pub ball_radius: f64,
    pub elapsed: f64,
    pub truncation_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_check: Option<RatioCheck>,
}

/// Tolerance on the ratio of consecutive switch ordinates.
pub const RATIO_TOL: f64 = 1e-9;

pub fn chatter(args: &ChatterArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let scale = finite("scale", args.scale)?;
    if scale <= 0.0 || args.arcs == 0 {
        return Err(CliError::Invalid(format!("need scale > 0 and arcs >= 1, got {scale}, {}", args.arcs)));
    }
    let step = positive_step(args.step)?;
    let ball = ball_radius(args.r, cfg)?;
    let traj = chattering_from_origin(scale, args.arcs, ball).map_err(dynamics_error)?;
    let offset = traj.meta.time_offset.unwrap_or(0.0);
    let magnitudes: Vec<f64> = traj.arcs.iter().map(|a| a.start.y.abs()).collect();
    let ratio_check = (magnitudes.len() >= 2).then(|| {
        let worst = magnitudes.windows(2).map(|w| (w[1] / w[0] - SQRT3).abs()).fold(0.0, f64::max);
        RatioCheck { expected: SQRT3, worst_deviation: worst, ratios: magnitudes.len() - 1, pass: worst <= RATIO_TOL }
    });
    let checks: Vec<CheckRow> = ratio_check
        .iter()
        .map(|rc| {
            CheckRow::from(&Check::new("switch_ratio", 0, rc.worst_deviation, RATIO_TOL, Bound::AtMost, rc.ratios))
        })
        .collect();
    let summary = ChatterSummary {
        scale,
        arcs: args.arcs,
        ball_radius: ball,
        elapsed: traj.duration() + offset,
        truncation_radius: traj.meta.truncation_radius,
        ratio_check,
    };
    let params = certificate(cfg)?;
    let csv = cfg.out_path("chatter.csv");
    write_trajectory_csv(&csv, &traj, step, offset, &params)?;
    let report = Report::new(cfg, checks, summary);
    let json = cfg.out_path("chatter.json");
    report.write(&json)?;
    println!("elapsed: {:.10}", report.summary.elapsed);
    println!("wrote {} and {}", csv.display(), json.display());
    report.verdict()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Corruption {
    /// Flip the control of every green cell.
    FieldSign,
    /// Negate the certificate.
    WbarSign,
}

#[derive(Clone, Debug)]
pub struct VerifyArgs {
    pub corrupt: Option<Corruption>,
    pub cover_depth: usize,
    pub cover_r: f64,
    pub partition_grid: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub a_bar: f64,
    pub r: Option<f64>,
    pub corrupt: Option<String>,
    pub calibration_pass: bool,
    pub certificate_pass: Option<bool>,
    pub partition_pass: Option<bool>,
    pub engine_pass: Option<bool>,
    pub first_failure: Option<String>,
}

/// Depth of the approximation paired with a certificate ball of radius `r`.
pub fn engine_depth(r: f64) -> usize {
    (2.0 / r).floor() as usize + 1
}

pub fn verify(args: &VerifyArgs, cfg: &RunConfig) -> Result<(), CliError> {
    if args.partition_grid == 0 {
        return Err(CliError::Invalid("partition grid must be at least 1".into()));
    }
    let cover_r = finite("cover-r", args.cover_r)?;
    let cover = build_ms_cover(args.cover_depth, cover_r, cfg.t.max(f64::MIN_POSITIVE))
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    let mut summary = VerifySummary {
        a_bar: cfg.a_bar,
        r: cfg.r.fixed(),
        corrupt: args.corrupt.map(|c| format!("{c:?}")),
        calibration_pass: false,
        certificate_pass: None,
        partition_pass: None,
        engine_pass: None,
        first_failure: None,
    };
    let calibration = match cfg.certificate() {
        Ok(c) => c,
        Err(QlfError::CalibrationFailure { report, .. }) => {
            return finish_verify(cfg, rows(&report), summary);
        }
        Err(QlfError::Domain(m)) => return Err(CliError::Invalid(m)),
        Err(e) => return Err(CliError::Failed(e.to_string())),
    };
    let params = calibration.params;
    summary.calibration_pass = true;
    summary.r = Some(params.r);
    let mut checks = rows(&calibration.report);

    let qlf = verify_qlf(&params, cfg.grid_n.min(100));
    summary.certificate_pass = Some(qlf.pass());
    checks.extend(rows(&qlf));

    let cover = match args.corrupt {
        Some(Corruption::FieldSign) => cover.corrupt_field_sign(),
        _ => cover,
    };
    let partition = validate_approximation(&cover, args.partition_grid, cfg.seed);
    let mut partition_checks: Vec<Check> = partition.checks.clone();
    partition_checks.push(trace_check(&cover, args.partition_grid)?);
    summary.partition_pass = Some(partition_checks.iter().all(|c| c.pass));
    checks.extend(partition_checks.iter().map(CheckRow::from));

    let horizon = cfg.t.max(f64::MIN_POSITIVE);
    let pa = build_ms_cover(engine_depth(params.r), params.r, horizon).map_err(|e| CliError::Invalid(e.to_string()))?;
    let pa = match args.corrupt {
        Some(Corruption::FieldSign) => pa.corrupt_field_sign(),
        _ => pa,
    };
    let solver = SolverConfig { t_end: cfg.t, ..Default::default() };
    let engine = match args.corrupt {
        Some(Corruption::WbarSign) => engine_checks(&pa, &Negated(WBar(params)), &solver, args.partition_grid),
        _ => engine_checks(&pa, &WBar(params), &solver, args.partition_grid),
    };
    summary.engine_pass = Some(engine.iter().all(|c| c.pass));
    checks.extend(engine.iter().map(CheckRow::from));
    finish_verify(cfg, checks, summary)
}

fn rows(report: &QlfReport) -> Vec<CheckRow> {
    report.checks.iter().map(CheckRow::from).collect()
}

fn finish_verify(cfg: &RunConfig, checks: Vec<CheckRow>, mut summary: VerifySummary) -> Result<(), CliError> {
    summary.first_failure = checks.iter().find(|c| !c.pass).map(|c| c.name.clone());
    let report = Report::new(cfg, checks, summary);
    let path = cfg.out_path("verify.json");
    report.write(&path)?;
    for c in &report.checks {
        let worst = c.worst.map_or("n/a".to_string(), |w| format!("{w:.6e}"));
        println!("{:<24} {:<4} worst {worst:<14} threshold {}", c.name, if c.pass { "ok" } else { "FAIL" }, c.threshold);
    }
    println!("wrote {}", path.display());
    report.verdict()
}

/// Decreases of the cell order along feedback trajectories and a chattering
/// truncation over the cover.
fn trace_check(pa: &PartialApproximation, n: usize) -> Result<Check, CliError> {
    let r = pa.r;
    let mut trajs: Vec<Trajectory> = (0..4)
        .map(|k| {
            let theta = 0.3 + k as f64 * std::f64::consts::FRAC_PI_2;
            let p = StatePoint::new(0.3 * r * theta.cos(), 0.3 * r * theta.sin());
            simulate_feedback(&p, pa.t_end, r)
        })
        .collect::<Result<_, _>>()
        .map_err(dynamics_error)?;
    trajs.push(chattering_from_origin(0.5 * r, 12, r).map_err(dynamics_error)?);
    let step = pa.cover(pa.depth).strip_len / n.max(1) as f64;
    let mut decreases = 0usize;
    let mut samples = 0usize;
    for t in &trajs {
        let trace = cell_index_trace_clipped(t, pa, step).map_err(|e: PartitionError| CliError::Failed(e.to_string()))?;
        let s = summarize_trace(pa, &trace);
        decreases += s.decreases.len();
        samples += s.samples;
    }
    Ok(Check::new("cell_trace", n, decreases as f64, 0.0, Bound::AtMost, samples))
}

/// Solutions of the engine from eight starts at a quarter of the radius.
fn engine_checks<Q: QuasiLyapunov>(
    pa: &PartialApproximation,
    qlf: &Q,
    cfg: &SolverConfig,
    grid_n: usize,
) -> Vec<Check> {
    let r = qlf.radius();
    let c = speed_bound(r);
    let starts: Vec<ExtendedPoint> = (0..8)
        .map(|k| {
            let theta = (k as f64 + 0.5) * std::f64::consts::FRAC_PI_4;
            ExtendedPoint::new(0.25 * r * theta.cos(), 0.25 * r * theta.sin(), 0.0)
        })
        .filter(|z| pa.region(z) == Region::Good)
        .collect();
    let mut rejected = 0usize;
    let mut growth = f64::INFINITY;
    let mut slack = f64::INFINITY;
    let mut residual: f64 = 0.0;
    for z in &starts {
        let traj = match integrate(z, pa, qlf, cfg) {
            Ok(t) => t,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        growth = growth.min(growth_margin(&traj, qlf, cfg.step_cap).unwrap_or(f64::NEG_INFINITY));
        if traj.duration() < cfg.t_end {
            let bound = time_lower_bound(z, r, c, false).unwrap_or(f64::INFINITY);
            slack = slack.min(traj.duration() - bound);
        }
        residual = residual.max(pa.field_residual(&traj, cfg.step_cap).unwrap_or(f64::INFINITY));
    }
    if rejected == starts.len() {
        growth = f64::NEG_INFINITY;
        residual = f64::INFINITY;
    }
    let n = starts.len();
    vec![
        Check::new("engine_certificate", grid_n, rejected as f64, 0.0, Bound::AtMost, n),
        Check::new("engine_growth", grid_n, growth, -GROWTH_SLACK, Bound::AtLeast, n),
        Check::new("engine_time_bound", grid_n, if slack.is_finite() { slack } else { 0.0 }, -1e-9, Bound::AtLeast, n),
        Check::new("engine_residual", grid_n, residual, 1e-9, Bound::AtMost, n),
    ]
}

#[derive(Clone, Debug)]
pub struct ConvergeArgs {
    pub k_max: usize,
    /// Offsets as fractions of the certificate radius.
    pub offsets: Vec<f64>,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderFit {
    pub exponent: f64,
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergeSummary {
    pub r: f64,
    pub k_list: Vec<usize>,
    pub eps: Vec<f64>,
    pub k_offsets: Vec<f64>,
    pub k_sup_gaps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub durations: Vec<f64>,
    pub final_residual: Option<f64>,
    pub offsets: Vec<f64>,
    pub sup_gaps: Vec<f64>,
    pub gap_ratios: Vec<f64>,
    pub holder_fit: Option<HolderFit>,
    pub error: Option<String>,
}

/// Least-squares fit of `gap ≈ C·offset^p` in log-log coordinates.
pub fn fit_holder(offsets: &[f64], gaps: &[f64]) -> Option<HolderFit> {
    let pts: Vec<(f64, f64)> = offsets
        .iter()
        .zip(gaps)
        .filter(|(o, g)| **o > 0.0 && **g > 0.0)
        .map(|(o, g)| (o.ln(), g.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let exponent = sxy / sxx;
    Some(HolderFit { exponent, constant: (my - exponent * mx).exp() })
}

fn solver_error(e: SolverError) -> CliError {
    match e {
        SolverError::Config(m) => CliError::Invalid(m),
        other => CliError::Failed(other.to_string()),
    }
}

pub fn converge(args: &ConvergeArgs, cfg: &RunConfig) -> Result<(), CliError> {
    if args.k_max < 2 {
        return Err(CliError::Invalid(format!("k-max must be at least 2, got {}", args.k_max)));
    }
    let step = positive_step(args.step)?;
    if args.offsets.len() < 2
        || args.offsets.iter().any(|o| !(*o > 0.0 && *o < 1.0))
        || args.offsets.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(CliError::Invalid(format!(
            "offsets must be at least two decreasing fractions in (0, 1), got {:?}",
            args.offsets
        )));
    }
    if !(cfg.t > 0.0) {
        return Err(CliError::Invalid(format!("T must be positive, got {}", cfg.t)));
    }
    let params = certificate(cfg)?;
    let r = params.r;
    let pa = build_ms_cover(engine_depth(r), r, cfg.t).map_err(|e| CliError::Invalid(e.to_string()))?;
    let qlf = WBar(params);
    let origin = ExtendedPoint::new(0.0, 0.0, 0.0);
    let base = SolverConfig { t_end: cfg.t, step_cap: step, ..Default::default() };
    base.validate().map_err(solver_error)?;

    let mut summary = ConvergeSummary {
        r,
        k_list: Vec::new(),
        eps: Vec::new(),
        k_offsets: Vec::new(),
        k_sup_gaps: Vec::new(),
        residuals: Vec::new(),
        durations: Vec::new(),
        final_residual: None,
        offsets: args.offsets.iter().map(|o| o * r).collect(),
        sup_gaps: Vec::new(),
        gap_ratios: Vec::new(),
        holder_fit: None,
        error: None,
    };
    let mut checks = Vec::new();
    let mut growth = f64::INFINITY;
    let mut limit = None;

    match solve_via_limits(&origin, args.k_max, &base, |_| pa.clone(), |_| qlf) {
        Ok((last, rep)) => {
            growth = growth.min(growth_margin(&last, &qlf, step).map_err(solver_error)?);
            let worst_ratio = rep
                .sup_gaps
                .windows(2)
                .map(|w| if w[0] == 0.0 && w[1] == 0.0 { 0.0 } else { w[1] / w[0] })
                .fold(0.0, f64::max);
            let worst_residual = rep.residuals.iter().copied().fold(0.0, f64::max);
            checks.push(Check::new("k_residuals", 0, worst_residual, 1e-9, Bound::AtMost, rep.residuals.len()));
            checks.push(Check::new(
                "final_residual",
                0,
                rep.final_residual,
                1.0 / args.k_max as f64,
                Bound::AtMost,
                1,
            ));
            checks.push(Check::new("k_gap_decrease", 0, worst_ratio, 1.0, Bound::Below, rep.sup_gaps.len()));
            summary.k_list = rep.k_list;
            summary.eps = rep.eps;
            summary.k_offsets = rep.offsets;
            summary.k_sup_gaps = rep.sup_gaps;
            summary.residuals = rep.residuals;
            summary.durations = rep.durations;
            summary.final_residual = Some(rep.final_residual);
            limit = Some(last);
        }
        Err(SolverError::Config(m)) => return Err(CliError::Invalid(m)),
        Err(e) => {
            summary.error = Some(e.to_string());
            checks.push(Check::skipped("k_residuals", 0, 1e-9, Bound::AtMost));
        }
    }

    let fam_cfg = SolverConfig { start_offsets: summary.offsets.clone(), ..base.clone() };
    match offset_family(&origin, &pa, &qlf, &fam_cfg, &OrbitApproach { mu0: r }) {
        Ok(fam) => {
            let c = speed_bound(r);
            let mut slack = f64::INFINITY;
            for (z, t) in fam.starts.iter().zip(&fam.trajectories) {
                growth = growth.min(growth_margin(t, &qlf, step).map_err(solver_error)?);
                if t.duration() < cfg.t {
                    slack = slack.min(t.duration() - time_lower_bound(z, r, c, false).map_err(solver_error)?);
                }
            }
            let worst_ratio = fam.ratios.iter().copied().fold(0.0, f64::max);
            checks.push(Check::new("offset_gap_ratio", 0, worst_ratio, fam_cfg.cauchy_ratio, Bound::AtMost, fam.ratios.len()));
            checks.push(Check::new(
                "time_bound",
                0,
                if slack.is_finite() { slack } else { 0.0 },
                -1e-9,
                Bound::AtLeast,
                fam.starts.len(),
            ));
            summary.holder_fit = fit_holder(&fam.offsets[..fam.sup_gaps.len()], &fam.sup_gaps);
            summary.sup_gaps = fam.sup_gaps;
            summary.gap_ratios = fam.ratios;
        }
        Err(SolverError::Config(m)) => return Err(CliError::Invalid(m)),
        Err(e) => {
            summary.error.get_or_insert(e.to_string());
            checks.push(Check::skipped("offset_gap_ratio", 0, fam_cfg.cauchy_ratio, Bound::AtMost));
        }
    }
    checks.push(Check::new("growth", 0, growth, -GROWTH_SLACK, Bound::AtLeast, 1 + args.offsets.len()));

    let report = Report::new(cfg, checks.iter().map(CheckRow::from).collect(), summary);
    let json = cfg.out_path("converge.json");
    report.write(&json)?;
    if let Some(last) = &limit {
        let csv: PathBuf = cfg.out_path("limit.csv");
        write_trajectory_csv(&csv, last, step, 0.0, &params)?;
        println!("wrote {}", csv.display());
    }
    for c in &report.checks {
        println!("{:<18} {}", c.name, if c.pass { "ok" } else { "FAIL" });
    }
    println!("wrote {}", json.display());
    report.verdict()
}
