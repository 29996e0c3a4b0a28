//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion and then asserts it. Tolerances are fixed here.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cmp::Ordering;
use std::process::Command;

use fuller_core::dynamics::{chattering_from_origin, flow, simulate_feedback, ControlSign, Trajectory};
use fuller_core::geometry::{side_of, speed_bound, ExtendedPoint, Side, StatePoint};
use fuller_core::lyapunov::{
    a_grid, calibrate, calibration_checks, gradient_fd_error, h_closed, h_inner, h_min, halving_candidates, phi,
    verify_qlf, ParabolaGeometry, QlfParams, DEFAULT_A_BAR, RATE,
};
use fuller_core::partition::{
    build_ms_cover, cell_index_trace_clipped, summarize_trace, validate_approximation, Location,
    PartialApproximation,
};
use fuller_core::solver::{
    growth_margin, integrate, offset_family, solve_via_limits, time_lower_bound, Negated, OrbitApproach,
    PatchyApproximation, SolverConfig, SolverError, WBar,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SQRT3: f64 = 1.732_050_807_568_877_2;

const H_MIN_FLOOR: f64 = 0.5;
const FA_PHI_CEIL: f64 = 9.0;
const RATE_FLOOR: f64 = 1.0;
const H_IDENTITY_TOL: f64 = 1e-12;
const PHI_TOL: f64 = 1e-9;
const FD_TOL: f64 = 1e-4;
const FD_MIN_NORM: f64 = 1e-3;
const RATIO_TOL: f64 = 1e-9;
const ELAPSED_TOL: f64 = 1e-4;
const GROWTH_TOL: f64 = 1e-6;
const TIME_BOUND_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-9;
const DECADE_RATIO: f64 = 0.5;

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n} ({name}): {} | {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn calibrated() -> QlfParams {
    calibrate(DEFAULT_A_BAR, &halving_candidates(0.5, 16), 200).expect("calibration").params
}

fn engine_pa(params: &QlfParams) -> PartialApproximation {
    build_ms_cover((2.0 / params.r).floor() as usize + 1, params.r, 1.0).unwrap()
}

fn origin_offsets(r: f64) -> Vec<f64> {
    vec![1e-2 * r, 1e-3 * r, 1e-4 * r, 1e-5 * r]
}

/// Engine solutions from interior starts on both sides and from the offset
/// family of the origin.
fn engine_trajectories(params: &QlfParams) -> Vec<(ExtendedPoint, Trajectory)> {
    let pa = engine_pa(params);
    let qlf = WBar(*params);
    let cfg = SolverConfig::default();
    let r = params.r;
    let mut out = Vec::new();
    for k in 0..16 {
        let theta = (k as f64 + 0.5) * std::f64::consts::PI / 8.0;
        for rho in [0.05, 0.3, 0.7] {
            let z = ExtendedPoint::new(rho * r * theta.cos(), rho * r * theta.sin(), 0.0);
            out.push((z, integrate(&z, &pa, &qlf, &cfg).unwrap()));
        }
    }
    let fam_cfg = SolverConfig { start_offsets: origin_offsets(r), ..cfg };
    let origin = ExtendedPoint::new(0.0, 0.0, 0.0);
    let fam = offset_family(&origin, &pa, &qlf, &fam_cfg, &OrbitApproach { mu0: r }).unwrap();
    out.extend(fam.starts.into_iter().zip(fam.trajectories));
    out
}

#[test]
fn criterion_1_certificate_suite() {
    let params = calibrated();
    let a_vals = a_grid(params.a_bar, 100);
    let h_violations = a_vals.iter().filter(|&&a| !(h_min(a).unwrap() > H_MIN_FLOOR)).count();
    let h_worst = a_vals.iter().map(|&a| h_min(a).unwrap()).fold(f64::INFINITY, f64::min);

    let cal = calibration_checks(&params, 200);
    let fa = cal.check("fa_phi_bound").unwrap();
    let fa_ok = fa.pass && fa.worst.unwrap() <= FA_PHI_CEIL && fa.samples > 0;

    let ver = verify_qlf(&params, 101);
    let d1 = ver.check("lyapunov_rate_d1").unwrap();
    let d2 = ver.check("lyapunov_rate_d2").unwrap();
    let rate_ok = [d1, d2]
        .iter()
        .all(|c| c.pass && c.worst.unwrap() >= RATE_FLOOR && c.samples >= 10_000);

    let ok = h_violations == 0 && fa_ok && rate_ok && cal.pass() && ver.pass();
    verdict(
        1,
        "certificate suite",
        ok,
        format!(
            "r={} h_min worst {h_worst:.6} over {} values; fa(phi) worst {:.4} over {} points; \
             rate worst {:.4}/{:.4} over {}/{} samples",
            params.r,
            a_vals.len(),
            fa.worst.unwrap(),
            fa.samples,
            d1.worst.unwrap(),
            d2.worst.unwrap(),
            d1.samples,
            d2.samples
        ),
    );
}

#[test]
fn criterion_2_h_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = -rng.gen_range(1e-6..=DEFAULT_A_BAR);
        let (lo, hi) = ParabolaGeometry::new(a).unwrap().interval();
        let tau = rng.gen_range(lo..=hi);
        worst = worst.max((h_inner(a, tau).unwrap() - h_closed(a, tau).unwrap()).abs());
    }
    verdict(2, "h identity", worst <= H_IDENTITY_TOL, format!("max |h_inner - h_closed| = {worst:e} on 10000 pairs"));
}

/// `n` points of parabola `a` inside the ball and the domain of `phi`,
/// evenly spread along the parameter.
fn parabola_points(a: f64, params: &QlfParams, n: usize) -> Vec<StatePoint> {
    let geo = ParabolaGeometry::new(a).unwrap();
    let (lo, hi) = geo.interval();
    let m = 200_000;
    let inside: Vec<StatePoint> = (0..=m)
        .map(|j| geo.point_at(lo + (hi - lo) * j as f64 / m as f64))
        .filter(|p| p.norm() < params.r && p.x < 0.5 * p.y * p.y)
        .collect();
    assert!(inside.len() >= n, "parabola {a} has only {} points in the ball", inside.len());
    (0..n).map(|i| inside[i * (inside.len() - 1) / (n - 1)]).collect()
}

#[test]
fn criterion_3_implicit_function() {
    let wide = QlfParams { a_bar: 0.6, r: 0.12, rate: RATE };
    let mut phi_worst: f64 = 0.0;
    let mut phi_count = 0;
    for a in [-0.1, -0.05, -0.01] {
        for p in parabola_points(a, &wide, 50) {
            phi_worst = phi_worst.max((phi(p.x, p.y, &wide).unwrap().a - a).abs());
            phi_count += 1;
        }
    }

    let params = calibrated();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fd_worst: f64 = 0.0;
    let mut fd_count = 0;
    while fd_count < 1000 {
        let rho = rng.gen_range(FD_MIN_NORM..0.999 * params.r);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = StatePoint::new(rho * theta.cos(), rho * theta.sin());
        if side_of(&p, 0.0).unwrap() != Some(Side::D1) {
            continue;
        }
        fd_worst = fd_worst.max(gradient_fd_error(&p, &params).unwrap());
        fd_count += 1;
    }
    verdict(
        3,
        "implicit function",
        phi_worst <= PHI_TOL && fd_worst <= FD_TOL,
        format!("phi error {phi_worst:e} on {phi_count} points; gradient relative error {fd_worst:e} on {fd_count} samples"),
    );
}

/// Hitting time by sign-change bisection on the curve equation.
fn bisection_hit(s: &StatePoint, u: ControlSign) -> f64 {
    let g = |t: f64| {
        let p = flow(s, u, t);
        p.x - u.value() * 0.25 * p.y * p.y
    };
    let scale = s.norm();
    let s0 = g(1e-9 * scale).signum();
    let dt = 1e-3 * scale;
    let mut t = dt;
    while g(t).signum() == s0 {
        t += dt;
    }
    let (mut lo, mut hi) = (t - dt, t);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid).signum() == s0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_4_chattering_geometry() {
    let m0 = 1e-6;
    let traj = simulate_feedback(&StatePoint::new(-0.25 * m0 * m0, -m0), 10.0, 1.0).unwrap();
    let ys: Vec<f64> = std::iter::once(m0).chain(traj.switch_points.iter().map(|z| z.y.abs())).collect();
    let ratio_worst = ys.windows(2).map(|w| (w[1] / w[0] - SQRT3).abs()).fold(0.0, f64::max);
    let mut hit_worst: f64 = 0.0;
    for arc in &traj.arcs[..traj.switch_points.len()] {
        let oracle = bisection_hit(&arc.start.state(), arc.sign().unwrap());
        hit_worst = hit_worst.max((arc.duration - oracle).abs() / arc.duration);
    }

    let m = 0.1;
    let chat = chattering_from_origin(m, 20, 1.0).unwrap();
    let elapsed = chat.duration() + chat.meta.time_offset.unwrap();
    let mut oracle = chat.meta.time_offset.unwrap();
    for arc in &chat.arcs {
        oracle += bisection_hit(&arc.start.state(), arc.sign().unwrap());
    }
    let target = m * (2.0 + SQRT3);
    let ok = traj.switch_points.len() >= 20
        && ratio_worst <= RATIO_TOL
        && hit_worst <= 1e-9
        && (elapsed - target).abs() <= ELAPSED_TOL
        && (oracle - target).abs() <= ELAPSED_TOL;
    verdict(
        4,
        "chattering geometry",
        ok,
        format!(
            "{} switches, ratio deviation {ratio_worst:e}, bisection mismatch {hit_worst:e}; \
             elapsed {elapsed:.9} (bisection {oracle:.9}) against {target:.9}",
            traj.switch_points.len()
        ),
    );
}

#[test]
fn criterion_5_monotone_growth() {
    let params = calibrated();
    let qlf = WBar(params);
    let trajs = engine_trajectories(&params);
    let worst = trajs
        .iter()
        .map(|(_, t)| growth_margin(t, &qlf, 1e-5).unwrap())
        .fold(f64::INFINITY, f64::min);
    verdict(
        5,
        "monotone growth",
        worst >= -GROWTH_TOL,
        format!("min wbar(phi(t)) - wbar(phi(0)) - t = {worst:e} over {} trajectories, offsets to 1e-5 r", trajs.len()),
    );
}

#[test]
fn criterion_6_time_bound() {
    let params = calibrated();
    let c = speed_bound(params.r);
    let t_end = SolverConfig::default().t_end;
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    for (z, t) in engine_trajectories(&params) {
        if t.duration() >= t_end {
            continue;
        }
        worst = worst.min(t.duration() - time_lower_bound(&z, params.r, c, false).unwrap());
        checked += 1;
    }
    verdict(
        6,
        "time bound",
        checked > 0 && worst >= -TIME_BOUND_TOL,
        format!("min duration - dist/(c+1) = {worst:e} over {checked} unclipped trajectories"),
    );
}

#[test]
fn criterion_7_monotone_cell_trace() {
    let pa = build_ms_cover(8, 0.5, 1.0).unwrap();
    let mut trajs: Vec<Trajectory> = Vec::new();
    for k in 0..12 {
        let theta = (k as f64 + 0.25) * std::f64::consts::PI / 6.0;
        for rho in [0.05, 0.2, 0.35] {
            trajs.push(simulate_feedback(&StatePoint::new(rho * theta.cos(), rho * theta.sin()), 1.0, 0.5).unwrap());
        }
    }
    trajs.push(chattering_from_origin(0.2, 12, 0.5).unwrap());
    let mut decreases = 0;
    let mut samples = 0;
    let mut switch_events = 0;
    let mut strict = 0;
    for t in &trajs {
        let trace = cell_index_trace_clipped(t, &pa, 1e-3).unwrap();
        let s = summarize_trace(&pa, &trace);
        decreases += s.decreases.len();
        samples += s.samples;
        for sp in &t.switch_points {
            let before = t.state_at(sp.t - 1e-7).unwrap();
            let after = t.state_at(sp.t + 1e-7).unwrap();
            let (a, b) = (pa.locate(&before), pa.locate(&after));
            if matches!((a, b), (Location::Green(_), Location::Green(_))) {
                switch_events += 1;
                if pa.compare(&a, &b) == Some(Ordering::Less) {
                    strict += 1;
                }
            }
        }
    }
    let ok = decreases == 0 && samples > 1000 && switch_events > 0 && strict == switch_events;
    verdict(
        7,
        "monotone cell trace",
        ok,
        format!("{decreases} decreases in {samples} samples; strict increase at {strict}/{switch_events} switches"),
    );
}

#[test]
fn criterion_8_convergence() {
    let params = calibrated();
    let pa = engine_pa(&params);
    let qlf = WBar(params);
    let origin = ExtendedPoint::new(0.0, 0.0, 0.0);
    let cfg = SolverConfig::default();
    let (last, rep) = solve_via_limits(&origin, 6, &cfg, |_| pa.clone(), |_| qlf).unwrap();
    let residual_worst = rep.residuals.iter().copied().fold(0.0, f64::max);
    let final_residual = pa.field_residual(&last, 1e-3).unwrap();

    let fam_cfg = SolverConfig { start_offsets: origin_offsets(params.r), ..cfg };
    let fam = offset_family(&origin, &pa, &qlf, &fam_cfg, &OrbitApproach { mu0: params.r }).unwrap();
    let ratio_worst = fam.ratios.iter().copied().fold(0.0, f64::max);
    let decreasing = fam.sup_gaps.windows(2).all(|w| w[1] < w[0]);
    let ok = rep.k_list == vec![1, 2, 3, 4, 5, 6]
        && residual_worst <= RESIDUAL_TOL
        && ratio_worst <= DECADE_RATIO
        && decreasing
        && final_residual <= 1.0 / 6.0
        && rep.pass();
    verdict(
        8,
        "convergence harness",
        ok,
        format!(
            "k=1..6 residuals <= {residual_worst:e}; offset gaps {:?} with worst ratio per decade {ratio_worst:.4}; \
             final residual {final_residual:e}",
            fam.sup_gaps
        ),
    );
}

fn fuller_verify(dir: &std::path::Path, extra: &[&str]) -> (i32, serde_json::Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_fuller"))
        .arg("verify")
        .args(["--out", dir.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap();
    let text = std::fs::read_to_string(dir.join("verify.json")).unwrap();
    (out.status.code().unwrap(), serde_json::from_str(&text).unwrap())
}

fn failed_checks(report: &serde_json::Value) -> Vec<String> {
    report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["name"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn criterion_9_negative_controls() {
    let cover = build_ms_cover(8, 0.5, 1.0).unwrap();
    let lib_field = !validate_approximation(&cover.corrupt_field_sign(), 10, 9).check("field_distance").unwrap().pass;
    let params = calibrated();
    let z = ExtendedPoint::new(-0.25 * params.r, 0.25 * params.r, 0.0);
    let lib_cert = matches!(
        integrate(&z, &engine_pa(&params), &Negated(WBar(params)), &SolverConfig::default()),
        Err(SolverError::CertificateViolation(_))
    );

    let dir = tempfile::tempdir().unwrap();
    let field_dir = dir.path().join("field");
    let cert_dir = dir.path().join("cert");
    let (field_code, field_report) = fuller_verify(&field_dir, &["--corrupt", "field-sign"]);
    let (cert_code, cert_report) = fuller_verify(&cert_dir, &["--corrupt", "wbar-sign"]);
    let field_failed = failed_checks(&field_report);
    let cert_failed = failed_checks(&cert_report);
    let ok = lib_field
        && lib_cert
        && field_code == 1
        && cert_code == 1
        && field_failed.iter().any(|n| n == "field_distance")
        && cert_failed.iter().any(|n| n == "engine_certificate");
    verdict(
        9,
        "negative controls",
        ok,
        format!(
            "field-sign exit {field_code} failing {field_failed:?}; wbar-sign exit {cert_code} failing {cert_failed:?}"
        ),
    );
}
