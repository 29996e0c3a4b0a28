use fuller_core::dynamics::*;
use fuller_core::geometry::*;
use fuller_core::lyapunov::*;
use proptest::prelude::*;

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn wide() -> QlfParams {
    QlfParams { a_bar: 0.6, r: 0.12, rate: RATE }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn h_forms_agree(a in -2.0f64..-1e-3, u in -1.0f64..=1.0) {
        let (lo, hi) = ParabolaGeometry::new(a).unwrap().interval();
        let tau = lo + 0.5 * (u + 1.0) * (hi - lo);
        let d = (h_inner(a, tau).unwrap() - h_closed(a, tau).unwrap()).abs();
        prop_assert!(d <= 1e-12, "a={a} tau={tau} diff={d}");
    }

    #[test]
    fn phi_inverts_the_parabola_family(a in -0.55f64..-1e-3, u in -1.0f64..=1.0) {
        let params = wide();
        let geo = ParabolaGeometry::new(a).unwrap();
        let (lo, hi) = geo.interval();
        let p = geo.point_at(0.5 * (u + 1.0) * (hi - lo) + lo);
        prop_assume!(p.norm() < params.r && p.norm() > NEAR_ORIGIN && p.x < 0.5 * p.y * p.y);
        let got = phi(p.x, p.y, &params).unwrap();
        prop_assert!((got.a - a).abs() <= 1e-9, "a={a} got={}", got.a);
    }

    #[test]
    fn phi_is_holder_at_the_origin(rho in 1e-9f64..0.5, theta in 0.0f64..std::f64::consts::TAU) {
        let params = QlfParams::default();
        let p = StatePoint::new(rho * params.r * theta.cos(), rho * params.r * theta.sin());
        prop_assume!(p.x < 0.5 * p.y * p.y);
        let a = phi(p.x, p.y, &params).unwrap().a;
        let bound = 2f64.sqrt() * (params.a_bar.powi(2) + 16.0).powf(0.25) * p.norm().sqrt();
        prop_assert!(a.abs() <= bound, "|phi|={} bound={bound}", a.abs());
    }

    #[test]
    fn hitting_points_lie_on_the_curve(x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let s = StatePoint::new(x, y);
        let label = classify(&s, DEFAULT_TOL).unwrap();
        let u = match label {
            RegionLabel::LeftOpen => ControlSign::Plus,
            RegionLabel::RightOpen => ControlSign::Minus,
            _ => return Ok(()),
        };
        let t = hitting_time(&s, u).unwrap().unwrap();
        let q = flow(&s, u, t);
        let target = u.value() * 0.25 * q.y * q.y;
        prop_assert!((q.x - target).abs() <= 1e-10 * (1.0 + q.y * q.y));
        prop_assert_eq!(q.y > 0.0, u == ControlSign::Plus);
    }

    #[test]
    fn feedback_switches_grow_by_sqrt3(m in 1e-4f64..1e-2) {
        let s = StatePoint::new(-0.25 * m * m, -m);
        let traj = simulate_feedback(&s, 10.0, 1.0).unwrap();
        prop_assert!(traj.switch_points.len() >= 4);
        let mut prev = m;
        for z in &traj.switch_points {
            let ratio = z.y.abs() / prev;
            prop_assert!((ratio - SQRT3).abs() <= 1e-9, "ratio {ratio}");
            prev = z.y.abs();
        }
        prop_assert!(traj.check_invariants().is_ok());
    }

    #[test]
    fn chattering_is_self_similar(m in 1e-3f64..0.2, lambda in 0.1f64..2.0) {
        let a = chattering_from_origin(m, 12, 1.0).unwrap();
        let b = chattering_from_origin(m * lambda, 12, 10.0).unwrap();
        let scaled = a.scaled(lambda);
        for (p, q) in scaled.switch_points.iter().zip(&b.switch_points) {
            prop_assert!(p.dist(q) <= 1e-12 * (1.0 + lambda));
        }
        let elapsed = a.duration() + a.meta.time_offset.unwrap();
        prop_assert!((elapsed - m * (2.0 + SQRT3)).abs() <= 1e-12);
    }

    #[test]
    fn wbar_grows_along_the_feedback(rho in 0.05f64..0.9, theta in 0.0f64..std::f64::consts::TAU) {
        let params = QlfParams::default();
        let s = StatePoint::new(rho * params.r * theta.cos(), rho * params.r * theta.sin());
        let traj = simulate_feedback(&s, 1.0, params.r).unwrap();
        let w0 = wbar(&traj.start, &params).unwrap();
        for (z, _) in traj.samples(Some(1e-4)) {
            if !params.contains(&z.state()) {
                continue;
            }
            prop_assert!(wbar(&z, &params).unwrap() - w0 - z.t >= -1e-6);
        }
    }
}
