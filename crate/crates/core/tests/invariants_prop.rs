use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subvar_core::analysis::{stencil_derivatives, stencil_times};
use subvar_core::geometry::{MetricSource, PointContext};
use subvar_core::jet::{Jet2, Scalar};
use subvar_core::linalg::Mat;
use subvar_core::models::{build_hopf_s3, build_hopf_s7};
use subvar_core::variation::{b_tensor, projected_lift_gram, submersion_residual, BaseFrame, IntegratorSettings, VariationSpec, VariedPoint};
use subvar_core::fields::{ScalarExpr, VerticalField};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jet_chain_rule(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        // f = sin(x y) exp(x) / (1 + y^2)
        let (a, b) = (Jet2::seed(x, 0, 2), Jet2::seed(y, 1, 2));
        let f = (a * b).sin() * a.exp() * (b * b + 1.0).recip();
        let q = 1.0 / (1.0 + y * y);
        let (s, c, e) = ((x * y).sin(), (x * y).cos(), x.exp());
        let fx = (y * c + s) * e * q;
        let fy = x * c * e * q - s * e * 2.0 * y * q * q;
        let fxx = (-y * y * s + 2.0 * y * c + s) * e * q;
        prop_assert!((f.value() - s * e * q).abs() < 1e-12);
        prop_assert!((f.grad()[0] - fx).abs() < 1e-10);
        prop_assert!((f.grad()[1] - fy).abs() < 1e-10);
        prop_assert!((f.hess(0, 0) - fxx).abs() < 1e-9);
        prop_assert!((f.hess(0, 1) - f.hess(1, 0)).abs() < 1e-12);
    }

    #[test]
    fn sectional_curvature_depends_only_on_plane(seed in 0u64..1000, a in 0.2f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in 0.2f64..2.0) {
        prop_assume!((a * d - b * c).abs() > 0.1);
        let m = build_hopf_s7();
        let x = m.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let geo = PointContext::new(&m, &x).unwrap().geometry(MetricSource::Reference).unwrap();
        let u: Vec<f64> = geo.frame_vector(0).iter().zip(geo.frame_vector(4)).map(|(p, q)| p.v + 0.5 * q.v).collect();
        let w: Vec<f64> = geo.frame_vector(5).iter().map(|p| p.v).collect();
        let s0 = geo.sectional(&u, &w).unwrap();
        let u2: Vec<f64> = u.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let w2: Vec<f64> = u.iter().zip(&w).map(|(p, q)| c * p + d * q).collect();
        prop_assert!((geo.sectional(&u2, &w2).unwrap() - s0).abs() < 1e-9);
        // round S^7 of radius 1
        prop_assert!((s0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn preservation_along_random_hopf_s3_paths(seed in 0u64..1000, c in -1.0f64..1.0, t in -0.6f64..0.6) {
        let m = build_hopf_s3();
        let x = m.sample_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = ScalarExpr::sum(vec![ScalarExpr::constant(c), ScalarExpr::coord(1), ScalarExpr::base_coord(1)]);
        let spec = VariationSpec::constant(vec![VerticalField::scaled(f, VerticalField::Frame { index: 0 }), VerticalField::scaled(ScalarExpr::coord(3), VerticalField::Frame { index: 0 })], BaseFrame::Aligned);
        let vp = VariedPoint::new(&m, &x, &spec, IntegratorSettings::default()).unwrap();
        let st = vp.state(t).unwrap().values();
        let lam = vp.var.lambda.eval(t).values();
        prop_assert!(submersion_residual(&st.full(), &b_tensor(&st, &lam), m.n()) < 1e-8);
        prop_assert!(projected_lift_gram(&st, &vp.var.lift.values()).sub(&Mat::identity(m.p())).max_abs() < 1e-8);
    }

    #[test]
    fn stencil_exact_on_quartics(c in proptest::collection::vec(-3.0f64..3.0, 5), t in -1.0f64..1.0) {
        let f = |s: f64| c[0] + c[1] * s + c[2] * s * s + c[3] * s.powi(3) + c[4] * s.powi(4);
        let samples: Vec<f64> = stencil_times(t, 1e-2).iter().map(|s| f(*s)).collect();
        let d = stencil_derivatives(&samples, 1e-2);
        let d1 = c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t + 4.0 * c[4] * t.powi(3);
        let d2 = 2.0 * c[2] + 6.0 * c[3] * t + 12.0 * c[4] * t * t;
        prop_assert!((d.d1 - d1).abs() < 1e-8);
        prop_assert!((d.d2 - d2).abs() < 1e-5);
    }
}
