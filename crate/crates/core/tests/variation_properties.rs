use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subvar_core::extrinsic::{analytic_dt_h, analytic_dt_mean_curvature, FiberGeometry};
use subvar_core::fields::{ScalarExpr, VerticalField};
use subvar_core::geometry::MetricSource;
use subvar_core::linalg::Mat;
use subvar_core::models::{build_model, ModelSpec};
use subvar_core::variation::{b_tensor, projected_lift, projected_lift_gram, submersion_residual, BaseFrame, IntegratorSettings, VariationSpec, VariedPoint};

fn models() -> Vec<ModelSpec> {
    vec![
        build_model("flat-torus", 2, 2).unwrap(),
        build_model("warped-torus", 2, 1).unwrap(),
        build_model("hopf-s3", 1, 2).unwrap(),
        build_model("hopf-s7", 3, 4).unwrap(),
    ]
}

fn random_spec(m: &ModelSpec, rng: &mut ChaCha8Rng) -> VariationSpec {
    let catalog = m.special_fields();
    let fields = (0..m.p())
        .map(|_| {
            let f = catalog[rng.gen_range(0..catalog.len())].field.clone();
            let c = rng.gen_range(-0.8..0.8);
            let k = rng.gen_range(0..m.ambient_dim());
            VerticalField::scaled(ScalarExpr::sum(vec![ScalarExpr::constant(c), ScalarExpr::scale(0.5, ScalarExpr::coord(k))]), f)
        })
        .collect();
    VariationSpec::constant(fields, BaseFrame::Aligned)
}

#[test]
fn preservation_and_horizontal_isometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in models() {
        for _ in 0..5 {
            let x0 = m.sample_point(&mut rng);
            let spec = random_spec(&m, &mut rng);
            let vp = VariedPoint::new(&m, &x0, &spec, IntegratorSettings::default()).unwrap();
            let t = rng.gen_range(-0.5..0.5);
            let st = vp.state(t).unwrap().values();
            let lam = vp.var.lambda.eval(t).values();
            let r = submersion_residual(&st.full(), &b_tensor(&st, &lam), m.n());
            assert!(r < 1e-8, "{} residual {r}", m.id());
            let gram = projected_lift_gram(&st, &vp.var.lift.values());
            assert!(gram.sub(&Mat::identity(m.p())).max_abs() < 1e-8);
        }
    }
}

#[test]
fn projected_lift_moves_by_minus_v() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in models() {
        let x0 = m.sample_point(&mut rng);
        let spec = random_spec(&m, &mut rng);
        let vp = VariedPoint::new(&m, &x0, &spec, IntegratorSettings::default()).unwrap();
        let (t, d) = (0.2, 1e-4);
        let s = vp.states(&[t - d, t + d]).unwrap();
        let lift = vp.var.lift.values();
        for i in 0..m.p() {
            let a = projected_lift(&s[0].values(), &lift, i);
            let b = projected_lift(&s[1].values(), &lift, i);
            let v = vp.var.field_derivative(i, 0, t);
            for k in 0..m.dim() {
                let fd = (b[k] - a[k]) / (2.0 * d);
                let want = if k < m.n() { -v[k].v } else { 0.0 };
                assert!((fd - want).abs() < 1e-5, "{} {k}: {fd} vs {want}", m.id());
            }
        }
    }
}

#[test]
fn killing_specs_keep_fibers_totally_geodesic() {
    let m = build_model("hopf-s7", 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = m.sample_point(&mut rng);
    let fields = vec![
        VerticalField::scaled(ScalarExpr::base_coord(1), VerticalField::Xi { index: 0 }),
        VerticalField::Frame { index: 2 },
        VerticalField::scaled(ScalarExpr::constant(-0.7), VerticalField::Xi { index: 1 }),
    ];
    let spec = VariationSpec::constant(fields, BaseFrame::Aligned);
    let vp = VariedPoint::new(&m, &x0, &spec, IntegratorSettings::default()).unwrap();
    for st in vp.states(&[-0.5, 0.25, 0.5]).unwrap() {
        let fg = FiberGeometry::new(vp.geometry(&st).unwrap());
        assert!(fg.h_norm2().sqrt() < 1e-7, "{}", fg.h_norm2());
        assert!(fg.report(st.t).unwrap().a_residual < 1e-8);
    }
}

#[test]
fn first_variation_of_h_and_mean_curvature() {
    let m = build_model("hopf-s7", 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = IntegratorSettings::default();
    for _ in 0..3 {
        let x0 = m.sample_point(&mut rng);
        let f = ScalarExpr::sum(vec![ScalarExpr::constant(0.3), ScalarExpr::coord(rng.gen_range(0..8))]);
        let spec = VariationSpec::constant(vec![VerticalField::scaled(f, VerticalField::Xi { index: 0 }), VerticalField::Frame { index: 1 }], BaseFrame::Aligned);
        let (t, d) = (0.1, 1e-4);
        let vp = VariedPoint::new(&m, &x0, &spec, settings).unwrap();
        let s = vp.states(&[t - d, t, t + d]).unwrap();
        let fg: Vec<FiberGeometry> = s.iter().map(|st| FiberGeometry::new(vp.geometry(st).unwrap())).collect();
        let (h0, h1) = (fg[0].h(), fg[2].h());
        let an = analytic_dt_h(&m, &x0, &spec, t, settings).unwrap();
        let mut scale = 0.0f64;
        let mut err = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                let fd: Vec<f64> = h0[a][b].iter().zip(&h1[a][b]).map(|(u, v)| (v - u) / (2.0 * d)).collect();
                let chart = fg[1].geo.field_from_frame(&fd);
                let fd_h = fg[1].horizontal_frame(&chart);
                for (x, y) in fd_h.iter().zip(&an[a][b]) {
                    err = err.max((x - y).abs());
                    scale = scale.max(y.abs());
                }
            }
        }
        assert!(scale > 1e-2 && err < 1e-5 * scale, "err {err} scale {scale}");
        let (m0, m1) = (fg[0].mean_curvature(), fg[2].mean_curvature());
        let fd: Vec<f64> = m0.iter().zip(&m1).map(|(u, v)| (v - u) / (2.0 * d)).collect();
        let fd_h = fg[1].horizontal_frame(&fg[1].geo.field_from_frame(&fd));
        let an = analytic_dt_mean_curvature(&m, &x0, &spec, t, settings).unwrap();
        let sc = an.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let e = fd_h.iter().zip(&an).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
        assert!(sc > 1e-2 && e < 1e-5 * sc, "H err {e} scale {sc}");
    }
}

#[test]
fn divergence_free_specs_keep_fibers_minimal() {
    let m = build_model("hopf-s7", 3, 4).unwrap();
    let curl = m.special_field("curl").unwrap().field;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let x0 = m.sample_point(&mut rng);
        let spec = VariationSpec::constant(vec![curl.clone(), VerticalField::scaled(ScalarExpr::base_coord(2), curl.clone())], BaseFrame::Aligned);
        let vp = VariedPoint::new(&m, &x0, &spec, IntegratorSettings::default()).unwrap();
        let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference).unwrap();
        assert!(fg0.vertical_divergence(&vp.vertical_field(0, 0, 0.0)).abs() < 1e-9);
        let st = vp.state(0.5).unwrap();
        let fg = FiberGeometry::new(vp.geometry(&st).unwrap());
        let hm = fg.mean_curvature();
        assert!(fg.inner_frame(&hm, &hm).sqrt() < 1e-7);
    }
}
