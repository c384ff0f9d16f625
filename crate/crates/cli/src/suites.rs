use crate::config::{ScenarioConfig, Suite};
use crate::report::{num, Check, Relation, RunReport, Table, ToleranceLadder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use subvar_core::analysis::{
    criticality_h, criticality_mean, functional_report, higher_order_flatness, hopf_nonconstancy_experiment, horizontal_sec_variation, killing_stability,
    natural_base_frame, oneill_closure, vertizontal_sec_variation, AnalysisSettings, HopfExperimentReport, CRITICAL_TOL,
};
use subvar_core::extrinsic::FiberGeometry;
use subvar_core::fields::{ScalarExpr, VerticalField};
use subvar_core::geometry::{MetricSource, PointContext};
use subvar_core::models::{FieldClass, ModelKind, ModelSpec, SpecialField};
use subvar_core::variation::{b_tensor, evolve_frame, projected_lift_gram, submersion_residual, VariationSpec, VariedPoint};
use subvar_core::{Error, Result};

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    model: ModelSpec,
    an: AnalysisSettings,
    tol: ToleranceLadder,
    points: Vec<Vec<f64>>,
    report: RunReport,
}

/// Runs the suites selected by `cfg.suite` and collects checks, tables and notes.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points = (0..cfg.grid.points).map(|_| model.sample_point(&mut rng)).collect();
    let suites = cfg.suite.expand();
    let report = RunReport {
        schema_version: crate::config::SCHEMA_VERSION,
        model: model_label(&model),
        suites: suites.iter().map(|s| s.name().to_string()).collect(),
        seed: cfg.seed,
        tolerances: ToleranceLadder::default(),
        checks: vec![],
        details: Default::default(),
        notes: vec![],
        tables: vec![],
    };
    let mut r = Runner { cfg, model, an: cfg.analysis(), tol: ToleranceLadder::default(), points, report };
    for s in &suites {
        // Each suite draws from its own stream so a single-suite run matches the same suite inside `all`.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(*s as u64 + 1));
        match s {
            Suite::Preservation => r.preservation(&mut rng)?,
            Suite::Functionals => r.functionals(&mut rng)?,
            Suite::Curvature => r.curvature(&mut rng)?,
            Suite::HopfExperiment => r.hopf()?,
            Suite::All => unreachable!("expanded"),
        }
    }
    Ok(r.report)
}

fn model_label(m: &ModelSpec) -> String {
    format!("{}(n={},p={})", m.id(), m.n(), m.p())
}

fn pid(k: usize) -> String {
    format!("p{k}")
}

/// `c + a * base_coord(k)` with random `c`, `a`.
fn basic_coefficient<R: Rng>(model: &ModelSpec, rng: &mut R) -> ScalarExpr {
    ScalarExpr::sum(vec![
        ScalarExpr::constant(rng.gen_range(-1.0..1.0)),
        ScalarExpr::scale(rng.gen_range(-0.8..0.8), ScalarExpr::base_coord(rng.gen_range(0..model.base_ambient_dim()))),
    ])
}

fn fields_of(model: &ModelSpec, class: FieldClass) -> Vec<SpecialField> {
    model.special_fields().into_iter().filter(|f| f.class == class).collect()
}

/// Fiberwise Killing field commuting with every catalog Killing field of the frame type.
fn commuting_family(model: &ModelSpec) -> Option<(VerticalField, VerticalField)> {
    match model.kind {
        ModelKind::HopfS7 => Some((VerticalField::Xi { index: 0 }, VerticalField::Frame { index: 1 })),
        _ => {
            let k = fields_of(model, FieldClass::Killing);
            let first = k.first()?.field.clone();
            let other = k.last()?.field.clone();
            Some((first, other))
        }
    }
}

fn rel_check_bound(analytic: f64, rel: f64, abs: f64) -> f64 {
    rel * analytic.abs() + abs
}

impl Runner<'_> {
    fn check(&mut self, suite: &str, name: &str, subject: impl Into<String>, t: Option<f64>, value: f64, rel: Relation, bound: f64) {
        self.report.checks.push(Check::new(suite, name, subject, t, value, rel, bound));
    }

    fn note(&mut self, s: impl Into<String>) {
        self.report.notes.push(s.into());
    }

    fn preservation(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        const S: &str = "preservation";
        let (m, tol) = (self.model.clone(), self.tol.clone());
        let mut table = Table::new("preservation", &["model", "scenario", "point", "t", "submersion_residual", "lift_gram_deviation", "frame_gram_deviation"]);
        let label = model_label(&m);
        for (k, x) in self.points.clone().iter().enumerate() {
            let spec = self.cfg.spec_at(&m, x, rng)?;
            let vp = VariedPoint::new(&m, x, &spec, self.an.integrator)?;
            let times = self.cfg.grid.times.clone();
            for (t, st) in times.iter().zip(vp.states(&times)?) {
                let s = st.values();
                let lam = vp.var.lambda.eval(*t).values();
                let sub = submersion_residual(&s.full(), &b_tensor(&s, &lam), m.n());
                let gram = projected_lift_gram(&s, &vp.var.lift.values()).sub(&subvar_core::linalg::Mat::identity(m.p())).max_abs();
                let frame = evolve_frame(&m, x, &spec, *t, self.an.integrator)?;
                let g = s.full();
                let mut fdev = 0.0f64;
                for (a, u) in frame.vectors.iter().enumerate() {
                    for (b, v) in frame.vectors.iter().enumerate() {
                        let gv = g.mul_vec(v);
                        let ip: f64 = u.iter().zip(&gv).map(|(p, q)| p * q).sum();
                        fdev = fdev.max((ip - if a == b { 1.0 } else { 0.0 }).abs());
                    }
                }
                self.check(S, "submersion-residual", pid(k), Some(*t), sub, Relation::Below, tol.preservation);
                self.check(S, "horizontal-isometry", pid(k), Some(*t), gram, Relation::Below, tol.preservation);
                self.check(S, "frame-orthonormality", pid(k), Some(*t), fdev, Relation::Below, tol.preservation);
                table.push(vec![label.clone(), "configured".into(), pid(k), num(*t), num(sub), num(gram), num(fdev)]);
            }
        }
        self.report.tables.push(table);
        let times: Vec<f64> = self.cfg.grid.times.iter().cloned().filter(|t| t.abs() <= 0.5).collect();
        for class in [FieldClass::Killing, FieldClass::DivergenceFree, FieldClass::ConformalKilling] {
            let Some(field) = fields_of(&m, class).into_iter().next() else { continue };
            let name = match class {
                FieldClass::Killing => "killing-keeps-h",
                FieldClass::DivergenceFree => "divergence-free-keeps-mean",
                _ => "conformal-keeps-umbilical",
            };
            for (k, x) in self.points.clone().iter().enumerate() {
                let fields = (0..m.p()).map(|_| VerticalField::scaled(basic_coefficient(&m, rng), field.field.clone())).collect();
                let spec = VariationSpec::constant(fields, natural_base_frame(&m, x)?);
                let vp = VariedPoint::new(&m, x, &spec, self.an.integrator)?;
                let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
                let mean_norm = |fg: &FiberGeometry| {
                    let h = fg.mean_curvature();
                    fg.inner_frame(&h, &h).sqrt()
                };
                let (h0, m0, u0) = (fg0.h_norm2().sqrt(), mean_norm(&fg0), fg0.umbilicity_defect());
                if class == FieldClass::ConformalKilling && u0 > tol.geometry {
                    self.note(format!("{name}: {} baseline not umbilical ({u0:e}), skipped", pid(k)));
                    continue;
                }
                for (t, st) in times.iter().zip(vp.states(&times)?) {
                    let fg = FiberGeometry::new(vp.geometry(&st)?);
                    let v = match class {
                        FieldClass::Killing => (fg.h_norm2().sqrt() - h0).abs(),
                        FieldClass::DivergenceFree => (mean_norm(&fg) - m0).abs(),
                        _ => fg.umbilicity_defect(),
                    };
                    self.check(S, name, format!("{}:{}", pid(k), field.name), Some(*t), v, Relation::Below, tol.geometry);
                }
            }
        }
        Ok(())
    }

    fn functionals(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        const S: &str = "functionals";
        let (m, tol, an) = (self.model.clone(), self.tol.clone(), self.an);
        let label = model_label(&m);
        let mut table = Table::new("functionals", &["model", "scenario", "point", "t", "j_h", "j_mean"]);
        let mut crit_rows = Vec::new();
        for (k, x) in self.points.clone().iter().enumerate() {
            let ch = criticality_h(&m, x, &an, self.cfg.seed.wrapping_add(k as u64))?;
            let cm = criticality_mean(&m, x, &an)?;
            self.check(S, "criticality-pointwise-integral-agree", pid(k), None, if ch.consistent { 1.0 } else { 0.0 }, Relation::Above, 0.5);
            crit_rows.push(json!({ "point": pid(k), "criticality_h": ch.pointwise, "integral_max": ch.integral_max, "criticality_mean": cm }));
            let nspec = if self.cfg.variation.fields.is_empty() && self.cfg.variation.lambda.is_none() { self.cfg.variation.random_specs } else { 1 };
            for j in 0..nspec {
                let spec = self.cfg.spec_at(&m, x, rng)?;
                let r = functional_report(&m, x, &spec, &an)?;
                let subject = format!("{}:spec{j}", pid(k));
                for (t, (a, b)) in r.series.times.iter().zip(r.series.jh.iter().zip(&r.series.jmean)).take(9) {
                    table.push(vec![label.clone(), format!("spec{j}"), pid(k), num(*t), num(*a), num(*b)]);
                }
                for (tag, d, crit) in [("jh", r.jh, r.criticality_h), ("jmean", r.jmean, r.criticality_mean)] {
                    let gap = (d.d1_3pt - d.d1_5pt).abs();
                    let allowed = 1e-5 * d.d1_3pt.abs().max(d.d1_5pt.abs()) + 1e-9;
                    self.check(S, &format!("{tag}-stencil-consistency"), subject.clone(), Some(0.0), gap, Relation::Below, allowed);
                    if crit < CRITICAL_TOL {
                        self.check(S, &format!("{tag}-second-variation-nonnegative"), subject.clone(), Some(0.0), d.d2_fd, Relation::AtLeast, -tol.nonnegativity);
                        let bound = rel_check_bound(d.d2_analytic, tol.second_variation_rel, tol.second_variation_abs);
                        self.check(S, &format!("{tag}-second-variation-formula"), subject.clone(), Some(0.0), (d.d2_fd - d.d2_analytic).abs(), Relation::Below, bound);
                    } else if j == 0 {
                        self.note(format!("{tag}: baseline at {} is not critical (residual {crit:e}); second variation not compared", pid(k)));
                    }
                }
            }
        }
        self.report.details.insert("criticality".into(), Value::Array(crit_rows));
        self.report.tables.push(table);
        self.flatness()
    }

    fn flatness(&mut self) -> Result<()> {
        const S: &str = "functionals";
        let m = self.model.clone();
        let (Some(kf), Some(gf)) = (fields_of(&m, FieldClass::Killing).into_iter().next(), fields_of(&m, FieldClass::Generic).into_iter().next()) else {
            self.note("flatness: catalog lacks a Killing or generic field, skipped");
            return Ok(());
        };
        let x = self.points[0].clone();
        let base = natural_base_frame(&m, &x)?;
        let killing = VariationSpec::FieldPairs { fields: vec![vec![kf.field.clone(), kf.field.clone()]], base_frame: base.clone() };
        let mixed = VariationSpec::FieldPairs { fields: vec![vec![kf.field.clone(), gf.field.clone()]], base_frame: base };
        let a = match higher_order_flatness(&m, &x, &killing, 4, &self.an) {
            Err(Error::NonCritical(r)) => {
                self.note(format!("flatness: baseline not critical ({r:e}), skipped"));
                return Ok(());
            }
            other => other?,
        };
        let b = higher_order_flatness(&m, &x, &mixed, 4, &self.an)?;
        let tol = self.tol.flat;
        for (r, d) in a.derivatives.iter().enumerate() {
            self.check(S, "flatness-killing-pair", format!("{}:order{}", kf.name, r + 1), Some(0.0), d.abs(), Relation::Below, tol);
        }
        for (r, d) in b.derivatives.iter().take(3).enumerate() {
            self.check(S, "flatness-killing-then-generic-low", format!("{}:order{}", gf.name, r + 1), Some(0.0), d.abs(), Relation::Below, tol);
        }
        self.check(S, "flatness-killing-then-generic-fourth", gf.name.clone(), Some(0.0), b.derivatives[3].abs(), Relation::Above, 1e-3);
        self.check(S, "flatness-consistent", kf.name.clone(), None, if a.consistent && b.consistent { 1.0 } else { 0.0 }, Relation::Above, 0.5);
        self.report.details.insert("flatness".into(), json!({ "killing": a, "killing_then_generic": b }));
        Ok(())
    }

    fn curvature(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        const S: &str = "curvature";
        let (m, tol, an) = (self.model.clone(), self.tol.clone(), self.an);
        let points = self.points.clone();
        let mut rows = Table::new("curvature", &["model", "scenario", "point", "t", "plane", "sec", "d1", "d1_fd", "d2", "d2_fd"]);
        let label = model_label(&m);
        if m.p() >= 2 {
            let mut oneill = Vec::new();
            for (k, x) in points.iter().enumerate() {
                let o = oneill_closure(&m, x)?;
                self.check(S, "oneill-identity", pid(k), Some(0.0), o.residual, Relation::Below, tol.identity);
                oneill.push(o);
            }
            self.report.details.insert("oneill".into(), json!(oneill));
            for (k, x) in points.iter().enumerate() {
                let spec = self.cfg.spec_at(&m, x, rng)?;
                for t in [0.0, 0.1] {
                    let r = horizontal_sec_variation(&m, x, &spec, 0, 1, t, &an)?;
                    let sw = horizontal_sec_variation(&m, x, &spec, 1, 0, t, &an)?;
                    let subject = pid(k);
                    self.check(S, "horizontal-d1", subject.clone(), Some(t), (r.d1_fd - r.d1).abs(), Relation::Below, rel_check_bound(r.d1, tol.curvature_rel, 1e-8));
                    self.check(S, "horizontal-d2", subject.clone(), Some(t), (r.d2_fd - r.d2).abs(), Relation::Below, rel_check_bound(r.d2, tol.curvature_rel, 1e-8));
                    self.check(S, "horizontal-oneill-at-t", subject.clone(), Some(t), r.identity_residual, Relation::Below, tol.identity);
                    let swap = (sw.sec - r.sec).abs().max((sw.d1 - r.d1).abs()).max((sw.d2 - r.d2).abs());
                    self.check(S, "horizontal-swap-symmetry", subject.clone(), Some(t), swap, Relation::Below, 1e-9);
                    rows.push(vec![label.clone(), "configured".into(), subject, num(t), "horizontal(0,1)".into(), num(r.sec), num(r.d1), num(r.d1_fd), num(r.d2), num(r.d2_fd)]);
                }
            }
            if let Some((v, _)) = commuting_family(&m) {
                for (k, x) in points.iter().enumerate() {
                    let fields = (0..m.p()).map(|_| VerticalField::scaled(basic_coefficient(&m, rng), v.clone())).collect();
                    let spec = VariationSpec::constant(fields, natural_base_frame(&m, x)?);
                    let r = horizontal_sec_variation(&m, x, &spec, 0, 1, 0.0, &an)?;
                    self.check(S, "horizontal-sign-when-brackets-vanish", pid(k), Some(0.0), r.d2, Relation::Below, tol.nonnegativity);
                }
            }
        }
        self.vertizontal(rng, &mut rows)?;
        self.report.tables.push(rows);
        self.stability(rng)
    }

    fn vertizontal(&mut self, rng: &mut ChaCha8Rng, rows: &mut Table) -> Result<()> {
        const S: &str = "curvature";
        let (m, tol, an) = (self.model.clone(), self.tol.clone(), self.an);
        let killing: Vec<VerticalField> = fields_of(&m, FieldClass::Killing).into_iter().map(|f| f.field).collect();
        if killing.is_empty() {
            self.note("vertizontal: catalog has no Killing fields, skipped");
            return Ok(());
        }
        let label = model_label(&m);
        let pick = |rng: &mut ChaCha8Rng| VerticalField::scaled(basic_coefficient(&m, rng), killing[rng.gen_range(0..killing.len())].clone());
        for (k, x) in self.points.clone().iter().enumerate() {
            let ctx = PointContext::new(&m, x)?;
            let h0 = FiberGeometry::at(&ctx, MetricSource::Reference)?.h_norm2().sqrt();
            if h0 > tol.totally_geodesic {
                self.note(format!("vertizontal: fibers at {} are not totally geodesic (|h| = {h0:e}), skipped", pid(k)));
                continue;
            }
            let u: Vec<f64> = (0..m.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let moving = VariationSpec::FieldPairs {
                fields: (0..m.p()).map(|_| vec![pick(rng), pick(rng)]).collect(),
                base_frame: natural_base_frame(&m, x)?,
            };
            let still = VariationSpec::constant((0..m.p()).map(|_| pick(rng)).collect(), natural_base_frame(&m, x)?);
            for t in [0.0, 0.1] {
                let r = vertizontal_sec_variation(&m, x, &moving, 0, &u, t, &an)?;
                self.check(S, "vertizontal-d1", pid(k), Some(t), (r.d1_fd - r.d1).abs(), Relation::Below, rel_check_bound(r.d1, tol.curvature_rel, 1e-8));
                self.check(S, "vertizontal-d2", pid(k), Some(t), (r.d2_fd - r.d2).abs(), Relation::Below, rel_check_bound(r.d2, tol.curvature_rel, 1e-8));
                self.check(S, "vertizontal-baseline-identity", pid(k), Some(t), r.identity_residual, Relation::Below, tol.identity);
                rows.push(vec![label.clone(), "moving".into(), pid(k), num(t), "vertizontal(0,U)".into(), num(r.sec), num(r.d1), num(r.d1_fd), num(r.d2), num(r.d2_fd)]);
                let s = vertizontal_sec_variation(&m, x, &still, 0, &u, t, &an)?;
                self.check(S, "vertizontal-d2", format!("{}:static", pid(k)), Some(t), (s.d2_fd - s.d2).abs(), Relation::Below, rel_check_bound(s.d2, tol.curvature_rel, 1e-8));
                self.check(S, "vertizontal-sign-static-fields", pid(k), Some(t), s.d2_fd, Relation::AtLeast, -tol.nonnegativity);
                rows.push(vec![label.clone(), "static".into(), pid(k), num(t), "vertizontal(0,U)".into(), num(s.sec), num(s.d1), num(s.d1_fd), num(s.d2), num(s.d2_fd)]);
            }
            // Fixed static probe cycling through the Killing catalog; non-commuting whenever the catalog has two fields.
            if killing.len() > 1 {
                let probe = VariationSpec::constant((0..m.p()).map(|i| killing[i % killing.len()].clone()).collect(), natural_base_frame(&m, x)?);
                let s = vertizontal_sec_variation(&m, x, &probe, 0, &u, 0.1, &an)?;
                self.check(S, "vertizontal-d2", format!("{}:probe", pid(k)), Some(0.1), (s.d2_fd - s.d2).abs(), Relation::Below, rel_check_bound(s.d2, tol.curvature_rel, 1e-8));
                self.check(S, "vertizontal-sign-static-fields", format!("{}:probe", pid(k)), Some(0.1), s.d2_fd, Relation::AtLeast, -tol.nonnegativity);
            }
            if let Some((v, _)) = commuting_family(&m) {
                let spec = VariationSpec::constant((0..m.p()).map(|_| VerticalField::scaled(basic_coefficient(&m, rng), v.clone())).collect(), natural_base_frame(&m, x)?);
                let r = vertizontal_sec_variation(&m, x, &spec, 0, &u, 0.1, &an)?;
                self.check(S, "vertizontal-sign-commuting-static-fields", pid(k), Some(0.1), r.d2_fd, Relation::AtLeast, -tol.nonnegativity);
            }
        }
        if self.report.checks.iter().any(|c| c.name == "vertizontal-sign-static-fields" && !c.passed) {
            self.note(
                "vertizontal-sign-static-fields: d2 sec keeps the terms 2 tau_j g([V_i, V_j], U), which are nonzero for \
                 non-commuting Killing fields; the sign holds for commuting fields (vertizontal-sign-commuting-static-fields)",
            );
        }
        Ok(())
    }

    fn stability(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        const S: &str = "curvature";
        let (m, tol, an) = (self.model.clone(), self.tol.clone(), self.an);
        let Some((v, kfield)) = commuting_family(&m) else {
            self.note("killing stability: catalog has no Killing fields, skipped");
            return Ok(());
        };
        let times: Vec<f64> = self.cfg.grid.times.iter().cloned().filter(|t| t.abs() <= 0.5).collect();
        let x = self.points[0].clone();
        let fields = (0..m.p()).map(|_| VerticalField::scaled(basic_coefficient(&m, rng), v.clone())).collect();
        let spec = VariationSpec::constant(fields, natural_base_frame(&m, &x)?);
        let r = killing_stability(&m, &self.points, &spec, &kfield, &times, &an)?;
        self.check(S, "killing-stability-commuting", "grid", None, r.lie_full, Relation::Below, tol.killing_stability);
        let mut details = json!({ "commuting": r });
        if let ModelKind::HopfS7 = m.kind {
            let other = VariationSpec::constant(
                (0..m.p()).map(|i| VerticalField::Frame { index: i % 3 }).collect(),
                natural_base_frame(&m, &x)?,
            );
            let r2 = killing_stability(&m, &self.points, &other, &kfield, &times, &an)?;
            self.check(S, "killing-stability-lie-identity", "grid", None, r2.identity_residual, Relation::Below, tol.lie_identity);
            details["non_commuting"] = json!(r2);
        }
        self.report.details.insert("killing_stability".into(), details);
        Ok(())
    }

    fn hopf(&mut self) -> Result<()> {
        const S: &str = "hopf-experiment";
        if !matches!(self.model.kind, ModelKind::HopfS7) {
            self.note(format!("hopf-experiment runs on hopf-s7 only; skipped for {}", self.model.id()));
            return Ok(());
        }
        let r = hopf_nonconstancy_experiment(&self.cfg.hopf, &self.an)?;
        let tol = self.tol.clone();
        self.check(S, "dt-sec-fiber-spread-ratio", "x0", Some(0.0), r.dt_ratio, Relation::Above, tol.hopf_ratio);
        self.check(S, "sec-fiber-spread-at-probe", "x0", Some(self.cfg.hopf.t_probe), r.sec_spread, Relation::Above, tol.hopf_spread);
        self.check(S, "totally-geodesic-along-run", "x0", None, r.h_max, Relation::Below, tol.totally_geodesic);
        self.check(S, "dt-sec-matches-fd", "x0", Some(0.0), r.fd_error, Relation::Below, tol.first_variation_rel);
        self.check(S, "sec-constant-at-start", "x0", Some(0.0), r.sec0_spread, Relation::Below, tol.identity);
        self.report.tables.push(profile_table(&r, &[]).expect("all quantities"));
        let mut sweep = Table::new("kappa_sweep", &["kappa", "dt_ratio", "sec_spread", "positivity_margin", "passed"]);
        for k in &r.sweep {
            sweep.push(vec![num(k.kappa), num(k.dt_ratio), num(k.sec_spread), num(k.positivity_margin), k.passed.to_string()]);
        }
        self.report.tables.push(sweep);
        let mut summary = r.clone();
        summary.profile.clear();
        self.report.details.insert("hopf_experiment".into(), json!(summary));
        Ok(())
    }
}

/// Quantities available in fiber profiles.
pub const PROFILE_QUANTITIES: [&str; 4] = ["sec-t0", "sec-probe", "dt-sec", "h-norm"];

/// Fiber profile table: fiber parameters followed by the requested quantities (all when empty).
pub fn profile_table(r: &HopfExperimentReport, quantities: &[String]) -> Result<Table> {
    let chosen: Vec<&str> = if quantities.is_empty() {
        PROFILE_QUANTITIES.to_vec()
    } else {
        quantities
            .iter()
            .map(|q| {
                PROFILE_QUANTITIES
                    .iter()
                    .find(|p| **p == q.as_str())
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("unknown quantity '{q}' (known: {})", PROFILE_QUANTITIES.join(", "))))
            })
            .collect::<Result<_>>()?
    };
    let nparams = r.profile.first().map_or(0, |row| row.params.len());
    let mut header: Vec<String> = (1..=nparams).map(|k| format!("fiber_param_{k}")).collect();
    header.extend(chosen.iter().map(|q| q.replace('-', "_")));
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new("fiber_profile", &refs);
    for row in &r.profile {
        let mut cells: Vec<String> = row.params.iter().map(|p| num(*p)).collect();
        for q in &chosen {
            cells.push(num(match *q {
                "sec-t0" => row.sec0,
                "sec-probe" => row.sec_probe,
                "dt-sec" => row.dt_sec,
                _ => row.h_norm,
            }));
        }
        t.push(cells);
    }
    Ok(t)
}

/// Builds the catalog listing; with `verify`, probes every class tag on two random fibers.
pub fn list_models(verify: bool, seed: u64) -> Result<(String, bool)> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in subvar_core::models::MODEL_IDS {
        let m = subvar_core::models::build_model(id, 2, 2)?;
        let dims = if id.ends_with("torus") { format!("n={} p={} (configurable)", m.n(), m.p()) } else { format!("n={} p={}", m.n(), m.p()) };
        let _ = writeln!(out, "{id}  {dims}  dim={}", m.dim());
        let pts: Vec<Vec<f64>> = (0..2).map(|_| m.sample_point(&mut rng)).collect();
        for f in m.special_fields() {
            let tag = serde_json::to_value(f.class).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            if verify {
                let c = subvar_core::analysis::verify_field_class(&m, &f, &pts, 4)?;
                ok &= c.passed;
                let _ = writeln!(
                    out,
                    "  {:<14} {:<18} {}  |L g|={:.1e} |div|={:.1e}",
                    f.name,
                    tag,
                    if c.passed { "ok" } else { "MISMATCH" },
                    c.killing,
                    c.divergence
                );
            } else {
                let _ = writeln!(out, "  {:<14} {tag}", f.name);
            }
        }
    }
    Ok((out, ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(id: &str, suite: Suite) -> ScenarioConfig {
        let mut c = ScenarioConfig::for_model(id);
        c.suite = suite;
        c.grid.points = 1;
        c.grid.resolution = 4;
        c.variation.random_specs = 1;
        c
    }

    #[test]
    fn flat_torus_preservation_passes() {
        let mut c = quick("flat-torus", Suite::Preservation);
        c.model.n = Some(1);
        c.model.p = Some(1);
        let r = run_scenario(&c).unwrap();
        assert!(r.passed(), "{}", r.summary());
        assert!(r.checks.iter().all(|c| c.value < 1e-8));
    }

    #[test]
    fn hopf_s3_all_suites_pass() {
        let r = run_scenario(&quick("hopf-s3", Suite::All)).unwrap();
        assert!(r.passed(), "{}", r.summary());
        assert!(r.notes.iter().any(|n| n.contains("hopf-experiment runs on hopf-s7 only")));
    }

    #[test]
    fn profile_rejects_unknown_quantity() {
        let r = HopfExperimentReport {
            x0: vec![],
            y0: vec![],
            pair: [0, 1],
            bracket_ratio: 0.0,
            kappa: 1.0,
            dt_spread: 0.0,
            dt_max: 0.0,
            dt_ratio: 0.0,
            fd_error: 0.0,
            sec0_spread: 0.0,
            sec_spread: 0.0,
            h_max: 0.0,
            positivity_margin: 0.0,
            profile: vec![],
            sweep: vec![],
            passed: false,
        };
        assert!(profile_table(&r, &["curvature".into()]).is_err());
        assert_eq!(profile_table(&r, &["h-norm".into()]).unwrap().header, vec!["h_norm"]);
    }

    #[test]
    fn listing_contains_catalog() {
        let (s, ok) = list_models(true, 3).unwrap();
        assert!(ok, "{s}");
        assert!(s.contains("hopf-s7  n=3 p=4") && s.contains("flat-torus  n=2 p=2 (configurable)"));
    }
}
