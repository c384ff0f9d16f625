//! Fiberwise functionals, curvature variations and the experiments built on them.
//!
//! Fiber quadratures evaluate nodes in parallel and reduce in node order, so
//! results do not depend on the thread count.

use crate::error::{Error, Result};
use crate::extrinsic::FiberGeometry;
use crate::fields::{Bump, ScalarExpr, VerticalField};
use crate::geometry::{LocalGeometry, MetricSource, PointContext};
use crate::jet::{Differentiable, Jet1, Jet2, Scalar};
use crate::models::{FiberNode, FieldClass, ModelKind, ModelSpec, SpecialField};
use crate::variation::{projected_lift, projected_lift_gram, BaseFrame, IntegratorSettings, MetricState, VariationSpec, VariedPoint};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Pointwise criticality residual below which a baseline counts as critical.
pub const CRITICAL_TOL: f64 = 1e-7;
/// Bound on `|L_V g0|` for a field to count as Killing.
pub const KILLING_TOL: f64 = 1e-8;
/// Bound on `|h|` for totally geodesic fibers.
pub const GEODESIC_TOL: f64 = 1e-7;
/// Bound on a `t`-derivative that should vanish.
pub const FLAT_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub integrator: IntegratorSettings,
    /// Fiber grid resolution (nodes per fiber direction).
    pub resolution: usize,
    /// Base step of the 5-point stencils.
    pub fd_step: f64,
    /// Step of the 3-point first-derivative checks.
    pub fd_first_step: f64,
    /// Node spacing of the polynomial fit used for higher derivatives.
    pub flatness_step: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings { integrator: IntegratorSettings::default(), resolution: 6, fd_step: 5e-3, fd_first_step: 1e-4, flatness_step: 0.05 }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if self.resolution < 4 {
            return Err(Error::Invalid(format!("resolution must be at least 4, got {}", self.resolution)));
        }
        for (name, v) in [("fd_step", self.fd_step), ("fd_first_step", self.fd_first_step), ("flatness_step", self.flatness_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sample times `t + k h / 2`, `k = -4..=4`, consumed by [`stencil_derivatives`].
pub fn stencil_times(t: f64, h: f64) -> Vec<f64> {
    (-4..=4).map(|k| t + k as f64 * 0.5 * h).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdDerivatives {
    pub d1: f64,
    pub d2: f64,
    /// Unrefined 5-point values at the coarse step.
    pub d1_coarse: f64,
    pub d2_coarse: f64,
}

/// 5-point first and second derivatives at steps `h/2` and `h`, Richardson-combined.
pub fn stencil_derivatives(f: &[f64], h: f64) -> FdDerivatives {
    assert_eq!(f.len(), 9, "stencil needs 9 samples");
    let at = |k: i32| f[(k + 4) as usize];
    let d1 = |s: i32, hh: f64| (at(-2 * s) - 8.0 * at(-s) + 8.0 * at(s) - at(2 * s)) / (12.0 * hh);
    let d2 = |s: i32, hh: f64| (-at(-2 * s) + 16.0 * at(-s) - 30.0 * at(0) + 16.0 * at(s) - at(2 * s)) / (12.0 * hh * hh);
    let (f1, c1) = (d1(1, 0.5 * h), d1(2, h));
    let (f2, c2) = (d2(1, 0.5 * h), d2(2, h));
    FdDerivatives { d1: (16.0 * f1 - c1) / 15.0, d2: (16.0 * f2 - c2) / 15.0, d1_coarse: c1, d2_coarse: c2 }
}

/// `|a - b|` relative to `max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn values(v: &[Jet2]) -> Vec<f64> {
    v.iter().map(|j| j.v).collect()
}

fn lower(v: &[Jet2]) -> Vec<Jet1> {
    v.iter().map(|j| j.lower()).collect()
}

fn fiber_map<T: Send>(nodes: &[FiberNode], f: impl Fn(&FiberNode) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    nodes.par_iter().map(f).collect()
}

fn spread(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mx = v.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    (hi - lo, mx)
}

/// Base fields that are global lifts-friendly at `x`: coordinate fields on tori,
/// tangential projections of `pi_* e_i(x)` on sphere bases.
pub fn natural_base_frame(model: &ModelSpec, x: &[f64]) -> Result<BaseFrame> {
    if !model.is_sphere() {
        return Ok(BaseFrame::Aligned);
    }
    model.check_point(x)?;
    let frame = model.frame(x);
    let basis = frame[model.n()..].iter().map(|e| model.pushforward(x, e)).collect();
    Ok(BaseFrame::Projected { basis })
}

/// Sectional curvature of the base (a space form in every catalog model).
pub fn base_sectional(model: &ModelSpec) -> Result<f64> {
    let p = model.p();
    if p < 2 {
        return Err(Error::Invalid("base has dimension 1".into()));
    }
    let u: Vec<Jet2> = (0..p).map(|k| Jet2::seed(0.0, k, p)).collect();
    let geo = LocalGeometry::from_chart_metric(model.base_chart_metric(&u))?;
    let mut a = vec![0.0; p];
    let mut b = vec![0.0; p];
    a[0] = 1.0;
    b[1] = 1.0;
    geo.sectional(&a, &b)
}

/// Low-order fiber function: `a + b sin + c cos` of a fiber angle on tori,
/// `a + b x_k` on spheres.
fn fiber_harmonic<R: Rng>(model: &ModelSpec, rng: &mut R) -> ScalarExpr {
    let a = ScalarExpr::constant(rng.gen_range(-0.5..0.5));
    if model.is_sphere() {
        let k = rng.gen_range(0..model.ambient_dim());
        ScalarExpr::sum(vec![a, ScalarExpr::scale(rng.gen_range(0.5..1.0), ScalarExpr::coord(k))])
    } else {
        let k = rng.gen_range(0..model.n());
        ScalarExpr::sum(vec![
            a,
            ScalarExpr::scale(rng.gen_range(0.3..1.0), ScalarExpr::sin(ScalarExpr::coord(k))),
            ScalarExpr::scale(rng.gen_range(-0.5..0.5), ScalarExpr::cos(ScalarExpr::coord(k))),
        ])
    }
}

/// Random field-pair spec near the fiber through `x`: `V_i = (bump o pi) f C_i`
/// with `C_i` from the catalog and `f` a fiber harmonic (or `1`).
pub fn random_spec<R: Rng>(model: &ModelSpec, x: &[f64], rng: &mut R) -> Result<VariationSpec> {
    let catalog = model.special_fields();
    let y: Vec<f64> = model.project(x);
    let (r_in, r_out) = if model.is_sphere() { (0.4, 0.8) } else { (1.0, 2.0) };
    let bump = ScalarExpr::Bump { bump: Bump::new(y, r_in, r_out)?, on_base: true };
    let fields = (0..model.p())
        .map(|_| {
            let c = catalog[rng.gen_range(0..catalog.len())].field.clone();
            let f = if rng.gen_bool(0.75) { fiber_harmonic(model, rng) } else { ScalarExpr::constant(rng.gen_range(-1.0..1.0)) };
            VerticalField::scaled(ScalarExpr::product(vec![bump.clone(), f]), c)
        })
        .collect();
    Ok(VariationSpec::constant(fields, natural_base_frame(model, x)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSeries {
    pub times: Vec<f64>,
    pub jh: Vec<f64>,
    pub jmean: Vec<f64>,
}

/// `J_{h,x}` and `J_{H,x}` of the metrics reached by `spec` at each time.
pub fn fiber_functionals(model: &ModelSpec, x: &[f64], spec: &VariationSpec, times: &[f64], settings: &AnalysisSettings) -> Result<FunctionalSeries> {
    settings.validate()?;
    let nodes = model.fiber_grid(x, settings.resolution)?;
    let per = fiber_map(&nodes, |node| {
        let vp = VariedPoint::new(model, &node.point, spec, settings.integrator)?;
        vp.states(times)?
            .iter()
            .map(|st| {
                let fg = FiberGeometry::new(vp.geometry(st)?);
                let hm = fg.mean_curvature();
                Ok((fg.h_norm2(), fg.inner_frame(&hm, &hm)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut jh = vec![0.0; times.len()];
    let mut jmean = vec![0.0; times.len()];
    for (node, vals) in nodes.iter().zip(&per) {
        for (k, (a, b)) in vals.iter().enumerate() {
            jh[k] += node.weight * a;
            jmean[k] += node.weight * b;
        }
    }
    Ok(FunctionalSeries { times: times.to_vec(), jh, jmean })
}

pub fn fiber_functional_jh(model: &ModelSpec, x: &[f64], spec: &VariationSpec, t: f64, settings: &AnalysisSettings) -> Result<f64> {
    Ok(fiber_functionals(model, x, spec, &[t], settings)?.jh[0])
}

pub fn fiber_functional_jmean(model: &ModelSpec, x: &[f64], spec: &VariationSpec, t: f64, settings: &AnalysisSettings) -> Result<f64> {
    Ok(fiber_functionals(model, x, spec, &[t], settings)?.jmean[0])
}

/// `J_h` and `J_H` over the whole flat torus: trapezoidal base grid of fiberwise values.
pub fn global_functionals(model: &ModelSpec, spec: &VariationSpec, times: &[f64], settings: &AnalysisSettings) -> Result<FunctionalSeries> {
    let (n, p) = match model.kind {
        ModelKind::FlatTorus { n, p } => (n, p),
        _ => return Err(Error::Unsupported(format!("global functionals are only evaluated on the flat torus, not {}", model.id()))),
    };
    let r = settings.resolution;
    let step = 2.0 * std::f64::consts::PI / r as f64;
    let weight = step.powi(p as i32);
    let mut total = FunctionalSeries { times: times.to_vec(), jh: vec![0.0; times.len()], jmean: vec![0.0; times.len()] };
    for idx in 0..r.pow(p as u32) {
        let mut x = vec![0.0; n + p];
        let mut k = idx;
        for c in x[n..].iter_mut() {
            *c = (k % r) as f64 * step;
            k /= r;
        }
        let f = fiber_functionals(model, &x, spec, times, settings)?;
        for (acc, v) in total.jh.iter_mut().zip(&f.jh) {
            *acc += weight * v;
        }
        for (acc, v) in total.jmean.iter_mut().zip(&f.jmean) {
            *acc += weight * v;
        }
    }
    Ok(total)
}

/// `max_b |P_H (delta h)(E_b)|` at one point.
fn delta_h_residual(fg: &FiberGeometry) -> f64 {
    fg.delta_h().iter().map(|v| fg.inner_frame(v, v).sqrt()).fold(0.0, f64::max)
}

/// `max_i |grad_V g0(H, pi^* W_i)|` at the center of `vp`.
fn mean_gradient_residual(fg: &FiberGeometry, vp: &VariedPoint<'_>) -> f64 {
    let hf = fg.mean_curvature_field();
    (0..vp.var.p)
        .map(|i| {
            let g = fg.geo.inner_jet(&hf, &lower(&vp.lift_field(i)));
            fg.vertical_gradient(&g).iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

fn frame_probe(model: &ModelSpec, x: &[f64]) -> Result<VariationSpec> {
    Ok(VariationSpec::constant(vec![], natural_base_frame(model, x)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    /// Largest pointwise residual over the fiber grid.
    pub pointwise: f64,
    /// `|int <L_V g0, h^W> vol|` for each random probe.
    pub integrals: Vec<f64>,
    pub integral_max: f64,
    /// Pointwise and integral tests reach the same verdict.
    pub consistent: bool,
}

impl CriticalityReport {
    pub fn critical(&self) -> bool {
        self.pointwise < CRITICAL_TOL
    }
}

/// Pointwise `P_H(delta h)` residual plus the integral test with 10 random `(V, W)`.
pub fn criticality_h(model: &ModelSpec, x: &[f64], settings: &AnalysisSettings, seed: u64) -> Result<CriticalityReport> {
    use rand::SeedableRng;
    settings.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let catalog = model.special_fields();
    let probes: Vec<(VerticalField, Vec<f64>)> = (0..10)
        .map(|_| {
            let c = catalog[rng.gen_range(0..catalog.len())].field.clone();
            let v = VerticalField::scaled(fiber_harmonic(model, &mut rng), c);
            let w: Vec<f64> = (0..model.p()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (v, w)
        })
        .collect();
    let frame = frame_probe(model, x)?;
    let nodes = model.fiber_grid(x, settings.resolution)?;
    let per = fiber_map(&nodes, |node| {
        let vp = VariedPoint::new(model, &node.point, &frame, settings.integrator)?;
        let fg = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
        let h = fg.h();
        let n = fg.n();
        let ints = probes
            .iter()
            .map(|(v, w)| {
                let lie = fg.lie_derivative(&vp.ctx.vertical_field(v));
                let mut lift = vec![0.0; model.dim()];
                for (i, wi) in w.iter().enumerate() {
                    for (l, c) in lift.iter_mut().zip(vp.var.lift_coeffs(i)) {
                        *l += wi * c.v;
                    }
                }
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += lie[(a, b)] * fg.inner_frame(&h[a][b], &lift);
                    }
                }
                s
            })
            .collect::<Vec<f64>>();
        Ok((delta_h_residual(&fg), ints))
    })?;
    let pointwise = per.iter().map(|p| p.0).fold(0.0, f64::max);
    let mut integrals = vec![0.0; probes.len()];
    for (node, (_, ints)) in nodes.iter().zip(&per) {
        for (acc, v) in integrals.iter_mut().zip(ints) {
            *acc += node.weight * v;
        }
    }
    let integrals: Vec<f64> = integrals.into_iter().map(f64::abs).collect();
    let integral_max = integrals.iter().cloned().fold(0.0, f64::max);
    Ok(CriticalityReport { pointwise, integral_max, consistent: (integral_max < 1e-6) == (pointwise < CRITICAL_TOL), integrals })
}

/// Largest vertical gradient of `g0(H0, pi^* W_i)` over the fiber; zero iff `H0` is projectable.
pub fn criticality_mean(model: &ModelSpec, x: &[f64], settings: &AnalysisSettings) -> Result<f64> {
    settings.validate()?;
    let frame = frame_probe(model, x)?;
    let nodes = model.fiber_grid(x, settings.resolution)?;
    let per = fiber_map(&nodes, |node| {
        let vp = VariedPoint::new(model, &node.point, &frame, settings.integrator)?;
        let fg = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
        Ok(mean_gradient_residual(&fg, &vp))
    })?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDerivatives {
    pub value: f64,
    pub d1_3pt: f64,
    pub d1_5pt: f64,
    pub d2_fd: f64,
    pub d2_fd_coarse: f64,
    /// Quadratic form predicted at a critical baseline.
    pub d2_analytic: f64,
}

impl FunctionalDerivatives {
    /// 3-point and 5-point first derivatives agree to `1e-5` relative (absolute floor `1e-9`).
    pub fn stencils_consistent(&self) -> bool {
        (self.d1_3pt - self.d1_5pt).abs() <= 1e-5 * self.d1_3pt.abs().max(self.d1_5pt.abs()) + 1e-9
    }

    pub fn rel_error(&self) -> f64 {
        rel_diff(self.d2_fd, self.d2_analytic, 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub x: Vec<f64>,
    pub series: FunctionalSeries,
    pub jh: FunctionalDerivatives,
    pub jmean: FunctionalDerivatives,
    pub criticality_h: f64,
    pub criticality_mean: f64,
}

/// Values, finite-difference derivatives at `t = 0`, analytic second variations and
/// criticality residuals of both fiber functionals.
pub fn functional_report(model: &ModelSpec, x: &[f64], spec: &VariationSpec, settings: &AnalysisSettings) -> Result<FunctionalReport> {
    settings.validate()?;
    let mut times = stencil_times(0.0, settings.fd_step);
    times.extend([-settings.fd_first_step, settings.fd_first_step]);
    let nodes = model.fiber_grid(x, settings.resolution)?;
    let per = fiber_map(&nodes, |node| {
        let vp = VariedPoint::new(model, &node.point, spec, settings.integrator)?;
        let vals = vp
            .states(&times)?
            .iter()
            .map(|st| {
                let fg = FiberGeometry::new(vp.geometry(st)?);
                let hm = fg.mean_curvature();
                Ok((fg.h_norm2(), fg.inner_frame(&hm, &hm)))
            })
            .collect::<Result<Vec<_>>>()?;
        let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
        let (mut lie2, mut div2) = (0.0, 0.0);
        for i in 0..vp.var.p {
            let v = vp.vertical_field(i, 0, 0.0);
            let l = fg0.lie_derivative(&v);
            for a in 0..fg0.n() {
                for b in 0..fg0.n() {
                    lie2 += l[(a, b)] * l[(a, b)];
                }
            }
            div2 += fg0.vertical_divergence(&v).powi(2);
        }
        Ok((vals, lie2, div2, delta_h_residual(&fg0), mean_gradient_residual(&fg0, &vp)))
    })?;
    let mut jh = vec![0.0; times.len()];
    let mut jm = vec![0.0; times.len()];
    let (mut lie2, mut div2, mut crit_h, mut crit_m) = (0.0, 0.0, 0.0f64, 0.0f64);
    for (node, (vals, l, d, ch, cm)) in nodes.iter().zip(&per) {
        for (k, (a, b)) in vals.iter().enumerate() {
            jh[k] += node.weight * a;
            jm[k] += node.weight * b;
        }
        lie2 += node.weight * l;
        div2 += node.weight * d;
        crit_h = crit_h.max(*ch);
        crit_m = crit_m.max(*cm);
    }
    let derive = |f: &[f64], analytic: f64| {
        let fd = stencil_derivatives(&f[..9], settings.fd_step);
        FunctionalDerivatives {
            value: f[4],
            d1_3pt: (f[10] - f[9]) / (2.0 * settings.fd_first_step),
            d1_5pt: fd.d1,
            d2_fd: fd.d2,
            d2_fd_coarse: fd.d2_coarse,
            d2_analytic: analytic,
        }
    };
    Ok(FunctionalReport {
        x: x.to_vec(),
        jh: derive(&jh, 0.5 * lie2),
        jmean: derive(&jm, 2.0 * div2),
        series: FunctionalSeries { times, jh, jmean: jm },
        criticality_h: crit_h,
        criticality_mean: crit_m,
    })
}

/// Second variation of `J_{h,x}`: analytic `1/2 int sum |L_{V_i} g0|^2` against finite differences.
pub fn second_variation_jh(model: &ModelSpec, x: &[f64], spec: &VariationSpec, settings: &AnalysisSettings) -> Result<FunctionalDerivatives> {
    let r = functional_report(model, x, spec, settings)?;
    if r.criticality_h >= CRITICAL_TOL {
        return Err(Error::NonCritical(r.criticality_h));
    }
    Ok(r.jh)
}

/// Second variation of `J_{H,x}`: analytic `2 int sum (Div V_i)^2` against finite differences.
pub fn second_variation_jmean(model: &ModelSpec, x: &[f64], spec: &VariationSpec, settings: &AnalysisSettings) -> Result<FunctionalDerivatives> {
    let r = functional_report(model, x, spec, settings)?;
    if r.criticality_mean >= CRITICAL_TOL {
        return Err(Error::NonCritical(r.criticality_mean));
    }
    Ok(r.jmean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub q: usize,
    pub step: f64,
    /// `d^r/dt^r J_{h,x}` at `0` for `r = 1..=q`.
    pub derivatives: Vec<f64>,
    /// `max |L g0|` of the coefficient fields of `t^k`, `k = 0..=degree`.
    pub killing_residuals: Vec<f64>,
    pub vanish_through_q: bool,
    /// Coefficients through order `floor(q/2) - 1` are Killing.
    pub killing_through: bool,
    pub consistent: bool,
}

/// Derivatives of `J_{h,x}` up to order `q <= 4` from a degree-6 fit on 7 nodes.
pub fn higher_order_flatness(model: &ModelSpec, x: &[f64], spec: &VariationSpec, q: usize, settings: &AnalysisSettings) -> Result<FlatnessReport> {
    if q == 0 || q > 4 {
        return Err(Error::Invalid(format!("derivative order {q} outside 1..=4; wider stencils are too ill-conditioned")));
    }
    settings.validate()?;
    let h = settings.flatness_step;
    let times: Vec<f64> = (-3..=3).map(|k| k as f64 * h).collect();
    let nodes = model.fiber_grid(x, settings.resolution)?;
    let deg = spec.degree();
    let per = fiber_map(&nodes, |node| {
        let vp = VariedPoint::new(model, &node.point, spec, settings.integrator)?;
        let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
        let kill: Vec<f64> = (0..=deg)
            .map(|k| (0..vp.var.p).map(|i| fg0.lie_derivative(&vp.vertical_field(i, k, 0.0)).max_abs()).fold(0.0, f64::max))
            .collect();
        let vals = vp
            .states(&times)?
            .iter()
            .map(|st| Ok(FiberGeometry::new(vp.geometry(st)?).h_norm2()))
            .collect::<Result<Vec<f64>>>()?;
        Ok((vals, kill, delta_h_residual(&fg0)))
    })?;
    let crit = per.iter().map(|p| p.2).fold(0.0, f64::max);
    if crit >= CRITICAL_TOL {
        return Err(Error::NonCritical(crit));
    }
    let mut j = vec![0.0; times.len()];
    let mut killing_residuals = vec![0.0f64; deg + 1];
    for (node, (vals, kill, _)) in nodes.iter().zip(&per) {
        for (acc, v) in j.iter_mut().zip(vals) {
            *acc += node.weight * v;
        }
        for (acc, k) in killing_residuals.iter_mut().zip(kill) {
            *acc = acc.max(*k);
        }
    }
    // Fit in the scaled variable s = t / h on s = -3..3.
    let vand = DMatrix::from_fn(7, 7, |r, c| ((r as f64) - 3.0).powi(c as i32));
    let coef = vand.lu().solve(&DVector::from_vec(j)).ok_or_else(|| Error::Singular("flatness fit".into()))?;
    let mut fact = 1.0;
    let derivatives: Vec<f64> = (1..=q)
        .map(|r| {
            fact *= r as f64;
            fact * coef[r] / h.powi(r as i32)
        })
        .collect();
    let vanish_through_q = derivatives.iter().all(|d| d.abs() < FLAT_TOL);
    let killing_through = (0..(q / 2)).all(|k| killing_residuals.get(k).is_none_or(|r| *r < KILLING_TOL));
    Ok(FlatnessReport { q, step: h, consistent: vanish_through_q == killing_through, derivatives, killing_residuals, vanish_through_q, killing_through })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Plane {
    /// `P_H^t pi^* W_i` and `P_H^t pi^* W_j`.
    Horizontal { i: usize, j: usize },
    /// `P_H^t pi^* W_i` and the vertical vector with `E_a` coefficients `u`.
    Vertizontal { i: usize, u: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureVariationReport {
    pub point: Vec<f64>,
    pub plane: Plane,
    pub t: f64,
    pub sec: f64,
    pub d1: f64,
    pub d2: f64,
    pub d1_fd: f64,
    pub d2_fd: f64,
    /// O'Neill residual (horizontal) or `|4 sec - sum_j g([Z_i, Z_j], U)^2|` (vertizontal).
    pub identity_residual: f64,
}

impl CurvatureVariationReport {
    pub fn d1_error(&self) -> f64 {
        rel_diff(self.d1_fd, self.d1, 1e-6)
    }

    pub fn d2_error(&self) -> f64 {
        rel_diff(self.d2_fd, self.d2, 1e-6)
    }
}

/// Fields along the variation at one time, as chart jets.
struct LiftFields {
    geo: LocalGeometry,
    z: Vec<Vec<Jet2>>,
    v: Vec<Vec<Jet2>>,
    vdot: Vec<Vec<Jet2>>,
}

impl LiftFields {
    fn new(vp: &VariedPoint<'_>, state: &MetricState<Jet2>) -> Result<Self> {
        let t = state.t;
        let p = vp.var.p;
        Ok(LiftFields {
            geo: vp.geometry(state)?,
            z: (0..p).map(|i| vp.projected_lift_field(state, i)).collect(),
            v: (0..p).map(|i| vp.vertical_field(i, 0, t)).collect(),
            vdot: (0..p).map(|i| vp.vertical_field(i, 1, t)).collect(),
        })
    }

    fn br(&self, a: &[Jet2], b: &[Jet2]) -> Vec<f64> {
        self.geo.bracket(a, b).iter().map(|j| j.v).collect()
    }

    fn g(&self, a: &[f64], b: &[f64]) -> f64 {
        self.geo.inner(a, b)
    }

    /// `c_k = g([Z_i, Z_j], Z_k) = g_N([W_i, W_j], W_k)`.
    fn structure(&self, zij: &[f64]) -> Vec<f64> {
        self.z.iter().map(|zk| self.g(zij, &values(zk))).collect()
    }

    /// `[A_i, Z_j] + [Z_i, A_j]` for a family `A` of vertical fields.
    fn mixed(&self, a: &[Vec<Jet2>], i: usize, j: usize) -> Vec<f64> {
        let x = self.br(&a[i], &self.z[j]);
        let y = self.br(&self.z[i], &a[j]);
        x.iter().zip(&y).map(|(u, v)| u + v).collect()
    }
}

fn check_orthonormal_lifts(vp: &VariedPoint<'_>) -> Result<()> {
    let st = MetricState::<f64>::identity(vp.var.n, vp.var.p);
    let dev = projected_lift_gram(&st, &vp.var.lift.values()).sub(&crate::linalg::Mat::identity(vp.var.p)).max_abs();
    if dev > 1e-10 {
        return Err(Error::Invalid(format!("base fields are not orthonormal at the point (deviation {dev:e})")));
    }
    Ok(())
}

/// Sectional curvature of `(P_H^t pi^* W_i, P_H^t pi^* W_j)` at time `t` and its
/// O'Neill residual.
fn horizontal_sec_at(vp: &VariedPoint<'_>, st: &MetricState<Jet2>, i: usize, j: usize, sec_n: f64) -> Result<(f64, f64)> {
    let geo = vp.geometry(st)?;
    let s = st.values();
    let lift = vp.var.lift.values();
    let zi = geo.field_from_frame(&projected_lift(&s, &lift, i));
    let zj = geo.field_from_frame(&projected_lift(&s, &lift, j));
    let sec = geo.sectional(&zi, &zj)?;
    let zij: Vec<f64> = geo.bracket(&vp.projected_lift_field(st, i), &vp.projected_lift_field(st, j)).iter().map(|v| v.v).collect();
    let tv = geo.vertical_part(&zij);
    Ok((sec, (sec - sec_n + 0.75 * geo.inner(&tv, &tv)).abs()))
}

fn vertical_chart(geo: &LocalGeometry, u: &[f64]) -> Vec<f64> {
    let mut c = u.to_vec();
    c.resize(geo.dim(), 0.0);
    geo.field_from_frame(&c)
}

fn vertizontal_sec_at(vp: &VariedPoint<'_>, st: &MetricState<Jet2>, i: usize, u: &[f64]) -> Result<f64> {
    let geo = vp.geometry(st)?;
    let zi = geo.field_from_frame(&projected_lift(&st.values(), &vp.var.lift.values(), i));
    geo.sectional(&zi, &vertical_chart(&geo, u))
}

/// Horizontal sectional curvature, its analytic `t`-derivatives and their finite-difference checks.
pub fn horizontal_sec_variation(
    model: &ModelSpec,
    x: &[f64],
    spec: &VariationSpec,
    i: usize,
    j: usize,
    t: f64,
    settings: &AnalysisSettings,
) -> Result<CurvatureVariationReport> {
    settings.validate()?;
    let p = model.p();
    if i >= p || j >= p || i == j {
        return Err(Error::Invalid(format!("need distinct lift indices below {p}, got ({i}, {j})")));
    }
    let vp = VariedPoint::new(model, x, spec, settings.integrator)?;
    check_orthonormal_lifts(&vp)?;
    let sec_n = base_sectional(model)?;
    let st = vp.state(t)?;
    let lf = LiftFields::new(&vp, &st)?;
    let zij = lf.br(&lf.z[i], &lf.z[j]);
    let tv = lf.geo.vertical_part(&zij);
    let c = lf.structure(&zij);
    let vv: Vec<Vec<f64>> = lf.v.iter().map(|v| values(v)).collect();
    let vd: Vec<Vec<f64>> = lf.vdot.iter().map(|v| values(v)).collect();
    let y = lf.mixed(&lf.v, i, j);
    let yd = lf.mixed(&lf.vdot, i, j);
    let vij = lf.br(&lf.v[i], &lf.v[j]);
    let mut d1 = 1.5 * lf.g(&y, &tv);
    let mut d2 = 1.5 * lf.g(&yd, &tv) - 3.0 * lf.g(&vij, &tv) - 1.5 * lf.g(&y, &y);
    for k in 0..p {
        d1 -= 1.5 * c[k] * lf.g(&vv[k], &tv);
        d2 += -1.5 * c[k] * lf.g(&vd[k], &tv) + 3.0 * c[k] * lf.g(&vv[k], &y);
        for l in 0..p {
            d2 -= 1.5 * c[k] * c[l] * lf.g(&vv[k], &vv[l]);
        }
    }
    let (sec, residual) = horizontal_sec_at(&vp, &st, i, j, sec_n)?;
    let times = stencil_times(t, settings.fd_step);
    let secs = vp.states(&times)?.iter().map(|s| Ok(horizontal_sec_at(&vp, s, i, j, sec_n)?.0)).collect::<Result<Vec<f64>>>()?;
    let fd = stencil_derivatives(&secs, settings.fd_step);
    Ok(CurvatureVariationReport { point: x.to_vec(), plane: Plane::Horizontal { i, j }, t, sec, d1, d2, d1_fd: fd.d1, d2_fd: fd.d2, identity_residual: residual })
}

/// Terms of the vertizontal variation at one time: `(tau_j, sigma_j, d sigma_j / dt)`.
struct VertizontalTerms {
    tau: Vec<f64>,
    sigma: Vec<f64>,
    dsigma: Vec<f64>,
}

fn vertizontal_terms(lf: &LiftFields, i: usize, uc: &[f64]) -> VertizontalTerms {
    let p = lf.z.len();
    let vv: Vec<Vec<f64>> = lf.v.iter().map(|v| values(v)).collect();
    let vd: Vec<Vec<f64>> = lf.vdot.iter().map(|v| values(v)).collect();
    let mut out = VertizontalTerms { tau: vec![], sigma: vec![], dsigma: vec![] };
    for j in 0..p {
        let zij = lf.br(&lf.z[i], &lf.z[j]);
        let c = lf.structure(&zij);
        let cv: f64 = (0..p).map(|k| c[k] * lf.g(&vv[k], uc)).sum();
        let cvd: f64 = (0..p).map(|k| c[k] * lf.g(&vd[k], uc)).sum();
        out.tau.push(lf.g(&zij, uc));
        out.sigma.push(cv - lf.g(&lf.mixed(&lf.v, i, j), uc));
        out.dsigma.push(cvd - lf.g(&lf.mixed(&lf.vdot, i, j), uc) + 2.0 * lf.g(&lf.br(&lf.v[i], &lf.v[j]), uc));
    }
    out
}

/// Vertizontal sectional curvature `sec(P_H^t pi^* W_i, U)` for totally geodesic fibers and
/// fiberwise Killing `V_i`, with analytic derivatives and finite-difference checks.
pub fn vertizontal_sec_variation(
    model: &ModelSpec,
    x: &[f64],
    spec: &VariationSpec,
    i: usize,
    u: &[f64],
    t: f64,
    settings: &AnalysisSettings,
) -> Result<CurvatureVariationReport> {
    settings.validate()?;
    let (n, p) = (model.n(), model.p());
    if i >= p || u.len() != n {
        return Err(Error::Invalid(format!("need lift index below {p} and {n} vertical coefficients")));
    }
    let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if un < 1e-12 {
        return Err(Error::Invalid("vertical vector is zero".into()));
    }
    let u: Vec<f64> = u.iter().map(|v| v / un).collect();
    let vp = VariedPoint::new(model, x, spec, settings.integrator)?;
    check_orthonormal_lifts(&vp)?;
    let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
    let hn = fg0.h_norm2().sqrt();
    if hn > GEODESIC_TOL {
        return Err(Error::Unsupported(format!("fibers are not totally geodesic (|h| = {hn:e})")));
    }
    for i2 in 0..p {
        for k in 0..=spec.degree() {
            let r = fg0.lie_derivative(&vp.vertical_field(i2, k, 0.0)).max_abs();
            if r > KILLING_TOL {
                return Err(Error::NotKilling(r));
            }
        }
    }
    let st = vp.state(t)?;
    let lf = LiftFields::new(&vp, &st)?;
    let uc = vertical_chart(&lf.geo, &u);
    let terms = vertizontal_terms(&lf, i, &uc);
    let d1 = 0.5 * terms.tau.iter().zip(&terms.sigma).map(|(a, b)| a * b).sum::<f64>();
    let d2 = 0.5 * (0..p).map(|j| terms.sigma[j].powi(2) + terms.tau[j] * terms.dsigma[j]).sum::<f64>();
    let sec = vertizontal_sec_at(&vp, &st, i, &u)?;
    let residual = (4.0 * sec - terms.tau.iter().map(|v| v * v).sum::<f64>()).abs();
    let times = stencil_times(t, settings.fd_step);
    let secs = vp.states(&times)?.iter().map(|s| vertizontal_sec_at(&vp, s, i, &u)).collect::<Result<Vec<f64>>>()?;
    let fd = stencil_derivatives(&secs, settings.fd_step);
    Ok(CurvatureVariationReport {
        point: x.to_vec(),
        plane: Plane::Vertizontal { i, u },
        t,
        sec,
        d1,
        d2,
        d1_fd: fd.d1,
        d2_fd: fd.d2,
        identity_residual: residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneillReport {
    pub base_sec: f64,
    pub horizontal_sec: f64,
    pub vertizontal_sec: f64,
    /// `|P_V [e_i, e_j]|` for the first two horizontal frame vectors.
    pub bracket_norm: f64,
    pub residual: f64,
}

/// Curvatures of `g0` at `x` in the planes `(e_1, e_2)` and `(e_1, E_1)`.
pub fn oneill_closure(model: &ModelSpec, x: &[f64]) -> Result<OneillReport> {
    let ctx = PointContext::new(model, x)?;
    let geo = ctx.geometry(MetricSource::Reference)?;
    let n = model.n();
    let e = |k: usize| values(&geo.frame_vector(k));
    let riem = geo.riemann();
    let horizontal_sec = geo.sectional_with(&riem, &e(n), &e(n + 1))?;
    let vertizontal_sec = geo.sectional_with(&riem, &e(n), &e(0))?;
    let br: Vec<f64> = geo.bracket(&geo.frame_vector(n), &geo.frame_vector(n + 1)).iter().map(|v| v.v).collect();
    let tv = geo.vertical_part(&br);
    let t2 = geo.inner(&tv, &tv);
    let base_sec = base_sectional(model)?;
    Ok(OneillReport { base_sec, horizontal_sec, vertizontal_sec, bracket_norm: t2.sqrt(), residual: (horizontal_sec - base_sec + 0.75 * t2).abs() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KillingStabilityReport {
    /// `max |L_K g0|` over all slot pairs (precondition).
    pub baseline: f64,
    /// `max |[K, V_i]|` in chart components.
    pub commutator: f64,
    /// `max |(L_K g_t)(P_H^t pi^* W_i, E_a)|` over points and times.
    pub lie_mixed: f64,
    /// `max |(L_K g_t)(X, Y)|` over pairs from `{E_a, P_H^t pi^* W_i}`.
    pub lie_full: f64,
    /// `max |d/dt (L_K g_t)(P_H^t pi^* W_i, E_a) - g_t([K, V_i], E_a)|`.
    pub identity_residual: f64,
}

fn lie_k(geo: &LocalGeometry, k: &[Jet1], a: &[f64], b: &[f64]) -> f64 {
    geo.inner(&geo.nabla_value(a, k), b) + geo.inner(&geo.nabla_value(b, k), a)
}

/// Mixed-slot `L_K g_t(Z_i, E_a)` at the center for the state.
fn lie_mixed_at(vp: &VariedPoint<'_>, st: &MetricState<Jet2>, k: &[Jet1]) -> Result<Vec<f64>> {
    let geo = vp.geometry(st)?;
    let s = st.values();
    let lift = vp.var.lift.values();
    let mut out = Vec::new();
    for i in 0..vp.var.p {
        let z = geo.field_from_frame(&projected_lift(&s, &lift, i));
        for a in 0..vp.var.n {
            out.push(lie_k(&geo, k, &z, &values(&geo.frame_vector(a))));
        }
    }
    Ok(out)
}

/// Stability of a vertical Killing field `K` along the variation.
pub fn killing_stability(
    model: &ModelSpec,
    points: &[Vec<f64>],
    spec: &VariationSpec,
    k: &VerticalField,
    times: &[f64],
    settings: &AnalysisSettings,
) -> Result<KillingStabilityReport> {
    settings.validate()?;
    k.validate(model)?;
    let d = settings.fd_first_step;
    let per = points
        .par_iter()
        .map(|x| {
            let vp = VariedPoint::new(model, x, spec, settings.integrator)?;
            let kf = vp.ctx.vertical_field(k);
            let k1 = lower(&kf);
            let (n, p, m) = (vp.var.n, vp.var.p, model.dim());
            let geo0 = vp.ctx.geometry(MetricSource::Reference)?;
            let mut baseline = 0.0f64;
            for a in 0..m {
                for b in 0..m {
                    baseline = baseline.max(lie_k(&geo0, &k1, &values(&geo0.frame_vector(a)), &values(&geo0.frame_vector(b))).abs());
                }
            }
            if baseline > KILLING_TOL {
                return Err(Error::NotKilling(baseline));
            }
            let mut r = KillingStabilityReport { baseline, commutator: 0.0, lie_mixed: 0.0, lie_full: 0.0, identity_residual: 0.0 };
            for &t in times {
                let st = vp.state(t)?;
                let lf = LiftFields::new(&vp, &st)?;
                let mut vecs: Vec<Vec<f64>> = (0..n).map(|a| values(&lf.geo.frame_vector(a))).collect();
                vecs.extend(lf.z.iter().map(|z| values(z)));
                for a in &vecs {
                    for b in &vecs {
                        r.lie_full = r.lie_full.max(lie_k(&lf.geo, &k1, a, b).abs());
                    }
                }
                let mid = lie_mixed_at(&vp, &st, &k1)?;
                r.lie_mixed = r.lie_mixed.max(mid.iter().fold(0.0, |s, v| s.max(v.abs())));
                let side = vp.states(&[t - d, t + d])?;
                let lo = lie_mixed_at(&vp, &side[0], &k1)?;
                let hi = lie_mixed_at(&vp, &side[1], &k1)?;
                for i in 0..p {
                    let kv = lf.br(&kf, &lf.v[i]);
                    r.commutator = r.commutator.max(kv.iter().fold(0.0, |s, v| s.max(v.abs())));
                    for a in 0..n {
                        let idx = i * n + a;
                        let fd = (hi[idx] - lo[idx]) / (2.0 * d);
                        let want = lf.g(&kv, &vecs[a]);
                        r.identity_residual = r.identity_residual.max((fd - want).abs());
                    }
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().fold(
        KillingStabilityReport { baseline: 0.0, commutator: 0.0, lie_mixed: 0.0, lie_full: 0.0, identity_residual: 0.0 },
        |a, b| KillingStabilityReport {
            baseline: a.baseline.max(b.baseline),
            commutator: a.commutator.max(b.commutator),
            lie_mixed: a.lie_mixed.max(b.lie_mixed),
            lie_full: a.lie_full.max(b.lie_full),
            identity_residual: a.identity_residual.max(b.identity_residual),
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopfExperimentConfig {
    pub resolution: usize,
    pub t_probe: f64,
    /// Values of `Y(f)` tried in order.
    pub kappas: Vec<f64>,
    pub seed: u64,
    /// Number of fiber nodes where the analytic derivative is checked by finite differences.
    pub fd_nodes: usize,
    pub bump_inner: f64,
    pub bump_outer: f64,
}

impl Default for HopfExperimentConfig {
    fn default() -> Self {
        HopfExperimentConfig { resolution: 4, t_probe: 0.2, kappas: vec![0.5, 1.0, 2.0], seed: 7, fd_nodes: 3, bump_inner: 0.1, bump_outer: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberProfileRow {
    pub params: Vec<f64>,
    /// `d/dt sec(P_H pi^* X, E_1)` at `t = 0`.
    pub dt_sec: f64,
    pub sec0: f64,
    pub sec_probe: f64,
    /// Largest `|h_t|` over the sampled times.
    pub h_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub dt_ratio: f64,
    pub sec_spread: f64,
    pub positivity_margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfExperimentReport {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    /// Indices of `X`, `Y` among the `pi_* e_i(x0)`.
    pub pair: [usize; 2],
    /// Relative spread of `g0([pi^* X, pi^* Y], E_1)` along the fiber.
    pub bracket_ratio: f64,
    pub kappa: f64,
    pub dt_spread: f64,
    pub dt_max: f64,
    pub dt_ratio: f64,
    /// Largest `|analytic - FD|` of `d/dt sec` at the checked nodes, relative to `dt_max`.
    pub fd_error: f64,
    pub sec0_spread: f64,
    pub sec_spread: f64,
    pub h_max: f64,
    /// Smallest vertizontal curvature on the fiber at `t_probe`.
    pub positivity_margin: f64,
    pub profile: Vec<FiberProfileRow>,
    /// One row per `kappa`; the report body describes the first passing one.
    pub sweep: Vec<KappaRow>,
    pub passed: bool,
}

/// The varied metric making `sec(P_H pi^* X, E_1)` non-constant along a Hopf `S^7` fiber.
pub fn hopf_nonconstancy_experiment(config: &HopfExperimentConfig, settings: &AnalysisSettings) -> Result<HopfExperimentReport> {
    use rand::SeedableRng;
    settings.validate()?;
    if config.kappas.is_empty() || !(config.t_probe > 0.0) {
        return Err(Error::Invalid("experiment needs kappas and a positive probe time".into()));
    }
    let model = crate::models::build_hopf_s7();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let x0 = model.sample_point(&mut rng);
    let y0 = model.project(&x0);
    let frame = model.frame(&x0);
    let (n, p) = (model.n(), model.p());
    let pushed: Vec<Vec<f64>> = frame[n..].iter().map(|e| model.pushforward(&x0, e)).collect();
    let nodes = model.fiber_grid(&x0, config.resolution)?;
    let basis_for = |a: usize, b: usize| {
        let mut basis = vec![pushed[a].clone(), pushed[b].clone()];
        basis.extend((0..p).filter(|k| *k != a && *k != b).map(|k| pushed[k].clone()));
        BaseFrame::Projected { basis }
    };
    // Pair whose lift bracket varies most along the fiber.
    let mut best: Option<(f64, usize, usize)> = None;
    for a in 0..p {
        for b in a + 1..p {
            let probe = VariationSpec::constant(vec![], basis_for(a, b));
            let vals = fiber_map(&nodes, |node| {
                let vp = VariedPoint::new(&model, &node.point, &probe, settings.integrator)?;
                let geo = vp.ctx.geometry(MetricSource::Reference)?;
                let br: Vec<f64> = geo.bracket(&vp.lift_field(0), &vp.lift_field(1)).iter().map(|v| v.v).collect();
                Ok(geo.inner(&br, &values(&geo.frame_vector(0))))
            })?;
            let (s, mx) = spread(&vals);
            let ratio = if mx > 0.0 { s / mx } else { 0.0 };
            if best.is_none_or(|(r, _, _)| ratio > r + 1e-12) {
                best = Some((ratio, a, b));
            }
        }
    }
    let (bracket_ratio, a, b) = best.ok_or_else(|| Error::Invalid("base has dimension < 2".into()))?;
    let base_frame = basis_for(a, b);
    let ydir = &pushed[b];
    let bump = ScalarExpr::Bump { bump: Bump::new(y0.clone(), config.bump_inner, config.bump_outer)?, on_base: true };
    let offset: f64 = ydir.iter().zip(&y0).map(|(u, v)| u * v).sum();
    let mut linear: Vec<ScalarExpr> = ydir.iter().enumerate().map(|(k, c)| ScalarExpr::scale(*c, ScalarExpr::base_coord(k))).collect();
    linear.push(ScalarExpr::constant(-offset));
    let probe_times: Vec<f64> = (1..=4).map(|k| config.t_probe * k as f64 / 4.0).collect();
    let u = [1.0, 0.0, 0.0];
    let mut report = None;
    let mut sweep = Vec::new();
    for &kappa in &config.kappas {
        let f = ScalarExpr::product(vec![ScalarExpr::scale(kappa, ScalarExpr::sum(linear.clone())), bump.clone()]);
        let spec = VariationSpec::constant(vec![VerticalField::scaled(f, VerticalField::Xi { index: 0 })], base_frame.clone());
        let rows = fiber_map(&nodes, |node| {
            let vp = VariedPoint::new(&model, &node.point, &spec, settings.integrator)?;
            let st0 = vp.state(0.0)?;
            let lf = LiftFields::new(&vp, &st0)?;
            let terms = vertizontal_terms(&lf, 0, &vertical_chart(&lf.geo, &u));
            let dt_sec = 0.5 * terms.tau.iter().zip(&terms.sigma).map(|(x, y)| x * y).sum::<f64>();
            let sec0 = vertizontal_sec_at(&vp, &st0, 0, &u)?;
            let mut h_norm = 0.0f64;
            let mut sec_probe = 0.0;
            for st in vp.states(&probe_times)? {
                h_norm = h_norm.max(FiberGeometry::new(vp.geometry(&st)?).h_norm2().sqrt());
                sec_probe = vertizontal_sec_at(&vp, &st, 0, &u)?;
            }
            Ok(FiberProfileRow { params: node.params.clone(), dt_sec, sec0, sec_probe, h_norm })
        })?;
        let dts: Vec<f64> = rows.iter().map(|r| r.dt_sec).collect();
        let (dt_spread, dt_max) = spread(&dts);
        let dt_ratio = if dt_max > 0.0 { dt_spread / dt_max } else { 0.0 };
        let stride = (nodes.len() / config.fd_nodes.max(1)).max(1);
        let mut fd_error = 0.0f64;
        for idx in (0..nodes.len()).step_by(stride).take(config.fd_nodes) {
            let r = vertizontal_sec_variation(&model, &nodes[idx].point, &spec, 0, &u, 0.0, settings)?;
            fd_error = fd_error.max((r.d1_fd - rows[idx].dt_sec).abs() / dt_max.max(1e-12));
        }
        let sec0: Vec<f64> = rows.iter().map(|r| r.sec0).collect();
        let secp: Vec<f64> = rows.iter().map(|r| r.sec_probe).collect();
        let h_max = rows.iter().map(|r| r.h_norm).fold(0.0, f64::max);
        let passed = dt_ratio > 0.1 && spread(&secp).0 > 1e-3 && h_max < GEODESIC_TOL && fd_error < 1e-5;
        let rep = HopfExperimentReport {
            x0: x0.clone(),
            y0: y0.clone(),
            pair: [a, b],
            bracket_ratio,
            kappa,
            dt_spread,
            dt_max,
            dt_ratio,
            fd_error,
            sec0_spread: spread(&sec0).0,
            sec_spread: spread(&secp).0,
            h_max,
            positivity_margin: secp.iter().cloned().fold(f64::INFINITY, f64::min),
            profile: rows,
            sweep: vec![],
            passed,
        };
        sweep.push(KappaRow { kappa, dt_ratio: rep.dt_ratio, sec_spread: rep.sec_spread, positivity_margin: rep.positivity_margin, passed: rep.passed });
        if report.as_ref().is_none_or(|r: &HopfExperimentReport| !r.passed) {
            report = Some(rep);
        }
    }
    let mut report = report.ok_or_else(|| Error::Invalid("no kappa evaluated".into()))?;
    report.sweep = sweep;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldClassCheck {
    pub name: String,
    pub class: FieldClass,
    /// `max |L_V g0|` on fibers.
    pub killing: f64,
    /// `max |Div V|`.
    pub divergence: f64,
    /// `max |L_V g0 - (2/n) Div V g0|`.
    pub conformal: f64,
    pub passed: bool,
}

/// Probes a catalog field's class tag on fiber grids through the given points.
pub fn verify_field_class(model: &ModelSpec, field: &SpecialField, points: &[Vec<f64>], resolution: usize) -> Result<FieldClassCheck> {
    let n = model.n() as f64;
    let mut nodes = Vec::new();
    for x in points {
        nodes.extend(model.fiber_grid(x, resolution)?);
    }
    let per = fiber_map(&nodes, |node| {
        let ctx = PointContext::new(model, &node.point)?;
        let fg = FiberGeometry::at(&ctx, MetricSource::Reference)?;
        let v = ctx.vertical_field(&field.field);
        let lie = fg.lie_derivative(&v);
        let div = fg.vertical_divergence(&v);
        let mut conf = 0.0f64;
        for a in 0..fg.n() {
            for b in 0..fg.n() {
                let want = if a == b { 2.0 * div / n } else { 0.0 };
                conf = conf.max((lie[(a, b)] - want).abs());
            }
        }
        Ok((lie.max_abs(), div.abs(), conf))
    })?;
    let killing = per.iter().map(|r| r.0).fold(0.0, f64::max);
    let divergence = per.iter().map(|r| r.1).fold(0.0, f64::max);
    let conformal = per.iter().map(|r| r.2).fold(0.0, f64::max);
    let passed = match field.class {
        FieldClass::Killing => killing < KILLING_TOL,
        FieldClass::DivergenceFree => divergence < KILLING_TOL,
        FieldClass::ConformalKilling => conformal < KILLING_TOL,
        FieldClass::Generic => killing > 1e-6,
    };
    Ok(FieldClassCheck { name: field.name.clone(), class: field.class, killing, divergence, conformal, passed })
}

/// Warped torus whose warp reads the first fiber angle: umbilical fibers with
/// mean curvature varying along the fiber.
pub fn fiber_dependent_warp(n: usize, p: usize) -> Result<ModelSpec> {
    let warp = ScalarExpr::scale(0.3, ScalarExpr::sin(ScalarExpr::sum(vec![ScalarExpr::coord(0), ScalarExpr::coord(n)])));
    let m = crate::models::build_warped_torus(n, p, warp)?;
    debug_assert!(matches!(m.kind, ModelKind::WarpedTorus { .. }));
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_flat_torus, build_hopf_s3, build_hopf_s7, build_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn s7_point(seed: u64) -> Vec<f64> {
        build_hopf_s7().sample_point(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn stencil_recovers_polynomial_derivatives() {
        let f = |t: f64| 1.0 + 2.0 * t - 3.0 * t * t + 0.5 * t.powi(5);
        let s: Vec<f64> = stencil_times(0.3, 0.01).iter().map(|t| f(*t)).collect();
        let d = stencil_derivatives(&s, 0.01);
        assert!((d.d1 - (2.0 - 1.8 + 2.5 * 0.3f64.powi(4))).abs() < 1e-9);
        assert!((d.d2 - (-6.0 + 10.0 * 0.3f64.powi(3))).abs() < 1e-7);
    }

    #[test]
    fn flat_torus_mean_second_variation_is_two_pi() {
        let m = build_flat_torus(1, 1).unwrap();
        let v = m.special_field("sin-theta1-E1").unwrap().field;
        let spec = VariationSpec::constant(vec![v], BaseFrame::Aligned);
        let s = AnalysisSettings { resolution: 32, ..Default::default() };
        let r = second_variation_jmean(&m, &[0.0, 1.0], &spec, &s).unwrap();
        assert!((r.d2_analytic - 2.0 * PI).abs() < 1e-10);
        let rep = functional_report(&m, &[0.0, 1.0], &spec, &s).unwrap();
        assert!((r.d2_fd - 2.0 * PI).abs() < 1e-4, "{:?}", rep);
        assert!(r.stencils_consistent());
        let h = second_variation_jh(&m, &[0.0, 1.0], &spec, &s).unwrap();
        // 1/2 int (2 cos)^2 = 2 pi
        assert!((h.d2_analytic - 2.0 * PI).abs() < 1e-10);
        assert!(h.rel_error() < 1e-4);
    }

    #[test]
    fn global_flat_torus_functionals() {
        let m = build_flat_torus(1, 1).unwrap();
        let v = m.special_field("sin-theta1-E1").unwrap().field;
        let s = AnalysisSettings { resolution: 8, ..Default::default() };
        let g = global_functionals(&m, &VariationSpec::constant(vec![v], BaseFrame::Aligned), &[0.1], &s).unwrap();
        // |H|^2 = t^2 cos^2 on every fiber, base length 2 pi
        assert!((g.jmean[0] - 0.01 * PI * 2.0 * PI).abs() < 1e-10, "{g:?}");
        assert!((g.jh[0] - g.jmean[0]).abs() < 1e-12);
        assert!(matches!(global_functionals(&build_hopf_s3(), &VariationSpec::zero(), &[0.0], &s), Err(Error::Unsupported(_))));
    }

    #[test]
    fn mean_functional_bounded_by_h_functional() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = AnalysisSettings { resolution: 4, ..Default::default() };
        for m in [build_hopf_s7(), fiber_dependent_warp(2, 1).unwrap()] {
            let x = m.sample_point(&mut rng);
            let spec = random_spec(&m, &x, &mut rng).unwrap();
            let f = fiber_functionals(&m, &x, &spec, &[0.0, 0.2], &s).unwrap();
            for (jh, jm) in f.jh.iter().zip(&f.jmean) {
                assert!(*jm <= m.n() as f64 * jh + 1e-12, "{jm} {jh}");
            }
        }
    }

    #[test]
    fn umbilical_warped_functionals() {
        let m = build_model("warped-torus", 2, 1).unwrap();
        let x = [0.0, 0.0, 0.8];
        let s = AnalysisSettings { resolution: 8, ..Default::default() };
        let f = fiber_functionals(&m, &x, &VariationSpec::zero(), &[0.0], &s).unwrap();
        let phi_z = 0.3 * 0.8f64.cos();
        // H = -n grad(phi); |H|^2 constant along the fiber
        let h2 = (2.0 * phi_z).powi(2);
        let vol = (2.0 * PI).powi(2) * (2.0 * 0.3 * 0.8f64.sin()).exp();
        assert!((f.jmean[0] - vol * h2).abs() < 1e-9 * vol);
        assert!((f.jh[0] - vol * h2 / 2.0).abs() < 1e-9 * vol);
    }

    #[test]
    fn criticality_on_catalog_and_warps() {
        let s = AnalysisSettings { resolution: 4, ..Default::default() };
        let r = criticality_h(&build_hopf_s7(), &s7_point(1), &s, 3).unwrap();
        assert!(r.pointwise < 1e-8 && r.integral_max < 1e-8 && r.consistent);
        let flat = criticality_h(&build_flat_torus(2, 1).unwrap(), &[0.1, 0.2, 0.3], &s, 3).unwrap();
        assert!(flat.critical());
        let s8 = AnalysisSettings { resolution: 8, ..Default::default() };
        let w = build_model("warped-torus", 1, 1).unwrap();
        assert!(criticality_h(&w, &[0.0, 0.4], &s8, 3).unwrap().critical());
        assert!(criticality_mean(&w, &[0.0, 0.4], &s8).unwrap() < 1e-10);
        let bent = fiber_dependent_warp(1, 1).unwrap();
        let r = criticality_h(&bent, &[0.0, 0.4], &s8, 3).unwrap();
        assert!(r.pointwise > 1e-2 && r.integral_max > 1e-4 && r.consistent, "{r:?}");
        assert!(criticality_mean(&bent, &[0.0, 0.4], &s8).unwrap() > 1e-2);
    }

    #[test]
    fn projectability_bridge_on_bent_warp() {
        // V(g(H, pi^* W)) = g([V, H], pi^* W) since [V, pi^* W] is vertical.
        let m = fiber_dependent_warp(2, 1).unwrap();
        let ctx = PointContext::new(&m, &[0.3, 1.1, 0.5]).unwrap();
        let fg = FiberGeometry::at(&ctx, MetricSource::Reference).unwrap();
        let hf = fg.mean_curvature_field();
        let w = lower(&fg.geo.frame_vector(2));
        let grad = fg.vertical_gradient(&fg.geo.inner_jet(&hf, &w));
        let wv: Vec<f64> = w.iter().map(|j| j.v).collect();
        for (a, ga) in grad.iter().enumerate() {
            let br = fg.geo.bracket(&lower(&fg.geo.frame_vector(a)), &hf);
            assert!((fg.geo.inner(&br, &wv) - ga).abs() < 1e-8);
        }
        assert!(grad.iter().any(|g| g.abs() > 1e-2));
    }

    #[test]
    fn flatness_refuses_high_orders() {
        let m = build_flat_torus(1, 1).unwrap();
        let r = higher_order_flatness(&m, &[0.0, 0.0], &VariationSpec::zero(), 5, &AnalysisSettings::default());
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn flatness_with_killing_then_generic_coefficient() {
        let m = build_flat_torus(1, 1).unwrap();
        let s = AnalysisSettings { resolution: 16, ..Default::default() };
        let e1 = VerticalField::Frame { index: 0 };
        let gen = m.special_field("sin-theta1-E1").unwrap().field;
        let both = VariationSpec::FieldPairs { fields: vec![vec![e1.clone(), e1.clone()]], base_frame: BaseFrame::Aligned };
        let r = higher_order_flatness(&m, &[0.0, 0.5], &both, 4, &s).unwrap();
        assert!(r.vanish_through_q && r.killing_through && r.consistent, "{r:?}");
        let mixed = VariationSpec::FieldPairs { fields: vec![vec![e1, gen]], base_frame: BaseFrame::Aligned };
        let r = higher_order_flatness(&m, &[0.0, 0.5], &mixed, 4, &s).unwrap();
        assert!(r.derivatives[..3].iter().all(|d| d.abs() < 1e-5), "{r:?}");
        // J = t^4 / 16 int |L_U g0|^2 = t^4 / 16 * 4 pi
        assert!((r.derivatives[3] - 6.0 * PI).abs() < 1e-6, "{r:?}");
        assert!(r.consistent && !r.killing_through);
    }

    #[test]
    fn oneill_on_hopf_s3() {
        let r = oneill_closure(&build_hopf_s3(), &[0.6, 0.0, 0.48, 0.64]).unwrap();
        assert!((r.base_sec - 4.0).abs() < 1e-9);
        assert!((r.horizontal_sec - 1.0).abs() < 1e-9);
        assert!((r.vertizontal_sec - 1.0).abs() < 1e-9);
        assert!((r.bracket_norm - 2.0).abs() < 1e-9);
        assert!(r.residual < 1e-7);
    }

    #[test]
    fn horizontal_variation_matches_finite_differences() {
        let m = build_hopf_s7();
        let x = s7_point(11);
        let f = ScalarExpr::sum(vec![ScalarExpr::constant(0.4), ScalarExpr::coord(2)]);
        let spec = VariationSpec::FieldPairs {
            fields: vec![
                vec![VerticalField::scaled(f, VerticalField::Xi { index: 0 }), VerticalField::Frame { index: 1 }],
                vec![VerticalField::Frame { index: 2 }],
            ],
            base_frame: natural_base_frame(&m, &x).unwrap(),
        };
        let s = AnalysisSettings::default();
        for t in [0.0, 0.15] {
            let r = horizontal_sec_variation(&m, &x, &spec, 0, 1, t, &s).unwrap();
            assert!(r.identity_residual < 1e-7, "{r:?}");
            assert!(r.d1.abs() > 1e-2 && r.d2.abs() > 1e-2);
            assert!(r.d1_error() < 1e-6 && r.d2_error() < 1e-6, "{r:?}");
            let sw = horizontal_sec_variation(&m, &x, &spec, 1, 0, t, &s).unwrap();
            assert!((sw.sec - r.sec).abs() < 1e-12 && (sw.d1 - r.d1).abs() < 1e-10 && (sw.d2 - r.d2).abs() < 1e-10);
        }
    }

    #[test]
    fn vertizontal_variation_matches_finite_differences() {
        let m = build_hopf_s7();
        let x = s7_point(12);
        let base = natural_base_frame(&m, &x).unwrap();
        let g = ScalarExpr::sum(vec![ScalarExpr::constant(0.3), ScalarExpr::base_coord(1)]);
        // t-dependent, non-commuting fiberwise Killing fields
        let spec = VariationSpec::FieldPairs {
            fields: vec![
                vec![VerticalField::scaled(g.clone(), VerticalField::Xi { index: 0 }), VerticalField::Frame { index: 1 }],
                vec![VerticalField::Frame { index: 2 }, VerticalField::Xi { index: 2 }],
                vec![VerticalField::scaled(g, VerticalField::Xi { index: 1 })],
            ],
            base_frame: base,
        };
        let s = AnalysisSettings::default();
        for t in [0.0, 0.1] {
            let r = vertizontal_sec_variation(&m, &x, &spec, 0, &[0.6, 0.0, 0.8], t, &s).unwrap();
            assert!(r.identity_residual < 1e-7, "{r:?}");
            assert!(r.d1_error() < 1e-6 && r.d2_error() < 1e-6, "{r:?}");
        }
        let non_killing = VariationSpec::constant(vec![m.special_field("x0-xi1").unwrap().field], BaseFrame::Aligned);
        assert!(matches!(vertizontal_sec_variation(&m, &x, &non_killing, 0, &[1.0, 0.0, 0.0], 0.0, &s), Err(Error::NotKilling(_))));
        let w = build_model("warped-torus", 1, 2).unwrap();
        let r = vertizontal_sec_variation(&w, &[0.1, 0.7, 0.2], &VariationSpec::zero(), 0, &[1.0], 0.0, &s);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn killing_stability_commuting_and_not() {
        let m = build_hopf_s7();
        let pts = vec![s7_point(21), s7_point(22)];
        let s = AnalysisSettings::default();
        let f = ScalarExpr::sum(vec![ScalarExpr::constant(0.5), ScalarExpr::base_coord(0)]);
        let commuting = VariationSpec::constant(
            vec![VerticalField::scaled(f, VerticalField::Xi { index: 0 }), VerticalField::Xi { index: 1 }],
            natural_base_frame(&m, &pts[0]).unwrap(),
        );
        let k = VerticalField::Frame { index: 1 };
        let r = killing_stability(&m, &pts[..1], &commuting, &k, &[0.25, 0.5], &s).unwrap();
        assert!(r.commutator < 1e-12 && r.lie_mixed < 1e-7 && r.lie_full < 1e-7, "{r:?}");
        let other = VariationSpec::constant(vec![VerticalField::Frame { index: 0 }], BaseFrame::Aligned);
        let r = killing_stability(&m, &pts, &other, &k, &[0.0, 0.3], &s).unwrap();
        assert!(r.commutator > 1.0 && r.lie_mixed > 1e-2 && r.identity_residual < 1e-5, "{r:?}");
        let bad = VerticalField::Xi { index: 0 };
        assert!(matches!(killing_stability(&m, &pts, &other, &bad, &[0.1], &s), Err(Error::NotKilling(_))));
    }

    #[test]
    fn catalog_tags_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in [build_flat_torus(2, 1).unwrap(), build_model("warped-torus", 2, 1).unwrap(), fiber_dependent_warp(2, 1).unwrap(), build_hopf_s3(), build_hopf_s7()] {
            let pts: Vec<Vec<f64>> = (0..2).map(|_| m.sample_point(&mut rng)).collect();
            for f in m.special_fields() {
                let c = verify_field_class(&m, &f, &pts, 4).unwrap();
                assert!(c.passed, "{} {:?}", m.id(), c);
            }
        }
    }
}
