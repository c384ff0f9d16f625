//! Submersion-preserving metric variations at a point.
//!
//! The varied metric is tracked through its components in the fixed adapted
//! `g0`-orthonormal frame `{E_a, e_i}`:
//!
//! ```text
//! G = [[ I, C ], [ C^T, D ]],   S = D - C^T C,
//! dC/dt = lambda S,   dD/dt = S lambda^T C + C^T lambda S,
//! ```
//!
//! with `C(0) = 0`, `D(0) = I`. The vertical block is never integrated. `S` is
//! the Gram matrix of the horizontal projections of the `e_i` and is constant
//! along the flow.

use crate::error::{Error, Result};
use crate::fields::{ScalarExpr, VerticalField};
use crate::geometry::{orthonormalize_adapted, vertical_part_frame, FrameAtPoint, LocalGeometry, MetricSource, PointContext};
use crate::jet::{Jet2, Scalar};
use crate::linalg::Mat;
use crate::models::ModelSpec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSettings {
    pub step: f64,
    pub horizon: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings { step: 1e-3, horizon: 1.0 }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }
}

/// Base fields `W_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseFrame {
    /// `W_i = pi_* e_i`, so `pi^* W_i = e_i`.
    Aligned,
    /// Gram-Schmidt of the tangential projections of fixed base-ambient vectors.
    Projected { basis: Vec<Vec<f64>> },
}

impl BaseFrame {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        match self {
            BaseFrame::Aligned => Ok(()),
            BaseFrame::Projected { basis } => {
                if basis.len() != model.p() || basis.iter().any(|b| b.len() != model.base_ambient_dim()) {
                    return Err(Error::Invalid(format!(
                        "projected base frame needs {} vectors of length {}",
                        model.p(),
                        model.base_ambient_dim()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Base fields at the projected point `y`, as base-ambient vectors.
    pub fn fields_at<S: Scalar>(&self, model: &ModelSpec, x: &[S], y: &[S]) -> Result<Vec<Vec<S>>> {
        match self {
            BaseFrame::Aligned => {
                let frame = model.frame(x);
                Ok(frame[model.n()..].iter().map(|e| model.pushforward(x, e)).collect())
            }
            BaseFrame::Projected { basis } => {
                let mut out: Vec<Vec<S>> = Vec::with_capacity(basis.len());
                for c in basis {
                    let mut w: Vec<S> = c.iter().map(|v| S::cst(*v)).collect();
                    if let Some(r) = model.base_radius() {
                        let mut cy = S::zero();
                        for (ci, yi) in c.iter().zip(y) {
                            cy += *yi * *ci;
                        }
                        for (wi, yi) in w.iter_mut().zip(y) {
                            *wi -= cy * *yi / (r * r);
                        }
                    }
                    for _ in 0..2 {
                        for u in &out {
                            let d = dot(&w, u);
                            for (wi, ui) in w.iter_mut().zip(u) {
                                *wi -= d * *ui;
                            }
                        }
                    }
                    let nw = dot(&w, &w).value().sqrt();
                    if nw < 1e-5 {
                        return Err(Error::Singular("base frame vectors are dependent at this point".into()));
                    }
                    let inv = dot(&w, &w).sqrt().recip();
                    out.push(w.into_iter().map(|v| v * inv).collect());
                }
                Ok(out)
            }
        }
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut s = S::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

/// Deformation data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VariationSpec {
    /// `lambda_{ai}` given directly; rows are vertical indices.
    Lambda { entries: Vec<Vec<ScalarExpr>> },
    /// `fields[i]` lists the coefficients of `V_i(t) = sum_k t^k V_i^(k)`;
    /// missing entries are zero.
    FieldPairs { fields: Vec<Vec<VerticalField>>, base_frame: BaseFrame },
}

impl VariationSpec {
    pub fn zero() -> Self {
        VariationSpec::FieldPairs { fields: vec![], base_frame: BaseFrame::Aligned }
    }

    /// Constant-in-`t` pairs with the given `V_i`.
    pub fn constant(fields: Vec<VerticalField>, base_frame: BaseFrame) -> Self {
        VariationSpec::FieldPairs { fields: fields.into_iter().map(|f| vec![f]).collect(), base_frame }
    }

    pub fn constant_lambda(values: &[Vec<f64>]) -> Self {
        VariationSpec::Lambda {
            entries: values.iter().map(|r| r.iter().map(|v| ScalarExpr::constant(*v)).collect()).collect(),
        }
    }

    /// Equivalent field-pair form: `V_i = sum_a lambda_{ai} E_a` with aligned `W_i`.
    pub fn to_pairs(&self, model: &ModelSpec) -> Result<(Vec<Vec<VerticalField>>, BaseFrame)> {
        self.validate(model)?;
        match self {
            VariationSpec::FieldPairs { fields, base_frame } => Ok((fields.clone(), base_frame.clone())),
            VariationSpec::Lambda { entries } => {
                let fields = (0..model.p())
                    .map(|i| {
                        let terms = (0..model.n())
                            .map(|a| VerticalField::scaled(entries[a][i].clone(), VerticalField::Frame { index: a }))
                            .collect();
                        vec![VerticalField::Sum { fields: terms }]
                    })
                    .collect();
                Ok((fields, BaseFrame::Aligned))
            }
        }
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let (n, p) = (model.n(), model.p());
        match self {
            VariationSpec::Lambda { entries } => {
                if entries.len() != n || entries.iter().any(|r| r.len() != p) {
                    return Err(Error::Invalid(format!("lambda must be {n}x{p}")));
                }
                entries.iter().flatten().try_for_each(|e| e.validate(model.ambient_dim(), model.base_ambient_dim()))
            }
            VariationSpec::FieldPairs { fields, base_frame } => {
                if fields.len() > p {
                    return Err(Error::Invalid(format!("{} vertical fields for p = {p}", fields.len())));
                }
                base_frame.validate(model)?;
                fields.iter().flatten().try_for_each(|f| f.validate(model))
            }
        }
    }

    /// Largest power of `t` appearing in the `V_i`.
    pub fn degree(&self) -> usize {
        match self {
            VariationSpec::Lambda { .. } => 0,
            VariationSpec::FieldPairs { fields, .. } => fields.iter().map(|f| f.len().saturating_sub(1)).max().unwrap_or(0),
        }
    }

    /// Evaluate at a chart point.
    pub fn at_point(&self, ctx: &PointContext<'_>) -> Result<PointVariation<Jet2>> {
        let model = ctx.model;
        let (n, p) = (model.n(), model.p());
        match self {
            VariationSpec::Lambda { entries } => {
                let lam = Mat::from_fn(n, p, |a, i| entries[a][i].eval(&ctx.x, &ctx.y));
                let fields = (0..p).map(|i| vec![(0..n).map(|a| lam[(a, i)]).collect()]).collect();
                Ok(PointVariation::new(n, p, Mat::identity(p), fields))
            }
            VariationSpec::FieldPairs { fields, base_frame } => {
                self.validate(model)?;
                let w = base_frame.fields_at(model, &ctx.x, &ctx.y)?;
                let frame = model.frame(&ctx.x);
                let pushed: Vec<Vec<Jet2>> = frame[n..].iter().map(|e| model.pushforward(&ctx.x, e)).collect();
                let lift = Mat::from_fn(p, p, |j, i| dot(&w[i], &pushed[j]));
                if lift.values().to_dmatrix().determinant().abs() < 1e-10 {
                    return Err(Error::Singular("base fields W_i are dependent at this point".into()));
                }
                let coeffs = (0..p)
                    .map(|i| match fields.get(i) {
                        Some(poly) => poly.iter().map(|f| f.coeffs(model, &ctx.x, &ctx.y)).collect(),
                        None => vec![],
                    })
                    .collect();
                Ok(PointVariation::new(n, p, lift, coeffs))
            }
        }
    }
}

/// `lambda(t) = sum_k t^k lambda_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaPoly<S: Scalar> {
    pub terms: Vec<Mat<S>>,
    n: usize,
    p: usize,
}

impl<S: Scalar> LambdaPoly<S> {
    pub fn constant(l: Mat<S>) -> Self {
        let (n, p) = (l.rows(), l.cols());
        LambdaPoly { terms: vec![l], n, p }
    }

    pub fn eval(&self, t: f64) -> Mat<S> {
        let mut out = Mat::zeros(self.n, self.p);
        let mut tk = 1.0;
        for term in &self.terms {
            out = out.add(&term.scale(tk));
            tk *= t;
        }
        out
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T + Copy) -> LambdaPoly<T> {
        LambdaPoly { terms: self.terms.iter().map(|m| m.map(f)).collect(), n: self.n, p: self.p }
    }
}

/// Variation data evaluated at one point.
#[derive(Clone, Debug)]
pub struct PointVariation<S: Scalar> {
    pub n: usize,
    pub p: usize,
    /// `L_{ji} = g_N(W_i, pi_* e_j)`; column `i` holds the `e`-coefficients of `pi^* W_i`.
    pub lift: Mat<S>,
    /// `fields[i][k]`: vertical frame coefficients of the `t^k` term of `V_i`.
    pub fields: Vec<Vec<Vec<S>>>,
    pub lambda: LambdaPoly<S>,
}

impl<S: Scalar> PointVariation<S> {
    pub fn new(n: usize, p: usize, lift: Mat<S>, fields: Vec<Vec<Vec<S>>>) -> Self {
        let deg = fields.iter().map(|f| f.len()).max().unwrap_or(0).max(1);
        let terms = (0..deg)
            .map(|k| {
                let a = Mat::from_fn(n, p, |ai, i| fields.get(i).and_then(|f| f.get(k)).map_or(S::zero(), |c| c[ai]));
                a.matmul(&lift.transpose())
            })
            .collect();
        PointVariation { n, p, lift, fields, lambda: LambdaPoly { terms, n, p } }
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T + Copy) -> PointVariation<T> {
        PointVariation {
            n: self.n,
            p: self.p,
            lift: self.lift.map(f),
            fields: self.fields.iter().map(|fi| fi.iter().map(|c| c.iter().map(|v| f(*v)).collect()).collect()).collect(),
            lambda: self.lambda.map(f),
        }
    }

    /// Vertical frame coefficients of `d^k/dt^k V_i` at time `t`.
    pub fn field_derivative(&self, i: usize, k: usize, t: f64) -> Vec<S> {
        let mut out = vec![S::zero(); self.n];
        if let Some(poly) = self.fields.get(i) {
            for (deg, c) in poly.iter().enumerate().skip(k) {
                let coef = (deg - k + 1..=deg).map(|v| v as f64).product::<f64>() * t.powi((deg - k) as i32);
                for (o, ci) in out.iter_mut().zip(c) {
                    *o += *ci * coef;
                }
            }
        }
        out
    }

    /// Adapted-frame coefficients of `pi^* W_i`.
    pub fn lift_coeffs(&self, i: usize) -> Vec<S> {
        let mut v = vec![S::zero(); self.n];
        v.extend(self.lift.col(i));
        v
    }
}

/// A point together with its evaluated variation, ready for jet integration.
#[derive(Clone, Debug)]
pub struct VariedPoint<'a> {
    pub ctx: PointContext<'a>,
    pub var: PointVariation<Jet2>,
    pub integrator: Integrator,
}

impl<'a> VariedPoint<'a> {
    pub fn new(model: &'a ModelSpec, x0: &[f64], spec: &VariationSpec, settings: IntegratorSettings) -> Result<Self> {
        let ctx = PointContext::new(model, x0)?;
        let var = spec.at_point(&ctx)?;
        Ok(VariedPoint { ctx, var, integrator: Integrator::new(settings)? })
    }

    pub fn states(&self, times: &[f64]) -> Result<Vec<MetricState<Jet2>>> {
        self.integrator.integrate_many(&self.var.lambda, times)
    }

    pub fn state(&self, t: f64) -> Result<MetricState<Jet2>> {
        self.integrator.integrate(&self.var.lambda, t)
    }

    pub fn geometry(&self, state: &MetricState<Jet2>) -> Result<LocalGeometry> {
        self.ctx.geometry(MetricSource::Frame(&state.full()))
    }

    /// Chart field of `d^k/dt^k V_i` at time `t`.
    pub fn vertical_field(&self, i: usize, k: usize, t: f64) -> Vec<Jet2> {
        let mut c = self.var.field_derivative(i, k, t);
        c.resize(self.ctx.dim(), Jet2::cst(0.0));
        self.ctx.chart_field(&c)
    }

    /// Chart field of `pi^* W_i`.
    pub fn lift_field(&self, i: usize) -> Vec<Jet2> {
        self.ctx.chart_field(&self.var.lift_coeffs(i))
    }

    /// Chart field of `P_H^t pi^* W_i`.
    pub fn projected_lift_field(&self, state: &MetricState<Jet2>, i: usize) -> Vec<Jet2> {
        self.ctx.chart_field(&projected_lift(state, &self.var.lift, i))
    }
}

/// `lambda` at `x0` and `t = 0` for the spec.
pub fn lambda_from_fields(model: &ModelSpec, x0: &[f64], spec: &VariationSpec) -> Result<Mat<f64>> {
    let ctx = PointContext::new(model, x0)?;
    Ok(spec.at_point(&ctx)?.lambda.eval(0.0).values())
}

/// Components of `g_t` in the fixed adapted `g0`-frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricState<S: Scalar> {
    pub t: f64,
    /// `g_{ai}`, n x p.
    pub c: Mat<S>,
    /// `g_{ij}`, p x p.
    pub d: Mat<S>,
}

impl<S: Scalar> MetricState<S> {
    pub fn identity(n: usize, p: usize) -> Self {
        MetricState { t: 0.0, c: Mat::zeros(n, p), d: Mat::identity(p) }
    }

    pub fn n(&self) -> usize {
        self.c.rows()
    }

    pub fn p(&self) -> usize {
        self.c.cols()
    }

    /// Horizontal Gram block `g_{ij} - sum_b g_{ib} g_{bj}`.
    pub fn horizontal_gram(&self) -> Mat<S> {
        self.d.sub(&self.c.transpose().matmul(&self.c))
    }

    pub fn full(&self) -> Mat<S> {
        let (n, p) = (self.n(), self.p());
        let mut g = Mat::identity(n + p);
        g.set_block(0, n, &self.c);
        g.set_block(n, 0, &self.c.transpose());
        g.set_block(n, n, &self.d);
        g
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T + Copy) -> MetricState<T> {
        MetricState { t: self.t, c: self.c.map(f), d: self.d.map(f) }
    }

    pub fn values(&self) -> MetricState<f64> {
        self.map(|v| v.value())
    }
}

/// `(dC/dt, dD/dt)`.
pub fn variation_rhs<S: Scalar>(state: &MetricState<S>, lambda: &Mat<S>) -> (Mat<S>, Mat<S>) {
    let s = state.horizontal_gram();
    let ls = lambda.matmul(&s);
    let ct_ls = state.c.transpose().matmul(&ls);
    (ls, ct_ls.transpose().add(&ct_ls))
}

/// Components of `B_t = d g_t / dt` in the adapted `g0`-frame.
pub fn b_tensor<S: Scalar>(state: &MetricState<S>, lambda: &Mat<S>) -> Mat<S> {
    let (n, p) = (state.n(), state.p());
    let (dc, dd) = variation_rhs(state, lambda);
    let mut b = Mat::zeros(n + p, n + p);
    b.set_block(0, n, &dc);
    b.set_block(n, 0, &dc.transpose());
    b.set_block(n, n, &dd);
    b
}

/// `B_t^sharp` with `g_t(B^sharp X, Y) = B_t(X, Y)`, columns are images of frame vectors.
pub fn b_sharp<S: Scalar>(state: &MetricState<S>, lambda: &Mat<S>) -> Result<Mat<S>> {
    let ginv = state.full().inverse().ok_or_else(|| Error::Singular("g_t".into()))?;
    Ok(ginv.matmul(&b_tensor(state, lambda)))
}

/// `P_V^t X` in adapted-frame components.
pub fn projection_vertical<S: Scalar>(state: &MetricState<S>, x: &[S]) -> Vec<S> {
    vertical_part_frame(&state.full(), state.n(), x)
}

pub fn projection_horizontal<S: Scalar>(state: &MetricState<S>, x: &[S]) -> Vec<S> {
    let v = projection_vertical(state, x);
    x.iter().zip(v).map(|(a, b)| *a - b).collect()
}

/// `max |B(X,Y) - B(P_H X, P_V Y) - B(P_H Y, P_V X)|` over frame pairs, for a
/// metric with adapted-frame components `g` and time derivative `b`.
pub fn submersion_residual(g: &Mat<f64>, b: &Mat<f64>, n: usize) -> f64 {
    let m = g.rows();
    let bil = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(b.mul_vec(y)).map(|(a, c)| a * c).sum() };
    let split = |k: usize| {
        let mut x = vec![0.0; m];
        x[k] = 1.0;
        let v = vertical_part_frame(g, n, &x);
        let h: Vec<f64> = x.iter().zip(&v).map(|(a, c)| a - c).collect();
        (x, h, v)
    };
    let parts: Vec<_> = (0..m).map(split).collect();
    let mut worst = 0.0f64;
    for (x, hx, vx) in &parts {
        for (y, hy, vy) in &parts {
            let r = bil(x, y) - bil(hx, vy) - bil(hy, vx);
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// `g_t(P_H pi^* W_i, P_H pi^* W_j)` for the lifts with coefficients `lift`.
pub fn projected_lift_gram<S: Scalar>(state: &MetricState<S>, lift: &Mat<S>) -> Mat<S> {
    lift.transpose().matmul(&state.horizontal_gram()).matmul(lift)
}

/// `P_H^t pi^* W_i` in adapted-frame components: `(-(C L)_{.i}, L_{.i})`.
pub fn projected_lift<S: Scalar>(state: &MetricState<S>, lift: &Mat<S>, i: usize) -> Vec<S> {
    let cl = state.c.matmul(lift);
    let mut v: Vec<S> = (0..state.n()).map(|a| -cl[(a, i)]).collect();
    v.extend(lift.col(i));
    v
}

#[derive(Clone, Debug)]
struct Flow<S: Scalar> {
    c: Mat<S>,
    d: Mat<S>,
    /// Evolving horizontal frame in adapted `g0`-frame components, (n+p) x p.
    phi: Option<Mat<S>>,
}

impl<S: Scalar> Flow<S> {
    fn axpy(&self, h: f64, k: &Flow<S>) -> Flow<S> {
        Flow {
            c: self.c.add(&k.c.scale(h)),
            d: self.d.add(&k.d.scale(h)),
            phi: self.phi.as_ref().zip(k.phi.as_ref()).map(|(a, b)| a.add(&b.scale(h))),
        }
    }

    fn state(&self, t: f64) -> MetricState<S> {
        MetricState { t, c: self.c.clone(), d: self.d.clone() }
    }

    fn rhs(&self, t: f64, lambda: &LambdaPoly<S>) -> Flow<S> {
        let st = self.state(t);
        let l = lambda.eval(t);
        let (dc, dd) = variation_rhs(&st, &l);
        let phi = self.phi.as_ref().map(|phi| {
            let g = st.full();
            let n = st.n();
            // dg/dt = B, and B^sharp = G^{-1} B
            let bs = g.inverse().expect("g_t positive definite").matmul(&b_tensor(&st, &l));
            let cols: Vec<Vec<S>> = (0..phi.cols())
                .map(|i| {
                    let w = bs.mul_vec(&phi.col(i));
                    let pv = vertical_part_frame(&g, n, &w);
                    w.iter().zip(&pv).map(|(a, b)| (*a + *b) * -0.5).collect()
                })
                .collect();
            Mat::from_cols(&cols)
        });
        Flow { c: dc, d: dd, phi }
    }
}

/// RK4 integrator for the component flow.
#[derive(Clone, Copy, Debug)]
pub struct Integrator {
    pub settings: IntegratorSettings,
}

/// Result of a frame-tracking integration.
#[derive(Clone, Debug)]
pub struct FramedState<S: Scalar> {
    pub state: MetricState<S>,
    /// `e_i(t)` as columns in adapted `g0`-frame components.
    pub frame: Mat<S>,
}

impl Integrator {
    pub fn new(settings: IntegratorSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Integrator { settings })
    }

    fn check_horizon(&self, t: f64) -> Result<()> {
        if t.abs() > self.settings.horizon * (1.0 + 1e-12) {
            return Err(Error::Horizon { requested: t.abs(), horizon: self.settings.horizon });
        }
        Ok(())
    }

    fn advance<S: Scalar>(&self, mut y: Flow<S>, t0: f64, t1: f64, lambda: &LambdaPoly<S>) -> Result<Flow<S>> {
        let steps = ((t1 - t0).abs() / self.settings.step).ceil().max(0.0) as usize;
        if steps == 0 {
            return Ok(y);
        }
        let h = (t1 - t0) / steps as f64;
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let k1 = y.rhs(t, lambda);
            let k2 = y.axpy(0.5 * h, &k1).rhs(t + 0.5 * h, lambda);
            let k3 = y.axpy(0.5 * h, &k2).rhs(t + 0.5 * h, lambda);
            let k4 = y.axpy(h, &k3).rhs(t + h, lambda);
            let next = y.axpy(h / 6.0, &k1).axpy(h / 3.0, &k2).axpy(h / 3.0, &k3).axpy(h / 6.0, &k4);
            let s = next.d.sub(&next.c.transpose().matmul(&next.c)).values();
            if !s.max_abs().is_finite() || !s.is_positive_definite() {
                return Err(Error::NotPositiveDefinite { reached: t.abs() });
            }
            y = next;
        }
        Ok(y)
    }

    pub fn integrate<S: Scalar>(&self, lambda: &LambdaPoly<S>, t: f64) -> Result<MetricState<S>> {
        Ok(self.integrate_many(lambda, &[t])?.remove(0))
    }

    /// States at several times, reusing one path per sign of `t`.
    pub fn integrate_many<S: Scalar>(&self, lambda: &LambdaPoly<S>, times: &[f64]) -> Result<Vec<MetricState<S>>> {
        let (n, p) = (lambda.n, lambda.p);
        for t in times {
            self.check_horizon(*t)?;
        }
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[a].abs().total_cmp(&times[b].abs()));
        let mut out: Vec<Option<MetricState<S>>> = vec![None; times.len()];
        for sign in [1.0, -1.0] {
            let mut y = Flow { c: Mat::zeros(n, p), d: Mat::identity(p), phi: None };
            let mut t_prev = 0.0;
            for &k in &order {
                let t = times[k];
                if t * sign < 0.0 || (t == 0.0 && sign < 0.0) {
                    continue;
                }
                y = self.advance(y, t_prev, t, lambda)?;
                t_prev = t;
                out[k] = Some(y.state(t));
            }
        }
        Ok(out.into_iter().map(|s| s.expect("every time visited")).collect())
    }

    /// Integrate the metric together with the evolving horizontal frame.
    pub fn integrate_framed<S: Scalar>(&self, lambda: &LambdaPoly<S>, t: f64) -> Result<FramedState<S>> {
        self.check_horizon(t)?;
        let (n, p) = (lambda.n, lambda.p);
        let mut phi = Mat::zeros(n + p, p);
        for i in 0..p {
            phi[(n + i, i)] = S::one();
        }
        let y = Flow { c: Mat::zeros(n, p), d: Mat::identity(p), phi: Some(phi) };
        let y = self.advance(y, 0.0, t, lambda)?;
        Ok(FramedState { state: y.state(t), frame: y.phi.expect("frame tracked") })
    }
}

/// Metric components at `x0` after integrating the spec to `t`.
pub fn integrate_metric(model: &ModelSpec, x0: &[f64], spec: &VariationSpec, t: f64, settings: IntegratorSettings) -> Result<MetricState<f64>> {
    let ctx = PointContext::new(model, x0)?;
    let pv = spec.at_point(&ctx)?.map(|v| v.value());
    Integrator::new(settings)?.integrate(&pv.lambda, t)
}

/// `g_t`-orthonormal adapted frame obtained by evolving `{E_a, e_i}`.
pub fn evolve_frame(model: &ModelSpec, x0: &[f64], spec: &VariationSpec, t: f64, settings: IntegratorSettings) -> Result<FrameAtPoint> {
    let ctx = PointContext::new(model, x0)?;
    let pv = spec.at_point(&ctx)?.map(|v| v.value());
    let fs = Integrator::new(settings)?.integrate_framed(&pv.lambda, t)?;
    let (n, m) = (model.n(), model.dim());
    let mut vectors: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let mut v = vec![0.0; m];
            v[a] = 1.0;
            v
        })
        .collect();
    vectors.extend((0..model.p()).map(|i| fs.frame.col(i)));
    Ok(FrameAtPoint { vectors, n, orthonormal: true, t })
}

/// Gram-Schmidt alternative to [`evolve_frame`], used as a cross-check.
pub fn orthonormal_frame_at(state: &MetricState<f64>) -> Result<FrameAtPoint> {
    let m = state.n() + state.p();
    let raw: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let mut v = vec![0.0; m];
            v[k] = 1.0;
            v
        })
        .collect();
    orthonormalize_adapted(&state.full(), state.n(), &raw, state.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_flat_torus, build_hopf_s3};

    fn closed_form_error(step: f64) -> f64 {
        let it = Integrator::new(IntegratorSettings { step, horizon: 1.0 }).unwrap();
        let lam = LambdaPoly::constant(Mat::from_fn(1, 1, |_, _| 0.9));
        let s = it.integrate(&lam, 1.0).unwrap();
        (s.c[(0, 0)] - 0.9).abs().max((s.d[(0, 0)] - 1.81).abs())
    }

    #[test]
    fn closed_form_and_conservation() {
        let it = Integrator::new(IntegratorSettings::default()).unwrap();
        let lam = LambdaPoly::constant(Mat::from_fn(1, 1, |_, _| 0.5));
        let s = it.integrate(&lam, 1.0).unwrap();
        assert!((s.c[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((s.d[(0, 0)] - 1.25).abs() < 1e-9);
        assert!((s.horizontal_gram()[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let (e1, e2) = (closed_form_error(0.2), closed_form_error(0.1));
        let ratio = e1 / e2;
        assert!(e2 > 0.0 && (ratio - 16.0).abs() < 3.0, "ratio {ratio}");
    }

    #[test]
    fn rhs_at_identity_and_single_index() {
        let lam = Mat::from_fn(2, 3, |a, i| (a + 2 * i) as f64 * 0.1);
        let (dc, dd) = variation_rhs(&MetricState::identity(2, 3), &lam);
        assert_eq!(dc, lam);
        assert_eq!(dd.max_abs(), 0.0);
        let st = MetricState { t: 0.0, c: Mat::from_fn(1, 1, |_, _| 0.3), d: Mat::from_fn(1, 1, |_, _| 1.4) };
        let (dc, dd) = variation_rhs(&st, &Mat::from_fn(1, 1, |_, _| 0.7));
        let w = 1.4 - 0.09;
        assert!((dc[(0, 0)] - 0.7 * w).abs() < 1e-15);
        assert!((dd[(0, 0)] - 2.0 * 0.7 * 0.3 * w).abs() < 1e-15);
    }

    #[test]
    fn horizon_and_step_are_enforced() {
        assert!(Integrator::new(IntegratorSettings { step: -1.0, horizon: 1.0 }).is_err());
        let it = Integrator::new(IntegratorSettings::default()).unwrap();
        let lam = LambdaPoly::constant(Mat::<f64>::zeros(1, 1));
        assert!(matches!(it.integrate(&lam, 1.5), Err(Error::Horizon { .. })));
    }

    #[test]
    fn b_sharp_of_vertical_is_horizontal() {
        let st = MetricState { t: 0.3, c: Mat::from_fn(1, 2, |_, i| 0.2 - 0.3 * i as f64), d: Mat::from_fn(2, 2, |i, j| if i == j { 1.3 } else { 0.1 }) };
        let lam = Mat::from_fn(1, 2, |_, i| 0.4 + i as f64);
        let bs = b_sharp(&st, &lam).unwrap();
        let g = st.full();
        let v = bs.col(0);
        assert!(g.mul_vec(&v)[0].abs() < 1e-12);
        let b = b_tensor(&st, &lam);
        for k in 0..3 {
            let gb: f64 = (0..3).map(|l| g[(k, l)] * bs[(l, 2)]).sum();
            assert!((gb - b[(k, 2)]).abs() < 1e-12);
        }
    }

    #[test]
    fn violating_path_is_detected() {
        let g = Mat::<f64>::identity(3);
        let mut b = Mat::<f64>::zeros(3, 3);
        b[(1, 2)] = 0.7;
        b[(2, 1)] = 0.7;
        assert!((submersion_residual(&g, &b, 1) - 0.7).abs() < 1e-15);
        let st = MetricState::<f64>::identity(1, 2);
        let lam = Mat::from_fn(1, 2, |_, i| 1.0 + i as f64);
        assert!(submersion_residual(&st.full(), &b_tensor(&st, &lam), 1) < 1e-15);
    }

    #[test]
    fn aligned_fields_give_lambda_directly() {
        let m = build_flat_torus(1, 2).unwrap();
        let spec = VariationSpec::constant(vec![VerticalField::scaled(ScalarExpr::sin(ScalarExpr::coord(0)), VerticalField::Frame { index: 0 })], BaseFrame::Aligned);
        let lam = lambda_from_fields(&m, &[0.4, 1.0, 2.0], &spec).unwrap();
        assert!((lam[(0, 0)] - 0.4f64.sin()).abs() < 1e-15);
        assert_eq!(lam[(0, 1)], 0.0);
        assert_eq!(lambda_from_fields(&m, &[0.4, 1.0, 2.0], &VariationSpec::zero()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn hopf_s3_lambda_matches_dense_solve() {
        let m = build_hopf_s3();
        let x0 = [0.5, 0.5, -0.5, 0.5];
        let basis = vec![vec![1.0, 0.2, 0.0], vec![0.0, 1.0, 0.3]];
        let spec = VariationSpec::constant(vec![VerticalField::Frame { index: 0 }], BaseFrame::Projected { basis: basis.clone() });
        let lam = lambda_from_fields(&m, &x0, &spec).unwrap();
        // solve sum_j lambda_j pi_* e_j = W_1 in the base tangent plane by least squares
        let frame = m.frame(&x0[..]);
        let pe: Vec<Vec<f64>> = frame[1..].iter().map(|e| m.pushforward(&x0[..], e)).collect();
        let y = m.project(&x0[..]);
        let mut w = basis[0].clone();
        let cy: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        for (wi, yi) in w.iter_mut().zip(&y) {
            *wi -= cy * yi / 0.25;
        }
        let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = nalgebra::DMatrix::from_fn(3, 2, |r, c| pe[c][r]);
        let rhs = nalgebra::DVector::from_fn(3, |r, _| w[r] / nw);
        let sol = (a.transpose() * &a).lu().solve(&(a.transpose() * rhs)).unwrap();
        assert!((lam[(0, 0)] - sol[0]).abs() < 1e-12 && (lam[(0, 1)] - sol[1]).abs() < 1e-12);
    }

    #[test]
    fn frame_stays_orthonormal() {
        let it = Integrator::new(IntegratorSettings::default()).unwrap();
        let lam = LambdaPoly::constant(Mat::from_fn(2, 3, |a, i| 0.3 * (a as f64 - i as f64) + 0.1));
        let fs = it.integrate_framed(&lam, 0.7).unwrap();
        let g = fs.state.full();
        let mut cols: Vec<Vec<f64>> = (0..2).map(|a| (0..5).map(|k| (k == a) as i32 as f64).collect()).collect();
        cols.extend((0..3).map(|i| fs.frame.col(i)));
        let f = FrameAtPoint { vectors: cols, n: 2, orthonormal: true, t: 0.7 };
        assert!(f.gram_deviation(&g) < 1e-10);
    }
}
