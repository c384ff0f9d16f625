//! Pointwise differential geometry in a tangent-graph chart.
//!
//! Everything is evaluated at the chart center `u = 0`. Vector fields enter as
//! chart components carried by jets, so one derivative is available for
//! brackets and covariant derivatives. Because chart axes are the adapted frame
//! at the center, chart components at the center equal adapted-frame components.

use crate::error::{Error, Result};
use crate::fields::{ScalarExpr, VerticalField};
use crate::jet::{Differentiable, Jet1, Jet2, Scalar};
use crate::linalg::Mat;
use crate::models::{Chart, ModelSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameLabel {
    /// Coordinate basis of the chart at its center.
    Chart,
    /// Adapted frame `{E_a, e_i}` at the point.
    Adapted,
}

/// Multi-index array; the first `upper` indices are contravariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorComponents {
    pub dim: usize,
    pub upper: usize,
    pub lower: usize,
    pub frame: FrameLabel,
    pub data: Vec<f64>,
}

impl TensorComponents {
    pub fn zeros(dim: usize, upper: usize, lower: usize, frame: FrameLabel) -> Self {
        TensorComponents { dim, upper, lower, frame, data: vec![0.0; dim.pow((upper + lower) as u32)] }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.upper + self.lower);
        idx.iter().fold(0, |acc, i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Metric, frame and connection data at a chart center.
#[derive(Clone, Debug)]
pub struct LocalGeometry {
    m: usize,
    n: usize,
    frame: Mat<Jet2>,
    frame_inv: Mat<Jet2>,
    g_frame: Mat<Jet2>,
    metric: Mat<Jet2>,
    gamma: Vec<Jet1>,
}

impl LocalGeometry {
    /// Geometry of the metric whose components in the frame `frame` (columns,
    /// chart components) are `g_frame`; the first `n` frame vectors are vertical.
    pub fn from_frame(frame: Mat<Jet2>, g_frame: Mat<Jet2>, n: usize) -> Result<Self> {
        let m = frame.rows();
        let frame_inv = frame.inverse().ok_or_else(|| Error::Singular("adapted frame in chart".into()))?;
        let metric = frame_inv.transpose().matmul(&g_frame).matmul(&frame_inv);
        Self::assemble(m, n, frame, frame_inv, g_frame, metric)
    }

    /// Geometry of a metric given directly in chart components.
    pub fn from_chart_metric(metric: Mat<Jet2>) -> Result<Self> {
        let m = metric.rows();
        let id = Mat::identity(m);
        Self::assemble(m, 0, id.clone(), id, metric.clone(), metric)
    }

    fn assemble(m: usize, n: usize, frame: Mat<Jet2>, frame_inv: Mat<Jet2>, g_frame: Mat<Jet2>, metric: Mat<Jet2>) -> Result<Self> {
        if !metric.values().is_positive_definite() {
            return Err(Error::Singular("metric is not positive definite".into()));
        }
        let ginv = metric.lower().inverse().ok_or_else(|| Error::Singular("metric".into()))?;
        let dg: Vec<Mat<Jet1>> = (0..m).map(|r| metric.partial(r)).collect();
        let mut gamma = vec![Jet1::cst(0.0); m * m * m];
        for mu in 0..m {
            for nu in 0..m {
                for rho in nu..m {
                    let mut s = Jet1::cst(0.0);
                    for sg in 0..m {
                        let k = dg[nu][(sg, rho)] + dg[rho][(sg, nu)] - dg[sg][(nu, rho)];
                        s += ginv[(mu, sg)] * k;
                    }
                    s = s * 0.5;
                    gamma[(mu * m + nu) * m + rho] = s;
                    gamma[(mu * m + rho) * m + nu] = s;
                }
            }
        }
        Ok(LocalGeometry { m, n, frame, frame_inv, g_frame, metric, gamma })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn gidx(&self, mu: usize, nu: usize, rho: usize) -> usize {
        (mu * self.m + nu) * self.m + rho
    }

    pub fn metric_chart(&self) -> Mat<f64> {
        self.metric.values()
    }

    pub fn metric_chart_jet(&self) -> &Mat<Jet2> {
        &self.metric
    }

    pub fn metric_frame(&self) -> Mat<f64> {
        self.g_frame.values()
    }

    pub fn metric_frame_jet(&self) -> &Mat<Jet2> {
        &self.g_frame
    }

    pub fn frame_jet(&self) -> &Mat<Jet2> {
        &self.frame
    }

    pub fn christoffel(&self) -> TensorComponents {
        let m = self.m;
        let mut t = TensorComponents::zeros(m, 1, 2, FrameLabel::Chart);
        t.data = self.gamma.iter().map(|g| g.v).collect();
        debug_assert_eq!(t.data.len(), m * m * m);
        t
    }

    /// Max of `|d_r g_{mn} - Gamma^l_{rm} g_{ln} - Gamma^l_{rn} g_{ml}|`.
    pub fn compatibility_residual(&self) -> f64 {
        let m = self.m;
        let g = self.metric_chart();
        let mut worst = 0.0f64;
        for r in 0..m {
            let dg = self.metric.partial(r);
            for a in 0..m {
                for b in 0..m {
                    let mut s = dg[(a, b)].v;
                    for l in 0..m {
                        s -= self.gamma[self.gidx(l, r, a)].v * g[(l, b)] + self.gamma[self.gidx(l, r, b)].v * g[(a, l)];
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
        worst
    }

    /// `R^rho_{sigma mu nu}` with `R(X,Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z`.
    pub fn riemann_mixed(&self) -> TensorComponents {
        let m = self.m;
        let mut t = TensorComponents::zeros(m, 1, 3, FrameLabel::Chart);
        let g0: Vec<f64> = self.gamma.iter().map(|g| g.v).collect();
        for r in 0..m {
            for s in 0..m {
                for mu in 0..m {
                    for nu in (mu + 1)..m {
                        let mut v = self.gamma[self.gidx(r, nu, s)].g[mu] - self.gamma[self.gidx(r, mu, s)].g[nu];
                        for l in 0..m {
                            v += g0[self.gidx(r, mu, l)] * g0[self.gidx(l, nu, s)] - g0[self.gidx(r, nu, l)] * g0[self.gidx(l, mu, s)];
                        }
                        t.set(&[r, s, mu, nu], v);
                        t.set(&[r, s, nu, mu], -v);
                    }
                }
            }
        }
        t
    }

    /// Fully covariant `R_{rho sigma mu nu} = g_{rho l} R^l_{sigma mu nu}`.
    pub fn riemann(&self) -> TensorComponents {
        let m = self.m;
        let mixed = self.riemann_mixed();
        let g = self.metric_chart();
        let mut t = TensorComponents::zeros(m, 0, 4, FrameLabel::Chart);
        for r in 0..m {
            for s in 0..m {
                for mu in 0..m {
                    for nu in 0..m {
                        let v: f64 = (0..m).map(|l| g[(r, l)] * mixed.get(&[l, s, mu, nu])).sum();
                        t.set(&[r, s, mu, nu], v);
                    }
                }
            }
        }
        t
    }

    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let g = &self.metric;
        let mut s = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                s += g[(i, j)].v * x[i] * y[j];
            }
        }
        s
    }

    pub fn inner_jet(&self, x: &[Jet1], y: &[Jet1]) -> Jet1 {
        let mut s = Jet1::cst(0.0);
        for i in 0..self.m {
            for j in 0..self.m {
                s += self.metric[(i, j)].lower() * x[i] * y[j];
            }
        }
        s
    }

    /// Sectional curvature of the plane spanned by chart vectors `x`, `y`.
    pub fn sectional(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.sectional_with(&self.riemann(), x, y)
    }

    pub fn sectional_with(&self, riem: &TensorComponents, x: &[f64], y: &[f64]) -> Result<f64> {
        let den = self.inner(x, x) * self.inner(y, y) - self.inner(x, y).powi(2);
        if den.abs() < 1e-24 {
            return Err(Error::DegeneratePlane(den.abs().sqrt()));
        }
        let m = self.m;
        let mut num = 0.0;
        for r in 0..m {
            for s in 0..m {
                let a = x[r] * y[s];
                if a == 0.0 {
                    continue;
                }
                for mu in 0..m {
                    for nu in 0..m {
                        num += riem.get(&[r, s, mu, nu]) * a * x[mu] * y[nu];
                    }
                }
            }
        }
        Ok(num / den)
    }

    /// `[X, Y]^mu = X^nu d_nu Y^mu - Y^nu d_nu X^mu`, one order lower.
    pub fn bracket<D: Differentiable>(&self, x: &[D], y: &[D]) -> Vec<D::Lower> {
        (0..self.m)
            .map(|mu| {
                let mut s = D::Lower::zero();
                for nu in 0..self.m {
                    s += x[nu].lower() * y[mu].partial(nu) - y[nu].lower() * x[mu].partial(nu);
                }
                s
            })
            .collect()
    }

    /// `nabla_X Y` for a jet field `Y`, keeping one derivative.
    pub fn nabla(&self, x: &[Jet1], y: &[Jet2]) -> Vec<Jet1> {
        let m = self.m;
        (0..m)
            .map(|mu| {
                let mut s = Jet1::cst(0.0);
                for nu in 0..m {
                    s += x[nu] * y[mu].partial(nu);
                    for r in 0..m {
                        s += self.gamma[self.gidx(mu, nu, r)] * x[nu] * y[r].lower();
                    }
                }
                s
            })
            .collect()
    }

    /// `nabla_X Y` at the center for a first-order field `Y`.
    pub fn nabla_value(&self, x: &[f64], y: &[Jet1]) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|mu| {
                let mut s = 0.0;
                for nu in 0..m {
                    s += x[nu] * y[mu].g[nu];
                    for r in 0..m {
                        s += self.gamma[self.gidx(mu, nu, r)].v * x[nu] * y[r].v;
                    }
                }
                s
            })
            .collect()
    }

    /// Chart field with the given adapted-frame coefficients.
    pub fn field_from_frame<S: Scalar>(&self, coeffs: &[S]) -> Vec<S>
    where
        Jet2: IntoOrder<S>,
    {
        (0..self.m)
            .map(|mu| {
                let mut s = S::zero();
                for (k, c) in coeffs.iter().enumerate() {
                    s += Jet2::into_order(self.frame[(mu, k)]) * *c;
                }
                s
            })
            .collect()
    }

    pub fn frame_vector(&self, k: usize) -> Vec<Jet2> {
        self.frame.col(k)
    }

    /// Adapted-frame components of a chart vector (any jet order).
    pub fn to_frame<S: Scalar>(&self, v: &[S]) -> Vec<S>
    where
        Jet2: IntoOrder<S>,
    {
        (0..self.m)
            .map(|k| {
                let mut s = S::zero();
                for (mu, c) in v.iter().enumerate() {
                    s += Jet2::into_order(self.frame_inv[(k, mu)]) * *c;
                }
                s
            })
            .collect()
    }

    /// `g`-orthogonal projection onto the vertical span, in chart components.
    pub fn vertical_part<S: Scalar>(&self, v: &[S]) -> Vec<S>
    where
        Jet2: IntoOrder<S>,
    {
        let f = self.to_frame(v);
        let g = self.g_frame.map(Jet2::into_order);
        let pv = vertical_part_frame(&g, self.n, &f);
        self.field_from_frame(&pv)
    }

    pub fn horizontal_part<S: Scalar>(&self, v: &[S]) -> Vec<S>
    where
        Jet2: IntoOrder<S>,
    {
        let pv = self.vertical_part(v);
        v.iter().zip(pv).map(|(a, b)| *a - b).collect()
    }
}

/// Truncation of a second-order jet to a lower order.
pub trait IntoOrder<T> {
    fn into_order(self) -> T;
}

impl IntoOrder<Jet2> for Jet2 {
    fn into_order(self) -> Jet2 {
        self
    }
}

impl IntoOrder<Jet1> for Jet2 {
    fn into_order(self) -> Jet1 {
        self.lower()
    }
}

impl IntoOrder<f64> for Jet2 {
    fn into_order(self) -> f64 {
        self.v
    }
}

/// Vertical part of a vector in adapted-frame components for the metric with
/// frame components `g` (first `n` indices vertical).
pub fn vertical_part_frame<S: Scalar>(g: &Mat<S>, n: usize, v: &[S]) -> Vec<S> {
    let m = g.rows();
    let w: Vec<S> = (0..n)
        .map(|a| {
            let mut s = S::zero();
            for (k, vk) in v.iter().enumerate() {
                s += g[(a, k)] * *vk;
            }
            s
        })
        .collect();
    let gvv = g.block(0, 0, n, n);
    let c = match gvv.inverse() {
        Some(inv) => inv.mul_vec(&w),
        None => w,
    };
    let mut out = vec![S::zero(); m];
    out[..n].copy_from_slice(&c);
    out
}

/// Orthonormal adapted frame produced by Gram-Schmidt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameAtPoint {
    /// Columns in adapted-frame components at the point.
    pub vectors: Vec<Vec<f64>>,
    pub n: usize,
    pub orthonormal: bool,
    /// Time of the metric the orthonormality refers to (0 for `g0`).
    pub t: f64,
}

impl FrameAtPoint {
    pub fn gram_deviation(&self, g: &Mat<f64>) -> f64 {
        let m = self.vectors.len();
        let mut worst = 0.0f64;
        for a in 0..m {
            for b in 0..m {
                let gv = g.mul_vec(&self.vectors[b]);
                let s: f64 = self.vectors[a].iter().zip(&gv).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - want).abs());
            }
        }
        worst
    }
}

/// Gram-Schmidt in the metric with adapted-frame components `g`; the first `n`
/// raw vectors must be vertical and stay vertical.
pub fn orthonormalize_adapted(g: &Mat<f64>, n: usize, raw: &[Vec<f64>], t: f64) -> Result<FrameAtPoint> {
    let m = g.rows();
    if raw.len() != m || raw.iter().any(|v| v.len() != m) {
        return Err(Error::Invalid(format!("expected {m} vectors of length {m}")));
    }
    for (a, v) in raw.iter().take(n).enumerate() {
        let scale = v.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
        if v[n..].iter().any(|x| x.abs() > 1e-10 * scale) {
            return Err(Error::Invalid(format!("raw vector {a} is not vertical")));
        }
    }
    let ip = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(g.mul_vec(y)).map(|(a, b)| a * b).sum() };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(m);
    for v in raw {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let c = ip(&w, u);
                for (wi, ui) in w.iter_mut().zip(u) {
                    *wi -= c * ui;
                }
            }
        }
        let orig = ip(v, v).sqrt();
        let nw = ip(&w, &w).sqrt();
        if !(nw > 1e-10 * orig.max(1e-300)) {
            return Err(Error::Singular("rank-deficient raw frame".into()));
        }
        out.push(w.iter().map(|x| x / nw).collect());
    }
    Ok(FrameAtPoint { vectors: out, n, orthonormal: true, t })
}

/// Chart, jet-valued point and adapted frame at a point of a model.
#[derive(Clone, Debug)]
pub struct PointContext<'a> {
    pub model: &'a ModelSpec,
    pub chart: Chart,
    /// Ambient coordinates as jets in the chart variables.
    pub x: Vec<Jet2>,
    /// Projection of `x` as jets.
    pub y: Vec<Jet2>,
    pub frame: Mat<Jet2>,
}

/// Which metric a geometric quantity refers to.
#[derive(Clone, Copy, Debug)]
pub enum MetricSource<'a> {
    Reference,
    /// Adapted-frame components as jets in the chart variables.
    Frame(&'a Mat<Jet2>),
}

impl<'a> PointContext<'a> {
    pub fn new(model: &'a ModelSpec, x0: &[f64]) -> Result<Self> {
        let chart = model.chart_at(x0)?;
        let x = chart.jet_point();
        let y = model.project(&x);
        let frame = model.frame_in_chart(&chart, &x);
        Ok(PointContext { model, chart, x, y, frame })
    }

    pub fn center(&self) -> &[f64] {
        &self.chart.center
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn geometry(&self, source: MetricSource<'_>) -> Result<LocalGeometry> {
        let g = match source {
            MetricSource::Reference => Mat::identity(self.dim()),
            MetricSource::Frame(g) => g.clone(),
        };
        LocalGeometry::from_frame(self.frame.clone(), g, self.model.n())
    }

    /// Adapted-frame coefficients (length `n + p`) of a vertical field.
    pub fn vertical_coeffs(&self, f: &VerticalField) -> Vec<Jet2> {
        let mut c = f.coeffs(self.model, &self.x, &self.y);
        c.resize(self.dim(), Jet2::cst(0.0));
        c
    }

    /// Chart components of a field with the given adapted-frame coefficients.
    pub fn chart_field(&self, coeffs: &[Jet2]) -> Vec<Jet2> {
        self.frame.mul_vec(coeffs)
    }

    pub fn vertical_field(&self, f: &VerticalField) -> Vec<Jet2> {
        self.chart_field(&self.vertical_coeffs(f))
    }

    pub fn frame_field(&self, f: &FrameField) -> Vec<Jet2> {
        let c: Vec<Jet2> = f.coeffs.iter().map(|e| e.eval(&self.x, &self.y)).collect();
        self.chart_field(&c)
    }

    pub fn scalar(&self, f: &ScalarExpr) -> Jet2 {
        f.eval(&self.x, &self.y)
    }
}

/// Vector field `sum_k coeffs[k] * frame_k` on the total space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameField {
    pub coeffs: Vec<ScalarExpr>,
}

impl FrameField {
    pub fn frame_vector(m: usize, k: usize) -> Self {
        FrameField { coeffs: (0..m).map(|j| ScalarExpr::constant(if j == k { 1.0 } else { 0.0 })).collect() }
    }
}

/// Value, gradient and Hessian of `f` in the chart centered at `x0`.
pub fn differentiate_scalar_field(model: &ModelSpec, x0: &[f64], f: &ScalarExpr) -> Result<Jet2> {
    f.validate(model.ambient_dim(), model.base_ambient_dim())?;
    let ctx = PointContext::new(model, x0)?;
    Ok(ctx.scalar(f))
}

/// Metric components in the chart basis or the adapted frame.
pub fn metric_components(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>, basis: FrameLabel) -> Result<Mat<f64>> {
    let geo = PointContext::new(model, x0)?.geometry(source)?;
    Ok(match basis {
        FrameLabel::Chart => geo.metric_chart(),
        FrameLabel::Adapted => geo.metric_frame(),
    })
}

pub fn christoffel_symbols(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>) -> Result<TensorComponents> {
    Ok(PointContext::new(model, x0)?.geometry(source)?.christoffel())
}

pub fn riemann_tensor(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>) -> Result<TensorComponents> {
    Ok(PointContext::new(model, x0)?.geometry(source)?.riemann())
}

/// Sectional curvature of the plane spanned by adapted-frame vectors `x`, `y`.
pub fn sectional_curvature(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>, x: &[f64], y: &[f64]) -> Result<f64> {
    PointContext::new(model, x0)?.geometry(source)?.sectional(x, y)
}

/// Lie bracket at `x0`, in adapted-frame components.
pub fn lie_bracket(model: &ModelSpec, x0: &[f64], x: &FrameField, y: &FrameField) -> Result<Vec<f64>> {
    let ctx = PointContext::new(model, x0)?;
    let geo = ctx.geometry(MetricSource::Reference)?;
    let b = geo.bracket(&ctx.frame_field(x), &ctx.frame_field(y));
    let v: Vec<f64> = b.iter().map(|j| j.v).collect();
    Ok(geo.to_frame(&v))
}

/// `nabla_X Y` at `x0`, in adapted-frame components.
pub fn covariant_derivative(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>, x: &FrameField, y: &FrameField) -> Result<Vec<f64>> {
    let ctx = PointContext::new(model, x0)?;
    let geo = ctx.geometry(source)?;
    let xf: Vec<Jet1> = ctx.frame_field(x).iter().map(|j| j.lower()).collect();
    let v: Vec<f64> = geo.nabla(&xf, &ctx.frame_field(y)).iter().map(|j| j.v).collect();
    Ok(geo.to_frame(&v))
}
