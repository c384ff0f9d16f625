//! Catalog of Riemannian submersions with closed-form adapted frames.

use crate::error::{Error, Result};
use crate::fields::{ScalarExpr, VerticalField};
use crate::jet::{Jet2, Scalar};
use crate::linalg::Mat;
use crate::quadrature::{gauss_legendre, periodic_trapezoid};
use crate::quat::Quat;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    /// Flat `T^(n+p)`, projection onto the last `p` angles.
    FlatTorus { n: usize, p: usize },
    /// `exp(2 warp) d theta^2 + d z^2` on `T^(n+p)`.
    WarpedTorus { n: usize, p: usize, warp: ScalarExpr },
    HopfS3,
    HopfS7,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldClass {
    Killing,
    DivergenceFree,
    ConformalKilling,
    Generic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    Global,
    Compact { description: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialField {
    pub name: String,
    pub field: VerticalField,
    pub class: FieldClass,
    pub support: Support,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiberNode {
    pub point: Vec<f64>,
    pub weight: f64,
    /// Fiber parameters of the node (angles).
    pub params: Vec<f64>,
}

pub fn build_flat_torus(n: usize, p: usize) -> Result<ModelSpec> {
    if n == 0 || p == 0 || n + p > crate::jet::MAX_DIM {
        return Err(Error::Invalid(format!("flat torus needs n, p >= 1 and n + p <= 8 (got {n}, {p})")));
    }
    Ok(ModelSpec { kind: ModelKind::FlatTorus { n, p } })
}

pub fn build_warped_torus(n: usize, p: usize, warp: ScalarExpr) -> Result<ModelSpec> {
    build_flat_torus(n, p)?;
    warp.validate(n + p, p)?;
    Ok(ModelSpec { kind: ModelKind::WarpedTorus { n, p, warp } })
}

pub fn build_hopf_s3() -> ModelSpec {
    ModelSpec { kind: ModelKind::HopfS3 }
}

pub fn build_hopf_s7() -> ModelSpec {
    ModelSpec { kind: ModelKind::HopfS7 }
}

/// Builds a model from its catalog id.
pub fn build_model(id: &str, n: usize, p: usize) -> Result<ModelSpec> {
    match id {
        "flat-torus" => build_flat_torus(n, p),
        "warped-torus" => build_warped_torus(n, p, default_warp(n, p)),
        "hopf-s3" => Ok(build_hopf_s3()),
        "hopf-s7" => Ok(build_hopf_s7()),
        _ => Err(Error::Invalid(format!("unknown model id '{id}'"))),
    }
}

/// Warp depending on the last base angle only: umbilical fibers with basic mean curvature.
pub fn default_warp(n: usize, p: usize) -> ScalarExpr {
    let _ = p;
    ScalarExpr::scale(0.3, ScalarExpr::sin(ScalarExpr::coord(n)))
}

pub const MODEL_IDS: [&str; 4] = ["flat-torus", "warped-torus", "hopf-s3", "hopf-s7"];

fn q<S: Scalar>(s: &[S]) -> Quat<S> {
    Quat::from_slice(s)
}

fn cat<S: Scalar>(a: Quat<S>, b: Quat<S>) -> Vec<S> {
    let mut v = a.to_array().to_vec();
    v.extend_from_slice(&b.to_array());
    v
}

/// `u = z1 / |z1|` as a quaternion in `C`.
fn s3_phase<S: Scalar>(x: &[S]) -> Quat<S> {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt().recip();
    Quat::new(x[0] * r, x[1] * r, S::zero(), S::zero())
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self.kind {
            ModelKind::FlatTorus { .. } => "flat-torus",
            ModelKind::WarpedTorus { .. } => "warped-torus",
            ModelKind::HopfS3 => "hopf-s3",
            ModelKind::HopfS7 => "hopf-s7",
        }
    }

    pub fn n(&self) -> usize {
        match self.kind {
            ModelKind::FlatTorus { n, .. } | ModelKind::WarpedTorus { n, .. } => n,
            ModelKind::HopfS3 => 1,
            ModelKind::HopfS7 => 3,
        }
    }

    pub fn p(&self) -> usize {
        match self.kind {
            ModelKind::FlatTorus { p, .. } | ModelKind::WarpedTorus { p, .. } => p,
            ModelKind::HopfS3 => 2,
            ModelKind::HopfS7 => 4,
        }
    }

    pub fn dim(&self) -> usize {
        self.n() + self.p()
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ModelKind::HopfS3 => 4,
            ModelKind::HopfS7 => 8,
            _ => self.dim(),
        }
    }

    pub fn base_ambient_dim(&self) -> usize {
        match self.kind {
            ModelKind::HopfS3 => 3,
            ModelKind::HopfS7 => 5,
            _ => self.p(),
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self.kind, ModelKind::HopfS3 | ModelKind::HopfS7)
    }

    /// Radius of the round base sphere, if any.
    pub fn base_radius(&self) -> Option<f64> {
        if self.is_sphere() {
            Some(0.5)
        } else {
            None
        }
    }

    /// Warp function `phi` (zero except on the warped torus).
    pub fn warp<S: Scalar>(&self, x: &[S]) -> S {
        match &self.kind {
            ModelKind::WarpedTorus { n, warp, .. } => warp.eval(x, &x[*n..]),
            _ => S::zero(),
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutsideDomain(format!("expected {} finite coordinates", self.ambient_dim())));
        }
        if self.is_sphere() {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            if (r2 - 1.0).abs() > 1e-12 {
                return Err(Error::OutsideDomain(format!("|x|^2 = {r2} is not 1")));
            }
            let q1: f64 = match self.kind {
                ModelKind::HopfS3 => x[0] * x[0] + x[1] * x[1],
                _ => x[0..4].iter().map(|v| v * v).sum(),
            };
            if q1 < 1e-3 {
                return Err(Error::OutsideDomain(format!("first component |q1|^2 = {q1} too small for the adapted frame")));
            }
        }
        Ok(())
    }

    /// Projection to the base (ambient coordinates of the base embedding).
    pub fn project<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match self.kind {
            ModelKind::FlatTorus { n, .. } | ModelKind::WarpedTorus { n, .. } => x[n..].to_vec(),
            ModelKind::HopfS3 => {
                let xq = q(x);
                let y = xq * Quat::basis(1) * xq.conj();
                vec![y.x * 0.5, y.y * 0.5, y.z * 0.5]
            }
            ModelKind::HopfS7 => {
                let (q1, q2) = (q(&x[0..4]), q(&x[4..8]));
                let w = q1 * q2.conj();
                vec![(q1.norm2() - q2.norm2()) * 0.5, w.w, w.x, w.y, w.z]
            }
        }
    }

    /// Differential of the projection applied to an ambient tangent vector.
    pub fn pushforward<S: Scalar>(&self, x: &[S], v: &[S]) -> Vec<S> {
        match self.kind {
            ModelKind::FlatTorus { n, .. } | ModelKind::WarpedTorus { n, .. } => v[n..].to_vec(),
            ModelKind::HopfS3 => {
                let (xq, vq) = (q(x), q(v));
                let i = Quat::basis(1);
                let y = vq * i * xq.conj() + xq * i * vq.conj();
                vec![y.x * 0.5, y.y * 0.5, y.z * 0.5]
            }
            ModelKind::HopfS7 => {
                let (q1, q2, v1, v2) = (q(&x[0..4]), q(&x[4..8]), q(&v[0..4]), q(&v[4..8]));
                let w = v1 * q2.conj() + q1 * v2.conj();
                vec![q1.dot(v1) - q2.dot(v2), w.w, w.x, w.y, w.z]
            }
        }
    }

    /// Adapted `g0`-orthonormal frame `{E_a, e_i}` as ambient vectors.
    pub fn frame<S: Scalar>(&self, x: &[S]) -> Vec<Vec<S>> {
        match self.kind {
            ModelKind::FlatTorus { n, p } | ModelKind::WarpedTorus { n, p, .. } => {
                let m = n + p;
                let s = (-self.warp(x)).exp();
                (0..m)
                    .map(|k| {
                        let mut v = vec![S::zero(); m];
                        v[k] = if k < n { s } else { S::one() };
                        v
                    })
                    .collect()
            }
            ModelKind::HopfS3 => {
                let xq = q(x);
                let u = s3_phase(x);
                let ub2 = u.conj() * u.conj();
                vec![
                    (xq * Quat::basis(1)).to_array().to_vec(),
                    (xq * ub2 * Quat::basis(2)).to_array().to_vec(),
                    (xq * ub2 * Quat::basis(3)).to_array().to_vec(),
                ]
            }
            ModelKind::HopfS7 => {
                let (q1, q2) = (q(&x[0..4]), q(&x[4..8]));
                let r = q1.norm2().sqrt();
                let u = q1.scale(r.recip());
                let mut out = Vec::with_capacity(7);
                for a in 1..4 {
                    let i = Quat::basis(a);
                    out.push(cat(q1 * i, q2 * i));
                }
                for m in 0..4 {
                    let i = Quat::<S>::basis(m);
                    out.push(cat(-(u * q2.conj() * i * u), (i * u).scale(r)));
                }
                out
            }
        }
    }

    /// Tangent-graph chart centered at `x0` with axes along the adapted frame at `x0`.
    pub fn chart_at(&self, x0: &[f64]) -> Result<Chart> {
        self.check_point(x0)?;
        let axes = self.frame(x0);
        let inv_axes = if self.is_sphere() {
            None
        } else {
            Some(Mat::from_cols(&axes).inverse().ok_or_else(|| Error::Singular("frame at chart center".into()))?)
        };
        Ok(Chart { center: x0.to_vec(), axes, inv_axes, sphere: self.is_sphere() })
    }

    /// Frame matrix in chart components (columns = frame vectors) at chart point `x`.
    pub fn frame_in_chart<S: Scalar>(&self, chart: &Chart, x: &[S]) -> Mat<S> {
        let cols: Vec<Vec<S>> = self.frame(x).iter().map(|v| chart.components(v)).collect();
        Mat::from_cols(&cols)
    }

    /// Round-sphere metric of the base in its graph chart, or the flat metric.
    pub fn base_chart_metric<S: Scalar>(&self, u: &[S]) -> Mat<S> {
        let k = u.len();
        match self.base_radius() {
            None => Mat::identity(k),
            Some(r) => {
                let mut u2 = S::zero();
                for x in u {
                    u2 += *x * *x;
                }
                let den = (-u2 + r * r).recip();
                Mat::from_fn(k, k, |i, j| {
                    let d = if i == j { S::one() } else { S::zero() };
                    d + u[i] * u[j] * den
                })
            }
        }
    }

    pub fn base_dim(&self) -> usize {
        self.p()
    }

    /// Random point of the total space inside the frame domain.
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self.kind {
            ModelKind::FlatTorus { n, p } | ModelKind::WarpedTorus { n, p, .. } => {
                (0..n + p).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
            }
            _ => loop {
                let d = self.ambient_dim();
                let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
                let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let x: Vec<f64> = v.iter().map(|a| a / r).collect();
                let q1: f64 = match self.kind {
                    ModelKind::HopfS3 => x[0] * x[0] + x[1] * x[1],
                    _ => x[0..4].iter().map(|a| a * a).sum(),
                };
                if q1 >= 0.25 {
                    return normalize(&x);
                }
            },
        }
    }

    /// Quadrature over the fiber through `x` with `g0`-volume weights.
    pub fn fiber_grid(&self, x: &[f64], resolution: usize) -> Result<Vec<FiberNode>> {
        if resolution < 4 {
            return Err(Error::Invalid(format!("fiber resolution {resolution} < 4")));
        }
        self.check_point(x)?;
        match self.kind {
            ModelKind::FlatTorus { n, .. } | ModelKind::WarpedTorus { n, .. } => {
                let tr = periodic_trapezoid(resolution);
                let total = resolution.pow(n as u32);
                let mut out = Vec::with_capacity(total);
                for idx in 0..total {
                    let mut pt = x.to_vec();
                    let mut w = 1.0;
                    let mut rest = idx;
                    let mut params = Vec::with_capacity(n);
                    for a in 0..n {
                        let (t, wt) = tr[rest % resolution];
                        rest /= resolution;
                        pt[a] = t;
                        w *= wt;
                        params.push(t);
                    }
                    let phi: f64 = self.warp(&pt);
                    out.push(FiberNode { weight: w * (n as f64 * phi).exp(), point: pt, params });
                }
                Ok(out)
            }
            ModelKind::HopfS3 => {
                let xq = q(x);
                Ok(periodic_trapezoid(resolution)
                    .into_iter()
                    .map(|(t, w)| {
                        let e = Quat::new(t.cos(), t.sin(), 0.0, 0.0);
                        FiberNode { point: normalize(&(xq * e).to_array()), weight: w, params: vec![t] }
                    })
                    .collect())
            }
            ModelKind::HopfS7 => {
                let (q1, q2) = (q(&x[0..4]), q(&x[4..8]));
                let gl = gauss_legendre(resolution, 0.0, 0.5 * PI);
                let tr = periodic_trapezoid(resolution);
                let mut out = Vec::with_capacity(resolution.pow(3));
                for &(eta, we) in &gl {
                    for &(a, wa) in &tr {
                        for &(b, wb) in &tr {
                            let u = Quat::new(eta.cos() * a.cos(), eta.cos() * a.sin(), eta.sin() * b.cos(), eta.sin() * b.sin());
                            let pt = normalize(&cat(q1 * u, q2 * u));
                            out.push(FiberNode {
                                point: pt,
                                weight: we * wa * wb * eta.sin() * eta.cos(),
                                params: vec![eta, a, b],
                            });
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Known fiber volume for the round and flat models.
    pub fn fiber_volume(&self) -> Option<f64> {
        match self.kind {
            ModelKind::FlatTorus { n, .. } => Some((2.0 * PI).powi(n as i32)),
            ModelKind::WarpedTorus { .. } => None,
            ModelKind::HopfS3 => Some(2.0 * PI),
            ModelKind::HopfS7 => Some(2.0 * PI * PI),
        }
    }

    /// Special vertical fields with their class tags.
    pub fn special_fields(&self) -> Vec<SpecialField> {
        let n = self.n();
        let mut out = Vec::new();
        let global = || Support::Global;
        match &self.kind {
            ModelKind::FlatTorus { .. } => {
                for a in 0..n {
                    out.push(SpecialField { name: format!("E{}", a + 1), field: VerticalField::Frame { index: a }, class: FieldClass::Killing, support: global() });
                }
                out.push(SpecialField {
                    name: "sin-theta1-E1".into(),
                    field: VerticalField::scaled(ScalarExpr::sin(ScalarExpr::coord(0)), VerticalField::Frame { index: 0 }),
                    class: FieldClass::Generic,
                    support: global(),
                });
                if n >= 2 {
                    out.push(SpecialField { name: "stream".into(), field: VerticalField::Stream { amplitude: 0.5, k1: 1.0, k2: 1.0 }, class: FieldClass::DivergenceFree, support: global() });
                }
            }
            ModelKind::WarpedTorus { warp, .. } => {
                let depends_on_fiber = (0..n).any(|a| reads_coord(warp, a));
                for a in 0..n {
                    out.push(SpecialField {
                        name: format!("d-theta{}", a + 1),
                        field: VerticalField::Coordinate { index: a },
                        class: if depends_on_fiber { FieldClass::ConformalKilling } else { FieldClass::Killing },
                        support: global(),
                    });
                }
                if n >= 2 {
                    out.push(SpecialField { name: "stream".into(), field: VerticalField::Stream { amplitude: 0.5, k1: 1.0, k2: 1.0 }, class: FieldClass::DivergenceFree, support: global() });
                }
                out.push(SpecialField {
                    name: "sin-theta1-E1".into(),
                    field: VerticalField::scaled(ScalarExpr::sin(ScalarExpr::coord(0)), VerticalField::Frame { index: 0 }),
                    class: FieldClass::Generic,
                    support: global(),
                });
            }
            ModelKind::HopfS3 => {
                out.push(SpecialField { name: "E1".into(), field: VerticalField::Frame { index: 0 }, class: FieldClass::Killing, support: global() });
                out.push(SpecialField {
                    name: "x0-E1".into(),
                    field: VerticalField::scaled(ScalarExpr::coord(0), VerticalField::Frame { index: 0 }),
                    class: FieldClass::Generic,
                    support: global(),
                });
            }
            ModelKind::HopfS7 => {
                for a in 0..3 {
                    out.push(SpecialField { name: format!("E{}", a + 1), field: VerticalField::Frame { index: a }, class: FieldClass::Killing, support: global() });
                }
                for a in 0..3 {
                    out.push(SpecialField { name: format!("xi{}", a + 1), field: VerticalField::Xi { index: a }, class: FieldClass::Killing, support: global() });
                }
                out.push(SpecialField {
                    name: "curl".into(),
                    field: VerticalField::FiberCurl { center: [1.0, 0.0, 0.0, 0.0], s_in: 0.2, s_out: 0.9, amplitude: 1.0 },
                    class: FieldClass::DivergenceFree,
                    support: Support::Compact { description: "cap 1 - <u, 1> < 0.9 on each fiber".into() },
                });
                out.push(SpecialField {
                    name: "x0-xi1".into(),
                    field: VerticalField::scaled(ScalarExpr::coord(0), VerticalField::Xi { index: 0 }),
                    class: FieldClass::Generic,
                    support: global(),
                });
            }
        }
        out
    }

    pub fn special_field(&self, name: &str) -> Result<SpecialField> {
        self.special_fields()
            .into_iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Invalid(format!("model {} has no special field '{name}'", self.id())))
    }
}

fn reads_coord(e: &ScalarExpr, k: usize) -> bool {
    match e {
        ScalarExpr::Coord { index } => *index == k,
        ScalarExpr::Const { .. } | ScalarExpr::BaseCoord { .. } => false,
        ScalarExpr::Sin { arg } | ScalarExpr::Cos { arg } | ScalarExpr::Exp { arg } => reads_coord(arg, k),
        ScalarExpr::Scale { expr, .. } => reads_coord(expr, k),
        ScalarExpr::Sum { terms } => terms.iter().any(|t| reads_coord(t, k)),
        ScalarExpr::Product { factors } => factors.iter().any(|t| reads_coord(t, k)),
        ScalarExpr::Bump { on_base, .. } => !on_base,
    }
}

fn normalize(x: &[f64]) -> Vec<f64> {
    let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    x.iter().map(|a| a / r).collect()
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Local tangent-graph chart. Chart components of an ambient tangent vector at
/// any chart point are `axes . v` on spheres and `axes^{-1} v` on tori.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub center: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    inv_axes: Option<Mat<f64>>,
    sphere: bool,
}

impl Chart {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn point<S: Scalar>(&self, u: &[S]) -> Vec<S> {
        let mut x: Vec<S> = if self.sphere {
            let mut u2 = S::zero();
            for a in u {
                u2 += *a * *a;
            }
            let s = (-u2 + 1.0).sqrt();
            self.center.iter().map(|c| s * *c).collect()
        } else {
            self.center.iter().map(|c| S::cst(*c)).collect()
        };
        for (ua, ax) in u.iter().zip(&self.axes) {
            for (xi, ai) in x.iter_mut().zip(ax) {
                *xi += *ua * *ai;
            }
        }
        x
    }

    pub fn components<S: Scalar>(&self, v: &[S]) -> Vec<S> {
        match &self.inv_axes {
            None => self
                .axes
                .iter()
                .map(|ax| {
                    let mut s = S::zero();
                    for (a, b) in ax.iter().zip(v) {
                        s += *b * *a;
                    }
                    s
                })
                .collect(),
            Some(inv) => (0..inv.rows())
                .map(|i| {
                    let mut s = S::zero();
                    for (j, b) in v.iter().enumerate() {
                        s += *b * inv[(i, j)];
                    }
                    s
                })
                .collect(),
        }
    }

    /// Ambient vector with the given chart components at the center.
    pub fn ambient_at_center(&self, comps: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.center.len()];
        for (c, ax) in comps.iter().zip(&self.axes) {
            for (vi, ai) in v.iter_mut().zip(ax) {
                *vi += c * ai;
            }
        }
        v
    }

    /// Chart point as second-order jets in the chart coordinates, centered at `u = 0`.
    pub fn jet_point(&self) -> Vec<Jet2> {
        self.point(&self.jet_coords())
    }

    pub fn jet_coords(&self) -> Vec<Jet2> {
        let m = self.dim();
        (0..m).map(|k| Jet2::seed(0.0, k, m)).collect()
    }
}
