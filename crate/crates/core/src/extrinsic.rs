//! Extrinsic geometry of the fibers and of the horizontal distribution.

use crate::error::{Error, Result};
use crate::geometry::{LocalGeometry, MetricSource, PointContext};
use crate::jet::{Differentiable, Jet1, Jet2};
use crate::linalg::Mat;
use crate::models::ModelSpec;
use crate::variation::{projected_lift, IntegratorSettings, VariationSpec, VariedPoint};
use serde::{Deserialize, Serialize};

/// Fiber and horizontal-distribution tensors at a point for one metric.
#[derive(Clone, Debug)]
pub struct FiberGeometry {
    pub geo: LocalGeometry,
    verticals: Vec<Vec<Jet2>>,
    /// `nabla_{E_a} E_b` as first-order chart fields.
    nabla_ee: Vec<Vec<Vec<Jet1>>>,
}

fn lower(v: &[Jet2]) -> Vec<Jet1> {
    v.iter().map(|j| j.lower()).collect()
}

fn values(v: &[Jet1]) -> Vec<f64> {
    v.iter().map(|j| j.v).collect()
}

impl FiberGeometry {
    pub fn new(geo: LocalGeometry) -> Self {
        let n = geo.n();
        let verticals: Vec<Vec<Jet2>> = (0..n).map(|a| geo.frame_vector(a)).collect();
        let nabla_ee = verticals
            .iter()
            .map(|ea| {
                let x = lower(ea);
                verticals.iter().map(|eb| geo.nabla(&x, eb)).collect()
            })
            .collect();
        FiberGeometry { geo, verticals, nabla_ee }
    }

    pub fn at(ctx: &PointContext<'_>, source: MetricSource<'_>) -> Result<Self> {
        Ok(Self::new(ctx.geometry(source)?))
    }

    pub fn n(&self) -> usize {
        self.verticals.len()
    }

    /// `g(u, v)` for adapted-frame components.
    pub fn inner_frame(&self, u: &[f64], v: &[f64]) -> f64 {
        let g = self.geo.metric_frame();
        u.iter().zip(g.mul_vec(v)).map(|(a, b)| a * b).sum()
    }

    /// `h(E_a, E_b)` as a first-order chart field.
    fn h_field(&self, a: usize, b: usize) -> Vec<Jet1> {
        self.geo.horizontal_part(&self.nabla_ee[a][b])
    }

    /// `h(E_a, E_b)` in adapted-frame components, indexed `[a][b]`.
    pub fn h(&self) -> Vec<Vec<Vec<f64>>> {
        let n = self.n();
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        let v = values(&self.nabla_ee[a][b]);
                        self.geo.to_frame(&self.geo.horizontal_part(&v))
                    })
                    .collect()
            })
            .collect()
    }

    /// `h(X, Y)` for vertical vectors given by their `E_a` coefficients.
    pub fn h_of(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let h = self.h();
        let mut out = vec![0.0; self.geo.dim()];
        for (a, xa) in x.iter().enumerate() {
            for (b, yb) in y.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(&h[a][b]) {
                    *o += xa * yb * v;
                }
            }
        }
        out
    }

    /// `H` as a first-order chart field.
    pub fn mean_curvature_field(&self) -> Vec<Jet1> {
        let mut out = vec![Jet1::constant(0.0); self.geo.dim()];
        for a in 0..self.n() {
            for (o, v) in out.iter_mut().zip(self.h_field(a, a)) {
                *o += v;
            }
        }
        out
    }

    /// Derivatives `E_a(f)` at the center of a first-order scalar.
    pub fn vertical_gradient(&self, f: &Jet1) -> Vec<f64> {
        self.verticals.iter().map(|e| e.iter().enumerate().map(|(mu, c)| c.v * f.g[mu]).sum()).collect()
    }

    /// Chart vector of the vertical frame field `E_a` at the center.
    pub fn vertical_vector(&self, a: usize) -> Vec<f64> {
        self.verticals[a].iter().map(|j| j.v).collect()
    }

    pub fn mean_curvature(&self) -> Vec<f64> {
        let h = self.h();
        let mut out = vec![0.0; self.geo.dim()];
        for (a, ha) in h.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&ha[a]) {
                *o += v;
            }
        }
        out
    }

    pub fn h_norm2(&self) -> f64 {
        self.h().iter().flatten().map(|v| self.inner_frame(v, v)).sum()
    }

    /// `max_{a,b} |h(E_a, E_b) - delta_ab H / n|` in the metric norm.
    pub fn umbilicity_defect(&self) -> f64 {
        let h = self.h();
        let hm = self.mean_curvature();
        let n = self.n() as f64;
        let mut worst = 0.0f64;
        for (a, ha) in h.iter().enumerate() {
            for (b, hab) in ha.iter().enumerate() {
                let d: Vec<f64> = hab.iter().zip(&hm).map(|(u, m)| u - if a == b { m / n } else { 0.0 }).collect();
                worst = worst.max(self.inner_frame(&d, &d).sqrt());
            }
        }
        worst
    }

    /// `Div_V X = sum_a g(nabla_{E_a} X, E_a)`.
    pub fn vertical_divergence(&self, x: &[Jet2]) -> f64 {
        (0..self.n())
            .map(|a| {
                let ea = values(&lower(&self.verticals[a]));
                let d = values(&self.geo.nabla(&lower(&self.verticals[a]), x));
                self.geo.inner(&d, &ea)
            })
            .sum()
    }

    /// `(L_X g)(E_a, E_b)` for a chart field `X`.
    pub fn lie_derivative(&self, x: &[Jet2]) -> Mat<f64> {
        let n = self.n();
        let ev: Vec<Vec<f64>> = self.verticals.iter().map(|e| values(&lower(e))).collect();
        let d: Vec<Vec<f64>> = self.verticals.iter().map(|e| values(&self.geo.nabla(&lower(e), x))).collect();
        Mat::from_fn(n, n, |a, b| self.geo.inner(&d[a], &ev[b]) + self.geo.inner(&d[b], &ev[a]))
    }

    /// `P_H (delta h)(E_b)` in adapted-frame components, one vector per `b`.
    pub fn delta_h(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let m = self.geo.dim();
        let h = self.h();
        let vcoef = |v: &[f64]| -> Vec<f64> {
            let f = self.geo.to_frame(&self.geo.vertical_part(v));
            f[..n].to_vec()
        };
        (0..n)
            .map(|b| {
                let mut acc = vec![0.0; m];
                for a in 0..n {
                    let ea: Vec<f64> = values(&lower(&self.verticals[a]));
                    let d = self.geo.to_frame(&self.geo.nabla_value(&ea, &self.h_field(a, b)));
                    let paa = vcoef(&values(&self.nabla_ee[a][a]));
                    let pab = vcoef(&values(&self.nabla_ee[a][b]));
                    for k in 0..m {
                        let mut v = d[k];
                        for c in 0..n {
                            v -= paa[c] * h[c][b][k] + pab[c] * h[a][c][k];
                        }
                        acc[k] += v;
                    }
                }
                let chart = self.geo.field_from_frame(&acc);
                self.geo.to_frame(&self.geo.horizontal_part(&chart))
            })
            .collect()
    }

    /// `P_H` of a chart vector, returned in adapted-frame components.
    pub fn horizontal_frame(&self, v: &[f64]) -> Vec<f64> {
        self.geo.to_frame(&self.geo.horizontal_part(v))
    }

    fn check_horizontal(&self, x: &[Jet2]) -> Result<()> {
        let v: Vec<f64> = x.iter().map(|j| j.v).collect();
        let pv = self.geo.to_frame(&self.geo.vertical_part(&v));
        let r = pv.iter().fold(0.0f64, |s, c| s.max(c.abs()));
        if r > 1e-9 {
            return Err(Error::Invalid(format!("field is not horizontal (vertical part {r:e})")));
        }
        Ok(())
    }

    /// `T(X, Y) = 1/2 P_V [X, Y]` for horizontal chart fields, in frame components.
    pub fn integrability(&self, x: &[Jet2], y: &[Jet2]) -> Result<Vec<f64>> {
        self.check_horizontal(x)?;
        self.check_horizontal(y)?;
        let b = values(&self.geo.bracket(x, y));
        let pv = self.geo.to_frame(&self.geo.vertical_part(&b));
        Ok(pv.iter().map(|v| 0.5 * v).collect())
    }

    /// `1/2 P_V (nabla_X Y + nabla_Y X)` for horizontal chart fields.
    pub fn horizontal_second_fundamental_form(&self, x: &[Jet2], y: &[Jet2]) -> Result<Vec<f64>> {
        self.check_horizontal(x)?;
        self.check_horizontal(y)?;
        let a = values(&self.geo.nabla(&lower(x), y));
        let b = values(&self.geo.nabla(&lower(y), x));
        let s: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
        Ok(self.geo.to_frame(&self.geo.vertical_part(&s)))
    }

    /// Horizontal projections of the frame vectors `e_i` as chart fields.
    pub fn horizontal_fields(&self) -> Vec<Vec<Jet2>> {
        (self.n()..self.geo.dim()).map(|i| self.geo.horizontal_part(&self.geo.frame_vector(i))).collect()
    }

    pub fn report(&self, t: f64) -> Result<ExtrinsicReport> {
        let zs = self.horizontal_fields();
        let p = zs.len();
        let mut tt = vec![vec![vec![]; p]; p];
        let mut a_res = 0.0f64;
        for i in 0..p {
            for j in 0..p {
                tt[i][j] = self.integrability(&zs[i], &zs[j])?;
                let ht = self.horizontal_second_fundamental_form(&zs[i], &zs[j])?;
                a_res = a_res.max(self.inner_frame(&ht, &ht).sqrt());
            }
        }
        let mc = self.mean_curvature();
        Ok(ExtrinsicReport {
            t,
            h: self.h(),
            mean_curvature: mc.clone(),
            integrability: tt,
            a_residual: a_res,
            h_norm2: self.h_norm2(),
            mean_norm2: self.inner_frame(&mc, &mc),
        })
    }
}

/// Extrinsic quantities at one point and time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicReport {
    pub t: f64,
    /// `h(E_a, E_b)` in adapted-frame components.
    pub h: Vec<Vec<Vec<f64>>>,
    pub mean_curvature: Vec<f64>,
    /// `T(P_H e_i, P_H e_j)` in adapted-frame components.
    pub integrability: Vec<Vec<Vec<f64>>>,
    /// Largest norm of the symmetric horizontal tensor `1/2 P_V(nabla_X Y + nabla_Y X)`.
    pub a_residual: f64,
    pub h_norm2: f64,
    pub mean_norm2: f64,
}

impl ExtrinsicReport {
    pub fn h_symmetry_defect(&self) -> f64 {
        let n = self.h.len();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for (u, v) in self.h[a][b].iter().zip(&self.h[b][a]) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
        worst
    }
}

/// Extrinsic report at `x0` for the metric reached by integrating `spec` to `t`.
pub fn extrinsic_report(model: &ModelSpec, x0: &[f64], spec: &VariationSpec, t: f64, settings: IntegratorSettings) -> Result<ExtrinsicReport> {
    let vp = VariedPoint::new(model, x0, spec, settings)?;
    let st = vp.state(t)?;
    FiberGeometry::new(vp.geometry(&st)?).report(t)
}

/// `P_H^t d/dt h_t(E_a, E_b) = 1/2 sum_i (L_{V_i(t)} g0)(E_a, E_b) P_H^t pi^* W_i`,
/// indexed `[a][b]`, adapted-frame components.
pub fn analytic_dt_h(model: &ModelSpec, x0: &[f64], spec: &VariationSpec, t: f64, settings: IntegratorSettings) -> Result<Vec<Vec<Vec<f64>>>> {
    let vp = VariedPoint::new(model, x0, spec, settings)?;
    let st = vp.state(t)?.values();
    let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
    let (n, p, m) = (model.n(), model.p(), model.dim());
    let lift = vp.var.lift.values();
    let mut out = vec![vec![vec![0.0; m]; n]; n];
    for i in 0..p {
        let lie = fg0.lie_derivative(&vp.vertical_field(i, 0, t));
        let z = projected_lift(&st, &lift, i);
        for a in 0..n {
            for b in 0..n {
                for k in 0..m {
                    out[a][b][k] += 0.5 * lie[(a, b)] * z[k];
                }
            }
        }
    }
    Ok(out)
}

/// `P_H^t d/dt H_t = sum_i (Div^0_V V_i(t)) P_H^t pi^* W_i`, adapted-frame components.
pub fn analytic_dt_mean_curvature(model: &ModelSpec, x0: &[f64], spec: &VariationSpec, t: f64, settings: IntegratorSettings) -> Result<Vec<f64>> {
    let vp = VariedPoint::new(model, x0, spec, settings)?;
    let st = vp.state(t)?.values();
    let fg0 = FiberGeometry::at(&vp.ctx, MetricSource::Reference)?;
    let lift = vp.var.lift.values();
    let mut out = vec![0.0; model.dim()];
    for i in 0..model.p() {
        let div = fg0.vertical_divergence(&vp.vertical_field(i, 0, t));
        for (o, z) in out.iter_mut().zip(projected_lift(&st, &lift, i)) {
            *o += div * z;
        }
    }
    Ok(out)
}

/// `h(X, Y)` at `x0` for vertical vectors given by their `E_a` coefficients.
pub fn second_fundamental_form(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = model.n();
    if x.len() != n || y.len() != n {
        return Err(Error::Invalid(format!("vertical vectors need {n} frame coefficients")));
    }
    let ctx = PointContext::new(model, x0)?;
    Ok(FiberGeometry::at(&ctx, source)?.h_of(x, y))
}

pub fn mean_curvature(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>) -> Result<Vec<f64>> {
    let ctx = PointContext::new(model, x0)?;
    Ok(FiberGeometry::at(&ctx, source)?.mean_curvature())
}

/// `T(P_H pi^* W_i, P_H pi^* W_j)` for aligned lifts `e_i`, `e_j` (horizontal indices).
pub fn integrability_tensor(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>, i: usize, j: usize) -> Result<Vec<f64>> {
    let ctx = PointContext::new(model, x0)?;
    let fg = FiberGeometry::at(&ctx, source)?;
    let zs = fg.horizontal_fields();
    if i >= zs.len() || j >= zs.len() {
        return Err(Error::Invalid(format!("horizontal index out of range (p = {})", zs.len())));
    }
    fg.integrability(&zs[i], &zs[j])
}

pub fn vertical_divergence(model: &ModelSpec, x0: &[f64], source: MetricSource<'_>, v: &crate::fields::VerticalField) -> Result<f64> {
    v.validate(model)?;
    let ctx = PointContext::new(model, x0)?;
    Ok(FiberGeometry::at(&ctx, source)?.vertical_divergence(&ctx.vertical_field(v)))
}

/// `(L_V g0)(X, Y)` for vertical vectors given by their `E_a` coefficients.
pub fn fiber_lie_derivative(model: &ModelSpec, x0: &[f64], v: &crate::fields::VerticalField, x: &[f64], y: &[f64]) -> Result<f64> {
    v.validate(model)?;
    let ctx = PointContext::new(model, x0)?;
    let l = FiberGeometry::at(&ctx, MetricSource::Reference)?.lie_derivative(&ctx.vertical_field(v));
    Ok(x.iter().zip(l.mul_vec(y)).map(|(a, b)| a * b).sum())
}

pub fn delta_h(model: &ModelSpec, x0: &[f64]) -> Result<Vec<Vec<f64>>> {
    let ctx = PointContext::new(model, x0)?;
    Ok(FiberGeometry::at(&ctx, MetricSource::Reference)?.delta_h())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ScalarExpr, VerticalField};
    use crate::models::{build_flat_torus, build_hopf_s3, build_hopf_s7};

    #[test]
    fn hopf_fibers_are_totally_geodesic() {
        let m = build_hopf_s7();
        let x0 = [0.3, -0.2, 0.5, 0.1, 0.4, 0.2, -0.5, 0.3];
        let r: f64 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x0: Vec<f64> = x0.iter().map(|v| v / r).collect();
        let ctx = PointContext::new(&m, &x0).unwrap();
        let fg = FiberGeometry::at(&ctx, MetricSource::Reference).unwrap();
        assert!(fg.h_norm2() < 1e-18);
        assert!(fg.delta_h().iter().flatten().all(|v| v.abs() < 1e-9));
        let rep = fg.report(0.0).unwrap();
        assert!(rep.a_residual < 1e-10);
        // T(e_i, e_j) is nonzero on the quaternionic Hopf fibration
        assert!(rep.integrability.iter().flatten().flatten().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn hopf_s3_integrability_has_norm_one() {
        let m = build_hopf_s3();
        let t = integrability_tensor(&m, &[0.6, 0.0, 0.48, 0.64], MetricSource::Reference, 0, 1).unwrap();
        assert!((t[0].abs() - 1.0).abs() < 1e-10);
        let s = integrability_tensor(&m, &[0.6, 0.0, 0.48, 0.64], MetricSource::Reference, 1, 0).unwrap();
        assert!((t[0] + s[0]).abs() < 1e-14);
    }

    #[test]
    fn circle_fiber_divergence_and_lie_derivative() {
        let m = build_flat_torus(1, 2).unwrap();
        let v = VerticalField::scaled(ScalarExpr::sin(ScalarExpr::coord(0)), VerticalField::Frame { index: 0 });
        for th in [0.0, 0.7, 2.5] {
            let x0 = [th, 1.0, 2.0];
            let d = vertical_divergence(&m, &x0, MetricSource::Reference, &v).unwrap();
            assert!((d - th.cos()).abs() < 1e-13);
            let l = fiber_lie_derivative(&m, &x0, &v, &[1.0], &[1.0]).unwrap();
            assert!((l - 2.0 * th.cos()).abs() < 1e-13);
        }
        assert!(vertical_divergence(&m, &[0.1, 0.2, 0.3], MetricSource::Reference, &VerticalField::Frame { index: 0 }).unwrap().abs() < 1e-15);
    }

    #[test]
    fn warped_torus_is_umbilical() {
        let m = crate::models::build_model("warped-torus", 2, 1).unwrap();
        let x0 = [0.4, 1.2, 0.9];
        let ctx = PointContext::new(&m, &x0).unwrap();
        let fg = FiberGeometry::at(&ctx, MetricSource::Reference).unwrap();
        assert!(fg.umbilicity_defect() < 1e-12);
        let hm = fg.mean_curvature();
        assert!(hm.iter().map(|v| v * v).sum::<f64>() > 1e-4);
        assert!(hm[..2].iter().all(|v| v.abs() < 1e-14));
        assert!(fg.report(0.0).unwrap().h_symmetry_defect() < 1e-12);
    }
}
