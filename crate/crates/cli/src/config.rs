//! Scenario files.
//!
//! A scenario is a TOML document. Every table rejects unknown keys, and
//! `schema_version` must match [`SCHEMA_VERSION`].
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! suite = "all"
//!
//! [model]
//! id = "hopf-s7"
//!
//! [variation]
//! fields = ["xi1", "E2", "xi3", "E1"]
//! bump = { inner = 0.4, outer = 0.8 }
//!
//! [integrator]
//! step = 1e-3
//! horizon = 1.0
//!
//! [grid]
//! resolution = 6
//! points = 4
//! ```

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use subvar_core::analysis::{fiber_dependent_warp, natural_base_frame, random_spec, AnalysisSettings, HopfExperimentConfig};
use subvar_core::fields::{Bump, ScalarExpr, VerticalField};
use subvar_core::models::{build_model, ModelSpec, MODEL_IDS};
use subvar_core::variation::{IntegratorSettings, VariationSpec};
use subvar_core::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Preservation,
    Functionals,
    Curvature,
    HopfExperiment,
    #[default]
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Preservation => "preservation",
            Suite::Functionals => "functionals",
            Suite::Curvature => "curvature",
            Suite::HopfExperiment => "hopf-experiment",
            Suite::All => "all",
        }
    }

    /// Suites run by this selection, in execution order.
    pub fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Preservation, Suite::Functionals, Suite::Curvature, Suite::HopfExperiment],
            s => vec![s],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WarpKind {
    /// Warp reads a base angle only.
    #[default]
    Base,
    /// Warp also reads the first fiber angle.
    Fiber,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    /// Fiber dimension (tori only).
    pub n: Option<usize>,
    /// Base dimension (tori only).
    pub p: Option<usize>,
    #[serde(default)]
    pub warp: WarpKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub inner: f64,
    pub outer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationConfig {
    /// Catalog field names, one per base direction. Empty means random specs.
    #[serde(default)]
    pub fields: Vec<String>,
    /// Multiplies every field by a base bump centred at the sample point.
    pub bump: Option<BumpConfig>,
    /// Constant `lambda` (n rows, p columns); overrides `fields`.
    pub lambda: Option<Vec<Vec<f64>>>,
    /// Number of random specs per point in the functional suite.
    #[serde(default = "default_specs")]
    pub random_specs: usize,
}

fn default_specs() -> usize {
    4
}

impl Default for VariationConfig {
    fn default() -> Self {
        VariationConfig { fields: vec![], bump: None, lambda: None, random_specs: default_specs() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
    /// Random base-fiber sample points.
    pub points: usize,
    /// Times probed by the preservation and stability suites.
    pub times: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { resolution: 6, points: 3, times: vec![-0.5, -0.25, 0.25, 0.5] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub suite: Suite,
    pub model: ModelConfig,
    #[serde(default)]
    pub variation: VariationConfig,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub hopf: HopfExperimentConfig,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
}

fn default_seed() -> u64 {
    1
}

impl ScenarioConfig {
    pub fn for_model(id: &str) -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            suite: Suite::All,
            model: ModelConfig { id: id.into(), n: None, p: None, warp: WarpKind::Base },
            variation: VariationConfig::default(),
            integrator: IntegratorSettings::default(),
            grid: GridConfig::default(),
            hopf: HopfExperimentConfig::default(),
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.integrator.validate()?;
        self.analysis().validate()?;
        if self.grid.points == 0 {
            return Err(Error::Invalid("grid.points must be positive".into()));
        }
        if let Some(t) = self.grid.times.iter().find(|t| !t.is_finite() || t.abs() > self.integrator.horizon) {
            return Err(Error::Invalid(format!("time {t} lies outside the integration horizon {}", self.integrator.horizon)));
        }
        if let Some(b) = self.variation.bump {
            Bump::new(vec![0.0], b.inner, b.outer)?;
        }
        let h = &self.hopf;
        if h.resolution < 4 || !(h.t_probe > 0.0) || h.kappas.iter().any(|k| !(*k > 0.0)) || h.kappas.is_empty() {
            return Err(Error::Invalid("hopf: resolution >= 4, positive t_probe and positive kappas required".into()));
        }
        let model = self.build_model()?;
        for name in &self.variation.fields {
            model.special_field(name)?;
        }
        if !self.variation.fields.is_empty() && self.variation.fields.len() != model.p() {
            return Err(Error::Invalid(format!("variation.fields needs {} entries, got {}", model.p(), self.variation.fields.len())));
        }
        if let Some(l) = &self.variation.lambda {
            if l.len() != model.n() || l.iter().any(|r| r.len() != model.p()) {
                return Err(Error::Invalid(format!("variation.lambda must be {} x {}", model.n(), model.p())));
            }
        }
        Ok(())
    }

    pub fn analysis(&self) -> AnalysisSettings {
        AnalysisSettings { integrator: self.integrator, resolution: self.grid.resolution, ..Default::default() }
    }

    pub fn build_model(&self) -> Result<ModelSpec, Error> {
        let m = &self.model;
        if !MODEL_IDS.contains(&m.id.as_str()) {
            return Err(Error::Invalid(format!("unknown model id '{}' (known: {})", m.id, MODEL_IDS.join(", "))));
        }
        let torus = m.id.ends_with("torus");
        if !torus && (m.n.is_some() || m.p.is_some() || m.warp != WarpKind::Base) {
            return Err(Error::Invalid(format!("{} has fixed dimensions and no warp", m.id)));
        }
        let (n, p) = (m.n.unwrap_or(2), m.p.unwrap_or(2));
        match (m.id.as_str(), m.warp) {
            ("warped-torus", WarpKind::Fiber) => fiber_dependent_warp(n, p),
            (_, WarpKind::Fiber) => Err(Error::Invalid("warp = \"fiber\" applies to warped-torus only".into())),
            (id, WarpKind::Base) => build_model(id, n, p),
        }
    }

    /// Variation spec at a sample point: `lambda` override, catalog fields, or a random spec.
    pub fn spec_at<R: rand::Rng>(&self, model: &ModelSpec, x: &[f64], rng: &mut R) -> Result<VariationSpec, Error> {
        if let Some(l) = &self.variation.lambda {
            return Ok(VariationSpec::constant_lambda(l));
        }
        if self.variation.fields.is_empty() {
            return random_spec(model, x, rng);
        }
        let bump = match self.variation.bump {
            Some(b) => Some(ScalarExpr::Bump { bump: Bump::new(model.project(x), b.inner, b.outer)?, on_base: true }),
            None => None,
        };
        let fields = self
            .variation
            .fields
            .iter()
            .map(|name| {
                let f = model.special_field(name)?.field;
                Ok(match &bump {
                    Some(b) => VerticalField::scaled(b.clone(), f),
                    None => f,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Ok(VariationSpec::constant(fields, natural_base_frame(model, x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ScenarioConfig::from_toml("schema_version = 1\n[model]\nid = \"flat-torus\"\nn = 1\np = 1\n").unwrap();
        assert_eq!(c.suite, Suite::All);
        assert_eq!(c.grid.resolution, 6);
        assert_eq!(c.integrator.step, 1e-3);
        assert_eq!(c.variation.random_specs, 4);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "schema_version = 1\n[model]\nid = \"flat-torus\"\n[integrator]\nstep = -1.0\nhorizon = 1.0\n",
            "schema_version = 2\n[model]\nid = \"flat-torus\"\n",
            "schema_version = 1\ncolour = 3\n[model]\nid = \"flat-torus\"\n",
            "schema_version = 1\n[model]\nid = \"klein-bottle\"\n",
            "schema_version = 1\n[model]\nid = \"hopf-s7\"\n[variation]\nfields = [\"xi1\"]\n",
            "schema_version = 1\n[model]\nid = \"hopf-s3\"\nn = 2\n",
            "schema_version = 1\n[model]\nid = \"hopf-s3\"\n[grid]\ntimes = [2.0]\n",
        ] {
            assert!(ScenarioConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn catalog_fields_build_specs() {
        let c = ScenarioConfig::from_toml(
            "schema_version = 1\n[model]\nid = \"hopf-s7\"\n[variation]\nfields = [\"xi1\", \"E2\", \"xi3\", \"E1\"]\nbump = { inner = 0.4, outer = 0.8 }\n",
        )
        .unwrap();
        let m = c.build_model().unwrap();
        let mut rng = rand::rngs::mock::StepRng::new(1, 1);
        let x = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(c.spec_at(&m, &x, &mut rng).unwrap().validate(&m).is_ok());
    }
}
