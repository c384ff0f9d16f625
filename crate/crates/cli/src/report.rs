use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use subvar_core::analysis::{CRITICAL_TOL, FLAT_TOL, GEODESIC_TOL, KILLING_TOL};
use subvar_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// Passes when `value < bound`.
    Below,
    /// Passes when `value > bound`.
    Above,
    /// Passes when `value >= bound`.
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    /// Point id or scenario label.
    pub subject: String,
    pub t: Option<f64>,
    pub value: f64,
    pub bound: f64,
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    pub fn new(suite: &str, name: &str, subject: impl Into<String>, t: Option<f64>, value: f64, relation: Relation, bound: f64) -> Self {
        let passed = match relation {
            Relation::Below => value < bound,
            Relation::Above => value > bound,
            Relation::AtLeast => value >= bound,
        };
        Check { suite: suite.into(), name: name.into(), subject: subject.into(), t, value, bound, relation, passed }
    }
}

/// Tolerances applied by the suites, embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToleranceLadder {
    pub preservation: f64,
    pub geometry: f64,
    pub first_variation_rel: f64,
    pub second_variation_rel: f64,
    pub second_variation_abs: f64,
    pub nonnegativity: f64,
    pub critical: f64,
    pub killing: f64,
    pub totally_geodesic: f64,
    pub flat: f64,
    pub curvature_rel: f64,
    pub identity: f64,
    pub killing_stability: f64,
    pub lie_identity: f64,
    pub hopf_ratio: f64,
    pub hopf_spread: f64,
}

impl Default for ToleranceLadder {
    fn default() -> Self {
        ToleranceLadder {
            preservation: 1e-8,
            geometry: 1e-7,
            first_variation_rel: 1e-5,
            second_variation_rel: 1e-4,
            second_variation_abs: 1e-8,
            nonnegativity: 1e-6,
            critical: CRITICAL_TOL,
            killing: KILLING_TOL,
            totally_geodesic: GEODESIC_TOL,
            flat: FLAT_TOL,
            curvature_rel: 1e-4,
            identity: 1e-7,
            killing_stability: 1e-7,
            lie_identity: 1e-5,
            hopf_ratio: 0.1,
            hopf_spread: 1e-3,
        }
    }
}

/// A named CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header).map_err(io_err)?;
        for r in &self.rows {
            out.write_record(r).map_err(io_err)?;
        }
        out.flush().map_err(|e| Error::Invalid(e.to_string()))
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

/// Shortest round-trip formatting, so tables are stable across runs.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub model: String,
    pub suites: Vec<String>,
    pub seed: u64,
    pub tolerances: ToleranceLadder,
    pub checks: Vec<Check>,
    /// Suite-specific structured results.
    pub details: serde_json::Map<String, serde_json::Value>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}  suites: {}  seed: {}", self.model, self.suites.join(","), self.seed);
        let mut groups: Vec<(&str, &str)> = Vec::new();
        for c in &self.checks {
            if !groups.contains(&(c.suite.as_str(), c.name.as_str())) {
                groups.push((&c.suite, &c.name));
            }
        }
        for (suite, name) in groups {
            let rows: Vec<&Check> = self.checks.iter().filter(|c| c.suite == suite && c.name == name).collect();
            let failed = rows.iter().filter(|c| !c.passed).count();
            let worst = rows
                .iter()
                .map(|c| c.value)
                .fold(None, |acc: Option<f64>, v| Some(match (acc, rows[0].relation) {
                    (None, _) => v,
                    (Some(a), Relation::Below) => a.max(v),
                    (Some(a), _) => a.min(v),
                }))
                .unwrap_or(f64::NAN);
            let op = match rows[0].relation {
                Relation::Below => "<",
                Relation::Above => ">",
                Relation::AtLeast => ">=",
            };
            let _ = writeln!(
                s,
                "[{}] {suite}/{name}: {} checks, worst {worst:.3e} (need {op} {:.1e})",
                if failed == 0 { "PASS" } else { "FAIL" },
                rows.len(),
                rows[0].bound
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    pub fn to_json(&self) -> Result<String, Error> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("json: {e}")))
    }

    /// Writes `summary.txt`, `report.json` and `tables/*.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        let tables = dir.join("tables");
        std::fs::create_dir_all(&tables).map_err(|e| Error::Invalid(format!("cannot create {}: {e}", tables.display())))?;
        let put = |p: &Path, text: &str| std::fs::write(p, text).map_err(|e| Error::Invalid(format!("cannot write {}: {e}", p.display())));
        put(&dir.join("summary.txt"), &self.summary())?;
        put(&dir.join("report.json"), &(self.to_json()? + "\n"))?;
        let mut checks = Table::new("checks", &["suite", "name", "subject", "t", "value", "bound", "relation", "passed"]);
        for c in &self.checks {
            checks.push(vec![
                c.suite.clone(),
                c.name.clone(),
                c.subject.clone(),
                c.t.map(num).unwrap_or_default(),
                num(c.value),
                num(c.bound),
                format!("{:?}", c.relation).to_lowercase(),
                c.passed.to_string(),
            ]);
        }
        for t in std::iter::once(&checks).chain(&self.tables) {
            let path = tables.join(format!("{}.csv", t.name));
            let f = std::fs::File::create(&path).map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))?;
            t.write_csv(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relations() {
        assert!(Check::new("s", "n", "p", None, 1e-9, Relation::Below, 1e-8).passed);
        assert!(!Check::new("s", "n", "p", None, 1e-8, Relation::Below, 1e-8).passed);
        assert!(Check::new("s", "n", "p", None, -1e-7, Relation::AtLeast, -1e-6).passed);
        assert!(!Check::new("s", "n", "p", Some(0.1), f64::NAN, Relation::Above, 0.0).passed);
    }

    #[test]
    fn summary_marks_failures() {
        let r = RunReport {
            schema_version: 1,
            model: "m".into(),
            suites: vec!["x".into()],
            seed: 1,
            tolerances: ToleranceLadder::default(),
            checks: vec![Check::new("x", "a", "p0", None, 1.0, Relation::Below, 0.5), Check::new("x", "b", "p0", None, 0.1, Relation::Below, 0.5)],
            details: Default::default(),
            notes: vec![],
            tables: vec![],
        };
        let s = r.summary();
        assert!(s.contains("[FAIL] x/a") && s.contains("[PASS] x/b") && s.ends_with("overall: FAIL\n"));
    }
}
