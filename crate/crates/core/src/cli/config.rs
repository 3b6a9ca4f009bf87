use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angle_domain::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::system::PlanarField;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_scalar: Option<String>,
    /// Hamiltonian in (t, x, y), used by `equivalence`.
    #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
    pub h: Option<String>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// lambda used by threshold-driven commands; defaults to a fraction of lambda_{m,k}.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_probes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turns: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orientation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_range: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub big_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub big_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_bar: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
    pub formats: Vec<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: None, formats: vec!["json".into(), "csv".into()] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub system: SystemSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub output: OutputSpec,
}

fn need<'a>(v: &'a Option<String>, name: &str, kind: &str) -> Result<&'a str> {
    v.as_deref().ok_or_else(|| Error::Config(format!("system kind '{kind}' needs field '{name}'")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form after overrides.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let positive = [
            ("lambda", p.lambda),
            ("lambda_fraction", p.lambda_fraction),
            ("alpha", p.alpha),
            ("beta", p.beta),
            ("y_start", p.y_start),
            ("x_range", p.x_range),
            ("c1", p.c1),
            ("R", p.big_r),
            ("delta", p.delta),
            ("D", p.big_d),
            ("system.lambda", self.system.lambda),
            ("system.T", self.system.period),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        for (name, v) in [("m", p.m), ("k", p.k), ("grid_n", p.grid_n), ("turns", p.turns)] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let ic = &self.integrator;
        if !(ic.rel_tol > 0.0 && ic.abs_tol > 0.0 && ic.radius_guard > 0.0 && ic.time_guard > 0.0) {
            return Err(Error::Config("integrator tolerances and guards must be positive".into()));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(Error::Config(format!("unknown output format '{f}'")));
            }
        }
        self.field().map(|_| ())
    }

    pub fn field(&self) -> Result<PlanarField> {
        let s = &self.system;
        let lambda = s.lambda.unwrap_or(1.0);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        let period = s.period.unwrap_or(2.0 * PI);
        let label = s.label.clone().unwrap_or_else(|| s.kind.clone());
        let fld = match s.kind.as_str() {
            "general" => PlanarField::general(need(&s.f, "f", &s.kind)?, need(&s.g, "g", &s.kind)?, period, label)?
                .with_lambda(lambda)?,
            "scalar-second-order" => PlanarField::scalar(need(&s.g_scalar, "g_scalar", &s.kind)?, period, lambda, label)?,
            "harmonic" => PlanarField::harmonic(lambda),
            "linear_lambda" => PlanarField::linear_lambda(lambda),
            "duffing_autonomous" => PlanarField::duffing_autonomous(lambda),
            "duffing_forced" => PlanarField::duffing_forced(lambda),
            other => return Err(Error::Config(format!("unknown system kind '{other}'"))),
        };
        Ok(fld)
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        let s = &self.system;
        let h = need(&s.h, "H", &s.kind)?;
        let period = s.period.unwrap_or(2.0 * PI);
        HamiltonianSpec::parse(h, need(&s.f, "f", &s.kind)?, need(&s.g, "g", &s.kind)?, period)
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HARMONIC: &str = r#"{"schema_version": 1, "system": {"kind": "harmonic", "lambda": 1.0}}"#;

    #[test]
    fn parses_and_hashes_deterministically() {
        let a = RunConfig::from_json(HARMONIC).unwrap();
        let b = RunConfig::from_json(HARMONIC).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.params.y0 = Some(2.0);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(RunConfig::from_json(r#"{"schema_version": 2, "system": {"kind": "harmonic"}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"schema_version": 1, "system": {"kind": "harmonic", "bogus": 1}}"#).is_err());
        let c = RunConfig::from_json(r#"{"schema_version": 1, "system": {"kind": "general", "f": "y"}}"#).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig::from_json(r#"{"schema_version": 1, "system": {"kind": "scalar-second-order", "g_scalar": "x^"}}"#).unwrap();
        assert!(matches!(c.validate(), Err(Error::Parse(_))));
    }

    #[test]
    fn builtin_kinds() {
        for kind in ["harmonic", "linear_lambda", "duffing_autonomous", "duffing_forced"] {
            let c = RunConfig::from_json(&format!(r#"{{"schema_version": 1, "system": {{"kind": "{kind}", "lambda": 2.0}}}}"#)).unwrap();
            assert_eq!(c.field().unwrap().lambda, 2.0);
        }
    }
}
