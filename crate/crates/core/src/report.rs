//! Machine-readable run reports (JSON plus per-batch CSV) and the plain-text
//! summary printed after a run.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::chain::ModelKind;
use crate::config::{ExperimentConfig, OracleConfig};
use crate::controllers::Strategy;
use crate::error::Result;
use crate::estimator::{
    time_between_failures, variance_bound_check, LevelDiagnostics, LevelEstimate, ProductBound, SubsetOutcome,
    TimeBetweenFailures, VarianceBoundCheck,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON schema every report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Estimate,
    Diagnose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSummary {
    pub kind: ModelKind,
    pub length: usize,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Always `"diagnostic"`: a pass is evidence of convergence, not proof.
    pub label: String,
    pub levels: Vec<LevelDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilityReport {
    pub report_schema_version: u32,
    pub build_id: String,
    pub kind: ReportKind,
    pub name: String,
    pub seed: u64,
    /// The resolved config, minus the worker count and output location,
    /// which do not affect results.
    pub config: serde_json::Value,
    pub oracle: String,
    pub model: ModelSummary,
    pub levels: Vec<LevelEstimate>,
    pub product: Option<ProductBound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_between_failures: Option<TimeBetweenFailures>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_bound: Option<VarianceBoundCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSection>,
    pub oracle_calls: u64,
    pub notes: Vec<String>,
}

fn embedded_config(config: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut value = serde_json::to_value(config)?;
    if let Some(map) = value.as_object_mut() {
        map.remove("workers");
        map.remove("output");
    }
    Ok(value)
}

fn model_summary(config: &ExperimentConfig) -> ModelSummary {
    ModelSummary { kind: config.model.kind, length: config.model.length, strategy: config.model.strategy }
}

fn notes(config: &ExperimentConfig, levels: &[LevelEstimate], product: Option<&ProductBound>) -> Vec<String> {
    let mut notes = Vec::new();
    if let Some(p) = product {
        notes.push(format!(
            "each level interval has confidence {}; by the union bound the product interval holds with probability at least {}",
            p.alpha, p.nominal_joint_confidence
        ));
    }
    for l in levels.iter().filter(|l| l.below_resolution) {
        notes.push(format!(
            "level {}: no failure in {} samples; the estimate is 0 and only the upper endpoint is informative (rule of three: {:.3e})",
            l.level,
            l.total_samples,
            l.rule_of_three.unwrap_or(f64::NAN)
        ));
    }
    if matches!(config.oracle, OracleConfig::Vdp(_)) {
        notes.push(
            "the failure set is that of the in-repo Van der Pol SQP solver; its geometry, and therefore every absolute probability here, is solver-specific"
                .into(),
        );
    }
    if matches!(config.oracle, OracleConfig::QuadrotorSynthetic(_)) {
        notes.push("synthetic quadrotor oracle: the failure set is a fixture, not a controller".into());
    }
    notes
}

impl ReliabilityReport {
    pub fn from_outcome(config: &ExperimentConfig, oracle: &str, outcome: &SubsetOutcome, build_id: &str) -> Result<Self> {
        let tbf = config
            .latency_seconds
            .map(|t| time_between_failures(outcome.product.upper, t))
            .transpose()?;
        let variance_bound = config.variance_bound_k.map(|k| {
            let pairs: Vec<(f64, f64)> = outcome.levels.iter().map(|l| (l.estimate, l.estimator_variance)).collect();
            variance_bound_check(&pairs, k)
        });
        let diagnostics = config
            .diagnostics
            .as_ref()
            .map(|_| DiagnosticsSection { label: "diagnostic".into(), levels: outcome.diagnostics.clone() });
        Ok(ReliabilityReport {
            report_schema_version: REPORT_SCHEMA_VERSION,
            build_id: build_id.into(),
            kind: ReportKind::Estimate,
            name: config.name.clone(),
            seed: config.seed,
            config: embedded_config(config)?,
            oracle: oracle.into(),
            model: model_summary(config),
            levels: outcome.levels.clone(),
            product: Some(outcome.product.clone()),
            time_between_failures: tbf,
            variance_bound,
            diagnostics,
            oracle_calls: outcome.oracle_calls,
            notes: notes(config, &outcome.levels, Some(&outcome.product)),
        })
    }

    pub fn from_diagnostics(config: &ExperimentConfig, oracle: &str, levels: Vec<LevelDiagnostics>, build_id: &str) -> Result<Self> {
        Ok(ReliabilityReport {
            report_schema_version: REPORT_SCHEMA_VERSION,
            build_id: build_id.into(),
            kind: ReportKind::Diagnose,
            name: config.name.clone(),
            seed: config.seed,
            config: embedded_config(config)?,
            oracle: oracle.into(),
            model: model_summary(config),
            levels: Vec::new(),
            product: None,
            time_between_failures: None,
            variance_bound: None,
            diagnostics: Some(DiagnosticsSection { label: "diagnostic".into(), levels }),
            oracle_calls: 0,
            notes: notes(config, &[], None),
        })
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// `level,batch,mean,samples,failures`, one row per batch.
    pub fn batches_csv(&self) -> String {
        let mut out = String::from("level,batch,mean,samples,failures\n");
        for l in &self.levels {
            for (i, b) in l.batches.iter().enumerate() {
                let _ = writeln!(out, "{},{},{:e},{},{}", l.level, i, b.mean, b.samples, b.failures);
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} ({:?}, N = {}, seed {})", self.name, self.model.kind, self.model.length, self.seed);
        for l in &self.levels {
            let _ = writeln!(
                out,
                "  level {}: {:.3e}  interval ({:.3e}, {:.3e})  {} samples, {} failures{}",
                l.level,
                l.estimate,
                l.lo,
                l.hi,
                l.total_samples,
                l.failures,
                if l.below_resolution { "  [below resolution]" } else { "" }
            );
        }
        if let Some(p) = &self.product {
            let _ = writeln!(
                out,
                "  P(all {} fail) <= {:.3e}  (point {:.3e}, joint confidence >= {})",
                p.levels, p.upper, p.point, p.nominal_joint_confidence
            );
        }
        if let Some(t) = &self.time_between_failures {
            let _ = writeln!(out, "  {}", t.summary);
        }
        if let Some(d) = &self.diagnostics {
            for l in &d.levels {
                match (&l.verdict, &l.unavailable) {
                    (Some(v), _) => {
                        let passed = v.pilots.iter().filter(|p| p.pass).count();
                        let _ = writeln!(out, "  diagnostic level {}: {passed}/{} pilots pass", l.level, v.pilots.len());
                    }
                    (None, Some(why)) => {
                        let _ = writeln!(out, "  diagnostic level {}: unavailable ({why})", l.level);
                    }
                    (None, None) => {}
                }
            }
        }
        let _ = writeln!(out, "  oracle calls: {}", self.oracle_calls);
        out
    }
}
