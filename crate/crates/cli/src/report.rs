//! CSV and JSON artifacts.

use std::path::Path;

use gtf_core::fit::Sweep;
use serde::Serialize;

/// One CSV row. Sweeps give one row per `ε`; point checks leave `epsilon`
/// and `slope_running` empty.
#[derive(Debug, Clone)]
pub struct Row {
    pub series: String,
    pub epsilon: Option<f64>,
    pub value: f64,
    pub error: f64,
    pub slope_running: Option<f64>,
}

/// One thresholded verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub pass: bool,
    pub slopes: std::collections::BTreeMap<String, Option<f64>>,
    pub checks: Vec<Check>,
    /// Extra named numbers for the summary.
    pub values: std::collections::BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    pub rows: Vec<Row>,
}

impl Report {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Report {
            experiment: experiment.to_string(),
            seed,
            pass: true,
            ..Default::default()
        }
    }

    pub fn sweep(&mut self, series: &str, s: &Sweep) {
        for (i, e) in s.eps.iter().enumerate() {
            self.rows.push(Row {
                series: series.to_string(),
                epsilon: Some(*e),
                value: s.value[i],
                error: s.error[i],
                slope_running: s.fit.running[i],
            });
        }
        self.slopes.insert(series.to_string(), s.fit.slope);
    }

    pub fn point(&mut self, series: &str, value: f64, error: f64) {
        self.rows.push(Row {
            series: series.to_string(),
            epsilon: None,
            value,
            error,
            slope_running: None,
        });
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: String, slope: Option<f64>) {
        self.pass &= pass;
        self.checks.push(Check {
            name: name.to_string(),
            pass,
            detail,
            slope,
        });
    }

    pub fn value(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(key.to_string(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// 17 significant digits.
pub fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn write_csv(path: &Path, rows: &[Row]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "epsilon", "value", "error", "slope_running"])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(float).unwrap_or_default();
        w.write_record([r.series.clone(), opt(r.epsilon), float(r.value), float(r.error), opt(r.slope_running)])?;
    }
    w.flush()
}

pub fn write_json(path: &Path, report: &Report) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}
