use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::error::{Error, Result};
use crate::structures::TestKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Parse {
                what: "report format",
                text: s.to_string(),
            }),
        }
    }
}

/// Two-decimal rate, optionally with a decimal comma.
pub fn format_csv(rate: f64, decimal_comma: bool) -> String {
    let s = format!("{rate:.2}");
    if decimal_comma {
        s.replace('.', ",")
    } else {
        s
    }
}

/// One row per result in (sim, seed) order. Wall time is left out so that
/// reruns produce identical bytes.
pub fn results_to_csv(results: &[RunResult], decimal_comma: bool) -> Result<String> {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by_key(|r| (r.sim, r.seed));
    let mut w = csv::WriterBuilder::new()
        .delimiter(if decimal_comma { b';' } else { b',' })
        .from_writer(Vec::new());
    w.write_record([
        "sim",
        "ts",
        "rel",
        "negc",
        "agent",
        "seed",
        "base",
        "refl",
        "symm",
        "trans",
        "mastery_flags",
    ])?;
    for r in sorted {
        let mut row = vec![
            r.sim.to_string(),
            r.ts.abbrev().to_string(),
            r.rel.abbrev().to_string(),
            r.negc.abbrev().to_string(),
            r.agent.name().to_string(),
            r.seed.to_string(),
        ];
        row.extend(TestKind::ALL.iter().map(|&k| format_csv(r.rates.get(k), decimal_comma)));
        row.push(r.mastery_flags());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn results_to_json(results: &[RunResult]) -> Result<String> {
    Ok(serde_json::to_string_pretty(results)?)
}

pub fn write_results(results: &[RunResult], format: ReportFormat, path: &Path, decimal_comma: bool) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => results_to_csv(results, decimal_comma)?,
        ReportFormat::Json => results_to_json(results)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads results written in JSON format.
pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
