//! Experiment harness: the instantiation response-time sweep and the
//! end-to-end use-case scenarios.

mod fig6;
mod scenario;
mod svg;

use serde::{Deserialize, Serialize};

pub use fig6::{fig6_inventory, round_blueprint, run_fig6, BenchConfig, Fig6Run};
pub use scenario::{run_scenario, CheckResult, ScenarioReport, SCENARIOS};
pub use svg::render_svg;

use crate::error::{Error, Result, ValidationError};
use crate::model::InstanceMode;

/// One measurement row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub round: u32,
    pub running_after: u32,
    pub mode: InstanceMode,
    pub response_time_s: f64,
}

pub const CSV_HEADER: &str = "round,running_after,mode,response_time_s";

pub fn write_csv(samples: &[BenchSample]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for s in samples {
        wtr.serialize(s)?;
    }
    if samples.is_empty() {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_csv(text: &str) -> Result<Vec<BenchSample>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(ValidationError::general(format!("unexpected CSV header `{header}`")).into());
    }
    Ok(rdr
        .deserialize()
        .collect::<Result<Vec<BenchSample>, csv::Error>>()?)
}

/// Outcome of the trend and ratio checks over a pair of sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub checks: Vec<CheckResult>,
    pub ratio_at_60: Option<f64>,
}

impl AcceptanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const RATIO_RANGE: (f64, f64) = (1.8, 2.2);
pub const RATIO_POINT: u32 = 60;

pub fn check_acceptance(vf: &[BenchSample], empty: &[BenchSample]) -> Result<AcceptanceReport> {
    if vf.len() != empty.len() {
        return Err(ValidationError::general(format!(
            "series lengths differ: {} WITH_VF vs {} EMPTY",
            vf.len(),
            empty.len()
        ))
        .into());
    }
    if vf
        .iter()
        .zip(empty)
        .any(|(a, b)| a.running_after != b.running_after)
    {
        return Err(
            ValidationError::general("series sample different running_after points").into(),
        );
    }
    let non_decreasing = vf
        .windows(2)
        .all(|w| w[1].response_time_s >= w[0].response_time_s);
    let at = |series: &[BenchSample]| {
        series
            .iter()
            .find(|s| s.running_after == RATIO_POINT)
            .map(|s| s.response_time_s)
    };
    let ratio = match (at(vf), at(empty)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let dominates = vf
        .iter()
        .zip(empty)
        .all(|(a, b)| a.response_time_s >= b.response_time_s);
    let checks = vec![
        CheckResult::new(
            "with_vf_non_decreasing",
            non_decreasing,
            format!("{} samples", vf.len()),
        ),
        CheckResult::new(
            "ratio_at_60",
            ratio.is_some_and(|r| (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&r)),
            match ratio {
                Some(r) => format!(
                    "ratio {r:.4} against [{}, {}]",
                    RATIO_RANGE.0, RATIO_RANGE.1
                ),
                None => format!("no positive sample pair at running_after={RATIO_POINT}"),
            },
        ),
        CheckResult::new(
            "with_vf_dominates_empty",
            dominates,
            "pointwise comparison".to_string(),
        ),
    ];
    Ok(AcceptanceReport {
        checks,
        ratio_at_60: ratio,
    })
}
