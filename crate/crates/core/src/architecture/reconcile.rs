//! Comparison of parameter reports against published reference figures.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::params::{millions, round2, ParamReport};
use super::spec::Family;
use crate::error::{Error, Result};

/// Reference figures for one configuration, in millions of parameters and
/// megabytes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoldenRow {
    pub family: Family,
    pub depth: usize,
    pub conv_m: f64,
    pub fc_m: f64,
    pub total_m: f64,
    pub storage_mb: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoldenTable {
    pub rows: Vec<GoldenRow>,
}

impl GoldenTable {
    /// Parses tab- or whitespace-separated rows of
    /// `family depth conv_M fc_M total_M storage_MB`. Blank lines, `#`
    /// comments and a header row starting with `family` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() || content.starts_with("family") {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::GoldenFormat {
                    line,
                    message: format!("expected 6 fields, found {}", fields.len()),
                });
            }
            let bad = |what: &str, v: &str| Error::GoldenFormat {
                line,
                message: format!("invalid {what} {v:?}"),
            };
            let family = fields[0].parse::<Family>().map_err(|_| bad("family", fields[0]))?;
            let depth = fields[1].parse::<usize>().map_err(|_| bad("depth", fields[1]))?;
            let mut nums = [0.0; 4];
            for (n, f) in nums.iter_mut().zip(&fields[2..]) {
                *n = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| bad("value", f))?;
            }
            rows.push(GoldenRow {
                family,
                depth,
                conv_m: nums[0],
                fc_m: nums[1],
                total_m: nums[2],
                storage_mb: nums[3],
            });
        }
        Ok(GoldenTable { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn row(&self, family: Family, depth: usize) -> Result<&GoldenRow> {
        self.rows
            .iter()
            .find(|r| r.family == family && r.depth == depth)
            .ok_or(Error::MissingReference {
                family: family.name().to_string(),
                depth,
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Conv,
    Fc,
    Total,
    Storage,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Category::Conv => "conv",
            Category::Fc => "fc",
            Category::Total => "total",
            Category::Storage => "storage",
        })
    }
}

/// Rows whose reference values are known not to follow from the layer
/// description. They are reported as flagged instead of failing.
pub const KNOWN_DISCREPANCIES: &[(Family, Category)] = &[(Family::Vdcnn, Category::Conv)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Flagged,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryDiff {
    pub category: Category,
    /// Measured value rounded half-up to two decimals.
    pub measured: f64,
    pub reference: f64,
    /// `(measured - reference) / reference`; zero when both are zero.
    pub relative: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reconciliation {
    pub family: Family,
    pub depth: usize,
    pub tolerance: f64,
    pub diffs: Vec<CategoryDiff>,
}

impl Reconciliation {
    /// True unless some category failed. Flagged categories do not count.
    pub fn ok(&self) -> bool {
        self.diffs.iter().all(|d| d.verdict != Verdict::Fail)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &CategoryDiff> {
        self.diffs.iter().filter(|d| d.verdict == Verdict::Flagged)
    }
}

fn relative_diff(measured: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if measured == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (measured - reference) / reference
    }
}

/// Compares a report with a reference row at relative tolerance `tol`.
pub fn reconcile(report: &ParamReport, reference: &GoldenRow, tol: f64) -> Reconciliation {
    let pairs = [
        (Category::Conv, millions(report.conv), reference.conv_m),
        (Category::Fc, millions(report.fc), reference.fc_m),
        (Category::Total, millions(report.total), reference.total_m),
        (Category::Storage, round2(report.storage_mb), reference.storage_mb),
    ];
    let diffs = pairs
        .into_iter()
        .map(|(category, measured, reference_value)| {
            let relative = relative_diff(measured, reference_value);
            let verdict = if relative.abs() <= tol {
                Verdict::Pass
            } else if KNOWN_DISCREPANCIES.contains(&(reference.family, category)) {
                Verdict::Flagged
            } else {
                Verdict::Fail
            };
            CategoryDiff {
                category,
                measured,
                reference: reference_value,
                relative,
                verdict,
            }
        })
        .collect();
    Reconciliation {
        family: reference.family,
        depth: reference.depth,
        tolerance: tol,
        diffs,
    }
}

/// Reference figures shipped with the crate.
pub const DEFAULT_GOLDEN: &str = include_str!("../../data/golden_params.tsv");
