//! CSV ingestion for benchmark datasets (Adult- and Compas-style).
//!
//! Columns are either categorical (an explicit allow-list, optionally with a
//! catch-all label) or numeric with bin edges. Bucket `i` holds values with
//! `edge[i-1] < v <= edge[i]`. The outcome is a numeric score binarized with
//! a [`ThresholdSpec`] or a categorical column with a list of positive labels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSpec, Dataset, Role, Schema};
use crate::synth::{binarize, ThresholdSpec};

/// Row errors kept in a [`LoadReport`].
pub const MAX_REPORTED_ERRORS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    /// Attribute name in the resulting schema.
    pub name: String,
    /// CSV header; defaults to `name`.
    #[serde(default)]
    pub source: Option<String>,
    pub role: Role,
    /// Allowed labels, in domain order.
    #[serde(default)]
    pub categories: Option<Vec<String>>,
    /// Label for values outside `categories`. Without it they are row errors.
    #[serde(default)]
    pub other: Option<String>,
    /// Strictly increasing bin edges for numeric columns.
    #[serde(default)]
    pub bins: Option<Vec<f64>>,
    /// Bucket labels; generated from the edges when absent.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub name: String,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub threshold: Option<ThresholdSpec>,
    /// Labels counted as the positive outcome, for categorical outcomes.
    #[serde(default)]
    pub positive: Option<Vec<String>>,
}

/// Row predicate on a raw CSV column. All given conditions must hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    #[serde(default)]
    pub any_of: Option<Vec<String>>,
    /// Inclusive numeric lower bound.
    #[serde(default)]
    pub min: Option<f64>,
    /// Inclusive numeric upper bound.
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub path: PathBuf,
    pub columns: Vec<ColumnSpec>,
    pub outcome: OutcomeSpec,
    pub sensitive_order: Vec<String>,
    #[serde(default = "one")]
    pub privileged_index: u32,
    #[serde(default)]
    pub filters: Vec<Filter>,
}

fn one() -> u32 {
    1
}

impl IngestConfig {
    /// Parses a TOML document; a relative `path` is resolved against
    /// `base_dir` when given.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: IngestConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base_dir {
            if cfg.path.is_relative() {
                cfg.path = base.join(&cfg.path);
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn check(&self) -> Result<()> {
        for c in &self.columns {
            match (&c.categories, &c.bins) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "column `{}` needs exactly one of `categories` or `bins`",
                        c.name
                    )))
                }
            }
            if let Some(edges) = &c.bins {
                if edges.is_empty()
                    || edges
                        .windows(2)
                        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
                    || edges.iter().any(|e| !e.is_finite())
                {
                    return Err(Error::Config(format!(
                        "bin edges of `{}` must be finite and strictly increasing",
                        c.name
                    )));
                }
                if let Some(labels) = &c.labels {
                    if labels.len() != edges.len() + 1 {
                        return Err(Error::Config(format!(
                            "`{}` has {} labels for {} buckets",
                            c.name,
                            labels.len(),
                            edges.len() + 1
                        )));
                    }
                }
            }
            if c.role == Role::Outcome {
                return Err(Error::Config(format!(
                    "column `{}`: declare the outcome under [outcome]",
                    c.name
                )));
            }
        }
        match (&self.outcome.threshold, &self.outcome.positive) {
            (Some(t), None) => t.check()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "outcome needs exactly one of `threshold` or `positive`".into(),
                ))
            }
        }
        Ok(())
    }

    /// Schema implied by the column specs (checked for structural violations).
    pub fn schema(&self) -> Result<Schema> {
        let mut attrs: Vec<AttributeSpec> = self
            .columns
            .iter()
            .map(|c| AttributeSpec::new(c.name.clone(), c.role, domain_of(c)))
            .collect();
        attrs.push(AttributeSpec::new(
            self.outcome.name.clone(),
            Role::Outcome,
            ["0", "1"],
        ));
        Schema::new(attrs, self.sensitive_order.clone())
            .with_privileged_index(self.privileged_index)
            .checked()
    }
}

fn fmt_edge(e: f64) -> String {
    format!("{e}")
}

fn domain_of(c: &ColumnSpec) -> Vec<String> {
    if let Some(cats) = &c.categories {
        let mut d = cats.clone();
        if let Some(o) = &c.other {
            if !d.contains(o) {
                d.push(o.clone());
            }
        }
        return d;
    }
    if let Some(labels) = &c.labels {
        return labels.clone();
    }
    let edges = c.bins.as_deref().unwrap_or_default();
    let mut out = Vec::with_capacity(edges.len() + 1);
    out.push(format!("<={}", fmt_edge(edges[0])));
    for w in edges.windows(2) {
        out.push(format!("({},{}]", fmt_edge(w[0]), fmt_edge(w[1])));
    }
    out.push(format!(">{}", fmt_edge(edges[edges.len() - 1])));
    out
}

/// Bucket index: number of edges strictly below `value`.
pub fn bucket(value: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e < value)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub column: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records_in: usize,
    pub records_out: usize,
    pub filtered: usize,
    pub errored: usize,
    /// First [`MAX_REPORTED_ERRORS`] row errors.
    pub errors: Vec<RowError>,
}

impl LoadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "records in: {}\nrecords out: {}\nfiltered: {}\nerrored: {}\n",
            self.records_in, self.records_out, self.filtered, self.errored
        );
        for e in &self.errors {
            let _ = writeln!(s, "row {} [{}]: {}", e.row, e.column, e.message);
        }
        if self.errored > self.errors.len() {
            let _ = writeln!(s, "... {} more", self.errored - self.errors.len());
        }
        s
    }
}

enum Cell<'a> {
    Categorical {
        domain: Vec<String>,
        other: Option<usize>,
        spec: &'a ColumnSpec,
    },
    Numeric {
        edges: &'a [f64],
    },
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Config(format!("column `{name}` not found in CSV header")))
}

/// Loads the file named in `config`.
pub fn load(config: &IngestConfig) -> Result<(Dataset, LoadReport)> {
    let file = std::fs::File::open(&config.path).map_err(|e| Error::io(&config.path, e))?;
    load_from_reader(config, file)
}

pub fn load_from_reader<R: std::io::Read>(
    config: &IngestConfig,
    reader: R,
) -> Result<(Dataset, LoadReport)> {
    config.check()?;
    let schema = Arc::new(config.schema()?);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut cells = Vec::with_capacity(config.columns.len());
    let mut positions = Vec::with_capacity(config.columns.len());
    for c in &config.columns {
        positions.push(header_index(
            &headers,
            c.source.as_deref().unwrap_or(&c.name),
        )?);
        cells.push(match &c.bins {
            Some(edges) => Cell::Numeric { edges },
            None => {
                let domain = domain_of(c);
                let other = c
                    .other
                    .as_ref()
                    .and_then(|o| domain.iter().position(|d| d == o));
                Cell::Categorical {
                    domain,
                    other,
                    spec: c,
                }
            }
        });
    }
    let outcome_pos = header_index(
        &headers,
        config
            .outcome
            .source
            .as_deref()
            .unwrap_or(&config.outcome.name),
    )?;
    let filters: Vec<(usize, &Filter)> = config
        .filters
        .iter()
        .map(|f| Ok((header_index(&headers, &f.column)?, f)))
        .collect::<Result<_>>()?;

    let mut report = LoadReport::default();
    let mut columns = vec![Vec::new(); config.columns.len()];
    let mut scores = Vec::new();
    let mut outcome_labels = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        report.records_in += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                push_error(&mut report, row, "", &e.to_string());
                continue;
            }
        };
        let field = |pos: usize| rec.get(pos).map(str::trim);

        match passes(&filters, &field) {
            Ok(true) => {}
            Ok(false) => {
                report.filtered += 1;
                continue;
            }
            Err((col, msg)) => {
                push_error(&mut report, row, &col, &msg);
                continue;
            }
        }

        let mut values = Vec::with_capacity(cells.len());
        let mut failure = None;
        for ((cell, &pos), spec) in cells.iter().zip(&positions).zip(&config.columns) {
            let raw = field(pos).unwrap_or("");
            let v = match cell {
                Cell::Numeric { edges } => raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| !v.is_nan())
                    .map(|v| bucket(v, edges) as u32)
                    .ok_or_else(|| format!("malformed number `{raw}`")),
                Cell::Categorical {
                    domain,
                    other,
                    spec,
                } => domain
                    .iter()
                    .take(spec.categories.as_ref().map_or(0, Vec::len))
                    .position(|d| d == raw)
                    .or(*other)
                    .map(|i| i as u32)
                    .ok_or_else(|| format!("unknown category `{raw}`")),
            };
            match v {
                Ok(v) => values.push(v),
                Err(msg) => {
                    failure = Some((spec.name.clone(), msg));
                    break;
                }
            }
        }
        let raw_outcome = field(outcome_pos).unwrap_or("");
        if failure.is_none() && config.outcome.threshold.is_some() {
            match raw_outcome.parse::<f64>() {
                Ok(s) if !s.is_nan() => scores.push(s),
                _ => {
                    failure = Some((
                        config.outcome.name.clone(),
                        format!("malformed number `{raw_outcome}`"),
                    ))
                }
            }
        } else if failure.is_none() {
            outcome_labels.push(raw_outcome.to_owned());
        }
        if let Some((col, msg)) = failure {
            push_error(&mut report, row, &col, &msg);
            continue;
        }
        for (col, v) in columns.iter_mut().zip(values) {
            col.push(v);
        }
    }

    let outcome = match (&config.outcome.threshold, &config.outcome.positive) {
        (Some(spec), _) => {
            if scores.is_empty() {
                Vec::new()
            } else {
                binarize(&scores, spec)?
            }
        }
        (None, Some(pos)) => outcome_labels
            .iter()
            .map(|l| u32::from(pos.contains(l)))
            .collect(),
        (None, None) => unreachable!("checked"),
    };
    columns.push(outcome);
    report.records_out = columns[0].len();
    let dataset = Dataset::new(schema, columns)?;
    Ok((dataset, report))
}

fn push_error(report: &mut LoadReport, row: usize, column: &str, message: &str) {
    report.errored += 1;
    if report.errors.len() < MAX_REPORTED_ERRORS {
        report.errors.push(RowError {
            row,
            column: column.to_owned(),
            message: message.to_owned(),
        });
    }
}

fn passes<'r>(
    filters: &[(usize, &Filter)],
    field: &impl Fn(usize) -> Option<&'r str>,
) -> Result<bool, (String, String)> {
    for (pos, f) in filters {
        let raw = field(*pos).unwrap_or("");
        if let Some(allowed) = &f.any_of {
            if !allowed.iter().any(|a| a == raw) {
                return Ok(false);
            }
        }
        if f.min.is_some() || f.max.is_some() {
            let v: f64 = raw.parse().map_err(|_| {
                (
                    f.column.clone(),
                    format!("malformed number `{raw}` in filter"),
                )
            })?;
            if f.min.is_some_and(|m| v < m) || f.max.is_some_and(|m| v > m) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
