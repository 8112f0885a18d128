//! Experiment orchestration.
//!
//! For every run the records are split into stratified folds. For every
//! fold, setting and privacy budget the sensitive columns of the training
//! portion are randomized, a model is trained, and it is evaluated on the
//! untouched test portion. `noLDP` is trained once per fold and its rows are
//! replicated across the budget grid.
//!
//! Seeds are derived from the master seed and the unit's indices (see
//! [`crate::seed`]), so results do not depend on how units are scheduled.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{disparity, group_rates, GroupRates, Metric, Rate};
use crate::forest::{ForestParams, Trainer};
use crate::ingest::{self, IngestConfig, LoadReport};
use crate::mechanism::{MechanismConfig, Randomizer, Setting, SplitPolicy};
use crate::schema::{project_groups, Dataset};
use crate::seed;
use crate::synth::{self, Regime, SynthParams, ThresholdSpec};

/// Budget grid used when none is configured.
pub const DEFAULT_EPSILONS: [f64; 8] = [16.0, 8.0, 5.0, 3.0, 2.0, 1.0, 0.5, 0.1];

// Seed-derivation tags, one per random stream.
const TAG_DATA: u64 = 1;
const TAG_FOLDS: u64 = 2;
const TAG_MECHANISM: u64 = 3;
const TAG_FOREST: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Parameter(format!("unknown report format `{s}`"))),
        }
    }
}

/// Where the records come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `synthetic1` or `synthetic2`.
    #[serde(default)]
    pub preset: Option<String>,
    /// Path to an ingestion config document.
    #[serde(default)]
    pub ingest: Option<PathBuf>,
    /// Synthetic record count.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Outcome regime; for synthetic data it selects the quantile threshold.
    #[serde(default)]
    pub regime: Option<Regime>,
    /// Explicit outcome threshold; overrides `regime` and the ingest config.
    #[serde(default)]
    pub threshold: Option<ThresholdSpec>,
    /// Overrides the preset's generator parameters.
    #[serde(default)]
    pub synth: Option<SynthParams>,
}

fn default_n() -> usize {
    20_000
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            preset: Some("synthetic1".into()),
            ingest: None,
            n: default_n(),
            regime: Some(Regime::Q2),
            threshold: None,
            synth: None,
        }
    }
}

impl DatasetConfig {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.into()),
            ..Self::default()
        }
    }

    pub fn ingest(path: impl Into<PathBuf>) -> Self {
        Self {
            preset: None,
            ingest: Some(path.into()),
            regime: None,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub settings: Vec<Setting>,
    pub epsilons: Vec<f64>,
    pub split_policy: SplitPolicy,
    pub runs: usize,
    pub folds: usize,
    pub seed: u64,
    pub forest: ForestParams,
    pub out: PathBuf,
    pub format: ReportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            settings: Setting::ALL.to_vec(),
            epsilons: DEFAULT_EPSILONS.to_vec(),
            split_policy: SplitPolicy::KBased,
            runs: 5,
            folds: 10,
            seed: 0,
            forest: ForestParams::default(),
            out: PathBuf::from("results"),
            format: ReportFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let (Some(base), Some(p)) = (base_dir, cfg.dataset.ingest.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
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

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(Error::Config("no settings selected".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("empty privacy budget grid".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::Config(format!(
                "privacy budgets must be finite and > 0, got {e}"
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        match (&self.dataset.preset, &self.dataset.ingest) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "dataset needs exactly one of `preset` or `ingest`".into(),
                ))
            }
        }
        self.forest.check()
    }
}

/// A dataset ready for an experiment, with the labels used in reports.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub name: String,
    pub regime: String,
    pub dataset: Dataset,
    pub load_report: Option<LoadReport>,
}

fn threshold_label(spec: &ThresholdSpec) -> String {
    match spec {
        ThresholdSpec::Absolute(t) => format!("tau={t}"),
        ThresholdSpec::Quantile(q) => format!("q={q}"),
    }
}

/// Generates or loads the configured dataset.
pub fn prepare_data(config: &DatasetConfig, master_seed: u64) -> Result<PreparedData> {
    if let Some(name) = &config.preset {
        let params = match &config.synth {
            Some(p) => p.clone(),
            None => SynthParams::preset(name)?,
        };
        let (spec, regime) = match (config.threshold, config.regime) {
            (Some(t), r) => (t, r.map_or_else(|| threshold_label(&t), |r| r.to_string())),
            (None, Some(r)) => (r.quantile(), r.to_string()),
            (None, None) => (Regime::Q2.quantile(), Regime::Q2.to_string()),
        };
        let data_seed = seed::derive(master_seed, &[TAG_DATA]);
        let dataset = synth::synthetic_dataset(&params, config.n, data_seed, &spec)?;
        return Ok(PreparedData {
            name: name.clone(),
            regime,
            dataset,
            load_report: None,
        });
    }
    let path = config
        .ingest
        .as_ref()
        .ok_or_else(|| Error::Config("dataset needs `preset` or `ingest`".into()))?;
    let mut ingest_cfg = IngestConfig::from_toml_file(path)?;
    if let Some(t) = config.threshold {
        ingest_cfg.outcome.threshold = Some(t);
        ingest_cfg.outcome.positive = None;
    }
    let regime = match (config.regime, &ingest_cfg.outcome.threshold) {
        (Some(r), _) => r.to_string(),
        (None, Some(t)) => threshold_label(t),
        (None, None) => "labels".to_owned(),
    };
    let (dataset, report) = ingest::load(&ingest_cfg)?;
    let name = path.file_stem().map_or_else(
        || "dataset".to_owned(),
        |s| s.to_string_lossy().into_owned(),
    );
    Ok(PreparedData {
        name,
        regime,
        dataset,
        load_report: Some(report),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Privileged,
    Unprivileged,
    Overall,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Privileged => "privileged",
            Group::Unprivileged => "unprivileged",
            Group::Overall => "overall",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "privileged" => Ok(Group::Privileged),
            "unprivileged" => Ok(Group::Unprivileged),
            "overall" => Ok(Group::Overall),
            _ => Err(Error::Data(format!("unknown group `{s}`"))),
        }
    }
}

/// A rate of one group, or a disparity between the groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Measure {
    Rate(Rate),
    Disparity(Metric),
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Rate(r) => r.as_str(),
            Measure::Disparity(m) => m.as_str(),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(r) = Rate::ALL.into_iter().find(|r| r.as_str() == s) {
            return Ok(Measure::Rate(r));
        }
        s.parse().map(Measure::Disparity)
    }
}

/// One measured value for one (setting, ε, run, fold, group, measure) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub regime: String,
    pub setting: Setting,
    pub epsilon: f64,
    pub run: usize,
    pub fold: usize,
    pub group: Group,
    pub measure: Measure,
    /// `None` when undefined (zero denominator or empty group).
    pub value: Option<f64>,
}

/// Stratified fold assignment on (outcome, group). Returns, per fold, the
/// test row indices in ascending order.
pub fn stratified_folds(
    outcome: &[u32],
    groups: &[u8],
    folds: usize,
    rng: &mut impl rand::Rng,
) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut strata: [Vec<usize>; 4] = Default::default();
    for (i, (&y, &g)) in outcome.iter().zip(groups).enumerate() {
        strata[(y as usize) * 2 + g as usize].push(i);
    }
    let mut out = vec![Vec::new(); folds];
    // Continue dealing where the previous stratum stopped so fold sizes
    // differ by at most one.
    let mut next = 0;
    for stratum in strata.iter_mut() {
        stratum.shuffle(rng);
        for &i in stratum.iter() {
            out[next].push(i);
            next = (next + 1) % folds;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Unit {
    run: usize,
    fold: usize,
    setting: Setting,
    /// Index into the ε grid; ignored for `noLDP`.
    eps_index: usize,
}

struct FoldData {
    train: Dataset,
    test: Dataset,
    test_digest: String,
    test_groups: Vec<u8>,
}

/// Runs the full experiment described by `config` with the bundled forest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.check()?;
    let data = prepare_data(&config.dataset, config.seed)?;
    run_on(config, &data, &config.forest)
}

/// Runs the experiment on already prepared data with any trainer.
pub fn run_on(
    config: &ExperimentConfig,
    data: &PreparedData,
    trainer: &dyn Trainer,
) -> Result<Vec<ResultRow>> {
    config.check()?;
    let ds = &data.dataset;
    if ds.n() < config.folds {
        return Err(Error::Config(format!(
            "{} records cannot fill {} folds",
            ds.n(),
            config.folds
        )));
    }
    let schema = ds.schema_arc();
    let groups = project_groups(ds)?;
    let outcome = ds.outcome()?;
    let sensitive = schema.sensitive_indices()?;

    // Mechanisms are validated before any work starts.
    let mut randomizers = IndexMap::new();
    for &setting in &config.settings {
        for (ei, &eps) in config.epsilons.iter().enumerate() {
            let mc = MechanismConfig::new(setting, eps).with_split_policy(config.split_policy);
            randomizers.insert((setting, ei), Arc::new(Randomizer::new(&mc, schema)?));
        }
    }

    let fold_sets: Vec<Vec<Vec<usize>>> = (0..config.runs)
        .map(|run| {
            let mut rng = seed::rng(config.seed, &[TAG_FOLDS, run as u64]);
            stratified_folds(outcome, &groups, config.folds, &mut rng)
        })
        .collect();

    let mut units = Vec::new();
    for run in 0..config.runs {
        for fold in 0..config.folds {
            for &setting in &config.settings {
                if setting == Setting::NoLdp {
                    units.push(Unit {
                        run,
                        fold,
                        setting,
                        eps_index: 0,
                    });
                } else {
                    for eps_index in 0..config.epsilons.len() {
                        units.push(Unit {
                            run,
                            fold,
                            setting,
                            eps_index,
                        });
                    }
                }
            }
        }
    }

    let fold_data = |run: usize, fold: usize| -> FoldData {
        let test_rows = &fold_sets[run][fold];
        let mut is_test = vec![false; ds.n()];
        for &i in test_rows {
            is_test[i] = true;
        }
        let train_rows: Vec<usize> = (0..ds.n()).filter(|&i| !is_test[i]).collect();
        let test = ds.select_rows(test_rows);
        FoldData {
            train: ds.select_rows(&train_rows),
            test_digest: test.digest(),
            test_groups: test_rows.iter().map(|&i| groups[i]).collect(),
            test,
        }
    };

    let per_unit: Vec<Vec<ResultRow>> = units
        .par_iter()
        .map(|u| -> Result<Vec<ResultRow>> {
            let fd = fold_data(u.run, u.fold);
            let randomizer = &randomizers[&(u.setting, u.eps_index)];
            let mut rng = seed::rng(
                config.seed,
                &[
                    TAG_MECHANISM,
                    u.run as u64,
                    u.fold as u64,
                    u.setting.index(),
                    u.eps_index as u64,
                ],
            );
            let train = obfuscate(&fd.train, &sensitive, randomizer, &mut rng);
            let forest_seed = seed::derive(config.seed, &[TAG_FOREST, u.run as u64, u.fold as u64]);
            let model = trainer.fit(&train, forest_seed)?;

            // Only the untouched test split is ever scored.
            let test = &fd.test;
            if test.digest() != fd.test_digest {
                return Err(Error::Data(format!(
                    "test split of run {} fold {} was modified",
                    u.run, u.fold
                )));
            }
            let pred = model.predict(test)?;
            let pair = group_rates(test.outcome()?, &pred, &fd.test_groups)?;
            let disp = disparity(&pair.privileged, &pair.unprivileged).ok();

            let eps_values: Vec<f64> = if u.setting == Setting::NoLdp {
                config.epsilons.clone()
            } else {
                vec![config.epsilons[u.eps_index]]
            };
            let mut rows = Vec::new();
            for &epsilon in &eps_values {
                let mut push = |group: Group, measure: Measure, value: Option<f64>| {
                    rows.push(ResultRow {
                        dataset: data.name.clone(),
                        regime: data.regime.clone(),
                        setting: u.setting,
                        epsilon,
                        run: u.run,
                        fold: u.fold,
                        group,
                        measure,
                        value,
                    });
                };
                let overall = pair.overall();
                for (group, rates) in [
                    (Group::Privileged, &pair.privileged),
                    (Group::Unprivileged, &pair.unprivileged),
                    (Group::Overall, &overall),
                ] {
                    for r in Rate::ALL {
                        push(group, Measure::Rate(r), GroupRates::get(rates, r));
                    }
                }
                for m in Metric::ALL {
                    push(
                        Group::Overall,
                        Measure::Disparity(m),
                        disp.and_then(|d| d.get(m)),
                    );
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<ResultRow> = per_unit.into_iter().flatten().collect();
    // Presentation order: setting, ε grid, run, fold (units are already in
    // run/fold order, noLDP is spread over the grid).
    let setting_pos = |s: Setting| {
        config
            .settings
            .iter()
            .position(|&x| x == s)
            .unwrap_or(usize::MAX)
    };
    let eps_pos = |e: f64| {
        config
            .epsilons
            .iter()
            .position(|&x| x == e)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by_key(|r| (setting_pos(r.setting), eps_pos(r.epsilon), r.run, r.fold));
    Ok(rows)
}

fn obfuscate(
    train: &Dataset,
    sensitive: &[usize],
    randomizer: &Randomizer,
    rng: &mut impl rand::Rng,
) -> Dataset {
    if randomizer.params().is_empty() {
        return train.clone();
    }
    let mut cols: Vec<Vec<u32>> = sensitive
        .iter()
        .map(|&c| train.column(c).to_vec())
        .collect();
    let mut tuple = vec![0u32; sensitive.len()];
    for r in 0..train.n() {
        for (t, col) in tuple.iter_mut().zip(&cols) {
            *t = col[r];
        }
        randomizer.randomize_in_place(&mut tuple, rng);
        for (t, col) in tuple.iter().zip(cols.iter_mut()) {
            col[r] = *t;
        }
    }
    train.with_columns(sensitive.iter().copied().zip(cols))
}

/// Run/fold aggregate of one (dataset, regime, setting, ε, group, measure).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub regime: String,
    pub setting: Setting,
    pub epsilon: f64,
    pub group: Group,
    pub measure: Measure,
    /// `None` when every value was undefined.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub sd: Option<f64>,
    pub n_included: usize,
    pub n_excluded: usize,
}

/// Mean and population standard deviation over runs × folds; undefined
/// values are excluded and counted.
pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Data("nothing to aggregate".into()));
    }
    // Key: dataset, regime, setting, ε bits, group, measure.
    type Key<'a> = (&'a str, &'a str, Setting, u64, Group, Measure);
    let mut cells: IndexMap<Key, (Vec<f64>, usize)> = IndexMap::new();
    for r in rows {
        let slot = cells
            .entry((
                &r.dataset,
                &r.regime,
                r.setting,
                r.epsilon.to_bits(),
                r.group,
                r.measure,
            ))
            .or_default();
        match r.value {
            Some(v) => slot.0.push(v),
            None => slot.1 += 1,
        }
    }
    Ok(cells
        .into_iter()
        .map(
            |((dataset, regime, setting, eps, group, measure), (values, excluded))| {
                let (mean, sd) = if values.is_empty() {
                    (None, None)
                } else {
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    (Some(mean), Some(var.sqrt()))
                };
                SummaryRow {
                    dataset: dataset.to_owned(),
                    regime: regime.to_owned(),
                    setting,
                    epsilon: f64::from_bits(eps),
                    group,
                    measure,
                    mean,
                    sd,
                    n_included: values.len(),
                    n_excluded: excluded,
                }
            },
        )
        .collect())
}

/// Column order of the summary CSV.
pub const SUMMARY_HEADER: [&str; 10] = [
    "dataset",
    "regime",
    "setting",
    "epsilon",
    "group",
    "measure",
    "mean",
    "sd",
    "n_included",
    "n_excluded",
];

/// Column order of the per-fold CSV.
pub const ROWS_HEADER: [&str; 9] = [
    "dataset", "regime", "setting", "epsilon", "run", "fold", "group", "measure", "value",
];

/// Marker written for undefined values in CSV output.
pub const UNDEFINED: &str = "UNDEFINED";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_owned(), |x| x.to_string())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == UNDEFINED {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("bad number `{s}`")))
}

pub fn summary_to_csv(summary: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        w.write_record([
            s.dataset.clone(),
            s.regime.clone(),
            s.setting.to_string(),
            s.epsilon.to_string(),
            s.group.to_string(),
            s.measure.to_string(),
            opt(s.mean),
            opt(s.sd),
            s.n_included.to_string(),
            s.n_excluded.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

pub fn summary_from_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::Data(format!("unexpected summary header {header:?}")));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Data(format!("bad count `{s}`")))
    };
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(SummaryRow {
                dataset: rec[0].to_owned(),
                regime: rec[1].to_owned(),
                setting: rec[2].parse()?,
                epsilon: rec[3]
                    .parse()
                    .map_err(|_| Error::Data(format!("bad epsilon `{}`", &rec[3])))?,
                group: rec[4].parse()?,
                measure: rec[5].parse()?,
                mean: parse_opt(&rec[6])?,
                sd: parse_opt(&rec[7])?,
                n_included: num(&rec[8])?,
                n_excluded: num(&rec[9])?,
            })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROWS_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.regime.clone(),
            r.setting.to_string(),
            r.epsilon.to_string(),
            r.run.to_string(),
            r.fold.to_string(),
            r.group.to_string(),
            r.measure.to_string(),
            opt(r.value),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Writes the summary to `path` as CSV or JSON.
pub fn emit_report(summary: &[SummaryRow], path: &Path, format: ReportFormat) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => summary_to_csv(summary)?,
        ReportFormat::Json => serde_json::to_string_pretty(summary)? + "\n",
    };
    write_file(path, body.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Files written by [`write_outputs`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outputs {
    pub summary: PathBuf,
    pub rows: PathBuf,
}

/// Writes `summary.{csv,json}` and `rows.csv` into `dir`.
pub fn write_outputs(dir: &Path, rows: &[ResultRow], format: ReportFormat) -> Result<Outputs> {
    let summary = aggregate(rows)?;
    let summary_path = dir.join(match format {
        ReportFormat::Csv => "summary.csv",
        ReportFormat::Json => "summary.json",
    });
    emit_report(&summary, &summary_path, format)?;
    let rows_path = dir.join("rows.csv");
    write_file(&rows_path, rows_to_csv(rows)?.as_bytes())?;
    Ok(Outputs {
        summary: summary_path,
        rows: rows_path,
    })
}

/// Looks up the run/fold mean of one measure.
pub fn summary_mean(
    summary: &[SummaryRow],
    setting: Setting,
    epsilon: f64,
    group: Group,
    measure: Measure,
) -> Option<f64> {
    summary
        .iter()
        .find(|s| {
            s.setting == setting && s.epsilon == epsilon && s.group == group && s.measure == measure
        })
        .and_then(|s| s.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Classifier;
    use std::sync::Mutex;

    fn row(value: Option<f64>, run: usize) -> ResultRow {
        ResultRow {
            dataset: "d".into(),
            regime: "Q2".into(),
            setting: Setting::CombLdp,
            epsilon: 1.0,
            run,
            fold: 0,
            group: Group::Overall,
            measure: Measure::Disparity(Metric::SD),
            value,
        }
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig {
                n: 1500,
                ..DatasetConfig::default()
            },
            epsilons: vec![5.0, 0.5],
            runs: 2,
            folds: 3,
            seed: 9,
            forest: ForestParams {
                n_trees: 10,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn aggregate_mean_and_population_sd() {
        let s = aggregate(&[row(Some(0.2), 0), row(Some(0.4), 1)]).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].mean.unwrap() - 0.3).abs() < 1e-15);
        assert!((s[0].sd.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!((s[0].n_included, s[0].n_excluded), (2, 0));
    }

    #[test]
    fn aggregate_single_and_undefined() {
        let s = aggregate(&[row(Some(0.7), 0)]).unwrap();
        assert_eq!(s[0].sd, Some(0.0));
        let s = aggregate(&[row(Some(0.2), 0), row(None, 1)]).unwrap();
        assert_eq!(
            (s[0].mean, s[0].n_included, s[0].n_excluded),
            (Some(0.2), 1, 1)
        );
        let s = aggregate(&[row(None, 0), row(None, 1)]).unwrap();
        assert_eq!((s[0].mean, s[0].sd, s[0].n_excluded), (None, None, 2));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn empty_summary_is_header_only() {
        let csv = summary_to_csv(&[]).unwrap();
        assert_eq!(csv, SUMMARY_HEADER.join(",") + "\n");
    }

    #[test]
    fn summary_csv_round_trip() {
        let rows: Vec<ResultRow> = (0..5)
            .map(|i| row(if i == 3 { None } else { Some(i as f64 / 7.0) }, i))
            .chain([ResultRow {
                group: Group::Privileged,
                measure: Measure::Rate(Rate::Tpr),
                value: None,
                ..row(None, 0)
            }])
            .collect();
        let summary = aggregate(&rows).unwrap();
        let back = summary_from_csv(&summary_to_csv(&summary).unwrap()).unwrap();
        assert_eq!(back, summary);
    }

    #[test]
    fn folds_partition_and_stratify() {
        let outcome: Vec<u32> = (0..103).map(|i| (i % 3 == 0) as u32).collect();
        let groups: Vec<u8> = (0..103).map(|i| (i % 5 < 2) as u8).collect();
        let mut rng = seed::rng(1, &[]);
        let folds = stratified_folds(&outcome, &groups, 10, &mut rng);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            assert!(f.iter().any(|&i| groups[i] == 1) && f.iter().any(|&i| groups[i] == 0));
        }
    }

    #[test]
    fn no_ldp_is_constant_across_budgets() {
        let cfg = ExperimentConfig {
            settings: vec![Setting::NoLdp],
            epsilons: vec![16.0, 2.0, 0.1],
            ..small_config()
        };
        let rows = run_experiment(&cfg).unwrap();
        let mut by_cell: IndexMap<(usize, usize, Group, Measure), Vec<Option<f64>>> =
            IndexMap::new();
        for r in &rows {
            by_cell
                .entry((r.run, r.fold, r.group, r.measure))
                .or_default()
                .push(r.value);
        }
        for values in by_cell.values() {
            assert_eq!(values.len(), 3);
            assert!(values.iter().all(|v| *v == values[0]));
        }
    }

    #[test]
    fn keys_are_unique() {
        let rows = run_experiment(&small_config()).unwrap();
        let mut keys = std::collections::HashSet::new();
        for r in &rows {
            assert!(keys.insert((
                r.setting,
                r.epsilon.to_bits(),
                r.run,
                r.fold,
                r.group,
                r.measure
            )));
        }
        // 4 settings × 2 budgets × 2 runs × 3 folds × (15 rates + 5 disparities)
        assert_eq!(rows.len(), 4 * 2 * 2 * 3 * 20);
    }

    /// Records the digest of every dataset passed to `predict`, and of every
    /// training set, and delegates to the forest.
    struct SpyModel {
        inner: Box<dyn Classifier>,
        seed: u64,
        train_digest: String,
        log: Arc<Mutex<Vec<(u64, String, String)>>>,
    }

    impl Classifier for SpyModel {
        fn predict(&self, records: &Dataset) -> Result<Vec<u32>> {
            self.log
                .lock()
                .unwrap()
                .push((self.seed, self.train_digest.clone(), records.digest()));
            self.inner.predict(records)
        }
    }

    struct SpyTrainer {
        spy: Arc<Mutex<Vec<(u64, String, String)>>>,
        inner: ForestParams,
    }

    impl Trainer for SpyTrainer {
        fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Classifier>> {
            Ok(Box::new(SpyModel {
                inner: self.inner.fit(train, seed)?,
                seed,
                train_digest: train.digest(),
                log: Arc::clone(&self.spy),
            }))
        }
    }

    #[test]
    fn test_split_is_never_obfuscated() {
        let cfg = ExperimentConfig {
            epsilons: vec![0.1],
            runs: 1,
            ..small_config()
        };
        let data = prepare_data(&cfg.dataset, cfg.seed).unwrap();
        let log = Arc::new(Mutex::new(Vec::new()));
        let trainer = SpyTrainer {
            spy: Arc::clone(&log),
            inner: cfg.forest,
        };
        run_on(&cfg, &data, &trainer).unwrap();

        let groups = project_groups(&data.dataset).unwrap();
        let mut rng = seed::rng(cfg.seed, &[TAG_FOLDS, 0]);
        let folds = stratified_folds(
            data.dataset.outcome().unwrap(),
            &groups,
            cfg.folds,
            &mut rng,
        );
        let originals: Vec<String> = folds
            .iter()
            .map(|f| data.dataset.select_rows(f).digest())
            .collect();

        let log = log.lock().unwrap();
        assert_eq!(log.len(), cfg.folds * cfg.settings.len());
        for (_, _, test_digest) in log.iter() {
            assert!(originals.contains(test_digest));
        }
        // Same forest seed for every setting of a fold; training sets differ
        // once randomization is applied.
        for d in &originals {
            let entries: Vec<_> = log.iter().filter(|(_, _, t)| t == d).collect();
            assert_eq!(entries.len(), cfg.settings.len());
            assert!(entries.iter().all(|e| e.0 == entries[0].0));
            let trains: std::collections::HashSet<_> = entries.iter().map(|e| &e.1).collect();
            assert_eq!(trains.len(), cfg.settings.len());
        }
    }

    #[test]
    fn results_are_deterministic() {
        let cfg = small_config();
        assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
    }

    #[test]
    fn comb_with_single_sensitive_attribute_matches_sldp() {
        let params = SynthParams::synthetic1();
        let data = synth::synthetic_dataset(&params, 500, 3, &Regime::Q2.quantile()).unwrap();
        let mut schema = data.schema().clone();
        schema.attributes[1].role = crate::schema::Role::NonSensitive;
        schema.attributes[2].role = crate::schema::Role::NonSensitive;
        schema.sensitive_order = vec!["A".into()];
        let data = Dataset::new(Arc::new(schema), data.columns().to_vec()).unwrap();
        let sensitive = data.schema().sensitive_indices().unwrap();
        for eps in [5.0, 0.5] {
            let run = |setting| {
                let r =
                    Randomizer::new(&MechanismConfig::new(setting, eps), data.schema()).unwrap();
                obfuscate(&data, &sensitive, &r, &mut seed::rng(11, &[]))
            };
            assert_eq!(
                run(Setting::Sldp).columns(),
                run(Setting::CombLdp).columns()
            );
        }
    }

    #[test]
    fn config_validation() {
        let base = small_config();
        for bad in [
            ExperimentConfig {
                epsilons: vec![1.0, 0.0],
                ..base.clone()
            },
            ExperimentConfig {
                runs: 0,
                ..base.clone()
            },
            ExperimentConfig {
                folds: 1,
                ..base.clone()
            },
            ExperimentConfig {
                settings: vec![],
                ..base.clone()
            },
        ] {
            assert!(matches!(bad.check(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = small_config();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), None).unwrap();
        assert_eq!(back, cfg);
        let minimal = ExperimentConfig::from_toml_str(
            "[dataset]\npreset = \"synthetic2\"\nregime = \"Q1\"\n",
            None,
        )
        .unwrap();
        assert_eq!(minimal.dataset.preset.as_deref(), Some("synthetic2"));
        assert_eq!(minimal.runs, 5);
    }

    #[test]
    fn empty_group_fold_gives_undefined_disparities() {
        // Protected attribute almost always 1: some folds lack group 0.
        let mut params = SynthParams::synthetic1();
        params.p_a_given_c = [1.0, 1.0];
        let mut cfg = small_config();
        cfg.dataset.synth = Some(params);
        cfg.dataset.n = 60;
        cfg.settings = vec![Setting::NoLdp];
        cfg.epsilons = vec![1.0];
        // A is constant, so there is no unprivileged group at all.
        let rows = run_experiment(&cfg).unwrap();
        let disp: Vec<_> = rows
            .iter()
            .filter(|r| matches!(r.measure, Measure::Disparity(_)))
            .collect();
        assert!(!disp.is_empty());
        assert!(disp.iter().all(|r| r.value.is_none()));
        let summary = aggregate(&rows).unwrap();
        assert!(summary.iter().any(|s| s.mean.is_none() && s.n_excluded > 0));
    }
}
