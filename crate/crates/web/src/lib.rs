//! Browser bindings for the demo page in `www/`.
//!
//! Every entry point returns a JSON string so the page can stay plain
//! JavaScript. The `*_json` functions are ordinary Rust and are what the
//! native tests exercise; the `#[wasm_bindgen]` wrappers turn errors into
//! JS exceptions.

use ldpfair::fairness::Metric;
use ldpfair::forest::ForestParams;
use ldpfair::harness::{self, DatasetConfig, ExperimentConfig, Group, Measure};
use ldpfair::mechanism::{self, MechanismConfig, Setting, SplitPolicy, DEFAULT_MATRIX_CAP};
use ldpfair::synth::{Regime, SynthParams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct MatrixView {
    setting: Setting,
    epsilon: f64,
    domains: Vec<usize>,
    /// Decoded label tuple of every joint cell, e.g. "1|0|2".
    labels: Vec<String>,
    cells: Vec<Vec<f64>>,
    keep: f64,
    max_ratio: f64,
}

/// Transition matrix of `setting` at `epsilon` over the synthetic schema.
pub fn matrix_json(setting: &str, epsilon: f64, policy: &str) -> Result<String, String> {
    let setting: Setting = setting.parse().map_err(err)?;
    let policy: SplitPolicy = policy.parse().map_err(err)?;
    let schema = SynthParams::synthetic1().schema();
    let mc = MechanismConfig::new(setting, epsilon).with_split_policy(policy);
    let m = mechanism::transition_matrix(&mc, &schema, DEFAULT_MATRIX_CAP).map_err(err)?;
    let domains = m.domains().to_vec();
    let labels = (0..m.size())
        .map(|j| {
            let t = mechanism::cartesian_decode(j, &domains).expect("index within joint domain");
            t.iter().map(u32::to_string).collect::<Vec<_>>().join("|")
        })
        .collect();
    let cells: Vec<Vec<f64>> = (0..m.size()).map(|i| m.row(i).to_vec()).collect();
    let keep = cells
        .first()
        .and_then(|r| r.first())
        .copied()
        .unwrap_or(1.0);
    let view = MatrixView {
        setting,
        epsilon,
        domains,
        labels,
        keep,
        max_ratio: m.max_ratio(),
        cells,
    };
    serde_json::to_string(&view).map_err(err)
}

#[derive(Serialize)]
struct SplitView {
    domains: Vec<usize>,
    budgets: Vec<f64>,
    /// Probability of keeping the true value per attribute.
    keep: Vec<f64>,
    /// Keep probability of a single k-RR over the Cartesian product.
    comb_keep: f64,
}

/// Per-attribute budgets for comma-separated domain sizes.
pub fn budget_split_json(domains: &str, epsilon: f64, policy: &str) -> Result<String, String> {
    let domains: Vec<usize> = domains
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad domain size `{}`", s.trim()))
        })
        .collect::<Result<_, _>>()?;
    let policy: SplitPolicy = policy.parse().map_err(err)?;
    let split = mechanism::split_budget(&domains, epsilon, policy).map_err(err)?;
    let keep = domains
        .iter()
        .zip(split.budgets())
        .map(|(&k, &e)| mechanism::krr_params(k, e).map(|p| p.p()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let joint = mechanism::joint_size(&domains).ok_or("joint domain overflows")?;
    let comb_keep = mechanism::krr_params(joint, epsilon).map_err(err)?.p();
    serde_json::to_string(&SplitView {
        budgets: split.0,
        domains,
        keep,
        comb_keep,
    })
    .map_err(err)
}

#[derive(Serialize)]
struct SweepPoint {
    setting: Setting,
    epsilon: f64,
    sd: Option<f64>,
    privileged_rate: Option<f64>,
    unprivileged_rate: Option<f64>,
}

/// Small statistical-disparity sweep on synthetic data. Sized for a browser:
/// one run, three folds, a modest forest.
pub fn sweep_json(
    preset: &str,
    regime: &str,
    n: usize,
    epsilons: &str,
    seed: u64,
) -> Result<String, String> {
    let regime: Regime = regime.parse().map_err(err)?;
    let epsilons: Vec<f64> = epsilons
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad budget `{}`", s.trim()))
        })
        .collect::<Result<_, _>>()?;
    let cfg = ExperimentConfig {
        dataset: DatasetConfig {
            n,
            regime: Some(regime),
            ..DatasetConfig::preset(preset)
        },
        settings: vec![
            Setting::NoLdp,
            Setting::Sldp,
            Setting::CombLdp,
            Setting::IndLdp,
        ],
        epsilons,
        runs: 1,
        folds: 3,
        seed,
        forest: ForestParams {
            n_trees: 25,
            ..ForestParams::default()
        },
        ..ExperimentConfig::default()
    };
    let rows = harness::run_experiment(&cfg).map_err(err)?;
    let summary = harness::aggregate(&rows).map_err(err)?;
    let mean = |s, e, g, m| harness::summary_mean(&summary, s, e, g, m);
    let selection = Measure::Rate(ldpfair::fairness::Rate::SelectionRate);
    let mut points = Vec::new();
    for &setting in &cfg.settings {
        for &epsilon in &cfg.epsilons {
            points.push(SweepPoint {
                setting,
                epsilon,
                sd: mean(
                    setting,
                    epsilon,
                    Group::Overall,
                    Measure::Disparity(Metric::SD),
                ),
                privileged_rate: mean(setting, epsilon, Group::Privileged, selection),
                unprivileged_rate: mean(setting, epsilon, Group::Unprivileged, selection),
            });
        }
    }
    serde_json::to_string(&points).map_err(err)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
pub fn transition_matrix(setting: &str, epsilon: f64, policy: &str) -> Result<String, JsError> {
    matrix_json(setting, epsilon, policy).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn budget_split(domains: &str, epsilon: f64, policy: &str) -> Result<String, JsError> {
    budget_split_json(domains, epsilon, policy).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn disparity_sweep(
    preset: &str,
    regime: &str,
    n: usize,
    epsilons: &str,
    seed: u64,
) -> Result<String, JsError> {
    sweep_json(preset, regime, n, epsilons, seed).map_err(|e| JsError::new(&e))
}
