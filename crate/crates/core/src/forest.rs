//! Bagged decision forest over one-hot encoded categorical features.
//!
//! Trees are grown with the Gini criterion until leaves are pure, cannot be
//! split, or hit `max_depth`. Each split looks at a random subset of
//! `⌈√f⌉` non-constant indicator features. Leaf labels and the forest vote
//! break ties toward label `0`.
//!
//! Training rows are collapsed into weighted unique feature patterns before
//! induction. A bootstrap sample of size `n` is drawn as multinomial counts
//! over those patterns, which has the same distribution as drawing `n` rows
//! with replacement.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Dataset;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, f: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (f as f64).sqrt().ceil() as usize,
            MaxFeatures::All => f,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, f.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn check(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Parameter("n_trees must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Parameter("min_samples_split must be >= 2".into()));
        }
        if let MaxFeatures::Count(0) = self.features_per_split {
            return Err(Error::Parameter("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gini impurity `1 − Σ (c_i / n)²` of a two-class node.
pub fn gini(negatives: u64, positives: u64) -> Result<f64> {
    let n = negatives + positives;
    if n == 0 {
        return Err(Error::Parameter("gini of an empty node".into()));
    }
    Ok(gini_w(negatives as f64, positives as f64))
}

#[inline]
fn gini_w(w0: f64, w1: f64) -> f64 {
    let n = w0 + w1;
    let (a, b) = (w0 / n, w1 / n);
    1.0 - a * a - b * b
}

/// Indicator feature `attribute == category`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub attribute: String,
    pub domain_size: usize,
    pub category: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: u32,
    },
    /// Records with the indicator set go to `on`, others to `off`.
    Split {
        feature: usize,
        off: usize,
        on: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[bool]) -> u32 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { label } => return label,
                Node::Split { feature, off, on } => at = if row[feature] { on } else { off },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { off, on, .. } => 1 + go(nodes, off).max(go(nodes, on)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ForestParams,
    /// Input attributes, in training-schema order, with their domain sizes.
    pub inputs: Vec<(String, usize)>,
    /// Indicator features that varied in the training data.
    pub features: Vec<Feature>,
    pub trees: Vec<Tree>,
    /// Set when the training labels were all one class.
    pub single_class: Option<u32>,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    fn encode_rows(&self, records: &Dataset) -> Result<Vec<Vec<bool>>> {
        let schema = records.schema();
        let mut cols = Vec::with_capacity(self.inputs.len());
        for (name, k) in &self.inputs {
            let spec = schema
                .attribute(name)
                .ok_or_else(|| Error::Schema(format!("records lack model input `{name}`")))?;
            if spec.k() != *k {
                return Err(Error::Schema(format!(
                    "input `{name}` has domain size {} but the model was trained with {k}",
                    spec.k()
                )));
            }
            cols.push(records.column_by_name(name)?);
        }
        let by_name: Vec<usize> = self
            .features
            .iter()
            .map(|f| {
                self.inputs
                    .iter()
                    .position(|(n, _)| *n == f.attribute)
                    .expect("feature input")
            })
            .collect();
        Ok((0..records.n())
            .map(|r| {
                self.features
                    .iter()
                    .zip(&by_name)
                    .map(|(f, &c)| cols[c][r] == f.category)
                    .collect()
            })
            .collect())
    }

    /// Majority vote over trees; ties go to `0`.
    pub fn predict(&self, records: &Dataset) -> Result<Vec<u32>> {
        let rows = self.encode_rows(records)?;
        Ok(rows
            .iter()
            .map(|row| {
                let ones = self.trees.iter().filter(|t| t.predict(row) == 1).count();
                u32::from(2 * ones > self.trees.len())
            })
            .collect())
    }
}

/// Pluggable learner used by the experiment harness.
pub trait Trainer: Send + Sync {
    /// Fits a model on `train`; `seed` replaces any seed in the trainer's own
    /// configuration.
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Classifier>>;
}

pub trait Classifier: Send + Sync {
    fn predict(&self, records: &Dataset) -> Result<Vec<u32>>;
}

impl Classifier for TrainedModel {
    fn predict(&self, records: &Dataset) -> Result<Vec<u32>> {
        TrainedModel::predict(self, records)
    }
}

impl Trainer for ForestParams {
    fn fit(&self, train_set: &Dataset, seed: u64) -> Result<Box<dyn Classifier>> {
        let params = ForestParams { seed, ..*self };
        Ok(Box::new(train(train_set, &params)?))
    }
}

/// Unique feature patterns with per-label record counts.
struct Patterns {
    n_features: usize,
    bits: Vec<bool>,
    counts: Vec<[u64; 2]>,
}

impl Patterns {
    fn row(&self, p: usize) -> &[bool] {
        &self.bits[p * self.n_features..(p + 1) * self.n_features]
    }
}

pub fn train(data: &Dataset, params: &ForestParams) -> Result<TrainedModel> {
    params.check()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let schema = data.schema();
    let input_idx = schema.feature_indices();
    if input_idx.is_empty() {
        return Err(Error::Schema("no input attributes".into()));
    }
    let labels = data.outcome()?;
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::Data(format!("outcome at row {i} is not binary")));
    }
    let n = data.n();
    let inputs: Vec<(String, usize)> = input_idx
        .iter()
        .map(|&i| (schema.attributes[i].name.clone(), schema.attributes[i].k()))
        .collect();

    // Indicators that are neither always on nor always off.
    let mut features = Vec::new();
    let mut feature_cols = Vec::new();
    for &i in &input_idx {
        let spec = &schema.attributes[i];
        let mut seen = vec![0usize; spec.k()];
        for &v in data.column(i) {
            seen[v as usize] += 1;
        }
        for (cat, &count) in seen.iter().enumerate() {
            if count > 0 && count < n {
                features.push(Feature {
                    attribute: spec.name.clone(),
                    domain_size: spec.k(),
                    category: cat as u32,
                });
                feature_cols.push(i);
            }
        }
    }

    let mut grouped: BTreeMap<Vec<bool>, [u64; 2]> = BTreeMap::new();
    for (r, &label) in labels.iter().enumerate().take(n) {
        let key: Vec<bool> = features
            .iter()
            .zip(&feature_cols)
            .map(|(f, &c)| data.column(c)[r] == f.category)
            .collect();
        grouped.entry(key).or_default()[label as usize] += 1;
    }
    let mut patterns = Patterns {
        n_features: features.len(),
        bits: Vec::with_capacity(grouped.len() * features.len()),
        counts: Vec::with_capacity(grouped.len()),
    };
    for (key, counts) in grouped {
        patterns.bits.extend(key);
        patterns.counts.push(counts);
    }

    let positives: u64 = patterns.counts.iter().map(|c| c[1]).sum();
    let single_class = match positives {
        0 => Some(0),
        p if p == n as u64 => Some(1),
        _ => None,
    };

    let max_features = params.features_per_split.resolve(features.len());
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = seed::rng(params.seed, &[t as u64]);
            let weights = if params.bootstrap {
                bootstrap_weights(&patterns.counts, n as u64, &mut rng)
            } else {
                patterns
                    .counts
                    .iter()
                    .map(|c| [c[0] as f64, c[1] as f64])
                    .collect()
            };
            grow(&patterns, &weights, params, max_features, &mut rng)
        })
        .collect();

    Ok(TrainedModel {
        params: *params,
        inputs,
        features,
        trees,
        single_class,
    })
}

/// Multinomial(n; counts / total) via sequential conditional binomials.
fn bootstrap_weights<R: Rng>(counts: &[[u64; 2]], draws: u64, rng: &mut R) -> Vec<[f64; 2]> {
    let mut mass: u64 = counts.iter().map(|c| c[0] + c[1]).sum();
    let mut left = draws;
    let mut out = vec![[0.0; 2]; counts.len()];
    for (slot, c) in out.iter_mut().zip(counts) {
        for label in 0..2 {
            let cell = c[label];
            if cell == 0 || left == 0 {
                continue;
            }
            let take = if cell >= mass {
                left
            } else {
                Binomial::new(left, cell as f64 / mass as f64)
                    .expect("valid binomial")
                    .sample(rng)
            };
            slot[label] = take as f64;
            left -= take;
            mass -= cell;
        }
    }
    out
}

fn grow<R: Rng>(
    patterns: &Patterns,
    weights: &[[f64; 2]],
    params: &ForestParams,
    max_features: usize,
    rng: &mut R,
) -> Tree {
    let active: Vec<usize> = (0..weights.len())
        .filter(|&p| weights[p][0] + weights[p][1] > 0.0)
        .collect();
    let mut nodes = Vec::new();
    let mut order: Vec<usize> = (0..patterns.n_features).collect();
    build(
        patterns,
        weights,
        &active,
        0,
        params,
        max_features,
        &mut order,
        rng,
        &mut nodes,
    );
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn build<R: Rng>(
    patterns: &Patterns,
    weights: &[[f64; 2]],
    members: &[usize],
    depth: usize,
    params: &ForestParams,
    max_features: usize,
    order: &mut [usize],
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let at = nodes.len();
    let (w0, w1) = members.iter().fold((0.0, 0.0), |(a, b), &p| {
        (a + weights[p][0], b + weights[p][1])
    });
    let label = u32::from(w1 > w0);
    nodes.push(Node::Leaf { label });

    let total = w0 + w1;
    let depth_ok = params.max_depth.is_none_or(|d| depth < d);
    if w0 == 0.0
        || w1 == 0.0
        || total < params.min_samples_split as f64
        || !depth_ok
        || members.len() < 2
    {
        return at;
    }

    order.shuffle(rng);
    let mut best: Option<(f64, usize)> = None;
    let mut tried = 0;
    for &f in order.iter() {
        if tried == max_features {
            break;
        }
        let (mut on0, mut on1) = (0.0, 0.0);
        for &p in members {
            if patterns.row(p)[f] {
                on0 += weights[p][0];
                on1 += weights[p][1];
            }
        }
        let on = on0 + on1;
        if on == 0.0 || on == total {
            continue;
        }
        tried += 1;
        let (off0, off1) = (w0 - on0, w1 - on1);
        let score = on * gini_w(on0, on1) + (total - on) * gini_w(off0, off1);
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, f));
        }
    }
    let Some((_, f)) = best else {
        return at;
    };

    let (on_set, off_set): (Vec<usize>, Vec<usize>) =
        members.iter().partition(|&&p| patterns.row(p)[f]);
    let off = build(
        patterns,
        weights,
        &off_set,
        depth + 1,
        params,
        max_features,
        order,
        rng,
        nodes,
    );
    let on = build(
        patterns,
        weights,
        &on_set,
        depth + 1,
        params,
        max_features,
        order,
        rng,
        nodes,
    );
    nodes[at] = Node::Split {
        feature: f,
        off,
        on,
    };
    at
}

/// Free-function form of [`TrainedModel::predict`].
pub fn predict(model: &TrainedModel, records: &Dataset) -> Result<Vec<u32>> {
    model.predict(records)
}
