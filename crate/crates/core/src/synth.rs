//! Synthetic data from the causal model `C -> A -> M -> Y`, `C -> Y`, `A -> Y`:
//!
//! ```text
//! C ~ Bernoulli(p_c)
//! A | C=c ~ Bernoulli(p_a_given_c[c])
//! M | A=a ~ Categorical(p_m_given_a[a])        (M in {0, 1, 2})
//! Y = alpha*A + beta*M + gamma*C + U,  U ~ N(0, 1)
//! ```
//!
//! The continuous score is binarized afterwards with a [`ThresholdSpec`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{AttributeSpec, Dataset, Role, Schema};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub p_c: f64,
    /// `P(A=1 | C=0)`, `P(A=1 | C=1)`.
    pub p_a_given_c: [f64; 2],
    /// Distribution of `M` for `A=0` and `A=1`.
    pub p_m_given_a: [[f64; 3]; 2],
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Index of the privileged category of `A`.
    #[serde(default = "one")]
    pub privileged_index: u32,
}

fn one() -> u32 {
    1
}

impl Default for SynthParams {
    fn default() -> Self {
        Self::synthetic1()
    }
}

impl SynthParams {
    /// The graph's published conditional distributions, with small
    /// structural coefficients.
    pub fn synthetic1() -> Self {
        Self {
            p_c: 0.35,
            p_a_given_c: [0.55, 0.75],
            p_m_given_a: [[0.35, 0.4, 0.25], [0.5, 0.4, 0.1]],
            alpha: 0.1,
            beta: 0.05,
            gamma: 0.05,
            privileged_index: 1,
        }
    }

    /// Same graph with the direct effect of `A` reversed, so `A=0` is the
    /// group favoured by the outcome.
    pub fn synthetic2() -> Self {
        Self {
            alpha: -0.1,
            privileged_index: 0,
            ..Self::synthetic1()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "synthetic1" => Ok(Self::synthetic1()),
            "synthetic2" => Ok(Self::synthetic2()),
            _ => Err(Error::Config(format!("unknown synthetic preset `{name}`"))),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bern = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Parameter(format!(
                    "{name} = {p} is not a probability"
                )))
            }
        };
        bern("p_c", self.p_c)?;
        for (c, &p) in self.p_a_given_c.iter().enumerate() {
            bern(&format!("p_a_given_c[{c}]"), p)?;
        }
        for (a, dist) in self.p_m_given_a.iter().enumerate() {
            for &p in dist {
                bern(&format!("p_m_given_a[{a}]"), p)?;
            }
            let total: f64 = dist.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!(
                    "p_m_given_a[{a}] sums to {total}"
                )));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite")));
            }
        }
        if self.privileged_index > 1 {
            return Err(Error::Parameter("privileged_index must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Schema of the generated table: `A` (protected), `C`, `M` (sensitive),
    /// `Y` (outcome).
    pub fn schema(&self) -> Schema {
        Schema::new(
            vec![
                AttributeSpec::new("A", Role::Protected, ["0", "1"]),
                AttributeSpec::new("C", Role::Sensitive, ["0", "1"]),
                AttributeSpec::new("M", Role::Sensitive, ["0", "1", "2"]),
                AttributeSpec::new("Y", Role::Outcome, ["0", "1"]),
            ],
            vec!["A".into(), "C".into(), "M".into()],
        )
        .with_privileged_index(self.privileged_index)
    }
}

/// Categorical features together with a continuous outcome score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredData {
    pub schema: Arc<Schema>,
    /// One column per schema attribute; the outcome column is left empty
    /// until [`binarize_outcome`].
    pub columns: Vec<Vec<u32>>,
    pub scores: Vec<f64>,
}

impl ScoredData {
    pub fn n(&self) -> usize {
        self.scores.len()
    }
}

pub fn generate(params: &SynthParams, n: usize, seed: u64) -> Result<ScoredData> {
    params.check()?;
    let schema = Arc::new(params.schema());
    let mut rng = seed::rng(seed, &[]);
    let (mut a_col, mut c_col, mut m_col) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let c = u32::from(rng.random::<f64>() < params.p_c);
        let a = u32::from(rng.random::<f64>() < params.p_a_given_c[c as usize]);
        let u: f64 = rng.random();
        let dist = &params.p_m_given_a[a as usize];
        let m = if u < dist[0] {
            0
        } else if u < dist[0] + dist[1] {
            1
        } else {
            2
        };
        let noise: f64 = rng.sample(StandardNormal);
        scores.push(
            params.alpha * a as f64 + params.beta * m as f64 + params.gamma * c as f64 + noise,
        );
        a_col.push(a);
        c_col.push(c);
        m_col.push(m);
    }
    Ok(ScoredData {
        schema,
        columns: vec![a_col, c_col, m_col, Vec::new()],
        scores,
    })
}

/// How a continuous score becomes a binary outcome: `1` iff `score > τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSpec {
    Absolute(f64),
    /// `τ` is the empirical quantile (linear interpolation between order
    /// statistics) at this level, which must lie in `(0, 1)`.
    Quantile(f64),
}

impl ThresholdSpec {
    pub fn check(&self) -> Result<()> {
        match *self {
            ThresholdSpec::Absolute(t) if t.is_nan() => {
                Err(Error::Parameter("threshold is NaN".into()))
            }
            ThresholdSpec::Quantile(q) if !(q > 0.0 && q < 1.0) => Err(Error::Parameter(format!(
                "quantile level {q} not in (0, 1)"
            ))),
            _ => Ok(()),
        }
    }
}

/// Outcome regimes: skewed to 1, balanced, skewed to 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Q1,
    Q2,
    Q3,
}

impl Regime {
    /// Quantile threshold giving positive rates of 0.75, 0.5 and 0.25.
    pub fn quantile(self) -> ThresholdSpec {
        ThresholdSpec::Quantile(match self {
            Regime::Q1 => 0.25,
            Regime::Q2 => 0.5,
            Regime::Q3 => 0.75,
        })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q1" | "skewed1" => Ok(Regime::Q1),
            "q2" | "balanced" => Ok(Regime::Q2),
            "q3" | "skewed0" => Ok(Regime::Q3),
            _ => Err(Error::Parameter(format!(
                "unknown regime `{s}` (expected q1, q2 or q3)"
            ))),
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::DegenerateThreshold(
            "quantile of an empty column".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Resolves the threshold value for `scores`.
pub fn resolve_threshold(scores: &[f64], spec: &ThresholdSpec) -> Result<f64> {
    spec.check()?;
    match *spec {
        ThresholdSpec::Absolute(t) => Ok(t),
        ThresholdSpec::Quantile(level) => {
            let first = scores.first().copied();
            if scores.iter().all(|&s| Some(s) == first) {
                return Err(Error::DegenerateThreshold(
                    "all scores are identical; a quantile threshold cannot separate them".into(),
                ));
            }
            empirical_quantile(scores, level)
        }
    }
}

/// `1` iff `score > τ`.
pub fn binarize(scores: &[f64], spec: &ThresholdSpec) -> Result<Vec<u32>> {
    let tau = resolve_threshold(scores, spec)?;
    Ok(scores.iter().map(|&s| u32::from(s > tau)).collect())
}

pub fn binarize_outcome(data: &ScoredData, spec: &ThresholdSpec) -> Result<Dataset> {
    let outcome = data.schema.outcome_index()?;
    let mut columns = data.columns.clone();
    columns[outcome] = binarize(&data.scores, spec)?;
    Dataset::new(Arc::clone(&data.schema), columns)
}

/// Generates and binarizes in one step.
pub fn synthetic_dataset(
    params: &SynthParams,
    n: usize,
    seed: u64,
    spec: &ThresholdSpec,
) -> Result<Dataset> {
    binarize_outcome(&generate(params, n, seed)?, spec)
}
