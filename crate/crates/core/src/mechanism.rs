//! k-ary randomized response and its multi-dimensional compositions.
//!
//! Four settings are supported:
//!
//! | setting   | randomized attributes                                   |
//! |-----------|---------------------------------------------------------|
//! | `noLDP`   | none                                                    |
//! | `sLDP`    | the protected attribute only, full budget               |
//! | `combLDP` | all sensitive attributes as one joint (Cartesian) value |
//! | `indLDP`  | each sensitive attribute, budget split across them      |
//!
//! [`transition_matrix`] gives the exact channel of each setting so that the
//! privacy bound can be checked analytically.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Schema;

/// Default cap on the joint domain size for [`transition_matrix`].
pub const DEFAULT_MATRIX_CAP: usize = 4096;

/// Keep/flip probabilities of k-RR for a domain of size `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrrParams {
    k: usize,
    epsilon: f64,
    p: f64,
    q: f64,
}

impl KrrParams {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Probability of reporting the true value.
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Probability of reporting one specific other value.
    pub fn q(&self) -> f64 {
        self.q
    }
}

/// `p = e^ε / (e^ε + k − 1)`, `q = 1 / (e^ε + k − 1)`.
///
/// `ε = +∞` is accepted and yields the identity channel (`p = 1`, `q = 0`).
pub fn krr_params(k: usize, epsilon: f64) -> Result<KrrParams> {
    if k < 2 {
        return Err(Error::Parameter(format!(
            "k-RR needs a domain of size >= 2, got {k}"
        )));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "privacy budget must be > 0, got {epsilon}"
        )));
    }
    // Written in terms of e^-ε so that large budgets do not overflow.
    let t = (-epsilon).exp();
    let denom = 1.0 + (k - 1) as f64 * t;
    Ok(KrrParams {
        k,
        epsilon,
        p: 1.0 / denom,
        q: t / denom,
    })
}

/// Reports `value` with probability `p`, otherwise one of the other `k − 1`
/// indices uniformly.
pub fn krr_randomize<R: Rng + ?Sized>(value: u32, params: &KrrParams, rng: &mut R) -> Result<u32> {
    if value as usize >= params.k {
        return Err(Error::Parameter(format!(
            "value {value} outside k-RR domain of size {}",
            params.k
        )));
    }
    Ok(krr_draw(value, params, rng))
}

#[inline]
fn krr_draw<R: Rng + ?Sized>(value: u32, params: &KrrParams, rng: &mut R) -> u32 {
    if rng.random::<f64>() < params.p {
        value
    } else {
        // Uniform over [0, k-1) shifted past `value`: each alternative has
        // probability exactly (1 - p) / (k - 1) = q.
        let other = rng.random_range(0..(params.k - 1) as u32);
        if other >= value {
            other + 1
        } else {
            other
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "noLDP")]
    NoLdp,
    #[serde(rename = "sLDP")]
    Sldp,
    #[serde(rename = "combLDP")]
    CombLdp,
    #[serde(rename = "indLDP")]
    IndLdp,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::NoLdp,
        Setting::Sldp,
        Setting::CombLdp,
        Setting::IndLdp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::NoLdp => "noLDP",
            Setting::Sldp => "sLDP",
            Setting::CombLdp => "combLDP",
            Setting::IndLdp => "indLDP",
        }
    }

    /// Stable index used in seed derivation.
    pub fn index(self) -> u64 {
        match self {
            Setting::NoLdp => 0,
            Setting::Sldp => 1,
            Setting::CombLdp => 2,
            Setting::IndLdp => 3,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noldp" | "none" => Ok(Setting::NoLdp),
            "sldp" => Ok(Setting::Sldp),
            "combldp" | "comb" => Ok(Setting::CombLdp),
            "indldp" | "ind" => Ok(Setting::IndLdp),
            _ => Err(Error::Parameter(format!("unknown setting `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitPolicy {
    /// `ε_i = ε / d`.
    #[serde(rename = "uniform")]
    Uniform,
    /// `ε_i = ε · k_i / Σ_j k_j`.
    #[default]
    #[serde(rename = "k-based", alias = "k_based")]
    KBased,
}

impl fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitPolicy::Uniform => "uniform",
            SplitPolicy::KBased => "k-based",
        })
    }
}

impl FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(SplitPolicy::Uniform),
            "k-based" | "k_based" | "kbased" => Ok(SplitPolicy::KBased),
            _ => Err(Error::Parameter(format!("unknown split policy `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub setting: Setting,
    /// Ignored for `noLDP`.
    pub epsilon: f64,
    #[serde(default)]
    pub split_policy: SplitPolicy,
}

impl MechanismConfig {
    pub fn new(setting: Setting, epsilon: f64) -> Self {
        Self {
            setting,
            epsilon,
            split_policy: SplitPolicy::default(),
        }
    }

    pub fn with_split_policy(mut self, policy: SplitPolicy) -> Self {
        self.split_policy = policy;
        self
    }
}

/// Per-attribute budgets aligned with the schema's `sensitive_order`.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSplit(pub Vec<f64>);

impl BudgetSplit {
    pub fn budgets(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn split_budget(domains: &[usize], epsilon: f64, policy: SplitPolicy) -> Result<BudgetSplit> {
    if domains.is_empty() {
        return Err(Error::Parameter(
            "budget split needs at least one attribute".into(),
        ));
    }
    if let Some(&k) = domains.iter().find(|&&k| k < 2) {
        return Err(Error::Parameter(format!("domain size {k} < 2")));
    }
    if epsilon.is_nan() || epsilon <= 0.0 || epsilon.is_infinite() {
        return Err(Error::Parameter(format!(
            "privacy budget must be finite and > 0, got {epsilon}"
        )));
    }
    let budgets = match policy {
        SplitPolicy::Uniform => vec![epsilon / domains.len() as f64; domains.len()],
        SplitPolicy::KBased => {
            let total: usize = domains.iter().sum();
            domains
                .iter()
                .map(|&k| epsilon * k as f64 / total as f64)
                .collect()
        }
    };
    Ok(BudgetSplit(budgets))
}

/// Product of the domain sizes, or `None` on overflow.
pub fn joint_size(domains: &[usize]) -> Option<usize> {
    domains
        .iter()
        .try_fold(1usize, |acc, &k| acc.checked_mul(k))
}

/// Row-major joint index: the last attribute varies fastest.
pub fn cartesian_encode(values: &[u32], domains: &[usize]) -> Result<usize> {
    if values.len() != domains.len() {
        return Err(Error::Parameter(format!(
            "{} values for {} domains",
            values.len(),
            domains.len()
        )));
    }
    let mut joint = 0usize;
    for (i, (&v, &k)) in values.iter().zip(domains).enumerate() {
        if v as usize >= k {
            return Err(Error::Parameter(format!(
                "component {i} = {v} outside domain of size {k}"
            )));
        }
        joint = joint
            .checked_mul(k)
            .and_then(|j| j.checked_add(v as usize))
            .ok_or_else(|| Error::Parameter("joint index overflows".into()))?;
    }
    Ok(joint)
}

pub fn cartesian_decode(joint: usize, domains: &[usize]) -> Result<Vec<u32>> {
    let size =
        joint_size(domains).ok_or_else(|| Error::Parameter("joint domain overflows".into()))?;
    if joint >= size {
        return Err(Error::Parameter(format!(
            "joint index {joint} outside joint domain of size {size}"
        )));
    }
    let mut out = vec![0u32; domains.len()];
    let mut rest = joint;
    for (slot, &k) in out.iter_mut().zip(domains).rev() {
        *slot = (rest % k) as u32;
        rest /= k;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum Plan {
    Identity,
    Single {
        position: usize,
        params: KrrParams,
    },
    Combined {
        domains: Vec<usize>,
        params: KrrParams,
    },
    Independent {
        params: Vec<KrrParams>,
    },
}

/// A mechanism prepared for one schema: parameters are computed once and
/// reused for every record.
#[derive(Clone, Debug)]
pub struct Randomizer {
    domains: Vec<usize>,
    plan: Plan,
}

impl Randomizer {
    pub fn new(config: &MechanismConfig, schema: &Schema) -> Result<Self> {
        let domains = schema.sensitive_domains()?;
        if domains.is_empty() {
            return Err(Error::Schema("no sensitive attributes".into()));
        }
        let plan = match config.setting {
            Setting::NoLdp => Plan::Identity,
            Setting::Sldp => {
                let protected = &schema.attributes[schema.protected_index()?].name;
                let position = schema
                    .sensitive_order
                    .iter()
                    .position(|n| n == protected)
                    .ok_or_else(|| {
                        Error::Schema(format!(
                            "protected attribute `{protected}` is not sensitive"
                        ))
                    })?;
                Plan::Single {
                    position,
                    params: krr_params(domains[position], config.epsilon)?,
                }
            }
            Setting::CombLdp => {
                let k = joint_size(&domains)
                    .ok_or_else(|| Error::Parameter("joint domain overflows".into()))?;
                Plan::Combined {
                    domains: domains.clone(),
                    params: krr_params(k, config.epsilon)?,
                }
            }
            Setting::IndLdp => {
                let split = split_budget(&domains, config.epsilon, config.split_policy)?;
                let params = domains
                    .iter()
                    .zip(split.budgets())
                    .map(|(&k, &e)| krr_params(k, e))
                    .collect::<Result<_>>()?;
                Plan::Independent { params }
            }
        };
        Ok(Self { domains, plan })
    }

    /// Sensitive domain sizes in `sensitive_order`.
    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    /// The k-RR parameters applied, one entry per randomized component.
    pub fn params(&self) -> Vec<KrrParams> {
        match &self.plan {
            Plan::Identity => Vec::new(),
            Plan::Single { params, .. } | Plan::Combined { params, .. } => vec![*params],
            Plan::Independent { params } => params.clone(),
        }
    }

    pub fn randomize<R: Rng + ?Sized>(&self, values: &[u32], rng: &mut R) -> Result<Vec<u32>> {
        if values.len() != self.domains.len() {
            return Err(Error::Parameter(format!(
                "expected {} sensitive values, got {}",
                self.domains.len(),
                values.len()
            )));
        }
        for (i, (&v, &k)) in values.iter().zip(&self.domains).enumerate() {
            if v as usize >= k {
                return Err(Error::Parameter(format!(
                    "sensitive value {i} = {v} outside domain of size {k}"
                )));
            }
        }
        let mut out = values.to_vec();
        self.randomize_in_place(&mut out, rng);
        Ok(out)
    }

    /// Unchecked variant for hot loops; `values` must already be in range.
    pub(crate) fn randomize_in_place<R: Rng + ?Sized>(&self, values: &mut [u32], rng: &mut R) {
        match &self.plan {
            Plan::Identity => {}
            Plan::Single { position, params } => {
                values[*position] = krr_draw(values[*position], params, rng);
            }
            Plan::Combined { domains, params } => {
                let joint = cartesian_encode(values, domains).expect("values in range");
                let noisy = krr_draw(joint as u32, params, rng) as usize;
                let mut rest = noisy;
                for (slot, &k) in values.iter_mut().zip(domains).rev() {
                    *slot = (rest % k) as u32;
                    rest /= k;
                }
            }
            Plan::Independent { params } => {
                for (v, p) in values.iter_mut().zip(params) {
                    *v = krr_draw(*v, p, rng);
                }
            }
        }
    }

    /// Input domain of the channel: the protected attribute alone for
    /// `sLDP`, the joint sensitive domain otherwise.
    fn channel_domains(&self) -> Vec<usize> {
        match &self.plan {
            Plan::Single { position, .. } => vec![self.domains[*position]],
            _ => self.domains.clone(),
        }
    }
}

/// One-shot form of [`Randomizer::randomize`].
pub fn randomize_record<R: Rng + ?Sized>(
    values: &[u32],
    config: &MechanismConfig,
    schema: &Schema,
    rng: &mut R,
) -> Result<Vec<u32>> {
    Randomizer::new(config, schema)?.randomize(values, rng)
}

/// Row-stochastic matrix `T[a][z] = P(output z | input a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    domains: Vec<usize>,
    size: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Component domains of the row/column index, row-major.
    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn get(&self, input: usize, output: usize) -> f64 {
        self.data[input * self.size + output]
    }

    pub fn row(&self, input: usize) -> &[f64] {
        &self.data[input * self.size..(input + 1) * self.size]
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.size)
            .map(|r| (self.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_z max_{a,a'} T[a][z] / T[a'][z]`; infinite when some column mixes
    /// zero and non-zero entries.
    pub fn max_ratio(&self) -> f64 {
        let mut worst = 1.0f64;
        for z in 0..self.size {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for a in 0..self.size {
                let v = self.get(a, z);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi == 0.0 {
                continue;
            }
            if lo == 0.0 {
                return f64::INFINITY;
            }
            worst = worst.max(hi / lo);
        }
        worst
    }

    /// CSV with a header of output indices; first column is the input index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("input");
        for z in 0..self.size {
            out.push_str(&format!(",{z}"));
        }
        out.push('\n');
        for a in 0..self.size {
            out.push_str(&a.to_string());
            for v in self.row(a) {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn transition_matrix(
    config: &MechanismConfig,
    schema: &Schema,
    cap: usize,
) -> Result<TransitionMatrix> {
    let randomizer = Randomizer::new(config, schema)?;
    let domains = randomizer.channel_domains();
    let size = joint_size(&domains).unwrap_or(usize::MAX);
    if size > cap {
        return Err(Error::DomainTooLarge { size, cap });
    }
    let mut data = vec![0.0; size * size];
    match &randomizer.plan {
        Plan::Identity => {
            for a in 0..size {
                data[a * size + a] = 1.0;
            }
        }
        Plan::Single { params, .. } | Plan::Combined { params, .. } => {
            for a in 0..size {
                for z in 0..size {
                    data[a * size + z] = if a == z { params.p } else { params.q };
                }
            }
        }
        Plan::Independent { params } => {
            let tuples: Vec<Vec<u32>> = (0..size)
                .map(|j| cartesian_decode(j, &domains))
                .collect::<Result<_>>()?;
            for (a, ta) in tuples.iter().enumerate() {
                for (z, tz) in tuples.iter().enumerate() {
                    data[a * size + z] = ta
                        .iter()
                        .zip(tz)
                        .zip(params)
                        .map(|((x, y), p)| if x == y { p.p } else { p.q })
                        .product();
                }
            }
        }
    }
    Ok(TransitionMatrix {
        domains,
        size,
        data,
    })
}
