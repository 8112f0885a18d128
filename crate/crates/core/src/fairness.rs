//! Per-group confusion rates and signed group disparities.
//!
//! Disparities are `privileged − unprivileged`. A rate whose denominator is
//! zero is undefined (`None`), and so is every disparity built from it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn add(&mut self, truth: u32, pred: u32) {
        match (truth, pred) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, 0) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// A rate kept as an exact ratio of counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(Ratio { num, den })
    }

    fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self − other`, rounded once from the exact rational.
    fn minus(self, other: Ratio) -> f64 {
        let num = self.num as i128 * other.den as i128 - other.num as i128 * self.den as i128;
        let den = self.den as i128 * other.den as i128;
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    SelectionRate,
    Tpr,
    Fpr,
    Accuracy,
    Ppv,
}

impl Rate {
    pub const ALL: [Rate; 5] = [
        Rate::SelectionRate,
        Rate::Tpr,
        Rate::Fpr,
        Rate::Accuracy,
        Rate::Ppv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rate::SelectionRate => "selection_rate",
            Rate::Tpr => "tpr",
            Rate::Fpr => "fpr",
            Rate::Accuracy => "accuracy",
            Rate::Ppv => "ppv",
        }
    }
}

/// The five group-disparity metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    /// Statistical disparity: Δ P(Ŷ=1).
    SD,
    /// Equal opportunity disparity: Δ TPR.
    EOD,
    /// Predictive equality disparity: Δ FPR.
    PED,
    /// Overall accuracy disparity: Δ P(Ŷ=Y).
    OAD,
    /// Predictive rate disparity: Δ PPV.
    PRD,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::SD,
        Metric::EOD,
        Metric::PED,
        Metric::OAD,
        Metric::PRD,
    ];

    pub fn rate(self) -> Rate {
        match self {
            Metric::SD => Rate::SelectionRate,
            Metric::EOD => Rate::Tpr,
            Metric::PED => Rate::Fpr,
            Metric::OAD => Rate::Accuracy,
            Metric::PRD => Rate::Ppv,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SD => "SD",
            Metric::EOD => "EOD",
            Metric::PED => "PED",
            Metric::OAD => "OAD",
            Metric::PRD => "PRD",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown metric `{s}`")))
    }
}

/// Confusion-derived rates of one group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupRates {
    pub counts: Confusion,
}

impl GroupRates {
    pub fn new(counts: Confusion) -> Self {
        Self { counts }
    }

    pub fn n(&self) -> u64 {
        self.counts.n()
    }

    fn ratio(&self, rate: Rate) -> Option<Ratio> {
        let c = &self.counts;
        match rate {
            Rate::SelectionRate => Ratio::of(c.tp + c.fp, c.n()),
            Rate::Tpr => Ratio::of(c.tp, c.tp + c.fn_),
            Rate::Fpr => Ratio::of(c.fp, c.fp + c.tn),
            Rate::Accuracy => Ratio::of(c.tp + c.tn, c.n()),
            Rate::Ppv => Ratio::of(c.tp, c.tp + c.fp),
        }
    }

    /// `None` when the denominator is zero.
    pub fn get(&self, rate: Rate) -> Option<f64> {
        self.ratio(rate).map(Ratio::value)
    }

    pub fn selection_rate(&self) -> Option<f64> {
        self.get(Rate::SelectionRate)
    }

    pub fn tpr(&self) -> Option<f64> {
        self.get(Rate::Tpr)
    }

    pub fn fpr(&self) -> Option<f64> {
        self.get(Rate::Fpr)
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.get(Rate::Accuracy)
    }

    pub fn ppv(&self) -> Option<f64> {
        self.get(Rate::Ppv)
    }
}

/// Rates of the two groups defined by the protected attribute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GroupPair {
    pub privileged: GroupRates,
    pub unprivileged: GroupRates,
}

impl GroupPair {
    pub fn overall(&self) -> GroupRates {
        GroupRates::new(self.privileged.counts + self.unprivileged.counts)
    }
}

fn check_binary(name: &str, v: &[impl Copy + Into<u32>]) -> Result<()> {
    match v.iter().position(|&x| x.into() > 1) {
        Some(i) => Err(Error::Data(format!("{name}[{i}] is not binary"))),
        None => Ok(()),
    }
}

/// Counts the confusion table of each group; `groups[i] == 1` marks the
/// privileged group.
pub fn group_rates(y_true: &[u32], y_pred: &[u32], groups: &[u8]) -> Result<GroupPair> {
    if y_true.len() != y_pred.len() || y_true.len() != groups.len() {
        return Err(Error::Data(format!(
            "length mismatch: y_true {}, y_pred {}, groups {}",
            y_true.len(),
            y_pred.len(),
            groups.len()
        )));
    }
    check_binary("y_true", y_true)?;
    check_binary("y_pred", y_pred)?;
    check_binary("groups", groups)?;
    let mut pair = GroupPair::default();
    for ((&t, &p), &g) in y_true.iter().zip(y_pred).zip(groups) {
        let slot = if g == 1 {
            &mut pair.privileged
        } else {
            &mut pair.unprivileged
        };
        slot.counts.add(t, p);
    }
    Ok(pair)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DisparityReport {
    values: [Option<f64>; 5],
}

impl DisparityReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values[metric as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Metric, Option<f64>)> + '_ {
        Metric::ALL.into_iter().map(|m| (m, self.get(m)))
    }
}

pub fn disparity(privileged: &GroupRates, unprivileged: &GroupRates) -> Result<DisparityReport> {
    if privileged.n() == 0 || unprivileged.n() == 0 {
        return Err(Error::Data(
            "disparity needs both groups to be non-empty".into(),
        ));
    }
    let mut values = [None; 5];
    for m in Metric::ALL {
        values[m as usize] = match (privileged.ratio(m.rate()), unprivileged.ratio(m.rate())) {
            (Some(a), Some(b)) => Some(a.minus(b)),
            _ => None,
        };
    }
    Ok(DisparityReport { values })
}
