//! Attribute catalog and columnar datasets.
//!
//! Every attribute is categorical and stored as a column of domain indices;
//! labels live only in the [`Schema`]. The outcome column holds `0`/`1`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    NonSensitive,
    Sensitive,
    /// The fairness attribute. Always part of the sensitive set.
    Protected,
    Outcome,
}

impl Role {
    pub fn is_sensitive(self) -> bool {
        matches!(self, Role::Sensitive | Role::Protected)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub role: Role,
    pub domain: Vec<String>,
}

impl AttributeSpec {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        role: Role,
        domain: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            role,
            domain: domain.into_iter().map(Into::into).collect(),
        }
    }

    /// Domain size `k`.
    pub fn k(&self) -> usize {
        self.domain.len()
    }
}

fn default_privileged() -> u32 {
    1
}

/// Attribute catalog.
///
/// Fields are public so that malformed schemas can be represented and
/// reported by [`validate`]; use [`Schema::checked`] when a well-formed one is
/// required.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<AttributeSpec>,
    /// Names of the sensitive attributes in the order used for joint
    /// encoding and budget splitting.
    pub sensitive_order: Vec<String>,
    /// Index of the privileged category of the protected attribute.
    #[serde(default = "default_privileged")]
    pub privileged_index: u32,
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpec>, sensitive_order: Vec<String>) -> Self {
        Self {
            attributes,
            sensitive_order,
            privileged_index: 1,
        }
    }

    pub fn with_privileged_index(mut self, index: u32) -> Self {
        self.privileged_index = index;
        self
    }

    /// Returns the schema if it has no structural violations.
    pub fn checked(self) -> Result<Self> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::Schema(join_violations(&violations)))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown attribute `{name}`")))
    }

    fn single_role(&self, role: Role) -> Result<usize> {
        let mut it = self
            .attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role == role);
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Ok(i),
            _ => Err(Error::Schema(format!(
                "expected exactly one {role:?} attribute"
            ))),
        }
    }

    pub fn protected_index(&self) -> Result<usize> {
        self.single_role(Role::Protected)
    }

    pub fn outcome_index(&self) -> Result<usize> {
        self.single_role(Role::Outcome)
    }

    /// Column indices of the sensitive attributes, in `sensitive_order`.
    pub fn sensitive_indices(&self) -> Result<Vec<usize>> {
        self.sensitive_order
            .iter()
            .map(|n| self.require(n))
            .collect()
    }

    /// Domain sizes of the sensitive attributes, in `sensitive_order`.
    pub fn sensitive_domains(&self) -> Result<Vec<usize>> {
        Ok(self
            .sensitive_indices()?
            .into_iter()
            .map(|i| self.attributes[i].k())
            .collect())
    }

    /// Column indices of every non-outcome attribute (the model inputs).
    pub fn feature_indices(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role != Role::Outcome)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn encode(&self, attribute: &str, label: &str) -> Result<u32> {
        let spec = &self.attributes[self.require(attribute)?];
        spec.domain
            .iter()
            .position(|l| l == label)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Data(format!("`{label}` is not in the domain of `{attribute}`")))
    }

    pub fn decode(&self, attribute: &str, index: u32) -> Result<&str> {
        let spec = &self.attributes[self.require(attribute)?];
        spec.domain
            .get(index as usize)
            .map(String::as_str)
            .ok_or_else(|| {
                Error::Data(format!(
                    "index {index} is outside the domain of `{attribute}`"
                ))
            })
    }

    /// Structural invariants that do not depend on data.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut names = HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                out.push(Violation::schema(
                    Some(&a.name),
                    Rule::DuplicateAttribute,
                    "attribute name appears twice",
                ));
            }
            let mut labels = HashSet::new();
            if a.domain.iter().any(|l| !labels.insert(l)) {
                out.push(Violation::schema(
                    Some(&a.name),
                    Rule::DuplicateLabel,
                    "domain labels are not unique",
                ));
            }
            let min = if a.role == Role::NonSensitive { 1 } else { 2 };
            if a.k() < min {
                out.push(Violation::schema(
                    Some(&a.name),
                    Rule::DomainTooSmall,
                    &format!("domain size {} < {min}", a.k()),
                ));
            }
        }
        for (role, rule) in [
            (Role::Protected, Rule::ProtectedCardinality),
            (Role::Outcome, Rule::OutcomeCardinality),
        ] {
            let count = self.attributes.iter().filter(|a| a.role == role).count();
            if count != 1 {
                out.push(Violation::schema(
                    None,
                    rule,
                    &format!("{count} {role:?} attributes, expected exactly 1"),
                ));
            }
        }
        for a in self.attributes.iter().filter(|a| a.role == Role::Outcome) {
            if a.k() != 2 {
                out.push(Violation::schema(
                    Some(&a.name),
                    Rule::OutcomeNotBinary,
                    "outcome domain must have size 2",
                ));
            }
        }
        if let Ok(p) = self.protected_index() {
            if self.privileged_index as usize >= self.attributes[p].k() {
                out.push(Violation::schema(
                    Some(&self.attributes[p].name),
                    Rule::PrivilegedIndex,
                    &format!("privileged index {} outside domain", self.privileged_index),
                ));
            }
        }

        let expected: HashSet<&str> = self
            .attributes
            .iter()
            .filter(|a| a.role.is_sensitive())
            .map(|a| a.name.as_str())
            .collect();
        let listed: Vec<&str> = self.sensitive_order.iter().map(String::as_str).collect();
        let listed_set: HashSet<&str> = listed.iter().copied().collect();
        if listed_set.len() != listed.len() || listed_set != expected {
            out.push(Violation::schema(
                None,
                Rule::SensitiveOrder,
                "sensitive_order is not a permutation of the sensitive and protected attributes",
            ));
        }
        out
    }
}

/// Which invariant a [`Violation`] breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateAttribute,
    DuplicateLabel,
    DomainTooSmall,
    ProtectedCardinality,
    OutcomeCardinality,
    OutcomeNotBinary,
    PrivilegedIndex,
    SensitiveOrder,
    ColumnCount,
    ColumnLength,
    OutOfDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub attribute: Option<String>,
    pub row: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

impl Violation {
    fn schema(attribute: Option<&str>, rule: Rule, message: &str) -> Self {
        Self {
            attribute: attribute.map(str::to_owned),
            row: None,
            rule,
            message: message.to_owned(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.rule)?;
        if let Some(a) = &self.attribute {
            write!(f, " [{a}")?;
            if let Some(r) = self.row {
                write!(f, ", row {r}")?;
            }
            write!(f, "]")?;
        }
        write!(f, ": {}", self.message)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Columnar table of domain indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    schema: Arc<Schema>,
    columns: Vec<Vec<u32>>,
}

impl Dataset {
    /// Builds a dataset without checking invariants. Pair with [`validate`].
    pub fn from_columns_unchecked(schema: Arc<Schema>, columns: Vec<Vec<u32>>) -> Self {
        Self { schema, columns }
    }

    pub fn new(schema: Arc<Schema>, columns: Vec<Vec<u32>>) -> Result<Self> {
        let ds = Self::from_columns_unchecked(schema, columns);
        let report = validate(&ds);
        if report.is_empty() {
            Ok(ds)
        } else {
            let shown = &report[..report.len().min(5)];
            Err(Error::Data(join_violations(shown)))
        }
    }

    /// Builds a dataset from rows of labels, one label per attribute.
    pub fn from_label_rows<R, S>(
        schema: Arc<Schema>,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<Self>
    where
        R: AsRef<[S]>,
        S: AsRef<str>,
    {
        let width = schema.attributes.len();
        let mut columns = vec![Vec::new(); width];
        for (r, row) in rows.into_iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::Data(format!(
                    "row {r} has {} cells, expected {width}",
                    row.len()
                )));
            }
            for (c, cell) in row.iter().enumerate() {
                columns[c].push(schema.encode(&schema.attributes[c].name, cell.as_ref())?);
            }
        }
        Self::new(schema, columns)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// Record count.
    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &[u32] {
        &self.columns[index]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[u32]> {
        Ok(&self.columns[self.schema.require(name)?])
    }

    pub fn outcome(&self) -> Result<&[u32]> {
        Ok(&self.columns[self.schema.outcome_index()?])
    }

    pub fn labels(&self, name: &str) -> Result<Vec<&str>> {
        let idx = self.schema.require(name)?;
        let spec = &self.schema.attributes[idx];
        self.columns[idx]
            .iter()
            .map(|&v| {
                spec.domain
                    .get(v as usize)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Data(format!("index {v} outside domain of `{name}`")))
            })
            .collect()
    }

    /// Row subset, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|col| rows.iter().map(|&r| col[r]).collect())
            .collect();
        Self {
            schema: Arc::clone(&self.schema),
            columns,
        }
    }

    /// Copy with the given columns replaced.
    pub fn with_columns(&self, replaced: impl IntoIterator<Item = (usize, Vec<u32>)>) -> Self {
        let mut columns = self.columns.clone();
        for (i, col) in replaced {
            columns[i] = col;
        }
        Self {
            schema: Arc::clone(&self.schema),
            columns,
        }
    }

    /// SHA-256 over attribute names and column contents, as lowercase hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (spec, col) in self.schema.attributes.iter().zip(&self.columns) {
            h.update(spec.name.as_bytes());
            h.update([0u8]);
            h.update((col.len() as u64).to_le_bytes());
            for v in col {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Checks every schema and data invariant. Never fails; an empty report
/// means the dataset is well formed.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let schema = dataset.schema();
    let mut out = schema.violations();
    if dataset.columns.len() != schema.attributes.len() {
        out.push(Violation::schema(
            None,
            Rule::ColumnCount,
            &format!(
                "{} columns for {} attributes",
                dataset.columns.len(),
                schema.attributes.len()
            ),
        ));
    }
    let n = dataset.n();
    for (spec, col) in schema.attributes.iter().zip(&dataset.columns) {
        if col.len() != n {
            out.push(Violation::schema(
                Some(&spec.name),
                Rule::ColumnLength,
                &format!("column has {} entries, expected {n}", col.len()),
            ));
        }
        let k = spec.k();
        for (row, &v) in col.iter().enumerate() {
            if v as usize >= k {
                out.push(Violation {
                    attribute: Some(spec.name.clone()),
                    row: Some(row),
                    rule: Rule::OutOfDomain,
                    message: format!("index {v} outside domain of size {k}"),
                });
            }
        }
    }
    out
}

/// Per-record group label: `1` for the privileged group, `0` otherwise.
pub fn project_groups(dataset: &Dataset) -> Result<Vec<u8>> {
    let schema = dataset.schema();
    let p = schema.protected_index()?;
    let spec = &schema.attributes[p];
    if spec.k() != 2 {
        return Err(Error::Schema(format!(
            "protected attribute `{}` has {} categories; only binary groups are supported",
            spec.name,
            spec.k()
        )));
    }
    let privileged = schema.privileged_index;
    Ok(dataset.columns[p]
        .iter()
        .map(|&v| u8::from(v == privileged))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_schema() -> Schema {
        Schema::new(
            vec![
                AttributeSpec::new("race", Role::Protected, ["b", "w"]),
                AttributeSpec::new("age", Role::Sensitive, ["young", "mid", "old"]),
                AttributeSpec::new("priors", Role::NonSensitive, ["0", "1+"]),
                AttributeSpec::new("y", Role::Outcome, ["0", "1"]),
            ],
            vec!["race".into(), "age".into()],
        )
    }

    fn toy() -> Dataset {
        Dataset::from_columns_unchecked(
            Arc::new(toy_schema()),
            vec![
                vec![1, 0, 1, 0],
                vec![0, 1, 2, 1],
                vec![0, 0, 1, 1],
                vec![1, 0, 1, 0],
            ],
        )
    }

    #[test]
    fn well_formed_toy_has_empty_report() {
        assert!(validate(&toy()).is_empty());
    }

    #[test]
    fn out_of_domain_cell_is_reported_once() {
        let ds = toy().with_columns([(1, vec![0, 5, 2, 1])]);
        let report = validate(&ds);
        assert_eq!(report.len(), 1);
        let v = &report[0];
        assert_eq!(v.rule, Rule::OutOfDomain);
        assert_eq!(v.attribute.as_deref(), Some("age"));
        assert_eq!(v.row, Some(1));
    }

    #[test]
    fn two_protected_attributes_is_one_violation() {
        let mut schema = toy_schema();
        schema.attributes[2].role = Role::Protected;
        schema.sensitive_order.push("priors".into());
        let ds = Dataset::from_columns_unchecked(Arc::new(schema), toy().columns.clone());
        let report = validate(&ds);
        assert_eq!(report.len(), 1, "{report:?}");
        assert_eq!(report[0].rule, Rule::ProtectedCardinality);
    }

    #[test]
    fn validate_is_total_on_ragged_columns() {
        let ds = Dataset::from_columns_unchecked(
            Arc::new(toy_schema()),
            vec![vec![0, 1], vec![9], vec![]],
        );
        let rules: Vec<Rule> = validate(&ds).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::ColumnCount));
        assert!(rules.contains(&Rule::ColumnLength));
        assert!(rules.contains(&Rule::OutOfDomain));
    }

    #[test]
    fn sensitive_order_must_be_permutation() {
        let mut schema = toy_schema();
        schema.sensitive_order = vec!["race".into()];
        assert!(schema
            .violations()
            .iter()
            .any(|v| v.rule == Rule::SensitiveOrder));
        schema.sensitive_order = vec!["race".into(), "age".into(), "race".into()];
        assert!(schema
            .violations()
            .iter()
            .any(|v| v.rule == Rule::SensitiveOrder));
    }

    #[test]
    fn groups_follow_privileged_index() {
        let schema = Arc::new(toy_schema());
        let cols = vec![vec![1, 0, 1], vec![0, 0, 0], vec![0, 0, 0], vec![0, 1, 0]];
        let ds = Dataset::new(Arc::clone(&schema), cols.clone()).unwrap();
        assert_eq!(project_groups(&ds).unwrap(), vec![1, 0, 1]);

        let flipped = Arc::new(toy_schema().with_privileged_index(0));
        let ds = Dataset::new(flipped, cols).unwrap();
        assert_eq!(project_groups(&ds).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn ternary_protected_attribute_is_rejected() {
        let mut schema = toy_schema();
        schema.attributes[0].domain.push("other".into());
        let ds = Dataset::from_columns_unchecked(Arc::new(schema), toy().columns.clone());
        assert!(matches!(project_groups(&ds), Err(Error::Schema(_))));
    }

    #[test]
    fn schema_toml_round_trip() {
        let schema = toy_schema().with_privileged_index(0);
        let text = schema.to_toml_string();
        assert_eq!(Schema::from_toml_str(&text).unwrap(), schema);
    }

    #[test]
    fn privileged_index_defaults_to_one() {
        let text = r#"
            sensitive_order = ["a"]
            [[attributes]]
            name = "a"
            role = "protected"
            domain = ["x", "y"]
            [[attributes]]
            name = "y"
            role = "outcome"
            domain = ["0", "1"]
        "#;
        let schema = Schema::from_toml_str(text).unwrap().checked().unwrap();
        assert_eq!(schema.privileged_index, 1);
    }

    #[test]
    fn digest_changes_with_content() {
        let a = toy();
        let b = a.with_columns([(2, vec![1, 0, 1, 1])]);
        assert_eq!(a.digest(), toy().digest());
        assert_ne!(a.digest(), b.digest());
    }

    proptest! {
        #[test]
        fn labels_round_trip(cells in prop::collection::vec((0usize..2, 0usize..3, 0usize..2, 0usize..2), 0..40)) {
            let schema = Arc::new(toy_schema());
            let rows: Vec<Vec<String>> = cells
                .iter()
                .map(|&(a, b, c, d)| {
                    [a, b, c, d]
                        .iter()
                        .zip(&schema.attributes)
                        .map(|(&i, spec)| spec.domain[i].clone())
                        .collect()
                })
                .collect();
            let ds = Dataset::from_label_rows(Arc::clone(&schema), &rows).unwrap();
            for (c, spec) in schema.attributes.iter().enumerate() {
                let back = ds.labels(&spec.name).unwrap();
                let orig: Vec<&str> = rows.iter().map(|r| r[c].as_str()).collect();
                prop_assert_eq!(back, orig);
            }
        }
    }
}
