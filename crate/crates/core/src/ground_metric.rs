//! Ground-distance matrices encoding misclassification severity.
//!
//! A ground matrix `D` assigns every ordered class pair `(i, j)` the cost of
//! predicting class `i` when the truth is class `j` (rows index the
//! prediction bin, columns the target bin). The diagonal is zero and entries
//! are nonnegative; symmetry is not required. Matrices either come from an
//! [`ImportanceGrouping`] via [`build_group_matrix`] or are loaded verbatim
//! from a JSON file, so arbitrary severity structures can be supplied.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, MatrixViolation, Result, ViolationKind};

/// Identifier of an importance group. Larger ids carry no implicit meaning;
/// severity comes only from the group's weight.
pub type GroupId = u32;

/// Classes partitioned into importance groups, each group carrying a
/// nonnegative severity weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceGrouping {
    class_names: Vec<String>,
    group_of: Vec<GroupId>,
    weight_of: BTreeMap<GroupId, f64>,
}

impl ImportanceGrouping {
    /// Builds and validates a grouping. `group_of[c]` is the group of class
    /// `c`; every referenced group must have a finite weight `>= 0` and at
    /// least one weight must be positive.
    pub fn new(
        class_names: Vec<String>,
        group_of: Vec<GroupId>,
        weight_of: BTreeMap<GroupId, f64>,
    ) -> Result<Self> {
        let n = class_names.len();
        if n < 2 {
            return Err(Error::InvalidGrouping(format!(
                "need at least 2 classes, got {n}"
            )));
        }
        if group_of.len() != n {
            return Err(Error::InvalidGrouping(format!(
                "{} classes but {} group assignments",
                n,
                group_of.len()
            )));
        }
        let unweighted: Vec<usize> = (0..n)
            .filter(|&c| !weight_of.contains_key(&group_of[c]))
            .collect();
        if !unweighted.is_empty() {
            let list = unweighted
                .iter()
                .map(|&c| format!("{} (group {})", class_names[c], group_of[c]))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::InvalidGrouping(format!(
                "classes without a group weight: {list}"
            )));
        }
        for (&g, &w) in &weight_of {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidGrouping(format!(
                    "group {g} has invalid weight {w}"
                )));
            }
        }
        if !group_of.iter().any(|g| weight_of[g] > 0.0) {
            return Err(Error::InvalidGrouping(
                "all referenced group weights are zero".into(),
            ));
        }
        Ok(Self {
            class_names,
            group_of,
            weight_of,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn group(&self, class: usize) -> GroupId {
        self.group_of[class]
    }

    /// Severity weight of the group that `class` belongs to.
    pub fn weight(&self, class: usize) -> f64 {
        self.weight_of[&self.group_of[class]]
    }

    /// Distinct group ids in ascending order.
    pub fn group_ids(&self) -> Vec<GroupId> {
        let set: BTreeSet<GroupId> = self.group_of.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GroupingFile = serde_json::from_str(text)?;
        file.into_grouping()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let classes: Vec<GroupingFileClass> = self
            .class_names
            .iter()
            .zip(&self.group_of)
            .map(|(name, &group)| GroupingFileClass {
                name: name.clone(),
                group,
            })
            .collect();
        let weights: BTreeMap<String, f64> = self
            .weight_of
            .iter()
            .map(|(g, w)| (g.to_string(), *w))
            .collect();
        let file = GroupingFile {
            classes,
            weights: Some(weights),
        };
        serde_json::to_string_pretty(&file).expect("grouping serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct GroupingFileClass {
    name: String,
    group: GroupId,
}

#[derive(Serialize, Deserialize)]
struct GroupingFile {
    classes: Vec<GroupingFileClass>,
    /// Keys are group ids rendered as strings (JSON object keys). When the
    /// whole map is omitted, groups get rank weights 1, 2, ... in ascending
    /// group-id order.
    #[serde(default)]
    weights: Option<BTreeMap<String, f64>>,
}

impl GroupingFile {
    fn into_grouping(self) -> Result<ImportanceGrouping> {
        let mut names = Vec::with_capacity(self.classes.len());
        let mut groups = Vec::with_capacity(self.classes.len());
        for c in self.classes {
            names.push(c.name);
            groups.push(c.group);
        }
        let weights = match self.weights {
            Some(map) if !map.is_empty() => {
                let mut parsed = BTreeMap::new();
                for (key, w) in map {
                    let g: GroupId = key.parse().map_err(|_| {
                        Error::InvalidGrouping(format!("weight key {key:?} is not a group id"))
                    })?;
                    parsed.insert(g, w);
                }
                parsed
            }
            _ => default_group_weights(&groups),
        };
        ImportanceGrouping::new(names, groups, weights)
    }
}

/// Rank weights for the groups referenced by `group_of`: the smallest group
/// id gets weight 1, the next 2, and so on. This realizes the default
/// (1, 2, 3, 4) scheme for a four-group split.
pub fn default_group_weights(group_of: &[GroupId]) -> BTreeMap<GroupId, f64> {
    let set: BTreeSet<GroupId> = group_of.iter().copied().collect();
    set.into_iter()
        .enumerate()
        .map(|(rank, g)| (g, (rank + 1) as f64))
        .collect()
}

/// N x N cost matrix with zero diagonal and nonnegative entries.
/// `cost(i, j)` is the price of predicting class `i` when the truth is `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMatrix {
    entries: Array2<f64>,
}

impl GroundMatrix {
    /// Validates and wraps raw entries. All invariant violations are
    /// reported at once via [`Error::InvalidMatrix`].
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "ground matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let violations = validate_entries(&entries);
        if violations.is_empty() {
            Ok(Self { entries })
        } else {
            Err(Error::InvalidMatrix(violations))
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let entries = Array2::from_shape_vec((n, n), flat)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(entries)
    }

    /// The 0/1 matrix: unit cost for every misclassification. This is the
    /// importance-ignored special case.
    pub fn zero_one(n: usize) -> Self {
        let entries = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 });
        Self { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Cost of predicting class `predicted` when the truth is `truth`.
    #[inline]
    pub fn cost(&self, predicted: usize, truth: usize) -> f64 {
        self.entries[[predicted, truth]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry; `None` for a 1x1 matrix.
    pub fn min_off_diagonal(&self) -> Option<f64> {
        self.entries
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, &v)| v)
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.min(v))))
    }

    pub fn max_off_diagonal(&self) -> Option<f64> {
        self.entries
            .indexed_iter()
            .filter(|((i, j), _)| i != j)
            .map(|(_, &v)| v)
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.max(v))))
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (i + 1..n).all(|j| self.entries[[i, j]] == self.entries[[j, i]]))
    }

    /// Parses the matrix file format
    /// `{ "n": int, "class_names": [string], "entries": [[real]] }` and
    /// enforces the matrix invariants. Returns the matrix and the class
    /// names carried by the file.
    pub fn from_json_str(text: &str) -> Result<(Self, Vec<String>)> {
        let file: MatrixFile = serde_json::from_str(text)?;
        if file.entries.len() != file.n {
            return Err(Error::DimensionMismatch(format!(
                "matrix file declares n={} but has {} rows",
                file.n,
                file.entries.len()
            )));
        }
        if file.class_names.len() != file.n {
            return Err(Error::DimensionMismatch(format!(
                "matrix file declares n={} but names {} classes",
                file.n,
                file.class_names.len()
            )));
        }
        let matrix = Self::from_rows(file.entries)?;
        Ok((matrix, file.class_names))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<(Self, Vec<String>)> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self, class_names: &[String]) -> Result<String> {
        if class_names.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} class names for a {}x{} matrix",
                class_names.len(),
                self.n(),
                self.n()
            )));
        }
        let file = MatrixFile {
            n: self.n(),
            class_names: class_names.to_vec(),
            entries: self
                .entries
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        std::fs::write(path, self.to_json_string(class_names)?)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    n: usize,
    class_names: Vec<String>,
    entries: Vec<Vec<f64>>,
}

/// Checks raw entries against the ground-matrix invariants and reports every
/// violated cell. An empty result means the entries are valid.
pub fn validate_entries(entries: &Array2<f64>) -> Vec<MatrixViolation> {
    let mut violations = Vec::new();
    for ((i, j), &v) in entries.indexed_iter() {
        if !v.is_finite() {
            violations.push(MatrixViolation {
                row: i,
                col: j,
                value: v,
                kind: ViolationKind::NonFinite,
            });
        } else if i == j && v != 0.0 {
            violations.push(MatrixViolation {
                row: i,
                col: j,
                value: v,
                kind: ViolationKind::NonzeroDiagonal,
            });
        } else if v < 0.0 {
            violations.push(MatrixViolation {
                row: i,
                col: j,
                value: v,
                kind: ViolationKind::Negative,
            });
        }
    }
    violations
}

/// Builds the group severity matrix: `D[i][j] = 0` on the diagonal and the
/// larger of the two class weights off it, so a mistake touching an
/// important class in either direction pays that class's price.
pub fn build_group_matrix(grouping: &ImportanceGrouping) -> GroundMatrix {
    let n = grouping.num_classes();
    let entries = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            grouping.weight(i).max(grouping.weight(j))
        }
    });
    GroundMatrix { entries }
}

/// Monotone nondecreasing mapping applied element-wise to ground distances.
/// Every variant satisfies `f(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMetricFn", into = "RawMetricFn")]
pub enum MetricFn {
    /// `f(d) = d`.
    Identity,
    /// `f(d) = d^rho`, `rho >= 1`.
    Power { rho: f64 },
    /// `f(d) = d^2` for `d <= tau`, else `tau * (2d - tau)`.
    Huber { tau: f64 },
    /// `f(d) = 0` at zero, else 1. Collapses the transport loss to half the
    /// l1 distance between histograms.
    Step,
}

impl MetricFn {
    pub fn power(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "power exponent must be >= 1, got {rho}"
            )));
        }
        Ok(Self::Power { rho })
    }

    pub fn huber(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "huber threshold must be > 0, got {tau}"
            )));
        }
        Ok(Self::Huber { tau })
    }

    /// Evaluates the mapping at a nonnegative distance.
    pub fn eval(&self, d: f64) -> f64 {
        debug_assert!(d >= 0.0);
        match *self {
            Self::Identity => d,
            // rho == 1 must be the bit-exact identity.
            Self::Power { rho } => {
                if rho == 1.0 {
                    d
                } else {
                    d.powf(rho)
                }
            }
            Self::Huber { tau } => {
                if d <= tau {
                    d * d
                } else {
                    tau * (2.0 * d - tau)
                }
            }
            Self::Step => {
                if d == 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Post-hoc rho-th root used only when a reported value should behave
    /// like a distance. Never applied inside a loss. Only the power variant
    /// has a natural root; everything else is returned unchanged.
    pub fn root_normalize(&self, value: f64) -> f64 {
        match *self {
            Self::Power { rho } if rho != 1.0 => value.powf(1.0 / rho),
            _ => value,
        }
    }
}

/// Unvalidated serde image of [`MetricFn`].
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawMetricFn {
    Identity,
    Power { rho: f64 },
    Huber { tau: f64 },
    Step,
}

impl TryFrom<RawMetricFn> for MetricFn {
    type Error = Error;

    fn try_from(raw: RawMetricFn) -> Result<Self> {
        match raw {
            RawMetricFn::Identity => Ok(MetricFn::Identity),
            RawMetricFn::Power { rho } => MetricFn::power(rho),
            RawMetricFn::Huber { tau } => MetricFn::huber(tau),
            RawMetricFn::Step => Ok(MetricFn::Step),
        }
    }
}

impl From<MetricFn> for RawMetricFn {
    fn from(f: MetricFn) -> Self {
        match f {
            MetricFn::Identity => RawMetricFn::Identity,
            MetricFn::Power { rho } => RawMetricFn::Power { rho },
            MetricFn::Huber { tau } => RawMetricFn::Huber { tau },
            MetricFn::Step => RawMetricFn::Step,
        }
    }
}

/// Applies `f` element-wise. `f(0) = 0` keeps the diagonal zero, so the
/// result is again a valid ground matrix.
pub fn apply_metric_fn(d: &GroundMatrix, f: MetricFn) -> GroundMatrix {
    GroundMatrix {
        entries: d.entries.mapv(|v| f.eval(v)),
    }
}
