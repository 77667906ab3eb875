//! Segmentation evaluation: confusion counts, IoU, group IoU, and the
//! severity-weighted error rate.
//!
//! Confusion matrices over disjoint pixel sets add element-wise, so large
//! evaluations can be partitioned and merged in any order.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ground_metric::{GroundMatrix, GroupId, ImportanceGrouping};
use crate::labels::SegmentationMap;

/// Pixel counts indexed `[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: Array2::zeros((num_classes, num_classes)),
        }
    }

    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[[truth, predicted]]
    }

    /// Total scored pixels.
    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.n();
        if truth >= n {
            return Err(Error::ClassOutOfRange {
                index: truth,
                num_classes: n,
            });
        }
        if predicted >= n {
            return Err(Error::ClassOutOfRange {
                index: predicted,
                num_classes: n,
            });
        }
        self.counts[[truth, predicted]] += 1;
        Ok(())
    }

    /// Accumulates per-pixel class indices (no ignore handling).
    pub fn from_indices(truths: &[usize], preds: &[usize], num_classes: usize) -> Result<Self> {
        if truths.len() != preds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} truths vs {} predictions",
                truths.len(),
                preds.len()
            )));
        }
        let mut conf = Self::new(num_classes);
        for (&t, &p) in truths.iter().zip(preds) {
            conf.record(t, p)?;
        }
        Ok(conf)
    }

    /// Accumulates two equally-sized maps; pixels whose truth carries the
    /// truth map's ignore marker are skipped.
    pub fn from_maps(
        truths: &SegmentationMap,
        preds: &SegmentationMap,
        num_classes: usize,
    ) -> Result<Self> {
        if truths.height() != preds.height() || truths.width() != preds.width() {
            return Err(Error::DimensionMismatch(format!(
                "truth map {}x{} vs prediction map {}x{}",
                truths.height(),
                truths.width(),
                preds.height(),
                preds.width()
            )));
        }
        let mut conf = Self::new(num_classes);
        for (&t, &p) in truths.labels().iter().zip(preds.labels()) {
            if t == truths.ignore_value() {
                continue;
            }
            conf.record(t as usize, p as usize)?;
        }
        Ok(conf)
    }

    /// Element-wise sum; merging is associative and commutative, so
    /// partitioned evaluations can combine in any order.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch(format!(
                "confusion matrices of size {} and {}",
                self.n(),
                other.n()
            )));
        }
        Ok(Self {
            counts: &self.counts + &other.counts,
        })
    }

    /// Fraction of scored pixels on the diagonal; `None` when nothing was
    /// scored.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let hits: u64 = (0..self.n()).map(|c| self.counts[[c, c]]).sum();
        Some(hits as f64 / total as f64)
    }
}

/// Per-class `TP / (TP + FP + FN)`. Classes never seen in either role have
/// an undefined IoU (`None`) and are excluded from means.
pub fn iou_per_class(conf: &ConfusionMatrix) -> Vec<Option<f64>> {
    let n = conf.n();
    (0..n)
        .map(|c| {
            let tp = conf.count(c, c);
            let fp: u64 = (0..n).filter(|&t| t != c).map(|t| conf.count(t, c)).sum();
            let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| conf.count(c, p)).sum();
            let denom = tp + fp + fn_;
            if denom == 0 {
                None
            } else {
                Some(tp as f64 / denom as f64)
            }
        })
        .collect()
}

/// Unweighted mean over defined per-class IoUs.
pub fn mean_iou(ious: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = ious.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Mean IoU within each importance group; a group whose classes all have
/// undefined IoU is itself undefined.
pub fn group_iou(
    ious: &[Option<f64>],
    grouping: &ImportanceGrouping,
) -> Result<BTreeMap<GroupId, Option<f64>>> {
    if ious.len() != grouping.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "{} ious for {} classes",
            ious.len(),
            grouping.num_classes()
        )));
    }
    let mut sums: BTreeMap<GroupId, (f64, usize)> = BTreeMap::new();
    for g in grouping.group_ids() {
        sums.insert(g, (0.0, 0));
    }
    for (class, iou) in ious.iter().enumerate() {
        if let Some(v) = iou {
            let entry = sums.get_mut(&grouping.group(class)).expect("group known");
            entry.0 += v;
            entry.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(g, (sum, count))| {
            let mean = if count == 0 {
                None
            } else {
                Some(sum / count as f64)
            };
            (g, mean)
        })
        .collect())
}

/// Average ground cost per scored pixel:
/// `sum_{t,p} counts[t][p] * D[p][t] / total`. Rows of `D` index the
/// prediction and columns the truth, matching the ground-matrix
/// orientation. Zero when nothing was scored.
pub fn severity_weighted_error(conf: &ConfusionMatrix, d: &GroundMatrix) -> Result<f64> {
    if conf.n() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "confusion over {} classes vs {}x{} ground matrix",
            conf.n(),
            d.n(),
            d.n()
        )));
    }
    let total = conf.total();
    if total == 0 {
        return Ok(0.0);
    }
    let mut cost = 0.0;
    for ((truth, pred), &count) in conf.counts().indexed_iter() {
        if count > 0 {
            cost += count as f64 * d.cost(pred, truth);
        }
    }
    Ok(cost / total as f64)
}

/// Full evaluation summary for one prediction/truth pairing.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub num_classes: usize,
    pub scored_pixels: u64,
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: Option<f64>,
    pub iou_per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
    /// Keyed by group id; empty when no grouping was supplied.
    pub group_iou: BTreeMap<GroupId, Option<f64>>,
    pub severity_error: f64,
}

impl EvalReport {
    /// Computes every summary statistic from a confusion matrix. Without a
    /// grouping the group breakdown is empty; without a ground matrix the
    /// severity error falls back to the 0/1 matrix, i.e. the plain error
    /// rate.
    pub fn compute(
        conf: &ConfusionMatrix,
        grouping: Option<&ImportanceGrouping>,
        severity_matrix: Option<&GroundMatrix>,
    ) -> Result<Self> {
        let ious = iou_per_class(conf);
        let miou = mean_iou(&ious);
        let group_iou = match grouping {
            Some(g) => group_iou(&ious, g)?,
            None => BTreeMap::new(),
        };
        let fallback;
        let d = match severity_matrix {
            Some(d) => d,
            None => {
                fallback = GroundMatrix::zero_one(conf.n());
                &fallback
            }
        };
        let severity_error = severity_weighted_error(conf, d)?;
        Ok(Self {
            num_classes: conf.n(),
            scored_pixels: conf.total(),
            confusion: conf
                .counts()
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            accuracy: conf.accuracy(),
            iou_per_class: ious,
            miou,
            group_iou,
            severity_error,
        })
    }

    /// Aligned-column table: one column per class under its group header,
    /// then mIoU and the severity error.
    pub fn to_table(
        &self,
        class_names: &[String],
        grouping: Option<&ImportanceGrouping>,
    ) -> String {
        let names: Vec<String> = if class_names.len() == self.num_classes {
            class_names.to_vec()
        } else {
            (0..self.num_classes).map(|c| format!("class{c}")).collect()
        };
        let mut order: Vec<usize> = (0..self.num_classes).collect();
        if let Some(g) = grouping {
            order.sort_by_key(|&c| (g.group(c), c));
        }

        let cell = |c: usize| -> String {
            match self.iou_per_class[c] {
                Some(v) => format!("{v:.3}"),
                None => "  -  ".into(),
            }
        };
        let width = |c: usize| names[c].len().max(cell(c).len()).max(5);

        let mut group_row = String::from("group ");
        let mut name_row = String::from("class ");
        let mut iou_row = String::from("iou   ");
        for &c in &order {
            let w = width(c);
            let group_label = grouping.map_or(String::new(), |g| format!("g{}", g.group(c)));
            group_row.push_str(&format!("{group_label:>w$} "));
            name_row.push_str(&format!("{:>w$} ", names[c]));
            iou_row.push_str(&format!("{:>w$} ", cell(c)));
        }

        let miou = match self.miou {
            Some(v) => format!("{v:.4}"),
            None => "-".into(),
        };
        let mut out = String::new();
        if grouping.is_some() {
            out.push_str(group_row.trim_end());
            out.push('\n');
        }
        out.push_str(name_row.trim_end());
        out.push('\n');
        out.push_str(iou_row.trim_end());
        out.push('\n');
        if !self.group_iou.is_empty() {
            let groups = self
                .group_iou
                .iter()
                .map(|(g, v)| match v {
                    Some(v) => format!("g{g}: {v:.4}"),
                    None => format!("g{g}: -"),
                })
                .collect::<Vec<_>>()
                .join("  ");
            out.push_str(&format!("group iou   {groups}\n"));
        }
        out.push_str(&format!(
            "miou {miou}  severity error {:.6}  scored pixels {}\n",
            self.severity_error, self.scored_pixels
        ));
        out
    }
}
