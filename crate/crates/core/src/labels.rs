//! Targets and segmentation label maps.
//!
//! A hard target is a single class index; a conservative target spreads some
//! of that mass over the other classes, which is the shape pseudo-labels
//! take in self-training pipelines and the input the Sinkhorn path exists
//! for. Segmentation maps carry per-pixel labels plus an ignore marker for
//! unscored pixels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wasserstein::ProbabilityHistogram;

/// Ignore marker assumed by the headerless CSV fixture format.
pub const DEFAULT_IGNORE_VALUE: u32 = 255;

/// Hard target: all probability on one of `n >= 2` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotTarget {
    n: usize,
    class: usize,
}

impl OneHotTarget {
    pub fn new(n: usize, class: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "one-hot target needs at least 2 classes, got {n}"
            )));
        }
        if class >= n {
            return Err(Error::ClassOutOfRange {
                index: class,
                num_classes: n,
            });
        }
        Ok(Self { n, class })
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn class_index(&self) -> usize {
        self.class
    }

    /// Dirac histogram at the target class.
    pub fn to_histogram(&self) -> ProbabilityHistogram {
        ProbabilityHistogram::dirac(self.n, self.class).expect("class validated on construction")
    }

    /// Uniform-mixture conservative target:
    /// `t_j = (1 - alpha) * delta_{j, class} + alpha / n` for `alpha` in
    /// `[0, 1)`. `alpha = 0` reproduces the one-hot target exactly.
    pub fn smooth(&self, alpha: f64) -> Result<SoftTarget> {
        if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "smoothing alpha must be in [0, 1), got {alpha}"
            )));
        }
        let base = alpha / self.n as f64;
        let values: Vec<f64> = (0..self.n)
            .map(|j| {
                if j == self.class {
                    1.0 - alpha + base
                } else {
                    base
                }
            })
            .collect();
        Ok(SoftTarget {
            histogram: ProbabilityHistogram::new(values)?,
        })
    }
}

/// Non-one-hot target distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTarget {
    histogram: ProbabilityHistogram,
}

impl SoftTarget {
    pub fn new(histogram: ProbabilityHistogram) -> Self {
        Self { histogram }
    }

    pub fn histogram(&self) -> &ProbabilityHistogram {
        &self.histogram
    }

    pub fn into_histogram(self) -> ProbabilityHistogram {
        self.histogram
    }

    /// Shannon entropy in nats; zero exactly for a one-hot target.
    pub fn entropy(&self) -> f64 {
        -self
            .histogram
            .values()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

/// Rectangular grid of per-pixel class labels with an ignore marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    ignore_value: u32,
    labels: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct SegmentationMapFile {
    height: usize,
    width: usize,
    ignore_value: u32,
    labels: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, ignore_value: u32, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "segmentation map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            ignore_value,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ignore_value(&self) -> u32 {
        self.ignore_value
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn is_ignored(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == self.ignore_value
    }

    /// Errors if any non-ignored label is `>= num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        for (idx, &label) in self.labels.iter().enumerate() {
            if label != self.ignore_value && label as usize >= num_classes {
                return Err(Error::ClassOutOfRange {
                    index: label as usize,
                    num_classes,
                });
            }
            let _ = idx;
        }
        Ok(())
    }

    /// JSON form: `{ "height": int, "width": int, "ignore_value": int,
    /// "labels": [int] }`, labels row-major.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SegmentationMapFile = serde_json::from_str(text)?;
        Self::new(file.height, file.width, file.ignore_value, file.labels)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = SegmentationMapFile {
            height: self.height,
            width: self.width,
            ignore_value: self.ignore_value,
            labels: self.labels.clone(),
        };
        serde_json::to_string_pretty(&file).expect("map serialization cannot fail")
    }

    /// Headerless CSV grid for hand-authored fixtures; the ignore marker is
    /// fixed at [`DEFAULT_IGNORE_VALUE`].
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<u32>> = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim().parse::<u32>().map_err(|_| {
                        Error::InvalidParameter(format!(
                            "line {}: {:?} is not a label",
                            line_no + 1,
                            cell.trim()
                        ))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            rows.push(row);
        }
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::DimensionMismatch(
                "csv rows have unequal widths".into(),
            ));
        }
        Self::new(
            height,
            width,
            DEFAULT_IGNORE_VALUE,
            rows.into_iter().flatten().collect(),
        )
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}
