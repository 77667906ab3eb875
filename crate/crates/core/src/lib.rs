//! Severity-aware Wasserstein losses for discrete classification and
//! segmentation.
//!
//! Cross entropy scores a prediction only by the probability it puts on the
//! true class; it cannot tell a near-miss from a dangerous confusion. This
//! crate measures predictions as transport problems instead: a ground
//! matrix prices every class pair, and the loss is the cheapest way to move
//! the predicted probability mass onto the target distribution.
//!
//! * [`ground_metric`]: build severity matrices from importance groups,
//!   reshape them with monotone metric functions, load arbitrary ones from
//!   JSON.
//! * [`wasserstein`]: the losses: exact `O(N)` closed form for one-hot
//!   targets with analytic gradients, a Sinkhorn solver for soft targets,
//!   an exact-LP verification oracle, and the CE / l1 / regression
//!   baselines.
//! * [`labels`]: one-hot and conservative (smoothed) targets, plus
//!   segmentation label maps with ignore handling.
//! * [`trainer`]: a deterministic desk-scale harness: synthetic Gaussian
//!   pixel scenes, a linear softmax model, gradient descent under any of
//!   the losses, and finite-difference gradient checking.
//! * [`metrics`]: confusion matrices, per-class/group IoU, mIoU, and the
//!   severity-weighted error rate.
//!
//! ```
//! use std::collections::BTreeMap;
//! use wassl::{build_group_matrix, onehot_loss, ImportanceGrouping, ProbabilityHistogram};
//!
//! // Cars matter more than sky: any confusion touching them costs 4.
//! let grouping = ImportanceGrouping::new(
//!     vec!["sky".into(), "road".into(), "car".into()],
//!     vec![0, 1, 2],
//!     BTreeMap::from([(0, 1.0), (1, 2.0), (2, 4.0)]),
//! )?;
//! let costs = build_group_matrix(&grouping);
//!
//! // Truth is car; most of the predicted mass sits on road.
//! let prediction = ProbabilityHistogram::new(vec![0.1, 0.6, 0.3])?;
//! let loss = onehot_loss(&prediction, 2, &costs)?.loss;
//! assert!((loss - 2.8).abs() < 1e-12);
//! # Ok::<(), wassl::Error>(())
//! ```

pub mod error;
pub mod ground_metric;
pub mod labels;
pub mod metrics;
pub mod trainer;
pub mod wasserstein;

pub use error::{Error, Result};
pub use ground_metric::{
    apply_metric_fn, build_group_matrix, GroundMatrix, GroupId, ImportanceGrouping, MetricFn,
};
pub use labels::{OneHotTarget, SegmentationMap, SoftTarget};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use wasserstein::{
    ce_loss, exact_lp_loss, l1_loss, onehot_loss, onehot_loss_grad, onehot_loss_with_plan,
    regression_baseline_loss, sinkhorn_loss, sinkhorn_solve, LossResult, ProbabilityHistogram,
    SinkhornParams, TransportPlan,
};
