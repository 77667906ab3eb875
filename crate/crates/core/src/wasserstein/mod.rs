//! Wasserstein losses between probability histograms under a ground matrix.
//!
//! Four routes to the same quantity, with different speed/generality
//! trade-offs:
//!
//! * [`onehot_loss`]: exact closed form for one-hot targets, `O(N)`. The
//!   only feasible plan sends every prediction bin to the target bin, so the
//!   loss is the cost column weighted by the prediction.
//! * [`exact_lp_loss`]: transportation simplex, exact for any pair of
//!   histograms. Verification oracle, capped at [`LP_ORACLE_LIMIT`] bins.
//! * [`sinkhorn_loss`]: entropic approximation for soft targets,
//!   `O(N^2)` per iteration, converging to the LP value from above as the
//!   regularization shrinks.
//! * [`l1_loss`]: half the l1 distance; what the transport loss collapses
//!   to under the step ground metric.
//!
//! [`ce_loss`] and [`regression_baseline_loss`] are the baselines the
//! transport losses are compared against.

mod simplex;
mod sinkhorn;

pub use sinkhorn::{sinkhorn_loss, sinkhorn_solve, SinkhornParams, SinkhornSolution};

use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ground_metric::GroundMatrix;

/// Largest instance the exact LP oracle accepts. The oracle exists to verify
/// the fast paths, not to run in production loops.
pub const LP_ORACLE_LIMIT: usize = 64;

/// Floor applied to the target-class probability inside [`ce_loss`].
pub const CE_CLAMP_FLOOR: f64 = 1e-12;

/// Nonnegative vector normalized to unit mass on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityHistogram {
    values: Array1<f64>,
}

impl ProbabilityHistogram {
    /// Normalizes `values` to sum 1. Rejects empty, negative, non-finite,
    /// or zero-mass input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidHistogram("empty histogram".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidHistogram(format!(
                    "non-finite entry {v} at index {i}"
                )));
            }
            if v < 0.0 {
                return Err(Error::InvalidHistogram(format!(
                    "negative entry {v} at index {i}"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidHistogram("total mass is zero".into()));
        }
        let values = Array1::from_vec(values) / sum;
        Ok(Self { values })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            values: Array1::from_elem(n, 1.0 / n as f64),
        }
    }

    /// All mass on a single bin.
    pub fn dirac(n: usize, bin: usize) -> Result<Self> {
        if bin >= n {
            return Err(Error::ClassOutOfRange {
                index: bin,
                num_classes: n,
            });
        }
        let mut values = Array1::zeros(n);
        values[bin] = 1.0;
        Ok(Self { values })
    }

    /// Wraps values that are already normalized (e.g. a softmax output).
    /// Only checked with a debug assertion; use [`Self::new`] for untrusted
    /// input.
    pub(crate) fn from_normalized(values: Array1<f64>) -> Self {
        debug_assert!((values.sum() - 1.0).abs() < 1e-6);
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Index of the largest entry, ties broken toward the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.values.len() {
            if self.values[i] > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Mass flows between prediction bins (rows) and target bins (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    flows: Array2<f64>,
}

impl TransportPlan {
    pub(crate) fn from_flows(flows: Array2<f64>) -> Self {
        Self { flows }
    }

    pub fn n(&self) -> usize {
        self.flows.nrows()
    }

    pub fn flows(&self) -> &Array2<f64> {
        &self.flows
    }

    pub fn total_mass(&self) -> f64 {
        self.flows.sum()
    }

    /// Transport cost of this plan under `d`.
    pub fn cost_under(&self, d: &GroundMatrix) -> f64 {
        self.flows
            .indexed_iter()
            .map(|((i, j), &w)| w * d.cost(i, j))
            .sum()
    }

    /// Largest deviation of the plan's marginals from `(s, t)`.
    pub fn marginal_residual(&self, s: &ProbabilityHistogram, t: &ProbabilityHistogram) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.flows.rows().into_iter().enumerate() {
            worst = worst.max((row.sum() - s.get(i)).abs());
        }
        for (j, col) in self.flows.columns().into_iter().enumerate() {
            worst = worst.max((col.sum() - t.get(j)).abs());
        }
        worst
    }
}

/// Loss value plus solver diagnostics. `iterations` and `marginal_residual`
/// are populated only by the iterative solver; the plan is omitted from the
/// JSON form.
#[derive(Debug, Clone, Serialize)]
pub struct LossResult {
    pub loss: f64,
    #[serde(skip)]
    pub plan: Option<TransportPlan>,
    pub iterations: Option<usize>,
    pub marginal_residual: Option<f64>,
}

impl LossResult {
    fn closed_form(loss: f64) -> Self {
        Self {
            loss,
            plan: None,
            iterations: None,
            marginal_residual: None,
        }
    }

    fn exact(loss: f64, plan: TransportPlan) -> Self {
        Self {
            loss,
            plan: Some(plan),
            iterations: None,
            marginal_residual: None,
        }
    }
}

fn check_same_len(s: &ProbabilityHistogram, t: &ProbabilityHistogram) -> Result<usize> {
    if s.len() != t.len() {
        return Err(Error::DimensionMismatch(format!(
            "histograms of length {} and {}",
            s.len(),
            t.len()
        )));
    }
    Ok(s.len())
}

fn check_matrix(s: &ProbabilityHistogram, d: &GroundMatrix) -> Result<()> {
    if s.len() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "histogram of length {} against {}x{} ground matrix",
            s.len(),
            d.n(),
            d.n()
        )));
    }
    Ok(())
}

fn check_class(target_class: usize, n: usize) -> Result<()> {
    if target_class >= n {
        return Err(Error::ClassOutOfRange {
            index: target_class,
            num_classes: n,
        });
    }
    Ok(())
}

/// Shared by the public one-hot entry points and the trainer's hot loop:
/// the loss is the target-class cost column weighted by the prediction.
#[inline]
pub(crate) fn onehot_cost(s: ArrayView1<'_, f64>, target_class: usize, d: &GroundMatrix) -> f64 {
    s.iter()
        .enumerate()
        .map(|(i, &si)| si * d.cost(i, target_class))
        .sum()
}

/// Exact Wasserstein loss against the one-hot target at `target_class`:
/// `sum_i s_i * D[i][target]`. Runs in `O(N)` and allocates nothing
/// quadratic; use [`onehot_loss_with_plan`] when the plan itself is needed.
pub fn onehot_loss(
    s: &ProbabilityHistogram,
    target_class: usize,
    d: &GroundMatrix,
) -> Result<LossResult> {
    check_matrix(s, d)?;
    check_class(target_class, s.len())?;
    Ok(LossResult::closed_form(onehot_cost(
        s.values(),
        target_class,
        d,
    )))
}

/// One-hot loss together with the unique feasible plan, which routes every
/// prediction bin's mass to the target column.
pub fn onehot_loss_with_plan(
    s: &ProbabilityHistogram,
    target_class: usize,
    d: &GroundMatrix,
) -> Result<LossResult> {
    let mut result = onehot_loss(s, target_class, d)?;
    let n = s.len();
    let mut flows = Array2::zeros((n, n));
    for i in 0..n {
        flows[[i, target_class]] = s.get(i);
    }
    result.plan = Some(TransportPlan::from_flows(flows));
    Ok(result)
}

/// Gradient of the one-hot loss with respect to the prediction histogram
/// and with respect to the logits it was softmaxed from.
#[derive(Debug, Clone)]
pub struct OneHotGradient {
    /// `d loss / d s_i = D[i][target]`.
    pub wrt_probs: Array1<f64>,
    /// Pullback through the softmax Jacobian `J[i][k] = s_i (delta_ik - s_k)`:
    /// `g_k = s_k (D[k][target] - <D[., target], s>)`.
    pub wrt_logits: Array1<f64>,
}

/// Analytic gradient of [`onehot_loss`]. `s` must be a softmax output for
/// the logit gradient to be meaningful.
pub fn onehot_loss_grad(
    s: &ProbabilityHistogram,
    target_class: usize,
    d: &GroundMatrix,
) -> Result<OneHotGradient> {
    check_matrix(s, d)?;
    check_class(target_class, s.len())?;
    let n = s.len();
    let wrt_probs = Array1::from_shape_fn(n, |i| d.cost(i, target_class));
    let wrt_logits = logit_pullback(s.values(), wrt_probs.view());
    Ok(OneHotGradient {
        wrt_probs,
        wrt_logits,
    })
}

/// Maps a gradient w.r.t. softmax probabilities to a gradient w.r.t. the
/// underlying logits: `g_k = s_k (grad_k - <grad, s>)`. Bins with exactly
/// zero probability contribute zero even when their prob-gradient is
/// infinite.
pub(crate) fn logit_pullback(
    s: ArrayView1<'_, f64>,
    grad_probs: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let inner: f64 = s
        .iter()
        .zip(grad_probs.iter())
        .filter(|(&si, _)| si > 0.0)
        .map(|(&si, &gi)| si * gi)
        .sum();
    Array1::from_shape_fn(s.len(), |k| {
        let sk = s[k];
        if sk > 0.0 {
            sk * (grad_probs[k] - inner)
        } else {
            0.0
        }
    })
}

/// Half the l1 distance between two histograms: the transport loss under
/// the step ground metric.
pub fn l1_loss(s: &ProbabilityHistogram, t: &ProbabilityHistogram) -> Result<LossResult> {
    check_same_len(s, t)?;
    let loss = 0.5
        * s.values()
            .iter()
            .zip(t.values().iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok(LossResult::closed_form(loss))
}

/// Cross-entropy against a one-hot target: `-ln s[target]`, with the
/// probability clamped to `[1e-12, 1]`.
pub fn ce_loss(s: &ProbabilityHistogram, target_class: usize) -> Result<f64> {
    check_class(target_class, s.len())?;
    Ok(-s.get(target_class).clamp(CE_CLAMP_FLOOR, 1.0).ln())
}

/// Hard-decision baseline: the ground cost of the argmax class against the
/// target, ties broken toward the smallest index.
pub fn regression_baseline_loss(
    s: &ProbabilityHistogram,
    target_class: usize,
    d: &GroundMatrix,
) -> Result<f64> {
    check_matrix(s, d)?;
    check_class(target_class, s.len())?;
    Ok(d.cost(s.argmax(), target_class))
}

/// Exact Wasserstein loss between two histograms, solved by the
/// transportation simplex. Deterministic; intended as a verification oracle
/// and rejected above [`LP_ORACLE_LIMIT`] bins.
pub fn exact_lp_loss(
    s: &ProbabilityHistogram,
    t: &ProbabilityHistogram,
    d: &GroundMatrix,
) -> Result<LossResult> {
    let n = check_same_len(s, t)?;
    check_matrix(s, d)?;
    if n > LP_ORACLE_LIMIT {
        return Err(Error::OracleSizeExceeded {
            n,
            limit: LP_ORACLE_LIMIT,
        });
    }
    let flows = simplex::solve(s.values(), t.values(), d.entries())?;
    let plan = TransportPlan::from_flows(flows);
    let loss = plan.cost_under(d);
    Ok(LossResult::exact(loss, plan))
}
