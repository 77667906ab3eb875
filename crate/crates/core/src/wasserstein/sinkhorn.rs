//! Entropic-regularized transport via Sinkhorn-Knopp matrix scaling.
//!
//! The plain scaling form iterates `u = s ./ (K v)`, `v = t ./ (K' u)` on the
//! kernel `K = exp(-D / epsilon)`. When `epsilon` is small relative to the
//! costs the kernel underflows; the solver then switches to the log-domain
//! form, which iterates the dual potentials with log-sum-exp and is stable
//! for any positive `epsilon`. The reported loss is the transport cost of
//! the regularized plan (entropy excluded), so it approaches the exact LP
//! value from above as `epsilon` shrinks.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::ground_metric::GroundMatrix;

use super::{LossResult, ProbabilityHistogram, TransportPlan};

/// Knobs for the iterative solver. Defaults: `epsilon = 0.1`,
/// `max_iter = 1000`, `tol = 1e-6` on the max marginal residual.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

impl SinkhornParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sinkhorn epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sinkhorn tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "sinkhorn max_iter must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Full solver output. `converged` is false when `max_iter` ran out before
/// the marginal residual dropped below tolerance; the plan is still the best
/// iterate and the residual reports how far off it is.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    pub transport_cost: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    pub converged: bool,
    /// Dual potential on the source side; the envelope gradient of the loss
    /// with respect to the source histogram. `-inf` on zero-mass bins.
    pub source_potential: Array1<f64>,
    /// Whether log-domain stabilization was required.
    pub used_log_domain: bool,
}

/// Entropic transport loss as a [`LossResult`]; see [`sinkhorn_solve`].
///
/// ```
/// use wassl::wasserstein::{sinkhorn_loss, ProbabilityHistogram, SinkhornParams};
/// use wassl::GroundMatrix;
///
/// let d = GroundMatrix::zero_one(3);
/// let s = ProbabilityHistogram::new(vec![0.7, 0.2, 0.1])?;
/// let t = ProbabilityHistogram::new(vec![0.2, 0.3, 0.5])?;
/// let result = sinkhorn_loss(&s, &t, &d, &SinkhornParams::default())?;
/// assert!(result.loss > 0.0);
/// assert!(result.marginal_residual.unwrap() <= 1e-6);
/// # Ok::<(), wassl::Error>(())
/// ```
pub fn sinkhorn_loss(
    s: &ProbabilityHistogram,
    t: &ProbabilityHistogram,
    d: &GroundMatrix,
    params: &SinkhornParams,
) -> Result<LossResult> {
    let solution = sinkhorn_solve(s, t, d, params)?;
    Ok(LossResult {
        loss: solution.transport_cost,
        iterations: Some(solution.iterations),
        marginal_residual: Some(solution.marginal_residual),
        plan: Some(solution.plan),
    })
}

/// Runs Sinkhorn-Knopp scaling, falling back to the log-domain iteration
/// whenever the plain kernel would underflow.
pub fn sinkhorn_solve(
    s: &ProbabilityHistogram,
    t: &ProbabilityHistogram,
    d: &GroundMatrix,
    params: &SinkhornParams,
) -> Result<SinkhornSolution> {
    params.validate()?;
    let n = super::check_same_len(s, t)?;
    super::check_matrix(s, d)?;
    debug_assert_eq!(n, d.n());

    match solve_scaling(s, t, d, params) {
        Err(Error::KernelUnderflow { .. }) => solve_log_domain(s, t, d, params),
        other => other,
    }
}

/// Plain matrix-scaling iteration. Errors with [`Error::KernelUnderflow`]
/// when `exp(-max(D)/epsilon)` falls below the smallest normal f64, in which
/// case the caller must retry in the log domain.
pub(super) fn solve_scaling(
    s: &ProbabilityHistogram,
    t: &ProbabilityHistogram,
    d: &GroundMatrix,
    params: &SinkhornParams,
) -> Result<SinkhornSolution> {
    let n = s.len();
    let max_cost = d.max_entry();
    if -max_cost / params.epsilon < f64::MIN_POSITIVE.ln() {
        return Err(Error::KernelUnderflow {
            epsilon: params.epsilon,
            max_cost,
        });
    }
    let kernel = d.entries().mapv(|c| (-c / params.epsilon).exp());

    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(n);
    let mut kv = kernel.dot(&v);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for iter in 1..=params.max_iter {
        for i in 0..n {
            let si = s.get(i);
            u[i] = if si == 0.0 { 0.0 } else { si / kv[i] };
        }
        let ktu = kernel.t().dot(&u);
        for j in 0..n {
            let tj = t.get(j);
            v[j] = if tj == 0.0 { 0.0 } else { tj / ktu[j] };
        }

        kv = kernel.dot(&v);
        let mut worst = 0.0f64;
        for i in 0..n {
            worst = worst.max((u[i] * kv[i] - s.get(i)).abs());
        }
        for j in 0..n {
            worst = worst.max((v[j] * ktu[j] - t.get(j)).abs());
        }
        iterations = iter;
        residual = worst;
        if residual <= params.tol {
            break;
        }
    }

    let flows = Array2::from_shape_fn((n, n), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    let source_potential = u.mapv(|ui| {
        if ui == 0.0 {
            f64::NEG_INFINITY
        } else {
            params.epsilon * ui.ln()
        }
    });
    Ok(finish(
        flows,
        d,
        iterations,
        residual,
        params,
        source_potential,
        false,
    ))
}

/// Log-domain iteration on the dual potentials, stable for any epsilon.
pub(super) fn solve_log_domain(
    s: &ProbabilityHistogram,
    t: &ProbabilityHistogram,
    d: &GroundMatrix,
    params: &SinkhornParams,
) -> Result<SinkhornSolution> {
    let n = s.len();
    let eps = params.epsilon;
    let log_s: Vec<f64> = s.values().iter().map(|&x| safe_ln(x)).collect();
    let log_t: Vec<f64> = t.values().iter().map(|&x| safe_ln(x)).collect();

    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(n);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for iter in 1..=params.max_iter {
        for i in 0..n {
            f[i] = if log_s[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_s[i] - logsumexp(n, |j| (g[j] - d.cost(i, j)) / eps))
            };
        }
        for j in 0..n {
            g[j] = if log_t[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                eps * (log_t[j] - logsumexp(n, |i| (f[i] - d.cost(i, j)) / eps))
            };
        }

        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = (0..n)
                .map(|j| plan_entry(f[i], g[j], d.cost(i, j), eps))
                .sum();
            worst = worst.max((row - s.get(i)).abs());
        }
        for j in 0..n {
            let col: f64 = (0..n)
                .map(|i| plan_entry(f[i], g[j], d.cost(i, j), eps))
                .sum();
            worst = worst.max((col - t.get(j)).abs());
        }
        iterations = iter;
        residual = worst;
        if residual <= params.tol {
            break;
        }
    }

    let flows = Array2::from_shape_fn((n, n), |(i, j)| plan_entry(f[i], g[j], d.cost(i, j), eps));
    Ok(finish(flows, d, iterations, residual, params, f, true))
}

fn finish(
    flows: Array2<f64>,
    d: &GroundMatrix,
    iterations: usize,
    residual: f64,
    params: &SinkhornParams,
    source_potential: Array1<f64>,
    used_log_domain: bool,
) -> SinkhornSolution {
    let transport_cost = flows
        .indexed_iter()
        .map(|((i, j), &w)| w * d.cost(i, j))
        .sum();
    SinkhornSolution {
        plan: TransportPlan::from_flows(flows),
        transport_cost,
        iterations,
        marginal_residual: residual,
        converged: residual <= params.tol,
        source_potential,
        used_log_domain,
    }
}

#[inline]
fn plan_entry(fi: f64, gj: f64, cost: f64, eps: f64) -> f64 {
    if fi == f64::NEG_INFINITY || gj == f64::NEG_INFINITY {
        0.0
    } else {
        ((fi + gj - cost) / eps).exp()
    }
}

#[inline]
fn safe_ln(x: f64) -> f64 {
    if x <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

/// `ln(sum_k exp(x_k))` via the max-shift trick; `-inf` entries drop out.
fn logsumexp(len: usize, x: impl Fn(usize) -> f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for k in 0..len {
        max = max.max(x(k));
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = (0..len).map(|k| (x(k) - max).exp()).sum();
    max + sum.ln()
}
