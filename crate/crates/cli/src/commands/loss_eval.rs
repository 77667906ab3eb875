use serde::Serialize;

use wassl::labels::OneHotTarget;
use wassl::wasserstein::{
    ce_loss, exact_lp_loss, l1_loss, onehot_loss, sinkhorn_loss, LossResult, ProbabilityHistogram,
    SinkhornParams,
};
use wassl::{GroundMatrix, MetricFn};

use super::{load_matrix, parse_histogram, parse_metric, CliError, CliResult, Context};
use crate::LossEvalArgs;

enum Target {
    /// Class index plus the smoothing applied to it (0 = hard one-hot).
    OneHot {
        class: usize,
        smoothing: f64,
    },
    Soft(ProbabilityHistogram),
}

#[derive(Serialize)]
struct Entry {
    histogram: Vec<f64>,
    result: LossResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_gap: Option<f64>,
    /// Post-hoc root of the loss under the configured metric.
    #[serde(skip_serializing_if = "Option::is_none")]
    root_normalized: Option<f64>,
}

#[derive(Serialize)]
struct Output {
    loss: String,
    target: serde_json::Value,
    results: Vec<Entry>,
}

fn parse_target(args: &LossEvalArgs) -> CliResult<Target> {
    let (kind, rest) = args
        .target
        .split_once(':')
        .ok_or_else(|| CliError::input("target must be onehot:J or soft:p0,p1,..."))?;
    match kind {
        "onehot" => {
            let class: usize = rest
                .parse()
                .map_err(|_| CliError::input(format!("{rest:?} is not a class index")))?;
            Ok(Target::OneHot {
                class,
                smoothing: args.smooth.unwrap_or(0.0),
            })
        }
        "soft" => {
            if args.smooth.is_some() {
                return Err(CliError::input("--smooth only applies to onehot targets"));
            }
            Ok(Target::Soft(parse_histogram(rest)?))
        }
        other => Err(CliError::input(format!(
            "unknown target kind {other:?}; expected onehot or soft"
        ))),
    }
}

fn target_histogram(target: &Target, n: usize) -> CliResult<ProbabilityHistogram> {
    match target {
        Target::OneHot { class, smoothing } => {
            let onehot = OneHotTarget::new(n, *class)?;
            Ok(onehot.smooth(*smoothing)?.into_histogram())
        }
        Target::Soft(hist) => Ok(hist.clone()),
    }
}

pub fn run(_ctx: &Context, args: &LossEvalArgs) -> CliResult {
    let s = parse_histogram(&args.s)?;
    let mut histograms = vec![s];
    if let Some(second) = &args.s2 {
        histograms.push(parse_histogram(second)?);
    }
    let n = histograms[0].len();
    let target = parse_target(args)?;
    let t = target_histogram(&target, n)?;

    let metric = match &args.metric {
        Some(spec) => parse_metric(spec)?,
        None => MetricFn::Identity,
    };
    let matrix = match &args.matrix {
        Some(path) => Some(load_matrix(path, args.metric.as_deref())?.0),
        None => None,
    };
    let need_matrix = || -> CliResult<&GroundMatrix> {
        matrix
            .as_ref()
            .ok_or_else(|| CliError::input(format!("--loss {} needs --matrix", args.loss)))
    };

    let params = SinkhornParams {
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        tol: args.tol,
    };

    let mut results = Vec::new();
    for hist in &histograms {
        let result = match args.loss.as_str() {
            "wasserstein" => match &target {
                // Hard one-hot targets take the closed form; anything soft
                // goes through the exact LP.
                Target::OneHot { class, smoothing } if *smoothing == 0.0 => {
                    onehot_loss(hist, *class, need_matrix()?)?
                }
                _ => exact_lp_loss(hist, &t, need_matrix()?)?,
            },
            "sinkhorn" => sinkhorn_loss(hist, &t, need_matrix()?, &params)?,
            "l1" => l1_loss(hist, &t)?,
            "ce" => match &target {
                Target::OneHot { class, .. } => LossResult {
                    loss: ce_loss(hist, *class)?,
                    plan: None,
                    iterations: None,
                    marginal_residual: None,
                },
                Target::Soft(_) => {
                    return Err(CliError::input("ce needs a onehot target"));
                }
            },
            other => {
                return Err(CliError::input(format!(
                    "unknown loss {other:?}; expected wasserstein, ce, l1 or sinkhorn"
                )));
            }
        };

        let ce = match &target {
            Target::OneHot { class, .. } => Some(ce_loss(hist, *class)?),
            Target::Soft(_) => None,
        };

        let oracle_gap = if args.oracle {
            let oracle_matrix;
            let d = match args.loss.as_str() {
                "l1" => {
                    oracle_matrix = GroundMatrix::zero_one(n);
                    &oracle_matrix
                }
                "ce" => {
                    return Err(CliError::input("--oracle does not apply to ce"));
                }
                _ => need_matrix()?,
            };
            let exact = exact_lp_loss(hist, &t, d)?;
            Some((result.loss - exact.loss).abs())
        } else {
            None
        };

        let root_normalized = args
            .root_normalize
            .then(|| metric.root_normalize(result.loss));
        results.push(Entry {
            histogram: hist.values().to_vec(),
            result,
            ce,
            oracle_gap,
            root_normalized,
        });
    }

    let target_json = match &target {
        Target::OneHot { class, smoothing } => serde_json::json!({
            "kind": "onehot", "class": class, "smoothing": smoothing
        }),
        Target::Soft(hist) => serde_json::json!({
            "kind": "soft", "histogram": hist.values().to_vec()
        }),
    };
    let output = Output {
        loss: args.loss.clone(),
        target: target_json,
        results,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&output).expect("loss output serializes")
    );
    Ok(())
}
