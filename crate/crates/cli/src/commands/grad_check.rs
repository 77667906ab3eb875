use serde::Serialize;

use wassl::trainer::{
    generate_scene, grad_check, LossSpec, SoftmaxModel, SplitSizes, SyntheticSceneConfig,
};
use wassl::GroundMatrix;

use super::{load_matrix, CliError, CliResult, Context};
use crate::GradCheckArgs;

#[derive(Serialize)]
struct Output {
    loss: String,
    step: f64,
    max_relative_error: f64,
    max_absolute_error: f64,
    pass: bool,
}

pub fn run(ctx: &Context, args: &GradCheckArgs) -> CliResult {
    if args.classes < 2 {
        return Err(CliError::input("need at least 2 classes"));
    }
    if args.feature_dim == 0 || args.pixels == 0 {
        return Err(CliError::input("feature_dim and pixels must be positive"));
    }
    let seed = ctx.seed.unwrap_or(0);

    let matrix = match &args.matrix {
        Some(path) => load_matrix(path, args.metric.as_deref())?.0,
        None => GroundMatrix::zero_one(args.classes),
    };
    let spec = match args.loss.as_str() {
        "ce" => LossSpec::CrossEntropy,
        "l1" => LossSpec::L1,
        "wasserstein" => LossSpec::Wasserstein { matrix },
        "sinkhorn" => {
            return Err(CliError::input(
                "the sinkhorn training gradient is an envelope approximation and not grad-checkable",
            ));
        }
        other => {
            return Err(CliError::input(format!(
                "unknown loss {other:?}; expected ce, wasserstein or l1"
            )));
        }
    };

    // A small deterministic scene is all the check needs; class c's mean is
    // the c-th coordinate axis so the means stay pairwise distinct.
    let scene = generate_scene(&SyntheticSceneConfig {
        num_classes: args.classes,
        feature_dim: args.feature_dim,
        class_means: (0..args.classes)
            .map(|c| {
                (0..args.feature_dim)
                    .map(|j| {
                        if j == c % args.feature_dim {
                            1.0 + c as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect(),
        noise_scale: 1.0,
        frequencies: vec![1.0 / args.classes as f64; args.classes],
        pixels: SplitSizes {
            train: args.pixels,
            val: 1,
            test: 1,
        },
        seed,
    })?;

    let model = SoftmaxModel::init(args.classes, args.feature_dim, seed);
    let report = grad_check(&model, &scene.train, &spec, args.step)?;
    let pass = report.passes(args.rel_tol, args.abs_tol);
    let output = Output {
        loss: args.loss.clone(),
        step: args.step,
        max_relative_error: report.max_relative_error,
        max_absolute_error: report.max_absolute_error,
        pass,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&output).expect("grad check output serializes")
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::numerical(format!(
            "gradient check failed: relative {} (tol {}), absolute {} (tol {})",
            report.max_relative_error, args.rel_tol, report.max_absolute_error, args.abs_tol
        )))
    }
}
