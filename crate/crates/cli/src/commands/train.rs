use std::path::Path;

use serde::Serialize;

use wassl::metrics::EvalReport;
use wassl::trainer::{
    evaluate, train, LossSpec, LossSpecFile, SoftmaxModel, TrainConfigFile, TrainOutcome,
};
use wassl::GroundMatrix;

use super::{timestamp, write_out, CliError, CliResult, Context};
use crate::TrainArgs;

/// Report files carry exactly one non-deterministic key, up front.
#[derive(Serialize)]
struct TimedReport<'a> {
    generated_at: String,
    #[serde(flatten)]
    report: &'a EvalReport,
}

#[derive(Serialize)]
struct SeveritySummary {
    generated_at: String,
    baseline: &'static str,
    comparison: String,
    seeds: Vec<u64>,
    baseline_severity_error: Vec<f64>,
    comparison_severity_error: Vec<f64>,
    wins: usize,
    total: usize,
}

pub fn run(ctx: &Context, args: &TrainArgs) -> CliResult {
    let mut file = TrainConfigFile::from_json_file(&args.config)?;
    let base = args
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    if let Some(seed) = ctx.seed {
        file.seed = seed;
        if let Some(scene) = &mut file.scene {
            scene.seed = seed;
        }
    }
    match &args.seeds {
        None => single_run(ctx, &file, &base, args.warm_start.as_deref()),
        Some(spec) => seed_sweep(ctx, &file, &base, &parse_seeds(spec)?),
    }
}

fn single_run(
    ctx: &Context,
    file: &TrainConfigFile,
    base: &Path,
    warm_start: Option<&Path>,
) -> CliResult {
    let config = file.resolve(base)?;
    let data = file.load_data(base)?;
    let model = match warm_start {
        Some(path) => SoftmaxModel::from_json_file(path)?,
        None => SoftmaxModel::init(data.num_classes, data.feature_dim(), config.seed),
    };

    let TrainOutcome { model, stats } = train(model, &data.train, &data.val, &config)?;

    let model_path = write_out(ctx, Path::new("model.json"), &model.to_json_string())?;
    let mut lines = String::new();
    for row in &stats {
        lines.push_str(&serde_json::to_string(row).expect("stats serialize"));
        lines.push('\n');
    }
    let stats_path = write_out(ctx, Path::new("train_stats.jsonl"), &lines)?;

    let report = evaluate(
        &model,
        &data.test,
        data.num_classes,
        None,
        config.eval_matrix.as_ref().or(config.loss.matrix()),
    )?;
    let report_text = serde_json::to_string_pretty(&TimedReport {
        generated_at: timestamp(),
        report: &report,
    })
    .expect("report serializes");
    let report_path = write_out(ctx, Path::new("eval_report.json"), &report_text)?;

    let last = stats.last().expect("at least one epoch");
    ctx.say(&format!(
        "trained {} for {} epochs: train loss {:.6}, val loss {:.6}, test severity error {:.6}",
        config.loss.name(),
        stats.len(),
        last.train_loss,
        last.val_loss,
        report.severity_error
    ));
    ctx.say(&format!(
        "wrote {}, {}, {}",
        model_path.display(),
        stats_path.display(),
        report_path.display()
    ));
    Ok(())
}

/// Per seed: train the CE baseline, then the configured loss warm-started
/// from it (the plug-and-play fine-tuning protocol), and compare
/// severity-weighted errors on the test split.
fn seed_sweep(ctx: &Context, file: &TrainConfigFile, base: &Path, seeds: &[u64]) -> CliResult {
    if file.scene.is_none() {
        return Err(CliError::input(
            "--seeds needs an inline scene config so each seed draws fresh data",
        ));
    }
    if matches!(file.loss, LossSpecFile::Ce) {
        return Err(CliError::input(
            "--seeds compares the configured loss against ce; configure a non-ce loss",
        ));
    }

    let mut baseline_errors = Vec::new();
    let mut comparison_errors = Vec::new();
    let mut comparison_name = String::new();
    for &seed in seeds {
        let mut per_seed = file.clone();
        per_seed.seed = seed;
        per_seed.scene.as_mut().expect("checked above").seed = seed;

        let mut config = per_seed.resolve(base)?;
        let data = per_seed.load_data(base)?;
        comparison_name = config.loss.name().to_string();

        let eval_matrix: Option<GroundMatrix> = config
            .eval_matrix
            .clone()
            .or_else(|| config.loss.matrix().cloned());

        let comparison_loss = std::mem::replace(&mut config.loss, LossSpec::CrossEntropy);
        let ce_outcome = train(
            SoftmaxModel::init(data.num_classes, data.feature_dim(), seed),
            &data.train,
            &data.val,
            &config,
        )?;

        config.loss = comparison_loss;
        config.epochs = (config.epochs / 2).max(1);
        let tuned_outcome = train(ce_outcome.model.clone(), &data.train, &data.val, &config)?;

        let severity_of = |model: &SoftmaxModel| -> CliResult<f64> {
            Ok(evaluate(
                model,
                &data.test,
                data.num_classes,
                None,
                eval_matrix.as_ref(),
            )?
            .severity_error)
        };
        let ce_error = severity_of(&ce_outcome.model)?;
        let cmp_error = severity_of(&tuned_outcome.model)?;
        ctx.say(&format!(
            "seed {seed}: ce severity {ce_error:.6}, {comparison_name} severity {cmp_error:.6}"
        ));
        baseline_errors.push(ce_error);
        comparison_errors.push(cmp_error);
    }

    let wins = baseline_errors
        .iter()
        .zip(&comparison_errors)
        .filter(|(ce, cmp)| cmp <= ce)
        .count();
    let summary = SeveritySummary {
        generated_at: timestamp(),
        baseline: "ce",
        comparison: comparison_name,
        seeds: seeds.to_vec(),
        baseline_severity_error: baseline_errors,
        comparison_severity_error: comparison_errors,
        wins,
        total: seeds.len(),
    };
    let path = write_out(
        ctx,
        Path::new("severity_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    ctx.say(&format!(
        "{} beat ce on {wins}/{} seeds; wrote {}",
        summary.comparison,
        seeds.len(),
        path.display()
    ));
    Ok(())
}

/// `A..B` (inclusive) or a comma-separated list.
fn parse_seeds(spec: &str) -> CliResult<Vec<u64>> {
    let bad =
        |what: &str| CliError::input(format!("{what:?} is not a seed spec (use 0..9 or 0,1,2)"));
    if let Some((from, to)) = spec.split_once("..") {
        let from: u64 = from.trim().parse().map_err(|_| bad(spec))?;
        let to: u64 = to.trim().parse().map_err(|_| bad(spec))?;
        if to < from {
            return Err(bad(spec));
        }
        return Ok((from..=to).collect());
    }
    spec.split(',')
        .map(|cell| cell.trim().parse::<u64>().map_err(|_| bad(cell)))
        .collect()
}
