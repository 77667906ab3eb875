use std::path::Path;

use serde::Serialize;

use wassl::labels::SegmentationMap;
use wassl::metrics::{ConfusionMatrix, EvalReport};
use wassl::trainer::{evaluate, SceneDataset, SoftmaxModel, Split};
use wassl::ImportanceGrouping;

use super::{load_matrix, timestamp, write_out, CliError, CliResult, Context};
use crate::EvaluateArgs;

#[derive(Serialize)]
struct TimedReport<'a> {
    generated_at: String,
    source: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn load_map(path: &Path) -> CliResult<SegmentationMap> {
    if path.extension().is_some_and(|ext| ext == "csv") {
        Ok(SegmentationMap::from_csv_file(path)?)
    } else {
        Ok(SegmentationMap::from_json_file(path)?)
    }
}

pub fn run(ctx: &Context, args: &EvaluateArgs) -> CliResult {
    let mut matrix = None;
    let mut matrix_names = Vec::new();
    if let Some(path) = &args.matrix {
        let (m, names) = load_matrix(path, None)?;
        matrix = Some(m);
        matrix_names = names;
    }
    let grouping = match &args.grouping {
        Some(path) => Some(ImportanceGrouping::from_json_file(path)?),
        None => None,
    };

    let (report, source, num_classes) = match (&args.model, &args.truths) {
        (Some(model_path), None) => {
            let model = SoftmaxModel::from_json_file(model_path)?;
            let dataset = args.dataset.as_ref().expect("clap enforces the pair");
            let data = SceneDataset::from_json_file(dataset)?;
            let split = match args.split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(CliError::input(format!(
                        "unknown split {other:?}; expected train, val or test"
                    )));
                }
            };
            let report = evaluate(
                &model,
                data.split(split),
                data.num_classes,
                grouping.as_ref(),
                matrix.as_ref(),
            )?;
            (report, args.split.as_str(), data.num_classes)
        }
        (None, Some(truths_path)) => {
            let truths = load_map(truths_path)?;
            let preds = load_map(args.preds.as_ref().expect("clap enforces the pair"))?;
            let num_classes = match (args.classes, &matrix) {
                (Some(n), _) => n,
                (None, Some(m)) => m.n(),
                (None, None) => {
                    return Err(CliError::input(
                        "map evaluation needs --classes or a --matrix to size the confusion",
                    ));
                }
            };
            let confusion = ConfusionMatrix::from_maps(&truths, &preds, num_classes)?;
            let report = EvalReport::compute(&confusion, grouping.as_ref(), matrix.as_ref())?;
            (report, "maps", num_classes)
        }
        _ => {
            return Err(CliError::input(
                "evaluate needs either --model/--dataset or --truths/--preds",
            ));
        }
    };

    let text = serde_json::to_string_pretty(&TimedReport {
        generated_at: timestamp(),
        source,
        report: &report,
    })
    .expect("report serializes");
    let path = write_out(ctx, &args.out, &text)?;

    let class_names: Vec<String> = if matrix_names.len() == num_classes {
        matrix_names
    } else if let Some(g) = &grouping {
        g.class_names().to_vec()
    } else {
        Vec::new()
    };
    ctx.say(&report.to_table(&class_names, grouping.as_ref()));
    ctx.say(&format!("wrote {}", path.display()));
    Ok(())
}
