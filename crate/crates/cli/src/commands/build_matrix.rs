use wassl::{apply_metric_fn, build_group_matrix, ImportanceGrouping};

use super::{parse_metric, write_out, CliResult, Context};
use crate::BuildMatrixArgs;

pub fn run(ctx: &Context, args: &BuildMatrixArgs) -> CliResult {
    let grouping = ImportanceGrouping::from_json_file(&args.grouping)?;
    let mut matrix = build_group_matrix(&grouping);
    if let Some(spec) = &args.metric {
        matrix = apply_metric_fn(&matrix, parse_metric(spec)?);
    }
    let text = matrix.to_json_string(grouping.class_names())?;
    let target = write_out(ctx, &args.out, &text)?;

    let min = matrix.min_off_diagonal().unwrap_or(0.0);
    let max = matrix.max_off_diagonal().unwrap_or(0.0);
    ctx.say(&format!(
        "wrote {} ({} classes, off-diagonal costs {min}..{max})",
        target.display(),
        matrix.n()
    ));
    Ok(())
}
