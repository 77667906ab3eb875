pub mod bench;
pub mod build_matrix;
pub mod evaluate;
pub mod grad_check;
pub mod loss_eval;
pub mod train;

use std::fmt;
use std::path::{Path, PathBuf};

use wassl::wasserstein::ProbabilityHistogram;
use wassl::{apply_metric_fn, Error as CoreError, GroundMatrix, MetricFn};

pub struct Context {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub quiet: bool,
}

impl Context {
    /// Relative output paths land under `--out-dir`.
    pub fn resolve_out(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        }
    }

    pub fn say(&self, text: &str) {
        if !self.quiet {
            println!("{text}");
        }
    }
}

/// Error with the process exit code it maps to: 2 for input/validation
/// problems, 3 for numerical failures.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let code = match err {
            CoreError::NumericalAbort { .. }
            | CoreError::KernelUnderflow { .. }
            | CoreError::Internal(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// `identity`, `power:RHO`, `huber:TAU` or `step`.
pub fn parse_metric(spec: &str) -> CliResult<MetricFn> {
    let (kind, param) = match spec.split_once(':') {
        Some((k, p)) => (k, Some(p)),
        None => (spec, None),
    };
    let need = |p: Option<&str>| -> CliResult<f64> {
        let text = p.ok_or_else(|| CliError::input(format!("metric {kind} needs a parameter")))?;
        text.parse::<f64>()
            .map_err(|_| CliError::input(format!("{text:?} is not a number")))
    };
    match kind {
        "identity" => Ok(MetricFn::Identity),
        "step" => Ok(MetricFn::Step),
        "power" => Ok(MetricFn::power(need(param)?)?),
        "huber" => Ok(MetricFn::huber(need(param)?)?),
        other => Err(CliError::input(format!(
            "unknown metric {other:?}; expected identity, power:RHO, huber:TAU or step"
        ))),
    }
}

/// Loads a matrix file and optionally applies a metric spec to it.
pub fn load_matrix(path: &Path, metric: Option<&str>) -> CliResult<(GroundMatrix, Vec<String>)> {
    let (matrix, names) = GroundMatrix::from_json_file(path)?;
    let matrix = match metric {
        Some(spec) => apply_metric_fn(&matrix, parse_metric(spec)?),
        None => matrix,
    };
    Ok((matrix, names))
}

pub fn parse_histogram(text: &str) -> CliResult<ProbabilityHistogram> {
    let values = text
        .split(',')
        .map(|cell| {
            cell.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("{:?} is not a number", cell.trim())))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(ProbabilityHistogram::new(values)?)
}

/// The single timestamp header key reports carry.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Writes an output file, creating parent directories as needed.
pub fn write_out(ctx: &Context, path: &Path, contents: &str) -> CliResult<PathBuf> {
    let target = ctx.resolve_out(path);
    if let Some(parent) = target.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::input(e.to_string()))?;
        }
    }
    std::fs::write(&target, contents).map_err(|e| CliError::input(e.to_string()))?;
    Ok(target)
}
