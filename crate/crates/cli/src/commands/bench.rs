use std::time::Instant;

use wassl::wasserstein::{
    exact_lp_loss, onehot_loss, sinkhorn_loss, ProbabilityHistogram, SinkhornParams,
    LP_ORACLE_LIMIT,
};
use wassl::GroundMatrix;

use super::{write_out, CliError, CliResult, Context};
use crate::BenchArgs;

struct Row {
    n: usize,
    op: &'static str,
    repetitions: usize,
    median_ns: Option<f64>,
}

/// Median of per-call times; each sample batches `calls` invocations so the
/// clock resolution does not dominate tiny kernels.
fn median_per_call(repetitions: usize, calls: usize, mut work: impl FnMut()) -> f64 {
    let mut samples: Vec<f64> = (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..calls {
                work();
            }
            start.elapsed().as_nanos() as f64 / calls as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Deterministic pseudo-random instance; no RNG needed at this accuracy.
fn instance(n: usize) -> (ProbabilityHistogram, ProbabilityHistogram, GroundMatrix) {
    let wave = |k: usize, phase: f64| 0.05 + (k as f64 * 0.7311 + phase).sin().abs();
    let s = ProbabilityHistogram::new((0..n).map(|k| wave(k, 0.3)).collect()).unwrap();
    let t = ProbabilityHistogram::new((0..n).map(|k| wave(k, 1.9)).collect()).unwrap();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        0.1 + wave(i * n + j, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    (s, t, GroundMatrix::from_rows(rows).unwrap())
}

pub fn run(ctx: &Context, args: &BenchArgs) -> CliResult {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|cell| {
            cell.trim()
                .parse::<usize>()
                .map_err(|_| CliError::input(format!("{:?} is not a size", cell.trim())))
        })
        .collect::<CliResult<_>>()?;
    if let Some(&bad) = sizes.iter().find(|&&n| n < 2) {
        return Err(CliError::input(format!("sizes must be >= 2, got {bad}")));
    }
    if args.repetitions == 0 {
        return Err(CliError::input("repetitions must be >= 1"));
    }

    let mut rows = Vec::new();
    for &n in &sizes {
        let (s, t, d) = instance(n);
        let target = n / 2;

        let calls = (262_144 / n).max(1);
        rows.push(Row {
            n,
            op: "onehot_loss",
            repetitions: args.repetitions,
            median_ns: Some(median_per_call(args.repetitions, calls, || {
                std::hint::black_box(onehot_loss(&s, target, &d).unwrap().loss);
            })),
        });

        let params = SinkhornParams {
            epsilon: 0.5,
            max_iter: args.sinkhorn_iters.max(1),
            tol: 1e-300,
        };
        rows.push(Row {
            n,
            op: "sinkhorn_loss",
            repetitions: args.repetitions,
            median_ns: Some(median_per_call(args.repetitions, 1, || {
                std::hint::black_box(sinkhorn_loss(&s, &t, &d, &params).unwrap().loss);
            })),
        });

        rows.push(Row {
            n,
            op: "exact_lp_loss",
            repetitions: args.repetitions,
            median_ns: (n <= LP_ORACLE_LIMIT).then(|| {
                median_per_call(args.repetitions, 1, || {
                    std::hint::black_box(exact_lp_loss(&s, &t, &d).unwrap().loss);
                })
            }),
        });
    }

    let mut table = format!(
        "{:>8} {:>14} {:>6} {:>16}  status\n",
        "n", "op", "reps", "median_ns"
    );
    let mut csv = String::from("n,op,repetitions,median_ns,status\n");
    for row in &rows {
        let (median, status) = match row.median_ns {
            Some(ns) => (format!("{ns:.1}"), "ok"),
            None => (String::new(), "skipped"),
        };
        table.push_str(&format!(
            "{:>8} {:>14} {:>6} {:>16}  {}\n",
            row.n, row.op, row.repetitions, median, status
        ));
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.n, row.op, row.repetitions, median, status
        ));
    }
    print!("{table}");
    if let Some(path) = &args.out {
        let target = write_out(ctx, path, &csv)?;
        ctx.say(&format!("wrote {}", target.display()));
    }
    Ok(())
}
