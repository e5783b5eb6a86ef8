use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use byzmed::simulator::MetricsRecord;

use crate::CliError;

pub const METRICS: [&str; 4] = ["train_loss", "eval_metric", "grad_norm", "agg_wall_time"];

pub fn header() -> String {
    format!("round,{}", METRICS.join(","))
}

pub fn mean_header() -> String {
    let stds: Vec<String> = METRICS.iter().map(|m| format!("{m}_stddev")).collect();
    format!("{},{}", header(), stds.join(","))
}

fn values(r: &MetricsRecord) -> [f64; 4] {
    [r.train_loss, r.eval_metric, r.grad_norm, r.agg_wall_time]
}

pub fn render(records: &[MetricsRecord]) -> String {
    let mut out = header();
    out.push('\n');
    for r in records {
        write!(out, "{}", r.round).unwrap();
        for v in values(r) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Mean and sample standard deviation of `xs`; the deviation is 0 for a
/// single value.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

/// Per-round mean and standard deviation across replicates. All replicates
/// must share the same rounds.
pub fn render_mean(replicates: &[Vec<MetricsRecord>]) -> String {
    let mut out = mean_header();
    out.push('\n');
    let Some(first) = replicates.first() else {
        return out;
    };
    for (row, rec) in first.iter().enumerate() {
        let mut means = Vec::with_capacity(METRICS.len());
        let mut stds = Vec::with_capacity(METRICS.len());
        for m in 0..METRICS.len() {
            let xs: Vec<f64> = replicates.iter().map(|rep| values(&rep[row])[m]).collect();
            let (mean, std) = mean_std(&xs);
            means.push(mean);
            stds.push(std);
        }
        write!(out, "{}", rec.round).unwrap();
        for v in means.iter().chain(&stds) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let tmp = path.with_extension("csv.tmp");
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(contents.as_bytes()).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: usize, acc: f64) -> MetricsRecord {
        MetricsRecord {
            round,
            train_loss: 0.5,
            eval_metric: acc,
            grad_norm: 1.0,
            agg_wall_time: 0.0,
        }
    }

    #[test]
    fn headers() {
        assert_eq!(header(), "round,train_loss,eval_metric,grad_norm,agg_wall_time");
        assert!(mean_header().ends_with("grad_norm_stddev,agg_wall_time_stddev"));
    }

    #[test]
    fn shortest_round_trip_floats() {
        let text = render(&[rec(10, 0.1)]);
        assert_eq!(text.lines().nth(1).unwrap(), "10,0.5,0.1,1,0");
    }

    #[test]
    fn mean_over_replicates() {
        let text = render_mean(&[vec![rec(1, 1.0)], vec![rec(1, 3.0)]]);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[2], "2");
        assert_eq!(row[6], "1.4142135623730951");
    }
}
