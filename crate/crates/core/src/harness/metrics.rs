use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Column order of `metrics.csv`. Evaluation columns are empty on
/// iterations without an evaluation.
pub const METRICS_HEADER: &str = "iteration,meta_train_loss,mean_test_loss,mean_l_t,mean_l_q,eval_mse,eval_ci95";
/// Column order of `timing.csv`, kept apart so `metrics.csv` is reproducible.
pub const TIMING_HEADER: &str = "iteration,wall_seconds";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub meta_train_loss: f64,
    pub mean_test_loss: f64,
    pub mean_l_t: f64,
    pub mean_l_q: f64,
    /// `(mean, half-width)` when the held-out set was evaluated.
    pub eval: Option<(f64, f64)>,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let (e, c) = match self.eval {
            Some((m, h)) => (format!("{m:?}"), format!("{h:?}")),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{:?},{:?},{:?},{:?},{e},{c}",
            self.iteration, self.meta_train_loss, self.mean_test_loss, self.mean_l_t, self.mean_l_q
        )
    }
}

/// Appends rows to `metrics.csv` and `timing.csv` in a run directory.
pub struct MetricsWriter {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    paths: (PathBuf, PathBuf),
}

fn open_truncated(path: &Path, header: &str, keep_through: u64) -> Result<BufWriter<File>> {
    let mut kept = vec![header.to_string()];
    if keep_through > 0 && path.exists() {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let it: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Integrity(format!("malformed row in {}: {line}", path.display())))?;
            if it <= keep_through {
                kept.push(line);
            }
        }
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for l in kept {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

impl MetricsWriter {
    /// Starts fresh files, or when resuming at `iteration > 0` keeps the
    /// rows up to and including it and drops anything later.
    pub fn open(dir: &Path, iteration: u64) -> Result<Self> {
        let m = dir.join("metrics.csv");
        let t = dir.join("timing.csv");
        Ok(MetricsWriter {
            metrics: open_truncated(&m, METRICS_HEADER, iteration)?,
            timing: open_truncated(&t, TIMING_HEADER, iteration)?,
            paths: (m, t),
        })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.metrics, "{}", row.csv_line()).map_err(|e| Error::io(&self.paths.0, e))?;
        writeln!(self.timing, "{},{:?}", row.iteration, row.wall_seconds).map_err(|e| Error::io(&self.paths.1, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.paths.0, e))?;
        self.timing.flush().map_err(|e| Error::io(&self.paths.1, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: u64) -> MetricsRow {
        MetricsRow {
            iteration: i,
            meta_train_loss: 1.5 / i as f64,
            mean_test_loss: 1.0,
            mean_l_t: 0.25,
            mean_l_q: 0.125,
            eval: i.is_multiple_of(2).then_some((0.5, 0.01)),
            wall_seconds: i as f64 * 0.1,
        }
    }

    #[test]
    fn header_and_rows() {
        assert_eq!(row(3).csv_line(), "3,0.5,1.0,0.25,0.125,,");
        assert_eq!(row(2).csv_line(), "2,0.75,1.0,0.25,0.125,0.5,0.01");
        assert_eq!(METRICS_HEADER.split(',').count(), row(2).csv_line().split(',').count());
    }

    #[test]
    fn resume_drops_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::open(dir.path(), 0).unwrap();
        for i in 1..=5 {
            w.push(&row(i)).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let mut w = MetricsWriter::open(dir.path(), 3).unwrap();
        w.push(&row(4)).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let iters: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(iters, ["1", "2", "3", "4"]);
        let timing = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
        assert_eq!(timing.lines().count(), 5);
    }
}
