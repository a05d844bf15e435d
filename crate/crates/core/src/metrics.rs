//! Training telemetry rows and the metrics CSV writer.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{ArsqError, Result};

pub const METRICS_HEADER: &str =
    "step,episode_return_mean,episode_return_std,success_rate,rl_loss,bc_loss,v_mean,policy_entropy_mean,wall_ms";

#[derive(Debug, Clone, Copy)]
pub struct MetricsRow {
    pub step: usize,
    pub episode_return_mean: f64,
    pub episode_return_std: f64,
    pub success_rate: f64,
    pub rl_loss: f64,
    pub bc_loss: f64,
    pub v_mean: f64,
    pub policy_entropy_mean: f64,
    pub wall_ms: u64,
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    last_step: Option<usize>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self {
            out,
            last_step: None,
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some(last) = self.last_step {
            if row.step < last {
                return Err(ArsqError::InvalidConfig(format!(
                    "metrics step went backwards: {} after {last}",
                    row.step
                )));
            }
        }
        self.last_step = Some(row.step);
        writeln!(
            self.out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            row.step,
            row.episode_return_mean,
            row.episode_return_std,
            row.success_rate,
            row.rl_loss,
            row.bc_loss,
            row.v_mean,
            row.policy_entropy_mean,
            row.wall_ms
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_monotone_steps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let row = MetricsRow {
            step: 10,
            episode_return_mean: 1.0,
            episode_return_std: 0.5,
            success_rate: 0.9,
            rl_loss: 0.01,
            bc_loss: 0.02,
            v_mean: 1.5,
            policy_entropy_mean: 2.5,
            wall_ms: 0,
        };
        w.write(&row).unwrap();
        let mut row2 = row;
        row2.step = 5;
        assert!(w.write(&row2).is_err());
        let mut row3 = row;
        row3.step = 20;
        w.write(&row3).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(text.lines().count(), 3);
    }
}
