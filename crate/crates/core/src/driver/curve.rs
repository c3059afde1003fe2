//! Learning curves and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "global_learner_step,cycle,eval_return_mean,eval_return_std,alpha";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub learner_step: u64,
    pub cycle: u32,
    pub return_mean: f64,
    pub return_std: f64,
    pub alpha: f64,
    /// Seconds since the run started; kept out of the CSV so reruns compare byte for byte.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn push(&mut self, row: CurveRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.learner_step <= last.learner_step {
                return Err(Error::InvariantViolation(format!(
                    "curve step {} does not follow {}",
                    row.learner_step, last.learner_step
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn cycle_rows(&self, cycle: u32) -> impl Iterator<Item = &CurveRow> {
        self.rows.iter().filter(move |r| r.cycle == cycle)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.3},{:.3},{:.6}",
                r.learner_step, r.cycle, r.return_mean, r.return_std, r.alpha
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("global_learner_step,wall_time\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.3}", r.learner_step, r.wall_time);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_csv())?)
    }

    /// Reads a curve written by [`to_csv`](Self::to_csv); wall time is not stored there.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format("missing learning-curve header".into()));
        }
        let mut curve = Self::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("bad curve row '{line}'")));
            }
            curve.push(CurveRow {
                learner_step: field(f[0], line)?,
                cycle: field(f[1], line)?,
                return_mean: field(f[2], line)?,
                return_std: field(f[3], line)?,
                alpha: field(f[4], line)?,
                wall_time: 0.0,
            })?;
        }
        Ok(curve)
    }
}

fn field<T: std::str::FromStr>(s: &str, line: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad curve row '{line}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64) -> CurveRow {
        CurveRow {
            learner_step: step,
            cycle: 1,
            return_mean: 512.34567,
            return_std: 1.0,
            alpha: 0.5,
            wall_time: 9.9,
        }
    }

    #[test]
    fn csv_round_trip_at_three_decimals() {
        let mut c = LearningCurve::new();
        c.push(row(0)).unwrap();
        c.push(row(250)).unwrap();
        let text = c.to_csv();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.contains("250,1,512.346,1.000,0.500000"));
        let back = LearningCurve::parse_csv(&text).unwrap();
        assert_eq!(back.rows().len(), 2);
        assert_eq!(back.rows()[1].return_mean, 512.346);
    }

    #[test]
    fn steps_must_increase() {
        let mut c = LearningCurve::new();
        c.push(row(250)).unwrap();
        assert!(c.push(row(250)).is_err());
    }
}
