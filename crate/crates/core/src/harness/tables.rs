//! MAE% tables by fault phase, as CSV and aligned text.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// "No Fault", "1st Fault", "2nd Fault", ...
pub fn phase_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|k| match k {
            0 => "No Fault".to_string(),
            _ => format!("{} Fault", ordinal(k)),
        })
        .collect()
}

fn ordinal(k: usize) -> String {
    let suffix = match (k % 10, k % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{k}{suffix}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub signal: String,
    /// One entry per phase; `None` where the metric is undefined.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeTable {
    pub group: String,
    pub phases: Vec<String>,
    pub rows: Vec<MaeRow>,
}

impl MaeTable {
    pub fn new(group: &str, phases: Vec<String>) -> Self {
        Self {
            group: group.to_string(),
            phases,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, signal: String, values: Vec<Option<f64>>) {
        self.rows.push(MaeRow { signal, values });
    }

    pub fn value(&self, signal: &str, phase: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.signal == signal).and_then(|r| r.values.get(phase).copied().flatten())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["signal".to_string()];
        header.extend(self.phases.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.signal.clone()];
            rec.extend(r.values.iter().map(|v| v.map_or(String::new(), |v| format!("{v:.4}"))));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn to_text(&self) -> String {
        let width = self.phases.iter().map(|p| p.len()).max().unwrap_or(0).max(9);
        let label = self.rows.iter().map(|r| r.signal.len()).max().unwrap_or(0).max(6);
        let mut s = String::new();
        let _ = write!(s, "{:<label$}", "signal");
        for p in &self.phases {
            let _ = write!(s, "  {p:>width$}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<label$}", r.signal);
            for v in &r.values {
                match v {
                    Some(v) => {
                        let _ = write!(s, "  {v:>width$.3}");
                    }
                    None => {
                        let _ = write!(s, "  {:>width$}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}
