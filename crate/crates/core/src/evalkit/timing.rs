//! Per-stage latency summary in the Preprocess / Prediction / Postprocess layout.

use std::time::Duration;

/// Duration samples for one pipeline stage, in milliseconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub name: String,
    pub samples_ms: Vec<f64>,
}

impl StageTimes {
    pub fn new(name: impl Into<String>) -> Self {
        StageTimes {
            name: name.into(),
            samples_ms: Vec::new(),
        }
    }

    pub fn with_samples(name: impl Into<String>, samples_ms: Vec<f64>) -> Self {
        StageTimes {
            name: name.into(),
            samples_ms,
        }
    }

    pub fn record(&mut self, d: Duration) {
        self.samples_ms.push(d.as_secs_f64() * 1e3);
    }

    pub fn mean_ms(&self) -> f64 {
        if self.samples_ms.is_empty() {
            0.0
        } else {
            self.samples_ms.iter().sum::<f64>() / self.samples_ms.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<(String, f64)>,
    pub total_ms: f64,
    pub runs: usize,
}

/// Mean time per stage; the total is the sum of the stage means.
pub fn timing_report(stages: &[StageTimes]) -> TimingReport {
    let rows: Vec<(String, f64)> = stages.iter().map(|s| (s.name.clone(), s.mean_ms())).collect();
    TimingReport {
        total_ms: rows.iter().map(|(_, t)| t).sum(),
        runs: stages.iter().map(|s| s.samples_ms.len()).max().unwrap_or(0),
        rows,
    }
}

impl TimingReport {
    pub fn to_csv(&self, decimals: usize) -> String {
        let mut s = String::from("operation,time_ms\n");
        for (name, t) in &self.rows {
            s.push_str(&format!("{name},{t:.decimals$}\n"));
        }
        s.push_str(&format!("Total,{:.decimals$}\n", self.total_ms));
        s
    }

    pub fn to_pretty(&self, decimals: usize) -> String {
        let w = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(9);
        let mut s = format!("{:<w$} | {:>10}\n", "Operation", "Time (ms)");
        s.push_str(&format!("{}\n", "-".repeat(w + 13)));
        for (name, t) in &self.rows {
            s.push_str(&format!("{name:<w$} | {t:>10.decimals$}\n"));
        }
        s.push_str(&format!("{}\n", "-".repeat(w + 13)));
        s.push_str(&format!("{:<w$} | {:>10.decimals$}\n", "Total", self.total_ms));
        s
    }
}
