//! Convergence reports shared by every optimizer.
//!
//! A report is written as JSON lines (one record per iteration) followed by a
//! summary object. Wall-clock fields are kept out of [`ConvergenceReport::fingerprint`]
//! so two runs can be compared bit for bit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Why an optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Diverged,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub train_err: f64,
    pub test_err: Option<f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Work counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    /// `r × r` matrix-vector products along entry paths.
    pub chain_matvecs: u64,
    /// Complex multiply-adds spent on normal-equation assembly.
    pub gram_madds: u64,
    /// Normal systems solved.
    pub solves: u64,
    /// Systems that needed the fallback ridge.
    pub fallbacks: u64,
    /// Singular systems whose slice was left unchanged.
    pub skipped: u64,
}

impl std::ops::AddAssign for OpCounters {
    fn add_assign(&mut self, o: Self) {
        self.chain_matvecs += o.chain_matvecs;
        self.gram_madds += o.gram_madds;
        self.solves += o.solves;
        self.fallbacks += o.fallbacks;
        self.skipped += o.skipped;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub algorithm: String,
    pub format: String,
    pub version: String,
    pub config: serde_json::Value,
    pub initial_train_err: f64,
    pub initial_test_err: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub counters: OpCounters,
    /// Regularized objective after every factor update, when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub total_seconds: f64,
}

impl ConvergenceReport {
    pub(crate) fn new(algorithm: &str, format: &str, config: serde_json::Value) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            format: format.to_string(),
            version: LIBRARY_VERSION.to_string(),
            config,
            initial_train_err: f64::NAN,
            initial_test_err: None,
            iterations: Vec::new(),
            termination: Termination::MaxIterations,
            counters: OpCounters::default(),
            objective_trace: Vec::new(),
            notes: Vec::new(),
            total_seconds: 0.0,
        }
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn final_train_err(&self) -> f64 {
        self.iterations
            .last()
            .map_or(self.initial_train_err, |r| r.train_err)
    }

    pub fn final_test_err(&self) -> Option<f64> {
        self.iterations
            .last()
            .map_or(self.initial_test_err, |r| r.test_err)
    }

    /// Everything but the per-iteration records.
    pub fn summary_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        let obj = v.as_object_mut().expect("report is an object");
        obj.remove("iterations");
        obj.insert("iterations_run".into(), self.iterations.len().into());
        obj.insert("final_train_err".into(), self.final_train_err().into());
        obj.insert(
            "final_test_err".into(),
            self.final_test_err()
                .map_or(serde_json::Value::Null, Into::into),
        );
        obj.insert("converged".into(), self.converged().into());
        v
    }

    /// One JSON object per iteration, then the summary on the last line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.iterations {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary_json()).expect("summary serializes"));
        out.push('\n');
        out
    }

    /// `iteration,train,test,seconds` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,train,test,seconds\n");
        let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        writeln!(
            out,
            "0,{:e},{},0",
            self.initial_train_err,
            fmt(self.initial_test_err)
        )
        .unwrap();
        for r in &self.iterations {
            writeln!(
                out,
                "{},{:e},{},{}",
                r.iter,
                r.train_err,
                fmt(r.test_err),
                r.seconds
            )
            .unwrap();
        }
        out
    }

    /// Serialization of the deterministic content (timings zeroed).
    pub fn fingerprint(&self) -> String {
        let mut copy = self.clone();
        copy.total_seconds = 0.0;
        for r in &mut copy.iterations {
            r.seconds = 0.0;
        }
        // Bit patterns, so -0.0 and NaN payloads are compared exactly too.
        let bits: Vec<u64> = copy
            .iterations
            .iter()
            .flat_map(|r| [r.train_err.to_bits(), r.test_err.map_or(0, f64::to_bits)])
            .chain(copy.objective_trace.iter().map(|x| x.to_bits()))
            .collect();
        format!(
            "{}|{:?}",
            serde_json::to_string(&copy).expect("report serializes"),
            bits
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ConvergenceReport {
        let mut r = ConvergenceReport::new("als", "butterfly", serde_json::json!({"tol": 1e-3}));
        r.initial_train_err = 1.0;
        r.iterations.push(IterationRecord {
            iter: 1,
            train_err: 0.5,
            test_err: Some(0.6),
            seconds: 0.25,
            flags: vec![],
        });
        r
    }

    #[test]
    fn jsonl_has_one_line_per_iteration_plus_summary() {
        let text = sample().to_jsonl();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let summary: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(summary["termination"], "max_iterations");
        assert_eq!(summary["version"], LIBRARY_VERSION);
        assert_eq!(summary["final_train_err"], 0.5);
    }

    #[test]
    fn fingerprint_ignores_timing() {
        let a = sample();
        let mut b = sample();
        b.iterations[0].seconds = 9.0;
        b.total_seconds = 3.0;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.iterations[0].train_err = 0.5000000000000001;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn csv_header() {
        let csv = sample().to_csv();
        assert!(csv.starts_with("iteration,train,test,seconds\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
