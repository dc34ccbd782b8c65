use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::eval::CandidateConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Theta,
    Z,
    Multiplier,
}

/// One black-box evaluation. Serialized as one JSON line; field names are
/// part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based count of evaluations sent to the evaluator.
    pub eval_index: u64,
    /// Cumulative evaluator time in milliseconds.
    pub wall_ms: f64,
    pub admm_iter: usize,
    pub phase: Phase,
    pub z: BTreeMap<String, String>,
    pub theta_int: BTreeMap<String, i64>,
    pub theta_cont: BTreeMap<String, f64>,
    pub loss: f64,
    pub constraints: Vec<f64>,
    pub feasible: bool,
    /// Loss of the incumbent after this evaluation; `null` until one exists.
    pub incumbent_loss: Option<f64>,
    /// Present only when the evaluator failed and `loss` is the substitute.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    out.flush()
}

/// Best candidate so far. With constraints, any feasible candidate beats
/// every infeasible one; among equals the lower loss wins.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub config: CandidateConfig,
    pub loss: f64,
    pub constraints: Vec<f64>,
    pub feasible: bool,
    pub eval_index: u64,
    pub wall_ms: f64,
}

impl Incumbent {
    /// Whether a candidate with this loss and feasibility replaces `current`.
    pub fn improves(current: Option<&Incumbent>, loss: f64, feasible: bool) -> bool {
        match current {
            None => true,
            Some(c) => match (c.feasible, feasible) {
                (false, true) => true,
                (true, false) => false,
                _ => loss < c.loss,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> TraceRecord {
        TraceRecord {
            eval_index: 3,
            wall_ms: 30.0,
            admm_iter: 1,
            phase: Phase::Z,
            z: [("scaler".to_string(), "none".to_string())].into(),
            theta_int: [("scaler.q.n".to_string(), 4)].into(),
            theta_cont: BTreeMap::new(),
            loss: 0.25,
            constraints: vec![1.5],
            feasible: true,
            incumbent_loss: Some(0.25),
            failed: false,
        }
    }

    #[test]
    fn field_names_are_fixed() {
        let line = record().to_json_line();
        assert_eq!(
            line,
            r#"{"eval_index":3,"wall_ms":30.0,"admm_iter":1,"phase":"z","z":{"scaler":"none"},"theta_int":{"scaler.q.n":4},"theta_cont":{},"loss":0.25,"constraints":[1.5],"feasible":true,"incumbent_loss":0.25}"#
        );
        let back: TraceRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record());
    }

    #[test]
    fn failed_flag_round_trips() {
        let r = TraceRecord { failed: true, incumbent_loss: None, ..record() };
        let line = r.to_json_line();
        assert!(line.contains(r#""failed":true"#));
        assert!(line.contains(r#""incumbent_loss":null"#));
        assert_eq!(serde_json::from_str::<TraceRecord>(&line).unwrap(), r);
    }

    #[test]
    fn feasibility_dominates_loss() {
        let inc = Incumbent {
            config: CandidateConfig { z: crate::space::ZAssignment(vec![0]), theta_cont: vec![], theta_int: vec![] },
            loss: 0.5,
            constraints: vec![],
            feasible: false,
            eval_index: 1,
            wall_ms: 0.0,
        };
        assert!(Incumbent::improves(None, 9.0, false));
        assert!(Incumbent::improves(Some(&inc), 0.9, true));
        assert!(!Incumbent::improves(Some(&inc), 0.6, false));
        let feasible = Incumbent { feasible: true, ..inc };
        assert!(!Incumbent::improves(Some(&feasible), 0.1, false));
        assert!(Incumbent::improves(Some(&feasible), 0.4, true));
        assert!(!Incumbent::improves(Some(&feasible), 0.5, true));
    }
}
