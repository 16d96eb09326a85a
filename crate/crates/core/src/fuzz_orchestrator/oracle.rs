//! The four bug oracles. Each one looks only at run results, never at the
//! verdicts of the others.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{parse_output, TargetConfig};
use crate::objects::Vrp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Crash,
    Stall,
    Integrity,
    Consistency,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Crash => "crash",
            OracleKind::Stall => "stall",
            OracleKind::Integrity => "integrity",
            OracleKind::Consistency => "consistency",
        })
    }
}

/// How a target process ended.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitState {
    Code(i32),
    Signal(i32),
    TimedOut,
}

impl ExitState {
    pub fn is_clean(&self) -> bool {
        *self == ExitState::Code(0)
    }
}

impl fmt::Display for ExitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitState::Code(c) => write!(f, "exit code {c}"),
            ExitState::Signal(s) => write!(f, "killed by signal {s}"),
            ExitState::TimedOut => f.write_str("timed out"),
        }
    }
}

/// Everything the oracles need from one target run.
#[derive(Clone, Debug)]
pub struct TargetRun {
    pub target: String,
    pub exit: ExitState,
    pub runtime_secs: f64,
    /// Output file contents; `None` if the file was not written.
    pub output: Option<String>,
    /// Combined stdout and stderr.
    pub log: String,
}

/// One oracle finding, before campaign context is attached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: OracleKind,
    pub targets: Vec<String>,
    pub summary: String,
    #[serde(default)]
    pub details: Vec<String>,
}

const EXCERPT_LINES: usize = 20;

fn excerpt(log: &str, keyword: Option<&str>) -> Vec<String> {
    let lines: Vec<&str> = log.lines().collect();
    let at = keyword.and_then(|k| lines.iter().position(|l| l.contains(k)));
    let start = at.map_or(lines.len().saturating_sub(EXCERPT_LINES), |i| i.saturating_sub(EXCERPT_LINES / 2));
    lines[start..].iter().take(EXCERPT_LINES).map(|s| s.to_string()).collect()
}

/// Abnormal termination, missing or empty output, or a crash keyword.
pub fn oracle_crash(run: &TargetRun, cfg: &TargetConfig) -> Option<Finding> {
    let keyword = cfg.crash_keywords.iter().find(|k| !k.is_empty() && run.log.contains(k.as_str()));
    let reason = if let Some(k) = keyword {
        format!("crash keyword {k:?} in log")
    } else if !run.exit.is_clean() && run.exit != ExitState::TimedOut {
        format!("abnormal termination ({})", run.exit)
    } else if run.exit == ExitState::TimedOut {
        return None;
    } else if run.output.as_deref().is_none_or(|o| o.trim().is_empty()) {
        "no output produced".to_string()
    } else {
        return None;
    };
    Some(Finding {
        kind: OracleKind::Crash,
        targets: vec![run.target.clone()],
        summary: format!("{}: {reason}", run.target),
        details: excerpt(&run.log, keyword.map(String::as_str)),
    })
}

/// Mean of baseline runtimes.
pub fn baseline(runtimes: &[f64]) -> Option<f64> {
    (!runtimes.is_empty()).then(|| runtimes.iter().sum::<f64>() / runtimes.len() as f64)
}

/// A run taking more than twice the baseline. Timeouts always count.
pub fn oracle_stall(run: &TargetRun, baseline_secs: f64) -> Option<Finding> {
    let timed_out = run.exit == ExitState::TimedOut;
    if !timed_out && run.runtime_secs <= 2.0 * baseline_secs {
        return None;
    }
    Some(Finding {
        kind: OracleKind::Stall,
        targets: vec![run.target.clone()],
        summary: format!(
            "{}: runtime {:.3} s exceeds twice the baseline {:.3} s{}",
            run.target,
            run.runtime_secs,
            baseline_secs,
            if timed_out { " (killed at timeout)" } else { "" }
        ),
        details: Vec::new(),
    })
}

/// The integrity CA's test ROA must be in every output. Unparseable output
/// fails closed. A run without output has nothing to check here.
pub fn oracle_integrity(run: &TargetRun, cfg: &TargetConfig, test_roa: &Vrp) -> Option<Finding> {
    let text = run.output.as_deref().filter(|o| !o.trim().is_empty())?;
    let (summary, details) = match parse_output(cfg.output_format, text) {
        Ok(set) if set.contains(test_roa) => return None,
        Ok(set) => (format!("{}: test ROA {test_roa} missing from output", run.target), vec![format!("{} VRPs accepted", set.len())]),
        Err(e) => (format!("{}: output unparseable", run.target), vec![e]),
    };
    Some(Finding { kind: OracleKind::Integrity, targets: vec![run.target.clone()], summary, details })
}

/// Pairwise comparison of accepted VRP sets over targets with parseable
/// output. Needs at least two.
pub fn oracle_consistency(outputs: &BTreeMap<String, BTreeSet<Vrp>>) -> Option<Finding> {
    if outputs.len() < 2 {
        return None;
    }
    let union: BTreeSet<&Vrp> = outputs.values().flatten().collect();
    let mut details = Vec::new();
    let mut targets = BTreeSet::new();
    for vrp in union {
        let (with, without): (Vec<&String>, Vec<&String>) = outputs.keys().partition(|t| outputs[*t].contains(vrp));
        if !without.is_empty() {
            targets.extend(outputs.keys().cloned());
            details.push(format!(
                "{vrp}: accepted by [{}], missing from [{}]",
                with.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
                without.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
    }
    if details.is_empty() {
        return None;
    }
    Some(Finding {
        kind: OracleKind::Consistency,
        targets: targets.into_iter().collect(),
        summary: format!("accepted VRPs differ in {} triple(s)", details.len()),
        details,
    })
}

/// Parsed outputs of the runs whose output could be read.
pub fn parsed_outputs(runs: &[TargetRun], cfgs: &[TargetConfig]) -> BTreeMap<String, BTreeSet<Vrp>> {
    runs.iter()
        .zip(cfgs)
        .filter_map(|(r, c)| {
            let text = r.output.as_deref().filter(|o| !o.trim().is_empty())?;
            parse_output(c.output_format, text).ok().map(|s| (r.target.clone(), s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz_orchestrator::config::OutputFormat;

    fn cfg() -> TargetConfig {
        serde_json::from_value(serde_json::json!({
            "name": "t", "binary": "sh", "output_format": "csv", "crash_keywords": ["panic"]
        }))
        .unwrap()
    }

    fn run(exit: ExitState, output: Option<&str>, log: &str) -> TargetRun {
        TargetRun { target: "t".into(), exit, runtime_secs: 1.0, output: output.map(str::to_string), log: log.into() }
    }

    const GOOD: &str = "AS64496,192.0.2.0/24,24\n";

    #[test]
    fn crash_rules() {
        assert!(oracle_crash(&run(ExitState::Code(0), Some(GOOD), "ok"), &cfg()).is_none());
        assert!(oracle_crash(&run(ExitState::Code(0), Some(""), "ok"), &cfg()).is_some());
        assert!(oracle_crash(&run(ExitState::Code(0), None, "ok"), &cfg()).is_some());
        assert!(oracle_crash(&run(ExitState::Signal(6), Some(GOOD), "ok"), &cfg()).is_some());
        let f = oracle_crash(&run(ExitState::Code(0), Some(GOOD), "a\npanic: boom\nb"), &cfg()).unwrap();
        assert!(f.details.iter().any(|l| l.contains("boom")));
        assert!(oracle_crash(&run(ExitState::TimedOut, None, ""), &cfg()).is_none());
    }

    #[test]
    fn stall_threshold() {
        let mut r = run(ExitState::Code(0), Some(GOOD), "");
        r.runtime_secs = 2.5;
        assert!(oracle_stall(&r, 1.0).is_some());
        r.runtime_secs = 1.9;
        assert!(oracle_stall(&r, 1.0).is_none());
        assert_eq!(baseline(&[1.0, 2.0, 3.0, 4.0, 5.0]), Some(3.0));
    }

    #[test]
    fn integrity_fails_closed() {
        let roa: Vrp = "AS64496,192.0.2.0/24,24".parse().unwrap();
        let c = cfg();
        assert!(oracle_integrity(&run(ExitState::Code(0), Some(GOOD), ""), &c, &roa).is_none());
        assert!(oracle_integrity(&run(ExitState::Code(0), Some("AS1,10.0.0.0/8,8"), ""), &c, &roa).is_some());
        let f = oracle_integrity(&run(ExitState::Code(0), Some("not,a,vrp"), ""), &c, &roa).unwrap();
        assert!(f.summary.contains("unparseable"));
        assert_eq!(c.output_format, OutputFormat::Csv);
    }

    #[test]
    fn consistency_names_triples() {
        let a: BTreeSet<Vrp> = ["AS1,10.0.0.0/8,8".parse().unwrap(), "AS2,10.0.0.0/8,9".parse().unwrap()].into();
        let b: BTreeSet<Vrp> = ["AS1,10.0.0.0/8,8".parse().unwrap()].into();
        let one: BTreeMap<_, _> = [("a".to_string(), a.clone())].into();
        assert!(oracle_consistency(&one).is_none());
        let same: BTreeMap<_, _> = [("a".to_string(), a.clone()), ("b".to_string(), a.clone())].into();
        assert!(oracle_consistency(&same).is_none());
        let diff: BTreeMap<_, _> = [("a".to_string(), a), ("b".to_string(), b)].into();
        let f = oracle_consistency(&diff).unwrap();
        assert_eq!(f.details, ["AS2,10.0.0.0/8,9: accepted by [a], missing from [b]"]);
    }
}
