//! Verdict reports as JSON Lines records or human-readable text.
//!
//! JSON Lines schema, one object per line, discriminated by `kind`:
//! - `witness`: a violating match (or, in match listings, `match` with no
//!   `satisfied` field), with the event behind every policy edge, the object
//!   behind every policy node, the complete bindings and the failing elements.
//! - `verdict`: per-policy outcome with match and violation counts.
//! - `summary`: the composed outcome over the whole policy set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::matching::{Match, RequirementOutcome, SetVerdict, Verdict};
use crate::policy::{domain_of, PolicyGraph};
use crate::system::SystemGraph;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeTarget {
    pub event: usize,
    pub time: u64,
    pub src: String,
    pub dest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTarget {
    pub object: String,
    /// Instance of the snapshot, for isolated nodes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementError {
    pub element: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessRecord {
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub satisfied: Option<bool>,
    #[serde(default)]
    pub failing: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ElementError>,
    pub edges: BTreeMap<String, EdgeTarget>,
    pub nodes: BTreeMap<String, NodeTarget>,
    pub bindings: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub policy: String,
    pub upheld: bool,
    pub matches: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub upheld: bool,
    pub policies: usize,
    pub matches: usize,
    pub violations: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportRecord {
    Witness(WitnessRecord),
    Match(WitnessRecord),
    Verdict(VerdictRecord),
    Summary(SummaryRecord),
}

pub fn witness_record(
    p: &PolicyGraph,
    m: &Match,
    outcome: Option<&RequirementOutcome>,
    g: &SystemGraph,
) -> WitnessRecord {
    let edges = m
        .edge_map
        .iter()
        .map(|(id, &i)| {
            let e = g.event(i);
            (
                id.clone(),
                EdgeTarget {
                    event: i,
                    time: e.time,
                    src: e.src.clone(),
                    dest: e.dest.clone(),
                },
            )
        })
        .collect();
    let nodes = m
        .node_objects(&domain_of(p), g)
        .into_iter()
        .map(|(n, object)| {
            let time = m.iso_map.get(&n).map(|s| s.time);
            (n, NodeTarget { object, time })
        })
        .collect();
    WitnessRecord {
        policy: p.name.clone(),
        satisfied: outcome.map(|o| o.satisfied),
        failing: outcome.map(|o| o.failing.clone()).unwrap_or_default(),
        errors: outcome
            .map(|o| {
                o.errors
                    .iter()
                    .map(|(element, message)| ElementError {
                        element: element.clone(),
                        message: message.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default(),
        edges,
        nodes,
        bindings: m.bindings.clone(),
    }
}

/// A batch check of a policy set.
#[derive(Debug, Clone)]
pub struct Report {
    pub verdict: SetVerdict,
    pub elapsed: Duration,
}

impl Report {
    pub fn matches(&self) -> usize {
        self.verdict.verdicts.iter().map(|v| v.witnesses.len()).sum()
    }

    pub fn violations(&self) -> usize {
        self.verdict.verdicts.iter().map(|v| v.violations().count()).sum()
    }

    /// Verdict and violating-witness records per policy, then the summary.
    pub fn records(&self, policies: &[PolicyGraph], g: &SystemGraph) -> Vec<ReportRecord> {
        let mut out = Vec::new();
        for (p, v) in policies.iter().zip(&self.verdict.verdicts) {
            out.push(ReportRecord::Verdict(VerdictRecord {
                policy: v.policy.clone(),
                upheld: v.upheld,
                matches: v.witnesses.len(),
                violations: v.violations().count(),
            }));
            for w in v.violations() {
                out.push(ReportRecord::Witness(witness_record(
                    p,
                    &w.m,
                    Some(&w.outcome),
                    g,
                )));
            }
        }
        out.push(ReportRecord::Summary(SummaryRecord {
            upheld: self.verdict.upheld,
            policies: self.verdict.verdicts.len(),
            matches: self.matches(),
            violations: self.violations(),
            elapsed_ms: self.elapsed.as_millis() as u64,
        }));
        out
    }

    pub fn text(&self, policies: &[PolicyGraph], g: &SystemGraph) -> String {
        let mut out = String::new();
        for (p, v) in policies.iter().zip(&self.verdict.verdicts) {
            verdict_text(&mut out, p, v, g);
        }
        let failed = self.verdict.verdicts.iter().filter(|v| !v.upheld).count();
        let _ = writeln!(
            out,
            "composed: {} ({} of {} policies violated, {} matches, {} ms)",
            if self.verdict.upheld { "upheld" } else { "VIOLATED" },
            failed,
            self.verdict.verdicts.len(),
            self.matches(),
            self.elapsed.as_millis()
        );
        out
    }
}

pub fn to_jsonl(records: &[ReportRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialise") + "\n")
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<ReportRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

fn describe(w: &WitnessRecord) -> String {
    let mut parts = Vec::new();
    if !w.edges.is_empty() {
        let edges: Vec<String> = w
            .edges
            .iter()
            .map(|(id, e)| format!("{id}=#{} (t={} {}->{})", e.event, e.time, e.src, e.dest))
            .collect();
        parts.push(format!("edges {}", edges.join(", ")));
    }
    let nodes: Vec<String> = w
        .nodes
        .iter()
        .map(|(id, n)| match n.time {
            Some(t) => format!("{id}={}@{t}", n.object),
            None => format!("{id}={}", n.object),
        })
        .collect();
    parts.push(format!("nodes {}", nodes.join(", ")));
    if !w.bindings.is_empty() {
        let b: Vec<String> = w.bindings.iter().map(|(k, v)| format!("${k}={v}")).collect();
        parts.push(format!("bindings {}", b.join(", ")));
    }
    if !w.failing.is_empty() {
        parts.push(format!("failing {}", w.failing.join(", ")));
    }
    for e in &w.errors {
        parts.push(format!("error on {}: {}", e.element, e.message));
    }
    parts.join("; ")
}

/// Groups witnesses that use the same events, snapshots and bindings, which
/// happens when interchangeable policy elements permute.
fn collapse(records: Vec<WitnessRecord>) -> Vec<(WitnessRecord, usize)> {
    type Key = (
        Vec<usize>,
        Vec<(String, Option<u64>)>,
        BTreeMap<String, Value>,
        Vec<String>,
    );
    let mut groups: BTreeMap<Key, (WitnessRecord, usize)> = BTreeMap::new();
    for w in records {
        let mut events: Vec<usize> = w.edges.values().map(|e| e.event).collect();
        events.sort();
        let mut objects: Vec<(String, Option<u64>)> =
            w.nodes.values().map(|n| (n.object.clone(), n.time)).collect();
        objects.sort();
        let mut failing = w.failing.clone();
        failing.sort();
        let key = (events, objects, w.bindings.clone(), failing);
        groups.entry(key).or_insert_with(|| (w, 0)).1 += 1;
    }
    groups.into_values().collect()
}

fn write_collapsed(out: &mut String, label: &str, records: Vec<WitnessRecord>) {
    let groups = collapse(records);
    for (w, n) in groups {
        let times = if n > 1 {
            format!(" x{n} (symmetric duplicates collapsed)")
        } else {
            String::new()
        };
        let _ = writeln!(out, "  {label}{times}: {}", describe(&w));
    }
}

fn verdict_text(out: &mut String, p: &PolicyGraph, v: &Verdict, g: &SystemGraph) {
    let _ = writeln!(
        out,
        "policy {}: {} ({} matches, {} failing)",
        v.policy,
        if v.upheld { "upheld" } else { "VIOLATED" },
        v.witnesses.len(),
        v.violations().count()
    );
    let failing = v
        .violations()
        .map(|w| witness_record(p, &w.m, Some(&w.outcome), g))
        .collect();
    write_collapsed(out, "violation", failing);
}

/// Match listing without requirement checking.
pub fn match_records(p: &PolicyGraph, matches: &[Match], g: &SystemGraph) -> Vec<ReportRecord> {
    matches
        .iter()
        .map(|m| ReportRecord::Match(witness_record(p, m, None, g)))
        .collect()
}

pub fn match_text(p: &PolicyGraph, matches: &[Match], g: &SystemGraph) -> String {
    let mut out = format!("policy {}: {} matches\n", p.name, matches.len());
    let records = matches.iter().map(|m| witness_record(p, m, None, g)).collect();
    write_collapsed(&mut out, "match", records);
    out
}
