//! Built-in example policies with fixture traces and their expected verdicts.

use std::time::{Duration, Instant};

use crate::matching::{verdict_all, DEFAULT_MATCH_CAP};
use crate::policy::{parse_policies, validate_policy, PolicyGraph};
use crate::system::{read_trace, SystemGraph};

macro_rules! files {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../corpus/", $name)))),*]
    };
}

static FILES: &[(&str, &str)] = files![
    "fig02_simple_security.lasco",
    "fig07_atm.lasco",
    "fig08_negative_acm.lasco",
    "fig09_negative_acm_alt.lasco",
    "fig10_attribute_acl.lasco",
    "fig11_payroll_rbac.lasco",
    "fig12_chinese_wall.lasco",
    "fig13_separation_of_duty.lasco",
    "fig14_exam_ordering.lasco",
    "fig15_retrieval_limit.lasco",
    "fig16_passwd.lasco",
    "fig01.jsonl",
    "atm_400.jsonl",
    "atm_600.jsonl",
    "acm_denied_access.jsonl",
    "acm_allowed_access.jsonl",
    "acl_write.jsonl",
    "acl_read.jsonl",
    "rbac_clerk.jsonl",
    "rbac_paymaster.jsonl",
    "wall_same_class.jsonl",
    "wall_other_class.jsonl",
    "duty_same_user.jsonl",
    "duty_two_users.jsonl",
    "exam_late_submit.jsonl",
    "exam_in_order.jsonl",
    "retrieve_3.jsonl",
    "retrieve_4.jsonl",
    "passwd_opened.jsonl",
    "passwd_locked.jsonl",
];

/// (policy file, trace file, expected upheld)
static CASES: &[(&str, &str, bool)] = &[
    ("fig02_simple_security.lasco", "fig01.jsonl", false),
    ("fig07_atm.lasco", "atm_400.jsonl", true),
    ("fig07_atm.lasco", "atm_600.jsonl", false),
    ("fig08_negative_acm.lasco", "acm_denied_access.jsonl", false),
    ("fig08_negative_acm.lasco", "acm_allowed_access.jsonl", true),
    ("fig09_negative_acm_alt.lasco", "acm_denied_access.jsonl", false),
    ("fig09_negative_acm_alt.lasco", "acm_allowed_access.jsonl", true),
    ("fig10_attribute_acl.lasco", "acl_write.jsonl", false),
    ("fig10_attribute_acl.lasco", "acl_read.jsonl", true),
    ("fig11_payroll_rbac.lasco", "rbac_clerk.jsonl", false),
    ("fig11_payroll_rbac.lasco", "rbac_paymaster.jsonl", true),
    ("fig12_chinese_wall.lasco", "wall_same_class.jsonl", false),
    ("fig12_chinese_wall.lasco", "wall_other_class.jsonl", true),
    ("fig13_separation_of_duty.lasco", "duty_same_user.jsonl", false),
    ("fig13_separation_of_duty.lasco", "duty_two_users.jsonl", true),
    ("fig14_exam_ordering.lasco", "exam_late_submit.jsonl", false),
    ("fig14_exam_ordering.lasco", "exam_in_order.jsonl", true),
    ("fig15_retrieval_limit.lasco", "retrieve_3.jsonl", true),
    ("fig15_retrieval_limit.lasco", "retrieve_4.jsonl", false),
    ("fig16_passwd.lasco", "passwd_opened.jsonl", false),
    ("fig16_passwd.lasco", "passwd_locked.jsonl", true),
    ("fig16_passwd.lasco", "fig01.jsonl", true),
];

pub fn file(name: &str) -> Option<&'static str> {
    FILES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn policy_files() -> impl Iterator<Item = (&'static str, &'static str)> {
    FILES.iter().copied().filter(|(n, _)| n.ends_with(".lasco"))
}

/// Every corpus policy, parsed.
pub fn policies() -> Vec<PolicyGraph> {
    policy_files()
        .flat_map(|(n, src)| parse_policies(src).unwrap_or_else(|e| panic!("{n}: {e}")))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub policy_file: &'static str,
    pub trace_file: &'static str,
    pub expected: bool,
    /// Upheld or not, or the reason the case could not run.
    pub actual: Result<bool, String>,
    pub elapsed: Duration,
}

impl CaseResult {
    pub fn ok(&self) -> bool {
        self.actual.as_ref() == Ok(&self.expected)
    }

    pub fn line(&self) -> String {
        let word = |b: bool| if b { "upheld" } else { "violated" };
        let actual = match &self.actual {
            Ok(b) => word(*b).to_string(),
            Err(e) => format!("error: {e}"),
        };
        format!(
            "{} {} on {}: expected {}, got {} ({} ms)",
            if self.ok() { "ok  " } else { "FAIL" },
            self.policy_file,
            self.trace_file,
            word(self.expected),
            actual,
            self.elapsed.as_millis()
        )
    }
}

fn run_case(policy_file: &str, trace_file: &str) -> Result<bool, String> {
    let ps = parse_policies(file(policy_file).ok_or("missing policy")?).map_err(|e| e.to_string())?;
    for p in &ps {
        let errs = validate_policy(p);
        if !errs.is_empty() {
            return Err(errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "));
        }
    }
    let records =
        read_trace(file(trace_file).ok_or("missing trace")?.as_bytes()).map_err(|e| e.to_string())?;
    let g = SystemGraph::ingest(records).map_err(|e| e.to_string())?;
    Ok(verdict_all(&ps, &g, DEFAULT_MATCH_CAP)
        .map_err(|e| e.to_string())?
        .upheld)
}

pub fn run_corpus() -> Vec<CaseResult> {
    CASES
        .iter()
        .map(|&(policy_file, trace_file, expected)| {
            let start = Instant::now();
            let actual = run_case(policy_file, trace_file);
            CaseResult {
                policy_file,
                trace_file,
                expected,
                actual,
                elapsed: start.elapsed(),
            }
        })
        .collect()
}
