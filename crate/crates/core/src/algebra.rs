//! Policy composition: nullification, conjunction, disjunction, requirement
//! reversal, and bounded-universe coverage and containment.
//!
//! Composite policies are evaluated at match level. Each sub-expression maps
//! a match tuple (basic graph, variables, edge map, isolated-node map,
//! bindings) to whether the requirement holds on it. An expression is upheld
//! when every tuple maps to true.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use crate::matching::{
    check_requirement, find_matches_capped, Match, MatchError, PatternIndex, Pivot, SearchOptions,
    DEFAULT_MATCH_CAP,
};
use crate::policy::{domain_of, requirement_of, CanonicalGraph, PatternGraph, PolicyGraph};
use crate::predicates::{Bindings, Expr};
use crate::system::{SnapshotRef, SystemGraph, TraceRecord};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("`{0}` and `{1}` do not have identical domains")]
    DomainMismatch(String, String),
    #[error("the universe holds {systems} systems, above the ceiling of {ceiling}")]
    CeilingExceeded { systems: String, ceiling: u64 },
    #[error("invalid universe bounds: {0}")]
    BadBounds(String),
    #[error(transparent)]
    Match(#[from] MatchError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyExpr {
    Atom(PolicyGraph),
    Null,
    And(Vec<PolicyExpr>),
    Or(Vec<PolicyExpr>),
    Rev(Box<PolicyExpr>),
}

impl fmt::Display for PolicyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, op: &str, xs: &[PolicyExpr]| {
            write!(f, "{op}(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{x}")?;
            }
            f.write_str(")")
        };
        match self {
            PolicyExpr::Atom(p) => f.write_str(&p.name),
            PolicyExpr::Null => f.write_str("null"),
            PolicyExpr::And(xs) => list(f, "and", xs),
            PolicyExpr::Or(xs) => list(f, "or", xs),
            PolicyExpr::Rev(x) => write!(f, "~{x}"),
        }
    }
}

impl PolicyExpr {
    pub fn atoms(&self) -> Vec<&PolicyGraph> {
        match self {
            PolicyExpr::Atom(p) => vec![p],
            PolicyExpr::Null => vec![],
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) => xs.iter().flat_map(PolicyExpr::atoms).collect(),
            PolicyExpr::Rev(x) => x.atoms(),
        }
    }

    /// True when some `and`/`or` combines atoms over different basic graphs,
    /// so their match tuples are never shared.
    pub fn mixes_graphs(&self) -> bool {
        match self {
            PolicyExpr::And(xs) | PolicyExpr::Or(xs) => {
                let shapes: BTreeSet<CanonicalGraph> =
                    self.atoms().iter().map(|p| p.graph.canonical()).collect();
                shapes.len() > 1 || xs.iter().any(PolicyExpr::mixes_graphs)
            }
            PolicyExpr::Rev(x) => x.mixes_graphs(),
            _ => false,
        }
    }
}

/// Identity of a match across policies.
pub type MatchKey = (
    CanonicalGraph,
    BTreeSet<String>,
    BTreeMap<String, usize>,
    BTreeMap<String, SnapshotRef>,
    Bindings,
);

pub fn match_key(p: &PolicyGraph, m: &Match) -> MatchKey {
    (
        p.graph.canonical(),
        p.vars.clone(),
        m.edge_map.clone(),
        m.iso_map.clone(),
        m.bindings.clone(),
    )
}

/// Requirement truth per match tuple.
pub fn eval_matches(
    e: &PolicyExpr,
    g: &SystemGraph,
    cap: usize,
) -> Result<BTreeMap<MatchKey, bool>, MatchError> {
    let combine = |xs: &[PolicyExpr], and: bool| -> Result<BTreeMap<MatchKey, bool>, MatchError> {
        let mut acc: BTreeMap<MatchKey, bool> = BTreeMap::new();
        for x in xs {
            for (k, v) in eval_matches(x, g, cap)? {
                acc.entry(k)
                    .and_modify(|old| *old = if and { *old && v } else { *old || v })
                    .or_insert(v);
            }
        }
        Ok(acc)
    };
    match e {
        PolicyExpr::Atom(p) => Ok(find_matches_capped(p, g, cap)?
            .into_iter()
            .map(|m| {
                let ok = check_requirement(p, &m, g).satisfied;
                (match_key(p, &m), ok)
            })
            .collect()),
        PolicyExpr::Null => Ok(BTreeMap::new()),
        PolicyExpr::And(xs) => combine(xs, true),
        PolicyExpr::Or(xs) => combine(xs, false),
        PolicyExpr::Rev(x) => Ok(eval_matches(x, g, cap)?
            .into_iter()
            .map(|(k, v)| (k, !v))
            .collect()),
    }
}

/// Upheld iff the requirement holds on every match tuple.
pub fn eval_policy_expr(e: &PolicyExpr, g: &SystemGraph, cap: usize) -> Result<bool, MatchError> {
    Ok(eval_matches(e, g, cap)?.values().all(|v| *v))
}

pub fn nullify(_p: &PolicyGraph) -> PolicyExpr {
    PolicyExpr::Null
}

/// Same domain, every requirement `true`.
pub fn nullify_graph(p: &PolicyGraph) -> PolicyGraph {
    p.with_requirements(format!("{}_null", p.name), BTreeMap::new())
}

pub fn conjoin(a: &PolicyGraph, b: &PolicyGraph) -> PolicyExpr {
    PolicyExpr::And(vec![PolicyExpr::Atom(a.clone()), PolicyExpr::Atom(b.clone())])
}

pub fn disjoin(a: &PolicyGraph, b: &PolicyGraph) -> PolicyExpr {
    PolicyExpr::Or(vec![PolicyExpr::Atom(a.clone()), PolicyExpr::Atom(b.clone())])
}

fn and_simplified(l: &Expr, r: &Expr) -> Expr {
    if l.is_true() {
        r.clone()
    } else if r.is_true() || l == r {
        l.clone()
    } else {
        Expr::and(l.clone(), r.clone())
    }
}

/// One policy whose requirements are the element-wise `&&` of both.
pub fn conjoin_same_domain(a: &PolicyGraph, b: &PolicyGraph) -> Result<PolicyGraph, AlgebraError> {
    if a.graph != b.graph || a.domain != b.domain || a.vars != b.vars {
        return Err(AlgebraError::DomainMismatch(a.name.clone(), b.name.clone()));
    }
    let requirement = a
        .requirement
        .iter()
        .map(|(id, l)| (id.clone(), and_simplified(l, &b.requirement[id])))
        .collect();
    Ok(a.with_requirements(format!("{}_and_{}", a.name, b.name), requirement))
}

/// Disjunction of single-negation policies, one per element whose
/// requirement is not constant-true.
pub fn reverse(p: &PolicyGraph) -> PolicyExpr {
    let mut targets: Vec<&str> = p
        .graph
        .element_ids()
        .filter(|id| !p.requirement[*id].is_true())
        .collect();
    if targets.is_empty() {
        // Still a policy over the same domain, violated on every match.
        targets.push(p.graph.element_ids().next().expect("policies have a node"));
    }
    PolicyExpr::Or(
        targets
            .into_iter()
            .map(|id| {
                let req = BTreeMap::from([(id.to_string(), Expr::not(p.requirement[id].clone()))]);
                PolicyExpr::Atom(p.with_requirements(format!("{}_rev_{}", p.name, id), req))
            })
            .collect(),
    )
}

/// Pushes reversal down to the atoms: `or` becomes `and` of reversals and
/// vice versa, double reversal cancels.
pub fn reverse_expr(e: &PolicyExpr) -> PolicyExpr {
    match e {
        PolicyExpr::Atom(p) => reverse(p),
        PolicyExpr::Null => PolicyExpr::Null,
        PolicyExpr::And(xs) => PolicyExpr::Or(xs.iter().map(reverse_expr).collect()),
        PolicyExpr::Or(xs) => PolicyExpr::And(xs.iter().map(reverse_expr).collect()),
        PolicyExpr::Rev(x) => (**x).clone(),
    }
}

// ---------------------------------------------------------------------------
// Bounded universes

fn default_events() -> usize {
    1
}

fn default_ceiling() -> u64 {
    1_000_000
}

/// A finite family of systems: every object has a snapshot at every
/// instance, and each instance holds up to `max_events_per_instance` events.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseBounds {
    pub max_objects: usize,
    pub max_instances: usize,
    #[serde(default = "default_events")]
    pub max_events_per_instance: usize,
    pub attributes: Vec<String>,
    pub parameters: Vec<String>,
    /// Default value domain for every attribute and parameter.
    pub values: Vec<Value>,
    #[serde(default)]
    pub attribute_domains: BTreeMap<String, Vec<Value>>,
    #[serde(default)]
    pub parameter_domains: BTreeMap<String, Vec<Value>>,
    #[serde(default = "default_ceiling")]
    pub ceiling: u64,
}

impl fmt::Display for UniverseBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<= {} objects, {} instances, <= {} events per instance, {} attributes, {} parameters",
            self.max_objects,
            self.max_instances,
            self.max_events_per_instance,
            self.attributes.len(),
            self.parameters.len()
        )
    }
}

/// A result that only holds for the systems of a bounded universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bounded<T> {
    pub result: T,
    pub systems: u64,
    pub bounds: String,
}

impl<T: fmt::Display> fmt::Display for Bounded<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (bounded: {} systems, {})",
            self.result, self.systems, self.bounds
        )
    }
}

fn multichoose(n: u128, k: usize) -> u128 {
    // C(n + k - 1, k)
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc.saturating_mul(n + i) / (i + 1);
    }
    acc
}

impl UniverseBounds {
    fn attr_domain(&self, name: &str) -> &[Value] {
        self.attribute_domains.get(name).unwrap_or(&self.values)
    }

    fn param_domain(&self, name: &str) -> &[Value] {
        self.parameter_domains.get(name).unwrap_or(&self.values)
    }

    pub fn check(&self) -> Result<(), AlgebraError> {
        let bad = |m: &str| Err(AlgebraError::BadBounds(m.to_string()));
        if self.attributes.is_empty() || self.parameters.is_empty() || self.values.is_empty() {
            return bad("attributes, parameters and values must be non-empty");
        }
        if self.max_instances == 0 {
            return bad("max_instances must be at least 1");
        }
        if self
            .attribute_domains
            .values()
            .chain(self.parameter_domains.values())
            .any(Vec::is_empty)
        {
            return bad("per-name domains must be non-empty");
        }
        Ok(())
    }

    fn attr_assignments(&self) -> Vec<Vec<(String, Value)>> {
        product(&self.attributes, |n| self.attr_domain(n))
    }

    fn param_assignments(&self) -> Vec<Vec<(String, Value)>> {
        product(&self.parameters, |n| self.param_domain(n))
    }

    /// Number of systems, saturating.
    pub fn system_count(&self) -> u128 {
        let a = self.attr_assignments().len() as u128;
        let p = self.param_assignments().len() as u128;
        let t = self.max_instances as u32;
        (0..=self.max_objects)
            .map(|n| {
                let n = n as u128;
                let snaps = a.saturating_pow(n as u32 * t);
                let choices = n * n * p;
                let per_instance: u128 = (0..=self.max_events_per_instance)
                    .map(|k| multichoose(choices, k))
                    .fold(0u128, |x, y| x.saturating_add(y));
                snaps.saturating_mul(per_instance.saturating_pow(t))
            })
            .fold(0u128, |x, y| x.saturating_add(y))
    }

    /// Object ids used by enumerated systems.
    pub fn object_ids(&self) -> Vec<String> {
        (0..self.max_objects).map(|i| format!("o{i}")).collect()
    }

    /// Calls `f` with every system in the universe.
    pub fn for_each_system<E: From<AlgebraError>>(
        &self,
        f: &mut dyn FnMut(&SystemGraph) -> Result<(), E>,
    ) -> Result<u64, E> {
        self.check()?;
        let count = self.system_count();
        if count > self.ceiling as u128 {
            return Err(AlgebraError::CeilingExceeded {
                systems: count.to_string(),
                ceiling: self.ceiling,
            }
            .into());
        }
        let attrs = self.attr_assignments();
        let params = self.param_assignments();
        let ids = self.object_ids();
        let t = self.max_instances;
        let mut seen = 0u64;
        for n in 0..=self.max_objects {
            let ids = &ids[..n];
            let np = params.len();
            let choices: Vec<(usize, usize, usize)> = (0..n)
                .flat_map(|s| (0..n).flat_map(move |d| (0..np).map(move |p| (s, d, p))))
                .collect();
            let per_instance = sequences(choices.len(), self.max_events_per_instance);
            let snap_slots = n * t;
            let mut snap_idx = vec![0usize; snap_slots];
            loop {
                let mut ev_idx = vec![0usize; t];
                loop {
                    let mut recs = Vec::new();
                    for time in 0..t {
                        for (o, id) in ids.iter().enumerate() {
                            recs.push(TraceRecord::Object {
                                time: time as u64,
                                id: id.clone(),
                                attrs: attrs[snap_idx[time * n + o]].iter().cloned().collect(),
                            });
                        }
                        for &c in &per_instance[ev_idx[time]] {
                            let (s, d, p) = choices[c];
                            recs.push(TraceRecord::Event {
                                time: time as u64,
                                src: ids[s].clone(),
                                dest: ids[d].clone(),
                                params: params[p].iter().cloned().collect(),
                            });
                        }
                    }
                    let g = SystemGraph::ingest(recs).expect("enumerated traces are well formed");
                    f(&g)?;
                    seen += 1;
                    if !odometer(&mut ev_idx, per_instance.len()) {
                        break;
                    }
                }
                if !odometer(&mut snap_idx, attrs.len()) {
                    break;
                }
            }
        }
        Ok(seen)
    }
}

/// Advances a mixed counter; false once it wraps around.
fn odometer(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Non-decreasing index sequences of length 0..=k over 0..n.
fn sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().copied().unwrap_or(0);
            for c in start..n {
                let mut t: Vec<usize> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn product<'a>(names: &[String], domain: impl Fn(&str) -> &'a [Value]) -> Vec<Vec<(String, Value)>> {
    let mut out = vec![vec![]];
    for n in names {
        let mut next = Vec::new();
        for partial in &out {
            for v in domain(n) {
                let mut p: Vec<(String, Value)> = partial.clone();
                p.push((n.clone(), v.clone()));
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    Greater,
    Lesser,
    Equal,
    Incomparable,
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coverage::Greater => "greater",
            Coverage::Lesser => "lesser",
            Coverage::Equal => "equal",
            Coverage::Incomparable => "incomparable",
        })
    }
}

/// How a match is compared across two patterns. Patterns over the same
/// basic graph compare full tuples; otherwise only the system elements
/// used are compared.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum CoverKey {
    Tuple(Match),
    Footprint(BTreeSet<usize>, BTreeSet<SnapshotRef>),
}

fn binding_candidates(u: &UniverseBounds, patterns: &[&PatternGraph]) -> Vec<Value> {
    let mut out: BTreeSet<Value> = u.values.iter().cloned().collect();
    out.extend(
        u.attribute_domains
            .values()
            .chain(u.parameter_domains.values())
            .flatten()
            .cloned(),
    );
    for pg in patterns {
        out.extend(pg.pred.values().flat_map(Expr::constants));
    }
    out.extend((0..u.max_instances).map(|t| Value::int(t as i64)));
    out.extend(u.object_ids().into_iter().map(Value::Text));
    out.into_iter().collect()
}

fn cover_keys(
    pg: &PatternGraph,
    g: &SystemGraph,
    opts: &SearchOptions,
    same_shape: bool,
) -> Result<BTreeSet<CoverKey>, MatchError> {
    let ix = PatternIndex::build("", pg.clone(), g);
    Ok(ix
        .search(g, Pivot::Any, opts)?
        .into_iter()
        .map(|m| {
            if same_shape {
                CoverKey::Tuple(m)
            } else {
                CoverKey::Footprint(m.events(), m.iso_map.into_values().collect())
            }
        })
        .collect())
}

/// Compares the matches of two patterns on every system of `u`.
pub fn coverage_compare(
    g1: &PatternGraph,
    g2: &PatternGraph,
    u: &UniverseBounds,
) -> Result<Bounded<Coverage>, AlgebraError> {
    let opts = SearchOptions {
        cap: DEFAULT_MATCH_CAP,
        enumerate: Some(binding_candidates(u, &[g1, g2])),
    };
    let same_shape = g1.graph == g2.graph;
    let (mut one_in_two, mut two_in_one) = (true, true);
    let systems = u.for_each_system::<AlgebraError>(&mut |g| {
        let m1 = cover_keys(g1, g, &opts, same_shape)?;
        let m2 = cover_keys(g2, g, &opts, same_shape)?;
        one_in_two &= m1.is_subset(&m2);
        two_in_one &= m2.is_subset(&m1);
        Ok(())
    })?;
    let result = match (one_in_two, two_in_one) {
        (true, true) => Coverage::Equal,
        (false, true) => Coverage::Greater,
        (true, false) => Coverage::Lesser,
        (false, false) => Coverage::Incomparable,
    };
    Ok(Bounded {
        result,
        systems,
        bounds: u.to_string(),
    })
}

/// Whether `p1` enforces `p2`: its domain covers at least as much and its
/// requirement at most as much.
pub fn contains(
    p1: &PolicyGraph,
    p2: &PolicyGraph,
    u: &UniverseBounds,
) -> Result<Bounded<bool>, AlgebraError> {
    let dom = coverage_compare(&domain_of(p1), &domain_of(p2), u)?;
    let req = coverage_compare(&requirement_of(p1), &requirement_of(p2), u)?;
    Ok(Bounded {
        result: matches!(dom.result, Coverage::Greater | Coverage::Equal)
            && matches!(req.result, Coverage::Lesser | Coverage::Equal),
        systems: dom.systems,
        bounds: dom.bounds,
    })
}
