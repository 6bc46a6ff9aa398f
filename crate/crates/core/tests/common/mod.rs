//! Random small systems and policies, plus a brute-force matcher that shares
//! no code with the engine beyond the data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use lasco_core::matching::Match;
use lasco_core::policy::{parse_policy, PolicyGraph};
use lasco_core::system::{SnapshotRef, SystemGraph, TraceRecord};
use lasco_core::Value;
use rand::seq::SliceRandom;
use rand::Rng;

pub const NODE_ATTRS: [&str; 2] = ["p", "q"];
pub const EDGE_ATTRS: [&str; 3] = ["m", "n", "time"];
pub const VARS: [&str; 2] = ["X", "Y"];
/// Attribute and parameter values; instances also stay within 0..3.
pub const VALUES: [i64; 3] = [0, 1, 2];

type Ctx = BTreeMap<String, i64>;
/// Isolated policy node to (object, instance).
type IsoMap = BTreeMap<String, (String, u64)>;
type Shape = (
    &'static [&'static str],
    &'static [(&'static str, &'static str, &'static str)],
);

// ---------------------------------------------------------------------------
// Systems

#[derive(Debug, Clone)]
pub struct Sys {
    /// Declared snapshots only.
    pub declared: BTreeMap<(String, u64), Ctx>,
    /// Sorted by time.
    pub events: Vec<(String, String, u64, Ctx)>,
    pub instances: u64,
}

fn random_ctx(rng: &mut impl Rng, names: &[&str]) -> Ctx {
    let mut c = Ctx::new();
    for n in names {
        if !rng.gen_bool(0.2) {
            c.insert(n.to_string(), *VALUES.choose(rng).unwrap());
        }
    }
    c
}

impl Sys {
    /// At most `max_objects` objects and `max_events` events.
    pub fn random(rng: &mut impl Rng, max_objects: usize, max_events: usize) -> Sys {
        let n = rng.gen_range(1..=max_objects);
        let instances = rng.gen_range(1..=3u64);
        let ids: Vec<String> = (0..n).map(|i| format!("o{i}")).collect();
        let mut declared = BTreeMap::new();
        for id in &ids {
            declared.insert((id.clone(), 0), random_ctx(rng, &NODE_ATTRS));
            for t in 1..instances {
                if rng.gen_bool(0.3) {
                    declared.insert((id.clone(), t), random_ctx(rng, &NODE_ATTRS));
                }
            }
        }
        let mut events: Vec<_> = (0..rng.gen_range(0..=max_events))
            .map(|_| {
                (
                    ids.choose(rng).unwrap().clone(),
                    ids.choose(rng).unwrap().clone(),
                    rng.gen_range(0..instances),
                    random_ctx(rng, &EDGE_ATTRS[..2]),
                )
            })
            .collect();
        events.sort_by_key(|e| e.2);
        Sys {
            declared,
            events,
            instances,
        }
    }

    /// Objects first within each instance, then events, in order.
    pub fn records(&self) -> Vec<TraceRecord> {
        let val = |c: &Ctx| -> BTreeMap<String, Value> {
            c.iter().map(|(k, v)| (k.clone(), Value::int(*v))).collect()
        };
        let mut out = Vec::new();
        for t in 0..self.instances {
            for ((id, time), attrs) in &self.declared {
                if *time == t {
                    out.push(TraceRecord::Object {
                        time: t,
                        id: id.clone(),
                        attrs: val(attrs),
                    });
                }
            }
            for (src, dest, time, params) in &self.events {
                if *time == t {
                    out.push(TraceRecord::Event {
                        time: t,
                        src: src.clone(),
                        dest: dest.clone(),
                        params: val(params),
                    });
                }
            }
        }
        out
    }

    pub fn graph(&self) -> SystemGraph {
        SystemGraph::ingest(self.records()).expect("generated traces ingest")
    }

    /// Latest declared attributes at or before `t`.
    pub fn attrs_at(&self, id: &str, t: u64) -> &Ctx {
        (0..=t)
            .rev()
            .find_map(|s| self.declared.get(&(id.to_string(), s)))
            .expect("objects are declared at instance 0")
    }

    /// Declared snapshots plus those implied by event endpoints.
    pub fn snapshots(&self) -> BTreeSet<(String, u64)> {
        let mut out: BTreeSet<_> = self.declared.keys().cloned().collect();
        for (s, d, t, _) in &self.events {
            out.insert((s.clone(), *t));
            out.insert((d.clone(), *t));
        }
        out
    }

    fn params(&self, i: usize) -> Ctx {
        let mut c = self.events[i].3.clone();
        c.insert("time".into(), self.events[i].2 as i64);
        c
    }
}

// ---------------------------------------------------------------------------
// Predicates

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Neq,
    Lt,
    Ge,
}

impl Op {
    fn apply(self, a: i64, b: i64) -> bool {
        match self {
            Op::Eq => a == b,
            Op::Neq => a != b,
            Op::Lt => a < b,
            Op::Ge => a >= b,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Op::Eq => "=",
            Op::Neq => "!=",
            Op::Lt => "<",
            Op::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Operand {
    Const(i64),
    Var(String),
}

#[derive(Debug, Clone)]
pub enum Pred {
    True,
    /// attribute op operand
    Cmp(String, Op, Operand),
    /// $var = attribute
    Bind(String, String),
    /// $var op operand
    VarCmp(String, Op, Operand),
    Not(Box<Pred>),
    And(Vec<Pred>),
    Or(Vec<Pred>),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Const(c) => write!(f, "{c}"),
            Operand::Var(v) => write!(f, "${v}"),
        }
    }
}

impl fmt::Display for Pred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, xs: &[Pred], sep: &str| -> fmt::Result {
            f.write_str("(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{x}")?;
            }
            f.write_str(")")
        };
        match self {
            Pred::True => f.write_str("true"),
            Pred::Cmp(a, op, r) => write!(f, "{a} {} {r}", op.symbol()),
            Pred::Bind(v, a) => write!(f, "${v} = {a}"),
            Pred::VarCmp(v, op, r) => write!(f, "${v} {} {r}", op.symbol()),
            Pred::Not(p) => write!(f, "!({p})"),
            Pred::And(xs) if xs.is_empty() => f.write_str("true"),
            Pred::And(xs) => join(f, xs, " && "),
            Pred::Or(xs) => join(f, xs, " || "),
        }
    }
}

impl Pred {
    /// A missing attribute makes its comparison false.
    pub fn eval(&self, ctx: &Ctx, b: &BTreeMap<String, i64>) -> bool {
        let operand = |r: &Operand| match r {
            Operand::Const(c) => *c,
            Operand::Var(v) => b[v],
        };
        match self {
            Pred::True => true,
            Pred::Cmp(a, op, r) => ctx.get(a).is_some_and(|x| op.apply(*x, operand(r))),
            Pred::Bind(v, a) => ctx.get(a).is_some_and(|x| *x == b[v]),
            Pred::VarCmp(v, op, r) => op.apply(b[v], operand(r)),
            Pred::Not(p) => !p.eval(ctx, b),
            Pred::And(xs) => xs.iter().all(|x| x.eval(ctx, b)),
            Pred::Or(xs) => xs.iter().any(|x| x.eval(ctx, b)),
        }
    }
}

/// Conjuncts printed without outer parentheses, so binding conjuncts stay
/// at the top level.
fn conjunction(xs: &[Pred]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" && ")
}

fn random_operand(rng: &mut impl Rng, vars: &[String]) -> Operand {
    if !vars.is_empty() && rng.gen_bool(0.35) {
        Operand::Var(vars.choose(rng).unwrap().clone())
    } else {
        Operand::Const(*VALUES.choose(rng).unwrap())
    }
}

fn random_op(rng: &mut impl Rng) -> Op {
    *[Op::Eq, Op::Neq, Op::Lt, Op::Ge].choose(rng).unwrap()
}

fn random_atom(rng: &mut impl Rng, attrs: &[&str], vars: &[String]) -> Pred {
    Pred::Cmp(
        attrs.choose(rng).unwrap().to_string(),
        random_op(rng),
        random_operand(rng, vars),
    )
}

fn random_clause(rng: &mut impl Rng, attrs: &[&str], vars: &[String]) -> Pred {
    match rng.gen_range(0..4) {
        0 | 1 => random_atom(rng, attrs, vars),
        2 => Pred::Not(Box::new(random_atom(rng, attrs, vars))),
        _ => Pred::Or(vec![random_atom(rng, attrs, vars), random_atom(rng, attrs, vars)]),
    }
}

// ---------------------------------------------------------------------------
// Policies

#[derive(Debug, Clone)]
pub struct GenPolicy {
    pub name: String,
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String, String)>,
    pub domain: BTreeMap<String, Vec<Pred>>,
    pub requirement: BTreeMap<String, Pred>,
    pub vars: Vec<String>,
}

const SHAPES: &[Shape] = &[
    (&["a", "b"], &[("e1", "a", "b")]),
    (&["a", "b"], &[("e1", "a", "b"), ("e2", "a", "b")]),
    (&["a", "b", "c"], &[("e1", "a", "b"), ("e2", "b", "c")]),
    (&["a"], &[("e1", "a", "a")]),
    (&["a", "b", "c"], &[("e1", "a", "b")]),
    (&["a"], &[]),
    (&["a", "b"], &[("e1", "a", "b"), ("e2", "b", "a")]),
    (&["a", "b"], &[]),
];

pub fn shape_count() -> usize {
    SHAPES.len()
}

impl GenPolicy {
    /// A policy satisfying R1 and R2 on the given shape.
    pub fn random(rng: &mut impl Rng, name: &str, shape: usize) -> GenPolicy {
        let (nodes, edges) = SHAPES[shape];
        let nodes: Vec<String> = nodes.iter().map(|s| s.to_string()).collect();
        let edges: Vec<(String, String, String)> = edges
            .iter()
            .map(|(e, s, d)| (e.to_string(), s.to_string(), d.to_string()))
            .collect();
        let elements: Vec<(String, bool)> = nodes
            .iter()
            .map(|n| (n.clone(), true))
            .chain(edges.iter().map(|e| (e.0.clone(), false)))
            .collect();
        let attrs_of = |is_node: bool| if is_node { &NODE_ATTRS[..] } else { &EDGE_ATTRS[..] };

        let k = rng.gen_range(0..=VARS.len());
        let vars: Vec<String> = VARS[..k].iter().map(|v| v.to_string()).collect();
        let mut domain: BTreeMap<String, Vec<Pred>> =
            elements.iter().map(|(e, _)| (e.clone(), vec![])).collect();
        for v in &vars {
            let (e, is_node) = elements.choose(rng).unwrap();
            let attr = attrs_of(*is_node).choose(rng).unwrap();
            domain
                .get_mut(e)
                .unwrap()
                .push(Pred::Bind(v.clone(), attr.to_string()));
        }
        for (e, is_node) in &elements {
            for _ in 0..rng.gen_range(0..=2) {
                let c = random_clause(rng, attrs_of(*is_node), &vars);
                domain.get_mut(e).unwrap().push(c);
            }
        }
        let mut requirement = BTreeMap::new();
        for (e, is_node) in &elements {
            let r = if rng.gen_bool(0.4) {
                Pred::True
            } else if *is_node {
                if vars.is_empty() {
                    Pred::True
                } else {
                    Pred::VarCmp(
                        vars.choose(rng).unwrap().clone(),
                        random_op(rng),
                        random_operand(rng, &vars),
                    )
                }
            } else {
                random_clause(rng, &EDGE_ATTRS, &vars)
            };
            requirement.insert(e.clone(), r);
        }
        GenPolicy {
            name: name.to_string(),
            nodes,
            edges,
            domain,
            requirement,
            vars,
        }
    }

    pub fn text(&self) -> String {
        let clauses = |id: &str| {
            let mut s = String::new();
            if !self.domain[id].is_empty() {
                s += &format!(" domain: {}", conjunction(&self.domain[id]));
            }
            if !matches!(self.requirement[id], Pred::True) {
                s += &format!(" req: {}", self.requirement[id]);
            }
            s
        };
        let mut out = format!("policy {} {{\n", self.name);
        for n in &self.nodes {
            out += &format!("  node {n}{}\n", clauses(n));
        }
        for (e, s, d) in &self.edges {
            out += &format!("  edge {e}: {s} -> {d}{}\n", clauses(e));
        }
        out + "}\n"
    }

    pub fn parsed(&self) -> PolicyGraph {
        parse_policy(&self.text()).unwrap_or_else(|e| panic!("{e}\n{}", self.text()))
    }

    fn isolated(&self) -> Vec<&String> {
        self.nodes
            .iter()
            .filter(|n| !self.edges.iter().any(|(_, s, d)| s == *n || d == *n))
            .collect()
    }

    fn domain_holds(&self, id: &str, ctx: &Ctx, b: &BTreeMap<String, i64>) -> bool {
        self.domain[id].iter().all(|c| c.eval(ctx, b))
    }
}

// ---------------------------------------------------------------------------
// Brute-force matching

/// A match as the oracle sees it, plus per-element requirement truth.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleMatch {
    pub m: Match,
    pub satisfied: bool,
}

fn assignments(vars: &[String], values: &[i64]) -> Vec<BTreeMap<String, i64>> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        out = out
            .into_iter()
            .flat_map(|b| {
                values.iter().map(move |x| {
                    let mut b = b.clone();
                    b.insert(v.clone(), *x);
                    b
                })
            })
            .collect();
    }
    out
}

/// Every (edge map, isolated-node map, complete binding) over `candidates`
/// under which all domain predicates hold.
pub fn brute_force(p: &GenPolicy, sys: &Sys, candidates: &[i64]) -> Vec<OracleMatch> {
    let iso = p.isolated();
    let snaps: Vec<(String, u64)> = sys.snapshots().into_iter().collect();
    let bindings = assignments(&p.vars, candidates);
    let mut out = Vec::new();

    let ne = sys.events.len();
    let mut edge_choice = vec![0usize; p.edges.len()];
    // odometer over event indices for each policy edge
    loop {
        let distinct = edge_choice.iter().collect::<BTreeSet<_>>().len() == edge_choice.len();
        if distinct && (p.edges.is_empty() || ne > 0) {
            if let Some(objects) = node_objects(p, sys, &edge_choice) {
                iso_choices(&iso, &snaps, &objects, &mut |iso_map| {
                    for b in &bindings {
                        if domain_holds(p, sys, &edge_choice, iso_map, b) {
                            out.push(OracleMatch {
                                m: to_match(p, &edge_choice, iso_map, b),
                                satisfied: requirement_holds(p, sys, &edge_choice, b),
                            });
                        }
                    }
                });
            }
        }
        if p.edges.is_empty() || ne == 0 || !advance(&mut edge_choice, ne) {
            break;
        }
    }
    out.sort();
    out
}

fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Node-to-object map implied by the edge choice, if consistent and injective.
fn node_objects(p: &GenPolicy, sys: &Sys, choice: &[usize]) -> Option<BTreeMap<String, String>> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for ((_, s, d), &i) in p.edges.iter().zip(choice) {
        let ev = &sys.events[i];
        for (n, o) in [(s, &ev.0), (d, &ev.1)] {
            if let Some(prev) = map.insert(n.clone(), o.clone()) {
                if &prev != o {
                    return None;
                }
            }
        }
    }
    let objs: BTreeSet<&String> = map.values().collect();
    (objs.len() == map.len()).then_some(map)
}

fn iso_choices(
    iso: &[&String],
    snaps: &[(String, u64)],
    taken: &BTreeMap<String, String>,
    f: &mut dyn FnMut(&IsoMap),
) {
    fn go(
        iso: &[&String],
        snaps: &[(String, u64)],
        used: &mut BTreeSet<String>,
        acc: &mut IsoMap,
        f: &mut dyn FnMut(&IsoMap),
    ) {
        match iso.split_first() {
            None => f(acc),
            Some((n, rest)) => {
                for s in snaps {
                    if used.contains(&s.0) {
                        continue;
                    }
                    used.insert(s.0.clone());
                    acc.insert((*n).clone(), s.clone());
                    go(rest, snaps, used, acc, f);
                    acc.remove(*n);
                    used.remove(&s.0);
                }
            }
        }
    }
    let mut used: BTreeSet<String> = taken.values().cloned().collect();
    go(iso, snaps, &mut used, &mut BTreeMap::new(), f);
}

fn domain_holds(
    p: &GenPolicy,
    sys: &Sys,
    choice: &[usize],
    iso_map: &BTreeMap<String, (String, u64)>,
    b: &BTreeMap<String, i64>,
) -> bool {
    for ((e, s, d), &i) in p.edges.iter().zip(choice) {
        let (src, dest, t, _) = &sys.events[i];
        if !p.domain_holds(e, &sys.params(i), b)
            || !p.domain_holds(s, sys.attrs_at(src, *t), b)
            || !p.domain_holds(d, sys.attrs_at(dest, *t), b)
        {
            return false;
        }
    }
    iso_map
        .iter()
        .all(|(n, (id, t))| p.domain_holds(n, sys.attrs_at(id, *t), b))
}

/// Node requirements only mention variables.
fn requirement_holds(p: &GenPolicy, sys: &Sys, choice: &[usize], b: &BTreeMap<String, i64>) -> bool {
    let empty = Ctx::new();
    p.nodes.iter().all(|n| p.requirement[n].eval(&empty, b))
        && p.edges
            .iter()
            .zip(choice)
            .all(|((e, _, _), &i)| p.requirement[e].eval(&sys.params(i), b))
}

fn to_match(
    p: &GenPolicy,
    choice: &[usize],
    iso_map: &BTreeMap<String, (String, u64)>,
    b: &BTreeMap<String, i64>,
) -> Match {
    Match {
        policy: p.name.clone(),
        edge_map: p
            .edges
            .iter()
            .zip(choice)
            .map(|((e, _, _), &i)| (e.clone(), i))
            .collect(),
        iso_map: iso_map
            .iter()
            .map(|(n, (id, time))| {
                (
                    n.clone(),
                    SnapshotRef {
                        id: id.clone(),
                        time: *time,
                    },
                )
            })
            .collect(),
        bindings: b.iter().map(|(k, v)| (k.clone(), Value::int(*v))).collect(),
    }
}

/// Binding candidates wider than any value a system can hold.
pub const CANDIDATES: [i64; 5] = [-1, 0, 1, 2, 3];

/// A fixed family of generated policies covering every shape.
pub fn policy_family(rng: &mut impl Rng, count: usize) -> Vec<GenPolicy> {
    (0..count)
        .map(|i| GenPolicy::random(rng, &format!("G{i}"), i % shape_count()))
        .collect()
}
