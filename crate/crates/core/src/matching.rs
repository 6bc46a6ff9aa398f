//! Domain matching, requirement checking, verdicts and the streaming monitor.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::policy::{domain_of, PatternGraph, PolicyGraph};
use crate::predicates::{
    fold, merge2, merge_conds, reduce_cond, sat_pred, substitute_vars, BinOp, Bindings, EvalContext,
    EvalError, Expr, VariableConditions,
};
use crate::system::{Applied, IngestError, SnapshotRef, SystemEvent, SystemGraph, TraceRecord};
use crate::value::Value;

pub const DEFAULT_MATCH_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("policy `{policy}` has more than {cap} matches")]
    CapExceeded { policy: String, cap: usize },
    #[error("policy `{policy}`: a match leaves {} unbound", vars.iter().map(|v| format!("${v}")).collect::<Vec<_>>().join(", "))]
    UnboundVariables { policy: String, vars: Vec<String> },
}

/// One way a policy's domain matches the system.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    pub policy: String,
    /// Policy edge id to event index.
    pub edge_map: BTreeMap<String, usize>,
    /// Isolated policy node id to object snapshot.
    pub iso_map: BTreeMap<String, SnapshotRef>,
    pub bindings: Bindings,
}

impl Match {
    /// The object each policy node is mapped to.
    pub fn node_objects(&self, pg: &PatternGraph, g: &SystemGraph) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for e in &pg.graph.edges {
            let ev = g.event(self.edge_map[&e.id]);
            out.insert(e.src.clone(), ev.src.clone());
            out.insert(e.dest.clone(), ev.dest.clone());
        }
        for (n, s) in &self.iso_map {
            out.insert(n.clone(), s.id.clone());
        }
        out
    }

    /// Event indices used, in ascending order.
    pub fn events(&self) -> BTreeSet<usize> {
        self.edge_map.values().copied().collect()
    }
}

pub fn match_node(pred: &Expr, attrs: &EvalContext, b: &Bindings) -> Result<VariableConditions, EvalError> {
    sat_pred(pred, attrs, b)
}

pub fn match_edge(pred: &Expr, params: &EvalContext, b: &Bindings) -> Result<VariableConditions, EvalError> {
    sat_pred(pred, params, b)
}

/// Checks a complete mapping under complete bindings, element by element.
pub fn match_graph(
    pg: &PatternGraph,
    edge_map: &BTreeMap<String, usize>,
    iso_map: &BTreeMap<String, SnapshotRef>,
    g: &SystemGraph,
    b: &Bindings,
) -> Result<bool, EvalError> {
    for e in &pg.graph.edges {
        let i = edge_map[&e.id];
        let parts = [
            match_edge(pg.pred(&e.id), &g.event(i).params, b)?,
            match_node(pg.pred(&e.src), g.src_attr(i), b)?,
            match_node(pg.pred(&e.dest), g.dest_attr(i), b)?,
        ];
        if !merge_conds(&parts)?.is_true() {
            return Ok(false);
        }
    }
    for n in pg.graph.isolated_nodes() {
        let s = &iso_map[n];
        let attrs = g.snapshot(&s.id, s.time).expect("mapped snapshot exists");
        if !match_node(pg.pred(n), attrs, b)?.is_true() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Search settings.
#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub cap: usize,
    /// When set, variables the pattern leaves unbound are enumerated over
    /// these values instead of being reported as an error.
    pub enumerate: Option<Vec<Value>>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            cap: DEFAULT_MATCH_CAP,
            enumerate: None,
        }
    }
}

/// What a match must touch to be reported.
#[derive(Debug, Clone, Copy)]
pub enum Pivot<'a> {
    Any,
    /// Matches using this event or, through an isolated node, one of these snapshots.
    New {
        event: Option<usize>,
        snapshots: &'a [SnapshotRef],
    },
}

/// Single-element partial matches of one pattern graph: for every edge the
/// events it can take, for every isolated node the snapshots it can take,
/// each with the variable conditions that choice imposes. Tables grow and
/// shrink with the system, and complete matches are assembled from them.
#[derive(Debug, Clone)]
pub struct PatternIndex {
    name: String,
    pg: PatternGraph,
    /// Parameter values an edge's domain pins through top-level `name = const`.
    param_keys: Vec<Vec<(String, Value)>>,
    edge_cands: Vec<Vec<(usize, VariableConditions)>>,
    isolated: Vec<String>,
    iso_cands: Vec<Vec<(SnapshotRef, VariableConditions)>>,
}

fn param_keys(pred: &Expr) -> Vec<(String, Value)> {
    pred.conjuncts()
        .into_iter()
        .filter_map(|c| match c {
            Expr::Binary(BinOp::Eq, l, r) => match (l.as_ref(), r.as_ref()) {
                (Expr::Attr(a), Expr::Const(k)) | (Expr::Const(k), Expr::Attr(a)) => {
                    Some((a.clone(), k.clone()))
                }
                _ => None,
            },
            _ => None,
        })
        .collect()
}

impl PatternIndex {
    pub fn new(name: impl Into<String>, pg: PatternGraph) -> Self {
        let param_keys = pg
            .graph
            .edges
            .iter()
            .map(|e| param_keys(pg.pred(&e.id)))
            .collect();
        let isolated: Vec<String> = pg.graph.isolated_nodes().map(str::to_string).collect();
        PatternIndex {
            name: name.into(),
            edge_cands: vec![Vec::new(); pg.graph.edges.len()],
            iso_cands: vec![Vec::new(); isolated.len()],
            isolated,
            param_keys,
            pg,
        }
    }

    /// Index over every event and snapshot of `g`.
    pub fn build(name: impl Into<String>, pg: PatternGraph, g: &SystemGraph) -> Self {
        let mut ix = Self::new(name, pg);
        for i in 0..g.events().len() {
            ix.add_event(g, i);
        }
        let snaps: Vec<SnapshotRef> = g.snapshots().map(|(s, _)| s).collect();
        for s in snaps {
            ix.add_snapshot(g, s);
        }
        ix
    }

    pub fn pattern(&self) -> &PatternGraph {
        &self.pg
    }

    fn edge_condition(&self, g: &SystemGraph, pos: usize, i: usize) -> Option<VariableConditions> {
        let pe = &self.pg.graph.edges[pos];
        let ev = g.event(i);
        if (pe.src == pe.dest) != (ev.src == ev.dest) {
            return None;
        }
        let pinned = self.param_keys[pos]
            .iter()
            .all(|(k, v)| ev.params.get(k) == Some(v));
        if !pinned {
            return None;
        }
        let none = Bindings::new();
        let parts = [
            match_edge(self.pg.pred(&pe.id), &ev.params, &none).ok()?,
            match_node(self.pg.pred(&pe.src), g.src_attr(i), &none).ok()?,
            match_node(self.pg.pred(&pe.dest), g.dest_attr(i), &none).ok()?,
        ];
        let vc = merge_conds(&parts).ok()?;
        (!vc.is_false()).then_some(vc)
    }

    pub fn add_event(&mut self, g: &SystemGraph, i: usize) {
        for pos in 0..self.edge_cands.len() {
            if let Some(vc) = self.edge_condition(g, pos, i) {
                self.edge_cands[pos].push((i, vc));
            }
        }
    }

    pub fn remove_event(&mut self, i: usize) {
        for cands in &mut self.edge_cands {
            cands.retain(|(j, _)| *j != i);
        }
    }

    pub fn add_snapshot(&mut self, g: &SystemGraph, s: SnapshotRef) {
        let attrs = g.snapshot(&s.id, s.time).expect("snapshot exists");
        for (k, n) in self.isolated.iter().enumerate() {
            if let Ok(vc) =
                match_node(self.pg.pred(n), attrs, &Bindings::new()).and_then(|vc| reduce_cond(&vc))
            {
                if !vc.is_false() {
                    self.iso_cands[k].push((s.clone(), vc));
                }
            }
        }
    }

    pub fn remove_snapshot(&mut self, s: &SnapshotRef) {
        for cands in &mut self.iso_cands {
            cands.retain(|(t, _)| t != s);
        }
    }

    /// Every complete match, or only those touching the pivot.
    pub fn search(
        &self,
        g: &SystemGraph,
        pivot: Pivot,
        opts: &SearchOptions,
    ) -> Result<Vec<Match>, MatchError> {
        let mut found = BTreeSet::new();
        match pivot {
            Pivot::Any => self.run(g, None, opts, &mut found)?,
            Pivot::New { event, snapshots } => {
                if let Some(i) = event {
                    for pos in 0..self.edge_cands.len() {
                        self.run(g, Some(Slot::Edge(pos, &|j: &usize| *j == i)), opts, &mut found)?;
                    }
                }
                if !snapshots.is_empty() {
                    for k in 0..self.iso_cands.len() {
                        self.run(
                            g,
                            Some(Slot::Iso(k, &|s: &SnapshotRef| snapshots.contains(s))),
                            opts,
                            &mut found,
                        )?;
                    }
                }
            }
        }
        Ok(found.into_iter().collect())
    }

    fn run(
        &self,
        g: &SystemGraph,
        restrict: Option<Slot>,
        opts: &SearchOptions,
        found: &mut BTreeSet<Match>,
    ) -> Result<(), MatchError> {
        let mut slots: Vec<Choices> = Vec::new();
        for (pos, cands) in self.edge_cands.iter().enumerate() {
            let keep: Vec<_> = match restrict {
                Some(Slot::Edge(p, f)) if p == pos => cands.iter().filter(|(i, _)| f(i)).collect(),
                _ => cands.iter().collect(),
            };
            slots.push(Choices::Edge(pos, keep));
        }
        for (k, cands) in self.iso_cands.iter().enumerate() {
            let keep: Vec<_> = match restrict {
                Some(Slot::Iso(p, f)) if p == k => cands.iter().filter(|(s, _)| f(s)).collect(),
                _ => cands.iter().collect(),
            };
            slots.push(Choices::Iso(k, keep));
        }
        if slots.iter().any(|s| s.len() == 0) {
            return Ok(());
        }
        slots.sort_by_key(Choices::len);
        let mut search = Search {
            ix: self,
            g,
            slots,
            opts,
            found,
        };
        search.descend(0, State::default())
    }
}

enum Slot<'f> {
    Edge(usize, &'f dyn Fn(&usize) -> bool),
    Iso(usize, &'f dyn Fn(&SnapshotRef) -> bool),
}

enum Choices<'a> {
    Edge(usize, Vec<&'a (usize, VariableConditions)>),
    Iso(usize, Vec<&'a (SnapshotRef, VariableConditions)>),
}

impl Choices<'_> {
    fn len(&self) -> usize {
        match self {
            Choices::Edge(_, c) => c.len(),
            Choices::Iso(_, c) => c.len(),
        }
    }
}

#[derive(Clone, Default)]
struct State {
    acc: Option<VariableConditions>,
    node_obj: BTreeMap<String, String>,
    used_objects: BTreeSet<String>,
    used_events: BTreeSet<usize>,
    edge_map: BTreeMap<String, usize>,
    iso_map: BTreeMap<String, SnapshotRef>,
}

impl State {
    /// Maps `node` to `obj`, keeping the node assignment a consistent injection.
    fn assign(&mut self, node: &str, obj: &str) -> bool {
        match self.node_obj.get(node) {
            Some(o) => o == obj,
            None if self.used_objects.contains(obj) => false,
            None => {
                self.node_obj.insert(node.to_string(), obj.to_string());
                self.used_objects.insert(obj.to_string());
                true
            }
        }
    }

    fn merge(&mut self, vc: &VariableConditions) -> bool {
        let merged = match &self.acc {
            None => Ok(vc.clone()),
            Some(acc) => merge2(acc, vc),
        };
        match merged {
            Ok(m) if !m.is_false() => {
                self.acc = Some(m);
                true
            }
            _ => false,
        }
    }
}

struct Search<'a, 'b> {
    ix: &'a PatternIndex,
    g: &'a SystemGraph,
    slots: Vec<Choices<'a>>,
    opts: &'a SearchOptions,
    found: &'b mut BTreeSet<Match>,
}

impl Search<'_, '_> {
    fn descend(&mut self, depth: usize, st: State) -> Result<(), MatchError> {
        if depth == self.slots.len() {
            return self.finish(st);
        }
        let mut next = Vec::new();
        match &self.slots[depth] {
            Choices::Edge(pos, cands) => {
                let pe = &self.ix.pg.graph.edges[*pos];
                for (i, vc) in cands {
                    if st.used_events.contains(i) {
                        continue;
                    }
                    let ev = self.g.event(*i);
                    let mut s = st.clone();
                    if !(s.assign(&pe.src, &ev.src) && s.assign(&pe.dest, &ev.dest) && s.merge(vc)) {
                        continue;
                    }
                    s.used_events.insert(*i);
                    s.edge_map.insert(pe.id.clone(), *i);
                    next.push(s);
                }
            }
            Choices::Iso(k, cands) => {
                let node = &self.ix.isolated[*k];
                for (snap, vc) in cands {
                    let mut s = st.clone();
                    if !(s.assign(node, &snap.id) && s.merge(vc)) {
                        continue;
                    }
                    s.iso_map.insert(node.clone(), snap.clone());
                    next.push(s);
                }
            }
        }
        for s in next {
            self.descend(depth + 1, s)?;
        }
        Ok(())
    }

    fn finish(&mut self, st: State) -> Result<(), MatchError> {
        let acc = st.acc.unwrap_or_else(VariableConditions::trivial);
        let unbound: Vec<String> = self
            .ix
            .pg
            .vars
            .iter()
            .filter(|v| !acc.bindings.contains_key(*v))
            .cloned()
            .collect();
        let mut complete = Vec::new();
        if unbound.is_empty() {
            if acc.is_true() {
                complete.push(acc.bindings);
            }
        } else {
            let Some(values) = &self.opts.enumerate else {
                return Err(MatchError::UnboundVariables {
                    policy: self.ix.name.clone(),
                    vars: unbound,
                });
            };
            for_each_assignment(&unbound, values, &mut |extra| {
                let mut b = acc.bindings.clone();
                b.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
                if fold(&substitute_vars(&acc.condition, &b)).is_ok_and(|e| e.is_true()) {
                    complete.push(b);
                }
            });
        }
        for bindings in complete {
            self.found.insert(Match {
                policy: self.ix.name.clone(),
                edge_map: st.edge_map.clone(),
                iso_map: st.iso_map.clone(),
                bindings,
            });
            if self.found.len() > self.opts.cap {
                return Err(MatchError::CapExceeded {
                    policy: self.ix.name.clone(),
                    cap: self.opts.cap,
                });
            }
        }
        Ok(())
    }
}

/// Calls `f` with every assignment of `vars` over `values`.
pub fn for_each_assignment(vars: &[String], values: &[Value], f: &mut dyn FnMut(&Bindings)) {
    fn go(vars: &[String], values: &[Value], b: &mut Bindings, f: &mut dyn FnMut(&Bindings)) {
        match vars.split_first() {
            None => f(b),
            Some((v, rest)) => {
                for x in values {
                    b.insert(v.clone(), x.clone());
                    go(rest, values, b, f);
                }
                b.remove(v);
            }
        }
    }
    go(vars, values, &mut Bindings::new(), f);
}

/// All domain matches of `p` in `g`.
pub fn find_matches(p: &PolicyGraph, g: &SystemGraph) -> Result<Vec<Match>, MatchError> {
    find_matches_capped(p, g, DEFAULT_MATCH_CAP)
}

pub fn find_matches_capped(p: &PolicyGraph, g: &SystemGraph, cap: usize) -> Result<Vec<Match>, MatchError> {
    let ix = PatternIndex::build(&p.name, domain_of(p), g);
    ix.search(g, Pivot::Any, &SearchOptions { cap, enumerate: None })
}

/// Result of checking one match against the requirement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequirementOutcome {
    pub satisfied: bool,
    /// Elements whose requirement is not true, in declaration order.
    pub failing: Vec<String>,
    /// Evaluation errors by element; such elements also count as failing.
    pub errors: Vec<(String, String)>,
}

pub fn check_requirement(p: &PolicyGraph, m: &Match, g: &SystemGraph) -> RequirementOutcome {
    let mut failing = Vec::new();
    let mut errors = Vec::new();
    let mut judge = |id: &str, contexts: Vec<&EvalContext>| {
        for ctx in contexts {
            match sat_pred(p.requirement(id), ctx, &m.bindings) {
                Ok(vc) if vc.is_true() => continue,
                Ok(_) => {}
                Err(e) => errors.push((id.to_string(), e.to_string())),
            }
            failing.push(id.to_string());
            return;
        }
    };
    for n in &p.graph.nodes {
        let contexts: Vec<&EvalContext> = if p.graph.is_isolated(n) {
            let s = &m.iso_map[n];
            vec![g.snapshot(&s.id, s.time).expect("mapped snapshot exists")]
        } else {
            p.graph
                .incident(n)
                .flat_map(|e| {
                    let i = m.edge_map[&e.id];
                    let mut v = Vec::new();
                    if &e.src == n {
                        v.push(g.src_attr(i));
                    }
                    if &e.dest == n {
                        v.push(g.dest_attr(i));
                    }
                    v
                })
                .collect()
        };
        judge(n, contexts);
    }
    for e in &p.graph.edges {
        judge(&e.id, vec![&g.event(m.edge_map[&e.id]).params]);
    }
    RequirementOutcome {
        satisfied: failing.is_empty(),
        failing,
        errors,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub m: Match,
    pub outcome: RequirementOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub policy: String,
    pub upheld: bool,
    /// Every domain match with its requirement outcome.
    pub witnesses: Vec<Witness>,
}

impl Verdict {
    pub fn from_witnesses(policy: impl Into<String>, witnesses: Vec<Witness>) -> Self {
        Verdict {
            policy: policy.into(),
            upheld: witnesses.iter().all(|w| w.outcome.satisfied),
            witnesses,
        }
    }

    pub fn violations(&self) -> impl Iterator<Item = &Witness> {
        self.witnesses.iter().filter(|w| !w.outcome.satisfied)
    }
}

fn witnesses(p: &PolicyGraph, g: &SystemGraph, matches: Vec<Match>) -> Vec<Witness> {
    matches
        .into_iter()
        .map(|m| Witness {
            outcome: check_requirement(p, &m, g),
            m,
        })
        .collect()
}

pub fn verdict(p: &PolicyGraph, g: &SystemGraph, cap: usize) -> Result<Verdict, MatchError> {
    let matches = find_matches_capped(p, g, cap)?;
    Ok(Verdict::from_witnesses(&p.name, witnesses(p, g, matches)))
}

/// Verdict of a policy set: upheld iff every member is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetVerdict {
    pub upheld: bool,
    pub verdicts: Vec<Verdict>,
}

pub fn verdict_all(ps: &[PolicyGraph], g: &SystemGraph, cap: usize) -> Result<SetVerdict, MatchError> {
    let verdicts = ps
        .iter()
        .map(|p| verdict(p, g, cap))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SetVerdict {
        upheld: verdicts.iter().all(|v| v.upheld),
        verdicts,
    })
}

// ---------------------------------------------------------------------------
// Monitor

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// Decision for one pending event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub event: SystemEvent,
    pub allowed: bool,
    /// Policies a new match of this event would violate.
    pub violated: Vec<String>,
}

impl Decision {
    /// `<time>\t<src>-><dest>\t<allow|deny>\t<policies or ->`
    pub fn line(&self) -> String {
        format!(
            "{}\t{}->{}\t{}\t{}",
            self.event.time,
            self.event.src,
            self.event.dest,
            if self.allowed { "allow" } else { "deny" },
            if self.violated.is_empty() {
                "-".to_string()
            } else {
                self.violated.join(",")
            }
        )
    }
}

struct Watched {
    policy: PolicyGraph,
    index: PatternIndex,
    witnesses: Vec<Witness>,
}

/// Streaming reference monitor.
///
/// Each event is tentatively added; only matches that use it (or a snapshot
/// it carried forward) are assembled from the per-element tables. The event
/// is denied, and removed again, when any of those matches fails.
pub struct Monitor {
    graph: SystemGraph,
    watched: Vec<Watched>,
    cap: usize,
}

impl Monitor {
    pub fn new(policies: Vec<PolicyGraph>, cap: usize) -> Self {
        let watched = policies
            .into_iter()
            .map(|p| Watched {
                index: PatternIndex::new(&p.name, domain_of(&p)),
                policy: p,
                witnesses: Vec::new(),
            })
            .collect();
        Monitor {
            graph: SystemGraph::new(),
            watched,
            cap,
        }
    }

    /// The committed system so far.
    pub fn graph(&self) -> &SystemGraph {
        &self.graph
    }

    /// Current verdict of each policy over the committed system.
    pub fn verdicts(&self) -> Vec<Verdict> {
        self.watched
            .iter()
            .map(|w| Verdict::from_witnesses(&w.policy.name, w.witnesses.clone()))
            .collect()
    }

    /// Feeds one record. Events produce a decision; object records do not.
    pub fn step(&mut self, record: TraceRecord) -> Result<Option<Decision>, MonitorError> {
        let applied = self.graph.apply(record)?;
        let new_snaps = applied.new_snapshots();
        let event = match &applied {
            Applied::Event { index, .. } => Some(*index),
            Applied::Object { .. } => None,
        };
        for w in &mut self.watched {
            if let Some(i) = event {
                w.index.add_event(&self.graph, i);
            }
            for s in &new_snaps {
                w.index.add_snapshot(&self.graph, s.clone());
            }
        }

        let opts = SearchOptions {
            cap: self.cap,
            enumerate: None,
        };
        let pivot = Pivot::New {
            event,
            snapshots: &new_snaps,
        };
        let mut fresh = Vec::with_capacity(self.watched.len());
        let mut violated = Vec::new();
        for w in &self.watched {
            let found = match w.index.search(&self.graph, pivot, &opts) {
                Ok(found) => found,
                Err(e) => {
                    self.undo(&applied);
                    return Err(e.into());
                }
            };
            let ws = witnesses(&w.policy, &self.graph, found);
            if ws.iter().any(|x| !x.outcome.satisfied) {
                violated.push(w.policy.name.clone());
            }
            if w.witnesses.len() + ws.len() > self.cap {
                let policy = w.policy.name.clone();
                self.undo(&applied);
                return Err(MatchError::CapExceeded {
                    policy,
                    cap: self.cap,
                }
                .into());
            }
            fresh.push(ws);
        }

        let Some(i) = event else {
            // Object records cannot be refused; their matches are recorded.
            for (w, ws) in self.watched.iter_mut().zip(fresh) {
                w.witnesses.extend(ws);
            }
            return Ok(None);
        };
        let pending = self.graph.event(i).clone();
        let allowed = violated.is_empty();
        if allowed {
            for (w, ws) in self.watched.iter_mut().zip(fresh) {
                w.witnesses.extend(ws);
            }
        } else {
            self.undo(&applied);
        }
        Ok(Some(Decision {
            event: pending,
            allowed,
            violated,
        }))
    }

    fn undo(&mut self, applied: &Applied) {
        for w in &mut self.watched {
            if let Applied::Event { index, .. } = applied {
                w.index.remove_event(*index);
            }
            for s in applied.new_snapshots() {
                w.index.remove_snapshot(&s);
            }
        }
        self.graph.rollback(applied);
    }
}
