//! Policy graphs, pattern graphs, the policy text format and the two
//! well-formedness rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::predicates::{parse_expr, BinOp, Expr};
use crate::syntax::{tokenize, Cursor, ParseError, Pos, Tok};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolicyEdge {
    pub id: String,
    pub src: String,
    pub dest: String,
}

/// A directed multigraph of named nodes and edges.
///
/// Declaration order is kept for printing, but equality is set equality.
#[derive(Debug, Clone, Default)]
pub struct BasicGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<PolicyEdge>,
}

/// Order-insensitive form of a [`BasicGraph`], usable as a map key.
pub type CanonicalGraph = (Vec<String>, Vec<PolicyEdge>);

impl BasicGraph {
    pub fn canonical(&self) -> CanonicalGraph {
        let mut nodes = self.nodes.clone();
        nodes.sort();
        let mut edges = self.edges.clone();
        edges.sort();
        (nodes, edges)
    }

    pub fn is_isolated(&self, node: &str) -> bool {
        !self.edges.iter().any(|e| e.src == node || e.dest == node)
    }

    pub fn isolated_nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .map(String::as_str)
            .filter(|n| self.is_isolated(n))
    }

    /// Node ids followed by edge ids, in declaration order.
    pub fn element_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .map(String::as_str)
            .chain(self.edges.iter().map(|e| e.id.as_str()))
    }

    pub fn has_node(&self, id: &str) -> bool {
        self.nodes.iter().any(|n| n == id)
    }

    pub fn edge(&self, id: &str) -> Option<&PolicyEdge> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Edges touching `node`.
    pub fn incident(&self, node: &str) -> impl Iterator<Item = &PolicyEdge> {
        let node = node.to_string();
        self.edges.iter().filter(move |e| e.src == node || e.dest == node)
    }
}

impl PartialEq for BasicGraph {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

impl Eq for BasicGraph {}

/// A basic graph with one predicate per element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternGraph {
    pub graph: BasicGraph,
    pub pred: BTreeMap<String, Expr>,
    pub vars: BTreeSet<String>,
}

impl PatternGraph {
    /// Missing predicates are `true`; vars are collected from the predicates.
    pub fn new(graph: BasicGraph, mut pred: BTreeMap<String, Expr>) -> Self {
        for id in graph.element_ids() {
            pred.entry(id.to_string()).or_insert(Expr::TRUE);
        }
        let vars = pred.values().flat_map(Expr::vars).collect();
        PatternGraph { graph, pred, vars }
    }

    pub fn pred(&self, element: &str) -> &Expr {
        &self.pred[element]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyGraph {
    pub name: String,
    pub graph: BasicGraph,
    pub domain: BTreeMap<String, Expr>,
    pub requirement: BTreeMap<String, Expr>,
    pub vars: BTreeSet<String>,
}

impl PolicyGraph {
    /// Fills absent predicates with `true` and collects the variables.
    pub fn new(
        name: impl Into<String>,
        graph: BasicGraph,
        mut domain: BTreeMap<String, Expr>,
        mut requirement: BTreeMap<String, Expr>,
    ) -> Self {
        for id in graph.element_ids() {
            domain.entry(id.to_string()).or_insert(Expr::TRUE);
            requirement.entry(id.to_string()).or_insert(Expr::TRUE);
        }
        let vars = domain
            .values()
            .chain(requirement.values())
            .flat_map(Expr::vars)
            .collect();
        PolicyGraph {
            name: name.into(),
            graph,
            domain,
            requirement,
            vars,
        }
    }

    pub fn domain(&self, element: &str) -> &Expr {
        &self.domain[element]
    }

    pub fn requirement(&self, element: &str) -> &Expr {
        &self.requirement[element]
    }

    /// Same policy with every requirement replaced.
    pub fn with_requirements(&self, name: impl Into<String>, requirement: BTreeMap<String, Expr>) -> Self {
        PolicyGraph::new(name, self.graph.clone(), self.domain.clone(), requirement)
    }
}

pub fn domain_of(p: &PolicyGraph) -> PatternGraph {
    PatternGraph {
        graph: p.graph.clone(),
        pred: p.domain.clone(),
        vars: p.vars.clone(),
    }
}

pub fn requirement_of(p: &PolicyGraph) -> PatternGraph {
    PatternGraph {
        graph: p.graph.clone(),
        pred: p.requirement.clone(),
        vars: p.vars.clone(),
    }
}

// ---------------------------------------------------------------------------
// Text format

/// Parses a file holding exactly one policy block.
pub fn parse_policy(text: &str) -> Result<PolicyGraph, ParseError> {
    let mut policies = parse_policies(text)?;
    match policies.len() {
        1 => Ok(policies.remove(0)),
        n => Err(ParseError::new(
            Pos { line: 1, col: 1 },
            format!("expected exactly one policy, found {n}"),
        )),
    }
}

/// Parses every policy block in a policy-set file. Names must be unique.
pub fn parse_policies(text: &str) -> Result<Vec<PolicyGraph>, ParseError> {
    let mut cur = Cursor::new(tokenize(text)?);
    let mut out: Vec<PolicyGraph> = Vec::new();
    loop {
        cur.skip_newlines();
        if cur.peek().tok == Tok::Eof {
            return Ok(out);
        }
        let start = cur.peek().pos;
        let p = parse_block(&mut cur)?;
        if out.iter().any(|q| q.name == p.name) {
            return Err(ParseError::new(
                start,
                format!("duplicate policy name `{}`", p.name),
            ));
        }
        out.push(p);
    }
}

fn ident(cur: &mut Cursor, what: &str) -> Result<(String, Pos), ParseError> {
    let t = cur.bump();
    match t.tok {
        Tok::Ident(s) => Ok((s, t.pos)),
        other => Err(ParseError::new(t.pos, format!("expected {what}, found {other}"))),
    }
}

fn keyword(cur: &mut Cursor, kw: &str) -> Result<(), ParseError> {
    let t = cur.bump();
    match &t.tok {
        Tok::Ident(s) if s == kw => Ok(()),
        other => Err(ParseError::new(t.pos, format!("expected `{kw}`, found {other}"))),
    }
}

struct Clauses {
    domain: Option<Expr>,
    req: Option<Expr>,
}

/// Optional `domain:` and `req:` clauses, in either order, each at most once.
fn parse_clauses(cur: &mut Cursor) -> Result<Clauses, ParseError> {
    let mut c = Clauses {
        domain: None,
        req: None,
    };
    loop {
        let t = cur.peek().clone();
        let slot = match &t.tok {
            Tok::Ident(k) if k == "domain" => &mut c.domain,
            Tok::Ident(k) if k == "req" => &mut c.req,
            _ => return Ok(c),
        };
        cur.bump();
        cur.expect(&Tok::Colon)?;
        if slot.is_some() {
            return Err(ParseError::new(t.pos, format!("repeated {} clause", t.tok)));
        }
        *slot = Some(parse_expr(cur)?);
    }
}

fn parse_block(cur: &mut Cursor) -> Result<PolicyGraph, ParseError> {
    keyword(cur, "policy")?;
    let (name, name_pos) = ident(cur, "a policy name")?;
    cur.expect(&Tok::LBrace)?;

    let mut graph = BasicGraph::default();
    let mut domain = BTreeMap::new();
    let mut requirement = BTreeMap::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut endpoints: Vec<(String, Pos)> = Vec::new();

    loop {
        cur.skip_newlines();
        let t = cur.bump();
        let id = match &t.tok {
            Tok::RBrace => break,
            Tok::Ident(k) if k == "node" => {
                let (id, pos) = ident(cur, "a node id")?;
                if !seen.insert(id.clone()) {
                    return Err(ParseError::new(pos, format!("duplicate id `{id}`")));
                }
                graph.nodes.push(id.clone());
                id
            }
            Tok::Ident(k) if k == "edge" => {
                let (id, pos) = ident(cur, "an edge id")?;
                if !seen.insert(id.clone()) {
                    return Err(ParseError::new(pos, format!("duplicate id `{id}`")));
                }
                cur.expect(&Tok::Colon)?;
                let (src, src_pos) = ident(cur, "a source node id")?;
                cur.expect(&Tok::Arrow)?;
                let (dest, dest_pos) = ident(cur, "a destination node id")?;
                endpoints.push((src.clone(), src_pos));
                endpoints.push((dest.clone(), dest_pos));
                graph.edges.push(PolicyEdge {
                    id: id.clone(),
                    src,
                    dest,
                });
                id
            }
            other => {
                return Err(ParseError::new(
                    t.pos,
                    format!("expected `node`, `edge` or `}}`, found {other}"),
                ))
            }
        };
        let clauses = parse_clauses(cur)?;
        if let Some(d) = clauses.domain {
            domain.insert(id.clone(), d);
        }
        if let Some(r) = clauses.req {
            requirement.insert(id, r);
        }
        let t = cur.peek().clone();
        match t.tok {
            Tok::Newline | Tok::RBrace => {}
            other => {
                return Err(ParseError::new(
                    t.pos,
                    format!("expected end of line after declaration, found {other}"),
                ))
            }
        }
    }

    for (node, pos) in endpoints {
        if !graph.has_node(&node) {
            return Err(ParseError::new(
                pos,
                format!("edge endpoint `{node}` is not a declared node"),
            ));
        }
    }
    if graph.nodes.is_empty() {
        return Err(ParseError::new(name_pos, format!("policy `{name}` has no nodes")));
    }
    Ok(PolicyGraph::new(name, graph, domain, requirement))
}

/// Prints a policy in the text format. Constant-true predicates are omitted.
pub fn print_policy(p: &PolicyGraph) -> String {
    p.to_string()
}

impl fmt::Display for PolicyGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "policy {} {{", self.name)?;
        let clauses = |f: &mut fmt::Formatter<'_>, id: &str| -> fmt::Result {
            if !self.domain[id].is_true() {
                write!(f, " domain: {}", self.domain[id])?;
            }
            if !self.requirement[id].is_true() {
                write!(f, " req: {}", self.requirement[id])?;
            }
            writeln!(f)
        };
        for n in &self.graph.nodes {
            write!(f, "  node {n}")?;
            clauses(f, n)?;
        }
        for e in &self.graph.edges {
            write!(f, "  edge {}: {} -> {}", e.id, e.src, e.dest)?;
            clauses(f, &e.id)?;
        }
        f.write_str("}\n")
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    /// Every variable is bound by a variable-free equality in a domain
    /// predicate, outside any disjunction or negation.
    R1,
    /// Node requirements reference no attributes.
    R2,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::R1 => "R1",
            Rule::R2 => "R2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WellFormednessError {
    pub policy: String,
    pub rule: Rule,
    pub element: String,
    pub message: String,
}

impl fmt::Display for WellFormednessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} on `{}`: {}",
            self.policy, self.rule, self.element, self.message
        )
    }
}

/// Variables `e` binds in the R1 sense.
fn binding_sites(e: &Expr) -> BTreeSet<String> {
    e.conjuncts()
        .into_iter()
        .filter_map(|c| match c {
            Expr::Binary(BinOp::Eq, l, r) => match (l.as_ref(), r.as_ref()) {
                (Expr::Var(v), other) | (other, Expr::Var(v)) if !other.has_vars() => Some(v.clone()),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

pub fn validate_policy(p: &PolicyGraph) -> Vec<WellFormednessError> {
    let mut errors = Vec::new();
    let bound: BTreeSet<String> = p.domain.values().flat_map(binding_sites).collect();
    for v in p.vars.difference(&bound) {
        // Blame the first element whose domain mentions the variable, else
        // the first whose requirement does.
        let ids: Vec<&str> = p.graph.element_ids().collect();
        let element = ids
            .iter()
            .find(|id| p.domain[**id].vars().contains(v))
            .or_else(|| ids.iter().find(|id| p.requirement[**id].vars().contains(v)))
            .expect("every var occurs somewhere");
        errors.push(WellFormednessError {
            policy: p.name.clone(),
            rule: Rule::R1,
            element: element.to_string(),
            message: format!(
                "${v} is never bound by an equality with a variable-free expression outside `||` and `!` in a domain predicate"
            ),
        });
    }
    for n in &p.graph.nodes {
        let attrs = p.requirement[n].attrs();
        if !attrs.is_empty() {
            let names: Vec<String> = attrs.into_iter().collect();
            errors.push(WellFormednessError {
                policy: p.name.clone(),
                rule: Rule::R2,
                element: n.clone(),
                message: format!("node requirement references attribute(s) {}", names.join(", ")),
            });
        }
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicates::parse_predicate;

    pub const SIMPLE_SECURITY: &str = r#"
policy SimpleSecurity {
  node user domain: type="user" && sec_level=$UL
  node file domain: type="file" && sec_level=$FL
  edge read: user -> file domain: method="read" req: $UL >= $FL
}
"#;

    #[test]
    fn simple_security_parses() {
        let p = parse_policy(SIMPLE_SECURITY).unwrap();
        assert_eq!(p.name, "SimpleSecurity");
        assert_eq!(p.graph.nodes, vec!["user", "file"]);
        assert_eq!(p.graph.edges.len(), 1);
        assert_eq!(p.vars, ["FL", "UL"].iter().map(|s| s.to_string()).collect());
        assert_eq!(p.domain("read"), &parse_predicate(r#"method="read""#).unwrap());
        assert_eq!(p.requirement("read"), &parse_predicate("$UL >= $FL").unwrap());
        assert!(p.requirement("user").is_true());
        assert!(validate_policy(&p).is_empty());
        assert_eq!(domain_of(&p).graph, requirement_of(&p).graph);
    }

    #[test]
    fn single_bare_node() {
        let p = parse_policy("policy One { node n }").unwrap();
        assert!(p.domain("n").is_true() && p.requirement("n").is_true());
        assert!(p.graph.is_isolated("n"));
    }

    #[test]
    fn parallel_edges() {
        let src = r#"
policy Count {
  node c domain: service_level < 6
  node i domain: !free
  edge r1: c -> i domain: method="retrieve"
  edge r2: c -> i domain: method="retrieve"
  edge r3: c -> i domain: method="retrieve"
  edge r4: c -> i domain: method="retrieve" req: false
}"#;
        let p = parse_policy(src).unwrap();
        assert_eq!(p.graph.edges.len(), 4);
        assert!(p.requirement("r4").is_false());
    }

    #[test]
    fn clause_order_and_multi_line_parens() {
        let p = parse_policy("policy P {\n  node a req: $x > 1 domain: (k = $x\n    && j = 2)\n}\n").unwrap();
        assert_eq!(p.domain("a"), &parse_predicate("k = $x && j = 2").unwrap());
    }

    #[test]
    fn multiple_blocks() {
        let text = format!("{SIMPLE_SECURITY}\n# second\npolicy Other {{ node x }}\n");
        let ps = parse_policies(&text).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(parse_policy(&text).is_err());
        let dup = format!("{SIMPLE_SECURITY}{SIMPLE_SECURITY}");
        assert!(parse_policies(&dup)
            .unwrap_err()
            .message
            .contains("duplicate policy"));
    }

    #[test]
    fn structural_errors() {
        let e = parse_policy("policy P {\n  node a\n  node a\n}").unwrap_err();
        assert_eq!((e.line, e.message.as_str()), (3, "duplicate id `a`"));
        let e = parse_policy("policy P {\n  node a\n  edge a: a -> a\n}").unwrap_err();
        assert!(e.message.contains("duplicate id"));
        let e = parse_policy("policy P {\n  node a\n  edge e: a -> b\n}").unwrap_err();
        assert_eq!((e.line, e.col), (3, 16));
        assert!(parse_policy("policy P { }").is_err());
        assert!(parse_policy("policy P { node a domain: x = 1 domain: y = 2 }").is_err());
        assert!(parse_policy("policy P { node a extra }").is_err());
        assert!(parse_policy("policy P { node a domain: }").is_err());
        assert!(parse_policy("policy P { node a").is_err());
        assert!(parse_policy("node a").is_err());
    }

    #[test]
    fn print_round_trips() {
        let p = parse_policy(SIMPLE_SECURITY).unwrap();
        let printed = print_policy(&p);
        assert_eq!(parse_policy(&printed).unwrap(), p);
        assert!(printed.contains("edge read: user -> file domain: method = \"read\" req: $UL >= $FL"));
    }

    #[test]
    fn basic_graph_equality_ignores_order() {
        let a = parse_policy("policy P { node x\n node y\n edge e: x -> y }").unwrap();
        let b = parse_policy("policy P { node y\n edge e: x -> y\n node x }").unwrap();
        assert_eq!(a.graph, b.graph);
    }

    #[test]
    fn r1_disjunction() {
        let p = parse_policy(
            "policy P {\n node s\n node o\n edge e: s -> o domain: method=\"read\" || owner=$X req: $X != \"root\"\n}",
        )
        .unwrap();
        let errs = validate_policy(&p);
        assert_eq!(errs.len(), 1);
        assert_eq!((errs[0].rule, errs[0].element.as_str()), (Rule::R1, "e"));
    }

    #[test]
    fn r1_variants() {
        let rule_ids = |src: &str| -> Vec<Rule> {
            validate_policy(&parse_policy(src).unwrap())
                .into_iter()
                .map(|e| e.rule)
                .collect()
        };
        // Negation binds nothing.
        assert_eq!(rule_ids("policy P { node a domain: !(k = $x) }"), vec![Rule::R1]);
        // The other side must be variable-free.
        assert_eq!(
            rule_ids("policy P { node a domain: k = $x && j = $y + 1 }"),
            vec![Rule::R1]
        );
        // A variable used only in a requirement is unbound.
        assert_eq!(rule_ids("policy P { node a req: $z = 1 }"), vec![Rule::R1]);
        // Attributes on the other side are fine, and binding may live on any element.
        assert!(rule_ids("policy P { node a domain: k + 1 = $x\n node b domain: j != $x }").is_empty());
    }

    #[test]
    fn r2_node_requirement() {
        let p = parse_policy("policy P { node n req: sec_level > 3 }").unwrap();
        let errs = validate_policy(&p);
        assert_eq!(errs.len(), 1);
        assert_eq!((errs[0].rule, errs[0].element.as_str()), (Rule::R2, "n"));
        // Edge requirements may use parameters.
        let ok = parse_policy("policy P { node a\n edge e: a -> a req: amount <= 500 }").unwrap();
        assert!(validate_policy(&ok).is_empty());
    }
}
