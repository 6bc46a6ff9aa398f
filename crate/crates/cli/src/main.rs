//! `lasco`: batch checker, match lister, validator, streaming monitor,
//! policy algebra and corpus runner.
//!
//! Exit codes:
//!   0  success (policies upheld, event stream fully allowed, ...)
//!   1  violation found, an event denied, or a negative algebra answer
//!   2  usage error
//!   3  policy or trace could not be parsed or ingested
//!   4  policy failed validation
//!   5  match cap exceeded
//!   6  I/O or other error
//!   7  corpus mismatch

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use lasco_core::algebra::{
    conjoin_same_domain, contains, coverage_compare, eval_policy_expr, nullify_graph, reverse, reverse_expr,
    AlgebraError, PolicyExpr, UniverseBounds,
};
use lasco_core::corpus;
use lasco_core::matching::{
    find_matches_capped, verdict, MatchError, Monitor, MonitorError, SetVerdict, Verdict, DEFAULT_MATCH_CAP,
};
use lasco_core::policy::{domain_of, parse_policies, print_policy, validate_policy, PolicyGraph};
use lasco_core::report::{self, Report};
use lasco_core::system::{read_trace, IngestError, SystemGraph, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Check,
    Match,
    Validate,
    Monitor,
    Algebra,
    Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(
    name = "lasco",
    version,
    about = "Check systems against graph-based security policies"
)]
struct Cli {
    /// Policy files (each may hold several policies)
    #[arg(long, num_args = 1.., value_name = "FILE")]
    policies: Vec<PathBuf>,

    /// Trace file in JSON Lines, or `-` for standard input
    #[arg(long, value_name = "FILE|-")]
    trace: Option<String>,

    #[arg(long, value_enum, default_value = "check")]
    mode: Mode,

    #[arg(long, value_enum, default_value = "text")]
    report: Format,

    /// Abort when a policy has more matches than this
    #[arg(long, value_name = "N", default_value_t = DEFAULT_MATCH_CAP)]
    match_cap: usize,

    /// Universe bounds (TOML) for `contains` and `coverage`
    #[arg(long, value_name = "FILE")]
    universe: Option<PathBuf>,

    /// Evaluate policies on separate threads in check mode
    #[arg(long)]
    parallel: bool,

    /// Algebra operation and policy names, e.g. `and P1 P2`, `reverse P`,
    /// `contains P1 P2` (put them after `--` when they follow --policies)
    #[arg(value_name = "OP ARGS")]
    args: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

const VIOLATION: u8 = 1;
const USAGE: u8 = 2;
const PARSE: u8 = 3;
const INVALID: u8 = 4;
const CAP: u8 = 5;
const OTHER: u8 = 6;
const CORPUS: u8 = 7;

impl From<MatchError> for Failure {
    fn from(e: MatchError) -> Self {
        let code = match e {
            MatchError::CapExceeded { .. } => CAP,
            MatchError::UnboundVariables { .. } => INVALID,
        };
        fail(code, e.to_string())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        fail(PARSE, format!("trace: {e}"))
    }
}

impl From<AlgebraError> for Failure {
    fn from(e: AlgebraError) -> Self {
        match e {
            AlgebraError::Match(m) => m.into(),
            AlgebraError::DomainMismatch(..) => fail(INVALID, e.to_string()),
            AlgebraError::CeilingExceeded { .. } | AlgebraError::BadBounds(_) => fail(USAGE, e.to_string()),
        }
    }
}

fn io_fail(what: &str, e: io::Error) -> Failure {
    fail(OTHER, format!("{what}: {e}"))
}

fn load_policies(files: &[PathBuf]) -> Result<Vec<PolicyGraph>, Failure> {
    if files.is_empty() {
        return Err(fail(USAGE, "--policies is required in this mode"));
    }
    let mut out: Vec<PolicyGraph> = Vec::new();
    for f in files {
        let text = fs::read_to_string(f).map_err(|e| io_fail(&f.display().to_string(), e))?;
        let ps = parse_policies(&text).map_err(|e| fail(PARSE, format!("{}: {e}", f.display())))?;
        for p in ps {
            if out.iter().any(|q| q.name == p.name) {
                return Err(fail(
                    PARSE,
                    format!("{}: duplicate policy name `{}`", f.display(), p.name),
                ));
            }
            out.push(p);
        }
    }
    Ok(out)
}

fn require_valid(ps: &[PolicyGraph]) -> Result<(), Failure> {
    let errs: Vec<String> = ps
        .iter()
        .flat_map(validate_policy)
        .map(|e| e.to_string())
        .collect();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(fail(INVALID, errs.join("\n")))
    }
}

fn open_trace(trace: Option<&str>) -> Result<Box<dyn BufRead>, Failure> {
    match trace {
        None | Some("-") => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(path) => {
            let f = fs::File::open(path).map_err(|e| io_fail(path, e))?;
            Ok(Box::new(BufReader::new(f)))
        }
    }
}

fn load_system(trace: Option<&str>) -> Result<SystemGraph, Failure> {
    let trace = trace.ok_or_else(|| fail(USAGE, "--trace is required in this mode"))?;
    Ok(SystemGraph::ingest(read_trace(open_trace(Some(trace))?)?)?)
}

fn emit(out: &mut impl Write, s: &str) -> Result<(), Failure> {
    out.write_all(s.as_bytes()).map_err(|e| io_fail("stdout", e))
}

fn run_check(cli: &Cli, out: &mut impl Write) -> Result<u8, Failure> {
    let ps = load_policies(&cli.policies)?;
    require_valid(&ps)?;
    let g = load_system(cli.trace.as_deref())?;
    let start = Instant::now();
    let verdicts: Vec<Verdict> = if cli.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = ps
                .iter()
                .map(|p| s.spawn(|| verdict(p, &g, cli.match_cap)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("verdict thread panicked"))
                .collect::<Result<_, _>>()
        })?
    } else {
        ps.iter()
            .map(|p| verdict(p, &g, cli.match_cap))
            .collect::<Result<_, _>>()?
    };
    let rep = Report {
        verdict: SetVerdict {
            upheld: verdicts.iter().all(|v| v.upheld),
            verdicts,
        },
        elapsed: start.elapsed(),
    };
    match cli.report {
        Format::Text => emit(out, &rep.text(&ps, &g))?,
        Format::Jsonl => emit(out, &report::to_jsonl(&rep.records(&ps, &g)))?,
    }
    Ok(if rep.verdict.upheld { 0 } else { VIOLATION })
}

fn run_match(cli: &Cli, out: &mut impl Write) -> Result<u8, Failure> {
    let ps = load_policies(&cli.policies)?;
    require_valid(&ps)?;
    let g = load_system(cli.trace.as_deref())?;
    for p in &ps {
        let ms = find_matches_capped(p, &g, cli.match_cap)?;
        match cli.report {
            Format::Text => emit(out, &report::match_text(p, &ms, &g))?,
            Format::Jsonl => emit(out, &report::to_jsonl(&report::match_records(p, &ms, &g)))?,
        }
    }
    Ok(0)
}

fn run_validate(cli: &Cli, out: &mut impl Write) -> Result<u8, Failure> {
    let ps = load_policies(&cli.policies)?;
    let mut code = 0;
    for p in &ps {
        let errs = validate_policy(p);
        if errs.is_empty() {
            emit(out, &format!("ok {}\n", p.name))?;
        }
        for e in errs {
            code = INVALID;
            emit(out, &format!("error {e}\n"))?;
        }
    }
    Ok(code)
}

fn run_monitor(cli: &Cli, out: &mut impl Write) -> Result<u8, Failure> {
    let ps = load_policies(&cli.policies)?;
    require_valid(&ps)?;
    let input = open_trace(cli.trace.as_deref())?;
    let mut mon = Monitor::new(ps, cli.match_cap);
    let mut code = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| io_fail("trace", e))?;
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record = TraceRecord::from_json_line(&line)
            .map_err(|message| Failure::from(IngestError::Malformed { line: i + 1, message }))?;
        match mon.step(record) {
            Ok(Some(d)) => {
                if !d.allowed {
                    code = VIOLATION;
                }
                emit(out, &format!("{}\n", d.line()))?;
                out.flush().map_err(|e| io_fail("stdout", e))?;
            }
            Ok(None) => {}
            Err(MonitorError::Ingest(e)) => {
                return Err(fail(PARSE, format!("trace line {}: {e}", i + 1)));
            }
            Err(MonitorError::Match(e)) => return Err(e.into()),
        }
    }
    Ok(code)
}

fn run_corpus(out: &mut impl Write) -> Result<u8, Failure> {
    let results = corpus::run_corpus();
    for r in &results {
        emit(out, &format!("{}\n", r.line()))?;
    }
    let bad = results.iter().filter(|r| !r.ok()).count();
    emit(out, &format!("{} cases, {} mismatches\n", results.len(), bad))?;
    Ok(if bad == 0 { 0 } else { CORPUS })
}

fn load_universe(cli: &Cli) -> Result<UniverseBounds, Failure> {
    let path = cli
        .universe
        .as_ref()
        .ok_or_else(|| fail(USAGE, "--universe is required for this operation"))?;
    let text = fs::read_to_string(path).map_err(|e| io_fail(&path.display().to_string(), e))?;
    let u: UniverseBounds =
        toml::from_str(&text).map_err(|e| fail(PARSE, format!("{}: {e}", path.display())))?;
    u.check()?;
    Ok(u)
}

fn run_algebra(cli: &Cli, out: &mut impl Write) -> Result<u8, Failure> {
    let ps = load_policies(&cli.policies)?;
    require_valid(&ps)?;
    let Some((op, names)) = cli.args.split_first() else {
        return Err(fail(USAGE, "algebra mode needs an operation: and|or|reverse|reverse-or|nullify|conjoin-same|contains|coverage"));
    };
    let mut operands = Vec::new();
    for n in names {
        let p = ps
            .iter()
            .find(|p| &p.name == n)
            .ok_or_else(|| fail(USAGE, format!("no policy named `{n}`")))?;
        operands.push(p);
    }
    let arity = |k: usize| -> Result<(), Failure> {
        if operands.len() == k {
            Ok(())
        } else {
            Err(fail(USAGE, format!("`{op}` takes {k} policy name(s)")))
        }
    };

    let expr = match op.as_str() {
        "and" | "or" => {
            if operands.len() < 2 {
                return Err(fail(USAGE, format!("`{op}` takes at least two policy names")));
            }
            let atoms = operands.iter().map(|p| PolicyExpr::Atom((*p).clone())).collect();
            if op == "and" {
                PolicyExpr::And(atoms)
            } else {
                PolicyExpr::Or(atoms)
            }
        }
        "reverse" => {
            arity(1)?;
            let e = reverse(operands[0]);
            if let PolicyExpr::Or(xs) = &e {
                for x in xs {
                    if let PolicyExpr::Atom(p) = x {
                        emit(out, &format!("{}\n", print_policy(p)))?;
                    }
                }
            }
            e
        }
        "nullify" => {
            arity(1)?;
            let p = nullify_graph(operands[0]);
            emit(out, &format!("{}\n", print_policy(&p)))?;
            PolicyExpr::Atom(p)
        }
        "conjoin-same" => {
            arity(2)?;
            let p = conjoin_same_domain(operands[0], operands[1])?;
            emit(out, &format!("{}\n", print_policy(&p)))?;
            PolicyExpr::Atom(p)
        }
        "contains" => {
            arity(2)?;
            let u = load_universe(cli)?;
            let r = contains(operands[0], operands[1], &u)?;
            emit(out, &format!("contains({}, {}) = {r}\n", names[0], names[1]))?;
            return Ok(if r.result { 0 } else { VIOLATION });
        }
        "coverage" => {
            arity(2)?;
            let u = load_universe(cli)?;
            let r = coverage_compare(&domain_of(operands[0]), &domain_of(operands[1]), &u)?;
            emit(
                out,
                &format!("domain coverage of {} vs {} = {r}\n", names[0], names[1]),
            )?;
            return Ok(0);
        }
        "reverse-or" => {
            if operands.is_empty() {
                return Err(fail(USAGE, "`reverse-or` takes at least one policy name"));
            }
            reverse_expr(&PolicyExpr::Rev(Box::new(PolicyExpr::Or(
                operands.iter().map(|p| PolicyExpr::Atom((*p).clone())).collect(),
            ))))
        }
        other => return Err(fail(USAGE, format!("unknown algebra operation `{other}`"))),
    };

    emit(out, &format!("expression: {expr}\n"))?;
    if expr.mixes_graphs() {
        emit(
            out,
            "note: the expression combines policies over different basic graphs; their match tuples never coincide\n",
        )?;
    }
    if let Some(trace) = cli.trace.as_deref() {
        let g = load_system(Some(trace))?;
        let upheld = eval_policy_expr(&expr, &g, cli.match_cap)?;
        emit(
            out,
            &format!("verdict: {}\n", if upheld { "upheld" } else { "violated" }),
        )?;
        return Ok(if upheld { 0 } else { VIOLATION });
    }
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    if cli.mode != Mode::Algebra && !cli.args.is_empty() {
        return Err(fail(
            USAGE,
            format!("unexpected arguments: {}", cli.args.join(" ")),
        ));
    }
    if cli.match_cap == 0 {
        return Err(fail(USAGE, "--match-cap must be positive"));
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.mode {
        Mode::Check => run_check(cli, &mut out),
        Mode::Match => run_match(cli, &mut out),
        Mode::Validate => run_validate(cli, &mut out),
        Mode::Monitor => run_monitor(cli, &mut out),
        Mode::Algebra => run_algebra(cli, &mut out),
        Mode::Corpus => run_corpus(&mut out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("lasco: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
