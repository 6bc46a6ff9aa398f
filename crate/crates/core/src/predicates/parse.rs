use std::collections::BTreeSet;

use crate::syntax::{tokenize, Cursor, ParseError, Tok};
use crate::value::Value;

use super::expr::{BinOp, Expr};

const RESERVED: &[&str] = &["in", "subset", "subseteq", "intersect", "union", "true", "false"];

/// Parses a complete predicate. Surrounding blank lines are allowed.
pub fn parse_predicate(text: &str) -> Result<Expr, ParseError> {
    let mut cur = Cursor::new(tokenize(text)?);
    cur.skip_newlines();
    let e = parse_expr(&mut cur)?;
    cur.skip_newlines();
    let t = cur.bump();
    if t.tok != Tok::Eof {
        return Err(ParseError::new(
            t.pos,
            format!("unexpected {} after predicate", t.tok),
        ));
    }
    Ok(e)
}

/// Parses one expression from `cur`, stopping at the first token that cannot
/// continue it.
pub fn parse_expr(cur: &mut Cursor) -> Result<Expr, ParseError> {
    parse_or(cur)
}

fn parse_or(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = parse_and(cur)?;
    while cur.eat(&Tok::OrOr) {
        let rhs = parse_and(cur)?;
        lhs = Expr::binary(BinOp::Or, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_and(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = parse_cmp(cur)?;
    while cur.eat(&Tok::AndAnd) {
        let rhs = parse_cmp(cur)?;
        lhs = Expr::binary(BinOp::And, lhs, rhs);
    }
    Ok(lhs)
}

fn comparison_op(tok: &Tok) -> Option<BinOp> {
    Some(match tok {
        Tok::Eq => BinOp::Eq,
        Tok::Neq => BinOp::Neq,
        Tok::Lt => BinOp::Lt,
        Tok::Gt => BinOp::Gt,
        Tok::Le => BinOp::Le,
        Tok::Ge => BinOp::Ge,
        Tok::Ident(k) if k == "in" => BinOp::In,
        Tok::Ident(k) if k == "subset" => BinOp::Subset,
        Tok::Ident(k) if k == "subseteq" => BinOp::SubsetEq,
        _ => return None,
    })
}

fn parse_cmp(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = parse_setop(cur)?;
    while let Some(op) = comparison_op(&cur.peek().tok) {
        cur.bump();
        let rhs = parse_setop(cur)?;
        lhs = Expr::binary(op, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_setop(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = parse_add(cur)?;
    loop {
        let op = match &cur.peek().tok {
            Tok::Ident(k) if k == "intersect" => BinOp::Intersect,
            Tok::Ident(k) if k == "union" => BinOp::Union,
            _ => break,
        };
        cur.bump();
        let rhs = parse_add(cur)?;
        lhs = Expr::binary(op, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_add(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = parse_mul(cur)?;
    loop {
        let op = match cur.peek().tok {
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            _ => break,
        };
        cur.bump();
        let rhs = parse_mul(cur)?;
        lhs = Expr::binary(op, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_mul(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let mut lhs = parse_unary(cur)?;
    loop {
        let op = match cur.peek().tok {
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            _ => break,
        };
        cur.bump();
        let rhs = parse_unary(cur)?;
        lhs = Expr::binary(op, lhs, rhs);
    }
    Ok(lhs)
}

fn parse_unary(cur: &mut Cursor) -> Result<Expr, ParseError> {
    if cur.eat(&Tok::Bang) {
        return Ok(Expr::not(parse_unary(cur)?));
    }
    parse_primary(cur)
}

fn parse_primary(cur: &mut Cursor) -> Result<Expr, ParseError> {
    let t = cur.bump();
    match t.tok {
        Tok::LParen => {
            cur.nesting += 1;
            let inner = parse_expr(cur);
            let close = cur.expect(&Tok::RParen);
            cur.nesting -= 1;
            let inner = inner?;
            close?;
            Ok(inner)
        }
        Tok::Var(v) => Ok(Expr::Var(v)),
        Tok::Ident(name) => match name.as_str() {
            "true" => Ok(Expr::flag(true)),
            "false" => Ok(Expr::flag(false)),
            k if RESERVED.contains(&k) => Err(ParseError::new(
                t.pos,
                format!("operator `{k}` is missing its left operand"),
            )),
            _ => Ok(Expr::Attr(name)),
        },
        Tok::LBrace => {
            cur.nesting += 1;
            let set = parse_set_body(cur);
            cur.nesting -= 1;
            Ok(Expr::Const(set?))
        }
        Tok::Str(_) | Tok::Num(_) | Tok::Minus => literal_after(cur, t.tok, t.pos).map(Expr::Const),
        other => Err(ParseError::new(
            t.pos,
            format!("expected an operand, found {other}"),
        )),
    }
}

fn literal_after(cur: &mut Cursor, tok: Tok, pos: crate::syntax::Pos) -> Result<Value, ParseError> {
    match tok {
        Tok::Str(s) => Ok(Value::Text(s)),
        Tok::Num(n) => Ok(Value::Num(n)),
        Tok::Minus => {
            let t = cur.bump();
            match t.tok {
                Tok::Num(n) => Ok(Value::Num(-n)),
                other => Err(ParseError::new(
                    t.pos,
                    format!("expected a number after `-`, found {other}"),
                )),
            }
        }
        other => Err(ParseError::new(pos, format!("expected a literal, found {other}"))),
    }
}

/// Parses set members up to and including the closing brace. Bare
/// identifiers inside a set literal are text constants.
fn parse_set_body(cur: &mut Cursor) -> Result<Value, ParseError> {
    let mut items = BTreeSet::new();
    if cur.eat(&Tok::RBrace) {
        return Ok(Value::Set(items));
    }
    loop {
        let t = cur.bump();
        let v = match t.tok {
            Tok::Ident(name) if name == "true" => Value::Flag(true),
            Tok::Ident(name) if name == "false" => Value::Flag(false),
            Tok::Ident(name) => Value::Text(name),
            Tok::LBrace => parse_set_body(cur)?,
            tok @ (Tok::Str(_) | Tok::Num(_) | Tok::Minus) => literal_after(cur, tok, t.pos)?,
            other => {
                return Err(ParseError::new(
                    t.pos,
                    format!("set literals may only contain constants, found {other}"),
                ))
            }
        };
        items.insert(v);
        let t = cur.bump();
        match t.tok {
            Tok::Comma => continue,
            Tok::RBrace => return Ok(Value::Set(items)),
            other => {
                return Err(ParseError::new(
                    t.pos,
                    format!("expected `,` or `}}`, found {other}"),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_predicate(s).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    #[test]
    fn simple_security_user_node() {
        assert_eq!(
            p(r#"type="user" && sec_level=$UL"#),
            Expr::and(
                Expr::eq(Expr::attr("type"), Expr::constant("user")),
                Expr::eq(Expr::attr("sec_level"), Expr::var("UL")),
            )
        );
    }

    #[test]
    fn implicit_true() {
        assert_eq!(p("true"), Expr::flag(true));
    }

    #[test]
    fn condition_expression_with_set() {
        assert_eq!(
            p("($x > 17) && ($y in {a,b})"),
            Expr::and(
                Expr::binary(BinOp::Gt, Expr::var("x"), Expr::constant(17)),
                Expr::binary(
                    BinOp::In,
                    Expr::var("y"),
                    Expr::Const(Value::set([Value::text("a"), Value::text("b")]))
                ),
            )
        );
    }

    #[test]
    fn precedence_ladder() {
        // ! > */ > +- > set ops > comparisons > && > ||
        assert_eq!(
            p("a || b && c = d + e * !f"),
            Expr::or(
                Expr::attr("a"),
                Expr::and(
                    Expr::attr("b"),
                    Expr::eq(
                        Expr::attr("c"),
                        Expr::binary(
                            BinOp::Add,
                            Expr::attr("d"),
                            Expr::binary(BinOp::Mul, Expr::attr("e"), Expr::not(Expr::attr("f")))
                        )
                    )
                )
            )
        );
        assert_eq!(
            p("s union t = u"),
            Expr::eq(
                Expr::binary(BinOp::Union, Expr::attr("s"), Expr::attr("t")),
                Expr::attr("u")
            )
        );
        assert_eq!(
            p("a - b - c"),
            Expr::binary(
                BinOp::Sub,
                Expr::binary(BinOp::Sub, Expr::attr("a"), Expr::attr("b")),
                Expr::attr("c")
            )
        );
    }

    #[test]
    fn negative_literals_and_nested_sets() {
        assert_eq!(
            p("x > -3"),
            Expr::binary(BinOp::Gt, Expr::attr("x"), Expr::constant(-3))
        );
        assert_eq!(
            p("{1, {2}, \"q\"}"),
            Expr::Const(Value::set([
                Value::int(1),
                Value::set([Value::int(2)]),
                Value::text("q")
            ]))
        );
        assert_eq!(p("{}"), Expr::Const(Value::set([])));
    }

    #[test]
    fn multi_line_inside_parens() {
        assert_eq!(p("(a = 1\n && b = 2)"), p("a = 1 && b = 2"));
    }

    #[test]
    fn syntax_errors_have_positions() {
        let e = parse_predicate("a = ").unwrap_err();
        assert_eq!((e.line, e.col), (1, 5));
        let e = parse_predicate("a = 1 b").unwrap_err();
        assert_eq!((e.line, e.col), (1, 7));
        let e = parse_predicate("(a = 1").unwrap_err();
        assert!(e.message.contains("`)`"), "{e}");
        let e = parse_predicate("a ~ 1").unwrap_err();
        assert!(e.message.contains("unknown operator"), "{e}");
        assert!(parse_predicate("in x").is_err());
        assert!(parse_predicate("{a, $x}").is_err());
    }

    #[test]
    fn display_round_trips() {
        for src in [
            r#"type="user" && sec_level=$UL"#,
            "!(a = 1) || b != {1, 2}",
            "(a || b) && c",
            "x - (y - z) = -2",
            "\"paymaster\" in $R",
            "$x * (2 + $y) >= 10 / 4",
            "!!a",
            "(s intersect t) subseteq u",
        ] {
            let e = p(src);
            assert_eq!(p(&e.to_string()), e, "{src} printed as {e}");
        }
    }
}
