use std::collections::BTreeMap;

use num_traits::Zero;
use thiserror::Error;

use crate::value::Value;

use super::expr::{BinOp, Expr};

/// Folding failed on a constant subexpression.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("type error in `{expr}`: {message}")]
    Type { expr: String, message: String },
    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },
}

/// Name-to-value map: an object's attributes or an event's parameters.
pub type EvalContext = BTreeMap<String, Value>;

/// Variable name (without `$`) to bound value.
pub type Bindings = BTreeMap<String, Value>;

enum Subst {
    Done(Expr),
    /// A missing attribute that has not yet reached a boolean node.
    Poisoned,
}

/// Replaces attribute references by their values in `ctx`.
///
/// A reference to a name absent from `ctx` turns the innermost enclosing
/// boolean subexpression (or the whole predicate) into `false`.
pub fn substitute_attrs(p: &Expr, ctx: &EvalContext) -> Expr {
    match subst_attrs(p, ctx) {
        Subst::Done(e) => e,
        Subst::Poisoned => Expr::FALSE,
    }
}

fn subst_attrs(p: &Expr, ctx: &EvalContext) -> Subst {
    match p {
        Expr::Attr(name) => match ctx.get(name) {
            Some(v) => Subst::Done(Expr::Const(v.clone())),
            None => Subst::Poisoned,
        },
        Expr::Const(_) | Expr::Var(_) => Subst::Done(p.clone()),
        Expr::Not(c) => match subst_attrs(c, ctx) {
            Subst::Done(c) => Subst::Done(Expr::not(c)),
            Subst::Poisoned => Subst::Done(Expr::FALSE),
        },
        Expr::Binary(op, l, r) => match (subst_attrs(l, ctx), subst_attrs(r, ctx)) {
            (Subst::Done(l), Subst::Done(r)) => Subst::Done(Expr::binary(*op, l, r)),
            _ if op.is_boolean() => Subst::Done(Expr::FALSE),
            _ => Subst::Poisoned,
        },
    }
}

/// Replaces bound variables by their values; unbound ones stay in place.
pub fn substitute_vars(p: &Expr, b: &Bindings) -> Expr {
    match p {
        Expr::Var(name) => match b.get(name) {
            Some(v) => Expr::Const(v.clone()),
            None => p.clone(),
        },
        Expr::Const(_) | Expr::Attr(_) => p.clone(),
        Expr::Not(c) => Expr::not(substitute_vars(c, b)),
        Expr::Binary(op, l, r) => Expr::binary(*op, substitute_vars(l, b), substitute_vars(r, b)),
    }
}

fn type_error(e: &Expr, message: impl Into<String>) -> EvalError {
    EvalError::Type {
        expr: e.to_string(),
        message: message.into(),
    }
}

fn expect_flag(whole: &Expr, v: &Value) -> Result<bool, EvalError> {
    v.as_flag()
        .ok_or_else(|| type_error(whole, format!("expected a boolean, found {} {v}", v.type_name())))
}

/// Evaluates every subexpression whose leaves are all constants.
///
/// `&&` with a `false` operand is `false` (and `||` with `true` is `true`)
/// regardless of the other operand, including when the other operand is
/// ill-typed. An ill-typed operand beside an undecided one is left in place
/// rather than reported. `true && e` reduces to `e` only when `e` is
/// boolean-shaped.
pub fn fold(p: &Expr) -> Result<Expr, EvalError> {
    match p {
        Expr::Const(_) | Expr::Attr(_) | Expr::Var(_) => Ok(p.clone()),
        Expr::Not(c) => {
            let c = fold(c)?;
            match &c {
                Expr::Const(v) => Ok(Expr::flag(!expect_flag(p, v)?)),
                _ => Ok(Expr::not(c)),
            }
        }
        Expr::Binary(op @ (BinOp::And | BinOp::Or), l, r) => fold_logical(p, *op, l, r),
        Expr::Binary(op, l, r) => {
            let l = fold(l)?;
            let r = fold(r)?;
            match (&l, &r) {
                (Expr::Const(a), Expr::Const(b)) => {
                    let whole = Expr::binary(*op, l.clone(), r.clone());
                    apply(*op, a, b, &whole).map(Expr::Const)
                }
                _ => Ok(Expr::binary(*op, l, r)),
            }
        }
    }
}

fn fold_logical(p: &Expr, op: BinOp, orig_l: &Expr, orig_r: &Expr) -> Result<Expr, EvalError> {
    // Absorbing element: false for &&, true for ||.
    let absorbing = op == BinOp::Or;
    let l = fold(orig_l);
    let r = fold(orig_r);
    let absorbs =
        |side: &Result<Expr, EvalError>| matches!(side, Ok(Expr::Const(Value::Flag(b))) if *b == absorbing);
    if absorbs(&l) || absorbs(&r) {
        return Ok(Expr::flag(absorbing));
    }
    // An ill-typed operand next to an undecided one may still be absorbed
    // once the undecided side is known, so the error is deferred.
    let undecided = |side: &Result<Expr, EvalError>| matches!(side, Ok(e) if e.as_const().is_none());
    match (&l, &r) {
        (Err(_), right) if undecided(right) => {
            return Ok(Expr::binary(op, orig_l.clone(), r.expect("checked")))
        }
        (left, Err(_)) if undecided(left) => {
            return Ok(Expr::binary(op, l.expect("checked"), orig_r.clone()))
        }
        _ => {}
    }
    let (l, r) = (l?, r?);
    for side in [&l, &r] {
        if let Expr::Const(v) = side {
            expect_flag(p, v)?;
        }
    }
    // Remaining constants are the identity element.
    match (&l, &r) {
        (Expr::Const(_), Expr::Const(_)) => Ok(Expr::flag(!absorbing)),
        (Expr::Const(_), other) | (other, Expr::Const(_)) if other.is_boolean_shaped() => Ok(other.clone()),
        _ => Ok(Expr::binary(op, l, r)),
    }
}

fn as_set<'a>(v: &'a Value, whole: &Expr) -> Result<&'a std::collections::BTreeSet<Value>, EvalError> {
    match v {
        Value::Set(s) => Ok(s),
        other => Err(type_error(
            whole,
            format!("expected a set, found {} {other}", other.type_name()),
        )),
    }
}

/// Applies a non-logical operator to two constants.
pub fn apply(op: BinOp, a: &Value, b: &Value, whole: &Expr) -> Result<Value, EvalError> {
    use Value::*;
    let numeric = |a: &Value, b: &Value| match (a, b) {
        (Num(x), Num(y)) => Ok((x.clone(), y.clone())),
        _ => Err(type_error(
            whole,
            format!(
                "`{}` needs two numbers, found {} and {}",
                op.symbol(),
                a.type_name(),
                b.type_name()
            ),
        )),
    };
    Ok(match op {
        BinOp::Eq => Flag(a == b),
        BinOp::Neq => Flag(a != b),
        BinOp::Lt => numeric(a, b).map(|(x, y)| Flag(x < y))?,
        BinOp::Gt => numeric(a, b).map(|(x, y)| Flag(x > y))?,
        BinOp::Le => numeric(a, b).map(|(x, y)| Flag(x <= y))?,
        BinOp::Ge => numeric(a, b).map(|(x, y)| Flag(x >= y))?,
        BinOp::Add => numeric(a, b).map(|(x, y)| Num(x + y))?,
        BinOp::Sub => numeric(a, b).map(|(x, y)| Num(x - y))?,
        BinOp::Mul => numeric(a, b).map(|(x, y)| Num(x * y))?,
        BinOp::Div => {
            let (x, y) = numeric(a, b)?;
            if y.is_zero() {
                return Err(EvalError::DivisionByZero {
                    expr: whole.to_string(),
                });
            }
            Num(x / y)
        }
        BinOp::In => Flag(as_set(b, whole)?.contains(a)),
        BinOp::Subset => {
            let (x, y) = (as_set(a, whole)?, as_set(b, whole)?);
            Flag(x.len() < y.len() && x.is_subset(y))
        }
        BinOp::SubsetEq => Flag(as_set(a, whole)?.is_subset(as_set(b, whole)?)),
        BinOp::Intersect => Set(as_set(a, whole)?
            .intersection(as_set(b, whole)?)
            .cloned()
            .collect()),
        BinOp::Union => Set(as_set(a, whole)?.union(as_set(b, whole)?).cloned().collect()),
        BinOp::And | BinOp::Or => {
            let x = expect_flag(whole, a)?;
            let y = expect_flag(whole, b)?;
            Flag(if op == BinOp::And { x && y } else { x || y })
        }
    })
}
