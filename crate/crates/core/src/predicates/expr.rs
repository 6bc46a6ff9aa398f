use std::collections::BTreeSet;
use std::fmt;

use crate::value::{format_number, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    And,
    Or,
    Eq,
    Neq,
    Lt,
    Gt,
    Le,
    Ge,
    In,
    Subset,
    SubsetEq,
    Add,
    Sub,
    Mul,
    Div,
    Intersect,
    Union,
}

impl BinOp {
    /// Operators whose result is a boolean.
    pub fn is_boolean(self) -> bool {
        !matches!(
            self,
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Intersect | BinOp::Union
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq
            | BinOp::Neq
            | BinOp::Lt
            | BinOp::Gt
            | BinOp::Le
            | BinOp::Ge
            | BinOp::In
            | BinOp::Subset
            | BinOp::SubsetEq => 3,
            BinOp::Intersect | BinOp::Union => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Eq => "=",
            BinOp::Neq => "!=",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::In => "in",
            BinOp::Subset => "subset",
            BinOp::SubsetEq => "subseteq",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Intersect => "intersect",
            BinOp::Union => "union",
        }
    }
}

const UNARY_PRECEDENCE: u8 = 7;

/// A predicate or condition expression.
///
/// Leaves are constants, attribute/parameter references and `$`-variables
/// (stored without the sigil). Grouping parentheses are not kept in the tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Const(Value),
    Attr(String),
    Var(String),
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub const TRUE: Expr = Expr::Const(Value::Flag(true));
    pub const FALSE: Expr = Expr::Const(Value::Flag(false));

    pub fn attr(name: impl Into<String>) -> Self {
        Expr::Attr(name.into())
    }

    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn constant(v: impl Into<Value>) -> Self {
        Expr::Const(v.into())
    }

    pub fn flag(b: bool) -> Self {
        Expr::Const(Value::Flag(b))
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Self {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn and(l: Expr, r: Expr) -> Self {
        Expr::binary(BinOp::And, l, r)
    }

    pub fn or(l: Expr, r: Expr) -> Self {
        Expr::binary(BinOp::Or, l, r)
    }

    pub fn eq(l: Expr, r: Expr) -> Self {
        Expr::binary(BinOp::Eq, l, r)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: Expr) -> Self {
        Expr::Not(Box::new(e))
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Expr::Const(Value::Flag(true)))
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Expr::Const(Value::Flag(false)))
    }

    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Expr::Const(v) => Some(v),
            _ => None,
        }
    }

    /// True when the expression's outermost operator yields a boolean.
    pub fn is_boolean_shaped(&self) -> bool {
        match self {
            Expr::Const(v) => matches!(v, Value::Flag(_)),
            Expr::Not(_) => true,
            Expr::Binary(op, _, _) => op.is_boolean(),
            Expr::Attr(_) | Expr::Var(_) => false,
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                out.insert(v.clone());
            }
        });
        out
    }

    pub fn attrs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Attr(a) = e {
                out.insert(a.clone());
            }
        });
        out
    }

    pub fn has_attrs(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Attr(_)));
        found
    }

    pub fn has_vars(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Var(_)));
        found
    }

    /// Constants appearing anywhere in the expression, set members included.
    pub fn constants(&self) -> BTreeSet<Value> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Const(v) = e {
                collect_values(v, &mut out);
            }
        });
        out
    }

    pub fn visit<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self {
            Expr::Not(c) => c.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            _ => {}
        }
    }

    /// The operands of a left- or right-nested `&&` chain.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            match e {
                Expr::Binary(BinOp::And, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Joins `exprs` with `&&`; the empty conjunction is `true`.
    pub fn conjunction<I: IntoIterator<Item = Expr>>(exprs: I) -> Expr {
        exprs.into_iter().reduce(Expr::and).unwrap_or(Expr::TRUE)
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        match self {
            Expr::Const(Value::Num(n)) if !n.is_integer() && format_number(n).contains('/') => {
                // Non-terminating rationals only arise from folding.
                write!(f, "({} / {})", n.numer(), n.denom())
            }
            Expr::Const(Value::Num(n)) if n < &num_rational::BigRational::default() && min > 0 => {
                write!(f, "({})", format_number(n))
            }
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Attr(a) => f.write_str(a),
            Expr::Var(v) => write!(f, "${v}"),
            Expr::Not(c) => {
                f.write_str("!")?;
                c.fmt_prec(f, UNARY_PRECEDENCE)
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let paren = p < min;
                if paren {
                    f.write_str("(")?;
                }
                l.fmt_prec(f, p)?;
                write!(f, " {} ", op.symbol())?;
                r.fmt_prec(f, p + 1)?;
                if paren {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

fn collect_values(v: &Value, out: &mut BTreeSet<Value>) {
    if let Value::Set(items) = v {
        for item in items {
            collect_values(item, out);
        }
    }
    out.insert(v.clone());
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
