//! Predicate expressions, substitution and constant folding, and the
//! variable-conditions calculus used to merge partial matches.

mod conditions;
mod eval;
mod expr;
mod parse;

pub use conditions::{extract_bound, merge2, merge_conds, reduce_cond, sat_pred, VariableConditions};
pub use eval::{apply, fold, substitute_attrs, substitute_vars, Bindings, EvalContext, EvalError};
pub use expr::{BinOp, Expr};
pub use parse::{parse_expr, parse_predicate};
