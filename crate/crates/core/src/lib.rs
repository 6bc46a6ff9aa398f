//! Policy-constraint engine for graph policies.
//!
//! A policy is a small directed graph whose nodes and edges carry a *domain*
//! predicate (where the policy applies) and a *requirement* predicate (what
//! must then hold). Systems are object/event graphs built from traces. The
//! engine enumerates every way a policy's domain matches a system, checks the
//! requirement on each match, and supports composing policies.

pub mod algebra;
pub mod corpus;
pub mod matching;
pub mod policy;
pub mod predicates;
pub mod report;
pub mod syntax;
pub mod system;
pub mod value;

pub use predicates::{Bindings, EvalContext, Expr, VariableConditions};
pub use syntax::ParseError;
pub use value::Value;
