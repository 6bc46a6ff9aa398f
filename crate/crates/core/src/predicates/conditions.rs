use std::fmt;

use crate::value::Value;

use super::eval::{fold, substitute_attrs, substitute_vars, Bindings, EvalContext, EvalError};
use super::expr::{BinOp, Expr};

/// Partial variable bindings plus the residual condition the remaining
/// variables must satisfy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableConditions {
    pub bindings: Bindings,
    pub condition: Expr,
}

impl VariableConditions {
    pub fn new(bindings: Bindings, condition: Expr) -> Self {
        VariableConditions { bindings, condition }
    }

    /// `⟨{}, true⟩`
    pub fn trivial() -> Self {
        Self::new(Bindings::new(), Expr::TRUE)
    }

    /// `⟨{}, false⟩`
    pub fn unsatisfiable() -> Self {
        Self::new(Bindings::new(), Expr::FALSE)
    }

    pub fn is_false(&self) -> bool {
        self.condition.is_false()
    }

    pub fn is_true(&self) -> bool {
        self.condition.is_true()
    }
}

impl fmt::Display for VariableConditions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<{")?;
        for (i, (k, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "${k}: {v}")?;
        }
        write!(f, "}}, {}>", self.condition)
    }
}

/// Substitutes `sigma` then `b` into `p` and folds the residual.
pub fn sat_pred(p: &Expr, sigma: &EvalContext, b: &Bindings) -> Result<VariableConditions, EvalError> {
    let residual = substitute_vars(&substitute_attrs(p, sigma), b);
    Ok(VariableConditions::new(b.clone(), fold(&residual)?))
}

/// Pulls out bindings forced by top-level conjuncts of the form
/// `$v = k` or `k = $v` with `k` constant.
///
/// Equalities beneath `||` or `!` are never harvested. Contradictory forced
/// bindings give `({}, false)`.
pub fn extract_bound(c: &Expr) -> Result<(Bindings, Expr), EvalError> {
    let mut found = Bindings::new();
    let mut rest = Vec::new();
    for conjunct in c.conjuncts() {
        match forced_binding(conjunct) {
            Some((var, value)) => match found.get(var) {
                Some(prev) if prev != value => return Ok((Bindings::new(), Expr::FALSE)),
                _ => {
                    found.insert(var.to_string(), value.clone());
                }
            },
            None => rest.push(conjunct.clone()),
        }
    }
    if found.is_empty() {
        return Ok((found, c.clone()));
    }
    // Harvested conjuncts become `true`; folding drops them.
    let remaining = fold(&Expr::conjunction(rest))?;
    Ok((found, remaining))
}

fn forced_binding(e: &Expr) -> Option<(&str, &Value)> {
    match e {
        Expr::Binary(BinOp::Eq, l, r) => match (l.as_ref(), r.as_ref()) {
            (Expr::Var(v), Expr::Const(k)) | (Expr::Const(k), Expr::Var(v)) => Some((v, k)),
            _ => None,
        },
        _ => None,
    }
}

/// Moves every variable the condition pins to a single value into the
/// bindings, repeating until nothing new is found.
pub fn reduce_cond(c: &VariableConditions) -> Result<VariableConditions, EvalError> {
    let mut bindings = c.bindings.clone();
    let mut condition = fold(&substitute_vars(&c.condition, &bindings))?;
    loop {
        let (found, rest) = extract_bound(&condition)?;
        if rest.is_false() && found.is_empty() && !condition.is_false() {
            // extract_bound hit contradictory forced bindings.
            return Ok(VariableConditions::unsatisfiable());
        }
        if found.is_empty() {
            return Ok(VariableConditions::new(bindings, rest));
        }
        bindings.extend(found);
        condition = fold(&substitute_vars(&rest, &bindings))?;
    }
}

/// Binary merge: conflicting bindings give `⟨{}, false⟩`, otherwise the
/// reduced union of bindings with the conjunction of conditions. A merge that
/// reduces to `false` is normalised to `⟨{}, false⟩` as well.
pub fn merge2(a: &VariableConditions, b: &VariableConditions) -> Result<VariableConditions, EvalError> {
    for (var, value) in &a.bindings {
        if b.bindings.get(var).is_some_and(|other| other != value) {
            return Ok(VariableConditions::unsatisfiable());
        }
    }
    let mut bindings = a.bindings.clone();
    bindings.extend(b.bindings.iter().map(|(k, v)| (k.clone(), v.clone())));
    let merged = reduce_cond(&VariableConditions::new(
        bindings,
        Expr::and(a.condition.clone(), b.condition.clone()),
    ))?;
    Ok(if merged.is_false() {
        VariableConditions::unsatisfiable()
    } else {
        merged
    })
}

/// Left fold of [`merge2`]. An empty list merges to `⟨{}, true⟩`.
pub fn merge_conds<'a, I>(conds: I) -> Result<VariableConditions, EvalError>
where
    I: IntoIterator<Item = &'a VariableConditions>,
{
    let mut iter = conds.into_iter();
    let Some(first) = iter.next() else {
        return Ok(VariableConditions::trivial());
    };
    let mut acc = reduce_cond(first)?;
    for c in iter {
        if acc.is_false() {
            break;
        }
        acc = merge2(&acc, c)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicates::parse_predicate;

    fn p(s: &str) -> Expr {
        parse_predicate(s).unwrap()
    }

    fn b(pairs: &[(&str, Value)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn vc(pairs: &[(&str, Value)], cond: &str) -> VariableConditions {
        VariableConditions::new(b(pairs), p(cond))
    }

    #[test]
    fn sat_pred_user_node() {
        let sigma = b(&[("type", "user".into()), ("sec_level", 0.into())]);
        let got = sat_pred(&p(r#"type="user" && sec_level=$UL"#), &sigma, &Bindings::new()).unwrap();
        assert_eq!(
            got,
            VariableConditions::new(Bindings::new(), Expr::eq(Expr::constant(0), Expr::var("UL")))
        );
    }

    #[test]
    fn sat_pred_wrong_method() {
        let sigma = b(&[("method", "write".into())]);
        let got = sat_pred(&p(r#"method="read""#), &sigma, &Bindings::new()).unwrap();
        assert_eq!(got, VariableConditions::new(Bindings::new(), Expr::FALSE));
    }

    #[test]
    fn sat_pred_requirement_fails() {
        let bind = b(&[("UL", 0.into()), ("FL", 2.into())]);
        let got = sat_pred(&p("$UL >= $FL"), &Bindings::new(), &bind).unwrap();
        assert_eq!(got, VariableConditions::new(bind, Expr::FALSE));
    }

    #[test]
    fn sat_pred_reports_type_errors() {
        let sigma = b(&[("level", "secret".into())]);
        assert!(sat_pred(&p("level > 1"), &sigma, &Bindings::new()).is_err());
    }

    #[test]
    fn extract_bound_examples() {
        assert_eq!(
            extract_bound(&p("$x = 3 && $x < 5")).unwrap(),
            (b(&[("x", 3.into())]), p("$x < 5"))
        );
        assert_eq!(
            extract_bound(&p("$x > $y")).unwrap(),
            (Bindings::new(), p("$x > $y"))
        );
        assert_eq!(extract_bound(&p("true")).unwrap(), (Bindings::new(), Expr::TRUE));
        assert_eq!(
            extract_bound(&p("$x = 1 && $x = 2")).unwrap(),
            (Bindings::new(), Expr::FALSE)
        );
        assert_eq!(
            extract_bound(&p("$x = 1 && $y > $x")).unwrap(),
            (b(&[("x", 1.into())]), p("$y > $x"))
        );
    }

    #[test]
    fn extract_bound_ignores_or_and_not() {
        for src in [
            "$x = 1 || $y = 2",
            "!($x = 1)",
            "($x = 1 || false) && $z > 0",
            "!!($x = 1)",
        ] {
            let (found, rest) = extract_bound(&p(src)).unwrap();
            assert!(found.is_empty(), "{src} bound {found:?}");
            assert_eq!(rest, p(src));
        }
        // A variable-to-variable equality stays in the condition.
        assert!(extract_bound(&p("$x = $y")).unwrap().0.is_empty());
    }

    #[test]
    fn extract_bound_leaves_substitution_to_reduce() {
        let (found, rest) = extract_bound(&Expr::and(
            Expr::eq(Expr::var("x"), Expr::constant(3)),
            Expr::binary(BinOp::Lt, Expr::var("x"), Expr::var("y")),
        ))
        .unwrap();
        assert_eq!(found, b(&[("x", 3.into())]));
        assert_eq!(rest, p("$x < $y"));
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(
            reduce_cond(&vc(&[], "$x = 3 && $x < 5")).unwrap(),
            vc(&[("x", 3.into())], "true")
        );
        assert_eq!(
            reduce_cond(&vc(&[("x", 1.into())], "$y = $x + 1")).unwrap(),
            vc(&[("x", 1.into()), ("y", 2.into())], "true")
        );
        assert_eq!(reduce_cond(&vc(&[], "false")).unwrap(), vc(&[], "false"));
        // Chained: z is forced only after y is found.
        assert_eq!(
            reduce_cond(&vc(&[("x", 1.into())], "$y = $x + 1 && $z = $y * 2")).unwrap(),
            vc(&[("x", 1.into()), ("y", 2.into()), ("z", 4.into())], "true")
        );
    }

    #[test]
    fn merge_examples() {
        assert_eq!(
            merge_conds(&[vc(&[("x", 1.into())], "true"), vc(&[("x", 2.into())], "true")]).unwrap(),
            vc(&[], "false")
        );
        assert_eq!(
            merge_conds(&[vc(&[("x", 1.into())], "$y > $x"), vc(&[("y", 5.into())], "true")]).unwrap(),
            vc(&[("x", 1.into()), ("y", 5.into())], "true")
        );
        assert_eq!(merge_conds(&[vc(&[], "true")]).unwrap(), vc(&[], "true"));
        assert_eq!(merge_conds(std::iter::empty()).unwrap(), vc(&[], "true"));
    }

    #[test]
    fn merge_through_conditions_detects_conflicts() {
        // x is forced to different values by the two residual conditions.
        assert_eq!(
            merge_conds(&[vc(&[], "$x = 1"), vc(&[], "$x = 2")]).unwrap(),
            vc(&[], "false")
        );
        assert_eq!(
            merge_conds(&[vc(&[], "$x = 1"), vc(&[], "$x = 1 && $y = $x")]).unwrap(),
            vc(&[("x", 1.into()), ("y", 1.into())], "true")
        );
    }
}
