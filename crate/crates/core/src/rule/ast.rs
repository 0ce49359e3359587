//! Rule AST and its canonical printer.

use crate::mask::CloseByParams;
use std::collections::BTreeSet;
use std::fmt;

/// The whole-image domain literal.
pub const WHOLE_IMAGE: &str = "P";

/// A parsed rule formula.
///
/// Precedence is `!` > `&` > `|` > `->` with `->` right-associative;
/// quantifier bodies extend maximally to the right. Pixel variables are
/// bound by exactly one quantifier; at most one variable may stay free, in
/// which case the formula is open and evaluates to a mask over that
/// variable's grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    /// Application of a named unary predicate (a mask or box channel).
    Pred { name: String, var: String },
    /// Built-in spatial relation between two pixel variables.
    CloseBy {
        a: String,
        b: String,
        params: CloseByParams,
    },
    /// Zeroes the body's truth values strictly below the threshold.
    Denoise { threshold: f64, body: Box<Formula> },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    ForAll {
        var: String,
        domain: String,
        body: Box<Formula>,
    },
    Exists {
        var: String,
        domain: String,
        body: Box<Formula>,
    },
}

impl Formula {
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn pred(name: &str, var: &str) -> Formula {
        Formula::Pred {
            name: name.to_string(),
            var: var.to_string(),
        }
    }

    /// Pixel variables that occur free in the formula.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut free = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut free);
        free
    }

    fn collect_free(&self, bound: &mut Vec<String>, free: &mut BTreeSet<String>) {
        match self {
            Formula::Pred { var, .. } => {
                if !bound.iter().any(|b| b == var) {
                    free.insert(var.clone());
                }
            }
            Formula::CloseBy { a, b, .. } => {
                for v in [a, b] {
                    if !bound.iter().any(|x| x == v) {
                        free.insert(v.clone());
                    }
                }
            }
            Formula::Denoise { body, .. } | Formula::Not(body) => body.collect_free(bound, free),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) => {
                l.collect_free(bound, free);
                r.collect_free(bound, free);
            }
            Formula::ForAll { var, body, .. } | Formula::Exists { var, body, .. } => {
                bound.push(var.clone());
                body.collect_free(bound, free);
                bound.pop();
            }
        }
    }

    /// Names of all predicates applied anywhere in the formula.
    pub fn predicate_names(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Pred { name, .. } = f {
                names.insert(name.clone());
            }
        });
        names
    }

    /// Names of all quantifier domains used in the formula.
    pub fn domain_names(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        self.visit(&mut |f| match f {
            Formula::ForAll { domain, .. } | Formula::Exists { domain, .. } => {
                names.insert(domain.clone());
            }
            _ => {}
        });
        names
    }

    pub fn visit(&self, f: &mut impl FnMut(&Formula)) {
        f(self);
        match self {
            Formula::Pred { .. } | Formula::CloseBy { .. } => {}
            Formula::Denoise { body, .. } | Formula::Not(body) => body.visit(f),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Formula::ForAll { body, .. } | Formula::Exists { body, .. } => body.visit(f),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::ForAll { .. } | Formula::Exists { .. } => 0,
            Formula::Implies(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Not(..) => 4,
            Formula::Pred { .. } | Formula::CloseBy { .. } | Formula::Denoise { .. } => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < min;
        if parens {
            f.write_str("(")?;
        }
        match self {
            Formula::Pred { name, var } => write!(f, "{name}({var})")?,
            Formula::CloseBy { a, b, params } => {
                write!(f, "closeby({a}, {b}, {})", PrintParams(params))?
            }
            Formula::Denoise { threshold, body } => {
                write!(f, "denoise(")?;
                body.fmt_prec(f, 0)?;
                write!(f, ", t={threshold})")?;
            }
            Formula::Not(body) => {
                f.write_str("!")?;
                body.fmt_prec(f, 4)?;
            }
            Formula::And(l, r) => {
                l.fmt_prec(f, 3)?;
                f.write_str(" & ")?;
                r.fmt_prec(f, 4)?;
            }
            Formula::Or(l, r) => {
                l.fmt_prec(f, 2)?;
                f.write_str(" | ")?;
                r.fmt_prec(f, 3)?;
            }
            Formula::Implies(l, r) => {
                l.fmt_prec(f, 2)?;
                f.write_str(" -> ")?;
                // The consequent extends maximally right, so quantifiers and
                // nested implications print without parentheses.
                r.fmt_prec(f, 0)?;
            }
            Formula::ForAll { var, domain, body } => {
                write!(f, "forall {var} in {domain}: ")?;
                body.fmt_prec(f, 0)?;
            }
            Formula::Exists { var, domain, body } => {
                write!(f, "exists {var} in {domain}: ")?;
                body.fmt_prec(f, 0)?;
            }
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

struct PrintParams<'a>(&'a CloseByParams);

impl fmt::Display for PrintParams<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self.0 {
            CloseByParams::Trivial => f.write_str("trivial"),
            CloseByParams::Gaussian { sigma, r, low_cut } => {
                write!(f, "sigma={sigma}")?;
                if let Some(r) = r {
                    write!(f, ", r={r}")?;
                }
                if low_cut != CloseByParams::DEFAULT_LOW_CUT {
                    write!(f, ", low_cut={low_cut}")?;
                }
                Ok(())
            }
            CloseByParams::L1Window { r } => write!(f, "ksize={}", 2 * r + 1),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Canonical pretty-printing; `parse(print(f))` is structurally equal to `f`.
pub fn print_formula(f: &Formula) -> String {
    f.to_string()
}
