//! Recursive-descent parser for the rule grammar.
//!
//! ```text
//! formula := quant | impl
//! quant   := ("forall" | "exists") IDENT "in" IDENT ":" formula
//! impl    := or ("->" formula)?
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | atom
//! atom    := IDENT "(" args ")" | "(" formula ")"
//! ```
//!
//! Predicates are unary applications `name(var)`. The built-in
//! `closeby(a, b, ...)` takes named parameters `sigma`, `r`, `ksize`,
//! `low_cut` or the bare word `trivial`; `denoise(formula, t=...)` wraps a
//! subformula. A formula may leave at most one pixel variable free.

use super::ast::Formula;
use super::lexer::{lex, SpannedToken, Token};
use super::ParseError;
use crate::mask::CloseByParams;

pub fn parse(text: &str) -> Result<Formula, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let formula = parser.formula()?;
    if let Some(t) = parser.peek() {
        return Err(parser.unexpected(t.clone(), "end of input"));
    }
    check_variables(&formula)?;
    Ok(formula)
}

/// Rejects rebinding of an in-scope variable and more than one free
/// variable; returns the free variable of an open formula.
pub fn check_variables(formula: &Formula) -> Result<Option<String>, ParseError> {
    fn walk(f: &Formula, bound: &mut Vec<String>) -> Result<(), ParseError> {
        match f {
            Formula::Pred { .. } | Formula::CloseBy { .. } => Ok(()),
            Formula::Denoise { body, .. } | Formula::Not(body) => walk(body, bound),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) => {
                walk(l, bound)?;
                walk(r, bound)
            }
            Formula::ForAll { var, body, .. } | Formula::Exists { var, body, .. } => {
                if bound.iter().any(|b| b == var) {
                    return Err(ParseError::VariableRebound { var: var.clone() });
                }
                bound.push(var.clone());
                let res = walk(body, bound);
                bound.pop();
                res
            }
        }
    }
    walk(formula, &mut Vec::new())?;
    let free = formula.free_vars();
    if free.len() > 1 {
        return Err(ParseError::MultipleFreeVariables {
            vars: free.into_iter().collect(),
        });
    }
    Ok(free.into_iter().next())
}

struct Parser {
    tokens: Vec<SpannedToken>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&SpannedToken> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<SpannedToken> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn last_pos(&self) -> (usize, usize) {
        match self.tokens.last() {
            Some(t) => (t.line, t.col + 1),
            None => (1, 1),
        }
    }

    fn unexpected(&self, tok: SpannedToken, expected: &str) -> ParseError {
        ParseError::Syntax {
            line: tok.line,
            col: tok.col,
            message: format!("expected {expected}, found {}", tok.token),
        }
    }

    fn eof(&self, expected: &str) -> ParseError {
        let (line, col) = self.last_pos();
        ParseError::Syntax {
            line,
            col,
            message: format!("expected {expected}, found end of input"),
        }
    }

    fn expect(&mut self, want: &Token, expected: &str) -> Result<SpannedToken, ParseError> {
        match self.next() {
            Some(t) if t.token == *want => Ok(t),
            Some(t) => Err(self.unexpected(t, expected)),
            None => Err(self.eof(expected)),
        }
    }

    fn expect_ident(&mut self, expected: &str) -> Result<String, ParseError> {
        match self.next() {
            Some(SpannedToken {
                token: Token::Ident(name),
                ..
            }) => Ok(name),
            Some(t) => Err(self.unexpected(t, expected)),
            None => Err(self.eof(expected)),
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        match self.peek().map(|t| &t.token) {
            Some(Token::Forall) | Some(Token::Exists) => self.quantifier(),
            _ => self.implication(),
        }
    }

    fn quantifier(&mut self) -> Result<Formula, ParseError> {
        let tok = self.next().expect("peeked");
        let is_forall = tok.token == Token::Forall;
        let var = self.expect_ident("a variable name")?;
        self.expect(&Token::In, "`in`")?;
        let domain = self.expect_ident("a domain name")?;
        self.expect(&Token::Colon, "`:`")?;
        let body = Box::new(self.formula()?);
        Ok(if is_forall {
            Formula::ForAll { var, domain, body }
        } else {
            Formula::Exists { var, domain, body }
        })
    }

    fn implication(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or()?;
        if matches!(self.peek().map(|t| &t.token), Some(Token::Arrow)) {
            self.next();
            // The consequent extends maximally right and may itself be a
            // quantified formula.
            let rhs = self.formula()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and()?;
        while matches!(self.peek().map(|t| &t.token), Some(Token::Pipe)) {
            self.next();
            let rhs = self.and()?;
            lhs = Formula::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while matches!(self.peek().map(|t| &t.token), Some(Token::Amp)) {
            self.next();
            let rhs = self.unary()?;
            lhs = Formula::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if matches!(self.peek().map(|t| &t.token), Some(Token::Bang)) {
            self.next();
            return Ok(Formula::not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        match self.next() {
            Some(SpannedToken {
                token: Token::LParen,
                ..
            }) => {
                let inner = self.formula()?;
                self.expect(&Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(SpannedToken {
                token: Token::Ident(name),
                line,
                col,
            }) => {
                self.expect(&Token::LParen, "`(`")?;
                let formula = match name.as_str() {
                    "closeby" => self.closeby_args(line, col)?,
                    "denoise" => self.denoise_args(line, col)?,
                    _ => {
                        let var = self.expect_ident("a pixel variable")?;
                        if matches!(self.peek().map(|t| &t.token), Some(Token::Comma)) {
                            let t = self.next().expect("peeked");
                            return Err(ParseError::Syntax {
                                line: t.line,
                                col: t.col,
                                message: format!("predicate {name:?} is unary"),
                            });
                        }
                        Formula::Pred { name, var }
                    }
                };
                self.expect(&Token::RParen, "`)`")?;
                Ok(formula)
            }
            Some(t) => Err(self.unexpected(t, "a predicate or `(`")),
            None => Err(self.eof("a predicate or `(`")),
        }
    }

    fn closeby_args(&mut self, line: usize, col: usize) -> Result<Formula, ParseError> {
        let a = self.expect_ident("a pixel variable")?;
        self.expect(&Token::Comma, "`,`")?;
        let b = self.expect_ident("a pixel variable")?;

        let mut sigma: Option<f64> = None;
        let mut r: Option<usize> = None;
        let mut ksize: Option<usize> = None;
        let mut low_cut: Option<f64> = None;
        let mut trivial = false;
        while matches!(self.peek().map(|t| &t.token), Some(Token::Comma)) {
            self.next();
            let key = self.expect_ident("a parameter name")?;
            if key == "trivial" {
                trivial = true;
                continue;
            }
            self.expect(&Token::Assign, "`=`")?;
            let value = match self.next() {
                Some(SpannedToken {
                    token: Token::Number(n),
                    ..
                }) => n,
                Some(t) => return Err(self.unexpected(t, "a number")),
                None => return Err(self.eof("a number")),
            };
            match key.as_str() {
                "sigma" => sigma = Some(value),
                "r" => r = Some(value as usize),
                "ksize" => ksize = Some(value as usize),
                "low_cut" => low_cut = Some(value),
                other => {
                    return Err(ParseError::Syntax {
                        line,
                        col,
                        message: format!("unknown closeby parameter {other:?}"),
                    })
                }
            }
        }

        let params = build_closeby_params(trivial, sigma, r, ksize, low_cut)
            .map_err(|message| ParseError::Syntax { line, col, message })?;
        Ok(Formula::CloseBy { a, b, params })
    }

    fn denoise_args(&mut self, line: usize, col: usize) -> Result<Formula, ParseError> {
        let body = Box::new(self.formula()?);
        self.expect(&Token::Comma, "`,`")?;
        // Accept `t=0.005` or a bare number.
        let threshold = match self.next() {
            Some(SpannedToken {
                token: Token::Number(n),
                ..
            }) => n,
            Some(SpannedToken {
                token: Token::Ident(key),
                ..
            }) if key == "t" => {
                self.expect(&Token::Assign, "`=`")?;
                match self.next() {
                    Some(SpannedToken {
                        token: Token::Number(n),
                        ..
                    }) => n,
                    Some(t) => return Err(self.unexpected(t, "a number")),
                    None => return Err(self.eof("a number")),
                }
            }
            Some(t) => return Err(self.unexpected(t, "`t=` or a number")),
            None => return Err(self.eof("`t=` or a number")),
        };
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ParseError::Syntax {
                line,
                col,
                message: format!("denoise threshold {threshold} outside [0, 1]"),
            });
        }
        Ok(Formula::Denoise { threshold, body })
    }
}

fn build_closeby_params(
    trivial: bool,
    sigma: Option<f64>,
    r: Option<usize>,
    ksize: Option<usize>,
    low_cut: Option<f64>,
) -> Result<CloseByParams, String> {
    if trivial {
        if sigma.is_some() || r.is_some() || ksize.is_some() {
            return Err("`trivial` excludes other closeby parameters".into());
        }
        return Ok(CloseByParams::Trivial);
    }
    match (sigma, ksize) {
        (Some(_), Some(_)) => Err("closeby takes either sigma or ksize, not both".into()),
        (Some(s), None) => CloseByParams::gaussian(
            s,
            r,
            low_cut.unwrap_or(CloseByParams::DEFAULT_LOW_CUT),
        )
        .map_err(|e| e.to_string()),
        (None, Some(k)) => {
            if r.is_some() {
                return Err("closeby takes either ksize or r, not both".into());
            }
            CloseByParams::l1_from_ksize(k).map_err(|e| e.to_string())
        }
        (None, None) => match r {
            Some(r) => Ok(CloseByParams::L1Window { r }),
            // No parameters at all: the trivial relation.
            None => Ok(CloseByParams::Trivial),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::ast::print_formula;

    #[test]
    fn parses_simple_or() {
        let f = parse("eye(p) | arm(p)").unwrap();
        assert_eq!(
            f,
            Formula::or(Formula::pred("eye", "p"), Formula::pred("arm", "p"))
        );
    }

    #[test]
    fn parses_body_part_rule() {
        let text = "forall p in P: (eye(p)|arm(p)|wrist(p)|leg(p)|ankle(p)) -> exists q in P: person(q) & closeby(p,q,sigma=0)";
        let f = parse(text).unwrap();
        match &f {
            Formula::ForAll { var, domain, body } => {
                assert_eq!(var, "p");
                assert_eq!(domain, "P");
                match body.as_ref() {
                    Formula::Implies(lhs, rhs) => {
                        assert!(matches!(lhs.as_ref(), Formula::Or(..)));
                        match rhs.as_ref() {
                            Formula::Exists { var, body, .. } => {
                                assert_eq!(var, "q");
                                match body.as_ref() {
                                    Formula::And(_, cb) => match cb.as_ref() {
                                        Formula::CloseBy { a, b, params } => {
                                            assert_eq!(a, "p");
                                            assert_eq!(b, "q");
                                            assert_eq!(*params, CloseByParams::Trivial);
                                        }
                                        other => panic!("expected closeby, got {other:?}"),
                                    },
                                    other => panic!("expected conjunction, got {other:?}"),
                                }
                            }
                            other => panic!("expected exists, got {other:?}"),
                        }
                    }
                    other => panic!("expected implication, got {other:?}"),
                }
            }
            other => panic!("expected forall, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        match parse("p(") {
            Err(ParseError::Syntax { line, col, .. }) => {
                assert_eq!(line, 1);
                assert_eq!(col, 3);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn precedence_not_and_or_implies() {
        let f = parse("!a(p) & b(p) | c(p) -> d(p)").unwrap();
        // ((!a & b) | c) -> d
        assert_eq!(
            f,
            Formula::implies(
                Formula::or(
                    Formula::and(Formula::not(Formula::pred("a", "p")), Formula::pred("b", "p")),
                    Formula::pred("c", "p")
                ),
                Formula::pred("d", "p")
            )
        );
    }

    #[test]
    fn implies_right_associative() {
        let f = parse("a(p) -> b(p) -> c(p)").unwrap();
        assert_eq!(
            f,
            Formula::implies(
                Formula::pred("a", "p"),
                Formula::implies(Formula::pred("b", "p"), Formula::pred("c", "p"))
            )
        );
    }

    #[test]
    fn rejects_two_free_variables() {
        assert!(matches!(
            parse("a(p) & b(q)"),
            Err(ParseError::MultipleFreeVariables { .. })
        ));
    }

    #[test]
    fn rejects_rebinding() {
        assert!(matches!(
            parse("forall p in P: exists p in P: a(p)"),
            Err(ParseError::VariableRebound { .. })
        ));
    }

    #[test]
    fn closeby_variants() {
        let f = parse("exists q in P: closeby(p, q, ksize=3) & b(q)").unwrap();
        let printed = print_formula(&f);
        assert_eq!(parse(&printed).unwrap(), f);

        let g = parse("exists q in P: closeby(p, q, sigma=2.77, r=12) & b(q)").unwrap();
        match &g {
            Formula::Exists { body, .. } => match body.as_ref() {
                Formula::And(cb, _) => match cb.as_ref() {
                    Formula::CloseBy { params, .. } => {
                        assert_eq!(
                            *params,
                            CloseByParams::Gaussian {
                                sigma: 2.77,
                                r: Some(12),
                                low_cut: CloseByParams::DEFAULT_LOW_CUT
                            }
                        );
                    }
                    other => panic!("{other:?}"),
                },
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
        assert!(parse("closeby(p, q, sigma=1, ksize=3)").is_err());
    }

    #[test]
    fn denoise_guard() {
        let f = parse("forall p in P: denoise(arm(p), t=0.005) -> person(p)").unwrap();
        let printed = print_formula(&f);
        assert_eq!(parse(&printed).unwrap(), f);
    }

    #[test]
    fn print_parse_fixpoint_samples() {
        let texts = [
            "eye(p) | arm(p)",
            "forall p in P: (eye(p) | arm(p)) -> exists q in P: person(q) & closeby(p, q, trivial)",
            "forall p in P: b(p) | !b(p)",
            "(a(p) -> b(p)) -> c(p)",
            "exists q in region: a(q) & (b(q) | c(q))",
        ];
        for text in texts {
            let f = parse(text).unwrap();
            let printed = print_formula(&f);
            let reparsed = parse(&printed).unwrap();
            assert_eq!(f, reparsed, "fixpoint failed for {text:?} -> {printed:?}");
        }
    }

    #[test]
    fn comments_are_skipped() {
        let f = parse("# a rule\n a(p) # trailing\n | b(p)").unwrap();
        assert_eq!(
            f,
            Formula::or(Formula::pred("a", "p"), Formula::pred("b", "p"))
        );
    }
}
