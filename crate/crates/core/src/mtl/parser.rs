use super::{Cmp, Formula, Interval, Term};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at offset {pos}: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Not,
    And,
    Or,
    Arrow,
    Op(Cmp),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, m: &str| ParseError { pos, message: m.to_string() };
    while i < b.len() {
        let c = b[i] as char;
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let two = if i + 1 < b.len() { &src[i..i + 2] } else { "" };
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBrack,
            ']' => Tok::RBrack,
            ',' => Tok::Comma,
            '!' => Tok::Not,
            '&' => Tok::And,
            '|' => Tok::Or,
            '-' if two == "->" => {
                i += 1;
                Tok::Arrow
            }
            '<' | '>' | '=' => {
                let (op, len) = match (c, two) {
                    (_, "<=") => (Cmp::Le, 2),
                    (_, ">=") => (Cmp::Ge, 2),
                    (_, "==") => (Cmp::Eq, 2),
                    ('<', _) => (Cmp::Lt, 1),
                    ('>', _) => (Cmp::Gt, 1),
                    _ => return Err(err(i, "expected '==' ")),
                };
                i += len - 1;
                Tok::Op(op)
            }
            c if c.is_ascii_digit() || c == '-' || c == '.' => {
                i += 1;
                while i < b.len() && ((b[i] as char).is_ascii_digit() || matches!(b[i], b'.' | b'e' | b'E') || (matches!(b[i], b'-' | b'+') && matches!(b[i - 1], b'e' | b'E'))) {
                    i += 1;
                }
                let s = &src[start..i];
                let v: f64 = s.parse().map_err(|_| err(start, &format!("bad number '{s}'")))?;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                i += 1;
                while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || matches!(b[i], b'_' | b'.')) {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
                continue;
            }
            other => return Err(err(i, &format!("unexpected character '{other}'"))),
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, m: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { pos: self.offset(), message: m.into() })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn implication(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.disjunction()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.pos += 1;
            let rhs = self.implication()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut f = self.conjunction()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            f = Formula::or(f, self.conjunction()?);
        }
        Ok(f)
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut f = self.until()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            f = Formula::and(f, self.until()?);
        }
        Ok(f)
    }

    fn until(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.unary()?;
        if self.is_kw("U") {
            self.pos += 1;
            let i = self.interval()?;
            let rhs = self.unary()?;
            return Ok(Formula::Until(i, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        if self.peek() != Some(&Tok::LBrack) {
            return Ok(Interval::UNBOUNDED);
        }
        self.pos += 1;
        let lo = match self.bump() {
            Some(Tok::Num(v)) => v,
            _ => {
                self.pos -= 1;
                return self.err("expected interval lower bound");
            }
        };
        self.expect(Tok::Comma, "','")?;
        let hi = match self.bump() {
            Some(Tok::Num(v)) => Some(v),
            Some(Tok::Ident(s)) if s == "inf" => None,
            _ => {
                self.pos -= 1;
                return self.err("expected interval upper bound or 'inf'");
            }
        };
        self.expect(Tok::RBrack, "']'")?;
        if lo < 0.0 || hi.is_some_and(|h| h < lo) {
            return self.err(format!("interval bounds must satisfy 0 <= a <= b (got {lo}, {hi:?})"));
        }
        Ok(Interval { lo, hi })
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(Tok::Ident(s)) if s == "G" || s == "F" => {
                let always = s == "G";
                self.pos += 1;
                let i = self.interval()?;
                let body = self.unary()?;
                Ok(if always { Formula::always(i, body) } else { Formula::eventually(i, body) })
            }
            Some(Tok::Ident(s)) if s == "X" => {
                self.pos += 1;
                Ok(Formula::next(self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Term::Const(v)),
            Some(Tok::Ident(s)) if !is_keyword(&s) => Ok(Term::Signal(s)),
            _ => {
                self.pos -= 1;
                self.err("expected a signal name or number")
            }
        }
    }

    fn primary(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.implication()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Some(Tok::Ident(s)) if s == "true" => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Tok::Ident(s)) if s == "false" => {
                self.pos += 1;
                Ok(Formula::False)
            }
            None => self.err("unexpected end of input"),
            _ => {
                let lhs = self.term()?;
                if let Some(Tok::Op(op)) = self.peek().cloned() {
                    self.pos += 1;
                    let rhs = self.term()?;
                    return Ok(Formula::Atom { lhs, op, rhs });
                }
                match lhs {
                    Term::Signal(s) => Ok(Formula::Bool(s)),
                    Term::Const(_) => self.err("a number needs a comparison"),
                }
            }
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "G" | "F" | "X" | "U" | "true" | "false" | "inf")
}

/// Parse policy text into a formula.
pub fn parse_policy(text: &str) -> Result<Formula, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };
    let f = p.implication()?;
    if p.pos < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc5_shape() {
        let f = parse_policy("G (smoke.detected -> F[0,2] alarm.on)").unwrap();
        let expected = Formula::always(
            Interval::UNBOUNDED,
            Formula::implies(Formula::Bool("smoke.detected".into()), Formula::eventually(Interval::new(0.0, 2.0), Formula::Bool("alarm.on".into()))),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn simple_always() {
        assert_eq!(parse_policy("G (x <= 55)").unwrap(), Formula::always(Interval::UNBOUNDED, Formula::atom("x", Cmp::Le, 55.0)));
    }

    #[test]
    fn dc3_shape() {
        let f = parse_policy("G !(on & X F[0,30] (off & X F[0,30] on))").unwrap();
        let inner = Formula::and(Formula::Bool("off".into()), Formula::next(Formula::eventually(Interval::new(0.0, 30.0), Formula::Bool("on".into()))));
        let expected = Formula::always(
            Interval::UNBOUNDED,
            Formula::not(Formula::and(Formula::Bool("on".into()), Formula::next(Formula::eventually(Interval::new(0.0, 30.0), inner)))),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn precedence_and_assoc() {
        let f = parse_policy("a | b & c -> d -> e").unwrap();
        assert_eq!(f.to_string(), "((a | (b & c)) -> (d -> e))");
        let g = parse_policy("!a U[1,2] b").unwrap();
        assert_eq!(g.to_string(), "(!a U[1,2] b)");
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_policy("G (x <= )").unwrap_err();
        assert_eq!(e.pos, 8);
        assert!(parse_policy("G[3,1] x").is_err());
        assert!(parse_policy("x <= 3 )").is_err());
        assert!(parse_policy("5").is_err());
        assert!(parse_policy("x # 3").is_err());
    }

    #[test]
    fn negative_numbers_and_arrows() {
        let f = parse_policy("x>-3->y").unwrap();
        assert_eq!(f.to_string(), "((x > -3) -> y)");
    }

    #[test]
    fn printer_round_trip() {
        for s in ["G (x <= 55)", "F[0,inf] (a & !b)", "G[5,inf] x", "(a U b)", "X X (v == 2.5)", "true | false"] {
            let f = parse_policy(s).unwrap();
            assert_eq!(parse_policy(&f.to_string()).unwrap(), f, "{s}");
        }
    }
}
