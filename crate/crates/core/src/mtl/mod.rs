//! Metric temporal logic over sampled traces.
//!
//! Concrete syntax (whitespace-insensitive):
//!
//! ```text
//! phi  := phi -> phi | phi '|' phi | phi & phi | phi U[a,b] phi
//!       | ! phi | G[a,b] phi | F[a,b] phi | X phi | ( phi )
//!       | true | false | name | term op term
//! term := name | number
//! op   := < | <= | > | >= | ==
//! ```
//!
//! Intervals are in seconds; `[a,inf]` or an omitted interval is unbounded.
//! Precedence from loosest: `->` (right-assoc), `|`, `&`, `U`, prefix operators.

mod parser;
mod robustness;

pub use parser::{parse_policy, ParseError};
pub use robustness::{lookahead, robustness, robustness_signal, MtlError, Overlay, SignalSource};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Signal(String),
    Const(f64),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Signal(s) => f.write_str(s),
            Term::Const(c) => write!(f, "{c}"),
        }
    }
}

/// Closed interval in seconds; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval { lo: 0.0, hi: None };

    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi: Some(hi) }
    }

    pub fn is_unbounded_from_zero(&self) -> bool {
        self.lo == 0.0 && self.hi.is_none()
    }

    pub(crate) fn steps(&self, dt: f64) -> (usize, Option<usize>) {
        let a = (self.lo / dt - 1e-9).ceil().max(0.0) as usize;
        let b = self.hi.map(|h| (h / dt + 1e-9).floor().max(0.0) as usize);
        (a, b)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            _ if self.is_unbounded_from_zero() => Ok(()),
            Some(h) => write!(f, "[{},{}]", self.lo, h),
            None => write!(f, "[{},inf]", self.lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Formula {
    True,
    False,
    /// Bare boolean signal: robustness +1 when the sample is above 0.5, else -1.
    Bool(String),
    Atom { lhs: Term, op: Cmp, rhs: Term },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Always(Interval, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Next(Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(signal: impl Into<String>, op: Cmp, c: f64) -> Formula {
        Formula::Atom { lhs: Term::Signal(signal.into()), op, rhs: Term::Const(c) }
    }

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

    pub fn always(i: Interval, f: Formula) -> Formula {
        Formula::Always(i, Box::new(f))
    }

    pub fn eventually(i: Interval, f: Formula) -> Formula {
        Formula::Eventually(i, Box::new(f))
    }

    pub fn next(f: Formula) -> Formula {
        Formula::Next(Box::new(f))
    }

    /// Left fold of `|` over a non-empty list.
    pub fn any(mut items: Vec<Formula>) -> Formula {
        let first = items.remove(0);
        items.into_iter().fold(first, Formula::or)
    }

    /// Signals the formula reads.
    pub fn signals(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_signals(&mut out);
        out
    }

    fn collect_signals(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Bool(s) => {
                out.insert(s.clone());
            }
            Formula::Atom { lhs, rhs, .. } => {
                for t in [lhs, rhs] {
                    if let Term::Signal(s) = t {
                        out.insert(s.clone());
                    }
                }
            }
            Formula::Not(a) | Formula::Always(_, a) | Formula::Eventually(_, a) | Formula::Next(a) => a.collect_signals(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(_, a, b) => {
                a.collect_signals(out);
                b.collect_signals(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Bool(_) | Formula::Atom { .. } => 0,
            Formula::Not(a) | Formula::Always(_, a) | Formula::Eventually(_, a) | Formula::Next(a) => 1 + a.depth(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Until(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }
}

/// Canonical, fully parenthesised form. `parse_policy` of the output yields the same AST.
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => f.write_str("true"),
            Formula::False => f.write_str("false"),
            Formula::Bool(s) => f.write_str(s),
            Formula::Atom { lhs, op, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Formula::Not(a) => write!(f, "!{a}"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::Always(i, a) => write!(f, "G{i} {a}"),
            Formula::Eventually(i, a) => write!(f, "F{i} {a}"),
            Formula::Next(a) => write!(f, "X {a}"),
            Formula::Until(i, a, b) => write!(f, "({a} U{i} {b})"),
        }
    }
}
