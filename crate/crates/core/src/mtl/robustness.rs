use super::{Cmp, Formula, Interval, Term};
use crate::simulation::TraceSet;
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MtlError {
    #[error("unknown signal '{0}'")]
    UnknownSignal(String),
    #[error("trace of {len} samples is shorter than the formula's lookahead of {needed} samples")]
    InsufficientTrace { len: usize, needed: usize },
    #[error("signal '{name}' has {got} samples, expected {expected}")]
    LengthMismatch { name: String, got: usize, expected: usize },
}

/// Anything that can serve named, uniformly sampled signals.
pub trait SignalSource {
    fn signal(&self, name: &str) -> Option<&[f64]>;
    fn len(&self) -> usize;
    fn dt(&self) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SignalSource for TraceSet {
    fn signal(&self, name: &str) -> Option<&[f64]> {
        TraceSet::signal(self, name)
    }
    fn len(&self) -> usize {
        self.len
    }
    fn dt(&self) -> f64 {
        self.dt
    }
}

/// A source with extra derived signals layered over a base source.
pub struct Overlay<'a, S: SignalSource + ?Sized> {
    pub base: &'a S,
    pub extra: &'a BTreeMap<String, Vec<f64>>,
}

impl<S: SignalSource + ?Sized> SignalSource for Overlay<'_, S> {
    fn signal(&self, name: &str) -> Option<&[f64]> {
        self.extra.get(name).map(Vec::as_slice).or_else(|| self.base.signal(name))
    }
    fn len(&self) -> usize {
        self.base.len()
    }
    fn dt(&self) -> f64 {
        self.base.dt()
    }
}

/// Robustness of `phi` at the first sample.
pub fn robustness<S: SignalSource + ?Sized>(phi: &Formula, src: &S) -> Result<f64, MtlError> {
    let sig = robustness_signal(phi, src)?;
    Ok(sig[0])
}

/// Robustness at every position where `phi` is fully defined (`n - lookahead` positions).
pub fn robustness_signal<S: SignalSource + ?Sized>(phi: &Formula, src: &S) -> Result<Vec<f64>, MtlError> {
    let n = src.len();
    let needed = lookahead(phi, src.dt()) + 1;
    if n < needed {
        return Err(MtlError::InsufficientTrace { len: n, needed });
    }
    eval(phi, src, n, src.dt())
}

/// Samples past the evaluation point that `phi` reads.
pub fn lookahead(phi: &Formula, dt: f64) -> usize {
    match phi {
        Formula::True | Formula::False | Formula::Bool(_) | Formula::Atom { .. } => 0,
        Formula::Not(a) => lookahead(a, dt),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => lookahead(a, dt).max(lookahead(b, dt)),
        Formula::Next(a) => 1 + lookahead(a, dt),
        Formula::Always(i, a) | Formula::Eventually(i, a) => {
            let (lo, hi) = i.steps(dt);
            hi.unwrap_or(lo) + lookahead(a, dt)
        }
        Formula::Until(i, a, b) => {
            let (lo, hi) = i.steps(dt);
            hi.unwrap_or(lo) + lookahead(a, dt).max(lookahead(b, dt))
        }
    }
}

fn bool_rob(v: f64) -> f64 {
    if v > 0.5 {
        1.0
    } else {
        -1.0
    }
}

fn fetch<'s, S: SignalSource + ?Sized>(src: &'s S, name: &str, n: usize) -> Result<&'s [f64], MtlError> {
    let s = src.signal(name).ok_or_else(|| MtlError::UnknownSignal(name.to_string()))?;
    if s.len() != n {
        return Err(MtlError::LengthMismatch { name: name.to_string(), got: s.len(), expected: n });
    }
    Ok(s)
}

fn eval<S: SignalSource + ?Sized>(phi: &Formula, src: &S, n: usize, dt: f64) -> Result<Vec<f64>, MtlError> {
    Ok(match phi {
        Formula::True => vec![f64::INFINITY; n],
        Formula::False => vec![f64::NEG_INFINITY; n],
        Formula::Bool(s) => fetch(src, s, n)?.iter().map(|&v| bool_rob(v)).collect(),
        Formula::Atom { lhs, op, rhs } => {
            let l = term_values(lhs, src, n)?;
            let r = term_values(rhs, src, n)?;
            (0..n)
                .map(|i| {
                    let (a, b) = (l.get(i), r.get(i));
                    match op {
                        Cmp::Gt | Cmp::Ge => a - b,
                        Cmp::Lt | Cmp::Le => b - a,
                        Cmp::Eq => -(a - b).abs(),
                    }
                })
                .map(|v| if v.is_nan() { 0.0 } else { v })
                .collect()
        }
        Formula::Not(a) => eval(a, src, n, dt)?.into_iter().map(|v| -v).collect(),
        Formula::And(a, b) => zip(eval(a, src, n, dt)?, eval(b, src, n, dt)?, f64::min),
        Formula::Or(a, b) => zip(eval(a, src, n, dt)?, eval(b, src, n, dt)?, f64::max),
        Formula::Implies(a, b) => zip(eval(a, src, n, dt)?.into_iter().map(|v| -v).collect(), eval(b, src, n, dt)?, f64::max),
        Formula::Next(a) => {
            let mut v = eval(a, src, n, dt)?;
            if !v.is_empty() {
                v.remove(0);
            }
            v
        }
        Formula::Always(i, a) => window(&eval(a, src, n, dt)?, *i, dt, true),
        Formula::Eventually(i, a) => window(&eval(a, src, n, dt)?, *i, dt, false),
        Formula::Until(i, a, b) => until(&eval(a, src, n, dt)?, &eval(b, src, n, dt)?, *i, dt),
    })
}

enum Values<'s> {
    Const(f64),
    Series(&'s [f64]),
}

impl Values<'_> {
    fn get(&self, i: usize) -> f64 {
        match self {
            Values::Const(c) => *c,
            Values::Series(s) => s[i],
        }
    }
}

fn term_values<'s, S: SignalSource + ?Sized>(t: &Term, src: &'s S, n: usize) -> Result<Values<'s>, MtlError> {
    Ok(match t {
        Term::Const(c) => Values::Const(*c),
        Term::Signal(s) => Values::Series(fetch(src, s, n)?),
    })
}

fn zip(a: Vec<f64>, b: Vec<f64>, f: fn(f64, f64) -> f64) -> Vec<f64> {
    a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

/// Sliding min (`is_min`) or max over `[i+a, i+b]`, or `[i+a, end)` when unbounded.
fn window(x: &[f64], iv: Interval, dt: f64, is_min: bool) -> Vec<f64> {
    let (a, b) = iv.steps(dt);
    let len = x.len();
    let better = |p: f64, q: f64| if is_min { p <= q } else { p >= q };
    match b {
        Some(b) => {
            if len <= b {
                return Vec::new();
            }
            let out_len = len - b;
            let mut out = Vec::with_capacity(out_len);
            let mut dq: VecDeque<usize> = VecDeque::new();
            let mut next = a;
            for i in 0..out_len {
                while next <= i + b {
                    while let Some(&back) = dq.back() {
                        if better(x[next], x[back]) {
                            dq.pop_back();
                        } else {
                            break;
                        }
                    }
                    dq.push_back(next);
                    next += 1;
                }
                while let Some(&front) = dq.front() {
                    if front < i + a {
                        dq.pop_front();
                    } else {
                        break;
                    }
                }
                out.push(x[*dq.front().expect("window is non-empty")]);
            }
            out
        }
        None => {
            if len <= a {
                return Vec::new();
            }
            let out_len = len - a;
            let mut out = vec![0.0; out_len];
            let mut acc = if is_min { f64::INFINITY } else { f64::NEG_INFINITY };
            for i in (0..out_len).rev() {
                let v = x[i + a];
                acc = if is_min { acc.min(v) } else { acc.max(v) };
                out[i] = acc;
            }
            out
        }
    }
}

fn until(x: &[f64], y: &[f64], iv: Interval, dt: f64) -> Vec<f64> {
    let (a, b) = iv.steps(dt);
    let len = x.len().min(y.len());
    let out_len = match b {
        Some(b) if len > b => len - b,
        None if len > a => len - a,
        _ => return Vec::new(),
    };
    (0..out_len)
        .map(|i| {
            let last = b.map_or(len - 1, |b| i + b);
            let mut best = f64::NEG_INFINITY;
            let mut prefix = f64::INFINITY;
            for j in i..=last {
                if j >= i + a {
                    best = best.max(y[j].min(prefix));
                }
                prefix = prefix.min(x[j]);
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mtl::parse_policy;

    struct Src(BTreeMap<String, Vec<f64>>, f64);
    impl SignalSource for Src {
        fn signal(&self, name: &str) -> Option<&[f64]> {
            self.0.get(name).map(Vec::as_slice)
        }
        fn len(&self) -> usize {
            self.0.values().next().map_or(0, Vec::len)
        }
        fn dt(&self) -> f64 {
            self.1
        }
    }

    fn src(pairs: &[(&str, Vec<f64>)]) -> Src {
        Src(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(), 1.0)
    }

    #[test]
    fn constant_margin() {
        let s = src(&[("v", vec![50.0; 10])]);
        assert_eq!(robustness(&parse_policy("G (v <= 55)").unwrap(), &s).unwrap(), 5.0);
    }

    #[test]
    fn peak_margin() {
        let mut v = vec![30.0; 100];
        v[40] = 59.94;
        let s = src(&[("sound", v)]);
        let r = robustness(&parse_policy("G (sound <= 55)").unwrap(), &s).unwrap();
        assert!((r + 4.94).abs() < 1e-9);
    }

    #[test]
    fn bounded_windows() {
        let s = src(&[("v", vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])]);
        let g = robustness_signal(&parse_policy("G[1,3] (v > 0)").unwrap(), &s).unwrap();
        assert_eq!(g, vec![1.0, 1.0, 1.0, 2.0, 2.0]);
        let f = robustness_signal(&parse_policy("F[0,2] (v > 0)").unwrap(), &s).unwrap();
        assert_eq!(f, vec![4.0, 4.0, 5.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn insufficient_trace() {
        let s = src(&[("v", vec![1.0; 5])]);
        let e = robustness(&parse_policy("G[0,10] (v > 0)").unwrap(), &s).unwrap_err();
        assert!(matches!(e, MtlError::InsufficientTrace { .. }));
        let e = robustness(&parse_policy("G (w > 0)").unwrap(), &s).unwrap_err();
        assert_eq!(e, MtlError::UnknownSignal("w".into()));
    }

    #[test]
    fn until_basic() {
        let s = src(&[("p", vec![1.0, 1.0, 1.0, 0.0, 0.0]), ("q", vec![0.0, 0.0, 1.0, 0.0, 0.0])]);
        let r = robustness(&parse_policy("p U[0,4] q").unwrap(), &s).unwrap();
        assert_eq!(r, 1.0);
        let r = robustness(&parse_policy("p U[3,4] q").unwrap(), &s).unwrap();
        assert_eq!(r, -1.0);
    }
}
