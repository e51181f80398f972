//! Candidate basis functions and weighted sums of them.
//!
//! A [`BasisTerm`] is one symbolic candidate function of the state vector
//! (constant, monomial, signum, ...). A [`BasisExpansion`] is a weighted sum
//! of terms; drift and diffusion of an [`SdeModel`](crate::model::SdeModel)
//! are stored this way, which is what makes discovered models readable.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate function of the state vector. Component indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisTerm {
    Constant,
    /// Product of state components, stored as a non-decreasing list of indices
    /// with multiplicity: `x1^2*x3` is `[0, 0, 2]`.
    Monomial(Vec<usize>),
    Signum(usize),
    Abs(usize),
    XAbsX(usize),
    Sin(usize),
    Cos(usize),
}

impl BasisTerm {
    /// Monomial from indices in any order.
    pub fn monomial(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("indices", "monomial must have degree >= 1"));
        }
        indices.sort_unstable();
        Ok(BasisTerm::Monomial(indices))
    }

    /// Single state component `x_{i+1}`.
    pub fn linear(i: usize) -> Self {
        BasisTerm::Monomial(vec![i])
    }

    pub fn degree(&self) -> usize {
        match self {
            BasisTerm::Constant => 0,
            BasisTerm::Monomial(idx) => idx.len(),
            _ => 1,
        }
    }

    /// Largest component index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        match self {
            BasisTerm::Constant => None,
            BasisTerm::Monomial(idx) => idx.last().copied(),
            BasisTerm::Signum(i) | BasisTerm::Abs(i) | BasisTerm::XAbsX(i) | BasisTerm::Sin(i) | BasisTerm::Cos(i) => {
                Some(*i)
            }
        }
    }

    /// Checks that every referenced component exists in an `m`-dimensional state.
    pub fn check_dim(&self, m: usize) -> Result<()> {
        match self.max_index() {
            Some(i) if i >= m => Err(Error::DimensionMismatch(format!(
                "term `{self}` references component {} but the state has {m}",
                i + 1
            ))),
            _ => Ok(()),
        }
    }

    /// Evaluates without bounds checking beyond slice indexing.
    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            BasisTerm::Constant => 1.0,
            BasisTerm::Monomial(idx) => idx.iter().fold(1.0, |acc, &i| acc * x[i]),
            BasisTerm::Signum(i) => signum0(x[*i]),
            BasisTerm::Abs(i) => x[*i].abs(),
            BasisTerm::XAbsX(i) => x[*i] * x[*i].abs(),
            BasisTerm::Sin(i) => x[*i].sin(),
            BasisTerm::Cos(i) => x[*i].cos(),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            BasisTerm::Constant => "constant",
            BasisTerm::Monomial(_) => "monomial",
            BasisTerm::Signum(_) => "signum",
            BasisTerm::Abs(_) => "abs",
            BasisTerm::XAbsX(_) => "x_abs_x",
            BasisTerm::Sin(_) => "sin",
            BasisTerm::Cos(_) => "cos",
        }
    }

    fn indices(&self) -> Vec<usize> {
        match self {
            BasisTerm::Constant => Vec::new(),
            BasisTerm::Monomial(idx) => idx.clone(),
            BasisTerm::Signum(i) | BasisTerm::Abs(i) | BasisTerm::XAbsX(i) | BasisTerm::Sin(i) | BasisTerm::Cos(i) => {
                vec![*i]
            }
        }
    }
}

/// `sgn` with `sgn(0) = 0`.
#[inline]
fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Value of `term` at state `x`.
pub fn evaluate_basis(term: &BasisTerm, x: &[f64]) -> Result<f64> {
    term.check_dim(x.len())?;
    Ok(term.eval_unchecked(x))
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisTerm::Constant => write!(f, "1"),
            BasisTerm::Monomial(idx) => {
                let mut first = true;
                let mut pos = 0;
                while pos < idx.len() {
                    let i = idx[pos];
                    let power = idx[pos..].iter().take_while(|&&j| j == i).count();
                    if !first {
                        write!(f, "*")?;
                    }
                    first = false;
                    if power == 1 {
                        write!(f, "x{}", i + 1)?;
                    } else {
                        write!(f, "x{}^{}", i + 1, power)?;
                    }
                    pos += power;
                }
                Ok(())
            }
            BasisTerm::Signum(i) => write!(f, "sgn(x{})", i + 1),
            BasisTerm::Abs(i) => write!(f, "abs(x{})", i + 1),
            BasisTerm::XAbsX(i) => write!(f, "x{0}*abs(x{0})", i + 1),
            BasisTerm::Sin(i) => write!(f, "sin(x{})", i + 1),
            BasisTerm::Cos(i) => write!(f, "cos(x{})", i + 1),
        }
    }
}

fn parse_var(s: &str) -> Result<usize> {
    let bad = || Error::Parse(format!("expected a state variable like `x1`, got `{s}`"));
    let digits = s.strip_prefix('x').ok_or_else(bad)?;
    let n: usize = digits.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok(n - 1)
}

fn parse_call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')
}

impl FromStr for BasisTerm {
    type Err = Error;

    /// Parses the names produced by `Display`, e.g. `1`, `x1^2*x3`, `sgn(x2)`.
    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if s == "1" {
            return Ok(BasisTerm::Constant);
        }
        if let Some(arg) = parse_call(&s, "sgn") {
            return Ok(BasisTerm::Signum(parse_var(arg)?));
        }
        if let Some(arg) = parse_call(&s, "abs") {
            return Ok(BasisTerm::Abs(parse_var(arg)?));
        }
        if let Some(arg) = parse_call(&s, "sin") {
            return Ok(BasisTerm::Sin(parse_var(arg)?));
        }
        if let Some(arg) = parse_call(&s, "cos") {
            return Ok(BasisTerm::Cos(parse_var(arg)?));
        }
        if let Some((lhs, rhs)) = s.split_once('*') {
            if let Some(arg) = parse_call(rhs, "abs") {
                let i = parse_var(lhs)?;
                if parse_var(arg)? == i {
                    return Ok(BasisTerm::XAbsX(i));
                }
            }
        }
        let mut idx = Vec::new();
        for factor in s.split('*') {
            let (var, power) = match factor.split_once('^') {
                Some((v, p)) => (
                    v,
                    p.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad exponent in `{factor}`")))?,
                ),
                None => (factor, 1),
            };
            if power == 0 {
                return Err(Error::Parse(format!("zero exponent in `{factor}`")));
            }
            let i = parse_var(var)?;
            idx.extend(std::iter::repeat_n(i, power));
        }
        BasisTerm::monomial(idx)
    }
}

/// Serialised form of one weighted term: `{kind, indices, degree, weight}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub kind: String,
    pub indices: Vec<usize>,
    pub degree: usize,
    pub weight: f64,
}

impl TermRecord {
    pub fn new(term: &BasisTerm, weight: f64) -> Self {
        TermRecord {
            kind: term.kind_name().to_string(),
            indices: term.indices(),
            degree: term.degree(),
            weight,
        }
    }

    pub fn to_term(&self) -> Result<(BasisTerm, f64)> {
        let single = || -> Result<usize> {
            match self.indices.as_slice() {
                [i] => Ok(*i),
                _ => Err(Error::Parse(format!(
                    "`{}` term needs exactly one index, got {:?}",
                    self.kind, self.indices
                ))),
            }
        };
        let term = match self.kind.as_str() {
            "constant" => {
                if !self.indices.is_empty() {
                    return Err(Error::Parse("constant term carries no indices".into()));
                }
                BasisTerm::Constant
            }
            "monomial" => {
                if self.indices.len() != self.degree {
                    return Err(Error::Parse(format!(
                        "monomial degree {} does not match indices {:?}",
                        self.degree, self.indices
                    )));
                }
                BasisTerm::monomial(self.indices.clone())?
            }
            "signum" => BasisTerm::Signum(single()?),
            "abs" => BasisTerm::Abs(single()?),
            "x_abs_x" => BasisTerm::XAbsX(single()?),
            "sin" => BasisTerm::Sin(single()?),
            "cos" => BasisTerm::Cos(single()?),
            other => return Err(Error::Parse(format!("unknown term kind `{other}`"))),
        };
        Ok((term, self.weight))
    }
}

/// Weighted sum of basis terms over an `m`-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisExpansion {
    dim: usize,
    terms: Vec<(BasisTerm, f64)>,
}

impl BasisExpansion {
    pub fn zero(dim: usize) -> Self {
        BasisExpansion { dim, terms: Vec::new() }
    }

    pub fn new(dim: usize, terms: Vec<(BasisTerm, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "state dimension must be positive"));
        }
        for (term, w) in &terms {
            term.check_dim(dim)?;
            if !w.is_finite() {
                return Err(Error::invalid("weight", format!("non-finite weight on `{term}`")));
            }
        }
        Ok(BasisExpansion { dim, terms })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        BasisExpansion {
            dim,
            terms: vec![(BasisTerm::Constant, value)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(BasisTerm, f64)] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of weights attached to `term` (zero if absent).
    pub fn weight_of(&self, term: &BasisTerm) -> f64 {
        self.terms.iter().filter(|(t, _)| t == term).map(|(_, w)| *w).sum()
    }

    /// Evaluation at `x`; `x.len()` must be at least `dim`.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(t, w)| w * t.eval_unchecked(x)).sum()
    }

    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "expansion over {} states evaluated at a {}-vector",
                self.dim,
                x.len()
            )));
        }
        Ok(self.eval(x))
    }

    pub fn to_records(&self) -> Vec<TermRecord> {
        self.terms.iter().map(|(t, w)| TermRecord::new(t, *w)).collect()
    }

    pub fn from_records(dim: usize, records: &[TermRecord]) -> Result<Self> {
        let terms = records.iter().map(TermRecord::to_term).collect::<Result<Vec<_>>>()?;
        BasisExpansion::new(dim, terms)
    }
}

impl fmt::Display for BasisExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, (t, w)) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{w}*{t}")?;
        }
        Ok(())
    }
}
