use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::expr::Expr;
use crate::{fmt17, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FrontEntry {
    pub expr: Expr,
    pub complexity: usize,
    pub mse: f64,
}

/// Lowest-MSE expression found at each complexity, keeping only entries
/// that beat every simpler one. MSE strictly decreases with complexity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParetoFront {
    entries: BTreeMap<usize, FrontEntry>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in increasing complexity.
    pub fn entries(&self) -> impl Iterator<Item = &FrontEntry> {
        self.entries.values()
    }

    pub fn get(&self, complexity: usize) -> Option<&FrontEntry> {
        self.entries.get(&complexity)
    }

    /// Whether an expression of this complexity and error would be stored.
    pub fn accepts(&self, complexity: usize, mse: f64) -> bool {
        mse.is_finite()
            && self
                .entries
                .range(..=complexity)
                .all(|(_, e)| mse < e.mse)
    }

    /// Offers an expression; returns whether it was stored.
    pub fn insert(&mut self, expr: &Expr, mse: f64) -> bool {
        let complexity = expr.complexity();
        if !self.accepts(complexity, mse) {
            return false;
        }
        self.entries.retain(|&c, e| c < complexity || e.mse < mse);
        self.entries.insert(
            complexity,
            FrontEntry {
                expr: expr.clone(),
                complexity,
                mse,
            },
        );
        true
    }

    /// Header `complexity,mse,expression`.
    pub fn write_csv<W: Write>(&self, names: &[String], mut out: W) -> Result<()> {
        writeln!(out, "complexity,mse,expression")?;
        for e in self.entries() {
            writeln!(
                out,
                "{},{},{}",
                e.complexity,
                fmt17::format(e.mse),
                e.expr.display(names)
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, names: &[String]) -> Result<Self> {
        let mut front = ParetoFront::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "complexity,mse,expression" {
                    return Err(Error::Format(format!("unexpected front header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let (Some(_), Some(mse), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format(format!("line {}: expected three fields", i + 1)));
            };
            let mse: f64 = mse
                .parse()
                .map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            let expr = Expr::parse(text, names)?;
            front.insert(&expr, mse);
        }
        Ok(front)
    }
}

/// Occam scores `(ln MSE_prev − ln MSE_c) / (c − c_prev)` per entry, in
/// increasing complexity; the simplest entry scores 0.
pub fn selection_scores(front: &ParetoFront) -> Vec<(usize, f64)> {
    let log = |mse: f64| mse.max(f64::MIN_POSITIVE).ln();
    let mut prev: Option<&FrontEntry> = None;
    front
        .entries()
        .map(|e| {
            let score = match prev {
                None => 0.0,
                Some(p) => (log(p.mse) - log(e.mse)) / (e.complexity - p.complexity) as f64,
            };
            prev = Some(e);
            (e.complexity, score)
        })
        .collect()
}

/// The entry with the largest drop in log-MSE per unit of added complexity
/// over the next simpler entry. Ties go to the simpler entry.
pub fn select_best(front: &ParetoFront) -> Option<&FrontEntry> {
    let mut best: Option<(usize, f64)> = None;
    for (c, score) in selection_scores(front) {
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    best.and_then(|(c, _)| front.get(c))
}
