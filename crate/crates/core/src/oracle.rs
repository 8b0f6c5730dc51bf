//! Placement-probability oracles.
//!
//! Every moment, tensor entry and local query in the crate is a sum of
//! weights over rankings consistent with some event. An oracle exposes a
//! weighted table of rankings through [`PlacementOracle::visit`]; exact
//! oracles enumerate `S_n`, empirical ones hold the distinct observed samples.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::model::{DistributionVector, MallowsMixture};
use crate::perm::{check_enumerable, lex_rank, Element, Permutation};
use crate::table::{perm_table, PermTable};

/// Elements pinned to positions, both 1-based, sorted by element.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlacementQuery {
    assignments: Vec<(Element, u16)>,
}

impl PlacementQuery {
    pub fn new(mut assignments: Vec<(Element, u16)>, n: usize) -> Result<Self> {
        if assignments.is_empty() || assignments.len() > n {
            return invalid(format!(
                "query must pin between 1 and {n} elements, got {}",
                assignments.len()
            ));
        }
        let mut used_pos = vec![false; n];
        let mut used_el = vec![false; n];
        for &(e, p) in &assignments {
            if e == 0 || e as usize > n {
                return invalid(format!("element {e} outside 1..={n}"));
            }
            if p == 0 || p as usize > n {
                return invalid(format!("position {p} outside 1..={n}"));
            }
            if std::mem::replace(&mut used_el[e as usize - 1], true) {
                return invalid("duplicate element");
            }
            if std::mem::replace(&mut used_pos[p as usize - 1], true) {
                return invalid("duplicate position");
            }
        }
        assignments.sort_unstable();
        Ok(Self { assignments })
    }

    /// Parses whitespace separated `element:position` tokens.
    pub fn parse(tokens: &str, n: usize) -> Result<Self> {
        let assignments = tokens
            .split_whitespace()
            .map(|t| {
                let (e, p) = t
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("expected element:position, got {t:?}")))?;
                let e = e
                    .parse::<Element>()
                    .map_err(|_| Error::Parse(format!("bad element in {t:?}")))?;
                let p = p
                    .parse::<u16>()
                    .map_err(|_| Error::Parse(format!("bad position in {t:?}")))?;
                Ok((e, p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(assignments, n)
    }

    pub fn assignments(&self) -> &[(Element, u16)] {
        &self.assignments
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn matches(&self, positions: &[u16]) -> bool {
        self.assignments
            .iter()
            .all(|&(e, p)| positions[e as usize - 1] + 1 == p)
    }
}

impl fmt::Debug for PlacementQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PlacementQuery({self})")
    }
}

impl fmt::Display for PlacementQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (e, p)) in self.assignments.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{e}:{p}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Additive error bound; zero for exact backing.
    pub tolerance: f64,
}

pub trait PlacementOracle: Sync {
    fn n(&self) -> usize;

    /// Additive tolerance guaranteed for any single event probability.
    fn tolerance(&self) -> f64;

    /// Calls `f(ranking, positions, weight)` for every stored ranking.
    /// `positions[e - 1]` is the 0-based position of element `e`.
    fn visit(&self, f: &mut dyn FnMut(&[u16], &[u16], f64));

    fn event_prob(&self, event: &dyn Fn(&[u16], &[u16]) -> bool) -> f64 {
        let mut total = 0.0;
        self.visit(&mut |r, p, w| {
            if event(r, p) {
                total += w;
            }
        });
        total
    }

    fn placement_prob(&self, q: &PlacementQuery) -> Result<Estimate> {
        if let Some(&(e, p)) = q
            .assignments()
            .iter()
            .find(|&&(e, p)| e as usize > self.n() || p as usize > self.n())
        {
            return invalid(format!("query {e}:{p} outside n = {}", self.n()));
        }
        Ok(Estimate {
            value: self.event_prob(&|_, pos| q.matches(pos)),
            tolerance: self.tolerance(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backing {
    /// Weights over all of `S_n`, exact (possibly signed).
    Exact,
    /// Frequencies of `samples` draws; `delta` is the per-query failure
    /// probability behind the reported tolerance.
    Empirical { samples: usize, delta: f64 },
}

/// Hoeffding tolerance `sqrt(ln(2/δ) / 2m)` for one event frequency.
pub fn hoeffding_tolerance(samples: usize, delta: f64) -> f64 {
    if samples == 0 {
        return 1.0;
    }
    ((2.0 / delta).ln() / (2.0 * samples as f64)).sqrt()
}

/// Samples needed for tolerance `tau` at failure probability `delta`.
pub fn hoeffding_samples(tau: f64, delta: f64) -> usize {
    ((2.0 / delta).ln() / (2.0 * tau * tau)).ceil() as usize
}

#[derive(Clone, Debug)]
pub struct TableOracle {
    table: Arc<PermTable>,
    weights: Vec<f64>,
    backing: Backing,
}

impl TableOracle {
    pub fn exact(mix: &MallowsMixture) -> Result<Self> {
        let table = perm_table(mix.n())?;
        let weights = mix.pmf_over(&table);
        Ok(Self {
            table,
            weights,
            backing: Backing::Exact,
        })
    }

    /// Wraps a (possibly signed) dense vector.
    pub fn from_vector(v: &DistributionVector) -> Result<Self> {
        Ok(Self {
            table: v.table()?,
            weights: v.values().to_vec(),
            backing: Backing::Exact,
        })
    }

    /// Histogram of distinct samples.
    pub fn empirical(n: usize, samples: &[Permutation], delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return invalid("delta must lie in (0, 1)");
        }
        let mut counts: BTreeMap<&[u16], usize> = BTreeMap::new();
        for s in samples {
            if s.n() != n {
                return invalid("sample size does not match n");
            }
            *counts.entry(s.as_slice()).or_default() += 1;
        }
        let m = samples.len().max(1) as f64;
        let weights = counts.values().map(|&c| c as f64 / m).collect();
        let table = Arc::new(PermTable::from_rankings(n, counts.keys().copied()));
        Ok(Self {
            table,
            weights,
            backing: Backing::Empirical {
                samples: samples.len(),
                delta,
            },
        })
    }

    pub fn backing(&self) -> Backing {
        self.backing
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn table(&self) -> &PermTable {
        &self.table
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Dense lexicographic vector of the stored weights.
    pub fn to_vector(&self) -> Result<DistributionVector> {
        let n = self.table.n();
        check_enumerable(n)?;
        if self.backing == Backing::Exact {
            return DistributionVector::new(n, self.weights.clone());
        }
        let mut v = DistributionVector::zeros(n)?;
        for (i, &w) in self.weights.iter().enumerate() {
            v.values_mut()[lex_rank(&self.table.permutation(i))] += w;
        }
        Ok(v)
    }
}

impl PlacementOracle for TableOracle {
    fn n(&self) -> usize {
        self.table.n()
    }

    fn tolerance(&self) -> f64 {
        match self.backing {
            Backing::Exact => 0.0,
            Backing::Empirical { samples, delta } => hoeffding_tolerance(samples, delta),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&[u16], &[u16], f64)) {
        for (i, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                f(self.table.ranking(i), self.table.positions(i), w);
            }
        }
    }
}

/// The same distribution with every ranking read back to front.
pub struct Reversed<'a>(pub &'a dyn PlacementOracle);

impl PlacementOracle for Reversed<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }

    fn tolerance(&self) -> f64 {
        self.0.tolerance()
    }

    fn visit(&self, f: &mut dyn FnMut(&[u16], &[u16], f64)) {
        let n = self.0.n();
        let mut ranking = vec![0u16; n];
        let mut positions = vec![0u16; n];
        self.0.visit(&mut |r, p, w| {
            for i in 0..n {
                ranking[i] = r[n - 1 - i];
                positions[i] = (n - 1) as u16 - p[i];
            }
            f(&ranking, &positions, w);
        });
    }
}

pub const MOMENT_ENTRY_BUDGET: usize = 4_000_000;

/// Number of order-`c` moment entries: `C(n, c) · n!/(n-c)!`.
pub fn moment_entry_count(n: usize, c: usize) -> Option<usize> {
    if c > n {
        return Some(0);
    }
    let mut binom: usize = 1;
    let mut falling: usize = 1;
    for i in 0..c {
        binom = binom.checked_mul(n - i)? / (i + 1);
        falling = falling.checked_mul(n - i)?;
    }
    binom.checked_mul(falling)
}

/// Order-`c` moments keyed by their placement query.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MomentMap {
    pub c: usize,
    pub entries: BTreeMap<PlacementQuery, f64>,
}

impl MomentMap {
    pub fn get(&self, q: &PlacementQuery) -> f64 {
        self.entries.get(q).copied().unwrap_or(0.0)
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.values().map(|v| v.abs()).sum()
    }

    pub fn l1_distance(&self, other: &MomentMap) -> f64 {
        let mut total = 0.0;
        for (q, v) in &self.entries {
            total += (v - other.get(q)).abs();
        }
        for (q, v) in &other.entries {
            if !self.entries.contains_key(q) {
                total += v.abs();
            }
        }
        total
    }
}

fn subsets(n: usize, c: usize) -> Vec<Vec<u16>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(c);
    fn rec(start: u16, n: u16, c: usize, cur: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
        if cur.len() == c {
            out.push(cur.clone());
            return;
        }
        for e in start..=n {
            if (n - e + 1) as usize + cur.len() < c {
                break;
            }
            cur.push(e);
            rec(e + 1, n, c, cur, out);
            cur.pop();
        }
    }
    rec(1, n as u16, c, &mut cur, &mut out);
    out
}

/// All nonzero order-`c` moment entries of the oracle's distribution.
pub fn moment_vector(oracle: &dyn PlacementOracle, c: usize) -> Result<MomentMap> {
    let n = oracle.n();
    if c == 0 || c > n {
        return invalid(format!("moment order {c} outside 1..={n}"));
    }
    let count = moment_entry_count(n, c).unwrap_or(usize::MAX);
    if count > MOMENT_ENTRY_BUDGET {
        return Err(Error::ResourceLimit {
            what: "moment vector entries",
            requested: count,
            limit: MOMENT_ENTRY_BUDGET,
        });
    }
    let sets = subsets(n, c);
    let mut acc: HashMap<(usize, Vec<u16>), f64> = HashMap::new();
    oracle.visit(&mut |_, pos, w| {
        for (si, s) in sets.iter().enumerate() {
            let key: Vec<u16> = s.iter().map(|&e| pos[e as usize - 1] + 1).collect();
            *acc.entry((si, key)).or_default() += w;
        }
    });
    let entries = acc
        .into_iter()
        .map(|((si, key), w)| {
            let q = PlacementQuery {
                assignments: sets[si].iter().copied().zip(key).collect(),
            };
            (q, w)
        })
        .collect();
    Ok(MomentMap { c, entries })
}

pub fn mixture_moment_vector(mix: &MallowsMixture, c: usize) -> Result<MomentMap> {
    moment_vector(&TableOracle::exact(mix)?, c)
}
