//! Permutations of `[n]`, Kendall-Tau machinery, restriction and exhaustive
//! enumeration.
//!
//! A [`Permutation`] is a ranking: `ranking[i]` is the (1-based) element at
//! position `i`. Enumeration over `S_n` is lexicographic in that sequence, and
//! every vectorization in the crate indexes its entries by [`lex_rank`].

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Element label, 1-based.
pub type Element = u16;

pub const DEFAULT_ENUMERATION_CUTOFF: usize = 8;
pub const HARD_ENUMERATION_CAP: usize = 10;
pub const MAX_N_ENV: &str = "MALLOWS_LAB_MAX_N";

/// Largest `n` for which exact `n!`-sized computations are allowed.
///
/// Defaults to 8; `MALLOWS_LAB_MAX_N` raises or lowers it, clamped to 10.
pub fn enumeration_cutoff() -> usize {
    static CUTOFF: OnceLock<usize> = OnceLock::new();
    *CUTOFF.get_or_init(|| {
        std::env::var(MAX_N_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .map(|v| v.clamp(1, HARD_ENUMERATION_CAP))
            .unwrap_or(DEFAULT_ENUMERATION_CUTOFF)
    })
}

pub fn check_enumerable(n: usize) -> Result<()> {
    let limit = enumeration_cutoff();
    if n > limit {
        return Err(Error::ResourceLimit {
            what: "exact enumeration over S_n",
            requested: n,
            limit,
        });
    }
    Ok(())
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Element>", into = "Vec<Element>")]
pub struct Permutation {
    ranking: Vec<Element>,
}

impl Permutation {
    pub fn new(ranking: Vec<Element>) -> Result<Self> {
        let n = ranking.len();
        if n == 0 {
            return invalid("permutation must contain at least one element");
        }
        let mut seen = vec![false; n];
        for &e in &ranking {
            let idx = e as usize;
            if idx == 0 || idx > n {
                return invalid(format!("element {e} outside 1..={n}"));
            }
            if seen[idx - 1] {
                return invalid(format!("element {e} repeated"));
            }
            seen[idx - 1] = true;
        }
        Ok(Self { ranking })
    }

    pub(crate) fn from_vec_unchecked(ranking: Vec<Element>) -> Self {
        debug_assert!(Self::new(ranking.clone()).is_ok());
        Self { ranking }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            ranking: (1..=n as Element).collect(),
        }
    }

    pub fn reversed(&self) -> Self {
        let mut ranking = self.ranking.clone();
        ranking.reverse();
        Self { ranking }
    }

    pub fn n(&self) -> usize {
        self.ranking.len()
    }

    pub fn as_slice(&self) -> &[Element] {
        &self.ranking
    }

    pub fn into_vec(self) -> Vec<Element> {
        self.ranking
    }

    /// 0-based position of each element: `positions()[e - 1]`.
    pub fn positions(&self) -> Vec<u16> {
        let mut pos = vec![0u16; self.n()];
        for (i, &e) in self.ranking.iter().enumerate() {
            pos[e as usize - 1] = i as u16;
        }
        pos
    }

    pub fn position_of(&self, e: Element) -> Option<usize> {
        self.ranking.iter().position(|&x| x == e)
    }

    /// Whether `a` is ranked ahead of `b`.
    pub fn precedes(&self, a: Element, b: Element) -> bool {
        for &e in &self.ranking {
            if e == a {
                return true;
            }
            if e == b {
                return false;
            }
        }
        false
    }

    /// Functional inverse, viewing the ranking as the map position → element.
    pub fn inverse(&self) -> Self {
        let ranking = self.positions().into_iter().map(|p| p + 1).collect();
        Self { ranking }
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.n() != other.n() {
            return invalid("composition of permutations of different sizes");
        }
        let ranking = other
            .ranking
            .iter()
            .map(|&i| self.ranking[i as usize - 1])
            .collect();
        Ok(Self { ranking })
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation({self})")
    }
}

/// Line format: space separated 1-based elements.
impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.ranking.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl FromStr for Permutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ranking = s
            .split_whitespace()
            .map(|t| {
                t.parse::<Element>()
                    .map_err(|_| Error::Parse(format!("bad element {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranking)
    }
}

impl TryFrom<Vec<Element>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<Element>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Permutation> for Vec<Element> {
    fn from(p: Permutation) -> Self {
        p.ranking
    }
}

/// A sorted set of distinct elements of `[n]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ElementSubset {
    elements: Vec<Element>,
}

impl ElementSubset {
    pub fn new(mut elements: Vec<Element>, n: usize) -> Result<Self> {
        elements.sort_unstable();
        for w in elements.windows(2) {
            if w[0] == w[1] {
                return invalid(format!("element {} repeated in subset", w[0]));
            }
        }
        if let Some(&e) = elements.iter().find(|&&e| e == 0 || e as usize > n) {
            return invalid(format!("subset element {e} outside 1..={n}"));
        }
        Ok(Self { elements })
    }

    pub fn as_slice(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, e: Element) -> bool {
        self.elements.binary_search(&e).is_ok()
    }
}

/// Number of pairs ordered differently by `p` and `q`.
pub fn kendall_tau(p: &Permutation, q: &Permutation) -> Result<usize> {
    if p.n() != q.n() {
        return invalid(format!(
            "kendall_tau of permutations on {} and {} elements",
            p.n(),
            q.n()
        ));
    }
    Ok(kendall_tau_unchecked(p.as_slice(), &q.positions()))
}

/// Discordant pairs between `ranking` and the ranking whose 0-based element
/// positions are `ref_pos`.
pub(crate) fn kendall_tau_unchecked(ranking: &[Element], ref_pos: &[u16]) -> usize {
    let mapped: Vec<u16> = ranking.iter().map(|&e| ref_pos[e as usize - 1]).collect();
    count_inversions(&mapped)
}

fn count_inversions(seq: &[u16]) -> usize {
    let mut count = 0;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] > seq[j] {
                count += 1;
            }
        }
    }
    count
}

/// Inversions of the ranking, i.e. `kendall_tau(p, identity)`.
pub fn inversions(p: &Permutation) -> usize {
    count_inversions(p.as_slice())
}

/// Relative order of the elements of `subset` within `p`.
pub fn restrict(p: &Permutation, subset: &[Element]) -> Result<Vec<Element>> {
    let n = p.n();
    let mut wanted = vec![false; n];
    for &e in subset {
        if e == 0 || e as usize > n {
            return invalid(format!("element {e} is not in the permutation"));
        }
        if wanted[e as usize - 1] {
            return invalid(format!("element {e} repeated in subset"));
        }
        wanted[e as usize - 1] = true;
    }
    Ok(p.as_slice()
        .iter()
        .copied()
        .filter(|&e| wanted[e as usize - 1])
        .collect())
}

/// Relabels a ranking of arbitrary distinct elements to a permutation of
/// `1..=len` preserving relative value order (smallest element becomes 1).
pub fn relabel(ranking: &[Element]) -> Permutation {
    let mut sorted = ranking.to_vec();
    sorted.sort_unstable();
    let ranks = ranking
        .iter()
        .map(|e| sorted.binary_search(e).expect("present") as Element + 1)
        .collect();
    Permutation::from_vec_unchecked(ranks)
}

/// All `n!` permutations in lexicographic order.
pub fn enumerate_sn(n: usize) -> Result<LexPermutations> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    check_enumerable(n)?;
    Ok(LexPermutations::new(n))
}

/// Lexicographic successor iteration over arbitrary `n` (no cutoff check).
#[derive(Debug, Clone)]
pub struct LexPermutations {
    next: Option<Vec<Element>>,
}

impl LexPermutations {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            next: Some((1..=n as Element).collect()),
        }
    }
}

impl Iterator for LexPermutations {
    type Item = Permutation;

    fn next(&mut self) -> Option<Permutation> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        if next_permutation(&mut succ) {
            self.next = Some(succ);
        }
        Some(Permutation::from_vec_unchecked(current))
    }
}

fn next_permutation(v: &mut [Element]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Rank of `p` in the lexicographic enumeration of `S_n`.
pub fn lex_rank(p: &Permutation) -> usize {
    lex_rank_slice(p.as_slice())
}

pub(crate) fn lex_rank_slice(s: &[Element]) -> usize {
    let n = s.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller_after = s[i + 1..].iter().filter(|&&e| e < s[i]).count();
        rank = rank * (n - i) + smaller_after;
    }
    rank
}

pub fn lex_unrank(n: usize, mut rank: usize) -> Result<Permutation> {
    if rank >= factorial(n) {
        return invalid(format!("rank {rank} out of range for n={n}"));
    }
    let mut pool: Vec<Element> = (1..=n as Element).collect();
    let mut digits = vec![0; n];
    for i in (0..n).rev() {
        let base = n - i;
        digits[i] = rank % base;
        rank /= base;
    }
    let ranking = digits.into_iter().map(|d| pool.remove(d)).collect();
    Ok(Permutation::from_vec_unchecked(ranking))
}

/// Counts of permutations of `[n]` by inversion number, from the product
/// `∏_{j=1}^{n} (1 + q + … + q^{j-1})`.
pub fn mahonian_counts(n: usize) -> Vec<BigUint> {
    let mut coeffs = vec![BigUint::from(1u8)];
    for j in 1..=n {
        let mut next = vec![BigUint::default(); coeffs.len() + j - 1];
        // Multiply by (1 + q + ... + q^{j-1}) via a sliding window sum.
        let mut window = BigUint::default();
        for (d, slot) in next.iter_mut().enumerate() {
            if d < coeffs.len() {
                window += &coeffs[d];
            }
            if d >= j && d - j < coeffs.len() {
                window -= &coeffs[d - j];
            }
            *slot = window.clone();
        }
        coeffs = next;
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perm(v: &[Element]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kendall_tau_examples() {
        assert_eq!(
            kendall_tau(&perm(&[1, 2, 3]), &perm(&[1, 2, 3])).unwrap(),
            0
        );
        assert_eq!(
            kendall_tau(&perm(&[1, 2, 3]), &perm(&[3, 2, 1])).unwrap(),
            3
        );
        assert_eq!(
            kendall_tau(&perm(&[2, 1, 4, 3]), &perm(&[1, 2, 3, 4])).unwrap(),
            2
        );
        assert!(matches!(
            kendall_tau(&perm(&[1, 2]), &perm(&[1, 2, 3])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(inversions(&perm(&[1, 2, 3, 4])), 0);
        assert_eq!(inversions(&perm(&[2, 1, 3])), 1);
        assert_eq!(inversions(&perm(&[3, 1, 2])), 2);
    }

    #[test]
    fn inversions_of_relative_permutation_equal_distance() {
        // d_KT(π, σ) = I(π σ⁻¹) for all π, σ in S_4, reading π and σ as
        // element → position maps (the inverses of the rankings).
        let all: Vec<_> = enumerate_sn(4).unwrap().collect();
        for p in &all {
            for s in &all {
                let rel = p.inverse().compose(s).unwrap();
                assert_eq!(inversions(&rel), kendall_tau(p, s).unwrap());
            }
        }
    }

    #[test]
    fn restrict_examples() {
        let p = perm(&[3, 1, 4, 2]);
        assert_eq!(restrict(&p, &[1, 2]).unwrap(), vec![1, 2]);
        assert_eq!(restrict(&p, &[3, 4]).unwrap(), vec![3, 4]);
        assert_eq!(restrict(&p, &[1, 2, 3, 4]).unwrap(), p.as_slice());
        assert!(restrict(&p, &[5]).is_err());
    }

    #[test]
    fn relabel_keeps_relative_order() {
        assert_eq!(relabel(&[7, 2, 5]).as_slice(), &[3, 1, 2]);
    }

    #[test]
    fn enumeration_examples() {
        let one: Vec<_> = enumerate_sn(1).unwrap().collect();
        assert_eq!(one, vec![perm(&[1])]);
        let three: Vec<_> = enumerate_sn(3).unwrap().collect();
        assert_eq!(three.len(), 6);
        assert_eq!(three[0], perm(&[1, 2, 3]));
        assert_eq!(three[5], perm(&[3, 2, 1]));
        let eight: std::collections::HashSet<_> = enumerate_sn(8).unwrap().collect();
        assert_eq!(eight.len(), 40320);
    }

    #[test]
    fn enumeration_above_cutoff_is_refused() {
        assert!(matches!(enumerate_sn(11), Err(Error::ResourceLimit { .. })));
    }

    #[test]
    fn lex_rank_matches_enumeration_order() {
        for (i, p) in enumerate_sn(5).unwrap().enumerate() {
            assert_eq!(lex_rank(&p), i);
            assert_eq!(lex_unrank(5, i).unwrap(), p);
        }
    }

    #[test]
    fn mahonian_examples() {
        let to_u64 = |v: Vec<BigUint>| -> Vec<u64> {
            v.into_iter().map(|x| x.try_into().unwrap()).collect()
        };
        assert_eq!(to_u64(mahonian_counts(1)), vec![1]);
        assert_eq!(to_u64(mahonian_counts(3)), vec![1, 2, 2, 1]);
        let c4 = to_u64(mahonian_counts(4));
        assert_eq!(c4, vec![1, 3, 5, 6, 5, 3, 1]);
        for (i, c) in c4.iter().enumerate() {
            assert!(*c <= 4u64.pow(i as u32));
        }
    }

    #[test]
    fn mahonian_matches_enumeration_and_counting_bound() {
        for n in 1..=8usize {
            let mut hist = vec![0u64; n * (n - 1) / 2 + 1];
            for p in enumerate_sn(n).unwrap() {
                hist[inversions(&p)] += 1;
            }
            let counts = mahonian_counts(n);
            assert_eq!(counts.len(), hist.len());
            let total: BigUint = counts.iter().sum();
            assert_eq!(total, BigUint::from(factorial(n)));
            for (i, (c, h)) in counts.iter().zip(&hist).enumerate() {
                assert_eq!(*c, BigUint::from(*h), "n={n} i={i}");
                assert!(*c <= BigUint::from(n).pow(i as u32), "n={n} i={i}");
            }
        }
    }

    #[test]
    fn metric_axioms_exhaustive() {
        for n in 1..=4 {
            let all: Vec<_> = enumerate_sn(n).unwrap().collect();
            for p in &all {
                for q in &all {
                    let d = kendall_tau(p, q).unwrap();
                    assert_eq!(d, kendall_tau(q, p).unwrap());
                    assert!(d <= n * (n - 1) / 2);
                    for r in &all {
                        assert!(d <= kendall_tau(p, r).unwrap() + kendall_tau(r, q).unwrap());
                        // right-invariance of the element → position maps
                        let pr = p.inverse().compose(r).unwrap().inverse();
                        let qr = q.inverse().compose(r).unwrap().inverse();
                        assert_eq!(kendall_tau(&pr, &qr).unwrap(), d);
                    }
                }
            }
        }
        for p in enumerate_sn(5).unwrap() {
            for q in enumerate_sn(5).unwrap() {
                assert_eq!(kendall_tau(&p, &q).unwrap(), kendall_tau(&q, &p).unwrap());
            }
        }
    }

    #[test]
    fn line_format_round_trip() {
        let p: Permutation = "3 1 4 2".parse().unwrap();
        assert_eq!(p.to_string(), "3 1 4 2");
        assert!("1 1 2".parse::<Permutation>().is_err());
        assert!("1 x".parse::<Permutation>().is_err());
    }

    fn arb_perm(max_n: usize) -> impl Strategy<Value = Permutation> {
        (1..=max_n).prop_flat_map(|n| {
            Just((1..=n as Element).collect::<Vec<_>>())
                .prop_shuffle()
                .prop_map(|v| Permutation::new(v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn inversions_equal_distance_to_identity(p in arb_perm(12)) {
            prop_assert_eq!(inversions(&p), kendall_tau(&p, &Permutation::identity(p.n())).unwrap());
        }

        #[test]
        fn inverse_composes_to_identity(p in arb_perm(12)) {
            prop_assert_eq!(p.compose(&p.inverse()).unwrap(), Permutation::identity(p.n()));
        }
    }
}
