//! The general mixture learner: small-φ removal, single-component recovery
//! from test-vector contractions, peeling, and component-wise testing.
//!
//! At desk scale the moment order is `c = min(10k², n) = n`, so the order-`c`
//! moments carry exactly the information of the dense distribution vector.
//! The learner works on that vector directly.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{DistributionVector, MallowsMixture, MallowsModel};
use crate::oracle::{mixture_moment_vector, MomentMap, PlacementOracle};
use crate::perm::{enumerate_sn, factorial, lex_rank_slice, relabel, Element, Permutation};
use crate::structures::{
    inner_index, ortho_test_vector, pair_test_vector, pair_vector, prefix_prob, satisfies_blocks,
};
use crate::table::perm_table;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub weight: f64,
    pub phi: f64,
    pub center: Permutation,
}

impl CandidateEntry {
    pub fn new(weight: f64, phi: f64, center: Permutation) -> Self {
        Self {
            weight,
            phi,
            center,
        }
    }

    pub fn model(&self) -> Result<MallowsModel> {
        MallowsModel::new(self.phi, self.center.clone())
    }

    fn key(&self) -> (Vec<Element>, u64, i64) {
        (
            self.center.as_slice().to_vec(),
            self.phi.to_bits(),
            (self.weight * 1e9).round() as i64,
        )
    }
}

fn sort_candidates(list: &mut Vec<CandidateEntry>) {
    list.sort_by(|a, b| {
        a.center
            .cmp(&b.center)
            .then(a.phi.total_cmp(&b.phi))
            .then(a.weight.total_cmp(&b.weight))
    });
    let mut seen = HashSet::new();
    list.retain(|c| seen.insert(c.key()));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerBudget {
    /// Sample count behind the oracle; `None` for exact moments.
    pub samples: Option<usize>,
    /// Step of the φ grid.
    pub grid_step: f64,
    /// Step of the weight grid used for small-φ guesses.
    pub weight_step: f64,
    /// Moment order; defaults to `min(10k², n)`.
    pub moment_order: Option<usize>,
    pub theta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub mu: f64,
    /// Residuals kept per intermediate peeling level.
    pub beam: usize,
    /// Candidates kept at the last peeling level.
    pub final_beam: usize,
    /// Slack on residual negative mass at intermediate levels; defaults to
    /// 1e-9 exact and half the tester threshold sampled.
    pub negative_slack: Option<f64>,
    /// Small-φ guess sets carried into peeling.
    pub small_beam: usize,
    /// Allowed excess of a tuple's cumulative weight over 1.
    pub weight_slack: f64,
    /// Tester threshold override.
    pub accept_threshold: Option<f64>,
    /// Cap on guess branches in one single-component pass.
    pub max_branches: usize,
}

impl Default for LearnerBudget {
    fn default() -> Self {
        Self {
            samples: None,
            grid_step: 0.05,
            weight_step: 0.05,
            moment_order: None,
            theta: 0.05,
            delta: 0.05,
            alpha: 0.1,
            mu: 0.05,
            beam: 4096,
            final_beam: 8,
            negative_slack: None,
            small_beam: 4,
            weight_slack: 0.05,
            accept_threshold: None,
            max_branches: 5_000_000,
        }
    }
}

impl LearnerBudget {
    pub fn epsilon(&self, n: usize) -> f64 {
        self.mu * self.mu / (10.0 * (n as f64).powi(3))
    }

    pub fn moment_order_for(&self, k: usize, n: usize) -> usize {
        self.moment_order.unwrap_or((10 * k * k).min(n))
    }

    /// `{0, β, 2β, …} ∩ [0, 1)`.
    pub fn phi_grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0u32;
        loop {
            let v = (f64::from(i) * self.grid_step * 1e9).round() / 1e9;
            if v >= 1.0 - 1e-12 {
                break;
            }
            out.push(v);
            i += 1;
        }
        out
    }

    pub fn weight_grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 1u32;
        loop {
            let v = (f64::from(i) * self.weight_step * 1e9).round() / 1e9;
            if v > 1.0 + 1e-12 {
                break;
            }
            out.push(v);
            i += 1;
        }
        out
    }

    pub fn small_phi_grid(&self, n: usize) -> Vec<f64> {
        vec![0.0, 1.0 / (4.0 * n as f64)]
    }

    pub fn neg_tolerance(&self, n: usize) -> f64 {
        self.negative_slack.unwrap_or(match self.samples {
            None => 1e-9,
            Some(_) => self.threshold(n) / 2.0,
        })
    }

    /// L1 acceptance threshold of the tester.
    pub fn threshold(&self, n: usize) -> f64 {
        if let Some(t) = self.accept_threshold {
            return t;
        }
        match self.samples {
            None => 1e-6,
            Some(m) => 2.0 * (factorial(n) as f64 / m.max(1) as f64).sqrt(),
        }
    }

    pub fn validate(&self, k: usize, n: usize) -> Result<()> {
        let positive = [
            self.grid_step,
            self.weight_step,
            self.theta,
            self.delta,
            self.alpha,
            self.mu,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.weight_slack < 0.0 {
            return invalid("learner budget parameters must be positive");
        }
        if self.grid_step >= 1.0 || self.beam == 0 || self.final_beam == 0 || k == 0 {
            return invalid("need grid step < 1, beam >= 1 and k >= 1");
        }
        if self.moment_order_for(k, n) != n {
            return invalid(format!(
                "desk-scale learner needs moment order c = n = {n}, got {}",
                self.moment_order_for(k, n)
            ));
        }
        Ok(())
    }
}

fn model_values(phi: f64, center: &Permutation) -> Result<Vec<f64>> {
    Ok(MallowsModel::new(phi, center.clone())?
        .vectorize()?
        .into_values())
}

fn negative_mass(values: &[f64]) -> f64 {
    values.iter().map(|v| (-v).max(0.0)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense vector of an oracle's (possibly signed) distribution.
pub fn oracle_vector(oracle: &dyn PlacementOracle) -> Result<DistributionVector> {
    let mut v = DistributionVector::zeros(oracle.n())?;
    let vals = v.values_mut();
    oracle.visit(&mut |ranking, _, w| vals[lex_rank_slice(ranking)] += w);
    Ok(v)
}

fn frequent(counts: Vec<(Vec<Element>, f64)>, alpha: f64) -> Vec<Permutation> {
    let mut hits: Vec<_> = counts
        .into_iter()
        .filter(|(_, f)| *f >= alpha / 4.0)
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.into_iter()
        .map(|(r, _)| Permutation::new(r).expect("sampled rankings are permutations"))
        .collect()
}

/// Every permutation seen in at least an `α/4` fraction of the samples.
pub fn small_phi_candidates(samples: &[Permutation], alpha: f64) -> Vec<Permutation> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut counts: BTreeMap<&[Element], usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.as_slice()).or_default() += 1;
    }
    let m = samples.len() as f64;
    frequent(
        counts
            .into_iter()
            .map(|(r, c)| (r.to_vec(), c as f64 / m))
            .collect(),
        alpha,
    )
}

/// Same list, read off a distribution vector.
pub fn small_phi_candidates_from_vector(v: &DistributionVector, alpha: f64) -> Vec<Permutation> {
    frequent(
        v.iter()
            .filter(|(_, f)| *f > 0.0)
            .map(|(p, f)| (p.into_vec(), f))
            .collect(),
        alpha,
    )
}

/// `v − Σ w'·v_c(M(φ', π'))` over a moment map.
pub fn remove_small_phi(v: &MomentMap, guesses: &[CandidateEntry]) -> Result<MomentMap> {
    let mut out = v.clone();
    for g in guesses {
        let m = mixture_moment_vector(&MallowsMixture::single(g.model()?), v.c)?;
        for (q, val) in m.entries {
            *out.entries.entry(q).or_default() -= g.weight * val;
        }
    }
    Ok(out)
}

/// Dense form of [`remove_small_phi`].
pub fn subtract_candidates(
    v: &DistributionVector,
    guesses: &[CandidateEntry],
) -> Result<DistributionVector> {
    let mut out = v.clone();
    for g in guesses {
        out.axpy(-g.weight, &g.model()?.vectorize()?)?;
    }
    Ok(out)
}

/// A guessed ordered-block structure for [`learn_single_same_phi`].
///
/// `blocks` are chains of consecutive elements of the target center, listed
/// in the target's order. Every other same-φ component reverses one of
/// `pairs`, each `(a, a')` with `a` right before `a'` in the target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SameGuess {
    pub blocks: Vec<Vec<Element>>,
    pub pairs: Vec<(Element, Element)>,
}

fn chains_from_pairs(pairs: &[(Element, Element)]) -> Option<Vec<Vec<Element>>> {
    let mut succ: HashMap<Element, Element> = HashMap::new();
    let mut pred: HashMap<Element, Element> = HashMap::new();
    for &(a, b) in pairs {
        if *succ.entry(a).or_insert(b) != b || *pred.entry(b).or_insert(a) != a {
            return None;
        }
    }
    let mut starts: Vec<Element> = succ
        .keys()
        .filter(|a| !pred.contains_key(a))
        .copied()
        .collect();
    starts.sort_unstable();
    let mut chains = Vec::new();
    let mut covered = 0;
    for s in starts {
        let mut c = vec![s];
        let mut cur = s;
        while let Some(&nx) = succ.get(&cur) {
            c.push(nx);
            cur = nx;
        }
        covered += c.len() - 1;
        chains.push(c);
    }
    // Edges left over belong to cycles.
    (covered == succ.len()).then_some(chains)
}

fn permutations_of<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations_of(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// All guesses for `j` same-φ components over `m` elements: `j − 1` adjacent
/// pairs (with repetition) merged into chains, times every order of the chains.
pub fn same_phi_guesses(m: usize, j: usize) -> Vec<SameGuess> {
    if j <= 1 {
        return vec![SameGuess {
            blocks: Vec::new(),
            pairs: Vec::new(),
        }];
    }
    let all: Vec<(Element, Element)> = (1..=m as Element)
        .flat_map(|a| {
            (1..=m as Element)
                .filter(move |&b| b != a)
                .map(move |b| (a, b))
        })
        .collect();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut idx = vec![0usize; j - 1];
    'outer: loop {
        let mut pairs: Vec<_> = idx.iter().map(|&i| all[i]).collect();
        pairs.sort_unstable();
        pairs.dedup();
        if let Some(chains) = chains_from_pairs(&pairs) {
            for order in permutations_of(&chains) {
                let g = SameGuess {
                    blocks: order,
                    pairs: pairs.clone(),
                };
                if seen.insert(g.clone()) {
                    out.push(g);
                }
            }
        }
        // Next nondecreasing index tuple.
        let mut p = idx.len();
        loop {
            if p == 0 {
                break 'outer;
            }
            p -= 1;
            if idx[p] + 1 < all.len() {
                let v = idx[p] + 1;
                idx[p..].iter_mut().for_each(|x| *x = v);
                break;
            }
        }
    }
    out
}

/// `n^{4k}((2k)!)^k`.
pub fn same_phi_list_bound(n: usize, k: usize) -> f64 {
    (n as f64).powi(4 * k as i32) * (factorial(2 * k) as f64).powi(k as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SameOutcome {
    pub perms: Vec<Permutation>,
    /// Total contracted mass `Σ g`.
    pub mass: f64,
    /// `∏_b ⟨v_b, v(M(φ, target_b))⟩`.
    pub contrast: f64,
    /// Pairwise comparisons that came out exactly equal.
    pub ties: usize,
}

/// Merge `units` (order kept) into `base` at every set of positions.
fn interleave(base: &[Element], units: &[Vec<Element>]) -> Vec<Vec<Element>> {
    fn rec(
        base: &[Element],
        units: &[Vec<Element>],
        cur: &mut Vec<Element>,
        out: &mut Vec<Vec<Element>>,
    ) {
        if base.is_empty() && units.is_empty() {
            out.push(cur.clone());
            return;
        }
        if let Some((&h, rest)) = base.split_first() {
            cur.push(h);
            rec(rest, units, cur, out);
            cur.pop();
        }
        if let Some((u, rest)) = units.split_first() {
            let len = cur.len();
            cur.extend_from_slice(u);
            rec(base, rest, cur, out);
            cur.truncate(len);
        }
    }
    let mut out = Vec::new();
    rec(base, units, &mut Vec::new(), &mut out);
    out
}

/// Recover the centers consistent with `guess` from a vector `u` over `S_m`
/// in which every component shares `phi`.
pub fn learn_single_same_phi(
    u: &DistributionVector,
    phi: f64,
    guess: &SameGuess,
) -> Result<SameOutcome> {
    let m = u.n();
    if !(0.0..1.0).contains(&phi) {
        return invalid(format!("phi = {phi} outside [0, 1)"));
    }
    let mut in_block = vec![false; m + 1];
    for &e in guess.blocks.iter().flatten() {
        if e == 0 || e as usize > m || in_block[e as usize] {
            return invalid("guess blocks must be disjoint elements of 1..=m");
        }
        in_block[e as usize] = true;
    }
    let mut tests = Vec::with_capacity(guess.blocks.len());
    let mut sorted_blocks = Vec::with_capacity(guess.blocks.len());
    let mut contrast = 1.0;
    for chain in &guess.blocks {
        let mut sorted = chain.clone();
        sorted.sort_unstable();
        let target = model_values(phi, &relabel(chain))?;
        let s = chain.len();
        let mut others = Vec::new();
        for sigma in enumerate_sn(s)? {
            let ordering: Vec<Element> = sigma
                .as_slice()
                .iter()
                .map(|&r| sorted[r as usize - 1])
                .collect();
            let at = |e: Element| ordering.iter().position(|&x| x == e);
            let reverses = guess.pairs.iter().any(|&(a, b)| match (at(a), at(b)) {
                (Some(pa), Some(pb)) => pb < pa,
                _ => false,
            });
            if reverses {
                others.push(model_values(phi, &sigma)?);
            }
        }
        let refs: Vec<&[f64]> = others.iter().map(Vec::as_slice).collect();
        let t = ortho_test_vector(&target, &refs)?;
        contrast *= dot(&t.values, &target);
        tests.push(t.values);
        sorted_blocks.push(sorted);
    }

    let outside: Vec<Element> = (1..=m as Element)
        .filter(|&e| !in_block[e as usize])
        .collect();
    let t = outside.len();
    let mut slot = vec![usize::MAX; m + 1];
    for (i, &e) in outside.iter().enumerate() {
        slot[e as usize] = i;
    }
    let table = u.table()?;
    let mut before = vec![0.0; t * t];
    let mut mass = 0.0;
    let mut seq = Vec::with_capacity(t);
    for (i, &w) in u.values().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let pos = table.positions(i);
        if !satisfies_blocks(pos, &guess.blocks) {
            continue;
        }
        let mut g = w;
        for (tv, b) in tests.iter().zip(&sorted_blocks) {
            g *= tv[inner_index(pos, b)];
        }
        if g == 0.0 {
            continue;
        }
        mass += g;
        seq.clear();
        seq.extend(
            table
                .ranking(i)
                .iter()
                .filter(|&&e| slot[e as usize] != usize::MAX)
                .map(|&e| slot[e as usize]),
        );
        for a in 0..t {
            for b in a + 1..t {
                before[seq[a] * t + seq[b]] += g;
            }
        }
    }

    // x before y iff the x-first split tensor wins; exact ties go to the
    // smaller label.
    let mut ties = 0;
    let mut prec = vec![false; t * t];
    for a in 0..t {
        for b in a + 1..t {
            let (ab, ba) = (before[a * t + b], before[b * t + a]);
            if ab == ba {
                ties += 1;
            }
            let a_first = ab >= ba;
            prec[a * t + b] = a_first;
            prec[b * t + a] = !a_first;
        }
    }
    let mut order: Vec<usize> = (0..t).collect();
    let wins = |a: usize| (0..t).filter(|&b| prec[a * t + b]).count();
    order.sort_by_key(|&a| std::cmp::Reverse(wins(a)));
    for a in 0..t {
        for b in a + 1..t {
            if !prec[order[a] * t + order[b]] {
                let (x, y) = (order[a], order[b]);
                let z = (0..t)
                    .find(|&z| prec[y * t + z] && prec[z * t + x])
                    .unwrap_or(y);
                return Err(Error::RecoveryFailure(outside[x], outside[y], outside[z]));
            }
        }
    }
    let base: Vec<Element> = order.iter().map(|&i| outside[i]).collect();
    let perms: Vec<Permutation> = interleave(&base, &guess.blocks)
        .into_iter()
        .map(Permutation::from_vec_unchecked)
        .collect();
    debug_assert!(perms.len() as f64 <= same_phi_list_bound(m, guess.blocks.len().max(1)));
    Ok(SameOutcome {
        perms,
        mass,
        contrast,
        ties,
    })
}

/// `Pr_{M(φ, center)}` that every block is consecutive, blocks in the listed order.
pub fn ordered_block_prob(phi: f64, center: &Permutation, blocks: &[Vec<Element>]) -> Result<f64> {
    if blocks.is_empty() {
        return Ok(1.0);
    }
    let table = perm_table(center.n())?;
    let pmf = MallowsModel::new(phi, center.clone())?.pmf_over(&table);
    Ok(pmf
        .iter()
        .enumerate()
        .filter(|(i, _)| satisfies_blocks(table.positions(*i), blocks))
        .map(|(_, p)| p)
        .sum())
}

/// Increasing tuples of `f` disjoint ordered pairs over `1..=n`.
fn pair_tuples(n: usize, f: usize) -> Vec<Vec<(Element, Element)>> {
    let all: Vec<(Element, Element)> = (1..=n as Element)
        .flat_map(|a| {
            (1..=n as Element)
                .filter(move |&b| b != a)
                .map(move |b| (a, b))
        })
        .collect();
    fn rec(
        all: &[(Element, Element)],
        start: usize,
        f: usize,
        cur: &mut Vec<(Element, Element)>,
        out: &mut Vec<Vec<(Element, Element)>>,
    ) {
        if cur.len() == f {
            out.push(cur.clone());
            return;
        }
        for i in start..all.len() {
            let (a, b) = all[i];
            if cur
                .iter()
                .any(|&(x, y)| x == a || x == b || y == a || y == b)
            {
                continue;
            }
            cur.push(all[i]);
            rec(all, i + 1, f, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(&all, 0, f, &mut Vec::new(), &mut out);
    out
}

fn grid_tuples(grid: &[f64], f: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..f {
        out = out
            .into_iter()
            .flat_map(|t| {
                grid.iter().map(move |&g| {
                    let mut t = t.clone();
                    t.push(g);
                    t
                })
            })
            .collect();
    }
    out
}

/// One far-component branch: the pairs fill the first `2f` positions in
/// tuple order, each pair in either orientation.
fn far_branch(
    v: &DistributionVector,
    pairs: &[(Element, Element)],
    grid: &[f64],
    guesses: &[SameGuess],
    slack: f64,
) -> Result<Vec<CandidateEntry>> {
    let n = v.n();
    let f = pairs.len();
    let mut used = vec![false; n + 1];
    for &(a, b) in pairs {
        used[a as usize] = true;
        used[b as usize] = true;
    }
    let rest: Vec<Element> = (1..=n as Element).filter(|&e| !used[e as usize]).collect();
    let m = rest.len();
    let xt = perm_table(m)?;
    let prefixes: Vec<Vec<Element>> = (0..1usize << f)
        .map(|o| {
            pairs
                .iter()
                .enumerate()
                .flat_map(|(a, &(x, y))| if o >> a & 1 == 0 { [x, y] } else { [y, x] })
                .collect()
        })
        .collect();
    let slices: Vec<Vec<f64>> = prefixes
        .iter()
        .map(|pre| {
            let mut full = pre.clone();
            (0..xt.len())
                .map(|i| {
                    full.truncate(2 * f);
                    full.extend(xt.ranking(i).iter().map(|&r| rest[r as usize - 1]));
                    v.values()[lex_rank_slice(&full)]
                })
                .collect()
        })
        .collect();
    let unit_orders = permutations_of(&pairs.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>());

    let mut out = Vec::new();
    for far in grid_tuples(grid, f) {
        let tests = far
            .iter()
            .map(|&p| pair_test_vector(p, false).map(|t| t.values))
            .collect::<Result<Vec<_>>>()?;
        let mut u = vec![0.0; xt.len()];
        for (o, s) in slices.iter().enumerate() {
            let coef: f64 = tests
                .iter()
                .enumerate()
                .map(|(a, t)| t[o >> a & 1])
                .product();
            u.iter_mut().zip(s).for_each(|(x, y)| *x += coef * y);
        }
        if u.iter().all(|x| x.abs() < 1e-15) {
            continue;
        }
        let u = DistributionVector::new(m, u)?;
        for &phi in grid {
            if far.contains(&phi) {
                continue;
            }
            let tt: f64 = tests
                .iter()
                .map(|t| dot(t, &pair_vector(phi, true)))
                .product();
            for g in guesses {
                let Ok(res) = learn_single_same_phi(&u, phi, g) else {
                    continue;
                };
                for sigma in &res.perms {
                    let pb = ordered_block_prob(phi, sigma, &g.blocks)?;
                    let z = res.mass / (pb * res.contrast);
                    let base: Vec<Element> = sigma
                        .as_slice()
                        .iter()
                        .map(|&r| rest[r as usize - 1])
                        .collect();
                    for units in &unit_orders {
                        for full in interleave(&base, units) {
                            let pi = Permutation::from_vec_unchecked(full);
                            let pr: f64 =
                                prefixes.iter().map(|pre| prefix_prob(phi, &pi, pre)).sum();
                            let w = z / (pr * tt);
                            if w.is_finite() && w > 0.0 && w <= 1.0 + slack {
                                out.push(CandidateEntry::new(w, phi, pi));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Candidate `(w, φ, π)` entries for one component of a `k`-mixture whose
/// (signed) vector is `v`.
pub fn learn_single_general(
    v: &DistributionVector,
    k: usize,
    budget: &LearnerBudget,
) -> Result<Vec<CandidateEntry>> {
    let n = v.n();
    if k == 0 || v.l1_norm() < 1e-14 {
        return Ok(Vec::new());
    }
    let grid = budget.phi_grid();
    let mut branches: Vec<Vec<(Element, Element)>> = Vec::new();
    let mut guess_sets: HashMap<(usize, usize), Vec<SameGuess>> = HashMap::new();
    let mut cost: usize = 0;
    for f in 0..k {
        if n < 2 * f + 1 || (f > 0 && grid.len() < 2) {
            break;
        }
        let m = n - 2 * f;
        let gs = guess_sets
            .entry((m, k - f))
            .or_insert_with(|| same_phi_guesses(m, k - f));
        let tuples = pair_tuples(n, f);
        let per = grid
            .len()
            .saturating_pow(f as u32 + 1)
            .saturating_mul(gs.len());
        cost = cost.saturating_add(per.saturating_mul(tuples.len()));
        branches.extend(tuples);
    }
    if cost > budget.max_branches {
        return Err(Error::ResourceLimit {
            what: "single-component guess branches",
            requested: cost,
            limit: budget.max_branches,
        });
    }
    let lists = branches
        .par_iter()
        .map(|pairs| {
            let m = n - 2 * pairs.len();
            far_branch(
                v,
                pairs,
                &grid,
                &guess_sets[&(m, k - pairs.len())],
                budget.weight_slack,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<CandidateEntry> = lists.into_iter().flatten().collect();
    sort_candidates(&mut out);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeelReport {
    /// Union of all candidate lists, sorted by `(center, φ, w)`.
    pub candidates: Vec<CandidateEntry>,
    /// Peeling paths, each a tuple of up to `k` components.
    pub paths: Vec<Vec<CandidateEntry>>,
}

/// Learn one component, subtract it, recurse on the residual.
///
/// Intermediate levels keep every candidate whose residual has negative mass
/// within `neg_tolerance` of the least (at most `beam` of them); the last
/// level keeps the `final_beam` candidates with the smallest residual L1.
pub fn peel_components(
    v: &DistributionVector,
    k: usize,
    budget: &LearnerBudget,
) -> Result<PeelReport> {
    let mut report = peel_rec(v, k, budget, &[], 0.0)?;
    sort_candidates(&mut report.candidates);
    Ok(report)
}

type ModelCache = HashMap<(Vec<Element>, u64), DistributionVector>;

fn cached_vector<'a>(
    cache: &'a mut ModelCache,
    c: &CandidateEntry,
) -> Result<&'a DistributionVector> {
    let key = (c.center.as_slice().to_vec(), c.phi.to_bits());
    if !cache.contains_key(&key) {
        let vec = c.model()?.vectorize()?;
        cache.insert(key.clone(), vec);
    }
    Ok(&cache[&key])
}

fn model_cache(list: &[CandidateEntry]) -> Result<ModelCache> {
    let mut keys: Vec<(Vec<Element>, u64)> = list
        .iter()
        .map(|c| (c.center.as_slice().to_vec(), c.phi.to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_par_iter()
        .map(|(center, bits)| {
            let v = MallowsModel::new(
                f64::from_bits(bits),
                Permutation::from_vec_unchecked(center.clone()),
            )?
            .vectorize()?;
            Ok(((center, bits), v))
        })
        .collect()
}

fn peel_rec(
    v: &DistributionVector,
    remaining: usize,
    budget: &LearnerBudget,
    path: &[CandidateEntry],
    cum: f64,
) -> Result<PeelReport> {
    let mut report = PeelReport {
        candidates: Vec::new(),
        paths: Vec::new(),
    };
    if remaining == 0 {
        report.paths.push(path.to_vec());
        return Ok(report);
    }
    let list = learn_single_general(v, remaining, budget)?;
    let cache = model_cache(&list)?;
    let last = remaining == 1;
    let mut scored: Vec<(f64, &CandidateEntry)> = list
        .par_iter()
        .filter(|c| cum + c.weight <= 1.0 + budget.weight_slack)
        .map(|c| {
            let m = &cache[&(c.center.as_slice().to_vec(), c.phi.to_bits())];
            let score = v
                .values()
                .iter()
                .zip(m.values())
                .map(|(a, b)| {
                    let r = a - c.weight * b;
                    if last {
                        r.abs()
                    } else {
                        (-r).max(0.0)
                    }
                })
                .sum::<f64>();
            (score, c)
        })
        .collect();
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.center.cmp(&b.1.center))
            .then(a.1.phi.total_cmp(&b.1.phi))
            .then(a.1.weight.total_cmp(&b.1.weight))
    });
    if last {
        scored.truncate(budget.final_beam);
    } else if let Some(&(best, _)) = scored.first() {
        let tol = budget.neg_tolerance(v.n());
        scored.retain(|s| s.0 <= best + tol);
        scored.truncate(budget.beam);
    }
    if scored.is_empty() && !path.is_empty() {
        report.paths.push(path.to_vec());
    }
    let subs = scored
        .par_iter()
        .map(|(_, c)| {
            let mut r = v.clone();
            r.axpy(
                -c.weight,
                &cache[&(c.center.as_slice().to_vec(), c.phi.to_bits())],
            )?;
            let mut p = path.to_vec();
            p.push((*c).clone());
            peel_rec(&r, remaining - 1, budget, &p, cum + c.weight)
        })
        .collect::<Result<Vec<_>>>()?;
    report.candidates.extend(list.iter().cloned());
    for s in subs {
        report.candidates.extend(s.candidates);
        report.paths.extend(s.paths);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseTest {
    pub statistic: f64,
    pub threshold: f64,
    pub accept: bool,
}

fn close_test(
    v: &DistributionVector,
    candidate: &MallowsMixture,
    threshold: f64,
) -> Result<CloseTest> {
    let statistic = v.l1_distance(&candidate.vectorize()?)?;
    Ok(CloseTest {
        statistic,
        threshold,
        accept: statistic <= threshold,
    })
}

/// Accept iff `‖v(oracle) − v(candidate)‖₁` is within the budget threshold.
/// The candidate side is computed exactly.
pub fn test_componentwise_close(
    oracle: &dyn PlacementOracle,
    candidate: &MallowsMixture,
    budget: &LearnerBudget,
) -> Result<CloseTest> {
    if candidate.n() != oracle.n() {
        return invalid("candidate and oracle disagree on n");
    }
    close_test(
        &oracle_vector(oracle)?,
        candidate,
        budget.threshold(oracle.n()),
    )
}

/// Why a tuple is dropped before testing, if it is.
pub fn degenerate_reason(tuple: &[CandidateEntry], eps: f64, alpha: f64) -> Option<String> {
    for (i, a) in tuple.iter().enumerate() {
        if a.phi > 1.0 - eps / 2.0 {
            return Some(format!("component {i} has phi {} > 1 - eps/2", a.phi));
        }
        if a.weight < alpha / 2.0 {
            return Some(format!("component {i} has weight {} < alpha/2", a.weight));
        }
        for (j, b) in tuple.iter().enumerate().skip(i + 1) {
            if a.center == b.center && (a.phi - b.phi).abs() <= eps / 10.0 {
                return Some(format!("components {i} and {j} coincide"));
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralOutcome {
    pub mixture: MallowsMixture,
    pub statistic: f64,
    pub threshold: f64,
    /// Union of peeled candidates.
    pub candidates: Vec<CandidateEntry>,
    pub small_phi_list: Vec<Permutation>,
    pub tuples_tested: usize,
    pub tuples_eliminated: usize,
    pub tuples_accepted: usize,
}

fn normalize(tuple: &[CandidateEntry]) -> Option<Vec<CandidateEntry>> {
    let total = total_weight(tuple);
    if !(total > 0.0) {
        return None;
    }
    let mut out: Vec<CandidateEntry> = tuple
        .iter()
        .map(|c| CandidateEntry::new(c.weight / total, c.phi, c.center.clone()))
        .collect();
    // Exact renormalization so the mixture constructor accepts the sum.
    let rest: f64 = out[1..].iter().map(|c| c.weight).sum();
    out[0].weight = 1.0 - rest;
    out.sort_by(|a, b| a.center.cmp(&b.center).then(a.phi.total_cmp(&b.phi)));
    Some(out)
}

fn total_weight(tuple: &[CandidateEntry]) -> f64 {
    tuple.iter().map(|c| c.weight).sum()
}

fn to_mixture(tuple: &[CandidateEntry]) -> Result<MallowsMixture> {
    MallowsMixture::new(
        tuple
            .iter()
            .map(CandidateEntry::model)
            .collect::<Result<_>>()?,
        tuple.iter().map(|c| c.weight.max(0.0)).collect(),
    )
}

/// Small-φ guess sets: subsets of the frequent list with φ from the small
/// grid and w from the weight grid, kept by least negative residual mass.
fn small_phi_states(
    v: &DistributionVector,
    list: &[Permutation],
    k: usize,
    budget: &LearnerBudget,
) -> Result<Vec<(Vec<CandidateEntry>, DistributionVector)>> {
    let n = v.n();
    let mut states = vec![(Vec::<CandidateEntry>::new(), v.clone(), 0usize)];
    let mut frontier = states.clone();
    let mut cache = ModelCache::new();
    for _ in 0..k.min(list.len()) {
        let mut next = Vec::new();
        for (set, r, start) in &frontier {
            let used = total_weight(set);
            for (li, center) in list.iter().enumerate().skip(*start) {
                for &phi in &budget.small_phi_grid(n) {
                    for &w in &budget.weight_grid() {
                        if used + w > 1.0 + budget.weight_slack {
                            continue;
                        }
                        let c = CandidateEntry::new(w, phi, center.clone());
                        let mut r2 = r.clone();
                        r2.axpy(-w, cached_vector(&mut cache, &c)?)?;
                        let mut s2 = set.clone();
                        s2.push(c);
                        next.push((s2, r2, li + 1));
                    }
                }
            }
        }
        next.sort_by(|a, b| {
            negative_mass(a.1.values())
                .total_cmp(&negative_mass(b.1.values()))
                .then(total_weight(&b.0).total_cmp(&total_weight(&a.0)))
        });
        next.truncate(budget.small_beam);
        states.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(states.into_iter().map(|(s, r, _)| (s, r)).collect())
}

/// Full pipeline: small-φ removal, peeling, degenerate-tuple elimination,
/// component-wise testing. Returns the accepted tuple with the smallest
/// test statistic.
pub fn learn_mixture_general(
    oracle: &dyn PlacementOracle,
    k: usize,
    budget: &LearnerBudget,
) -> Result<GeneralOutcome> {
    let n = oracle.n();
    budget.validate(k, n)?;
    let v = oracle_vector(oracle)?;
    let threshold = budget.threshold(n);
    let eps = budget.epsilon(n);
    let small = small_phi_candidates_from_vector(&v, budget.alpha);

    let mut tuples: Vec<Vec<CandidateEntry>> = Vec::new();
    let mut candidates = Vec::new();
    for (set, residual) in small_phi_states(&v, &small, k, budget)? {
        if set.len() == k {
            tuples.push(set);
            continue;
        }
        let report = peel_components(&residual, k - set.len(), budget)?;
        candidates.extend(report.candidates);
        for p in report.paths {
            let mut t = set.clone();
            t.extend(p);
            tuples.push(t);
        }
    }
    sort_candidates(&mut candidates);

    let mut seen = HashSet::new();
    let mut eliminated = 0;
    let mut tested = 0;
    let mut accepted = 0;
    let mut best: Option<(CloseTest, MallowsMixture)> = None;
    let mut best_gap = f64::INFINITY;
    // Shorter peeling paths stay in the report but are not k-tuples.
    for t in tuples.into_iter().filter(|t| t.len() == k) {
        let Some(t) = normalize(&t) else {
            eliminated += 1;
            continue;
        };
        if !seen.insert(t.iter().map(CandidateEntry::key).collect::<Vec<_>>()) {
            continue;
        }
        if degenerate_reason(&t, eps, budget.alpha).is_some() {
            eliminated += 1;
            continue;
        }
        let mix = to_mixture(&t)?;
        let test = close_test(&v, &mix, threshold)?;
        tested += 1;
        best_gap = best_gap.min(test.statistic);
        if test.accept {
            accepted += 1;
            if best
                .as_ref()
                .map_or(true, |(b, _)| test.statistic < b.statistic)
            {
                best = Some((test, mix));
            }
        }
    }
    match best {
        Some((test, mixture)) => Ok(GeneralOutcome {
            mixture,
            statistic: test.statistic,
            threshold,
            candidates,
            small_phi_list: small,
            tuples_tested: tested,
            tuples_eliminated: eliminated,
            tuples_accepted: accepted,
        }),
        None => Err(Error::LearningFailure(format!(
            "no candidate accepted: {} candidates, {tested} tuples tested, {eliminated} eliminated, best L1 gap {best_gap:.3e} vs threshold {threshold:.3e}",
            candidates.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_many;
    use crate::oracle::TableOracle;

    fn perm(v: &[u16]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    fn mix(parts: &[(f64, f64, &[u16])]) -> MallowsMixture {
        MallowsMixture::new(
            parts
                .iter()
                .map(|(_, p, c)| MallowsModel::new(*p, perm(c)).unwrap())
                .collect(),
            parts.iter().map(|(w, _, _)| *w).collect(),
        )
        .unwrap()
    }

    fn has(list: &[CandidateEntry], phi: f64, center: &[u16], w: f64, tol: f64) -> bool {
        list.iter().any(|c| {
            c.center.as_slice() == center
                && (c.phi - phi).abs() < 1e-9
                && (c.weight - w).abs() < tol
        })
    }

    #[test]
    fn small_phi_list_examples() {
        let p = perm(&[2, 1, 3]);
        assert_eq!(small_phi_candidates(&vec![p.clone(); 50], 0.3), vec![p]);
        let uniform =
            MallowsMixture::single(MallowsModel::new(0.999_999, Permutation::identity(5)).unwrap());
        let s = sample_many(&uniform, 10_000, 3);
        assert!(small_phi_candidates(&s, 0.5).is_empty());
        let m = mix(&[(0.5, 0.0, &[3, 1, 2, 5, 4]), (0.5, 0.6, &[1, 2, 3, 4, 5])]);
        let s = sample_many(&m, 4000, 9);
        let list = small_phi_candidates(&s, 0.5);
        assert_eq!(list[0], perm(&[3, 1, 2, 5, 4]));
        assert!(list.len() as f64 <= 4.0 / 0.5);
    }

    #[test]
    fn removal_examples() {
        let m1 = MallowsModel::new(0.0, perm(&[2, 3, 1, 4])).unwrap();
        let m2 = MallowsModel::new(0.5, perm(&[4, 3, 2, 1])).unwrap();
        let mm = MallowsMixture::new(vec![m1.clone(), m2.clone()], vec![0.4, 0.6]).unwrap();
        let v = mixture_moment_vector(&mm, 4).unwrap();
        assert_eq!(remove_small_phi(&v, &[]).unwrap(), v);
        let r =
            remove_small_phi(&v, &[CandidateEntry::new(0.4, 0.0, perm(&[2, 3, 1, 4]))]).unwrap();
        let expect = mixture_moment_vector(&MallowsMixture::single(m2.clone()), 4).unwrap();
        for (q, val) in &r.entries {
            assert!((val - 0.6 * expect.get(q)).abs() < 1e-10);
        }
        let single = mixture_moment_vector(&MallowsMixture::single(m1), 3).unwrap();
        let r = remove_small_phi(
            &single,
            &[CandidateEntry::new(1.0, 0.0, perm(&[2, 3, 1, 4]))],
        )
        .unwrap();
        assert!(r.l1_norm() < 1e-10);
    }

    #[test]
    fn same_phi_single_component() {
        let v = MallowsModel::new(0.5, perm(&[3, 5, 1, 2, 4]))
            .unwrap()
            .vectorize()
            .unwrap();
        let g = &same_phi_guesses(5, 1)[0];
        let out = learn_single_same_phi(&v, 0.5, g).unwrap();
        assert_eq!(out.perms, vec![perm(&[3, 5, 1, 2, 4])]);
        assert!((out.mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_phi_adjacent_swap() {
        let m = mix(&[(0.5, 0.4, &[1, 2, 3, 4, 5]), (0.5, 0.4, &[1, 3, 2, 4, 5])]);
        let v = m.vectorize().unwrap();
        let g = SameGuess {
            blocks: vec![vec![2, 3]],
            pairs: vec![(2, 3)],
        };
        let out = learn_single_same_phi(&v, 0.4, &g).unwrap();
        assert!(out.perms.contains(&Permutation::identity(5)));
        assert!(out.perms.len() as f64 <= same_phi_list_bound(5, 2));
        assert!(same_phi_guesses(5, 2).contains(&g));
        // Without the structure the two centers are indistinguishable pairwise.
        let plain = learn_single_same_phi(&v, 0.4, &same_phi_guesses(5, 1)[0]).unwrap();
        assert_eq!(plain.ties, 1);
    }

    #[test]
    fn guesses_form_chains() {
        let g = same_phi_guesses(4, 3);
        assert!(g.iter().any(|g| g.blocks == vec![vec![1, 2, 3]]));
        assert!(g.iter().any(|g| g.blocks == vec![vec![3, 4], vec![1, 2]]));
        assert!(g.iter().all(|g| chains_from_pairs(&g.pairs).is_some()));
        assert!(chains_from_pairs(&[(1, 2), (2, 1)]).is_none());
        assert!(chains_from_pairs(&[(1, 2), (1, 3)]).is_none());
    }

    #[test]
    fn single_general_k1() {
        let v = MallowsModel::new(0.5, perm(&[2, 4, 1, 5, 3]))
            .unwrap()
            .vectorize()
            .unwrap();
        let list = learn_single_general(&v, 1, &LearnerBudget::default()).unwrap();
        assert!(has(&list, 0.5, &[2, 4, 1, 5, 3], 1.0, 1e-9));
        assert!(learn_single_general(
            &DistributionVector::zeros(5).unwrap(),
            1,
            &LearnerBudget::default()
        )
        .unwrap()
        .is_empty());
    }

    #[test]
    fn single_general_two_phis() {
        let m = mix(&[(0.5, 0.3, &[1, 2, 3, 4, 5]), (0.5, 0.7, &[5, 3, 1, 4, 2])]);
        let list =
            learn_single_general(&m.vectorize().unwrap(), 2, &LearnerBudget::default()).unwrap();
        assert!(has(&list, 0.3, &[1, 2, 3, 4, 5], 0.5, 1e-8));
        assert!(has(&list, 0.7, &[5, 3, 1, 4, 2], 0.5, 1e-8));
    }

    #[test]
    fn peel_recovers_both() {
        let m = mix(&[(0.4, 0.2, &[1, 2, 3, 4, 5]), (0.6, 0.6, &[4, 5, 2, 1, 3])]);
        let v = m.vectorize().unwrap();
        let b = LearnerBudget::default();
        let rep = peel_components(&v, 2, &b).unwrap();
        assert!(has(&rep.candidates, 0.2, &[1, 2, 3, 4, 5], 0.4, 1e-8));
        assert!(has(&rep.candidates, 0.6, &[4, 5, 2, 1, 3], 0.6, 1e-8));
        // Peeling one exact component leaves the other first.
        let r = subtract_candidates(&v, &[CandidateEntry::new(0.4, 0.2, perm(&[1, 2, 3, 4, 5]))])
            .unwrap();
        let single = peel_components(&r, 1, &b).unwrap();
        assert!(has(&single.candidates, 0.6, &[4, 5, 2, 1, 3], 0.6, 1e-8));
        assert_eq!(single.candidates, learn_single_general(&r, 1, &b).unwrap());
    }

    #[test]
    fn tester_examples() {
        let m = mix(&[(0.3, 0.2, &[1, 2, 3, 4]), (0.7, 0.5, &[4, 3, 2, 1])]);
        let o = TableOracle::exact(&m).unwrap();
        let b = LearnerBudget::default();
        assert!(test_componentwise_close(&o, &m, &b).unwrap().accept);
        let swapped = mix(&[(0.7, 0.5, &[4, 3, 2, 1]), (0.3, 0.2, &[1, 2, 3, 4])]);
        assert!(test_componentwise_close(&o, &swapped, &b).unwrap().accept);
        let far = mix(&[(0.3, 0.2, &[2, 4, 1, 3]), (0.7, 0.5, &[4, 3, 2, 1])]);
        assert!(!test_componentwise_close(&o, &far, &b).unwrap().accept);
    }

    #[test]
    fn pipeline_exact_k2() {
        let m = mix(&[
            (0.45, 0.2, &[1, 2, 3, 4, 5, 6]),
            (0.55, 0.6, &[6, 4, 2, 5, 1, 3]),
        ]);
        let o = TableOracle::exact(&m).unwrap();
        let out = learn_mixture_general(&o, 2, &LearnerBudget::default()).unwrap();
        let comps = out.mixture.components();
        assert_eq!(comps.len(), 2);
        let mut got: Vec<_> = comps
            .iter()
            .zip(out.mixture.weights())
            .map(|(c, w)| (c.center().clone(), c.phi(), *w))
            .collect();
        got.sort_by(|a, b| a.1.total_cmp(&b.1));
        assert_eq!(got[0].0, perm(&[1, 2, 3, 4, 5, 6]));
        assert_eq!(got[1].0, perm(&[6, 4, 2, 5, 1, 3]));
        assert!((got[0].1 - 0.2).abs() < 1e-9 && (got[0].2 - 0.45).abs() < 1e-6);
        assert!(out.statistic < 1e-8);
    }

    #[test]
    fn pipeline_sampled_k1() {
        let m = mix(&[(1.0, 0.4, &[3, 1, 5, 2, 4])]);
        let s = sample_many(&m, 100_000, 17);
        let o = TableOracle::empirical(5, &s, 0.05).unwrap();
        let b = LearnerBudget {
            samples: Some(s.len()),
            ..LearnerBudget::default()
        };
        let out = learn_mixture_general(&o, 1, &b).unwrap();
        let c = &out.mixture.components()[0];
        assert_eq!(c.center(), &perm(&[3, 1, 5, 2, 4]));
        assert!((c.phi() - 0.4).abs() <= 0.05);
        assert_eq!(out.mixture.weights(), &[1.0]);
    }

    #[test]
    fn identical_components_rejected() {
        let m = mix(&[(0.5, 0.3, &[1, 2, 3, 4]), (0.5, 0.3, &[1, 2, 3, 4])]);
        let o = TableOracle::exact(&m).unwrap();
        let err = learn_mixture_general(&o, 2, &LearnerBudget::default()).unwrap_err();
        assert!(matches!(err, Error::LearningFailure(_)), "{err}");
    }
}
