//! Block, order and ordered-block structures, their moment tensors and the
//! test vectors that isolate a single component.
//!
//! Tensor axes follow the block order; along each axis the inner orderings of
//! a block are indexed lexicographically after relabeling the block's
//! elements by increasing value.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{DistributionVector, MallowsMixture, MallowsModel};
use crate::oracle::{PlacementOracle, TableOracle};
use crate::perm::{factorial, lex_rank, relabel, restrict, Element, Permutation};

fn check_disjoint(blocks: &[Vec<Element>]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for b in blocks {
        if b.is_empty() {
            return invalid("empty block");
        }
        for &e in b {
            if e == 0 {
                return invalid("element 0 in structure");
            }
            if !seen.insert(e) {
                return invalid(format!("element {e} appears in two blocks"));
            }
        }
    }
    Ok(())
}

/// Ordered collection of disjoint element sets.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockStructure {
    blocks: Vec<Vec<Element>>,
}

impl BlockStructure {
    pub fn new(blocks: Vec<Vec<Element>>) -> Result<Self> {
        check_disjoint(&blocks)?;
        let blocks = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<Element>] {
        &self.blocks
    }

    /// Total number of elements `ℓ`.
    pub fn size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| factorial(b.len())).collect()
    }

    fn max_element(&self) -> usize {
        self.blocks.iter().flatten().copied().max().unwrap_or(0) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OrderStructure {
    chains: Vec<Vec<Element>>,
}

impl OrderStructure {
    pub fn new(chains: Vec<Vec<Element>>) -> Result<Self> {
        for c in &chains {
            let mut s = c.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != c.len() {
                return invalid("repeated element within a chain");
            }
        }
        Ok(Self { chains })
    }

    pub fn chains(&self) -> &[Vec<Element>] {
        &self.chains
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OrderedBlockStructure {
    blocks: Vec<Vec<Element>>,
}

impl OrderedBlockStructure {
    pub fn new(blocks: Vec<Vec<Element>>) -> Result<Self> {
        check_disjoint(&blocks)?;
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<Element>] {
        &self.blocks
    }

    pub fn as_block_structure(&self) -> BlockStructure {
        BlockStructure::new(self.blocks.clone()).expect("validated")
    }

    pub fn as_order_structure(&self) -> OrderStructure {
        OrderStructure {
            chains: self.blocks.clone(),
        }
    }
}

/// Config literal: `{"blocks": [[1,2],[4,5,6]], "ordered": true}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureLiteral {
    pub blocks: Vec<Vec<Element>>,
    #[serde(default)]
    pub ordered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Structure {
    Block(BlockStructure),
    Order(OrderStructure),
    OrderedBlock(OrderedBlockStructure),
}

impl StructureLiteral {
    pub fn build(&self) -> Result<Structure> {
        if self.ordered {
            Ok(Structure::OrderedBlock(OrderedBlockStructure::new(
                self.blocks.clone(),
            )?))
        } else {
            Ok(Structure::Block(BlockStructure::new(self.blocks.clone())?))
        }
    }
}

/// Each block occupies consecutive positions and the blocks appear in order.
pub fn satisfies_blocks(positions: &[u16], blocks: &[Vec<Element>]) -> bool {
    let mut prev_end: Option<u16> = None;
    for b in blocks {
        let mut lo = u16::MAX;
        let mut hi = 0;
        for &e in b {
            let p = positions[e as usize - 1];
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if (hi - lo) as usize + 1 != b.len() {
            return false;
        }
        if let Some(end) = prev_end {
            if lo < end {
                return false;
            }
        }
        prev_end = Some(hi);
    }
    true
}

/// Each chain keeps its relative order.
pub fn satisfies_chains(positions: &[u16], chains: &[Vec<Element>]) -> bool {
    chains.iter().all(|c| {
        c.windows(2)
            .all(|w| positions[w[0] as usize - 1] < positions[w[1] as usize - 1])
    })
}

pub fn satisfies(p: &Permutation, s: &Structure) -> bool {
    let pos = p.positions();
    let fits = |blocks: &[Vec<Element>]| {
        blocks
            .iter()
            .flatten()
            .all(|&e| e as usize <= p.n() && e > 0)
    };
    match s {
        Structure::Block(b) => fits(&b.blocks) && satisfies_blocks(&pos, &b.blocks),
        Structure::Order(o) => fits(&o.chains) && satisfies_chains(&pos, &o.chains),
        Structure::OrderedBlock(ob) => {
            fits(&ob.blocks)
                && satisfies_blocks(&pos, &ob.blocks)
                && satisfies_chains(&pos, &ob.blocks)
        }
    }
}

/// Each block occupies consecutive positions; block order is free.
pub fn blocks_consecutive(positions: &[u16], blocks: &[Vec<Element>]) -> bool {
    blocks.iter().all(|b| {
        let (lo, hi) = b.iter().fold((u16::MAX, 0), |(lo, hi), &e| {
            let p = positions[e as usize - 1];
            (lo.min(p), hi.max(p))
        });
        (hi - lo) as usize + 1 == b.len()
    })
}

/// `Pr_{M(φ, center)}` that the ranking starts with `prefix`, from the
/// top-down selection form of the model.
pub fn prefix_prob(phi: f64, center: &Permutation, prefix: &[Element]) -> f64 {
    let n = center.n();
    let mut used = vec![false; n + 1];
    let mut p = 1.0;
    for (t, &e) in prefix.iter().enumerate() {
        let mut r = 0;
        for &x in center.as_slice() {
            if x == e {
                break;
            }
            if !used[x as usize] {
                r += 1;
            }
        }
        p *= phi.powi(r) / crate::model::geometric_sum(phi, n - t);
        used[e as usize] = true;
    }
    p
}

/// Lexicographic index of the order in which `block` (sorted) appears.
pub(crate) fn inner_index(positions: &[u16], block: &[Element]) -> usize {
    let m = block.len();
    let mut rank = 0;
    // Lehmer code of the sequence of block elements sorted by position.
    let mut order: Vec<(u16, usize)> = block
        .iter()
        .enumerate()
        .map(|(i, &e)| (positions[e as usize - 1], i))
        .collect();
    order.sort_unstable();
    for i in 0..m {
        let smaller_after = order[i + 1..]
            .iter()
            .filter(|&&(_, j)| j < order[i].1)
            .count();
        rank = rank * (m - i) + smaller_after;
    }
    rank
}

/// Dense tensor with row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTensor {
    dims: Vec<usize>,
    entries: Vec<f64>,
}

impl MomentTensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            entries: vec![0.0; len],
        }
    }

    pub fn from_entries(dims: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != entries.len() {
            return invalid("tensor entry count does not match dims");
        }
        Ok(Self { dims, entries })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.entries[self.flat_index(idx)]
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn l1_distance(&self, other: &MomentTensor) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            *e *= s;
        }
    }

    /// `⟨v_1 ⊗ … ⊗ v_j, T⟩`.
    pub fn contract(&self, vectors: &[&[f64]]) -> Result<f64> {
        if vectors.len() != self.dims.len()
            || vectors.iter().zip(&self.dims).any(|(v, &d)| v.len() != d)
        {
            return invalid("test vector shapes do not match tensor dims");
        }
        let mut total = 0.0;
        let mut idx = vec![0usize; self.dims.len()];
        for &e in &self.entries {
            let w: f64 = idx.iter().zip(vectors).map(|(&i, v)| v[i]).product();
            total += w * e;
            for a in (0..idx.len()).rev() {
                idx[a] += 1;
                if idx[a] < self.dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(total)
    }
}

pub fn outer_product(scale: f64, vectors: &[Vec<f64>]) -> MomentTensor {
    let dims: Vec<usize> = vectors.iter().map(Vec::len).collect();
    let mut entries = vec![scale];
    for v in vectors {
        entries = entries
            .iter()
            .flat_map(|&a| v.iter().map(move |&b| a * b))
            .collect();
    }
    MomentTensor { dims, entries }
}

/// `T_{M,B}`: probability of satisfying `B` with each tuple of inner orderings.
pub fn block_tensor(oracle: &dyn PlacementOracle, b: &BlockStructure) -> Result<MomentTensor> {
    if b.size() > oracle.n() || b.max_element() > oracle.n() {
        return invalid(format!(
            "structure on {} elements does not fit n = {}",
            b.size(),
            oracle.n()
        ));
    }
    let mut t = MomentTensor::zeros(b.dims());
    let mut idx = vec![0usize; b.blocks.len()];
    oracle.visit(&mut |_, pos, w| {
        if satisfies_blocks(pos, &b.blocks) {
            for (slot, block) in idx.iter_mut().zip(&b.blocks) {
                *slot = inner_index(pos, block);
            }
            let f = t.flat_index(&idx);
            t.entries[f] += w;
        }
    });
    Ok(t)
}

/// Exact `Pr_M[π ∈ S_B]`.
pub fn block_prob(m: &MallowsModel, b: &BlockStructure) -> Result<f64> {
    if b.blocks.is_empty() {
        return Ok(1.0);
    }
    let o = TableOracle::exact(&MallowsMixture::single(m.clone()))?;
    Ok(block_tensor(&o, b)?.sum())
}

/// The lower bound `1/n^{2ℓ}` on `Pr_M[π ∈ S_B]` when the center satisfies `B`.
pub fn fix_bound(n: usize, ell: usize) -> f64 {
    (n as f64).powi(-2 * ell as i32)
}

/// `v(M(φ, π|_S))` indexed by inner ordering of sorted `S`.
pub fn restricted_vector(
    phi: f64,
    center: &Permutation,
    subset: &[Element],
) -> Result<DistributionVector> {
    let r = restrict(center, subset)?;
    MallowsModel::new(phi, relabel(&r))?.vectorize()
}

/// The rank-one form `Pr[S_B] · v(M(φ, π|S_1)) ⊗ … ⊗ v(M(φ, π|S_j))`.
pub fn rank_one_block_tensor(m: &MallowsModel, b: &BlockStructure) -> Result<MomentTensor> {
    let p = block_prob(m, b)?;
    let factors = b
        .blocks
        .iter()
        .map(|s| restricted_vector(m.phi(), m.center(), s).map(DistributionVector::into_values))
        .collect::<Result<Vec<_>>>()?;
    Ok(outer_product(p, &factors))
}

/// Inner ordering index of a ranking of a block's elements.
pub fn ordering_index(ordering: &[Element]) -> usize {
    lex_rank(&relabel(ordering))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestVector {
    pub values: Vec<f64>,
    /// Elements the vector tests; empty when not tied to a block.
    pub block: Vec<Element>,
}

/// Two-entry test vector orthogonal to `v(M(φ, pair))`; index 0 is the
/// "x before y" ordering. `x_first` names the order being annihilated.
pub fn pair_test_vector(phi: f64, x_first: bool) -> Result<TestVector> {
    if !(0.0..1.0).contains(&phi) {
        return invalid(format!("pair test vector needs 0 <= phi < 1, got {phi}"));
    }
    let values = if x_first {
        vec![phi / (1.0 + phi), -1.0 / (1.0 + phi)]
    } else {
        vec![1.0 / (1.0 + phi), -phi / (1.0 + phi)]
    };
    Ok(TestVector {
        values,
        block: Vec::new(),
    })
}

/// `v(M(φ, pair))` over the two orderings, index 0 = x before y.
pub fn pair_vector(phi: f64, x_first: bool) -> [f64; 2] {
    let a = 1.0 / (1.0 + phi);
    let b = phi / (1.0 + phi);
    if x_first {
        [a, b]
    } else {
        [b, a]
    }
}

pub const DEGENERACY_TOL: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector in the orthogonal complement of `others` with positive inner
/// product against `target`. Gram-Schmidt with a second
/// reorthogonalization sweep.
pub fn ortho_test_vector(target: &[f64], others: &[&[f64]]) -> Result<TestVector> {
    if others.iter().any(|o| o.len() != target.len()) {
        return invalid("test vector inputs have different dimensions");
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for o in others {
        let mut v = o.to_vec();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > DEGENERACY_TOL {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut r = target.to_vec();
    for _ in 0..2 {
        for b in &basis {
            let c = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let norm = dot(&r, &r).sqrt();
    let scale = dot(target, target).sqrt().max(1.0);
    if norm <= DEGENERACY_TOL * scale {
        return Err(Error::Degenerate(
            "target lies in the span of the other vectors".into(),
        ));
    }
    r.iter_mut().for_each(|x| *x /= norm);
    Ok(TestVector {
        values: r,
        block: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::enumerate_sn;

    fn perm(v: &[u16]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    fn model(phi: f64, center: &[u16]) -> MallowsModel {
        MallowsModel::new(phi, perm(center)).unwrap()
    }

    #[test]
    fn satisfaction_examples() {
        let blocks = vec![vec![1, 2], vec![4, 5, 6]];
        let b = Structure::Block(BlockStructure::new(blocks.clone()).unwrap());
        let o = Structure::Order(OrderStructure::new(blocks.clone()).unwrap());
        let ob = Structure::OrderedBlock(OrderedBlockStructure::new(blocks).unwrap());
        assert!(satisfies(&perm(&[1, 2, 3, 7, 6, 5, 4]), &b));
        assert!(!satisfies(&perm(&[1, 2, 3, 7, 6, 5, 4]), &ob));
        assert!(satisfies(&perm(&[1, 3, 4, 2, 5, 6, 7]), &o));
        assert!(!satisfies(&perm(&[1, 3, 4, 2, 5, 6, 7]), &b));
        assert!(satisfies(&perm(&[1, 2, 3, 4, 5, 6, 7]), &ob));
        assert!(!satisfies(&perm(&[4, 5, 6, 3, 1, 2, 7]), &b));
    }

    #[test]
    fn structure_literal_parses() {
        let lit: StructureLiteral =
            serde_json::from_str(r#"{"blocks": [[1,2],[4,5,6]], "ordered": true}"#).unwrap();
        assert!(matches!(lit.build().unwrap(), Structure::OrderedBlock(_)));
        assert!(StructureLiteral {
            blocks: vec![vec![1, 2], vec![2]],
            ordered: false
        }
        .build()
        .is_err());
    }

    #[test]
    fn inner_index_is_lexicographic() {
        let block = [2u16, 5, 7];
        for (i, ord) in enumerate_sn(3).unwrap().enumerate() {
            let ranking: Vec<u16> = ord
                .as_slice()
                .iter()
                .map(|&j| block[j as usize - 1])
                .collect();
            let mut pos = vec![0u16; 7];
            for (p, &e) in ranking.iter().enumerate() {
                pos[e as usize - 1] = p as u16;
            }
            assert_eq!(inner_index(&pos, &block), i);
            assert_eq!(ordering_index(&ranking), i);
        }
    }

    #[test]
    fn single_block_is_reshaped_vectorization() {
        let m = model(0.4, &[3, 1, 4, 2]);
        let o = TableOracle::exact(&MallowsMixture::single(m.clone())).unwrap();
        let t = block_tensor(&o, &BlockStructure::new(vec![vec![1, 2, 3, 4]]).unwrap()).unwrap();
        assert_eq!(t.entries(), m.vectorize().unwrap().values());
    }

    #[test]
    fn two_pair_tensor_factorizes() {
        let m = model(0.5, &[1, 2, 3, 4]);
        let b = BlockStructure::new(vec![vec![1, 2], vec![3, 4]]).unwrap();
        let o = TableOracle::exact(&MallowsMixture::single(m.clone())).unwrap();
        let t = block_tensor(&o, &b).unwrap();
        let r = rank_one_block_tensor(&m, &b).unwrap();
        assert!(t.l1_distance(&r) < 1e-12 * 4.0);
        // Pr[S_B] by direct enumeration.
        let direct: f64 = enumerate_sn(4)
            .unwrap()
            .filter(|p| satisfies_blocks(&p.positions(), b.blocks()))
            .map(|p| m.pmf(&p).unwrap())
            .sum();
        assert!((t.sum() - direct).abs() < 1e-15);
    }

    #[test]
    fn uniform_block_tensor_is_flat() {
        let m = model(1.0, &[1, 2, 3, 4, 5]);
        let b = BlockStructure::new(vec![vec![1, 3], vec![2, 4, 5]]).unwrap();
        let o = TableOracle::exact(&MallowsMixture::single(m.clone())).unwrap();
        let t = block_tensor(&o, &b).unwrap();
        let first = t.entries()[0];
        assert!(t.entries().iter().all(|&x| (x - first).abs() < 1e-15));
        assert!((t.sum() - block_prob(&m, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn block_prob_examples() {
        let m = model(0.5, &[1, 2, 3]);
        assert_eq!(
            block_prob(&m, &BlockStructure::new(vec![]).unwrap()).unwrap(),
            1.0
        );
        let p = block_prob(&m, &BlockStructure::new(vec![vec![1, 2]]).unwrap()).unwrap();
        assert!(p >= fix_bound(3, 2));
        // {1,2} adjacent in 123, 213, 312, 321 with 0, 1, 2, 3 inversions.
        let z = crate::model::normalizer(3, 0.5);
        assert!((p - (1.0 + 0.5 + 0.25 + 0.125) / z).abs() < 1e-15);
    }

    #[test]
    fn pair_vector_examples() {
        let v = pair_test_vector(0.5, true).unwrap();
        assert!((v.values[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v.values[1] + 2.0 / 3.0).abs() < 1e-15);
        assert!(dot(&v.values, &pair_vector(0.5, true)).abs() < 1e-15);
        let w = pair_test_vector(0.2, true).unwrap();
        assert!(dot(&w.values, &pair_vector(0.6, true)).abs() >= (0.6 - 0.2) / 4.0);
        assert!(pair_test_vector(1.0, true).is_err());
    }

    #[test]
    fn ortho_examples() {
        let t = [3.0, 4.0];
        let u = ortho_test_vector(&t, &[]).unwrap();
        assert!((u.values[0] - 0.6).abs() < 1e-15 && (u.values[1] - 0.8).abs() < 1e-15);
        let a = [1.0, 0.0, 1.0];
        let b = [0.0, 1.0, 1.0];
        let t = [1.0, 1.0, 0.0];
        let u = ortho_test_vector(&t, &[&a, &b]).unwrap();
        assert!(dot(&u.values, &a).abs() < 1e-10);
        assert!(dot(&u.values, &b).abs() < 1e-10);
        assert!(dot(&u.values, &t) > 0.0);
        let sum = [1.0, 1.0, 2.0];
        assert!(matches!(
            ortho_test_vector(&sum, &[&a, &b]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ortho_projection_bound_on_pair_columns() {
        // Columns v(M(φ, σ)) over S_3 for three centers; projection of the
        // first onto the complement of the others clears (ε^3/√6)^3 / 6.
        let phi = 0.5;
        let eps: f64 = 0.5;
        let cols: Vec<Vec<f64>> = [[1u16, 2, 3], [2, 1, 3], [1, 3, 2]]
            .iter()
            .map(|c| model(phi, c).vectorize().unwrap().into_values())
            .collect();
        let u = ortho_test_vector(&cols[0], &[&cols[1], &cols[2]]).unwrap();
        let bound = (eps.powi(3) / 6f64.sqrt()).powi(3) / 6.0;
        assert!(dot(&u.values, &cols[0]) >= bound);
    }

    #[test]
    fn contraction_of_outer_product() {
        let t = outer_product(2.0, &[vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]);
        let c = t.contract(&[&[1.0, -1.0], &[0.0, 1.0, 0.0]]).unwrap();
        assert!((c - 2.0 * (1.0 - 2.0) * 4.0).abs() < 1e-15);
    }

    #[test]
    fn prefix_prob_matches_enumeration() {
        let center = perm(&[3, 1, 4, 2, 5]);
        let m = MallowsModel::new(0.35, center.clone()).unwrap();
        for prefix in [vec![3], vec![1, 3], vec![5, 2], vec![4, 1, 3]] {
            let direct: f64 = enumerate_sn(5)
                .unwrap()
                .filter(|p| p.as_slice().starts_with(&prefix))
                .map(|p| m.pmf(&p).unwrap())
                .sum();
            assert!((prefix_prob(0.35, &center, &prefix) - direct).abs() < 1e-14);
        }
        assert_eq!(prefix_prob(0.0, &center, &[3, 1]), 1.0);
    }

    #[test]
    fn consecutive_blocks_ignore_block_order() {
        let pos = perm(&[4, 5, 1, 2, 3]).positions();
        assert!(blocks_consecutive(&pos, &[vec![1, 2], vec![4, 5]]));
        assert!(!satisfies_blocks(&pos, &[vec![1, 2], vec![4, 5]]));
        assert!(!blocks_consecutive(&pos, &[vec![5, 1, 3]]));
    }
}
