//! Mallows models, mixtures, repeated-insertion sampling and exact
//! vectorization.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::perm::{check_enumerable, enumerate_sn, factorial, lex_rank, Permutation};
use crate::seed::{rng_for, LabRng};
use crate::table::{perm_table, PermTable};

/// `1 + φ + … + φ^{len-1}`.
pub fn geometric_sum(phi: f64, len: usize) -> f64 {
    let mut s = 0.0;
    let mut t = 1.0;
    for _ in 0..len {
        s += t;
        t *= phi;
    }
    s
}

/// `Z_n(φ) = ∏_{i=1}^{n} (1 + φ + … + φ^{i-1})`.
pub fn normalizer(n: usize, phi: f64) -> f64 {
    (1..=n).map(|i| geometric_sum(phi, i)).product()
}

pub fn log_normalizer(n: usize, phi: f64) -> f64 {
    (1..=n).map(|i| geometric_sum(phi, i).ln()).sum()
}

fn check_phi(phi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) || phi.is_nan() {
        return invalid(format!("phi = {phi} is outside [0, 1]"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MallowsModel {
    phi: f64,
    center: Permutation,
}

impl MallowsModel {
    pub fn new(phi: f64, center: Permutation) -> Result<Self> {
        check_phi(phi)?;
        Ok(Self { phi, center })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn center(&self) -> &Permutation {
        &self.center
    }

    pub fn n(&self) -> usize {
        self.center.n()
    }

    /// Log-probability of `p`. Returns `-inf` for `φ = 0` off the center.
    pub fn log_pmf(&self, p: &Permutation) -> Result<f64> {
        if p.n() != self.n() {
            return invalid("permutation size does not match the model");
        }
        let d = crate::perm::kendall_tau(p, &self.center)?;
        Ok(self.log_pmf_from_distance(d))
    }

    pub(crate) fn log_pmf_from_distance(&self, d: usize) -> f64 {
        let log_z = log_normalizer(self.n(), self.phi);
        if d == 0 {
            -log_z
        } else if self.phi == 0.0 {
            f64::NEG_INFINITY
        } else {
            d as f64 * self.phi.ln() - log_z
        }
    }

    pub fn pmf(&self, p: &Permutation) -> Result<f64> {
        Ok(self.log_pmf(p)?.exp())
    }

    pub fn sampler(&self) -> RimSampler {
        RimSampler::new(self)
    }

    pub fn sample_rim(&self, rng: &mut LabRng) -> Permutation {
        self.sampler().sample(rng)
    }

    /// Exact length-`n!` probability vector in lexicographic order.
    pub fn vectorize(&self) -> Result<DistributionVector> {
        let table = perm_table(self.n())?;
        Ok(DistributionVector {
            n: self.n(),
            values: self.pmf_over(&table),
        })
    }

    pub(crate) fn pmf_over(&self, table: &PermTable) -> Vec<f64> {
        let cpos = self.center.positions();
        let log_z = log_normalizer(self.n(), self.phi);
        let log_phi = self.phi.ln();
        (0..table.len())
            .into_par_iter()
            .map(|i| {
                let d = crate::perm::kendall_tau_unchecked(table.ranking(i), &cpos);
                if d == 0 {
                    (-log_z).exp()
                } else if self.phi == 0.0 {
                    0.0
                } else {
                    (d as f64 * log_phi - log_z).exp()
                }
            })
            .collect()
    }
}

/// Repeated-insertion sampler with precomputed insertion tables.
///
/// Elements are inserted in center order. The `i`-th element (0-based) goes
/// into one of `i + 1` slots; landing `d` slots before the end creates `d`
/// inversions and has probability `φ^d / (1 + φ + … + φ^i)`.
#[derive(Clone, Debug)]
pub struct RimSampler {
    center: Vec<u16>,
    /// `cdf[i][d]`: probability of at most `d` new inversions at step `i`.
    cdf: Vec<Vec<f64>>,
}

impl RimSampler {
    pub fn new(m: &MallowsModel) -> Self {
        let n = m.n();
        let cdf = (0..n)
            .map(|i| {
                let z = geometric_sum(m.phi, i + 1);
                let mut acc = 0.0;
                let mut t = 1.0;
                let mut row = Vec::with_capacity(i + 1);
                for _ in 0..=i {
                    acc += t / z;
                    row.push(acc);
                    t *= m.phi;
                }
                *row.last_mut().unwrap() = 1.0;
                row
            })
            .collect();
        Self {
            center: m.center.as_slice().to_vec(),
            cdf,
        }
    }

    pub fn sample(&self, rng: &mut LabRng) -> Permutation {
        let mut out: Vec<u16> = Vec::with_capacity(self.center.len());
        for (i, &e) in self.center.iter().enumerate() {
            let u: f64 = rng.random();
            let row = &self.cdf[i];
            let d = row.iter().position(|&c| u < c).unwrap_or(i);
            out.insert(i - d, e);
        }
        Permutation::from_vec_unchecked(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MallowsMixture {
    components: Vec<MallowsModel>,
    weights: Vec<f64>,
}

impl MallowsMixture {
    pub fn new(components: Vec<MallowsModel>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return invalid("a mixture needs at least one component");
        }
        if components.len() != weights.len() {
            return invalid(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            ));
        }
        let n = components[0].n();
        if components.iter().any(|c| c.n() != n) {
            return invalid("mixture components have different n");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return invalid("mixture weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("mixture weights sum to {total}, not 1"));
        }
        Ok(Self {
            components,
            weights,
        })
    }

    pub fn single(model: MallowsModel) -> Self {
        Self {
            components: vec![model],
            weights: vec![1.0],
        }
    }

    pub fn components(&self) -> &[MallowsModel] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn n(&self) -> usize {
        self.components[0].n()
    }

    pub fn pmf(&self, p: &Permutation) -> Result<f64> {
        let mut s = 0.0;
        for (c, w) in self.components.iter().zip(&self.weights) {
            s += w * c.pmf(p)?;
        }
        Ok(s)
    }

    pub fn vectorize(&self) -> Result<DistributionVector> {
        let table = perm_table(self.n())?;
        Ok(DistributionVector {
            n: self.n(),
            values: self.pmf_over(&table),
        })
    }

    pub(crate) fn pmf_over(&self, table: &PermTable) -> Vec<f64> {
        let mut values = vec![0.0; table.len()];
        for (c, &w) in self.components.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (v, p) in values.iter_mut().zip(c.pmf_over(table)) {
                *v += w * p;
            }
        }
        values
    }

    pub fn sampler(&self) -> MixtureSampler {
        MixtureSampler::new(self)
    }

    /// One draw and its latent component index.
    pub fn sample(&self, rng: &mut LabRng) -> (Permutation, usize) {
        self.sampler().sample(rng)
    }
}

#[derive(Clone, Debug)]
pub struct MixtureSampler {
    cumulative: Vec<f64>,
    samplers: Vec<RimSampler>,
}

impl MixtureSampler {
    pub fn new(mix: &MallowsMixture) -> Self {
        let mut acc = 0.0;
        let cumulative = mix
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            cumulative,
            samplers: mix.components.iter().map(RimSampler::new).collect(),
        }
    }

    pub fn sample(&self, rng: &mut LabRng) -> (Permutation, usize) {
        let total = self.cumulative.last().copied().unwrap_or(1.0);
        let u: f64 = rng.random::<f64>() * total;
        // The first cumulative bound above u always belongs to a component
        // with positive weight.
        let idx = match self.cumulative.iter().position(|&c| u < c) {
            Some(i) => i,
            None => self
                .cumulative
                .iter()
                .position(|&c| c >= total)
                .unwrap_or(0),
        };
        (self.samplers[idx].sample(rng), idx)
    }
}

pub const SAMPLE_CHUNK: usize = 4096;

/// `count` draws from `mix`, generated in fixed chunks so that the output is
/// identical for any rayon pool size.
pub fn sample_many_traced(
    mix: &MallowsMixture,
    count: usize,
    master_seed: u64,
) -> Vec<(Permutation, usize)> {
    let sampler = mix.sampler();
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_for(master_seed, "sample", c as u64);
            let len = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
            let sampler = &sampler;
            (0..len)
                .map(move |_| sampler.sample(&mut rng))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn sample_many(mix: &MallowsMixture, count: usize, master_seed: u64) -> Vec<Permutation> {
    sample_many_traced(mix, count, master_seed)
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}

/// A real vector indexed by lexicographic permutation rank.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionVector {
    n: usize,
    values: Vec<f64>,
}

impl DistributionVector {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        check_enumerable(n)?;
        if values.len() != factorial(n) {
            return invalid(format!(
                "vector of length {} cannot index S_{n}",
                values.len()
            ));
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; factorial(n)])
    }

    /// Empirical distribution of `samples`.
    pub fn empirical(n: usize, samples: &[Permutation]) -> Result<Self> {
        let mut v = Self::zeros(n)?;
        if samples.is_empty() {
            return Ok(v);
        }
        let unit = 1.0 / samples.len() as f64;
        for s in samples {
            if s.n() != n {
                return invalid("sample size does not match n");
            }
            v.values[lex_rank(s)] += unit;
        }
        Ok(v)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, p: &Permutation) -> f64 {
        self.values[lex_rank(p)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn is_distribution(&self, tol: f64) -> bool {
        self.values.iter().all(|&v| v >= -tol) && (self.sum() - 1.0).abs() <= tol
    }

    /// `self + scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &DistributionVector) -> Result<()> {
        if self.n != other.n {
            return invalid("vectors over different n");
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &DistributionVector) -> Result<f64> {
        if self.n != other.n {
            return invalid("vectors over different n");
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    pub fn table(&self) -> Result<Arc<PermTable>> {
        perm_table(self.n)
    }

    /// Permutations and their values, lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (Permutation, f64)> + '_ {
        enumerate_sn(self.n)
            .expect("checked at construction")
            .zip(self.values.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::inversions;

    fn model(phi: f64, center: &[u16]) -> MallowsModel {
        MallowsModel::new(phi, Permutation::new(center.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn normalizer_examples() {
        assert_eq!(normalizer(5, 0.0), 1.0);
        assert!((normalizer(3, 1.0) - 6.0).abs() < 1e-15);
        assert!((normalizer(3, 0.5) - 2.625).abs() < 1e-15);
    }

    #[test]
    fn normalizer_matches_inversion_sum() {
        for n in 1..=7 {
            for step in 0..=10 {
                let phi = step as f64 / 10.0;
                let brute: f64 = enumerate_sn(n)
                    .unwrap()
                    .map(|p| phi.powi(inversions(&p) as i32))
                    .sum();
                let z = normalizer(n, phi);
                assert!((z - brute).abs() <= 1e-12 * brute, "n={n} phi={phi}");
            }
        }
    }

    #[test]
    fn log_pmf_examples() {
        let m = model(0.5, &[1, 2, 3]);
        let c = Permutation::identity(3);
        assert!((m.log_pmf(&c).unwrap() - (1.0f64 / 2.625).ln()).abs() < 1e-14);
        let p = Permutation::new(vec![2, 1, 3]).unwrap();
        assert!((m.log_pmf(&p).unwrap() - (0.5f64 / 2.625).ln()).abs() < 1e-14);
        let u = model(1.0, &[3, 1, 2]);
        assert!((u.log_pmf(&p).unwrap() - (1.0f64 / 6.0).ln()).abs() < 1e-14);
        let point = model(0.0, &[1, 2, 3]);
        assert_eq!(point.log_pmf(&p).unwrap(), f64::NEG_INFINITY);
        assert_eq!(point.log_pmf(&c).unwrap(), 0.0);
    }

    #[test]
    fn vectorize_examples() {
        let v = model(0.5, &[1, 2]).vectorize().unwrap();
        assert!((v.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.values()[1] - 1.0 / 3.0).abs() < 1e-15);
        let u = model(1.0, &[2, 4, 1, 3]).vectorize().unwrap();
        assert!(u.values().iter().all(|&x| (x - 1.0 / 24.0).abs() < 1e-15));
        for n in 1..=6 {
            for phi in [0.0, 0.15, 0.5, 0.9, 1.0] {
                let c = crate::perm::lex_unrank(n, factorial(n) / 2).unwrap();
                let v = MallowsModel::new(phi, c).unwrap().vectorize().unwrap();
                assert!((v.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rim_endpoints() {
        let mut rng = rng_for(1, "t", 0);
        let m = model(0.0, &[3, 1, 4, 2]);
        for _ in 0..100 {
            assert_eq!(m.sample_rim(&mut rng), *m.center());
        }
        let u = model(1.0, &[1, 2, 3]);
        let samples: Vec<_> = (0..60000).map(|_| u.sample_rim(&mut rng)).collect();
        let emp = DistributionVector::empirical(3, &samples).unwrap();
        for &f in emp.values() {
            assert!((f - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn zero_weight_component_is_never_drawn() {
        let mix = MallowsMixture::new(
            vec![model(0.5, &[1, 2, 3]), model(0.5, &[3, 2, 1])],
            vec![1.0, 0.0],
        )
        .unwrap();
        let draws = sample_many_traced(&mix, 100_000, 3);
        assert!(draws.iter().all(|(_, i)| *i == 0));
    }

    #[test]
    fn mixture_sampling_matches_vectorization() {
        let mix = MallowsMixture::new(
            vec![model(0.3, &[1, 2, 3]), model(0.7, &[3, 1, 2])],
            vec![0.4, 0.6],
        )
        .unwrap();
        let samples = sample_many(&mix, 1_000_000, 11);
        let emp = DistributionVector::empirical(3, &samples).unwrap();
        let exact = mix.vectorize().unwrap();
        assert!(0.5 * emp.l1_distance(&exact).unwrap() <= 0.01);
    }

    #[test]
    fn sampling_independent_of_pool_size() {
        let mix = MallowsMixture::single(model(0.6, &[2, 5, 1, 4, 3]));
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| sample_many(&mix, 20_000, 5));
        let b = four.install(|| sample_many(&mix, 20_000, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_validation() {
        let a = model(0.5, &[1, 2, 3]);
        assert!(MallowsMixture::new(vec![a.clone()], vec![0.9]).is_err());
        assert!(MallowsMixture::new(vec![a.clone(), model(0.5, &[1, 2])], vec![0.5, 0.5]).is_err());
        assert!(MallowsMixture::new(vec![a], vec![1.0]).is_ok());
        assert!(MallowsModel::new(1.5, Permutation::identity(2)).is_err());
    }
}
