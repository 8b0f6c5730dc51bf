//! Exact checks of the determinant identity for `A_n(φ)`, robust Kruskal
//! rank bounds, and the L1 identifiability bound for Mallows collections.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{l1_combination, tv_exact, tv_models};
use crate::error::{invalid, Error, Result};
use crate::model::{normalizer, DistributionVector, MallowsMixture, MallowsModel};
use crate::perm::{factorial, kendall_tau_unchecked, Permutation};
use crate::table::perm_table;

/// Largest `n` for which the exact `n! × n!` determinant is attempted.
pub const ZAGIER_MAX_N: usize = 5;

/// Parses `p/q`, an integer, or a finite decimal into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational number: {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.chars().any(|c| !c.is_ascii_digit()) {
        return Err(bad());
    }
    let neg = int.starts_with('-');
    let digits = format!("{}{}", int.trim_start_matches(['-', '+']), frac);
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let mut num: BigInt = digits.parse().map_err(|_| bad())?;
    if neg {
        num = -num;
    }
    let den = num_traits::pow(BigInt::from(10), frac.len());
    Ok(BigRational::new(num, den))
}

fn rational_pow(base: &BigRational, mut exp: u64) -> BigRational {
    let mut acc = BigRational::one();
    let mut b = base.clone();
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= &b;
        }
        b = &b * &b;
        exp >>= 1;
    }
    acc
}

/// Fraction-free Gaussian elimination. Consumes the matrix.
pub fn bareiss_determinant(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let size = m.len();
    if size == 0 {
        return BigInt::one();
    }
    let mut sign = false;
    let mut prev = BigInt::one();
    for k in 0..size - 1 {
        if m[k][k].is_zero() {
            match (k + 1..size).find(|&r| !m[r][k].is_zero()) {
                Some(r) => {
                    m.swap(k, r);
                    sign = !sign;
                }
                None => return BigInt::zero(),
            }
        }
        let (head, tail) = m.split_at_mut(k + 1);
        let pivot_row = &head[k];
        tail.par_iter_mut().for_each(|row| {
            for j in k + 1..size {
                let v = &pivot_row[k] * &row[j] - &row[k] * &pivot_row[j];
                row[j] = v / &prev;
            }
        });
        prev = m[k][k].clone();
    }
    let det = m[size - 1][size - 1].clone();
    if sign {
        -det
    } else {
        det
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZagierReport {
    pub n: usize,
    pub phi: String,
    pub det_num: String,
    pub det_den: String,
    pub formula_num: String,
    pub formula_den: String,
    pub equal: bool,
}

/// `∏_{i=1}^{n-1} (1 - φ^{i²+i})^{n!(n-i)/(i²+i)}` in exact arithmetic.
pub fn zagier_formula(n: usize, phi: &BigRational) -> Result<BigRational> {
    let nf = factorial(n) as u64;
    let mut acc = BigRational::one();
    for i in 1..n as u64 {
        let e = i * i + i;
        let top = nf * (n as u64 - i);
        if top % e != 0 {
            return invalid(format!("non-integral exponent at i = {i}"));
        }
        let factor = BigRational::one() - rational_pow(phi, e);
        acc *= rational_pow(&factor, top / e);
    }
    Ok(acc)
}

/// Exact determinant of `A_n(φ)` for rational `φ`.
pub fn zagier_determinant(n: usize, phi: &BigRational) -> Result<BigRational> {
    if n > ZAGIER_MAX_N {
        return Err(Error::ResourceLimit {
            what: "exact determinant n",
            requested: n,
            limit: ZAGIER_MAX_N,
        });
    }
    if n == 0 {
        return invalid("n must be positive");
    }
    let table = perm_table(n)?;
    let size = table.len();
    let d = n * (n - 1) / 2;
    let p = phi.numer().clone();
    let q = phi.denom().clone();
    // Scale every entry by q^D so that φ^I becomes p^I q^(D-I).
    let pp: Vec<BigInt> = (0..=d).map(|i| num_traits::pow(p.clone(), i)).collect();
    let qp: Vec<BigInt> = (0..=d).map(|i| num_traits::pow(q.clone(), i)).collect();
    let m: Vec<Vec<BigInt>> = (0..size)
        .map(|r| {
            (0..size)
                .map(|c| {
                    let inv = kendall_tau_unchecked(table.ranking(r), table.positions(c));
                    &pp[inv] * &qp[d - inv]
                })
                .collect()
        })
        .collect();
    let det = bareiss_determinant(m);
    let scale = num_traits::pow(q, d * size);
    Ok(BigRational::new(det, scale))
}

pub fn zagier_check(n: usize, phi: &BigRational) -> Result<ZagierReport> {
    if !(2..=ZAGIER_MAX_N).contains(&n) {
        if n > ZAGIER_MAX_N {
            return Err(Error::ResourceLimit {
                what: "exact determinant n",
                requested: n,
                limit: ZAGIER_MAX_N,
            });
        }
        return invalid("n must be at least 2");
    }
    if phi.is_negative() || *phi >= BigRational::one() {
        return invalid(format!("phi = {phi} outside [0, 1)"));
    }
    let det = zagier_determinant(n, phi)?;
    let formula = zagier_formula(n, phi)?;
    Ok(ZagierReport {
        n,
        phi: phi.to_string(),
        det_num: det.numer().to_string(),
        det_den: det.denom().to_string(),
        formula_num: formula.numer().to_string(),
        formula_den: formula.denom().to_string(),
        equal: det == formula,
    })
}

fn check_perms(n: usize, perms: &[Permutation]) -> Result<()> {
    if perms.is_empty() {
        return invalid("need at least one permutation");
    }
    if perms.iter().any(|p| p.n() != n) {
        return invalid("permutation length differs from n");
    }
    for (i, a) in perms.iter().enumerate() {
        if perms[..i].contains(a) {
            return invalid(format!("duplicate permutation {a}"));
        }
    }
    Ok(())
}

fn check_phi_eps(phi: f64, eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&phi) {
        return invalid(format!("phi = {phi} outside [0, 1)"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("eps = {eps} outside (0, 1]"));
    }
    if phi > 1.0 - eps {
        return Err(Error::PreconditionViolated(format!(
            "phi = {phi} exceeds 1 - eps = {}",
            1.0 - eps
        )));
    }
    Ok(())
}

/// Column of `A_n(φ)` indexed by `center`, in lexicographic row order.
pub fn zagier_column(phi: f64, center: &Permutation) -> Result<Vec<f64>> {
    let v = MallowsModel::new(phi, center.clone())?.vectorize()?;
    let z = normalizer(center.n(), phi);
    Ok(v.into_values().into_iter().map(|x| x * z).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean length of the component of `target` orthogonal to `others`.
pub fn residual_norm(target: &[f64], others: &[Vec<f64>]) -> f64 {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for o in others {
        let mut u = o.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&u, b);
                u.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(&u, &u).sqrt();
        if norm > 1e-12 * dot(o, o).sqrt().max(1e-300) {
            u.iter_mut().for_each(|x| *x /= norm);
            basis.push(u);
        }
    }
    let mut r = target.to_vec();
    for _ in 0..2 {
        for b in &basis {
            let c = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    dot(&r, &r).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub proj_len: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Projection of column `perms[0]` of `A_n(φ)` off the span of the rest,
/// against `(ε^n / √n!)^k`.
pub fn kruskal_projection(
    n: usize,
    phi: f64,
    eps: f64,
    perms: &[Permutation],
) -> Result<ProjectionReport> {
    if n > ZAGIER_MAX_N {
        return Err(Error::ResourceLimit {
            what: "kruskal n",
            requested: n,
            limit: ZAGIER_MAX_N,
        });
    }
    check_perms(n, perms)?;
    check_phi_eps(phi, eps)?;
    let cols: Vec<Vec<f64>> = perms
        .iter()
        .map(|p| zagier_column(phi, p))
        .collect::<Result<_>>()?;
    let proj_len = residual_norm(&cols[0], &cols[1..]);
    let k = perms.len() as i32;
    let bound = (eps.powi(n as i32) / (factorial(n) as f64).sqrt()).powi(k);
    Ok(ProjectionReport {
        proj_len,
        bound,
        holds: proj_len >= bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpMinimum {
    pub min_l1: f64,
    pub argmin: Vec<f64>,
    /// Set when the LP objective and the recomputed norm at the solution
    /// disagree beyond `1e-9`.
    pub warning: Option<String>,
}

fn combination_l1(cols: &[Vec<f64>], z: &[f64]) -> f64 {
    (0..cols[0].len())
        .map(|r| cols.iter().zip(z).map(|(c, w)| w * c[r]).sum::<f64>().abs())
        .sum()
}

/// `min ‖Σ z_i c_i‖₁` subject to `max |z_i| = 1`, as `2k` linear programs
/// pinning one coordinate to `±1`.
pub fn min_l1_unit_max(cols: &[Vec<f64>]) -> Result<LpMinimum> {
    let k = cols.len();
    if k == 0 {
        return invalid("no columns");
    }
    let rows = cols[0].len();
    if cols.iter().any(|c| c.len() != rows) {
        return invalid("columns of different length");
    }
    let solved: Vec<(f64, Vec<f64>)> = (0..2 * k)
        .into_par_iter()
        .map(|job| -> Result<(f64, Vec<f64>)> {
            let pin = job / 2;
            let s = if job % 2 == 0 { 1.0 } else { -1.0 };
            let mut lp = Problem::new(OptimizationDirection::Minimize);
            let zs: Vec<_> = (0..k)
                .map(|j| {
                    if j == pin {
                        None
                    } else {
                        Some(lp.add_var(0.0, (-1.0, 1.0)))
                    }
                })
                .collect();
            let ts: Vec<_> = (0..rows)
                .map(|_| lp.add_var(1.0, (0.0, f64::INFINITY)))
                .collect();
            for r in 0..rows {
                let mut plus = vec![(ts[r], 1.0)];
                let mut minus = vec![(ts[r], 1.0)];
                for (j, z) in zs.iter().enumerate() {
                    if let Some(v) = z {
                        plus.push((*v, -cols[j][r]));
                        minus.push((*v, cols[j][r]));
                    }
                }
                lp.add_constraint(plus, ComparisonOp::Ge, s * cols[pin][r]);
                lp.add_constraint(minus, ComparisonOp::Ge, -s * cols[pin][r]);
            }
            let sol = lp
                .solve()
                .map_err(|e| Error::Degenerate(format!("LP solver: {e:?}")))?;
            let z: Vec<f64> = zs
                .iter()
                .map(|v| match v {
                    Some(v) => *sol.var_value(*v),
                    None => s,
                })
                .collect();
            Ok((sol.objective(), z))
        })
        .collect::<Result<_>>()?;
    let (obj, z) = solved
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one LP");
    let check = combination_l1(cols, &z);
    let warning = ((check - obj).abs() > 1e-9)
        .then(|| format!("LP objective {obj} differs from recomputed norm {check}"));
    Ok(LpMinimum {
        min_l1: check.min(obj.max(0.0)),
        argmin: z,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoeffStrategy {
    /// Minimize over all `z` with `max |z_i| = 1`.
    Minimize,
    /// Evaluate the given coefficients, rescaled to `max |z_i| = 1`.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KruskalReport {
    pub min_l1: f64,
    pub argmin: Vec<f64>,
    pub bound: f64,
    pub holds: bool,
    pub warning: Option<String>,
}

/// `ε^{2k²} / (n^{4k} (k+1)^{k²+2k})`.
pub fn kruskal_l1_bound(n: usize, k: usize, eps: f64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let log =
        2.0 * kf * kf * eps.ln() - 4.0 * kf * nf.ln() - (kf * kf + 2.0 * kf) * (kf + 1.0).ln();
    log.exp()
}

/// Gap allowed between scaling parameters by the perturbed variant.
pub fn robust_kruskal_gap(n: usize, k: usize, eps: f64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let log = -(160f64.ln()) - (8.0 * kf + 3.0) * nf.ln() + 4.0 * kf * kf * eps.ln()
        - (2.0 * kf * kf + 4.0 * kf + 2.0) * (kf + 1.0).ln();
    log.exp()
}

fn evaluate(cols: &[Vec<f64>], strategy: &CoeffStrategy) -> Result<LpMinimum> {
    match strategy {
        CoeffStrategy::Minimize => min_l1_unit_max(cols),
        CoeffStrategy::Fixed(z) => {
            if z.len() != cols.len() {
                return invalid("need one coefficient per column");
            }
            let m = z.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if m == 0.0 || !m.is_finite() {
                return invalid("coefficients must have a nonzero finite entry");
            }
            let z: Vec<f64> = z.iter().map(|x| x / m).collect();
            Ok(LpMinimum {
                min_l1: combination_l1(cols, &z),
                argmin: z,
                warning: None,
            })
        }
    }
}

fn normalized_columns(phis: &[f64], perms: &[Permutation]) -> Result<Vec<Vec<f64>>> {
    phis.iter()
        .zip(perms)
        .map(|(&phi, p)| {
            Ok(MallowsModel::new(phi, p.clone())?
                .vectorize()?
                .into_values())
        })
        .collect()
}

/// L1 lower bound on combinations of `k` columns of `B_n(φ)`.
pub fn kruskal_l1(
    n: usize,
    phi: f64,
    eps: f64,
    perms: &[Permutation],
    strategy: &CoeffStrategy,
) -> Result<KruskalReport> {
    if n > ZAGIER_MAX_N {
        return Err(Error::ResourceLimit {
            what: "kruskal n",
            requested: n,
            limit: ZAGIER_MAX_N,
        });
    }
    check_perms(n, perms)?;
    check_phi_eps(phi, eps)?;
    let cols = normalized_columns(&vec![phi; perms.len()], perms)?;
    let m = evaluate(&cols, strategy)?;
    let bound = kruskal_l1_bound(n, perms.len(), eps);
    Ok(KruskalReport {
        holds: m.min_l1 >= bound,
        min_l1: m.min_l1,
        argmin: m.argmin,
        bound,
        warning: m.warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustKruskalReport {
    pub min_l1: f64,
    pub argmin: Vec<f64>,
    pub bound: f64,
    pub holds: bool,
    pub gap: f64,
    pub max_phi_spread: f64,
    pub within_gap: bool,
    pub warning: Option<String>,
}

/// Heterogeneous-φ variant: requires pairwise `|φ_i - φ_j|` within
/// [`robust_kruskal_gap`] and asserts half the `kruskal_l1` bound.
pub fn robust_kruskal_perturbed(
    n: usize,
    phis: &[f64],
    eps: f64,
    perms: &[Permutation],
    strategy: &CoeffStrategy,
) -> Result<RobustKruskalReport> {
    let r = robust_kruskal_perturbed_unchecked(n, phis, eps, perms, strategy)?;
    if !r.within_gap {
        return Err(Error::PreconditionViolated(format!(
            "phi spread {} exceeds the allowed gap {}",
            r.max_phi_spread, r.gap
        )));
    }
    Ok(r)
}

/// Same computation without rejecting spreads beyond the gap; the report
/// still records whether the gap condition held.
pub fn robust_kruskal_perturbed_unchecked(
    n: usize,
    phis: &[f64],
    eps: f64,
    perms: &[Permutation],
    strategy: &CoeffStrategy,
) -> Result<RobustKruskalReport> {
    if n > ZAGIER_MAX_N {
        return Err(Error::ResourceLimit {
            what: "kruskal n",
            requested: n,
            limit: ZAGIER_MAX_N,
        });
    }
    check_perms(n, perms)?;
    if phis.len() != perms.len() {
        return invalid("need one phi per permutation");
    }
    for &phi in phis {
        check_phi_eps(phi, eps)?;
    }
    let k = perms.len();
    let hi = phis.iter().cloned().fold(f64::MIN, f64::max);
    let lo = phis.iter().cloned().fold(f64::MAX, f64::min);
    let spread = hi - lo;
    let gap = robust_kruskal_gap(n, k, eps);
    let cols = normalized_columns(phis, perms)?;
    let m = evaluate(&cols, strategy)?;
    let bound = kruskal_l1_bound(n, k, eps) / 2.0;
    Ok(RobustKruskalReport {
        holds: m.min_l1 >= bound,
        min_l1: m.min_l1,
        argmin: m.argmin,
        bound,
        gap,
        max_phi_spread: spread,
        within_gap: spread <= gap,
        warning: m.warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub min_pairwise_tv: Option<f64>,
    pub min_uniform_tv: f64,
    pub mu: f64,
    pub non_degenerate: bool,
}

/// Pairwise and to-uniform exact TV of a collection against `μ`.
pub fn degeneracy(models: &[MallowsModel], mu: f64) -> Result<DegeneracyReport> {
    if models.is_empty() {
        return invalid("empty collection");
    }
    let n = models[0].n();
    if models.iter().any(|m| m.n() != n) {
        return invalid("models over different n");
    }
    let vecs: Vec<DistributionVector> = models
        .iter()
        .map(|m| m.vectorize())
        .collect::<Result<_>>()?;
    let uniform = MallowsModel::new(1.0, Permutation::identity(n))?.vectorize()?;
    let mut min_pair: Option<f64> = None;
    for i in 0..vecs.len() {
        for j in 0..i {
            let tv = tv_exact(&vecs[i], &vecs[j])?.value;
            min_pair = Some(min_pair.map_or(tv, |m| m.min(tv)));
        }
    }
    let min_uniform = vecs
        .iter()
        .map(|v| tv_exact(v, &uniform).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let ok = min_uniform >= mu && min_pair.is_none_or(|m| m >= mu);
    Ok(DegeneracyReport {
        min_pairwise_tv: min_pair,
        min_uniform_tv: min_uniform,
        mu,
        non_degenerate: ok,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub l1: f64,
    /// `log10` of `(μ²/(10 n⁴ k))^{20k³}`, which underflows `f64` quickly.
    pub bound_log10: f64,
    pub bound: f64,
    pub holds: bool,
    pub degeneracy: DegeneracyReport,
}

pub fn identifiability_bound_log10(n: usize, k: usize, mu: f64) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    20.0 * kf.powi(3) * (mu * mu / (10.0 * nf.powi(4) * kf)).log10()
}

/// Exact `‖Σ z_i v(M_i)‖₁` for a `μ`-non-degenerate collection, against
/// the identifiability bound.
pub fn identifiability_l1(
    models: &[MallowsModel],
    coeffs: &[f64],
    mu: f64,
) -> Result<IdentifiabilityReport> {
    if !(mu > 0.0 && mu <= 1.0) {
        return invalid(format!("mu = {mu} outside (0, 1]"));
    }
    if coeffs.len() != models.len() {
        return invalid("need one coefficient per model");
    }
    if coeffs.iter().fold(0.0f64, |a, z| a.max(z.abs())) < 1.0 {
        return invalid("coefficients need max |z_i| >= 1");
    }
    let deg = degeneracy(models, mu)?;
    if !deg.non_degenerate {
        return Err(Error::PreconditionViolated(format!(
            "collection is not {mu}-non-degenerate (pairwise {:?}, uniform {})",
            deg.min_pairwise_tv, deg.min_uniform_tv
        )));
    }
    let l1 = l1_combination(models, coeffs)?;
    let bound_log10 = identifiability_bound_log10(models[0].n(), models.len(), mu);
    Ok(IdentifiabilityReport {
        holds: l1 > 0.0 && l1.log10() >= bound_log10,
        l1,
        bound: 10f64.powf(bound_log10),
        bound_log10,
        degeneracy: deg,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub left: usize,
    pub right: usize,
    pub tv: f64,
    pub weight_gap: f64,
    pub phi_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingReport {
    pub l1_gap: f64,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_left: Vec<usize>,
    pub unmatched_right: Vec<usize>,
    pub same_k: bool,
    /// Largest TV or weight gap across the matching.
    pub theta: f64,
}

/// Greedy closest-pair matching of components across two mixtures.
pub fn match_mixtures(a: &MallowsMixture, b: &MallowsMixture) -> Result<MatchingReport> {
    if a.n() != b.n() {
        return invalid("mixtures over different n");
    }
    let l1_gap = a.vectorize()?.l1_distance(&b.vectorize()?)?;
    let mut cand = Vec::new();
    for (i, ma) in a.components().iter().enumerate() {
        for (j, mb) in b.components().iter().enumerate() {
            cand.push((tv_models(ma, mb)?, i, j));
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.k()];
    let mut used_b = vec![false; b.k()];
    let mut pairs = Vec::new();
    for (tv, i, j) in cand {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        pairs.push(MatchedPair {
            left: i,
            right: j,
            tv,
            weight_gap: (a.weights()[i] - b.weights()[j]).abs(),
            phi_gap: (a.components()[i].phi() - b.components()[j].phi()).abs(),
        });
    }
    let theta = pairs
        .iter()
        .fold(0.0f64, |m, p| m.max(p.tv).max(p.weight_gap));
    Ok(MatchingReport {
        l1_gap,
        unmatched_left: (0..a.k()).filter(|&i| !used_a[i]).collect(),
        unmatched_right: (0..b.k()).filter(|&j| !used_b[j]).collect(),
        same_k: a.k() == b.k(),
        pairs,
        theta,
    })
}
