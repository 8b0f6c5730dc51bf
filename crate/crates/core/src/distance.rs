//! Total variation distance, the parameter/TV comparison bounds, and L1
//! norms of signed combinations of vectorizations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{sample_many, DistributionVector, MallowsMixture, MallowsModel};
use crate::perm::Permutation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvMode {
    Exact,
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub value: f64,
    pub mode: TvMode,
    /// Reported additive tolerance; `None` in exact mode.
    pub tolerance: Option<f64>,
}

pub fn tv_exact(p: &DistributionVector, q: &DistributionVector) -> Result<TvReport> {
    for (name, v) in [("P", p), ("Q", q)] {
        if !v.is_distribution(1e-9) {
            return invalid(format!("{name} is not a probability distribution"));
        }
    }
    Ok(TvReport {
        value: (0.5 * p.l1_distance(q)?).clamp(0.0, 1.0),
        mode: TvMode::Exact,
        tolerance: None,
    })
}

/// Plug-in TV between two sample sets over their observed support.
///
/// The reported tolerance `½(√(K/m_a) + √(K/m_b))`, with `K` the number of
/// distinct observed permutations, bounds the expected L1 error of each
/// empirical distribution restricted to that support. The estimator is
/// biased upward when `K` is comparable to the sample counts.
pub fn tv_empirical(a: &[Permutation], b: &[Permutation]) -> Result<TvReport> {
    if a.is_empty() || b.is_empty() {
        return invalid("empirical TV needs samples on both sides");
    }
    if a.iter().chain(b).any(|p| p.n() != a[0].n()) {
        return invalid("samples over different n");
    }
    let mut counts: BTreeMap<&[u16], (usize, usize)> = BTreeMap::new();
    for p in a {
        counts.entry(p.as_slice()).or_default().0 += 1;
    }
    for p in b {
        counts.entry(p.as_slice()).or_default().1 += 1;
    }
    let (ma, mb) = (a.len() as f64, b.len() as f64);
    let l1: f64 = counts
        .values()
        .map(|&(x, y)| (x as f64 / ma - y as f64 / mb).abs())
        .sum();
    let k = counts.len() as f64;
    Ok(TvReport {
        value: (0.5 * l1).clamp(0.0, 1.0),
        mode: TvMode::Empirical,
        tolerance: Some(0.5 * ((k / ma).sqrt() + (k / mb).sqrt())),
    })
}

/// Draws `m` samples from each mixture (independent seeded streams) and
/// returns the plug-in TV.
pub fn tv_empirical_sampled(
    a: &MallowsMixture,
    b: &MallowsMixture,
    m: usize,
    seed: u64,
) -> Result<TvReport> {
    let sa = sample_many(a, m, crate::seed::derive_seed(seed, "tv-a", 0));
    let sb = sample_many(b, m, crate::seed::derive_seed(seed, "tv-b", 0));
    tv_empirical(&sa, &sb)
}

pub fn tv_models(a: &MallowsModel, b: &MallowsModel) -> Result<f64> {
    Ok(tv_exact(&a.vectorize()?, &b.vectorize()?)?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Distinct centers and `φ ≤ 1 - ε` force `d_TV ≥ ε/2`.
pub fn check_distinct_centers_bound(
    m1: &MallowsModel,
    m2: &MallowsModel,
    eps: f64,
) -> Result<BoundReport> {
    if m1.n() != m2.n() {
        return invalid("models over different n");
    }
    if m1.center() == m2.center() {
        return Err(Error::PreconditionViolated("centers are equal".into()));
    }
    if m1.phi().max(m2.phi()) > 1.0 - eps {
        return Err(Error::PreconditionViolated(format!(
            "phi above 1 - eps = {}",
            1.0 - eps
        )));
    }
    let tv = tv_models(m1, m2)?;
    let bound = eps / 2.0;
    Ok(BoundReport {
        measured: tv,
        bound,
        holds: tv >= bound,
    })
}

/// The largest `|φ_1 - φ_2|` for which same-center models are `μ`-close.
pub fn same_center_gap(n: usize, mu: f64) -> f64 {
    mu * mu / (10.0 * (n as f64).powi(3))
}

/// Same center and `|φ_1 - φ_2| ≤ μ²/(10n³)` force `d_TV ≤ μ`.
pub fn check_same_center_bound(
    m1: &MallowsModel,
    m2: &MallowsModel,
    mu: f64,
) -> Result<BoundReport> {
    if m1.center() != m2.center() {
        return Err(Error::PreconditionViolated("centers differ".into()));
    }
    let n = m1.n();
    if n < 2 {
        return Err(Error::PreconditionViolated("n must be at least 2".into()));
    }
    let gap = same_center_gap(n, mu);
    if (m1.phi() - m2.phi()).abs() > gap {
        return Err(Error::PreconditionViolated(format!(
            "|phi_1 - phi_2| = {} exceeds {gap}",
            (m1.phi() - m2.phi()).abs()
        )));
    }
    let tv = tv_models(m1, m2)?;
    Ok(BoundReport {
        measured: tv,
        bound: mu,
        holds: tv <= mu,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower: f64,
    pub upper: f64,
    /// Both scaling parameters are at least `μ/(2n)`, where the pointwise
    /// ratio argument applies.
    pub in_regime: bool,
    pub holds: bool,
}

/// Extreme values of `Pr_{M_1}[π] / Pr_{M_2}[π]` against `[1 - μ/2, 1 + μ/2]`.
pub fn pmf_ratio_bounds(m1: &MallowsModel, m2: &MallowsModel, mu: f64) -> Result<RatioReport> {
    if m1.center() != m2.center() {
        return Err(Error::PreconditionViolated("centers differ".into()));
    }
    let v1 = m1.vectorize()?;
    let v2 = m2.vectorize()?;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (a, b) in v1.values().iter().zip(v2.values()) {
        let r = a / b;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    let (lower, upper) = (1.0 - mu / 2.0, 1.0 + mu / 2.0);
    let floor = mu / (2.0 * m1.n() as f64);
    let in_regime = m1.phi() >= floor && m2.phi() >= floor;
    Ok(RatioReport {
        min_ratio: lo,
        max_ratio: hi,
        lower,
        upper,
        in_regime,
        holds: lo >= lower && hi <= upper,
    })
}

/// `‖Σ z_i v(M_i)‖₁`.
pub fn l1_combination(models: &[MallowsModel], coeffs: &[f64]) -> Result<f64> {
    if models.is_empty() || models.len() != coeffs.len() {
        return invalid("need one coefficient per model");
    }
    let n = models[0].n();
    if models.iter().any(|m| m.n() != n) {
        return invalid("models over different n");
    }
    let mut acc = DistributionVector::zeros(n)?;
    for (m, &z) in models.iter().zip(coeffs) {
        acc.axpy(z, &m.vectorize()?)?;
    }
    Ok(acc.l1_norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(phi: f64, center: &[u16]) -> MallowsModel {
        MallowsModel::new(phi, Permutation::new(center.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn exact_examples() {
        let a = model(0.5, &[1, 2]).vectorize().unwrap();
        let b = model(0.5, &[2, 1]).vectorize().unwrap();
        assert_eq!(tv_exact(&a, &a).unwrap().value, 0.0);
        assert!((tv_exact(&a, &b).unwrap().value - 1.0 / 3.0).abs() < 1e-15);
        let u = model(1.0, &[2, 3, 1]).vectorize().unwrap();
        let u2 = model(1.0, &[1, 2, 3]).vectorize().unwrap();
        assert!(tv_exact(&u, &u2).unwrap().value < 1e-15);
        let signed = DistributionVector::new(2, vec![1.5, -0.5]).unwrap();
        assert!(tv_exact(&signed, &a).is_err());
    }

    #[test]
    fn empirical_examples() {
        let s = sample_many(&MallowsMixture::single(model(0.5, &[1, 2, 3])), 1000, 3);
        assert_eq!(tv_empirical(&s, &s).unwrap().value, 0.0);
        let a = MallowsMixture::single(model(0.5, &[1, 2]));
        let b = MallowsMixture::single(model(0.5, &[2, 1]));
        let r = tv_empirical_sampled(&a, &b, 1_000_000, 4).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 0.01);
        let p = MallowsMixture::single(model(0.0, &[1, 2, 3]));
        let q = MallowsMixture::single(model(0.0, &[2, 1, 3]));
        assert_eq!(tv_empirical_sampled(&p, &q, 500, 1).unwrap().value, 1.0);
    }

    #[test]
    fn distinct_centers_examples() {
        let r =
            check_distinct_centers_bound(&model(0.5, &[1, 2]), &model(0.5, &[2, 1]), 0.5).unwrap();
        assert!(r.holds && (r.measured - 1.0 / 3.0).abs() < 1e-15 && r.bound == 0.25);
        let r = check_distinct_centers_bound(&model(0.0, &[1, 2, 3]), &model(0.0, &[2, 1, 3]), 0.9)
            .unwrap();
        assert_eq!(r.measured, 1.0);
        assert!(matches!(
            check_distinct_centers_bound(&model(0.5, &[1, 2]), &model(0.3, &[1, 2]), 0.1),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn same_center_examples() {
        let r =
            check_same_center_bound(&model(0.4, &[1, 2, 3]), &model(0.4, &[1, 2, 3]), 0.1).unwrap();
        assert_eq!(r.measured, 0.0);
        let phi2 = 0.5 + 0.2 * 0.2 / 640.0;
        let r =
            check_same_center_bound(&model(0.5, &[1, 2, 3, 4]), &model(phi2, &[1, 2, 3, 4]), 0.2)
                .unwrap();
        assert!(r.holds);
        assert!(check_same_center_bound(
            &model(0.5, &[1, 2, 3, 4]),
            &model(0.6, &[1, 2, 3, 4]),
            0.2
        )
        .is_err());
    }

    #[test]
    fn l1_examples() {
        let a = model(0.3, &[1, 2, 3]);
        let b = model(0.6, &[3, 1, 2]);
        assert!((l1_combination(&[a.clone()], &[1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(l1_combination(&[a.clone(), a.clone()], &[1.0, -1.0]).unwrap() < 1e-15);
        let l1 = l1_combination(&[a.clone(), b.clone()], &[1.0, -1.0]).unwrap();
        assert!((l1 - 2.0 * tv_models(&a, &b).unwrap()).abs() < 1e-14);
    }
}
