//! Fast learner for φ-separated mixtures: heavy prefixes, prefix-to-full
//! extension by pair contrasts, closed-form mixing weights, and the
//! separated closeness tester.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lowerbound::{local_query, LocalQuery, Noise, QueryLedger};
use crate::model::{geometric_sum, MallowsMixture, MallowsModel};
use crate::oracle::{PlacementOracle, PlacementQuery, Reversed};
use crate::perm::{Element, Permutation};
use crate::seed::LabRng;
use crate::structures::{pair_test_vector, prefix_prob};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixCandidate {
    pub prefix: Vec<Element>,
    pub phi_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    /// Pairwise φ gap and floor on `1 − φ`.
    pub gamma: f64,
    /// Weight floor.
    pub alpha: f64,
    /// Target accuracy of the tester.
    pub theta: f64,
    /// φ grid step.
    pub beta: f64,
    pub delta: f64,
    /// Defaults to `min(10k, n/2)`.
    pub prefix_len: Option<usize>,
    /// Sample count behind the oracle; `None` for exact backing.
    pub samples: Option<usize>,
    /// Heavy prefixes carried into the pipeline, most frequent first.
    pub max_prefixes: usize,
    /// Allowed distance of raw weights from a distribution.
    pub weight_slack: f64,
    /// Tester floor override.
    pub accept_floor: Option<f64>,
}

impl Default for SeparationParams {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            alpha: 0.1,
            theta: 0.01,
            beta: 0.05,
            delta: 0.05,
            prefix_len: None,
            samples: None,
            max_prefixes: 24,
            weight_slack: 0.25,
            accept_floor: None,
        }
    }
}

impl SeparationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("theta", self.theta),
            ("beta", self.beta),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return invalid(format!("{name} = {v} outside (0, 1)"));
            }
        }
        if self.theta > self.gamma / 10.0 + 1e-15 {
            return invalid(format!(
                "tester needs theta <= gamma/10, got theta = {} and gamma = {}",
                self.theta, self.gamma
            ));
        }
        if self.max_prefixes == 0 {
            return invalid("max_prefixes must be positive");
        }
        Ok(())
    }

    pub fn prefix_len_for(&self, k: usize, n: usize) -> usize {
        self.prefix_len.unwrap_or((10 * k).min(n / 2))
    }

    /// `{0, β, 2β, …} ∩ [0, 1 − γ]`.
    pub fn phi_grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0u32;
        loop {
            let v = (f64::from(i) * self.beta * 1e9).round() / 1e9;
            if v > 1.0 - self.gamma + 1e-12 {
                break;
            }
            out.push(v);
            i += 1;
        }
        out
    }

    /// `½ γ^p α`.
    pub fn prefix_threshold(&self, p: usize) -> f64 {
        0.5 * self.gamma.powi(p as i32) * self.alpha
    }

    /// `s = 2^k γ^{−10k²} (αβ)^{−k}`, reported only.
    pub fn list_size_bound(&self, k: usize) -> f64 {
        let k = k as f64;
        2f64.powf(k) * self.gamma.powf(-10.0 * k * k) * (self.alpha * self.beta).powf(-k)
    }
}

/// `Pr_{M(φ, (1,…,d))}[1 precedes d]`.
pub fn pair_order_prob(phi: f64, d: usize) -> f64 {
    assert!(d >= 2, "pair_order_prob needs d >= 2");
    let mut num = 0.0;
    for r in 1..=d {
        for s in r + 1..=d {
            num += phi.powi((r - 1 + d - s) as i32);
        }
    }
    num / (geometric_sum(phi, d) * geometric_sum(phi, d - 1))
}

/// Prefixes of length `p` with mass at least `threshold`, heaviest first.
pub fn heavy_prefixes(
    oracle: &dyn PlacementOracle,
    p: usize,
    threshold: f64,
) -> Result<Vec<(Vec<Element>, f64)>> {
    if p > oracle.n() {
        return invalid(format!("prefix length {p} exceeds n = {}", oracle.n()));
    }
    let mut mass: HashMap<Vec<Element>, f64> = HashMap::new();
    oracle.visit(&mut |r, _, w| *mass.entry(r[..p].to_vec()).or_default() += w);
    let mut out: Vec<_> = mass.into_iter().filter(|(_, m)| *m >= threshold).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Every heavy prefix paired with every φ on the grid.
pub fn find_prefixes(
    oracle: &dyn PlacementOracle,
    k: usize,
    params: &SeparationParams,
) -> Result<Vec<PrefixCandidate>> {
    let p = params.prefix_len_for(k, oracle.n());
    let heavy = heavy_prefixes(oracle, p, params.prefix_threshold(p))?;
    let grid = params.phi_grid();
    Ok(heavy
        .into_iter()
        .flat_map(|(prefix, _)| {
            grid.iter().map(move |&phi| PrefixCandidate {
                prefix: prefix.clone(),
                phi_estimate: phi,
            })
        })
        .collect())
}

/// Heavy prefixes found with placement queries only: extend every heavy
/// partial prefix by one element at a time. Each query is charged to `ledger`.
pub fn find_prefixes_local(
    oracle: &dyn PlacementOracle,
    p: usize,
    threshold: f64,
    tau: f64,
    ledger: &mut QueryLedger,
    mut rng: Option<&mut LabRng>,
) -> Result<Vec<(Vec<Element>, f64)>> {
    let n = oracle.n();
    if p > n {
        return invalid(format!("prefix length {p} exceeds n = {n}"));
    }
    let mut frontier: Vec<(Vec<Element>, f64)> = vec![(Vec::new(), 1.0)];
    for t in 0..p {
        let mut next = Vec::new();
        for (pre, _) in &frontier {
            for e in 1..=n as Element {
                if pre.contains(&e) {
                    continue;
                }
                let mut cand = pre.clone();
                cand.push(e);
                let q = PlacementQuery::new(
                    cand.iter()
                        .enumerate()
                        .map(|(i, &x)| (x, i as u16 + 1))
                        .collect(),
                    n,
                )?;
                let noise = match rng.as_deref_mut() {
                    Some(r) => Noise::Uniform(r),
                    None => Noise::Exact,
                };
                let a = local_query(oracle, &LocalQuery::with_tolerance(q, tau)?, ledger, noise)?;
                if a >= threshold {
                    next.push((cand, a));
                }
            }
        }
        if next.is_empty() && t + 1 < p {
            return Ok(Vec::new());
        }
        frontier = next;
    }
    frontier.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(frontier)
}

/// Masses of the event "the first `h` positions hold `head` up to flipping
/// consecutive pairs", split by flip pattern, and optionally by the order of
/// every outside pair.
#[derive(Clone, Debug)]
pub struct HeadTally {
    pub head: Vec<Element>,
    n: usize,
    /// Indexed by flip pattern; bit `a` set = pair `a` flipped.
    pub mass: Vec<f64>,
    /// `pairs[(o·n + x−1)·n + y−1]` = mass of pattern `o` with `x` before `y`.
    pairs: Option<Vec<f64>>,
}

impl HeadTally {
    pub fn compute(oracle: &dyn PlacementOracle, head: &[Element], with_pairs: bool) -> Self {
        let n = oracle.n();
        let h = head.len();
        debug_assert!(h % 2 == 0);
        let patterns = 1usize << (h / 2);
        let mut mass = vec![0.0; patterns];
        let mut pairs = with_pairs.then(|| vec![0.0; patterns * n * n]);
        let mut in_head = vec![false; n + 1];
        head.iter().for_each(|&e| in_head[e as usize] = true);
        oracle.visit(&mut |r, _, w| {
            let mut o = 0;
            for a in 0..h / 2 {
                let (x, y) = (head[2 * a], head[2 * a + 1]);
                if r[2 * a] == x && r[2 * a + 1] == y {
                } else if r[2 * a] == y && r[2 * a + 1] == x {
                    o |= 1 << a;
                } else {
                    return;
                }
            }
            mass[o] += w;
            if let Some(p) = pairs.as_mut() {
                let base = o * n * n;
                let rest = &r[h..];
                for i in 0..rest.len() {
                    let row = base + (rest[i] as usize - 1) * n;
                    for &b in &rest[i + 1..] {
                        p[row + b as usize - 1] += w;
                    }
                }
            }
        });
        Self {
            head: head.to_vec(),
            n,
            mass,
            pairs,
        }
    }

    pub fn patterns(&self) -> usize {
        self.mass.len()
    }

    /// Mass of pattern `o` with `x` before `y`.
    pub fn pair(&self, o: usize, x: Element, y: Element) -> f64 {
        let n = self.n;
        self.pairs.as_ref().expect("tally built without pairs")
            [(o * n + x as usize - 1) * n + y as usize - 1]
    }

    /// The head with the pairs in `o` flipped.
    pub fn pattern_prefix(&self, o: usize) -> Vec<Element> {
        pattern_prefix(&self.head, o)
    }
}

fn pattern_prefix(head: &[Element], o: usize) -> Vec<Element> {
    let mut p = head.to_vec();
    for a in 0..head.len() / 2 {
        if o >> a & 1 == 1 {
            p.swap(2 * a, 2 * a + 1);
        }
    }
    p
}

/// `Z = ⊗_a v_a` flattened over flip patterns.
fn contrast(vectors: &[Vec<f64>]) -> Vec<f64> {
    (0..1usize << vectors.len())
        .map(|o| {
            vectors
                .iter()
                .enumerate()
                .map(|(a, v)| v[o >> a & 1])
                .product()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Bit `a`: pair `a` guessed to keep the head order in the `a`-th other component.
    pub guess: Vec<bool>,
    pub center: Option<Permutation>,
    pub failure: Option<String>,
    /// Smallest `| |⟨Z,T_x⟩| − |⟨Z,T_y⟩| |` over decided pairs.
    pub min_gap: f64,
    pub ties: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendOutcome {
    pub target: usize,
    pub hypotheses: Vec<Hypothesis>,
}

impl ExtendOutcome {
    pub fn centers(&self) -> Vec<Permutation> {
        let mut c: Vec<_> = self
            .hypotheses
            .iter()
            .filter_map(|h| h.center.clone())
            .collect();
        c.sort();
        c.dedup();
        c
    }
}

fn head_len_extend(k: usize) -> usize {
    2 * k - 2
}

/// Extend the prefix of component `target` to full-center hypotheses, one
/// per guess of the head-pair orders in the other components.
pub fn extend_prefix(
    oracle: &dyn PlacementOracle,
    prefixes: &[Vec<Element>],
    phis: &[f64],
    target: usize,
) -> Result<ExtendOutcome> {
    let k = prefixes.len();
    if k == 0 || target >= k || phis.len() != k {
        return invalid("extend_prefix needs one prefix and one phi per component");
    }
    let h = head_len_extend(k);
    if prefixes[target].len() < h {
        return invalid(format!("prefix shorter than the {h}-element head"));
    }
    let tally = HeadTally::compute(oracle, &prefixes[target][..h], true);
    extend_with_tally(&tally, &prefixes[target], phis, target)
}

fn extend_with_tally(
    tally: &HeadTally,
    prefix: &[Element],
    phis: &[f64],
    target: usize,
) -> Result<ExtendOutcome> {
    let k = phis.len();
    let n = tally.n;
    let others: Vec<usize> = (0..k).filter(|&i| i != target).collect();
    let mut in_prefix = vec![false; n + 1];
    prefix.iter().for_each(|&e| in_prefix[e as usize] = true);
    let free: Vec<Element> = (1..=n as Element)
        .filter(|&e| !in_prefix[e as usize])
        .collect();
    let t = free.len();
    let mut hypotheses = Vec::new();
    for g in 0..1usize << others.len() {
        let guess: Vec<bool> = (0..others.len()).map(|a| g >> a & 1 == 0).collect();
        let vecs = others
            .iter()
            .zip(&guess)
            .map(|(&i, &keep)| pair_test_vector(phis[i], keep).map(|v| v.values))
            .collect::<Result<Vec<_>>>()?;
        let z = contrast(&vecs);
        let mut prec = vec![false; t * t];
        let mut min_gap = f64::INFINITY;
        let mut ties = 0;
        for a in 0..t {
            for b in a + 1..t {
                let (x, y) = (free[a], free[b]);
                let zx: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(o, c)| c * tally.pair(o, x, y))
                    .sum();
                let zy: f64 = z
                    .iter()
                    .enumerate()
                    .map(|(o, c)| c * tally.pair(o, y, x))
                    .sum();
                let (ax, ay) = (zx.abs(), zy.abs());
                if ax == ay {
                    ties += 1;
                }
                min_gap = min_gap.min((ax - ay).abs());
                prec[a * t + b] = ax >= ay;
                prec[b * t + a] = ax < ay;
            }
        }
        let (center, failure) = match total_order(&prec, t) {
            Ok(order) => {
                let mut r = prefix.to_vec();
                r.extend(order.iter().map(|&i| free[i]));
                (Some(Permutation::new(r)?), None)
            }
            Err((a, b, c)) => (
                None,
                Some(Error::RecoveryFailure(free[a], free[b], free[c]).to_string()),
            ),
        };
        hypotheses.push(Hypothesis {
            guess,
            center,
            failure,
            min_gap: if t < 2 { 0.0 } else { min_gap },
            ties,
        });
    }
    if hypotheses.iter().all(|h| h.center.is_none()) {
        let msg = hypotheses[0].failure.clone().unwrap_or_default();
        return Err(Error::LearningFailure(format!(
            "every extension guess failed: {msg}"
        )));
    }
    Ok(ExtendOutcome { target, hypotheses })
}

/// Order from a tournament, or a cyclic triple.
fn total_order(prec: &[bool], t: usize) -> std::result::Result<Vec<usize>, (usize, usize, usize)> {
    let wins = |a: usize| (0..t).filter(|&b| prec[a * t + b]).count();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by_key(|&a| std::cmp::Reverse(wins(a)));
    for i in 0..t {
        for j in i + 1..t {
            let (x, y) = (order[i], order[j]);
            if !prec[x * t + y] {
                let z = (0..t)
                    .find(|&z| prec[y * t + z] && prec[z * t + x])
                    .unwrap_or(y);
                return Err((x, y, z));
            }
        }
    }
    Ok(order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimate {
    /// Clipped to `[0, 1]` and renormalized.
    pub weights: Vec<f64>,
    pub raw: Vec<f64>,
}

pub const CONTRAST_FLOOR: f64 = 1e-12;

/// `w_t = ⟨T', Z'⟩ / ⟨T'_t, Z'⟩` per component, no guessing.
pub fn estimate_weights(
    oracle: &dyn PlacementOracle,
    centers: &[Permutation],
    phis: &[f64],
) -> Result<WeightEstimate> {
    let k = centers.len();
    if k == 0 || phis.len() != k {
        return invalid("estimate_weights needs one phi per center");
    }
    let h = head_len_extend(k);
    let tallies: Vec<HeadTally> = centers
        .iter()
        .map(|c| HeadTally::compute(oracle, &c.as_slice()[..h], false))
        .collect();
    weights_from_tallies(&tallies, centers, phis)
}

fn weights_from_tallies(
    tallies: &[HeadTally],
    centers: &[Permutation],
    phis: &[f64],
) -> Result<WeightEstimate> {
    let k = centers.len();
    let mut raw = Vec::with_capacity(k);
    for t in 0..k {
        let tally = &tallies[t];
        let head = &tally.head;
        let vecs = (0..k)
            .filter(|&i| i != t)
            .enumerate()
            .map(|(a, i)| {
                let keep = centers[i].precedes(head[2 * a], head[2 * a + 1]);
                pair_test_vector(phis[i], keep).map(|v| v.values)
            })
            .collect::<Result<Vec<_>>>()?;
        let z = contrast(&vecs);
        let num: f64 = z.iter().zip(&tally.mass).map(|(c, m)| c * m).sum();
        let den: f64 = z
            .iter()
            .enumerate()
            .map(|(o, c)| c * prefix_prob(phis[t], &centers[t], &pattern_prefix(head, o)))
            .sum();
        if den.abs() < CONTRAST_FLOOR {
            return Err(Error::Degenerate(format!(
                "contrast for component {t} is {den:.3e}, below {CONTRAST_FLOOR:e}"
            )));
        }
        raw.push(num / den);
    }
    let clipped: Vec<f64> = raw.iter().map(|w| w.clamp(0.0, 1.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "all estimated weights clip to zero".into(),
        ));
    }
    let mut weights: Vec<f64> = clipped.iter().map(|w| w / total).collect();
    let rest: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - rest;
    Ok(WeightEstimate { weights, raw })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedTest {
    pub accept: bool,
    /// Largest statistic-to-threshold ratio; accept iff ≤ 1.
    pub score: f64,
    pub case1_stat: f64,
    pub case1_threshold: f64,
    pub case2_stat: f64,
    pub case2_threshold: f64,
    /// Which check produced the score.
    pub worst: String,
}

type TallyKey = (bool, Vec<Element>, bool);

/// Head tallies shared across tester calls.
#[derive(Default)]
pub struct TallyCache {
    map: Mutex<HashMap<TallyKey, Arc<HeadTally>>>,
}

impl TallyCache {
    fn get(
        &self,
        oracle: &dyn PlacementOracle,
        reversed: bool,
        head: &[Element],
        pairs: bool,
    ) -> Arc<HeadTally> {
        let key = (reversed, head.to_vec(), pairs);
        if let Some(t) = self.map.lock().expect("tally cache poisoned").get(&key) {
            return t.clone();
        }
        let t = Arc::new(if reversed {
            HeadTally::compute(&Reversed(oracle), head, pairs)
        } else {
            HeadTally::compute(oracle, head, pairs)
        });
        self.map
            .lock()
            .expect("tally cache poisoned")
            .entry(key)
            .or_insert(t)
            .clone()
    }
}

fn even_floor(x: usize) -> usize {
    x - x % 2
}

/// Hoeffding L1 floor over `cells` estimated masses with a union bound over `tests`.
fn sampling_floor(cells: usize, tests: usize, samples: usize, delta: f64) -> f64 {
    let tau =
        ((2.0 * cells as f64 * tests as f64 / delta).ln() / (2.0 * samples.max(1) as f64)).sqrt();
    cells as f64 * tau
}

struct Thresholds {
    case1: f64,
    case2: f64,
}

fn thresholds(n: usize, k: usize, params: &SeparationParams) -> Thresholds {
    let base = params.alpha * (params.gamma / 8.0).powi(6 * k as i32);
    let paper1 = base / 3.0;
    let paper2 = params.theta * base / 2.0;
    let h1 = even_floor((4 * k - 4).min(n.saturating_sub(2)));
    let h2 = even_floor((4 * k - 2).min(n));
    let tests = 2 * k * (n * n + 1);
    let (f1, f2) = match (params.accept_floor, params.samples) {
        (Some(f), _) => (f, f),
        (None, None) => (1e-9, 1e-9),
        (None, Some(m)) => (
            sampling_floor(1 << (h1 / 2), tests, m, params.delta),
            sampling_floor(1 << (h2 / 2), tests, m, params.delta),
        ),
    };
    Thresholds {
        case1: paper1.max(f1),
        case2: paper2.max(f2),
    }
}

struct Comp {
    w: f64,
    phi: f64,
    center: Permutation,
}

fn comps_of(mix: &MallowsMixture, reversed: bool) -> Vec<Comp> {
    mix.components()
        .iter()
        .zip(mix.weights())
        .map(|(c, &w)| Comp {
            w,
            phi: c.phi(),
            center: if reversed {
                c.center().reversed()
            } else {
                c.center().clone()
            },
        })
        .collect()
}

/// Largest of `max(‖T_x − T'_x‖₁, ‖T_y − T'_y‖₁)` over outside pairs and
/// candidate components, with heads taken from each candidate center.
fn case1_stat(
    oracle: &dyn PlacementOracle,
    comps: &[Comp],
    reversed: bool,
    h: usize,
    cache: &TallyCache,
) -> (f64, String) {
    let n = oracle.n();
    let mut worst = (0.0, String::new());
    for ci in comps {
        let head = &ci.center.as_slice()[..h];
        let tally = cache.get(oracle, reversed, head, true);
        let mut in_head = vec![false; n + 1];
        head.iter().for_each(|&e| in_head[e as usize] = true);
        let outside: Vec<Element> = (1..=n as Element)
            .filter(|&e| !in_head[e as usize])
            .collect();
        let patterns = tally.patterns();
        // Per component: pattern probabilities, outside positions, pair-order table.
        let model: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> = comps
            .iter()
            .map(|c| {
                let pp = (0..patterns)
                    .map(|o| prefix_prob(c.phi, &c.center, &tally.pattern_prefix(o)))
                    .collect();
                let mut pos = vec![usize::MAX; n + 1];
                c.center
                    .as_slice()
                    .iter()
                    .filter(|&&e| !in_head[e as usize])
                    .enumerate()
                    .for_each(|(i, &e)| pos[e as usize] = i);
                let table = (0..=n)
                    .map(|d| {
                        if d >= 2 {
                            pair_order_prob(c.phi, d)
                        } else {
                            1.0
                        }
                    })
                    .collect();
                (pp, pos, table)
            })
            .collect();
        let before = |x: Element, y: Element, o: usize| -> f64 {
            comps
                .iter()
                .zip(&model)
                .map(|(c, (pp, pos, table))| {
                    let (px, py) = (pos[x as usize], pos[y as usize]);
                    let q = table[px.abs_diff(py) + 1];
                    c.w * pp[o] * if px < py { q } else { 1.0 - q }
                })
                .sum()
        };
        for (i, &x) in outside.iter().enumerate() {
            for &y in &outside[i + 1..] {
                let mut sx = 0.0;
                let mut sy = 0.0;
                for o in 0..patterns {
                    sx += (tally.pair(o, x, y) - before(x, y, o)).abs();
                    sy += (tally.pair(o, y, x) - before(y, x, o)).abs();
                }
                let s = sx.max(sy);
                if s > worst.0 {
                    worst = (
                        s,
                        format!(
                            "case 1{} head {:?} pair ({x}, {y})",
                            if reversed { " mirrored" } else { "" },
                            head
                        ),
                    );
                }
            }
        }
    }
    worst
}

fn case2_stat(
    oracle: &dyn PlacementOracle,
    comps: &[Comp],
    h: usize,
    cache: &TallyCache,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for ci in comps {
        let head = &ci.center.as_slice()[..h];
        let tally = cache.get(oracle, false, head, false);
        let s: f64 = (0..tally.patterns())
            .map(|o| {
                let pre = tally.pattern_prefix(o);
                let model: f64 = comps
                    .iter()
                    .map(|c| c.w * prefix_prob(c.phi, &c.center, &pre))
                    .sum();
                (tally.mass[o] - model).abs()
            })
            .sum();
        if s > worst.0 {
            worst = (s, format!("case 2 head {head:?}"));
        }
    }
    worst
}

/// Separated closeness test of `candidate` against the oracle.
pub fn test_separated_close(
    oracle: &dyn PlacementOracle,
    candidate: &MallowsMixture,
    params: &SeparationParams,
) -> Result<SeparatedTest> {
    test_with_cache(oracle, candidate, params, &TallyCache::default())
}

fn test_with_cache(
    oracle: &dyn PlacementOracle,
    candidate: &MallowsMixture,
    params: &SeparationParams,
    cache: &TallyCache,
) -> Result<SeparatedTest> {
    let n = oracle.n();
    if candidate.n() != n {
        return invalid("candidate and oracle disagree on n");
    }
    let k = candidate.k();
    let th = thresholds(n, k, params);
    if let Some(w) = candidate
        .weights()
        .iter()
        .find(|&&w| w < params.alpha / 2.0)
    {
        return Ok(SeparatedTest {
            accept: false,
            score: f64::INFINITY,
            case1_stat: f64::NAN,
            case1_threshold: th.case1,
            case2_stat: f64::NAN,
            case2_threshold: th.case2,
            worst: format!("weight {w} below alpha/2"),
        });
    }
    let h1 = even_floor((4 * k - 4).min(n.saturating_sub(2)));
    let h2 = even_floor((4 * k - 2).min(n));
    let comps = comps_of(candidate, false);
    let (s2, w2) = case2_stat(oracle, &comps, h2, cache);
    let (mut s1, mut w1) = case1_stat(oracle, &comps, false, h1, cache);
    // The mirrored pass only matters while nothing has rejected yet.
    if s1 <= th.case1 && s2 <= th.case2 {
        let (m1, mw) = case1_stat(oracle, &comps_of(candidate, true), true, h1, cache);
        if m1 > s1 {
            s1 = m1;
            w1 = mw;
        }
    }
    let (r1, r2) = (s1 / th.case1, s2 / th.case2);
    let (score, worst) = if r1 >= r2 { (r1, w1) } else { (r2, w2) };
    Ok(SeparatedTest {
        accept: score <= 1.0,
        score,
        case1_stat: s1,
        case1_threshold: th.case1,
        case2_stat: s2,
        case2_threshold: th.case2,
        worst,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatedOutcome {
    pub mixture: MallowsMixture,
    pub test: SeparatedTest,
    pub raw_weights: Vec<f64>,
    pub prefix_len: usize,
    pub prefixes: Vec<(Vec<Element>, f64)>,
    /// Reported, not enforced.
    pub list_size_bound: f64,
    pub candidates_tested: usize,
    pub candidates_accepted: usize,
}

fn index_tuples(len: usize, k: usize) -> Vec<Vec<usize>> {
    // Nondecreasing index tuples.
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, len: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..len {
            cur.push(i);
            rec(i, len, k, cur, out);
            cur.pop();
        }
    }
    rec(0, len, k, &mut cur, &mut out);
    out
}

fn phi_tuples(grid: &[f64], k: usize, gap: f64) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t: Vec<f64>| {
                grid.iter()
                    .filter(|&&g| t.iter().all(|&p| (p - g).abs() >= gap - 1e-12))
                    .map(|&g| {
                        let mut t2 = t.clone();
                        t2.push(g);
                        t2
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

fn cartesian(lists: &[Vec<Permutation>]) -> Vec<Vec<Permutation>> {
    let mut out = vec![Vec::new()];
    for l in lists {
        out = out
            .into_iter()
            .flat_map(|t: Vec<Permutation>| {
                l.iter().map(move |c| {
                    let mut t = t.clone();
                    t.push(c.clone());
                    t
                })
            })
            .collect();
    }
    out
}

/// Heavy prefixes → extension per prefix tuple and φ tuple → closed-form
/// weights → separated test. Returns the accepted candidate with the
/// smallest score.
pub fn learn_mixture_separated(
    oracle: &dyn PlacementOracle,
    k: usize,
    params: &SeparationParams,
) -> Result<SeparatedOutcome> {
    params.validate()?;
    let n = oracle.n();
    if k == 0 {
        return invalid("k must be positive");
    }
    let p = params.prefix_len_for(k, n);
    let h = head_len_extend(k);
    if p < h || p > n {
        return invalid(format!("prefix length {p} must lie in {h}..={n}"));
    }
    let mut prefixes = heavy_prefixes(oracle, p, params.prefix_threshold(p))?;
    prefixes.truncate(params.max_prefixes);
    if prefixes.is_empty() {
        return Err(Error::LearningFailure(
            "no prefix reaches the frequency threshold".into(),
        ));
    }
    let tallies: Vec<HeadTally> = prefixes
        .par_iter()
        .map(|(pre, _)| HeadTally::compute(oracle, &pre[..h], true))
        .collect();
    let grid = params.phi_grid();
    let phis = phi_tuples(&grid, k, params.gamma / 2.0);

    // Candidate (centers, φ) tuples with plausible raw weights.
    let mut found: Vec<(Vec<Permutation>, Vec<f64>, WeightEstimate)> =
        index_tuples(prefixes.len(), k)
            .par_iter()
            .flat_map_iter(|idx| {
                let mut local = Vec::new();
                for phi in &phis {
                    let mut lists = Vec::with_capacity(k);
                    for (t, &pi) in idx.iter().enumerate() {
                        match extend_with_tally(&tallies[pi], &prefixes[pi].0, phi, t) {
                            Ok(out) => lists.push(out.centers()),
                            Err(_) => break,
                        }
                    }
                    if lists.len() < k {
                        continue;
                    }
                    for centers in cartesian(&lists) {
                        let heads: Vec<HeadTally> = centers
                            .iter()
                            .map(|c| {
                                let pi = prefixes
                                    .iter()
                                    .position(|(pre, _)| c.as_slice().starts_with(&pre[..h]))
                                    .expect("centers extend known prefixes");
                                HeadTally {
                                    pairs: None,
                                    ..tallies[pi].clone()
                                }
                            })
                            .collect();
                        let Ok(est) = weights_from_tallies(&heads, &centers, phi) else {
                            continue;
                        };
                        let total: f64 = est.raw.iter().sum();
                        let plausible = (total - 1.0).abs() <= params.weight_slack
                            && est.raw.iter().all(|&w| {
                                w >= params.alpha / 2.0 && w <= 1.0 + params.weight_slack
                            });
                        if plausible {
                            local.push((centers, phi.clone(), est));
                        }
                    }
                }
                local
            })
            .collect();
    found.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    });
    found.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);

    let cache = TallyCache::default();
    let tested = found
        .par_iter()
        .map(|(centers, phi, est)| {
            let mix = MallowsMixture::new(
                centers
                    .iter()
                    .zip(phi)
                    .map(|(c, &f)| MallowsModel::new(f, c.clone()))
                    .collect::<Result<_>>()?,
                est.weights.clone(),
            )?;
            let test = test_with_cache(oracle, &mix, params, &cache)?;
            Ok((mix, test, est.raw.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let accepted = tested.iter().filter(|t| t.1.accept).count();
    let best = tested
        .iter()
        .filter(|t| t.1.accept)
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score));
    match best {
        Some((mix, test, raw)) => Ok(SeparatedOutcome {
            mixture: mix.clone(),
            test: test.clone(),
            raw_weights: raw.clone(),
            prefix_len: p,
            prefixes,
            list_size_bound: params.list_size_bound(k),
            candidates_tested: tested.len(),
            candidates_accepted: accepted,
        }),
        None => {
            let best_score = tested
                .iter()
                .map(|t| t.1.score)
                .fold(f64::INFINITY, f64::min);
            Err(Error::LearningFailure(format!(
                "no candidate accepted: {} prefixes, {} candidates tested, best score {best_score:.3e}",
                prefixes.len(),
                tested.len()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_many;
    use crate::oracle::TableOracle;
    use crate::perm::enumerate_sn;

    fn perm(v: &[u16]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    fn mix(parts: &[(f64, f64, Vec<u16>)]) -> MallowsMixture {
        MallowsMixture::new(
            parts
                .iter()
                .map(|(_, p, c)| MallowsModel::new(*p, perm(c)).unwrap())
                .collect(),
            parts.iter().map(|(w, _, _)| *w).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pair_order_prob_matches_enumeration() {
        for d in 2..=6usize {
            for phi in [0.0, 0.2, 0.5, 0.9, 1.0] {
                let brute: f64 = if phi == 1.0 {
                    0.5
                } else {
                    let m = MallowsModel::new(phi, Permutation::identity(d)).unwrap();
                    enumerate_sn(d)
                        .unwrap()
                        .filter(|p| p.precedes(1, d as u16))
                        .map(|p| m.pmf(&p).unwrap())
                        .sum()
                };
                assert!(
                    (pair_order_prob(phi, d) - brute).abs() < 1e-12,
                    "d={d} phi={phi}"
                );
            }
        }
        assert!((pair_order_prob(0.3, 2) - 1.0 / 1.3).abs() < 1e-15);
        // Only the span between the two elements matters.
        let m = MallowsModel::new(0.4, perm(&[3, 1, 5, 2, 4])).unwrap();
        let pr: f64 = enumerate_sn(5)
            .unwrap()
            .filter(|p| p.precedes(1, 4))
            .map(|p| m.pmf(&p).unwrap())
            .sum();
        assert!((pr - pair_order_prob(0.4, 4)).abs() < 1e-12);
    }

    #[test]
    fn prefixes_k1_phi0() {
        let m = mix(&[(1.0, 0.0, vec![4, 2, 5, 1, 3, 6])]);
        let o = TableOracle::exact(&m).unwrap();
        let params = SeparationParams {
            prefix_len: Some(3),
            ..SeparationParams::default()
        };
        let found = find_prefixes(&o, 1, &params).unwrap();
        assert!(found.iter().all(|c| c.prefix == vec![4, 2, 5]));
        assert!(found.iter().any(|c| c.phi_estimate == 0.0));
        let bad = SeparationParams {
            prefix_len: Some(7),
            ..params
        };
        assert!(matches!(
            find_prefixes(&o, 1, &bad),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn local_prefixes_agree_with_visits() {
        let m = mix(&[
            (0.5, 0.2, vec![1, 2, 3, 4, 5, 6]),
            (0.5, 0.6, vec![6, 5, 4, 3, 2, 1]),
        ]);
        let o = TableOracle::exact(&m).unwrap();
        let mut ledger = QueryLedger::new();
        let local = find_prefixes_local(&o, 2, 0.02, 0.01, &mut ledger, None).unwrap();
        let direct = heavy_prefixes(&o, 2, 0.02).unwrap();
        assert_eq!(
            local.iter().map(|p| &p.0).collect::<Vec<_>>(),
            direct.iter().map(|p| &p.0).collect::<Vec<_>>()
        );
        assert!(ledger.total_cost_f64() > 0.0);
    }

    #[test]
    fn extend_exact_k2() {
        let a = vec![1, 2, 3, 4, 5, 6, 7, 8];
        let b = vec![8, 6, 7, 4, 5, 2, 3, 1];
        let m = mix(&[(0.5, 0.2, a.clone()), (0.5, 0.6, b.clone())]);
        let o = TableOracle::exact(&m).unwrap();
        let pre = vec![a[..4].to_vec(), b[..4].to_vec()];
        let phis = [0.2, 0.6];
        assert!(extend_prefix(&o, &pre, &phis, 0)
            .unwrap()
            .centers()
            .contains(&perm(&a)));
        let out = extend_prefix(&o, &pre, &phis, 1).unwrap();
        assert!(out.centers().contains(&perm(&b)));
        assert_eq!(out.hypotheses.len(), 2);
        // Same inputs, same lists.
        assert_eq!(out, extend_prefix(&o, &pre, &phis, 1).unwrap());
    }

    #[test]
    fn extend_sampled_k1() {
        let c = vec![5, 3, 8, 1, 2, 7, 4, 6];
        let s = sample_many(&mix(&[(1.0, 0.5, c.clone())]), 100_000, 4);
        let o = TableOracle::empirical(8, &s, 0.05).unwrap();
        let out = extend_prefix(&o, &[c[..2].to_vec()], &[0.5], 0).unwrap();
        assert_eq!(out.centers(), vec![perm(&c)]);
    }

    #[test]
    fn weights_exact() {
        let m = mix(&[
            (0.3, 0.2, vec![1, 2, 3, 4, 5, 6]),
            (0.7, 0.6, vec![6, 4, 5, 2, 3, 1]),
        ]);
        let o = TableOracle::exact(&m).unwrap();
        let centers: Vec<_> = m.components().iter().map(|c| c.center().clone()).collect();
        let est = estimate_weights(&o, &centers, &[0.2, 0.6]).unwrap();
        assert!((est.raw[0] - 0.3).abs() < 1e-8 && (est.raw[1] - 0.7).abs() < 1e-8);
        let single = mix(&[(1.0, 0.4, vec![2, 1, 3, 4])]);
        let est = estimate_weights(
            &TableOracle::exact(&single).unwrap(),
            &[perm(&[2, 1, 3, 4])],
            &[0.4],
        )
        .unwrap();
        assert_eq!(est.weights, vec![1.0]);
    }

    #[test]
    fn tester_cases() {
        let a = vec![1, 2, 3, 4, 5, 6, 7, 8];
        let b = vec![8, 7, 6, 5, 4, 3, 2, 1];
        let truth = mix(&[(0.5, 0.2, a.clone()), (0.5, 0.6, b.clone())]);
        let o = TableOracle::exact(&truth).unwrap();
        let params = SeparationParams::default();
        assert!(test_separated_close(&o, &truth, &params).unwrap().accept);
        let mut swapped = a.clone();
        swapped.swap(5, 6);
        let bad = mix(&[(0.5, 0.2, swapped), (0.5, 0.6, b.clone())]);
        let t = test_separated_close(&o, &bad, &params).unwrap();
        assert!(!t.accept && t.case1_stat > t.case1_threshold, "{t:?}");
        let shifted = mix(&[(0.5, 0.2 + 2.0 * params.theta, a.clone()), (0.5, 0.6, b)]);
        let t = test_separated_close(&o, &shifted, &params).unwrap();
        assert!(!t.accept && t.case2_stat > t.case2_threshold, "{t:?}");
    }

    #[test]
    fn pipeline_exact_k2() {
        let a = vec![1, 2, 3, 4, 5, 6, 7, 8];
        let b = vec![7, 8, 5, 6, 3, 4, 1, 2];
        let truth = mix(&[(0.4, 0.2, a.clone()), (0.6, 0.6, b.clone())]);
        let o = TableOracle::exact(&truth).unwrap();
        let params = SeparationParams {
            gamma: 0.2,
            alpha: 0.2,
            theta: 0.02,
            prefix_len: Some(4),
            ..SeparationParams::default()
        };
        let out = learn_mixture_separated(&o, 2, &params).unwrap();
        let mut comps: Vec<_> = out
            .mixture
            .components()
            .iter()
            .zip(out.mixture.weights())
            .map(|(c, w)| (c.phi(), c.center().clone(), *w))
            .collect();
        comps.sort_by(|x, y| x.0.total_cmp(&y.0));
        assert_eq!(comps[0].1, perm(&a));
        assert_eq!(comps[1].1, perm(&b));
        assert!((comps[0].2 - 0.4).abs() < 1e-8);
    }

    #[test]
    fn pipeline_k1() {
        let c = vec![3, 1, 4, 2, 6, 5];
        let o = TableOracle::exact(&mix(&[(1.0, 0.3, c.clone())])).unwrap();
        let out = learn_mixture_separated(&o, 1, &SeparationParams::default()).unwrap();
        assert_eq!(out.mixture.components()[0].center(), &perm(&c));
        assert!((out.mixture.components()[0].phi() - 0.3).abs() < 1e-9);
    }
}
