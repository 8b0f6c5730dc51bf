use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use mallows_core::config::{read_permutations, write_permutations, MixtureConfig};
use mallows_core::distance::{
    check_distinct_centers_bound, check_same_center_bound, tv_empirical_sampled, tv_exact,
};
use mallows_core::identifiability::{
    identifiability_l1, kruskal_l1, kruskal_projection, parse_rational,
    robust_kruskal_perturbed_unchecked, zagier_check, CoeffStrategy,
};
use mallows_core::lowerbound::{
    build_close_mixtures, build_sql_hard_instance, verify_close_mixtures, verify_sql_instance,
    Variant,
};
use mallows_core::model::{sample_many, sample_many_traced};
use mallows_core::perm::kendall_tau;
use mallows_core::seed::derive_seed;
use mallows_core::table::perm_table;
use mallows_core::{
    learn_mixture_general, learn_mixture_separated, LearnerBudget, MallowsMixture, Permutation,
    SeparationParams, TableOracle,
};

use crate::record::{to_value, Assertion};

/// What a subcommand hands back for the record.
pub struct Outcome {
    pub command: &'static str,
    pub config: Value,
    pub results: Value,
    pub assertions: Vec<Assertion>,
    pub stdout_busy: bool,
}

impl Outcome {
    pub fn new(command: &'static str, config: impl Serialize, results: Value) -> Self {
        Self {
            command,
            config: to_value(config),
            results,
            assertions: Vec::new(),
            stdout_busy: false,
        }
    }
}

pub fn load_mixture(path: &Path) -> Result<MallowsMixture> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = MixtureConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?;
    Ok(cfg.to_mixture()?)
}

fn parse_perm(s: &str) -> Result<Permutation> {
    s.parse::<Permutation>()
        .with_context(|| format!("permutation {s:?}"))
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Tag each permutation with the component that produced it.
    #[arg(long)]
    pub trace: bool,
    /// Write permutations here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn sample(a: &SampleArgs, seed: u64) -> Result<Outcome> {
    let mix = load_mixture(&a.config)?;
    let drawn = sample_many_traced(&mix, a.count, seed);
    let (perms, comps): (Vec<Permutation>, Vec<usize>) = drawn.into_iter().unzip();
    let trace = a.trace.then_some(comps.as_slice());
    match &a.output {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write_permutations(&mut w, &perms, trace)?;
            w.flush()?;
        }
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            write_permutations(&mut w, &perms, trace)?;
            w.flush()?;
        }
    }
    let mut per_comp = vec![0usize; mix.k()];
    for &c in &comps {
        per_comp[c] += 1;
    }
    let mut out = Outcome::new(
        "sample",
        a,
        json!({ "n": mix.n(), "count": perms.len(), "component_counts": per_comp }),
    );
    out.stdout_busy = a.output.is_none();
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct PmfArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Single permutation, e.g. "3 1 4 2"; omit for the full table.
    #[arg(long)]
    pub perm: Option<String>,
    /// Also write the full table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

pub fn pmf(a: &PmfArgs) -> Result<Outcome> {
    let mix = load_mixture(&a.config)?;
    if let Some(s) = &a.perm {
        let p = parse_perm(s)?;
        let v = mix.pmf(&p)?;
        return Ok(Outcome::new(
            "pmf",
            a,
            json!({ "perm": p.to_string(), "pmf": v }),
        ));
    }
    let v = mix.vectorize()?;
    let table = perm_table(mix.n())?;
    let sum = v.sum();
    if let Some(path) = &a.csv {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "perm,pmf")?;
        for (i, x) in v.values().iter().enumerate() {
            writeln!(w, "{},{x}", table.permutation(i))?;
        }
        w.flush()?;
    }
    let entries: Vec<(String, f64)> = v
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| (table.permutation(i).to_string(), x))
        .collect();
    let mut out = Outcome::new(
        "pmf",
        a,
        json!({ "n": mix.n(), "sum": sum, "entries": entries }),
    );
    out.assertions.push(Assertion::new(
        "pmf sums to one",
        (sum - 1.0).abs(),
        1e-12,
        (sum - 1.0).abs() <= 1e-12,
        "normalization",
    ));
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct TvArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Use the plug-in estimate from this many samples per side.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Check the distinct-center lower bound eps/2 (single components).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Check the same-center upper bound mu (single components).
    #[arg(long)]
    pub mu: Option<f64>,
}

pub fn tv(a: &TvArgs, seed: u64) -> Result<Outcome> {
    let ma = load_mixture(&a.a)?;
    let mb = load_mixture(&a.b)?;
    ensure!(ma.n() == mb.n(), "mixtures over different n");
    let report = match a.samples {
        Some(m) => tv_empirical_sampled(&ma, &mb, m, seed)?,
        None => tv_exact(&ma.vectorize()?, &mb.vectorize()?)?,
    };
    let mut out = Outcome::new("tv", a, to_value(&report));
    let single = ma.k() == 1 && mb.k() == 1;
    if let Some(eps) = a.eps {
        ensure!(single, "--eps needs single-component configs");
        let r = check_distinct_centers_bound(&ma.components()[0], &mb.components()[0], eps)?;
        out.assertions.push(Assertion::new(
            "distinct-center tv lower bound",
            r.measured,
            r.bound,
            r.holds,
            "tv-distinct-centers",
        ));
    }
    if let Some(mu) = a.mu {
        ensure!(single, "--mu needs single-component configs");
        let r = check_same_center_bound(&ma.components()[0], &mb.components()[0], mu)?;
        out.assertions.push(Assertion::new(
            "same-center tv upper bound",
            r.measured,
            r.bound,
            r.holds,
            "tv-same-center",
        ));
    }
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct ZagierArgs {
    #[arg(long)]
    pub n: usize,
    /// Rational φ such as 1/2; repeat for several.
    #[arg(long, required = true)]
    pub phi: Vec<String>,
}

pub fn zagier(a: &ZagierArgs) -> Result<Outcome> {
    let mut reports = Vec::new();
    for s in &a.phi {
        let phi = parse_rational(s)?;
        reports.push(zagier_check(a.n, &phi)?);
    }
    let equal = reports.iter().all(|r| r.equal);
    let mut out = Outcome::new("zagier", a, json!({ "equal": equal, "checks": reports }));
    for r in &reports {
        out.assertions.push(Assertion::new(
            &format!("det identity n={} phi={}", r.n, r.phi),
            format!("{}/{}", r.det_num, r.det_den),
            format!("{}/{}", r.formula_num, r.formula_den),
            r.equal,
            "determinant-identity",
        ));
    }
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct KruskalArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub phi: f64,
    /// Defaults to 1 - φ.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Column permutation, e.g. "2 1 3"; repeat for each column.
    #[arg(long = "perm", required = true)]
    pub perms: Vec<String>,
    /// Per-column φ values for the perturbed variant.
    #[arg(long, value_delimiter = ',')]
    pub phis: Option<Vec<f64>>,
}

pub fn kruskal(a: &KruskalArgs) -> Result<Outcome> {
    let perms = a
        .perms
        .iter()
        .map(|s| parse_perm(s))
        .collect::<Result<Vec<_>>>()?;
    let eps = a.eps.unwrap_or(1.0 - a.phi);
    let mut out = Outcome::new("kruskal", a, Value::Null);
    if let Some(phis) = &a.phis {
        let r =
            robust_kruskal_perturbed_unchecked(a.n, phis, eps, &perms, &CoeffStrategy::Minimize)?;
        if r.within_gap {
            out.assertions.push(Assertion::new(
                "perturbed l1 lower bound",
                r.min_l1,
                r.bound,
                r.holds,
                "robust-kruskal",
            ));
        }
        out.results = json!({ "perturbed": r });
        return Ok(out);
    }
    let l1 = kruskal_l1(a.n, a.phi, eps, &perms, &CoeffStrategy::Minimize)?;
    let proj = kruskal_projection(a.n, a.phi, eps, &perms)?;
    out.assertions.push(Assertion::new(
        "l1 lower bound",
        l1.min_l1,
        l1.bound,
        l1.holds,
        "kruskal-l1",
    ));
    out.assertions.push(Assertion::new(
        "projection lower bound",
        proj.proj_len,
        proj.bound,
        proj.holds,
        "kruskal-projection",
    ));
    out.results = json!({ "l1": l1, "projection": proj });
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct IdentifiabilityArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Signed coefficients; defaults to the weights scaled to max 1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coeffs: Option<Vec<f64>>,
    #[arg(long)]
    pub mu: f64,
}

pub fn identifiability(a: &IdentifiabilityArgs) -> Result<Outcome> {
    let mix = load_mixture(&a.config)?;
    let coeffs = match &a.coeffs {
        Some(c) => c.clone(),
        None => {
            let top = mix.weights().iter().cloned().fold(0.0, f64::max);
            mix.weights().iter().map(|w| w / top).collect()
        }
    };
    let r = identifiability_l1(mix.components(), &coeffs, a.mu)?;
    let mut out = Outcome::new("identifiability", a, to_value(&r));
    out.assertions.push(Assertion::new(
        "log10 l1 lower bound",
        r.l1.log10(),
        r.bound_log10,
        r.holds,
        "identifiability-l1",
    ));
    Ok(out)
}

/// How a learned mixture lines up with the truth under the best component
/// matching.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub centers_exact: bool,
    pub max_kt_to_truth: usize,
    pub max_phi_err: f64,
    pub max_weight_err: f64,
}

fn index_perms(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in index_perms(k - 1) {
        for i in 0..k {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

pub fn compare(truth: &MallowsMixture, learned: &MallowsMixture) -> Option<Comparison> {
    if truth.k() != learned.k() || truth.n() != learned.n() {
        return None;
    }
    let mut best: Option<Comparison> = None;
    let mut perms = index_perms(truth.k());
    perms.sort();
    for p in perms {
        let mut c = Comparison {
            centers_exact: true,
            max_kt_to_truth: 0,
            max_phi_err: 0.0,
            max_weight_err: 0.0,
        };
        for (i, &j) in p.iter().enumerate() {
            let (t, l) = (&truth.components()[i], &learned.components()[j]);
            let d = kendall_tau(t.center(), l.center()).unwrap_or(usize::MAX);
            c.centers_exact &= d == 0;
            c.max_kt_to_truth = c.max_kt_to_truth.max(d);
            c.max_phi_err = c.max_phi_err.max((t.phi() - l.phi()).abs());
            c.max_weight_err = c
                .max_weight_err
                .max((truth.weights()[i] - learned.weights()[j]).abs());
        }
        let key = |c: &Comparison| (c.max_kt_to_truth, c.max_phi_err.max(c.max_weight_err));
        if best.as_ref().map_or(true, |b| key(&c) < key(b)) {
            best = Some(c);
        }
    }
    best
}

/// Where a learner gets its data: exact moments of the truth, fresh samples
/// from the truth, or a permutation dump.
enum Data {
    Exact(MallowsMixture),
    Sampled(MallowsMixture, usize),
    Dump(Vec<Permutation>),
}

fn learner_data(
    config: &Option<PathBuf>,
    input: &Option<PathBuf>,
    count: Option<usize>,
    trials: usize,
) -> Result<(Data, Option<MallowsMixture>)> {
    match (config, input) {
        (Some(_), Some(_)) => bail!("give either --config or --input, not both"),
        (None, None) => bail!("one of --config or --input is required"),
        (Some(c), None) => {
            let mix = load_mixture(c)?;
            let data = match count {
                Some(m) => Data::Sampled(mix.clone(), m),
                None => Data::Exact(mix.clone()),
            };
            Ok((data, Some(mix)))
        }
        (None, Some(p)) => {
            ensure!(trials == 1, "--trials needs --config");
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let dump = read_permutations(BufReader::new(f), None)?;
            ensure!(
                !dump.perms.is_empty(),
                "{} holds no permutations",
                p.display()
            );
            Ok((Data::Dump(dump.perms), None))
        }
    }
}

impl Data {
    fn oracle(
        &self,
        seed: u64,
        tag: &str,
        trial: usize,
        delta: f64,
    ) -> Result<(TableOracle, Option<usize>)> {
        Ok(match self {
            Data::Exact(mix) => (TableOracle::exact(mix)?, None),
            Data::Sampled(mix, m) => {
                let s = sample_many(mix, *m, derive_seed(seed, tag, trial as u64));
                (TableOracle::empirical(mix.n(), &s, delta)?, Some(*m))
            }
            Data::Dump(perms) => (
                TableOracle::empirical(perms[0].n(), perms, delta)?,
                Some(perms.len()),
            ),
        })
    }
}

fn trial_summary(
    learned: std::result::Result<(MallowsMixture, Value), mallows_core::Error>,
    truth: Option<&MallowsMixture>,
    tolerance: Option<f64>,
) -> (bool, Value) {
    match learned {
        Ok((mix, detail)) => {
            let cmp = truth.and_then(|t| compare(t, &mix));
            let pass = match (tolerance, &cmp) {
                (Some(tol), Some(c)) => {
                    c.centers_exact && c.max_phi_err <= tol && c.max_weight_err <= tol
                }
                (Some(_), None) => false,
                (None, _) => true,
            };
            (
                pass,
                json!({
                    "accepted": true,
                    "pass": pass,
                    "mixture": MixtureConfig::from_mixture(&mix),
                    "comparison": cmp,
                    "detail": detail,
                }),
            )
        }
        Err(e) => (
            false,
            json!({ "accepted": false, "pass": false, "error": e.to_string() }),
        ),
    }
}

fn push_trial_assertions(
    out: &mut Outcome,
    passes: usize,
    trials: usize,
    min_pass: Option<usize>,
    tag: &str,
) {
    let need = min_pass.unwrap_or(trials);
    out.assertions.push(Assertion::new(
        "passing trials",
        passes,
        need,
        passes >= need,
        tag,
    ));
}

#[derive(Args, Debug, Serialize)]
pub struct LearnGeneralArgs {
    /// Ground-truth mixture; exact moments unless --count is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Permutation dump to learn from.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub k: usize,
    /// Samples drawn from the truth per trial.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Pass requires exact centers and φ, weight errors within this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Trials that must pass (defaults to all).
    #[arg(long)]
    pub min_pass: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    #[arg(long, default_value_t = 4096)]
    pub beam: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub accept_threshold: Option<f64>,
}

pub fn learn_general(a: &LearnGeneralArgs, seed: u64) -> Result<Outcome> {
    ensure!(a.trials >= 1, "--trials must be at least 1");
    let (data, truth) = learner_data(&a.config, &a.input, a.count, a.trials)?;
    let trials: Vec<(bool, Value)> = (0..a.trials)
        .into_par_iter()
        .map(|t| -> Result<(bool, Value)> {
            let (oracle, samples) = data.oracle(seed, "learn-general", t, a.delta)?;
            let budget = LearnerBudget {
                samples,
                grid_step: a.grid_step,
                beam: a.beam,
                delta: a.delta,
                accept_threshold: a.accept_threshold,
                ..LearnerBudget::default()
            };
            let learned = learn_mixture_general(&oracle, a.k, &budget).map(|o| {
                let detail = json!({
                    "statistic": o.statistic,
                    "threshold": o.threshold,
                    "tuples_tested": o.tuples_tested,
                    "tuples_eliminated": o.tuples_eliminated,
                    "tuples_accepted": o.tuples_accepted,
                    "candidates": o.candidates.len(),
                });
                (o.mixture, detail)
            });
            Ok(trial_summary(learned, truth.as_ref(), a.tolerance))
        })
        .collect::<Result<_>>()?;
    let passes = trials.iter().filter(|t| t.0).count();
    let results: Vec<Value> = trials.into_iter().map(|t| t.1).collect();
    let mut out = Outcome::new(
        "learn-general",
        a,
        json!({ "trials": results, "passes": passes }),
    );
    push_trial_assertions(&mut out, passes, a.trials, a.min_pass, "general-learner");
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct LearnSeparatedArgs {
    /// Ground-truth mixture; exact oracle unless --count is given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Permutation dump to learn from.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub min_pass: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub prefix_len: Option<usize>,
    #[arg(long, default_value_t = 24)]
    pub max_prefixes: usize,
}

pub fn learn_separated(a: &LearnSeparatedArgs, seed: u64) -> Result<Outcome> {
    ensure!(a.trials >= 1, "--trials must be at least 1");
    let (data, truth) = learner_data(&a.config, &a.input, a.count, a.trials)?;
    let base = SeparationParams {
        gamma: a.gamma,
        alpha: a.alpha,
        theta: a.theta,
        beta: a.beta,
        delta: a.delta,
        prefix_len: a.prefix_len,
        max_prefixes: a.max_prefixes,
        ..SeparationParams::default()
    };
    base.validate()?;
    let trials: Vec<(bool, Value)> = (0..a.trials)
        .into_par_iter()
        .map(|t| -> Result<(bool, Value)> {
            let (oracle, samples) = data.oracle(seed, "learn-separated", t, a.delta)?;
            let params = SeparationParams {
                samples,
                ..base.clone()
            };
            let learned = learn_mixture_separated(&oracle, a.k, &params).map(|o| {
                let detail = json!({
                    "test": o.test,
                    "raw_weights": o.raw_weights,
                    "prefix_len": o.prefix_len,
                    "prefixes": o.prefixes.len(),
                    "list_size_bound": o.list_size_bound,
                    "candidates_tested": o.candidates_tested,
                    "candidates_accepted": o.candidates_accepted,
                });
                (o.mixture, detail)
            });
            Ok(trial_summary(learned, truth.as_ref(), a.tolerance))
        })
        .collect::<Result<_>>()?;
    let passes = trials.iter().filter(|t| t.0).count();
    let results: Vec<Value> = trials.into_iter().map(|t| t.1).collect();
    let mut out = Outcome::new(
        "learn-separated",
        a,
        json!({ "trials": results, "passes": passes }),
    );
    push_trial_assertions(&mut out, passes, a.trials, a.min_pass, "separated-learner");
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct LowerboundArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub mu: f64,
    /// `k` (r = k) or `2k` (r = 2k).
    #[arg(long, default_value = "k")]
    pub variant: String,
    /// Write both mixtures as configs to this JSON file.
    #[arg(long)]
    pub emit_configs: Option<PathBuf>,
}

pub fn lowerbound(a: &LowerboundArgs) -> Result<Outcome> {
    let variant: Variant = a.variant.parse()?;
    let pair = build_close_mixtures(a.k, a.mu, a.n, variant)?;
    let r = verify_close_mixtures(&pair)?;
    if let Some(p) = &a.emit_configs {
        let both = json!({
            "positive": MixtureConfig::from_mixture(&pair.positive),
            "negative": MixtureConfig::from_mixture(&pair.negative),
        });
        std::fs::write(p, serde_json::to_string_pretty(&both)?)?;
    }
    let mut out = Outcome::new(
        "lowerbound",
        a,
        json!({
            "r": pair.r,
            "lambda": pair.lambda,
            "coefficients": pair.coefficients,
            "positive": MixtureConfig::from_mixture(&pair.positive),
            "negative": MixtureConfig::from_mixture(&pair.negative),
            "report": r,
        }),
    );
    out.assertions.extend([
        Assertion::new(
            "tv",
            r.exact_tv,
            r.claimed_tv_bound,
            r.tv_holds,
            "close-mixtures-tv",
        ),
        Assertion::new(
            "l1 of v",
            r.v_l1,
            r.l1_claim_bound,
            r.l1_claim_holds,
            "close-mixtures-l1",
        ),
        Assertion::new(
            "low-inversion entries",
            r.max_low_inversion_entry,
            1e-13,
            r.zero_entries_hold,
            "close-mixtures-zeros",
        ),
        Assertion::new(
            "weight floor",
            r.min_weight,
            r.weight_floor,
            r.weights_hold,
            "close-mixtures-weights",
        ),
    ]);
    Ok(out)
}

#[derive(Args, Debug, Serialize)]
pub struct SqlArgs {
    #[arg(long, default_value_t = 2)]
    pub ell: usize,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
}

pub fn sql(a: &SqlArgs) -> Result<Outcome> {
    let inst = build_sql_hard_instance(a.ell, a.n)?;
    let r = verify_sql_instance(&inst)?;
    let mut out = Outcome::new(
        "sql",
        a,
        json!({
            "k": inst.k,
            "phi": inst.phi,
            "even": MixtureConfig::from_mixture(&inst.even),
            "odd": MixtureConfig::from_mixture(&inst.odd),
            "report": r,
        }),
    );
    out.assertions.extend([
        Assertion::new(
            "small queries agree",
            r.max_small_query_diff,
            0.0,
            r.indist_small_queries,
            "sql-indistinguishable",
        ),
        Assertion::new(
            "placement probability cap",
            r.max_placement_prob,
            r.placement_cap,
            r.placement_holds,
            "sql-placement-cap",
        ),
    ]);
    Ok(out)
}
