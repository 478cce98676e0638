//! One function per subcommand. Each returns an [`Outcome`]: the reports
//! with their thresholds, raw CSV files and a few descriptive numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail};
use crittree::crt::{crt_distance_matrix, sample_conditioned_excursion, ExcursionConfig};
use crittree::genealogy::{condition_on_survival, simulate_forest, simulate_tree, Conditioned};
use crittree::mmspace::{
    eta_bad_fraction, lower_mass, median, sample_distance_matrices, DistanceMatrix,
};
use crittree::model::sigma2;
use crittree::rng::{derive_seed, replicates, stream};
use crittree::stats::{
    fclt_report, fit_scale, kolmogorov_report, ks2_p_value, ks_two_sample, many_to_one_report, martingale_report,
    moment_report, qprocess_report, spine_occupation_report, tail_report, two_sample_energy_test, yaglom_report,
    TestReport,
};
use crittree::{compute_martingales, explore, explore_forest, ModelSpec, SimConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub const EXPERIMENTS: &[&str] = &[
    "simulate",
    "explore",
    "martingale",
    "kolmogorov",
    "yaglom",
    "moments",
    "fclt",
    "crt-compare",
    "distance-matrices",
    "lowermass",
    "etabad",
    "qprocess",
    "many-to-one",
    "tails",
];

#[derive(Clone, Debug, Default, Serialize)]
pub struct Outcome {
    pub experiment: String,
    pub reports: Vec<TestReport>,
    pub info: BTreeMap<String, Value>,
    /// `(file name, contents)` written next to the report.
    #[serde(skip)]
    pub files: Vec<(String, String)>,
}

impl Outcome {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.to_string(), ..Self::default() }
    }

    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    fn info(&mut self, key: &str, value: impl Serialize) {
        self.info.insert(key.to_string(), json!(value));
    }

    fn model_info(&mut self, model: &ModelSpec, x: usize) {
        self.info("model", model.name());
        self.info("state", x);
        self.info("phi", model.phi());
        self.info("phi_tilde", model.phi_tilde());
        self.info("sigma_constant", model.branching_constant());
        self.info("sigma2", sigma2(model));
        self.info("c", coupling_constant(model, x));
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.experiment);
        for (k, v) in &self.info {
            let _ = writeln!(s, "{k}: {v}");
        }
        let _ = writeln!(s);
        for r in &self.reports {
            s.push_str(&r.to_text());
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "\noverall: {verdict}");
        s
    }

    pub fn reports_csv(&self) -> String {
        let mut s = String::from("name,statistic,stderr,p_value,target,passed\n");
        for r in &self.reports {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "\"{}\",{},{},{},{},{}",
                r.name.replace('"', "'"),
                r.statistic,
                opt(r.stderr),
                opt(r.p_value),
                opt(r.target),
                r.passed
            );
        }
        s
    }
}

/// `c = Σ / (2φ(x))`, the factor between heights and `M̂`.
pub fn coupling_constant(model: &ModelSpec, x: usize) -> f64 {
    model.branching_constant() / (2.0 * model.phi()[x])
}

pub fn run(experiment: &str, cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    match experiment {
        "simulate" => simulate(cfg, false),
        "explore" => simulate(cfg, true),
        "martingale" => martingale(cfg),
        "kolmogorov" => kolmogorov(cfg),
        "yaglom" => yaglom(cfg),
        "moments" => moments(cfg),
        "fclt" => fclt(cfg),
        "crt-compare" => crt_compare(cfg),
        "distance-matrices" => distance_matrices(cfg),
        "lowermass" => lowermass(cfg),
        "etabad" => etabad(cfg),
        "qprocess" => qprocess(cfg),
        "many-to-one" => many_to_one(cfg),
        "tails" => tails(cfg),
        other => bail!("unknown experiment `{other}`"),
    }
}

fn state(cfg: &ExperimentConfig, model: &ModelSpec) -> anyhow::Result<usize> {
    let x = cfg.state.unwrap_or(0);
    model.check_state(x)?;
    Ok(x)
}

fn test_fn(cfg: &ExperimentConfig, model: &ModelSpec) -> anyhow::Result<Vec<f64>> {
    match &cfg.f {
        Some(f) if f.len() != model.size() => {
            Err(anyhow!("key `f`: {} values given for {} states", f.len(), model.size()))
        }
        Some(f) => Ok(f.clone()),
        None => Ok(model.phi().to_vec()),
    }
}

fn grid(v: &Option<Vec<f64>>, default: &[f64], key: &str) -> anyhow::Result<Vec<f64>> {
    let g = v.clone().unwrap_or_else(|| default.to_vec());
    if g.is_empty() || g.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        bail!("key `{key}`: expected positive finite values, got {g:?}");
    }
    Ok(g)
}

fn simulate(cfg: &ExperimentConfig, with_path: bool) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let sim = SimConfig { horizon: Some(cfg.horizon.unwrap_or(20.0)), length_budget: cfg.length, seed, ..SimConfig::default() };
    let tree = simulate_tree(&model, x, &sim)?;
    let mut out = Outcome::new(if with_path { "explore" } else { "simulate" });
    out.model_info(&model, x);
    out.info("particles", tree.len());
    out.info("total_length", tree.total_length);
    out.info("extinction_time", tree.extinction_time());
    out.info("horizon_censored", tree.horizon_censored);
    out.info("budget_censored", tree.budget_censored);
    let mut nd = Vec::new();
    tree.write_ndjson(&mut nd)?;
    out.files.push(("tree.ndjson".into(), String::from_utf8(nd)?));
    if with_path {
        let path = explore(&tree);
        let mp = compute_martingales(&path, &model);
        let mut h = Vec::new();
        path.write_height_csv(&mut h)?;
        let mut m = Vec::new();
        mp.write_csv(&mut m)?;
        let max_h = path.segments().iter().map(|s| s.death).fold(0.0, f64::max);
        out.info("exploration_length", path.length());
        out.info("max_height", max_h);
        out.files.push(("height.csv".into(), String::from_utf8(h)?));
        out.files.push(("martingale.csv".into(), String::from_utf8(m)?));
    }
    Ok(out)
}

fn martingale(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("two-type")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let t = grid(&cfg.t, &[5.0, 20.0], "t")?;
    let mut out = Outcome::new("martingale");
    out.model_info(&model, x);
    out.reports = martingale_report(&model, x, &t, cfg.reps.unwrap_or(100_000), seed)?;
    let tmax = t.iter().cloned().fold(0.0, f64::max);
    let forest = simulate_forest(&model, x, tmax, &mut stream(derive_seed(seed, "example-path"), 0))?;
    let path = explore_forest(&forest);
    let mut m = Vec::new();
    compute_martingales(&path, &model).write_csv(&mut m)?;
    out.files.push(("martingale_path.csv".into(), String::from_utf8(m)?));
    Ok(out)
}

fn kolmogorov(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let t = grid(&cfg.t, &[200.0], "t")?;
    let mut out = Outcome::new("kolmogorov");
    out.model_info(&model, x);
    out.reports = kolmogorov_report(&model, x, &t, cfg.reps.unwrap_or(200_000), cfg.seed()?)?;
    Ok(out)
}

fn yaglom(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let f = test_fn(cfg, &model)?;
    let t = grid(&cfg.t, &[200.0], "t")?;
    let mut out = Outcome::new("yaglom");
    out.model_info(&model, x);
    let reps = cfg.reps.unwrap_or(600_000);
    let min = cfg.min_survivors.unwrap_or(5000);
    for (i, &ti) in t.iter().enumerate() {
        out.reports.extend(yaglom_report(&model, x, &f, ti, reps, min, derive_seed(cfg.seed()?, &format!("yaglom-{i}")))?);
    }
    Ok(out)
}

fn moments(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let f = test_fn(cfg, &model)?;
    let t = grid(&cfg.t, &[100.0], "t")?;
    let ell = cfg.ell.unwrap_or(2);
    let mut out = Outcome::new("moments");
    out.model_info(&model, x);
    out.info("ell", ell);
    let l = crittree::crt::occupation_constants(ell.max(1) as usize);
    out.info("occupation_constants", l.iter().map(|r| format!("{r}")).collect::<Vec<_>>());
    out.reports = moment_report(&model, x, &f, ell, &t, cfg.reps.unwrap_or(100_000), cfg.tolerance.unwrap_or(0.1), cfg.seed()?)?;
    Ok(out)
}

fn fclt(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let n = grid(&cfg.n, &[50.0], "n")?;
    let mut out = Outcome::new("fclt");
    out.model_info(&model, x);
    out.reports = fclt_report(&model, x, &n, cfg.reps.unwrap_or(10_000), cfg.seed()?)?;
    Ok(out)
}

fn tails(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let t = grid(&cfg.t, &[100.0, 1000.0, 10_000.0], "t")?;
    let mut out = Outcome::new("tails");
    out.model_info(&model, x);
    out.reports.push(tail_report(&model, x, &t, cfg.reps.unwrap_or(100_000), cfg.seed()?)?);
    Ok(out)
}

fn many_to_one(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("two-type")?;
    let x = state(cfg, &model)?;
    let t = grid(&cfg.t, &[5.0], "t")?;
    let last = model.size() - 1;
    let mut fs = vec![
        ("1".to_string(), vec![1.0; model.size()]),
        ("phi".to_string(), model.phi().to_vec()),
        (format!("1_{{{last}}}"), (0..model.size()).map(|y| f64::from(u8::from(y == last))).collect()),
    ];
    if let Some(f) = &cfg.f {
        fs.push(("f".into(), test_fn(cfg, &model).map(|_| f.clone())?));
    }
    let mut out = Outcome::new("many-to-one");
    out.model_info(&model, x);
    for (i, &ti) in t.iter().enumerate() {
        out.reports.extend(many_to_one_report(&model, x, ti, &fs, cfg.reps.unwrap_or(100_000), derive_seed(cfg.seed()?, &format!("mt1-{i}")))?);
    }
    Ok(out)
}

fn qprocess(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let r = cfg.r.as_ref().and_then(|v| v.first().copied()).unwrap_or(10.0);
    let t = grid(&cfg.t, &[20.0, 50.0, 100.0], "t")?;
    let mut out = Outcome::new("qprocess");
    out.model_info(&model, x);
    let horizon = cfg.horizon.unwrap_or(1000.0);
    out.reports = spine_occupation_report(&model, x, horizon, cfg.k.unwrap_or(100), derive_seed(seed, "occupation"))?;
    let (rep, rows) = qprocess_report(&model, x, r, cfg.event_min.unwrap_or(5), &t, cfg.reps.unwrap_or(50_000), derive_seed(seed, "qprocess"))?;
    out.reports.push(rep);
    let mut csv = String::from("t,conditioned,conditioned_stderr,spine,spine_stderr,gap,mean_attempts\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            row.t, row.conditioned.mean, row.conditioned.stderr, row.spine.mean, row.spine.stderr, row.gap(), row.mean_attempts
        );
    }
    out.files.push(("qprocess.csv".into(), csv));
    Ok(out)
}

/// Conditioned tree under `P(· | N_n > 0)` with total length capped at
/// `cap · n²`, passed to `f` together with its replicate index. Trees are
/// processed one at a time inside the worker and dropped afterwards.
fn with_conditioned<T, F>(model: &ModelSpec, x: usize, n: f64, cap: f64, reps: usize, seed: u64, f: F) -> anyhow::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &Conditioned) -> crittree::Result<T> + Sync,
{
    let sim = SimConfig { horizon: None, length_budget: Some(cap * n * n), seed, ..SimConfig::default() };
    let rows = replicates(seed, reps, |i, rng| -> crittree::Result<T> {
        let c = condition_on_survival(model, x, n, &sim, rng)?;
        f(i, &c)
    });
    rows.into_iter().collect::<crittree::Result<Vec<_>>>().map_err(|e| match e {
        crittree::Error::RejectionBudgetExceeded { .. } => anyhow!("{e}; lower n or raise the attempt budget"),
        other => other.into(),
    })
}

fn finite(xs: &[f64]) -> Vec<f64> {
    xs.iter().cloned().filter(|v| v.is_finite()).collect()
}

/// Conditioned trees against conditioned excursions of speed `σ²`: total
/// mass and one pair distance per sample.
fn crt_compare(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let n = grid(&cfg.n, &[30.0], "n")?[0];
    let reps = cfg.reps.unwrap_or(2000);
    let cap = cfg.cap.unwrap_or(25.0);
    let s2 = sigma2(&model);
    let c = coupling_constant(&model, x);
    let mut out = Outcome::new("crt-compare");
    out.model_info(&model, x);
    out.info("n", n);
    out.info("length_cap_over_n2", cap);

    let trees = with_conditioned(&model, x, n, cap, reps, derive_seed(seed, "trees"), |i, cond| {
        let tree = &cond.tree;
        if tree.budget_censored {
            return Ok((f64::INFINITY, None, cond.attempts));
        }
        let path = explore(tree);
        let mp = compute_martingales(&path, &model);
        let m = sample_distance_matrices(&path, &mp, n, 2, 1, derive_seed(seed, &format!("pair-{i}")))?;
        Ok((tree.total_length / (n * n), Some(m[0].0.get(0, 1)), cond.attempts))
    })?;

    // Under the corrected scaling L/n² ≈ c²τ, a cap S on L/n² matches a cap
    // S/c² on τ, so the same samples are censored on both sides.
    let tau_cap = (cap / (c * c)).max(cap);
    let exc_cfg = ExcursionConfig {
        dt: cfg.dt.unwrap_or(1e-4 / s2),
        max_length: Some(tau_cap),
        ..ExcursionConfig::new(s2, 1.0)
    };
    let excs = replicates(derive_seed(seed, "excursions"), reps, |i, rng| -> crittree::Result<(f64, Option<f64>)> {
        let e = sample_conditioned_excursion(&exc_cfg, rng)?;
        if e.censored {
            return Ok((f64::INFINITY, None));
        }
        let m = crt_distance_matrix(&e, 2, &mut stream(derive_seed(seed, "exc-pair"), i as u64));
        Ok((e.length(), Some(m.get(0, 1))))
    });
    let excs = excs.into_iter().collect::<crittree::Result<Vec<_>>>()?;

    let masses: Vec<f64> = trees.iter().map(|t| t.0).collect();
    let taus: Vec<f64> = excs.iter().map(|e| e.0).collect();
    let literal: Vec<f64> = taus.iter().map(|&t| if t > cap { f64::INFINITY } else { t }).collect();
    let scaled: Vec<f64> = taus.iter().map(|&t| c * c * t).collect();
    let d_lit = ks_two_sample(&masses, &literal);
    let d_scaled = ks_two_sample(&masses, &scaled);
    let mut mass = TestReport::new("KS of L/n^2 given survival vs excursion length", d_lit);
    mass.p_value = Some(ks2_p_value(d_lit, masses.len(), taus.len()));
    mass.sample_sizes = vec![masses.len(), taus.len()];
    mass.target = Some(0.0);
    mass.target_source = "excursion of speed σ² conditioned on sup > 1".into();
    mass.threshold = "KS distance < 0.05 (censored values as +inf)".into();
    mass.passed = d_lit < 0.05;
    mass.extra.insert("ks_against_c2_tau".into(), d_scaled);
    mass.extra.insert("ks_against_c2_tau_p".into(), ks2_p_value(d_scaled, masses.len(), taus.len()));
    mass.extra.insert("c".into(), c);
    mass.extra.insert("fitted_mass_scale".into(), fit_scale(&finite(&taus), &finite(&masses), 0.01, 100.0));
    mass.extra.insert("censored_trees".into(), masses.iter().filter(|m| m.is_infinite()).count() as f64);
    mass.extra.insert("censored_excursions".into(), taus.iter().filter(|m| m.is_infinite()).count() as f64);
    out.reports.push(mass);

    let dt: Vec<f64> = trees.iter().filter_map(|t| t.1).collect();
    let de: Vec<f64> = excs.iter().filter_map(|e| e.1).collect();
    let perms = cfg.permutations.unwrap_or(1000);
    let mut pair = two_sample_energy_test(&dt, &de, perms, derive_seed(seed, "energy"))?;
    pair.name = "energy test of pair distances d/n vs excursion tree distances".into();
    pair.target_source = "excursion tree of speed σ², sup > 1".into();
    pair.extra.insert("fitted_distance_scale".into(), fit_scale(&de, &dt, 0.05, 20.0));
    pair.extra.insert("ks_pair_distances".into(), ks_two_sample(&dt, &de));
    let inv_c: Vec<f64> = de.iter().map(|d| d / c).collect();
    pair.extra.insert("ks_pair_distances_over_c".into(), ks_two_sample(&dt, &inv_c));
    pair.extra.insert("mean_tree_distance".into(), dt.iter().sum::<f64>() / dt.len() as f64);
    pair.extra.insert("mean_excursion_distance".into(), de.iter().sum::<f64>() / de.len() as f64);
    out.reports.push(pair);
    out.info("mean_attempts", trees.iter().map(|t| t.2 as f64).sum::<f64>() / trees.len() as f64);

    let mut csv = String::from("source,total_mass,pair_distance\n");
    for (m, d, _) in &trees {
        let _ = writeln!(csv, "tree,{m},{}", d.map(|v| v.to_string()).unwrap_or_default());
    }
    for (m, d) in &excs {
        let _ = writeln!(csv, "excursion,{m},{}", d.map(|v| v.to_string()).unwrap_or_default());
    }
    out.files.push(("samples.csv".into(), csv));
    Ok(out)
}

/// Median of `|c·(Dʰ)₁₂ − (Dᴹ)₁₂|` over conditioned trees for each `n`.
fn distance_matrices(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let ns = grid(&cfg.n, &[10.0, 20.0, 40.0], "n")?;
    let reps = cfg.reps.unwrap_or(500);
    let k = cfg.k.unwrap_or(2).max(2);
    let cap = cfg.cap.unwrap_or(100.0);
    let c = coupling_constant(&model, x);
    let mut out = Outcome::new("distance-matrices");
    out.model_info(&model, x);
    let mut csv = Vec::new();
    DistanceMatrix::write_csv_header(&mut csv)?;
    let mut medians = Vec::new();
    let mut rep = TestReport::new("median |c·Dh_12 − DM_12| along n", f64::NAN);
    for (gi, &n) in ns.iter().enumerate() {
        let s = derive_seed(seed, &format!("matrices-{gi}"));
        let mats = with_conditioned(&model, x, n, cap, reps, s, |i, cond| {
            if cond.tree.budget_censored {
                return Ok(None);
            }
            let path = explore(&cond.tree);
            let mp = compute_martingales(&path, &model);
            let m = sample_distance_matrices(&path, &mp, n, k, 1, derive_seed(s, &format!("pair-{i}")))?;
            Ok(m.into_iter().next())
        })?;
        let mut disc: Vec<f64> = mats.iter().flatten().map(|(h, m)| (c * h.get(0, 1) - m.get(0, 1)).abs()).collect();
        let censored = mats.iter().filter(|m| m.is_none()).count();
        let med = median(&mut disc);
        medians.push(med);
        rep.extra.insert(format!("median_at_n_{n}"), med);
        rep.extra.insert(format!("censored_at_n_{n}"), censored as f64);
        for (tree_id, (h, m)) in mats.iter().enumerate().filter_map(|(i, m)| m.as_ref().map(|m| (i, m))) {
            h.write_csv_rows(&mut csv, gi * reps + tree_id)?;
            m.write_csv_rows(&mut csv, gi * reps + tree_id)?;
        }
    }
    rep.statistic = *medians.last().unwrap();
    rep.sample_sizes = vec![reps; ns.len()];
    rep.target = Some(0.0);
    rep.target_source = "Dᴹ ≈ c·Dʰ".into();
    rep.threshold = "median strictly decreasing in n".into();
    rep.passed = medians.windows(2).all(|w| w[1] < w[0]);
    out.reports.push(rep);
    out.files.push(("matrices.csv".into(), String::from_utf8(csv)?));
    Ok(out)
}

/// `P(m_δ < η′)` over conditioned trees for a decreasing grid of `η′`.
fn lowermass(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let n = grid(&cfg.n, &[30.0], "n")?[0];
    let delta = cfg.delta.unwrap_or(0.1);
    let reps = cfg.reps.unwrap_or(200);
    let probes = cfg.probes.unwrap_or(100);
    let cap = cfg.cap.unwrap_or(25.0);
    let mut levels = grid(&cfg.t, &[0.006, 0.005, 0.0045, 0.004, 0.0035, 0.003], "t")?;
    levels.sort_by(|a, b| b.total_cmp(a));
    let mut out = Outcome::new("lowermass");
    out.model_info(&model, x);
    out.info("n", n);
    out.info("delta", delta);
    let masses = with_conditioned(&model, x, n, cap, reps, derive_seed(seed, "trees"), |i, cond| {
        if cond.tree.budget_censored {
            return Ok(None);
        }
        let path = explore(&cond.tree);
        lower_mass(&path, n, delta, probes, derive_seed(seed, &format!("probes-{i}"))).map(Some)
    })?;
    let m: Vec<f64> = masses.iter().flatten().cloned().collect();
    let mut rep = TestReport::new(format!("P(m_delta < eta') as eta' decreases, delta = {delta}"), f64::NAN);
    let probs: Vec<f64> = levels.iter().map(|&l| m.iter().filter(|&&v| v < l).count() as f64 / m.len() as f64).collect();
    for (l, p) in levels.iter().zip(&probs) {
        rep.extra.insert(format!("p_below_{l}"), *p);
    }
    rep.statistic = *probs.last().unwrap();
    rep.sample_sizes = vec![m.len()];
    rep.target = Some(0.0);
    rep.target_source = "lower mass criterion".into();
    rep.threshold = "non-increasing as eta' decreases, final value ≤ 0.05".into();
    rep.passed = probs.windows(2).all(|w| w[1] <= w[0]) && rep.statistic <= 0.05;
    rep.extra.insert("censored".into(), masses.iter().filter(|v| v.is_none()).count() as f64);
    out.reports.push(rep);
    let mut csv = String::from("tree_id,m_delta\n");
    for (i, v) in masses.iter().enumerate() {
        if let Some(v) = v {
            let _ = writeln!(csv, "{i},{v}");
        }
    }
    out.files.push(("lower_mass.csv".into(), csv));
    Ok(out)
}

/// Mean `η_R`-bad fraction over trees conditioned to survive to `n`, along
/// a grid of `R`.
fn etabad(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let model = cfg.load_model("binary")?;
    let x = state(cfg, &model)?;
    let seed = cfg.seed()?;
    let n = grid(&cfg.n, &[50.0], "n")?[0];
    let eta = cfg.eta.unwrap_or(0.3);
    let mut rs = grid(&cfg.r, &[5.0, 10.0, 20.0, 40.0], "r")?;
    rs.sort_by(f64::total_cmp);
    if rs.iter().any(|&r| r > n) {
        bail!("key `r`: every R must be at most n = {n}");
    }
    let reps = cfg.reps.unwrap_or(300);
    let sim = SimConfig::with_horizon(n, seed);
    let rows = replicates(derive_seed(seed, "trees"), reps, |_, rng| -> crittree::Result<Vec<f64>> {
        let c = condition_on_survival(&model, x, n, &sim, rng)?;
        rs.iter().map(|&r| eta_bad_fraction(&c.tree, &model, eta, r, n).map(|f| f.0)).collect()
    });
    let rows = rows.into_iter().collect::<crittree::Result<Vec<_>>>()?;
    let means: Vec<f64> = (0..rs.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / reps as f64).collect();
    let mut out = Outcome::new("etabad");
    out.model_info(&model, x);
    out.info("n", n);
    out.info("eta", eta);
    let mut rep = TestReport::new(format!("mean eta_R-bad fraction along R, eta = {eta}, n = {n}"), *means.last().unwrap());
    for (r, m) in rs.iter().zip(&means) {
        rep.extra.insert(format!("mean_fraction_R_{r}"), *m);
    }
    rep.sample_sizes = vec![reps];
    rep.threshold = "non-increasing in R and smaller at the largest R than at the smallest".into();
    rep.passed = means.windows(2).all(|w| w[1] <= w[0]) && means.last() < means.first();
    out.reports.push(rep);
    let mut csv = String::from("tree_id,R,fraction\n");
    for (i, row) in rows.iter().enumerate() {
        for (r, f) in rs.iter().zip(row) {
            let _ = writeln!(csv, "{i},{r},{f}");
        }
    }
    out.files.push(("etabad.csv".into(), csv));
    Ok(out)
}
