//! The acceptance suite: twelve criteria, each a fixed configuration with a
//! pinned threshold. Slow criteria only run when asked for.

use std::fmt::Write as _;

use anyhow::anyhow;
use crittree::crt::occupation_constants;
use crittree::exploration::explore;
use crittree::genealogy::{simulate_tree, SimConfig};
use crittree::model::{binary, torus, two_type};
use crittree::rng::{derive_seed, stream};
use crittree::stats::{qprocess_report, spine_occupation_report, TestReport};
use rand::Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{run, Outcome};
use crate::output::report_json;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    /// Has an extra, larger run under `--slow` (`CRITTREE_SLOW=1` in the
    /// test harness).
    pub slow: bool,
}

pub const CRITERIA: &[Criterion] = &[
    Criterion { id: "A1", title: "survival probability against the exact binary oracle", slow: false },
    Criterion { id: "A2", title: "Kolmogorov constant with gamma = 2", slow: false },
    Criterion { id: "A3", title: "Yaglom exponential limit", slow: false },
    Criterion { id: "A4", title: "second moment constant and occupation constants", slow: false },
    Criterion { id: "A5", title: "martingale mean and quadratic variation", slow: false },
    Criterion { id: "A6", title: "martingale functional CLT", slow: false },
    Criterion { id: "A7", title: "conditioned trees against the Brownian CRT", slow: true },
    Criterion { id: "A8", title: "height and martingale distance matrices", slow: false },
    Criterion { id: "A9", title: "many-to-one formula", slow: false },
    Criterion { id: "A10", title: "spine stationarity and Q-process trend", slow: false },
    Criterion { id: "A11", title: "heavy tail of the total length", slow: false },
    Criterion { id: "A12", title: "property suites", slow: false },
];

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: String,
    pub title: String,
    pub passed: bool,
    /// One-line digest of the deciding numbers.
    pub summary: String,
    pub reports: Vec<TestReport>,
    #[serde(skip)]
    pub outcomes: Vec<(ExperimentConfig, Outcome)>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("{:<4} {verdict}  {}: {}", self.id, self.title, self.summary)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "title": self.title,
            "passed": self.passed,
            "summary": self.summary,
            "reports": self.reports,
            "experiments": self.outcomes.iter().map(|(c, o)| report_json(c, o)).collect::<Vec<_>>(),
        })
    }
}

pub fn criterion(id: &str) -> anyhow::Result<&'static Criterion> {
    CRITERIA
        .iter()
        .find(|c| c.id.eq_ignore_ascii_case(id))
        .ok_or_else(|| anyhow!("unknown criterion `{id}` (expected A1 to A12)"))
}

fn cfg(model: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig { model: Some(model.into()), seed: Some(seed), ..Default::default() }
}

struct Run {
    reports: Vec<TestReport>,
    outcomes: Vec<(ExperimentConfig, Outcome)>,
}

impl Run {
    fn new() -> Self {
        Self { reports: Vec::new(), outcomes: Vec::new() }
    }

    fn experiment(&mut self, name: &str, c: ExperimentConfig) -> anyhow::Result<Outcome> {
        let o = run(name, &c)?;
        self.outcomes.push((c, o.clone()));
        Ok(o)
    }
}

fn fmt_report(r: &TestReport) -> String {
    match (r.target, r.stderr) {
        (Some(t), Some(se)) => format!("{:.4} ± {:.4} vs {:.4}", r.statistic, se, t),
        (Some(t), None) => format!("{:.4} vs {:.4}", r.statistic, t),
        _ => format!("{:.4}", r.statistic),
    }
}

/// Runs one criterion with a seed derived from `seed`. With `slow`, the
/// criteria that have a larger configuration run it as well.
pub fn run_criterion(id: &str, seed: u64, slow: bool) -> anyhow::Result<CriterionResult> {
    let c = criterion(id)?;
    let s = derive_seed(seed, c.id);
    let mut run = Run::new();
    let mut summary = String::new();
    let passed = match c.id {
        "A1" => {
            let o = run.experiment("kolmogorov", ExperimentConfig {
                gamma: Some(1.0),
                t: Some(vec![2.0, 200.0]),
                reps: Some(200_000),
                ..cfg("binary", s)
            })?;
            let p2 = o.reports[0].extra["survival_probability"];
            let se2 = o.reports[0].stderr.unwrap() / 2.0;
            let mut a = TestReport::new("P(N_2 > 0)", p2);
            a.stderr = Some(se2);
            a.target = Some(0.5);
            a.target_source = "2/(2+γt)".into();
            a.threshold = "within 3 SE".into();
            a.passed = (p2 - 0.5).abs() <= 3.0 * se2;
            let b = o.reports[1].clone();
            let _ = write!(summary, "P(N_2>0) = {}; t·P(N_t>0) at 200 = {}", fmt_report(&a), fmt_report(&b));
            run.reports = vec![a, b];
            run.reports.iter().all(|r| r.passed)
        }
        "A2" => {
            let o = run.experiment("kolmogorov", ExperimentConfig {
                gamma: Some(2.0),
                t: Some(vec![200.0]),
                reps: Some(200_000),
                ..cfg("binary", s)
            })?;
            let r = &o.reports[0];
            let se = r.stderr.unwrap();
            let target = r.extra["limit_2phi_over_Sigma"];
            let other = r.extra["limit_without_gamma"];
            let mut a = TestReport::new("t·P(N_t > 0) at t = 200, gamma = 2", r.statistic);
            a.stderr = Some(se);
            a.target = Some(target);
            a.target_source = "2φ(x)/Σ with Σ = ⟨γ𝒱[φ],φ̃⟩".into();
            a.threshold = "within 3 SE".into();
            a.passed = (r.statistic - target).abs() <= 3.0 * se;
            a.extra.insert("alternative_target".into(), other);
            a.extra.insert("alternative_z".into(), (r.statistic - other) / se);
            let _ = write!(summary, "{} (the γ-free reading gives {other:.1}, z = {:.0})", fmt_report(&a), (r.statistic - other) / se);
            let ok = a.passed;
            run.reports = vec![a];
            ok
        }
        "A3" => {
            let o = run.experiment("yaglom", ExperimentConfig {
                gamma: Some(1.0),
                t: Some(vec![200.0]),
                reps: Some(600_000),
                min_survivors: Some(5000),
                ..cfg("binary", s)
            })?;
            let r = o.reports[0].clone();
            let _ = write!(summary, "KS = {:.4} (< 0.03) on {} survivors", r.statistic, r.sample_sizes[1]);
            let ok = r.passed && r.sample_sizes[1] >= 5000;
            run.reports = vec![r];
            ok
        }
        "A4" => {
            let o = run.experiment("moments", ExperimentConfig {
                gamma: Some(1.0),
                ell: Some(2),
                t: Some(vec![100.0]),
                reps: Some(100_000),
                tolerance: Some(0.1),
                ..cfg("binary", s)
            })?;
            let r = o.reports[0].clone();
            let l = occupation_constants(3);
            let exact = l[0].to_string() == "1" && l[1].to_string() == "1/3" && l[2].to_string() == "2/15";
            let mut lr = TestReport::new("occupation constants L_2 = 1/3, L_3 = 2/15", f64::from(u8::from(exact)));
            lr.threshold = "exact rational equality".into();
            lr.passed = exact;
            let _ = write!(
                summary,
                "E[N_t^2]/t = {} (within 10% required; second-moment oracle {:.4}, Yaglom-implied {:.4}); L_2 = {}, L_3 = {}",
                fmt_report(&r),
                r.extra.get("second_moment_oracle").copied().unwrap_or(f64::NAN),
                r.extra["yaglom_implied_constant"],
                l[1],
                l[2]
            );
            run.reports = vec![r, lr];
            run.reports.iter().all(|r| r.passed)
        }
        "A5" => {
            let o = run.experiment("martingale", ExperimentConfig {
                t: Some(vec![5.0, 20.0]),
                reps: Some(100_000),
                ..cfg("two-type", s)
            })?;
            let zs: Vec<String> = o
                .reports
                .iter()
                .map(|r| format!("{:.2}", (r.statistic - r.target.unwrap()).abs() / r.stderr.unwrap()))
                .collect();
            let _ = write!(summary, "|Δ|/SE for mean and QV at t = 5, 20: {}", zs.join(", "));
            run.reports = o.reports;
            run.reports.iter().all(|r| r.passed)
        }
        "A6" => {
            let o = run.experiment("fclt", ExperimentConfig {
                gamma: Some(1.0),
                n: Some(vec![50.0]),
                reps: Some(10_000),
                ..cfg("binary", s)
            })?;
            let r = &o.reports[0];
            let _ = write!(summary, "KS = {:.4} (< 0.03), variance ratio {:.3}", r.statistic, r.extra["variance_ratio"]);
            run.reports = o.reports;
            run.reports.iter().all(|r| r.passed)
        }
        "A7" => {
            let base = ExperimentConfig {
                gamma: Some(1.0),
                n: Some(vec![30.0]),
                reps: Some(2000),
                cap: Some(25.0),
                permutations: Some(1000),
                ..cfg("binary", s)
            };
            let o = run.experiment("crt-compare", base.clone())?;
            let (m, p) = (&o.reports[0], &o.reports[1]);
            let _ = write!(
                summary,
                "(i) KS(L/n^2, tau) = {:.4} (< 0.05), against c^2 tau {:.4}; (ii) energy p = {:.3} (> 0.01), fitted distance scale {:.3}",
                m.statistic,
                m.extra["ks_against_c2_tau"],
                p.p_value.unwrap_or(f64::NAN),
                p.extra["fitted_distance_scale"]
            );
            run.reports = o.reports;
            if slow {
                let big = run.experiment("crt-compare", ExperimentConfig {
                    n: Some(vec![60.0]),
                    reps: Some(4000),
                    seed: Some(derive_seed(s, "slow")),
                    ..base
                })?;
                let _ = write!(
                    summary,
                    "; n = 60: KS {:.4}, against c^2 tau {:.4}, energy p {:.3}",
                    big.reports[0].statistic,
                    big.reports[0].extra["ks_against_c2_tau"],
                    big.reports[1].p_value.unwrap_or(f64::NAN)
                );
                run.reports.extend(big.reports);
            }
            run.reports.iter().all(|r| r.passed)
        }
        "A8" => {
            let o = run.experiment("distance-matrices", ExperimentConfig {
                gamma: Some(1.0),
                n: Some(vec![10.0, 20.0, 40.0]),
                reps: Some(500),
                k: Some(2),
                ..cfg("binary", s)
            })?;
            let r = &o.reports[0];
            let _ = write!(
                summary,
                "medians {:.4}, {:.4}, {:.4} at n = 10, 20, 40 (strictly decreasing)",
                r.extra["median_at_n_10"], r.extra["median_at_n_20"], r.extra["median_at_n_40"]
            );
            run.reports = o.reports;
            run.reports.iter().all(|r| r.passed)
        }
        "A9" => {
            let o = run.experiment("many-to-one", ExperimentConfig {
                t: Some(vec![5.0]),
                reps: Some(100_000),
                ..cfg("two-type", s)
            })?;
            let parts: Vec<String> = o
                .reports
                .iter()
                .map(|r| format!("{:.4}/{:.4}", r.extra["branching"], r.extra["many_to_one"]))
                .collect();
            let _ = write!(summary, "branching/many-to-one for f = 1, phi, 1_{{1}}: {} (95% CIs overlap)", parts.join(", "));
            run.reports = o.reports;
            run.reports.iter().all(|r| r.passed)
        }
        "A10" => {
            let two = two_type()?;
            let mut occ = spine_occupation_report(&two, 0, 1000.0, 100, derive_seed(s, "occupation"))?;
            let bin = binary(1.0)?;
            let (q, _) = qprocess_report(&bin, 0, 10.0, 5, &[20.0, 50.0, 100.0], 50_000, derive_seed(s, "qprocess"))?;
            let _ = write!(
                summary,
                "occupation {:.4}/{:.4} vs 1/3, 2/3; gaps {:.4}, {:.4}, {:.4} at t = 20, 50, 100 for N_10 >= 5",
                occ[0].statistic,
                occ[1].statistic,
                q.extra["gap_at_20"],
                q.extra["gap_at_50"],
                q.extra["gap_at_100"]
            );
            occ.push(q);
            run.reports = occ;
            run.reports.iter().all(|r| r.passed)
        }
        "A11" => {
            let o = run.experiment("tails", ExperimentConfig {
                gamma: Some(1.0),
                t: Some(vec![100.0, 1000.0, 10_000.0]),
                reps: Some(100_000),
                ..cfg("binary", s)
            })?;
            let r = &o.reports[0];
            let _ = write!(
                summary,
                "sqrt(t)P(L>=t) = {:.3}, {:.3}, {:.3}; max/min - 1 = {:.3} (< 0.2)",
                r.extra["sqrt_t_tail_at_100"], r.extra["sqrt_t_tail_at_1000"], r.extra["sqrt_t_tail_at_10000"], r.statistic
            );
            run.reports = o.reports;
            run.reports.iter().all(|r| r.passed)
        }
        "A12" => {
            let mut reports = vec![metric_axioms(s)?, rmq_agreement(s)?];
            let eta = run.experiment("etabad", ExperimentConfig {
                gamma: Some(1.0),
                n: Some(vec![50.0]),
                eta: Some(0.3),
                r: Some(vec![5.0, 10.0, 20.0, 40.0]),
                reps: Some(300),
                ..cfg("binary", s)
            })?;
            let lm = run.experiment("lowermass", ExperimentConfig {
                gamma: Some(1.0),
                n: Some(vec![30.0]),
                delta: Some(0.1),
                reps: Some(200),
                ..cfg("binary", s)
            })?;
            reports.extend(eta.reports.iter().cloned());
            reports.extend(lm.reports.iter().cloned());
            reports.push(determinism(s)?);
            let _ = write!(
                summary,
                "{}",
                reports.iter().map(|r| format!("{} {}", if r.passed { "ok" } else { "FAILED" }, short(&r.name))).collect::<Vec<_>>().join("; ")
            );
            run.reports = reports;
            run.reports.iter().all(|r| r.passed)
        }
        _ => unreachable!(),
    };
    Ok(CriterionResult {
        id: c.id.into(),
        title: c.title.into(),
        passed,
        summary,
        reports: run.reports,
        outcomes: run.outcomes,
    })
}

fn short(name: &str) -> &str {
    name.split(',').next().unwrap_or(name)
}

fn property_trees(seed: u64) -> anyhow::Result<Vec<crittree::Tree>> {
    let cfg = |h: f64, i: u64| SimConfig { length_budget: Some(3000.0), ..SimConfig::with_horizon(h, derive_seed(seed, &format!("tree-{i}"))) };
    let mut trees = Vec::new();
    for (i, (model, h)) in [(binary(1.0)?, 40.0), (two_type()?, 40.0), (torus(16, 1.0)?, 40.0)].iter().enumerate() {
        // Keep drawing until the tree is big enough to be interesting.
        for attempt in 0..1000u64 {
            let t = simulate_tree(model, 0, &cfg(*h, 1000 * i as u64 + attempt))?;
            if t.len() >= 50 {
                trees.push(t);
                break;
            }
        }
    }
    Ok(trees)
}

/// `d(a,a) = 0`, symmetry and the triangle inequality on 10⁴ random triples
/// per tree.
pub fn metric_axioms(seed: u64) -> anyhow::Result<TestReport> {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for (i, tree) in property_trees(seed)?.iter().enumerate() {
        let path = explore(tree);
        let mut rng = stream(derive_seed(seed, "triples"), i as u64);
        let l = path.length();
        for _ in 0..10_000 {
            let (a, b, c) = (rng.random::<f64>() * l, rng.random::<f64>() * l, rng.random::<f64>() * l);
            let d = |s: f64, t: f64| path.tree_distance(s, t).map(|r| r.distance);
            let (ab, ba, bc, ac, aa) = (d(a, b)?, d(b, a)?, d(b, c)?, d(a, c)?, d(a, a)?);
            worst = worst.max(aa.abs()).max((ab - ba).abs()).max(ac - ab - bc).max(-ab);
            checked += 1;
        }
    }
    let mut r = TestReport::new("pseudometric axioms on sampled triples", worst);
    r.sample_sizes = vec![checked];
    r.threshold = "largest violation ≤ 1e-9".into();
    r.passed = worst <= 1e-9;
    Ok(r)
}

/// Sparse-table infimum against a linear scan on random pairs.
pub fn rmq_agreement(seed: u64) -> anyhow::Result<TestReport> {
    let mut mismatches = 0usize;
    let mut checked = 0usize;
    for (i, tree) in property_trees(seed)?.iter().enumerate() {
        let path = explore(tree);
        let mut rng = stream(derive_seed(seed, "pairs"), i as u64);
        for _ in 0..10_000 {
            let (s, t) = (rng.random::<f64>() * path.length(), rng.random::<f64>() * path.length());
            let fast = path.tree_distance(s, t)?.inf_height;
            let slow = path.inf_height_scan(s, t)?;
            mismatches += usize::from(fast != slow);
            checked += 1;
        }
    }
    let mut r = TestReport::new("range-minimum query against linear scan", mismatches as f64);
    r.sample_sizes = vec![checked];
    r.threshold = "no mismatches".into();
    r.passed = mismatches == 0;
    Ok(r)
}

/// Two small experiments, each run on one worker and on four; the reports
/// must serialise identically.
pub fn determinism(seed: u64) -> anyhow::Result<TestReport> {
    let configs = [
        ("kolmogorov", ExperimentConfig { t: Some(vec![5.0]), reps: Some(4000), ..cfg("two-type", seed) }),
        ("etabad", ExperimentConfig { n: Some(vec![20.0]), r: Some(vec![5.0, 15.0]), reps: Some(40), ..cfg("binary", seed) }),
        ("distance-matrices", ExperimentConfig { n: Some(vec![8.0]), reps: Some(30), ..cfg("binary", seed) }),
    ];
    let mut identical = true;
    for (name, c) in &configs {
        let render = |threads: usize| -> anyhow::Result<String> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
            let o = pool.install(|| run(name, c))?;
            Ok(serde_json::to_string(&report_json(c, &o))? + &o.files.iter().map(|f| f.1.clone()).collect::<String>())
        };
        identical &= render(1)? == render(4)?;
    }
    let mut r = TestReport::new("byte-identical reports across worker counts", f64::from(u8::from(identical)));
    r.sample_sizes = vec![configs.len()];
    r.threshold = "identical".into();
    r.passed = identical;
    Ok(r)
}

/// Text block with one line per criterion and a closing tally.
pub fn render(results: &[CriterionResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "{}", r.line());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    let _ = writeln!(s, "{passed}/{} criteria passed", results.len());
    s
}
