//! Many-to-one estimation and the size-biased spine.
//!
//! Under the change of measure by `W_t = ⟨φ, X_t⟩ / φ(x)` one particle line,
//! the spine, is immortal. For a finite state space its dynamics are the
//! Doob transform of the first-moment generator by φ:
//!
//! * motion jumps `x → y` at rate `q(x,y) φ(y) / φ(x)`, no killing;
//! * branching at rate `ρ(x) = γ(x) m[φ](x) / φ(x)`;
//! * the litter is drawn with weight `p · ⟨φ, 𝒵⟩` and the spine continues
//!   in child `j` with probability `φ(x_j) / ⟨φ, 𝒵⟩`.
//!
//! Expanding `φ⁻¹ A(φ g)` shows the zeroth-order terms cancel exactly
//! because `Aφ = 0`, so these rates define a conservative chain whose
//! stationary law is `φ φ̃`. Off-spine children grow plain subtrees.

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::genealogy::{Builder, Conditioned, Fate, Pending, SimConfig, Tree, NO_PARENT};
use crate::genealogy::{condition_on_survival, simulate_tree_with};
use crate::model::ModelSpec;
use crate::rng::{replicates, SimRng};
use crate::stats::Estimate;

#[derive(Clone, Debug)]
pub struct SpineTree {
    pub tree: Tree,
    /// Record indices of the spine particles, root first.
    pub spine: Vec<usize>,
    /// Times at which the spine branched.
    pub branch_times: Vec<f64>,
}

/// Trajectory of the spine alone: `(time, state)` at every change, plus the
/// branch times.
#[derive(Clone, Debug)]
pub struct SpinePath {
    pub horizon: f64,
    pub changes: Vec<(f64, usize)>,
    pub branch_times: Vec<f64>,
}

impl SpinePath {
    /// Fraction of `[0, horizon]` spent in each state.
    pub fn occupation(&self, size: usize) -> Vec<f64> {
        let mut occ = vec![0.0; size];
        for (k, &(t, x)) in self.changes.iter().enumerate() {
            let end = self.changes.get(k + 1).map_or(self.horizon, |c| c.0);
            occ[x] += end - t;
        }
        occ.iter_mut().for_each(|o| *o /= self.horizon);
        occ
    }
}

/// Rates of the tilted spine chain at one state.
struct SpineRates {
    jumps: Vec<(usize, f64)>,
    jump_total: f64,
    branch: f64,
    /// Cumulative litter weights `p · ⟨φ, 𝒵⟩`.
    litter_cdf: Vec<f64>,
}

fn spine_rates(model: &ModelSpec) -> Vec<SpineRates> {
    let phi = model.phi();
    (0..model.size())
        .map(|x| {
            let jumps: Vec<(usize, f64)> =
                model.motion().jumps(x).iter().map(|&(y, r)| (y, r * phi[y] / phi[x])).collect();
            let jump_total = jumps.iter().map(|j| j.1).sum();
            let mut acc = 0.0;
            let litter_cdf = model
                .table(x)
                .iter()
                .map(|e| {
                    acc += e.p * e.sum(phi);
                    acc
                })
                .collect();
            SpineRates { jumps, jump_total, branch: model.gamma(x) * model.mean_phi(x) / phi[x], litter_cdf }
        })
        .collect()
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty");
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}

/// One spine event from state `x` at time `t`: returns the new time and
/// either a motion jump target or a branching `(litter, spine child)`.
enum SpineEvent {
    Horizon,
    Move(usize),
    Branch(usize, usize),
}

fn spine_step(model: &ModelSpec, rates: &SpineRates, x: usize, t: &mut f64, horizon: f64, rng: &mut SimRng) -> SpineEvent {
    let total = rates.jump_total + rates.branch;
    let dt = if total > 0.0 { rng.sample::<f64, _>(Exp1) / total } else { f64::INFINITY };
    if *t + dt >= horizon {
        *t = horizon;
        return SpineEvent::Horizon;
    }
    *t += dt;
    let mut u = rng.random::<f64>() * total;
    if u < rates.jump_total {
        for &(y, r) in &rates.jumps {
            if u < r {
                return SpineEvent::Move(y);
            }
            u -= r;
        }
        return SpineEvent::Move(rates.jumps[rates.jumps.len() - 1].0);
    }
    let k = pick(&rates.litter_cdf, rng.random());
    let phi = model.phi();
    let children = &model.table(x)[k].children;
    let mut acc = 0.0;
    let weights: Vec<f64> = children
        .iter()
        .map(|&c| {
            acc += phi[c];
            acc
        })
        .collect();
    SpineEvent::Branch(k, pick(&weights, rng.random()))
}

/// Spine state process on `[0, horizon]` without the off-spine subtrees.
pub fn simulate_spine_path(model: &ModelSpec, x: usize, horizon: f64, rng: &mut SimRng) -> Result<SpinePath> {
    model.check_state(x)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
    }
    let rates = spine_rates(model);
    let mut path = SpinePath { horizon, changes: vec![(0.0, x)], branch_times: Vec::new() };
    let (mut t, mut x) = (0.0, x);
    loop {
        match spine_step(model, &rates[x], x, &mut t, horizon, rng) {
            SpineEvent::Horizon => return Ok(path),
            SpineEvent::Move(y) => x = y,
            SpineEvent::Branch(k, j) => {
                path.branch_times.push(t);
                x = model.table(x)[k].children[j];
            }
        }
        path.changes.push((t, x));
    }
}

/// Full tree under the size-biased law, censored at `horizon`.
pub fn simulate_spine_tree(model: &ModelSpec, x: usize, horizon: f64, rng: &mut SimRng) -> Result<SpineTree> {
    model.check_state(x)?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
    }
    let rates = spine_rates(model);
    let mut b = Builder::new(model, x, Some(horizon), None);
    let mut spine = Vec::new();
    let mut branch_times = Vec::new();
    // Younger siblings of spine particles, explored after the spine's subtree.
    let mut deferred: Vec<Vec<Pending>> = Vec::new();
    let mut next = Some(Pending { parent: NO_PARENT, sibling: 0, depth: 0, time: 0.0, state: x as u32 });
    let mut stack = Vec::new();
    while let Some(p) = next.take() {
        let v = b.open(p);
        spine.push(v);
        let (mut t, mut y) = (p.time, p.state as usize);
        loop {
            match spine_step(model, &rates[y], y, &mut t, horizon, rng) {
                SpineEvent::Horizon => {
                    b.close(v, t, y, &Fate::Censored);
                    break;
                }
                SpineEvent::Move(z) => {
                    y = z;
                    b.push_jump(v, t, z);
                }
                SpineEvent::Branch(k, j) => {
                    b.close(v, t, y, &Fate::Branched(k));
                    branch_times.push(t);
                    let children = &model.table(y)[k].children;
                    let child = |i: usize| Pending {
                        parent: v as u32,
                        sibling: i as u32,
                        depth: p.depth + 1,
                        time: t,
                        state: children[i] as u32,
                    };
                    for i in 0..j {
                        stack.push(child(i));
                        b.drain(&mut stack, rng)?;
                    }
                    deferred.push((j + 1..children.len()).map(child).collect());
                    next = Some(child(j));
                    break;
                }
            }
        }
    }
    while let Some(level) = deferred.pop() {
        for p in level {
            stack.push(p);
            b.drain(&mut stack, rng)?;
        }
    }
    Ok(SpineTree { tree: b.finish(&stack), spine, branch_times })
}

/// `ψ_t[f](x)` by averaging `⟨f, X_t⟩` over independent trees.
pub fn estimate_semigroup_branching(model: &ModelSpec, x: usize, t: f64, f: &[f64], reps: usize, seed: u64) -> Result<Estimate> {
    model.check_state(x)?;
    if t == 0.0 {
        return Ok(Estimate::exact(f[x]));
    }
    let cfg = SimConfig::with_horizon(t, seed);
    let values = replicates(seed, reps, |_, rng| -> Result<f64> {
        simulate_tree_with(model, x, &cfg, rng)?.functional_at(f, t)
    });
    Ok(Estimate::from_samples(&values.into_iter().collect::<Result<Vec<_>>>()?))
}

/// `ψ_t[f](x) = Ẽ_x[exp(∫₀^t γ(m − 1)(Y_s) ds) f(Y_t) 1_{t < k}]`, where `Y`
/// follows the motion plus extra jumps at rate `γ m` to a child position
/// drawn from `m[1_y] / m`.
pub fn estimate_semigroup_mt1(model: &ModelSpec, x: usize, t: f64, f: &[f64], reps: usize, seed: u64) -> Result<Estimate> {
    model.check_state(x)?;
    if t == 0.0 {
        return Ok(Estimate::exact(f[x]));
    }
    let n = model.size();
    // Extra-jump kernel: expected number of children at y per branching.
    let kernel: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut k = vec![0.0; n];
            for e in model.table(x) {
                for &c in &e.children {
                    k[c] += e.p;
                }
            }
            k
        })
        .collect();
    let values = replicates(seed, reps, |_, rng| {
        let (mut s, mut y) = (0.0, x);
        let mut log_weight = 0.0;
        loop {
            let motion = model.motion().jump_rate(y);
            let kill = model.motion().killing(y);
            let extra = model.gamma(y) * model.mean_offspring(y);
            let total = motion + kill + extra;
            let dt = if total > 0.0 { rng.sample::<f64, _>(Exp1) / total } else { f64::INFINITY };
            let stay = dt.min(t - s);
            log_weight += model.gamma(y) * (model.mean_offspring(y) - 1.0) * stay;
            if s + dt >= t {
                return log_weight.exp() * f[y];
            }
            s += dt;
            let mut u = rng.random::<f64>() * total;
            if u < motion {
                for &(z, r) in model.motion().jumps(y) {
                    if u < r {
                        y = z;
                        break;
                    }
                    u -= r;
                }
                continue;
            }
            u -= motion;
            if u < kill {
                return 0.0;
            }
            let mut u = rng.random::<f64>() * model.mean_offspring(y);
            let row = &kernel[y];
            let mut target = n - 1;
            for (z, &w) in row.iter().enumerate() {
                if u < w {
                    target = z;
                    break;
                }
                u -= w;
            }
            y = target;
        }
    });
    Ok(Estimate::from_samples(&values))
}

/// One row of the Q-process comparison.
#[derive(Clone, Debug, serde::Serialize)]
pub struct QRow {
    pub t: f64,
    pub conditioned: Estimate,
    pub spine: Estimate,
    pub mean_attempts: f64,
}

impl QRow {
    pub fn gap(&self) -> f64 {
        (self.conditioned.mean - self.spine.mean).abs()
    }
}

/// Compares `P(A | N_t > 0)` along `t_grid` with `P^φ(A)` for an event `A`
/// determined by the tree on `[0, r]`. The event receives the tree and `r`
/// and must only inspect that window.
pub fn qprocess_compare<E>(model: &ModelSpec, x: usize, r: f64, event: E, t_grid: &[f64], reps: usize, seed: u64) -> Result<Vec<QRow>>
where
    E: Fn(&Tree, f64) -> Result<bool> + Sync,
{
    if t_grid.iter().any(|&t| t < r) {
        return Err(Error::InvalidConfig("every t must be at least R".into()));
    }
    let spine_seed = crate::rng::derive_seed(seed, "spine");
    let spine_hits = replicates(spine_seed, reps, |_, rng| -> Result<f64> {
        let st = simulate_spine_tree(model, x, r.max(f64::MIN_POSITIVE), rng)?;
        Ok(f64::from(u8::from(event(&st.tree, r)?)))
    });
    let spine = Estimate::from_samples(&spine_hits.into_iter().collect::<Result<Vec<_>>>()?);
    let mut rows = Vec::new();
    for (gi, &t) in t_grid.iter().enumerate() {
        let cfg = SimConfig { horizon: Some(t), ..SimConfig::default() };
        let s = crate::rng::derive_seed(seed, &format!("conditioned-{gi}"));
        let draws = replicates(s, reps, |_, rng| -> Result<(f64, u64)> {
            let Conditioned { tree, attempts, .. } = condition_on_survival(model, x, t, &cfg, rng)?;
            Ok((f64::from(u8::from(event(&tree, r)?)), attempts))
        });
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let hits: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let mean_attempts = draws.iter().map(|d| d.1 as f64).sum::<f64>() / draws.len().max(1) as f64;
        rows.push(QRow { t, conditioned: Estimate::from_samples(&hits), spine: spine.clone(), mean_attempts });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::first_moment_semigroup;
    use crate::model::{binary, torus, two_type};
    use crate::rng::stream;

    #[test]
    fn binary_spine_always_has_two_children() {
        let m = binary(1.0).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..20 {
            let st = simulate_spine_tree(&m, 0, 5.0, &mut rng).unwrap();
            for w in st.spine.windows(2) {
                assert_eq!(st.tree.records[w[0]].n_children, 2);
                assert_eq!(st.tree.records[w[1]].parent(), Some(w[0]));
            }
            let last = *st.spine.last().unwrap();
            assert!(st.tree.records[last].horizon_censored);
            let labels: Vec<_> = (0..st.tree.len()).map(|v| st.tree.label(v)).collect();
            assert!(labels.windows(2).all(|w| w[0] < w[1]));
            for v in 0..st.tree.len() {
                assert_eq!(st.tree.children(v).len(), st.tree.records[v].n_children as usize);
            }
        }
    }

    #[test]
    fn tiny_horizon_gives_lone_spine() {
        let m = two_type().unwrap();
        let mut rng = stream(2, 0);
        let st = simulate_spine_tree(&m, 0, 1e-12, &mut rng).unwrap();
        assert_eq!(st.tree.len(), 1);
        assert!(st.branch_times.is_empty());
    }

    #[test]
    fn zero_time_estimators_are_exact() {
        let m = two_type().unwrap();
        let f = [2.0, 5.0];
        assert_eq!(estimate_semigroup_mt1(&m, 1, 0.0, &f, 10, 1).unwrap().mean, 5.0);
        assert_eq!(estimate_semigroup_branching(&m, 1, 0.0, &f, 10, 1).unwrap().mean, 5.0);
    }

    #[test]
    fn binary_many_to_one_weight_is_one() {
        let m = binary(1.0).unwrap();
        let e = estimate_semigroup_mt1(&m, 0, 3.0, &[1.0], 100, 1).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn estimators_match_semigroup_oracle() {
        let m = two_type().unwrap();
        for f in [vec![1.0, 1.0], m.phi().to_vec(), vec![0.0, 1.0]] {
            let exact = first_moment_semigroup(&m, &f, 2.0)[0];
            let a = estimate_semigroup_branching(&m, 0, 2.0, &f, 40_000, 3).unwrap();
            let b = estimate_semigroup_mt1(&m, 0, 2.0, &f, 40_000, 4).unwrap();
            assert!(a.within(exact, 4.0), "{a:?} vs {exact}");
            assert!(b.within(exact, 4.0), "{b:?} vs {exact}");
        }
        assert!((first_moment_semigroup(&m, m.phi(), 2.0)[0] - m.phi()[0]).abs() < 1e-9);
    }

    #[test]
    fn spine_size_matches_change_of_measure() {
        // E^φ[N_t] = E[N_t ⟨φ,X_t⟩] / φ(x).
        let m = two_type().unwrap();
        let t = 2.0;
        let reps = 40_000;
        let spine: Vec<f64> = replicates(8, reps, |_, rng| {
            let st = simulate_spine_tree(&m, 0, t, rng).unwrap();
            st.tree.alive_at(t).unwrap().len() as f64
        });
        let cfg = SimConfig::with_horizon(t, 0);
        let plain: Vec<f64> = replicates(9, reps, |_, rng| {
            let tree = simulate_tree_with(&m, 0, &cfg, rng).unwrap();
            let n = tree.alive_at(t).unwrap().len() as f64;
            n * tree.functional_at(m.phi(), t).unwrap() / m.phi()[0]
        });
        let a = Estimate::from_samples(&spine);
        let b = Estimate::from_samples(&plain);
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 3.5 * se, "{a:?} vs {b:?}");
    }

    #[test]
    fn spine_occupation_on_torus_is_uniform() {
        let m = torus(4, 1.0).unwrap();
        let mut rng = stream(4, 0);
        let p = simulate_spine_path(&m, 0, 2000.0, &mut rng).unwrap();
        let occ = p.occupation(4);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for o in occ {
            assert!((o - 0.25).abs() < 0.05);
        }
    }

    #[test]
    fn trivial_events_in_qprocess() {
        let m = binary(1.0).unwrap();
        let rows = qprocess_compare(&m, 0, 1.0, |_, _| Ok(true), &[2.0, 4.0], 200, 1).unwrap();
        for r in rows {
            assert_eq!(r.conditioned.mean, 1.0);
            assert_eq!(r.spine.mean, 1.0);
        }
        let rows = qprocess_compare(&m, 0, 0.0, |t, _| Ok(t.root_state == 0), &[2.0], 50, 1).unwrap();
        assert_eq!(rows[0].gap(), 0.0);
    }
}
