//! Rescaled trees as metric measure spaces: sampled distance matrices,
//! Gromov-weak test functions, the lower mass function and η-bad
//! diagnostics.
//!
//! The tree `T` carries the distance `d/n` and the length measure `ν/n²`,
//! which the exploration maps to Lebesgue measure on `[0, L)`. Sampling
//! `ν`-uniform points is therefore sampling uniform exploration times.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::ExplorationPath;
use crate::genealogy::Tree;
use crate::martingale::MartingalePath;
use crate::model::ModelSpec;
use crate::rng::stream;
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Height distances `(h_s + h_t − 2h^{st}) / n`.
    #[serde(rename = "Dh")]
    Height,
    /// The same combination of `M̂^d` at the vertices and their MRCA.
    #[serde(rename = "DM")]
    Martingale,
    /// Distances in the tree coded by an excursion.
    #[serde(rename = "crt")]
    Crt,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Height => "Dh",
            Variant::Martingale => "DM",
            Variant::Crt => "crt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub variant: Variant,
    /// Scale `n` the entries were divided by.
    pub n: f64,
    pub times: Vec<f64>,
    /// Total mass of the space, `L/n²` (or `τ` for an excursion).
    pub total_mass: f64,
    k: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(k: usize, variant: Variant, n: f64, times: Vec<f64>, total_mass: f64) -> Self {
        Self { variant, n, times, total_mass, k, entries: vec![0.0; k * k] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    /// Sets both `(i,j)` and `(j,i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.k + j] = v;
        self.entries[j * self.k + i] = v;
    }

    /// Upper-triangle entries in row order.
    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k * self.k.saturating_sub(1) / 2);
        for i in 0..self.k {
            for j in i + 1..self.k {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn write_csv_header<W: Write>(mut out: W) -> Result<()> {
        writeln!(out, "tree_id,variant,i,j,value,n,k,total_mass")?;
        Ok(())
    }

    pub fn write_csv_rows<W: Write>(&self, mut out: W, tree_id: usize) -> Result<()> {
        for i in 0..self.k {
            for j in 0..self.k {
                writeln!(
                    out,
                    "{tree_id},{},{i},{j},{},{},{},{}",
                    self.variant.tag(),
                    self.get(i, j),
                    self.n,
                    self.k,
                    self.total_mass
                )?;
            }
        }
        Ok(())
    }
}

/// A sampled rescaled tree: its mass and the matrices drawn from it.
#[derive(Clone, Debug, Serialize)]
pub struct MmSample {
    pub total_mass: f64,
    pub matrices: Vec<(DistanceMatrix, DistanceMatrix)>,
    pub n: f64,
    pub seed: u64,
    pub censored: bool,
}

/// `Dʰ` and `Dᴹ` at given exploration times.
pub fn distance_matrices_at(path: &ExplorationPath<'_>, mpath: &MartingalePath, n: f64, times: &[f64]) -> Result<(DistanceMatrix, DistanceMatrix)> {
    if path.is_forest() {
        return Err(Error::InvalidConfig("distance matrices need a single tree".into()));
    }
    let k = times.len();
    let mass = path.length() / (n * n);
    let mut dh = DistanceMatrix::zeros(k, Variant::Height, n, times.to_vec(), mass);
    let mut dm = DistanceMatrix::zeros(k, Variant::Martingale, n, times.to_vec(), mass);
    let segs = times.iter().map(|&t| path.segment_at(t)).collect::<Result<Vec<_>>>()?;
    for a in 0..k {
        for b in a + 1..k {
            let (i, s, j, t) = if times[a] <= times[b] {
                (segs[a], times[a], segs[b], times[b])
            } else {
                (segs[b], times[b], segs[a], times[a])
            };
            let td = path.distance_in(i, s, j, t);
            let mrca = td.mrca.expect("single tree has an MRCA");
            dh.set(a, b, td.distance / n);
            let m = mpath.vertex_md(i) + mpath.vertex_md(j) - 2.0 * mpath.vertex_md(mrca);
            dm.set(a, b, m / n);
        }
    }
    Ok((dh, dm))
}

/// `reps` pairs `(Dʰ, Dᴹ)` at `k` uniform exploration times each.
pub fn sample_distance_matrices(
    path: &ExplorationPath<'_>,
    mpath: &MartingalePath,
    n: f64,
    k: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<(DistanceMatrix, DistanceMatrix)>> {
    let l = path.length();
    if !(l > 0.0) {
        return Err(Error::DegenerateTree);
    }
    let mut rng = stream(seed, 0);
    (0..reps)
        .map(|_| {
            let times: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * l).collect();
            distance_matrices_at(path, mpath, n, &times)
        })
        .collect()
}

/// Monte Carlo estimate of `∫ φ(d(x)) μ^{⊗k}(dx)` over i.i.d. matrices, each
/// weighted by `total_mass^k`.
pub fn gromov_polynomial<F: Fn(&DistanceMatrix) -> f64>(matrices: &[DistanceMatrix], test_fn: F) -> Estimate {
    let values: Vec<f64> = matrices.iter().map(|m| m.total_mass.powi(m.k() as i32) * test_fn(m)).collect();
    Estimate::from_samples(&values)
}

/// `ν/n²`-mass of the closed ball of radius `r` (unscaled) around the point
/// explored at time `s`, exactly.
pub fn ball_mass(path: &ExplorationPath<'_>, s: f64, r: f64) -> Result<f64> {
    let i = path.segment_at(s)?;
    let segs = path.segments();
    let hs = segs[i].height_at(s);
    let lo = hs - r;
    let clip = |a: f64, b: f64| (b - a).max(0.0);
    let mut total = clip(lo.max(segs[i].birth), (hs + r).min(segs[i].death));
    let mut m = hs;
    for seg in &segs[i + 1..] {
        m = m.min(seg.birth);
        if m < lo {
            break;
        }
        total += clip(seg.birth, seg.death.min(2.0 * m + r - hs));
    }
    let mut p = segs[i].birth;
    for k in (0..i).rev() {
        if p < lo {
            break;
        }
        let seg = &segs[k];
        total += clip(seg.birth.max(lo), seg.death.min(2.0 * p + r - hs));
        p = p.min(seg.birth);
    }
    Ok(total)
}

/// Lower mass function `m_δ`: the smallest mass of a closed `δ`-ball in
/// `(T, d/n, ν/n²)` over `probe_count` uniform centres.
pub fn lower_mass(path: &ExplorationPath<'_>, n: f64, delta: f64, probe_count: usize, seed: u64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("delta must be positive, got {delta}")));
    }
    let l = path.length();
    if !(l > 0.0) {
        return Err(Error::DegenerateTree);
    }
    let mut rng = stream(seed, 0);
    let mut best = f64::INFINITY;
    for _ in 0..probe_count {
        let s = rng.random::<f64>() * l;
        best = best.min(ball_mass(path, s, delta * n)? / (n * n));
    }
    Ok(best)
}

/// `M̂(v)` for every record, top-down.
pub fn vertex_m_all(tree: &Tree, model: &ModelSpec) -> Vec<f64> {
    let phi = model.phi();
    let mut out = vec![0.0; tree.records.len()];
    for v in 0..tree.records.len() {
        let r = &tree.records[v];
        if let Some(p) = r.parent() {
            let parent = &tree.records[p];
            let litter = parent.litter().expect("a parent has a litter");
            let children = &model.table(parent.death_state as usize)[litter].children;
            let younger: f64 = children[r.sibling_index as usize + 1..].iter().map(|&c| phi[c]).sum();
            out[v] = out[p] + younger;
        }
    }
    out
}

/// Fraction of `u ∈ 𝒩_n` that are `η_R`-bad: some `(v, s)` with `v ⪯ u`,
/// `v` alive at `s` and `R ≤ s ≤ n` has `|M̂(v)/s − c| > η`, where
/// `c = Σ/(2φ(x))`. Returns the fraction and `N_n`.
pub fn eta_bad_fraction(tree: &Tree, model: &ModelSpec, eta: f64, r: f64, n: f64) -> Result<(f64, usize)> {
    let alive = tree.alive_at(n)?;
    if alive.is_empty() {
        return Err(Error::NoSurvivors(n));
    }
    let c = model.branching_constant() / (2.0 * model.phi()[tree.root_state]);
    let mhat = vertex_m_all(tree, model);
    let mut bad = vec![false; tree.records.len()];
    for v in 0..tree.records.len() {
        let rec = &tree.records[v];
        let inherited = rec.parent().is_some_and(|p| bad[p]);
        let (lo, hi) = (r.max(rec.birth_time), n.min(rec.death_time));
        // M̂(v)/s is monotone in s, so the endpoints decide.
        let own = lo <= hi && {
            let off = |s: f64| (mhat[v] / s - c).abs() > eta;
            if lo <= 0.0 { mhat[v] > 0.0 || c > eta || off(hi) } else { off(lo) || off(hi) }
        };
        bad[v] = inherited || own;
    }
    let count = alive.iter().filter(|&&u| bad[u]).count();
    Ok((count as f64 / alive.len() as f64, alive.len()))
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::explore;
    use crate::genealogy::{condition_on_survival, simulate_tree, testing, SimConfig};
    use crate::martingale::compute_martingales;
    use crate::model::{binary, two_type};

    #[test]
    fn trivial_matrices() {
        let m = binary(1.0).unwrap();
        let t = testing::stick(3.0);
        let p = explore(&t);
        let mp = compute_martingales(&p, &m);
        let one = sample_distance_matrices(&p, &mp, 1.0, 1, 1, 1).unwrap();
        assert_eq!(one[0].0.get(0, 0), 0.0);
        let (dh, dm) = distance_matrices_at(&p, &mp, 1.0, &[0.5, 2.5]).unwrap();
        assert_eq!(dh.get(0, 1), 2.0);
        assert_eq!(dm.get(0, 1), 0.0);
        let (dh, _) = distance_matrices_at(&p, &mp, 2.0, &[2.5, 0.5]).unwrap();
        assert_eq!(dh.get(0, 1), 1.0);
        assert_eq!(dh.total_mass, 0.75);
    }

    #[test]
    fn matrices_match_tree_distance() {
        let m = two_type().unwrap();
        let t = simulate_tree(&m, 0, &SimConfig { length_budget: Some(400.0), ..SimConfig::with_horizon(60.0, 9) }).unwrap();
        let p = explore(&t);
        let mp = compute_martingales(&p, &m);
        let mut rng = stream(1, 0);
        for _ in 0..50 {
            let times = [rng.random::<f64>() * p.length(), rng.random::<f64>() * p.length(), rng.random::<f64>() * p.length()];
            let (dh, dm) = distance_matrices_at(&p, &mp, 4.0, &times).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    let exact = p.tree_distance(times[a], times[b]).unwrap().distance / 4.0;
                    assert!((dh.get(a, b) - exact).abs() < 1e-12);
                    assert!(dm.get(a, b) >= -1e-12);
                }
            }
            let (dh2, _) = distance_matrices_at(&p, &mp, 4.0, &[times[1], times[1]]).unwrap();
            assert_eq!(dh2.get(0, 1), 0.0);
            assert_eq!(dm.get(0, 0), 0.0);
        }
    }

    #[test]
    fn gromov_polynomial_on_sticks() {
        // E|U − U'| = ℓ/3 on [0, ℓ]², weighted by ℓ².
        let m = binary(1.0).unwrap();
        let ell = 2.0;
        let t = testing::stick(ell);
        let p = explore(&t);
        let mp = compute_martingales(&p, &m);
        let mats: Vec<DistanceMatrix> =
            sample_distance_matrices(&p, &mp, 1.0, 2, 200_000, 3).unwrap().into_iter().map(|x| x.0).collect();
        let est = gromov_polynomial(&mats, |d| d.get(0, 1));
        assert!(est.within(ell.powi(3) / 3.0, 4.0), "{est:?}");
        let ones = gromov_polynomial(&mats[..0], |_| 1.0);
        assert!(ones.mean.is_nan());
    }

    #[test]
    fn ball_mass_geometry() {
        let m = binary(1.0).unwrap();
        let _ = m;
        let t = testing::stick(10.0);
        let p = explore(&t);
        assert!((ball_mass(&p, 5.0, 1.5).unwrap() - 3.0).abs() < 1e-12);
        assert!((lower_mass(&p, 1.0, 20.0, 10, 1).unwrap() - 10.0).abs() < 1e-12);
        // Cherry: root [0,1), children of lengths 2 and 3.
        let c = testing::cherry(1.0, 2.0, 3.0);
        let p = explore(&c);
        let brute = |s: f64, r: f64| {
            let steps = 200_000;
            let dx = p.length() / steps as f64;
            (0..steps).filter(|&q| p.tree_distance(s, (q as f64 + 0.5) * dx).unwrap().distance <= r).count() as f64 * dx
        };
        for &s in &[0.3, 0.9, 1.5, 2.7, 3.2, 5.5] {
            for &r in &[0.2, 0.7, 1.3, 2.5, 10.0] {
                let exact = ball_mass(&p, s, r).unwrap();
                assert!((exact - brute(s, r)).abs() < 1e-3, "s={s} r={r}: {exact} vs {}", brute(s, r));
            }
        }
    }

    #[test]
    fn lower_mass_monotone_in_delta() {
        let m = two_type().unwrap();
        let t = simulate_tree(&m, 0, &SimConfig { length_budget: Some(300.0), ..SimConfig::with_horizon(40.0, 5) }).unwrap();
        let p = explore(&t);
        let mut prev = 0.0;
        for d in [0.05, 0.1, 0.2, 0.5, 1.0, 3.0] {
            let v = lower_mass(&p, 5.0, d, 50, 2).unwrap();
            assert!(v >= prev - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn eta_bad_limits() {
        let m = binary(1.0).unwrap();
        let mut rng = stream(4, 0);
        let c = condition_on_survival(&m, 0, 20.0, &SimConfig::default(), &mut rng).unwrap();
        let (f, count) = eta_bad_fraction(&c.tree, &m, 1e9, 5.0, 20.0).unwrap();
        assert_eq!(f, 0.0);
        assert!(count > 0);
        let (f_all, _) = eta_bad_fraction(&c.tree, &m, 0.0, 5.0, 20.0).unwrap();
        assert_eq!(f_all, 1.0);
        // R = n only looks at (u, n).
        let mhat = vertex_m_all(&c.tree, &m);
        let alive = c.tree.alive_at(20.0).unwrap();
        let own = alive.iter().filter(|&&u| (mhat[u] / 20.0 - 0.5).abs() > 0.3).count() as f64 / alive.len() as f64;
        let (f_n, _) = eta_bad_fraction(&c.tree, &m, 0.3, 20.0, 20.0).unwrap();
        assert!((f_n - own).abs() < 1e-12);
        let t = testing::stick(1.0);
        assert!(matches!(eta_bad_fraction(&t, &m, 0.1, 1.0, 5.0), Err(Error::NoSurvivors(_))));
    }

    #[test]
    fn vertex_m_all_matches_single() {
        let m = two_type().unwrap();
        let t = simulate_tree(&m, 1, &SimConfig { length_budget: Some(200.0), ..SimConfig::with_horizon(30.0, 7) }).unwrap();
        let all = vertex_m_all(&t, &m);
        for v in 0..t.records.len() {
            assert!((all[v] - crate::martingale::vertex_m_index(&t, &m, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
