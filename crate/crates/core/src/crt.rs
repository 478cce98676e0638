//! The limit object: Brownian excursions conditioned to reach a height, and
//! the distances of the tree they code.
//!
//! Excursions are cut from a Gaussian random walk with step variance
//! `c · dt`: each maximal run of one sign, taken in absolute value and
//! padded with zeros at both ends, is one discrete excursion. The first run
//! whose supremum reaches the target height is returned, which realises the
//! normalised restriction of the Itô measure on the grid.

use std::io::Write;

use num_rational::Ratio;
use rand_distr::StandardNormal;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mmspace::{DistanceMatrix, Variant};
use crate::rmq::SparseTable;
use crate::rng::SimRng;

#[derive(Clone, Debug)]
pub struct Excursion {
    pub dt: f64,
    pub speed: f64,
    /// Grid values `e_0 = 0, …, e_T = 0`.
    pub values: Vec<f64>,
    /// The run was cut at the length cap before returning to zero.
    pub censored: bool,
}

impl Excursion {
    /// Length `τ = T · dt`.
    pub fn length(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Linear interpolation of the grid at time `t ∈ [0, τ]`.
    pub fn value_at(&self, t: f64) -> f64 {
        let x = (t / self.dt).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Writes `(t, e_t)` keeping every `every`-th grid point.
    pub fn write_csv<W: Write>(&self, mut out: W, every: usize) -> Result<()> {
        writeln!(out, "t,e")?;
        let every = every.max(1);
        for (i, v) in self.values.iter().enumerate() {
            if i % every == 0 || i + 1 == self.values.len() {
                writeln!(out, "{},{}", i as f64 * self.dt, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExcursionConfig {
    pub speed: f64,
    pub dt: f64,
    pub height: f64,
    /// Cap on the excursion length; longer ones are returned censored.
    pub max_length: Option<f64>,
}

impl ExcursionConfig {
    /// Default grid `dt = 10⁻⁴ · height² / speed` and length cap
    /// `100 · height² / speed`. Conditioned lengths have an infinite mean,
    /// so an uncapped sampler can exhaust memory.
    pub fn new(speed: f64, height: f64) -> Self {
        let unit = height * height / speed;
        Self { speed, dt: 1e-4 * unit, height, max_length: Some(100.0 * unit) }
    }

    fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.dt > 0.0 && self.height > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "excursion needs positive speed, dt and height, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// First excursion of the reflected walk whose supremum reaches the target
/// height.
pub fn sample_conditioned_excursion(cfg: &ExcursionConfig, rng: &mut SimRng) -> Result<Excursion> {
    cfg.validate()?;
    let sd = (cfg.speed * cfg.dt).sqrt();
    let cap = cfg.max_length.map_or(usize::MAX, |m| (m / cfg.dt).ceil() as usize);
    let mut run: Vec<f64> = Vec::new();
    loop {
        // Start of a run: the walk has just changed sign, so the first step
        // is drawn conditioned on leaving zero. Using |ξ| keeps the run
        // length law of the reflected walk.
        run.clear();
        run.push(0.0);
        let mut w: f64 = rng.sample::<f64, _>(StandardNormal).abs() * sd;
        let mut sup: f64 = 0.0;
        let mut censored = false;
        while w > 0.0 {
            run.push(w);
            sup = sup.max(w);
            if run.len() > cap {
                censored = true;
                break;
            }
            w += rng.sample::<f64, _>(StandardNormal) * sd;
        }
        if sup >= cfg.height {
            if !censored {
                run.push(0.0);
            }
            return Ok(Excursion { dt: cfg.dt, speed: cfg.speed, values: run.clone(), censored });
        }
    }
}

/// `d_e(s,t) = e_s + e_t − 2 min_{[s,t]} e` for `k` uniform times on
/// `[0, τ)`. Minima are taken over the grid between consecutive sorted
/// times and combined with a small sparse table.
pub fn crt_distance_matrix(exc: &Excursion, k: usize, rng: &mut SimRng) -> DistanceMatrix {
    let tau = exc.length();
    let times: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * tau).collect();
    crt_distance_matrix_at(exc, &times)
}

pub fn crt_distance_matrix_at(exc: &Excursion, times: &[f64]) -> DistanceMatrix {
    let k = times.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let vals: Vec<f64> = order.iter().map(|&i| exc.value_at(times[i])).collect();
    // gap[r] = min of e over [t_(r), t_(r+1)], endpoints included.
    let gaps: Vec<f64> = (0..k.saturating_sub(1))
        .map(|r| {
            let (a, b) = (times[order[r]], times[order[r + 1]]);
            let lo = (a / exc.dt).ceil() as usize;
            let hi = ((b / exc.dt).floor() as usize).min(exc.values.len() - 1);
            let inner = if lo <= hi { exc.values[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min) } else { f64::INFINITY };
            inner.min(vals[r]).min(vals[r + 1])
        })
        .collect();
    let table = (!gaps.is_empty()).then(|| SparseTable::new(gaps));
    let mut rank = vec![0usize; k];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut m = DistanceMatrix::zeros(k, Variant::Crt, 1.0, times.to_vec(), exc.length());
    for i in 0..k {
        for j in i + 1..k {
            let (ri, rj) = if rank[i] < rank[j] { (rank[i], rank[j]) } else { (rank[j], rank[i]) };
            let mn = if ri == rj { vals[ri] } else { table.as_ref().expect("k ≥ 2").min(ri, rj - 1) };
            let d = (vals[ri] + vals[rj] - 2.0 * mn).max(0.0);
            m.set(i, j, d);
        }
    }
    m
}

/// `L_1 = 1`, `L_ℓ = (2ℓ − 1)⁻¹ Σ_{i=1}^{ℓ−1} L_i L_{ℓ−i}`, exactly.
pub fn occupation_constants(ell_max: usize) -> Vec<Ratio<u64>> {
    let mut l: Vec<Ratio<u64>> = Vec::with_capacity(ell_max);
    for ell in 1..=ell_max {
        if ell == 1 {
            l.push(Ratio::from_integer(1));
            continue;
        }
        let sum = (1..ell).fold(Ratio::from_integer(0), |acc, i| acc + l[i - 1] * l[ell - i - 1]);
        l.push(sum / Ratio::from_integer(2 * ell as u64 - 1));
    }
    l
}
