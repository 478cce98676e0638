//! Branching Markov process models on finite state spaces.
//!
//! A model couples a continuous-time jump motion (with optional soft killing
//! to a cemetery where `φ = 0`), a branching rate `γ(x)` and a finite
//! offspring table per state. Building a model computes the Perron eigenpair
//! `(φ, φ̃)` of the first-moment generator
//!
//! ```text
//! A f(x) = Σ_y q(x,y) (f(y) − f(x)) − κ(x) f(x) + γ(x) (m[f](x) − f(x))
//! ```
//!
//! and rejects anything that is not critical. All analytic functionals used as
//! oracles elsewhere (`m`, `𝒱`, `Γφ`, the quadratic-variation integrand `f`,
//! `σ²(f)` and the branching constant `Σ = ⟨γ𝒱[φ], φ̃⟩`) are evaluated exactly
//! from the tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the Perron eigenvalue for a model to count as critical.
pub const CRITICALITY_TOL: f64 = 1e-8;
const NORMALISATION_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpace {
    FiniteSet { size: usize },
    /// Circle of circumference one discretised into `resolution` cells.
    Torus { resolution: usize },
}

impl StateSpace {
    pub fn size(&self) -> usize {
        match *self {
            StateSpace::FiniteSet { size } => size,
            StateSpace::Torus { resolution } => resolution,
        }
    }

    pub fn check(&self, x: usize) -> Result<()> {
        if x < self.size() {
            Ok(())
        } else {
            Err(Error::InvalidState { state: x, size: self.size() })
        }
    }
}

/// Jump motion: sparse outgoing rates per state plus a killing rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSpec {
    rates: Vec<Vec<(usize, f64)>>,
    killing: Vec<f64>,
}

impl MotionSpec {
    /// `rates` are `(from, to, rate)` triples; repeated pairs accumulate.
    pub fn new(size: usize, rates: &[(usize, usize, f64)], killing: Vec<f64>) -> Result<Self> {
        if killing.len() != size {
            return Err(Error::InvalidModel(format!(
                "killing has {} entries, expected {size}",
                killing.len()
            )));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); size];
        for &(from, to, rate) in rates {
            if from >= size || to >= size {
                return Err(Error::InvalidModel(format!("jump {from}->{to} outside state space")));
            }
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::InvalidModel(format!("jump rate {rate} for {from}->{to}")));
            }
            if from == to || rate == 0.0 {
                continue;
            }
            match rows[from].iter_mut().find(|(y, _)| *y == to) {
                Some(slot) => slot.1 += rate,
                None => rows[from].push((to, rate)),
            }
        }
        for row in &mut rows {
            row.sort_by_key(|&(y, _)| y);
        }
        if let Some(k) = killing.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::InvalidModel(format!("killing rate {k}")));
        }
        Ok(Self { rates: rows, killing })
    }

    /// Nearest-neighbour walk on a ring, `rate` in each direction.
    pub fn torus_walk(resolution: usize, rate: f64) -> Result<Self> {
        let mut triples = Vec::new();
        if resolution > 1 {
            for x in 0..resolution {
                triples.push((x, (x + 1) % resolution, rate));
                triples.push((x, (x + resolution - 1) % resolution, rate));
            }
        }
        Self::new(resolution, &triples, vec![0.0; resolution])
    }

    pub fn none(size: usize) -> Self {
        Self { rates: vec![Vec::new(); size], killing: vec![0.0; size] }
    }

    pub fn jumps(&self, x: usize) -> &[(usize, f64)] {
        &self.rates[x]
    }

    pub fn killing(&self, x: usize) -> f64 {
        self.killing[x]
    }

    pub fn jump_rate(&self, x: usize) -> f64 {
        self.rates[x].iter().map(|&(_, r)| r).sum()
    }

    /// `(L g)(x)`, with the cemetery contributing `g(†) = 0`.
    pub fn generator(&self, g: &[f64], x: usize) -> f64 {
        let jumps: f64 = self.rates[x].iter().map(|&(y, r)| r * (g[y] - g[x])).sum();
        jumps - self.killing[x] * g[x]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffspringEntry {
    pub p: f64,
    pub children: Vec<usize>,
}

impl OffspringEntry {
    pub fn sum(&self, g: &[f64]) -> f64 {
        self.children.iter().map(|&c| g[c]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffspringSpec {
    gamma: Vec<f64>,
    tables: Vec<Vec<OffspringEntry>>,
}

impl OffspringSpec {
    pub fn new(gamma: Vec<f64>, tables: Vec<Vec<OffspringEntry>>) -> Result<Self> {
        if gamma.len() != tables.len() {
            return Err(Error::InvalidModel(format!(
                "{} branching rates for {} offspring tables",
                gamma.len(),
                tables.len()
            )));
        }
        let size = gamma.len();
        for (x, (g, table)) in gamma.iter().zip(&tables).enumerate() {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(Error::InvalidModel(format!("branching rate {g} at state {x}")));
            }
            if table.is_empty() {
                return Err(Error::InvalidModel(format!("empty offspring table at state {x}")));
            }
            let mut total = 0.0;
            for e in table {
                if !(e.p.is_finite() && e.p >= 0.0) {
                    return Err(Error::InvalidModel(format!("probability {} at state {x}", e.p)));
                }
                if e.p > 0.0 && e.children.len() == 1 {
                    return Err(Error::InvalidModel(format!(
                        "single-child litter at state {x}; litters of size one are excluded"
                    )));
                }
                if let Some(c) = e.children.iter().find(|&&c| c >= size) {
                    return Err(Error::InvalidModel(format!("child state {c} at state {x}")));
                }
                total += e.p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "offspring probabilities at state {x} sum to {total}"
                )));
            }
        }
        Ok(Self { gamma, tables })
    }

    pub fn gamma(&self, x: usize) -> f64 {
        self.gamma[x]
    }

    pub fn table(&self, x: usize) -> &[OffspringEntry] {
        &self.tables[x]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenPair {
    pub phi: Vec<f64>,
    pub phi_tilde: Vec<f64>,
    pub lambda: f64,
}

impl EigenPair {
    fn validate(&self) -> Result<()> {
        if self.phi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Reducible("φ is not strictly positive".into()));
        }
        if self.phi_tilde.iter().any(|&p| p < 0.0) {
            return Err(Error::Reducible("φ̃ has negative weights".into()));
        }
        let mass: f64 = self.phi_tilde.iter().sum();
        let pairing: f64 = self.phi.iter().zip(&self.phi_tilde).map(|(a, b)| a * b).sum();
        if (mass - 1.0).abs() > NORMALISATION_TOL || (pairing - 1.0).abs() > NORMALISATION_TOL {
            return Err(Error::InvalidModel(format!(
                "eigenpair normalisation failed: Σφ̃ = {mass}, ⟨φ̃,φ⟩ = {pairing}"
            )));
        }
        Ok(())
    }
}

/// Unvalidated model description, as read from a model file.
#[derive(Clone, Debug)]
pub struct RawModel {
    pub name: String,
    pub space: StateSpace,
    pub motion: MotionSpec,
    pub gamma: Vec<f64>,
    pub offspring: Vec<Vec<OffspringEntry>>,
}

/// A validated critical model. Immutable and `Sync`; share it freely.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    name: String,
    space: StateSpace,
    motion: MotionSpec,
    offspring: OffspringSpec,
    eigen: EigenPair,
    // Cached functionals.
    mean_phi: Vec<f64>,
    mean_one: Vec<f64>,
    l_phi: Vec<f64>,
    qv: Vec<f64>,
    variance_phi: Vec<f64>,
    // Sampling aids: cumulative litter probabilities, total event rates.
    litter_cdf: Vec<Vec<f64>>,
    total_rate: Vec<f64>,
}

impl ModelSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn size(&self) -> usize {
        self.space.size()
    }

    pub fn motion(&self) -> &MotionSpec {
        &self.motion
    }

    pub fn offspring(&self) -> &OffspringSpec {
        &self.offspring
    }

    pub fn eigen(&self) -> &EigenPair {
        &self.eigen
    }

    pub fn phi(&self) -> &[f64] {
        &self.eigen.phi
    }

    pub fn phi_tilde(&self) -> &[f64] {
        &self.eigen.phi_tilde
    }

    pub fn gamma(&self, x: usize) -> f64 {
        self.offspring.gamma(x)
    }

    pub fn table(&self, x: usize) -> &[OffspringEntry] {
        self.offspring.table(x)
    }

    /// `m[φ](x)`.
    pub fn mean_phi(&self, x: usize) -> f64 {
        self.mean_phi[x]
    }

    /// `m(x) = m[1](x)`.
    pub fn mean_offspring(&self, x: usize) -> f64 {
        self.mean_one[x]
    }

    /// `(Lφ)(x)` for the motion alone.
    pub fn l_phi(&self, x: usize) -> f64 {
        self.l_phi[x]
    }

    /// Quadratic-variation integrand `f(x)` of the exploration martingale.
    pub fn qv(&self, x: usize) -> f64 {
        self.qv[x]
    }

    pub fn qv_values(&self) -> &[f64] {
        &self.qv
    }

    /// `Σ = ⟨γ𝒱[φ], φ̃⟩`, the constant in the survival, Yaglom and moment
    /// asymptotics.
    pub fn branching_constant(&self) -> f64 {
        self.variance_phi
            .iter()
            .enumerate()
            .map(|(x, v)| self.gamma(x) * v * self.eigen.phi_tilde[x])
            .sum()
    }

    /// `⟨𝒱[φ], φ̃⟩` without the branching-rate weight.
    pub fn unweighted_variance_constant(&self) -> f64 {
        self.variance_phi.iter().zip(&self.eigen.phi_tilde).map(|(v, w)| v * w).sum()
    }

    /// `⟨g, φ̃⟩`.
    pub fn pair_tilde(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.eigen.phi_tilde).map(|(a, b)| a * b).sum()
    }

    pub fn total_rate(&self, x: usize) -> f64 {
        self.total_rate[x]
    }

    /// Index of the litter drawn at state `x` by a uniform `u ∈ [0,1)`.
    pub fn pick_litter(&self, x: usize, u: f64) -> usize {
        let cdf = &self.litter_cdf[x];
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }

    /// `(A g)(x)` for the first-moment generator.
    pub fn first_moment_generator(&self, g: &[f64], x: usize) -> f64 {
        self.motion.generator(g, x) + self.gamma(x) * (offspring_mean_unchecked(self, g, x) - g[x])
    }

    pub fn check_state(&self, x: usize) -> Result<()> {
        self.space.check(x)
    }
}

fn offspring_mean_unchecked(model: &ModelSpec, f: &[f64], x: usize) -> f64 {
    model.table(x).iter().map(|e| e.p * e.sum(f)).sum()
}

fn check_fn(model: &ModelSpec, f: &[f64]) -> Result<()> {
    if f.len() != model.size() {
        return Err(Error::InvalidModel(format!(
            "function has {} values for {} states",
            f.len(),
            model.size()
        )));
    }
    Ok(())
}

/// `m[f](x) = E_x[Σ_i f(x_i)]`, exact over the offspring table.
pub fn offspring_mean(model: &ModelSpec, f: &[f64], x: usize) -> Result<f64> {
    model.check_state(x)?;
    check_fn(model, f)?;
    Ok(offspring_mean_unchecked(model, f, x))
}

/// `𝒱[g](x) = Var_x(Σ_i g(x_i))`.
pub fn variance_functional(model: &ModelSpec, g: &[f64], x: usize) -> Result<f64> {
    model.check_state(x)?;
    check_fn(model, g)?;
    Ok(variance_unchecked(model.table(x), g))
}

fn variance_unchecked(table: &[OffspringEntry], g: &[f64]) -> f64 {
    let mean: f64 = table.iter().map(|e| e.p * e.sum(g)).sum();
    // Centred form avoids cancellation.
    table.iter().map(|e| e.p * (e.sum(g) - mean).powi(2)).sum()
}

/// `Γφ(x) = Σ_y q(x,y)(φ(y) − φ(x))² + κ(x) φ(x)²`.
pub fn carre_du_champ(model: &ModelSpec, x: usize) -> Result<f64> {
    model.check_state(x)?;
    Ok(carre_unchecked(&model.motion, model.phi(), x))
}

fn carre_unchecked(motion: &MotionSpec, phi: &[f64], x: usize) -> f64 {
    let jumps: f64 = motion.jumps(x).iter().map(|&(y, r)| r * (phi[y] - phi[x]).powi(2)).sum();
    jumps + motion.killing(x) * phi[x] * phi[x]
}

/// `f(x) = Γφ(x) + γ(x) E_x[(Σ_i φ(x_i) − φ(x))²]`.
pub fn qv_integrand(model: &ModelSpec, x: usize) -> Result<f64> {
    model.check_state(x)?;
    Ok(model.qv[x])
}

fn qv_unchecked(motion: &MotionSpec, offspring: &OffspringSpec, phi: &[f64], x: usize) -> f64 {
    let jump: f64 = offspring
        .table(x)
        .iter()
        .map(|e| e.p * (e.sum(phi) - phi[x]).powi(2))
        .sum();
    carre_unchecked(motion, phi, x) + offspring.gamma(x) * jump
}

/// `σ²(f) = ⟨φ̃, f⟩ / ⟨φ̃, 1⟩`.
pub fn sigma2(model: &ModelSpec) -> f64 {
    let num: f64 = model.pair_tilde(&model.qv);
    let den: f64 = model.phi_tilde().iter().sum();
    num / den
}

/// Validates the raw tables, computes the Perron eigenpair and rejects
/// non-critical or reducible inputs.
pub fn build_model(raw: RawModel) -> Result<ModelSpec> {
    let size = raw.space.size();
    if size == 0 {
        return Err(Error::InvalidModel("empty state space".into()));
    }
    if raw.motion.rates.len() != size {
        return Err(Error::InvalidModel("motion does not match state space".into()));
    }
    let offspring = OffspringSpec::new(raw.gamma, raw.offspring)?;
    if offspring.gamma.len() != size {
        return Err(Error::InvalidModel(format!(
            "{} branching rates for {size} states",
            offspring.gamma.len()
        )));
    }
    let generator = dense_generator(&raw.motion, &offspring, size);
    check_irreducible(&generator)?;
    let eigen = perron_pair(&generator)?;
    if eigen.lambda.abs() >= CRITICALITY_TOL {
        return Err(Error::NonCritical { lambda: eigen.lambda });
    }
    eigen.validate()?;

    let phi = &eigen.phi;
    let ones = vec![1.0; size];
    let mean = |g: &[f64], x: usize| -> f64 { offspring.table(x).iter().map(|e| e.p * e.sum(g)).sum() };
    let mean_phi: Vec<f64> = (0..size).map(|x| mean(phi, x)).collect();
    let mean_one: Vec<f64> = (0..size).map(|x| mean(&ones, x)).collect();
    let l_phi: Vec<f64> = (0..size).map(|x| raw.motion.generator(phi, x)).collect();
    let qv: Vec<f64> = (0..size).map(|x| qv_unchecked(&raw.motion, &offspring, phi, x)).collect();
    let variance_phi: Vec<f64> = (0..size).map(|x| variance_unchecked(offspring.table(x), phi)).collect();
    let litter_cdf = offspring
        .tables
        .iter()
        .map(|t| {
            let mut acc = 0.0;
            t.iter()
                .map(|e| {
                    acc += e.p;
                    acc
                })
                .collect()
        })
        .collect();
    let total_rate = (0..size)
        .map(|x| raw.motion.jump_rate(x) + raw.motion.killing(x) + offspring.gamma(x))
        .collect();

    let model = ModelSpec {
        name: raw.name,
        space: raw.space,
        motion: raw.motion,
        offspring,
        eigen,
        mean_phi,
        mean_one,
        l_phi,
        qv,
        variance_phi,
        litter_cdf,
        total_rate,
    };
    for x in 0..size {
        let residual = model.first_moment_generator(model.phi(), x);
        if residual.abs() >= CRITICALITY_TOL {
            return Err(Error::NonCritical { lambda: residual / model.phi()[x] });
        }
    }
    Ok(model)
}

fn dense_generator(motion: &MotionSpec, offspring: &OffspringSpec, size: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; size]; size];
    for x in 0..size {
        for &(y, r) in motion.jumps(x) {
            a[x][y] += r;
            a[x][x] -= r;
        }
        a[x][x] -= motion.killing(x);
        let g = offspring.gamma(x);
        a[x][x] -= g;
        for e in offspring.table(x) {
            for &c in &e.children {
                a[x][c] += g * e.p;
            }
        }
    }
    a
}

fn check_irreducible(a: &[Vec<f64>]) -> Result<()> {
    let n = a.len();
    let reach = |forward: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..n {
                let w = if forward { a[x][y] } else { a[y][x] };
                if y != x && w > 0.0 && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen
    };
    if reach(true).iter().all(|&s| s) && reach(false).iter().all(|&s| s) {
        Ok(())
    } else {
        Err(Error::Reducible("states do not communicate under the mean dynamics".into()))
    }
}

/// Power iteration on `P = I + δA`, which shares eigenvectors with `A` and is
/// entrywise non-negative with a positive diagonal for small `δ`.
fn perron_pair(a: &[Vec<f64>]) -> Result<EigenPair> {
    let n = a.len();
    let max_diag = (0..n).map(|x| -a[x][x]).fold(0.0_f64, f64::max);
    let delta = 1.0 / (1.0 + max_diag);
    let step = |v: &[f64], right: bool| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| if right { a[i][j] * v[j] } else { v[j] * a[j][i] })
                    .sum();
                v[i] + delta * s
            })
            .collect()
    };
    let iterate = |right: bool| -> Vec<f64> {
        let mut v = vec![1.0 / n as f64; n];
        for it in 0..5_000_000usize {
            let mut w = step(&v, right);
            let norm: f64 = w.iter().sum();
            for wi in &mut w {
                *wi /= norm;
            }
            let change = v.iter().zip(&w).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            v = w;
            if change < 1e-16 && it > 8 {
                break;
            }
        }
        v
    };
    let mut phi = iterate(true);
    let phi_tilde = iterate(false);
    let pairing: f64 = phi.iter().zip(&phi_tilde).map(|(p, q)| p * q).sum();
    for p in &mut phi {
        *p /= pairing;
    }
    // Rayleigh quotient ⟨φ̃, Aφ⟩ / ⟨φ̃, φ⟩ with ⟨φ̃, φ⟩ = 1.
    let lambda: f64 = (0..n)
        .map(|i| phi_tilde[i] * (0..n).map(|j| a[i][j] * phi[j]).sum::<f64>())
        .sum();
    Ok(EigenPair { phi, phi_tilde, lambda })
}

// ---------------------------------------------------------------------------
// Built-in models and the JSON model file.

/// Single-type binary splitting: at rate `γ` a particle dies leaving zero or
/// two children with probability ½ each.
pub fn binary(gamma: f64) -> Result<ModelSpec> {
    build_model(RawModel {
        name: format!("binary(gamma={gamma})"),
        space: StateSpace::FiniteSet { size: 1 },
        motion: MotionSpec::none(1),
        gamma: vec![gamma],
        offspring: vec![vec![
            OffspringEntry { p: 0.5, children: vec![] },
            OffspringEntry { p: 0.5, children: vec![0, 0] },
        ]],
    })
}

/// Two types with non-local branching and a non-constant eigenfunction.
///
/// Type 0 is locally subcritical and places one child of each type; type 1 is
/// locally supercritical. Migration 0→1 at rate ¼ and 1→0 at rate 1 balance
/// the two so that `φ ∝ (1, 2)` and `φ̃ = (½, ½)`.
pub fn two_type() -> Result<ModelSpec> {
    build_model(RawModel {
        name: "two-type".into(),
        space: StateSpace::FiniteSet { size: 2 },
        motion: MotionSpec::new(2, &[(0, 1, 0.25), (1, 0, 1.0)], vec![0.0, 0.0])?,
        gamma: vec![1.0, 1.0],
        offspring: vec![
            vec![
                OffspringEntry { p: 0.75, children: vec![] },
                OffspringEntry { p: 0.25, children: vec![0, 1] },
            ],
            vec![
                OffspringEntry { p: 0.25, children: vec![] },
                OffspringEntry { p: 0.75, children: vec![1, 1] },
            ],
        ],
    })
}

/// Branching random walk on a discretised circle with non-local offspring
/// placement. `φ ≡ 1` and `φ̃` is uniform by symmetry.
pub fn torus(resolution: usize, walk_rate: f64) -> Result<ModelSpec> {
    let n = resolution;
    let offspring = (0..n)
        .map(|x| {
            vec![
                OffspringEntry { p: 0.5, children: vec![] },
                OffspringEntry { p: 0.25, children: vec![x, x] },
                OffspringEntry { p: 0.25, children: vec![(x + n - 1) % n, (x + 1) % n] },
            ]
        })
        .collect();
    build_model(RawModel {
        name: format!("torus(resolution={n})"),
        space: StateSpace::Torus { resolution: n },
        motion: MotionSpec::torus_walk(n, walk_rate)?,
        gamma: vec![1.0; n],
        offspring,
    })
}

/// Built-in model by name: `binary`, `two-type` or `torus`.
pub fn builtin(name: &str, gamma: f64) -> Result<ModelSpec> {
    match name {
        "binary" => binary(gamma),
        "two-type" | "two_type" => two_type(),
        "torus" => torus(16, 1.0),
        other => Err(Error::InvalidModel(format!(
            "unknown built-in model `{other}` (expected binary, two-type or torus)"
        ))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StatesField {
    Count(usize),
    Space(StateSpace),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionFile {
    #[serde(default)]
    rates: Vec<(usize, usize, f64)>,
    #[serde(default)]
    walk_rate: Option<f64>,
    #[serde(default)]
    killing: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    states: StatesField,
    #[serde(default)]
    motion: Option<MotionFile>,
    gamma: Vec<f64>,
    offspring: Vec<Vec<OffspringEntry>>,
}

impl RawModel {
    /// Parses the JSON model file format documented in the README.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let space = match file.states {
            StatesField::Count(size) => StateSpace::FiniteSet { size },
            StatesField::Space(s) => s,
        };
        let size = space.size();
        let motion = match file.motion {
            None => MotionSpec::none(size),
            Some(m) => {
                let killing = m.killing.unwrap_or_else(|| vec![0.0; size]);
                let mut rates = m.rates;
                if let Some(w) = m.walk_rate {
                    if !matches!(space, StateSpace::Torus { .. }) {
                        return Err(Error::InvalidModel("walk_rate requires a torus state space".into()));
                    }
                    let walk = MotionSpec::torus_walk(size, w)?;
                    for x in 0..size {
                        rates.extend(walk.jumps(x).iter().map(|&(y, r)| (x, y, r)));
                    }
                }
                MotionSpec::new(size, &rates, killing)?
            }
        };
        Ok(RawModel { name: file.name, space, motion, gamma: file.gamma, offspring: file.offspring })
    }
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    build_model(RawModel::from_json(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    /// Two-state chain with constant table, used for formula checks.
    fn chain(phi_flat: bool) -> ModelSpec {
        // q(0,1) = q(1,0) = 1 with identical binary tables keeps φ constant.
        let _ = phi_flat;
        build_model(RawModel {
            name: "chain".into(),
            space: StateSpace::FiniteSet { size: 2 },
            motion: MotionSpec::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], vec![0.0; 2]).unwrap(),
            gamma: vec![1.0, 1.0],
            offspring: vec![
                vec![
                    OffspringEntry { p: 0.5, children: vec![] },
                    OffspringEntry { p: 0.5, children: vec![0, 1] },
                ],
                vec![
                    OffspringEntry { p: 0.5, children: vec![] },
                    OffspringEntry { p: 0.5, children: vec![1, 0] },
                ],
            ],
        })
        .unwrap()
    }

    #[test]
    fn binary_offspring_mean_and_variance() {
        let m = binary(1.0).unwrap();
        assert!(close(offspring_mean(&m, &[1.0], 0).unwrap(), 1.0));
        assert!(close(offspring_mean(&m, &[0.0], 0).unwrap(), 0.0));
        assert!(close(variance_functional(&m, &[1.0], 0).unwrap(), 1.0));
        // E = 2, E[Z²] = ½·16 = 8, var = 4.
        assert!(close(variance_functional(&m, &[2.0], 0).unwrap(), 4.0));
    }

    #[test]
    fn two_type_table_enumeration() {
        // States 1,2 of the worked example map to indices 0,1 here.
        let m = build_model(RawModel {
            name: "enum".into(),
            space: StateSpace::FiniteSet { size: 2 },
            motion: MotionSpec::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], vec![0.0; 2]).unwrap(),
            gamma: vec![1.0, 1.0],
            offspring: vec![
                vec![
                    OffspringEntry { p: 0.5, children: vec![] },
                    OffspringEntry { p: 0.5, children: vec![1, 1] },
                ],
                vec![
                    OffspringEntry { p: 0.5, children: vec![] },
                    OffspringEntry { p: 0.5, children: vec![0, 0] },
                ],
            ],
        })
        .unwrap();
        assert!(close(offspring_mean(&m, &[1.0, 3.0], 0).unwrap(), 3.0));
        assert!(matches!(offspring_mean(&m, &[1.0, 3.0], 2), Err(Error::InvalidState { .. })));
    }

    #[test]
    fn deterministic_table_has_zero_variance() {
        let m = torus(4, 1.0).unwrap();
        let table = [OffspringEntry { p: 1.0, children: vec![0, 1] }];
        assert_eq!(variance_unchecked(&table, &[1.0, 2.0, 3.0, 4.0]), 0.0);
        assert!(variance_functional(&m, m.phi(), 0).unwrap() > 0.0);
    }

    #[test]
    fn carre_du_champ_formula() {
        let motion = MotionSpec::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], vec![0.0; 2]).unwrap();
        assert!(close(carre_unchecked(&motion, &[1.0, 2.0], 0), 1.0));
        assert!(close(carre_unchecked(&motion, &[3.0, 3.0], 1), 0.0));
        let killed = MotionSpec::new(2, &[(0, 1, 1.0)], vec![0.5, 0.0]).unwrap();
        // 1·(2−1)² + ½·1².
        assert!(close(carre_unchecked(&killed, &[1.0, 2.0], 0), 1.5));
        let m = chain(true);
        assert!(close(carre_du_champ(&m, 0).unwrap(), 0.0));
    }

    #[test]
    fn binary_constants() {
        let m1 = binary(1.0).unwrap();
        assert!(close(qv_integrand(&m1, 0).unwrap(), 1.0));
        assert!(close(sigma2(&m1), 1.0));
        assert!(close(m1.branching_constant(), 1.0));
        let m2 = binary(2.0).unwrap();
        assert!(close(sigma2(&m2), 2.0));
        assert!(close(m2.branching_constant(), 2.0));
        assert!(close(m2.unweighted_variance_constant(), 1.0));
        assert_eq!(m1.phi(), &[1.0]);
        assert_eq!(m1.phi_tilde(), &[1.0]);
        assert_eq!(m1.eigen().lambda, 0.0);
    }

    #[test]
    fn two_type_eigenpair_and_constants() {
        let m = two_type().unwrap();
        let phi = m.phi();
        let tilde = m.phi_tilde();
        assert!((phi[0] - 2.0 / 3.0).abs() < 1e-10, "{phi:?}");
        assert!((phi[1] - 4.0 / 3.0).abs() < 1e-10);
        assert!((tilde[0] - 0.5).abs() < 1e-10);
        // Exact values from the tables with φ = (2/3, 4/3).
        assert!((m.branching_constant() - 25.0 / 24.0).abs() < 1e-9);
        assert!((m.qv(0) - 8.0 / 9.0).abs() < 1e-9);
        assert!((m.qv(1) - 20.0 / 9.0).abs() < 1e-9);
        assert!((sigma2(&m) - 14.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn generator_criticality_holds_for_builtins() {
        for m in [binary(1.0).unwrap(), binary(3.0).unwrap(), two_type().unwrap(), torus(12, 0.7).unwrap()] {
            for x in 0..m.size() {
                assert!(m.first_moment_generator(m.phi(), x).abs() < CRITICALITY_TOL);
                assert!(carre_du_champ(&m, x).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn subcritical_input_is_rejected() {
        let err = build_model(RawModel {
            name: "sub".into(),
            space: StateSpace::FiniteSet { size: 1 },
            motion: MotionSpec::none(1),
            gamma: vec![1.0],
            offspring: vec![vec![
                OffspringEntry { p: 0.6, children: vec![] },
                OffspringEntry { p: 0.4, children: vec![0, 0] },
            ]],
        })
        .unwrap_err();
        match err {
            Error::NonCritical { lambda } => assert!((lambda + 0.2).abs() < 1e-9),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn single_child_litter_rejected() {
        let err = OffspringSpec::new(
            vec![1.0],
            vec![vec![
                OffspringEntry { p: 0.5, children: vec![0] },
                OffspringEntry { p: 0.5, children: vec![] },
            ]],
        );
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn reducible_input_is_rejected() {
        let err = build_model(RawModel {
            name: "split".into(),
            space: StateSpace::FiniteSet { size: 2 },
            motion: MotionSpec::none(2),
            gamma: vec![1.0, 1.0],
            offspring: vec![
                vec![
                    OffspringEntry { p: 0.5, children: vec![] },
                    OffspringEntry { p: 0.5, children: vec![0, 0] },
                ],
                vec![
                    OffspringEntry { p: 0.5, children: vec![] },
                    OffspringEntry { p: 0.5, children: vec![1, 1] },
                ],
            ],
        });
        assert!(matches!(err, Err(Error::Reducible(_))));
    }

    /// Independent check of the two-type eigenpair: power iteration on the
    /// mean matrix `M` of the embedded branching structure.
    #[test]
    fn two_type_matches_power_iteration_oracle() {
        let m = two_type().unwrap();
        // Dense generator written out by hand from the tables.
        let a = [[-1.0, 0.5], [1.0, -0.5]];
        let mut v = [1.0, 1.0];
        for _ in 0..10_000 {
            let w = [v[0] + 0.1 * (a[0][0] * v[0] + a[0][1] * v[1]), v[1] + 0.1 * (a[1][0] * v[0] + a[1][1] * v[1])];
            let s = w[0] + w[1];
            v = [w[0] / s, w[1] / s];
        }
        let ratio = m.phi()[1] / m.phi()[0];
        assert!((v[1] / v[0] - ratio).abs() < 1e-10);
        assert!(m.phi().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn model_file_round_trip() {
        let text = r#"{
            "name": "two",
            "states": 2,
            "motion": {"rates": [[0, 1, 0.25], [1, 0, 1.0]]},
            "gamma": [1, 1],
            "offspring": [
                [{"p": 0.75, "children": []}, {"p": 0.25, "children": [0, 1]}],
                [{"p": 0.25, "children": []}, {"p": 0.75, "children": [1, 1]}]
            ]
        }"#;
        let m = build_model(RawModel::from_json(text).unwrap()).unwrap();
        let reference = two_type().unwrap();
        assert!((sigma2(&m) - sigma2(&reference)).abs() < 1e-12);

        let torus_text = r#"{"name": "ring", "states": {"torus": {"resolution": 5}},
            "motion": {"walk_rate": 1.0}, "gamma": [1,1,1,1,1],
            "offspring": [[{"p":0.5,"children":[]},{"p":0.5,"children":[0,0]}],
                          [{"p":0.5,"children":[]},{"p":0.5,"children":[1,1]}],
                          [{"p":0.5,"children":[]},{"p":0.5,"children":[2,2]}],
                          [{"p":0.5,"children":[]},{"p":0.5,"children":[3,3]}],
                          [{"p":0.5,"children":[]},{"p":0.5,"children":[4,4]}]]}"#;
        let ring = build_model(RawModel::from_json(torus_text).unwrap()).unwrap();
        assert!(ring.phi().iter().all(|p| (p - 1.0).abs() < 1e-10));

        let bad = r#"{"name": "x", "states": 1, "gama": [1], "gamma": [1], "offspring": [[]]}"#;
        let msg = RawModel::from_json(bad).unwrap_err().to_string();
        assert!(msg.contains("gama"), "{msg}");
    }
}
