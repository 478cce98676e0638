//! Exact event-driven simulation with full Ulam-Harris genealogy.
//!
//! Particles are simulated one at a time in depth-first (lexicographic)
//! order: a particle's whole life is drawn from competing exponential clocks
//! (motion jumps, killing, branching), then its children are pushed on a
//! stack first-born last so that the first child is simulated next. Records
//! therefore come out already sorted for the exploration, and a length budget
//! simply stops the traversal, leaving an exact depth-first prefix.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{stream, SimRng};

pub const NO_PARENT: u32 = u32::MAX;
const NO_LITTER: u32 = u32::MAX;

/// Ulam-Harris label: tree index within a forest plus the word of child
/// indices from the root. The derived order is the lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Label {
    pub tree: u32,
    pub word: Vec<u32>,
}

impl Label {
    pub fn root(tree: u32) -> Self {
        Self { tree, word: Vec::new() }
    }

    pub fn parent(&self) -> Option<Label> {
        let mut word = self.word.clone();
        word.pop().map(|_| Label { tree: self.tree, word })
    }

    pub fn child(&self, i: u32) -> Label {
        let mut word = self.word.clone();
        word.push(i);
        Label { tree: self.tree, word }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.tree)?;
        if self.word.is_empty() {
            return write!(f, "root");
        }
        for (k, i) in self.word.iter().enumerate() {
            if k > 0 {
                write!(f, ".")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    /// Parses `tree:root` or `tree:i.j.k`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownLabel(s.to_string());
        let (tree, word) = s.split_once(':').ok_or_else(bad)?;
        let tree = tree.parse().map_err(|_| bad())?;
        if word == "root" || word.is_empty() {
            return Ok(Label::root(tree));
        }
        let word = word
            .split('.')
            .map(|w| w.parse::<u32>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Ok(Label { tree, word })
    }
}

/// Compact per-particle record. Labels are reconstructed on demand from the
/// parent links; the motion skeleton lives in the tree's jump arena.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleRecord {
    pub parent: u32,
    pub sibling_index: u32,
    pub depth: u32,
    pub birth_time: f64,
    pub death_time: f64,
    pub birth_state: u32,
    pub death_state: u32,
    pub killed: bool,
    pub horizon_censored: bool,
    pub n_children: u32,
    /// Index of the offspring-table entry drawn at death.
    pub litter: u32,
    /// Exclusive end of this particle's subtree in the record list.
    pub subtree_end: u32,
    jumps: (u32, u32),
}

impl ParticleRecord {
    pub fn lifetime(&self) -> f64 {
        self.death_time - self.birth_time
    }

    pub fn parent(&self) -> Option<usize> {
        (self.parent != NO_PARENT).then_some(self.parent as usize)
    }

    pub fn litter(&self) -> Option<usize> {
        (self.litter != NO_LITTER).then_some(self.litter as usize)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tree {
    pub tree_index: u32,
    pub root_state: usize,
    pub records: Vec<ParticleRecord>,
    jumps: Vec<(f64, u32)>,
    pub horizon: Option<f64>,
    /// Some particle was still alive at the horizon.
    pub horizon_censored: bool,
    /// The length budget stopped the traversal before the tree was complete.
    pub budget_censored: bool,
    /// Particles discovered but not simulated because of the budget.
    pub pending: usize,
    /// Earliest birth time among pending particles.
    pub censor_time: Option<f64>,
    pub total_length: f64,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_censored(&self) -> bool {
        self.horizon_censored || self.budget_censored
    }

    /// `ζ = inf{t : N_t = 0}`, known only for complete trees.
    pub fn extinction_time(&self) -> Option<f64> {
        if self.is_censored() {
            None
        } else {
            Some(self.records.iter().map(|r| r.death_time).fold(0.0, f64::max))
        }
    }

    /// Motion skeleton of record `v`: `(time, new state)` at each jump.
    pub fn jumps(&self, v: usize) -> &[(f64, u32)] {
        let (a, b) = self.records[v].jumps;
        &self.jumps[a as usize..b as usize]
    }

    /// State of particle `v` at time `t ∈ [b_v, d_v]` (piecewise constant,
    /// right-continuous).
    pub fn state_at(&self, v: usize, t: f64) -> usize {
        let jumps = self.jumps(v);
        let k = jumps.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            self.records[v].birth_state as usize
        } else {
            jumps[k - 1].1 as usize
        }
    }

    pub fn label(&self, v: usize) -> Label {
        let mut word = Vec::with_capacity(self.records[v].depth as usize);
        let mut w = v;
        while let Some(p) = self.records[w].parent() {
            word.push(self.records[w].sibling_index);
            w = p;
        }
        word.reverse();
        Label { tree: self.tree_index, word }
    }

    /// Record indices of the children of `v` that were simulated.
    pub fn children(&self, v: usize) -> Vec<usize> {
        let end = self.records[v].subtree_end as usize;
        let mut out = Vec::new();
        let mut c = v + 1;
        while c < end {
            out.push(c);
            c = self.records[c].subtree_end as usize;
        }
        out
    }

    pub fn find(&self, label: &Label) -> Result<usize> {
        let unknown = || Error::UnknownLabel(label.to_string());
        if label.tree != self.tree_index || self.records.is_empty() {
            return Err(unknown());
        }
        let mut v = 0usize;
        for &i in &label.word {
            let end = self.records[v].subtree_end as usize;
            let mut c = v + 1;
            loop {
                if c >= end {
                    return Err(unknown());
                }
                if self.records[c].sibling_index == i {
                    break;
                }
                c = self.records[c].subtree_end as usize;
            }
            v = c;
        }
        Ok(v)
    }

    /// Indices of the particles alive at `t`, see [`population_at`].
    pub fn alive_at(&self, t: f64) -> Result<Vec<usize>> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::InvalidConfig(format!("negative query time {t}")));
        }
        if let Some(h) = self.horizon {
            if t > h {
                return Err(Error::CensoredQuery { time: t });
            }
        }
        if let Some(c) = self.censor_time {
            if t >= c {
                return Err(Error::CensoredQuery { time: t });
            }
        }
        Ok(self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.birth_time <= t && (t < r.death_time || (r.horizon_censored && t <= r.death_time))
            })
            .map(|(v, _)| v)
            .collect())
    }

    /// `⟨g, X_t⟩`.
    pub fn functional_at(&self, g: &[f64], t: f64) -> Result<f64> {
        Ok(self.alive_at(t)?.into_iter().map(|v| g[self.state_at(v, t)]).sum())
    }

    /// `∫₀^t ⟨g, X_s⟩ ds` from exact per-particle occupation.
    pub fn occupation(&self, g: &[f64], t: f64) -> Result<f64> {
        if let Some(h) = self.horizon {
            if t > h {
                return Err(Error::CensoredQuery { time: t });
            }
        }
        if let Some(c) = self.censor_time {
            if t > c {
                return Err(Error::CensoredQuery { time: t });
            }
        }
        let mut total = 0.0;
        for (v, r) in self.records.iter().enumerate() {
            if r.birth_time >= t {
                continue;
            }
            let end = r.death_time.min(t);
            let mut s = r.birth_time;
            let mut x = r.birth_state as usize;
            for &(jt, y) in self.jumps(v) {
                if jt >= end {
                    break;
                }
                total += g[x] * (jt - s);
                s = jt;
                x = y as usize;
            }
            total += g[x] * (end - s);
        }
        Ok(total)
    }

    /// Newline-delimited JSON dump, one record per line in depth-first order.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            label: String,
            birth_time: f64,
            death_time: f64,
            birth_state: u32,
            death_state: u32,
            n_children: u32,
            killed: bool,
            horizon_censored: bool,
            jumps: &'a [(f64, u32)],
        }
        for (v, r) in self.records.iter().enumerate() {
            let line = Line {
                label: self.label(v).to_string(),
                birth_time: r.birth_time,
                death_time: r.death_time,
                birth_state: r.birth_state,
                death_state: r.death_state,
                n_children: r.n_children,
                killed: r.killed,
                horizon_censored: r.horizon_censored,
                jumps: self.jumps(v),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Particles alive at the horizon are censored there.
    pub horizon: Option<f64>,
    /// Stop the depth-first traversal once this much length has been explored.
    pub length_budget: Option<f64>,
    pub seed: u64,
    /// Rejection attempts allowed when conditioning on survival.
    pub max_attempts: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { horizon: None, length_budget: None, seed: 0, max_attempts: 1_000_000 }
    }
}

impl SimConfig {
    pub fn with_horizon(horizon: f64, seed: u64) -> Self {
        Self { horizon: Some(horizon), seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::InvalidConfig(format!("horizon must be positive, got {h}")));
            }
        }
        if let Some(b) = self.length_budget {
            if !(b > 0.0) {
                return Err(Error::InvalidConfig(format!("length budget must be positive, got {b}")));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Pending {
    pub parent: u32,
    pub sibling: u32,
    pub depth: u32,
    pub time: f64,
    pub state: u32,
}

/// How a particle's life ended.
pub(crate) enum Fate {
    Censored,
    Killed,
    Branched(usize),
}

/// Incremental depth-first tree writer shared by the plain, conditioned and
/// spine simulators.
pub(crate) struct Builder<'m> {
    pub model: &'m ModelSpec,
    pub tree: Tree,
    pub budget: Option<f64>,
}

impl<'m> Builder<'m> {
    pub fn new(model: &'m ModelSpec, root_state: usize, horizon: Option<f64>, budget: Option<f64>) -> Self {
        let tree = Tree { root_state, horizon, ..Tree::default() };
        Self { model, tree, budget }
    }

    pub fn exhausted(&self) -> bool {
        self.budget.is_some_and(|b| self.tree.total_length >= b)
    }

    pub fn open(&mut self, p: Pending) -> usize {
        let start = self.tree.jumps.len() as u32;
        self.tree.records.push(ParticleRecord {
            parent: p.parent,
            sibling_index: p.sibling,
            depth: p.depth,
            birth_time: p.time,
            death_time: p.time,
            birth_state: p.state,
            death_state: p.state,
            killed: false,
            horizon_censored: false,
            n_children: 0,
            litter: NO_LITTER,
            subtree_end: 0,
            jumps: (start, start),
        });
        self.tree.records.len() - 1
    }

    pub fn push_jump(&mut self, v: usize, t: f64, y: usize) {
        self.tree.jumps.push((t, y as u32));
        self.tree.records[v].jumps.1 = self.tree.jumps.len() as u32;
    }

    /// Runs the plain dynamics of record `v` from `(t, x)` until its death or
    /// the horizon.
    pub fn live(&mut self, v: usize, mut t: f64, mut x: usize, rng: &mut SimRng) -> Result<Fate> {
        let model = self.model;
        let horizon = self.tree.horizon;
        let fate = loop {
            let rate = model.total_rate(x);
            let dt = if rate > 0.0 {
                rng.sample::<f64, _>(Exp1) / rate
            } else {
                f64::INFINITY
            };
            if let Some(h) = horizon {
                if t + dt >= h {
                    t = h;
                    break Fate::Censored;
                }
            }
            if !dt.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "a particle at state {x} never dies; a horizon is required"
                )));
            }
            t += dt;
            let mut u = rng.random::<f64>() * rate;
            let jumps = model.motion().jumps(x);
            let jump_rate = model.motion().jump_rate(x);
            if u < jump_rate {
                let mut y = jumps[jumps.len() - 1].0;
                for &(target, r) in jumps {
                    if u < r {
                        y = target;
                        break;
                    }
                    u -= r;
                }
                x = y;
                self.push_jump(v, t, y);
                continue;
            }
            u -= jump_rate;
            if u < model.motion().killing(x) {
                break Fate::Killed;
            }
            break Fate::Branched(model.pick_litter(x, rng.random()));
        };
        self.close(v, t, x, &fate);
        Ok(fate)
    }

    pub fn close(&mut self, v: usize, t: f64, x: usize, fate: &Fate) {
        let rec = &mut self.tree.records[v];
        rec.death_time = t;
        rec.death_state = x as u32;
        match *fate {
            Fate::Censored => {
                rec.horizon_censored = true;
                self.tree.horizon_censored = true;
            }
            Fate::Killed => rec.killed = true,
            Fate::Branched(k) => {
                rec.litter = k as u32;
                rec.n_children = self.model.table(x)[k].children.len() as u32;
            }
        }
        self.tree.total_length += t - rec.birth_time;
    }

    /// Pushes the children of `v` so that the first-born is popped first.
    pub fn push_children(&self, v: usize, stack: &mut Vec<Pending>) {
        let rec = &self.tree.records[v];
        let Some(k) = rec.litter() else { return };
        let children = &self.model.table(rec.death_state as usize)[k].children;
        for (i, &c) in children.iter().enumerate().rev() {
            stack.push(Pending {
                parent: v as u32,
                sibling: i as u32,
                depth: rec.depth + 1,
                time: rec.death_time,
                state: c as u32,
            });
        }
    }

    /// Simulates everything on `stack` depth-first. Returns `false` if the
    /// budget stopped the traversal (the stack then holds the pending set).
    pub fn drain(&mut self, stack: &mut Vec<Pending>, rng: &mut SimRng) -> Result<bool> {
        while let Some(&p) = stack.last() {
            if self.exhausted() {
                return Ok(false);
            }
            stack.pop();
            let v = self.open(p);
            self.live(v, p.time, p.state as usize, rng)?;
            self.push_children(v, stack);
        }
        Ok(true)
    }

    pub fn finish(mut self, stack: &[Pending]) -> Tree {
        if !stack.is_empty() {
            self.tree.budget_censored = true;
            self.tree.pending = stack.len();
            self.tree.censor_time = stack.iter().map(|p| p.time).reduce(f64::min);
        }
        fill_subtree_ends(&mut self.tree.records);
        self.tree
    }
}

fn fill_subtree_ends(records: &mut [ParticleRecord]) {
    let n = records.len();
    let mut open: Vec<usize> = Vec::new();
    for v in 0..n {
        while let Some(&top) = open.last() {
            if records[top].depth >= records[v].depth {
                records[top].subtree_end = v as u32;
                open.pop();
            } else {
                break;
            }
        }
        open.push(v);
    }
    for v in open {
        records[v].subtree_end = n as u32;
    }
}

fn root(x: usize) -> Pending {
    Pending { parent: NO_PARENT, sibling: 0, depth: 0, time: 0.0, state: x as u32 }
}

/// Simulates one tree from a single particle at `x`, drawing from the stream
/// `(cfg.seed, 0)`.
pub fn simulate_tree(model: &ModelSpec, x: usize, cfg: &SimConfig) -> Result<Tree> {
    simulate_tree_with(model, x, cfg, &mut stream(cfg.seed, 0))
}

/// As [`simulate_tree`] but with a caller-supplied stream.
pub fn simulate_tree_with(model: &ModelSpec, x: usize, cfg: &SimConfig, rng: &mut SimRng) -> Result<Tree> {
    model.check_state(x)?;
    cfg.validate()?;
    let mut b = Builder::new(model, x, cfg.horizon, cfg.length_budget);
    let mut stack = vec![root(x)];
    b.drain(&mut stack, rng)?;
    Ok(b.finish(&stack))
}

/// Particles alive at `t` with their states: `{v : b_v ≤ t < d_v}`. A
/// particle censored at the horizon counts as alive at the horizon itself.
pub fn population_at(tree: &Tree, t: f64) -> Result<Vec<(Label, usize)>> {
    Ok(tree.alive_at(t)?.into_iter().map(|v| (tree.label(v), tree.state_at(v, t))).collect())
}

/// i.i.d. trees from `x`, generated until their total length reaches
/// `length`. The last tree is a depth-first prefix cut by the remaining
/// budget, so the forest is explored exactly on `[0, length]`.
pub fn simulate_forest(model: &ModelSpec, x: usize, length: f64, rng: &mut SimRng) -> Result<Vec<Tree>> {
    model.check_state(x)?;
    if !(length > 0.0) {
        return Err(Error::InvalidConfig(format!("forest length must be positive, got {length}")));
    }
    let mut trees = Vec::new();
    let mut explored = 0.0;
    while explored < length {
        let mut b = Builder::new(model, x, None, Some(length - explored));
        b.tree.tree_index = trees.len() as u32;
        let mut stack = vec![root(x)];
        b.drain(&mut stack, rng)?;
        let tree = b.finish(&stack);
        explored += tree.total_length;
        trees.push(tree);
    }
    Ok(trees)
}

#[derive(Clone, Debug)]
pub struct Conditioned {
    pub tree: Tree,
    pub attempts: u64,
    /// Number of particles alive at the conditioning time.
    pub survivors: usize,
}

/// Samples a tree under `P(· | N_n > 0)` by rejection on `[0, n]`, then
/// continues the survivors (memoryless clocks) up to `cfg.horizon` or
/// extinction, subject to `cfg.length_budget`.
pub fn condition_on_survival(model: &ModelSpec, x: usize, n: f64, cfg: &SimConfig, rng: &mut SimRng) -> Result<Conditioned> {
    model.check_state(x)?;
    cfg.validate()?;
    if !(n > 0.0) {
        return Err(Error::InvalidConfig(format!("conditioning time must be positive, got {n}")));
    }
    if let Some(h) = cfg.horizon {
        if h < n {
            return Err(Error::InvalidConfig(format!("horizon {h} is before the conditioning time {n}")));
        }
    }
    for attempt in 1..=cfg.max_attempts {
        let mut b = Builder::new(model, x, Some(n), None);
        let mut stack = vec![root(x)];
        b.drain(&mut stack, rng)?;
        let first = b.finish(&stack);
        let survivors = first.records.iter().filter(|r| r.horizon_censored).count();
        if survivors == 0 {
            continue;
        }
        let tree = if cfg.horizon == Some(n) { first } else { continue_tree(model, first, cfg, rng)? };
        return Ok(Conditioned { tree, attempts: attempt, survivors });
    }
    Err(Error::RejectionBudgetExceeded { horizon: n, attempts: cfg.max_attempts })
}

/// Re-emits `first` in depth-first order, replacing each particle censored
/// at its horizon by its continued life and full subtree.
fn continue_tree(model: &ModelSpec, first: Tree, cfg: &SimConfig, rng: &mut SimRng) -> Result<Tree> {
    let mut b = Builder::new(model, first.root_state, cfg.horizon, cfg.length_budget);
    let mut remap = vec![NO_PARENT; first.records.len()];
    let mut stack: Vec<Pending> = Vec::new();
    for (old, r) in first.records.iter().enumerate() {
        if b.exhausted() {
            // Later phase-one particles become pending; only the earliest
            // birth matters for the censoring time.
            stack.push(Pending { parent: NO_PARENT, sibling: 0, depth: r.depth, time: r.birth_time, state: r.birth_state });
            continue;
        }
        let parent = r.parent().map_or(NO_PARENT, |p| remap[p]);
        let v = b.open(Pending { parent, sibling: r.sibling_index, depth: r.depth, time: r.birth_time, state: r.birth_state });
        remap[old] = v as u32;
        for &(t, y) in first.jumps(old) {
            b.push_jump(v, t, y as usize);
        }
        if r.horizon_censored {
            b.live(v, r.death_time, r.death_state as usize, rng)?;
            b.push_children(v, &mut stack);
            if !b.drain(&mut stack, rng)? {
                continue;
            }
        } else {
            let fate = if r.killed {
                Fate::Killed
            } else if let Some(k) = r.litter() {
                Fate::Branched(k)
            } else {
                Fate::Killed
            };
            b.close(v, r.death_time, r.death_state as usize, &fate);
        }
    }
    Ok(b.finish(&stack))
}

/// Hand-built trees with a single state, for tests and benchmarks.
pub mod testing {
    use super::*;

    /// Builds a tree from `(parent, lifetime)` pairs listed in depth-first
    /// order. Sibling indices follow listing order. Parents point at litter
    /// entry 1, which is the two-child litter of the built-in binary model.
    pub fn from_lifetimes(spec: &[(Option<usize>, f64)]) -> Tree {
        let mut tree = Tree::default();
        for (v, &(parent, life)) in spec.iter().enumerate() {
            let (birth, depth, sibling) = match parent {
                None => (0.0, 0, 0),
                Some(p) => {
                    assert!(p < v, "parents must precede children");
                    let sib = tree.records.iter().filter(|r| r.parent() == Some(p)).count();
                    let pr: &ParticleRecord = &tree.records[p];
                    (pr.death_time, pr.depth + 1, sib as u32)
                }
            };
            if let Some(p) = parent {
                tree.records[p].n_children += 1;
                tree.records[p].litter = 1;
            }
            tree.records.push(ParticleRecord {
                parent: parent.map_or(NO_PARENT, |p| p as u32),
                sibling_index: sibling,
                depth,
                birth_time: birth,
                death_time: birth + life,
                birth_state: 0,
                death_state: 0,
                killed: false,
                horizon_censored: false,
                n_children: 0,
                litter: NO_LITTER,
                subtree_end: 0,
                jumps: (0, 0),
            });
            tree.total_length += life;
        }
        fill_subtree_ends(&mut tree.records);
        tree
    }

    pub fn stick(lifetime: f64) -> Tree {
        from_lifetimes(&[(None, lifetime)])
    }

    /// Root of lifetime `a` with two childless children of lifetimes `b`, `c`.
    pub fn cherry(a: f64, b: f64, c: f64) -> Tree {
        from_lifetimes(&[(None, a), (Some(0), b), (Some(0), c)])
    }
}
