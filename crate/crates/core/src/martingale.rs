//! Exploration martingales.
//!
//! Along the depth-first exploration,
//!
//! ```text
//! M_t = φ(ζ_t) + Σ_{w ∈ D_t} φ(X_w(b_w)) − (I_t − 1) φ(x)
//! m_t = φ(ζ_t) − φ(X_{v_t}(b_{v_t})) − ∫₀^t (Lφ)(ζ_s) ds + Σ_{w ∈ E_t} (φ(X_w(d_w)) − φ(X_w(b_w)))
//! ```
//!
//! where `D_t` are the discovered but not yet visited particles, `E_t` the
//! explored ones and `I_t` the index of the tree being visited. Both are
//! stored at their breakpoints (segment starts and motion jumps); between
//! breakpoints `M` is constant and `m` and the quadratic-variation integral
//! `∫ f(ζ_s) ds` are linear, so evaluation at any time is exact.

use std::io::Write;

use crate::error::Result;
use crate::exploration::ExplorationPath;
use crate::genealogy::{Label, Tree};
use crate::model::ModelSpec;

const NO_STATE: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct MartingalePath {
    times: Vec<f64>,
    big: Vec<f64>,
    small: Vec<f64>,
    qv: Vec<f64>,
    /// State `ζ` right after each breakpoint, `NO_STATE` after the end.
    states: Vec<u32>,
    phi: Vec<f64>,
    l_phi: Vec<f64>,
    f: Vec<f64>,
    /// `M̂^d` at the first visit of each segment: the φ-mass of `D`.
    vertex_md: Vec<f64>,
    root_phi: f64,
    length: f64,
    single_tree: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MartingalePoint {
    pub big_m: f64,
    pub small_m: f64,
    pub qv: f64,
    /// `φ(ζ_t)` (zero once the exploration has ended).
    pub phi_zeta: f64,
}

impl MartingalePoint {
    /// `M̂^d_t = M̂_t − φ(ζ_t)`; meaningful for single trees.
    pub fn hat_d(&self) -> f64 {
        self.big_m - self.phi_zeta
    }
}

pub fn compute_martingales(path: &ExplorationPath<'_>, model: &ModelSpec) -> MartingalePath {
    let phi = model.phi();
    let segs = path.segments();
    let mut out = MartingalePath {
        times: Vec::with_capacity(segs.len() + 1),
        big: Vec::with_capacity(segs.len() + 1),
        small: Vec::with_capacity(segs.len() + 1),
        qv: Vec::with_capacity(segs.len() + 1),
        states: Vec::with_capacity(segs.len() + 1),
        phi: phi.to_vec(),
        l_phi: (0..model.size()).map(|x| model.l_phi(x)).collect(),
        f: model.qv_values().to_vec(),
        vertex_md: Vec::with_capacity(segs.len()),
        root_phi: path.trees().first().map_or(0.0, |t| phi[t.root_state]),
        length: path.length(),
        single_tree: !path.is_forest(),
    };

    let mut discovered = 0.0;
    let mut root_term = 0.0;
    let mut explored = 0.0; // Σ_{E_t} (φ(X_w(d_w)) − φ(X_w(b_w)))
    let mut l_int = 0.0;
    let mut qv = 0.0;

    for (k, seg) in segs.iter().enumerate() {
        let tree: &Tree = path.tree_of(k);
        let v = seg.record as usize;
        let rec = &tree.records[v];
        let b_phi = phi[rec.birth_state as usize];
        if rec.parent().is_none() {
            root_term = f64::from(seg.tree) * phi[tree.root_state];
        } else {
            discovered -= b_phi;
        }
        out.vertex_md.push(discovered);

        let mut x = rec.birth_state as usize;
        let mut last = rec.birth_time;
        out.push(seg.sigma, phi[x] + discovered - root_term, explored - l_int, qv, x as u32);
        for &(jt, y) in tree.jumps(v) {
            let dt = jt - last;
            l_int += model.l_phi(x) * dt;
            qv += model.qv(x) * dt;
            x = y as usize;
            last = jt;
            let t = seg.sigma + (jt - rec.birth_time);
            out.push(t, phi[x] + discovered - root_term, explored + phi[x] - b_phi - l_int, qv, x as u32);
        }
        let dt = rec.death_time - last;
        l_int += model.l_phi(x) * dt;
        qv += model.qv(x) * dt;
        let d_phi = if rec.killed { 0.0 } else { phi[rec.death_state as usize] };
        explored += d_phi - b_phi;
        if let Some(litter) = rec.litter() {
            discovered += model.table(rec.death_state as usize)[litter].sum(phi);
        }
    }
    out.push(path.length(), discovered - root_term, explored - l_int, qv, NO_STATE);
    out
}

impl MartingalePath {
    fn push(&mut self, t: f64, big: f64, small: f64, qv: f64, state: u32) {
        // Zero-length segments produce repeated times; keep the latest value.
        if self.times.last() == Some(&t) {
            self.times.pop();
            self.big.pop();
            self.small.pop();
            self.qv.pop();
            self.states.pop();
        }
        self.times.push(t);
        self.big.push(big);
        self.small.push(small);
        self.qv.push(qv);
        self.states.push(state);
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn root_phi(&self) -> f64 {
        self.root_phi
    }

    pub fn is_single_tree(&self) -> bool {
        self.single_tree
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.times
    }

    /// Values at exploration time `t ∈ [0, L]` (right-continuous). Times past
    /// the end return the terminal values.
    pub fn at(&self, t: f64) -> MartingalePoint {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        let dt = (t - self.times[k]).max(0.0);
        let state = self.states[k];
        if state == NO_STATE {
            return MartingalePoint { big_m: self.big[k], small_m: self.small[k], qv: self.qv[k], phi_zeta: 0.0 };
        }
        let x = state as usize;
        MartingalePoint {
            big_m: self.big[k],
            small_m: self.small[k] - self.l_phi[x] * dt,
            qv: self.qv[k] + self.f[x] * dt,
            phi_zeta: self.phi[x],
        }
    }

    /// `M̂^d` at the first visit of segment `seg`, i.e. `M̂(v)` for that
    /// particle.
    pub fn vertex_md(&self, seg: usize) -> f64 {
        self.vertex_md[seg]
    }

    /// Largest absolute jump of `M` at breakpoints in `(0, until]`.
    pub fn max_jump(&self, until: f64) -> f64 {
        let mut best: f64 = 0.0;
        for k in 1..self.times.len() {
            if self.times[k] > until {
                break;
            }
            best = best.max((self.big[k] - self.big[k - 1]).abs());
        }
        best
    }

    /// Writes `(t, M_t, m_t, QV_t)` at every breakpoint.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,M,m,qv")?;
        for k in 0..self.times.len() {
            writeln!(out, "{},{},{},{}", self.times[k], self.big[k], self.small[k], self.qv[k])?;
        }
        Ok(())
    }
}

/// `M̂(u) = Σ_{w ∈ E(u)} φ(X_w(b_w))`, summed over the younger siblings of
/// `u` and of each of its ancestors. Siblings are read off the parents'
/// litters, so the value is exact even when the tree was cut by a budget.
pub fn vertex_m(tree: &Tree, model: &ModelSpec, u: &Label) -> Result<f64> {
    let v = tree.find(u)?;
    Ok(vertex_m_index(tree, model, v))
}

pub fn vertex_m_index(tree: &Tree, model: &ModelSpec, mut v: usize) -> f64 {
    let phi = model.phi();
    let mut total = 0.0;
    while let Some(p) = tree.records[v].parent() {
        let parent = &tree.records[p];
        let litter = parent.litter().expect("a parent has a litter");
        let children = &model.table(parent.death_state as usize)[litter].children;
        let i = tree.records[v].sibling_index as usize;
        total += children[i + 1..].iter().map(|&c| phi[c]).sum::<f64>();
        v = p;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::{explore, explore_forest};
    use crate::genealogy::{simulate_forest, simulate_tree, testing, SimConfig};
    use crate::model::{binary, two_type};
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn starts_at_root_phi() {
        let m = two_type().unwrap();
        let t = simulate_tree(&m, 1, &SimConfig::with_horizon(10.0, 3)).unwrap();
        let p = explore(&t);
        let mp = compute_martingales(&p, &m);
        let start = mp.at(0.0);
        assert_eq!(start.big_m, m.phi()[1]);
        assert_eq!(start.small_m, 0.0);
        assert_eq!(start.qv, 0.0);
    }

    #[test]
    fn childless_particle_tracks_phi() {
        let m = binary(1.0).unwrap();
        let t = testing::stick(3.0);
        let p = explore(&t);
        let mp = compute_martingales(&p, &m);
        for s in [0.0, 1.0, 2.9] {
            assert_eq!(mp.at(s).big_m, 1.0);
            assert!((mp.at(s).qv - s).abs() < 1e-12);
        }
    }

    #[test]
    fn two_level_binary_tree_by_hand() {
        let m = binary(1.0).unwrap();
        // Root dies at 1 with two childless children.
        let t = testing::cherry(1.0, 2.0, 3.0);
        let p = explore(&t);
        let mp = compute_martingales(&p, &m);
        assert_eq!(mp.at(0.5).big_m, 1.0);
        // First child current, second discovered.
        assert_eq!(mp.at(1.0).big_m, 2.0);
        assert_eq!(mp.vertex_md(1), 1.0);
        assert_eq!(mp.at(3.5).big_m, 1.0);
        assert_eq!(mp.vertex_md(2), 0.0);
        assert_eq!(mp.at(6.0).big_m, 0.0);
        assert_eq!(mp.max_jump(6.0), 1.0);
    }

    #[test]
    fn vertex_m_matches_discovered_mass_at_first_visit() {
        let m = two_type().unwrap();
        for seed in 0..20 {
            let t = simulate_tree(&m, 0, &SimConfig { horizon: Some(40.0), seed, ..SimConfig::default() }).unwrap();
            let p = explore(&t);
            let mp = compute_martingales(&p, &m);
            for v in 0..t.len() {
                let direct = vertex_m(&t, &m, &t.label(v)).unwrap();
                assert!((direct - mp.vertex_md(v)).abs() < 1e-9);
                let sigma = p.segments()[v].sigma;
                if p.segments()[v].tau() > sigma {
                    assert!((mp.at(sigma).hat_d() - direct).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn vertex_m_on_a_litter_of_two() {
        let m = binary(1.0).unwrap();
        let t = testing::cherry(1.0, 1.0, 1.0);
        assert_eq!(vertex_m(&t, &m, &Label::root(0)).unwrap(), 0.0);
        assert_eq!(vertex_m(&t, &m, &"0:0".parse().unwrap()).unwrap(), 1.0);
        assert_eq!(vertex_m(&t, &m, &"0:1".parse().unwrap()).unwrap(), 0.0);
        assert!(vertex_m(&t, &m, &"0:2".parse().unwrap()).is_err());
    }

    #[test]
    fn forest_root_correction() {
        let m = binary(1.0).unwrap();
        let mut rng = stream(9, 0);
        let f = simulate_forest(&m, 0, 200.0, &mut rng).unwrap();
        let p = explore_forest(&f);
        let mp = compute_martingales(&p, &m);
        // With φ ≡ 1, M is the Łukasiewicz-type count: current + discovered
        // minus the number of completed trees; it never drops below 1 − I.
        for (k, seg) in p.segments().iter().enumerate() {
            let val = mp.at(seg.sigma).big_m;
            assert!(val >= 1.0 - f64::from(seg.tree) - 1e-9, "segment {k}");
        }
        // QV integral equals elapsed time for f ≡ 1.
        let mut r = stream(1, 1);
        for _ in 0..100 {
            let s = r.random::<f64>() * p.length();
            assert!((mp.at(s).qv - s).abs() < 1e-9);
        }
    }
}
