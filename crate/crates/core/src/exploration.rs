//! Depth-first exploration without backtracking.
//!
//! Particle `v` is explored during `[σ_v, τ_v)` with `τ_v − σ_v = d_v − b_v`,
//! in lexicographic order, and the height `h` climbs from `b_v` at unit slope
//! inside the segment. Because `h` only ever jumps down between segments, the
//! infimum of `h` over `[s, t]` is
//!
//! ```text
//! min( h_s , min{ b_k : segment k starts in (s, t] } )
//! ```
//!
//! which a sparse table over segment births answers in `O(1)`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::genealogy::{Label, Tree};
use crate::rmq::SparseTable;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub tree: u32,
    pub record: u32,
    pub sigma: f64,
    pub birth: f64,
    pub death: f64,
}

impl Segment {
    pub fn tau(&self) -> f64 {
        self.sigma + (self.death - self.birth)
    }

    pub fn height_at(&self, t: f64) -> f64 {
        self.birth + (t - self.sigma)
    }
}

/// Exploration of a tree or forest, borrowing the simulated trees.
#[derive(Clone, Debug)]
pub struct ExplorationPath<'a> {
    trees: &'a [Tree],
    segments: Vec<Segment>,
    births: SparseTable,
    offsets: Vec<usize>,
    length: f64,
}

/// Result of a distance query between exploration times `s` and `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeDistance {
    pub distance: f64,
    /// `inf_{u ∈ [s∧t, s∨t]} h_u`, the height of the most recent common
    /// ancestor.
    pub inf_height: f64,
    /// Exploration time at which the infimum is attained (earliest).
    pub argmin_time: f64,
    /// Segment index of the most recent common ancestor, `None` when the two
    /// points lie in different trees of a forest.
    pub mrca: Option<usize>,
}

pub fn explore(tree: &Tree) -> ExplorationPath<'_> {
    explore_forest(std::slice::from_ref(tree))
}

/// Concatenates the explorations of the trees in order.
pub fn explore_forest(trees: &[Tree]) -> ExplorationPath<'_> {
    let total: usize = trees.iter().map(Tree::len).sum();
    let mut segments = Vec::with_capacity(total);
    let mut sigma = 0.0;
    let mut offsets = Vec::with_capacity(trees.len());
    for (ti, tree) in trees.iter().enumerate() {
        offsets.push(segments.len());
        for (v, r) in tree.records.iter().enumerate() {
            segments.push(Segment {
                tree: ti as u32,
                record: v as u32,
                sigma,
                birth: r.birth_time,
                death: r.death_time,
            });
            sigma += r.lifetime();
        }
    }
    let births = SparseTable::new(segments.iter().map(|s| s.birth).collect());
    ExplorationPath { trees, segments, births, offsets, length: sigma }
}

impl<'a> ExplorationPath<'a> {
    /// Total length `L = Σ_v (d_v − b_v)`.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_forest(&self) -> bool {
        self.trees.len() > 1
    }

    pub fn trees(&self) -> &'a [Tree] {
        self.trees
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn births(&self) -> &SparseTable {
        &self.births
    }

    pub fn tree_of(&self, seg: usize) -> &'a Tree {
        &self.trees[self.segments[seg].tree as usize]
    }

    pub fn label(&self, seg: usize) -> Label {
        let s = &self.segments[seg];
        self.trees[s.tree as usize].label(s.record as usize)
    }

    /// Segment index for a (tree, record) pair.
    pub fn segment_of(&self, tree: usize, record: usize) -> usize {
        self.offsets[tree] + record
    }

    fn check(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t < self.length {
            Ok(())
        } else {
            Err(Error::OutOfRange { time: t, length: self.length })
        }
    }

    /// Index of the segment containing exploration time `t`.
    pub fn segment_at(&self, t: f64) -> Result<usize> {
        self.check(t)?;
        // The last segment starting at or before t; zero-length segments
        // share σ with their successor and are skipped automatically.
        Ok(self.segments.partition_point(|s| s.sigma <= t) - 1)
    }

    pub fn height(&self, t: f64) -> Result<f64> {
        let i = self.segment_at(t)?;
        Ok(self.segments[i].height_at(t))
    }

    /// `(v_t, h_t, ζ_t)`.
    pub fn height_and_state(&self, t: f64) -> Result<(Label, f64, usize)> {
        let i = self.segment_at(t)?;
        let seg = &self.segments[i];
        let h = seg.height_at(t);
        let state = self.trees[seg.tree as usize].state_at(seg.record as usize, h);
        Ok((self.label(i), h, state))
    }

    /// `d(s,t) = h_s + h_t − 2 inf_{[s∧t, s∨t]} h`, with the location of the
    /// infimum and the MRCA segment.
    pub fn tree_distance(&self, s: f64, t: f64) -> Result<TreeDistance> {
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        let i = self.segment_at(s)?;
        let j = self.segment_at(t)?;
        Ok(self.distance_in(i, s, j, t))
    }

    /// Distance query when the segments of `s ≤ t` are already known.
    pub fn distance_in(&self, i: usize, s: f64, j: usize, t: f64) -> TreeDistance {
        let hs = self.segments[i].height_at(s);
        let ht = self.segments[j].height_at(t);
        if i == j {
            return TreeDistance { distance: ht - hs, inf_height: hs, argmin_time: s, mrca: Some(i) };
        }
        let k = self.births.argmin(i + 1, j);
        let bk = self.segments[k].birth;
        if bk < hs {
            let seg = &self.segments[k];
            let mrca = self.trees[seg.tree as usize].records[seg.record as usize]
                .parent()
                .map(|p| self.segment_of(seg.tree as usize, p));
            TreeDistance { distance: hs + ht - 2.0 * bk, inf_height: bk, argmin_time: seg.sigma, mrca }
        } else {
            TreeDistance { distance: hs + ht - 2.0 * hs, inf_height: hs, argmin_time: s, mrca: Some(i) }
        }
    }

    /// Brute-force infimum of `h` over `[s, t]` for testing the RMQ path.
    pub fn inf_height_scan(&self, s: f64, t: f64) -> Result<f64> {
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        let i = self.segment_at(s)?;
        let j = self.segment_at(t)?;
        let mut m = self.segments[i].height_at(s);
        for k in i + 1..=j {
            m = m.min(self.segments[k].birth);
        }
        Ok(m)
    }

    /// Writes `(t, h_t)` at every segment start and end, for plotting the
    /// height function.
    pub fn write_height_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,h")?;
        for s in &self.segments {
            writeln!(out, "{},{}", s.sigma, s.birth)?;
            writeln!(out, "{},{}", s.tau(), s.death)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genealogy::{simulate_forest, simulate_tree, SimConfig};
    use crate::model::two_type;
    use crate::rng::stream;
    use rand::Rng;

    /// Root of lifetime `a` with two childless children of lifetimes `b`, `c`.
    pub(crate) fn cherry(a: f64, b: f64, c: f64) -> Tree {
        crate::genealogy::testing::cherry(a, b, c)
    }

    #[test]
    fn single_particle() {
        let t = crate::genealogy::testing::stick(2.5);
        let p = explore(&t);
        assert_eq!(p.length(), 2.5);
        assert_eq!(p.segments().len(), 1);
        assert_eq!(p.height(1.0).unwrap(), 1.0);
        assert_eq!(p.tree_distance(0.5, 2.0).unwrap().distance, 1.5);
        assert!(matches!(p.height(2.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn cherry_hand_values() {
        let (a, b, c) = (1.0, 2.0, 3.0);
        let t = cherry(a, b, c);
        let p = explore(&t);
        let sig: Vec<f64> = p.segments().iter().map(|s| s.sigma).collect();
        assert_eq!(sig, vec![0.0, a, a + b]);
        assert_eq!(p.length(), a + b + c);
        let eps = 0.25;
        let (label, h, _) = p.height_and_state(a + b + eps).unwrap();
        assert_eq!(label.to_string(), "0:1");
        assert_eq!(h, a + eps);
        let (label, h, state) = p.height_and_state(0.0).unwrap();
        assert_eq!((label, h, state), (Label::root(0), 0.0, 0));
        // Leaf tips: just before τ of each child.
        let d = p.tree_distance(a + b - 1e-9, a + b + c - 1e-9).unwrap();
        assert!((d.distance - (b + c)).abs() < 1e-6);
        assert_eq!(d.inf_height, a);
        assert_eq!(d.mrca, Some(0));
        // Root point to its first child: ancestor case.
        let d = p.tree_distance(0.5, a + 0.5).unwrap();
        assert!((d.distance - 1.0).abs() < 1e-12);
        assert_eq!(d.mrca, Some(0));
    }

    #[test]
    fn forest_of_two_sticks() {
        let trees = vec![crate::genealogy::testing::stick(1.5), {
            let mut t = crate::genealogy::testing::stick(2.0);
            t.tree_index = 1;
            t
        }];
        let p = explore_forest(&trees);
        assert_eq!(p.length(), 3.5);
        assert_eq!(p.segments()[1].sigma, 1.5);
        let d = p.tree_distance(1.0, 2.0).unwrap();
        assert_eq!(d.distance, 1.0 + 0.5);
        assert_eq!(d.mrca, None);
    }

    #[test]
    fn rmq_matches_scan_and_metric_axioms() {
        let m = two_type().unwrap();
        let mut rng = stream(17, 0);
        for seed in 0..10 {
            let t = simulate_tree(&m, 0, &SimConfig { horizon: Some(60.0), seed, ..SimConfig::default() }).unwrap();
            let p = explore(&t);
            let len = p.length();
            for _ in 0..1000 {
                let s = rng.random::<f64>() * len;
                let u = rng.random::<f64>() * len;
                let d = p.tree_distance(s, u).unwrap();
                assert_eq!(d.inf_height, p.inf_height_scan(s, u).unwrap());
            }
            for _ in 0..2000 {
                let (x, y, z) = (rng.random::<f64>() * len, rng.random::<f64>() * len, rng.random::<f64>() * len);
                let dxy = p.tree_distance(x, y).unwrap().distance;
                let dyx = p.tree_distance(y, x).unwrap().distance;
                let dyz = p.tree_distance(y, z).unwrap().distance;
                let dxz = p.tree_distance(x, z).unwrap().distance;
                assert_eq!(dxy, dyx);
                assert_eq!(p.tree_distance(x, x).unwrap().distance, 0.0);
                assert!(dxz <= dxy + dyz + 1e-9);
                assert!(dxy >= -1e-12);
            }
            // h only jumps down between segments.
            for w in p.segments().windows(2) {
                assert!(w[0].death >= w[1].birth);
                assert!((w[0].tau() - w[1].sigma).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mrca_height_is_death_of_mrca() {
        let m = two_type().unwrap();
        let mut rng = stream(5, 0);
        let t = simulate_tree(&m, 0, &SimConfig { horizon: Some(40.0), seed: 3, ..SimConfig::default() }).unwrap();
        let p = explore(&t);
        for _ in 0..2000 {
            let s = rng.random::<f64>() * p.length();
            let u = rng.random::<f64>() * p.length();
            let d = p.tree_distance(s, u).unwrap();
            let mrca = d.mrca.unwrap();
            let a = p.label(p.segment_at(s).unwrap());
            let b = p.label(p.segment_at(u).unwrap());
            let common: Vec<u32> = a.word.iter().zip(&b.word).take_while(|(x, y)| x == y).map(|(x, _)| *x).collect();
            assert_eq!(p.label(mrca).word, common);
            let seg = p.segments()[mrca];
            if a != b && common.len() < a.word.len().min(b.word.len()) {
                assert_eq!(d.inf_height, seg.death);
            }
        }
    }

    #[test]
    fn forest_length_is_sum_of_lifetimes() {
        let m = two_type().unwrap();
        let mut rng = stream(2, 0);
        let f = simulate_forest(&m, 1, 50.0, &mut rng).unwrap();
        let p = explore_forest(&f);
        let sum: f64 = f.iter().flat_map(|t| t.records.iter()).map(|r| r.lifetime()).sum();
        assert!((p.length() - sum).abs() < 1e-9);
        assert!(p.length() >= 50.0);
    }
}
