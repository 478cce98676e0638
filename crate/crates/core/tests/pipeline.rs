//! Simulation, exploration, martingale and distance matrices checked against
//! each other on whole simulated trees.

use crittree::martingale::vertex_m_index;
use crittree::mmspace::{distance_matrices_at, ball_mass};
use crittree::{builtin, compute_martingales, explore, simulate_tree, SimConfig, Tree};

fn trees(model: &str, count: u64, horizon: f64) -> (crittree::ModelSpec, Vec<Tree>) {
    let m = builtin(model, 1.0).unwrap();
    let trees = (0..count)
        .map(|seed| simulate_tree(&m, 0, &SimConfig::with_horizon(horizon, 100 + seed)).unwrap())
        .filter(|t| t.len() > 20)
        .collect::<Vec<_>>();
    assert!(trees.len() >= 3, "only {} non-trivial trees", trees.len());
    (m, trees)
}

fn ancestors(tree: &Tree, mut v: usize) -> Vec<usize> {
    let mut out = vec![v];
    while let Some(p) = tree.records[v].parent() {
        out.push(p);
        v = p;
    }
    out
}

#[test]
fn exploration_length_is_total_lifetime() {
    let (_, trees) = trees("two-type", 60, 40.0);
    for t in &trees {
        let path = explore(t);
        let life: f64 = t.records.iter().map(|r| r.lifetime()).sum();
        assert!((path.length() - life).abs() < 1e-9 * life.max(1.0));
        assert!((t.total_length - life).abs() < 1e-9 * life.max(1.0));
    }
}

#[test]
fn distances_between_births_follow_the_genealogy() {
    let (_, trees) = trees("binary", 60, 40.0);
    for t in &trees {
        let path = explore(t);
        let n = t.len();
        for (a, b) in [(1, n - 1), (n / 3, 2 * n / 3), (2, n / 2)] {
            let (sa, sb) = (path.segments()[path.segment_of(0, a)], path.segments()[path.segment_of(0, b)]);
            let d = path.tree_distance(sa.sigma, sb.sigma).unwrap();
            let anc_a = ancestors(t, a);
            let mrca = ancestors(t, b).into_iter().find(|v| anc_a.contains(v)).unwrap();
            // a point at the start of a segment sits at its birth, which is the
            // death of the parent, so the meeting height is the MRCA's death
            // unless one vertex is an ancestor of the other.
            let meet = if mrca == a || mrca == b {
                t.records[mrca].birth_time
            } else {
                t.records[mrca].death_time
            };
            let expected = t.records[a].birth_time + t.records[b].birth_time - 2.0 * meet;
            assert!((d.distance - expected).abs() < 1e-9, "{} vs {expected}", d.distance);
        }
    }
}

#[test]
fn vertex_martingale_matches_exploration() {
    let (m, trees) = trees("two-type", 60, 40.0);
    for t in &trees {
        let path = explore(t);
        let mp = compute_martingales(&path, &m);
        for v in 0..t.len() {
            let a = mp.vertex_md(path.segment_of(0, v));
            let b = vertex_m_index(t, &m, v);
            assert!((a - b).abs() < 1e-9, "vertex {v}: {a} vs {b}");
        }
    }
}

#[test]
fn height_matrix_is_rescaled_tree_distance() {
    let (m, trees) = trees("two-type", 40, 40.0);
    for t in trees.iter().filter(|t| !t.horizon_censored) {
        let path = explore(t);
        let mp = compute_martingales(&path, &m);
        let n = 5.0;
        let times: Vec<f64> = (0..6).map(|i| path.length() * (i as f64 + 0.5) / 6.0).collect();
        let (dh, dm) = distance_matrices_at(&path, &mp, n, &times).unwrap();
        for i in 0..6 {
            assert_eq!(dh.get(i, i), 0.0);
            for j in 0..6 {
                let d = path.tree_distance(times[i], times[j]).unwrap().distance / n;
                assert!((dh.get(i, j) - d).abs() < 1e-12);
                assert_eq!(dm.get(i, j), dm.get(j, i));
            }
        }
    }
}

#[test]
fn ball_of_full_radius_holds_the_whole_tree() {
    let (_, trees) = trees("binary", 40, 30.0);
    for t in trees.iter().filter(|t| !t.horizon_censored) {
        let path = explore(t);
        let mass = ball_mass(&path, path.length() / 2.0, 1e6).unwrap();
        assert!((mass - path.length()).abs() < 1e-9 * path.length());
    }
}

#[test]
fn same_seed_same_tree() {
    let m = builtin("torus", 1.0).unwrap();
    let cfg = SimConfig::with_horizon(30.0, 77);
    let (a, b) = (simulate_tree(&m, 0, &cfg).unwrap(), simulate_tree(&m, 0, &cfg).unwrap());
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_ndjson(&mut x).unwrap();
    b.write_ndjson(&mut y).unwrap();
    assert_eq!(x, y);
    assert_eq!(String::from_utf8(x).unwrap().lines().count(), a.len());
}
