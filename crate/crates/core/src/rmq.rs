//! Static range-minimum queries.
//!
//! Classic sparse table: `O(n log n)` build, `O(1)` query. Level `k` stores,
//! for every start `i`, the index of the minimum of `values[i .. i + 2^k]`.
//! Ties resolve to the earliest index, which the MRCA lookup relies on.

#[derive(Clone, Debug)]
pub struct SparseTable {
    values: Vec<f64>,
    levels: Vec<Vec<u32>>,
}

impl SparseTable {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        let mut levels: Vec<Vec<u32>> = Vec::new();
        if n > 0 {
            levels.push((0..n as u32).collect());
        }
        let mut width = 1usize;
        while 2 * width <= n {
            let prev = levels.last().expect("level 0 exists");
            let next: Vec<u32> = (0..=n - 2 * width)
                .map(|i| {
                    let (a, b) = (prev[i], prev[i + width]);
                    if values[b as usize] < values[a as usize] {
                        b
                    } else {
                        a
                    }
                })
                .collect();
            levels.push(next);
            width *= 2;
        }
        Self { values, levels }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index of the minimum over the inclusive range `[lo, hi]`, earliest on
    /// ties.
    ///
    /// # Panics
    /// If `lo > hi` or `hi` is out of bounds.
    pub fn argmin(&self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi && hi < self.values.len(), "bad range [{lo}, {hi}]");
        let span = hi - lo + 1;
        let k = (usize::BITS - 1 - span.leading_zeros()) as usize;
        let a = self.levels[k][lo] as usize;
        let b = self.levels[k][hi + 1 - (1 << k)] as usize;
        if self.values[b] < self.values[a] {
            b
        } else {
            a
        }
    }

    pub fn min(&self, lo: usize, hi: usize) -> f64 {
        self.values[self.argmin(lo, hi)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scan(v: &[f64], lo: usize, hi: usize) -> usize {
        let mut best = lo;
        for i in lo..=hi {
            if v[i] < v[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn single_element() {
        let t = SparseTable::new(vec![3.5]);
        assert_eq!(t.argmin(0, 0), 0);
        assert_eq!(t.min(0, 0), 3.5);
    }

    #[test]
    fn ties_pick_earliest() {
        let t = SparseTable::new(vec![2.0, 1.0, 5.0, 1.0, 1.0, 7.0]);
        assert_eq!(t.argmin(0, 5), 1);
        assert_eq!(t.argmin(2, 5), 3);
        assert_eq!(t.argmin(4, 5), 4);
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            v in prop::collection::vec(0u8..20, 1..200),
            queries in prop::collection::vec((any::<u16>(), any::<u16>()), 1..50),
        ) {
            let values: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            let t = SparseTable::new(values.clone());
            let n = values.len();
            for (a, b) in queries {
                let (mut lo, mut hi) = (a as usize % n, b as usize % n);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                prop_assert_eq!(t.argmin(lo, hi), scan(&values, lo, hi));
            }
        }
    }
}
