//! Incrementally sorted, deduplicated index array.
//!
//! Each insertion binary-searches the array built so far, so inserting N
//! indices one at a time costs Σ log(i) = log(N!) comparisons instead of
//! sorting after the fact.

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SortedIndexArray {
    indices: Vec<u64>,
    comparisons: u64,
}

impl SortedIndexArray {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `idx` keeping the array strictly ascending and returns its
    /// final position. An index already present is left in place.
    pub fn insert(&mut self, idx: u64) -> usize {
        match self.search(idx) {
            Ok(pos) => pos,
            Err(pos) => {
                self.indices.insert(pos, idx);
                pos
            }
        }
    }

    // Three-way binary search with early exit on equality; every probe is
    // one comparison.
    fn search(&mut self, idx: u64) -> Result<usize, usize> {
        let mut lo = 0usize;
        let mut hi = self.indices.len();
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            self.comparisons += 1;
            match self.indices[mid].cmp(&idx) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Ok(mid),
            }
        }
        Err(lo)
    }

    /// Position of `idx`, if present. Not counted as insertion work.
    pub fn position(&self, idx: u64) -> Option<usize> {
        self.indices.binary_search(&idx).ok()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Comparisons performed by all insertions so far.
    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn insert_into_middle() {
        let mut a = SortedIndexArray::new();
        for i in [1, 3, 8] {
            a.insert(i);
        }
        assert_eq!(a.insert(5), 2);
        assert_eq!(a.as_slice(), &[1, 3, 5, 8]);
    }

    #[test]
    fn duplicate_keeps_existing_position() {
        let mut a = SortedIndexArray::new();
        for i in [1, 3, 8] {
            a.insert(i);
        }
        assert_eq!(a.insert(3), 1);
        assert_eq!(a.as_slice(), &[1, 3, 8]);
    }

    #[test]
    fn permutation_insertion_yields_identity() {
        // fixed shuffle of 0..32
        let order = [
            17u64, 3, 29, 0, 11, 24, 8, 31, 5, 19, 14, 27, 1, 22, 9, 30, 6, 13, 26, 2, 20, 16, 28, 4, 10, 23, 7, 18, 25,
            12, 21, 15,
        ];
        let mut a = SortedIndexArray::new();
        for i in order {
            a.insert(i);
        }
        assert_eq!(a.as_slice(), (0..32).collect::<Vec<_>>().as_slice());
        for i in 0..32u64 {
            assert_eq!(a.position(i), Some(i as usize));
        }
    }

    proptest! {
        #[test]
        fn equals_sort_then_dedup(values in proptest::collection::vec(0u64..500, 0..300)) {
            let mut a = SortedIndexArray::new();
            for &v in &values {
                let pos = a.insert(v);
                prop_assert_eq!(a.as_slice()[pos], v);
            }
            let mut oracle = values.clone();
            oracle.sort_unstable();
            oracle.dedup();
            prop_assert_eq!(a.as_slice(), oracle.as_slice());
        }
    }
}
