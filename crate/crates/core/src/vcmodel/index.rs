use std::ops::Range;

use crate::kinship::KernelMatrix;

/// One observed (person, trait) cell of the stacked response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub person: usize,
    pub trait_index: usize,
}

/// A set of persons whose responses are independent of everyone else's,
/// together with the contiguous rows holding their observed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBlock {
    pub persons: Vec<usize>,
    pub rows: Range<usize>,
}

/// Maps observed (person, trait) cells to rows of the stacked response.
/// Rows are grouped by block; inside a block they are trait-major, so a
/// single complete block reproduces the usual `vec(Y)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationIndex {
    n_persons: usize,
    n_traits: usize,
    cells: Vec<Cell>,
    blocks: Vec<ObsBlock>,
    row_of: Vec<Option<usize>>,
}

impl ObservationIndex {
    /// Builds the index from an explicit partition of persons. Persons with
    /// no observed cell keep their place in the partition but own no rows;
    /// blocks without rows are dropped.
    pub fn new<F>(n_persons: usize, n_traits: usize, person_blocks: Vec<Vec<usize>>, observed: F) -> Self
    where
        F: Fn(usize, usize) -> bool,
    {
        let mut cells = Vec::new();
        let mut blocks = Vec::with_capacity(person_blocks.len());
        let mut row_of = vec![None; n_persons * n_traits];
        for persons in person_blocks {
            let start = cells.len();
            for t in 0..n_traits {
                for &p in &persons {
                    if observed(p, t) {
                        row_of[p * n_traits + t] = Some(cells.len());
                        cells.push(Cell { person: p, trait_index: t });
                    }
                }
            }
            if cells.len() > start {
                blocks.push(ObsBlock {
                    persons,
                    rows: start..cells.len(),
                });
            }
        }
        ObservationIndex {
            n_persons,
            n_traits,
            cells,
            blocks,
            row_of,
        }
    }

    /// Derives the block partition as the finest one compatible with every
    /// kernel: persons are joined whenever any kernel links them.
    pub fn from_kernels<F>(n_persons: usize, n_traits: usize, kernels: &[&KernelMatrix], observed: F) -> Self
    where
        F: Fn(usize, usize) -> bool,
    {
        Self::new(n_persons, n_traits, person_partition(n_persons, kernels), observed)
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_traits(&self) -> usize {
        self.n_traits
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn blocks(&self) -> &[ObsBlock] {
        &self.blocks
    }

    pub fn row(&self, person: usize, trait_index: usize) -> Option<usize> {
        self.row_of[person * self.n_traits + trait_index]
    }

    /// Rows belonging to one person, in trait order.
    pub fn person_rows(&self, person: usize) -> Vec<usize> {
        (0..self.n_traits).filter_map(|t| self.row(person, t)).collect()
    }

    /// Stacks an (person, trait) accessor into the observed-row order.
    pub fn stack<F: Fn(usize, usize) -> f64>(&self, value: F) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(self.cells.len(), self.cells.iter().map(|c| value(c.person, c.trait_index)))
    }
}

/// Union-find over kernel links. Blocks come out ordered by their smallest
/// member, members ascending.
pub fn person_partition(n: usize, kernels: &[&KernelMatrix]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let union = |a: usize, b: usize, parent: &mut Vec<usize>| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    };
    for k in kernels {
        if k.is_identity() {
            continue;
        }
        match &k.block_structure {
            Some(blocks) => {
                for b in blocks {
                    for w in b.windows(2) {
                        union(w[0], w[1], &mut parent);
                    }
                }
            }
            None => {
                for i in 0..n {
                    for j in 0..i {
                        if k.values[(i, j)] != 0.0 {
                            union(i, j, &mut parent);
                        }
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinship::{assemble_global_kernel, KernelKind};
    use nalgebra::DMatrix;

    #[test]
    fn missing_cells_are_skipped_and_rows_trait_major() {
        let idx = ObservationIndex::new(2, 2, vec![vec![0, 1]], |p, t| !(p == 1 && t == 0));
        assert_eq!(idx.n_rows(), 3);
        assert_eq!(idx.row(0, 0), Some(0));
        assert_eq!(idx.row(1, 0), None);
        assert_eq!(idx.row(0, 1), Some(1));
        assert_eq!(idx.row(1, 1), Some(2));
        assert_eq!(idx.blocks()[0].rows, 0..3);
    }

    #[test]
    fn partition_follows_kernel_blocks() {
        let k = assemble_global_kernel(&[
            KernelMatrix::new(DMatrix::from_element(2, 2, 0.25), KernelKind::TheoreticalKinship),
            KernelMatrix::new(DMatrix::from_element(1, 1, 0.5), KernelKind::TheoreticalKinship),
        ]);
        let id = KernelMatrix::identity(3);
        assert_eq!(person_partition(3, &[&k, &id]), vec![vec![0, 1], vec![2]]);
        let mut dense = k.clone();
        dense.block_structure = None;
        dense.values[(2, 0)] = 0.1;
        dense.values[(0, 2)] = 0.1;
        assert_eq!(person_partition(3, &[&dense]), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn blocks_partition_rows() {
        let idx = ObservationIndex::new(4, 2, vec![vec![0, 1], vec![2], vec![3]], |p, _| p != 2);
        assert_eq!(idx.blocks().len(), 2);
        let covered: usize = idx.blocks().iter().map(|b| b.rows.len()).sum();
        assert_eq!(covered, idx.n_rows());
    }
}
