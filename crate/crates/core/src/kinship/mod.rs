//! Structure kernels for the covariance model: additive kinship (from the
//! pedigree or from SNPs), X-linked kinship, dominance, household and identity.

mod empirical;
mod pedigree;

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub use empirical::{grm_kinship, mom_kinship};
pub use pedigree::{delta7, household_matrix, theoretical_kinship, x_linked_kinship};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    TheoreticalKinship,
    GrmKinship,
    MomKinship,
    Delta7,
    Household,
    Identity,
    XKinship,
}

impl KernelKind {
    pub fn label(self) -> &'static str {
        match self {
            KernelKind::TheoreticalKinship => "theoretical_kinship",
            KernelKind::GrmKinship => "grm_kinship",
            KernelKind::MomKinship => "mom_kinship",
            KernelKind::Delta7 => "delta7",
            KernelKind::Household => "household",
            KernelKind::Identity => "identity",
            KernelKind::XKinship => "x_kinship",
        }
    }
}

/// Symmetric n x n kernel with an optional partition of its indices into
/// independent blocks (entries across blocks are zero).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub kind: KernelKind,
    pub block_structure: Option<Vec<Vec<usize>>>,
}

impl KernelMatrix {
    pub fn new(values: DMatrix<f64>, kind: KernelKind) -> Self {
        KernelMatrix {
            values,
            kind,
            block_structure: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        KernelMatrix {
            values: DMatrix::identity(n, n),
            kind: KernelKind::Identity,
            block_structure: Some((0..n).map(|i| vec![i]).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.kind == KernelKind::Identity
    }

    /// Marks the whole matrix as one dense block.
    pub fn with_single_block(mut self) -> Self {
        let n = self.dim();
        self.block_structure = Some(vec![(0..n).collect()]);
        self
    }

    /// Restricts to the listed indices, in order. Block structure is remapped
    /// and empty blocks dropped.
    pub fn restrict(&self, keep: &[usize]) -> KernelMatrix {
        let values = DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.values[(keep[i], keep[j])]);
        let block_structure = self.block_structure.as_ref().map(|blocks| {
            let mut new_of = vec![usize::MAX; self.dim()];
            for (new, &old) in keep.iter().enumerate() {
                new_of[old] = new;
            }
            let mut out: Vec<Vec<usize>> = blocks
                .iter()
                .map(|b| b.iter().map(|&i| new_of[i]).filter(|&i| i != usize::MAX).collect::<Vec<_>>())
                .filter(|b: &Vec<usize>| !b.is_empty())
                .map(|mut b| {
                    b.sort_unstable();
                    b
                })
                .collect();
            out.sort_by_key(|b| b[0]);
            out
        });
        KernelMatrix {
            values,
            kind: self.kind,
            block_structure,
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.values[(i, j)], self.values[(j, i)]);
                let scale = a.abs().max(b.abs()).max(1e-300);
                worst = worst.max((a - b).abs() / scale);
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.values.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Clips negative eigenvalues to zero when the smallest one falls below
    /// `-1e-8`; otherwise leaves the matrix untouched. Works block by block
    /// when a block structure is present.
    pub fn project_psd(&mut self) {
        let blocks = self
            .block_structure
            .clone()
            .unwrap_or_else(|| vec![(0..self.dim()).collect()]);
        for block in blocks {
            let sub = DMatrix::from_fn(block.len(), block.len(), |i, j| self.values[(block[i], block[j])]);
            let eig = SymmetricEigen::new(sub);
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min >= -1e-8 {
                continue;
            }
            let clipped = eig.eigenvalues.map(|l| l.max(0.0));
            let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
            for (a, &i) in block.iter().enumerate() {
                for (b, &j) in block.iter().enumerate() {
                    self.values[(i, j)] = 0.5 * (rebuilt[(a, b)] + rebuilt[(b, a)]);
                }
            }
        }
    }

    /// Zeroes every entry that crosses two of the given blocks and records
    /// the partition.
    pub fn mask_to_blocks(&mut self, blocks: Vec<Vec<usize>>) {
        let n = self.dim();
        let mut owner = vec![usize::MAX; n];
        for (b, members) in blocks.iter().enumerate() {
            for &i in members {
                owner[i] = b;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if owner[i] != owner[j] {
                    self.values[(i, j)] = 0.0;
                }
            }
        }
        self.block_structure = Some(blocks);
    }

    /// Writes the lower triangle (diagonal included) as `id1 id2 value` lines.
    pub fn write_lower_triangle(&self, path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
        let path = path.as_ref();
        if ids.len() != self.dim() {
            return Err(Error::Length(format!("{} ids for a kernel of dimension {}", ids.len(), self.dim())));
        }
        let mut out = String::from("id1\tid2\tvalue\n");
        for i in 0..self.dim() {
            for j in 0..=i {
                out.push_str(&format!("{}\t{}\t{:.10}\n", ids[i], ids[j], self.values[(i, j)]));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// How per-pedigree kernels are combined into one global matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    /// Block-diagonal matrix, one block per pedigree.
    WithinPedigree,
    /// One dense block over all individuals.
    Global,
}

/// Combines per-pedigree kernels into a block-diagonal global kernel, in the
/// order given. All parts must share one kind.
pub fn assemble_global_kernel(parts: &[KernelMatrix]) -> KernelMatrix {
    let n: usize = parts.iter().map(KernelMatrix::dim).sum();
    let kind = parts.first().map_or(KernelKind::Identity, |p| p.kind);
    let mut values = DMatrix::zeros(n, n);
    let mut blocks = Vec::with_capacity(parts.len());
    let mut offset = 0;
    for part in parts {
        let d = part.dim();
        values.view_mut((offset, offset), (d, d)).copy_from(&part.values);
        blocks.push((offset..offset + d).collect());
        offset += d;
    }
    KernelMatrix {
        values,
        kind,
        block_structure: Some(blocks),
    }
}

/// Applies an assembly mode to an already global empirical kernel.
pub fn assemble_empirical(mut kernel: KernelMatrix, mode: AssemblyMode, pedigree_blocks: Vec<Vec<usize>>) -> KernelMatrix {
    match mode {
        AssemblyMode::WithinPedigree => kernel.mask_to_blocks(pedigree_blocks),
        AssemblyMode::Global => kernel = kernel.with_single_block(),
    }
    kernel.project_psd();
    kernel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diagonal_assembly() {
        let a = KernelMatrix::new(DMatrix::from_element(2, 2, 0.25), KernelKind::GrmKinship);
        let b = KernelMatrix::new(DMatrix::from_element(3, 3, 0.1), KernelKind::GrmKinship);
        let g = assemble_global_kernel(&[a, b]);
        assert_eq!(g.dim(), 5);
        assert_eq!(g.block_structure.as_ref().unwrap(), &vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(g.values[(1, 2)], 0.0);
        assert_eq!(g.values[(4, 2)], 0.1);
    }

    #[test]
    fn global_mode_is_one_block() {
        let k = KernelMatrix::new(DMatrix::identity(4, 4) * 0.5, KernelKind::GrmKinship);
        let g = assemble_empirical(k, AssemblyMode::Global, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(g.block_structure.unwrap(), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn psd_projection_clips_negative_eigenvalues() {
        let mut k = KernelMatrix::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.9, 0.9, 0.5]), KernelKind::MomKinship);
        k.project_psd();
        assert!(k.min_eigenvalue() > -1e-12);
        assert!(k.max_asymmetry() < 1e-12);
    }

    #[test]
    fn restrict_remaps_blocks() {
        let k = assemble_global_kernel(&[
            KernelMatrix::new(DMatrix::identity(2, 2), KernelKind::Delta7),
            KernelMatrix::new(DMatrix::identity(2, 2), KernelKind::Delta7),
        ]);
        let r = k.restrict(&[3, 0, 1]);
        assert_eq!(r.block_structure.unwrap(), vec![vec![0], vec![1, 2]]);
    }
}
