use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{KernelKind, KernelMatrix};
use crate::error::{Error, Result};
use crate::genio::{GenotypeMatrix, MISSING};

/// SNPs per dense panel handed to gemm.
const PANEL: usize = 1024;
/// Fixed number of partial sums, independent of the thread count, so the
/// reduction order and therefore the result are reproducible.
const PARTIALS: usize = 16;

/// Allele1 frequency among observed calls, or `None` for an all-missing row.
fn allele1_frequency(row: &[u8]) -> Option<f64> {
    let (mut sum, mut calls) = (0u64, 0u64);
    for &c in row {
        if c != MISSING {
            sum += c as u64;
            calls += 1;
        }
    }
    (calls > 0).then(|| sum as f64 / (2 * calls) as f64)
}

fn usable_snps(g: &GenotypeMatrix, subset: Option<&[bool]>) -> Vec<(usize, f64)> {
    let mut row = vec![0u8; g.n_individuals()];
    (0..g.n_snps())
        .filter(|&s| subset.is_none_or(|m| m[s]))
        .filter_map(|s| {
            g.decode_row(s, &mut row);
            allele1_frequency(&row).filter(|&p| p > 0.0 && p < 1.0).map(|p| (s, p))
        })
        .collect()
}

/// Runs `panel_fn` over fixed-size SNP panels and sums the resulting n x n
/// contributions in a deterministic order.
fn reduce_panels<F>(snps: &[(usize, f64)], n: usize, outputs: usize, panel_fn: F) -> Vec<DMatrix<f64>>
where
    F: Fn(&[(usize, f64)], &mut [DMatrix<f64>]) + Sync,
{
    let per_partial = snps.len().div_ceil(PARTIALS).max(1);
    let partials: Vec<Vec<DMatrix<f64>>> = snps
        .par_chunks(per_partial)
        .map(|chunk| {
            let mut acc = vec![DMatrix::zeros(n, n); outputs];
            for panel in chunk.chunks(PANEL) {
                panel_fn(panel, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![DMatrix::zeros(n, n); outputs];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

/// Genetic relationship matrix on the kinship scale:
/// `(1/S) sum_s (g_is - 2p)(g_js - 2p) / (4 p (1 - p))`, missing calls imputed
/// at `2p`, monomorphic SNPs skipped.
pub fn grm_kinship(g: &GenotypeMatrix, subset: Option<&[bool]>) -> Result<KernelMatrix> {
    let n = g.n_individuals();
    let snps = usable_snps(g, subset);
    if snps.is_empty() {
        return Err(Error::Degenerate("GRM: no polymorphic SNPs".into()));
    }
    let total = reduce_panels(&snps, n, 1, |panel, acc| {
        let mut z = DMatrix::<f64>::zeros(n, panel.len());
        let mut row = vec![0u8; n];
        for (k, &(s, p)) in panel.iter().enumerate() {
            g.decode_row(s, &mut row);
            let scale = 1.0 / (4.0 * p * (1.0 - p)).sqrt();
            let mut col = z.column_mut(k);
            for (i, &c) in row.iter().enumerate() {
                col[i] = if c == MISSING { 0.0 } else { (c as f64 - 2.0 * p) * scale };
            }
        }
        let zt = z.transpose();
        acc[0].gemm(1.0, &z, &zt, 1.0);
    });
    let mut values = total.into_iter().next().expect("one output");
    values /= snps.len() as f64;
    symmetrize(&mut values);
    Ok(KernelMatrix::new(values, KernelKind::GrmKinship))
}

/// Method-of-moments kinship from allele matching:
/// `(e_ij - sum w_s) / (S_ij - sum w_s)` with `w_s = p_s^2 + q_s^2`, both sums
/// over SNPs where both individuals are called, and
/// `e_ij = sum (g_i g_j + (2 - g_i)(2 - g_j)) / 4`.
pub fn mom_kinship(g: &GenotypeMatrix) -> Result<KernelMatrix> {
    let n = g.n_individuals();
    let snps = usable_snps(g, None);
    if snps.is_empty() {
        return Err(Error::Degenerate("method of moments: no polymorphic SNPs".into()));
    }
    // outputs: allele1 products, allele2 products, pair counts, weighted pair counts
    let total = reduce_panels(&snps, n, 4, |panel, acc| {
        let b = panel.len();
        let mut a1 = DMatrix::<f64>::zeros(n, b);
        let mut a2 = DMatrix::<f64>::zeros(n, b);
        let mut obs = DMatrix::<f64>::zeros(n, b);
        let mut wobs = DMatrix::<f64>::zeros(n, b);
        let mut row = vec![0u8; n];
        for (k, &(s, p)) in panel.iter().enumerate() {
            g.decode_row(s, &mut row);
            let w = (p * p + (1.0 - p) * (1.0 - p)).sqrt();
            for (i, &c) in row.iter().enumerate() {
                if c != MISSING {
                    a1[(i, k)] = c as f64;
                    a2[(i, k)] = 2.0 - c as f64;
                    obs[(i, k)] = 1.0;
                    wobs[(i, k)] = w;
                }
            }
        }
        for (slot, m) in [a1, a2, obs, wobs].into_iter().enumerate() {
            let mt = m.transpose();
            acc[slot].gemm(1.0, &m, &mt, 1.0);
        }
    });
    let [e1, e2, pairs, weighted]: [DMatrix<f64>; 4] = total.try_into().expect("four outputs");
    let mut values = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let e = 0.25 * (e1[(i, j)] + e2[(i, j)]);
            let denom = pairs[(i, j)] - weighted[(i, j)];
            if denom <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "method of moments: individuals {i} and {j} share no informative SNPs"
                )));
            }
            let v = (e - weighted[(i, j)]) / denom;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(KernelMatrix::new(values, KernelKind::MomKinship))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genio::{FamEntry, SnpInfo};

    fn matrix(rows: &[Vec<u8>]) -> GenotypeMatrix {
        let n = rows[0].len();
        let samples = (0..n)
            .map(|i| FamEntry {
                family_id: "F".into(),
                individual_id: format!("i{i}"),
            })
            .collect();
        let snps = (0..rows.len()).map(|s| SnpInfo::new(&format!("s{s}"), "1", s as u64 + 1)).collect();
        GenotypeMatrix::from_codes(snps, samples, rows).unwrap()
    }

    #[test]
    fn grm_single_snp_direct_value() {
        // p = 0.5; individual 0 has g = 2: (2 - 1)^2 / (4 * 0.25) = 1
        let k = grm_kinship(&matrix(&[vec![2, 0]]), None).unwrap();
        assert!((k.values[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((k.values[(0, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn grm_identical_genotypes_share_diagonal_value() {
        let rows = vec![vec![0, 0, 2, 1], vec![1, 1, 0, 2], vec![2, 2, 1, 0]];
        let k = grm_kinship(&matrix(&rows), None).unwrap();
        assert!((k.values[(0, 1)] - k.values[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn grm_skips_monomorphic_and_imputes_missing() {
        let with_mono = grm_kinship(&matrix(&[vec![2, 2, 2], vec![0, 2, 1]]), None).unwrap();
        let without = grm_kinship(&matrix(&[vec![0, 2, 1]]), None).unwrap();
        assert!((with_mono.values.clone() - without.values).abs().max() < 1e-15);
        assert!(grm_kinship(&matrix(&[vec![2, 2, 2]]), None).is_err());
        // a missing call sits at the mean: zero contribution
        let k = grm_kinship(&matrix(&[vec![0, 2, MISSING]]), None).unwrap();
        assert_eq!(k.values[(2, 2)], 0.0);
    }

    #[test]
    fn mom_forced_values() {
        // both homozygous for allele1 at SNPs with p = 0.5 (others balance p)
        let rows = vec![vec![2, 2, 0, 0]; 5];
        let k = mom_kinship(&matrix(&rows)).unwrap();
        assert!((k.values[(0, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mom_het_het_match_is_half() {
        // with p = 0.5, w = 0.5, het-het e = 1/2 so phi = 0
        let k = mom_kinship(&matrix(&[vec![1, 1, 2, 0]])).unwrap();
        assert!(k.values[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn mom_excludes_missing_pairs() {
        let a = mom_kinship(&matrix(&[vec![0, 2, 1, 1], vec![MISSING, 0, 2, 1]])).unwrap();
        // pair (0,1) only sees the first SNP
        let only = mom_kinship(&matrix(&[vec![0, 2, 1, 1]])).unwrap();
        assert!((a.values[(0, 1)] - only.values[(0, 1)]).abs() < 1e-14);
    }
}
