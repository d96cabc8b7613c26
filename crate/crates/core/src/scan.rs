//! Genome-wide association scan: a score-test screen of every SNP at the
//! null-model estimates, then likelihood-ratio refinement of the best hits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genio::{GenotypeMatrix, SnpInfo, MISSING};
use crate::qc::{genomic_inflation, hwe_exact_founders};
use crate::stats::{bh_threshold, bonferroni, chi2_sf};
use crate::vcmodel::{fit_null, BlockWeights, Evaluator, FitOptions, FitResult, MeanModel, NullState, ObservationIndex};

/// SNPs scored together in one batch.
pub const SCAN_CHUNK: usize = 1024;

/// Coding of a male hemizygous X genotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaleXDosage {
    /// Hemizygotes count as homozygotes (0 or 2).
    ZeroTwo,
    /// Hemizygotes count single alleles (0 or 1).
    ZeroOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub maf_min: f64,
    pub top_k: usize,
    pub sig_level: f64,
    pub fdr_level: f64,
    pub x_male_dosage: MaleXDosage,
    pub fit: FitOptions,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            maf_min: 0.0,
            top_k: 10,
            sig_level: 0.05,
            fdr_level: 0.05,
            x_male_dosage: MaleXDosage::ZeroTwo,
            fit: FitOptions::default(),
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.maf_min) {
            return Err(Error::Config(format!("maf_min {} must lie in [0, 0.5)", self.maf_min)));
        }
        if !(self.sig_level > 0.0 && self.sig_level < 1.0) {
            return Err(Error::Config(format!("sig_level {} must lie in (0, 1)", self.sig_level)));
        }
        Ok(())
    }
}

/// Why a SNP was not tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Untested {
    NoCalls,
    Monomorphic,
    LowMaf,
    Collinear,
}

impl Untested {
    pub fn label(self) -> &'static str {
        match self {
            Untested::NoCalls => "no_calls",
            Untested::Monomorphic => "monomorphic",
            Untested::LowMaf => "maf",
            Untested::Collinear => "collinear",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnpRecord {
    pub snp: usize,
    pub maf_all: Option<f64>,
    pub maf_founders: Option<f64>,
    pub hwe_p: Option<f64>,
    pub score_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub untested: Option<Untested>,
}

impl SnpRecord {
    pub fn tested(&self) -> bool {
        self.p_value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrtResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Per-trait SNP effects and their standard errors.
    pub effects: Vec<f64>,
    pub effect_se: Vec<f64>,
    pub converged: bool,
    pub loglik_alt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopHit {
    pub snp: usize,
    pub score_p: f64,
    pub lrt: Option<LrtResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub snps: Vec<SnpInfo>,
    pub records: Vec<SnpRecord>,
    pub top_hits: Vec<TopHit>,
    pub lambda_gc: Option<f64>,
    pub bonferroni: f64,
    pub fdr: Option<f64>,
    pub tested_count: usize,
    pub n_traits: usize,
}

impl ScanResult {
    pub fn tested_p_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.p_value).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("snp\tchr\tbp\tmaf_all\tmaf_founders\thwe_p\tstat\tp\ttested_flag\treason\n");
        let f6 = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6}"));
        let e6 = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6e}"));
        for r in &self.records {
            let info = &self.snps[r.snp];
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                info.name,
                info.chromosome,
                info.base_pair,
                f6(r.maf_all),
                f6(r.maf_founders),
                e6(r.hwe_p),
                f6(r.score_stat),
                e6(r.p_value),
                r.tested() as u8,
                r.untested.map_or(".", Untested::label)
            );
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Genotype dosage on the X chromosome: females unchanged, males mapped to
/// the hemizygous coding and heterozygous male calls set missing.
pub fn x_linked_dosage(codes: &[u8], male: &[bool], coding: MaleXDosage) -> Vec<u8> {
    codes
        .iter()
        .zip(male)
        .map(|(&c, &m)| {
            if !m || c == MISSING {
                c
            } else {
                match (c, coding) {
                    (1, _) => MISSING,
                    (2, MaleXDosage::ZeroOne) => 1,
                    (c, _) => c,
                }
            }
        })
        .collect()
}

/// Inputs of a scan beyond the null fit.
#[derive(Debug, Clone)]
pub struct ScanData<'a> {
    pub genotypes: &'a GenotypeMatrix,
    /// Genotype column of each analyzed person (index of the observation index).
    pub person_column: Vec<usize>,
    /// Genotype columns of founders used for MAF and HWE reporting.
    pub founder_columns: Vec<usize>,
    /// Per genotype column.
    pub male: Vec<bool>,
    pub y: &'a DVector<f64>,
    pub mean: &'a MeanModel,
    pub idx: &'a ObservationIndex,
}

/// Mean-imputed dosages of the analyzed persons, or the reason the SNP cannot be tested.
fn analysis_dosage(codes: &[u8], person_column: &[usize], maf_min: f64) -> (DVector<f64>, Option<f64>, Option<Untested>) {
    let (mut sum, mut calls, mut first, mut varies) = (0.0, 0usize, None, false);
    for &c in person_column.iter().map(|&j| &codes[j]) {
        if c != MISSING {
            sum += c as f64;
            calls += 1;
            match first {
                None => first = Some(c),
                Some(f) => varies |= f != c,
            }
        }
    }
    let n = person_column.len();
    if calls == 0 {
        return (DVector::zeros(n), None, Some(Untested::NoCalls));
    }
    let mean = sum / calls as f64;
    let freq = mean / 2.0;
    let maf = freq.min(1.0 - freq);
    let g = DVector::from_iterator(
        n,
        person_column.iter().map(|&j| if codes[j] == MISSING { mean } else { codes[j] as f64 }),
    );
    let reason = if !varies {
        Some(Untested::Monomorphic)
    } else if maf < maf_min {
        Some(Untested::LowMaf)
    } else {
        None
    };
    (g, Some(maf), reason)
}

/// Imputed autosomal dosage matrix (persons x SNPs) of every SNP in `g`
/// for the given genotype columns, with a flag per SNP telling whether it
/// is testable (polymorphic, called, MAF at least `maf_min`).
pub fn analysis_dosages_for(g: &GenotypeMatrix, person_column: &[usize], maf_min: f64) -> (DMatrix<f64>, Vec<bool>) {
    let mut out = DMatrix::zeros(person_column.len(), g.n_snps());
    let mut ok = Vec::with_capacity(g.n_snps());
    let mut codes = vec![0u8; g.n_individuals()];
    for s in 0..g.n_snps() {
        g.decode_row(s, &mut codes);
        let (d, _, reason) = analysis_dosage(&codes, person_column, maf_min);
        out.set_column(s, &d);
        ok.push(reason.is_none());
    }
    (out, ok)
}

fn founder_maf(codes: &[u8], founders: &[usize]) -> Option<f64> {
    let (mut sum, mut calls) = (0.0, 0usize);
    for &j in founders {
        if codes[j] != MISSING {
            sum += codes[j] as f64;
            calls += 1;
        }
    }
    (calls > 0).then(|| {
        let f = sum / (2.0 * calls as f64);
        f.min(1.0 - f)
    })
}

/// Null-model pieces shared by every score test: the weighted residual and
/// design, `(A_Cᵀ W A_C)^-1`, and per-block inverse covariance.
pub struct ScoreEngine<'a> {
    ev: Evaluator,
    state: NullState,
    idx: &'a ObservationIndex,
    /// Per trait: `W r` laid out by person (zero where unobserved).
    wr_person: DMatrix<f64>,
    /// Per trait: `W A_C` laid out by person.
    wx_person: Vec<DMatrix<f64>>,
}

/// Score statistic and p-value of one SNP, or the reason it was not tested.
pub type ScoreOutcome = std::result::Result<(f64, f64), Untested>;

impl<'a> ScoreEngine<'a> {
    pub fn new(fit: &FitResult, y: &DVector<f64>, mean: &MeanModel, idx: &'a ObservationIndex, use_rotation: bool) -> Result<Self> {
        let x = mean.reduced_design();
        let ev = Evaluator::new(y, &x, &fit.covariance, idx, use_rotation)?;
        let state = ev.null_state(&fit.covariance.sigmas())?;
        let (n, t, q) = (idx.n_persons(), idx.n_traits(), x.ncols());
        let mut wr_person = DMatrix::zeros(n, t);
        let mut wx_person = vec![DMatrix::zeros(n, q); t];
        for (row, cell) in idx.cells().iter().enumerate() {
            wr_person[(cell.person, cell.trait_index)] = state.wr[row];
            wx_person[cell.trait_index].row_mut(cell.person).copy_from(&state.wx.row(row));
        }
        Ok(ScoreEngine {
            ev,
            state,
            idx,
            wr_person,
            wx_person,
        })
    }

    pub fn n_traits(&self) -> usize {
        self.idx.n_traits()
    }

    /// Scores the columns of `g` (persons x SNPs, already imputed).
    pub fn score_batch(&self, g: &DMatrix<f64>) -> Vec<ScoreOutcome> {
        let t = self.n_traits();
        let nb = g.ncols();
        let u = g.tr_mul(&self.wr_person); // nb x T
        let gwx: Vec<DMatrix<f64>> = self.wx_person.iter().map(|w| g.tr_mul(w)).collect(); // T of nb x q
        let mut gwg = DMatrix::<f64>::zeros(nb, t * t); // column s*T + t
        for (b, weights) in self.ev.blocks.iter().zip(&self.state.weights) {
            match weights {
                BlockWeights::Dense(w) => {
                    let nr = b.rows.len();
                    let gr = DMatrix::from_fn(nr, nb, |a, j| g[(b.persons[b.row_person[a]], j)]);
                    let ranges = trait_ranges(&b.row_trait, t);
                    for (tt, rt) in ranges.iter().enumerate() {
                        if rt.is_empty() {
                            continue;
                        }
                        let p = w.columns(rt.start, rt.len()) * gr.rows(rt.start, rt.len());
                        for (s, rs) in ranges.iter().enumerate() {
                            for j in 0..nb {
                                let mut acc = 0.0;
                                for a in rs.clone() {
                                    acc += gr[(a, j)] * p[(a, j)];
                                }
                                gwg[(j, s * t + tt)] += acc;
                            }
                        }
                    }
                }
                BlockWeights::Rotated { u: basis, d_inv } => {
                    let gb = DMatrix::from_fn(b.persons.len(), nb, |i, j| g[(b.persons[i], j)]);
                    let gp = basis.tr_mul(&gb);
                    for (i, d) in d_inv.iter().enumerate() {
                        for j in 0..nb {
                            let sq = gp[(i, j)] * gp[(i, j)];
                            for s in 0..t {
                                for tt in 0..t {
                                    gwg[(j, s * t + tt)] += sq * d[(s, tt)];
                                }
                            }
                        }
                    }
                }
            }
        }
        (0..nb)
            .map(|j| {
                let q = self.state.xtwx_inv.nrows();
                let gwx_j = DMatrix::from_fn(t, q, |tt, c| gwx[tt][(j, c)]);
                let raw = DMatrix::from_fn(t, t, |s, tt| gwg[(j, s * t + tt)]);
                let mut v = &raw - &gwx_j * &self.state.xtwx_inv * gwx_j.transpose();
                v = (&v + v.transpose()) * 0.5;
                let scale = raw.diagonal().max();
                let eig = SymmetricEigen::new(v);
                if !(scale > 0.0) || eig.eigenvalues.min() <= 1e-8 * scale {
                    return Err(Untested::Collinear);
                }
                let uj = DVector::from_fn(t, |tt, _| u[(j, tt)]);
                let proj = eig.eigenvectors.tr_mul(&uj);
                let stat: f64 = proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| p * p / l).sum();
                let stat = stat.max(0.0);
                Ok((stat, chi2_sf(stat, t)))
            })
            .collect()
    }
}

/// Row ranges of each trait inside a block; rows are trait-major, so each is contiguous.
fn trait_ranges(row_trait: &[usize], t: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = vec![0..0; t];
    let mut start = 0;
    while start < row_trait.len() {
        let tr = row_trait[start];
        let mut end = start;
        while end < row_trait.len() && row_trait[end] == tr {
            end += 1;
        }
        out[tr] = start..end;
        start = end;
    }
    out
}

/// Score test of a single SNP given per-person dosages (`None` = missing,
/// mean-imputed here).
pub fn score_test(
    fit: &FitResult,
    g: &[Option<f64>],
    idx: &ObservationIndex,
    mean: &MeanModel,
    y: &DVector<f64>,
) -> Result<ScoreOutcome> {
    if g.len() != idx.n_persons() {
        return Err(Error::Length(format!("{} dosages for {} persons", g.len(), idx.n_persons())));
    }
    let called: Vec<f64> = g.iter().flatten().copied().collect();
    if called.is_empty() {
        return Ok(Err(Untested::NoCalls));
    }
    if called.iter().all(|&v| v == called[0]) {
        return Ok(Err(Untested::Monomorphic));
    }
    let m = called.iter().sum::<f64>() / called.len() as f64;
    let col = DMatrix::from_iterator(g.len(), 1, g.iter().map(|v| v.unwrap_or(m)));
    let engine = ScoreEngine::new(fit, y, mean, idx, true)?;
    Ok(engine.score_batch(&col).remove(0))
}

/// Per-trait SNP design columns: column `t` holds the dosage at rows of trait `t`.
pub fn snp_design(g: &DVector<f64>, idx: &ObservationIndex) -> DMatrix<f64> {
    let t = idx.n_traits();
    let mut out = DMatrix::zeros(idx.n_rows(), t);
    for (row, c) in idx.cells().iter().enumerate() {
        out[(row, c.trait_index)] = g[c.person];
    }
    out
}

/// Likelihood-ratio test of one SNP: refits with `T` extra untied mean
/// columns, starting from the null variance estimates.
pub fn lrt_refine(
    fit: &FitResult,
    g: &DVector<f64>,
    mean: &MeanModel,
    idx: &ObservationIndex,
    y: &DVector<f64>,
    opts: &FitOptions,
) -> Result<LrtResult> {
    let first = g[0];
    if g.iter().all(|&v| v == first) {
        return Err(Error::Model("constant genotype cannot be tested".into()));
    }
    let t = idx.n_traits();
    let extra = snp_design(g, idx);
    let labels: Vec<String> = (0..t).map(|k| format!("snp[{k}]")).collect();
    let alt_mean = mean.augmented(&extra, &labels);
    let alt = fit_null(y, &alt_mean, &fit.covariance, idx, opts)?;
    let statistic = (2.0 * (alt.loglik - fit.loglik)).max(0.0);
    let p = alt.beta.len();
    Ok(LrtResult {
        statistic,
        p_value: chi2_sf(statistic, t),
        effects: (p - t..p).map(|j| alt.beta[j]).collect(),
        effect_se: (p - t..p).map(|j| alt.beta_se[j]).collect(),
        converged: alt.converged,
        loglik_alt: alt.loglik,
    })
}

/// Scores every SNP, keeps the `top_k` smallest score p-values (file order
/// breaks ties) for LRT refinement and fills in the thresholds.
pub fn genome_scan(data: &ScanData, fit: &FitResult, cfg: &ScanConfig) -> Result<ScanResult> {
    cfg.validate()?;
    let geno = data.genotypes;
    let engine = ScoreEngine::new(fit, data.y, data.mean, data.idx, cfg.fit.use_rotation)?;
    let female_founders: Vec<usize> = data.founder_columns.iter().copied().filter(|&j| !data.male[j]).collect();
    let chunks: Vec<Vec<usize>> = (0..geno.n_snps()).collect::<Vec<_>>().chunks(SCAN_CHUNK).map(|c| c.to_vec()).collect();
    let n = data.person_column.len();
    let records: Vec<Vec<SnpRecord>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut codes = vec![0u8; geno.n_individuals()];
            let mut dosages = DMatrix::zeros(n, chunk.len());
            let mut recs = Vec::with_capacity(chunk.len());
            for (k, &s) in chunk.iter().enumerate() {
                geno.decode_row(s, &mut codes);
                let x_linked = geno.snps()[s].is_x_linked;
                let mapped;
                let row: &[u8] = if x_linked {
                    mapped = x_linked_dosage(&codes, &data.male, cfg.x_male_dosage);
                    &mapped
                } else {
                    &codes
                };
                let (g, maf_all, untested) = analysis_dosage(row, &data.person_column, cfg.maf_min);
                if untested.is_none() {
                    dosages.set_column(k, &g);
                }
                let hwe_p = if x_linked {
                    hwe_exact_founders(&codes, &female_founders)
                } else {
                    hwe_exact_founders(&codes, &data.founder_columns)
                };
                recs.push(SnpRecord {
                    snp: s,
                    maf_all,
                    maf_founders: founder_maf(row, &data.founder_columns),
                    hwe_p,
                    score_stat: None,
                    p_value: None,
                    untested,
                });
            }
            for (rec, out) in recs.iter_mut().zip(engine.score_batch(&dosages)) {
                if rec.untested.is_some() {
                    continue;
                }
                match out {
                    Ok((stat, p)) => {
                        rec.score_stat = Some(stat);
                        rec.p_value = Some(p);
                    }
                    Err(u) => rec.untested = Some(u),
                }
            }
            recs
        })
        .collect();
    let records: Vec<SnpRecord> = records.into_iter().flatten().collect();
    let tested: Vec<f64> = records.iter().filter_map(|r| r.p_value).collect();
    if tested.is_empty() {
        return Err(Error::Empty("scan tested no SNPs".into()));
    }
    let mut order: Vec<usize> = (0..records.len()).filter(|&i| records[i].tested()).collect();
    order.sort_by(|&a, &b| records[a].p_value.unwrap().total_cmp(&records[b].p_value.unwrap()).then(a.cmp(&b)));
    order.truncate(cfg.top_k);
    let top_hits: Vec<TopHit> = order
        .par_iter()
        .map(|&i| {
            let r = &records[i];
            let mut codes = geno.row(r.snp);
            if geno.snps()[r.snp].is_x_linked {
                codes = x_linked_dosage(&codes, &data.male, cfg.x_male_dosage);
            }
            let (g, _, _) = analysis_dosage(&codes, &data.person_column, 0.0);
            let (lrt, note) = match lrt_refine(fit, &g, data.mean, data.idx, data.y, &cfg.fit) {
                Ok(l) if l.converged => (Some(l), None),
                Ok(l) => (Some(l), Some("alternative fit did not converge".to_string())),
                Err(e) => (None, Some(format!("LRT failed: {e}"))),
            };
            TopHit {
                snp: r.snp,
                score_p: r.p_value.unwrap(),
                lrt,
                note,
            }
        })
        .collect();
    Ok(ScanResult {
        snps: geno.snps().to_vec(),
        lambda_gc: genomic_inflation(&tested),
        bonferroni: bonferroni(cfg.sig_level, tested.len()),
        fdr: bh_threshold(&tested, cfg.fdr_level),
        tested_count: tested.len(),
        n_traits: data.idx.n_traits(),
        records,
        top_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_dosage_rules() {
        let codes = [0, 1, 2, 1, MISSING];
        let male = [true, true, true, false, true];
        assert_eq!(x_linked_dosage(&codes, &male, MaleXDosage::ZeroTwo), vec![0, MISSING, 2, 1, MISSING]);
        assert_eq!(x_linked_dosage(&[0, 2], &[true, true], MaleXDosage::ZeroOne), vec![0, 1]);
    }

    #[test]
    fn dosage_reasons() {
        let cols = [0, 1, 2, 3];
        assert_eq!(analysis_dosage(&[MISSING; 4], &cols, 0.0).2, Some(Untested::NoCalls));
        assert_eq!(analysis_dosage(&[1, 1, MISSING, 1], &cols, 0.0).2, Some(Untested::Monomorphic));
        // 1 minor allele in 8: maf 0.125
        let (g, maf, r) = analysis_dosage(&[0, 0, 1, 0], &cols, 0.2);
        assert_eq!(r, Some(Untested::LowMaf));
        assert_eq!(maf, Some(0.125));
        let (g2, _, _) = analysis_dosage(&[0, MISSING, 2, 1], &cols, 0.0);
        assert_eq!(g2[1], 1.0);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn ranges_are_contiguous() {
        assert_eq!(trait_ranges(&[0, 0, 1, 1, 1], 3), vec![0..2, 2..5, 0..0]);
    }
}
