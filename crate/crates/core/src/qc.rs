//! Genotype quality control: call-rate filtering, exact Hardy-Weinberg tests
//! in founders and the genomic inflation factor.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genio::{GenotypeMatrix, MISSING};
use crate::stats::{chi2_1df_median, chi2_1df_upper_quantile, median};

/// An excluded SNP or individual with the reason and the pass that removed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
    pub call_rate: Option<f64>,
    pub pass: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QcReport {
    pub call_rate_threshold: f64,
    pub input_snps: usize,
    pub input_individuals: usize,
    pub snps_dropped: Vec<Exclusion>,
    pub individuals_dropped: Vec<Exclusion>,
    /// People removed later, from the analysis set (missing covariate, no trait, ...).
    pub analysis_exclusions: Vec<Exclusion>,
    pub passes: usize,
    pub hwe: Vec<(String, Option<f64>)>,
    pub lambda_gc: Option<f64>,
}

impl QcReport {
    pub fn snps_retained(&self) -> usize {
        self.input_snps - self.snps_dropped.len()
    }

    pub fn individuals_retained(&self) -> usize {
        self.input_individuals - self.individuals_dropped.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "call_rate_threshold\t{}", self.call_rate_threshold);
        let _ = writeln!(s, "filter_passes\t{}", self.passes);
        let _ = writeln!(s, "snps_input\t{}", self.input_snps);
        let _ = writeln!(s, "snps_dropped\t{}", self.snps_dropped.len());
        let _ = writeln!(s, "snps_retained\t{}", self.snps_retained());
        let _ = writeln!(s, "individuals_input\t{}", self.input_individuals);
        let _ = writeln!(s, "individuals_dropped\t{}", self.individuals_dropped.len());
        let _ = writeln!(s, "individuals_retained\t{}", self.individuals_retained());
        let _ = writeln!(s, "analysis_exclusions\t{}", self.analysis_exclusions.len());
        match self.lambda_gc {
            Some(l) => {
                let _ = writeln!(s, "lambda_gc\t{l:.4}");
            }
            None => {
                let _ = writeln!(s, "lambda_gc\tNA");
            }
        }
        let mut reasons: Vec<(&str, usize)> = Vec::new();
        for e in self.snps_dropped.iter().chain(&self.individuals_dropped).chain(&self.analysis_exclusions) {
            match reasons.iter_mut().find(|(r, _)| *r == e.reason) {
                Some(slot) => slot.1 += 1,
                None => reasons.push((&e.reason, 1)),
            }
        }
        for (r, c) in reasons {
            let _ = writeln!(s, "reason\t{r}\t{c}");
        }
        s
    }

    /// Machine-readable exclusions: kind, id, reason, call rate, pass.
    pub fn exclusions_tsv(&self) -> String {
        let mut s = String::from("kind\tid\treason\tcall_rate\tpass\n");
        for (kind, list) in [
            ("snp", &self.snps_dropped),
            ("individual", &self.individuals_dropped),
            ("analysis", &self.analysis_exclusions),
        ] {
            for e in list {
                let rate = e.call_rate.map_or("NA".to_string(), |r| format!("{r:.6}"));
                let _ = writeln!(s, "{kind}\t{}\t{}\t{rate}\t{}", e.id, e.reason, e.pass);
            }
        }
        s
    }

    pub fn hwe_tsv(&self) -> String {
        let mut s = String::from("snp\thwe_p_founders\n");
        for (name, p) in &self.hwe {
            let _ = writeln!(s, "{name}\t{}", p.map_or("NA".to_string(), |p| format!("{p:.6e}")));
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, body) in [
            ("qc_report.txt", self.to_text()),
            ("qc_exclusions.tsv", self.exclusions_tsv()),
            ("qc_hwe.tsv", self.hwe_tsv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn missing_counts(g: &GenotypeMatrix, snps: &[usize], keep: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let n = g.n_individuals();
    let per_snp_and_ind: Vec<(Vec<usize>, Vec<usize>)> = snps
        .par_chunks(1024)
        .map(|chunk| {
            let mut row = vec![0u8; n];
            let mut by_ind = vec![0usize; n];
            let mut by_snp = Vec::with_capacity(chunk.len());
            for &s in chunk {
                g.decode_row(s, &mut row);
                let mut miss = 0;
                for (i, &c) in row.iter().enumerate() {
                    if keep[i] && c == MISSING {
                        miss += 1;
                        by_ind[i] += 1;
                    }
                }
                by_snp.push(miss);
            }
            (by_snp, by_ind)
        })
        .collect();
    let mut by_snp = Vec::with_capacity(snps.len());
    let mut by_ind = vec![0usize; n];
    for (s, i) in per_snp_and_ind {
        by_snp.extend(s);
        for (a, b) in by_ind.iter_mut().zip(i) {
            *a += b;
        }
    }
    (by_snp, by_ind)
}

/// Drops SNPs whose call rate is below `threshold`, then individuals whose
/// call rate over the retained SNPs is below it, and repeats both passes
/// until nothing more is removed, so applying the filter twice changes
/// nothing.
pub fn call_rate_filter(g: &GenotypeMatrix, threshold: f64) -> Result<(GenotypeMatrix, QcReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("call rate threshold {threshold} must lie in (0, 1]")));
    }
    let n = g.n_individuals();
    let mut snps: Vec<usize> = (0..g.n_snps()).collect();
    let mut keep = vec![true; n];
    let mut report = QcReport {
        call_rate_threshold: threshold,
        input_snps: g.n_snps(),
        input_individuals: n,
        ..QcReport::default()
    };
    loop {
        report.passes += 1;
        let n_keep = keep.iter().filter(|&&k| k).count();
        if n_keep == 0 || snps.is_empty() {
            break;
        }
        let (by_snp, _) = missing_counts(g, &snps, &keep);
        let mut retained = Vec::with_capacity(snps.len());
        for (&s, &miss) in snps.iter().zip(&by_snp) {
            let rate = 1.0 - miss as f64 / n_keep as f64;
            if rate < threshold {
                report.snps_dropped.push(Exclusion {
                    id: g.snps()[s].name.clone(),
                    reason: "snp_call_rate".into(),
                    call_rate: Some(rate),
                    pass: report.passes,
                });
            } else {
                retained.push(s);
            }
        }
        snps = retained;
        if snps.is_empty() {
            break;
        }
        let (_, by_ind) = missing_counts(g, &snps, &keep);
        let mut dropped_any = false;
        for i in 0..n {
            if !keep[i] {
                continue;
            }
            let rate = 1.0 - by_ind[i] as f64 / snps.len() as f64;
            if rate < threshold {
                keep[i] = false;
                dropped_any = true;
                report.individuals_dropped.push(Exclusion {
                    id: g.samples()[i].individual_id.clone(),
                    reason: "individual_call_rate".into(),
                    call_rate: Some(rate),
                    pass: report.passes,
                });
            }
        }
        if !dropped_any {
            break;
        }
    }
    let individuals: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    if snps.is_empty() || individuals.is_empty() {
        return Err(Error::Empty(format!(
            "call-rate filter at {threshold} removed every {}",
            if snps.is_empty() { "SNP" } else { "individual" }
        )));
    }
    Ok((g.select(&snps, &individuals), report))
}

/// Exact null distribution of the heterozygote count among `n` genotypes
/// carrying `n_minor` minor alleles, indexed by het count (zero for counts of
/// the wrong parity). Built by the ratio recurrence from the mode outward and
/// normalized.
pub fn hwe_het_distribution(n: usize, n_minor: usize) -> Vec<f64> {
    assert!(n_minor <= n, "minor allele count exceeds the genotype count");
    let mut probs = vec![0.0; n_minor + 1];
    let n_major = 2 * n - n_minor;
    let nf = n as f64;
    let (ra, rb) = (n_minor as f64, n_major as f64);
    let mut mid = ((ra * rb) / (ra + rb).max(1.0)) as usize;
    if (n_minor - mid.min(n_minor)) % 2 != 0 {
        mid += 1;
    }
    let mid = mid.min(n_minor);
    probs[mid] = 1.0;
    let hom_r = |het: usize| (n_minor - het) / 2;
    // downwards: P(h-2) = P(h) * h(h-1) / (4 (hom_r+1)(hom_c+1))
    let mut h = mid;
    while h >= 2 {
        let hr = hom_r(h) as f64;
        let hc = (nf - hom_r(h) as f64 - h as f64).max(0.0);
        probs[h - 2] = probs[h] * (h as f64) * (h as f64 - 1.0) / (4.0 * (hr + 1.0) * (hc + 1.0));
        h -= 2;
    }
    // upwards: P(h+2) = P(h) * 4 hom_r hom_c / ((h+2)(h+1))
    let mut h = mid;
    while h + 2 <= n_minor {
        let hr = hom_r(h) as f64;
        let hc = nf - hom_r(h) as f64 - h as f64;
        probs[h + 2] = probs[h] * 4.0 * hr * hc / ((h as f64 + 2.0) * (h as f64 + 1.0));
        h += 2;
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Exact Hardy-Weinberg p-value from genotype counts: the total probability
/// of het counts no more likely than the observed one.
pub fn hwe_exact(hom1: usize, het: usize, hom2: usize) -> f64 {
    let n = hom1 + het + hom2;
    if n == 0 {
        return f64::NAN;
    }
    let n_minor = (2 * hom1 + het).min(2 * hom2 + het);
    let probs = hwe_het_distribution(n, n_minor);
    let obs = probs[het];
    let p: f64 = probs.iter().filter(|&&q| q <= obs * (1.0 + 1e-7)).sum();
    p.min(1.0)
}

/// Exact HWE p-value over the called genotypes of the given founders, or `None`
/// when none of them is called.
pub fn hwe_exact_founders(codes: &[u8], founders: &[usize]) -> Option<f64> {
    let mut counts = [0usize; 3];
    for &i in founders {
        let c = codes[i];
        if c != MISSING {
            counts[c as usize] += 1;
        }
    }
    (counts.iter().sum::<usize>() > 0).then(|| hwe_exact(counts[2], counts[1], counts[0]))
}

/// Median 1-df chi-square quantile of the p-values over the null median.
/// P-values of any test df are converted to the 1-df scale first.
pub fn genomic_inflation(p_values: &[f64]) -> Option<f64> {
    let q: Vec<f64> = p_values.iter().filter(|p| p.is_finite()).map(|&p| chi2_1df_upper_quantile(p)).collect();
    median(&q).map(|m| m / chi2_1df_median())
}
