//! Gene-dropping genotype simulation, trait simulation under the
//! variance-component model and a replicate-based power/size harness.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genio::{FamEntry, GenotypeMatrix, Pedigree, RawPerson, Sex, SnpInfo, TraitTable};
use crate::kinship::{assemble_global_kernel, delta7, household_matrix, theoretical_kinship, KernelMatrix};
use crate::scan::{analysis_dosages_for, ScoreEngine};
use crate::vcmodel::{fit_null, CovarianceModel, DesignLayout, FitOptions, MeanModel, ObservationIndex, Term, VarianceComponent};

/// Name of the generator recorded in simulation output headers.
pub const RNG_ALGORITHM: &str = "ChaCha8";

/// Independent, reproducible stream for one replicate.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Drops founder alleles through the pedigree. Returns counts of the allele
/// drawn with probability `maf` at founders. In X-linked mode males carry a
/// single X (coded 0 or 2) and sons receive only their mother's allele.
pub fn gene_drop<R: Rng + ?Sized>(ped: &Pedigree, founder_maf: f64, x_linked: bool, rng: &mut R) -> Vec<u8> {
    let members = ped.individuals();
    let mut alleles: Vec<[bool; 2]> = Vec::with_capacity(members.len());
    for p in members {
        let male_x = x_linked && p.sex == Sex::Male;
        let pair = match p.parents() {
            None => {
                let a = rng.gen_bool(founder_maf);
                [a, if male_x { a } else { rng.gen_bool(founder_maf) }]
            }
            Some((f, m)) => {
                let from_mother = alleles[m][rng.gen_range(0..2)];
                if male_x {
                    [from_mother, from_mother]
                } else {
                    let from_father = if x_linked { alleles[f][0] } else { alleles[f][rng.gen_range(0..2)] };
                    [from_father, from_mother]
                }
            }
        };
        alleles.push(pair);
    }
    alleles.iter().map(|a| a[0] as u8 + a[1] as u8).collect()
}

/// Gene drop with a distinct label on every founder allele, for identity-by-descent
/// checks. Same inheritance rules as [`gene_drop`].
pub fn gene_drop_labels<R: Rng + ?Sized>(ped: &Pedigree, x_linked: bool, rng: &mut R) -> Vec<[u32; 2]> {
    let members = ped.individuals();
    let mut out: Vec<[u32; 2]> = Vec::with_capacity(members.len());
    let mut next = 0u32;
    for p in members {
        let male_x = x_linked && p.sex == Sex::Male;
        let pair = match p.parents() {
            None => {
                let a = next;
                next += 1;
                let b = if male_x {
                    a
                } else {
                    next += 1;
                    next - 1
                };
                [a, b]
            }
            Some((f, m)) => {
                let from_mother = out[m][rng.gen_range(0..2)];
                if male_x {
                    [from_mother, from_mother]
                } else {
                    let from_father = if x_linked { out[f][0] } else { out[f][rng.gen_range(0..2)] };
                    [from_father, from_mother]
                }
            }
        };
        out.push(pair);
    }
    out
}

/// Genotypes for all members of `peds` (concatenated in order) at SNPs with the
/// given founder frequencies, on chromosome 1 at positions 1, 2, ...
pub fn simulate_genotypes<R: Rng + ?Sized>(peds: &[Pedigree], mafs: &[f64], rng: &mut R) -> Result<GenotypeMatrix> {
    let samples: Vec<FamEntry> = peds
        .iter()
        .flat_map(|p| {
            p.individuals().iter().map(move |m| FamEntry {
                family_id: p.pedigree_id.clone(),
                individual_id: m.person_id.clone(),
            })
        })
        .collect();
    let rows: Vec<Vec<u8>> = mafs
        .iter()
        .map(|&maf| peds.iter().flat_map(|p| gene_drop(p, maf, false, rng)).collect())
        .collect();
    let snps = (0..mafs.len()).map(|s| SnpInfo::new(&format!("sim{}", s + 1), "1", s as u64 + 1)).collect();
    GenotypeMatrix::from_codes(snps, samples, &rows)
}

/// `n_families` two-generation families with `n_children` full sibs each.
pub fn nuclear_families(n_families: usize, n_children: usize) -> Vec<Pedigree> {
    (0..n_families)
        .map(|f| {
            let father = format!("F{f}_fa");
            let mother = format!("F{f}_mo");
            let mut raw = vec![
                RawPerson::new(&father, None, None, Sex::Male),
                RawPerson::new(&mother, None, None, Sex::Female),
            ];
            for c in 0..n_children {
                let sex = if c % 2 == 0 { Sex::Female } else { Sex::Male };
                raw.push(RawPerson::new(&format!("F{f}_c{c}"), Some(&father), Some(&mother), sex).with_household(&format!("H{f}")));
            }
            raw[0] = raw[0].clone().with_household(&format!("H{f}"));
            raw[1] = raw[1].clone().with_household(&format!("H{f}"));
            Pedigree::new(&format!("F{f}"), raw).expect("generated pedigree is valid")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKernel {
    Additive,
    Dominance,
    Household,
    Environment,
}

impl SimKernel {
    pub fn parse(s: &str) -> Option<SimKernel> {
        match s {
            "additive" => Some(SimKernel::Additive),
            "dominance" => Some(SimKernel::Dominance),
            "household" => Some(SimKernel::Household),
            "environment" => Some(SimKernel::Environment),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SimKernel::Additive => "additive",
            SimKernel::Dominance => "dominance",
            SimKernel::Household => "household",
            SimKernel::Environment => "environment",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateGen {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
    /// 1 for males, 0 for females.
    Sex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCovariate {
    pub name: String,
    pub generator: CovariateGen,
    /// Per-trait effect.
    pub effects: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub pedigrees: Vec<Pedigree>,
    pub trait_names: Vec<String>,
    /// Founder minor-allele frequency per simulated SNP.
    pub snp_maf: Vec<f64>,
    /// `(snp, per-trait effect)`.
    pub causal: Vec<(usize, Vec<f64>)>,
    pub components: Vec<(SimKernel, DMatrix<f64>)>,
    pub covariates: Vec<SimCovariate>,
    pub intercept: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

impl SimSpec {
    pub fn n_traits(&self) -> usize {
        self.trait_names.len()
    }

    pub fn n_persons(&self) -> usize {
        self.pedigrees.iter().map(Pedigree::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_traits();
        if t == 0 {
            return Err(Error::Config("simulation needs at least one trait".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("simulation needs at least one replicate".into()));
        }
        if self.pedigrees.is_empty() {
            return Err(Error::Config("simulation needs at least one pedigree".into()));
        }
        if self.intercept.len() != t {
            return Err(Error::Config("intercept needs one value per trait".into()));
        }
        if let Some(m) = self.snp_maf.iter().find(|m| !(0.0..=0.5).contains(*m)) {
            return Err(Error::Config(format!("simulated MAF {m} outside [0, 0.5]")));
        }
        for (s, b) in &self.causal {
            if *s >= self.snp_maf.len() {
                return Err(Error::Config(format!("causal SNP {s} is not among the simulated SNPs")));
            }
            if b.len() != t {
                return Err(Error::Config(format!("causal SNP {s} needs one effect per trait")));
            }
        }
        for c in &self.covariates {
            if c.effects.len() != t {
                return Err(Error::Config(format!("covariate {} needs one effect per trait", c.name)));
            }
        }
        for (k, s) in &self.components {
            if s.shape() != (t, t) {
                return Err(Error::Config(format!("{} covariance must be {t}x{t}", k.label())));
            }
            if SymmetricEigen::new(s.clone()).eigenvalues.min() < -1e-10 {
                return Err(Error::Config(format!("{} covariance is not positive semidefinite", k.label())));
            }
        }
        Ok(())
    }

    /// Per-trait variance of a typical person implied by the spec: variance
    /// components, causal SNPs (`2pq beta^2`) and covariates.
    pub fn total_variance(&self) -> Vec<f64> {
        (0..self.n_traits())
            .map(|t| {
                let vc: f64 = self.components.iter().map(|(_, s)| s[(t, t)]).sum();
                let snp: f64 = self
                    .causal
                    .iter()
                    .map(|(s, b)| {
                        let p = self.snp_maf[*s];
                        2.0 * p * (1.0 - p) * b[t] * b[t]
                    })
                    .sum();
                let cov: f64 = self
                    .covariates
                    .iter()
                    .map(|c| {
                        let v = match c.generator {
                            CovariateGen::Normal { sd, .. } => sd * sd,
                            CovariateGen::Bernoulli { p } => p * (1.0 - p),
                            CovariateGen::Sex => 0.25,
                        };
                        v * c.effects[t] * c.effects[t]
                    })
                    .sum();
                vc + snp + cov
            })
            .collect()
    }

    /// Largest per-trait share of variance explained by SNP `snp`.
    pub fn pct_var(&self, snp: usize) -> f64 {
        let total = self.total_variance();
        let p = self.snp_maf[snp];
        self.causal
            .iter()
            .filter(|(s, _)| *s == snp)
            .flat_map(|(_, b)| b.iter().zip(&total).map(|(b, v)| 2.0 * p * (1.0 - p) * b * b / v).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Effect size giving a SNP of frequency `maf` the share `pct` of total
/// variance when everything else contributes `other_var`.
pub fn effect_for_pct_var(pct: f64, maf: f64, other_var: f64) -> f64 {
    (pct * other_var / (2.0 * maf * (1.0 - maf) * (1.0 - pct))).sqrt()
}

/// Structure kernels of the concatenated pedigrees, per simulated component.
pub fn spec_kernels(peds: &[Pedigree], kinds: &[SimKernel]) -> Result<Vec<KernelMatrix>> {
    let n: usize = peds.iter().map(Pedigree::len).sum();
    kinds
        .iter()
        .map(|k| {
            Ok(match k {
                SimKernel::Additive => {
                    let mut phi = assemble_global_kernel(&peds.iter().map(theoretical_kinship).collect::<Vec<_>>());
                    // simulated covariance is 2 Sigma ⊗ Phi
                    phi.values *= 2.0;
                    phi
                }
                SimKernel::Dominance => assemble_global_kernel(&peds.iter().map(delta7).collect::<Result<Vec<_>>>()?),
                SimKernel::Household => household_matrix(peds),
                SimKernel::Environment => KernelMatrix::identity(n),
            })
        })
        .collect()
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Blockwise square roots of a kernel (identity blocks stay implicit).
fn kernel_roots(k: &KernelMatrix) -> Vec<(Vec<usize>, DMatrix<f64>)> {
    let n = k.dim();
    let blocks = k.block_structure.clone().unwrap_or_else(|| vec![(0..n).collect()]);
    blocks
        .into_iter()
        .map(|b| {
            let sub = DMatrix::from_fn(b.len(), b.len(), |i, j| k.values[(b[i], b[j])]);
            (b, sqrt_psd(&sub))
        })
        .collect()
}

/// Precomputed square roots for repeated trait simulation.
pub struct TraitSimulator {
    roots: Vec<(Vec<(Vec<usize>, DMatrix<f64>)>, DMatrix<f64>)>,
    sexes: Vec<Sex>,
    ids: Vec<String>,
}

impl TraitSimulator {
    pub fn new(spec: &SimSpec) -> Result<Self> {
        spec.validate()?;
        let kinds: Vec<SimKernel> = spec.components.iter().map(|c| c.0).collect();
        let kernels = spec_kernels(&spec.pedigrees, &kinds)?;
        let roots = kernels
            .iter()
            .zip(&spec.components)
            .map(|(k, (_, s))| (kernel_roots(k), sqrt_psd(s)))
            .collect();
        let members = spec.pedigrees.iter().flat_map(|p| p.individuals());
        let (sexes, ids) = members.map(|m| (m.sex, m.person_id.clone())).unzip();
        Ok(TraitSimulator { roots, sexes, ids })
    }

    /// One draw of the traits. `dosage(snp, person)` supplies causal genotypes.
    pub fn simulate<R, F>(&self, spec: &SimSpec, dosage: F, rng: &mut R) -> Result<TraitTable>
    where
        R: Rng + ?Sized,
        F: Fn(usize, usize) -> f64,
    {
        let n = self.ids.len();
        let t = spec.n_traits();
        let mut y = DMatrix::<f64>::zeros(n, t);
        for (blocks, sroot) in &self.roots {
            let z = DMatrix::<f64>::from_fn(n, t, |_, _| StandardNormal.sample(rng));
            let mut e = DMatrix::<f64>::zeros(n, t);
            for (b, kroot) in blocks {
                let zb = DMatrix::from_fn(b.len(), t, |i, j| z[(b[i], j)]);
                let eb = kroot * zb * sroot.transpose();
                for (i, &p) in b.iter().enumerate() {
                    e.row_mut(p).copy_from(&eb.row(i));
                }
            }
            y += e;
        }
        let mut covs = DMatrix::<f64>::zeros(n, spec.covariates.len());
        for (c, cv) in spec.covariates.iter().enumerate() {
            for p in 0..n {
                covs[(p, c)] = match cv.generator {
                    CovariateGen::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
                    CovariateGen::Bernoulli { p: q } => rng.gen_bool(q) as u8 as f64,
                    CovariateGen::Sex => self.sexes[p].is_male() as u8 as f64,
                };
            }
        }
        for p in 0..n {
            for tt in 0..t {
                let mut v = spec.intercept[tt];
                for (c, cv) in spec.covariates.iter().enumerate() {
                    v += cv.effects[tt] * covs[(p, c)];
                }
                for (s, b) in &spec.causal {
                    v += b[tt] * dosage(*s, p);
                }
                y[(p, tt)] += v;
            }
        }
        let values = (0..n).flat_map(|p| (0..t).map(move |tt| (p, tt))).map(|(p, tt)| Some(y[(p, tt)])).collect();
        let cov_values = (0..n)
            .flat_map(|p| (0..spec.covariates.len()).map(move |c| (p, c)))
            .map(|(p, c)| Some(covs[(p, c)]))
            .collect();
        TraitTable::new(
            self.ids.clone(),
            spec.trait_names.clone(),
            spec.covariates.iter().map(|c| c.name.clone()).collect(),
            values,
            cov_values,
        )
    }
}

/// Traits for the persons of `spec` from causal genotypes `genotypes`
/// (columns in pedigree order).
pub fn simulate_traits<R: Rng + ?Sized>(spec: &SimSpec, genotypes: &GenotypeMatrix, rng: &mut R) -> Result<TraitTable> {
    let sim = TraitSimulator::new(spec)?;
    let rows: Vec<Vec<u8>> = (0..genotypes.n_snps()).map(|s| genotypes.row(s)).collect();
    sim.simulate(spec, |s, p| rows[s][p] as f64, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub alpha: f64,
    /// Per-SNP rejection level; when `None` the Bonferroni level `alpha / m`
    /// over the testable SNPs of each replicate is used.
    pub level_override: Option<f64>,
    pub fit: FitOptions,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            alpha: 0.05,
            level_override: None,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub snp: String,
    pub maf: f64,
    pub pct_var: f64,
    pub rejections: usize,
    pub tested: usize,
    pub rate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerTable {
    pub rows: Vec<PowerRow>,
    pub replicates: usize,
    pub seed: u64,
    pub failed_replicates: usize,
}

impl PowerTable {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# rng={RNG_ALGORITHM} seed={} replicates={}\n", self.seed, self.replicates);
        s.push_str("snp\tmaf\tpct_var\trejections\ttested\trate\tse\n");
        for r in &self.rows {
            let se = r.se.map_or("NA".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.6}\t{}\t{}\t{:.6}\t{se}",
                r.snp, r.maf, r.pct_var, r.rejections, r.tested, r.rate
            );
        }
        s
    }
}

/// Per-replicate outcome: score p-value of every simulated SNP (`None` if untested).
pub fn simulate_replicate(spec: &SimSpec, sim: &TraitSimulator, replicate: u64, fit_opts: &FitOptions) -> Result<Vec<Option<f64>>> {
    let mut rng = replicate_rng(spec.seed, replicate);
    let geno = simulate_genotypes(&spec.pedigrees, &spec.snp_maf, &mut rng)?;
    let rows: Vec<Vec<u8>> = (0..geno.n_snps()).map(|s| geno.row(s)).collect();
    let traits = sim.simulate(spec, |s, p| rows[s][p] as f64, &mut rng)?;
    let n = spec.n_persons();
    let t = spec.n_traits();
    let kinship = Arc::new(assemble_global_kernel(&spec.pedigrees.iter().map(theoretical_kinship).collect::<Vec<_>>()));
    let blocks = kinship.block_structure.clone().expect("pedigree blocks");
    let idx = ObservationIndex::new(n, t, blocks, |p, tt| traits.value(p, tt).is_some());
    let y = idx.stack(|p, tt| traits.value(p, tt).unwrap_or(0.0));
    let mut terms = vec![Term::free("mu")];
    terms.extend(spec.covariates.iter().map(|c| Term::free(&c.name)));
    let layout = DesignLayout::new(terms, spec.trait_names.clone());
    let mean = MeanModel::from_layout(&layout, &idx, |p, _, k| if k == 0 { 1.0 } else { traits.covariate(p, k - 1).unwrap_or(0.0) });
    let mut cov = CovarianceModel::new(vec![
        VarianceComponent::additive(DMatrix::identity(t, t), kinship),
        VarianceComponent::environment(DMatrix::identity(t, t), n),
    ]);
    cov.initialize_from_data(&y, &idx);
    let fit = fit_null(&y, &mean, &cov, &idx, fit_opts)?;
    let engine = ScoreEngine::new(&fit, &y, &mean, &idx, fit_opts.use_rotation)?;
    let columns: Vec<usize> = (0..n).collect();
    let (g, ok) = analysis_dosages_for(&geno, &columns, 0.0);
    let scores = engine.score_batch(&g);
    Ok(scores.into_iter().zip(ok).map(|(s, ok)| if ok { s.ok().map(|x| x.1) } else { None }).collect())
}

/// Runs `spec.replicates` simulated datasets (in parallel, streams keyed by
/// replicate index) and reports the rejection rate of every simulated SNP.
pub fn power_study(spec: &SimSpec, cfg: &PowerConfig) -> Result<PowerTable> {
    let sim = TraitSimulator::new(spec)?;
    let outcomes: Vec<Result<Vec<Option<f64>>>> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(spec, &sim, r, &cfg.fit))
        .collect();
    let m = spec.snp_maf.len();
    let mut rejections = vec![0usize; m];
    let mut tested = vec![0usize; m];
    let mut failed = 0;
    for out in outcomes {
        let Ok(ps) = out else {
            failed += 1;
            continue;
        };
        let m_tested = ps.iter().filter(|p| p.is_some()).count().max(1);
        let level = cfg.level_override.unwrap_or(cfg.alpha / m_tested as f64);
        for (s, p) in ps.iter().enumerate() {
            if let Some(p) = p {
                tested[s] += 1;
                if *p < level {
                    rejections[s] += 1;
                }
            }
        }
    }
    if failed == spec.replicates {
        return Err(Error::Numeric("every simulation replicate failed to fit".into()));
    }
    let rows = (0..m)
        .map(|s| {
            let rate = if tested[s] > 0 { rejections[s] as f64 / tested[s] as f64 } else { 0.0 };
            PowerRow {
                snp: format!("sim{}", s + 1),
                maf: spec.snp_maf[s],
                pct_var: spec.pct_var(s),
                rejections: rejections[s],
                tested: tested[s],
                rate,
                se: (tested[s] > 1).then(|| (rate * (1.0 - rate) / tested[s] as f64).sqrt()),
            }
        })
        .collect();
    Ok(PowerTable {
        rows,
        replicates: spec.replicates,
        seed: spec.seed,
        failed_replicates: failed,
    })
}

/// Convenience: vector of dosages of one SNP for simulated persons.
pub fn dosage_vector(g: &GenotypeMatrix, snp: usize) -> DVector<f64> {
    DVector::from_iterator(g.n_individuals(), g.row(snp).into_iter().map(|c| c as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trio() -> Pedigree {
        nuclear_families(1, 1).remove(0)
    }

    #[test]
    fn zero_maf_gives_zero_codes() {
        let mut rng = replicate_rng(1, 0);
        assert!(gene_drop(&trio(), 0.0, false, &mut rng).iter().all(|&c| c == 0));
    }

    #[test]
    fn founder_genotypes_follow_hardy_weinberg() {
        let ped = trio();
        let mut rng = replicate_rng(7, 0);
        let draws = 100_000;
        let p = 0.3;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[gene_drop(&ped, p, false, &mut rng)[0] as usize] += 1;
        }
        for (k, expected) in [(1.0 - p) * (1.0 - p), 2.0 * p * (1.0 - p), p * p].into_iter().enumerate() {
            let obs = counts[k] as f64 / draws as f64;
            let se = (expected * (1.0 - expected) / draws as f64).sqrt();
            assert!((obs - expected).abs() < 3.0 * se, "class {k}: {obs} vs {expected}");
        }
    }

    #[test]
    fn sib_ibd_sharing() {
        let ped = nuclear_families(1, 2).remove(0);
        let mut rng = replicate_rng(3, 0);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let l = gene_drop_labels(&ped, false, &mut rng);
            let (a, b) = (l[2], l[3]);
            acc += a.iter().flat_map(|x| b.iter().map(move |y| (x == y) as u8 as f64)).sum::<f64>() / 4.0;
        }
        let est = acc / draws as f64;
        assert!((est - 0.25).abs() < 0.005, "{est}");
    }

    #[test]
    fn x_drop_male_codes() {
        let ped = nuclear_families(1, 4).remove(0);
        let mut rng = replicate_rng(5, 0);
        for _ in 0..200 {
            let g = gene_drop(&ped, 0.4, true, &mut rng);
            for (p, m) in ped.individuals().iter().enumerate() {
                if m.sex == Sex::Male {
                    assert_ne!(g[p], 1);
                }
            }
        }
    }

    #[test]
    fn iid_traits_without_structure() {
        let mut spec = SimSpec {
            pedigrees: nuclear_families(50, 2),
            trait_names: vec!["y".into()],
            snp_maf: vec![],
            causal: vec![],
            components: vec![(SimKernel::Environment, DMatrix::identity(1, 1))],
            covariates: vec![],
            intercept: vec![0.0],
            replicates: 1,
            seed: 1,
        };
        let mut rng = replicate_rng(2, 0);
        let geno = simulate_genotypes(&spec.pedigrees, &[], &mut rng).unwrap();
        let t = simulate_traits(&spec, &geno, &mut rng).unwrap();
        let v: Vec<f64> = (0..t.n_persons()).map(|p| t.value(p, 0).unwrap()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(mean.abs() < 0.3 && (var - 1.0).abs() < 0.35);
        spec.components.clear();
        assert!(TraitSimulator::new(&spec).is_ok());
    }

    #[test]
    fn pct_var_inverse() {
        let b = effect_for_pct_var(0.02, 0.2, 3.0);
        let v = 2.0 * 0.2 * 0.8 * b * b;
        assert!((v / (v + 3.0) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn seeded_determinism() {
        let peds = nuclear_families(3, 2);
        let a = simulate_genotypes(&peds, &[0.1, 0.4], &mut replicate_rng(9, 4)).unwrap();
        let b = simulate_genotypes(&peds, &[0.1, 0.4], &mut replicate_rng(9, 4)).unwrap();
        assert_eq!(a, b);
    }
}
