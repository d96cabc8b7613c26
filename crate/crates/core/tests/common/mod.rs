#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;

use pedqtl::genio::{write_pedigree_csv, GenotypeMatrix, SnpInfo};
use pedqtl::simulate::{
    nuclear_families, replicate_rng, simulate_genotypes, CovariateGen, SimCovariate, SimKernel, SimSpec,
    TraitSimulator,
};

pub struct DatasetSpec<'a> {
    pub families: usize,
    pub children: usize,
    pub n_snps: usize,
    pub traits: &'a [&'a str],
    /// `(snp, effect)` applied to every trait.
    pub causal: &'a [(usize, f64)],
    pub seed: u64,
    pub chromosomes: usize,
}

impl Default for DatasetSpec<'_> {
    fn default() -> Self {
        DatasetSpec {
            families: 40,
            children: 3,
            n_snps: 400,
            traits: &["y1", "y2"],
            causal: &[],
            seed: 7,
            chromosomes: 4,
        }
    }
}

/// Writes `ped.csv`, `geno.{bed,bim,fam}` and `pheno.csv` (traits plus `sex`
/// and `age`) into `dir`.
pub fn write_dataset(dir: &Path, d: &DatasetSpec) {
    let peds = nuclear_families(d.families, d.children);
    let mut rng = replicate_rng(d.seed, 0);
    let mafs: Vec<f64> = (0..d.n_snps).map(|_| rng.gen_range(0.05..0.5)).collect();
    let sim_geno = simulate_genotypes(&peds, &mafs, &mut rng).unwrap();
    let per_chr = d.n_snps.div_ceil(d.chromosomes.max(1));
    let snps: Vec<SnpInfo> = (0..d.n_snps)
        .map(|s| SnpInfo::new(&format!("rs{}", s + 1), &format!("{}", s / per_chr + 1), 1000 * (s % per_chr) as u64 + 1))
        .collect();
    let rows: Vec<Vec<u8>> = (0..d.n_snps).map(|s| sim_geno.row(s)).collect();
    let geno = GenotypeMatrix::from_codes(snps, sim_geno.samples().to_vec(), &rows).unwrap();
    let t = d.traits.len();
    let spec = SimSpec {
        pedigrees: peds.clone(),
        trait_names: d.traits.iter().map(|s| s.to_string()).collect(),
        snp_maf: mafs,
        causal: d.causal.iter().map(|&(s, b)| (s, vec![b; t])).collect(),
        components: vec![
            (SimKernel::Additive, DMatrix::from_fn(t, t, |i, j| if i == j { 0.4 } else { 0.15 })),
            (SimKernel::Environment, DMatrix::from_fn(t, t, |i, j| if i == j { 0.6 } else { 0.1 })),
        ],
        covariates: vec![
            SimCovariate {
                name: "sex".into(),
                generator: CovariateGen::Sex,
                effects: vec![0.3; t],
            },
            SimCovariate {
                name: "age".into(),
                generator: CovariateGen::Normal { mean: 40.0, sd: 10.0 },
                effects: vec![0.02; t],
            },
        ],
        intercept: vec![1.0; t],
        replicates: 1,
        seed: d.seed,
    };
    let sim = TraitSimulator::new(&spec).unwrap();
    let table = sim.simulate(&spec, |s, p| rows[s][p] as f64, &mut rng).unwrap();
    write_pedigree_csv(dir.join("ped.csv"), &peds).unwrap();
    geno.write_plink(dir.join("geno")).unwrap();
    table.write_csv(dir.join("pheno.csv")).unwrap();
}

pub fn write_control(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

pub fn base_control(traits: &str) -> String {
    format!(
        "pedigree_file = ped.csv\ngenotype_file = geno\nphenotype_file = pheno.csv\ntraits = {traits}\n\
         covariates = sex, age\noutput_dir = out\nseed = 11\n"
    )
}
