use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::control::{ComponentKind, KinshipMode, Settings, SimSettings};
use crate::error::{Error, Result};
use crate::genio::{read_pedigree_csv, read_plink_prefix, read_traits_csv, GenotypeMatrix, Pedigree, TraitTable};
use crate::kinship::{
    assemble_empirical, assemble_global_kernel, delta7, grm_kinship, household_matrix, mom_kinship,
    theoretical_kinship, AssemblyMode, KernelMatrix,
};
use crate::qc::{call_rate_filter, Exclusion, QcReport};
use crate::report::{
    manhattan_svg, manhattan_tsv, qq_plot_svg, qq_tsv, top_hits_table, write_text, PlotSpec, HWE_SUSPECT,
};
use crate::scan::{genome_scan, ScanConfig, ScanData, ScanResult};
use crate::simulate::{nuclear_families, power_study, CovariateGen, PowerConfig, SimCovariate, SimKernel, SimSpec};
use crate::vcmodel::{
    fit_null, null_model_summary, pedigree_outlier_report, individual_outlier_report, CovarianceModel, DesignLayout,
    FitOptions, FitResult, MeanModel, ObservationIndex, OutlierRecord, Term, VarianceComponent,
};

/// An error together with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait Tag<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> Tag<T> for Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Wall-clock seconds per stage, written to `timing.log`.
struct Timer {
    start: Instant,
    stages: Vec<(String, f64)>,
}

impl Timer {
    fn new() -> Self {
        Timer {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = self.start.elapsed().as_secs_f64();
        let before: f64 = self.stages.iter().map(|s| s.1).sum();
        self.stages.push((name.to_string(), now - before));
        log::info!("{name} finished in {:.3}s", now - before);
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut s = String::from("stage\tseconds\n");
        for (name, secs) in &self.stages {
            let _ = writeln!(s, "{name}\t{secs:.3}");
        }
        let _ = writeln!(s, "total\t{:.3}", self.start.elapsed().as_secs_f64());
        write_text(dir.join("timing.log"), &s)
    }
}

fn prepare_output(settings: &Settings) -> Result<()> {
    let dir = &settings.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(dir.join("resolved_control.txt"), &settings.echo())
}

/// Inputs shared by every trait analysed from one control file.
pub struct Population {
    pub pedigrees: Vec<Pedigree>,
    pub genotypes: GenotypeMatrix,
    pub qc: QcReport,
    /// Genotype column of each `(pedigree, member)`, when genotyped.
    column_of: HashMap<(usize, usize), usize>,
    /// Genotype column to its pedigree position.
    member_of: Vec<Option<(usize, usize)>>,
}

impl Population {
    pub fn load(settings: &Settings) -> StageResult<Population> {
        let ped_path = settings.pedigree_file.as_ref().expect("required key checked");
        let pedigrees = read_pedigree_csv(ped_path).stage("ingest")?;
        let parts = settings
            .genotype_files
            .iter()
            .map(read_plink_prefix)
            .collect::<Result<Vec<_>>>()
            .stage("ingest")?;
        let raw = GenotypeMatrix::concat(parts).stage("ingest")?;
        let (genotypes, qc) = call_rate_filter(&raw, settings.call_rate_min).stage("qc")?;
        Ok(Self::assemble(pedigrees, genotypes, qc))
    }

    fn assemble(pedigrees: Vec<Pedigree>, genotypes: GenotypeMatrix, qc: QcReport) -> Population {
        let mut by_id: HashMap<&str, usize> = HashMap::new();
        for (c, s) in genotypes.samples().iter().enumerate() {
            by_id.entry(s.individual_id.as_str()).or_insert(c);
        }
        let mut column_of = HashMap::new();
        let mut member_of = vec![None; genotypes.n_individuals()];
        for (pi, ped) in pedigrees.iter().enumerate() {
            for (mi, person) in ped.individuals().iter().enumerate() {
                if let Some(&c) = by_id.get(person.person_id.as_str()) {
                    if member_of[c].is_none() {
                        member_of[c] = Some((pi, mi));
                        column_of.insert((pi, mi), c);
                    }
                }
            }
        }
        Population {
            pedigrees,
            genotypes,
            qc,
            column_of,
            member_of,
        }
    }

    fn male_columns(&self) -> Vec<bool> {
        self.member_of
            .iter()
            .map(|m| m.is_some_and(|(p, i)| self.pedigrees[p].individuals()[i].sex.is_male()))
            .collect()
    }

    fn founder_columns(&self) -> Vec<usize> {
        (0..self.member_of.len())
            .filter(|&c| self.member_of[c].is_some_and(|(p, i)| self.pedigrees[p].individuals()[i].is_founder()))
            .collect()
    }

    fn autosomal_mask(&self) -> Vec<bool> {
        self.genotypes.snps().iter().map(|s| !s.is_x_linked).collect()
    }
}

/// The persons entering one analysis, in pedigree order, and their data.
pub struct Analysis {
    pub trait_names: Vec<String>,
    pub ids: Vec<String>,
    pub members: Vec<(usize, usize)>,
    pub person_column: Vec<usize>,
    pub idx: ObservationIndex,
    pub y: DVector<f64>,
    pub mean: MeanModel,
    pub cov: CovarianceModel,
    pub exclusions: Vec<Exclusion>,
}

/// Covariate source column for one (covariate, trait).
fn covariate_column(settings: &Settings, name: &str, t: usize) -> String {
    settings
        .covariate_columns
        .get(name)
        .and_then(|cols| cols.get(t))
        .cloned()
        .unwrap_or_else(|| name.to_string())
}

fn phenotype_table(settings: &Settings) -> Result<TraitTable> {
    let mut cols: Vec<String> = Vec::new();
    for c in &settings.covariates {
        for t in 0..settings.traits.len() {
            let col = covariate_column(settings, c, t);
            if !cols.contains(&col) {
                cols.push(col);
            }
        }
    }
    read_traits_csv(settings.phenotype_file.as_ref().expect("required key checked"), &settings.traits, &cols)
}

fn exclusion(id: &str, reason: &str) -> Exclusion {
    Exclusion {
        id: id.to_string(),
        reason: reason.to_string(),
        call_rate: None,
        pass: 0,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum TermKind {
    Intercept,
    Covariate(usize),
    Interaction(usize, usize),
}

impl Analysis {
    pub fn build(settings: &Settings, pop: &Population) -> Result<Analysis> {
        let table = phenotype_table(settings)?;
        let t_count = settings.traits.len();
        let row_of: HashMap<&str, usize> = table.row_of();
        let mut kinds = vec![TermKind::Intercept];
        let mut terms = vec![Term::free("mu")];
        let tied = |name: &str| settings.constrain_equal.iter().any(|c| c == name);
        for (k, c) in settings.covariates.iter().enumerate() {
            kinds.push(TermKind::Covariate(k));
            terms.push(if tied(c) { Term::tied(c) } else { Term::free(c) });
        }
        for (a, b) in &settings.interactions {
            let ia = settings.covariates.iter().position(|c| c == a).expect("checked at resolve");
            let ib = settings.covariates.iter().position(|c| c == b).expect("checked at resolve");
            let name = format!("{a}*{b}");
            kinds.push(TermKind::Interaction(ia, ib));
            terms.push(if tied(&name) { Term::tied(&name) } else { Term::free(&name) });
        }
        if tied("mu") {
            terms[0] = Term::tied("mu");
        }
        // covariate index in the table for (covariate, trait)
        let cov_idx: Vec<Vec<usize>> = settings
            .covariates
            .iter()
            .map(|c| {
                (0..t_count)
                    .map(|t| table.covariate_index(&covariate_column(settings, c, t)).expect("column was read"))
                    .collect()
            })
            .collect();

        let mut ids = Vec::new();
        let mut members = Vec::new();
        let mut person_column = Vec::new();
        // per analysed person: observed flag and design values per (trait, term)
        let mut cells: Vec<Vec<Option<(f64, Vec<f64>)>>> = Vec::new();
        let mut exclusions = Vec::new();
        for (pi, ped) in pop.pedigrees.iter().enumerate() {
            for (mi, person) in ped.individuals().iter().enumerate() {
                let id = person.person_id.as_str();
                let Some(&col) = pop.column_of.get(&(pi, mi)) else {
                    exclusions.push(exclusion(id, "no_genotypes"));
                    continue;
                };
                let Some(&row) = row_of.get(id) else {
                    exclusions.push(exclusion(id, "no_phenotype_row"));
                    continue;
                };
                let mut any_value = false;
                let per_trait: Vec<Option<(f64, Vec<f64>)>> = (0..t_count)
                    .map(|t| {
                        let v = table.value(row, t)?;
                        any_value = true;
                        let cv: Option<Vec<f64>> = (0..settings.covariates.len())
                            .map(|k| table.covariate(row, cov_idx[k][t]))
                            .collect();
                        let cv = cv?;
                        let x = kinds
                            .iter()
                            .map(|k| match *k {
                                TermKind::Intercept => 1.0,
                                TermKind::Covariate(a) => cv[a],
                                TermKind::Interaction(a, b) => cv[a] * cv[b],
                            })
                            .collect();
                        Some((v, x))
                    })
                    .collect();
                if per_trait.iter().all(Option::is_none) {
                    exclusions.push(exclusion(id, if any_value { "missing_covariate" } else { "no_trait_values" }));
                    continue;
                }
                ids.push(id.to_string());
                members.push((pi, mi));
                person_column.push(col);
                cells.push(per_trait);
            }
        }
        for (c, m) in pop.member_of.iter().enumerate() {
            if m.is_none() {
                exclusions.push(exclusion(&pop.genotypes.samples()[c].individual_id, "not_in_pedigree"));
            }
        }
        let n = ids.len();
        if n == 0 {
            return Err(Error::Empty("no person has genotypes, a phenotype row and a complete trait cell".into()));
        }
        let kernels = analysis_kernels(settings, pop, &members, &person_column)?;
        let refs: Vec<&KernelMatrix> = kernels.iter().map(|(_, k)| k.as_ref()).collect();
        let idx = ObservationIndex::from_kernels(n, t_count, &refs, |p, t| cells[p][t].is_some());
        let y = idx.stack(|p, t| cells[p][t].as_ref().expect("observed").0);
        let groups: Vec<Vec<usize>> = settings
            .trait_groups
            .iter()
            .map(|g| g.iter().map(|name| settings.traits.iter().position(|t| t == name).expect("checked")).collect())
            .collect();
        let layout = DesignLayout {
            terms,
            trait_names: settings.traits.clone(),
            groups,
        };
        let mean = MeanModel::from_layout(&layout, &idx, |p, t, k| cells[p][t].as_ref().expect("observed").1[k]);
        let id_t = DMatrix::identity(t_count, t_count);
        let components = kernels
            .into_iter()
            .map(|(kind, k)| match kind {
                ComponentKind::Additive => VarianceComponent::additive(id_t.clone(), k),
                ComponentKind::Environment => VarianceComponent::environment(id_t.clone(), n),
                other => VarianceComponent::other(other.label(), id_t.clone(), k),
            })
            .collect();
        let mut cov = CovarianceModel::new(components);
        cov.initialize_from_data(&y, &idx);
        Ok(Analysis {
            trait_names: settings.traits.clone(),
            ids,
            members,
            person_column,
            idx,
            y,
            mean,
            cov,
            exclusions,
        })
    }

    fn pedigree_groups(&self, pop: &Population) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (p, &(pi, _)) in self.members.iter().enumerate() {
            let id = &pop.pedigrees[pi].pedigree_id;
            match out.last_mut() {
                Some((last, v)) if last == id => v.push(p),
                _ => out.push((id.clone(), vec![p])),
            }
        }
        out
    }
}

/// Per-pedigree blocks of analysed persons (analysis order is pedigree-contiguous).
fn pedigree_blocks(members: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (p, &(pi, _)) in members.iter().enumerate() {
        match blocks.last_mut() {
            Some(b) if members[b[0]].0 == pi => b.push(p),
            _ => blocks.push(vec![p]),
        }
    }
    blocks
}

fn per_pedigree<F>(pop: &Population, members: &[(usize, usize)], make: F) -> Result<KernelMatrix>
where
    F: Fn(&Pedigree) -> Result<KernelMatrix>,
{
    let mut parts = Vec::new();
    for block in pedigree_blocks(members) {
        let pi = members[block[0]].0;
        let keep: Vec<usize> = block.iter().map(|&p| members[p].1).collect();
        parts.push(make(&pop.pedigrees[pi])?.restrict(&keep));
    }
    Ok(assemble_global_kernel(&parts))
}

fn additive_kernel(
    mode: KinshipMode,
    pop: &Population,
    members: &[(usize, usize)],
    person_column: &[usize],
) -> Result<KernelMatrix> {
    if mode == KinshipMode::Theoretical {
        return per_pedigree(pop, members, |p| Ok(theoretical_kinship(p)));
    }
    let snps: Vec<usize> = (0..pop.genotypes.n_snps()).filter(|&s| pop.autosomal_mask()[s]).collect();
    if snps.is_empty() {
        return Err(Error::Degenerate("empirical kinship needs autosomal SNPs".into()));
    }
    let sub = pop.genotypes.select(&snps, person_column);
    let blocks = pedigree_blocks(members);
    Ok(match mode {
        KinshipMode::GrmWithinPedigree => assemble_empirical(grm_kinship(&sub, None)?, AssemblyMode::WithinPedigree, blocks),
        KinshipMode::GrmGlobal => assemble_empirical(grm_kinship(&sub, None)?, AssemblyMode::Global, blocks),
        KinshipMode::MomGlobal => assemble_empirical(mom_kinship(&sub)?, AssemblyMode::Global, blocks),
        KinshipMode::Theoretical => unreachable!(),
    })
}

fn analysis_kernels(
    settings: &Settings,
    pop: &Population,
    members: &[(usize, usize)],
    person_column: &[usize],
) -> Result<Vec<(ComponentKind, Arc<KernelMatrix>)>> {
    let n = members.len();
    settings
        .components
        .iter()
        .map(|&kind| {
            let k = match kind {
                ComponentKind::Additive => additive_kernel(settings.kinship_mode, pop, members, person_column)?,
                ComponentKind::Dominance => per_pedigree(pop, members, delta7)?,
                ComponentKind::Household => {
                    let offsets: Vec<usize> = pop
                        .pedigrees
                        .iter()
                        .scan(0, |acc, p| {
                            let o = *acc;
                            *acc += p.len();
                            Some(o)
                        })
                        .collect();
                    let keep: Vec<usize> = members.iter().map(|&(pi, mi)| offsets[pi] + mi).collect();
                    household_matrix(&pop.pedigrees).restrict(&keep)
                }
                ComponentKind::Environment => KernelMatrix::identity(n),
            };
            Ok((kind, Arc::new(k)))
        })
        .collect()
}

fn outliers_tsv(records: &[OutlierRecord]) -> String {
    let mut s = String::from("unit\tid\tn_cells\tstatistic\tp_value\n");
    for r in records {
        let _ = writeln!(s, "{}\t{}\t{}\t{:.6}\t{:.6e}", r.unit.label(), r.id, r.n_cells, r.statistic, r.p_value);
    }
    s
}

fn scan_config(settings: &Settings) -> ScanConfig {
    ScanConfig {
        maf_min: settings.maf_min,
        top_k: settings.top_k,
        sig_level: settings.sig_level,
        fdr_level: 0.05,
        x_male_dosage: settings.x_male_dosage,
        fit: FitOptions::default(),
    }
}

/// Null fit, outliers, scan and plots for one trait set, written to `dir`.
fn analyse(settings: &Settings, pop: &Population, dir: &Path, timer: &mut Timer) -> StageResult<(Analysis, FitResult, ScanResult)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("output")?;
    let analysis = Analysis::build(settings, pop).stage("model")?;
    log::info!(
        "{} analysed persons, {} observed cells, {} traits",
        analysis.ids.len(),
        analysis.idx.n_rows(),
        analysis.trait_names.len()
    );
    timer.lap("design");
    let fit = fit_null(&analysis.y, &analysis.mean, &analysis.cov, &analysis.idx, &FitOptions::default()).stage("null_fit")?;
    if !fit.converged {
        log::warn!("null model did not meet the convergence criteria after {} iterations", fit.iterations);
    }
    write_text(dir.join("null_model.txt"), &null_model_summary(&fit, &analysis.mean, &analysis.trait_names)).stage("output")?;
    let mut outliers =
        pedigree_outlier_report(&fit, &analysis.idx, &analysis.pedigree_groups(pop)).stage("outliers")?;
    outliers.extend(individual_outlier_report(&fit, &analysis.idx, &analysis.ids).stage("outliers")?);
    write_text(dir.join("outliers.tsv"), &outliers_tsv(&outliers)).stage("output")?;
    timer.lap("null_fit");

    let data = ScanData {
        genotypes: &pop.genotypes,
        person_column: analysis.person_column.clone(),
        founder_columns: pop.founder_columns(),
        male: pop.male_columns(),
        y: &analysis.y,
        mean: &analysis.mean,
        idx: &analysis.idx,
    };
    let scan = genome_scan(&data, &fit, &scan_config(settings)).stage("scan")?;
    timer.lap("scan");

    scan.write_tsv(dir.join("scan_results.tsv")).stage("output")?;
    write_text(dir.join("top_hits.txt"), &top_hits_table(&scan, settings.top_k)).stage("output")?;
    let plot = PlotSpec::from_scan(&scan);
    write_text(dir.join("manhattan.svg"), &manhattan_svg(&plot).stage("report")?).stage("output")?;
    write_text(dir.join("manhattan_points.tsv"), &manhattan_tsv(&plot)).stage("output")?;
    let ps = scan.tested_p_values();
    write_text(dir.join("qq.svg"), &qq_plot_svg(&ps, scan.lambda_gc).stage("report")?).stage("output")?;
    write_text(dir.join("qq_points.tsv"), &qq_tsv(&ps)).stage("output")?;

    let mut qc = pop.qc.clone();
    qc.analysis_exclusions = analysis.exclusions.clone();
    qc.lambda_gc = scan.lambda_gc;
    qc.hwe = scan
        .records
        .iter()
        .map(|r| (scan.snps[r.snp].name.clone(), r.hwe_p))
        .collect();
    qc.write(dir).stage("output")?;
    timer.lap("report");
    Ok((analysis, fit, scan))
}

pub fn run_scan(settings: &Settings) -> StageResult<()> {
    settings.require("scan").stage("config")?;
    let mut timer = Timer::new();
    prepare_output(settings).stage("output")?;
    let pop = Population::load(settings)?;
    timer.lap("ingest_qc");
    analyse(settings, &pop, &settings.output_dir, &mut timer)?;
    timer.write(&settings.output_dir).stage("output")
}

fn read_trait_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let t = line.split('#').next().unwrap_or("").trim();
        if !t.is_empty() && !out.iter().any(|x| x == t) {
            out.push(t.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("batch_trait_list {} names no traits", path.display())));
    }
    Ok(out)
}

fn phenotype_header(path: &Path) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(headers.iter().map(str::to_string).collect())
}

/// Per-trait outcome of a batch run.
pub struct BatchTrait {
    pub name: String,
    pub lambda_gc: Option<f64>,
    pub tested: usize,
    pub failure: Option<String>,
}

/// Histogram of per-trait inflation factors over fixed bins of width 0.05.
pub fn lambda_histogram(lambdas: &[f64]) -> String {
    let mut s = String::from("bin_low\tbin_high\tcount\n");
    if lambdas.is_empty() {
        return s;
    }
    let width = 0.05;
    let lo = (lambdas.iter().cloned().fold(f64::INFINITY, f64::min) / width).floor() as i64;
    let hi = (lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / width).floor() as i64;
    for b in lo..=hi {
        let count = lambdas.iter().filter(|&&l| (l / width).floor() as i64 == b).count();
        let _ = writeln!(s, "{:.2}\t{:.2}\t{count}", b as f64 * width, (b + 1) as f64 * width);
    }
    s
}

pub fn run_batch(settings: &Settings) -> StageResult<Vec<BatchTrait>> {
    settings.require("batch").stage("config")?;
    let mut timer = Timer::new();
    prepare_output(settings).stage("output")?;
    let traits = read_trait_list(settings.batch_trait_list.as_ref().expect("checked")).stage("config")?;
    let header = phenotype_header(settings.phenotype_file.as_ref().expect("checked")).stage("ingest")?;
    let pop = Population::load(settings)?;
    timer.lap("ingest_qc");

    // traits share the pool with the per-SNP parallelism inside each scan
    let results: Vec<(BatchTrait, Option<ScanResult>, Timer)> = traits
        .par_iter()
        .map(|name| {
            let mut local = Timer::new();
            let mut outcome = BatchTrait {
                name: name.clone(),
                lambda_gc: None,
                tested: 0,
                failure: None,
            };
            if !header.iter().any(|h| h == name) {
                log::warn!("trait {name}: not a column of the phenotype file, skipped");
                outcome.failure = Some("column not found".into());
                return (outcome, None, local);
            }
            let mut one = settings.clone();
            one.traits = vec![name.clone()];
            one.trait_groups = vec![vec![name.clone()]];
            one.covariate_columns.clear();
            let dir = settings.output_dir.join(format!("trait_{name}"));
            match analyse(&one, &pop, &dir, &mut local) {
                Ok((_, _, scan)) => {
                    outcome.lambda_gc = scan.lambda_gc;
                    outcome.tested = scan.tested_count;
                    (outcome, Some(scan), local)
                }
                Err(e) => {
                    log::warn!("trait {name}: {e}, skipped");
                    outcome.failure = Some(e.to_string());
                    (outcome, None, local)
                }
            }
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut scans: Vec<(String, ScanResult)> = Vec::new();
    for (outcome, scan, local) in results {
        for (stage, secs) in local.stages {
            timer.stages.push((format!("{}:{stage}", outcome.name), secs));
        }
        if let Some(scan) = scan {
            scans.push((outcome.name.clone(), scan));
        }
        outcomes.push(outcome);
    }
    let out = &settings.output_dir;
    let mut by_trait = String::from("trait\tlambda_gc\ttested\tstatus\n");
    for o in &outcomes {
        let lambda = o.lambda_gc.map_or("NA".to_string(), |l| format!("{l:.4}"));
        let status = o.failure.as_deref().map_or("ok".to_string(), |f| format!("failed: {}", f.replace(['\t', '\n'], " ")));
        let _ = writeln!(by_trait, "{}\t{lambda}\t{}\t{status}", o.name, o.tested);
    }
    write_text(out.join("batch_lambda.tsv"), &by_trait).stage("output")?;
    let lambdas: Vec<f64> = outcomes.iter().filter_map(|o| o.lambda_gc).collect();
    write_text(out.join("batch_lambda_histogram.tsv"), &lambda_histogram(&lambdas)).stage("output")?;
    write_text(out.join("batch_hits.tsv"), &batch_hits(&scans, settings.maf_min)).stage("output")?;
    timer.lap("aggregate");
    timer.write(out).stage("output")?;
    if scans.is_empty() {
        return Err(Error::Empty("every trait in the batch failed".into())).stage("batch");
    }
    Ok(outcomes)
}

/// Whole-batch per-test level `alpha / traits / snps`.
pub fn batch_level(alpha: f64, n_traits: usize, n_snps: usize) -> f64 {
    alpha / n_traits as f64 / n_snps as f64
}

/// Hits surviving the batch filters: trait inflation below 1.1, p below
/// `0.05 / traits / snps`, founder HWE above the suspect level and MAF above
/// the analysis threshold.
pub fn batch_hits(scans: &[(String, ScanResult)], maf_min: f64) -> String {
    let n_traits = scans.len().max(1);
    let n_snps = scans.iter().map(|(_, s)| s.tested_count).max().unwrap_or(0).max(1);
    let level = batch_level(0.05, n_traits, n_snps);
    let mut s = format!("# level={level:.3e} traits={n_traits} snps={n_snps}\n");
    s.push_str("trait\tsnp\tchr\tbp\tmaf_founders\thwe_p\tp\n");
    for (name, scan) in scans {
        if !scan.lambda_gc.is_some_and(|l| l < 1.1) {
            continue;
        }
        for r in &scan.records {
            let (Some(p), Some(maf)) = (r.p_value, r.maf_founders.or(r.maf_all)) else {
                continue;
            };
            let hwe_ok = r.hwe_p.is_none_or(|h| h > HWE_SUSPECT);
            if p < level && hwe_ok && maf > maf_min {
                let info = &scan.snps[r.snp];
                let hwe = r.hwe_p.map_or("NA".to_string(), |h| format!("{h:.3e}"));
                let _ = writeln!(s, "{name}\t{}\t{}\t{}\t{maf:.4}\t{hwe}\t{p:.3e}", info.name, info.chromosome, info.base_pair);
            }
        }
    }
    s
}

fn dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let t = rows.len();
    DMatrix::from_fn(t, t, |i, j| rows[i][j])
}

/// Simulation design from the `[sim]` section. Effects are chosen so each
/// causal SNP explains its requested share of the total variance.
pub fn sim_spec(sim: &SimSettings, seed: u64) -> Result<SimSpec> {
    let pedigrees = match &sim.pedigree_file {
        Some(p) => read_pedigree_csv(p)?,
        None => {
            if sim.families == 0 {
                return Err(Error::Config("sim.families must be at least 1".into()));
            }
            nuclear_families(sim.families, sim.children)
        }
    };
    let t = sim.traits.len();
    let mut components = vec![(SimKernel::Additive, dmatrix(&sim.additive))];
    if let Some(d) = &sim.dominance {
        components.push((SimKernel::Dominance, dmatrix(d)));
    }
    if let Some(h) = &sim.household {
        components.push((SimKernel::Household, dmatrix(h)));
    }
    components.push((SimKernel::Environment, dmatrix(&sim.environment)));
    let covariates = if sim.sex_effect != 0.0 {
        vec![SimCovariate {
            name: "sex".into(),
            generator: CovariateGen::Sex,
            effects: vec![sim.sex_effect; t],
        }]
    } else {
        Vec::new()
    };
    let total_pct: f64 = sim.pct_var.iter().sum();
    if total_pct >= 1.0 {
        return Err(Error::Config("sim.pct_var values must sum to less than 1".into()));
    }
    let base = |tt: usize| -> f64 {
        let vc: f64 = components.iter().map(|(_, s)| s[(tt, tt)]).sum();
        vc + 0.25 * sim.sex_effect * sim.sex_effect * (sim.sex_effect != 0.0) as u8 as f64
    };
    let mut causal = Vec::new();
    for (s, (&pct, &maf)) in sim.pct_var.iter().zip(&sim.maf).enumerate() {
        if pct > 0.0 {
            if !(maf > 0.0 && maf <= 0.5) {
                return Err(Error::Config(format!("sim.maf {maf} of a causal SNP must lie in (0, 0.5]")));
            }
            let effects = (0..t)
                .map(|tt| (pct * base(tt) / ((1.0 - total_pct) * 2.0 * maf * (1.0 - maf))).sqrt())
                .collect();
            causal.push((s, effects));
        }
    }
    let spec = SimSpec {
        pedigrees,
        trait_names: sim.traits.clone(),
        snp_maf: sim.maf.clone(),
        causal,
        components,
        covariates,
        intercept: vec![0.0; t],
        replicates: sim.replicates,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn run_power(settings: &Settings) -> StageResult<()> {
    settings.require("power").stage("config")?;
    let mut timer = Timer::new();
    prepare_output(settings).stage("output")?;
    let sim = settings.sim.as_ref().expect("checked");
    let spec = sim_spec(sim, settings.seed).stage("simulate")?;
    let cfg = PowerConfig {
        alpha: sim.alpha,
        level_override: sim.level,
        fit: FitOptions::default(),
    };
    let table = power_study(&spec, &cfg).stage("simulate")?;
    if table.failed_replicates > 0 {
        log::warn!("{} of {} replicates failed to fit", table.failed_replicates, table.replicates);
    }
    timer.lap("simulate");
    write_text(settings.output_dir.join("power.tsv"), &table.to_tsv()).stage("output")?;
    timer.write(&settings.output_dir).stage("output")
}

pub fn run_kinship(settings: &Settings) -> StageResult<()> {
    settings.require("kinship").stage("config")?;
    let mut timer = Timer::new();
    prepare_output(settings).stage("output")?;
    let out = &settings.output_dir;
    let pedigrees = match &settings.pedigree_file {
        Some(p) => Some(read_pedigree_csv(p).stage("ingest")?),
        None => None,
    };
    if settings.kinship_mode == KinshipMode::Theoretical {
        let peds = pedigrees.as_ref().expect("checked");
        let ids: Vec<String> = peds.iter().flat_map(|p| p.individuals().iter().map(|m| m.person_id.clone())).collect();
        let phi = assemble_global_kernel(&peds.iter().map(theoretical_kinship).collect::<Vec<_>>());
        phi.write_lower_triangle(out.join("kinship_theoretical.tsv"), &ids).stage("output")?;
        if settings.components.contains(&ComponentKind::Dominance) {
            let d = assemble_global_kernel(&peds.iter().map(delta7).collect::<Result<Vec<_>>>().stage("kinship")?);
            d.write_lower_triangle(out.join("kinship_dominance.tsv"), &ids).stage("output")?;
        }
        if settings.components.contains(&ComponentKind::Household) {
            household_matrix(peds).write_lower_triangle(out.join("kinship_household.tsv"), &ids).stage("output")?;
        }
    } else {
        let parts = settings
            .genotype_files
            .iter()
            .map(read_plink_prefix)
            .collect::<Result<Vec<_>>>()
            .stage("ingest")?;
        let raw = GenotypeMatrix::concat(parts).stage("ingest")?;
        let (g, qc) = call_rate_filter(&raw, settings.call_rate_min).stage("qc")?;
        qc.write(out).stage("output")?;
        let auto: Vec<usize> = (0..g.n_snps()).filter(|&s| !g.snps()[s].is_x_linked).collect();
        let all: Vec<usize> = (0..g.n_individuals()).collect();
        let g = g.select(&auto, &all);
        let ids: Vec<String> = g.samples().iter().map(|s| s.individual_id.clone()).collect();
        // families from the pedigree when given, else from the fam file
        let family: Vec<String> = g
            .samples()
            .iter()
            .map(|s| {
                pedigrees
                    .as_ref()
                    .and_then(|peds| peds.iter().find(|p| p.index_of(&s.individual_id).is_some()))
                    .map_or(s.family_id.clone(), |p| p.pedigree_id.clone())
            })
            .collect();
        let mut blocks: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, f) in family.iter().enumerate() {
            match blocks.iter_mut().find(|(name, _)| name == f) {
                Some((_, b)) => b.push(i),
                None => blocks.push((f.clone(), vec![i])),
            }
        }
        let blocks: Vec<Vec<usize>> = blocks.into_iter().map(|(_, b)| b).collect();
        let k = match settings.kinship_mode {
            KinshipMode::GrmWithinPedigree => {
                assemble_empirical(grm_kinship(&g, None).stage("kinship")?, AssemblyMode::WithinPedigree, blocks)
            }
            KinshipMode::GrmGlobal => assemble_empirical(grm_kinship(&g, None).stage("kinship")?, AssemblyMode::Global, blocks),
            KinshipMode::MomGlobal => assemble_empirical(mom_kinship(&g).stage("kinship")?, AssemblyMode::Global, blocks),
            KinshipMode::Theoretical => unreachable!(),
        };
        k.write_lower_triangle(out.join(format!("kinship_{}.tsv", settings.kinship_mode.label())), &ids)
            .stage("output")?;
    }
    timer.lap("kinship");
    timer.write(out).stage("output")
}

/// Runs one subcommand inside a thread pool sized by the settings.
pub fn run_settings(subcommand: &str, settings: &Settings) -> StageResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", settings.threads)))
        .stage("config")?;
    pool.install(|| match subcommand {
        "scan" => run_scan(settings),
        "batch" => run_batch(settings).map(|_| ()),
        "power" => run_power(settings),
        "kinship" => run_kinship(settings),
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))).stage("config"),
    })
}

/// Reads a control file, applies command-line overrides and runs.
pub fn run_control(subcommand: &str, control: &Path, threads: Option<usize>, seed: Option<u64>) -> StageResult<PathBuf> {
    let mut cf = super::control::ControlFile::read(control).stage("config")?;
    if let Some(t) = threads {
        cf.entries.insert("threads".into(), t.to_string());
    }
    if let Some(s) = seed {
        cf.entries.insert("seed".into(), s.to_string());
    }
    let settings = Settings::resolve(&cf).stage("config")?;
    run_settings(subcommand, &settings)?;
    Ok(settings.output_dir)
}
