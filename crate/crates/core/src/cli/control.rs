use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scan::MaleXDosage;

/// Raw `key = value` entries of a control file. Keys inside a `[sim]`
/// section are stored with a `sim.` prefix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlFile {
    pub entries: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

const TOP_KEYS: &[&str] = &[
    "pedigree_file",
    "genotype_file",
    "phenotype_file",
    "traits",
    "covariates",
    "interactions",
    "constrain_equal",
    "trait_groups",
    "kinship_mode",
    "components",
    "maf_min",
    "call_rate_min",
    "top_k",
    "threads",
    "seed",
    "output_dir",
    "batch_trait_list",
    "sig_level",
    "x_male_dosage",
];

const SIM_KEYS: &[&str] = &[
    "pedigree_file",
    "families",
    "children",
    "traits",
    "maf",
    "pct_var",
    "additive",
    "dominance",
    "household",
    "environment",
    "sex_effect",
    "replicates",
    "alpha",
    "level",
];

impl ControlFile {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<ControlFile> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                if section != "sim" {
                    return Err(Error::Config(format!("line {}: unknown section [{section}]", n + 1)));
                }
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)));
            };
            let k = k.trim();
            let v = v.trim().to_string();
            let key = if section.is_empty() {
                let known = TOP_KEYS.contains(&k) || k.strip_prefix("covariate.").is_some_and(|c| !c.is_empty());
                if !known {
                    return Err(Error::Config(format!("line {}: unknown key `{k}`", n + 1)));
                }
                k.to_string()
            } else {
                if !SIM_KEYS.contains(&k) {
                    return Err(Error::Config(format!("line {}: unknown key `{k}` in [sim]", n + 1)));
                }
                format!("sim.{k}")
            };
            if entries.insert(key.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: key `{key}` given twice", n + 1)));
            }
        }
        Ok(ControlFile {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<ControlFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ControlFile::parse(&text, base)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinshipMode {
    Theoretical,
    GrmWithinPedigree,
    GrmGlobal,
    MomGlobal,
}

impl KinshipMode {
    pub fn parse(s: &str) -> Result<KinshipMode> {
        match s {
            "theoretical" => Ok(KinshipMode::Theoretical),
            "grm_within_pedigree" => Ok(KinshipMode::GrmWithinPedigree),
            "grm_global" => Ok(KinshipMode::GrmGlobal),
            "mom_global" => Ok(KinshipMode::MomGlobal),
            _ => Err(Error::Config(format!(
                "kinship_mode `{s}`: expected theoretical, grm_within_pedigree, grm_global or mom_global"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            KinshipMode::Theoretical => "theoretical",
            KinshipMode::GrmWithinPedigree => "grm_within_pedigree",
            KinshipMode::GrmGlobal => "grm_global",
            KinshipMode::MomGlobal => "mom_global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ComponentKind {
    Additive,
    Dominance,
    Household,
    Environment,
}

impl ComponentKind {
    pub fn parse(s: &str) -> Result<ComponentKind> {
        match s {
            "additive" => Ok(ComponentKind::Additive),
            "dominance" => Ok(ComponentKind::Dominance),
            "household" => Ok(ComponentKind::Household),
            "environment" => Ok(ComponentKind::Environment),
            _ => Err(Error::Config(format!(
                "component `{s}`: expected additive, dominance, household or environment"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ComponentKind::Additive => "additive",
            ComponentKind::Dominance => "dominance",
            ComponentKind::Household => "household",
            ComponentKind::Environment => "environment",
        }
    }
}

/// The `[sim]` section with defaults filled.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub pedigree_file: Option<PathBuf>,
    pub families: usize,
    pub children: usize,
    pub traits: Vec<String>,
    pub maf: Vec<f64>,
    pub pct_var: Vec<f64>,
    pub additive: Vec<Vec<f64>>,
    pub dominance: Option<Vec<Vec<f64>>>,
    pub household: Option<Vec<Vec<f64>>>,
    pub environment: Vec<Vec<f64>>,
    pub sex_effect: f64,
    pub replicates: usize,
    pub alpha: f64,
    pub level: Option<f64>,
}

/// Fully resolved configuration: every key has a value, paths are absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pedigree_file: Option<PathBuf>,
    pub genotype_files: Vec<PathBuf>,
    pub phenotype_file: Option<PathBuf>,
    pub traits: Vec<String>,
    pub covariates: Vec<String>,
    /// Per-trait source columns of a covariate (`covariate.<name> = c1, c2, ...`).
    pub covariate_columns: BTreeMap<String, Vec<String>>,
    pub interactions: Vec<(String, String)>,
    pub constrain_equal: Vec<String>,
    pub trait_groups: Vec<Vec<String>>,
    pub kinship_mode: KinshipMode,
    pub components: Vec<ComponentKind>,
    pub maf_min: f64,
    pub call_rate_min: f64,
    pub top_k: usize,
    pub threads: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub batch_trait_list: Option<PathBuf>,
    pub sig_level: f64,
    pub x_male_dosage: MaleXDosage,
    pub sim: Option<SimSettings>,
}

fn list(v: Option<&str>) -> Vec<String> {
    v.map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
        .unwrap_or_default()
}

fn number<T: std::str::FromStr>(cf: &ControlFile, key: &str, default: T) -> Result<T> {
    match cf.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}` as a number"))),
    }
}

fn floats(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{x}` as a number")))
        })
        .collect()
}

/// A T x T matrix written as rows separated by `;` (a single number means a
/// multiple of the identity).
fn matrix(key: &str, v: &str, t: usize) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = v.split(';').map(|r| floats(key, r)).collect::<Result<_>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        let d = rows[0][0];
        return Ok((0..t).map(|i| (0..t).map(|j| if i == j { d } else { 0.0 }).collect()).collect());
    }
    if rows.len() != t || rows.iter().any(|r| r.len() != t) {
        return Err(Error::Config(format!("key `{key}`: expected a {t}x{t} matrix")));
    }
    Ok(rows)
}

fn path(cf: &ControlFile, v: &str) -> PathBuf {
    let p = PathBuf::from(v);
    let joined = if p.is_absolute() { p } else { cf.base_dir.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl Settings {
    pub fn resolve(cf: &ControlFile) -> Result<Settings> {
        let traits = list(cf.get("traits"));
        let covariates = list(cf.get("covariates"));
        let mut covariate_columns = BTreeMap::new();
        for (k, v) in &cf.entries {
            if let Some(name) = k.strip_prefix("covariate.") {
                if !covariates.iter().any(|c| c == name) {
                    return Err(Error::Config(format!("key `{k}`: `{name}` is not listed in covariates")));
                }
                let cols = list(Some(v));
                if !traits.is_empty() && cols.len() != traits.len() {
                    return Err(Error::Config(format!("key `{k}`: needs one column per trait ({})", traits.len())));
                }
                covariate_columns.insert(name.to_string(), cols);
            }
        }
        let mut interactions = Vec::new();
        for term in list(cf.get("interactions")) {
            let Some((a, b)) = term.split_once('*') else {
                return Err(Error::Config(format!("interaction `{term}` must look like a*b")));
            };
            let (a, b) = (a.trim().to_string(), b.trim().to_string());
            for c in [&a, &b] {
                if !covariates.contains(c) {
                    return Err(Error::Config(format!("interaction `{term}`: `{c}` is not listed in covariates")));
                }
            }
            interactions.push((a, b));
        }
        let constrain_equal = list(cf.get("constrain_equal"));
        for c in &constrain_equal {
            let is_term = covariates.contains(c) || interactions.iter().any(|(a, b)| format!("{a}*{b}") == *c) || c == "mu";
            if !is_term {
                return Err(Error::Config(format!("constrain_equal: `{c}` is not a covariate or interaction")));
            }
        }
        let trait_groups: Vec<Vec<String>> = match cf.get("trait_groups") {
            None => vec![traits.clone()],
            Some(v) => v.split(';').map(|g| list(Some(g))).collect(),
        };
        if !traits.is_empty() {
            let mut seen: Vec<&String> = trait_groups.iter().flatten().collect();
            seen.sort();
            let mut want: Vec<&String> = traits.iter().collect();
            want.sort();
            if seen != want {
                return Err(Error::Config("trait_groups must partition the traits".into()));
            }
        }
        let components = match cf.get("components") {
            None => vec![ComponentKind::Additive, ComponentKind::Environment],
            Some(_) => {
                let mut c: Vec<ComponentKind> =
                    list(cf.get("components")).iter().map(|s| ComponentKind::parse(s)).collect::<Result<_>>()?;
                c.sort();
                c.dedup();
                c
            }
        };
        if !components.contains(&ComponentKind::Environment) {
            return Err(Error::Config("components must include environment".into()));
        }
        let maf_min = number(cf, "maf_min", 0.01)?;
        if !(0.0..0.5).contains(&maf_min) {
            return Err(Error::Config(format!("maf_min {maf_min} must lie in [0, 0.5)")));
        }
        let call_rate_min = number(cf, "call_rate_min", 0.98)?;
        if !(call_rate_min > 0.0 && call_rate_min <= 1.0) {
            return Err(Error::Config(format!("call_rate_min {call_rate_min} must lie in (0, 1]")));
        }
        let sig_level = number(cf, "sig_level", 0.05)?;
        if !(sig_level > 0.0 && sig_level < 1.0) {
            return Err(Error::Config(format!("sig_level {sig_level} must lie in (0, 1)")));
        }
        let threads = match cf.get("threads") {
            None | Some("0") => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Some(_) => number(cf, "threads", 1usize)?,
        };
        let x_male_dosage = match cf.get("x_male_dosage").unwrap_or("0/2") {
            "0/2" => MaleXDosage::ZeroTwo,
            "0/1" => MaleXDosage::ZeroOne,
            v => return Err(Error::Config(format!("x_male_dosage `{v}`: expected 0/2 or 0/1"))),
        };
        let sim = if cf.entries.keys().any(|k| k.starts_with("sim.")) {
            Some(Self::resolve_sim(cf)?)
        } else {
            None
        };
        Ok(Settings {
            pedigree_file: cf.get("pedigree_file").map(|v| path(cf, v)),
            genotype_files: list(cf.get("genotype_file")).iter().map(|v| path(cf, v)).collect(),
            phenotype_file: cf.get("phenotype_file").map(|v| path(cf, v)),
            traits,
            covariates,
            covariate_columns,
            interactions,
            constrain_equal,
            trait_groups,
            kinship_mode: KinshipMode::parse(cf.get("kinship_mode").unwrap_or("theoretical"))?,
            components,
            maf_min,
            call_rate_min,
            top_k: number(cf, "top_k", 10)?,
            threads,
            seed: number(cf, "seed", 1)?,
            output_dir: path(cf, cf.get("output_dir").unwrap_or("pedqtl_out")),
            batch_trait_list: cf.get("batch_trait_list").map(|v| path(cf, v)),
            sig_level,
            x_male_dosage,
            sim,
        })
    }

    fn resolve_sim(cf: &ControlFile) -> Result<SimSettings> {
        let traits = match cf.get("sim.traits") {
            Some(v) => list(Some(v)),
            None => vec!["trait1".to_string()],
        };
        if traits.is_empty() {
            return Err(Error::Config("sim.traits is empty".into()));
        }
        let t = traits.len();
        let maf = floats("sim.maf", cf.get("sim.maf").ok_or_else(|| Error::Config("missing required key `maf` in [sim]".into()))?)?;
        let pct_var = match cf.get("sim.pct_var") {
            Some(v) => floats("sim.pct_var", v)?,
            None => vec![0.0; maf.len()],
        };
        if pct_var.len() != maf.len() {
            return Err(Error::Config("sim.pct_var needs one value per simulated SNP".into()));
        }
        if let Some(p) = pct_var.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("sim.pct_var {p} must lie in [0, 1)")));
        }
        let opt_matrix = |key: &str| cf.get(key).map(|v| matrix(key, v, t)).transpose();
        let replicates = number(cf, "sim.replicates", 100usize)?;
        if replicates == 0 {
            return Err(Error::Config("sim.replicates must be at least 1".into()));
        }
        Ok(SimSettings {
            pedigree_file: cf.get("sim.pedigree_file").map(|v| path(cf, v)),
            families: number(cf, "sim.families", 60)?,
            children: number(cf, "sim.children", 3)?,
            traits,
            maf,
            pct_var,
            additive: opt_matrix("sim.additive")?.unwrap_or_else(|| matrix("", "0.4", t).expect("scalar")),
            dominance: opt_matrix("sim.dominance")?,
            household: opt_matrix("sim.household")?,
            environment: opt_matrix("sim.environment")?.unwrap_or_else(|| matrix("", "0.6", t).expect("scalar")),
            sex_effect: number(cf, "sim.sex_effect", 0.0)?,
            replicates,
            alpha: number(cf, "sim.alpha", 0.05)?,
            level: cf.get("sim.level").map(|v| v.parse()).transpose().map_err(|_| Error::Config("sim.level: not a number".into()))?,
        })
    }

    /// Control-file text with every key resolved; parsing it gives back the same settings.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let p = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let join = |v: &[String]| v.join(", ");
        let _ = writeln!(s, "pedigree_file = {}", p(&self.pedigree_file));
        let _ = writeln!(
            s,
            "genotype_file = {}",
            self.genotype_files.iter().map(|g| g.display().to_string()).collect::<Vec<_>>().join(", ")
        );
        let _ = writeln!(s, "phenotype_file = {}", p(&self.phenotype_file));
        let _ = writeln!(s, "traits = {}", join(&self.traits));
        let _ = writeln!(s, "covariates = {}", join(&self.covariates));
        for (k, v) in &self.covariate_columns {
            let _ = writeln!(s, "covariate.{k} = {}", join(v));
        }
        let inter: Vec<String> = self.interactions.iter().map(|(a, b)| format!("{a}*{b}")).collect();
        let _ = writeln!(s, "interactions = {}", join(&inter));
        let _ = writeln!(s, "constrain_equal = {}", join(&self.constrain_equal));
        let groups: Vec<String> = self.trait_groups.iter().map(|g| join(g)).collect();
        let _ = writeln!(s, "trait_groups = {}", groups.join("; "));
        let _ = writeln!(s, "kinship_mode = {}", self.kinship_mode.label());
        let comps: Vec<String> = self.components.iter().map(|c| c.label().to_string()).collect();
        let _ = writeln!(s, "components = {}", join(&comps));
        let _ = writeln!(s, "maf_min = {}", self.maf_min);
        let _ = writeln!(s, "call_rate_min = {}", self.call_rate_min);
        let _ = writeln!(s, "top_k = {}", self.top_k);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "batch_trait_list = {}", p(&self.batch_trait_list));
        let _ = writeln!(s, "sig_level = {}", self.sig_level);
        let _ = writeln!(
            s,
            "x_male_dosage = {}",
            match self.x_male_dosage {
                MaleXDosage::ZeroTwo => "0/2",
                MaleXDosage::ZeroOne => "0/1",
            }
        );
        if let Some(sim) = &self.sim {
            let nums = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
            let mat = |m: &[Vec<f64>]| m.iter().map(|r| nums(r)).collect::<Vec<_>>().join("; ");
            let _ = writeln!(s, "\n[sim]");
            let _ = writeln!(s, "pedigree_file = {}", p(&sim.pedigree_file));
            let _ = writeln!(s, "families = {}", sim.families);
            let _ = writeln!(s, "children = {}", sim.children);
            let _ = writeln!(s, "traits = {}", join(&sim.traits));
            let _ = writeln!(s, "maf = {}", nums(&sim.maf));
            let _ = writeln!(s, "pct_var = {}", nums(&sim.pct_var));
            let _ = writeln!(s, "additive = {}", mat(&sim.additive));
            if let Some(d) = &sim.dominance {
                let _ = writeln!(s, "dominance = {}", mat(d));
            }
            if let Some(h) = &sim.household {
                let _ = writeln!(s, "household = {}", mat(h));
            }
            let _ = writeln!(s, "environment = {}", mat(&sim.environment));
            let _ = writeln!(s, "sex_effect = {}", sim.sex_effect);
            let _ = writeln!(s, "replicates = {}", sim.replicates);
            let _ = writeln!(s, "alpha = {}", sim.alpha);
            if let Some(l) = sim.level {
                let _ = writeln!(s, "level = {l}");
            }
        }
        s
    }

    pub fn require(&self, subcommand: &str) -> Result<()> {
        let missing = |k: &str| Err(Error::Config(format!("{subcommand}: missing required key `{k}`")));
        match subcommand {
            "scan" | "batch" => {
                if self.pedigree_file.is_none() {
                    return missing("pedigree_file");
                }
                if self.genotype_files.is_empty() {
                    return missing("genotype_file");
                }
                if self.phenotype_file.is_none() {
                    return missing("phenotype_file");
                }
                if subcommand == "scan" && self.traits.is_empty() {
                    return missing("traits");
                }
                if subcommand == "batch" && self.batch_trait_list.is_none() {
                    return missing("batch_trait_list");
                }
            }
            "power" => {
                if self.sim.is_none() {
                    return Err(Error::Config("power: control file needs a [sim] section".into()));
                }
            }
            "kinship" => {
                if self.kinship_mode == KinshipMode::Theoretical && self.pedigree_file.is_none() {
                    return missing("pedigree_file");
                }
                if self.kinship_mode != KinshipMode::Theoretical && self.genotype_files.is_empty() {
                    return missing("genotype_file");
                }
            }
            other => return Err(Error::Config(format!("unknown subcommand `{other}`"))),
        }
        Ok(())
    }
}
