use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-person trait values and covariates with cell-level missingness.
/// Values are stored row-major (person, column).
#[derive(Debug, Clone, PartialEq)]
pub struct TraitTable {
    pub person_ids: Vec<String>,
    pub trait_names: Vec<String>,
    pub covariate_names: Vec<String>,
    values: Vec<Option<f64>>,
    covariates: Vec<Option<f64>>,
}

impl TraitTable {
    pub fn new(
        person_ids: Vec<String>,
        trait_names: Vec<String>,
        covariate_names: Vec<String>,
        values: Vec<Option<f64>>,
        covariates: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n = person_ids.len();
        if trait_names.is_empty() {
            return Err(Error::Schema("at least one trait is required".into()));
        }
        if values.len() != n * trait_names.len() || covariates.len() != n * covariate_names.len() {
            return Err(Error::Length("trait table dimensions do not match".into()));
        }
        if values.iter().chain(covariates.iter()).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("trait table contains non-finite values".into()));
        }
        Ok(TraitTable {
            person_ids,
            trait_names,
            covariate_names,
            values,
            covariates,
        })
    }

    pub fn n_persons(&self) -> usize {
        self.person_ids.len()
    }

    pub fn n_traits(&self) -> usize {
        self.trait_names.len()
    }

    pub fn value(&self, person: usize, t: usize) -> Option<f64> {
        self.values[person * self.trait_names.len() + t]
    }

    pub fn covariate(&self, person: usize, c: usize) -> Option<f64> {
        self.covariates[person * self.covariate_names.len() + c]
    }

    pub fn set_value(&mut self, person: usize, t: usize, v: Option<f64>) {
        let k = self.trait_names.len();
        self.values[person * k + t] = v;
    }

    pub fn trait_index(&self, name: &str) -> Option<usize> {
        self.trait_names.iter().position(|t| t == name)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|t| t == name)
    }

    pub fn row_of(&self) -> HashMap<&str, usize> {
        self.person_ids.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect()
    }

    /// A table restricted to one trait (covariates kept).
    pub fn single_trait(&self, t: usize) -> TraitTable {
        let values = (0..self.n_persons()).map(|p| self.value(p, t)).collect();
        TraitTable {
            person_ids: self.person_ids.clone(),
            trait_names: vec![self.trait_names[t].clone()],
            covariate_names: self.covariate_names.clone(),
            values,
            covariates: self.covariates.clone(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("PersonID");
        for name in self.trait_names.iter().chain(&self.covariate_names) {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        for p in 0..self.n_persons() {
            out.push_str(&self.person_ids[p]);
            for t in 0..self.n_traits() {
                out.push(',');
                out.push_str(&fmt(self.value(p, t)));
            }
            for c in 0..self.covariate_names.len() {
                out.push(',');
                out.push_str(&fmt(self.covariate(p, c)));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("NA") {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("not a finite number: {t:?}"),
        }),
    }
}

/// Reads a comma-separated phenotype file. The person id column is the one
/// headed `PersonID`, or the first column when no such header exists.
/// Empty cells and `NA` are missing.
pub fn read_traits_csv(
    path: impl AsRef<Path>,
    trait_cols: &[String],
    covar_cols: &[String],
) -> Result<TraitTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Schema(format!("{}: empty phenotype file", path.display())));
    }
    let id_col = headers.iter().position(|h| h.eq_ignore_ascii_case("PersonID")).unwrap_or(0);
    let find = |name: &String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("{}: column {name} not found", path.display())))
    };
    let t_idx: Vec<usize> = trait_cols.iter().map(find).collect::<Result<_>>()?;
    let c_idx: Vec<usize> = covar_cols.iter().map(find).collect::<Result<_>>()?;

    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut covariates = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let row = r + 2;
        ids.push(record.get(id_col).unwrap_or("").to_string());
        for (&c, name) in t_idx.iter().zip(trait_cols) {
            values.push(parse_cell(record.get(c).unwrap_or(""), row, name)?);
        }
        for (&c, name) in c_idx.iter().zip(covar_cols) {
            covariates.push(parse_cell(record.get(c).unwrap_or(""), row, name)?);
        }
    }
    TraitTable::new(ids, trait_cols.to_vec(), covar_cols.to_vec(), values, covariates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn missing_cells_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ph.csv");
        std::fs::write(&p, "PersonID,SBP,DBP,Sex\nP1,120.5,NA,1\nP2,,80,2\n").unwrap();
        let t = read_traits_csv(&p, &names(&["SBP", "DBP"]), &names(&["Sex"])).unwrap();
        assert_eq!(t.value(0, 0), Some(120.5));
        assert_eq!(t.value(0, 1), None);
        assert_eq!(t.covariate(0, 0), Some(1.0));
        assert_eq!(t.value(1, 0), None);
    }

    #[test]
    fn eight_trait_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ph.csv");
        let cols = names(&["SBP_1", "SBP_2", "SBP_3", "SBP_4", "DBP_1", "DBP_2", "DBP_3", "DBP_4"]);
        std::fs::write(&p, format!("PersonID,{}\nA,1,2,3,4,5,6,7,8\n", cols.join(","))).unwrap();
        let t = read_traits_csv(&p, &cols, &[]).unwrap();
        assert_eq!(t.n_traits(), 8);
        assert_eq!(t.value(0, 7), Some(8.0));
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ph.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_traits_csv(&p, &names(&["SBP"]), &[]), Err(Error::Schema(_))));
        std::fs::write(&p, "PersonID,SBP\nA,high\n").unwrap();
        match read_traits_csv(&p, &names(&["SBP"]), &[]) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "SBP")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_traits_csv(&p, &names(&["DBP"]), &[]), Err(Error::Schema(_))));
    }
}
