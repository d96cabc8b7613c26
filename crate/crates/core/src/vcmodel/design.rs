use nalgebra::{DMatrix, DVector};

use super::index::ObservationIndex;
use crate::error::{Error, Result};

/// A mean-model term: one coefficient per trait, optionally tied across the
/// traits of each trait group (e.g. equal effects at every time point).
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: String,
    pub constrained: bool,
}

impl Term {
    pub fn free(name: &str) -> Self {
        Term {
            name: name.to_string(),
            constrained: false,
        }
    }

    pub fn tied(name: &str) -> Self {
        Term {
            name: name.to_string(),
            constrained: true,
        }
    }
}

/// Column layout of the design: column `term * T + trait`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignLayout {
    pub terms: Vec<Term>,
    pub trait_names: Vec<String>,
    /// Partition of trait indices; a tied term gets one free parameter per group.
    pub groups: Vec<Vec<usize>>,
}

impl DesignLayout {
    /// Layout with every trait in a single group.
    pub fn new(terms: Vec<Term>, trait_names: Vec<String>) -> Self {
        let groups = vec![(0..trait_names.len()).collect()];
        DesignLayout {
            terms,
            trait_names,
            groups,
        }
    }

    pub fn n_traits(&self) -> usize {
        self.trait_names.len()
    }

    pub fn n_columns(&self) -> usize {
        self.terms.len() * self.n_traits()
    }

    pub fn column(&self, term: usize, trait_index: usize) -> usize {
        term * self.n_traits() + trait_index
    }

    pub fn column_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_columns());
        for term in &self.terms {
            for t in &self.trait_names {
                out.push(format!("{}[{}]", term.name, t));
            }
        }
        out
    }

    /// Labels of the free parameters, in the column order of the constraint matrix.
    pub fn parameter_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for term in &self.terms {
            if term.constrained {
                for g in &self.groups {
                    let names: Vec<&str> = g.iter().map(|&t| self.trait_names[t].as_str()).collect();
                    out.push(format!("{}[{}]", term.name, names.join("=")));
                }
            } else {
                for t in &self.trait_names {
                    out.push(format!("{}[{}]", term.name, t));
                }
            }
        }
        out
    }
}

/// Constraint matrix `C` mapping free parameters to coefficients (`beta = C gamma`).
/// Untied terms contribute identity columns; a tied term contributes one
/// column of ones per trait group.
pub fn apply_time_constraint(layout: &DesignLayout) -> DMatrix<f64> {
    let t_count = layout.n_traits();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (k, term) in layout.terms.iter().enumerate() {
        if term.constrained {
            for g in &layout.groups {
                let mut c = DVector::zeros(layout.n_columns());
                for &t in g {
                    c[layout.column(k, t)] = 1.0;
                }
                cols.push(c);
            }
        } else {
            for t in 0..t_count {
                let mut c = DVector::zeros(layout.n_columns());
                c[layout.column(k, t)] = 1.0;
                cols.push(c);
            }
        }
    }
    if cols.is_empty() {
        return DMatrix::zeros(layout.n_columns(), 0);
    }
    DMatrix::from_columns(&cols)
}

/// Fixed-effect part: design `A` (observed rows x p), constraint `C`
/// (p x r) and labels for both.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    pub design: DMatrix<f64>,
    pub constraint: DMatrix<f64>,
    pub column_labels: Vec<String>,
    pub parameter_labels: Vec<String>,
}

impl MeanModel {
    /// Builds `A` from a layout. `value(person, trait, term)` gives the
    /// covariate value entering column `(term, trait)` for that person.
    pub fn from_layout<F>(layout: &DesignLayout, idx: &ObservationIndex, value: F) -> MeanModel
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let p = layout.n_columns();
        let mut design = DMatrix::zeros(idx.n_rows(), p);
        for (row, cell) in idx.cells().iter().enumerate() {
            for k in 0..layout.terms.len() {
                design[(row, layout.column(k, cell.trait_index))] = value(cell.person, cell.trait_index, k);
            }
        }
        MeanModel {
            design,
            constraint: apply_time_constraint(layout),
            column_labels: layout.column_labels(),
            parameter_labels: layout.parameter_labels(),
        }
    }

    /// Unconstrained model for a given design.
    pub fn unconstrained(design: DMatrix<f64>) -> MeanModel {
        let p = design.ncols();
        let labels: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
        MeanModel {
            design,
            constraint: DMatrix::identity(p, p),
            column_labels: labels.clone(),
            parameter_labels: labels,
        }
    }

    pub fn n_coefficients(&self) -> usize {
        self.design.ncols()
    }

    pub fn n_free(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn reduced_design(&self) -> DMatrix<f64> {
        &self.design * &self.constraint
    }

    /// Appends untied columns (e.g. the per-trait SNP dosage columns).
    pub fn augmented(&self, extra: &DMatrix<f64>, labels: &[String]) -> MeanModel {
        let (n, p) = self.design.shape();
        let q = extra.ncols();
        let mut design = DMatrix::zeros(n, p + q);
        design.columns_mut(0, p).copy_from(&self.design);
        design.columns_mut(p, q).copy_from(extra);
        let r = self.n_free();
        let mut constraint = DMatrix::zeros(p + q, r + q);
        constraint.view_mut((0, 0), (p, r)).copy_from(&self.constraint);
        for j in 0..q {
            constraint[(p + j, r + j)] = 1.0;
        }
        let mut column_labels = self.column_labels.clone();
        column_labels.extend_from_slice(labels);
        let mut parameter_labels = self.parameter_labels.clone();
        parameter_labels.extend_from_slice(labels);
        MeanModel {
            design,
            constraint,
            column_labels,
            parameter_labels,
        }
    }

    /// Checks `C` and `A C` for full column rank.
    pub fn check_rank(&self) -> Result<()> {
        if self.constraint.nrows() != self.design.ncols() {
            return Err(Error::Model("constraint rows do not match design columns".into()));
        }
        if self.n_free() > self.constraint.nrows() || !full_column_rank(&self.constraint) {
            return Err(Error::Model("constraint matrix is not of full column rank".into()));
        }
        let reduced = self.reduced_design();
        if reduced.nrows() < reduced.ncols() || !full_column_rank(&reduced) {
            return Err(Error::Model(
                "reduced design is rank deficient (collinear covariates or too few observations)".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn full_column_rank(m: &DMatrix<f64>) -> bool {
    if m.ncols() == 0 {
        return true;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    max > 0.0 && sv.min() > 1e-10 * max * (m.nrows().max(m.ncols()) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traits(n: usize) -> Vec<String> {
        (0..n).map(|t| format!("y{t}")).collect()
    }

    #[test]
    fn one_tied_covariate_over_four_time_points() {
        let layout = DesignLayout::new(vec![Term::tied("age")], traits(4));
        let c = apply_time_constraint(&layout);
        assert_eq!(c.shape(), (4, 1));
        assert!(c.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn counting_with_one_of_two_tied() {
        let layout = DesignLayout::new(vec![Term::tied("sex"), Term::free("age")], traits(2));
        let c = apply_time_constraint(&layout);
        assert_eq!(c.shape(), (4, 3));
    }

    #[test]
    fn no_constraints_is_identity() {
        let layout = DesignLayout::new(vec![Term::free("mu"), Term::free("age")], traits(3));
        assert_eq!(apply_time_constraint(&layout), DMatrix::identity(6, 6));
    }

    #[test]
    fn tied_within_groups() {
        let mut layout = DesignLayout::new(vec![Term::tied("age")], traits(4));
        layout.groups = vec![vec![0, 1], vec![2, 3]];
        let c = apply_time_constraint(&layout);
        assert_eq!(c.shape(), (4, 2));
        assert_eq!(c.column(0).as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(layout.parameter_labels(), vec!["age[y0=y1]", "age[y2=y3]"]);
    }

    #[test]
    fn rank_checks() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(MeanModel::unconstrained(a).check_rank().is_err());
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        assert!(MeanModel::unconstrained(a).check_rank().is_ok());
    }
}
