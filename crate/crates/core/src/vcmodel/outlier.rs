use nalgebra::DVector;

use super::covariance::{covariance_of_rows, CovarianceModel};
use super::fit::FitResult;
use super::index::ObservationIndex;
use crate::error::{Error, Result};
use crate::stats::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierUnit {
    Pedigree,
    Individual,
}

impl OutlierUnit {
    pub fn label(self) -> &'static str {
        match self {
            OutlierUnit::Pedigree => "pedigree",
            OutlierUnit::Individual => "individual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRecord {
    pub unit: OutlierUnit,
    pub id: String,
    pub n_cells: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Mahalanobis distance `r_Sᵀ Omega_SS^-1 r_S` of the null residuals of a
/// group of persons under the marginal model covariance, referred to a
/// chi-square with one degree of freedom per observed cell.
pub fn group_statistic(
    residual: &DVector<f64>,
    cov: &CovarianceModel,
    idx: &ObservationIndex,
    persons: &[usize],
) -> Result<Option<(usize, f64, f64)>> {
    let mut rows: Vec<usize> = persons.iter().flat_map(|&p| idx.person_rows(p)).collect();
    rows.sort_unstable();
    if rows.is_empty() {
        return Ok(None);
    }
    let omega = covariance_of_rows(cov, idx, &rows);
    let r = DVector::from_iterator(rows.len(), rows.iter().map(|&i| residual[i]));
    let chol = omega
        .cholesky()
        .ok_or_else(|| Error::Numeric("marginal covariance of an outlier group is not positive definite".into()))?;
    let stat = r.dot(&chol.solve(&r));
    Ok(Some((rows.len(), stat, chi2_sf(stat, rows.len()))))
}

/// Outlier statistics for groups of persons (one entry per `(id, persons)`),
/// sorted by ascending p-value; ties keep input order. Groups without any
/// observed cell are omitted.
pub fn outlier_report(
    fit: &FitResult,
    idx: &ObservationIndex,
    unit: OutlierUnit,
    groups: &[(String, Vec<usize>)],
) -> Result<Vec<OutlierRecord>> {
    let mut out = Vec::with_capacity(groups.len());
    for (id, persons) in groups {
        if let Some((n_cells, statistic, p_value)) = group_statistic(&fit.residual, &fit.covariance, idx, persons)? {
            out.push(OutlierRecord {
                unit,
                id: id.clone(),
                n_cells,
                statistic,
                p_value,
            });
        }
    }
    out.sort_by(|a, b| a.p_value.total_cmp(&b.p_value));
    Ok(out)
}

pub fn pedigree_outlier_report(fit: &FitResult, idx: &ObservationIndex, pedigrees: &[(String, Vec<usize>)]) -> Result<Vec<OutlierRecord>> {
    outlier_report(fit, idx, OutlierUnit::Pedigree, pedigrees)
}

pub fn individual_outlier_report(fit: &FitResult, idx: &ObservationIndex, ids: &[String]) -> Result<Vec<OutlierRecord>> {
    let groups: Vec<(String, Vec<usize>)> = ids.iter().enumerate().map(|(p, id)| (id.clone(), vec![p])).collect();
    outlier_report(fit, idx, OutlierUnit::Individual, &groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vcmodel::covariance::VarianceComponent;
    use nalgebra::DMatrix;

    #[test]
    fn iid_statistic_is_sum_of_squares() {
        let cov = CovarianceModel::new(vec![VarianceComponent::environment(DMatrix::from_element(1, 1, 2.0), 3)]);
        let idx = ObservationIndex::new(3, 1, vec![vec![0], vec![1], vec![2]], |_, _| true);
        let r = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (n, stat, p) = group_statistic(&r, &cov, &idx, &[0, 1]).unwrap().unwrap();
        assert_eq!(n, 2);
        assert!((stat - 2.5).abs() < 1e-12);
        assert!((p - (-stat / 2.0f64).exp()).abs() < 1e-12);
        assert!(group_statistic(&r, &cov, &ObservationIndex::new(3, 1, vec![vec![0, 1, 2]], |p, _| p != 2), &[2])
            .unwrap()
            .is_none());
    }
}
