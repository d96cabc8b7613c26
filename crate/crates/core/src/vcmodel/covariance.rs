use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use super::index::ObservationIndex;
use crate::error::{Error, Result};
use crate::kinship::{KernelKind, KernelMatrix};

/// `multiplier * (sigma ⊗ kernel)` contribution to the response covariance.
#[derive(Debug, Clone)]
pub struct VarianceComponent {
    pub label: String,
    pub sigma: DMatrix<f64>,
    pub kernel: Arc<KernelMatrix>,
    pub multiplier: f64,
}

impl VarianceComponent {
    /// Additive polygenic term; carries multiplier 2 on a kinship-scale kernel.
    pub fn additive(sigma: DMatrix<f64>, kernel: Arc<KernelMatrix>) -> Self {
        VarianceComponent {
            label: "additive".into(),
            sigma,
            kernel,
            multiplier: 2.0,
        }
    }

    pub fn environment(sigma: DMatrix<f64>, n: usize) -> Self {
        VarianceComponent {
            label: "environment".into(),
            sigma,
            kernel: Arc::new(KernelMatrix::identity(n)),
            multiplier: 1.0,
        }
    }

    pub fn other(label: &str, sigma: DMatrix<f64>, kernel: Arc<KernelMatrix>) -> Self {
        VarianceComponent {
            label: label.to_string(),
            sigma,
            kernel,
            multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub components: Vec<VarianceComponent>,
}

impl CovarianceModel {
    pub fn new(components: Vec<VarianceComponent>) -> Self {
        CovarianceModel { components }
    }

    pub fn n_traits(&self) -> usize {
        self.components.first().map_or(0, |c| c.sigma.nrows())
    }

    pub fn sigmas(&self) -> Vec<DMatrix<f64>> {
        self.components.iter().map(|c| c.sigma.clone()).collect()
    }

    pub fn with_sigmas(&self, sigmas: &[DMatrix<f64>]) -> CovarianceModel {
        let mut out = self.clone();
        for (c, s) in out.components.iter_mut().zip(sigmas) {
            c.sigma = s.clone();
        }
        out
    }

    pub fn kernels(&self) -> Vec<&KernelMatrix> {
        self.components.iter().map(|c| c.kernel.as_ref()).collect()
    }

    pub fn validate(&self, n_persons: usize) -> Result<()> {
        let t = self.n_traits();
        if self.components.is_empty() || t == 0 {
            return Err(Error::Model("covariance model has no components".into()));
        }
        if !self.components.iter().any(|c| c.kernel.is_identity()) {
            return Err(Error::Model("covariance model needs an identity-kernel component".into()));
        }
        for c in &self.components {
            if c.sigma.shape() != (t, t) {
                return Err(Error::Model(format!("component {} has a non {t}x{t} sigma", c.label)));
            }
            if c.kernel.dim() != n_persons {
                return Err(Error::Model(format!(
                    "component {} kernel has dimension {}, expected {n_persons}",
                    c.label,
                    c.kernel.dim()
                )));
            }
            let scale = c.sigma.abs().max().max(1e-300);
            if (&c.sigma - c.sigma.transpose()).abs().max() > 1e-10 * scale {
                return Err(Error::Model(format!("component {} sigma is not symmetric", c.label)));
            }
            let min = SymmetricEigen::new(c.sigma.clone()).eigenvalues.min();
            if min < -1e-10 * scale {
                return Err(Error::Model(format!("component {} sigma is not positive semidefinite", c.label)));
            }
        }
        Ok(())
    }

    /// Sets starting values from the sample trait covariance `S`: identity
    /// components `S/2`, additive kinship components `S/4`, anything else
    /// `0.01 I`. Falls back to the diagonal of `S` when the pairwise
    /// estimate is not positive definite.
    pub fn initialize_from_data(&mut self, y: &nalgebra::DVector<f64>, idx: &ObservationIndex) {
        let s = sample_covariance(y, idx);
        let t = self.n_traits();
        for c in &mut self.components {
            c.sigma = match c.kernel.kind {
                KernelKind::Identity => &s * 0.5,
                KernelKind::TheoreticalKinship | KernelKind::GrmKinship | KernelKind::MomKinship | KernelKind::XKinship => {
                    &s * 0.25
                }
                _ => DMatrix::identity(t, t) * 0.01,
            };
        }
    }
}

/// Pairwise-complete sample covariance of the traits, made positive definite
/// by falling back to its diagonal if needed.
pub fn sample_covariance(y: &nalgebra::DVector<f64>, idx: &ObservationIndex) -> DMatrix<f64> {
    let t = idx.n_traits();
    let mut s = DMatrix::zeros(t, t);
    for a in 0..t {
        for b in 0..=a {
            let pairs: Vec<(f64, f64)> = (0..idx.n_persons())
                .filter_map(|p| Some((y[idx.row(p, a)?], y[idx.row(p, b)?])))
                .collect();
            let n = pairs.len() as f64;
            let v = if pairs.len() > 1 {
                let ma = pairs.iter().map(|x| x.0).sum::<f64>() / n;
                let mb = pairs.iter().map(|x| x.1).sum::<f64>() / n;
                pairs.iter().map(|x| (x.0 - ma) * (x.1 - mb)).sum::<f64>() / (n - 1.0)
            } else if a == b {
                1.0
            } else {
                0.0
            };
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    for a in 0..t {
        if !(s[(a, a)] > 0.0) {
            s[(a, a)] = 1.0;
        }
    }
    if s.clone().cholesky().is_none() {
        s = DMatrix::from_diagonal(&s.diagonal());
    }
    s
}

/// Per-block observed covariance matrices `sum_k m_k (Sigma_k ⊗ K_k)`
/// restricted to observed cells. Fails when a block is not positive definite.
pub fn build_observed_covariance(cov: &CovarianceModel, idx: &ObservationIndex) -> Result<Vec<DMatrix<f64>>> {
    let rows: Vec<Vec<usize>> = idx.blocks().iter().map(|b| b.rows.clone().collect()).collect();
    rows.iter()
        .enumerate()
        .map(|(b, r)| {
            let m = covariance_of_rows(cov, idx, r);
            if m.clone().cholesky().is_none() {
                return Err(Error::Numeric(format!("covariance of block {b} is not positive definite")));
            }
            Ok(m)
        })
        .collect()
}

/// Dense covariance between arbitrary observed rows, read off the global kernels.
pub fn covariance_of_rows(cov: &CovarianceModel, idx: &ObservationIndex, rows: &[usize]) -> DMatrix<f64> {
    let cells = idx.cells();
    let mut m = DMatrix::zeros(rows.len(), rows.len());
    for (a, &ra) in rows.iter().enumerate() {
        let ca = cells[ra];
        for (c, &rc) in rows.iter().enumerate().take(a + 1) {
            let cc = cells[rc];
            let v: f64 = cov
                .components
                .iter()
                .map(|k| {
                    k.multiplier
                        * k.sigma[(ca.trait_index, cc.trait_index)]
                        * k.kernel.values[(ca.person, cc.person)]
                })
                .sum();
            m[(a, c)] = v;
            m[(c, a)] = v;
        }
    }
    m
}
