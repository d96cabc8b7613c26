use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use super::covariance::CovarianceModel;
use super::index::ObservationIndex;
use crate::error::{Error, Result};

/// Smallest block for which the eigen-rotation path is used.
pub const ROTATION_MIN_PERSONS: usize = 16;

/// Eigenbasis of the one non-identity kernel of a complete block.
#[derive(Debug, Clone)]
pub(crate) struct Rotation {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub kernel_component: usize,
    pub identity_component: usize,
}

/// Per-block data fixed for the whole fit: kernel sub-blocks, row labels and
/// the response/design (already rotated when the block has a rotation).
#[derive(Debug, Clone)]
pub(crate) struct BlockData {
    pub rows: Range<usize>,
    /// Global person of each local person.
    pub persons: Vec<usize>,
    pub row_person: Vec<usize>,
    pub row_trait: Vec<usize>,
    /// `None` marks an identity kernel.
    pub kernels: Vec<Option<DMatrix<f64>>>,
    pub rotation: Option<Rotation>,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
}

enum Factor {
    Dense(Cholesky<f64, Dyn>),
    Rotated(Vec<Cholesky<f64, Dyn>>),
}

impl Factor {
    fn logdet(&self) -> f64 {
        let chol_logdet = |c: &Cholesky<f64, Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        match self {
            Factor::Dense(c) => chol_logdet(c),
            Factor::Rotated(ds) => ds.iter().map(chol_logdet).sum(),
        }
    }

    /// Applies the inverse covariance in the block's own coordinates.
    fn solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Dense(c) => c.solve(m),
            Factor::Rotated(ds) => {
                let n = ds.len();
                let t = m.nrows() / n;
                let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                let mut v = DMatrix::zeros(t, m.ncols());
                for (i, d) in ds.iter().enumerate() {
                    for a in 0..t {
                        v.row_mut(a).copy_from(&m.row(a * n + i));
                    }
                    let s = d.solve(&v);
                    for a in 0..t {
                        out.row_mut(a * n + i).copy_from(&s.row(a));
                    }
                }
                out
            }
        }
    }
}

/// Likelihood value, GLS estimate and (optionally) the gradient with respect to
/// each component's trait covariance, treating its entries as free.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub gamma: DVector<f64>,
    pub xtwx: DMatrix<f64>,
    pub sigma_gradients: Option<Vec<DMatrix<f64>>>,
}

/// Inverse-covariance weights of one block, as needed by the score test.
#[derive(Debug, Clone)]
pub(crate) enum BlockWeights {
    Dense(DMatrix<f64>),
    Rotated { u: DMatrix<f64>, d_inv: Vec<DMatrix<f64>> },
}

/// Null-model quantities in the original row order.
#[derive(Debug, Clone)]
pub(crate) struct NullState {
    pub wr: DVector<f64>,
    pub wx: DMatrix<f64>,
    pub xtwx_inv: DMatrix<f64>,
    pub weights: Vec<BlockWeights>,
}

/// Profile-likelihood evaluator for a fixed response, design and covariance structure.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub(crate) blocks: Vec<BlockData>,
    pub(crate) multipliers: Vec<f64>,
    n_traits: usize,
    n_rows: usize,
    q: usize,
}

impl Evaluator {
    pub fn new(
        y: &DVector<f64>,
        x: &DMatrix<f64>,
        cov: &CovarianceModel,
        idx: &ObservationIndex,
        use_rotation: bool,
    ) -> Result<Evaluator> {
        if y.len() != idx.n_rows() || x.nrows() != idx.n_rows() {
            return Err(Error::Model("response or design does not match the observation index".into()));
        }
        let t = idx.n_traits();
        let identity_slot: Vec<bool> = cov.components.iter().map(|c| c.kernel.is_identity()).collect();
        let cells = idx.cells();
        let blocks: Vec<BlockData> = idx
            .blocks()
            .par_iter()
            .map(|b| {
                let persons = b.persons.clone();
                let mut local = std::collections::HashMap::with_capacity(persons.len());
                for (i, &p) in persons.iter().enumerate() {
                    local.insert(p, i);
                }
                let row_person: Vec<usize> = b.rows.clone().map(|r| local[&cells[r].person]).collect();
                let row_trait: Vec<usize> = b.rows.clone().map(|r| cells[r].trait_index).collect();
                let kernels: Vec<Option<DMatrix<f64>>> = cov
                    .components
                    .iter()
                    .zip(&identity_slot)
                    .map(|(c, &is_id)| {
                        (!is_id).then(|| {
                            DMatrix::from_fn(persons.len(), persons.len(), |i, j| c.kernel.values[(persons[i], persons[j])])
                        })
                    })
                    .collect();
                let complete = b.rows.len() == persons.len() * t
                    && row_person.iter().enumerate().all(|(k, &p)| p == k % persons.len());
                let rotation = if use_rotation
                    && complete
                    && persons.len() >= ROTATION_MIN_PERSONS
                    && kernels.len() == 2
                    && kernels.iter().filter(|k| k.is_none()).count() == 1
                {
                    let kc = kernels.iter().position(|k| k.is_some()).expect("one kernel");
                    let eig = SymmetricEigen::new(kernels[kc].clone().expect("kernel"));
                    Some(Rotation {
                        u: eig.eigenvectors,
                        lambda: eig.eigenvalues.map(|l| l.max(0.0)),
                        kernel_component: kc,
                        identity_component: 1 - kc,
                    })
                } else {
                    None
                };
                let mut yb = DMatrix::from_column_slice(b.rows.len(), 1, y.rows(b.rows.start, b.rows.len()).as_slice());
                let mut xb = x.rows(b.rows.start, b.rows.len()).into_owned();
                if let Some(rot) = &rotation {
                    yb = rotate_t(&rot.u, &yb, t);
                    xb = rotate_t(&rot.u, &xb, t);
                }
                BlockData {
                    rows: b.rows.clone(),
                    persons,
                    row_person,
                    row_trait,
                    kernels,
                    rotation,
                    y: yb.column(0).into_owned(),
                    x: xb,
                }
            })
            .collect();
        Ok(Evaluator {
            blocks,
            multipliers: cov.components.iter().map(|c| c.multiplier).collect(),
            n_traits: t,
            n_rows: idx.n_rows(),
            q: x.ncols(),
        })
    }

    pub fn n_rotated_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.rotation.is_some()).count()
    }

    fn factor_block(&self, b: &BlockData, sigmas: &[DMatrix<f64>]) -> Option<Factor> {
        match &b.rotation {
            Some(rot) => {
                let (kc, ic) = (rot.kernel_component, rot.identity_component);
                let sk = &sigmas[kc] * self.multipliers[kc];
                let si = &sigmas[ic] * self.multipliers[ic];
                rot.lambda
                    .iter()
                    .map(|&l| Cholesky::new(&sk * l + &si))
                    .collect::<Option<Vec<_>>>()
                    .map(Factor::Rotated)
            }
            None => {
                let nr = b.rows.len();
                let mut omega = DMatrix::zeros(nr, nr);
                for a in 0..nr {
                    let (pa, ta) = (b.row_person[a], b.row_trait[a]);
                    for c in 0..=a {
                        let (pc, tc) = (b.row_person[c], b.row_trait[c]);
                        let mut v = 0.0;
                        for (k, s) in sigmas.iter().enumerate() {
                            let kv = match &b.kernels[k] {
                                Some(m) => m[(pa, pc)],
                                None => (pa == pc) as u8 as f64,
                            };
                            if kv != 0.0 {
                                v += self.multipliers[k] * s[(ta, tc)] * kv;
                            }
                        }
                        omega[(a, c)] = v;
                        omega[(c, a)] = v;
                    }
                }
                Cholesky::new(omega).map(Factor::Dense)
            }
        }
    }

    fn factors(&self, sigmas: &[DMatrix<f64>]) -> Result<Vec<Factor>> {
        self.blocks
            .par_iter()
            .enumerate()
            .map(|(i, b)| {
                self.factor_block(b, sigmas)
                    .ok_or_else(|| Error::Numeric(format!("covariance of block {i} is not positive definite")))
            })
            .collect()
    }

    fn gls(&self, factors: &[Factor]) -> Result<(f64, DMatrix<f64>, DVector<f64>, Vec<DMatrix<f64>>)> {
        let parts: Vec<(f64, DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = self
            .blocks
            .par_iter()
            .zip(factors.par_iter())
            .map(|(b, f)| {
                let wx = f.solve(&b.x);
                let xtwx = b.x.transpose() * &wx;
                let xtwy = wx.transpose() * &b.y;
                (f.logdet(), xtwx, xtwy, wx)
            })
            .collect();
        let mut logdet = 0.0;
        let mut xtwx = DMatrix::zeros(self.q, self.q);
        let mut xtwy = DVector::zeros(self.q);
        let mut wxs = Vec::with_capacity(parts.len());
        for (ld, a, v, wx) in parts {
            logdet += ld;
            xtwx += a;
            xtwy += v;
            wxs.push(wx);
        }
        Ok((logdet, xtwx, xtwy, wxs))
    }

    /// Profile log-likelihood `-1/2 ln det Omega - 1/2 r' Omega^-1 r` at the
    /// GLS estimate (the `2 pi` constant is omitted).
    pub fn evaluate(&self, sigmas: &[DMatrix<f64>], gradient: bool) -> Result<Evaluation> {
        let factors = self.factors(sigmas)?;
        let (logdet, xtwx, xtwy, _) = self.gls(&factors)?;
        let gamma = solve_spd(&xtwx, &xtwy)?;
        let t = self.n_traits;
        let k = self.multipliers.len();
        let parts: Vec<(f64, Option<Vec<DMatrix<f64>>>)> = self
            .blocks
            .par_iter()
            .zip(factors.par_iter())
            .map(|(b, f)| {
                let r = DMatrix::from_column_slice(b.y.len(), 1, (&b.y - &b.x * &gamma).as_slice());
                let wr = f.solve(&r);
                let quad = r.column(0).dot(&wr.column(0));
                let grads = gradient.then(|| self.block_gradient(b, f, &wr, t, k));
                (quad, grads)
            })
            .collect();
        let mut quad = 0.0;
        let mut grads = gradient.then(|| vec![DMatrix::zeros(t, t); k]);
        for (q, g) in parts {
            quad += q;
            if let (Some(total), Some(g)) = (grads.as_mut(), g) {
                for (a, b) in total.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(Evaluation {
            loglik: -0.5 * logdet - 0.5 * quad,
            gamma,
            xtwx,
            sigma_gradients: grads,
        })
    }

    fn block_gradient(&self, b: &BlockData, f: &Factor, wr: &DMatrix<f64>, t: usize, k: usize) -> Vec<DMatrix<f64>> {
        let mut g = vec![DMatrix::zeros(t, t); k];
        match (f, &b.rotation) {
            (Factor::Rotated(ds), Some(rot)) => {
                let n = ds.len();
                let mut v = DVector::zeros(t);
                for (i, d) in ds.iter().enumerate() {
                    for a in 0..t {
                        v[a] = wr[(a * n + i, 0)];
                    }
                    let r = &v * v.transpose() - d.inverse();
                    let lk = rot.lambda[i];
                    g[rot.kernel_component] += &r * (0.5 * self.multipliers[rot.kernel_component] * lk);
                    g[rot.identity_component] += &r * (0.5 * self.multipliers[rot.identity_component]);
                }
            }
            (Factor::Dense(c), _) => {
                let w = c.inverse();
                let nr = b.rows.len();
                for a in 0..nr {
                    let (pa, ta) = (b.row_person[a], b.row_trait[a]);
                    for c2 in 0..nr {
                        let (pc, tc) = (b.row_person[c2], b.row_trait[c2]);
                        let r = wr[(a, 0)] * wr[(c2, 0)] - w[(a, c2)];
                        for (kk, gk) in g.iter_mut().enumerate() {
                            let kv = match &b.kernels[kk] {
                                Some(m) => m[(pa, pc)],
                                None => (pa == pc) as u8 as f64,
                            };
                            if kv != 0.0 {
                                gk[(ta, tc)] += 0.5 * self.multipliers[kk] * r * kv;
                            }
                        }
                    }
                }
            }
            _ => unreachable!("factor kind follows the block rotation"),
        }
        g
    }

    /// Weighted residual, weighted design and block weights at fixed sigmas.
    pub(crate) fn null_state(&self, sigmas: &[DMatrix<f64>]) -> Result<NullState> {
        let factors = self.factors(sigmas)?;
        let (_, xtwx, xtwy, wxs) = self.gls(&factors)?;
        let xtwx_inv = spd_inverse(&xtwx)?;
        let gamma = &xtwx_inv * xtwy;
        let t = self.n_traits;
        let mut wr = DVector::zeros(self.n_rows);
        let mut wx = DMatrix::zeros(self.n_rows, self.q);
        let mut weights = Vec::with_capacity(self.blocks.len());
        for ((b, f), wxb) in self.blocks.iter().zip(&factors).zip(wxs) {
            let r = DMatrix::from_column_slice(b.y.len(), 1, (&b.y - &b.x * &gamma).as_slice());
            let mut wrb = f.solve(&r);
            let mut wxb = wxb;
            match (f, &b.rotation) {
                (Factor::Rotated(ds), Some(rot)) => {
                    let ut = rot.u.transpose();
                    wrb = rotate_t(&ut, &wrb, t);
                    wxb = rotate_t(&ut, &wxb, t);
                    weights.push(BlockWeights::Rotated {
                        u: rot.u.clone(),
                        d_inv: ds.iter().map(|d| d.inverse()).collect(),
                    });
                }
                (Factor::Dense(c), _) => weights.push(BlockWeights::Dense(c.inverse())),
                _ => unreachable!("factor kind follows the block rotation"),
            }
            wr.rows_mut(b.rows.start, b.rows.len()).copy_from(&wrb.column(0));
            wx.rows_mut(b.rows.start, b.rows.len()).copy_from(&wxb);
        }
        Ok(NullState {
            wr,
            wx,
            xtwx_inv,
            weights,
        })
    }
}

/// `(I_T ⊗ Mᵀ) V` for a trait-major stacked matrix `V` with `n = M.nrows()`
/// persons per trait.
fn rotate_t(m: &DMatrix<f64>, v: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(v.nrows(), v.ncols());
    for a in 0..t {
        let part = m.tr_mul(&v.rows(a * n, n));
        out.rows_mut(a * n, n).copy_from(&part);
    }
    out
}

pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Cholesky::new(a.clone())
        .map(|c| c.solve(b))
        .ok_or_else(|| Error::Numeric("generalized least squares system is singular".into()))
}

pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(a.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numeric("generalized least squares system is singular".into()))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::kinship::{KernelKind, KernelMatrix};
    use crate::vcmodel::covariance::{build_observed_covariance, VarianceComponent};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.gen::<f64>() - 0.5);
        (&a * a.transpose()) / (n as f64)
    }

    fn random_spd(t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(t, t, |_, _| rng.gen::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(t, t) * 0.3
    }

    fn setup(n: usize, t: usize, missing: bool, seed: u64) -> (DVector<f64>, DMatrix<f64>, CovarianceModel, ObservationIndex) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Arc::new(KernelMatrix::new(random_kernel(n, &mut rng), KernelKind::GrmKinship));
        let cov = CovarianceModel::new(vec![
            VarianceComponent::additive(random_spd(t, &mut rng), k),
            VarianceComponent::environment(random_spd(t, &mut rng), n),
        ]);
        let drop: Vec<bool> = (0..n * t).map(|_| missing && rng.gen_bool(0.2)).collect();
        let idx = ObservationIndex::new(n, t, vec![(0..n).collect()], |p, tt| !drop[p * t + tt]);
        let y = DVector::from_fn(idx.n_rows(), |_, _| rng.gen::<f64>() * 3.0);
        let x = DMatrix::from_fn(idx.n_rows(), 2, |r, c| if c == 0 { 1.0 } else { (r as f64).sin() });
        (y, x, cov, idx)
    }

    fn naive_loglik(y: &DVector<f64>, x: &DMatrix<f64>, cov: &CovarianceModel, idx: &ObservationIndex) -> f64 {
        let omega = build_observed_covariance(cov, idx).unwrap().remove(0);
        let w = omega.clone().try_inverse().unwrap();
        let gamma = (x.transpose() * &w * x).try_inverse().unwrap() * x.transpose() * &w * y;
        let r = y - x * gamma;
        -0.5 * omega.determinant().ln() - 0.5 * (r.transpose() * w * r)[(0, 0)]
    }

    #[test]
    fn dense_matches_naive() {
        let (y, x, cov, idx) = setup(7, 2, true, 3);
        let ev = Evaluator::new(&y, &x, &cov, &idx, true).unwrap();
        assert_eq!(ev.n_rotated_blocks(), 0);
        let l = ev.evaluate(&cov.sigmas(), false).unwrap().loglik;
        assert!((l - naive_loglik(&y, &x, &cov, &idx)).abs() < 1e-9);
    }

    #[test]
    fn rotated_matches_dense() {
        let (y, x, cov, idx) = setup(20, 2, false, 5);
        let rot = Evaluator::new(&y, &x, &cov, &idx, true).unwrap();
        let dense = Evaluator::new(&y, &x, &cov, &idx, false).unwrap();
        assert_eq!(rot.n_rotated_blocks(), 1);
        let a = rot.evaluate(&cov.sigmas(), true).unwrap();
        let b = dense.evaluate(&cov.sigmas(), true).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-9 * b.loglik.abs().max(1.0));
        for (ga, gb) in a.sigma_gradients.unwrap().iter().zip(b.sigma_gradients.unwrap().iter()) {
            assert!((ga - gb).abs().max() < 1e-8);
        }
        let sa = rot.null_state(&cov.sigmas()).unwrap();
        let sb = dense.null_state(&cov.sigmas()).unwrap();
        assert!((&sa.wr - &sb.wr).abs().max() < 1e-9);
        assert!((&sa.wx - &sb.wx).abs().max() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let (y, x, cov, idx) = setup(6, 2, true, 11);
        let ev = Evaluator::new(&y, &x, &cov, &idx, false).unwrap();
        let sig = cov.sigmas();
        let g = ev.evaluate(&sig, true).unwrap().sigma_gradients.unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut plus = sig.clone();
            let mut minus = sig.clone();
            // symmetric perturbation of the (0,1) pair
            plus[k][(0, 1)] += h;
            plus[k][(1, 0)] += h;
            minus[k][(0, 1)] -= h;
            minus[k][(1, 0)] -= h;
            let fd = (ev.evaluate(&plus, false).unwrap().loglik - ev.evaluate(&minus, false).unwrap().loglik) / (2.0 * h);
            assert!((fd - (g[k][(0, 1)] + g[k][(1, 0)])).abs() < 1e-5);
        }
    }
}
