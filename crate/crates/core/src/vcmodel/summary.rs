use std::fmt::Write;

use super::design::MeanModel;
use super::fit::FitResult;

/// Plain-text table of a fitted null model: fixed effects with standard
/// errors, then every variance component's trait covariance.
pub fn null_model_summary(fit: &FitResult, mean: &MeanModel, trait_names: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "log_likelihood\t{:.6}", fit.loglik);
    let _ = writeln!(s, "converged\t{}", fit.converged);
    let _ = writeln!(s, "iterations\t{}", fit.iterations);
    let _ = writeln!(s, "scaled_gradient_max\t{:.3e}", fit.grad_max);
    let _ = writeln!(s);
    let _ = writeln!(s, "coefficient\testimate\tstd_error");
    for (j, label) in mean.column_labels.iter().enumerate() {
        let _ = writeln!(s, "{label}\t{:.6}\t{:.6}", fit.beta[j], fit.beta_se[j]);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "component\ttrait_a\ttrait_b\tcovariance");
    for c in &fit.covariance.components {
        for a in 0..trait_names.len() {
            for b in 0..=a {
                let _ = writeln!(s, "{}\t{}\t{}\t{:.6}", c.label, trait_names[a], trait_names[b], c.sigma[(a, b)]);
            }
        }
    }
    let total: Vec<f64> = (0..trait_names.len())
        .map(|t| fit.covariance.components.iter().map(|c| c.multiplier * c.sigma[(t, t)] * mean_diagonal(c)).sum())
        .collect();
    let _ = writeln!(s);
    let _ = writeln!(s, "component\ttrait\tproportion_of_variance");
    for c in &fit.covariance.components {
        for (t, name) in trait_names.iter().enumerate() {
            let v = c.multiplier * c.sigma[(t, t)] * mean_diagonal(c);
            let share = if total[t] > 0.0 { v / total[t] } else { 0.0 };
            let _ = writeln!(s, "{}\t{name}\t{share:.6}", c.label);
        }
    }
    s
}

/// Average diagonal of a component's kernel, so `multiplier * sigma_tt * it`
/// is that component's share of a typical person's variance.
fn mean_diagonal(c: &super::covariance::VarianceComponent) -> f64 {
    let n = c.kernel.dim();
    if n == 0 || c.kernel.is_identity() {
        return 1.0;
    }
    (0..n).map(|i| c.kernel.values[(i, i)]).sum::<f64>() / n as f64
}
