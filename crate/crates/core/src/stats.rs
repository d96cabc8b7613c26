//! Distribution helpers and multiple-testing arithmetic.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Smallest p-value carried into log-scale output.
pub const P_FLOOR: f64 = 1e-300;

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if !x.is_finite() {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map(|c| c.sf(x)).unwrap_or(f64::NAN)
}

/// The 1-df chi-square statistic with upper-tail probability `p`, i.e. the
/// quantile at `1 - p`. Uses the normal quantile at `p/2` so that tiny p
/// keeps full precision.
pub fn chi2_1df_upper_quantile(p: f64) -> f64 {
    let p = p.clamp(P_FLOOR, 1.0);
    if p >= 1.0 {
        return 0.0;
    }
    let z = Normal::standard().inverse_cdf(p / 2.0);
    z * z
}

/// Median of the 1-df chi-square distribution (about 0.4549364).
pub fn chi2_1df_median() -> f64 {
    chi2_1df_upper_quantile(0.5)
}

/// `-log10(p)` with p floored at [`P_FLOOR`].
pub fn neg_log10(p: f64) -> f64 {
    let v = -p.max(P_FLOOR).log10();
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

pub fn bonferroni(alpha: f64, tested: usize) -> f64 {
    alpha / tested as f64
}

/// Benjamini-Hochberg cut-off: the largest sorted `p_(i)` with
/// `p_(i) <= i * q / m`, or `None` when no p-value qualifies.
pub fn bh_threshold(p_values: &[f64], q: f64) -> Option<f64> {
    let mut sorted: Vec<f64> = p_values.iter().copied().filter(|p| !p.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(i, &p)| p <= (*i as f64 + 1.0) * q / m)
        .map(|(_, &p)| p)
}

/// Median of a slice (mean of the two central values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_reference_values() {
        // scipy.stats.chi2.sf
        assert!((chi2_sf(3.841458820694124, 1) - 0.05).abs() < 1e-12);
        assert!((chi2_sf(5.991464547107979, 2) - 0.05).abs() < 1e-12);
        assert_eq!(chi2_sf(0.0, 3), 1.0);
        assert!((chi2_1df_upper_quantile(0.05) - 3.841458820694124).abs() < 1e-10);
        assert!((chi2_1df_median() - 0.4549364231195724).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_sf_in_the_tail() {
        for p in [1e-3, 1e-8, 1e-20, 1e-100] {
            let x = chi2_1df_upper_quantile(p);
            assert!((chi2_sf(x, 1) / p - 1.0).abs() < 1e-9, "{p}");
        }
    }

    #[test]
    fn bh_and_bonferroni() {
        assert_eq!(bh_threshold(&[0.01, 0.02, 0.03, 0.5], 0.05), Some(0.03));
        assert_eq!(bh_threshold(&[0.2, 0.5], 0.05), None);
        assert!((bonferroni(0.05, 3_084_046) - 1.6212e-8).abs() < 1e-12);
    }

    #[test]
    fn log_floor() {
        assert_eq!(neg_log10(0.0), 300.0);
        assert_eq!(neg_log10(1.0), 0.0);
    }
}
