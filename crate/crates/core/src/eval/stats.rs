use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Sample mean and unbiased standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test for a difference in means, e.g. per-seed
/// accuracies of two methods.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config("a t-test needs at least two samples per group".into()));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (va, vb) = (sa * sa / a.len() as f64, sb * sb / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p_value = if ma == mb { 1.0 } else { 0.0 };
        let t = if ma == mb { 0.0 } else { f64::INFINITY.copysign(ma - mb) };
        return Ok(TTest {
            t,
            dof: (a.len() + b.len() - 2) as f64,
            p_value,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Config(e.to_string()))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, dof, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_values() {
        // scipy.stats.ttest_ind([1,2,3,4], [2,4,6,8,10], equal_var=False)
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0, 10.0]).unwrap();
        assert!((r.t - -2.2514363231593695).abs() < 1e-12);
        assert!((r.dof - 5.520787746170677).abs() < 1e-9);
        assert!((r.p_value - 0.06913359319239236).abs() < 1e-6, "{}", r.p_value);
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - 2.138089935299395).abs() < 1e-12);
    }
}
