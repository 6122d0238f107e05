//! Two-sample Welch t-test and group aggregates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

impl WelchTest {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE_LEVEL
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test.
///
/// When both groups have zero variance the test is degenerate: equal means
/// give `p = 1`, different means give `p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test needs at least 2 samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("t-test samples must be finite".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t, p_value) = if ma == mb {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(ma - mb), 0.0)
        };
        return Ok(WelchTest {
            t,
            df: (a.len() + b.len() - 2) as f64,
            p_value,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchTest { t, df, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn aggregate(xs: &[f64]) -> Option<Aggregate> {
    if xs.is_empty() {
        return None;
    }
    Some(Aggregate {
        n: xs.len(),
        mean: xs.iter().sum::<f64>() / xs.len() as f64,
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = welch_t_test(&[0.5; 5], &[0.5; 5]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant());
    }

    #[test]
    fn separated_constants() {
        let r = welch_t_test(&[0.0; 5], &[1.0; 5]).unwrap();
        assert!(r.p_value < 1e-6);
        assert!(r.significant());
    }

    #[test]
    fn textbook_fixture() {
        // Welch's classic unequal-variance example: t = -2.46, df = 24.99, p = 0.021.
        let a = [
            27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4,
        ];
        let b = [
            27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4,
        ];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t - -2.455356398286006).abs() < 1e-10);
        assert!((r.df - 24.988529290231416).abs() < 1e-9);
        assert!((r.p_value - 0.021378001462866985).abs() < 1e-8);
    }

    #[test]
    fn five_run_fixture() {
        let r = welch_t_test(
            &[0.975, 0.978, 0.977, 0.979, 0.976],
            &[0.970, 0.972, 0.969, 0.971, 0.973],
        )
        .unwrap();
        assert!((r.df - 8.0).abs() < 1e-9);
        assert!((r.p_value - 0.00032339322188518866).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregates() {
        let a = aggregate(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!((a.n, a.mean, a.min, a.max), (3, 2.0, 1.0, 3.0));
        assert!(aggregate(&[]).is_none());
    }
}
