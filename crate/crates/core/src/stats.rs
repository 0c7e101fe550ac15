//! Summary statistics, Welch and paired t-tests, and one-way ANOVA.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn std_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for the alternative mean(a) < mean(b).
    pub p_less: f64,
}

fn student_cdf(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .cdf(t)
}

/// Welch's unequal-variance t-test of `a` against `b`. `None` when both
/// samples have zero variance or fewer than two points.
pub fn welch_t(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se2 = va + vb;
    if se2 <= 0.0 {
        return None;
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Some(TTest {
        t,
        df,
        p_less: student_cdf(t, df),
    })
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let se = std_error(&d);
    if se <= 0.0 || se.is_nan() {
        return None;
    }
    let df = (d.len() - 1) as f64;
    let t = mean(&d) / se;
    Some(TTest {
        t,
        df,
        p_less: student_cdf(t, df),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
}

/// One-way ANOVA across groups. `None` when within-group variance is zero
/// or there are too few observations.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Option<Anova> {
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    if k < 2 || n <= k || groups.iter().any(Vec::is_empty) {
        return None;
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ss_between: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.len() as f64 * (m - grand) * (m - grand)
        })
        .sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        })
        .sum();
    if ss_within <= 0.0 {
        return None;
    }
    let df_between = (k - 1) as f64;
    let df_within = (n - k) as f64;
    let f = (ss_between / df_between) / (ss_within / df_within);
    let p = 1.0
        - FisherSnedecor::new(df_between, df_within)
            .expect("positive degrees of freedom")
            .cdf(f);
    Some(Anova {
        f,
        df_between,
        df_within,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welch_textbook_case() {
        // means 2 and 3, variances 1 and 1, n = 3: t = -1 / sqrt(2/3)
        let r = welch_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.t - (-1.0 / (2.0f64 / 3.0).sqrt())).abs() < 1e-9);
        assert!((r.df - 4.0).abs() < 1e-12);
        assert!(r.p_less > 0.1 && r.p_less < 0.5);
    }

    #[test]
    fn degenerate_variance_has_no_test() {
        assert!(welch_t(&[1.0, 1.0], &[1.0, 1.0]).is_none());
        assert!(one_way_anova(&[vec![2.0, 2.0], vec![2.0, 2.0]]).is_none());
    }

    #[test]
    fn identical_groups_are_not_significant() {
        let g = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let a = one_way_anova(&[g.clone(), g]).unwrap();
        assert!(a.f.abs() < 1e-12);
        assert!(a.p > 0.99);
    }

    #[test]
    fn anova_hand_value() {
        // groups {1,2,3}, {4,5,6}: SSB = 13.5, SSW = 4, F = 13.5 / (4/4) = 13.5
        let a = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert!((a.f - 13.5).abs() < 1e-12);
        assert!(a.p < 0.05);
    }

    #[test]
    fn paired_detects_constant_shift_with_noise() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.5, 2.4, 3.6, 4.5];
        let r = paired_t(&a, &b).unwrap();
        assert!(r.t < 0.0 && r.p_less < 0.01);
    }
}
