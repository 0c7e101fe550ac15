//! Turning public annual statistics into scenario inputs: smoothed
//! forecasts, life-expectancy disaggregation, SMS response coefficients and
//! per-round growth rates.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::NumericError;
use crate::population::{NUM_SES, ROUNDS_PER_YEAR};

/// Annual observations keyed by calendar year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnualSeries {
    pub years: Vec<i32>,
    pub values: Vec<f64>,
}

impl AnnualSeries {
    /// Reads a `year,value` CSV with a header row. Years must strictly
    /// increase and values must be finite.
    pub fn from_csv<R: Read>(r: R) -> Result<Self, NumericError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut years = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| NumericError::Invalid(format!("CSV: {e}")))?;
            let bad = |what: &str| NumericError::Invalid(format!("row {}: bad {what}", line + 2));
            let year: i32 = rec.get(0).ok_or_else(|| bad("year"))?.trim().parse().map_err(|_| bad("year"))?;
            let value: f64 = rec.get(1).ok_or_else(|| bad("value"))?.trim().parse().map_err(|_| bad("value"))?;
            if !value.is_finite() {
                return Err(bad("value"));
            }
            if years.last().is_some_and(|&y| y >= year) {
                return Err(NumericError::Invalid(format!(
                    "row {}: years must strictly increase",
                    line + 2
                )));
            }
            years.push(year);
            values.push(value);
        }
        Ok(AnnualSeries { years, values })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["year", "value"])?;
        for (y, v) in self.years.iter().zip(&self.values) {
            out.write_record([y.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One year of life-expectancy statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeExpectancyRow {
    pub year: i32,
    pub average: f64,
    /// Female minus male, in years.
    pub gender_gap: f64,
    /// Gender-averaged offset of each SES decile from the average.
    pub ses_offsets: [f64; NUM_SES],
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T, NumericError> {
    rec.get(i)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| NumericError::Invalid(format!("row {row}: bad or missing column {}", i + 1)))
}

/// Reads `year,average,gender_gap,ses1..ses10` rows.
pub fn read_life_csv<R: Read>(r: R) -> Result<Vec<LifeExpectancyRow>, NumericError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| NumericError::Invalid(format!("CSV: {e}")))?;
        let row = i + 2;
        let mut ses_offsets = [0.0; NUM_SES];
        for (s, o) in ses_offsets.iter_mut().enumerate() {
            *o = parse_field(&rec, 3 + s, row)?;
        }
        out.push(LifeExpectancyRow {
            year: parse_field(&rec, 0, row)?,
            average: parse_field(&rec, 1, row)?,
            gender_gap: parse_field(&rec, 2, row)?,
            ses_offsets,
        });
    }
    Ok(out)
}

/// Reads `n,effect` rows of observed SMS effects.
pub fn read_sms_effects_csv<R: Read>(r: R) -> Result<Vec<(u32, f64)>, NumericError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| NumericError::Invalid(format!("CSV: {e}")))?;
        out.push((parse_field(&rec, 0, i + 2)?, parse_field(&rec, 1, i + 2)?));
    }
    Ok(out)
}

/// Result of choosing a smoothing window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingForecast {
    pub window: usize,
    pub alpha: f64,
    /// One-step-ahead MAE over the validation points.
    pub validation_mae: f64,
    pub forecast: f64,
}

/// Smoothing levels with `alpha`; `levels[t]` uses observations up to `t`.
pub fn exp_smooth(y: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut level = match y.first() {
        Some(&v) => v,
        None => return out,
    };
    out.push(level);
    for &v in &y[1..] {
        level = alpha * v + (1.0 - alpha) * level;
        out.push(level);
    }
    out
}

/// Picks the window `w` in `[lo, hi]` (smoothing factor `2 / (w + 1)`) that
/// minimises the one-step-ahead MAE over the points from index `hi` on,
/// then forecasts the next value. Ties go to the smaller window.
pub fn exp_smooth_forecast(y: &[f64], lo: usize, hi: usize) -> Result<SmoothingForecast, NumericError> {
    if lo == 0 || lo > hi {
        return Err(NumericError::Invalid(format!(
            "window range [{lo}, {hi}] must satisfy 1 <= lo <= hi"
        )));
    }
    if y.len() <= hi {
        return Err(NumericError::TooShort {
            needed: hi,
            have: y.len(),
        });
    }
    let mut best: Option<SmoothingForecast> = None;
    for w in lo..=hi {
        let alpha = 2.0 / (w as f64 + 1.0);
        let levels = exp_smooth(y, alpha);
        let errs: Vec<f64> = (hi..y.len()).map(|t| (y[t] - levels[t - 1]).abs()).collect();
        let m = errs.iter().sum::<f64>() / errs.len() as f64;
        if best.as_ref().is_none_or(|b| m < b.validation_mae) {
            best = Some(SmoothingForecast {
                window: w,
                alpha,
                validation_mae: m,
                forecast: *levels.last().expect("non-empty series"),
            });
        }
    }
    Ok(best.expect("at least one window"))
}

/// Minimum-norm least-squares solution of `A x = b` and the residual norm.
pub fn min_norm_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64), NumericError> {
    if a.nrows() != b.len() {
        return Err(NumericError::LengthMismatch {
            left: a.nrows(),
            right: b.len(),
        });
    }
    // Decompose the tall orientation; pinv(A) = pinv(A^T)^T.
    let wide = a.nrows() < a.ncols();
    let m = if wide { a.transpose() } else { a.clone() };
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let pinv = svd
        .pseudo_inverse(eps)
        .map_err(|e| NumericError::Invalid(e.to_string()))?;
    let x = if wide { pinv.transpose() * b } else { pinv * b };
    let residual = (a * &x - b).norm();
    Ok((x, residual))
}

/// Life expectancy in years for each (gender, SES) cell in one year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeExpectancyCells {
    pub male: [f64; NUM_SES],
    pub female: [f64; NUM_SES],
    /// Norm of the constraint residual.
    pub residual: f64,
}

/// Splits a population-wide life expectancy into 20 gender-by-SES cells.
///
/// Constraints: the cell average equals `average`; the female mean minus the
/// male mean equals `gender_gap`; the gender-averaged value of SES decile `s`
/// exceeds `average` by `ses_offsets[s]`. Genders weigh one half and SES
/// deciles one tenth each. The 12 by 20 system is solved for the
/// minimum-norm deviation from `average`.
pub fn disaggregate_life_expectancy(
    average: f64,
    gender_gap: f64,
    ses_offsets: &[f64; NUM_SES],
) -> Result<LifeExpectancyCells, NumericError> {
    let (a, b) = life_expectancy_system(average, gender_gap, ses_offsets);
    // Solve for deviations from the average so that the minimum-norm
    // solution is the flattest one, not the one closest to zero years.
    let shift = &a * DVector::from_element(2 * NUM_SES, average);
    let (d, residual) = min_norm_least_squares(&a, &(b - shift))?;
    let mut out = LifeExpectancyCells {
        male: [0.0; NUM_SES],
        female: [0.0; NUM_SES],
        residual,
    };
    for s in 0..NUM_SES {
        out.male[s] = average + d[s];
        out.female[s] = average + d[NUM_SES + s];
    }
    Ok(out)
}

/// Constraint matrix and right-hand side; unknowns are male SES 1..10
/// followed by female SES 1..10.
pub fn life_expectancy_system(
    average: f64,
    gender_gap: f64,
    ses_offsets: &[f64; NUM_SES],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = 2 * NUM_SES;
    let mut a = DMatrix::zeros(2 + NUM_SES, n);
    let mut b = DVector::zeros(2 + NUM_SES);
    let ses_w = 1.0 / NUM_SES as f64;
    for j in 0..n {
        a[(0, j)] = 0.5 * ses_w;
        a[(1, j)] = if j < NUM_SES { -ses_w } else { ses_w };
    }
    b[0] = average;
    b[1] = gender_gap;
    for s in 0..NUM_SES {
        a[(2 + s, s)] = 0.5;
        a[(2 + s, NUM_SES + s)] = 0.5;
        b[2 + s] = average + ses_offsets[s];
    }
    (a, b)
}

/// Fitted SMS response law `c1 + c2 * log10(n / (n - 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmsCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub residual: f64,
}

/// Repeat-message decay term, zero for the first message.
pub fn repeat_term(n: u32) -> f64 {
    if n <= 1 {
        0.0
    } else {
        (n as f64 / (n as f64 - 1.0)).log10()
    }
}

/// Least-squares fit of `c1, c2` to `(n, observed effect per unit rho)`.
pub fn fit_sms_coefficients(points: &[(u32, f64)]) -> Result<SmsCoefficients, NumericError> {
    if points.iter().any(|(n, y)| *n == 0 || !y.is_finite()) {
        return Err(NumericError::Invalid(
            "SMS counts must be at least 1 and effects finite".into(),
        ));
    }
    let a = DMatrix::from_fn(points.len(), 2, |i, j| {
        if j == 0 {
            1.0
        } else {
            repeat_term(points[i].0)
        }
    });
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let sv = a.clone().svd(false, false).singular_values;
    if sv.len() < 2 || sv.min() <= sv.max() * 1e-10 {
        return Err(NumericError::RankDeficient);
    }
    let (x, residual) = min_norm_least_squares(&a, &b)?;
    Ok(SmsCoefficients {
        c1: x[0],
        c2: x[1],
        residual,
    })
}

/// Converts an annual growth rate to a per-round rate with the same
/// compounded effect over a year.
pub fn growth_per_round(annual: f64) -> Result<f64, NumericError> {
    if !(annual > -1.0) || !annual.is_finite() {
        return Err(NumericError::Invalid(format!(
            "annual growth {annual} must be finite and greater than -1"
        )));
    }
    Ok((1.0 + annual).powf(1.0 / ROUNDS_PER_YEAR as f64) - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_hand_values() {
        let l = exp_smooth(&[10.0, 20.0, 20.0], 0.5);
        assert_eq!(l, vec![10.0, 15.0, 17.5]);
    }

    #[test]
    fn constant_series_ties_go_to_smallest_window() {
        let f = exp_smooth_forecast(&[5.0; 12], 2, 6).unwrap();
        assert_eq!(f.window, 2);
        assert_eq!(f.forecast, 5.0);
        assert_eq!(f.validation_mae, 0.0);
    }

    #[test]
    fn short_series_is_rejected() {
        assert!(matches!(
            exp_smooth_forecast(&[1.0, 2.0, 3.0], 1, 3),
            Err(NumericError::TooShort { .. })
        ));
    }

    #[test]
    fn forecast_matches_manual_sweep() {
        let y = [3.0, 5.0, 4.0, 6.0, 8.0, 7.0, 9.0, 11.0];
        let f = exp_smooth_forecast(&y, 1, 3).unwrap();
        let mut best = (f64::INFINITY, 0);
        for w in 1..=3 {
            let a = 2.0 / (w as f64 + 1.0);
            let mut level = y[0];
            let mut err = 0.0;
            for t in 1..y.len() {
                if t >= 3 {
                    err += (y[t] - level).abs();
                }
                level = a * y[t] + (1.0 - a) * level;
            }
            if err < best.0 {
                best = (err, w);
            }
        }
        assert_eq!(f.window, best.1);
        assert!((f.validation_mae - best.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        // overdetermined 4x3 full-rank system
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.5, 0.0, 1.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0, 0.5, 4.0]);
        let (x, _) = min_norm_least_squares(&a, &b).unwrap();
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let want = ata.lu().solve(&atb).unwrap();
        assert!((x - want).norm() < 1e-10);
    }

    #[test]
    fn underdetermined_solution_is_minimum_norm() {
        // x + y + z = 3  ->  (1, 1, 1)
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let (x, r) = min_norm_least_squares(&a, &DVector::from_row_slice(&[3.0])).unwrap();
        assert!((x - DVector::from_element(3, 1.0)).norm() < 1e-12);
        assert!(r < 1e-12);
    }

    #[test]
    fn disaggregation_reproduces_constraints() {
        let mut offsets = [0.0; NUM_SES];
        for (s, o) in offsets.iter_mut().enumerate() {
            *o = s as f64 - 4.5;
        }
        let c = disaggregate_life_expectancy(80.0, 5.0, &offsets).unwrap();
        assert!(c.residual < 1e-9, "{c:?}");
        let m: f64 = c.male.iter().sum::<f64>() / 10.0;
        let f: f64 = c.female.iter().sum::<f64>() / 10.0;
        assert!(((m + f) / 2.0 - 80.0).abs() < 1e-9);
        assert!((f - m - 5.0).abs() < 1e-9);
        for s in 0..NUM_SES {
            assert!(((c.male[s] + c.female[s]) / 2.0 - 80.0 - offsets[s]).abs() < 1e-9);
            // flattest split puts the whole gap on every decile
            assert!((c.female[s] - c.male[s] - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn no_gaps_gives_flat_table() {
        let c = disaggregate_life_expectancy(78.0, 0.0, &[0.0; NUM_SES]).unwrap();
        assert!(c.male.iter().chain(&c.female).all(|v| (v - 78.0).abs() < 1e-9));
    }

    #[test]
    fn inconsistent_offsets_leave_a_residual() {
        let c = disaggregate_life_expectancy(78.0, 0.0, &[1.0; NUM_SES]).unwrap();
        assert!(c.residual > 0.1);
    }

    #[test]
    fn sms_fit_recovers_exact_coefficients() {
        let pts: Vec<(u32, f64)> = (1..=6).map(|n| (n, 0.05 + 0.2 * repeat_term(n))).collect();
        let c = fit_sms_coefficients(&pts).unwrap();
        assert!((c.c1 - 0.05).abs() < 1e-10);
        assert!((c.c2 - 0.2).abs() < 1e-10);
        assert!(c.residual < 1e-10);
    }

    #[test]
    fn sms_fit_needs_two_distinct_counts() {
        assert!(matches!(
            fit_sms_coefficients(&[(3, 0.1), (3, 0.12)]),
            Err(NumericError::RankDeficient)
        ));
        assert!(matches!(fit_sms_coefficients(&[(2, 0.1)]), Err(NumericError::RankDeficient)));
    }

    #[test]
    fn ramp_and_long_series_windows() {
        let ramp: Vec<f64> = (0..30).map(|t| 2.0 * t as f64 + 1.0).collect();
        let f = exp_smooth_forecast(&ramp, 2, 10).unwrap();
        // a ramp is tracked best by the fastest smoother
        assert_eq!(f.window, 2);
        let y: Vec<f64> = (0..70)
            .map(|t| 150.0 + 2.5 * t as f64 + 6.0 * ((t * 37 % 11) as f64 - 5.0))
            .collect();
        let f = exp_smooth_forecast(&y, 2, 25).unwrap();
        assert!((2..=25).contains(&f.window));
    }

    #[test]
    fn two_points_interpolate_exactly() {
        let c = fit_sms_coefficients(&[(1, 0.1), (2, 0.4)]).unwrap();
        assert!(c.residual < 1e-12);
        assert!((c.c1 - 0.1).abs() < 1e-12);
        assert!((c.c1 + c.c2 * 2f64.log10() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn noisy_sms_fit_residual_matches_normal_equations() {
        let pts = [(1u32, 0.21), (2, 0.29), (3, 0.26), (4, 0.22), (6, 0.23), (10, 0.205)];
        let c = fit_sms_coefficients(&pts).unwrap();
        // closed-form simple regression on x = repeat_term(n)
        let n = pts.len() as f64;
        let xs: Vec<f64> = pts.iter().map(|p| repeat_term(p.0)).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let c2 = sxy / sxx;
        let c1 = my - c2 * mx;
        let res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - c1 - c2 * x).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((c.c1 - c1).abs() < 1e-9 && (c.c2 - c2).abs() < 1e-9);
        assert!((c.residual - res).abs() < 1e-9);
    }

    #[test]
    fn contradictory_miniature_matches_normal_equations() {
        // weighted mean of 3 values is 2, yet each value is also pinned to 3
        let a = DMatrix::from_row_slice(4, 3, &[0.5, 0.25, 0.25, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_row_slice(&[2.0, 3.0, 3.0, 3.0]);
        let (x, r) = min_norm_least_squares(&a, &b).unwrap();
        let want = (a.transpose() * &a).lu().solve(&(a.transpose() * &b)).unwrap();
        assert!((&x - &want).norm() < 1e-9);
        assert!(r > 0.1);
        // optimality: the residual is orthogonal to the columns
        assert!((a.transpose() * (&a * &x - &b)).norm() < 1e-9);
    }

    #[test]
    fn growth_compounds_back_to_annual() {
        let g = growth_per_round(0.02).unwrap();
        assert!(((1.0 + g).powi(365) - 1.02).abs() < 1e-12);
        assert_eq!(growth_per_round(0.0).unwrap(), 0.0);
        assert!(growth_per_round(-1.0).is_err());
    }

    #[test]
    fn life_and_sms_csv() {
        let text = "year,average,gender_gap,ses1,ses2,ses3,ses4,ses5,ses6,ses7,ses8,ses9,ses10\n\
                    2019,78.8,5.1,-4,-3,-2,-1,0,0,1,2,3,4\n";
        let rows = read_life_csv(text.as_bytes()).unwrap();
        assert_eq!(rows[0].year, 2019);
        assert_eq!(rows[0].ses_offsets[9], 4.0);
        assert!(read_life_csv("year,average\n2019,78\n".as_bytes()).is_err());
        let sms = read_sms_effects_csv("n,effect\n1,0.2\n2,0.26\n".as_bytes()).unwrap();
        assert_eq!(sms, vec![(1, 0.2), (2, 0.26)]);
    }

    #[test]
    fn csv_round_trip() {
        let s = AnnualSeries {
            years: vec![2000, 2001],
            values: vec![1.5, 2.5],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(AnnualSeries::from_csv(buf.as_slice()).unwrap(), s);
        assert!(AnnualSeries::from_csv("year,value\n2001,1\n2000,2\n".as_bytes()).is_err());
    }
}
