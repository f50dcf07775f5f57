use serde::{Deserialize, Serialize};

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Two-sided Student-t critical value: the `(1 + confidence) / 2` quantile
/// with `df` degrees of freedom.
///
/// Above 10⁴ degrees of freedom the quantile comes from the Cornish-Fisher
/// expansion around the normal quantile, where the direct inversion loses
/// precision.
pub fn t_critical(df: usize, confidence: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::Invalid("degrees of freedom must be positive".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Invalid(format!("confidence level {confidence} outside (0, 1)")));
    }
    let p = 0.5 * (1.0 + confidence);
    let v = df as f64;
    if df > 10_000 {
        let z = Normal::standard().inverse_cdf(p);
        let (z3, z5) = (z.powi(3), z.powi(5));
        return Ok(z + (z3 + z) / (4.0 * v) + (5.0 * z5 + 16.0 * z3 + 3.0 * z) / (96.0 * v * v));
    }
    let dist = StudentsT::new(0.0, 1.0, v).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor n − 1).
pub fn sample_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub std: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean ± t·s/√n over fold-level values.
pub fn fold_ci(values: &[f64], confidence: f64) -> Result<ConfidenceInterval> {
    if values.len() < 2 {
        return Err(Error::Invalid("a confidence interval needs at least two values".into()));
    }
    let n = values.len();
    let m = mean(values);
    let s = sample_std(values);
    let half_width = t_critical(n - 1, confidence)? * s / (n as f64).sqrt();
    Ok(ConfidenceInterval {
        mean: m,
        std: s,
        half_width,
        lower: m - half_width,
        upper: m + half_width,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub mean_delta: f64,
    /// Δ / s_diff; `None` when the differences have zero spread and Δ ≠ 0.
    pub cohens_d: Option<f64>,
    pub infinite: bool,
}

/// Paired effect size of `a − b`.
pub fn effect_size(a: &[f64], b: &[f64]) -> Result<EffectSize> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Invalid("effect size needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let delta = mean(&diffs);
    let s = sample_std(&diffs);
    if s == 0.0 {
        return Ok(if delta == 0.0 {
            EffectSize {
                mean_delta: 0.0,
                cohens_d: Some(0.0),
                infinite: false,
            }
        } else {
            EffectSize {
                mean_delta: delta,
                cohens_d: None,
                infinite: true,
            }
        });
    }
    Ok(EffectSize {
        mean_delta: delta,
        cohens_d: Some(delta / s),
        infinite: false,
    })
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Invalid("correlation needs at least two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(cdf: impl Fn(f64) -> f64, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 100.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn critical_values_match_closed_forms() {
        use std::f64::consts::PI;
        // df = 1 is Cauchy.
        let cauchy = (PI * 0.475).tan();
        assert!((t_critical(1, 0.95).unwrap() - cauchy).abs() < 1e-9);
        let cdf2 = |t: f64| 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
        assert!((t_critical(2, 0.95).unwrap() - bisect(cdf2, 0.975)).abs() < 1e-9);
        let cdf3 = |t: f64| {
            let x = t / 3f64.sqrt();
            0.5 + (x / (1.0 + x * x) + x.atan()) / PI
        };
        assert!((t_critical(3, 0.95).unwrap() - bisect(cdf3, 0.975)).abs() < 1e-9);
        assert!((t_critical(3, 0.95).unwrap() - 3.182).abs() < 1e-3);
        let z = 1.959963984540054;
        let large = t_critical(1_000_000, 0.95).unwrap();
        assert!(large > z && large - z < 1e-5);
        let below = t_critical(10_000, 0.95).unwrap();
        let above = t_critical(10_001, 0.95).unwrap();
        assert!(below > above && below - above < 1e-7);
        assert!(t_critical(0, 0.95).is_err());
        assert!(t_critical(4, 1.0).is_err());
    }

    #[test]
    fn ci_examples() {
        let flat = fold_ci(&[0.7, 0.7, 0.7, 0.7], 0.95).unwrap();
        assert_eq!(flat.half_width, 0.0);

        let two = fold_ci(&[0.0, 1.0], 0.95).unwrap();
        assert_eq!(two.mean, 0.5);
        assert!((two.std - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((two.half_width - (std::f64::consts::PI * 0.475).tan() * 0.5).abs() < 1e-9);
        assert!((two.half_width - 6.353).abs() < 1e-3);

        assert!(fold_ci(&[1.0], 0.95).is_err());
        assert!(fold_ci(&[0.0, 1.0], 0.9).unwrap().half_width < two.half_width);
    }

    #[test]
    fn ci_with_known_spread() {
        // Four values with mean 0.74 and sample std 0.05.
        let d = 0.05 * (3.0f64 / 4.0).sqrt();
        let v = [0.74 - d, 0.74 - d, 0.74 + d, 0.74 + d];
        let ci = fold_ci(&v, 0.95).unwrap();
        assert!((ci.std - 0.05).abs() < 1e-12);
        assert!((ci.half_width - t_critical(3, 0.95).unwrap() * 0.05 / 2.0).abs() < 1e-12);
        assert!((ci.half_width - 0.0796).abs() < 1e-4);
        assert!((ci.lower - 0.660).abs() < 1e-3);
        assert!((ci.upper - 0.820).abs() < 1e-3);
    }

    #[test]
    fn ci_shrinks_with_root_n() {
        let base = [0.6, 0.8];
        let mut prev = f64::INFINITY;
        for reps in 1..6 {
            let v: Vec<f64> = base.iter().cycle().take(2 * reps).copied().collect();
            let ci = fold_ci(&v, 0.95).unwrap();
            assert!(ci.half_width < prev);
            prev = ci.half_width;
        }
    }

    #[test]
    fn effect_size_examples() {
        let same = effect_size(&[0.5, 0.6], &[0.5, 0.6]).unwrap();
        assert_eq!((same.mean_delta, same.cohens_d), (0.0, Some(0.0)));
        let e = effect_size(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert_eq!(e.mean_delta, 2.0);
        assert!((e.cohens_d.unwrap() - 2.0 / 2f64.sqrt()).abs() < 1e-12);
        let inf = effect_size(&[2.0, 3.0], &[1.0, 2.0]).unwrap();
        assert!(inf.infinite);
        assert_eq!(inf.mean_delta, 1.0);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
