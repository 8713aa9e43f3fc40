//! Uncertainty score, temperature calibration and accuracy-versus-uncertainty metrics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{HstError, Real, Result};

/// Scalars of the uncertainty score `u = max(floor, sigma0_sq - |K q|^2 / t_u^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqConfig<T> {
    pub sigma0_sq: T,
    pub t_u: T,
    pub floor: T,
}

impl<T: Real> Default for UqConfig<T> {
    fn default() -> Self {
        Self { sigma0_sq: T::one(), t_u: T::one(), floor: T::zero() }
    }
}

impl<T: Real> UqConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_u > T::zero()) || !self.t_u.is_finite() {
            return Err(HstError::InvalidArgument(format!("t_u must be positive, got {}", self.t_u)));
        }
        if !(self.sigma0_sq >= T::zero()) || !(self.floor >= T::zero()) {
            return Err(HstError::InvalidArgument("sigma0_sq and floor must be non-negative".into()));
        }
        Ok(())
    }

    /// Score from a precomputed `|K q|^2`.
    pub fn score(&self, kq_sq: T) -> T {
        (self.sigma0_sq - kq_sq / (self.t_u * self.t_u)).max(self.floor)
    }
}

/// `|K q|^2` for a row-major key matrix `keys` of width `q.len()`.
pub fn kq_norm_sq<T: Real>(q: &[T], keys: &[T]) -> T {
    let d = q.len();
    keys.chunks(d.max(1))
        .map(|k| {
            let s = k.iter().zip(q).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            s * s
        })
        .sum()
}

/// Uncertainty of a query vector `q` against its gathered key rows.
pub fn uncertainty<T: Real>(q: &[T], keys: &[T], cfg: &UqConfig<T>) -> T {
    cfg.score(kq_norm_sq(q, keys))
}

/// Thresholds fitted on the validation split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Mean absolute validation error; errors strictly below it are accurate.
    pub t_ac: f64,
    pub t_au_a: f64,
    pub t_au_i: f64,
}

fn check_aligned(errors: &[f64], us: &[f64]) -> Result<()> {
    if errors.is_empty() {
        return Err(HstError::InvalidArgument("no samples".into()));
    }
    if errors.len() != us.len() {
        return Err(HstError::Shape(format!("{} errors vs {} uncertainties", errors.len(), us.len())));
    }
    Ok(())
}

/// Running mean; exact for constant inputs.
fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let mut m = None;
    for (k, x) in xs.enumerate() {
        m = Some(match m {
            None => x,
            Some(prev) => prev + (x - prev) / (k + 1) as f64,
        });
    }
    m
}

pub fn compute_thresholds(errors: &[f64], us: &[f64]) -> Result<Thresholds> {
    check_aligned(errors, us)?;
    let t_ac = mean(errors.iter().map(|e| e.abs())).unwrap_or(0.0);
    let accurate = |i: usize| errors[i].abs() < t_ac;
    let t_au_a = mean((0..errors.len()).filter(|&i| accurate(i)).map(|i| us[i]));
    let t_au_i = mean((0..errors.len()).filter(|&i| !accurate(i)).map(|i| us[i]));
    match (t_au_a, t_au_i) {
        (Some(t_au_a), Some(t_au_i)) => Ok(Thresholds { t_ac, t_au_a, t_au_i }),
        _ => Err(HstError::InvalidArgument(
            "degenerate validation set: accurate or inaccurate group is empty".into(),
        )),
    }
}

/// Confusion counts and the metrics derived from them. A metric whose denominator is
/// zero is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvUReport {
    pub n_ac: u64,
    pub n_au: u64,
    pub n_ic: u64,
    pub n_iu: u64,
    pub avu_a: Option<f64>,
    pub avu_i: Option<f64>,
    pub avu_harmonic: Option<f64>,
    pub avu_plain: Option<f64>,
    pub thresholds: Option<Thresholds>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl AvUReport {
    pub fn from_counts(n_ac: u64, n_au: u64, n_ic: u64, n_iu: u64) -> Self {
        let avu_a = ratio(n_ac, n_ac + n_au);
        let avu_i = ratio(n_iu, n_ic + n_iu);
        let avu_harmonic = match (avu_a, avu_i) {
            (Some(a), Some(i)) if a + i > 0.0 => Some(2.0 * a * i / (a + i)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        let avu_plain = ratio(n_ac + n_iu, n_ac + n_au + n_ic + n_iu);
        Self { n_ac, n_au, n_ic, n_iu, avu_a, avu_i, avu_harmonic, avu_plain, thresholds: None }
    }

    pub fn total(&self) -> u64 {
        self.n_ac + self.n_au + self.n_ic + self.n_iu
    }

    /// Aligned text table plus metric lines.
    pub fn to_text(&self) -> String {
        let fmt = |m: Option<f64>| m.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        s.push_str(&format!("{:<12}{:>12}{:>12}\n", "", "certain", "uncertain"));
        s.push_str(&format!("{:<12}{:>12}{:>12}\n", "accurate", self.n_ac, self.n_au));
        s.push_str(&format!("{:<12}{:>12}{:>12}\n", "inaccurate", self.n_ic, self.n_iu));
        s.push_str(&format!("AvU_A        {}\n", fmt(self.avu_a)));
        s.push_str(&format!("AvU_I        {}\n", fmt(self.avu_i)));
        s.push_str(&format!("AvU_harmonic {}\n", fmt(self.avu_harmonic)));
        s.push_str(&format!("AvU_plain    {}\n", fmt(self.avu_plain)));
        s
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let fmt = |m: Option<f64>| m.map_or_else(|| "undefined".to_string(), |v| format!("{v}"));
        let mut lines = vec![
            format!("n_ac={}", self.n_ac),
            format!("n_au={}", self.n_au),
            format!("n_ic={}", self.n_ic),
            format!("n_iu={}", self.n_iu),
            format!("avu_a={}", fmt(self.avu_a)),
            format!("avu_i={}", fmt(self.avu_i)),
            format!("avu_harmonic={}", fmt(self.avu_harmonic)),
            format!("avu_plain={}", fmt(self.avu_plain)),
        ];
        if let Some(t) = self.thresholds {
            lines.push(format!("t_ac={}", t.t_ac));
            lines.push(format!("t_au_a={}", t.t_au_a));
            lines.push(format!("t_au_i={}", t.t_au_i));
        }
        lines.join("\n") + "\n"
    }
}

/// Classify each test sample and tally the four categories.
pub fn avu_report(errors: &[f64], us: &[f64], thr: &Thresholds) -> Result<AvUReport> {
    check_aligned(errors, us)?;
    let (mut n_ac, mut n_au, mut n_ic, mut n_iu) = (0, 0, 0, 0);
    for (&e, &u) in errors.iter().zip(us) {
        if e.abs() < thr.t_ac {
            if u < thr.t_au_a {
                n_ac += 1;
            } else {
                n_au += 1;
            }
        } else if u < thr.t_au_i {
            n_ic += 1;
        } else {
            n_iu += 1;
        }
    }
    let mut report = AvUReport::from_counts(n_ac, n_au, n_ic, n_iu);
    report.thresholds = Some(*thr);
    Ok(report)
}

/// Coverage levels used by the calibration error.
pub const COVERAGE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Mean gap between nominal and observed coverage of central Gaussian intervals with
/// centre `y_hat` and variance `var`.
pub fn calibration_error(y_hat: &[f64], var: &[f64], targets: &[f64]) -> f64 {
    let normal = Normal::standard();
    let n = y_hat.len() as f64;
    COVERAGE_LEVELS
        .iter()
        .map(|&p| {
            let z = normal.inverse_cdf(0.5 + p / 2.0);
            let covered = y_hat
                .iter()
                .zip(var)
                .zip(targets)
                .filter(|((&m, &v), &y)| (y - m).abs() <= z * v.max(0.0).sqrt())
                .count();
            (covered as f64 / n - p).abs()
        })
        .sum::<f64>()
        / COVERAGE_LEVELS.len() as f64
}

/// Grid value of `t_u` with the smallest calibration error; ties go to the smaller
/// value. `preds` holds `(y_hat, |K q|^2)` pairs.
pub fn calibrate_tu<T: Real>(preds: &[(T, T)], targets: &[T], base: &UqConfig<T>, grid: &[T]) -> Result<T> {
    if grid.is_empty() {
        return Err(HstError::InvalidArgument("empty calibration grid".into()));
    }
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(HstError::InvalidArgument(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if grid.iter().any(|&t| !(t > T::zero())) {
        return Err(HstError::InvalidArgument("calibration grid values must be positive".into()));
    }
    let y_hat: Vec<f64> = preds.iter().map(|p| p.0.as_f64()).collect();
    let y: Vec<f64> = targets.iter().map(|t| t.as_f64()).collect();
    let mut best: Option<(f64, T)> = None;
    for &t_u in grid {
        let cfg = UqConfig { t_u, ..*base };
        let var: Vec<f64> = preds.iter().map(|p| cfg.score(p.1).as_f64()).collect();
        let err = calibration_error(&y_hat, &var, &y);
        let better = match best {
            None => true,
            Some((e, t)) => err < e || (err == e && t_u < t),
        };
        if better {
            best = Some((err, t_u));
        }
    }
    Ok(best.map(|b| b.1).expect("non-empty grid"))
}
