//! Variability features.
//!
//! Every curve is described by a fixed-order vector of thirteen statistics.
//! Features that cannot be computed for a curve (too few points, zero variance,
//! no red-band counterpart, ...) are flagged invalid in the mask and stored as
//! NaN; they are never silently replaced by zero. Imputation happens later, in
//! [`feature_matrix`] and at scoring time, using training-set medians.

mod periodogram;
mod table;

pub use periodogram::{lomb_scargle, FrequencyGrid, Periodogram, MIN_PERIODOGRAM_LEN};
pub use table::{
    feature_matrix, impute, medians, FeatureMatrix, FeatureRow, FeatureTable, FeatureTableReader,
};

use serde::{Deserialize, Serialize};

use crate::lightcurve::LightCurve;

/// Number of features per object.
pub const N_FEATURES: usize = 13;

/// Feature names in vector order. Also the feature-table column names.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "period",
    "amplitude",
    "color",
    "std",
    "skewness",
    "small_kurtosis",
    "stetson_k",
    "autocorrelation_length",
    "beyond1std",
    "max_slope",
    "linear_trend_slope",
    "pair_slope_trend",
    "flux_percentile_ratio_mid50",
];

/// Index of each feature in a [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(usize)]
pub enum Feature {
    Period = 0,
    Amplitude,
    Color,
    Std,
    Skewness,
    SmallKurtosis,
    StetsonK,
    AutocorrelationLength,
    Beyond1Std,
    MaxSlope,
    LinearTrendSlope,
    PairSlopeTrend,
    FluxPercentileRatioMid50,
}

impl Feature {
    pub fn name(self) -> &'static str {
        FEATURE_NAMES[self as usize]
    }
}

/// Thirteen feature values plus validity flags.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureVector {
    values: [f64; N_FEATURES],
    mask: [bool; N_FEATURES],
}

/// Equal when the same features are valid and those values are equal.
impl PartialEq for FeatureVector {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && (0..N_FEATURES).all(|i| !self.mask[i] || self.values[i] == other.values[i])
    }
}

impl Default for FeatureVector {
    fn default() -> Self {
        FeatureVector {
            values: [f64::NAN; N_FEATURES],
            mask: [false; N_FEATURES],
        }
    }
}

impl FeatureVector {
    /// Build from raw values; non-finite values are marked invalid.
    pub fn from_values(values: [f64; N_FEATURES]) -> Self {
        let mut fv = FeatureVector::default();
        for (i, v) in values.into_iter().enumerate() {
            fv.set(i, Some(v));
        }
        fv
    }

    fn set(&mut self, i: usize, v: Option<f64>) {
        match v {
            Some(x) if x.is_finite() => {
                self.values[i] = x;
                self.mask[i] = true;
            }
            _ => {
                self.values[i] = f64::NAN;
                self.mask[i] = false;
            }
        }
    }

    pub fn get(&self, f: Feature) -> Option<f64> {
        let i = f as usize;
        self.mask[i].then_some(self.values[i])
    }

    pub fn is_valid(&self, f: Feature) -> bool {
        self.mask[f as usize]
    }

    /// Raw values (NaN where invalid).
    pub fn values(&self) -> &[f64; N_FEATURES] {
        &self.values
    }

    pub fn mask(&self) -> &[bool; N_FEATURES] {
        &self.mask
    }

    /// Mask packed into an integer: bit `i` set when feature `i` is valid.
    pub fn mask_bits(&self) -> u16 {
        self.mask
            .iter()
            .enumerate()
            .fold(0u16, |acc, (i, &ok)| if ok { acc | (1 << i) } else { acc })
    }

    pub fn from_parts(values: [f64; N_FEATURES], mask_bits: u16) -> Self {
        let mut fv = FeatureVector::default();
        for (i, v) in values.into_iter().enumerate() {
            if mask_bits & (1 << i) != 0 {
                fv.set(i, Some(v));
            }
        }
        fv
    }
}

/// Options for feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid: FrequencyGrid,
}

/// Compute the feature vector for a blue-band curve and optional red-band
/// counterpart. Deterministic: identical inputs give identical bits.
pub fn extract_features(blue: &LightCurve, red: Option<&LightCurve>) -> FeatureVector {
    extract_features_with(blue, red, &FeatureConfig::default())
}

pub fn extract_features_with(
    blue: &LightCurve,
    red: Option<&LightCurve>,
    cfg: &FeatureConfig,
) -> FeatureVector {
    let t = blue.times();
    let m = blue.magnitudes();
    let e = blue.errors();
    let n = m.len();
    let mut fv = FeatureVector::default();

    let period = if n >= MIN_PERIODOGRAM_LEN {
        lomb_scargle(blue, &cfg.grid)
            .ok()
            .filter(|pg| pg.best_power > 1e-12)
            .map(|pg| pg.best_period)
    } else {
        None
    };
    fv.set(Feature::Period as usize, period);

    let sorted = sorted_copy(m);
    let p5 = percentile(&sorted, 0.05);
    let p95 = percentile(&sorted, 0.95);
    fv.set(Feature::Amplitude as usize, Some((p95 - p5) / 2.0));

    fv.set(
        Feature::Color as usize,
        red.map(|r| mean(m) - mean(r.magnitudes())),
    );

    let mu = mean(m);
    let sd = sample_std(m, mu);
    fv.set(Feature::Std as usize, Some(sd));
    fv.set(Feature::Skewness as usize, skewness(m, mu, sd));
    fv.set(Feature::SmallKurtosis as usize, small_kurtosis(m, mu, sd));
    fv.set(Feature::StetsonK as usize, stetson_k(m, e));
    fv.set(
        Feature::AutocorrelationLength as usize,
        autocorrelation_length(t, m),
    );

    let wmean = weighted_mean(m, e);
    let beyond = m.iter().filter(|&&x| (x - wmean).abs() > sd).count();
    fv.set(Feature::Beyond1Std as usize, Some(beyond as f64 / n as f64));

    let max_slope = t
        .windows(2)
        .zip(m.windows(2))
        .map(|(tw, mw)| ((mw[1] - mw[0]) / (tw[1] - tw[0])).abs())
        .fold(0.0f64, f64::max);
    fv.set(Feature::MaxSlope as usize, Some(max_slope));
    fv.set(Feature::LinearTrendSlope as usize, linear_slope(t, m));
    fv.set(Feature::PairSlopeTrend as usize, pair_slope_trend(m, 30));

    let spread = p95 - p5;
    let mid = percentile(&sorted, 0.60) - percentile(&sorted, 0.40);
    fv.set(
        Feature::FluxPercentileRatioMid50 as usize,
        (spread > 0.0).then(|| mid / spread),
    );
    fv
}

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn weighted_mean(m: &[f64], e: &[f64]) -> f64 {
    let (mut sw, mut swm) = (0.0, 0.0);
    for (x, s) in m.iter().zip(e) {
        let w = 1.0 / (s * s);
        sw += w;
        swm += w * x;
    }
    swm / sw
}

fn sample_std(x: &[f64], mu: f64) -> f64 {
    let ss: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

fn skewness(x: &[f64], mu: f64, sd: f64) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 3 || sd <= 0.0 {
        return None;
    }
    let m3: f64 = x.iter().map(|v| ((v - mu) / sd).powi(3)).sum();
    Some(n / ((n - 1.0) * (n - 2.0)) * m3)
}

fn small_kurtosis(x: &[f64], mu: f64, sd: f64) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 4 || sd <= 0.0 {
        return None;
    }
    let m4: f64 = x.iter().map(|v| ((v - mu) / sd).powi(4)).sum();
    Some(
        n * (n + 1.0) / ((n - 1.0) * (n - 2.0) * (n - 3.0)) * m4
            - 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0)),
    )
}

fn stetson_k(m: &[f64], e: &[f64]) -> Option<f64> {
    let n = m.len() as f64;
    let wm = weighted_mean(m, e);
    let scale = (n / (n - 1.0)).sqrt();
    let (mut sa, mut s2) = (0.0, 0.0);
    for (x, s) in m.iter().zip(e) {
        let d = scale * (x - wm) / s;
        sa += d.abs();
        s2 += d * d;
    }
    if s2 <= 0.0 {
        return None;
    }
    Some((sa / n) / (s2 / n).sqrt())
}

fn linear_slope(t: &[f64], m: &[f64]) -> Option<f64> {
    let tm = mean(t);
    let mm = mean(m);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in t.iter().zip(m) {
        sxy += (x - tm) * (y - mm);
        sxx += (x - tm).powi(2);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

fn pair_slope_trend(m: &[f64], last: usize) -> Option<f64> {
    let tail = &m[m.len().saturating_sub(last)..];
    if tail.len() < 2 {
        return None;
    }
    let (mut pos, mut neg) = (0i64, 0i64);
    for w in tail.windows(2) {
        if w[1] > w[0] {
            pos += 1;
        } else if w[1] < w[0] {
            neg += 1;
        }
    }
    Some((pos - neg) as f64 / (tail.len() - 1) as f64)
}

const ACF_MAX_POINTS: usize = 4096;

/// Smallest lag (in days) at which the autocorrelation of the curve, linearly
/// interpolated onto a regular grid with the median sampling step, drops
/// below 1/e.
fn autocorrelation_length(t: &[f64], m: &[f64]) -> Option<f64> {
    let n = t.len();
    if n < 3 {
        return None;
    }
    let mut steps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let span = t[n - 1] - t[0];
    let mut step = percentile(&steps, 0.5);
    if span / step > (ACF_MAX_POINTS - 1) as f64 {
        step = span / (ACF_MAX_POINTS - 1) as f64;
    }
    let len = (span / step).floor() as usize + 1;
    if len < 3 {
        return None;
    }
    let mut grid = Vec::with_capacity(len);
    let mut j = 0;
    for k in 0..len {
        let x = t[0] + k as f64 * step;
        while j + 2 < n && t[j + 1] < x {
            j += 1;
        }
        let frac = ((x - t[j]) / (t[j + 1] - t[j])).clamp(0.0, 1.0);
        grid.push(m[j] + (m[j + 1] - m[j]) * frac);
    }
    let mu = mean(&grid);
    for g in grid.iter_mut() {
        *g -= mu;
    }
    let denom: f64 = grid.iter().map(|x| x * x).sum();
    if denom <= 0.0 {
        return None;
    }
    let threshold = (-1.0f64).exp();
    for lag in 1..len / 2 {
        let num: f64 = grid[..len - lag]
            .iter()
            .zip(&grid[lag..])
            .map(|(a, b)| a * b)
            .sum();
        if num / denom < threshold {
            return Some(lag as f64 * step);
        }
    }
    None
}

/// Median photometric error; used for the signal-to-noise annotation.
pub fn median_error(lc: &LightCurve) -> f64 {
    percentile(&sorted_copy(lc.errors()), 0.5)
}
