//! Generalized (floating-mean, error-weighted) Lomb-Scargle periodogram.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightcurve::LightCurve;

/// Minimum number of samples for a period search.
pub const MIN_PERIODOGRAM_LEN: usize = 10;

const MAX_FREQUENCIES: usize = 20_000_000;
const REFINE_POINTS: usize = 64;
// Recompute the trig tables exactly this often to bound recurrence drift.
const RESYNC_EVERY: usize = 512;

/// Frequency grid in cycles per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyGrid {
    /// `[1/span, f_max]` with step `1/(oversampling * span)`.
    Auto { f_max: f64, oversampling: f64 },
    /// Explicit bounds and step.
    Explicit { f_min: f64, f_max: f64, step: f64 },
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid::Auto {
            f_max: 10.0,
            oversampling: 5.0,
        }
    }
}

impl FrequencyGrid {
    /// Resolve to `(f_min, f_max, step)` for a curve of the given span.
    pub fn resolve(&self, span: f64) -> Result<(f64, f64, f64)> {
        let (lo, hi, step) = match *self {
            FrequencyGrid::Auto {
                f_max,
                oversampling,
            } => {
                if span.is_nan() || span <= 0.0 || oversampling.is_nan() || oversampling <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "degenerate auto grid: span {span}, oversampling {oversampling}"
                    )));
                }
                (1.0 / span, f_max, 1.0 / (oversampling * span))
            }
            FrequencyGrid::Explicit { f_min, f_max, step } => (f_min, f_max, step),
        };
        if !(lo > 0.0 && hi > lo && step > 0.0 && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degenerate frequency grid [{lo}, {hi}] step {step}"
            )));
        }
        if (hi - lo) / step > MAX_FREQUENCIES as f64 {
            return Err(Error::InvalidArgument(format!(
                "frequency grid too dense: {} points",
                (hi - lo) / step
            )));
        }
        Ok((lo, hi, step))
    }
}

/// Normalized periodogram power over a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    /// Cycles per day, strictly increasing.
    pub frequencies: Vec<f64>,
    /// Fraction of weighted variance explained by a sinusoid, in `[0, 1]`.
    pub powers: Vec<f64>,
    pub best_period: f64,
    pub best_power: f64,
}

/// Weighted, mean-centred sums that do not depend on frequency.
struct Prepared {
    t: Vec<f64>,
    w: Vec<f64>,
    wy: Vec<f64>,
    yy: f64,
}

fn prepare(lc: &LightCurve) -> Prepared {
    let t0 = lc.times()[0];
    let t: Vec<f64> = lc.times().iter().map(|t| t - t0).collect();
    let inv: Vec<f64> = lc.errors().iter().map(|e| 1.0 / (e * e)).collect();
    let total: f64 = inv.iter().sum();
    let w: Vec<f64> = inv.iter().map(|x| x / total).collect();
    let ybar: f64 = w.iter().zip(lc.magnitudes()).map(|(w, y)| w * y).sum();
    // Centring y makes the power exactly offset-invariant in exact arithmetic
    // and keeps the sums well conditioned.
    let y: Vec<f64> = lc.magnitudes().iter().map(|m| m - ybar).collect();
    let wy: Vec<f64> = w.iter().zip(&y).map(|(w, y)| w * y).collect();
    let ym: f64 = wy.iter().sum();
    let yy: f64 = wy.iter().zip(&y).map(|(wy, y)| wy * y).sum::<f64>() - ym * ym;
    Prepared { t, w, wy, yy }
}

fn power_from_sums(p: &Prepared, sums: [f64; 6]) -> f64 {
    let [c, s, yc, ys, cc, cs] = sums;
    let ym: f64 = p.wy.iter().sum();
    let ss = 1.0 - cc;
    let yc_h = yc - ym * c;
    let ys_h = ys - ym * s;
    let cc_h = cc - c * c;
    let ss_h = ss - s * s;
    let cs_h = cs - c * s;
    let d = cc_h * ss_h - cs_h * cs_h;
    if p.yy <= 0.0 || d <= 1e-14 {
        return 0.0;
    }
    let pw = (ss_h * yc_h * yc_h + cc_h * ys_h * ys_h - 2.0 * cs_h * yc_h * ys_h) / (p.yy * d);
    pw.clamp(0.0, 1.0)
}

fn power_direct(p: &Prepared, f: f64) -> f64 {
    let omega = std::f64::consts::TAU * f;
    let mut sums = [0.0; 6];
    for i in 0..p.t.len() {
        let (sn, cn) = (omega * p.t[i]).sin_cos();
        accumulate(&mut sums, p.w[i], p.wy[i], cn, sn);
    }
    power_from_sums(p, sums)
}

#[inline]
fn accumulate(sums: &mut [f64; 6], w: f64, wy: f64, c: f64, s: f64) {
    sums[0] += w * c;
    sums[1] += w * s;
    sums[2] += wy * c;
    sums[3] += wy * s;
    sums[4] += w * c * c;
    sums[5] += w * c * s;
}

/// Compute the periodogram of `lc` over `grid`.
///
/// The coarse grid is scanned with a trigonometric recurrence; the best peak is
/// then refined on a finer local grid whose points are merged into the output,
/// so `best_power` is always the maximum of `powers`.
pub fn lomb_scargle(lc: &LightCurve, grid: &FrequencyGrid) -> Result<Periodogram> {
    if lc.len() < MIN_PERIODOGRAM_LEN {
        return Err(Error::InvalidArgument(format!(
            "periodogram needs at least {MIN_PERIODOGRAM_LEN} samples, got {}",
            lc.len()
        )));
    }
    let (f_min, f_max, step) = grid.resolve(lc.span())?;
    let n_freq = ((f_max - f_min) / step).floor() as usize + 1;
    let p = prepare(lc);
    let n = p.t.len();

    let mut freqs = Vec::with_capacity(n_freq);
    let mut powers = Vec::with_capacity(n_freq);
    let mut cos = vec![0.0; n];
    let mut sin = vec![0.0; n];
    let mut dcos = vec![0.0; n];
    let mut dsin = vec![0.0; n];
    let d_omega = std::f64::consts::TAU * step;
    for i in 0..n {
        let (s, c) = (d_omega * p.t[i]).sin_cos();
        dsin[i] = s;
        dcos[i] = c;
    }

    for k in 0..n_freq {
        let f = f_min + k as f64 * step;
        if k % RESYNC_EVERY == 0 {
            let omega = std::f64::consts::TAU * f;
            for i in 0..n {
                let (s, c) = (omega * p.t[i]).sin_cos();
                sin[i] = s;
                cos[i] = c;
            }
        }
        let mut sums = [0.0; 6];
        for i in 0..n {
            accumulate(&mut sums, p.w[i], p.wy[i], cos[i], sin[i]);
        }
        freqs.push(f);
        powers.push(power_from_sums(&p, sums));
        for i in 0..n {
            let c = cos[i] * dcos[i] - sin[i] * dsin[i];
            let s = sin[i] * dcos[i] + cos[i] * dsin[i];
            cos[i] = c;
            sin[i] = s;
        }
    }

    let best = argmax(&powers);
    if powers[best] > 0.0 {
        refine(&p, &mut freqs, &mut powers, best, step);
    }
    let best = argmax(&powers);
    Ok(Periodogram {
        best_period: 1.0 / freqs[best],
        best_power: powers[best],
        frequencies: freqs,
        powers,
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn refine(p: &Prepared, freqs: &mut Vec<f64>, powers: &mut Vec<f64>, best: usize, step: f64) {
    let centre = freqs[best];
    let fine = step / REFINE_POINTS as f64;
    let mut extra: Vec<(f64, f64)> = Vec::with_capacity(2 * REFINE_POINTS);
    for j in 1..REFINE_POINTS as i64 {
        for f in [centre - j as f64 * fine, centre + j as f64 * fine] {
            if f > 0.0 {
                extra.push((f, power_direct(p, f)));
            }
        }
    }
    extra.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut merged_f = Vec::with_capacity(freqs.len() + extra.len());
    let mut merged_p = Vec::with_capacity(freqs.len() + extra.len());
    let mut e = extra.into_iter().peekable();
    for (f, pw) in freqs.iter().copied().zip(powers.iter().copied()) {
        while let Some(&(ef, ep)) = e.peek() {
            if ef < f {
                merged_f.push(ef);
                merged_p.push(ep);
                e.next();
            } else {
                if ef == f {
                    e.next();
                }
                break;
            }
        }
        merged_f.push(f);
        merged_p.push(pw);
    }
    for (ef, ep) in e {
        merged_f.push(ef);
        merged_p.push(ep);
    }
    *freqs = merged_f;
    *powers = merged_p;
}
