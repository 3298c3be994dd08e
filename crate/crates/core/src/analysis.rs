//! Oscillation analysis of a pulse-width trace: per-window quadratic
//! background removal, zero-padded periodogram, and dominant-period
//! detection with a peak-to-median significance test.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::exec::{self, ExecMode};
use crate::protocol::PulseTrace;
use crate::units::period_to_energy;
use crate::{Error, Result};

/// Pulse-width window. Samples with `dt_lo < Δt <= dt_hi` are selected,
/// matching the staircase convention in which the channel count steps up
/// just after each multiple of `tau_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub dt_lo: f64,
    pub dt_hi: f64,
}

impl Window {
    pub fn new(dt_lo: f64, dt_hi: f64) -> Self {
        Self { dt_lo, dt_hi }
    }

    /// Parses `lo:hi`.
    pub fn parse(text: &str) -> Option<Self> {
        let (lo, hi) = text.split_once(':')?;
        let lo: f64 = lo.trim().parse().ok()?;
        let hi: f64 = hi.trim().parse().ok()?;
        (hi > lo).then_some(Self::new(lo, hi))
    }

    /// Label such as `window_100_150`.
    pub fn label(&self) -> String {
        format!("window_{}_{}", self.dt_lo, self.dt_hi)
    }

    /// Index range of the selected trace samples.
    pub fn indices(&self, trace: &PulseTrace) -> Result<std::ops::Range<usize>> {
        let step = trace.step();
        let (min, max) = match (trace.dt_ps.first(), trace.dt_ps.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0.0, 0.0),
        };
        let out_of_bounds = Error::WindowOutOfBounds {
            lo: self.dt_lo,
            hi: self.dt_hi,
            min,
            max,
        };
        if trace.len() < 2 || !(step > 0.0) {
            return Err(out_of_bounds);
        }
        let tol = 1e-9 * step;
        if self.dt_lo < min - tol || self.dt_hi > max + tol {
            return Err(out_of_bounds);
        }
        if self.dt_hi - self.dt_lo < 10.0 * step - tol {
            return Err(Error::domain(format!(
                "window {}..{} spans fewer than 10 grid steps",
                self.dt_lo, self.dt_hi
            )));
        }
        let start = trace.dt_ps.partition_point(|&t| t <= self.dt_lo + tol);
        let end = trace.dt_ps.partition_point(|&t| t <= self.dt_hi + tol);
        Ok(start..end)
    }
}

/// Background-removed samples of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Detrended {
    pub dt_ps: Vec<f64>,
    pub values: Vec<f64>,
    pub grid_step: f64,
}

/// Residual below this fraction of the input scale is reported as exactly
/// zero: it is rounding noise of the polynomial fit, not signal.
const RESOLUTION: f64 = 1e-10;

/// Subtracts the least-squares quadratic from `values` (uniform sampling).
///
/// The fit projects onto an orthonormalized {1, x, x²} basis built on a
/// centred abscissa in [−1, 1].
pub fn detrend_series(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if n <= 3 || scale == 0.0 {
        return vec![0.0; n];
    }
    let half = (n - 1) as f64 / 2.0;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 - half) / half).collect();
    let raw = [
        vec![1.0; n],
        x.clone(),
        x.iter().map(|v| v * v).collect::<Vec<_>>(),
    ];
    // modified Gram–Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(3);
    for mut v in raw {
        for q in &basis {
            let d = dot(q, &v);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    let mut residual = values.to_vec();
    for _ in 0..2 {
        // second pass mops up projection round-off
        for q in &basis {
            let d = dot(q, &residual);
            residual.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
    }
    let max_res = residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max_res <= RESOLUTION * scale {
        residual.iter_mut().for_each(|v| *v = 0.0);
    }
    residual
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quadratic background removal over `window`.
pub fn detrend(trace: &PulseTrace, window: &Window) -> Result<Detrended> {
    let range = window.indices(trace)?;
    Ok(Detrended {
        dt_ps: trace.dt_ps[range.clone()].to_vec(),
        values: detrend_series(&trace.i_sub_pa[range]),
        grid_step: trace.step(),
    })
}

/// Mean of each run of `width` consecutive samples ending at index i,
/// for i = width−1 .. n−1.
pub fn moving_mean(values: &[f64], width: usize) -> Vec<f64> {
    if width == 0 || values.len() < width {
        return Vec::new();
    }
    values
        .windows(width)
        .map(|w| w.iter().sum::<f64>() / width as f64)
        .collect()
}

/// Mean current over `(at − width, at]`, the oscillation-averaged level of
/// the plateau ending at `at`.
pub fn plateau_level(trace: &PulseTrace, at: f64, width: f64) -> Result<f64> {
    let tol = 1e-9 * trace.step().max(1.0);
    let picked: Vec<f64> = trace
        .dt_ps
        .iter()
        .zip(&trace.i_sub_pa)
        .filter(|(t, _)| **t > at - width + tol && **t <= at + tol)
        .map(|(_, i)| *i)
        .collect();
    if picked.is_empty() {
        return Err(Error::WindowOutOfBounds {
            lo: at - width,
            hi: at,
            min: trace.dt_ps.first().copied().unwrap_or(0.0),
            max: trace.dt_ps.last().copied().unwrap_or(0.0),
        });
    }
    Ok(picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Magnitude spectrum on a period axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Periods in ps, decreasing from the series length to two grid steps.
    pub periods: Vec<f64>,
    /// Amplitude-normalized magnitudes: a unit cosine gives a peak near 1.
    pub magnitudes: Vec<f64>,
    /// Median magnitude excluding the three largest bins.
    pub noise_floor: f64,
    /// Σ_{k≠0} |X_k|² / M over all M padded bins. By Parseval this equals
    /// Σ (x − mean)², i.e. variance × length.
    pub total_power: f64,
    pub grid_step: f64,
    pub series_len: usize,
}

impl Spectrum {
    pub fn window_length(&self) -> f64 {
        self.series_len as f64 * self.grid_step
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("period_ps,magnitude\n");
        for (p, m) in self.periods.iter().zip(&self.magnitudes) {
            out.push_str(&format!("{p:.9},{m:.12e}\n"));
        }
        out
    }
}

pub const MIN_SERIES_LEN: usize = 16;
const PAD_FACTOR: usize = 16;

/// Zero-padded DFT magnitude of the mean-removed series.
pub fn periodogram(series: &[f64], grid_step: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < MIN_SERIES_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            min: MIN_SERIES_LEN,
        });
    }
    if !(grid_step > 0.0) {
        return Err(Error::domain("grid_step must be > 0"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let m = (PAD_FACTOR * n).next_power_of_two();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|&v| Complex64::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);

    let total_power = buf.iter().skip(1).map(|c| c.norm_sqr()).sum::<f64>() / m as f64;
    // periods m·step/k for k ≥ m/n keep period ≤ n·step
    let k_min = m.div_ceil(n);
    let k_max = m / 2;
    let norm = 2.0 / n as f64;
    let (periods, magnitudes): (Vec<f64>, Vec<f64>) = (k_min..=k_max)
        .map(|k| (m as f64 * grid_step / k as f64, buf[k].norm() * norm))
        .unzip();

    let mut sorted = magnitudes.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let skip = 3.min(sorted.len());
    let noise_floor = median_sorted(&sorted[skip..]);

    Ok(Spectrum {
        periods,
        magnitudes,
        noise_floor,
        total_power,
        grid_step,
        series_len: n,
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodEstimate {
    /// Present only when `ok`.
    pub period: Option<f64>,
    /// h/period, present only when `ok`.
    pub energy: Option<f64>,
    /// Peak magnitude over the noise floor.
    pub significance: f64,
    pub ok: bool,
}

pub const DEFAULT_THRESHOLD: f64 = 4.0;

/// Largest magnitude with period in [2·step, window/3], as
/// `(period, magnitude)`, regardless of significance.
pub fn strongest_peak(spec: &Spectrum) -> Option<(f64, f64)> {
    let lo = 2.0 * spec.grid_step * (1.0 - 1e-12);
    let hi = spec.window_length() / 3.0;
    let mut best: Option<(f64, f64)> = None;
    for (&p, &m) in spec.periods.iter().zip(&spec.magnitudes) {
        if p < lo || p > hi {
            continue;
        }
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((p, m));
        }
    }
    best
}

/// Strongest peak with period in [2·step, window/3]; reported as a period
/// only when it clears `threshold` × noise floor.
pub fn dominant_period(spec: &Spectrum, threshold: f64) -> PeriodEstimate {
    let Some((period, mag)) = strongest_peak(spec) else {
        return PeriodEstimate {
            period: None,
            energy: None,
            significance: 0.0,
            ok: false,
        };
    };
    let significance = if spec.noise_floor > 0.0 {
        mag / spec.noise_floor
    } else if mag > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let ok = mag > 0.0 && significance >= threshold;
    PeriodEstimate {
        period: ok.then_some(period),
        energy: ok.then(|| period_to_energy(period)),
        significance,
        ok,
    }
}

/// Full per-window pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAnalysis {
    pub window: Window,
    pub estimate: PeriodEstimate,
    pub spectrum: Spectrum,
}

pub fn analyze_window(trace: &PulseTrace, window: &Window, threshold: f64) -> Result<WindowAnalysis> {
    let d = detrend(trace, window)?;
    let spectrum = periodogram(&d.values, d.grid_step)?;
    Ok(WindowAnalysis {
        window: *window,
        estimate: dominant_period(&spectrum, threshold),
        spectrum,
    })
}

/// Runs [`analyze_window`] over every window; failures stay per-window.
pub fn analyze_windows(trace: &PulseTrace, windows: &[Window]) -> Vec<Result<PeriodEstimate>> {
    analyze_windows_with(trace, windows, DEFAULT_THRESHOLD, ExecMode::Parallel)
        .into_iter()
        .map(|r| r.map(|a| a.estimate))
        .collect()
}

pub fn analyze_windows_with(
    trace: &PulseTrace,
    windows: &[Window],
    threshold: f64,
    mode: ExecMode,
) -> Vec<Result<WindowAnalysis>> {
    exec::map(mode, windows, |w| analyze_window(trace, w, threshold))
}

pub const RESULTS_HEADER: &str = "window_lo,window_hi,period_ps,energy_meV,significance,ok";

/// One results-CSV row; absent period/energy are left empty.
pub fn result_row(window: &Window, est: &PeriodEstimate) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    format!(
        "{},{},{},{},{:.6},{}",
        window.dt_lo,
        window.dt_hi,
        opt(est.period),
        opt(est.energy),
        est.significance,
        est.ok
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DeviceParams;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn trace_of(values: Vec<f64>) -> PulseTrace {
        PulseTrace {
            dt_ps: (0..values.len()).map(|i| i as f64).collect(),
            i_sub_pa: values,
            params_snapshot: DeviceParams::default(),
        }
    }

    #[test]
    fn window_parse_and_label() {
        assert_eq!(Window::parse("100:150"), Some(Window::new(100.0, 150.0)));
        assert_eq!(Window::parse("150:100"), None);
        assert_eq!(Window::parse("abc"), None);
        assert_eq!(Window::new(100.0, 150.0).label(), "window_100_150");
    }

    #[test]
    fn window_is_half_open() {
        let t = trace_of(vec![0.0; 200]);
        let r = Window::new(100.0, 150.0).indices(&t).unwrap();
        assert_eq!(r, 101..151);
        assert!(Window::new(150.0, 250.0).indices(&t).is_err());
        assert!(Window::new(100.0, 105.0).indices(&t).is_err());
    }

    #[test]
    fn detrend_constant_and_quadratic() {
        assert!(detrend_series(&[3.7; 50]).iter().all(|&v| v == 0.0));
        let quad: Vec<f64> = (0..50).map(|i| 2.0 + 0.3 * i as f64 - 0.01 * (i * i) as f64).collect();
        let r = detrend_series(&quad);
        let scale = quad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(r.iter().all(|v| v.abs() < 1e-9 * scale));
    }

    #[test]
    fn detrend_keeps_oscillation() {
        let a = 0.05;
        let y: Vec<f64> = (0..50)
            .map(|i| {
                let t = i as f64;
                1.0 + 0.02 * t + 1e-4 * t * t + a * (2.0 * PI * t / 4.0).cos()
            })
            .collect();
        let r = detrend_series(&y);
        let rms = (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
        assert!((rms - a / 2f64.sqrt()).abs() < 0.05 * a / 2f64.sqrt(), "rms {rms}");
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        assert!(mean.abs() < 1e-9 * a);
    }

    #[test]
    fn periodogram_cosine_peak() {
        let y: Vec<f64> = (0..50).map(|i| (2.0 * PI * i as f64 / 4.0).cos()).collect();
        let s = periodogram(&y, 1.0).unwrap();
        let est = dominant_period(&s, DEFAULT_THRESHOLD);
        let p = est.period.unwrap();
        assert!((3.9..=4.1).contains(&p), "{p}");
        assert!(s.periods.windows(2).all(|w| w[0] > w[1]));
        assert!(s.periods[0] <= 50.0 + 1e-9);
        assert_abs_diff_eq!(*s.periods.last().unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn periodogram_zero_series() {
        let s = periodogram(&[0.0; 40], 1.0).unwrap();
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        let est = dominant_period(&s, DEFAULT_THRESHOLD);
        assert!(!est.ok);
        assert_eq!(est.period, None);
    }

    #[test]
    fn periodogram_too_short() {
        assert_eq!(
            periodogram(&[1.0; 15], 1.0).unwrap_err(),
            Error::SeriesTooShort { len: 15, min: 16 }
        );
    }

    #[test]
    fn parseval_total_power() {
        let y: Vec<f64> = (0..57).map(|i| ((i * 37 % 11) as f64).sin() + 0.1 * i as f64).collect();
        let s = periodogram(&y, 1.0).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((s.total_power - ss).abs() < 0.01 * ss);
    }

    #[test]
    fn energy_of_one_mev_period() {
        let period = crate::units::energy_to_period(1.0);
        let y: Vec<f64> = (0..50).map(|i| (2.0 * PI * i as f64 / period).cos()).collect();
        let est = dominant_period(&periodogram(&y, 1.0).unwrap(), DEFAULT_THRESHOLD);
        assert!(est.ok);
        assert_abs_diff_eq!(est.energy.unwrap(), 1.0, epsilon = 0.02);
    }

    #[test]
    fn moving_mean_and_plateau() {
        assert_eq!(moving_mean(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_mean(&[1.0], 2).is_empty());
        let t = trace_of((0..30).map(|i| i as f64).collect());
        // (10, 20] -> 11..=20
        assert_abs_diff_eq!(plateau_level(&t, 20.0, 10.0).unwrap(), 15.5, epsilon = 1e-12);
    }

    #[test]
    fn result_row_format() {
        let est = PeriodEstimate {
            period: None,
            energy: None,
            significance: 1.5,
            ok: false,
        };
        assert_eq!(result_row(&Window::new(400.0, 450.0), &est), "400,450,,,1.500000,false");
    }

    #[test]
    fn empty_window_list() {
        let t = trace_of(vec![0.0; 100]);
        assert!(analyze_windows(&t, &[]).is_empty());
    }
}
