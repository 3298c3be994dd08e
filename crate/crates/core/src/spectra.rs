//! DC and magneto-conductance curves for the S/AS double peak.
//!
//! Each zero-field level becomes a Lorentzian in dI/dV versus bias; bias
//! maps to energy through a single lever arm. In a field every level splits
//! into a symmetric spin doublet, each line carrying half the weight.

use crate::params::DeviceParams;
use crate::units::MU_B;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PeakSet {
    /// Zero-field level energies relative to S, meV, ascending.
    pub centers: Vec<f64>,
    /// Lorentzian half width at half maximum shared by every line, meV.
    pub width: f64,
    pub amplitudes: Vec<f64>,
    /// meV per V.
    pub lever_arm: f64,
    pub v_offset: f64,
}

impl PeakSet {
    pub fn new(centers: Vec<f64>, width: f64, amplitudes: Vec<f64>, lever_arm: f64, v_offset: f64) -> Result<Self> {
        if centers.is_empty() || centers.len() != amplitudes.len() {
            return Err(Error::domain("need one amplitude per center, at least one peak"));
        }
        if centers.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("centers must be sorted ascending"));
        }
        if !(width > 0.0) {
            return Err(Error::domain("width must be > 0"));
        }
        if !(lever_arm > 0.0) {
            return Err(Error::domain("lever_arm must be > 0"));
        }
        Ok(Self {
            centers,
            width,
            amplitudes,
            lever_arm,
            v_offset,
        })
    }

    /// S at 0 and AS at ΔE, equal amplitudes.
    pub fn double_peak(params: &DeviceParams, width: f64) -> Result<Self> {
        if !(params.delta_e > 0.0) {
            return Err(Error::domain("delta_e must be > 0"));
        }
        Self::new(vec![0.0, params.delta_e], width, vec![1.0, 1.0], params.lever_arm, 0.0)
    }

    pub fn energy_at(&self, v: f64) -> f64 {
        (v - self.v_offset) * self.lever_arm
    }

    pub fn bias_at(&self, energy: f64) -> f64 {
        energy / self.lever_arm + self.v_offset
    }

    /// (energy, amplitude) of every line at the given Zeeman energy.
    pub fn lines(&self, zeeman: f64) -> Vec<(f64, f64)> {
        if zeeman == 0.0 {
            return self.centers.iter().copied().zip(self.amplitudes.iter().copied()).collect();
        }
        self.centers
            .iter()
            .zip(&self.amplitudes)
            .flat_map(|(&c, &a)| [(c - zeeman, 0.5 * a), (c + zeeman, 0.5 * a)])
            .collect()
    }
}

/// Lorentzian with unit peak height.
pub fn lorentzian(x: f64, center: f64, hwhm: f64) -> f64 {
    let d = (x - center) / hwhm;
    1.0 / (1.0 + d * d)
}

/// Displacement of each spin-doublet line from its zero-field level, meV:
/// g·μ_B·B, so the doublet spacing is 2·g·μ_B·B.
pub fn zeeman_shift(b_field: f64, g_factor: f64) -> f64 {
    g_factor * MU_B * b_field
}

/// dI/dV at every bias in `v_grid`, returned as (V, conductance) pairs.
pub fn didv_curve(peaks: &PeakSet, b_field: f64, g_factor: f64, v_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if v_grid.is_empty() {
        return Err(Error::domain("empty bias grid"));
    }
    if v_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("bias grid must be sorted"));
    }
    if !(b_field >= 0.0) {
        return Err(Error::domain("b_field must be >= 0"));
    }
    let lines = peaks.lines(zeeman_shift(b_field, g_factor));
    Ok(v_grid
        .iter()
        .map(|&v| {
            let e = peaks.energy_at(v);
            let g = lines.iter().map(|&(c, a)| a * lorentzian(e, c, peaks.width)).sum();
            (v, g)
        })
        .collect())
}

/// `n` evenly spaced biases from `lo` to `hi` inclusive.
pub fn bias_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(hi > lo) {
        return Err(Error::domain("bias grid needs hi > lo and at least 2 points"));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

pub fn peak_spacing_to_delta_e(v_spacing: f64, lever_arm: f64) -> Result<f64> {
    if !(v_spacing >= 0.0) || !(lever_arm > 0.0) {
        return Err(Error::domain("spacing must be >= 0 and lever_arm > 0"));
    }
    Ok(v_spacing * lever_arm)
}

/// Indices of strict interior local maxima; a flat top counts once, at its
/// first sample.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < values.len() {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < values.len() && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < values.len() && values[j + 1] < values[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

pub fn to_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("bias_V,didv_au\n");
    for (v, g) in curve {
        s.push_str(&format!("{v:.9},{g:.12}\n"));
    }
    s
}
