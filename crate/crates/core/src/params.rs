//! Device parameters, sweep grids and the temperature-dependent dephasing
//! model shared by every other module.

use std::fmt;

use crate::units::{K_B, UM2_PER_CM2};
use crate::{Error, Result};

/// Every physical and device parameter of the simulated experiment.
///
/// Units: energies meV, rates ps⁻¹, times ps, currents pA, temperature K,
/// `n_dot` in molecules/cm², `a_dot` in µm².
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceParams {
    /// S/AS splitting ΔE.
    pub delta_e: f64,
    /// S-state decay rate into the substrate.
    pub gamma_s: f64,
    /// AS-state decay rate into the substrate.
    pub gamma_as: f64,
    /// AS → S phonon relaxation rate.
    pub gamma_ph: f64,
    /// Dephasing prefactor of the power-law model.
    pub gamma_phi0: f64,
    pub dephasing_exponent: f64,
    pub temperature: f64,
    pub n_dot: f64,
    pub a_dot: f64,
    /// Amplifier broadband sensitivity.
    pub s_a: f64,
    /// Pulse repetition period.
    pub t_rep: f64,
    /// Pulse-width increment per additional injected electron.
    pub tau_step: f64,
    pub eta_inject: f64,
    pub k_max: usize,
    /// Pulse width above which the leak current sets in.
    pub leak_threshold: f64,
    /// Leak current slope, pA per ps of pulse width above threshold.
    pub leak_slope: f64,
    /// Extra dephasing rate while the pulse is held above `leak_threshold`.
    pub leak_dephasing: f64,
    /// Bias-to-energy conversion, meV/V.
    pub lever_arm: f64,
    pub g_factor: f64,
    /// Charging energy. Recorded only; the dynamics treat electrons as
    /// independent.
    pub e_charging: f64,
    /// Zero the oscillatory part of the second injection channel.
    pub suppress_channel_2_oscillation: bool,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            delta_e: 1.0,
            gamma_s: 6.5e-7,
            gamma_as: 1.35e-6,
            gamma_ph: 4.0e-5,
            gamma_phi0: 0.01,
            dephasing_exponent: 2.0,
            temperature: 4.0,
            n_dot: 5e10,
            a_dot: 2500.0,
            s_a: 1e-5,
            t_rep: 10_000.0,
            tau_step: 100.0,
            eta_inject: 0.7,
            k_max: 3,
            leak_threshold: 400.0,
            leak_slope: 0.5,
            leak_dephasing: 1.0,
            lever_arm: 20.0,
            g_factor: 2.0,
            e_charging: 9.0,
            suppress_channel_2_oscillation: false,
        }
    }
}

/// Field names in parameter-file order.
pub const FIELD_NAMES: &[&str] = &[
    "delta_e",
    "gamma_s",
    "gamma_as",
    "gamma_ph",
    "gamma_phi0",
    "dephasing_exponent",
    "temperature",
    "n_dot",
    "a_dot",
    "s_a",
    "t_rep",
    "tau_step",
    "eta_inject",
    "k_max",
    "leak_threshold",
    "leak_slope",
    "leak_dephasing",
    "lever_arm",
    "g_factor",
    "e_charging",
    "suppress_channel_2_oscillation",
];

impl DeviceParams {
    /// Number of molecules inside the active injection area.
    pub fn molecule_count(&self) -> f64 {
        self.n_dot * self.a_dot / UM2_PER_CM2
    }

    /// Reads a real-valued field by name. `k_max` is returned as a float;
    /// the boolean flag is not addressable here.
    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "delta_e" => self.delta_e,
            "gamma_s" => self.gamma_s,
            "gamma_as" => self.gamma_as,
            "gamma_ph" => self.gamma_ph,
            "gamma_phi0" => self.gamma_phi0,
            "dephasing_exponent" => self.dephasing_exponent,
            "temperature" => self.temperature,
            "n_dot" => self.n_dot,
            "a_dot" => self.a_dot,
            "s_a" => self.s_a,
            "t_rep" => self.t_rep,
            "tau_step" => self.tau_step,
            "eta_inject" => self.eta_inject,
            "k_max" => self.k_max as f64,
            "leak_threshold" => self.leak_threshold,
            "leak_slope" => self.leak_slope,
            "leak_dephasing" => self.leak_dephasing,
            "lever_arm" => self.lever_arm,
            "g_factor" => self.g_factor,
            "e_charging" => self.e_charging,
            _ => return None,
        })
    }

    /// Writes a real-valued field by name; `false` if the name is unknown
    /// or not real-valued.
    pub fn set_f64(&mut self, key: &str, value: f64) -> bool {
        let slot = match key {
            "delta_e" => &mut self.delta_e,
            "gamma_s" => &mut self.gamma_s,
            "gamma_as" => &mut self.gamma_as,
            "gamma_ph" => &mut self.gamma_ph,
            "gamma_phi0" => &mut self.gamma_phi0,
            "dephasing_exponent" => &mut self.dephasing_exponent,
            "temperature" => &mut self.temperature,
            "n_dot" => &mut self.n_dot,
            "a_dot" => &mut self.a_dot,
            "s_a" => &mut self.s_a,
            "t_rep" => &mut self.t_rep,
            "tau_step" => &mut self.tau_step,
            "eta_inject" => &mut self.eta_inject,
            "leak_threshold" => &mut self.leak_threshold,
            "leak_slope" => &mut self.leak_slope,
            "leak_dephasing" => &mut self.leak_dephasing,
            "lever_arm" => &mut self.lever_arm,
            "g_factor" => &mut self.g_factor,
            "e_charging" => &mut self.e_charging,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// Sets any field from its textual value, as found in a parameter file.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "k_max" => {
                self.k_max = value
                    .parse()
                    .map_err(|_| format!("k_max expects a non-negative integer, got `{value}`"))?;
            }
            "suppress_channel_2_oscillation" => {
                self.suppress_channel_2_oscillation = value
                    .parse()
                    .map_err(|_| format!("{key} expects true or false, got `{value}`"))?;
            }
            _ if FIELD_NAMES.contains(&key) => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| format!("{key} expects a number, got `{value}`"))?;
                if !v.is_finite() {
                    return Err(format!("{key} must be finite"));
                }
                self.set_f64(key, v);
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        FIELD_NAMES
            .iter()
            .map(|&k| {
                let v = match k {
                    "k_max" => self.k_max.to_string(),
                    "suppress_channel_2_oscillation" => {
                        self.suppress_channel_2_oscillation.to_string()
                    }
                    _ => format!("{}", self.get(k).expect("known field")),
                };
                (k, v)
            })
            .collect()
    }

    /// Parses a parameter file on top of the defaults.
    pub fn from_param_text(text: &str) -> Result<Self> {
        let mut params = Self::default();
        params.apply_param_text(text)?;
        Ok(params)
    }

    /// Applies `key = value` lines onto `self`. `#` starts a comment; blank
    /// lines are skipped; unknown or repeated keys are errors.
    pub fn apply_param_text(&mut self, text: &str) -> Result<()> {
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, got `{body}`"),
            })?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            self.set(key, value)
                .map_err(|message| Error::Parse { line, message })?;
            seen.push(key.to_string());
        }
        Ok(())
    }

    /// Renders the parameter-file form; `from_param_text` reads it back
    /// exactly.
    pub fn to_param_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Lists every violated invariant. Empty means usable everywhere.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        if !(self.delta_e > 0.0) {
            v.push("delta_e > 0".to_string());
        }
        for (name, rate) in [
            ("gamma_s", self.gamma_s),
            ("gamma_as", self.gamma_as),
            ("gamma_ph", self.gamma_ph),
            ("gamma_phi0", self.gamma_phi0),
            ("leak_dephasing", self.leak_dephasing),
        ] {
            if !(rate >= 0.0) {
                v.push(format!("{name} >= 0"));
            }
        }
        if self.gamma_as < self.gamma_s {
            v.push("gamma_as >= gamma_s (AS decays faster than S)".to_string());
        }
        if !(self.dephasing_exponent >= 0.0) {
            v.push("dephasing_exponent >= 0".to_string());
        }
        if !(self.temperature >= 0.0) {
            v.push("temperature >= 0".to_string());
        }
        if !(self.eta_inject >= 0.0 && self.eta_inject <= 1.0) {
            v.push("0 <= eta_inject <= 1".to_string());
        }
        if !(self.tau_step > 0.0) {
            v.push("tau_step > 0".to_string());
        }
        if !(self.t_rep > 0.0) {
            v.push("t_rep > 0".to_string());
        }
        if !(self.molecule_count() >= 1.0) {
            v.push("n_dot * a_dot >= 1 molecule".to_string());
        }
        if !(self.s_a > 0.0) {
            v.push("s_a > 0".to_string());
        }
        if !(self.leak_threshold >= 0.0) {
            v.push("leak_threshold >= 0".to_string());
        }
        if !(self.leak_slope >= 0.0) {
            v.push("leak_slope >= 0".to_string());
        }
        ValidationReport { violations: v }
    }
}

/// Report-style validation result.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "parameters valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "violated: {v}")?;
        }
        Ok(())
    }
}

/// Temperature-dependent pure-dephasing rate
/// γ_φ(T) = γ_φ0 · (k_B·T / ΔE)^p.
///
/// Phenomenological: it keeps the ~4 ps oscillations alive for hundreds of
/// ps at 4 K and kills them within one period at 88 K.
pub fn dephasing_rate(params: &DeviceParams, temperature: f64) -> Result<f64> {
    if !(temperature >= 0.0) {
        return Err(Error::domain(format!(
            "temperature must be >= 0 K, got {temperature}"
        )));
    }
    if !(params.delta_e > 0.0) {
        return Err(Error::domain("delta_e must be > 0"));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let ratio = K_B * temperature / params.delta_e;
    Ok(params.gamma_phi0 * ratio.powf(params.dephasing_exponent))
}

/// Uniform pulse-width grid `dt_min, dt_min + dt_step, ..., dt_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_step: f64,
}

impl SweepSpec {
    pub fn new(dt_min: f64, dt_max: f64, dt_step: f64) -> Result<Self> {
        let spec = Self {
            dt_min,
            dt_max,
            dt_step,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dt_min >= 0.0) {
            return Err(Error::domain("dt_min must be >= 0"));
        }
        if !(self.dt_max > self.dt_min) {
            return Err(Error::domain("dt_max must exceed dt_min"));
        }
        if !(self.dt_step > 0.0) {
            return Err(Error::domain("dt_step must be > 0"));
        }
        let n = (self.dt_max - self.dt_min) / self.dt_step;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::domain(format!(
                "(dt_max - dt_min) / dt_step = {n} is not integral"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.dt_max - self.dt_min) / self.dt_step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid points, computed as `dt_min + i·dt_step` (no accumulation).
    pub fn grid(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.dt_min + i as f64 * self.dt_step)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let report = DeviceParams::default().validate();
        assert!(report.is_ok(), "{report}");
    }

    #[test]
    fn decay_ordering_violation() {
        let p = DeviceParams {
            gamma_s: 2e-6,
            gamma_as: 1e-6,
            ..Default::default()
        };
        let report = p.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].contains("gamma_as >= gamma_s"));
    }

    #[test]
    fn zero_splitting_violation() {
        let p = DeviceParams {
            delta_e: 0.0,
            ..Default::default()
        };
        assert_eq!(p.validate().violations, vec!["delta_e > 0".to_string()]);
    }

    #[test]
    fn report_lists_everything_at_once() {
        let p = DeviceParams {
            delta_e: -1.0,
            eta_inject: -0.1,
            tau_step: 0.0,
            ..Default::default()
        };
        assert_eq!(p.validate().violations.len(), 3);
    }

    #[test]
    fn dephasing_zero_temperature() {
        assert_eq!(dephasing_rate(&DeviceParams::default(), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn dephasing_hand_values() {
        // k_B·88 K = 7.583250 meV, k_B·4 K = 0.344693 meV.
        let p = DeviceParams::default();
        let hot = dephasing_rate(&p, 88.0).unwrap();
        assert!((hot - 0.01 * 7.583_250_4_f64.powi(2)).abs() < 1e-9);
        assert!((hot - 0.575).abs() < 1e-3);
        let cold = dephasing_rate(&p, 4.0).unwrap();
        assert!((cold - 1.188e-3).abs() < 1e-6);
    }

    #[test]
    fn dephasing_rejects_negative_temperature() {
        assert!(matches!(
            dephasing_rate(&DeviceParams::default(), -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn param_text_round_trip() {
        let p = DeviceParams {
            delta_e: 1.234_567_890_123,
            k_max: 5,
            suppress_channel_2_oscillation: true,
            ..Default::default()
        };
        let back = DeviceParams::from_param_text(&p.to_param_text()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn param_text_comments_and_blank_lines() {
        let text = "# header\n\ndelta_e = 1.5   # splitting\n  temperature=88\n";
        let p = DeviceParams::from_param_text(text).unwrap();
        assert_eq!(p.delta_e, 1.5);
        assert_eq!(p.temperature, 88.0);
        assert_eq!(p.gamma_ph, DeviceParams::default().gamma_ph);
    }

    #[test]
    fn param_text_unknown_key_reports_line() {
        let err = DeviceParams::from_param_text("delta_e = 1\nbogus = 3\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                message: "unknown key `bogus`".into()
            }
        );
    }

    #[test]
    fn param_text_bad_number_and_missing_equals() {
        assert!(matches!(
            DeviceParams::from_param_text("delta_e = one"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            DeviceParams::from_param_text("\n\ndelta_e 1"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            DeviceParams::from_param_text("k_max = 2.5"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn molecule_count_converts_area() {
        // 5e10 cm⁻² × 2500 µm² (= 2.5e-5 cm²)
        let n = DeviceParams::default().molecule_count();
        assert!((n - 1.25e6).abs() < 1e-6);
    }

    #[test]
    fn sweep_spec_grid() {
        let s = SweepSpec::new(0.0, 10.0, 1.0).unwrap();
        assert_eq!(s.len(), 11);
        assert_eq!(s.grid()[10], 10.0);
        assert!(SweepSpec::new(0.0, 10.0, 3.0).is_err());
        assert!(SweepSpec::new(5.0, 5.0, 1.0).is_err());
        assert!(SweepSpec::new(-1.0, 5.0, 1.0).is_err());
    }
}
