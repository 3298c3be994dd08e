//! Per-pulse charge accounting: converts a measured DC substrate current
//! into the current injected into a single molecule during one pulse, then
//! into electrons per pulse, and bounds the decay time from a DC current.

use crate::units::{E_CHARGE, UM2_PER_CM2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountingInputs {
    /// Measured substrate current, pA.
    pub i_sub: f64,
    /// Pulse width, ps.
    pub dt: f64,
    /// Repetition period, ps.
    pub t_rep: f64,
    /// Lower bound on the decay time, ps.
    pub tau_decay_min: f64,
    /// Areal molecule density, cm⁻².
    pub n_dot: f64,
    /// Active area, µm².
    pub a_dot: f64,
    /// Amplifier broadband sensitivity.
    pub s_a: f64,
}

impl AccountingInputs {
    fn check(&self) -> Result<()> {
        let fields = [
            ("i_sub", self.i_sub),
            ("dt", self.dt),
            ("t_rep", self.t_rep),
            ("tau_decay_min", self.tau_decay_min),
            ("n_dot", self.n_dot),
            ("a_dot", self.a_dot),
            ("s_a", self.s_a),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.dt < self.t_rep) {
            return Err(Error::domain("dt must be below t_rep"));
        }
        Ok(())
    }
}

/// `a_dot` in µm² converted to cm².
pub fn area_cm2(a_dot_um2: f64) -> f64 {
    a_dot_um2 / UM2_PER_CM2
}

/// Current injected into one molecule during a single pulse, pA:
///
/// I_sub ÷ (Δt/T_R) ÷ (T_R/τ_min) ÷ (N_dot·A_dot·S_A)
///
/// The first factor undoes the pulse duty cycle, the second the fraction of
/// a decay time that fits in one repetition period, the third the number
/// of molecules and the amplifier sensitivity.
pub fn i_pulse_qd(inputs: &AccountingInputs) -> Result<f64> {
    inputs.check()?;
    let duty = inputs.dt / inputs.t_rep;
    let decay_fraction = inputs.t_rep / inputs.tau_decay_min;
    let molecules = inputs.n_dot * area_cm2(inputs.a_dot) * inputs.s_a;
    Ok(inputs.i_sub / duty / decay_fraction / molecules)
}

/// Electrons carried by `i_pulse` flowing for `dt`.
pub fn electrons_per_pulse(i_pulse: f64, dt: f64) -> Result<f64> {
    if !(i_pulse > 0.0 && dt > 0.0) {
        return Err(Error::domain("i_pulse and dt must be > 0"));
    }
    Ok(i_pulse * dt / E_CHARGE)
}

/// DC current per molecule, pA.
pub fn current_per_molecule(i_dc: f64, n_dot: f64, a_dot: f64) -> Result<f64> {
    let molecules = n_dot * area_cm2(a_dot);
    if !(i_dc > 0.0 && molecules > 0.0) {
        return Err(Error::domain("i_dc, n_dot and a_dot must be > 0"));
    }
    Ok(i_dc / molecules)
}

/// Lower bound on the decay time: one electron charge per per-molecule
/// DC current, ps.
pub fn tau_decay_min(i_dc: f64, n_dot: f64, a_dot: f64) -> Result<f64> {
    Ok(E_CHARGE / current_per_molecule(i_dc, n_dot, a_dot)?)
}
