//! Physical constants in the ps / meV / pA / K unit system.
//!
//! In these units ħ, h and k_B are all of order unity, which keeps rate
//! products such as `gamma * dt` well away from underflow.

/// Reduced Planck constant, meV·ps.
pub const HBAR: f64 = 0.658_211_956_9;

/// Planck constant, meV·ps.
pub const H: f64 = 4.135_667_696;

/// Boltzmann constant, meV/K.
pub const K_B: f64 = 0.086_173_3;

/// Bohr magneton, meV/T.
pub const MU_B: f64 = 0.057_883_8;

/// Elementary charge, pA·ps (1.602176634e-19 C).
pub const E_CHARGE: f64 = 1.602_176_634e5;

/// Square micrometres per square centimetre.
pub const UM2_PER_CM2: f64 = 1e8;

/// Oscillation period h/E for an energy splitting in meV.
pub fn energy_to_period(energy: f64) -> f64 {
    H / energy
}

/// Energy h/T for an oscillation period in ps.
pub fn period_to_energy(period: f64) -> f64 {
    H / period
}

/// Angular frequency E/ħ in rad/ps.
pub fn angular_frequency(energy: f64) -> f64 {
    energy / HBAR
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planck_constants_agree() {
        let rel = (H - 2.0 * std::f64::consts::PI * HBAR).abs() / H;
        assert!(rel < 1e-9, "h vs 2π·ħ relative mismatch {rel}");
    }

    #[test]
    fn energy_period_round_trip() {
        for e in [0.1, 0.5, 1.0, 2.0, 17.3] {
            let back = period_to_energy(energy_to_period(e));
            assert!((back - e).abs() / e < 1e-12);
        }
    }

    #[test]
    fn one_mev_period() {
        assert!((energy_to_period(1.0) - 4.135_667_696).abs() < 1e-12);
    }
}
