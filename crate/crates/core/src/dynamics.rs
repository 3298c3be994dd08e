//! Coherent evolution of the two-level S/AS density matrix during the
//! injection pulse, with pure dephasing in the energy eigenbasis.
//!
//! Storage basis is {S, AS} with H = diag(−ΔE/2, +ΔE/2). The localized
//! states are |dot1⟩ = (|S⟩ + |AS⟩)/√2 and |dot2⟩ = (|S⟩ − |AS⟩)/√2.

use num_complex::Complex64 as C64;

use crate::units::{H, HBAR};
use crate::{Error, Result};

pub type Matrix2 = [[C64; 2]; 2];

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    /// Density matrix in the {S, AS} basis.
    pub rho: Matrix2,
    /// Probability already delivered to the substrate from S.
    pub collected_s: f64,
    /// Probability already delivered to the substrate from AS.
    pub collected_as: f64,
}

impl QubitState {
    pub fn from_rho(rho: Matrix2) -> Self {
        Self {
            rho,
            collected_s: 0.0,
            collected_as: 0.0,
        }
    }

    pub fn p_s(&self) -> f64 {
        self.rho[0][0].re
    }

    pub fn p_as(&self) -> f64 {
        self.rho[1][1].re
    }

    /// S/AS coherence ρ_{S,AS}.
    pub fn coherence(&self) -> C64 {
        self.rho[0][1]
    }

    pub fn trace(&self) -> f64 {
        self.rho[0][0].re + self.rho[1][1].re
    }

    /// trace(ρ) plus everything already collected.
    pub fn total_occupancy(&self) -> f64 {
        self.trace() + self.collected_s + self.collected_as
    }

    /// trace(ρ²).
    pub fn purity(&self) -> f64 {
        let r = &self.rho;
        (r[0][0] * r[0][0] + r[0][1] * r[1][0] + r[1][0] * r[0][1] + r[1][1] * r[1][1]).re
    }

    /// Largest element-wise deviation from conjugate symmetry.
    pub fn hermiticity_error(&self) -> f64 {
        let r = &self.rho;
        let d = [
            r[0][0].im.abs(),
            r[1][1].im.abs(),
            (r[0][1] - r[1][0].conj()).norm(),
        ];
        d.into_iter().fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part of ρ, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let a = self.rho[0][0].re;
        let d = self.rho[1][1].re;
        let b = 0.5 * (self.rho[0][1] + self.rho[1][0].conj());
        let mean = 0.5 * (a + d);
        let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        [mean - radius, mean + radius]
    }
}

/// State prepared by injection: the electron sits in dot 1, an equal
/// superposition of S and AS.
pub fn injected_state() -> QubitState {
    let half = C64::new(0.5, 0.0);
    QubitState::from_rho([[half, half], [half, half]])
}

/// Parameters of the intra-pulse generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionSpec {
    pub delta_e: f64,
    pub gamma_phi: f64,
    /// Maximum RK4 step, ps.
    pub dt_integrator: f64,
}

impl EvolutionSpec {
    /// Largest default step, ps.
    pub const DEFAULT_STEP: f64 = 0.01;
    /// Default resolution for large splittings, steps per h/ΔE.
    pub const STEPS_PER_PERIOD: f64 = 400.0;

    /// Step is [`Self::DEFAULT_STEP`], or h/ΔE / [`Self::STEPS_PER_PERIOD`]
    /// when that is finer (ΔE above about 1 meV).
    pub fn new(delta_e: f64, gamma_phi: f64) -> Self {
        let resolved = if delta_e > 0.0 {
            H / delta_e / Self::STEPS_PER_PERIOD
        } else {
            Self::DEFAULT_STEP
        };
        Self {
            delta_e,
            gamma_phi,
            dt_integrator: Self::DEFAULT_STEP.min(resolved),
        }
    }

    pub fn with_step(mut self, dt_integrator: f64) -> Self {
        self.dt_integrator = dt_integrator;
        self
    }

    /// Requires ≥ 20 steps per oscillation period h/ΔE.
    pub fn check(&self) -> Result<()> {
        if !(self.delta_e > 0.0) {
            return Err(Error::domain("delta_e must be > 0"));
        }
        if !(self.gamma_phi >= 0.0) {
            return Err(Error::domain("gamma_phi must be >= 0"));
        }
        let max_step = 0.05 * H / self.delta_e;
        if !(self.dt_integrator > 0.0 && self.dt_integrator <= max_step) {
            return Err(Error::domain(format!(
                "dt_integrator must lie in (0, {max_step}] ps, got {}",
                self.dt_integrator
            )));
        }
        Ok(())
    }

    /// dρ/dt = −(i/ħ)[H, ρ] + γ_φ(σ_z ρ σ_z − ρ).
    fn generator(&self, rho: &Matrix2) -> Matrix2 {
        let w = self.delta_e / HBAR;
        // −(i/ħ)[H, ρ]_{01} = −(i/ħ)(H00 − H11) ρ01 = +i ω ρ01
        let rot = C64::new(0.0, w);
        let damp = -2.0 * self.gamma_phi;
        [
            [ZERO, rot * rho[0][1] + damp * rho[0][1]],
            [-rot * rho[1][0] + damp * rho[1][0], ZERO],
        ]
    }

    fn rk4_step(&self, rho: &Matrix2, h: f64) -> Matrix2 {
        let k1 = self.generator(rho);
        let k2 = self.generator(&axpy(rho, 0.5 * h, &k1));
        let k3 = self.generator(&axpy(rho, 0.5 * h, &k2));
        let k4 = self.generator(&axpy(rho, h, &k3));
        let mut out = *rho;
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += (h / 6.0) * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
        out
    }

    /// Step count and uniform step size covering `duration`.
    fn steps_for(&self, duration: f64) -> (usize, f64) {
        if duration == 0.0 {
            return (0, 0.0);
        }
        let n = (duration / self.dt_integrator).ceil().max(1.0) as usize;
        (n, duration / n as f64)
    }
}

fn axpy(x: &Matrix2, a: f64, y: &Matrix2) -> Matrix2 {
    let mut out = *x;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += a * y[i][j];
        }
    }
    out
}

/// Advances `state` by `duration` ps with fixed-step RK4. The step is the
/// largest value ≤ `dt_integrator` that divides `duration` evenly.
/// Substrate decay is not active during the pulse.
pub fn evolve_pulse(state: &QubitState, spec: &EvolutionSpec, duration: f64) -> Result<QubitState> {
    if !(duration >= 0.0) {
        return Err(Error::domain(format!("duration must be >= 0, got {duration}")));
    }
    spec.check()?;
    let (n, h) = spec.steps_for(duration);
    let mut rho = state.rho;
    for _ in 0..n {
        rho = spec.rk4_step(&rho, h);
    }
    Ok(QubitState { rho, ..*state })
}

/// Sampled evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<QubitState>,
}

impl Trajectory {
    /// Debug dump, header `t_ps,p_s,p_as,re_coh,im_coh`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_ps,p_s,p_as,re_coh,im_coh\n");
        for (t, s) in self.times.iter().zip(&self.states) {
            let c = s.coherence();
            out.push_str(&format!(
                "{:.6},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                t,
                s.p_s(),
                s.p_as(),
                c.re,
                c.im
            ));
        }
        out
    }
}

/// Evolves `state` and records it at each of `times` (ascending, ≥ 0),
/// integrating segment by segment between consecutive sample times.
pub fn evolve_sampled(state: &QubitState, spec: &EvolutionSpec, times: &[f64]) -> Result<Trajectory> {
    spec.check()?;
    let mut current = *state;
    let mut t_prev = 0.0;
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= t_prev) {
            return Err(Error::domain("sample times must be ascending and >= 0"));
        }
        current = evolve_pulse(&current, spec, t - t_prev)?;
        states.push(current);
        t_prev = t;
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}

/// Every integrator sample over `[0, duration]`, including both ends.
pub fn integrator_trajectory(state: &QubitState, spec: &EvolutionSpec, duration: f64) -> Result<Trajectory> {
    if !(duration >= 0.0) {
        return Err(Error::domain(format!("duration must be >= 0, got {duration}")));
    }
    spec.check()?;
    let (n, h) = spec.steps_for(duration);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut rho = state.rho;
    times.push(0.0);
    states.push(*state);
    for i in 1..=n {
        rho = spec.rk4_step(&rho, h);
        times.push(i as f64 * h);
        states.push(QubitState { rho, ..*state });
    }
    Ok(Trajectory { times, states })
}

/// Exact pure dephasing without rotation: off-diagonals scale by
/// e^(−2·rate·duration). Commutes with [`evolve_pulse`].
pub fn dephase(state: &QubitState, rate: f64, duration: f64) -> Result<QubitState> {
    if !(rate >= 0.0 && duration >= 0.0) {
        return Err(Error::domain("rate and duration must be >= 0"));
    }
    let f = (-2.0 * rate * duration).exp();
    let mut out = *state;
    out.rho[0][1] *= f;
    out.rho[1][0] *= f;
    Ok(out)
}

/// Population ⟨dot_i|ρ|dot_i⟩ of dot 1 or dot 2.
pub fn localized_population(state: &QubitState, which_dot: usize) -> Result<f64> {
    let r = &state.rho;
    let diag = 0.5 * (r[0][0].re + r[1][1].re);
    let cross = 0.5 * (r[0][1].re + r[1][0].re);
    match which_dot {
        1 => Ok(diag + cross),
        2 => Ok(diag - cross),
        _ => Err(Error::Index {
            index: which_dot,
            allowed: "1 or 2",
        }),
    }
}

/// Closed form ½(1 + e^(−2γ_φ t)·cos(ΔE·t/ħ)) for dot-1 population after
/// evolving [`injected_state`] for `t`.
pub fn analytic_localized_population(t: f64, delta_e: f64, gamma_phi: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("t must be >= 0, got {t}")));
    }
    Ok(0.5 * (1.0 + (-2.0 * gamma_phi * t).exp() * (delta_e * t / HBAR).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const HALF_PERIOD: f64 = 2.067_833_848;
    const QUARTER_PERIOD: f64 = 1.033_916_924;
    const PERIOD: f64 = 4.135_667_696;

    #[test]
    fn injected_state_is_pure_dot1() {
        let s = injected_state();
        assert_eq!(s.p_s(), 0.5);
        assert_eq!(s.p_as(), 0.5);
        assert_eq!(s.coherence(), C64::new(0.5, 0.0));
        assert_eq!(localized_population(&s, 1).unwrap(), 1.0);
        assert_eq!(localized_population(&s, 2).unwrap(), 0.0);
        assert_abs_diff_eq!(s.purity(), 1.0, epsilon = 1e-15);
        assert_eq!(s.collected_s + s.collected_as, 0.0);
    }

    #[test]
    fn half_and_full_period() {
        let spec = EvolutionSpec::new(1.0, 0.0);
        let s = evolve_pulse(&injected_state(), &spec, HALF_PERIOD).unwrap();
        assert_abs_diff_eq!(localized_population(&s, 1).unwrap(), 0.0, epsilon = 1e-9);
        let s = evolve_pulse(&injected_state(), &spec, PERIOD).unwrap();
        assert_abs_diff_eq!(localized_population(&s, 1).unwrap(), 1.0, epsilon = 1e-9);
        let s = evolve_pulse(&injected_state(), &spec, QUARTER_PERIOD).unwrap();
        assert_abs_diff_eq!(localized_population(&s, 1).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn zero_duration_is_identity() {
        let mut s = injected_state();
        s.rho[0][1] = C64::new(0.2, 0.1);
        s.rho[1][0] = C64::new(0.2, -0.1);
        s.collected_s = 0.3;
        let spec = EvolutionSpec::new(1.0, 0.2);
        assert_eq!(evolve_pulse(&s, &spec, 0.0).unwrap(), s);
    }

    #[test]
    fn negative_duration_rejected() {
        let spec = EvolutionSpec::new(1.0, 0.0);
        assert!(matches!(evolve_pulse(&injected_state(), &spec, -1.0), Err(Error::Domain(_))));
        assert!(analytic_localized_population(-0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn step_bound_enforced() {
        let spec = EvolutionSpec::new(1.0, 0.0).with_step(0.3);
        assert!(evolve_pulse(&injected_state(), &spec, 1.0).is_err());
        assert!(EvolutionSpec::new(1.0, 0.0).with_step(0.2).check().is_ok());
    }

    #[test]
    fn fully_dephased_is_half() {
        let s = QubitState::from_rho([[C64::new(0.5, 0.0), ZERO], [ZERO, C64::new(0.5, 0.0)]]);
        assert_eq!(localized_population(&s, 1).unwrap(), 0.5);
    }

    #[test]
    fn bad_dot_index() {
        assert!(matches!(
            localized_population(&injected_state(), 3),
            Err(Error::Index { index: 3, .. })
        ));
        assert!(localized_population(&injected_state(), 0).is_err());
    }

    #[test]
    fn analytic_hand_values() {
        assert_eq!(analytic_localized_population(0.0, 1.0, 0.3).unwrap(), 1.0);
        assert_abs_diff_eq!(analytic_localized_population(PERIOD, 1.0, 0.0).unwrap(), 1.0, epsilon = 1e-12);
        // ½(1 + e^(−0.827134)) with 2·0.1·4.13567 = 0.827134
        let v = analytic_localized_population(PERIOD, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(v, 0.718_66, epsilon = 1e-5);
    }

    #[test]
    fn coherence_decays_at_twice_gamma() {
        let spec = EvolutionSpec::new(1.3, 0.05);
        let t = 7.5;
        let s = evolve_pulse(&injected_state(), &spec, t).unwrap();
        assert_abs_diff_eq!(s.coherence().norm(), 0.5 * (-2.0 * 0.05 * t).exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(s.p_s(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dephase_commutes_with_evolution() {
        let spec = EvolutionSpec::new(1.0, 0.01);
        let a = dephase(&evolve_pulse(&injected_state(), &spec, 5.0).unwrap(), 0.3, 2.0).unwrap();
        let b = evolve_pulse(&dephase(&injected_state(), 0.3, 2.0).unwrap(), &spec, 5.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!((a.rho[i][j] - b.rho[i][j]).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn sampled_matches_direct() {
        let spec = EvolutionSpec::new(1.0, 0.02);
        let traj = evolve_sampled(&injected_state(), &spec, &[0.0, 1.0, 2.5, 10.0]).unwrap();
        assert_eq!(traj.states.len(), 4);
        let direct = evolve_pulse(&injected_state(), &spec, 10.0).unwrap();
        let diff = (traj.states[3].coherence() - direct.coherence()).norm();
        assert!(diff < 1e-10, "{diff}");
        assert!(evolve_sampled(&injected_state(), &spec, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn integrator_trajectory_csv() {
        let spec = EvolutionSpec::new(1.0, 0.0).with_step(0.1);
        let traj = integrator_trajectory(&injected_state(), &spec, 1.0).unwrap();
        assert_eq!(traj.times.len(), 11);
        let csv = traj.to_csv();
        assert!(csv.starts_with("t_ps,p_s,p_as,re_coh,im_coh\n"));
        assert_eq!(csv.lines().count(), 12);
    }
}
