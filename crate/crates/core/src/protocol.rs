//! Pulse-train experiment engine.
//!
//! One repetition period consists of:
//! 1. injection: an empty channel receives an electron with probability
//!    `eta_inject`; an occupied channel is blocked;
//! 2. coherent S/AS evolution for the pulse width (see [`crate::dynamics`]);
//! 3. projection onto the slow (S) and fast (AS) decay channels;
//! 4. classical decay to the substrate and AS → S phonon reset until the
//!    next pulse.
//!
//! The long-run average current follows from the fixed point of this
//! per-cycle map. Wider pulses admit more electrons, one per `tau_step`,
//! each modelled as an independent channel that starts evolving later.

use crate::dynamics::{self, EvolutionSpec, QubitState};
use crate::exec::{self, ExecMode};
use crate::params::{dephasing_rate, DeviceParams, SweepSpec, FIELD_NAMES};
use crate::units::E_CHARGE;
use crate::{Error, Result};

/// Classical occupancy of one injection channel between pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelOccupancy {
    pub p_empty: f64,
    pub p_s: f64,
    pub p_as: f64,
}

impl ChannelOccupancy {
    pub const EMPTY: Self = Self {
        p_empty: 1.0,
        p_s: 0.0,
        p_as: 0.0,
    };

    pub fn new(p_empty: f64, p_s: f64, p_as: f64) -> Self {
        Self { p_empty, p_s, p_as }
    }

    pub fn total(&self) -> f64 {
        self.p_empty + self.p_s + self.p_as
    }

    pub fn occupied(&self) -> f64 {
        self.p_s + self.p_as
    }

    fn as_array(&self) -> [f64; 3] {
        [self.p_empty, self.p_s, self.p_as]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    fn max_diff(&self, other: &Self) -> f64 {
        (self.p_empty - other.p_empty)
            .abs()
            .max((self.p_s - other.p_s).abs())
            .max((self.p_as - other.p_as).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleResult {
    /// Expected number of electrons delivered to the substrate.
    pub collected_charge: f64,
    /// Occupancy at the end of the interval; collected electrons count as
    /// empty again.
    pub end_occupancy: ChannelOccupancy,
}

/// Slow/fast channel weights after a coherent evolution of `duration` ps
/// from the injected state, at the configured temperature.
///
/// The slow (S) weight is the dot-1 population at the end of the pulse, so
/// Δt = 0 maps entirely onto the slow channel.
pub fn intra_pulse(params: &DeviceParams, duration: f64) -> Result<(f64, f64)> {
    let gamma_phi = dephasing_rate(params, params.temperature)?;
    let spec = EvolutionSpec::new(params.delta_e, gamma_phi);
    let state = dynamics::evolve_pulse(&dynamics::injected_state(), &spec, duration)?;
    channel_split(&state)
}

fn channel_split(state: &QubitState) -> Result<(f64, f64)> {
    let trace = state.trace();
    let slow = (dynamics::localized_population(state, 1)? / trace).clamp(0.0, 1.0);
    Ok((slow, 1.0 - slow))
}

/// (e^(−a t) − e^(−b t)) / (b − a), with the a = b limit t·e^(−a t).
fn exp_difference(a: f64, b: f64, t: f64) -> f64 {
    let d = b - a;
    let x = d * t;
    if x.abs() < 1e-8 {
        (-a * t).exp() * t * (1.0 - 0.5 * x)
    } else {
        (-a * t).exp() * -(-x).exp_m1() / d
    }
}

/// Classical inter-pulse relaxation over `duration` ps.
///
/// Rate system: S → substrate at `gamma_s`, AS → substrate at `gamma_as`,
/// AS → S at `gamma_ph`. The system is triangular, so its matrix
/// exponential is written in closed form.
pub fn inter_pulse(occ: &ChannelOccupancy, params: &DeviceParams, duration: f64) -> Result<CycleResult> {
    if !(duration >= 0.0) {
        return Err(Error::domain(format!("duration must be >= 0, got {duration}")));
    }
    let a = params.gamma_s;
    let b = params.gamma_as + params.gamma_ph;
    let t = duration;
    let s_survive = (-a * t).exp();
    let as_survive = (-b * t).exp();
    let feed = params.gamma_ph * exp_difference(a, b, t);

    let p_as = occ.p_as * as_survive;
    let p_s = occ.p_s * s_survive + occ.p_as * feed;
    let collected = occ.p_s * -(-a * t).exp_m1() + occ.p_as * (-(-b * t).exp_m1() - feed);
    Ok(CycleResult {
        collected_charge: collected,
        end_occupancy: ChannelOccupancy::new(occ.p_empty + collected, p_s, p_as),
    })
}

/// Injection step: the empty fraction is filled with probability
/// `eta_inject`, split between slow and fast channels.
fn refill(occ: &ChannelOccupancy, eta: f64, split: (f64, f64)) -> ChannelOccupancy {
    let injected = occ.p_empty * eta;
    ChannelOccupancy::new(
        occ.p_empty - injected,
        occ.p_s + injected * split.0,
        occ.p_as + injected * split.1,
    )
}

/// One full repetition period for a channel.
pub fn cycle_map(
    occ: &ChannelOccupancy,
    params: &DeviceParams,
    split: (f64, f64),
    inter_duration: f64,
) -> Result<CycleResult> {
    inter_pulse(&refill(occ, params.eta_inject, split), params, inter_duration)
}

const FIXED_POINT_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 1_000_000;

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, x: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, row) in m.iter().enumerate() {
        out[i] = row[0] * x[0] + row[1] * x[1] + row[2] * x[2];
    }
    out
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Steady-state cycle for a given channel split, starting the iteration
/// from `start`.
///
/// The cycle map is linear in the occupancy, so it is tabulated once as a
/// 3×3 transition matrix. Each iteration applies the current composite map
/// and then squares it, so iteration n has advanced 2ⁿ − 1 cycles.
pub fn steady_cycle_from(
    params: &DeviceParams,
    split: (f64, f64),
    inter_duration: f64,
    start: ChannelOccupancy,
) -> Result<CycleResult> {
    let basis = [
        ChannelOccupancy::new(1.0, 0.0, 0.0),
        ChannelOccupancy::new(0.0, 1.0, 0.0),
        ChannelOccupancy::new(0.0, 0.0, 1.0),
    ];
    let mut m: Mat3 = [[0.0; 3]; 3];
    for (j, e) in basis.iter().enumerate() {
        let col = cycle_map(e, params, split, inter_duration)?.end_occupancy.as_array();
        for i in 0..3 {
            m[i][j] = col[i];
        }
    }

    let mut x = start;
    for _ in 0..MAX_ITERATIONS {
        let next = ChannelOccupancy::from_array(mat_vec(&m, x.as_array()));
        let moved = next.max_diff(&x);
        x = next;
        if moved < FIXED_POINT_TOL {
            return cycle_map(&x, params, split, inter_duration);
        }
        if !moved.is_finite() {
            break;
        }
        m = mat_mul(&m, &m);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        what: "steady-state cycle occupancy".into(),
    })
}

/// Long-run per-cycle result for pulse width `dt` (single channel).
pub fn steady_cycle(params: &DeviceParams, dt: f64) -> Result<CycleResult> {
    check_pulse_width(params, dt)?;
    let split = intra_pulse(params, dt)?;
    steady_cycle_from(params, split, params.t_rep - dt, ChannelOccupancy::EMPTY)
}

fn check_pulse_width(params: &DeviceParams, dt: f64) -> Result<()> {
    if !(dt >= 0.0 && dt < params.t_rep) {
        return Err(Error::domain(format!(
            "pulse width must satisfy 0 <= dt < t_rep = {}, got {dt}",
            params.t_rep
        )));
    }
    Ok(())
}

/// Injection channels admitted by a pulse of width `dt`:
/// `(channel index, evolution duration)`, 1-based. Channel j starts
/// `(j−1)·tau_step` after the pulse edge.
pub fn staircase_channels(dt: f64, params: &DeviceParams) -> Vec<(usize, f64)> {
    if !(dt > 0.0) {
        return Vec::new();
    }
    let k = ((dt / params.tau_step).ceil() as usize).min(params.k_max);
    (1..=k)
        .map(|j| (j, dt - (j - 1) as f64 * params.tau_step))
        .collect()
}

/// Pulse-width-independent factor converting collected electrons per
/// cycle into measured substrate current, pA.
pub fn current_per_electron_per_cycle(params: &DeviceParams) -> f64 {
    E_CHARGE / params.t_rep * params.molecule_count() * params.s_a
}

/// Linear leak current above `leak_threshold`.
pub fn leak_current(params: &DeviceParams, dt: f64) -> f64 {
    (dt - params.leak_threshold).max(0.0) * params.leak_slope
}

/// Substrate current for pulse width `dt`, pA.
pub fn i_sub_point(params: &DeviceParams, dt: f64) -> Result<f64> {
    check_pulse_width(params, dt)?;
    let gamma_phi = dephasing_rate(params, params.temperature)?;
    let spec = EvolutionSpec::new(params.delta_e, gamma_phi);
    i_sub_with(params, dt, |d| {
        dynamics::evolve_pulse(&dynamics::injected_state(), &spec, d)
    })
}

/// Current at `dt` given the end-of-pulse state for each evolution
/// duration. The leak dephasing acts on the final `dt − leak_threshold`
/// ps of every channel's evolution.
fn i_sub_with<F>(params: &DeviceParams, dt: f64, state_at: F) -> Result<f64>
where
    F: Fn(f64) -> Result<QubitState>,
{
    let above = (dt - params.leak_threshold).max(0.0);
    let mut collected = 0.0;
    for (j, duration) in staircase_channels(dt, params) {
        let mut state = state_at(duration)?;
        if above > 0.0 {
            state = dynamics::dephase(&state, params.leak_dephasing, above.min(duration))?;
        }
        if j == 2 && params.suppress_channel_2_oscillation {
            state.rho[0][1] = 0.0.into();
            state.rho[1][0] = 0.0.into();
        }
        let split = channel_split(&state)?;
        let cycle = steady_cycle_from(params, split, params.t_rep - dt, ChannelOccupancy::EMPTY)?;
        collected += cycle.collected_charge;
    }
    let current = collected * current_per_electron_per_cycle(params) + leak_current(params, dt);
    if !current.is_finite() {
        return Err(Error::domain(format!("non-finite current at dt = {dt}")));
    }
    Ok(current.max(0.0))
}

/// Substrate current versus pulse width.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrace {
    pub dt_ps: Vec<f64>,
    pub i_sub_pa: Vec<f64>,
    pub params_snapshot: DeviceParams,
}

pub const TRACE_HEADER: &str = "delta_t_ps,i_sub_pA";
pub const DERIVATIVE_COLUMN: &str = "didt_pA_per_ps";

impl PulseTrace {
    pub fn len(&self) -> usize {
        self.dt_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt_ps.is_empty()
    }

    /// Grid spacing (0 for traces shorter than two points).
    pub fn step(&self) -> f64 {
        if self.dt_ps.len() < 2 {
            return 0.0;
        }
        (self.dt_ps[self.dt_ps.len() - 1] - self.dt_ps[0]) / (self.dt_ps.len() - 1) as f64
    }

    /// dI/dΔt by central differences (one-sided at the ends).
    pub fn derivative(&self) -> Vec<f64> {
        let n = self.len();
        let y = &self.i_sub_pa;
        let x = &self.dt_ps;
        (0..n)
            .map(|i| match (i, n) {
                (_, 0 | 1) => 0.0,
                (0, _) => (y[1] - y[0]) / (x[1] - x[0]),
                (i, n) if i == n - 1 => (y[i] - y[i - 1]) / (x[i] - x[i - 1]),
                (i, _) => (y[i + 1] - y[i - 1]) / (x[i + 1] - x[i - 1]),
            })
            .collect()
    }

    /// CSV with the parameter snapshot as `# key = value` comment lines.
    pub fn to_csv(&self, with_derivative: bool) -> String {
        let mut out = String::new();
        for (k, v) in self.params_snapshot.entries() {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out.push_str(TRACE_HEADER);
        if with_derivative {
            out.push(',');
            out.push_str(DERIVATIVE_COLUMN);
        }
        out.push('\n');
        let deriv = if with_derivative { self.derivative() } else { Vec::new() };
        for (i, (dt, current)) in self.dt_ps.iter().zip(&self.i_sub_pa).enumerate() {
            out.push_str(&format!("{dt:.6},{current:.15}"));
            if let Some(d) = deriv.get(i) {
                out.push_str(&format!(",{d:.15}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`PulseTrace::to_csv`]. Comment lines
    /// of the form `# key = value` with a known key rebuild the snapshot;
    /// other comments are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut params = DeviceParams::default();
        let mut header_seen = false;
        let mut dt = Vec::new();
        let mut current = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.trim();
            if body.is_empty() {
                continue;
            }
            if let Some(comment) = body.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    let k = k.trim();
                    if FIELD_NAMES.contains(&k) {
                        params
                            .set(k, v)
                            .map_err(|message| Error::Parse { line, message })?;
                    }
                }
                continue;
            }
            if !header_seen {
                if !body.starts_with(TRACE_HEADER) {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected header `{TRACE_HEADER}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            let mut cols = body.split(',');
            let mut next = |name: &str| -> Result<f64> {
                cols.next()
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: format!("missing or malformed {name}"),
                    })
            };
            dt.push(next("delta_t_ps")?);
            current.push(next("i_sub_pA")?);
        }
        if !header_seen {
            return Err(Error::Parse {
                line: text.lines().count().max(1),
                message: "no CSV header found".into(),
            });
        }
        let trace = PulseTrace {
            dt_ps: dt,
            i_sub_pa: current,
            params_snapshot: params,
        };
        trace.check_uniform()?;
        Ok(trace)
    }

    fn check_uniform(&self) -> Result<()> {
        let step = self.step();
        for (i, w) in self.dt_ps.windows(2).enumerate() {
            let d = w[1] - w[0];
            if !(d > 0.0) || (d - step).abs() > 1e-6 * step.max(1.0) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: "delta_t_ps grid is not uniform and increasing".into(),
                });
            }
        }
        Ok(())
    }
}

/// [`sweep_with`] using the parallel path when available.
pub fn sweep(params: &DeviceParams, spec: &SweepSpec) -> Result<PulseTrace> {
    sweep_with(params, spec, ExecMode::Parallel)
}

/// Evaluates [`i_sub_point`] on every grid pulse width.
///
/// The intra-pulse evolution is integrated once, sampled at every distinct
/// channel duration the grid needs; grid points are then evaluated
/// independently and assembled in grid order, so `mode` does not affect
/// the output.
pub fn sweep_with(params: &DeviceParams, spec: &SweepSpec, mode: ExecMode) -> Result<PulseTrace> {
    spec.check()?;
    if !(spec.dt_max < params.t_rep) {
        return Err(Error::domain(format!(
            "dt_max = {} must be below t_rep = {}",
            spec.dt_max, params.t_rep
        )));
    }
    let report = params.validate();
    if !report.is_ok() {
        return Err(Error::Invalid(report.violations.join("; ")));
    }
    let grid = spec.grid();

    let mut durations: Vec<f64> = grid
        .iter()
        .flat_map(|&dt| staircase_channels(dt, params).into_iter().map(|(_, d)| d))
        .collect();
    durations.sort_by(f64::total_cmp);
    durations.dedup();

    let gamma_phi = dephasing_rate(params, params.temperature)?;
    let evo = EvolutionSpec::new(params.delta_e, gamma_phi);
    let samples = dynamics::evolve_sampled(&dynamics::injected_state(), &evo, &durations)?;
    let lookup = |d: f64| -> Result<QubitState> {
        durations
            .binary_search_by(|probe| probe.total_cmp(&d))
            .map(|i| samples.states[i])
            .map_err(|_| Error::domain(format!("duration {d} not tabulated")))
    };

    let values = exec::map(mode, &grid, |&dt| i_sub_with(params, dt, lookup));
    let i_sub_pa = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PulseTrace {
        dt_ps: grid,
        i_sub_pa,
        params_snapshot: params.clone(),
    })
}
