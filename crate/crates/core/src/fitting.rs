//! Parameter extraction.
//!
//! Two fits live here: a damped cosine fitted to one background-removed
//! window (Levenberg–Marquardt on a numerically differentiated Jacobian,
//! plus simplex restarts), and a simulator-in-the-loop fit that adjusts
//! [`DeviceParams`] until [`protocol::sweep`] reproduces a whole trace
//! (bounded Nelder–Mead with multi-starts).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{self, Window};
use crate::exec::{self, ExecMode};
use crate::params::{DeviceParams, SweepSpec};
use crate::protocol::{self, PulseTrace};
use crate::units::period_to_energy;
use crate::{Error, Result};

/// y(t) = baseline + amplitude·e^(−t/t2)·cos(2πt/period + phase), with t
/// measured from the first sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampedCosineModel {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
    pub t2: f64,
    pub baseline: f64,
}

impl DampedCosineModel {
    pub fn eval(&self, t: f64) -> f64 {
        self.baseline
            + self.amplitude
                * (-t / self.t2).exp()
                * (std::f64::consts::TAU * t / self.period + self.phase).cos()
    }

    /// Samples at `t = i·grid_step`, i = 0..n.
    pub fn sample(&self, n: usize, grid_step: f64) -> Vec<f64> {
        (0..n).map(|i| self.eval(i as f64 * grid_step)).collect()
    }

    /// Energy h/period, meV.
    pub fn energy(&self) -> f64 {
        period_to_energy(self.period)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: DampedCosineModel,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Variance estimates for (amplitude, period, phase, t2, baseline).
    pub covariance_diag: Vec<f64>,
    /// Objective after every accepted step of the selected start.
    pub cost_history: Vec<f64>,
    /// 0 for the primary descent, 1..=3 for the phase-perturbed restarts.
    pub start_index: usize,
}

/// Central-difference Jacobian, `rows[i][j] = ∂f_i/∂x_j`, with step
/// `rel_step · max(|x_j|, 1)`.
pub fn numeric_jacobian<F>(f: F, x: &[f64], rel_step: f64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = f(x).len();
    let mut rows = vec![vec![0.0; x.len()]; m];
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = rel_step * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        for i in 0..m {
            rows[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    rows
}

const JACOBIAN_STEP: f64 = 1e-6;
const LM_MAX_ITER: usize = 500;
const GRAD_TOL: f64 = 1e-9;
const REL_COST_TOL: f64 = 1e-10;
const COSINE_RESTARTS: usize = 3;

struct LmOutcome {
    x: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn half_sum_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn to_matrix(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// Levenberg–Marquardt on cost ½‖r(x)‖². Only cost-decreasing steps are
/// accepted, so `history` is non-increasing. Runs until the gradient
/// vanishes or no step lowers the cost; `converged` reports whether either
/// tolerance (relative cost change, gradient max-norm) was met on the way.
fn levenberg_marquardt<F>(resid: &F, x0: Vec<f64>, mut history: Vec<f64>) -> LmOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x0.len();
    let mut x = x0;
    let mut r = resid(&x);
    let mut cost = half_sum_sq(&r);
    history.push(cost);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < LM_MAX_ITER {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jac = to_matrix(&numeric_jacobian(resid, &x, JACOBIAN_STEP), p);
        let g = jac.transpose() * DVector::from_column_slice(&r);
        if g.amax() < GRAD_TOL {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = resid(&trial);
            let c_trial = half_sum_sq(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                let rel = (cost - c_trial) / cost;
                x = trial;
                r = r_trial;
                cost = c_trial;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                // keep polishing: the flag is set, descent continues until
                // no step lowers the cost
                if rel < REL_COST_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at working precision
            let jac = to_matrix(&numeric_jacobian(resid, &x, JACOBIAN_STEP), p);
            let g = jac.transpose() * DVector::from_column_slice(&r);
            converged |= g.amax() < GRAD_TOL;
            break;
        }
    }
    // The cost stalls at rounding level before the parameters do; a few
    // Gauss-Newton steps judged by the gradient take them the rest of the
    // way. Cost moves by at most rounding here, so history is left alone.
    let mut grad = gradient(resid, &x, &r);
    for _ in 0..GN_POLISH_STEPS {
        let Some(step) = gauss_newton_step(resid, &x, &r) else {
            break;
        };
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let r_trial = resid(&trial);
        let c_trial = half_sum_sq(&r_trial);
        let g_trial = gradient(resid, &trial, &r_trial);
        if !(c_trial <= cost * (1.0 + 1e-12)) || !(g_trial < grad) {
            break;
        }
        x = trial;
        r = r_trial;
        cost = c_trial.min(cost);
        grad = g_trial;
    }
    converged |= grad < GRAD_TOL;
    LmOutcome {
        x,
        cost,
        iterations,
        converged,
        history,
    }
}

const GN_POLISH_STEPS: usize = 3;

fn gradient<F: Fn(&[f64]) -> Vec<f64>>(resid: &F, x: &[f64], r: &[f64]) -> f64 {
    let jac = to_matrix(&numeric_jacobian(resid, x, JACOBIAN_STEP), x.len());
    (jac.transpose() * DVector::from_column_slice(r)).amax()
}

fn gauss_newton_step<F: Fn(&[f64]) -> Vec<f64>>(resid: &F, x: &[f64], r: &[f64]) -> Option<DVector<f64>> {
    let jac = to_matrix(&numeric_jacobian(resid, x, JACOBIAN_STEP), x.len());
    let g = jac.transpose() * DVector::from_column_slice(r);
    let chol = (jac.transpose() * &jac).cholesky()?;
    Some(chol.solve(&(-g)))
}

/// Result of a simplex search.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best vertex value after each iteration.
    pub history: Vec<f64>,
}

/// Nelder–Mead minimization. With `unit_box`, every trial point is clamped
/// into [0, 1]ⁿ.
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], max_iter: usize, unit_box: bool) -> SimplexOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let clamp = |mut v: Vec<f64>| {
        if unit_box {
            v.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
        }
        v
    };
    let mut evaluations = 0;
    let mut eval = |v: &[f64]| {
        evaluations += 1;
        let y = f(v);
        if y.is_nan() {
            f64::INFINITY
        } else {
            y
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let start = clamp(x0.to_vec());
    let f0 = eval(&start);
    simplex.push((start.clone(), f0));
    for j in 0..n {
        let mut v = start.clone();
        v[j] += steps[j];
        if unit_box && v[j] > 1.0 {
            v[j] = start[j] - steps[j];
        }
        let v = clamp(v);
        let fv = eval(&v);
        simplex.push((v, fv));
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        history.push(simplex[0].1);
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-12 * best.abs() || diameter <= 1e-10 {
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clamp(
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect(),
            )
        };
        let xr = along(1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    let fv = eval(&v);
                    *vertex = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexOutcome {
        x,
        value,
        iterations,
        evaluations,
        history,
    }
}

/// Internal parameters: amplitude/scale, ln period, phase, ln t2,
/// baseline/scale.
fn cosine_residuals(theta: &[f64], times: &[f64], y: &[f64]) -> Vec<f64> {
    let model = DampedCosineModel {
        amplitude: theta[0],
        period: theta[1].exp(),
        phase: theta[2],
        t2: theta[3].exp(),
        baseline: theta[4],
    };
    times.iter().zip(y).map(|(&t, &v)| model.eval(t) - v).collect()
}

fn wrap_phase(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut p = phase.rem_euclid(tau);
    if p > std::f64::consts::PI {
        p -= tau;
    }
    p
}

/// Starting point used when no initial model is supplied: period from the
/// periodogram peak, amplitude √2·RMS, phase 0, t2 = window length,
/// baseline = series mean.
pub fn initial_guess(series: &[f64], grid_step: f64) -> Result<DampedCosineModel> {
    let n = series.len();
    let spectrum = analysis::periodogram(series, grid_step)?;
    let window = n as f64 * grid_step;
    let period = analysis::strongest_peak(&spectrum)
        .map(|(p, _)| p)
        .unwrap_or(window / 4.0);
    let mean = series.iter().sum::<f64>() / n as f64;
    let rms = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(DampedCosineModel {
        amplitude: rms * std::f64::consts::SQRT_2,
        period,
        phase: 0.0,
        t2: window,
        baseline: mean,
    })
}

/// [`fit_damped_cosine_with`] on the parallel path.
pub fn fit_damped_cosine(series: &[f64], grid_step: f64, init: Option<DampedCosineModel>) -> Result<FitResult> {
    fit_damped_cosine_with(series, grid_step, init, ExecMode::Parallel)
}

/// Least-squares damped-cosine fit.
///
/// The series is divided by its largest magnitude before fitting, so the
/// result is equivariant under rescaling of the data. Period and t2 are
/// fitted in log space. The primary Levenberg–Marquardt run is followed by
/// three restarts with the phase shifted by π/2, π and 3π/2, each a simplex
/// search polished by Levenberg–Marquardt; the lowest cost wins, ties going
/// to the lower start index.
pub fn fit_damped_cosine_with(
    series: &[f64],
    grid_step: f64,
    init: Option<DampedCosineModel>,
    mode: ExecMode,
) -> Result<FitResult> {
    let n = series.len();
    if n < analysis::MIN_SERIES_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            min: analysis::MIN_SERIES_LEN,
        });
    }
    if !(grid_step > 0.0) {
        return Err(Error::domain("grid_step must be > 0"));
    }
    let scale = series.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let init = match init {
        Some(m) => m,
        None => initial_guess(series, grid_step)?,
    };
    if scale == 0.0 {
        return Ok(FitResult {
            model: DampedCosineModel {
                amplitude: 0.0,
                baseline: 0.0,
                ..init
            },
            residual_rms: 0.0,
            iterations: 0,
            converged: true,
            covariance_diag: vec![0.0; 5],
            cost_history: vec![0.0],
            start_index: 0,
        });
    }
    if !(init.period > 0.0 && init.t2 > 0.0) {
        return Err(Error::domain("initial period and t2 must be > 0"));
    }

    let y: Vec<f64> = series.iter().map(|v| v / scale).collect();
    let times: Vec<f64> = (0..n).map(|i| i as f64 * grid_step).collect();
    let resid = |theta: &[f64]| cosine_residuals(theta, &times, &y);
    let theta0 = vec![
        init.amplitude / scale,
        init.period.ln(),
        init.phase,
        init.t2.ln(),
        init.baseline / scale,
    ];

    let starts: Vec<usize> = (0..=COSINE_RESTARTS).collect();
    let outcomes = exec::map(mode, &starts, |&k| {
        if k == 0 {
            return levenberg_marquardt(&resid, theta0.clone(), Vec::new());
        }
        let mut start = theta0.clone();
        start[2] += k as f64 * std::f64::consts::FRAC_PI_2;
        let amp = start[0].abs().max(1e-3);
        let steps = [0.2 * amp, 0.02, 0.5, 0.3, 0.05];
        let simplex = nelder_mead(|t| half_sum_sq(&resid(t)), &start, &steps, 400, false);
        let mut lm = levenberg_marquardt(&resid, simplex.x, simplex.history);
        lm.iterations += simplex.iterations;
        lm
    });
    let (start_index, best) = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.cost.total_cmp(&b.cost).then(i.cmp(j)))
        .expect("at least one start");

    let mut theta = best.x.clone();
    if theta[0] < 0.0 {
        theta[0] = -theta[0];
        theta[2] += std::f64::consts::PI;
    }
    theta[2] = wrap_phase(theta[2]);
    let model = DampedCosineModel {
        amplitude: theta[0] * scale,
        period: theta[1].exp(),
        phase: theta[2],
        t2: theta[3].exp(),
        baseline: theta[4] * scale,
    };

    let jac = to_matrix(&numeric_jacobian(resid, &theta, JACOBIAN_STEP), 5);
    let sigma2 = 2.0 * best.cost / (n as f64 - 5.0);
    let inv = (jac.transpose() * &jac).try_inverse();
    let covariance_diag = match inv {
        Some(inv) => {
            let chain = [scale * scale, model.period * model.period, 1.0, model.t2 * model.t2, scale * scale];
            (0..5).map(|k| sigma2 * inv[(k, k)] * chain[k]).collect()
        }
        None => vec![f64::INFINITY; 5],
    };

    Ok(FitResult {
        model,
        residual_rms: scale * (2.0 * best.cost / n as f64).sqrt(),
        iterations: best.iterations,
        converged: best.converged,
        covariance_diag,
        cost_history: best.history,
        start_index,
    })
}

/// Parameters the simulator-in-the-loop fit may vary.
pub const FREE_PARAMETERS: &[&str] = &[
    "delta_e",
    "gamma_s",
    "gamma_as",
    "gamma_phi0",
    "eta_inject",
    "leak_slope",
];

pub const DEVICE_STARTS: usize = 5;
const DEVICE_SIMPLEX_ITER_PER_DIM: usize = 150;
const DEVICE_SIMPLEX_STEP: f64 = 0.05;
const SEEDED_SPLITTING_STEP: f64 = 0.002;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFit {
    pub params: DeviceParams,
    pub residual_rms: f64,
    pub evaluations: usize,
    /// Which multi-start produced the result.
    pub best_start: usize,
}

/// RMS difference between `trace` and a fresh sweep of `params` on the
/// same grid. Parameter sets the simulator rejects score +∞.
pub fn trace_rms(trace: &PulseTrace, params: &DeviceParams) -> f64 {
    let Some(spec) = trace_grid(trace) else {
        return f64::INFINITY;
    };
    match protocol::sweep_with(params, &spec, ExecMode::Sequential) {
        Ok(sim) => {
            let ss: f64 = sim
                .i_sub_pa
                .iter()
                .zip(&trace.i_sub_pa)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            (ss / trace.len() as f64).sqrt()
        }
        Err(_) => f64::INFINITY,
    }
}

fn trace_grid(trace: &PulseTrace) -> Option<SweepSpec> {
    let (&lo, &hi) = (trace.dt_ps.first()?, trace.dt_ps.last()?);
    SweepSpec::new(lo, hi, trace.step()).ok()
}

/// Splitting estimate from the oscillation period on the widest clean
/// plateau: the top-channel-count stretch below the leak threshold, or
/// failing that, the widest single staircase step inside the trace.
pub fn splitting_seed(trace: &PulseTrace, params: &DeviceParams) -> Option<f64> {
    let (&first, &last) = (trace.dt_ps.first()?, trace.dt_ps.last()?);
    let step = trace.step();
    let tau = params.tau_step;
    let mut candidates = vec![(
        (params.k_max.max(1) - 1) as f64 * tau,
        params.leak_threshold,
    )];
    for j in 0..params.k_max {
        candidates.push((j as f64 * tau, ((j + 1) as f64 * tau).min(params.leak_threshold)));
    }
    let best = candidates
        .into_iter()
        .map(|(lo, hi)| (lo.max(first), hi.min(last)))
        .filter(|(lo, hi)| hi - lo >= analysis::MIN_SERIES_LEN as f64 * step)
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))?;
    let d = analysis::detrend(trace, &Window::new(best.0, best.1)).ok()?;
    let fit = fit_damped_cosine_with(&d.values, d.grid_step, None, ExecMode::Sequential).ok()?;
    (fit.model.amplitude > 0.0).then(|| fit.model.energy())
}

fn check_free(free: &[&str], bounds: &BTreeMap<String, (f64, f64)>, init: &DeviceParams) -> Result<()> {
    for (i, name) in free.iter().enumerate() {
        if !FREE_PARAMETERS.contains(name) {
            return Err(Error::Invalid(format!(
                "`{name}` cannot be fitted; allowed: {}",
                FREE_PARAMETERS.join(", ")
            )));
        }
        if free[..i].contains(name) {
            return Err(Error::Invalid(format!("`{name}` listed twice")));
        }
        let &(lo, hi) = bounds
            .get(*name)
            .ok_or_else(|| Error::Invalid(format!("no bounds given for `{name}`")))?;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::Invalid(format!(
                "bounds for `{name}` must be finite, positive and increasing"
            )));
        }
        let v = init.get(name).expect("known field");
        if !(v >= lo && v <= hi) {
            return Err(Error::Invalid(format!(
                "bounds violation at init: {name} = {v} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// [`fit_device_params_with`] on the parallel path.
pub fn fit_device_params(
    trace: &PulseTrace,
    free: &[&str],
    bounds: &BTreeMap<String, (f64, f64)>,
    init: &DeviceParams,
    seed: u64,
) -> Result<DeviceFit> {
    fit_device_params_with(trace, free, bounds, init, seed, ExecMode::Parallel)
}

/// Minimizes [`trace_rms`] over the `free` parameters inside `bounds`.
///
/// Search runs in unit-box coordinates (each parameter mapped linearly
/// onto its interval) with [`DEVICE_STARTS`] Nelder–Mead starts: the
/// initial parameters; the spectral splitting seed from [`splitting_seed`]
/// when `delta_e` is free; the rest uniform draws from a ChaCha8 stream
/// seeded with `seed`. The lowest RMS wins, ties to the lower start index.
pub fn fit_device_params_with(
    trace: &PulseTrace,
    free: &[&str],
    bounds: &BTreeMap<String, (f64, f64)>,
    init: &DeviceParams,
    seed: u64,
    mode: ExecMode,
) -> Result<DeviceFit> {
    check_free(free, bounds, init)?;
    if trace_grid(trace).is_none() {
        return Err(Error::domain("trace grid is not a valid sweep grid"));
    }
    if free.is_empty() {
        return Ok(DeviceFit {
            params: init.clone(),
            residual_rms: trace_rms(trace, init),
            evaluations: 1,
            best_start: 0,
        });
    }

    let dim = free.len();
    let ranges: Vec<(f64, f64)> = free.iter().map(|n| bounds[*n]).collect();
    let to_params = |u: &[f64]| {
        let mut p = init.clone();
        for ((name, &(lo, hi)), &ui) in free.iter().zip(&ranges).zip(u) {
            p.set_f64(name, lo + ui.clamp(0.0, 1.0) * (hi - lo));
        }
        p
    };
    let to_unit = |p: &DeviceParams| -> Vec<f64> {
        free.iter()
            .zip(&ranges)
            .map(|(name, &(lo, hi))| (p.get(name).expect("known field") - lo) / (hi - lo))
            .collect()
    };

    let generic_steps = vec![DEVICE_SIMPLEX_STEP; dim];
    let mut starts: Vec<(Vec<f64>, Vec<f64>)> = vec![(to_unit(init), generic_steps.clone())];
    if let Some(k) = free.iter().position(|n| *n == "delta_e") {
        if let Some(e) = splitting_seed(trace, init) {
            let (lo, hi) = ranges[k];
            if e > lo && e < hi {
                let mut u = to_unit(init);
                u[k] = (e - lo) / (hi - lo);
                let mut steps = generic_steps.clone();
                steps[k] = SEEDED_SPLITTING_STEP;
                starts.push((u, steps));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while starts.len() < DEVICE_STARTS {
        let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        starts.push((u, generic_steps.clone()));
    }

    let objective = |u: &[f64]| trace_rms(trace, &to_params(u));
    let outcomes = exec::map(mode, &starts, |(u, steps)| {
        nelder_mead(objective, u, steps, DEVICE_SIMPLEX_ITER_PER_DIM * dim, true)
    });
    let evaluations = outcomes.iter().map(|o| o.evaluations).sum();
    let (best_start, best) = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .expect("at least one start");
    Ok(DeviceFit {
        params: to_params(&best.x),
        residual_rms: best.value,
        evaluations,
        best_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn truth() -> DampedCosineModel {
        DampedCosineModel {
            amplitude: 0.05,
            period: 4.136,
            phase: 0.3,
            t2: 200.0,
            baseline: 0.0,
        }
    }

    #[test]
    fn noiseless_recovery() {
        let y = truth().sample(100, 1.0);
        let fit = fit_damped_cosine(&y, 1.0, None).unwrap();
        assert!(fit.converged);
        let m = fit.model;
        assert_relative_eq!(m.amplitude, 0.05, max_relative = 1e-4);
        assert_relative_eq!(m.period, 4.136, max_relative = 1e-4);
        assert_relative_eq!(m.phase, 0.3, max_relative = 1e-4);
        assert_relative_eq!(m.t2, 200.0, max_relative = 1e-4);
        assert!(m.baseline.abs() < 1e-8);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn zero_series() {
        let fit = fit_damped_cosine(&[0.0; 40], 1.0, None).unwrap();
        assert!(fit.converged);
        assert!(fit.model.amplitude.abs() < 1e-12);
    }

    #[test]
    fn flat_series() {
        let fit = fit_damped_cosine(&[0.7; 40], 1.0, None).unwrap();
        assert!(fit.converged);
        assert!(fit.model.amplitude.abs() < 1e-6, "{:?}", fit.model);
        assert_relative_eq!(fit.model.baseline, 0.7, max_relative = 1e-6);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            fit_damped_cosine(&[1.0; 10], 1.0, None),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn history_is_monotone() {
        let mut y = truth().sample(60, 1.0);
        y.iter_mut().enumerate().for_each(|(i, v)| *v += 0.004 * ((i * 7919 % 13) as f64 - 6.0) / 6.0);
        let fit = fit_damped_cosine(&y, 1.0, None).unwrap();
        assert!(fit.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nelder_mead_quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 10.0 * (x[1] - 0.7).powi(2);
        let out = nelder_mead(f, &[0.9, 0.1], &[0.1, 0.1], 1000, true);
        assert!((out.x[0] - 0.3).abs() < 1e-5 && (out.x[1] - 0.7).abs() < 1e-5, "{:?}", out.x);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nelder_mead_respects_box() {
        let f = |x: &[f64]| (x[0] + 1.0).powi(2);
        let out = nelder_mead(f, &[0.5], &[0.1], 500, true);
        assert!(out.x[0] >= 0.0 && out.x[0] < 1e-6);
    }

    #[test]
    fn wrap_phase_range() {
        for p in [-7.0, -3.2, 0.0, 3.2, 10.0] {
            let w = wrap_phase(p);
            assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI);
            assert!(((w - p) / std::f64::consts::TAU).fract().abs() < 1e-9 || ((w - p) / std::f64::consts::TAU).fract().abs() > 1.0 - 1e-9);
        }
    }

    fn small_trace(params: &DeviceParams) -> PulseTrace {
        protocol::sweep(params, &SweepSpec::new(0.0, 200.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn empty_free_set_returns_init() {
        let trace = small_trace(&DeviceParams::default());
        let init = DeviceParams {
            delta_e: 1.1,
            ..Default::default()
        };
        let fit = fit_device_params(&trace, &[], &BTreeMap::new(), &init, 42).unwrap();
        assert_eq!(fit.params, init);
        assert_eq!(fit.residual_rms, trace_rms(&trace, &init));
        assert!(fit.residual_rms > 0.0);
    }

    #[test]
    fn device_fit_errors() {
        let trace = small_trace(&DeviceParams::default());
        let init = DeviceParams::default();
        let mut bounds = BTreeMap::new();
        bounds.insert("delta_e".to_string(), (0.5, 2.0));
        bounds.insert("temperature".to_string(), (1.0, 2.0));
        assert!(matches!(
            fit_device_params(&trace, &["temperature"], &bounds, &init, 1),
            Err(Error::Invalid(_))
        ));
        assert!(matches!(
            fit_device_params(&trace, &["gamma_s"], &bounds, &init, 1),
            Err(Error::Invalid(_))
        ));
        bounds.insert("delta_e".to_string(), (1.5, 2.0));
        let err = fit_device_params(&trace, &["delta_e"], &bounds, &init, 1).unwrap_err();
        assert!(err.to_string().contains("bounds violation at init"));
    }
}
