use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use qdm_core::accounting::{self, AccountingInputs};
use qdm_core::analysis::{self, Window, WindowAnalysis};
use qdm_core::dynamics::{self, EvolutionSpec};
use qdm_core::fitting;
use qdm_core::params::dephasing_rate;
use qdm_core::protocol::{self, PulseTrace};
use qdm_core::spectra::{self, PeakSet};
use qdm_core::units::MU_B;
use qdm_core::{exec, DeviceParams, ExecMode, SweepSpec};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::output::{header, OutDir, Plot};

const DEFAULT_WINDOWS: [(f64, f64); 4] = [(100.0, 150.0), (290.0, 340.0), (350.0, 400.0), (400.0, 450.0)];

/// Staircase currents (pA) and pulse widths (ps) used as accounting
/// reference inputs.
const REFERENCE_STEPS: [(f64, f64); 3] = [(1.30, 100.0), (2.62, 200.0), (4.76, 300.0)];
const REFERENCE_TAU_PS: f64 = 1e6;
const REFERENCE_IDC_UA: f64 = 0.2;
const PLATEAU_WIDTH_PS: f64 = 10.0;
const DIDV_WIDTH_MEV: f64 = 0.15;

const TRACE_PLOT: Plot = Plot {
    xlabel: "pulse width (ps)",
    ylabel: "I_sub (pA)",
    columns: &[2],
    logx: false,
};
const DERIVATIVE_PLOT: Plot = Plot {
    xlabel: "pulse width (ps)",
    ylabel: "I_sub (pA), dI/dt (pA/ps)",
    columns: &[2, 3],
    logx: false,
};
const SPECTRUM_PLOT: Plot = Plot {
    xlabel: "period (ps)",
    ylabel: "magnitude (pA)",
    columns: &[2],
    logx: false,
};
const DIDV_PLOT: Plot = Plot {
    xlabel: "bias (V)",
    ylabel: "dI/dV (a.u.)",
    columns: &[2],
    logx: false,
};
const TRAJECTORY_PLOT: Plot = Plot {
    xlabel: "t (ps)",
    ylabel: "rho elements",
    columns: &[2, 3, 4, 5],
    logx: false,
};

pub fn run(cli: &Cli) -> CliResult<()> {
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let ctx = Context { cli, mode };
    match &cli.command {
        Command::Sweep(a) => ctx.sweep(a),
        Command::Analyze(a) => ctx.analyze(a),
        Command::Fit(a) => ctx.fit(a),
        Command::Account(a) => ctx.account(a),
        Command::Spectrum(a) => ctx.spectrum(a),
        Command::ReproducePaper(a) => ctx.reproduce(a),
    }
}

struct Context<'a> {
    cli: &'a Cli,
    mode: ExecMode,
}

/// Defaults, then the parameter file, then `--set`, then `--temperature`.
pub fn load_params(cli: &Cli) -> CliResult<DeviceParams> {
    let mut params = DeviceParams::default();
    if let Some(path) = &cli.params {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        params
            .apply_param_text(&text)
            .map_err(|e| CliError::input(&path.display().to_string(), e))?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        params
            .set(k.trim(), v)
            .map_err(|m| CliError::Config(format!("--set {kv}: {m}")))?;
    }
    if let Some(t) = cli.temperature {
        params.temperature = t;
    }
    let report = params.validate();
    if !report.is_ok() {
        return Err(CliError::Validation(report.to_string()));
    }
    Ok(params)
}

fn parse_numbers<const N: usize>(flag: &str, text: &str) -> CliResult<[f64; N]> {
    let bad = || CliError::Config(format!("--{flag} `{text}` is not {N} colon-separated numbers"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    parts.try_into().map_err(|_| bad())
}

fn parse_sweep(text: &str) -> CliResult<SweepSpec> {
    let [lo, hi, step] = parse_numbers::<3>("dt", text)?;
    SweepSpec::new(lo, hi, step).map_err(|e| CliError::input("--dt", e))
}

fn parse_window(text: &str) -> CliResult<Window> {
    let [lo, hi] = parse_numbers::<2>("window", text)?;
    if !(hi > lo) {
        return Err(CliError::Config(format!("--window `{text}`: hi must exceed lo")));
    }
    Ok(Window::new(lo, hi))
}

fn parse_bounds(entries: &[String]) -> CliResult<BTreeMap<String, (f64, f64)>> {
    let mut out = BTreeMap::new();
    for e in entries {
        let (name, range) = e
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--bounds expects NAME=LO:HI, got `{e}`")))?;
        let [lo, hi] = parse_numbers::<2>("bounds", range)?;
        if out.insert(name.trim().to_string(), (lo, hi)).is_some() {
            return Err(CliError::Config(format!("--bounds given twice for `{name}`")));
        }
    }
    Ok(out)
}

fn read_trace(path: &Path) -> CliResult<PulseTrace> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    PulseTrace::from_csv(&text).map_err(|e| CliError::input(&path.display().to_string(), e))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn temperature_tag(t: f64) -> String {
    format!("{t}K")
}

fn fmt_opt(v: Option<f64>, precision: usize) -> String {
    v.map(|x| format!("{x:.precision$}")).unwrap_or_default()
}

impl Context<'_> {
    fn out(&self, gnuplot: bool) -> CliResult<OutDir> {
        OutDir::create(&self.cli.out, gnuplot)
    }

    fn header(&self, command: &str, params: &DeviceParams) -> String {
        header(command, self.cli.seed, params)
    }

    fn sweep(&self, a: &SweepArgs) -> CliResult<()> {
        let params = load_params(self.cli)?;
        let spec = parse_sweep(&a.dt)?;
        let out = self.out(a.gnuplot)?;
        let trace = protocol::sweep_with(&params, &spec, self.mode)?;
        let csv = format!("# qdm sweep\n# seed = {}\n{}", self.cli.seed, trace.to_csv(a.derivative));
        let plot = if a.derivative { &DERIVATIVE_PLOT } else { &TRACE_PLOT };
        let path = out.write_plotted(&a.output, &csv, plot)?;
        println!("wrote {} ({} rows)", path.display(), trace.len());

        if a.trajectory {
            let gamma_phi = dephasing_rate(&params, params.temperature)?;
            let evo = EvolutionSpec::new(params.delta_e, gamma_phi);
            let traj = dynamics::evolve_sampled(&dynamics::injected_state(), &evo, &spec.grid())?;
            let csv = format!("{}{}", self.header("sweep --trajectory", &params), traj.to_csv());
            let path = out.write_plotted("trajectory.csv", &csv, &TRAJECTORY_PLOT)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn analyze_trace(&self, trace: &PulseTrace, windows: &[Window], threshold: f64) -> CliResult<Vec<WindowAnalysis>> {
        exec::map(self.mode, windows, |w| analysis::analyze_window(trace, w, threshold))
            .into_iter()
            .map(|r| r.map_err(CliError::from))
            .collect()
    }

    fn analyze(&self, a: &AnalyzeArgs) -> CliResult<()> {
        if !(a.threshold > 0.0) {
            return Err(CliError::Config("--threshold must be > 0".into()));
        }
        let trace = read_trace(&a.input)?;
        let windows: Vec<Window> = if a.windows.is_empty() {
            DEFAULT_WINDOWS.iter().map(|&(lo, hi)| Window::new(lo, hi)).collect()
        } else {
            a.windows.iter().map(|w| parse_window(w)).collect::<CliResult<_>>()?
        };
        let out = self.out(a.gnuplot)?;
        let results = self.analyze_trace(&trace, &windows, a.threshold)?;

        let mut csv = self.header("analyze", &trace.params_snapshot);
        writeln!(csv, "# input = {}\n# threshold = {}", file_label(&a.input), a.threshold).unwrap();
        csv.push_str(analysis::RESULTS_HEADER);
        csv.push('\n');
        for r in &results {
            csv.push_str(&analysis::result_row(&r.window, &r.estimate));
            csv.push('\n');
            println!(
                "{:>8}-{:<8} period {:>9} ps  energy {:>8} meV  significance {:>7.2}  {}",
                r.window.dt_lo,
                r.window.dt_hi,
                fmt_opt(r.estimate.period, 4),
                fmt_opt(r.estimate.energy, 4),
                r.estimate.significance,
                if r.estimate.ok { "ok" } else { "no peak" }
            );
            if a.spectra {
                let name = format!("spectrum_{}.csv", r.window.label());
                let body = format!("{}{}", self.header("analyze", &trace.params_snapshot), r.spectrum.to_csv());
                out.write_plotted(&name, &body, &SPECTRUM_PLOT)?;
            }
        }
        let path = out.write(&a.output, &csv)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn fit(&self, a: &FitArgs) -> CliResult<()> {
        let trace = read_trace(&a.input)?;
        let out = self.out(false)?;
        let text = match a.model {
            FitModel::Cosine => {
                let window = parse_window(&a.window)?;
                let d = analysis::detrend(&trace, &window)?;
                let fit = fitting::fit_damped_cosine_with(&d.values, d.grid_step, None, self.mode)?;
                let m = fit.model;
                let mut s = self.header("fit --model cosine", &trace.params_snapshot);
                writeln!(s, "# input = {}\n# window = {}", file_label(&a.input), a.window).unwrap();
                for (k, v) in [
                    ("amplitude", m.amplitude),
                    ("period", m.period),
                    ("phase", m.phase),
                    ("t2", m.t2),
                    ("baseline", m.baseline),
                    ("energy", m.energy()),
                    ("residual_rms", fit.residual_rms),
                ] {
                    writeln!(s, "{k} = {v:e}").unwrap();
                }
                writeln!(s, "iterations = {}\nconverged = {}", fit.iterations, fit.converged).unwrap();
                s
            }
            FitModel::Device => {
                let init = load_params(self.cli)?;
                let bounds = parse_bounds(&a.bounds)?;
                let free: Vec<&str> = a.free.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
                let fit = fitting::fit_device_params_with(&trace, &free, &bounds, &init, self.cli.seed, self.mode)?;
                let mut s = format!("# qdm fit --model device\n# seed = {}\n", self.cli.seed);
                writeln!(
                    s,
                    "# input = {}\n# free = {}\n# residual_rms = {:e}\n# evaluations = {}\n# best_start = {}",
                    file_label(&a.input),
                    free.join(","),
                    fit.residual_rms,
                    fit.evaluations,
                    fit.best_start
                )
                .unwrap();
                s.push_str(&fit.params.to_param_text());
                s
            }
        };
        let path = out.write(&a.output, &text)?;
        print!("{}", text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
        println!("wrote {}", path.display());
        Ok(())
    }

    fn account(&self, a: &AccountArgs) -> CliResult<()> {
        let params = load_params(self.cli)?;
        if a.isub.len() != a.dt.len() {
            return Err(CliError::Config(format!(
                "--isub has {} values but --dt has {}",
                a.isub.len(),
                a.dt.len()
            )));
        }
        let mut rows = Vec::new();
        for (&i_sub, &dt) in a.isub.iter().zip(&a.dt) {
            let x = AccountingInputs {
                i_sub,
                dt,
                t_rep: params.t_rep,
                tau_decay_min: a.tau,
                n_dot: params.n_dot,
                a_dot: params.a_dot,
                s_a: params.s_a,
            };
            let i_pulse = accounting::i_pulse_qd(&x).map_err(|e| CliError::input("account", e))?;
            let electrons = accounting::electrons_per_pulse(i_pulse, dt).map_err(|e| CliError::input("account", e))?;
            let k = protocol::staircase_channels(dt, &params).len().max(1);
            rows.push((i_sub, dt, i_pulse / 1e3, electrons, electrons / k as f64));
        }

        println!("{:>10} {:>8} {:>11} {:>10} {:>9}", "i_sub_pA", "dt_ps", "i_pulse_nA", "electrons", "fraction");
        for r in &rows {
            println!("{:>10.4} {:>8.1} {:>11.4} {:>10.4} {:>9.4}", r.0, r.1, r.2, r.3, r.4);
        }
        let mut extra = String::new();
        if let Some(idc) = a.idc {
            let i_dc = idc * 1e6;
            let per = accounting::current_per_molecule(i_dc, params.n_dot, params.a_dot)
                .map_err(|e| CliError::input("--idc", e))?;
            let tau = accounting::tau_decay_min(i_dc, params.n_dot, params.a_dot)
                .map_err(|e| CliError::input("--idc", e))?;
            println!("current per molecule = {per:.4} pA");
            println!("tau_decay_min = {tau:.6e} ps");
            writeln!(extra, "# current_per_molecule_pA = {per:e}\n# tau_decay_min_ps = {tau:e}").unwrap();
        }
        if a.csv {
            let out = self.out(false)?;
            let mut csv = self.header("account", &params);
            writeln!(csv, "# tau_ps = {}", a.tau).unwrap();
            csv.push_str(&extra);
            csv.push_str("i_sub_pA,dt_ps,i_pulse_nA,electrons,fraction\n");
            for r in &rows {
                writeln!(csv, "{},{},{:.9},{:.9},{:.9}", r.0, r.1, r.2, r.3, r.4).unwrap();
            }
            let path = out.write("accounting.csv", &csv)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn spectrum(&self, a: &SpectrumArgs) -> CliResult<()> {
        let params = load_params(self.cli)?;
        let g = a.g_factor.unwrap_or(params.g_factor);
        let peaks = PeakSet::double_peak(&params, a.width).map_err(|e| CliError::input("spectrum", e))?;
        let margin = 1.0 + spectra::zeeman_shift(a.b_field.max(0.0), g).abs();
        let v_min = a.v_min.unwrap_or_else(|| peaks.bias_at(-margin));
        let v_max = a.v_max.unwrap_or_else(|| peaks.bias_at(params.delta_e + margin));
        let grid = spectra::bias_grid(v_min, v_max, a.points).map_err(|e| CliError::input("bias grid", e))?;
        let curve = spectra::didv_curve(&peaks, a.b_field, g, &grid).map_err(|e| CliError::input("spectrum", e))?;

        let out = self.out(a.gnuplot)?;
        let mut csv = self.header("spectrum", &params);
        writeln!(csv, "# b_field_T = {}\n# g_factor_used = {g}\n# width_meV = {}", a.b_field, a.width).unwrap();
        csv.push_str(&spectra::to_csv(&curve));
        let path = out.write_plotted(&a.output, &csv, &DIDV_PLOT)?;

        let y: Vec<f64> = curve.iter().map(|c| c.1).collect();
        let maxima: Vec<f64> = spectra::local_maxima(&y).into_iter().map(|i| grid[i]).collect();
        let listed: Vec<String> = maxima.iter().map(|v| format!("{v:.5}")).collect();
        println!("{} maxima at bias {} V", maxima.len(), listed.join(", "));
        if maxima.len() == 2 {
            let e = spectra::peak_spacing_to_delta_e(maxima[1] - maxima[0], params.lever_arm)?;
            println!("peak spacing -> delta_e = {e:.4} meV");
        }
        println!("wrote {}", path.display());
        Ok(())
    }

    fn reproduce(&self, a: &ReproduceArgs) -> CliResult<()> {
        let base = load_params(self.cli)?;
        let spec = parse_sweep(&a.dt)?;
        let out = self.out(a.gnuplot)?;
        let windows: Vec<Window> = DEFAULT_WINDOWS.iter().map(|&(lo, hi)| Window::new(lo, hi)).collect();
        let mut summary = Vec::<[String; 6]>::new();
        let mut row = |name: String, t: String, q: &str, v: String, unit: &str, detail: String| {
            summary.push([name, t, q.to_string(), v, unit.to_string(), detail]);
        };

        out.write("params.txt", &format!("# qdm reproduce-paper\n{}", base.to_param_text()))?;

        let washout = DeviceParams {
            temperature: a.washout_temperature,
            ..base.clone()
        };
        let washout_report = washout.validate();
        if !washout_report.is_ok() {
            return Err(CliError::Validation(washout_report.to_string()));
        }
        let mut base_trace = None;
        for (params, prefix) in [(&base, ""), (&washout, "washout_")] {
            let tag = temperature_tag(params.temperature);
            let trace = protocol::sweep_with(params, &spec, self.mode)?;
            let csv = format!("# qdm reproduce-paper\n# seed = {}\n{}", self.cli.seed, trace.to_csv(true));
            out.write_plotted(&format!("trace_{tag}.csv"), &csv, &DERIVATIVE_PLOT)?;

            let results = self.analyze_trace(&trace, &windows, analysis::DEFAULT_THRESHOLD)?;
            let mut csv = self.header("reproduce-paper", params);
            csv.push_str(analysis::RESULTS_HEADER);
            csv.push('\n');
            for r in &results {
                csv.push_str(&analysis::result_row(&r.window, &r.estimate));
                csv.push('\n');
                let body = format!("{}{}", self.header("reproduce-paper", params), r.spectrum.to_csv());
                out.write_plotted(&format!("spectrum_{}_{tag}.csv", r.window.label()), &body, &SPECTRUM_PLOT)?;
                row(
                    format!("{prefix}{}", r.window.label()),
                    format!("{}", params.temperature),
                    "energy",
                    fmt_opt(r.estimate.energy, 6),
                    "meV",
                    if r.estimate.ok { "ok".into() } else { "no_peak".into() },
                );
            }
            out.write(&format!("analysis_{tag}.csv"), &csv)?;
            if base_trace.is_none() {
                base_trace = Some(trace);
            }
        }
        let trace = base_trace.expect("base run");

        let mut acc = self.header("reproduce-paper", &base);
        acc.push_str("source,i_sub_pA,dt_ps,i_pulse_nA,electrons\n");
        let mut plateaus = Vec::new();
        for (j, &(i_ref, dt)) in REFERENCE_STEPS.iter().enumerate() {
            let n = j + 1;
            let plateau = analysis::plateau_level(&trace, dt, PLATEAU_WIDTH_PS)?;
            plateaus.push(plateau);
            for (source, i_sub, name) in [
                ("reference", i_ref, format!("staircase_{n}")),
                ("simulated", plateau, format!("staircase_{n}_simulated")),
            ] {
                let x = AccountingInputs {
                    i_sub,
                    dt,
                    t_rep: base.t_rep,
                    tau_decay_min: REFERENCE_TAU_PS,
                    n_dot: base.n_dot,
                    a_dot: base.a_dot,
                    s_a: base.s_a,
                };
                let i_pulse = accounting::i_pulse_qd(&x)?;
                let electrons = accounting::electrons_per_pulse(i_pulse, dt)?;
                writeln!(acc, "{source},{i_sub:.6},{dt},{:.9},{electrons:.9}", i_pulse / 1e3).unwrap();
                row(
                    name,
                    if source == "simulated" { format!("{}", base.temperature) } else { String::new() },
                    "electrons",
                    format!("{electrons:.6}"),
                    "e",
                    format!("i_sub={i_sub:.4}pA"),
                );
            }
        }
        for (j, p) in plateaus.iter().enumerate().skip(1) {
            let reference = REFERENCE_STEPS[j].0 / REFERENCE_STEPS[0].0;
            row(
                format!("plateau_ratio_{}", j + 1),
                format!("{}", base.temperature),
                "ratio",
                format!("{:.6}", p / plateaus[0]),
                "",
                format!("reference={reference:.4}"),
            );
        }
        let i_dc = REFERENCE_IDC_UA * 1e6;
        let tau = accounting::tau_decay_min(i_dc, base.n_dot, base.a_dot)?;
        let per = accounting::current_per_molecule(i_dc, base.n_dot, base.a_dot)?;
        writeln!(acc, "# tau_decay_min_ps = {tau:e}\n# current_per_molecule_pA = {per:e}").unwrap();
        out.write("accounting.csv", &acc)?;
        row("tau_decay_min".into(), String::new(), "tau", format!("{tau:.1}"), "ps", format!("i_dc={REFERENCE_IDC_UA}uA"));
        row("current_per_molecule".into(), String::new(), "current", format!("{per:.6}"), "pA", format!("i_dc={REFERENCE_IDC_UA}uA"));

        let peaks = PeakSet::double_peak(&base, DIDV_WIDTH_MEV)?;
        let g = base.g_factor;
        let high_b = if g != 0.0 { 1.0 / (g * MU_B) } else { 0.0 };
        let grid = spectra::bias_grid(peaks.bias_at(-2.0), peaks.bias_at(base.delta_e + 2.0), 10_000)?;
        for (name, b) in [("B0", 0.0), ("highB", high_b)] {
            let curve = spectra::didv_curve(&peaks, b, g, &grid)?;
            let mut csv = self.header("reproduce-paper", &base);
            writeln!(csv, "# b_field_T = {b}\n# width_meV = {DIDV_WIDTH_MEV}").unwrap();
            csv.push_str(&spectra::to_csv(&curve));
            out.write_plotted(&format!("didv_{name}.csv"), &csv, &DIDV_PLOT)?;
            let y: Vec<f64> = curve.iter().map(|c| c.1).collect();
            row(
                format!("didv_maxima_{name}"),
                String::new(),
                "count",
                spectra::local_maxima(&y).len().to_string(),
                "",
                format!("b_field={b:.4}T"),
            );
        }

        let mut csv = self.header("reproduce-paper", &base);
        csv.push_str("row,temperature_K,quantity,value,unit,detail\n");
        for r in &summary {
            csv.push_str(&r.join(","));
            csv.push('\n');
        }
        let path = out.write("summary.csv", &csv)?;
        for r in &summary {
            println!("{:<28} {:>5} {:<10} {:>16} {:<4} {}", r[0], r[1], r[2], r[3], r[4], r[5]);
        }
        println!("wrote {}", path.display());
        Ok(())
    }
}
