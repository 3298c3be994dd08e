use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qdm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn qdm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

fn synthetic_trace(dir: &Path) -> PathBuf {
    // damped cosine on a flat background
    let mut s = String::from("delta_t_ps,i_sub_pA\n");
    for i in 0..=200 {
        let t = i as f64;
        let y = 1.0 + 0.05 * (-t / 200.0).exp() * (std::f64::consts::TAU * t / 4.136 + 0.3).cos();
        s.push_str(&format!("{t:.6},{y:.15}\n"));
    }
    let path = dir.join("synthetic.csv");
    fs::write(&path, s).unwrap();
    path
}

#[test]
fn sweep_writes_expected_rows_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = qdm(dir.path(), &["sweep", "--dt", "0:450:1", "--derivative", "--output", "a.csv"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = qdm(dir.path(), &["sweep", "--dt", "0:450:1", "--derivative", "--output", "b.csv"]);
    assert!(b.status.success());
    let ta = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(ta, fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(ta).unwrap();
    assert!(text.contains("# delta_e = 1\n"));
    assert!(text.contains("delta_t_ps,i_sub_pA,didt_pA_per_ps\n"));
    assert_eq!(data_rows(&text).len(), 451);
}

#[test]
fn sweep_sequential_matches_parallel() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qdm(dir.path(), &["sweep", "--dt", "0:300:1", "--output", "p.csv"]).status.success());
    assert!(qdm(dir.path(), &["--sequential", "sweep", "--dt", "0:300:1", "--output", "s.csv"])
        .status
        .success());
    assert_eq!(
        fs::read(dir.path().join("p.csv")).unwrap(),
        fs::read(dir.path().join("s.csv")).unwrap()
    );
}

#[test]
fn zero_injection_gives_zero_current() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdm(dir.path(), &["--set", "eta_inject=0", "sweep", "--dt", "0:10:1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 11);
    for r in rows {
        let i: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(i, 0.0);
    }
}

#[test]
fn gnuplot_and_trajectory_companions() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdm(dir.path(), &["sweep", "--dt", "0:50:1", "--gnuplot", "--trajectory"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gp = fs::read_to_string(dir.path().join("sweep.gp")).unwrap();
    assert!(gp.contains("plot 'sweep.csv' using 1:2"));
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(data_rows(&traj).len(), 51);
    assert!(dir.path().join("trajectory.gp").exists());
}

#[test]
fn parameter_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.txt");
    fs::write(&file, "# custom\ndelta_e = 1.5\ngamma_phi0 = 0.02\n").unwrap();
    let f = file.to_str().unwrap();
    let o = qdm(dir.path(), &["--params", f, "--set", "delta_e=2", "--temperature", "10", "sweep", "--dt", "0:20:1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.contains("# delta_e = 2\n"));
    assert!(text.contains("# gamma_phi0 = 0.02\n"));
    assert!(text.contains("# temperature = 10\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "delta_e = 1\n\nno_such_key = 3\n").unwrap();
    let o = qdm(dir.path(), &["--params", bad.to_str().unwrap(), "sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.txt:3:"), "{}", stderr(&o));

    let o = qdm(dir.path(), &["sweep", "--dt", "0:10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qdm(dir.path(), &["sweep", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));

    let o = qdm(dir.path(), &["--set", "delta_e=-1", "--set", "gamma_as=1e-7", "sweep"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("delta_e > 0") && err.contains("gamma_as >= gamma_s"), "{err}");

    // pulse widths at or beyond the repetition period cannot be simulated
    let o = qdm(dir.path(), &["sweep", "--dt", "0:20000:1000"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = qdm(dir.path(), &["sweep", "--dt", "0:20:1"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn analyze_one_window() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qdm(dir.path(), &["sweep", "--dt", "0:200:1"]).status.success());
    let trace = dir.path().join("sweep.csv");
    let o = qdm(
        dir.path(),
        &["analyze", "--input", trace.to_str().unwrap(), "--window", "100:150", "--spectra"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("analysis.csv")).unwrap();
    assert!(text.contains("window_lo,window_hi,period_ps,energy_meV,significance,ok\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 1);
    let cols: Vec<&str> = rows[0].split(',').collect();
    let energy: f64 = cols[3].parse().unwrap();
    assert!((energy - 1.0).abs() < 0.1);
    assert_eq!(cols[5], "true");
    let spec = fs::read_to_string(dir.path().join("spectrum_window_100_150.csv")).unwrap();
    assert!(spec.contains("period_ps,magnitude\n"));

    let o = qdm(dir.path(), &["analyze", "--input", trace.to_str().unwrap(), "--window", "150:400"]);
    assert_eq!(o.status.code(), Some(2), "window beyond the trace");
}

#[test]
fn account_prints_first_staircase() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdm(dir.path(), &["account", "--isub", "1.30", "--dt", "100", "--idc", "0.2", "--csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("1.0400"), "{out}");
    assert!(out.contains("0.6491"), "{out}");
    assert!(out.contains("current per molecule = 0.1600 pA"), "{out}");
    let csv = fs::read_to_string(dir.path().join("accounting.csv")).unwrap();
    assert!(csv.contains("i_sub_pA,dt_ps,i_pulse_nA,electrons,fraction\n"));

    let o = qdm(dir.path(), &["account", "--isub", "1.3,2.6", "--dt", "100"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cosine_fit_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = synthetic_trace(dir.path());
    let o = qdm(
        dir.path(),
        &["fit", "--model", "cosine", "--input", input.to_str().unwrap(), "--window", "20:200"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("fit.txt")).unwrap();
    assert!(text.contains("converged = true\n"), "{text}");
    let period: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("period = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((period / 4.136 - 1.0).abs() < 1e-3, "{period}");
}

#[test]
fn device_fit_round_trips_as_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qdm(dir.path(), &["--set", "eta_inject=0.6", "sweep", "--dt", "0:150:1"]).status.success());
    let trace = dir.path().join("sweep.csv");
    let o = qdm(
        dir.path(),
        &[
            "fit",
            "--model",
            "device",
            "--input",
            trace.to_str().unwrap(),
            "--free",
            "eta_inject",
            "--bounds",
            "eta_inject=0.2:0.9",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let fitted = dir.path().join("fit.txt");
    let text = fs::read_to_string(&fitted).unwrap();
    let eta: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("eta_inject = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((eta - 0.6).abs() < 1e-3, "{eta}");
    // fed back as a parameter file
    let o = qdm(dir.path(), &["--params", fitted.to_str().unwrap(), "sweep", "--dt", "0:10:1"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = qdm(
        dir.path(),
        &["fit", "--model", "device", "--input", trace.to_str().unwrap(), "--free", "temperature", "--bounds", "temperature=1:5"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectrum_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdm(dir.path(), &["spectrum", "--points", "10000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("2 maxima"), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("didv.csv")).unwrap();
    assert!(csv.contains("bias_V,didv_au\n"));
    assert_eq!(data_rows(&csv).len(), 10_000);

    // g·μB·B = 1 meV at g = 2
    let o = qdm(dir.path(), &["spectrum", "--b-field", "8.638", "--points", "10000"]);
    assert!(stdout(&o).starts_with("4 maxima"), "{}", stdout(&o));

    let o = qdm(dir.path(), &["spectrum", "--b-field", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reproduce_with_hot_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdm(dir.path(), &["--temperature", "88", "reproduce-paper"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let windows: Vec<&str> = data_rows(&summary)
        .into_iter()
        .filter(|r| r.contains("window_"))
        .collect();
    assert_eq!(windows.len(), 8);
    assert!(windows.iter().all(|r| r.ends_with(",no_peak")), "{windows:?}");
}

const SUBCOMMANDS: [&str; 6] = ["sweep", "analyze", "fit", "account", "spectrum", "reproduce-paper"];

fn help_text(sub: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qdm"));
    if let Some(s) = sub {
        cmd.arg(s);
    }
    let o = cmd.arg("--help").output().unwrap();
    assert!(o.status.success());
    stdout(&o)
}

/// Set QDM_UPDATE_GOLDENS=1 to rewrite the files after an intended change.
#[test]
fn help_goldens() {
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("QDM_UPDATE_GOLDENS").is_some();
    let mut names: Vec<Option<&str>> = vec![None];
    names.extend(SUBCOMMANDS.iter().map(|s| Some(*s)));
    for sub in names {
        let text = help_text(sub);
        let file = golden_dir.join(format!("{}.txt", sub.unwrap_or("qdm")));
        if update {
            fs::write(&file, &text).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing golden {}", file.display()));
        assert_eq!(text, expected, "help drifted for {:?}", sub);
    }
}

#[test]
fn every_flag_is_documented() {
    let flags: &[(&str, &[&str])] = &[
        ("sweep", &["--dt", "--derivative", "--trajectory", "--gnuplot", "--output"]),
        ("analyze", &["--input", "--window", "--threshold", "--spectra", "--gnuplot", "--output"]),
        ("fit", &["--model", "--input", "--window", "--free", "--bounds", "--output"]),
        ("account", &["--isub", "--dt", "--tau", "--idc", "--csv"]),
        ("spectrum", &["--b-field", "--g-factor", "--width", "--v-min", "--v-max", "--points", "--gnuplot", "--output"]),
        ("reproduce-paper", &["--dt", "--washout-temperature", "--gnuplot"]),
    ];
    for (sub, list) in flags {
        let text = help_text(Some(sub));
        for flag in list.iter().chain(["--params", "--out", "--seed", "--set", "--temperature"].iter()) {
            let line = text
                .lines()
                .find(|l| l.trim_start().starts_with(flag))
                .unwrap_or_else(|| panic!("{sub}: {flag} missing"));
            assert!(line.trim().len() > flag.len() + 12, "{sub}: {flag} undocumented");
        }
    }
}
