use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qdm_core::DeviceParams;

use crate::error::{CliError, CliResult};

/// Output directory writer. Every file goes through a temp file in the
/// same directory and is renamed into place.
pub struct OutDir {
    root: PathBuf,
    gnuplot: bool,
}

impl OutDir {
    pub fn create(root: &Path, gnuplot: bool) -> CliResult<Self> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            gnuplot,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let target = self.path(name);
        let fail = |e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", target.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(fail)?;
        tmp.write_all(contents.as_bytes()).map_err(fail)?;
        tmp.as_file().sync_all().map_err(fail)?;
        tmp.persist(&target).map_err(|e| fail(e.error))?;
        Ok(target)
    }

    /// Writes `name` and, when enabled, a `.gp` script plotting column `y`
    /// against column 1.
    pub fn write_plotted(&self, name: &str, contents: &str, plot: &Plot) -> CliResult<PathBuf> {
        let path = self.write(name, contents)?;
        if self.gnuplot {
            let stem = name.strip_suffix(".csv").unwrap_or(name);
            self.write(&format!("{stem}.gp"), &plot.script(name))?;
        }
        Ok(path)
    }
}

pub struct Plot {
    pub xlabel: &'static str,
    pub ylabel: &'static str,
    pub columns: &'static [usize],
    pub logx: bool,
}

impl Plot {
    fn script(&self, csv: &str) -> String {
        let stem = csv.strip_suffix(".csv").unwrap_or(csv);
        let mut s = String::new();
        s.push_str("set datafile separator ','\n");
        s.push_str("set key autotitle columnhead\n");
        if self.logx {
            s.push_str("set logscale x\n");
        }
        s.push_str(&format!("set xlabel '{}'\nset ylabel '{}'\n", self.xlabel, self.ylabel));
        s.push_str(&format!("set terminal pngcairo size 900,600\nset output '{stem}.png'\n"));
        let series: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("'{csv}' using 1:{c} with lines"))
            .collect();
        s.push_str(&format!("plot {}\n", series.join(", ")));
        s
    }
}

/// `# key = value` header block: tool line, seed, then every parameter.
pub fn header(command: &str, seed: u64, params: &DeviceParams) -> String {
    let mut s = format!("# qdm {command}\n# seed = {seed}\n");
    for (k, v) in params.entries() {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    s
}
