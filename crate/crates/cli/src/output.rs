//! Output directory bookkeeping, CSV headers, and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::svg::{render_svg, PlotSpec, Series};

pub const MSD_HEADER: &str = "t,mean_sq_graph_dist,stderr,mean_sq_l2,stderr_l2,replicas,p,mu,lattice,d,seed";
pub const SIGMA_HEADER: &str =
    "lattice,d,p,mu,t,replicas,sigma2,ci_lo,ci_hi,sigma2_l2,ci_lo_l2,ci_hi_l2,slope";
pub const ONEARM_HEADER: &str = "r,p,trials,successes,phat,ci_lo,ci_hi";
pub const WINDOW_HEADER: &str = "r,p_base,p_window,phat_base,phat_window,ratio";
pub const HCLUSTER_HEADER: &str = "mu,t,r,p_static,trials,dynamical,static_equivalent,z,p_value";
pub const THETA_HEADER: &str = "side,p,reps,hits,theta,ci_lo,ci_hi";
pub const EVOLVING_HEADER: &str = "instance,side,mu,p,phi,phi_bound,lhs,rhs,pass";
pub const DF_HEADER: &str = "f,estimator_walk,estimator_set,z";
pub const GROWTH_HEADER: &str = "m,size_mean,size_q10,size_q90";
pub const GOOD_TIMES_HEADER: &str = "run,good_fraction,excellent_fraction";
pub const TAIL_HEADER: &str = "l,count,n,survival,ci_lo,ci_hi";
pub const MARKOV_HEADER: &str = "k,ratio,stderr,ci_lo,ci_hi";
pub const ENV_DUMP_HEADER: &str = "time,unit,state";

/// Every CSV the tool writes, by file name.
pub const CSV_SCHEMAS: &[(&str, &str)] = &[
    ("msd.csv", MSD_HEADER),
    ("sigma.csv", SIGMA_HEADER),
    ("onearm.csv", ONEARM_HEADER),
    ("window.csv", WINDOW_HEADER),
    ("hcluster.csv", HCLUSTER_HEADER),
    ("theta.csv", THETA_HEADER),
    ("evolving.csv", EVOLVING_HEADER),
    ("df.csv", DF_HEADER),
    ("growth.csv", GROWTH_HEADER),
    ("good_times.csv", GOOD_TIMES_HEADER),
    ("tail.csv", TAIL_HEADER),
    ("markov_type.csv", MARKOV_HEADER),
    ("env.csv", ENV_DUMP_HEADER),
];

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes artifacts into one directory and remembers their checksums.
pub struct Output {
    dir: PathBuf,
    svg: bool,
    files: Vec<FileRecord>,
}

impl Output {
    pub fn new(dir: &Path, svg: bool) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            svg,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileRecord {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn csv<I: IntoIterator<Item = String>>(&mut self, name: &str, header: &str, rows: I) -> io::Result<()> {
        let mut text = String::from(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        self.raw(name, text.as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.raw(name, text.as_bytes())
    }

    /// Render a chart when `--svg` is set. Charts are a convenience, so a
    /// series that cannot be drawn is reported on stderr and skipped.
    pub fn chart(&mut self, name: &str, series: &[Series], spec: &PlotSpec) -> io::Result<()> {
        if !self.svg {
            return Ok(());
        }
        match render_svg(series, spec) {
            Ok(doc) => self.raw(name, doc.as_bytes()),
            Err(e) => {
                eprintln!("warning: skipped {name}: {e}");
                Ok(())
            }
        }
    }
}

/// Outcome of one `--check` criterion.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    /// SHA-256 of the canonical resolved configuration without `threads`
    /// and `out`, prefixed by the subcommand name.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub wall_time_secs: f64,
    pub files: Vec<FileRecord>,
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
}

pub fn version_string() -> String {
    match option_env!("DYNPERC_GIT_DESCRIBE") {
        Some(rev) => format!("v{}-g{rev}", env!("CARGO_PKG_VERSION")),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn config_hash(subcommand: &str, config: &serde_json::Value) -> String {
    let mut canon = config.clone();
    if let Some(map) = canon.as_object_mut() {
        map.remove("threads");
        map.remove("out");
    }
    // serde_json maps are ordered by key, so this text is canonical.
    let text = format!("{subcommand}\n{canon}");
    sha256_hex(text.as_bytes())
}

/// CSV field for an optional number.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
