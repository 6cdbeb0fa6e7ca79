//! Experiment configurations: JSON files merged with command-line flags.
//!
//! Every configuration rejects unknown keys. Missing keys take the defaults
//! below. The JSON schema published in `docs/` is generated from these types.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dynperc_core::env::STANDING_MU_BOUND;
use dynperc_core::lattice::LatticeKind;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LatticeName {
    /// `Z^d` with bond percolation.
    Hypercubic,
    /// Triangular lattice with site percolation.
    Triangular,
}

impl FromStr for LatticeName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hypercubic" | "z" | "zd" => Ok(LatticeName::Hypercubic),
            "triangular" | "tri" => Ok(LatticeName::Triangular),
            _ => Err(format!("unknown lattice `{s}` (expected hypercubic or triangular)")),
        }
    }
}

pub fn lattice_kind(name: LatticeName, d: usize) -> Result<LatticeKind, ConfigError> {
    match name {
        LatticeName::Hypercubic => LatticeKind::hypercubic(d).map_err(|e| ConfigError(e.to_string())),
        LatticeName::Triangular if d == 2 => Ok(LatticeKind::triangular()),
        LatticeName::Triangular => bad(format!("the triangular lattice is two-dimensional, got d = {d}")),
    }
}

/// A density given as a number or as a regime relative to `p_c`:
/// `subcritical = p_c/2`, `critical = p_c`, `supercritical = p_c + 0.6(1 - p_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum PSpec {
    Value(f64),
    Regime(Regime),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl FromStr for PSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subcritical" => Ok(PSpec::Regime(Regime::Subcritical)),
            "critical" => Ok(PSpec::Regime(Regime::Critical)),
            "supercritical" => Ok(PSpec::Regime(Regime::Supercritical)),
            _ => s
                .parse::<f64>()
                .map(PSpec::Value)
                .map_err(|_| format!("`{s}` is neither a number nor a regime tag")),
        }
    }
}

impl PSpec {
    pub fn resolve(self, lattice: &LatticeKind) -> Result<f64, ConfigError> {
        let p = match self {
            PSpec::Value(p) => p,
            PSpec::Regime(r) => {
                let pc = lattice
                    .critical_probability()
                    .ok_or_else(|| ConfigError(format!("no exact critical value for {lattice}; give p as a number")))?;
                match r {
                    Regime::Subcritical => pc / 2.0,
                    Regime::Critical => pc,
                    Regime::Supercritical => pc + 0.6 * (1.0 - pc),
                }
            }
        };
        check_unit("p", p)?;
        Ok(p)
    }
}

fn check_unit(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&v) {
        return bad(format!("{name} must lie in [0, 1], got {v}"));
    }
    Ok(())
}

fn check_mu(mu: f64, allow_large: bool) -> Result<(), ConfigError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return bad(format!("mu must be positive, got {mu}"));
    }
    if !allow_large && mu > STANDING_MU_BOUND {
        return bad(format!("mu = {mu} exceeds 1/e; pass --allow-large-mu to lift the bound"));
    }
    Ok(())
}

fn check_min<T: PartialOrd + fmt::Display>(name: &str, v: T, min: T) -> Result<(), ConfigError> {
    if v < min {
        return bad(format!("{name} must be >= {min}, got {v}"));
    }
    Ok(())
}

fn check_nonempty<T>(name: &str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        return bad(format!("{name} must not be empty"));
    }
    Ok(())
}

fn check_torus_side(side: usize, max: usize) -> Result<(), ConfigError> {
    if side < 4 || side % 2 != 0 || side > max {
        return bad(format!("torus side must be even and in [4, {max}], got {side}"));
    }
    Ok(())
}

/// Largest torus side for set and cluster scans.
pub const MAX_SCAN_SIDE: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MsdConfig {
    pub lattice: LatticeName,
    pub d: usize,
    pub p: PSpec,
    pub mu: f64,
    pub t_max: f64,
    /// Checkpoint times; defaults to ten evenly spaced times ending at `t_max`.
    pub checkpoints: Option<Vec<f64>>,
    #[schemars(range(min = 2))]
    pub replicas: usize,
    pub allow_large_mu: bool,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for MsdConfig {
    fn default() -> Self {
        MsdConfig {
            lattice: LatticeName::Hypercubic,
            d: 2,
            p: PSpec::Regime(Regime::Critical),
            mu: 0.1,
            t_max: 100.0,
            checkpoints: None,
            replicas: 1000,
            allow_large_mu: false,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl MsdConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("replicas", self.replicas, 2)?;
        check_mu(self.mu, self.allow_large_mu)?;
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive");
        }
        if let Some(cps) = &self.checkpoints {
            check_nonempty("checkpoints", cps)?;
            if cps.windows(2).any(|w| w[0] >= w[1]) || cps[0] <= 0.0 || *cps.last().unwrap() > self.t_max {
                return bad("checkpoints must be increasing, positive and at most t_max");
            }
        }
        self.p.resolve(&lattice_kind(self.lattice, self.d)?)?;
        Ok(())
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints
            .clone()
            .unwrap_or_else(|| (1..=10).map(|i| self.t_max * i as f64 / 10.0).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaSweepConfig {
    pub lattice: LatticeName,
    pub d: usize,
    pub ps: Vec<PSpec>,
    pub mus: Vec<f64>,
    pub t: f64,
    #[schemars(range(min = 100))]
    pub replicas: usize,
    pub allow_large_mu: bool,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for SigmaSweepConfig {
    fn default() -> Self {
        SigmaSweepConfig {
            lattice: LatticeName::Hypercubic,
            d: 2,
            ps: vec![
                PSpec::Regime(Regime::Subcritical),
                PSpec::Regime(Regime::Critical),
                PSpec::Regime(Regime::Supercritical),
            ],
            mus: vec![0.02, 0.05, 0.1, 0.2],
            t: 2000.0,
            replicas: 2000,
            allow_large_mu: false,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl SigmaSweepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("replicas", self.replicas, 100)?;
        check_nonempty("ps", &self.ps)?;
        check_nonempty("mus", &self.mus)?;
        for &mu in &self.mus {
            check_mu(mu, self.allow_large_mu)?;
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad("t must be positive");
        }
        let lattice = lattice_kind(self.lattice, self.d)?;
        for p in &self.ps {
            p.resolve(&lattice)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PRuleName {
    /// `p` at every radius.
    Fixed,
    /// `p_c + r^(-1/nu)` at radius `r`.
    CriticalWindow,
}

impl FromStr for PRuleName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(PRuleName::Fixed),
            "critical_window" | "critical-window" => Ok(PRuleName::CriticalWindow),
            _ => Err(format!("unknown p rule `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OneArmConfig {
    pub lattice: LatticeName,
    pub d: usize,
    /// Radii; defaults to the doubling sequence from `r_min` to `r_max`.
    pub radii: Option<Vec<u64>>,
    pub r_min: u64,
    pub r_max: u64,
    pub p: PSpec,
    pub p_rule: PRuleName,
    pub nu: f64,
    #[schemars(range(min = 1))]
    pub trials: u64,
    pub fit_cutoff: f64,
    /// When set, also run the critical-window sweep `p_c + r^(-1/window_nu)`
    /// on the same trial keys and report the ratio of proportions.
    pub window_nu: Option<f64>,
    /// Largest radius whose window ratio is checked.
    pub window_max_r: u64,
    /// Bounds on the window ratio accepted by `--check`.
    pub window_ratio_bounds: (f64, f64),
    /// Expected fitted slope for `--check`; defaults to `-5/48` for the
    /// triangular lattice at `p = 1/2` with the fixed rule.
    pub expected_slope: Option<f64>,
    pub slope_tolerance: f64,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for OneArmConfig {
    fn default() -> Self {
        OneArmConfig {
            lattice: LatticeName::Triangular,
            d: 2,
            radii: None,
            r_min: 8,
            r_max: 256,
            p: PSpec::Regime(Regime::Critical),
            p_rule: PRuleName::Fixed,
            nu: 4.0 / 3.0,
            trials: 100_000,
            fit_cutoff: dynperc_core::percolation::DEFAULT_FIT_CUTOFF,
            window_nu: None,
            window_max_r: 128,
            window_ratio_bounds: (1.0, 3.0),
            expected_slope: None,
            slope_tolerance: 0.02,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl OneArmConfig {
    pub fn radius_list(&self) -> Vec<u64> {
        self.radii.clone().unwrap_or_else(|| {
            let mut r = self.r_min.max(1);
            let mut out = Vec::new();
            while r <= self.r_max {
                out.push(r);
                r *= 2;
            }
            out
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("trials", self.trials, 1)?;
        let radii = self.radius_list();
        check_nonempty("radii", &radii)?;
        if radii.contains(&0) {
            return bad("radii must be positive");
        }
        let lattice = lattice_kind(self.lattice, self.d)?;
        self.p.resolve(&lattice)?;
        if self.p_rule == PRuleName::CriticalWindow || self.window_nu.is_some() {
            if lattice.critical_probability().is_none() {
                return bad("critical-window sweeps need a lattice with an exact critical value");
            }
            for nu in [Some(self.nu), self.window_nu].into_iter().flatten() {
                if !(nu > 0.0) {
                    return bad("nu must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn default_slope(&self) -> Option<f64> {
        if self.expected_slope.is_some() {
            return self.expected_slope;
        }
        let critical = matches!(self.p, PSpec::Regime(Regime::Critical) | PSpec::Value(0.5));
        (self.lattice == LatticeName::Triangular && self.p_rule == PRuleName::Fixed && critical).then_some(-5.0 / 48.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HClusterConfig {
    pub lattice: LatticeName,
    pub d: usize,
    /// Stationary density; defaults to the critical value.
    pub p: PSpec,
    pub mus: Vec<f64>,
    pub ts: Vec<f64>,
    pub r: u64,
    #[schemars(range(min = 1))]
    pub trials: u64,
    /// `--check` fails if any two-proportion p-value is at or below this.
    pub alpha: f64,
    pub allow_large_mu: bool,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for HClusterConfig {
    fn default() -> Self {
        HClusterConfig {
            lattice: LatticeName::Triangular,
            d: 2,
            p: PSpec::Regime(Regime::Critical),
            mus: vec![0.05, 0.2],
            ts: vec![5.0, 20.0],
            r: 16,
            trials: 100_000,
            alpha: 0.01,
            allow_large_mu: false,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl HClusterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("trials", self.trials, 1)?;
        check_min("r", self.r, 1)?;
        check_nonempty("mus", &self.mus)?;
        check_nonempty("ts", &self.ts)?;
        for &mu in &self.mus {
            check_mu(mu, self.allow_large_mu)?;
        }
        if self.ts.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return bad("times must be nonnegative");
        }
        self.p.resolve(&lattice_kind(self.lattice, self.d)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaConfig {
    pub lattice: LatticeName,
    pub d: usize,
    pub ps: Vec<PSpec>,
    pub sides: Vec<usize>,
    #[schemars(range(min = 1))]
    pub reps: u64,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for ThetaConfig {
    fn default() -> Self {
        ThetaConfig {
            lattice: LatticeName::Hypercubic,
            d: 2,
            ps: vec![PSpec::Value(0.6), PSpec::Value(0.7), PSpec::Value(0.8)],
            sides: vec![16, 32, 64],
            reps: 200,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl ThetaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("reps", self.reps, 1)?;
        check_nonempty("ps", &self.ps)?;
        check_nonempty("sides", &self.sides)?;
        for &s in &self.sides {
            check_torus_side(s, MAX_SCAN_SIDE)?;
        }
        let lattice = lattice_kind(self.lattice, self.d)?;
        for p in &self.ps {
            p.resolve(&lattice)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EvolvingCheckConfig {
    pub d: usize,
    pub sides: Vec<usize>,
    pub mus: Vec<f64>,
    pub ps: Vec<f64>,
    #[schemars(range(min = 1))]
    pub instances: usize,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for EvolvingCheckConfig {
    fn default() -> Self {
        EvolvingCheckConfig {
            d: 2,
            sides: vec![4, 6],
            mus: vec![0.05, 0.2],
            ps: vec![0.3, 0.5, 0.8],
            instances: 200,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl EvolvingCheckConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("instances", self.instances, 1)?;
        check_nonempty("sides", &self.sides)?;
        check_nonempty("mus", &self.mus)?;
        check_nonempty("ps", &self.ps)?;
        lattice_kind(LatticeName::Hypercubic, self.d)?;
        for &s in &self.sides {
            check_torus_side(s, dynperc_core::evolving::DENSE_MAX_SIDE)?;
        }
        for &mu in &self.mus {
            check_mu(mu, false)?;
        }
        for &p in &self.ps {
            check_unit("p", p)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DfCheckConfig {
    pub d: usize,
    pub side: usize,
    pub p: f64,
    pub mu: f64,
    #[schemars(range(min = 1))]
    pub steps: u64,
    #[schemars(range(min = 2))]
    pub runs: usize,
    /// `--check` fails if any |z| exceeds this.
    pub z_max: f64,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for DfCheckConfig {
    fn default() -> Self {
        DfCheckConfig {
            d: 2,
            side: 4,
            p: 0.5,
            mu: 0.2,
            steps: 5,
            runs: 100_000,
            z_max: 4.0,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl DfCheckConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("steps", self.steps, 1)?;
        check_min("runs", self.runs, 2)?;
        lattice_kind(LatticeName::Hypercubic, self.d)?;
        check_torus_side(self.side, dynperc_core::evolving::DENSE_MAX_SIDE)?;
        check_mu(self.mu, false)?;
        check_unit("p", self.p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub d: usize,
    pub side: usize,
    pub p: f64,
    pub mu: f64,
    #[schemars(range(min = 2))]
    pub steps: u64,
    #[schemars(range(min = 1))]
    pub runs: usize,
    pub fit_from: u64,
    /// `--check` accepts slopes in `[lo, hi] · d/2`.
    pub slope_band: (f64, f64),
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            d: 2,
            side: 128,
            p: 1.0,
            mu: 0.1,
            steps: 100,
            runs: 200,
            fit_from: 10,
            slope_band: (0.8, 1.2),
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("steps", self.steps, 2)?;
        check_min("runs", self.runs, 1)?;
        lattice_kind(LatticeName::Hypercubic, self.d)?;
        check_torus_side(self.side, MAX_SCAN_SIDE)?;
        check_mu(self.mu, false)?;
        check_unit("p", self.p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GoodTimesConfig {
    pub d: usize,
    pub side: usize,
    pub p: f64,
    pub mu: f64,
    #[schemars(range(min = 2))]
    pub horizon: u64,
    #[schemars(range(min = 1))]
    pub runs: usize,
    /// Cluster density; estimated on the same torus when absent.
    pub theta: Option<f64>,
    pub theta_reps: u64,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for GoodTimesConfig {
    fn default() -> Self {
        GoodTimesConfig {
            d: 2,
            side: 64,
            p: 0.8,
            mu: 0.1,
            horizon: 200,
            runs: 500,
            theta: None,
            theta_reps: 400,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl GoodTimesConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("horizon", self.horizon, 2)?;
        check_min("runs", self.runs, 1)?;
        check_min("theta_reps", self.theta_reps, 1)?;
        lattice_kind(LatticeName::Hypercubic, self.d)?;
        check_torus_side(self.side, MAX_SCAN_SIDE)?;
        check_mu(self.mu, false)?;
        check_unit("p", self.p)?;
        if let Some(t) = self.theta {
            if !(t > 0.0 && t <= 1.0) {
                return bad("theta must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    pub lattice: LatticeName,
    pub d: usize,
    pub p: PSpec,
    pub mu: f64,
    pub t: f64,
    #[schemars(range(min = 1000))]
    pub replicas: usize,
    pub l_max: u64,
    pub fit_lo: u64,
    pub fit_hi: u64,
    /// `--check` requires the fit's R² to exceed this.
    pub min_r2: f64,
    pub allow_large_mu: bool,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            lattice: LatticeName::Hypercubic,
            d: 2,
            p: PSpec::Value(1.0),
            mu: 0.1,
            t: 100.0,
            replicas: 100_000,
            l_max: 60,
            fit_lo: 10,
            fit_hi: 40,
            min_r2: 0.95,
            allow_large_mu: false,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl TailConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("replicas", self.replicas, dynperc_core::walker::TAIL_MIN_SAMPLES)?;
        check_mu(self.mu, self.allow_large_mu)?;
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad("t must be positive");
        }
        if self.fit_lo >= self.fit_hi || self.fit_hi > self.l_max {
            return bad("need fit_lo < fit_hi <= l_max");
        }
        self.p.resolve(&lattice_kind(self.lattice, self.d)?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovTypeConfig {
    pub lattice: LatticeName,
    pub d: usize,
    pub p: PSpec,
    pub mu: f64,
    pub s: f64,
    pub ks: Vec<u64>,
    #[schemars(range(min = 2))]
    pub replicas: usize,
    /// `--check` requires every upper 95% bound to be at most this.
    pub bound: f64,
    pub allow_large_mu: bool,
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

impl Default for MarkovTypeConfig {
    fn default() -> Self {
        MarkovTypeConfig {
            lattice: LatticeName::Triangular,
            d: 2,
            p: PSpec::Regime(Regime::Critical),
            mu: 0.1,
            s: 200.0,
            ks: vec![2, 4, 8],
            replicas: 10_000,
            bound: 3.0,
            allow_large_mu: false,
            seed: 1,
            threads: 0,
            out: None,
        }
    }
}

impl MarkovTypeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_min("replicas", self.replicas, 2)?;
        check_nonempty("ks", &self.ks)?;
        if self.ks.contains(&0) {
            return bad("ks must be positive");
        }
        check_mu(self.mu, self.allow_large_mu)?;
        if !(self.s > 0.0 && self.s.is_finite()) {
            return bad("s must be positive");
        }
        self.p.resolve(&lattice_kind(self.lattice, self.d)?)?;
        Ok(())
    }
}

/// JSON schema of every subcommand's configuration.
pub fn schema_document() -> serde_json::Value {
    let defs = [
        ("msd", serde_json::to_value(schemars::schema_for!(MsdConfig))),
        ("sigma-sweep", serde_json::to_value(schemars::schema_for!(SigmaSweepConfig))),
        ("onearm", serde_json::to_value(schemars::schema_for!(OneArmConfig))),
        ("hcluster", serde_json::to_value(schemars::schema_for!(HClusterConfig))),
        ("theta", serde_json::to_value(schemars::schema_for!(ThetaConfig))),
        ("evolving-check", serde_json::to_value(schemars::schema_for!(EvolvingCheckConfig))),
        ("df-check", serde_json::to_value(schemars::schema_for!(DfCheckConfig))),
        ("growth", serde_json::to_value(schemars::schema_for!(GrowthConfig))),
        ("good-times", serde_json::to_value(schemars::schema_for!(GoodTimesConfig))),
        ("tail", serde_json::to_value(schemars::schema_for!(TailConfig))),
        ("markov-type", serde_json::to_value(schemars::schema_for!(MarkovTypeConfig))),
    ];
    let mut map = serde_json::Map::new();
    for (name, schema) in defs {
        map.insert(name.to_string(), schema.expect("schemas serialize"));
    }
    serde_json::json!({
        "title": "dynperc experiment configurations",
        "description": "One schema per subcommand. Unknown keys are rejected; command-line flags override file values.",
        "subcommands": map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_tags_resolve() {
        let z2 = LatticeKind::hypercubic(2).unwrap();
        assert_eq!(PSpec::Regime(Regime::Subcritical).resolve(&z2).unwrap(), 0.25);
        assert_eq!(PSpec::Regime(Regime::Critical).resolve(&z2).unwrap(), 0.5);
        assert!((PSpec::Regime(Regime::Supercritical).resolve(&z2).unwrap() - 0.8).abs() < 1e-15);
        assert!(PSpec::Regime(Regime::Critical).resolve(&LatticeKind::hypercubic(3).unwrap()).is_err());
        assert_eq!("0.3".parse::<PSpec>().unwrap(), PSpec::Value(0.3));
        assert!("hot".parse::<PSpec>().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<MsdConfig>(r#"{"replicas": 5, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let cfg: MsdConfig = serde_json::from_str(r#"{"p": "supercritical", "replicas": 5}"#).unwrap();
        assert_eq!(cfg.replicas, 5);
        assert_eq!(cfg.mu, 0.1);
    }

    #[test]
    fn validation_examples() {
        let zero = MsdConfig {
            replicas: 0,
            ..MsdConfig::default()
        };
        assert!(zero.validate().is_err());
        let large = MsdConfig {
            mu: 0.5,
            ..MsdConfig::default()
        };
        assert!(large.validate().is_err());
        assert!(MsdConfig {
            allow_large_mu: true,
            ..large
        }
        .validate()
        .is_ok());
        assert_eq!(OneArmConfig::default().radius_list(), vec![8, 16, 32, 64, 128, 256]);
        assert_eq!(OneArmConfig::default().default_slope(), Some(-5.0 / 48.0));
        assert!(EvolvingCheckConfig {
            sides: vec![10],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
