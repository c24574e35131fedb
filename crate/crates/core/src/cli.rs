//! Command-line front end: configuration, the eight subcommands, CSV/JSON output.
//!
//! Exit codes: 0 ok, 1 configuration error, 2 numerical failure, 3 `--check` failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::energy::EnergyContext;
use crate::ensemble::{build_covariance, empirical_dos, empirical_green_pair, CovarianceKind, Smoothing};
use crate::error::{Error, Result};
use crate::field::Grid;
use crate::observables::{build_defect_cache, linear_fit, CacheOptions, FiniteChain};
use crate::transfer::TransferContext;
use crate::wkb::{solve_eigenfunction, EigenOptions};

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "BANDDOS_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "banddos",
    version,
    about = "Density of states and correlators of 1D Gaussian band matrices by transfer operators",
    after_help = "Every flag can also be given as `key = value` in a --config file; flags win.\n\
                  Set BANDDOS_THREADS to fix the number of worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Identities,
    GapScan,
    Eigenfunction,
    Dos,
    Correlator,
    Derivative,
    Montecarlo,
    Compare,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact operator identities of the discretized transfer operator
    Identities(Flags),
    /// Spectral gap and Schur norms of the symmetrized kernel over W
    GapScan(Flags),
    /// Top eigenfunction by defect correction of the WKB ansatz
    Eigenfunction(Flags),
    /// rho_sc, rho and rho_N with dρ_N/dE
    Dos(Flags),
    /// Pair correlator <G_yy' G_y'y> along a row of the chain
    Correlator(Flags),
    /// Energy derivatives of rho_N up to --order (at most 3)
    Derivative(Flags),
    /// Monte Carlo density of states of the band-matrix ensemble
    Montecarlo(Flags),
    /// Transfer-operator rho_N against Monte Carlo with z-scores
    Compare(Flags),
}

impl Command {
    fn split(self) -> (CommandKind, Flags) {
        match self {
            Self::Identities(f) => (CommandKind::Identities, f),
            Self::GapScan(f) => (CommandKind::GapScan, f),
            Self::Eigenfunction(f) => (CommandKind::Eigenfunction, f),
            Self::Dos(f) => (CommandKind::Dos, f),
            Self::Correlator(f) => (CommandKind::Correlator, f),
            Self::Derivative(f) => (CommandKind::Derivative, f),
            Self::Montecarlo(f) => (CommandKind::Montecarlo, f),
            Self::Compare(f) => (CommandKind::Compare, f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Energy or comma-separated list of energies
    #[arg(long = "E", visible_alias = "e", value_delimiter = ',', allow_hyphen_values = true)]
    pub e: Option<Vec<f64>>,
    /// Bandwidth or comma-separated list
    #[arg(long = "W", visible_alias = "w", value_delimiter = ',')]
    pub w: Option<Vec<f64>>,
    /// Chain length
    #[arg(long = "N", visible_alias = "n")]
    pub n: Option<usize>,
    /// WKB ansatz order (0, 3, 4 or 5)
    #[arg(long = "M", visible_alias = "m")]
    pub m: Option<usize>,
    /// Grid half-width L
    #[arg(long = "L", visible_alias = "l")]
    pub l: Option<f64>,
    /// Grid points per kernel standard deviation 1/W
    #[arg(long)]
    pub points_per_sigma: Option<f64>,
    /// Convergence tolerance of the eigenfunction series and the norm solver
    #[arg(long)]
    pub tol: Option<f64>,
    /// Cap on the defect-cache length
    #[arg(long)]
    pub j_max: Option<usize>,
    /// Monte Carlo samples
    #[arg(long)]
    pub samples: Option<usize>,
    /// Resolvent regularization; switches `montecarlo` to the resolvent estimator
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Gaussian kernel width for the Monte Carlo density (default 3·4/N)
    #[arg(long)]
    pub kernel_width: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Covariance profile: laplacian or uniform
    #[arg(long)]
    pub kind: Option<String>,
    /// Reference site of `correlator` (default N/2)
    #[arg(long)]
    pub y: Option<usize>,
    /// Largest separation of `correlator` (default 5W)
    #[arg(long)]
    pub dmax: Option<usize>,
    /// Highest derivative of `derivative`
    #[arg(long)]
    pub order: Option<usize>,
    /// Output file (default stdout)
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Write to DIR/<command>-<config hash>.<ext> instead of stdout
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Verify the command's acceptance invariants and exit 3 on violation
    #[arg(long)]
    pub check: bool,
}

/// Fully resolved configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub points_per_sigma: f64,
    pub tol: f64,
    pub j_max: Option<usize>,
    pub samples: usize,
    pub epsilon: Option<f64>,
    pub kernel_width: Option<f64>,
    pub seed: u64,
    pub kind: CovarianceKind,
    pub y: Option<usize>,
    pub dmax: Option<usize>,
    pub order: usize,
    pub output: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub format: Format,
    pub check: bool,
}

impl RunConfig {
    pub fn defaults(command: CommandKind) -> Self {
        Self {
            command,
            e: vec![1.0],
            w: vec![8.0],
            n: 256,
            m: 3,
            l: crate::field::DEFAULT_HALF_WIDTH,
            points_per_sigma: crate::field::DEFAULT_POINTS_PER_SIGMA,
            tol: 1e-10,
            j_max: None,
            samples: 200,
            epsilon: None,
            kernel_width: None,
            seed: 7,
            kind: CovarianceKind::Laplacian,
            y: None,
            dmax: None,
            order: 1,
            output: None,
            out_dir: None,
            format: Format::Csv,
            check: false,
        }
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<Self> {
        let mut c = Self::defaults(command);
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            c.apply_file(&text, path)?;
        }
        c.apply_flags(flags)?;
        c.validate()?;
        Ok(c)
    }

    fn apply_file(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config(format!("{}:{}: {msg}", path.display(), i + 1));
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("field `{key}`: cannot parse `{v}`"))
        }
        fn list(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
            v.split(',').map(|x| num(key, x.trim())).collect()
        }
        let key_norm = key.replace('-', "_");
        match key_norm.as_str() {
            "E" | "e" => self.e = list(key, value)?,
            "W" | "w" => self.w = list(key, value)?,
            "N" | "n" => self.n = num(key, value)?,
            "M" | "m" => self.m = num(key, value)?,
            "L" | "l" => self.l = num(key, value)?,
            "points_per_sigma" => self.points_per_sigma = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "j_max" => self.j_max = Some(num(key, value)?),
            "samples" => self.samples = num(key, value)?,
            "epsilon" => self.epsilon = Some(num(key, value)?),
            "kernel_width" => self.kernel_width = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            "kind" => self.kind = value.parse().map_err(|e: Error| e.to_string())?,
            "y" => self.y = Some(num(key, value)?),
            "dmax" => self.dmax = Some(num(key, value)?),
            "order" => self.order = num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "format" => {
                self.format = Format::from_str(value, true).map_err(|_| format!("field `format`: `{value}`"))?
            }
            "check" => self.check = num(key, value)?,
            _ => return Err(format!("unknown field `{key}`")),
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) -> Result<()> {
        macro_rules! take {
            ($($src:ident => $dst:ident),*) => {$(
                if let Some(v) = f.$src.clone() { self.$dst = v; }
            )*};
        }
        take!(e => e, w => w, n => n, m => m, l => l, points_per_sigma => points_per_sigma,
              tol => tol, samples => samples, seed => seed, order => order, format => format);
        macro_rules! take_opt {
            ($($name:ident),*) => {$( if f.$name.is_some() { self.$name = f.$name.clone(); } )*};
        }
        take_opt!(j_max, epsilon, kernel_width, y, dmax, output, out_dir);
        if let Some(k) = &f.kind {
            self.kind = k.parse()?;
        }
        self.check |= f.check;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.e.is_empty() || self.w.is_empty() {
            return bad("E and W lists must be nonempty".into());
        }
        if let Some(e) = self.e.iter().find(|e| !(e.abs() < 2.0)) {
            return bad(format!("E = {e} outside (-2, 2)"));
        }
        if let Some(w) = self.w.iter().find(|w| !(**w >= 1.0)) {
            return bad(format!("W = {w} must be >= 1"));
        }
        if self.n < 2 {
            return bad("N must be >= 2".into());
        }
        if ![0, 3, 4, 5].contains(&self.m) {
            return bad(format!("M = {} not in {{0, 3, 4, 5}}", self.m));
        }
        if !(1..=3).contains(&self.order) {
            return bad(format!("order = {} not in 1..=3", self.order));
        }
        if self.samples < 2 {
            return bad("samples must be >= 2".into());
        }
        if self.epsilon.is_some_and(|e| !(e > 0.0)) || self.kernel_width.is_some_and(|e| !(e > 0.0)) {
            return bad("epsilon and kernel_width must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        Ok(())
    }

    /// Canonical `key = value` lines, in field order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        if let Value::Object(map) = v {
            for (k, v) in map {
                let s = match v {
                    Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                    Value::String(s) => s,
                    Value::Null => "default".into(),
                    other => other.to_string(),
                };
                out.push((k, s));
            }
        }
        out
    }

    /// FNV-1a of the echoed configuration, minus output placement.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, v) in self.echo() {
            if matches!(k.as_str(), "output" | "out_dir" | "format") {
                continue;
            }
            for b in k.bytes().chain(*b"=").chain(v.bytes()).chain(*b"\n") {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn grid(&self, w: f64) -> Result<Grid> {
        Grid::new(w, self.points_per_sigma, self.l)
    }

    fn transfer(&self, e: f64, w: f64) -> Result<TransferContext> {
        TransferContext::new(EnergyContext::new(e)?, w, &self.grid(w)?)
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            order: self.m,
            tol: self.tol,
            n_max: None,
        }
    }

    fn cache_options(&self) -> CacheOptions {
        CacheOptions {
            j_cap: Some(self.j_max.map_or(self.n - 1, |j| j.min(self.n - 1))),
            ..CacheOptions::default()
        }
    }

    fn product(&self) -> Vec<(f64, f64)> {
        self.e.iter().flat_map(|&e| self.w.iter().map(move |&w| (e, w))).collect()
    }
}

/// Result table plus diagnostics and check outcomes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
    pub diagnostics: BTreeMap<String, Value>,
    pub check_failures: Vec<String>,
}

impl Report {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            ..Self::default()
        }
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.check_failures.push(what.into());
        }
    }

    /// CSV with `#` header lines carrying the configuration.
    pub fn write_csv(&self, cfg: &RunConfig, timestamp: Option<u64>, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# banddos {}", env!("CARGO_PKG_VERSION"))?;
        for (k, v) in cfg.echo() {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "# config_hash = {:016x}", cfg.hash())?;
        if let Some(t) = timestamp {
            writeln!(out, "# timestamp = {t}")?;
        }
        for (k, v) in &self.diagnostics {
            writeln!(out, "# diag.{k} = {v}")?;
        }
        for f in &self.check_failures {
            writeln!(out, "# check_failed: {f}")?;
        }
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    Value::Null => "NaN".into(),
                    other => other.to_string(),
                })
                .collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self, cfg: &RunConfig, timestamp: Option<u64>) -> Value {
        let results: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().map(|c| c.to_string()).zip(r.iter().cloned()).collect()))
            .collect();
        let mut v = json!({
            "config": cfg,
            "config_hash": format!("{:016x}", cfg.hash()),
            "results": results,
            "diagnostics": self.diagnostics,
            "check_failures": self.check_failures,
            "versions": { "banddos": env!("CARGO_PKG_VERSION") },
        });
        if let Some(t) = timestamp {
            v["timestamp"] = json!(t);
        }
        v
    }
}

fn f(x: f64) -> Value {
    // NaN and infinities have no JSON form
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn elapsed(cfg: &RunConfig, t: Instant) -> Value {
    // byte-identical reruns in check mode
    if cfg.check {
        f(0.0)
    } else {
        f(t.elapsed().as_secs_f64())
    }
}

/// Runs one resolved command.
pub fn run(cfg: &RunConfig) -> Result<Report> {
    match cfg.command {
        CommandKind::Identities => identities(cfg),
        CommandKind::GapScan => gap_scan(cfg),
        CommandKind::Eigenfunction => eigenfunction(cfg),
        CommandKind::Dos => dos(cfg),
        CommandKind::Correlator => correlator(cfg),
        CommandKind::Derivative => derivative(cfg),
        CommandKind::Montecarlo => montecarlo(cfg),
        CommandKind::Compare => compare(cfg),
    }
}

fn identities(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&["E", "W", "h", "identity", "rel_error"]);
    let results: Vec<Result<_>> = cfg
        .product()
        .into_par_iter()
        .map(|(e, w)| cfg.transfer(e, w)?.verify_exact_identities())
        .collect();
    for r in results {
        let r = r?;
        for (name, err) in &r.errors {
            rep.rows.push(vec![f(r.e), f(r.w), f(r.h), json!(name), f(*err)]);
            rep.require(*err < 1e-6, format!("{name} at E={} W={}: {err:.3e} >= 1e-6", r.e, r.w));
        }
    }
    Ok(rep)
}

fn gap_scan(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&[
        "E",
        "W",
        "sigma2",
        "gap",
        "gap_times_W",
        "norm_inf",
        "one_minus_norm_inf_times_W2",
        "matvecs",
        "runtime_s",
    ]);
    // sequential: each point already saturates the smoother's threads
    for &e in &cfg.e {
        let mut pts = Vec::new();
        for &w in &cfg.w {
            let t = Instant::now();
            let r = cfg.transfer(e, w)?.kernel_norms(2000, cfg.tol)?;
            pts.push((w.ln(), r.gap.ln()));
            rep.rows.push(vec![
                f(e),
                f(w),
                f(r.sigma2),
                f(r.gap),
                f(r.gap * w),
                f(r.norm_inf),
                f((1.0 - r.norm_inf) * w * w),
                json!(r.iterations),
                elapsed(cfg, t),
            ]);
            rep.require(r.sigma2 < 1.0, format!("sigma2 = {} >= 1 at E={e} W={w}", r.sigma2));
            let s = (1.0 - r.norm_inf) * w * w;
            rep.require((0.05..=50.0).contains(&s), format!("(1-|K|_inf)W^2 = {s} at E={e} W={w}"));
        }
        if pts.len() >= 2 {
            let slope = linear_fit(&pts).0;
            rep.diagnostics.insert(format!("gap_slope_E{e}"), f(slope));
            rep.require((-1.3..=-0.7).contains(&slope), format!("gap slope {slope} outside [-1.3, -0.7]"));
        }
    }
    Ok(rep)
}

fn eigenfunction(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&[
        "E",
        "W",
        "M",
        "iterations",
        "residual",
        "u0_re",
        "u0_im",
        "contraction",
        "defect_inf",
        "runtime_s",
    ]);
    for (e, w) in cfg.product() {
        let t = Instant::now();
        let tc = cfg.transfer(e, w)?;
        let eig = solve_eigenfunction(&tc, cfg.eigen_options())?;
        let u0 = eig.u.at_origin();
        let dinf = eig.defect_norms.get(f64::INFINITY).map_or(f64::NAN, |d| d.v);
        rep.rows.push(vec![
            f(e),
            f(w),
            json!(cfg.m),
            json!(eig.iterations),
            f(eig.residual),
            f(u0.re),
            f(u0.im),
            f(eig.contraction().unwrap_or(f64::NAN)),
            f(dinf),
            elapsed(cfg, t),
        ]);
        rep.require(eig.residual < 1e-8, format!("residual {} at E={e} W={w}", eig.residual));
        rep.require((u0 - 1.0).norm() < 1e-10, format!("u(0) = {u0} at E={e} W={w}"));
    }
    Ok(rep)
}

fn dos(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&["E", "W", "N", "rho_sc", "rho_inf", "rho_N", "drho_dE", "runtime_s"]);
    for (e, w) in cfg.product() {
        let t = Instant::now();
        let tc = cfg.transfer(e, w)?;
        let eig = solve_eigenfunction(&tc, cfg.eigen_options())?;
        let cache = build_defect_cache(&tc, &eig, cfg.cache_options())?;
        let chain = FiniteChain::new(&tc, &eig, &cache, cfg.n)?;
        let r = chain.rho_finite()?;
        let d = chain.trace_derivative(1)?;
        rep.rows.push(vec![
            f(e),
            f(w),
            json!(cfg.n),
            f(r.rho_sc),
            f(r.rho_inf),
            f(r.rho_n),
            f(d),
            elapsed(cfg, t),
        ]);
        rep.diagnostics.insert(format!("j_max_E{e}_W{w}"), json!(r.j_max));
        rep.diagnostics.insert(format!("tail_bound_E{e}_W{w}"), f(r.tail_bound));
        let asym = (1..=cfg.n)
            .map(|y| (r.site_profile[y - 1] - r.site_profile[cfg.n - y]).norm())
            .fold(0.0, f64::max);
        rep.require(asym < 1e-10, format!("site profile asymmetry {asym:.3e} at E={e} W={w}"));
        rep.require(
            r.rho_inf > 0.0 && r.rho_n > 0.0,
            format!("non-positive density at E={e} W={w}"),
        );
    }
    Ok(rep)
}

fn correlator(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&["E", "W", "N", "y", "yprime", "re", "im", "abs"]);
    for (e, w) in cfg.product() {
        let tc = cfg.transfer(e, w)?;
        let eig = solve_eigenfunction(&tc, cfg.eigen_options())?;
        let cache = build_defect_cache(&tc, &eig, cfg.cache_options())?;
        let chain = FiniteChain::new(&tc, &eig, &cache, cfg.n)?;
        let y = cfg.y.unwrap_or(cfg.n / 2).clamp(1, cfg.n);
        let dmax = cfg.dmax.unwrap_or((5.0 * w).round() as usize).min(cfg.n - y);
        let vals: Vec<Result<_>> = (0..=dmax)
            .into_par_iter()
            .map(|d| chain.green_pair(y, y + d))
            .collect();
        let mut pts = Vec::new();
        for (d, g) in vals.into_iter().enumerate() {
            let g = g?;
            rep.rows.push(vec![f(e), f(w), json!(cfg.n), json!(y), json!(y + d), f(g.re), f(g.im), f(g.norm())]);
            if d as f64 >= w && g.norm() > 0.0 {
                pts.push((d as f64, g.norm().ln()));
            }
        }
        if pts.len() >= 2 {
            let slope = linear_fit(&pts).0;
            rep.diagnostics.insert(format!("decay_slope_E{e}_W{w}"), f(slope));
            rep.require(slope < 0.0, format!("correlator does not decay at E={e} W={w}: slope {slope}"));
        }
    }
    Ok(rep)
}

fn derivative(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&["E", "W", "N", "n", "value", "runtime_s"]);
    for (e, w) in cfg.product() {
        let tc = cfg.transfer(e, w)?;
        let eig = solve_eigenfunction(&tc, cfg.eigen_options())?;
        let cache = build_defect_cache(&tc, &eig, cfg.cache_options())?;
        let chain = FiniteChain::new(&tc, &eig, &cache, cfg.n)?;
        for n in 1..=cfg.order {
            let t = Instant::now();
            let v = chain.trace_derivative(n)?;
            rep.rows.push(vec![f(e), f(w), json!(cfg.n), json!(n), f(v), elapsed(cfg, t)]);
            rep.require(v.is_finite(), format!("non-finite derivative n={n} at E={e} W={w}"));
        }
    }
    Ok(rep)
}

fn smoothing(cfg: &RunConfig) -> Smoothing {
    match (cfg.epsilon, cfg.kernel_width) {
        (_, Some(s)) => Smoothing::KernelWidth(s),
        (Some(e), None) => Smoothing::Epsilon(e),
        (None, None) => Smoothing::default_for(cfg.n),
    }
}

fn montecarlo(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&["E", "mean", "se", "samples", "N", "W", "kind", "smoothing"]);
    for &w in &cfg.w {
        let cov = build_covariance(cfg.n, w, cfg.kind)?;
        let st = empirical_dos(&cov, cfg.samples, cfg.seed, &cfg.e, smoothing(cfg))?;
        for i in 0..st.energies.len() {
            rep.rows.push(vec![
                f(st.energies[i]),
                f(st.mean[i]),
                f(st.se[i]),
                json!(st.samples),
                json!(cfg.n),
                f(w),
                json!(cfg.kind.to_string()),
                json!(st.smoothing.to_string()),
            ]);
        }
        rep.diagnostics.insert(format!("outside_fraction_W{w}"), f(st.outside_fraction));
        rep.diagnostics.insert(format!("smoothing_bias_budget_W{w}"), f(st.smoothing_bias_budget()));
        rep.require(st.outside_fraction < 0.01, format!("{} of eigenvalues outside [-2.5, 2.5]", st.outside_fraction));
    }
    Ok(rep)
}

fn compare(cfg: &RunConfig) -> Result<Report> {
    let mut rep = Report::new(&[
        "E", "W", "N", "rho_N", "mc_mean", "mc_se", "z", "bias_budget", "pass",
    ]);
    for &w in &cfg.w {
        let cov = build_covariance(cfg.n, w, cfg.kind)?;
        let st = empirical_dos(&cov, cfg.samples, cfg.seed, &cfg.e, smoothing(cfg))?;
        let budget = st.smoothing_bias_budget();
        for (i, &e) in cfg.e.iter().enumerate() {
            let tc = cfg.transfer(e, w)?;
            let eig = solve_eigenfunction(&tc, cfg.eigen_options())?;
            let cache = build_defect_cache(&tc, &eig, cfg.cache_options())?;
            let r = FiniteChain::new(&tc, &eig, &cache, cfg.n)?.rho_finite()?;
            let diff = r.rho_n - st.mean[i];
            let pass = diff.abs() < 3.0 * st.se[i] + budget;
            rep.rows.push(vec![
                f(e),
                f(w),
                json!(cfg.n),
                f(r.rho_n),
                f(st.mean[i]),
                f(st.se[i]),
                f(diff / st.se[i]),
                f(budget),
                json!(pass),
            ]);
            rep.require(pass, format!("E={e} W={w}: |rho_N - mc| = {:.3e}", diff.abs()));
        }
    }
    Ok(rep)
}

/// Cross-check of `green_pair` against the resolvent Monte Carlo at `ε` and `ε/2`.
pub fn compare_green_pair(cfg: &RunConfig, e: f64, w: f64, separations: &[usize]) -> Result<Vec<GreenPairComparison>> {
    let n = cfg.n;
    let y = cfg.y.unwrap_or(n / 2).clamp(1, n);
    let tc = cfg.transfer(e, w)?;
    let eig = solve_eigenfunction(&tc, cfg.eigen_options())?;
    let cache = build_defect_cache(&tc, &eig, cfg.cache_options())?;
    let chain = FiniteChain::new(&tc, &eig, &cache, n)?;
    let eps = cfg.epsilon.unwrap_or(8.0 / n as f64);
    let pairs: Vec<(usize, usize)> = separations.iter().map(|&d| (y - 1, y - 1 + d)).collect();
    let cov = build_covariance(n, w, cfg.kind)?;
    let mc = empirical_green_pair(&cov, e, eps, cfg.samples, cfg.seed, &pairs)?;
    separations
        .iter()
        .zip(mc)
        .map(|(&d, m)| {
            let transfer = chain.green_pair(y, y + d)?;
            let a = m.at_epsilon;
            let b = m.at_half_epsilon.mean;
            let budget = (2.0 * (a.mean.re - b.re).abs(), 2.0 * (a.mean.im - b.im).abs());
            let diff = transfer - a.mean;
            let pass = diff.re.abs() < 3.0 * a.se_re + budget.0 && diff.im.abs() < 3.0 * a.se_im + budget.1;
            Ok(GreenPairComparison {
                d,
                transfer,
                mc: a,
                richardson: m.richardson,
                bias_budget: budget,
                pass,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenPairComparison {
    pub d: usize,
    pub transfer: num_complex::Complex64,
    pub mc: crate::ensemble::ComplexEstimate,
    pub richardson: num_complex::Complex64,
    /// Per-component ε-bias budget `2|f(ε) − f(ε/2)|`.
    pub bias_budget: (f64, f64),
    pub pass: bool,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} = `{v}` is not a thread count")))?;
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn emit(cfg: &RunConfig, rep: &Report) -> Result<()> {
    let timestamp = (!cfg.check).then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    let ext = match cfg.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let path = match (&cfg.output, &cfg.out_dir) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir)?;
            let name = serde_json::to_value(cfg.command).expect("serializes");
            Some(dir.join(format!("{}-{:016x}.{ext}", name.as_str().unwrap_or("run"), cfg.hash())))
        }
        (None, None) => None,
    };
    let mut buf = Vec::new();
    match cfg.format {
        Format::Csv => rep.write_csv(cfg, timestamp, &mut buf)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, &rep.to_json(cfg, timestamp)).map_err(std::io::Error::other)?;
            buf.push(b'\n');
        }
    }
    match path {
        Some(p) => std::fs::write(p, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

/// Parses `args`, runs, writes output and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (kind, flags) = cli.command.split();
    let outcome = configure_threads()
        .and_then(|()| RunConfig::resolve(kind, &flags))
        .and_then(|cfg| run(&cfg).map(|rep| (cfg, rep)))
        .and_then(|(cfg, rep)| emit(&cfg, &rep).map(|()| (cfg, rep)));
    match outcome {
        Ok((cfg, rep)) => {
            if cfg.check && !rep.check_failures.is_empty() {
                for f in &rep.check_failures {
                    eprintln!("check failed: {f}");
                }
                EXIT_CHECK
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> RunConfig {
        let cli = Cli::try_parse_from(std::iter::once("banddos").chain(args.iter().copied())).unwrap();
        let (k, f) = cli.command.split();
        RunConfig::resolve(k, &f).unwrap()
    }

    #[test]
    fn flags_and_lists() {
        let c = parse(&["dos", "--E", "0,0.5,-1", "--W", "8", "--N", "64", "--format", "json"]);
        assert_eq!(c.command, CommandKind::Dos);
        assert_eq!(c.e, vec![0.0, 0.5, -1.0]);
        assert_eq!(c.n, 64);
        assert_eq!(c.format, Format::Json);
        assert_eq!(c.m, 3);
    }

    #[test]
    fn config_file_with_flag_override() {
        let dir = std::env::temp_dir().join(format!("banddos-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.cfg");
        std::fs::write(&p, "# comment\nE = 0.5, 1.0\nN = 128\nseed = 11 # trailing\nkind = uniform\n").unwrap();
        let c = parse(&["montecarlo", "--config", p.to_str().unwrap(), "--N", "64"]);
        assert_eq!(c.e, vec![0.5, 1.0]);
        assert_eq!(c.n, 64);
        assert_eq!(c.seed, 11);
        assert_eq!(c.kind, CovarianceKind::Uniform);

        std::fs::write(&p, "E = 1\nbogus = 3\n").unwrap();
        let cli = Cli::try_parse_from(["banddos", "dos", "--config", p.to_str().unwrap()]).unwrap();
        let (k, f) = cli.command.split();
        let err = RunConfig::resolve(k, &f).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("bogus"), "{err}");
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["banddos", "dos", "--E", "3"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["banddos", "dos", "--W", "abc"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["banddos", "nosuch"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["banddos", "dos", "--N", "1"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["banddos", "--help"]), EXIT_OK);
    }

    #[test]
    fn hash_ignores_output_placement() {
        let a = parse(&["dos"]);
        let b = parse(&["dos", "--output", "/tmp/x.csv", "--format", "json"]);
        let c = parse(&["dos", "--N", "100"]);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn csv_layout_is_deterministic_in_check_mode() {
        let cfg = parse(&["montecarlo", "--E", "0,1", "--W", "2", "--N", "16", "--samples", "8", "--check"]);
        let rep = run(&cfg).unwrap();
        let mut a = Vec::new();
        rep.write_csv(&cfg, None, &mut a).unwrap();
        let mut b = Vec::new();
        run(&cfg).unwrap().write_csv(&cfg, None, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.lines().any(|l| l == "E,mean,se,samples,N,W,kind,smoothing"));
        assert!(text.contains("# seed = 7"));
        let json = rep.to_json(&cfg, None);
        assert_eq!(json["results"].as_array().unwrap().len(), 2);
        assert!(json["versions"]["banddos"].is_string());
    }
}
