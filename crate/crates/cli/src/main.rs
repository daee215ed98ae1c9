use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use pathmix::coupling_lab::{coupling_time, extremal_pair, lemma_ledger, write_ledger_csv, Coupler, CouplingKind};
use pathmix::domain::{Graph, TargetGraph, DEFAULT_BUDGET};
use pathmix::dynamics::{BaseChain, ChainSpec, RandomTape, SignKind};
use pathmix::exact_analysis::{
    bottleneck_report, build_kernel, canonical_congestion, ergodicity_report, poincare_constant, sign_kernel,
    tv_mixing_time, verify_comparison,
};
use pathmix::percolation_lb::{chernoff_check, lb_experiment, segment_layout, LbReport};
use pathmix::wilson_method::{estimate_rho, glauber_rho, wilson_bounds};

const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Parser)]
#[command(name = "pathmix", version, about = "Exact and simulated mixing experiments for colorings of paths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Spectrum and Poincaré constant of the exact kernel.
    Spectrum,
    /// Exact total-variation mixing time.
    Mix,
    /// Eigenvector-statistic bounds for the sign chains.
    Wilson,
    /// Exact one-step drift ledger.
    Drift,
    /// Coupling times of two copies.
    Couple,
    /// Free versus anchor-clamped runs and the Z statistic.
    Percolate,
    /// Glauber versus scan Poincaré comparison.
    Compare,
    /// Canonical-path congestion.
    Congestion,
    /// Communicating classes and the bottleneck example.
    Ergodic,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Mix => "mix",
            Command::Wilson => "wilson",
            Command::Drift => "drift",
            Command::Couple => "couple",
            Command::Percolate => "percolate",
            Command::Compare => "compare",
            Command::Congestion => "congestion",
            Command::Ergodic => "ergodic",
        }
    }
}

/// Every option is also accepted as `key = value` in the config file.
#[derive(Args, Default)]
struct Opts {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    q: Option<String>,
    #[arg(long = "h-file", global = true)]
    h_file: Option<String>,
    #[arg(long = "graph-file", global = true)]
    graph_file: Option<String>,
    /// glauber, scan, reverse or lazy
    #[arg(long, global = true)]
    chain: Option<String>,
    /// Comma-separated 1-based vertices to freeze.
    #[arg(long, global = true)]
    clamp: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    replicates: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    /// Output directory; standard output when absent.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Comma-separated times (percolate).
    #[arg(long, global = true)]
    t: Option<String>,
    #[arg(long, global = true)]
    r: Option<String>,
    #[arg(long, global = true)]
    ell: Option<String>,
    #[arg(long, global = true)]
    horizon: Option<String>,
    #[arg(long, global = true)]
    coupling: Option<String>,
    #[arg(long, global = true)]
    budget: Option<String>,
    /// Clique size of the bottleneck target (ergodic).
    #[arg(long, global = true)]
    k: Option<String>,
}

impl Opts {
    fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
        vec![
            ("n", self.n.as_ref()),
            ("q", self.q.as_ref()),
            ("h-file", self.h_file.as_ref()),
            ("graph-file", self.graph_file.as_ref()),
            ("chain", self.chain.as_ref()),
            ("clamp", self.clamp.as_ref()),
            ("seed", self.seed.as_ref()),
            ("replicates", self.replicates.as_ref()),
            ("eps", self.eps.as_ref()),
            ("out", self.out.as_ref()),
            ("t", self.t.as_ref()),
            ("r", self.r.as_ref()),
            ("ell", self.ell.as_ref()),
            ("horizon", self.horizon.as_ref()),
            ("coupling", self.coupling.as_ref()),
            ("budget", self.budget.as_ref()),
            ("k", self.k.as_ref()),
        ]
    }
}

#[derive(Debug)]
struct CliError(String);

impl From<pathmix::Error> for CliError {
    fn from(e: pathmix::Error) -> Self {
        CliError(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError(e.to_string())
    }
}

impl From<std::fmt::Error> for CliError {
    fn from(e: std::fmt::Error) -> Self {
        CliError(e.to_string())
    }
}

type Res<T> = Result<T, CliError>;

/// Effective settings: config-file entries overridden by flags.
struct Config {
    command: Command,
    values: BTreeMap<String, String>,
}

fn parse_config_file(path: &PathBuf, known: &[&str]) -> Res<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError(format!("config: cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError(format!("config: line {}: expected key = value", i + 1)))?;
        let k = k.trim().trim_start_matches("--").replace('_', "-");
        if !known.contains(&k.as_str()) {
            return Err(CliError(format!("config: line {}: unknown key {k:?}", i + 1)));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

impl Config {
    fn from_cli(cli: &Cli) -> Res<Config> {
        let pairs = cli.opts.pairs();
        let known: Vec<&str> = pairs.iter().map(|(k, _)| *k).collect();
        let mut values = match &cli.opts.config {
            Some(p) => parse_config_file(p, &known)?,
            None => BTreeMap::new(),
        };
        for (k, v) in pairs {
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        Ok(Config {
            command: cli.command,
            values,
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Res<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|e| CliError(format!("invalid value for {key}: {s:?} ({e})"))),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Res<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some("") => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|x| x.trim().parse().map_err(|e| CliError(format!("invalid value for {key}: {x:?} ({e})"))))
                .collect(),
        }
    }

    fn seed(&self) -> Res<u64> {
        self.get("seed", DEFAULT_SEED)
    }

    fn budget(&self) -> Res<usize> {
        self.get("budget", DEFAULT_BUDGET)
    }

    fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.name().as_bytes());
        for (k, v) in &self.values {
            if k != "out" {
                h.update(format!("\n{k}={v}").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn header(&self) -> Res<String> {
        let mut s = String::new();
        writeln!(s, "# pathmix {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(s, "# command={}", self.command.name())?;
        writeln!(s, "# config_hash={}", self.hash())?;
        writeln!(s, "# seed={}", self.seed()?)?;
        for (k, v) in &self.values {
            if k != "seed" && k != "out" {
                writeln!(s, "# {k}={v}")?;
            }
        }
        Ok(s)
    }

    fn graph(&self, default_n: usize) -> Res<Graph> {
        match self.raw("graph-file") {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError(format!("graph-file: cannot read {path}: {e}")))?;
                let g = Graph::parse_edge_list(&text).map_err(|e| CliError(format!("graph-file: {e}")))?;
                if self.raw("n").is_some_and(|n| n.parse::<usize>().ok() != Some(g.n())) {
                    return Err(CliError(format!("n: does not match the {} vertices of graph-file", g.n())));
                }
                Ok(g)
            }
            None => {
                let n = self.get("n", default_n)?;
                Graph::path(n).map_err(|e| CliError(format!("n: {e}")))
            }
        }
    }

    fn target(&self, default_q: usize) -> Res<TargetGraph> {
        match self.raw("h-file") {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError(format!("h-file: cannot read {path}: {e}")))?;
                TargetGraph::parse_adjacency(&text).map_err(|e| CliError(format!("h-file: {e}")))
            }
            None => {
                let q = self.get("q", default_q)?;
                TargetGraph::clique(q).map_err(|e| CliError(format!("q: {e}")))
            }
        }
    }

    fn chain_name(&self, default: &str) -> Res<String> {
        let c = self.raw("chain").unwrap_or(default).to_string();
        match c.as_str() {
            "glauber" | "scan" | "reverse" | "lazy" => Ok(c),
            _ => Err(CliError(format!("invalid value for chain: {c:?} (expected glauber, scan, reverse or lazy)"))),
        }
    }

    fn spec(&self, default_n: usize, default_q: usize, default_chain: &str) -> Res<ChainSpec> {
        let graph = self.graph(default_n)?;
        let target = self.target(default_q)?;
        let chain = self.chain_name(default_chain)?;
        let base = match chain.as_str() {
            "scan" => BaseChain::Scan,
            "reverse" => BaseChain::ReverseScan,
            _ => BaseChain::Glauber,
        };
        let mut spec = ChainSpec::new(graph, target, base)?;
        if chain == "lazy" {
            spec = spec.lazy()?;
        }
        let clamp: Vec<usize> = self.list("clamp", Vec::new())?;
        if clamp.iter().any(|&v| v == 0 || v > spec.n()) {
            return Err(CliError(format!("clamp: vertices must lie in 1..={}", spec.n())));
        }
        let zero_based: Vec<usize> = clamp.iter().map(|v| v - 1).collect();
        spec.with_clamp(&zero_based).map_err(|e| CliError(format!("clamp: {e}")))
    }

    fn is_q3_path(spec: &ChainSpec) -> bool {
        spec.graph().is_path() && spec.target().is_clique() && spec.h() == 3 && spec.clamped().is_empty()
    }

    fn sign_kind(spec: &ChainSpec) -> Option<SignKind> {
        match spec.base() {
            BaseChain::Glauber if !spec.is_lazy() => Some(SignKind::Glauber),
            BaseChain::Scan => Some(SignKind::Scan),
            _ => None,
        }
    }
}

/// Small-denominator fraction equal to `x` up to rounding, if any.
fn as_fraction(x: f64) -> Option<String> {
    (1..=100_000i64).find_map(|d| {
        let num = (x * d as f64).round();
        ((x * d as f64 - num).abs() < 1e-9 * d as f64).then(|| format!("{}/{d}", num as i64))
    })
}

struct Output {
    dir: Option<PathBuf>,
    files: Vec<(String, String)>,
}

impl Output {
    fn add(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    fn flush(self, header: &str) -> Res<()> {
        match self.dir {
            Some(dir) => {
                fs::create_dir_all(&dir).map_err(|e| CliError(format!("out: cannot create {}: {e}", dir.display())))?;
                for (name, body) in self.files {
                    let path = dir.join(name);
                    fs::write(&path, format!("{header}{body}")).map_err(|e| CliError(format!("out: cannot write {}: {e}", path.display())))?;
                }
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                write!(stdout, "{header}")?;
                for (name, body) in self.files {
                    writeln!(stdout, "## {name}")?;
                    write!(stdout, "{body}")?;
                }
            }
        }
        Ok(())
    }
}

fn spectrum(cfg: &Config, out: &mut Output) -> Res<()> {
    let spec = cfg.spec(4, 3, "glauber")?;
    let kernel = build_kernel(&spec, cfg.budget()?)?;
    let rep = poincare_constant(&kernel)?;
    let mut s = String::new();
    writeln!(s, "{}", spec.describe())?;
    writeln!(s, "states={}", kernel.len())?;
    writeln!(s, "reversible={}", rep.reversible)?;
    writeln!(s, "poincare={:.15e}", rep.poincare)?;
    writeln!(s, "gap={:.15e}", rep.gap)?;
    writeln!(s, "beta_min={:.15e}", rep.beta_min)?;
    writeln!(s, "eigenvalues={}", rep.eigenvalues.len())?;
    for (i, e) in rep.eigenvalues.iter().enumerate() {
        writeln!(s, "eigenvalue_{}={:.15e}", i + 1, e)?;
    }
    out.add("spectrum.txt", s);
    if Config::is_q3_path(&spec) {
        if let Some(kind) = Config::sign_kind(&spec) {
            let n = spec.n();
            let sk = sign_kernel(kind, n)?;
            let rep = poincare_constant(&sk)?;
            let mut s = String::new();
            writeln!(s, "sign_chain={}", if kind == SignKind::Glauber { "glauber" } else { "scan" })?;
            writeln!(s, "states={}", sk.len())?;
            match as_fraction(rep.poincare) {
                Some(f) => writeln!(s, "poincare={f}")?,
                None => writeln!(s, "poincare={:.15e}", rep.poincare)?,
            }
            writeln!(s, "poincare_float={:.15e}", rep.poincare)?;
            writeln!(s, "gap={:.15e}", rep.gap)?;
            for (i, e) in rep.eigenvalues.iter().enumerate() {
                writeln!(s, "eigenvalue_{}={:.15e}", i + 1, e)?;
            }
            out.add("spectrum_sign.txt", s);
        }
    }
    Ok(())
}

fn mix(cfg: &Config, out: &mut Output) -> Res<()> {
    let spec = cfg.spec(4, 3, "glauber")?;
    let eps: f64 = cfg.get("eps", 0.25)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CliError(format!("invalid value for eps: {eps} (expected 0 < eps < 1)")));
    }
    let kernel = build_kernel(&spec, cfg.budget()?)?;
    let mut s = String::new();
    writeln!(s, "{}", spec.describe())?;
    writeln!(s, "states={}", kernel.len())?;
    writeln!(s, "eps={eps}")?;
    writeln!(s, "mix_time={}", tv_mixing_time(&kernel, eps)?)?;
    if Config::is_q3_path(&spec) {
        if let Some(kind) = Config::sign_kind(&spec) {
            let sk = sign_kernel(kind, spec.n())?;
            writeln!(s, "sign_states={}", sk.len())?;
            writeln!(s, "sign_mix_time={}", tv_mixing_time(&sk, eps)?)?;
        }
    }
    out.add("mix.txt", s);
    Ok(())
}

fn wilson(cfg: &Config, out: &mut Output) -> Res<()> {
    let n: usize = cfg.get("n", 10)?;
    let kind = match cfg.chain_name("glauber")?.as_str() {
        "glauber" => SignKind::Glauber,
        "scan" => SignKind::Scan,
        c => return Err(CliError(format!("invalid value for chain: {c:?} (wilson supports glauber or scan)"))),
    };
    let eps: f64 = cfg.get("eps", 0.25)?;
    let replicates: u64 = cfg.get("replicates", 200)?;
    let tape = RandomTape::new(cfg.seed()?);
    let rho = match kind {
        SignKind::Glauber => glauber_rho(n)?,
        SignKind::Scan => estimate_rho(kind, n, replicates, &tape)?.rho_hat,
    };
    let rep = wilson_bounds(kind, n, rho)?;
    let mut s = Vec::new();
    rep.write_report(&mut s, eps)?;
    out.add("wilson.txt", String::from_utf8_lossy(&s).into_owned());
    let mut w = Vec::new();
    rep.write_weights_csv(&mut w)?;
    out.add("wilson_weights.csv", String::from_utf8_lossy(&w).into_owned());
    Ok(())
}

fn drift(cfg: &Config, out: &mut Output) -> Res<()> {
    let n: usize = cfg.get("n", 6)?;
    let q: usize = cfg.get("q", 3)?;
    let rows = lemma_ledger(n, q)?;
    let mut csv = Vec::new();
    write_ledger_csv(&mut csv, &rows)?;
    let failing = rows.iter().filter(|r| !r.pass()).count();
    let mut s = String::new();
    writeln!(s, "n={n}")?;
    writeln!(s, "q={q}")?;
    writeln!(s, "rows={}", rows.len())?;
    writeln!(s, "failing={failing}")?;
    writeln!(s, "all_pass={}", failing == 0)?;
    out.add("drift_summary.txt", s);
    out.add("drift_ledger.csv", String::from_utf8_lossy(&csv).into_owned());
    Ok(())
}

fn couple(cfg: &Config, out: &mut Output) -> Res<()> {
    let spec = cfg.spec(16, 4, "scan")?;
    let default_kind = match (spec.base(), spec.h()) {
        (BaseChain::Glauber, h) if h >= 4 => "q4_glauber",
        (BaseChain::Glauber, _) => "identity_glauber",
        (_, h) if h >= 4 => "q4_scan",
        _ => "identity_scan",
    };
    let kind: CouplingKind = cfg
        .raw("coupling")
        .unwrap_or(default_kind)
        .parse()
        .map_err(|e: pathmix::Error| CliError(format!("invalid value for coupling: {e}")))?;
    let coupler = Coupler::new(kind, &spec).map_err(|e| CliError(format!("coupling: {e}")))?;
    let replicates: u64 = cfg.get("replicates", 200)?;
    let horizon: u64 = cfg.get("horizon", 100_000)?;
    let start = extremal_pair(&spec)?;
    let stats = coupling_time(&coupler, &[start], replicates, horizon, &RandomTape::new(cfg.seed()?))?;
    let mut s = String::new();
    writeln!(s, "{}", spec.describe())?;
    writeln!(s, "coupling={kind}")?;
    writeln!(s, "replicates={replicates}")?;
    writeln!(s, "horizon={horizon}")?;
    writeln!(s, "censored={}", stats.censored)?;
    writeln!(s, "mean={:.6}", stats.mean)?;
    writeln!(s, "std_error={:.6}", stats.std_error)?;
    let opt = |x: Option<f64>| x.map_or("censored".to_string(), |v| format!("{v}"));
    writeln!(s, "median={}", opt(stats.median))?;
    writeln!(s, "q10={}", opt(stats.q10))?;
    writeln!(s, "q90={}", opt(stats.q90))?;
    writeln!(s, "contraction={:.6}", stats.contraction)?;
    if let Some(d) = stats.max_d2_step {
        writeln!(s, "max_d2_step={d:.6}")?;
        writeln!(s, "d2_step_violations={}", stats.d2_step_violations)?;
    }
    out.add("couple.txt", s);
    let mut t = String::from("replicate,time\n");
    for (i, x) in stats.times.iter().enumerate() {
        writeln!(t, "{},{}", i, x.map_or(String::from("censored"), |v| v.to_string()))?;
    }
    out.add("couple_times.csv", t);
    Ok(())
}

fn percolate(cfg: &Config, out: &mut Output) -> Res<()> {
    if cfg.raw("h-file").is_some() || cfg.raw("graph-file").is_some() {
        return Err(CliError("h-file/graph-file: percolate runs q-colorings of a path".into()));
    }
    let n: usize = cfg.get("n", 10_000)?;
    let q: usize = cfg.get("q", 4)?;
    let overrides = match (cfg.raw("r"), cfg.raw("ell")) {
        (None, None) if cfg.raw("n").is_none() => Some((2, 10)),
        (None, None) => None,
        _ => Some((cfg.get("r", 2usize)?, cfg.get("ell", 10usize)?)),
    };
    let layout = segment_layout(n, q, overrides).map_err(|e| CliError(format!("layout: {e}")))?;
    let spec = cfg.spec(n, q, "scan")?;
    let times: Vec<u64> = cfg.list("t", vec![0, 1, 2, 5, 10])?;
    let replicates: u64 = cfg.get("replicates", 200)?;
    let tape = RandomTape::new(cfg.seed()?);
    let mut body = Vec::new();
    layout.write_header(&mut body)?;
    let (level, exact, bound) = chernoff_check(&layout);
    writeln!(body, "# chain={} replicates={replicates}", cfg.chain_name("scan")?)?;
    writeln!(body, "# chernoff_level={level:.6} stationary_prob={exact:.6e} chernoff_bound={bound:.6e}")?;
    LbReport::write_csv_header(&mut body)?;
    for t in times {
        lb_experiment(&spec, &layout, t, replicates, &tape)?.write_csv_row(&mut body)?;
    }
    out.add("percolate.csv", String::from_utf8_lossy(&body).into_owned());
    Ok(())
}

fn compare(cfg: &Config, out: &mut Output) -> Res<()> {
    let g = cfg.graph(4)?;
    let target = cfg.target(3)?;
    let eps: f64 = cfg.get("eps", 0.25)?;
    let r = verify_comparison(&g, &target, eps, cfg.budget()?)?;
    let mut s = String::new();
    writeln!(s, "n={}", r.n)?;
    writeln!(s, "h={}", r.h)?;
    writeln!(s, "max_degree={}", r.max_degree)?;
    writeln!(s, "states={}", r.states)?;
    writeln!(s, "glauber_ergodic={}", r.glauber_ergodic)?;
    writeln!(s, "scan_ergodic={}", r.scan_ergodic)?;
    writeln!(s, "lambda_glauber={:.15e}", r.lambda_glauber)?;
    writeln!(s, "lambda_scan={:.15e}", r.lambda_scan)?;
    writeln!(s, "glauber_upper={:.15e}", r.glauber_upper)?;
    writeln!(s, "scan_upper={:.15e}", r.scan_upper)?;
    writeln!(s, "glauber_bound_holds={}", r.glauber_bound_holds)?;
    writeln!(s, "scan_bound_holds={}", r.scan_bound_holds)?;
    writeln!(s, "eps={}", r.eps)?;
    writeln!(s, "continuized_bound={:.15e}", r.continuized_bound)?;
    writeln!(s, "discrete_bound={:.15e}", r.discrete_bound)?;
    match r.inverse_gap_bound {
        Some(b) => writeln!(s, "inverse_gap_bound={b:.15e}")?,
        None => writeln!(s, "inverse_gap_bound=none")?,
    }
    out.add("compare.txt", s);
    Ok(())
}

fn congestion(cfg: &Config, out: &mut Output) -> Res<()> {
    let n: usize = cfg.get("n", 4)?;
    let target = cfg.target(3)?;
    let r = canonical_congestion(n, &target, cfg.budget()?)?;
    let mut s = String::new();
    writeln!(s, "n={}", r.n)?;
    writeln!(s, "h={}", r.h)?;
    writeln!(s, "connector_length={}", r.t)?;
    writeln!(s, "states={}", r.states)?;
    writeln!(s, "congestion={:.15e}", r.congestion)?;
    writeln!(s, "max_paths_through_edge={}", r.max_paths_through_edge)?;
    writeln!(s, "max_path_length={}", r.max_path_length)?;
    writeln!(s, "encoding_bound={:.15e}", r.bound_n4)?;
    writeln!(s, "lambda_glauber={:.15e}", r.lambda_glauber)?;
    if r.congestion > 0.0 {
        writeln!(s, "inverse_congestion={:.15e}", 1.0 / r.congestion)?;
    }
    out.add("congestion.txt", s);
    Ok(())
}

fn ergodic(cfg: &Config, out: &mut Output) -> Res<()> {
    let g = cfg.graph(4)?;
    let target = match (cfg.raw("h-file"), cfg.raw("q")) {
        (None, None) => TargetGraph::directed_cycle(3)?,
        _ => cfg.target(3)?,
    };
    let budget = cfg.budget()?;
    let r = ergodicity_report(&g, &target, budget)?;
    let mut s = String::new();
    writeln!(s, "n={}", g.n())?;
    writeln!(s, "h={}", target.h())?;
    writeln!(s, "directed={}", target.is_directed())?;
    writeln!(s, "states={}", r.states)?;
    writeln!(s, "classes={}", r.classes.len())?;
    writeln!(s, "singleton_classes={}", r.singleton_classes())?;
    for (i, c) in r.classes.iter().enumerate() {
        writeln!(s, "class_{}_size={}", i + 1, c.len())?;
    }
    let k: usize = cfg.get("k", 2)?;
    if k > 0 {
        let b = bottleneck_report(k, g.n(), budget)?;
        writeln!(s, "bottleneck_k={}", b.k)?;
        writeln!(s, "bottleneck_states={}", b.states)?;
        writeln!(s, "bottleneck_a={}", b.a_size)?;
        writeln!(s, "bottleneck_m={}", b.m_size)?;
        writeln!(s, "bottleneck_pi_a={}", b.pi_a)?;
        writeln!(s, "bottleneck_pi_m={}", b.pi_m)?;
        writeln!(s, "bottleneck_bound={}", b.bound)?;
        writeln!(s, "bottleneck_separated={}", b.separated)?;
        writeln!(s, "bottleneck_glauber_ergodic={}", b.glauber_ergodic)?;
    }
    out.add("ergodic.txt", s);
    Ok(())
}

fn run(cli: &Cli) -> Res<()> {
    let cfg = Config::from_cli(cli)?;
    let header = cfg.header()?;
    let mut out = Output {
        dir: cfg.raw("out").map(PathBuf::from),
        files: Vec::new(),
    };
    match cfg.command {
        Command::Spectrum => spectrum(&cfg, &mut out)?,
        Command::Mix => mix(&cfg, &mut out)?,
        Command::Wilson => wilson(&cfg, &mut out)?,
        Command::Drift => drift(&cfg, &mut out)?,
        Command::Couple => couple(&cfg, &mut out)?,
        Command::Percolate => percolate(&cfg, &mut out)?,
        Command::Compare => compare(&cfg, &mut out)?,
        Command::Congestion => congestion(&cfg, &mut out)?,
        Command::Ergodic => ergodic(&cfg, &mut out)?,
    }
    out.flush(&header)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError(msg)) => {
            eprintln!("pathmix: {msg}");
            ExitCode::FAILURE
        }
    }
}
