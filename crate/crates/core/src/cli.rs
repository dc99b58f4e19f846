//! The `mixnash` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
//! 4 verification failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{builtin, load_config, Overrides, ScenarioConfig, BUILTIN_SCENARIOS};
use crate::controller::Variant;
use crate::error::Error;
use crate::game::{lipschitz_constants, monotonicity_constant, nash_oracle, pseudo_gradient};
use crate::sim::{run_scenario, EstimateInit, Summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MIXNASH_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "mixnash-out";

#[derive(Debug, Parser)]
#[command(name = "mixnash", version, about = "Distributed Nash equilibrium seeking for mixed-order players")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a scenario and write trajectory.csv and summary.json.
    Run(RunArgs),
    /// Solve for the Nash equilibrium and check strong monotonicity.
    VerifyNash(SourceArgs),
    /// Run a grid of gain / step-size variations in parallel and write sweep.csv.
    Sweep(SweepArgs),
    /// List the built-in scenarios.
    ListScenarios(ListArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "config")]
    pub scenario: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OverrideArgs {
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    #[arg(long)]
    pub k3: Option<f64>,
    #[arg(long)]
    pub k4: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// `full` or `disturbance_free`.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Initial estimates: `seeded` (true x̄(0)) or `zero`.
    #[arg(long)]
    pub y_init: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Output directory (default: $MIXNASH_OUT_DIR or ./mixnash-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write plot.gp, a gnuplot script for the trajectory.
    #[arg(long)]
    pub gnuplot_script: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub overrides: OverrideArgs,
    /// Grid axis `key=v1,v2,...` with key in k1,k2,k3,k4,beta,dt. Repeatable;
    /// axes combine as a cartesian product.
    #[arg(long = "grid")]
    pub grid: Vec<String>,
    /// Joint multipliers applied to k1..k4 and beta together, e.g. `1,2`.
    #[arg(long, value_delimiter = ',')]
    pub scale: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ListArgs {
    /// Print the full JSON config of the named built-in scenario.
    #[arg(long)]
    pub print_config: Option<String>,
}

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteState { .. } | Error::NonFiniteDerivative { .. } => EXIT_BLOWUP,
            Error::NotStronglyMonotone(_) | Error::SingularSystem(_) => EXIT_VERIFY,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = std::result::Result<i32, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::VerifyNash(a) => cmd_verify_nash(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::ListScenarios(a) => cmd_list(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message);
            e.code
        }
    }
}

fn load_source(source: &SourceArgs) -> std::result::Result<ScenarioConfig, CliError> {
    match (&source.scenario, &source.config) {
        (Some(name), None) => builtin(name).ok_or_else(|| {
            let known: Vec<_> = BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).collect();
            CliError::config(format!("unknown scenario `{name}` (known: {})", known.join(", ")))
        }),
        (None, Some(path)) => load_config(path).map_err(|e| match e {
            Error::Io(io) => CliError::config(format!("cannot read {}: {io}", path.display())),
            other => other.into(),
        }),
        (None, None) => Err(CliError::config("pass --scenario NAME or --config FILE")),
        (Some(_), Some(_)) => Err(CliError::config("--scenario and --config are exclusive")),
    }
}

fn overrides(a: &OverrideArgs) -> std::result::Result<Overrides, CliError> {
    let y_init = match a.y_init.as_deref() {
        None => None,
        Some("seeded") => Some(EstimateInit::Seeded),
        Some("zero") => Some(EstimateInit::Zero),
        Some(other) => {
            return Err(CliError::config(format!(
                "--y-init: expected `seeded` or `zero`, got `{other}`"
            )))
        }
    };
    Ok(Overrides {
        k1: a.k1,
        k2: a.k2,
        k3: a.k3,
        k4: a.k4,
        beta: a.beta,
        dt: a.dt,
        t_final: a.t_final,
        stride: a.stride,
        variant: a.variant,
        y_init,
    })
}

fn out_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn create_dir(dir: &Path) -> std::result::Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> std::result::Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3e}"))
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mut cfg = load_source(&a.source)?;
    overrides(&a.overrides)?.apply(&mut cfg);
    let scenario = cfg.build()?;
    if let Some(w) = scenario.stiffness_warning() {
        let _ = writeln!(err, "warning: {w}");
    }
    let dir = out_dir(&a.out);
    create_dir(&dir)?;
    let started = Instant::now();
    let (traj, summary) = run_scenario(&scenario);
    let runtime = started.elapsed().as_secs_f64();
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serialises");
    write_file(&dir.join("summary.json"), summary_json.as_bytes())?;
    let Some(traj) = traj else {
        let _ = writeln!(
            out,
            "{} [{}]: BLOW-UP ({})",
            summary.scenario,
            summary.variant.as_str(),
            summary.blow_up_message.as_deref().unwrap_or("unknown")
        );
        return Ok(EXIT_BLOWUP);
    };
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)
        .map_err(|e| CliError::config(format!("cannot format trajectory: {e}")))?;
    write_file(&dir.join("trajectory.csv"), &csv)?;
    if a.gnuplot_script {
        let script = gnuplot_script(&traj.csv_header());
        write_file(&dir.join("plot.gp"), script.as_bytes())?;
    }
    let _ = writeln!(
        out,
        "{} [{}]: final_err_2={} rate={} final_vnorm={} max_wnorm={} runtime={runtime:.2}s -> {}",
        summary.scenario,
        summary.variant.as_str(),
        fmt_opt(summary.final_err_2),
        fmt_opt(summary.fitted_rate),
        fmt_opt(summary.final_vnorm),
        fmt_opt(summary.max_wnorm),
        dir.display()
    );
    Ok(EXIT_OK)
}

/// Gnuplot script plotting actions and the error norm from trajectory.csv.
pub fn gnuplot_script(header: &str) -> String {
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| cols.iter().position(|c| *c == name).map(|p| p + 1);
    let x_plots: Vec<String> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("x_"))
        .map(|(k, c)| format!("'trajectory.csv' using 1:{} with lines title '{}'", k + 1, c))
        .collect();
    let err_col = col("err_x").unwrap_or(2);
    format!(
        "set datafile separator ','\n\
         set datafile commentschars '#'\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 1200,500\n\
         set output 'actions.png'\n\
         set xlabel 't'\n\
         plot {}\n\
         set output 'error.png'\n\
         set logscale y\n\
         plot 'trajectory.csv' using 1:{err_col} with lines title 'err_x'\n",
        x_plots.join(", \\\n     ")
    )
}

fn cmd_verify_nash(a: &SourceArgs, out: &mut dyn Write) -> CliResult {
    let cfg = load_source(a)?;
    let game = cfg.build_game()?;
    let x_star = nash_oracle(&game)?;
    let residual = pseudo_gradient(&game, x_star.as_slice())?.norm();
    let lip = lipschitz_constants(&game);
    let _ = writeln!(out, "scenario: {}", cfg.name);
    let _ = writeln!(
        out,
        "x* = [{}]",
        x_star.iter().map(|v| format!("{v:.12}")).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(out, "residual ||P(x*)|| = {residual:.3e}");
    let _ = writeln!(
        out,
        "lipschitz = [{}]",
        lip.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
    );
    let m = match monotonicity_constant(&game) {
        Ok(m) => m,
        Err(e) => {
            let _ = writeln!(out, "monotonicity: FAIL ({e})");
            return Ok(EXIT_VERIFY);
        }
    };
    let _ = writeln!(out, "monotonicity m = {m:.12}");
    if residual < 1e-10 && m > 0.0 {
        let _ = writeln!(out, "verify-nash: PASS");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(out, "verify-nash: FAIL");
        Ok(EXIT_VERIFY)
    }
}

const SWEEP_KEYS: [&str; 6] = ["k1", "k2", "k3", "k4", "beta", "dt"];

/// One sweep point: the explicit axis values plus a joint gain scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub values: Vec<(String, f64)>,
    pub scale: f64,
}

/// Cartesian product of `key=v1,v2` axes and joint gain scales.
pub fn parse_grid(axes: &[String], scales: &[f64]) -> std::result::Result<Vec<SweepPoint>, String> {
    if axes.is_empty() && scales.is_empty() {
        return Err("empty sweep grid: pass at least one --grid or --scale".into());
    }
    let mut parsed: Vec<(String, Vec<f64>)> = Vec::new();
    for axis in axes {
        let (key, vals) = axis
            .split_once('=')
            .ok_or_else(|| format!("--grid `{axis}`: expected key=v1,v2,..."))?;
        let key = key.trim();
        if !SWEEP_KEYS.contains(&key) {
            return Err(format!("--grid: unknown key `{key}` (expected one of {})", SWEEP_KEYS.join(", ")));
        }
        let values = vals
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("--grid {key}: `{v}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(format!("--grid {key}: no values"));
        }
        parsed.push((key.to_string(), values));
    }
    let scales = if scales.is_empty() { vec![1.0] } else { scales.to_vec() };
    let mut points = vec![Vec::new()];
    for (key, values) in &parsed {
        points = points
            .into_iter()
            .flat_map(|p: Vec<(String, f64)>| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), *v));
                    q
                })
            })
            .collect();
    }
    Ok(points
        .into_iter()
        .flat_map(|values| scales.iter().map(move |&scale| SweepPoint { values: values.clone(), scale }))
        .collect())
}

impl SweepPoint {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        cfg.gains = cfg.gains.scaled(self.scale);
        cfg.rbf.beta *= self.scale;
        for (k, v) in &self.values {
            match k.as_str() {
                "k1" => cfg.gains.k1 = *v,
                "k2" => cfg.gains.k2 = *v,
                "k3" => cfg.gains.k3 = *v,
                "k4" => cfg.gains.k4 = *v,
                "beta" => cfg.rbf.beta = *v,
                "dt" => cfg.integrator.dt = *v,
                _ => unreachable!("validated in parse_grid"),
            }
        }
    }
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> CliResult {
    let mut base = load_source(&a.source)?;
    overrides(&a.overrides)?.apply(&mut base);
    let points = parse_grid(&a.grid, &a.scale).map_err(CliError::config)?;
    let dim = base.game.players.len() * base.game.action_dim;
    let rows: Vec<(ScenarioConfig, std::result::Result<(Summary, Vec<f64>), String>)> = points
        .par_iter()
        .map(|p| {
            let mut cfg = base.clone();
            p.apply(&mut cfg);
            let result = cfg.build().map_err(|e| e.to_string()).map(|scenario| {
                let (traj, summary) = run_scenario(&scenario);
                let final_x = traj.map_or_else(|| vec![f64::NAN; dim], |t| t.final_actions().to_vec());
                (summary, final_x)
            });
            (cfg, result)
        })
        .collect();
    let dir = out_dir(&a.out);
    create_dir(&dir)?;
    let mut csv = String::from("# schema_version=1\n");
    csv.push_str("point,k1,k2,k3,k4,beta,dt,final_err_2,final_err_inf,final_window_mean_err,fitted_rate,max_wnorm,blown_up");
    let d = base.game.action_dim;
    for k in 0..dim {
        csv.push_str(&format!(",xf_{}_{}", k / d + 1, k % d + 1));
    }
    csv.push_str(",error\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:e}"));
    let mut n_failed = 0;
    for (idx, (cfg, result)) in rows.iter().enumerate() {
        let g = &cfg.gains;
        csv.push_str(&format!(
            "{idx},{:e},{:e},{:e},{:e},{:e},{:e}",
            g.k1, g.k2, g.k3, g.k4, cfg.rbf.beta, cfg.integrator.dt
        ));
        match result {
            Ok((s, final_x)) => {
                if s.blown_up {
                    n_failed += 1;
                }
                csv.push_str(&format!(
                    ",{},{},{},{},{},{}",
                    opt(s.final_err_2),
                    opt(s.final_err_inf),
                    opt(s.final_window_mean_err),
                    opt(s.fitted_rate),
                    opt(s.max_wnorm),
                    s.blown_up
                ));
                for v in final_x {
                    csv.push_str(&format!(",{v:e}"));
                }
                let msg = s.blow_up_message.as_deref().unwrap_or("").replace(',', ";");
                csv.push_str(&format!(",{msg}\n"));
            }
            Err(e) => {
                n_failed += 1;
                csv.push_str(",nan,nan,nan,nan,nan,true");
                for _ in 0..dim {
                    csv.push_str(",nan");
                }
                csv.push_str(&format!(",{}\n", e.replace(',', ";")));
            }
        }
    }
    write_file(&dir.join("sweep.csv"), csv.as_bytes())?;
    let _ = writeln!(
        out,
        "sweep: {} points ({} failed) -> {}",
        rows.len(),
        n_failed,
        dir.join("sweep.csv").display()
    );
    Ok(EXIT_OK)
}

fn cmd_list(a: &ListArgs, out: &mut dyn Write) -> CliResult {
    if let Some(name) = &a.print_config {
        let cfg = builtin(name).ok_or_else(|| CliError::config(format!("unknown scenario `{name}`")))?;
        let _ = writeln!(out, "{}", cfg.to_json_pretty());
        return Ok(EXIT_OK);
    }
    for (name, desc) in BUILTIN_SCENARIOS {
        let _ = writeln!(out, "{name:<12} {desc}");
    }
    Ok(EXIT_OK)
}
