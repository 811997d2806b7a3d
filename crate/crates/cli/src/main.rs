//! `g2sqz`: simulate time tags, correlate, fit and estimate weak squeezing.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use g2sqz::correlator::{correlate, normalize, Window};
use g2sqz::estimator::{
    estimate_squeezing, propagate_uncertainty, EstimationConfig, EtaEscSource, FormulaMode, Measured, PthSource,
    SqueezingEstimate, Uncertainty,
};
use g2sqz::figures::{figure_table, write_all_figures, write_table_csv, Figure};
use g2sqz::fit::{fit_comb, fit_rate_linear, CombFit, CombFitOptions, RateModel};
use g2sqz::io::{read_histogram_csv, read_json, read_rate_csv, read_tags, write_histogram_csv, write_json, write_tags};
use g2sqz::opo::derive_cavity_rates;
use g2sqz::pipeline::{comb_inputs, run_pipeline, PipelineConfig};
use g2sqz::sim::{simulate, SimConfig};
use g2sqz::units::{angular_to_linewidth_mhz, mhz_per_mw_to_si, si_to_mhz_per_mw};

#[derive(Parser)]
#[command(name = "g2sqz", version, about = "Weak squeezing from photon-pair statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a two-detector time-tag run
    Simulate(SimulateArgs),
    /// Cross-correlate two channels of a tag file into a g2 histogram
    Correlate(CorrelateArgs),
    /// Fit the comb model to a normalised histogram
    FitComb(FitCombArgs),
    /// Fit the pair-rate calibration k to rate data
    FitRate(FitRateArgs),
    /// Squeezing parameter from a measured g2(0)
    Estimate(EstimateArgs),
    /// Run the whole chain from a JSON config
    Pipeline(PipelineArgs),
    /// Write the reference curves as CSV
    Figures(FiguresArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config (JSON). Without it the reference setup is simulated.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Pump power for the reference setup, uW
    #[arg(long, default_value_t = 30.0)]
    pump_uw: f64,
    /// Acquisition time, s
    #[arg(long)]
    duration_s: Option<f64>,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    a: u8,
    #[arg(long, default_value_t = 1)]
    b: u8,
    #[arg(long, default_value_t = 35)]
    bin_ps: u64,
    #[arg(long, default_value_t = 4000)]
    bins: usize,
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    center_ps: i64,
    /// Leave the g2 column empty
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitCombArgs {
    #[arg(long)]
    hist: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitRateArgs {
    /// CSV with columns P_mW,R_meas,sigma
    #[arg(long)]
    data: PathBuf,
    /// Counting efficiency
    #[arg(long)]
    eta: f64,
    /// Fit R = kP + b instead of R = kP
    #[arg(long)]
    with_offset: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    g2zero: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_g2: f64,
    /// Comb fit JSON from `fit-comb`
    #[arg(long)]
    params: PathBuf,
    /// Pair-rate calibration, s^-1 W^-1
    #[arg(long, conflicts_with = "k_mhz_per_mw", required_unless_present = "k_mhz_per_mw")]
    k: Option<f64>,
    /// Pair-rate calibration, MHz/mW
    #[arg(long)]
    k_mhz_per_mw: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma_k: f64,
    #[arg(long, default_value_t = 8e5)]
    freq_hz: f64,
    /// `gammas` or an explicit value
    #[arg(long, default_value = "gammas")]
    eta_esc: String,
    /// `losses` or a measured threshold in W
    #[arg(long, default_value = "losses")]
    pth: String,
    /// `chain` or `eq5`
    #[arg(long, default_value = "chain")]
    mode: String,
    /// Output coupler transmission
    #[arg(long, default_value_t = 0.11)]
    transmission: f64,
    /// Single-pass conversion, W^-1
    #[arg(long, default_value_t = 0.02)]
    e_nl: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the Monte Carlo uncertainty
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FiguresArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// One of fig2..fig7; all when omitted
    #[arg(long)]
    figure: Option<String>,
}

#[derive(Serialize)]
struct EstimateReport {
    r: f64,
    sigma_r: f64,
    squeezing_db: f64,
    sigma_db: f64,
    g2_zero: f64,
    gamma1: f64,
    gamma2: f64,
    k: f64,
    f: f64,
    eta_esc: f64,
    p_th: f64,
    formula_mode: FormulaMode,
    estimate: SqueezingEstimate,
    uncertainty: Option<Uncertainty>,
}

#[derive(Serialize)]
struct CombReport<'a> {
    #[serde(flatten)]
    comb: &'a CombFit,
    peak_g2: f64,
    sigma_peak_g2: f64,
    linewidth_mhz: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.chain().any(|c| c.downcast_ref::<g2sqz::Error>().is_some_and(|g| g.is_numerical()));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Correlate(a) => correlate_cmd(a),
        Command::FitComb(a) => fit_comb_cmd(a),
        Command::FitRate(a) => fit_rate_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Figures(a) => figures_cmd(a),
    }
}

fn simulate_cmd(a: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(path) => read_json::<SimConfig>(path).with_context(|| format!("reading {}", path.display()))?,
        None => SimConfig::reference_setup(a.pump_uw * 1e-6, 1.0, 0),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(d) = a.duration_s {
        cfg.duration = d;
    }
    let out = simulate(&cfg)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    write_tags(&[out.a.clone(), out.b.clone()], &a.out, Some(&out.truth))?;
    println!("channel 0: {} tags", out.a.len());
    println!("channel 1: {} tags", out.b.len());
    println!("expected g2(0) {:.4}", out.truth.expected_g2zero);
    Ok(())
}

fn correlate_cmd(a: CorrelateArgs) -> anyhow::Result<()> {
    let streams = read_tags(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let channel = |ch: u8| {
        streams
            .iter()
            .find(|s| s.channel() == ch)
            .ok_or_else(|| anyhow!("{} has no channel {ch}", a.input.display()))
    };
    let win = Window::new(a.bin_ps, a.bins, a.center_ps)?;
    let mut hist = correlate(channel(a.a)?, channel(a.b)?, win)?;
    if !a.raw {
        hist = normalize(&hist)?;
    }
    write_histogram_csv(&hist, &a.out)?;
    println!("coincidences {}", hist.total_counts());
    Ok(())
}

fn fit_comb_cmd(a: FitCombArgs) -> anyhow::Result<()> {
    let hist = read_histogram_csv(&a.hist).with_context(|| format!("reading {}", a.hist.display()))?;
    if hist.g2.is_none() {
        bail!("{} has no g2 column; correlate without --raw", a.hist.display());
    }
    let fit = fit_comb(&hist, None, &CombFitOptions::default())?;
    if !fit.fit.converged {
        return Err(g2sqz::Error::MaxIterations(fit.fit.iterations).into());
    }
    let (peak, sigma) = fit.peak_value();
    write_json(
        &CombReport {
            comb: &fit,
            peak_g2: peak,
            sigma_peak_g2: sigma,
            linewidth_mhz: angular_to_linewidth_mhz(fit.params.omega_c),
        },
        &a.out,
    )?;
    print!("{}", fit.fit.to_text());
    println!("g2(0) {peak:.5} +- {sigma:.5}");
    Ok(())
}

fn fit_rate_cmd(a: FitRateArgs) -> anyhow::Result<()> {
    let points = read_rate_csv(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let model = if a.with_offset {
        RateModel::WithOffset
    } else {
        RateModel::ThroughOrigin
    };
    let fit = fit_rate_linear(&points, a.eta, model)?;
    write_json(&fit, &a.out)?;
    println!(
        "k {:.6e} +- {:.2e} s^-1 W^-1 ({:.3} +- {:.3} MHz/mW)",
        fit.k,
        fit.sigma_k,
        si_to_mhz_per_mw(fit.k),
        si_to_mhz_per_mw(fit.sigma_k)
    );
    Ok(())
}

fn parse_eta(s: &str) -> anyhow::Result<EtaEscSource> {
    match s {
        "gammas" => Ok(EtaEscSource::FromGammas),
        v => Ok(EtaEscSource::Explicit(
            v.parse().map_err(|_| anyhow!("--eta-esc: expected `gammas` or a number, got `{v}`"))?,
        )),
    }
}

fn parse_pth(s: &str) -> anyhow::Result<PthSource> {
    match s {
        "losses" => Ok(PthSource::FromLosses),
        v => Ok(PthSource::Measured(
            v.parse().map_err(|_| anyhow!("--pth: expected `losses` or a power in W, got `{v}`"))?,
        )),
    }
}

fn parse_mode(s: &str) -> anyhow::Result<FormulaMode> {
    match s {
        "chain" => Ok(FormulaMode::ComposedChain),
        "eq5" => Ok(FormulaMode::LiteralEq5),
        v => bail!("--mode: expected `chain` or `eq5`, got `{v}`"),
    }
}

/// Comb fit JSON as written by `fit-comb` (extra fields ignored).
fn read_comb(path: &Path) -> anyhow::Result<CombFit> {
    read_json::<CombFit>(path).with_context(|| format!("reading {}", path.display()))
}

fn estimate_cmd(a: EstimateArgs) -> anyhow::Result<()> {
    let cfg = EstimationConfig {
        formula_mode: parse_mode(&a.mode)?,
        eta_esc_source: parse_eta(&a.eta_esc)?,
        p_th_source: parse_pth(&a.pth)?,
        frequency_hz: a.freq_hz,
    };
    cfg.validate()?;
    let k = match (a.k, a.k_mhz_per_mw) {
        (Some(k), _) => k,
        (None, Some(k)) => mhz_per_mw_to_si(k),
        (None, None) => bail!("one of --k or --k-mhz-per-mw is required"),
    };
    let comb = read_comb(&a.params)?;
    let cavity = derive_cavity_rates(comb.params.omega_c, comb.params.tau_f, a.transmission, a.e_nl)?;
    let mut estimate = estimate_squeezing(a.g2zero, &cavity, k, &cfg)?;
    let uncertainty = if a.sigma_g2 > 0.0 || a.sigma_k > 0.0 {
        let inputs = comb_inputs(
            &comb,
            &cavity,
            Measured::new(a.g2zero, a.sigma_g2),
            Measured::new(k, a.sigma_k),
            a.freq_hz,
        );
        let u = propagate_uncertainty(&inputs, &cfg, a.samples, a.seed)?;
        estimate.sigma_r = u.sigma_r;
        estimate.sigma_db = u.sigma_db;
        Some(u)
    } else {
        None
    };
    let report = EstimateReport {
        r: estimate.r,
        sigma_r: estimate.sigma_r,
        squeezing_db: estimate.squeezing_db,
        sigma_db: estimate.sigma_db,
        g2_zero: a.g2zero,
        gamma1: cavity.gamma1(),
        gamma2: cavity.gamma2(),
        k,
        f: a.freq_hz,
        eta_esc: estimate.inputs.eta_esc,
        p_th: estimate.inputs.p_th,
        formula_mode: cfg.formula_mode,
        estimate,
        uncertainty,
    };
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    println!("r {:.6e} +- {:.2e}", report.r, report.sigma_r);
    println!("squeezing {:.5} +- {:.5} dB", report.squeezing_db, report.sigma_db);
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> anyhow::Result<()> {
    let mut cfg: PipelineConfig = read_json(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.uncertainty.seed = seed;
    }
    // relative tag paths are taken from the config's directory
    if let g2sqz::pipeline::TagSource::TagFile { path, .. } = &mut cfg.source {
        if path.is_relative() {
            if let Some(dir) = a.config.parent() {
                *path = dir.join(&*path);
            }
        }
    }
    let report = run_pipeline(&cfg)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&report, &a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn figures_cmd(a: FiguresArgs) -> anyhow::Result<()> {
    match &a.figure {
        None => write_all_figures(&a.out_dir)?,
        Some(name) => {
            let fig: Figure = name.parse()?;
            std::fs::create_dir_all(&a.out_dir)?;
            write_table_csv(&figure_table(fig)?, a.out_dir.join(format!("{}.csv", fig.name())))?;
        }
    }
    Ok(())
}
