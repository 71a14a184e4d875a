//! `divland` command-line scenario runner and analysis tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use divland::analysis::{
    critical_gain, locus_csv, root_locus, stability_report, LinearizationPoint,
};
use divland::channel::{NoiseKind, NoiseModel};
use divland::characterize::{
    bisquare_fit_linear, bisquare_fit_quadratic, estimate_lag, median_filter, residual_stats,
    LagConfig, PairedLog,
};
use divland::control::LandingConfig;
use divland::detect::{dominant_period, CovarianceDetector, DetectorConfig};
use divland::error::Error;
use divland::scenario::{ControllerMode, EstimatorSource, Scenario};
use divland::sim::{batch, batch_csv, run};

#[derive(Parser)]
#[command(name = "divland", version, about = "Constant-divergence landing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its tick log.
    Run(RunArgs),
    /// Run a seed sweep of one scenario and write the summary table.
    Batch(BatchArgs),
    /// Estimate lag and noise-model coefficients from a paired log.
    Characterize(CharacterizeArgs),
    /// Stability report and root locus at a linearization point.
    Stability(StabilityArgs),
    /// Emit plot-ready data files for one of the canned figures.
    Figure(FigureArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file (key = value).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the sample time.
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory for run.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 10)]
    runs: u64,
    /// First seed of the sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Fail (exit 1) unless every run touches down.
    #[arg(long)]
    require_touchdown: bool,
    /// Fail (exit 1) if any touchdown exceeds this speed (m/s).
    #[arg(long)]
    max_touchdown_speed: Option<f64>,
}

#[derive(Args)]
struct CharacterizeArgs {
    /// Paired CSV log with header t,truth,estimate.
    #[arg(long)]
    log: PathBuf,
    /// Lag-search window length (samples).
    #[arg(long, default_value_t = 40)]
    window: usize,
    /// Largest lag searched (samples).
    #[arg(long, default_value_t = 10)]
    max_shift: usize,
    /// Median prefilter window (odd; 0 disables).
    #[arg(long, default_value_t = 5)]
    median: usize,
    /// Write the fitted coefficients as a key = value file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityArgs {
    /// Height of the linearization point (m).
    #[arg(long)]
    z: f64,
    /// Vertical speed at the point (m/s).
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    vz: f64,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    /// Integral time constant.
    #[arg(long, default_value_t = 6.0)]
    kappa: f64,
    /// Gain for the report; defaults to half the critical gain.
    #[arg(long)]
    kp: Option<f64>,
    /// Root-locus sweep bounds as fractions of the critical gain.
    #[arg(long, default_value_t = 0.01)]
    kp_min_frac: f64,
    #[arg(long, default_value_t = 1.2)]
    kp_max_frac: f64,
    #[arg(long, default_value_t = 240)]
    steps: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FigureArgs {
    /// One of fig4, fig10, fig12, fig14, fig15, fig17.
    id: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Batch(args) => cmd_batch(args),
        Command::Characterize(args) => cmd_characterize(args),
        Command::Stability(args) => cmd_stability(args),
        Command::Figure(args) => cmd_figure(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_)) | Some(Error::Parse { .. }) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>, dt: Option<f64>) -> anyhow::Result<Scenario> {
    let mut sc = Scenario::from_file(path)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    if let Some(dt) = dt {
        sc.dt = dt;
        sc.validate()?;
    }
    Ok(sc)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let sc = load_scenario(&args.config, args.seed, args.dt)?;
    let (log, summary) = run(&sc)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("run.csv");
    std::fs::write(&path, log.to_csv())?;
    println!("log: {}", path.display());
    match (summary.touchdown_time, summary.touchdown_speed) {
        (Some(t), Some(v)) => println!("touchdown: t = {t:.2} s, speed = {v:.4} m/s"),
        _ => println!("touchdown: none (timed out airborne)"),
    }
    println!(
        "tracking rmse: {:.4} 1/s | detector events: {} (post-search {}) | median |cov|: {:.3e} | final gains: K_p = {:.4}, K_i = {:.4}",
        summary.tracking_rmse,
        summary.detector_events,
        summary.post_search_events,
        summary.median_abs_cov,
        summary.final_gains.k_p,
        summary.final_gains.k_i,
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_batch(args: BatchArgs) -> anyhow::Result<ExitCode> {
    let sc = load_scenario(&args.config, None, args.dt)?;
    let seeds: Vec<u64> = (args.seed..args.seed + args.runs).collect();
    let entries = batch(&sc, &seeds);
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("batch.csv");
    std::fs::write(&path, batch_csv(&entries))?;
    println!("summary: {}", path.display());

    let mut failures = 0usize;
    for e in &entries {
        match e {
            Err(msg) => {
                eprintln!("run failed: {msg}");
                failures += 1;
            }
            Ok(s) => {
                if args.require_touchdown && s.timed_out {
                    eprintln!("seed {}: no touchdown", s.seed);
                    failures += 1;
                }
                if let (Some(limit), Some(v)) = (args.max_touchdown_speed, s.touchdown_speed) {
                    if v > limit {
                        eprintln!("seed {}: touchdown speed {v:.3} > {limit}", s.seed);
                        failures += 1;
                    }
                }
            }
        }
    }
    let landed = entries
        .iter()
        .filter(|e| e.as_ref().map(|s| !s.timed_out).unwrap_or(false))
        .count();
    println!("{} runs, {} landed, {} failures", entries.len(), landed, failures);
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_characterize(args: CharacterizeArgs) -> anyhow::Result<ExitCode> {
    let log = PairedLog::read_csv(&args.log)?;
    let prefilter = (args.median > 1).then_some(args.median);
    let cfg = LagConfig {
        window: args.window,
        max_shift: args.max_shift,
        prefilter,
    };
    let lag = estimate_lag(&log, &cfg)?;
    let dt = if log.len() >= 2 { log.t[1] - log.t[0] } else { 0.0 };
    println!("lag: {lag} samples ({:.3} s at dt = {dt:.3})", lag as f64 * dt);

    // align the estimate by the recovered lag, then fit the bias and
    // spread curves on the delay-corrected data
    let shift = lag.max(0) as usize;
    let (truth_al, est_al): (Vec<f64>, Vec<f64>) = if shift > 0 && shift < log.len() {
        (
            log.truth[..log.len() - shift].to_vec(),
            log.estimate[shift..].to_vec(),
        )
    } else {
        (log.truth.clone(), log.estimate.clone())
    };
    let (a, b) = bisquare_fit_linear(&truth_al, &est_al)?;
    let abs_err: Vec<f64> = truth_al
        .iter()
        .zip(&est_al)
        .map(|(&d, &y)| (y - (a * d + b)).abs())
        .collect();
    let (c, d_coef, e) = bisquare_fit_quadratic(&truth_al, &abs_err)?;
    println!("bias fit:   f1(D) = {a:.4} D + {b:.4}");
    println!("spread fit: f2(D) = {c:.4} D^2 + {d_coef:.4} D + {e:.4}");

    let model = NoiseModel::new(a, b, c.max(0.0), d_coef, e.max(1e-6), 0.0, 1.0)
        .unwrap_or_else(|_| NoiseModel::for_kind(NoiseKind::Size));
    let stats = residual_stats(&log.truth, &log.estimate, &model, shift)?;
    println!(
        "residuals: mean {:.4}, std {:.4} | rmse raw {:.4}, corrected {:.4}",
        stats.mean, stats.std, stats.rmse_raw, stats.rmse_corrected
    );
    if let Some(n) = prefilter {
        let (_, delay) = median_filter(&log.estimate, n)?;
        println!("median prefilter: window {n}, group delay {delay} samples (already subtracted)");
    }
    if let Some(out) = args.out {
        let text = format!(
            "a = {a:.6}\nb = {b:.6}\nc = {c:.6}\nd = {d_coef:.6}\ne = {e:.6}\nresid_mean = {:.6}\nresid_std = {:.6}\n",
            stats.mean, stats.std.max(1e-9)
        );
        std::fs::write(&out, text)?;
        println!("coefficients: {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_stability(args: StabilityArgs) -> anyhow::Result<ExitCode> {
    let point = LinearizationPoint::new(args.z, args.vz, args.dt)?;
    let k_cr = critical_gain(&point);
    let k_p = args.kp.unwrap_or(0.5 * k_cr);
    let report = stability_report(&point, k_p, args.kappa)?;
    println!(
        "point: Z = {} m, V_Z = {} m/s, dt = {} s, kappa = {}",
        args.z, args.vz, args.dt, args.kappa
    );
    println!("critical gain: K_cr = 2Z/dt = {k_cr:.2}");
    println!("zeros: sigma01 = {:.6}, sigma02 = {:.6}", report.sigma01, report.sigma02);
    println!("poles at K_p = {k_p:.3}:");
    for p in &report.poles {
        println!(
            "  {:.6} {} {:.6}i  (|sigma| = {:.6})",
            p.re,
            if p.im < 0.0 { "-" } else { "+" },
            p.im.abs(),
            p.norm()
        );
    }
    println!(
        "verdict: {} (margin {:.4})",
        if report.stable { "stable" } else { "unstable" },
        report.margin
    );
    if args.kappa < args.dt / 2.0 {
        println!("note: kappa < dt/2, integral branch exits the unit circle");
    }

    let gains: Vec<f64> = (0..args.steps)
        .map(|i| {
            k_cr * (args.kp_min_frac
                + (args.kp_max_frac - args.kp_min_frac) * i as f64 / (args.steps - 1) as f64)
        })
        .collect();
    let locus = root_locus(&point, args.kappa, &gains)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("root_locus.csv");
    std::fs::write(&path, locus_csv(&locus))?;
    println!("locus: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_figure(args: FigureArgs) -> anyhow::Result<ExitCode> {
    std::fs::create_dir_all(&args.out)?;
    match args.id.as_str() {
        "fig4" => {
            let sc = Scenario {
                z0: 3.0,
                dt: 0.01,
                d_star: -0.3,
                controller: ControllerMode::FixedP { k_p: 10.0 },
                estimator: EstimatorSource::Truth,
                max_duration: 40.0,
                seed: args.seed,
                ..Scenario::default()
            };
            let (log, _) = run(&sc)?;
            write_named(&args.out, "fig4_perfect_landing.csv", &log.to_csv())?;
        }
        "fig10" => {
            let sc = Scenario {
                z0: 1.5,
                dt: 0.05,
                d_star: -0.1,
                estimator: EstimatorSource::Channel {
                    kind: NoiseKind::Size,
                    lag: 2,
                    noise: true,
                },
                controller: ControllerMode::FixedPi { k_p: 0.6, k_i: 0.1 },
                max_duration: 120.0,
                seed: args.seed,
                ..Scenario::default()
            };
            let (log, _) = run(&sc)?;
            write_named(&args.out, "fig10_fixed_gain_oscillation.csv", &log.to_csv())?;
        }
        "fig12" => {
            for (z, name) in [(100.0, "fig12_locus_z100.csv"), (10.0, "fig12_locus_z10.csv")] {
                let point = LinearizationPoint::new(z, -0.5, 0.03)?;
                let k_cr = critical_gain(&point);
                let gains: Vec<f64> = (1..=240).map(|i| k_cr * 1.2 * i as f64 / 240.0).collect();
                let locus = root_locus(&point, 1e6, &gains)?;
                write_named(&args.out, name, &locus_csv(&locus))?;
            }
        }
        "fig14" => {
            let dt = 0.03;
            let point = LinearizationPoint::new(10.0, -0.5, dt)?;
            let k_cr = critical_gain(&point);
            for (kappa, name) in [
                (3.0, "fig14_locus_kappa_above.csv"),
                (dt / 2.0, "fig14_locus_kappa_boundary.csv"),
                (0.01, "fig14_locus_kappa_below.csv"),
            ] {
                let gains: Vec<f64> = (1..=300).map(|i| k_cr * i as f64 / 300.0).collect();
                let locus = root_locus(&point, kappa, &gains)?;
                write_named(&args.out, name, &locus_csv(&locus))?;
            }
        }
        "fig15" => {
            let dt = 0.02;
            let segments = [(0.1, 2.0), (0.3, 1.0), (0.2, 5.0)];
            for (idx, &(amp, freq)) in segments.iter().enumerate() {
                let series =
                    divland::detect::burst_signal(amp, freq, 0.02, dt, 10.0, (3.0, 7.0), args.seed + idx as u64);
                let h = (1.0 / freq / dt / 2.0f64).round() as usize;
                let mut det = CovarianceDetector::new(DetectorConfig {
                    h0: h,
                    h_max: h.max(40),
                    n_w_min: 2 * h,
                    adapt: false,
                    ..DetectorConfig::default()
                });
                let mut csv = String::from("t,signal,cov,oscillating\n");
                for (i, &x) in series.iter().enumerate() {
                    let t = i as f64 * dt;
                    let v = det.step(x, dt);
                    csv.push_str(&format!(
                        "{t:.3},{x:.6},{},{}\n",
                        v.cov.map_or(String::new(), |c| format!("{c:.6}")),
                        u8::from(v.oscillating)
                    ));
                }
                write_named(&args.out, &format!("fig15_signal_{}.csv", idx + 1), &csv)?;
                let period = dominant_period(&series, dt);
                println!(
                    "signal {} ({amp} at {freq} Hz): dominant period {:?} s",
                    idx + 1,
                    period
                );
            }
        }
        "fig17" => {
            for (d_star, name) in [
                (-0.1, "fig17_adaptive_dstar01.csv"),
                (-0.2, "fig17_adaptive_dstar02.csv"),
                (-0.3, "fig17_adaptive_dstar03.csv"),
            ] {
                let sc = Scenario {
                    z0: 4.0,
                    dt: 0.05,
                    d_star,
                    estimator: EstimatorSource::Channel {
                        kind: NoiseKind::Size,
                        lag: 1,
                        noise: true,
                    },
                    controller: ControllerMode::Adaptive(LandingConfig {
                        d_star,
                        ..LandingConfig::default()
                    }),
                    max_duration: 250.0,
                    seed: args.seed,
                    ..Scenario::default()
                };
                let (log, summary) = run(&sc)?;
                write_named(&args.out, name, &log.to_csv())?;
                println!(
                    "D* = {d_star}: touchdown {:?} s at {:?} m/s, post-search events {}",
                    summary.touchdown_time, summary.touchdown_speed, summary.post_search_events
                );
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown figure {other:?} (expected fig4|fig10|fig12|fig14|fig15|fig17)"
            ))
            .into())
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_named(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}
