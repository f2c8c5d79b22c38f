use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdie::expsolver::Scheme;
use sdie::graph::LaplacianKind;
use sdie::imgpipe::PixelScale;
use sdie::oracle::{verify_theorems, VerifyConfig};
use sdie_cli::bench::{self, BOptions, ExpmOptions, LowRankOptions};
use sdie_cli::pipeline::{cmd_montecarlo, cmd_segment};
use sdie_cli::{parse_list, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "sdie", version, about = "Graph-based image segmentation with SDIE/MBO schemes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment a target image from a labelled reference.
    Segment(ConfigArgs),
    /// Repeat segmentation with independent interpolation sets.
    Montecarlo {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Nyström variants against the exact symmetric Laplacian.
    BenchLowrank {
        #[arg(long)]
        seed: u64,
        /// Image file (few distinct patches); builtin two-tone image otherwise.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 80)]
        side: usize,
        #[arg(long, default_value = "50,100,150,200,250,300")]
        ks: String,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 35.0)]
        sigma: f64,
        #[arg(long, default_value = "byte")]
        pixel_scale: PixelScale,
        #[arg(long, default_value = "bench_lowrank.csv")]
        out: PathBuf,
    },
    /// Integrator errors against the dense exponential.
    BenchExpm {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value = "1,2,4,8,16,32,64,128")]
        ks: String,
        /// full, sqrt or both
        #[arg(long, default_value = "both")]
        rank_mode: String,
        #[arg(long, default_value = "symmetric")]
        kind: LaplacianKind,
        #[arg(long, default_value = "bench_expm.csv")]
        out: PathBuf,
    },
    /// Forcing-term methods against the dense integral.
    BenchB {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value = "0.5,4")]
        taus: String,
        /// Ranks; values at or above n mean full rank.
        #[arg(long, default_value = "40,10")]
        ranks: String,
        #[arg(long, default_value_t = 1000)]
        k_b: usize,
        #[arg(long, default_value_t = 500)]
        m: usize,
        #[arg(long, default_value = "symmetric")]
        kind: LaplacianKind,
        #[arg(long, default_value = "yoshida")]
        quad_scheme: Scheme,
        #[arg(long)]
        zero_forcing: bool,
        #[arg(long, default_value = "bench_b.csv")]
        out: PathBuf,
    },
    /// Property battery on random dense instances.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 6)]
        n_min: usize,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negative control: invert the update threshold.
        #[arg(long, hide = true)]
        tamper: bool,
    },
}

/// Flags mirror the config keys and override the `--config` file.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    mu_hat: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_b: Option<String>,
    #[arg(long)]
    b_method: Option<String>,
    #[arg(long)]
    quad_scheme: Option<String>,
    #[arg(long)]
    pixel_scale: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    redraws: Option<String>,
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    truth: Option<String>,
    #[arg(long)]
    synthetic_side: Option<String>,
    #[arg(long)]
    synthetic_noise: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("eps", &self.eps),
            ("tau", &self.tau),
            ("delta", &self.delta),
            ("max_iter", &self.max_iter),
            ("mu_hat", &self.mu_hat),
            ("sigma", &self.sigma),
            ("rank", &self.rank),
            ("normalization", &self.normalization),
            ("scheme", &self.scheme),
            ("k", &self.k),
            ("k_b", &self.k_b),
            ("b_method", &self.b_method),
            ("quad_scheme", &self.quad_scheme),
            ("pixel_scale", &self.pixel_scale),
            ("seed", &self.seed),
            ("redraws", &self.redraws),
            ("reference", &self.reference),
            ("labels", &self.labels),
            ("target", &self.target),
            ("truth", &self.truth),
            ("synthetic_side", &self.synthetic_side),
            ("synthetic_noise", &self.synthetic_noise),
            ("out", &self.out),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Segment(a) => {
            let cfg = a.resolve()?;
            let r = cmd_segment(&cfg)?;
            let err = r.error.map(|e| format!(", segmentation error {:.4}%", 100.0 * e)).unwrap_or_default();
            println!(
                "segment: {} iterations ({}), {:.3}s{err}; outputs in {}",
                r.iterations,
                if r.converged { "converged" } else { "max_iter reached" },
                r.seconds,
                cfg.out.display()
            );
        }
        Cmd::Montecarlo { cfg, repeats } => {
            let cfg = cfg.resolve()?;
            let s = cmd_montecarlo(&cfg, repeats)?;
            println!(
                "montecarlo: {repeats} runs, mean pointwise std {:.6}, max {:.6}; outputs in {}",
                s.mean_std(),
                s.max_std(),
                cfg.out.display()
            );
        }
        Cmd::BenchLowrank { seed, image, side, ks, repeats, sigma, pixel_scale, out } => {
            let o = LowRankOptions { image, side, ks: parse_list("--ks", &ks)?, repeats, seed, sigma, pixel_scale };
            let rows = bench::bench_lowrank(&o)?;
            bench::write_lowrank_csv(&out, &rows)?;
            println!("method,K,mean_error,std_error,failures,mean_seconds");
            for s in bench::summarize_lowrank(&rows) {
                println!("{},{},{:.6e},{:.3e},{},{:.4}", s.method, s.k, s.mean, s.std, s.failures, s.mean_seconds);
            }
        }
        Cmd::BenchExpm { seed, n, tau, ks, rank_mode, kind, out } => {
            let ks = parse_list("--ks", &ks)?;
            let sqrt = ((n as f64).sqrt().round() as usize).max(1);
            let ranks = match rank_mode.as_str() {
                "full" => vec![n],
                "sqrt" => vec![sqrt],
                "both" => vec![n, sqrt],
                m => return Err(CliError::Input(format!("--rank-mode must be full, sqrt or both, got '{m}'"))),
            };
            let mut rows = Vec::new();
            for rank in ranks {
                let r = bench::bench_expm(&ExpmOptions { n, tau, ks: ks.clone(), seed, kind, rank })?;
                for s in ["euler", "strang", "yoshida", "strang-yoshida"] {
                    let p = bench::fitted_order(&r, s).map(|p| format!("{p:.3}")).unwrap_or("n/a".into());
                    println!("K={rank} {s}: fitted order {p}");
                }
                rows.extend(r);
            }
            bench::write_expm_csv(&out, &rows)?;
        }
        Cmd::BenchB { seed, n, taus, ranks, k_b, m, kind, quad_scheme, zero_forcing, out } => {
            let o = BOptions {
                n,
                taus: parse_list("--taus", &taus)?,
                ranks: parse_list("--ranks", &ranks)?,
                k_b,
                m,
                seed,
                kind,
                quad_scheme,
                zero_forcing,
            };
            let rows = bench::bench_b(&o)?;
            bench::write_b_csv(&out, &rows)?;
            for r in &rows {
                println!("tau={} K={} {}: {:.3e}", r.tau, r.rank, r.method, r.error);
            }
        }
        Cmd::Verify { seed, trials, n_min, n_max, out, tamper } => {
            let report = verify_theorems(&VerifyConfig { seed, n_min, n_max, trials, tamper })?;
            println!("{:<24} {:>6} {:>14} {:>10}  result", "property", "trials", "worst_margin", "tolerance");
            for r in &report.results {
                println!(
                    "{:<24} {:>6} {:>14.3e} {:>10.1e}  {}",
                    r.property,
                    r.trials,
                    r.worst_margin,
                    r.tolerance,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            if let Some(p) = out {
                std::fs::write(&p, report.to_csv())?;
            }
            if !report.all_pass() {
                let failed: Vec<&str> = report.results.iter().filter(|r| !r.pass).map(|r| r.property.as_str()).collect();
                return Err(CliError::Battery(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
