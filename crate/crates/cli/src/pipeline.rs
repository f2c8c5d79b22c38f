//! Segmentation runs and Monte-Carlo uncertainty maps.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sdie::engine::{run_sdie, RunStatus, SdieParams};
use sdie::expsolver::{ForcedDiffusion, PropagatorConfig};
use sdie::graph::{GaussianSimilarity, Graph};
use sdie::imgpipe::{assemble_problem, synthetic_pair, ImageTensor, LabelMask, SegmentationProblem};
use sdie::lowrank::{nystrom_qr, LowRankLaplacian};

use crate::{ensure_dir, CliError, RunConfig};

/// Largest vertex count for which exact (dense) factors are built.
pub const DENSE_CAP: usize = 4000;

pub struct Inputs {
    pub reference: ImageTensor,
    pub labels: LabelMask,
    pub target: ImageTensor,
    pub truth: Option<LabelMask>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    match (&cfg.reference, &cfg.labels, &cfg.target) {
        (Some(r), Some(l), Some(t)) => {
            let truth = cfg.truth.as_deref().map(LabelMask::load).transpose()?;
            Ok(Inputs {
                reference: ImageTensor::load(r)?,
                labels: LabelMask::load(l)?,
                target: ImageTensor::load(t)?,
                truth,
            })
        }
        _ => {
            let p = synthetic_pair(cfg.synthetic_side, cfg.synthetic_noise, cfg.seed);
            Ok(Inputs {
                reference: p.reference,
                labels: p.reference_labels,
                target: p.target,
                truth: Some(p.target_truth),
            })
        }
    }
}

pub fn build_problem(cfg: &RunConfig, inputs: &Inputs) -> Result<SegmentationProblem, CliError> {
    let sim = GaussianSimilarity::new(cfg.sigma, 9 * inputs.reference.channels())?;
    Ok(assemble_problem(&inputs.reference, &inputs.labels, &inputs.target, cfg.mu_hat, sim, cfg.pixel_scale)?)
}

/// Seed of the `attempt`-th redraw of an interpolation set.
pub fn redraw_seed(seed: u64, attempt: u64) -> u64 {
    if attempt == 0 {
        return seed;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - attempt);
    rng.next_u64()
}

/// Nyström-QR factors from the supervised vertices, or exact spectral
/// factors when `rank` reaches the vertex count. A draw whose interpolation
/// block is ill-conditioned or whose degree estimate is not positive is
/// redrawn up to `cfg.redraws` times. Returns the factors and the number of
/// redraws used.
pub fn build_laplacian(problem: &SegmentationProblem, cfg: &RunConfig, seed: u64) -> Result<(LowRankLaplacian, usize), CliError> {
    let n = problem.n();
    if cfg.rank >= n {
        if n > DENSE_CAP {
            return Err(CliError::Input(format!("rank {} >= n = {n} needs dense factors; limit is {DENSE_CAP} vertices", cfg.rank)));
        }
        let g = Graph::from_affinity(&problem.weights, cfg.normalization)?;
        return Ok((LowRankLaplacian::from_graph_spectrum(&g, n)?, 0));
    }
    let mut attempt = 0;
    loop {
        let s = redraw_seed(seed, attempt as u64);
        match nystrom_qr(&problem.weights, problem.supervised(), cfg.rank, s, cfg.normalization) {
            Ok(lap) => return Ok((lap, attempt)),
            Err(e @ (sdie::Error::DegenerateDegree { .. } | sdie::Error::IllConditioned { .. })) if attempt < cfg.redraws => {
                log::warn!("interpolation set {attempt} rejected ({e}); redrawing");
                attempt += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentResult {
    pub u: Vec<f64>,
    pub mask: LabelMask,
    pub iterations: usize,
    pub converged: bool,
    /// Interpolation sets rejected before one was accepted.
    pub redraws: usize,
    pub seconds: f64,
    pub error: Option<f64>,
}

/// One end-to-end run; `seed` drives the interpolation set.
pub fn segment_problem(
    problem: &SegmentationProblem,
    cfg: &RunConfig,
    seed: u64,
    truth: Option<&LabelMask>,
) -> Result<SegmentResult, CliError> {
    let start = Instant::now();
    let (lap, redraws) = build_laplacian(problem, cfg, seed)?;
    let pcfg = PropagatorConfig::new(cfg.tau, cfg.scheme, cfg.k)
        .with_b(cfg.b_method, cfg.k_b)
        .with_quad_scheme(cfg.quad_scheme);
    let map = ForcedDiffusion::new(pcfg, Arc::new(lap), Arc::new(problem.fidelity.clone()))?;
    let params = SdieParams::new(cfg.eps, cfg.tau, cfg.delta, cfg.max_iter)?;
    let out = run_sdie(&problem.u0, &params, &map)?;
    let mask = problem.target_mask(&out.state.u);
    let error = truth.map(|t| mask.error_rate(t)).transpose()?;
    Ok(SegmentResult {
        mask,
        u: out.state.u,
        iterations: out.state.iter,
        converged: out.status == RunStatus::Converged,
        redraws,
        seconds: start.elapsed().as_secs_f64(),
        error,
    })
}

fn write_metadata(path: &Path, cfg: &RunConfig, results: &[(&str, String)]) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(cfg.to_text().as_bytes())?;
    for (k, v) in results {
        writeln!(f, "result.{k} = {v}")?;
    }
    Ok(())
}

fn mask_weights(mask: &LabelMask) -> Vec<f64> {
    mask.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// `segment`: writes `labels.png`, `masked.png`, `u.bin` (little-endian
/// f64 of all vertices) and `run.cfg`.
pub fn cmd_segment(cfg: &RunConfig) -> Result<SegmentResult, CliError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let problem = build_problem(cfg, &inputs)?;
    let res = segment_problem(&problem, cfg, cfg.seed, inputs.truth.as_ref())?;
    ensure_dir(&cfg.out)?;
    res.mask.save_png(&cfg.out.join("labels.png"))?;
    inputs.target.weighted(&mask_weights(&res.mask))?.save_png(&cfg.out.join("masked.png"))?;
    let bytes: Vec<u8> = res.u.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(cfg.out.join("u.bin"), bytes)?;
    let mut meta = vec![
        ("iterations", res.iterations.to_string()),
        ("converged", res.converged.to_string()),
        ("redraws", res.redraws.to_string()),
        ("seconds", format!("{:.6}", res.seconds)),
    ];
    if let Some(e) = res.error {
        meta.push(("segmentation_error", format!("{e:?}")));
    }
    write_metadata(&cfg.out.join("run.cfg"), cfg, &meta)?;
    Ok(res)
}

/// Seed of run `r`: stream `r` of a ChaCha generator keyed by the base seed.
pub fn derived_seed(base: u64, run: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(run);
    rng.next_u64()
}

#[derive(Clone, Debug)]
pub struct MonteCarloSummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Per run: the segmentation error (if ground truth is known), or the
    /// numeric failure that dropped the run from the maps.
    pub runs: Vec<Result<Option<f64>, String>>,
}

impl MonteCarloSummary {
    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len() as f64
    }
    pub fn max_std(&self) -> f64 {
        self.std.iter().cloned().fold(0.0, f64::max)
    }
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.is_err()).count()
    }
}

/// Runs `repeats` segmentations with derived seeds and summarizes the
/// thresholded labels pointwise. Runs whose factorization fails numerically
/// are reported and left out; at least two must succeed. No files are
/// written.
pub fn montecarlo(cfg: &RunConfig, inputs: &Inputs, repeats: usize) -> Result<MonteCarloSummary, CliError> {
    if repeats < 2 {
        return Err(CliError::Input("montecarlo needs at least 2 repeats".into()));
    }
    let problem = build_problem(cfg, inputs)?;
    let seeds: Vec<u64> = (0..repeats as u64).map(|r| derived_seed(cfg.seed, r)).collect();
    let results: Vec<Result<SegmentResult, CliError>> =
        seeds.par_iter().map(|&s| segment_problem(&problem, cfg, s, inputs.truth.as_ref())).collect();
    let mut ok = Vec::new();
    let mut runs = Vec::new();
    for (r, seed) in results.into_iter().zip(&seeds) {
        match r {
            Ok(x) => {
                runs.push(Ok(x.error));
                ok.push(x);
            }
            Err(e @ CliError::Numeric(_)) => {
                log::warn!("run with seed {seed} dropped: {e}");
                runs.push(Err(e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    if ok.len() < 2 {
        return Err(CliError::Numeric(format!("only {} of {repeats} runs succeeded", ok.len())));
    }
    let p = ok[0].mask.labels.len();
    let r = ok.len() as f64;
    let mut count = vec![0usize; p];
    for run in &ok {
        for (i, &b) in run.mask.labels.iter().enumerate() {
            count[i] += b as usize;
        }
    }
    let mean: Vec<f64> = count.iter().map(|&c| c as f64 / r).collect();
    // labels are 0/1, so the variance is m(1 − m)
    let std = mean.iter().map(|m| (m * (1.0 - m)).max(0.0).sqrt()).collect();
    Ok(MonteCarloSummary { mean, std, seeds, runs })
}

/// `montecarlo`: writes mean/std maps (std scaled by 2 to fill the range),
/// the target weighted by each, `runs.csv` and `run.cfg`.
pub fn cmd_montecarlo(cfg: &RunConfig, repeats: usize) -> Result<MonteCarloSummary, CliError> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let s = montecarlo(cfg, &inputs, repeats)?;
    ensure_dir(&cfg.out)?;
    let (h, w) = (inputs.target.height(), inputs.target.width());
    let std2: Vec<f64> = s.std.iter().map(|v| (2.0 * v).min(1.0)).collect();
    ImageTensor::new(h, w, 1, s.mean.clone())?.save_png(&cfg.out.join("mean.png"))?;
    ImageTensor::new(h, w, 1, std2.clone())?.save_png(&cfg.out.join("std.png"))?;
    inputs.target.weighted(&s.mean)?.save_png(&cfg.out.join("mean_weighted.png"))?;
    inputs.target.weighted(&std2)?.save_png(&cfg.out.join("std_weighted.png"))?;
    let mut wtr = csv::Writer::from_path(cfg.out.join("runs.csv"))?;
    wtr.write_record(["run", "seed", "status", "segmentation_error"])?;
    for (i, (seed, r)) in s.seeds.iter().zip(&s.runs).enumerate() {
        let (status, e) = match r {
            Ok(e) => ("ok".to_string(), e.map(|v| format!("{v:?}")).unwrap_or_default()),
            Err(msg) => (format!("failed: {msg}"), String::new()),
        };
        wtr.write_record([i.to_string(), seed.to_string(), status, e])?;
    }
    wtr.flush()?;
    write_metadata(
        &cfg.out.join("run.cfg"),
        cfg,
        &[
            ("repeats", repeats.to_string()),
            ("failed_runs", s.failures().to_string()),
            ("mean_std", format!("{:?}", s.mean_std())),
            ("max_std", format!("{:?}", s.max_std())),
        ],
    )?;
    Ok(s)
}
