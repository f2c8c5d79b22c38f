//! Benchmark grids: low-rank factor quality, exponential integrators and
//! the forcing term `b`, each against an exact reference.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sdie::expsolver::{compute_b, exp_apply, propagate, BMethod, PropagatorConfig, Scheme};
use sdie::graph::{FidelityData, GaussianSimilarity, LaplacianKind};
use sdie::imgpipe::{benchmark_image, extract_features, ImageTensor, PixelScale};
use sdie::lowrank::{
    nystrom_classic, nystrom_qr, optimal_error_from_spectrum, relative_frobenius_error_implicit, GroupedLaplacian,
    LowRankLaplacian,
};
use sdie::oracle::{loglog_slope, random_instance, random_state, DenseOperator};

use crate::pipeline::derived_seed;
use crate::CliError;

/// Largest number of distinct feature vectors for the exact reference.
pub const GROUP_CAP: usize = 3000;
/// Largest graph for the dense oracle.
pub const ORACLE_CAP: usize = 1500;
/// Relative errors below this are treated as the rounding floor.
pub const FLOOR: f64 = 1e-12;

fn rel_err(x: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[derive(Clone, Debug)]
pub struct LowRankOptions {
    /// Image file; the builtin benchmark image of side `side` otherwise.
    pub image: Option<PathBuf>,
    pub side: usize,
    pub ks: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub sigma: f64,
    pub pixel_scale: PixelScale,
}

impl Default for LowRankOptions {
    fn default() -> Self {
        Self {
            image: None,
            side: 80,
            ks: vec![50, 100, 150, 200, 250, 300],
            repeats: 100,
            seed: 0,
            sigma: 35.0,
            pixel_scale: PixelScale::Byte,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankRow {
    pub method: &'static str,
    pub k: usize,
    pub seed: u64,
    /// NaN when the factorization failed for this seed.
    pub error: f64,
    pub seconds: f64,
}

/// Relative Frobenius errors of the Nyström variants over `K` and seeds,
/// plus the truncated-SVD optimum. The exact symmetric Laplacian is applied
/// through its feature groups, so images must have few distinct patches.
/// The interpolation pool is the first half of the pixels.
pub fn bench_lowrank(o: &LowRankOptions) -> Result<Vec<LowRankRow>, CliError> {
    let img = match &o.image {
        Some(p) => ImageTensor::load(p)?,
        None => benchmark_image(o.side),
    };
    let feats = extract_features(&img, o.pixel_scale);
    let sim = GaussianSimilarity::new(o.sigma, feats.ell())?;
    let n = feats.n();
    let grouped = GroupedLaplacian::from_features(n, |i| feats.row(i), &sim)?;
    if grouped.groups() > GROUP_CAP {
        return Err(CliError::Input(format!(
            "image has {} distinct patches; the exact reference supports at most {GROUP_CAP}",
            grouped.groups()
        )));
    }
    if let Some(&k) = o.ks.iter().find(|&&k| k < 2 || k > n) {
        return Err(CliError::Input(format!("rank {k} outside [2, {n}]")));
    }
    let z: Vec<usize> = (0..n / 2).collect();
    let t = Instant::now();
    let eigs = grouped.eigenvalues()?;
    let svd_seconds = t.elapsed().as_secs_f64();
    let affinity = grouped.affinity();

    let mut rows: Vec<LowRankRow> = o
        .ks
        .iter()
        .map(|&k| LowRankRow {
            method: "truncated_svd",
            k,
            seed: o.seed,
            error: optimal_error_from_spectrum(&eigs, k),
            seconds: svd_seconds,
        })
        .collect();
    let jobs: Vec<(&'static str, usize, u64)> = o
        .ks
        .iter()
        .flat_map(|&k| {
            (0..o.repeats as u64).flat_map(move |r| {
                let s = derived_seed(o.seed, r);
                [("nystrom_qr", k, s), ("nystrom_classic", k, s)]
            })
        })
        .collect();
    let measured: Vec<LowRankRow> = jobs
        .par_iter()
        .map(|&(method, k, seed)| {
            let t = Instant::now();
            let lap = match method {
                "nystrom_qr" => nystrom_qr(&affinity, &z, k, seed, LaplacianKind::Symmetric),
                _ => nystrom_classic(&affinity, &z, k, seed, LaplacianKind::Symmetric),
            };
            let error = match lap.and_then(|l| relative_frobenius_error_implicit(&l, &grouped)) {
                Ok(e) => e,
                Err(e) => {
                    log::warn!("{method} K={k} seed={seed}: {e}");
                    f64::NAN
                }
            };
            LowRankRow { method, k, seed, error, seconds: t.elapsed().as_secs_f64() }
        })
        .collect();
    rows.extend(measured);
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankSummary {
    pub method: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub failures: usize,
    pub mean_seconds: f64,
}

/// Mean and (population) standard deviation per method and `K`, over the
/// seeds that succeeded.
pub fn summarize_lowrank(rows: &[LowRankRow]) -> Vec<LowRankSummary> {
    let mut keys: Vec<(&str, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.k)) {
            keys.push((r.method, r.k));
        }
    }
    keys.into_iter()
        .map(|(m, k)| {
            let sel: Vec<&LowRankRow> = rows.iter().filter(|r| r.method == m && r.k == k).collect();
            let ok: Vec<f64> = sel.iter().map(|r| r.error).filter(|e| e.is_finite()).collect();
            let c = ok.len() as f64;
            let mean = ok.iter().sum::<f64>() / c;
            let std = (ok.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / c).sqrt();
            LowRankSummary {
                method: m.to_string(),
                k,
                mean,
                std,
                runs: sel.len(),
                failures: sel.len() - ok.len(),
                mean_seconds: sel.iter().map(|r| r.seconds).sum::<f64>() / sel.len() as f64,
            }
        })
        .collect()
}

pub fn write_lowrank_csv(path: &Path, rows: &[LowRankRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "K", "seed", "rel_frobenius_error", "wall_time_seconds"])?;
    for r in rows {
        w.write_record([r.method.to_string(), r.k.to_string(), r.seed.to_string(), format!("{:?}", r.error), format!("{:.6}", r.seconds)])?;
    }
    w.flush()?;
    Ok(())
}

/// A seeded dense test problem: graph operator, fidelity and a state.
fn dense_problem(n: usize, seed: u64, kind: LaplacianKind) -> Result<(DenseOperator, Vec<f64>), CliError> {
    if !(2..=ORACLE_CAP).contains(&n) {
        return Err(CliError::Input(format!("n = {n} outside the dense oracle range [2, {ORACLE_CAP}]")));
    }
    if kind == LaplacianKind::Unnormalized {
        return Err(CliError::Input("low-rank factors need the symmetric or random-walk Laplacian".into()));
    }
    let (g, fid) = random_instance(seed, n, kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let u = random_state(n, &mut rng);
    Ok((DenseOperator::new(&g, &fid)?, u))
}

#[derive(Clone, Debug)]
pub struct ExpmOptions {
    pub n: usize,
    pub tau: f64,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub kind: LaplacianKind,
    /// Number of eigenpairs kept; `n` is full rank.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpmRow {
    pub scheme: String,
    pub k: usize,
    pub rank: usize,
    pub error: f64,
    pub seconds: f64,
}

/// Relative ℓ² errors of the integrators against the dense exponential.
/// Strang and Yoshida are compared with `e^{-τA}u`, Euler with the forced
/// map `S_τ u`. The row `strang-yoshida` is the relative distance between
/// the two splittings.
pub fn bench_expm(o: &ExpmOptions) -> Result<Vec<ExpmRow>, CliError> {
    if !(o.tau > 0.0) {
        return Err(CliError::Input(format!("tau must be positive, got {}", o.tau)));
    }
    let (op, u) = dense_problem(o.n, o.seed, o.kind)?;
    if o.rank == 0 || o.rank > o.n {
        return Err(CliError::Input(format!("rank {} outside [1, {}]", o.rank, o.n)));
    }
    let lap = LowRankLaplacian::from_graph_spectrum(op.graph(), o.rank)?;
    let fid = op.fidelity();
    let exact_hom = op.expm_apply(o.tau, &u);
    let exact_full = op.exact_s_tau(&u, o.tau);
    let mut rows = Vec::new();
    for &k in &o.ks {
        if k == 0 {
            return Err(CliError::Input("substep counts must be positive".into()));
        }
        let timed = |scheme: Scheme| -> Result<(Vec<f64>, f64), CliError> {
            let t = Instant::now();
            let v = if scheme == Scheme::Euler {
                propagate(&u, &PropagatorConfig::new(o.tau, scheme, k), &lap, fid)?
            } else {
                exp_apply(&u, o.tau, k, scheme, &lap, fid.mu())?
            };
            Ok((v, t.elapsed().as_secs_f64()))
        };
        let (ve, te) = timed(Scheme::Euler)?;
        let (vs, ts) = timed(Scheme::Strang)?;
        let (vy, ty) = timed(Scheme::Yoshida)?;
        let row = |s: &str, e: f64, t: f64| ExpmRow { scheme: s.into(), k, rank: o.rank, error: e, seconds: t };
        rows.push(row("euler", rel_err(&ve, &exact_full), te));
        rows.push(row("strang", rel_err(&vs, &exact_hom), ts));
        rows.push(row("yoshida", rel_err(&vy, &exact_hom), ty));
        rows.push(row("strang-yoshida", rel_err(&vs, &vy), 0.0));
    }
    Ok(rows)
}

/// Fitted order `p` in `error ≈ C k^{-p}` for one scheme, over points above
/// the rounding floor. `None` with fewer than two usable points.
pub fn fitted_order(rows: &[ExpmRow], scheme: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.scheme == scheme && r.error > FLOOR && r.error.is_finite())
        .map(|r| (r.k as f64, r.error))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Some(-loglog_slope(&x, &y))
}

pub fn write_expm_csv(path: &Path, rows: &[ExpmRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scheme", "k", "K", "rel_l2_error", "seconds"])?;
    for r in rows {
        w.write_record([r.scheme.clone(), r.k.to_string(), r.rank.to_string(), format!("{:?}", r.error), format!("{:.6}", r.seconds)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct BOptions {
    pub n: usize,
    pub taus: Vec<f64>,
    /// Ranks; values ≥ n mean full rank.
    pub ranks: Vec<usize>,
    pub k_b: usize,
    pub m: usize,
    pub seed: u64,
    pub kind: LaplacianKind,
    pub quad_scheme: Scheme,
    /// Replace the forcing by zero.
    pub zero_forcing: bool,
}

impl Default for BOptions {
    fn default() -> Self {
        Self {
            n: 40,
            taus: vec![0.5, 4.0],
            ranks: vec![40, 10],
            k_b: 1000,
            m: 500,
            seed: 0,
            kind: LaplacianKind::Symmetric,
            quad_scheme: Scheme::Yoshida,
            zero_forcing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BRow {
    pub method: String,
    /// `m` for composite Simpson, `k_b` otherwise.
    pub param: usize,
    pub rank: usize,
    pub tau: f64,
    /// Relative ℓ² error; absolute when the reference is zero.
    pub error: f64,
}

/// Every b method against `A⁻¹(I − e^{−τA})f` from the dense oracle.
pub fn bench_b(o: &BOptions) -> Result<Vec<BRow>, CliError> {
    let (op, _) = dense_problem(o.n, o.seed, o.kind)?;
    let fid = if o.zero_forcing {
        let f = op.fidelity();
        Arc::new(FidelityData::new(f.mu().to_vec(), vec![0.0; o.n])?)
    } else {
        Arc::new(op.fidelity().clone())
    };
    let op = if o.zero_forcing { DenseOperator::new(op.graph(), &fid)? } else { op };
    let methods = [
        BMethod::Trapezium,
        BMethod::Midpoint,
        BMethod::Simpson,
        BMethod::CompositeSimpson(o.m),
        BMethod::OdeEuler,
        BMethod::Woodbury,
    ];
    let mut rows = Vec::new();
    for &tau in &o.taus {
        if !(tau > 0.0) {
            return Err(CliError::Input(format!("tau must be positive, got {tau}")));
        }
        let reference = op.b(tau);
        for &rank in &o.ranks {
            let rank = rank.min(o.n).max(1);
            let lap = LowRankLaplacian::from_graph_spectrum(op.graph(), rank)?;
            for &m in &methods {
                let cfg = PropagatorConfig::new(tau, Scheme::Strang, 1).with_b(m, o.k_b).with_quad_scheme(o.quad_scheme);
                let b = compute_b(&cfg, &lap, &fid)?;
                let error = if reference.iter().all(|&x| x == 0.0) {
                    b.iter().map(|x| x * x).sum::<f64>().sqrt()
                } else {
                    rel_err(&b, &reference)
                };
                let param = if let BMethod::CompositeSimpson(m) = m { m } else { o.k_b };
                rows.push(BRow { method: m.name(), param, rank, tau, error });
            }
        }
    }
    Ok(rows)
}

pub fn write_b_csv(path: &Path, rows: &[BRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["b_method", "k_b_or_m", "K", "tau", "rel_l2_error"])?;
    for r in rows {
        w.write_record([r.method.clone(), r.param.to_string(), r.rank.to_string(), format!("{:?}", r.tau), format!("{:?}", r.error)])?;
    }
    w.flush()?;
    Ok(())
}
