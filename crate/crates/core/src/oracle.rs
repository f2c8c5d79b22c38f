//! Dense exact references at small `n`, random test instances, and the
//! numerical property battery.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{self, apply_update, lyapunov_h, SolutionMap, UpdateRule};
use crate::error::{check_len, Error, Result};
use crate::graph::{self, FidelityData, Graph, LaplacianKind};
use crate::linalg::{self, col_vec, sym_eigen, sym_eigenvalues};

/// `A = Δ + diag(μ)` with a cached eigendecomposition of its symmetric
/// similarity transform `Â = S A S⁻¹` (`S = D^{1/2}` for the random-walk
/// Laplacian, `I` otherwise).
pub struct DenseOperator {
    graph: Graph,
    fid: FidelityData,
    a: Mat<f64>,
    scale: Vec<f64>,
    q: Mat<f64>,
    xi: Vec<f64>,
    norm_delta: f64,
    expm_cache: Mutex<HashMap<u64, Arc<Mat<f64>>>>,
}

impl std::fmt::Debug for DenseOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseOperator").field("n", &self.n()).field("xi1", &self.xi1()).finish()
    }
}

impl DenseOperator {
    pub fn new(g: &Graph, fid: &FidelityData) -> Result<Self> {
        check_len("fidelity data", g.n(), fid.n())?;
        let n = g.n();
        let lap = g.laplacian()?;
        let mu = fid.mu();
        let a = Mat::from_fn(n, n, |i, j| lap[(i, j)] + if i == j { mu[i] } else { 0.0 });
        let scale: Vec<f64> = match g.kind() {
            LaplacianKind::RandomWalk => g.degrees().iter().map(|d| d.sqrt()).collect(),
            _ => vec![1.0; n],
        };
        let sym_lap = match g.kind() {
            LaplacianKind::RandomWalk => graph::dense_laplacian(g, LaplacianKind::Symmetric)?,
            _ => lap,
        };
        let a_hat = Mat::from_fn(n, n, |i, j| sym_lap[(i, j)] + if i == j { mu[i] } else { 0.0 });
        let (xi, q) = sym_eigen(&linalg::symmetrize(&a_hat))?;
        let norm_delta = sym_eigenvalues(&linalg::symmetrize(&sym_lap))?
            .into_iter()
            .fold(0.0, |m: f64, v| m.max(v.abs()));
        Ok(Self {
            graph: g.clone(),
            fid: fid.clone(),
            a,
            scale,
            q,
            xi,
            norm_delta,
            expm_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn n(&self) -> usize {
        self.xi.len()
    }
    pub fn graph(&self) -> &Graph {
        &self.graph
    }
    pub fn fidelity(&self) -> &FidelityData {
        &self.fid
    }
    pub fn a(&self) -> &Mat<f64> {
        &self.a
    }
    /// Eigenvalues of `A`, ascending.
    pub fn spectrum(&self) -> &[f64] {
        &self.xi
    }
    pub fn xi1(&self) -> f64 {
        self.xi[0]
    }
    /// Operator norm of `Δ` in the graph's inner product.
    pub fn norm_delta(&self) -> f64 {
        self.norm_delta
    }

    /// `S⁻¹ Q diag(w(ξ)) Qᵀ S u`.
    fn spectral(&self, u: &[f64], w: impl Fn(f64) -> f64) -> Vec<f64> {
        let su: Vec<f64> = u.iter().zip(&self.scale).map(|(x, s)| x * s).collect();
        let ws: Vec<f64> = self.xi.iter().map(|&x| w(x)).collect();
        let y = linalg::spectral_apply(&self.q, &ws, &su);
        y.iter().zip(&self.scale).map(|(x, s)| x / s).collect()
    }

    /// `e^{-tA}u`.
    pub fn expm_apply(&self, t: f64, u: &[f64]) -> Vec<f64> {
        if t == 0.0 {
            return u.to_vec();
        }
        self.spectral(u, |x| (-t * x).exp())
    }

    /// Dense `e^{-tA}`, cached per `t`.
    pub fn expm_matrix(&self, t: f64) -> Arc<Mat<f64>> {
        let mut cache = self.expm_cache.lock().unwrap();
        cache
            .entry(t.to_bits())
            .or_insert_with(|| {
                let n = self.n();
                let cols: Vec<Vec<f64>> = (0..n)
                    .map(|j| {
                        let mut e = vec![0.0; n];
                        e[j] = 1.0;
                        self.expm_apply(t, &e)
                    })
                    .collect();
                Arc::new(Mat::from_fn(n, n, |i, j| cols[j][i]))
            })
            .clone()
    }

    pub fn a_inv_apply(&self, v: &[f64]) -> Vec<f64> {
        self.spectral(v, |x| 1.0 / x)
    }

    pub fn a_apply(&self, v: &[f64]) -> Vec<f64> {
        let y = &self.a * col_vec(v);
        y.col_as_slice(0).to_vec()
    }

    /// `b = A⁻¹(I − e^{-τA}) f` through the spectrum.
    pub fn b(&self, tau: f64) -> Vec<f64> {
        self.spectral(self.fid.forcing(), |x| -(-tau * x).exp_m1() / x)
    }

    /// `∫₀^τ e^{-tA} f dt` by composite 3-point Gauss-Legendre quadrature
    /// with exact exponentials; independent of the closed form in [`b`].
    ///
    /// [`b`]: DenseOperator::b
    pub fn b_by_quadrature(&self, tau: f64, panels: usize) -> Vec<f64> {
        let nodes = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
        let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let h = tau / panels as f64;
        let f = self.fid.forcing();
        let mut acc = vec![0.0; self.n()];
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights) {
                let e = self.expm_apply(mid + 0.5 * h * x, f);
                for (a, v) in acc.iter_mut().zip(e) {
                    *a += 0.5 * h * w * v;
                }
            }
        }
        acc
    }

    /// `S_τ u = e^{-τA}u + b`.
    pub fn exact_s_tau(&self, u: &[f64], tau: f64) -> Vec<f64> {
        let mut v = self.expm_apply(tau, u);
        for (x, b) in v.iter_mut().zip(self.b(tau)) {
            *x += b;
        }
        v
    }

    /// `Q_τ v = τ⁻²(I − τA − e^{-τA}) v`, evaluated spectrally without
    /// cancellation at small `τξ`.
    pub fn q_tau_apply(&self, tau: f64, v: &[f64]) -> Vec<f64> {
        self.spectral(v, |xi| {
            let x = tau * xi;
            let g = if x.abs() < 1e-2 {
                -(x * x / 2.0 - x.powi(3) / 6.0 + x.powi(4) / 24.0 - x.powi(5) / 120.0)
            } else {
                -((-x).exp_m1() + x)
            };
            g / (tau * tau)
        })
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.graph.inner(u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.graph.norm(u)
    }

    pub fn diffusion(&self, tau: f64) -> ExactDiffusion<'_> {
        ExactDiffusion { op: self, tau, b: self.b(tau) }
    }

    pub fn gl(&self, u: &[f64], eps: f64) -> Result<f64> {
        graph::ginzburg_landau_fidelity(u, &self.graph, &self.fid, eps)
    }

    /// Fails when `1/ε` lies within `1e-8` of the spectrum of `A`.
    pub fn check_eps(&self, eps: f64) -> Result<()> {
        let inv = 1.0 / eps;
        let gap = self.xi.iter().map(|x| (x - inv).abs()).fold(f64::INFINITY, f64::min);
        if gap < 1e-8 {
            return Err(Error::Precondition(format!("1/eps = {inv} is within {gap:e} of the spectrum of A")));
        }
        Ok(())
    }

    /// SDIE iterate after `⌈t/τ_ref⌉` steps with the exact forced diffusion:
    /// the fine-step approximation of the Allen-Cahn solution at time `t`.
    pub fn ace_reference(&self, u0: &[f64], t: f64, eps: f64, tau_ref: f64) -> Result<Vec<f64>> {
        Ok(self.ace_trajectory(u0, t, eps, tau_ref, 1)?.pop().unwrap().1)
    }

    /// Snapshots `(time, u)` of the fine-step trajectory at `every`-step
    /// spacing, always including the start and the end.
    pub fn ace_trajectory(&self, u0: &[f64], t: f64, eps: f64, tau_ref: f64, every: usize) -> Result<Vec<(f64, Vec<f64>)>> {
        check_len("initial state", self.n(), u0.len())?;
        if !(tau_ref > 0.0) || tau_ref > eps {
            return Err(Error::Input(format!("reference step must lie in (0, eps], got {tau_ref}")));
        }
        self.check_eps(eps)?;
        let steps = steps_for(t, tau_ref);
        let lambda = tau_ref / eps;
        let map = self.diffusion(tau_ref);
        let mut u = u0.to_vec();
        let mut out = vec![(0.0, u.clone())];
        for s in 1..=steps {
            u = apply_update(&map.apply(&u), lambda, UpdateRule::Standard).0;
            if s % every.max(1) == 0 || s == steps {
                out.push((s as f64 * tau_ref, u.clone()));
            }
        }
        Ok(out)
    }
}

/// `⌈t/τ⌉`, tolerant to rounding in the quotient.
pub fn steps_for(t: f64, tau: f64) -> usize {
    (t / tau - 1e-9).ceil().max(0.0) as usize
}

/// The exact forced diffusion at a fixed `τ`.
pub struct ExactDiffusion<'a> {
    op: &'a DenseOperator,
    tau: f64,
    b: Vec<f64>,
}

impl SolutionMap for ExactDiffusion<'_> {
    fn n(&self) -> usize {
        self.op.n()
    }
    fn tau(&self) -> f64 {
        self.tau
    }
    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut v = self.op.expm_apply(self.tau, u);
        for (x, b) in v.iter_mut().zip(&self.b) {
            *x += b;
        }
        v
    }
    fn homogeneous(&self, u: &[f64]) -> Vec<f64> {
        self.op.expm_apply(self.tau, u)
    }
    fn forcing(&self) -> &[f64] {
        &self.b
    }
    fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.op.inner(u, v)
    }
}

/// Erdős-Rényi graph with edge probability `p`, weights uniform on
/// `(0.1, 1]`, redrawn until connected.
pub fn random_connected_graph(n: usize, p: f64, kind: LaplacianKind, rng: &mut impl Rng) -> Graph {
    loop {
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                if rng.gen::<f64>() < p {
                    let v = 1.0 - 0.9 * rng.gen::<f64>();
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        if let Ok(g) = Graph::from_dense(w, kind) {
            return g;
        }
    }
}

/// Random supervision: each vertex joins the support with probability ½
/// (at least one does), strengths uniform on `[0.5, 2)·scale`, labels
/// uniform on `[0, 1]`.
pub fn random_fidelity(n: usize, scale: f64, rng: &mut impl Rng) -> FidelityData {
    let mut mu = vec![0.0; n];
    let mut ft = vec![0.0; n];
    let forced = rng.gen_range(0..n);
    for i in 0..n {
        if i == forced || rng.gen_bool(0.5) {
            mu[i] = scale * rng.gen_range(0.5..2.0);
            ft[i] = rng.gen();
        }
    }
    FidelityData::new(mu, ft).expect("valid random fidelity")
}

pub fn random_state(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen()).collect()
}

/// A seeded random dense problem.
pub fn random_instance(seed: u64, n: usize, kind: LaplacianKind) -> (Graph, FidelityData) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_connected_graph(n, 0.5, kind, &mut rng);
    let fid = random_fidelity(n, 1.0, &mut rng);
    (g, fid)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyConfig {
    pub seed: u64,
    pub n_min: usize,
    pub n_max: usize,
    pub trials: usize,
    /// Negative control: run the SDIE checks with an inverted threshold.
    pub tamper: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seed: 2024, n_min: 6, n_max: 12, trials: 50, tamper: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub property: String,
    pub trials: usize,
    /// Smallest observed slack; negative means the inequality was violated.
    pub worst_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, property: &str) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.property == property)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("property,trials,worst_margin,tolerance,pass\n");
        for r in &self.results {
            s.push_str(&format!("{},{},{:e},{:e},{}\n", r.property, r.trials, r.worst_margin, r.tolerance, r.pass));
        }
        s
    }
}

/// Properties and their tolerances, in report order.
pub const PROPERTIES: &[(&str, f64)] = &[
    ("diffusion_comparison", 1e-10),
    ("diffusion_range", 1e-10),
    ("sdie_range", 0.0),
    ("beta_membership", 1e-12),
    ("beta_bound", 1e-12),
    ("beta_characterization", 1e-8),
    ("lyapunov_decrease", 1e-10),
    ("lyapunov_lower_bound", 1e-10),
    ("nth_term_identity", 1e-8),
    ("sdie_stability", 1e-8),
    ("ace_comparison", 1e-8),
    ("ace_stability", 1e-8),
    ("gl_decrease", 1e-8),
    ("holder_half", 1e-8),
    ("h_tau_identity", 1e-8),
    ("h_tau_linear_gap", 1e-8),
];

struct TrialMargins(HashMap<&'static str, f64>);

impl TrialMargins {
    fn new() -> Self {
        Self(HashMap::new())
    }
    fn record(&mut self, key: &'static str, margin: f64) {
        let e = self.0.entry(key).or_insert(f64::INFINITY);
        // NaN counts as a violation
        *e = if margin.is_nan() { f64::NEG_INFINITY } else { e.min(margin) };
    }
}

/// Runs the property battery on `trials` seeded random instances.
pub fn verify_theorems(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.n_min < 2 || cfg.n_max < cfg.n_min || cfg.trials == 0 {
        return Err(Error::Input("verify needs 2 <= n_min <= n_max and trials >= 1".into()));
    }
    let per_trial: Vec<TrialMargins> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t as u64))
        .collect::<Result<_>>()?;
    let mut results = Vec::new();
    for &(name, tol) in PROPERTIES {
        let worst = per_trial
            .iter()
            .filter_map(|m| m.0.get(name))
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let count = per_trial.iter().filter(|m| m.0.contains_key(name)).count();
        results.push(PropertyResult {
            property: name.to_string(),
            trials: count,
            worst_margin: worst,
            tolerance: tol,
            pass: count > 0 && worst >= -tol,
        });
    }
    Ok(VerifyReport { results })
}

fn run_trial(cfg: &VerifyConfig, trial: u64) -> Result<TrialMargins> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial);
    let n = rng.gen_range(cfg.n_min..=cfg.n_max);
    // the maximum principle behind several properties needs Δ1 = 0, which
    // the symmetric normalization lacks
    let kind = [LaplacianKind::RandomWalk, LaplacianKind::Unnormalized][trial as usize % 2];
    let g = random_connected_graph(n, 0.5, kind, &mut rng);
    let fid = random_fidelity(n, 1.0, &mut rng);
    let op = DenseOperator::new(&g, &fid)?;
    let rule = if cfg.tamper { UpdateRule::FlippedThreshold } else { UpdateRule::Standard };
    let mut m = TrialMargins::new();

    let eps = 0.2;
    let lambda = rng.gen_range(0.2..0.8);
    let tau = lambda * eps;
    let map = op.diffusion(tau);

    // forced diffusion: ordering and [0,1]
    let u0 = random_state(n, &mut rng);
    let v0: Vec<f64> = u0.iter().map(|x| x + (1.0 - x) * rng.gen::<f64>()).collect();
    let (su, sv) = (map.apply(&u0), map.apply(&v0));
    m.record("diffusion_comparison", min_diff(&sv, &su));
    m.record("diffusion_range", range_margin(&su).min(range_margin(&sv)));

    // SDIE trajectory
    let steps = 8;
    let traj = engine::trajectory(&u0, lambda, &map, steps, rule);
    let bound = -2.0 * tau * op.norm(fid.forcing()) * op.norm(&vec![1.0; n]);
    let mut h_prev = lyapunov_h(&u0, lambda, &map)?;
    m.record("lyapunov_lower_bound", h_prev - bound);
    let a_inf = inf_norm(op.a());
    let f_inf = fid.forcing().iter().cloned().fold(0.0, f64::max);
    for k in 1..=steps {
        let (u, beta) = &traj[k];
        let (up, _) = &traj[k - 1];
        m.record("sdie_range", range_margin(u));
        m.record("beta_membership", -engine::beta_membership_violation(u, beta));
        m.record("beta_bound", 0.5 - beta.iter().fold(0.0f64, |a, b| a.max(b.abs())));
        let h = lyapunov_h(u, lambda, &map)?;
        let step: Vec<f64> = u.iter().zip(up).map(|(a, b)| a - b).collect();
        m.record("lyapunov_decrease", h_prev - h - (1.0 - lambda) * op.inner(&step, &step));
        m.record("lyapunov_lower_bound", h - bound);
        h_prev = h;
    }

    // β against its continuum characterization, at vertices resting on an
    // obstacle; the discrepancy of one step is bounded by
    // ετ(‖A‖²_∞ + ‖A‖_∞‖f‖_∞)/2.
    {
        let tau_b = eps / 64.0;
        let lam_b = tau_b / eps;
        let map_b = op.diffusion(tau_b);
        let traj_b = engine::trajectory(&u0, lam_b, &map_b, 64, rule);
        let allowance = eps * tau_b * (a_inf * a_inf + a_inf * f_inf) / 2.0;
        let f = fid.forcing();
        let mu = fid.mu();
        for k in 1..traj_b.len() {
            let (prev, _) = &traj_b[k - 1];
            let (u, beta) = &traj_b[k];
            let lap_prev = delta_apply(&op, prev);
            for i in 0..n {
                let formula = if prev[i] == 0.0 && u[i] == 0.0 {
                    0.5 + eps * lap_prev[i] - eps * f[i]
                } else if prev[i] == 1.0 && u[i] == 1.0 {
                    -0.5 + eps * lap_prev[i] + eps * (mu[i] - f[i])
                } else {
                    continue;
                };
                m.record("beta_characterization", allowance - (beta[i] - formula).abs());
            }
        }
    }

    // closed-form nth term with the recorded β
    {
        let w: Vec<f64> = map.forcing().iter().map(|b| b - 0.5 * lambda).collect();
        let c = 1.0 / (1.0 - lambda);
        for nn in 1..=steps {
            let mut total = op.expm_apply(nn as f64 * tau, &u0);
            total.iter_mut().for_each(|x| *x *= c.powi(nn as i32));
            let mut scale = 0.0f64;
            for k in 1..=nn {
                let e = op.expm_apply((k - 1) as f64 * tau, &w);
                let ck = c.powi(k as i32);
                let eb = op.expm_apply((nn - k) as f64 * tau, &traj[k].1);
                let cb = lambda / (1.0 - lambda) * c.powi((nn - k) as i32);
                for i in 0..n {
                    total[i] += ck * e[i] + cb * eb[i];
                    scale = scale.max((ck * e[i]).abs()).max((cb * eb[i]).abs());
                }
            }
            let resid = linalg::norm2(&linalg::sub(&total, &traj[nn].0));
            m.record("nth_term_identity", -resid / scale.max(1.0));
        }
    }

    // SDIE stability for a second initial state
    {
        let w0 = random_state(n, &mut rng);
        let traj_w = engine::trajectory(&w0, lambda, &map, steps, rule);
        let d0 = op.norm(&linalg::sub(&u0, &w0));
        for k in 1..=steps {
            let dk = op.norm(&linalg::sub(&traj[k].0, &traj_w[k].0));
            let b = (-(k as f64) * op.xi1() * tau).exp() * (1.0 - lambda).powi(-(k as i32)) * d0;
            m.record("sdie_stability", b - dk);
        }
    }

    // Allen-Cahn references
    if op.check_eps(eps).is_ok() && rule == UpdateRule::Standard {
        let t_end = 0.5;
        let tau_ref = eps / 512.0;
        let every = 32;
        let tr_u = op.ace_trajectory(&u0, t_end, eps, tau_ref, every)?;
        let tr_v = op.ace_trajectory(&v0, t_end, eps, tau_ref, every)?;
        let d0 = op.norm(&linalg::sub(&u0, &v0));
        let gl0 = op.gl(&u0, eps)?;
        for ((t, uu), (_, vv)) in tr_u.iter().zip(&tr_v) {
            m.record("ace_comparison", min_diff(vv, uu));
            let bound = (-op.xi1() * t).exp() * (t / eps).exp() * d0;
            m.record("ace_stability", bound - op.norm(&linalg::sub(uu, vv)));
        }
        for a in 0..tr_u.len() {
            for b in a + 1..tr_u.len() {
                let (s, us) = &tr_u[a];
                let (t, ut) = &tr_u[b];
                let diff = op.norm(&linalg::sub(us, ut));
                let gap = op.gl(us, eps)? - op.gl(ut, eps)? - diff * diff / (2.0 * (t - s));
                m.record("gl_decrease", gap);
                m.record("holder_half", (t - s).sqrt() * (2.0 * gl0).sqrt() - diff);
            }
        }
    }

    // H_τ identity and its linear gap, at a random state
    {
        let u = random_state(n, &mut rng);
        let ft = fid.f_tilde();
        let mft: Vec<f64> = ft.iter().zip(fid.mu()).map(|(a, b)| a * b).collect();
        let half_fmf = 0.5 * op.inner(ft, &mft);
        let gl = op.gl(&u, eps)?;
        let ainv_f = op.a_inv_apply(fid.forcing());
        let arg: Vec<f64> = u.iter().zip(&ainv_f).map(|(a, b)| a - 2.0 * b).collect();
        let mut gaps = Vec::new();
        for tau_h in [1e-3, 5e-4, 2.5e-4] {
            let lam_h = tau_h / eps;
            let map_h = op.diffusion(tau_h);
            let h_tau = lyapunov_h(&u, lam_h, &map_h)? / (2.0 * tau_h);
            let corr = 0.5 * tau_h * op.inner(&u, &op.q_tau_apply(tau_h, &arg));
            let rhs = gl - half_fmf + corr;
            m.record("h_tau_identity", -(h_tau - rhs).abs() / gl.abs().max(1.0));
            gaps.push(h_tau + half_fmf - gl);
        }
        // halving τ should halve the gap
        for w in gaps.windows(2) {
            let ratio = w[1] / w[0];
            m.record("h_tau_linear_gap", 0.05 - (ratio - 0.5).abs());
        }
    }

    Ok(m)
}

fn delta_apply(op: &DenseOperator, u: &[f64]) -> Vec<f64> {
    let au = op.a_apply(u);
    au.iter().zip(op.fidelity().mu()).zip(u).map(|((a, m), x)| a - m * x).collect()
}

fn inf_norm(a: &Mat<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn min_diff(hi: &[f64], lo: &[f64]) -> f64 {
    hi.iter().zip(lo).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)
}

fn range_margin(u: &[f64]) -> f64 {
    u.iter().map(|&x| x.min(1.0 - x)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_spectrum() {
        let w = Mat::from_fn(2, 2, |i, j| if i == j { 0.0 } else { 1.0 });
        let g = Graph::from_dense(w, LaplacianKind::RandomWalk).unwrap();
        let fid = FidelityData::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        let op = DenseOperator::new(&g, &fid).unwrap();
        let s5 = 5f64.sqrt();
        assert!((op.spectrum()[0] - (3.0 - s5) / 2.0).abs() < 1e-14);
        assert!((op.spectrum()[1] - (3.0 + s5) / 2.0).abs() < 1e-14);
        assert_eq!(op.expm_apply(0.0, &[0.3, 0.4]), vec![0.3, 0.4]);
    }

    #[test]
    fn closed_form_b_matches_quadrature_and_equilibrium_is_fixed() {
        for (s, kind) in [(1, LaplacianKind::RandomWalk), (2, LaplacianKind::Symmetric), (3, LaplacianKind::Unnormalized)] {
            let (g, fid) = random_instance(s, 7, kind);
            let op = DenseOperator::new(&g, &fid).unwrap();
            let b = op.b(0.7);
            let q = op.b_by_quadrature(0.7, 200);
            assert!(linalg::norm2(&linalg::sub(&b, &q)) < 1e-12 * linalg::norm2(&b).max(1.0));
            let eq = op.a_inv_apply(fid.forcing());
            let out = op.exact_s_tau(&eq, 0.4);
            assert!(linalg::norm2(&linalg::sub(&out, &eq)) < 1e-12);
        }
    }

    #[test]
    fn exponential_is_nonnegative() {
        for s in 0..5 {
            let (g, fid) = random_instance(10 + s, 9, LaplacianKind::RandomWalk);
            let op = DenseOperator::new(&g, &fid).unwrap();
            for t in [0.01, 0.1, 1.0] {
                let e = op.expm_matrix(t);
                for j in 0..9 {
                    assert!(e.col_as_slice(j).iter().all(|&x| x >= -1e-15));
                }
            }
        }
    }

    #[test]
    fn ace_reference_at_zero_time() {
        let (g, fid) = random_instance(4, 6, LaplacianKind::RandomWalk);
        let op = DenseOperator::new(&g, &fid).unwrap();
        let u0 = vec![0.3; 6];
        assert_eq!(op.ace_reference(&u0, 0.0, 0.2, 0.01).unwrap(), u0);
    }

    #[test]
    fn eps_guard() {
        let (g, fid) = random_instance(5, 6, LaplacianKind::RandomWalk);
        let op = DenseOperator::new(&g, &fid).unwrap();
        let bad = 1.0 / op.spectrum()[2];
        assert!(matches!(op.check_eps(bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.0)).collect();
        assert!((loglog_slope(&x, &y) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn small_battery_passes_and_tamper_fails() {
        let cfg = VerifyConfig { trials: 6, ..Default::default() };
        let rep = verify_theorems(&cfg).unwrap();
        assert!(rep.all_pass(), "{}", rep.to_csv());
        let bad = verify_theorems(&VerifyConfig { tamper: true, ..cfg }).unwrap();
        assert!(!bad.all_pass());
    }
}
