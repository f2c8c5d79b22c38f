//! Fidelity-forced diffusion `S_τ u = e^{-τA}u + b` with `A = Δ + diag(μ)`,
//! evaluated against low-rank factors of `Δ`.
//!
//! Strang and Yoshida steps approximate `e^{-δt A}` only; the forcing `b`
//! is computed separately and added. The semi-implicit Euler iteration
//! carries the forcing itself, so `propagate` with [`Scheme::Euler`] already
//! returns an approximation of the full `S_τ u`. [`ForcedDiffusion`] hides
//! the difference.

use std::str::FromStr;
use std::sync::Arc;

use faer::Mat;

use crate::engine::SolutionMap;
use crate::error::{check_len, Error, Result};
use crate::graph::FidelityData;
use crate::linalg::{self, mul_vec, t_mul_vec};
use crate::lowrank::LowRankLaplacian;

/// Diagonal entries of `Σ = I − Λ` at or below this magnitude are treated
/// as zero by the Woodbury pseudoinverse.
pub const PINV_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Strang,
    Yoshida,
    Euler,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Strang => "strang",
            Scheme::Yoshida => "yoshida",
            Scheme::Euler => "euler",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strang" => Ok(Scheme::Strang),
            "yoshida" => Ok(Scheme::Yoshida),
            "euler" => Ok(Scheme::Euler),
            _ => Err(Error::Input(format!("unknown scheme '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BMethod {
    Trapezium,
    Midpoint,
    Simpson,
    /// Composite Simpson over `2m` intervals.
    CompositeSimpson(usize),
    OdeEuler,
    Woodbury,
}

impl BMethod {
    pub fn name(self) -> String {
        match self {
            BMethod::Trapezium => "trapezium".into(),
            BMethod::Midpoint => "midpoint".into(),
            BMethod::Simpson => "simpson".into(),
            BMethod::CompositeSimpson(m) => format!("composite_simpson({m})"),
            BMethod::OdeEuler => "ode_euler".into(),
            BMethod::Woodbury => "woodbury".into(),
        }
    }
}

impl FromStr for BMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("composite_simpson") {
            let m = rest
                .trim_start_matches('(')
                .trim_end_matches(')')
                .trim_start_matches(':');
            let m: usize = if m.is_empty() {
                return Err(Error::Input("composite_simpson needs a subinterval count, e.g. composite_simpson(500)".into()));
            } else {
                m.parse().map_err(|_| Error::Input(format!("bad subinterval count in '{s}'")))?
            };
            return Ok(BMethod::CompositeSimpson(m));
        }
        match s {
            "trapezium" => Ok(BMethod::Trapezium),
            "midpoint" => Ok(BMethod::Midpoint),
            "simpson" => Ok(BMethod::Simpson),
            "ode_euler" => Ok(BMethod::OdeEuler),
            "woodbury" => Ok(BMethod::Woodbury),
            _ => Err(Error::Input(format!("unknown b method '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagatorConfig {
    pub scheme: Scheme,
    /// Substeps for propagation.
    pub k: usize,
    /// Substeps for exponentials inside the b computation.
    pub k_b: usize,
    pub b_method: BMethod,
    pub tau: f64,
    /// Splitting used for exponentials in quadratures and Woodbury
    /// (Strang or Yoshida).
    pub quad_scheme: Scheme,
}

impl PropagatorConfig {
    pub fn new(tau: f64, scheme: Scheme, k: usize) -> Self {
        Self { scheme, k, k_b: k, b_method: BMethod::OdeEuler, tau, quad_scheme: Scheme::Strang }
    }

    pub fn with_b(mut self, b_method: BMethod, k_b: usize) -> Self {
        self.b_method = b_method;
        self.k_b = k_b;
        self
    }

    pub fn with_quad_scheme(mut self, s: Scheme) -> Self {
        self.quad_scheme = s;
        self
    }

    pub fn validate(&self, fid: &FidelityData) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Input(format!("tau must be positive, got {}", self.tau)));
        }
        if self.k == 0 || self.k_b == 0 {
            return Err(Error::Input("substep counts k and k_b must be at least 1".into()));
        }
        if let BMethod::CompositeSimpson(0) = self.b_method {
            return Err(Error::Input("composite Simpson needs m >= 1".into()));
        }
        if self.quad_scheme == Scheme::Euler {
            return Err(Error::Input("quadrature exponentials use strang or yoshida".into()));
        }
        let dt = self.tau / self.k as f64;
        if self.scheme == Scheme::Euler && dt * fid.mu_max() >= 1.0 {
            log::warn!("euler step dt*max(mu) = {} >= 1; iteration may oscillate", dt * fid.mu_max());
        }
        Ok(())
    }
}

/// Coefficients of one Strang step of size `δt`.
#[derive(Clone, Debug)]
pub struct StrangCoefficients {
    pub dt: f64,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

impl StrangCoefficients {
    pub fn new(dt: f64, mu: &[f64], lambda: &[f64]) -> Self {
        Self {
            dt,
            a1: mu.iter().map(|m| (-dt * m).exp()).collect(),
            a2: lambda.iter().map(|l| (-dt * l).exp_m1()).collect(),
            a3: mu.iter().map(|m| (-0.5 * dt * m).exp()).collect(),
        }
    }
}

/// `a1⊙v + a3⊙(L(a2⊙(Rᵀ(a3⊙v))))`.
pub fn strang_step(v: &[f64], coeffs: &StrangCoefficients, lap: &LowRankLaplacian) -> Result<Vec<f64>> {
    check_len("strang input", lap.n(), v.len())?;
    check_len("strang coefficients (a1)", lap.n(), coeffs.a1.len())?;
    check_len("strang coefficients (a2)", lap.rank(), coeffs.a2.len())?;
    Ok(strang_unchecked(v, coeffs, lap))
}

fn strang_unchecked(v: &[f64], c: &StrangCoefficients, lap: &LowRankLaplacian) -> Vec<f64> {
    let (l, r) = lap.factors();
    let w: Vec<f64> = v.iter().zip(&c.a3).map(|(x, a)| x * a).collect();
    let mut p = t_mul_vec(r, &w);
    for (pi, a) in p.iter_mut().zip(&c.a2) {
        *pi *= a;
    }
    let q = mul_vec(l, &p);
    (0..v.len()).map(|i| c.a1[i] * v[i] + c.a3[i] * q[i]).collect()
}

pub fn yoshida_weights() -> (f64, f64) {
    let c = 2f64.cbrt();
    (-c / (2.0 - c), 1.0 / (2.0 - c))
}

#[derive(Clone, Debug)]
struct YoshidaCoefficients {
    outer: StrangCoefficients,
    inner: StrangCoefficients,
}

impl YoshidaCoefficients {
    fn new(dt: f64, mu: &[f64], lambda: &[f64]) -> Self {
        let (a0, a1) = yoshida_weights();
        Self { outer: StrangCoefficients::new(a1 * dt, mu, lambda), inner: StrangCoefficients::new(a0 * dt, mu, lambda) }
    }

    fn step(&self, v: &[f64], lap: &LowRankLaplacian) -> Vec<f64> {
        let v = strang_unchecked(v, &self.outer, lap);
        let v = strang_unchecked(&v, &self.inner, lap);
        strang_unchecked(&v, &self.outer, lap)
    }
}

/// Three Strang substeps with signed sizes `α₁δt, α₀δt, α₁δt`.
pub fn yoshida_step(v: &[f64], dt: f64, lap: &LowRankLaplacian, mu: &[f64]) -> Result<Vec<f64>> {
    check_len("yoshida input", lap.n(), v.len())?;
    check_len("fidelity strengths", lap.n(), mu.len())?;
    Ok(YoshidaCoefficients::new(dt, mu, lap.lambda()).step(v, lap))
}

#[derive(Clone, Debug)]
struct EulerCoefficients {
    dt: f64,
    damp: Vec<f64>,
    inv: Vec<f64>,
}

impl EulerCoefficients {
    fn new(dt: f64, mu: &[f64], lambda: &[f64]) -> Result<Self> {
        let mut inv = Vec::with_capacity(lambda.len());
        for (i, l) in lambda.iter().enumerate() {
            let den = 1.0 + dt * l;
            if den.abs() < 1e-14 {
                return Err(Error::SingularStep(format!("1 + dt*Lambda[{i}] vanishes")));
            }
            inv.push(1.0 / den);
        }
        Ok(Self { dt, damp: mu.iter().map(|m| 1.0 - dt * m).collect(), inv })
    }

    fn step(&self, v: &[f64], f: &[f64], lap: &LowRankLaplacian) -> Vec<f64> {
        let (l, r) = lap.factors();
        let w: Vec<f64> = (0..v.len()).map(|i| self.damp[i] * v[i] + self.dt * f[i]).collect();
        let mut p = t_mul_vec(r, &w);
        for (pi, a) in p.iter_mut().zip(&self.inv) {
            *pi *= a;
        }
        mul_vec(l, &p)
    }
}

/// Semi-implicit Euler step `L((1 + δtΛ)⁻¹ ⊙ Rᵀ((1 − δtμ)⊙v + δt f))`.
pub fn euler_step(v: &[f64], dt: f64, lap: &LowRankLaplacian, fid: &FidelityData) -> Result<Vec<f64>> {
    check_len("euler input", lap.n(), v.len())?;
    check_len("fidelity data", lap.n(), fid.n())?;
    Ok(EulerCoefficients::new(dt, fid.mu(), lap.lambda())?.step(v, fid.forcing(), lap))
}

/// `steps` splitting steps of size `t/steps` approximating `e^{-tA}u`.
pub fn exp_apply(u: &[f64], t: f64, steps: usize, scheme: Scheme, lap: &LowRankLaplacian, mu: &[f64]) -> Result<Vec<f64>> {
    check_len("exponential input", lap.n(), u.len())?;
    check_len("fidelity strengths", lap.n(), mu.len())?;
    let dt = t / steps as f64;
    let mut v = u.to_vec();
    match scheme {
        Scheme::Strang => {
            let c = StrangCoefficients::new(dt, mu, lap.lambda());
            for _ in 0..steps {
                v = strang_unchecked(&v, &c, lap);
            }
        }
        Scheme::Yoshida => {
            let c = YoshidaCoefficients::new(dt, mu, lap.lambda());
            for _ in 0..steps {
                v = c.step(&v, lap);
            }
        }
        Scheme::Euler => return Err(Error::Input("euler is not a pure exponential".into())),
    }
    Ok(v)
}

/// `k` steps of the configured scheme. Strang and Yoshida approximate
/// `e^{-τA}u`; Euler approximates the full forced map `S_τ u`.
pub fn propagate(u: &[f64], cfg: &PropagatorConfig, lap: &LowRankLaplacian, fid: &FidelityData) -> Result<Vec<f64>> {
    check_len("fidelity data", lap.n(), fid.n())?;
    match cfg.scheme {
        Scheme::Euler => {
            check_len("euler input", lap.n(), u.len())?;
            let c = EulerCoefficients::new(cfg.tau / cfg.k as f64, fid.mu(), lap.lambda())?;
            let mut v = u.to_vec();
            for _ in 0..cfg.k {
                v = c.step(&v, fid.forcing(), lap);
            }
            Ok(v)
        }
        s => exp_apply(u, cfg.tau, cfg.k, s, lap, fid.mu()),
    }
}

/// Approximates `b = ∫₀^τ e^{-tA} f dt` by the configured method.
pub fn compute_b(cfg: &PropagatorConfig, lap: &LowRankLaplacian, fid: &FidelityData) -> Result<Vec<f64>> {
    cfg.validate(fid)?;
    check_len("fidelity data", lap.n(), fid.n())?;
    let f = fid.forcing();
    let mu = fid.mu();
    let tau = cfg.tau;
    let qs = cfg.quad_scheme;
    let n = f.len();
    Ok(match cfg.b_method {
        BMethod::Trapezium => {
            let e = exp_apply(f, tau, cfg.k_b, qs, lap, mu)?;
            (0..n).map(|i| 0.5 * tau * (f[i] + e[i])).collect()
        }
        BMethod::Midpoint => exp_apply(f, 0.5 * tau, cfg.k_b, qs, lap, mu)?.into_iter().map(|x| tau * x).collect(),
        BMethod::Simpson => {
            let h = exp_apply(f, 0.5 * tau, cfg.k_b, qs, lap, mu)?;
            let e = exp_apply(f, tau, cfg.k_b, qs, lap, mu)?;
            (0..n).map(|i| tau / 6.0 * (f[i] + 4.0 * h[i] + e[i])).collect()
        }
        BMethod::CompositeSimpson(m) => {
            let h = tau / (2 * m) as f64;
            let mut acc = f.to_vec();
            let mut v = f.to_vec();
            let strang = StrangCoefficients::new(h, mu, lap.lambda());
            let yoshida = YoshidaCoefficients::new(h, mu, lap.lambda());
            for r in 1..=2 * m {
                v = match qs {
                    Scheme::Yoshida => yoshida.step(&v, lap),
                    _ => strang_unchecked(&v, &strang, lap),
                };
                let w = if r == 2 * m {
                    1.0
                } else if r % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += w * x;
                }
            }
            acc.into_iter().map(|x| h / 3.0 * x).collect()
        }
        BMethod::OdeEuler => {
            let c = EulerCoefficients::new(tau / cfg.k_b as f64, mu, lap.lambda())?;
            let mut v = vec![0.0; n];
            for _ in 0..cfg.k_b {
                v = c.step(&v, f, lap);
            }
            v
        }
        BMethod::Woodbury => woodbury_b(cfg, lap, fid)?,
    })
}

fn woodbury_b(cfg: &PropagatorConfig, lap: &LowRankLaplacian, fid: &FidelityData) -> Result<Vec<f64>> {
    let f = fid.forcing();
    let e = exp_apply(f, cfg.tau, cfg.k_b, cfg.quad_scheme, lap, fid.mu())?;
    let g: Vec<f64> = f.iter().zip(&e).map(|(a, b)| a - b).collect();
    let y: Vec<f64> = fid.mu().iter().map(|m| 1.0 / (1.0 + m)).collect();
    let (l, r) = lap.factors();
    let (n, k) = (lap.n(), lap.rank());
    let yl = Mat::from_fn(n, k, |i, j| y[i] * l[(i, j)]);
    let mut sys = r.transpose() * &yl;
    for (j, lam) in lap.lambda().iter().enumerate() {
        let s = 1.0 - lam;
        if s.abs() > PINV_TOL {
            sys[(j, j)] -= 1.0 / s;
        }
    }
    let yg: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a * b).collect();
    let rhs = t_mul_vec(r, &yg);
    let fail = || Error::MethodFailure("Woodbury system is singular; choose another b method".into());
    let h = linalg::lu_solve(&sys, &linalg::col_vec(&rhs)).map_err(|_| fail())?;
    let h = h.col_as_slice(0).to_vec();
    let res = &sys * linalg::col_vec(&h);
    let res_norm = (0..k).map(|i| (res[(i, 0)] - rhs[i]).powi(2)).sum::<f64>().sqrt();
    if res_norm > 1e-6 * (linalg::norm2(&rhs) + f64::MIN_POSITIVE) {
        return Err(fail());
    }
    let uh = mul_vec(l, &h);
    Ok((0..n).map(|i| y[i] * (g[i] - uh[i])).collect())
}

/// `S_τ u` with an optional precomputed `b`.
pub fn apply_s_tau(
    u: &[f64],
    cfg: &PropagatorConfig,
    lap: &LowRankLaplacian,
    fid: &FidelityData,
    cached_b: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if cfg.scheme == Scheme::Euler {
        return propagate(u, cfg, lap, fid);
    }
    let owned;
    let b = match cached_b {
        Some(b) => b,
        None => {
            owned = compute_b(cfg, lap, fid)?;
            &owned
        }
    };
    check_len("cached b", lap.n(), b.len())?;
    let mut v = propagate(u, cfg, lap, fid)?;
    for (x, bi) in v.iter_mut().zip(b) {
        *x += bi;
    }
    Ok(v)
}

/// Forced diffusion with its configuration, factors and fidelity frozen;
/// `b` is computed once at construction and read thereafter.
#[derive(Clone, Debug)]
pub struct ForcedDiffusion {
    cfg: PropagatorConfig,
    lap: Arc<LowRankLaplacian>,
    fid: Arc<FidelityData>,
    b: Vec<f64>,
    strang: StrangCoefficients,
    yoshida: Option<YoshidaCoefficients>,
    euler: Option<EulerCoefficients>,
}

impl ForcedDiffusion {
    pub fn new(cfg: PropagatorConfig, lap: Arc<LowRankLaplacian>, fid: Arc<FidelityData>) -> Result<Self> {
        cfg.validate(&fid)?;
        check_len("fidelity data", lap.n(), fid.n())?;
        let b = compute_b(&cfg, &lap, &fid)?;
        let dt = cfg.tau / cfg.k as f64;
        let strang = StrangCoefficients::new(dt, fid.mu(), lap.lambda());
        let yoshida = (cfg.scheme == Scheme::Yoshida).then(|| YoshidaCoefficients::new(dt, fid.mu(), lap.lambda()));
        let euler = match cfg.scheme {
            Scheme::Euler => Some(EulerCoefficients::new(dt, fid.mu(), lap.lambda())?),
            _ => None,
        };
        Ok(Self { cfg, lap, fid, b, strang, yoshida, euler })
    }

    pub fn config(&self) -> &PropagatorConfig {
        &self.cfg
    }
    pub fn laplacian(&self) -> &LowRankLaplacian {
        &self.lap
    }
    pub fn fidelity(&self) -> &FidelityData {
        &self.fid
    }
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    fn exp_k(&self, u: &[f64]) -> Vec<f64> {
        let mut v = u.to_vec();
        for _ in 0..self.cfg.k {
            v = match &self.yoshida {
                Some(y) => y.step(&v, &self.lap),
                None => strang_unchecked(&v, &self.strang, &self.lap),
            };
        }
        v
    }
}

impl SolutionMap for ForcedDiffusion {
    fn n(&self) -> usize {
        self.lap.n()
    }

    fn tau(&self) -> f64 {
        self.cfg.tau
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        if let Some(e) = &self.euler {
            let mut v = u.to_vec();
            for _ in 0..self.cfg.k {
                v = e.step(&v, self.fid.forcing(), &self.lap);
            }
            return v;
        }
        let mut v = self.exp_k(u);
        for (x, b) in v.iter_mut().zip(&self.b) {
            *x += b;
        }
        v
    }

    /// For the Euler scheme this falls back to Strang splitting.
    fn homogeneous(&self, u: &[f64]) -> Vec<f64> {
        self.exp_k(u)
    }

    fn forcing(&self) -> &[f64] {
        &self.b
    }

    fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.lap.inner(u, v)
    }
}
