//! The SDIE update and its MBO special case, the Lyapunov functional, and
//! the main iteration.

use std::time::Instant;

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm2};

/// A forced-diffusion map `u ↦ e^{-τA}u + b` together with the inner
/// product it is self-adjoint in.
pub trait SolutionMap: Sync {
    fn n(&self) -> usize;
    fn tau(&self) -> f64;
    /// `S_τ u`.
    fn apply(&self, u: &[f64]) -> Vec<f64>;
    /// `e^{-τA}u`.
    fn homogeneous(&self, u: &[f64]) -> Vec<f64>;
    /// `b`.
    fn forcing(&self) -> &[f64];
    fn inner(&self, u: &[f64], v: &[f64]) -> f64;

    fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdieParams {
    pub eps: f64,
    pub tau: f64,
    pub lambda: f64,
    pub delta: f64,
    pub max_iter: usize,
}

impl SdieParams {
    pub fn new(eps: f64, tau: f64, delta: f64, max_iter: usize) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Input(format!("eps must be positive, got {eps}")));
        }
        if !(tau > 0.0) || tau > eps {
            return Err(Error::Input(format!("tau must lie in (0, eps], got tau={tau}, eps={eps}")));
        }
        if !(delta > 0.0) {
            return Err(Error::Input(format!("delta must be positive, got {delta}")));
        }
        if max_iter == 0 {
            return Err(Error::Input("max_iter must be at least 1".into()));
        }
        Ok(Self { eps, tau, lambda: tau / eps, delta, max_iter })
    }

    pub fn is_mbo(&self) -> bool {
        self.lambda == 1.0
    }
}

/// Piecewise-linear SDIE update for `0 < λ ≤ 1`; at `λ = 1` the linear
/// branch is empty and this is thresholding at ½.
pub fn sdie_update(v: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = 0.5 * lambda;
    let hi = 1.0 - 0.5 * lambda;
    let mut u = Vec::with_capacity(v.len());
    let mut beta = Vec::with_capacity(v.len());
    for &x in v {
        let ui = if x < lo {
            0.0
        } else if x < hi {
            0.5 + (x - 0.5) / (1.0 - lambda)
        } else {
            1.0
        };
        u.push(ui);
        beta.push(((1.0 - lambda) * ui - x + lo) / lambda);
    }
    (u, beta)
}

/// Thresholding at ½ with ties going to 1; `β = ½ − v`.
pub fn mbo_update(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let u = v.iter().map(|&x| if x >= 0.5 { 1.0 } else { 0.0 }).collect();
    let beta = v.iter().map(|&x| 0.5 - x).collect();
    (u, beta)
}

/// Which update the loop applies. `FlippedThreshold` inverts the MBO
/// decision and exists only as a negative control for property checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateRule {
    Standard,
    FlippedThreshold,
}

pub fn apply_update(v: &[f64], lambda: f64, rule: UpdateRule) -> (Vec<f64>, Vec<f64>) {
    match rule {
        UpdateRule::Standard if lambda == 1.0 => mbo_update(v),
        UpdateRule::Standard => sdie_update(v, lambda),
        UpdateRule::FlippedThreshold => {
            let (u, beta) = sdie_update(v, lambda);
            (u.into_iter().map(|x| 1.0 - x).collect(), beta)
        }
    }
}

/// Largest violation of `β ∈ B(u)`: `β ≥ 0` where `u = 0`, `β = 0` inside,
/// `β ≤ 0` where `u = 1`.
pub fn beta_membership_violation(u: &[f64], beta: &[f64]) -> f64 {
    u.iter()
        .zip(beta)
        .map(|(&x, &b)| {
            if x == 0.0 {
                (-b).max(0.0)
            } else if x == 1.0 {
                b.max(0.0)
            } else {
                b.abs()
            }
        })
        .fold(0.0, f64::max)
}

/// `H(u) = ⟨u, 1 − 2b − e^{-τA}u⟩ + (λ − 1)⟨u, 1 − u⟩`.
pub fn lyapunov_h(u: &[f64], lambda: f64, map: &dyn SolutionMap) -> Result<f64> {
    check_len("label vector", map.n(), u.len())?;
    let e = map.homogeneous(u);
    let b = map.forcing();
    let w: Vec<f64> = (0..u.len()).map(|i| 1.0 - 2.0 * b[i] - e[i]).collect();
    let one_minus: Vec<f64> = u.iter().map(|x| 1.0 - x).collect();
    Ok(map.inner(u, &w) + (lambda - 1.0) * map.inner(u, &one_minus))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelState {
    pub u: Vec<f64>,
    /// Empty before the first update.
    pub beta: Vec<f64>,
    pub iter: usize,
    pub h: Option<f64>,
}

impl LabelState {
    pub fn new(u0: Vec<f64>) -> Self {
        Self { u: u0, beta: Vec::new(), iter: 0, h: None }
    }

    /// Thresholds `u` at ½.
    pub fn mask(&self) -> Vec<bool> {
        self.u.iter().map(|&x| x >= 0.5).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub h: Option<f64>,
    pub step_norm: f64,
    pub seconds: f64,
    pub mask: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub trace: bool,
    pub trace_h: bool,
    pub trace_masks: bool,
    pub rule: Option<UpdateRule>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterReached,
}

#[derive(Clone, Debug)]
pub struct SdieOutcome {
    pub state: LabelState,
    pub status: RunStatus,
    pub trace: Vec<TraceRow>,
}

pub fn run_sdie(u0: &[f64], params: &SdieParams, map: &dyn SolutionMap) -> Result<SdieOutcome> {
    run_sdie_with(u0, params, map, &RunOptions::default())
}

/// Iterates `u ← update(S_τ u)` until `‖u_n − u_{n−1}‖² / ‖u_n‖² < δ`
/// (plain Euclidean norms), testing only after the first update.
pub fn run_sdie_with(u0: &[f64], params: &SdieParams, map: &dyn SolutionMap, opts: &RunOptions) -> Result<SdieOutcome> {
    check_len("initial state", map.n(), u0.len())?;
    if u0.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Input("initial state must lie in [0,1]".into()));
    }
    if (map.tau() - params.tau).abs() > 1e-15 * params.tau {
        return Err(Error::Input("diffusion time step does not match the scheme parameters".into()));
    }
    let rule = opts.rule.unwrap_or(UpdateRule::Standard);
    let start = Instant::now();
    let mut state = LabelState::new(u0.to_vec());
    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIterReached;
    while state.iter < params.max_iter {
        let v = map.apply(&state.u);
        let (u, beta) = apply_update(&v, params.lambda, rule);
        let diff2: f64 = u.iter().zip(&state.u).map(|(a, b)| (a - b) * (a - b)).sum();
        let norm2_new = dot(&u, &u);
        state.u = u;
        state.beta = beta;
        state.iter += 1;
        if opts.trace {
            let h = if opts.trace_h { Some(lyapunov_h(&state.u, params.lambda, map)?) } else { None };
            state.h = h;
            trace.push(TraceRow {
                iter: state.iter,
                h,
                step_norm: diff2.sqrt(),
                seconds: start.elapsed().as_secs_f64(),
                mask: opts.trace_masks.then(|| state.mask()),
            });
        }
        let done = if norm2_new == 0.0 { diff2 == 0.0 } else { diff2 / norm2_new < params.delta };
        if done {
            status = RunStatus::Converged;
            break;
        }
    }
    if status == RunStatus::MaxIterReached {
        log::warn!("no convergence after {} iterations", params.max_iter);
    }
    Ok(SdieOutcome { state, status, trace })
}

/// Exactly `steps` updates with no termination test; returns every
/// iterate `(u_n, β_n)` for `n = 0..=steps` (`β_0` empty).
pub fn trajectory(u0: &[f64], lambda: f64, map: &dyn SolutionMap, steps: usize, rule: UpdateRule) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push((u0.to_vec(), Vec::new()));
    let mut u = u0.to_vec();
    for _ in 0..steps {
        let (next, beta) = apply_update(&map.apply(&u), lambda, rule);
        out.push((next.clone(), beta));
        u = next;
    }
    out
}

/// Final iterate after exactly `steps` updates.
pub fn iterate(u0: &[f64], lambda: f64, map: &dyn SolutionMap, steps: usize) -> Vec<f64> {
    let mut u = u0.to_vec();
    for _ in 0..steps {
        u = apply_update(&map.apply(&u), lambda, UpdateRule::Standard).0;
    }
    u
}

/// Relative change `‖a − b‖ / ‖a‖` in the plain norm.
pub fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdie_examples() {
        let (u, _) = sdie_update(&[0.1, 0.5, 0.65, 0.8], 0.6);
        let expect = [0.0, 0.5, 0.875, 1.0];
        for (a, b) in u.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for lam in [0.1, 0.5, 0.99] {
            let (u, beta) = sdie_update(&[0.5; 3], lam);
            assert!(u.iter().all(|&x| x == 0.5));
            assert!(beta.iter().all(|&b| b.abs() < 1e-15));
        }
    }

    #[test]
    fn mbo_ties_and_zero() {
        let (u, beta) = mbo_update(&[0.5, 0.49, 0.51]);
        assert_eq!(u, vec![1.0, 0.0, 1.0]);
        assert!((beta[0]).abs() < 1e-15);
        assert_eq!(mbo_update(&[0.1, 0.2, -3.0]).0, vec![0.0; 3]);
        let (a, _) = sdie_update(&[0.5, 0.2, 0.8], 1.0);
        assert_eq!(a, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn near_one_limit_matches_mbo() {
        let grid: Vec<f64> = (0..=200).map(|i| -0.5 + i as f64 * 0.01).filter(|v| (v - 0.5).abs() > 1e-9).collect();
        let (m, _) = mbo_update(&grid);
        let (s, _) = sdie_update(&grid, 1.0 - 1e-9);
        for (a, b) in m.iter().zip(&s) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn params_validation() {
        assert!(SdieParams::new(0.1, 0.2, 1e-10, 10).is_err());
        assert!(SdieParams::new(0.1, 0.0, 1e-10, 10).is_err());
        assert!(SdieParams::new(0.003, 0.003, 1e-10, 10).unwrap().is_mbo());
        assert!(!SdieParams::new(0.1, 0.05, 1e-10, 10).unwrap().is_mbo());
    }

    #[test]
    fn flipped_rule_inverts() {
        let (u, _) = apply_update(&[0.2, 0.9], 1.0, UpdateRule::FlippedThreshold);
        assert_eq!(u, vec![1.0, 0.0]);
    }
}
