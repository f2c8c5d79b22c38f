//! Low-rank factorizations of the normalized graph Laplacian: the QR-based
//! Nyström method, the classic one-shot Nyström extension, the optimal
//! truncated eigendecomposition, and Frobenius error measurement.

use std::collections::HashMap;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{c64, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::graph::{Affinity, Graph, GaussianSimilarity, LaplacianKind};
use crate::linalg::{self, mul_vec, sym_eigen, symmetrize, t_mul_vec};

/// Reciprocal condition number below which the interpolation block is rejected.
pub const RCOND_MIN: f64 = 1e-12;

/// Rank-K factors of the symmetric Laplacian, `Δ_s ≈ U_s Λ U_sᵀ`, with the
/// row-scaled pair `U1 = d̂^{-1/2} U_s`, `U2 = d̂^{1/2} U_s` that targets the
/// random-walk Laplacian.
#[derive(Clone, Debug)]
pub struct LowRankLaplacian {
    lambda: Vec<f64>,
    us: Mat<f64>,
    u1: Mat<f64>,
    u2: Mat<f64>,
    d_hat: Vec<f64>,
    normalization: LaplacianKind,
    complex_branches: usize,
}

impl LowRankLaplacian {
    pub fn from_parts(us: Mat<f64>, lambda: Vec<f64>, d_hat: Vec<f64>, normalization: LaplacianKind) -> Result<Self> {
        check_len("eigenvalue vector", us.ncols(), lambda.len())?;
        check_len("degree estimate", us.nrows(), d_hat.len())?;
        if normalization == LaplacianKind::Unnormalized {
            return Err(Error::Input("low-rank factors target the random-walk or symmetric Laplacian".into()));
        }
        if let Some(i) = d_hat.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateDegree { index: i, value: d_hat[i] });
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::MethodFailure("non-finite approximate eigenvalue".into()));
        }
        let (n, k) = (us.nrows(), us.ncols());
        let u1 = Mat::from_fn(n, k, |i, j| us[(i, j)] / d_hat[i].sqrt());
        let u2 = Mat::from_fn(n, k, |i, j| us[(i, j)] * d_hat[i].sqrt());
        Ok(Self { lambda, us, u1, u2, d_hat, normalization, complex_branches: 0 })
    }

    /// Exact spectral factors of a dense graph, keeping the `k` eigenpairs of
    /// largest magnitude. `k = n` reproduces the Laplacian exactly.
    pub fn from_graph_spectrum(g: &Graph, k: usize) -> Result<Self> {
        let ds = crate::graph::dense_laplacian(g, LaplacianKind::Symmetric)?;
        let mut out = truncated_svd_baseline(&ds, k)?;
        let kind = match g.kind() {
            LaplacianKind::Unnormalized => {
                return Err(Error::Input("spectral factors need a normalized Laplacian".into()))
            }
            k => k,
        };
        let us = std::mem::replace(&mut out.us, Mat::zeros(0, 0));
        Self::from_parts(us, out.lambda, g.degrees().to_vec(), kind)
    }

    pub fn n(&self) -> usize {
        self.us.nrows()
    }
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }
    pub fn us(&self) -> &Mat<f64> {
        &self.us
    }
    pub fn u1(&self) -> &Mat<f64> {
        &self.u1
    }
    pub fn u2(&self) -> &Mat<f64> {
        &self.u2
    }
    pub fn d_hat(&self) -> &[f64] {
        &self.d_hat
    }
    pub fn normalization(&self) -> LaplacianKind {
        self.normalization
    }

    /// Number of non-real square-root branches dropped (classic Nyström only).
    pub fn complex_branches(&self) -> usize {
        self.complex_branches
    }

    /// Left and right factors `(L, R)` with `Δ ≈ L Λ Rᵀ` for the target
    /// normalization.
    pub fn factors(&self) -> (&Mat<f64>, &Mat<f64>) {
        match self.normalization {
            LaplacianKind::Symmetric => (&self.us, &self.us),
            _ => (&self.u1, &self.u2),
        }
    }

    pub fn with_normalization(&self, normalization: LaplacianKind) -> Result<Self> {
        if normalization == LaplacianKind::Unnormalized {
            return Err(Error::Input("low-rank factors target the random-walk or symmetric Laplacian".into()));
        }
        Ok(Self { normalization, ..self.clone() })
    }

    /// `L Λ Rᵀ v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (l, r) = self.factors();
        let mut c = t_mul_vec(r, v);
        for (ci, li) in c.iter_mut().zip(&self.lambda) {
            *ci *= li;
        }
        mul_vec(l, &c)
    }

    /// Vertex weights of the inner product that matches the normalization.
    pub fn vertex_weights(&self) -> Vec<f64> {
        match self.normalization {
            LaplacianKind::RandomWalk => self.d_hat.clone(),
            _ => vec![1.0; self.n()],
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.normalization {
            LaplacianKind::RandomWalk => u.iter().zip(v).zip(&self.d_hat).map(|((a, b), d)| a * b * d).sum(),
            _ => linalg::dot(u, v),
        }
    }

    /// Dense `U_s Λ U_sᵀ`.
    pub fn reconstruct_symmetric(&self) -> Mat<f64> {
        let scaled = Mat::from_fn(self.n(), self.rank(), |i, j| self.us[(i, j)] * self.lambda[j]);
        &scaled * self.us.transpose()
    }

    /// Dense `L Λ Rᵀ` for the target normalization.
    pub fn reconstruct(&self) -> Mat<f64> {
        let (l, r) = self.factors();
        let scaled = Mat::from_fn(self.n(), self.rank(), |i, j| l[(i, j)] * self.lambda[j]);
        &scaled * r.transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterpolationSets {
    /// Unsupervised vertices.
    pub x1: Vec<usize>,
    /// Supervised vertices.
    pub x2: Vec<usize>,
    pub seed: u64,
}

impl InterpolationSets {
    pub fn all(&self) -> Vec<usize> {
        self.x1.iter().chain(&self.x2).copied().collect()
    }
    pub fn len(&self) -> usize {
        self.x1.len() + self.x2.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `⌈K/2⌉` vertices outside `z` and `⌊K/2⌋` inside, uniformly
/// without replacement.
pub fn sample_interpolation_sets(n: usize, z: &[usize], k: usize, seed: u64) -> Result<InterpolationSets> {
    if k < 2 || k > n {
        return Err(Error::Input(format!("rank K = {k} must satisfy 2 <= K <= n = {n}")));
    }
    let mut in_z = vec![false; n];
    for &i in z {
        if i >= n {
            return Err(Error::Input(format!("supervised index {i} out of range")));
        }
        in_z[i] = true;
    }
    let outside: Vec<usize> = (0..n).filter(|&i| !in_z[i]).collect();
    let inside: Vec<usize> = (0..n).filter(|&i| in_z[i]).collect();
    let (k1, k2) = (k.div_ceil(2), k / 2);
    if outside.len() < k1 {
        return Err(Error::Input(format!(
            "unsupervised pool has {} vertices, need {k1}",
            outside.len()
        )));
    }
    if inside.len() < k2 {
        return Err(Error::Input(format!("supervised pool has {} vertices, need {k2}", inside.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = rand::seq::index::sample(&mut rng, outside.len(), k1).iter().map(|i| outside[i]).collect();
    let x2 = rand::seq::index::sample(&mut rng, inside.len(), k2).iter().map(|i| inside[i]).collect();
    Ok(InterpolationSets { x1, x2, seed })
}

struct NystromBlocks {
    x: Vec<usize>,
    wxx: Mat<f64>,
    wvx: Mat<f64>,
    d_hat: Vec<f64>,
}

fn nystrom_blocks(weights: &dyn Affinity, sets: &InterpolationSets) -> Result<NystromBlocks> {
    let n = weights.len();
    let x = sets.all();
    let rows: Vec<usize> = (0..n).collect();
    let wxx = weights.block(&x, &x);
    let wvx = weights.block(&rows, &x);

    let ev = linalg::sym_eigenvalues(&wxx)?;
    let amax = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let amin = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let rcond = if amax > 0.0 { amin / amax } else { 0.0 };
    if !(rcond >= RCOND_MIN) {
        return Err(Error::IllConditioned { rcond });
    }

    let col_sums: Vec<f64> = (0..x.len()).map(|j| wvx.col_as_slice(j).iter().sum()).collect();
    let y = linalg::lu_solve(&wxx, &linalg::col_vec(&col_sums))?;
    let d_hat = mul_vec(&wvx, y.col_as_slice(0));
    if let Some(i) = d_hat.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::DegenerateDegree { index: i, value: d_hat[i] });
    }
    Ok(NystromBlocks { x, wxx, wvx, d_hat })
}

/// QR-based Nyström approximation of the symmetric Laplacian.
pub fn nystrom_qr(
    weights: &dyn Affinity,
    z: &[usize],
    k: usize,
    seed: u64,
    normalization: LaplacianKind,
) -> Result<LowRankLaplacian> {
    let sets = sample_interpolation_sets(weights.len(), z, k, seed)?;
    nystrom_qr_with_sets(weights, &sets, normalization)
}

pub fn nystrom_qr_with_sets(
    weights: &dyn Affinity,
    sets: &InterpolationSets,
    normalization: LaplacianKind,
) -> Result<LowRankLaplacian> {
    let NystromBlocks { wxx, wvx, d_hat, .. } = nystrom_blocks(weights, sets)?;
    let (n, k) = (wvx.nrows(), wvx.ncols());
    let scaled = Mat::from_fn(n, k, |i, j| wvx[(i, j)] / d_hat[i].sqrt());
    let qr = scaled.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R().to_owned();

    let s = &r * wxx.partial_piv_lu().solve(r.transpose());
    let s = symmetrize(&s);
    let (sigma, phi) = sym_eigen(&s)?;
    // ascending Σ → descending Λ; flip so Λ is ascending
    let order: Vec<usize> = (0..k).rev().collect();
    let lambda: Vec<f64> = order.iter().map(|&j| 1.0 - sigma[j]).collect();
    let phi = Mat::from_fn(k, k, |i, j| phi[(i, order[j])]);
    let us = &q * &phi;
    LowRankLaplacian::from_parts(us, lambda, d_hat, normalization)
}

/// One-shot Nyström extension with symmetric orthogonalization through
/// `Ã^{-1/2}`. Negative eigenvalues of the interpolation block take the
/// principal (imaginary) square root; the computation is carried out in
/// complex arithmetic and the imaginary part of the extended eigenvectors is
/// discarded at the end. The number of such branches is recorded.
pub fn nystrom_classic(
    weights: &dyn Affinity,
    z: &[usize],
    k: usize,
    seed: u64,
    normalization: LaplacianKind,
) -> Result<LowRankLaplacian> {
    let sets = sample_interpolation_sets(weights.len(), z, k, seed)?;
    nystrom_classic_with_sets(weights, &sets, normalization)
}

pub fn nystrom_classic_with_sets(
    weights: &dyn Affinity,
    sets: &InterpolationSets,
    normalization: LaplacianKind,
) -> Result<LowRankLaplacian> {
    let NystromBlocks { x, wxx, wvx, d_hat } = nystrom_blocks(weights, sets)?;
    let (n, k) = (wvx.nrows(), wvx.ncols());
    let sx: Vec<f64> = x.iter().map(|&i| d_hat[i].sqrt()).collect();
    let wt = Mat::from_fn(n, k, |i, j| wvx[(i, j)] / (d_hat[i].sqrt() * sx[j]));
    let a = Mat::from_fn(k, k, |i, j| wxx[(i, j)] / (sx[i] * sx[j]));

    let mut in_x = vec![false; n];
    for &i in &x {
        in_x[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !in_x[i]).collect();
    let b = Mat::from_fn(rest.len(), k, |i, j| wt[(rest[i], j)]);
    let bb = b.transpose() * &b;

    let (gamma, e) = sym_eigen(&symmetrize(&a))?;
    let mut branches = 0;
    let mut p_re = vec![0.0; k];
    let mut p_im = vec![0.0; k];
    for (i, &g) in gamma.iter().enumerate() {
        if g > 0.0 {
            p_re[i] = g.powf(-0.5);
        } else if g < 0.0 {
            branches += 1;
            p_im[i] = -(-g).powf(-0.5);
        } else {
            return Err(Error::IllConditioned { rcond: 0.0 });
        }
    }
    let scale_cols = |w: &[f64]| Mat::from_fn(k, k, |i, j| e[(i, j)] * w[j]);
    let pr = scale_cols(&p_re) * e.transpose();
    let pi = scale_cols(&p_im) * e.transpose();

    let s_re = &a + &pr * &bb * &pr - &pi * &bb * &pi;
    let s_im = &pr * &bb * &pi + &pi * &bb * &pr;
    let s = Mat::from_fn(k, k, |i, j| c64::new(s_re[(i, j)], s_im[(i, j)]));
    let svd = s
        .svd()
        .map_err(|e| Error::MethodFailure(format!("complex SVD: {e:?}")))?;
    let u = svd.U();
    let sv: Vec<f64> = (0..k).map(|j| svd.S().column_vector()[j].re).collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let inv_sqrt: Vec<f64> = sv
        .iter()
        .map(|&s| if s > smax * 1e-14 { s.powf(-0.5) } else { 0.0 })
        .collect();

    // Re(P U_S Γ^{-1/2})
    let m_re = Mat::from_fn(k, k, |i, j| {
        let mut acc = 0.0;
        for l in 0..k {
            let ulj = u[(l, j)];
            acc += pr[(i, l)] * ulj.re - pi[(i, l)] * ulj.im;
        }
        acc * inv_sqrt[j]
    });
    let v = &wt * &m_re;
    if branches > 0 {
        log::warn!("classic Nyström: {branches} non-real square-root branches discarded");
    }
    let mut out = LowRankLaplacian::from_parts(v, sv.iter().map(|s| 1.0 - s).collect(), d_hat, normalization)?;
    out.complex_branches = branches;
    Ok(out)
}

/// Keeps the `k` eigenpairs of largest magnitude of the symmetric `Δ_s`,
/// which are its leading singular triplets.
pub fn truncated_svd_baseline(delta_s: &Mat<f64>, k: usize) -> Result<LowRankLaplacian> {
    let n = delta_s.nrows();
    if k == 0 || k > n {
        return Err(Error::Input(format!("rank K = {k} must satisfy 1 <= K <= n = {n}")));
    }
    let (vals, vecs) = sym_eigen(&symmetrize(delta_s))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    order.truncate(k);
    let us = Mat::from_fn(n, k, |i, j| vecs[(i, order[j])]);
    let lambda = order.iter().map(|&j| vals[j]).collect();
    LowRankLaplacian::from_parts(us, lambda, vec![1.0; n], LaplacianKind::Symmetric)
}

/// `‖U_s Λ U_sᵀ − Δ_s‖_F / ‖Δ_s‖_F` by dense evaluation.
pub fn relative_frobenius_error(approx: &LowRankLaplacian, delta_s: &Mat<f64>) -> Result<f64> {
    check_len("dense Laplacian", approx.n(), delta_s.nrows())?;
    let diff = approx.reconstruct_symmetric() - delta_s;
    Ok(diff.norm_l2() / delta_s.norm_l2())
}

/// A symmetric operator that can be applied to a block of vectors without
/// being materialized.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply_block(&self, x: &Mat<f64>) -> Mat<f64>;
    fn frobenius_sq(&self) -> f64;
}

impl SymmetricOperator for Mat<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply_block(&self, x: &Mat<f64>) -> Mat<f64> {
        self * x
    }
    fn frobenius_sq(&self) -> f64 {
        self.norm_l2().powi(2)
    }
}

/// Relative Frobenius error through traces,
/// `‖Δ‖² − 2 tr(Λ UᵀΔU) + tr(Λ G Λ G)` with `G = UᵀU`. Costs one block
/// application of the operator and one `K×K` Gram matrix.
pub fn relative_frobenius_error_implicit(approx: &LowRankLaplacian, op: &dyn SymmetricOperator) -> Result<f64> {
    check_len("operator", approx.n(), op.dim())?;
    let u = approx.us();
    let lam = approx.lambda();
    let k = approx.rank();
    let au = op.apply_block(u);
    let g = u.transpose() * u;
    let mut cross = 0.0;
    for j in 0..k {
        cross += lam[j] * linalg::dot(u.col_as_slice(j), au.col_as_slice(j));
    }
    let mut quad = 0.0;
    for a in 0..k {
        for b in 0..k {
            quad += lam[a] * g[(a, b)] * lam[b] * g[(b, a)];
        }
    }
    let total = op.frobenius_sq();
    Ok(((total - 2.0 * cross + quad).max(0.0) / total).sqrt())
}

/// Optimal rank-`k` relative error from a full spectrum (Eckart-Young).
pub fn optimal_error_from_spectrum(eigenvalues: &[f64], k: usize) -> f64 {
    let mut sq: Vec<f64> = eigenvalues.iter().map(|v| v * v).collect();
    sq.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sq.iter().sum();
    let dropped: f64 = sq.iter().skip(k).sum();
    (dropped / total).sqrt()
}

/// Exact symmetric Laplacian of a Gaussian-kernel graph whose feature
/// vectors take few distinct values. Vertices with identical features are
/// grouped; the operator is applied in `O(nK + m²K)` for `m` groups, and its
/// spectrum is obtained from an `m×m` reduced matrix plus the within-group
/// eigenvalues `1 + 1/d_g`.
#[derive(Clone, Debug)]
pub struct GroupedLaplacian {
    group_of: Arc<Vec<usize>>,
    sizes: Vec<usize>,
    kernel: Arc<Mat<f64>>,
    degrees: Vec<f64>,
}

/// Weights `ω_ij = Ω(z_i, z_j)` (zero on the diagonal) looked up through
/// the groups of a [`GroupedLaplacian`].
#[derive(Clone, Debug)]
pub struct GroupedAffinity {
    group_of: Arc<Vec<usize>>,
    kernel: Arc<Mat<f64>>,
}

impl Affinity for GroupedAffinity {
    fn len(&self) -> usize {
        self.group_of.len()
    }
    fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.kernel[(self.group_of[i], self.group_of[j])]
        }
    }
}

impl GroupedLaplacian {
    /// `rows(i)` returns the feature vector of vertex `i`.
    pub fn from_features<'a>(n: usize, rows: impl Fn(usize) -> &'a [f64], sim: &GaussianSimilarity) -> Result<Self> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut reps: Vec<usize> = Vec::new();
        let mut group_of = Vec::with_capacity(n);
        for i in 0..n {
            let z = rows(i);
            check_len("feature vector", sim.ell, z.len())?;
            let key: Vec<u64> = z.iter().map(|v| v.to_bits()).collect();
            let next = reps.len();
            let g = *index.entry(key).or_insert(next);
            if g == next {
                reps.push(i);
            }
            group_of.push(g);
        }
        let m = reps.len();
        let mut sizes = vec![0usize; m];
        for &g in &group_of {
            sizes[g] += 1;
        }
        let kernel = Mat::from_fn(m, m, |a, b| {
            let (za, zb) = (rows(reps[a]), rows(reps[b]));
            sim.from_sq_dist(za.iter().zip(zb).map(|(x, y)| (x - y) * (x - y)).sum())
        });
        let degrees: Vec<f64> = (0..m)
            .map(|a| (0..m).map(|b| sizes[b] as f64 * kernel[(a, b)]).sum::<f64>() - 1.0)
            .collect();
        if let Some(g) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateGraph(format!("feature group {g} has zero degree")));
        }
        Ok(Self { group_of: Arc::new(group_of), sizes, kernel: Arc::new(kernel), degrees })
    }

    pub fn n(&self) -> usize {
        self.group_of.len()
    }

    pub fn groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn affinity(&self) -> GroupedAffinity {
        GroupedAffinity { group_of: self.group_of.clone(), kernel: self.kernel.clone() }
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.group_of.iter().map(|&g| self.degrees[g]).collect()
    }

    /// Full spectrum of `Δ_s`, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let m = self.groups();
        let reduced = Mat::from_fn(m, m, |a, b| {
            let off = (self.sizes[a] as f64 * self.sizes[b] as f64).sqrt() * self.kernel[(a, b)]
                / (self.degrees[a] * self.degrees[b]).sqrt();
            let diag = if a == b { 1.0 + 1.0 / self.degrees[a] } else { 0.0 };
            diag - off
        });
        let mut ev = linalg::sym_eigenvalues(&reduced)?;
        for (g, &s) in self.sizes.iter().enumerate() {
            ev.extend(std::iter::repeat(1.0 + 1.0 / self.degrees[g]).take(s - 1));
        }
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.n();
        let g = &self.group_of;
        Mat::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                -self.kernel[(g[i], g[j])] / (self.degrees[g[i]] * self.degrees[g[j]]).sqrt()
            }
        })
    }
}

impl SymmetricOperator for GroupedLaplacian {
    fn dim(&self) -> usize {
        self.n()
    }

    // Δ_s X = X + D⁻¹X − D^{-1/2} P C Pᵀ D^{-1/2} X
    fn apply_block(&self, x: &Mat<f64>) -> Mat<f64> {
        let (n, k, m) = (self.n(), x.ncols(), self.groups());
        let g = &self.group_of;
        let mut sums = Mat::<f64>::zeros(m, k);
        for j in 0..k {
            let col = x.col_as_slice(j);
            let s = sums.col_as_slice_mut(j);
            for i in 0..n {
                s[g[i]] += col[i] / self.degrees[g[i]].sqrt();
            }
        }
        let mixed = &*self.kernel * &sums;
        Mat::from_fn(n, k, |i, j| {
            let dg = self.degrees[g[i]];
            x[(i, j)] * (1.0 + 1.0 / dg) - mixed[(g[i], j)] / dg.sqrt()
        })
    }

    fn frobenius_sq(&self) -> f64 {
        let m = self.groups();
        let mut s = self.n() as f64;
        for a in 0..m {
            for b in 0..m {
                let c = self.kernel[(a, b)];
                s += self.sizes[a] as f64 * self.sizes[b] as f64 * c * c / (self.degrees[a] * self.degrees[b]);
            }
            s -= self.sizes[a] as f64 / (self.degrees[a] * self.degrees[a]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DenseWeights;
    use rand::Rng;

    fn random_weights(n: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = rng.gen_range(0.1..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        w
    }

    #[test]
    fn interpolation_set_rules() {
        let s = sample_interpolation_sets(2, &[0], 2, 9).unwrap();
        assert_eq!((s.x1.clone(), s.x2.clone()), (vec![1], vec![0]));
        let s = sample_interpolation_sets(10, &[0, 1, 2, 3], 3, 1).unwrap();
        assert_eq!((s.x1.len(), s.x2.len()), (2, 1));
        assert_eq!(s, sample_interpolation_sets(10, &[0, 1, 2, 3], 3, 1).unwrap());
        let err = sample_interpolation_sets(10, &[0], 4, 1).unwrap_err();
        assert!(err.to_string().contains("supervised pool"));
        assert!(sample_interpolation_sets(10, &(0..9).collect::<Vec<_>>(), 4, 1)
            .unwrap_err()
            .to_string()
            .contains("unsupervised pool"));
    }

    #[test]
    fn full_rank_qr_is_exact() {
        let w = random_weights(6, 3);
        let g = Graph::from_dense(w.clone(), LaplacianKind::Symmetric).unwrap();
        let ds = g.laplacian().unwrap();
        let lr = nystrom_qr(&DenseWeights(w), &[0, 2, 4], 6, 11, LaplacianKind::Symmetric).unwrap();
        assert!(relative_frobenius_error(&lr, &ds).unwrap() <= 1e-8);
        for (a, b) in lr.d_hat().iter().zip(g.degrees()) {
            assert!((a - b).abs() < 1e-10 * b);
        }
        let gram = lr.us().transpose() * lr.us() - Mat::<f64>::identity(6, 6);
        assert!(gram.norm_l2() <= 1e-10);
        let cross = lr.u2().transpose() * lr.u1() - Mat::<f64>::identity(6, 6);
        assert!(cross.norm_l2() <= 1e-10);
    }

    #[test]
    fn random_walk_reconstruction_identity() {
        let w = random_weights(9, 5);
        let lr = nystrom_qr(&DenseWeights(w), &[0, 1, 2, 3], 6, 2, LaplacianKind::RandomWalk).unwrap();
        let d = lr.d_hat();
        let sym = lr.reconstruct_symmetric();
        let scaled = Mat::from_fn(9, 9, |i, j| sym[(i, j)] * d[j].sqrt() / d[i].sqrt());
        assert!((lr.reconstruct() - scaled).norm_l2() < 1e-12);
    }

    #[test]
    fn full_rank_classic_matches_qr_on_positive_definite_kernel() {
        // Gaussian kernel with unit diagonal kept: positive definite.
        let pts: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin() * 2.0).collect();
        let kern = |i: usize, j: usize| (-(pts[i] - pts[j]).powi(2)).exp();
        struct Pd<F>(usize, F);
        impl<F: Fn(usize, usize) -> f64 + Send + Sync> Affinity for Pd<F> {
            fn len(&self) -> usize {
                self.0
            }
            fn weight(&self, i: usize, j: usize) -> f64 {
                (self.1)(i, j)
            }
        }
        let aff = Pd(8, kern);
        let z = [0, 3, 5, 6];
        let qr = nystrom_qr(&aff, &z, 8, 4, LaplacianKind::Symmetric).unwrap();
        let cl = nystrom_classic(&aff, &z, 8, 4, LaplacianKind::Symmetric).unwrap();
        assert_eq!(cl.complex_branches(), 0);
        let diff = qr.reconstruct_symmetric() - cl.reconstruct_symmetric();
        assert!(diff.norm_l2() < 1e-8, "{}", diff.norm_l2());
        // leading 3-dimensional eigenspaces coincide
        let p = |lr: &LowRankLaplacian| {
            let mut idx: Vec<usize> = (0..8).collect();
            idx.sort_by(|&a, &b| lr.lambda()[a].total_cmp(&lr.lambda()[b]));
            let u = Mat::from_fn(8, 3, |i, j| lr.us()[(i, idx[j])]);
            &u * u.transpose()
        };
        assert!((p(&qr) - p(&cl)).norm_l2() < 1e-6);
    }

    #[test]
    fn truncated_svd_examples() {
        let two = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { -1.0 });
        let t = truncated_svd_baseline(&two, 1).unwrap();
        assert!((t.lambda()[0] - 2.0).abs() < 1e-12);
        assert!(relative_frobenius_error(&t, &two).unwrap() < 1e-12);
        assert!(truncated_svd_baseline(&two, 3).is_err());

        let w = Mat::from_fn(3, 3, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
        let ds = Graph::from_dense(w, LaplacianKind::Symmetric).unwrap().laplacian().unwrap();
        let full = truncated_svd_baseline(&ds, 3).unwrap();
        assert!(relative_frobenius_error(&full, &ds).unwrap() < 1e-12);
        // eigenvalues {0,1,2}: dropping the smallest nonzero one leaves 1/√5
        let t = truncated_svd_baseline(&ds, 1).unwrap();
        let e = relative_frobenius_error(&t, &ds).unwrap();
        assert!((e - (1.0f64 / 5.0).sqrt()).abs() < 1e-12);
        assert!((optimal_error_from_spectrum(&[0.0, 1.0, 2.0], 1) - e).abs() < 1e-12);
        let t2 = truncated_svd_baseline(&ds, 2).unwrap();
        assert!(relative_frobenius_error(&t2, &ds).unwrap() < 1e-12);
    }

    #[test]
    fn zero_approximation_error_is_one() {
        let w = random_weights(5, 8);
        let ds = Graph::from_dense(w, LaplacianKind::Symmetric).unwrap().laplacian().unwrap();
        let zero = LowRankLaplacian::from_parts(Mat::zeros(5, 1), vec![0.0], vec![1.0; 5], LaplacianKind::Symmetric)
            .unwrap();
        assert!((relative_frobenius_error(&zero, &ds).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grouped_operator_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let protos: Vec<[f64; 2]> = (0..4).map(|_| [rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)]).collect();
        let feats: Vec<[f64; 2]> = (0..30).map(|_| protos[rng.gen_range(0..4)]).collect();
        let sim = GaussianSimilarity::new(0.8, 2).unwrap();
        let grouped = GroupedLaplacian::from_features(30, |i| &feats[i][..], &sim).unwrap();
        assert!(grouped.groups() <= 4);
        let aff = grouped.affinity();
        let g = Graph::from_dense(Mat::from_fn(30, 30, |i, j| aff.weight(i, j)), LaplacianKind::Symmetric).unwrap();
        let ds = g.laplacian().unwrap();
        assert!((grouped.to_dense() - &ds).norm_l2() < 1e-12);
        assert!((grouped.frobenius_sq() - ds.norm_l2().powi(2)).abs() < 1e-10);
        let mut ev = linalg::sym_eigenvalues(&ds).unwrap();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(grouped.eigenvalues().unwrap()) {
            assert!((a - b).abs() < 1e-10);
        }
        let x = Mat::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        assert!((grouped.apply_block(&x) - &ds * &x).norm_l2() < 1e-10);

        let z: Vec<usize> = (0..15).collect();
        let lr = nystrom_qr(&aff, &z, 6, 3, LaplacianKind::Symmetric).unwrap();
        let direct = relative_frobenius_error(&lr, &ds).unwrap();
        let implicit = relative_frobenius_error_implicit(&lr, &grouped).unwrap();
        assert!((direct - implicit).abs() < 1e-8);
    }
}
