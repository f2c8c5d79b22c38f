//! Weighted graphs, degree-weighted inner products, dense Laplacians and
//! the fidelity-forced Ginzburg-Landau energy.

use std::collections::VecDeque;
use std::sync::Arc;

use faer::Mat;

use crate::error::{check_len, Error, Result};

/// Symmetric nonnegative weights evaluated on demand. Implementations must
/// return 0 on the diagonal.
pub trait Affinity: Send + Sync {
    fn len(&self) -> usize;

    fn weight(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), cols.len(), |a, b| self.weight(rows[a], cols[b]))
    }
}

/// A fully materialized weight matrix.
#[derive(Clone, Debug)]
pub struct DenseWeights(pub Mat<f64>);

impl Affinity for DenseWeights {
    fn len(&self) -> usize {
        self.0.nrows()
    }
    fn weight(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Weights from a closure; the diagonal is forced to zero.
pub struct FnWeights<F> {
    n: usize,
    f: F,
}

impl<F: Fn(usize, usize) -> f64 + Send + Sync> FnWeights<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: Fn(usize, usize) -> f64 + Send + Sync> Affinity for FnWeights<F> {
    fn len(&self) -> usize {
        self.n
    }
    fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            (self.f)(i, j)
        }
    }
}

/// Which Laplacian a graph (or a compressed operator) represents.
///
/// `Unnormalized` is `D - ω` and `RandomWalk` is `D⁻¹(D - ω)`; both use the
/// inner product weighted by `d^r`. `Symmetric` is `I - D^{-1/2} ω D^{-1/2}`
/// paired with the plain Euclidean inner product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LaplacianKind {
    Unnormalized,
    RandomWalk,
    Symmetric,
}

impl LaplacianKind {
    /// Degree exponent `r` of the vertex inner product.
    pub fn exponent(self) -> i32 {
        match self {
            LaplacianKind::RandomWalk => 1,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LaplacianKind::Unnormalized => "unnormalized",
            LaplacianKind::RandomWalk => "random-walk",
            LaplacianKind::Symmetric => "symmetric",
        }
    }
}

impl std::str::FromStr for LaplacianKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unnormalized" => Ok(LaplacianKind::Unnormalized),
            "random-walk" | "rw" => Ok(LaplacianKind::RandomWalk),
            "symmetric" | "sym" => Ok(LaplacianKind::Symmetric),
            _ => Err(Error::Input(format!("unknown normalization '{s}'"))),
        }
    }
}

#[derive(Clone)]
pub struct Graph {
    weights: Arc<dyn Affinity>,
    degrees: Vec<f64>,
    kind: LaplacianKind,
    dense: bool,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n())
            .field("kind", &self.kind)
            .field("dense", &self.dense)
            .finish()
    }
}

impl Graph {
    /// Builds a graph from a full weight matrix, validating symmetry,
    /// nonnegativity, the zero diagonal and connectivity.
    pub fn from_dense(w: Mat<f64>, kind: LaplacianKind) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || w.ncols() != n {
            return Err(Error::Input(format!("weight matrix must be square and nonempty, got {}x{}", n, w.ncols())));
        }
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(Error::Input(format!("self-loop at vertex {i}")));
            }
            for j in 0..i {
                let (a, b) = (w[(i, j)], w[(j, i)]);
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::Input(format!("weight ({i},{j}) = {a} is not a nonnegative number")));
                }
                if a != b {
                    return Err(Error::Input(format!("weights not symmetric at ({i},{j})")));
                }
            }
        }
        let degrees: Vec<f64> = (0..n).map(|i| (0..n).map(|j| w[(i, j)]).sum()).collect();
        if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::DegenerateGraph(format!("vertex {i} has zero degree")));
        }
        if !connected(&w) {
            return Err(Error::DegenerateGraph("graph is not connected".into()));
        }
        Ok(Self { weights: Arc::new(DenseWeights(w)), degrees, kind, dense: true })
    }

    /// Materializes an on-demand weight accessor and validates it like
    /// [`Graph::from_dense`].
    pub fn from_affinity(weights: &dyn Affinity, kind: LaplacianKind) -> Result<Self> {
        let idx: Vec<usize> = (0..weights.len()).collect();
        Self::from_dense(weights.block(&idx, &idx), kind)
    }

    /// Graph with externally supplied (typically estimated) degrees.
    /// Connectivity is assumed, not checked.
    pub fn with_degrees(weights: Arc<dyn Affinity>, degrees: Vec<f64>, kind: LaplacianKind) -> Result<Self> {
        check_len("degree vector", weights.len(), degrees.len())?;
        if let Some(i) = degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateGraph(format!("degree at vertex {i} is not positive")));
        }
        Ok(Self { weights, degrees, kind, dense: false })
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    /// Same weights and degrees viewed through another normalization.
    pub fn with_kind(&self, kind: LaplacianKind) -> Self {
        Self { kind, ..self.clone() }
    }

    pub fn is_dense(&self) -> bool {
        self.dense
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.weight(i, j)
    }

    pub fn affinity(&self) -> &Arc<dyn Affinity> {
        &self.weights
    }

    /// Per-vertex weights `d_i^r` of the inner product.
    pub fn vertex_weights(&self) -> Vec<f64> {
        match self.kind.exponent() {
            1 => self.degrees.clone(),
            _ => vec![1.0; self.n()],
        }
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.kind.exponent() {
            1 => u.iter().zip(v).zip(&self.degrees).map(|((a, b), d)| a * b * d).sum(),
            _ => crate::linalg::dot(u, v),
        }
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    pub fn dense_weights(&self) -> Mat<f64> {
        let n = self.n();
        Mat::from_fn(n, n, |i, j| self.weights.weight(i, j))
    }

    /// Dense Laplacian of this graph's normalization.
    pub fn laplacian(&self) -> Result<Mat<f64>> {
        dense_laplacian(self, self.kind)
    }
}

fn connected(w: &Mat<f64>) -> bool {
    let n = w.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && w[(i, j)] > 0.0 {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    count == n
}

/// `Σ u_i v_i d_i^r`.
pub fn inner_product_v(u: &[f64], v: &[f64], g: &Graph) -> Result<f64> {
    check_len("inner product (u)", g.n(), u.len())?;
    check_len("inner product (v)", g.n(), v.len())?;
    Ok(g.inner(u, v))
}

/// Materializes the requested Laplacian.
pub fn dense_laplacian(g: &Graph, kind: LaplacianKind) -> Result<Mat<f64>> {
    let n = g.n();
    let d = g.degrees();
    if let Some(i) = d.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::DegenerateGraph(format!("vertex {i} has zero degree")));
    }
    let w = g.dense_weights();
    Ok(match kind {
        LaplacianKind::Unnormalized => Mat::from_fn(n, n, |i, j| if i == j { d[i] } else { -w[(i, j)] }),
        LaplacianKind::RandomWalk => {
            Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { -w[(i, j)] / d[i] })
        }
        LaplacianKind::Symmetric => {
            let s: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
            Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { -w[(i, j)] / (s[i] * s[j]) })
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianSimilarity {
    pub sigma: f64,
    pub ell: usize,
}

impl GaussianSimilarity {
    pub fn new(sigma: f64, ell: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
        }
        if ell == 0 {
            return Err(Error::Input("feature dimension must be at least 1".into()));
        }
        Ok(Self { sigma, ell })
    }

    /// `exp(-dist2 / (ℓσ²))`.
    #[inline]
    pub fn from_sq_dist(&self, dist2: f64) -> f64 {
        (-dist2 / (self.ell as f64 * self.sigma * self.sigma)).exp()
    }
}

pub fn gaussian_similarity(z: &[f64], w: &[f64], sim: &GaussianSimilarity) -> Result<f64> {
    check_len("feature vector (z)", sim.ell, z.len())?;
    check_len("feature vector (w)", sim.ell, w.len())?;
    let d2: f64 = z.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sim.from_sq_dist(d2))
}

/// Supervision: fidelity strengths `μ`, reference labels `f̃` on the
/// support `Z = {μ > 0}`, and the forcing `f = μ ⊙ f̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct FidelityData {
    mu: Vec<f64>,
    f_tilde: Vec<f64>,
    support: Vec<usize>,
    f: Vec<f64>,
}

impl FidelityData {
    pub fn new(mu: Vec<f64>, f_tilde: Vec<f64>) -> Result<Self> {
        check_len("fidelity reference", mu.len(), f_tilde.len())?;
        if mu.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Input("fidelity strengths must be finite and nonnegative".into()));
        }
        let support: Vec<usize> = (0..mu.len()).filter(|&i| mu[i] > 0.0).collect();
        if support.is_empty() {
            return Err(Error::Input("fidelity strengths are all zero".into()));
        }
        for (i, (&m, &t)) in mu.iter().zip(&f_tilde).enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Input(format!("reference label {t} at vertex {i} is outside [0,1]")));
            }
            if m == 0.0 && t != 0.0 {
                return Err(Error::Input(format!("reference label set at vertex {i} outside the fidelity support")));
            }
        }
        let f = mu.iter().zip(&f_tilde).map(|(m, t)| m * t).collect();
        Ok(Self { mu, f_tilde, support, f })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn f_tilde(&self) -> &[f64] {
        &self.f_tilde
    }
    pub fn support(&self) -> &[usize] {
        &self.support
    }
    pub fn forcing(&self) -> &[f64] {
        &self.f
    }
    pub fn mu_max(&self) -> f64 {
        self.mu.iter().cloned().fold(0.0, f64::max)
    }
}

/// Fidelity-forced Ginzburg-Landau energy with the double-obstacle
/// potential. Returns `f64::INFINITY` when `u` leaves `[0,1]`.
pub fn ginzburg_landau_fidelity(u: &[f64], g: &Graph, fid: &FidelityData, eps: f64) -> Result<f64> {
    check_len("label vector", g.n(), u.len())?;
    check_len("fidelity data", g.n(), fid.n())?;
    if !(eps > 0.0) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    if u.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Ok(f64::INFINITY);
    }
    let lap = g.laplacian()?;
    let lu = lap * crate::linalg::col_vec(u);
    let lu: Vec<f64> = (0..g.n()).map(|i| lu[(i, 0)]).collect();
    let vw = g.vertex_weights();
    let dirichlet = 0.5 * g.inner(u, &lu);
    let well: f64 = u.iter().zip(&vw).map(|(x, w)| w * 0.5 * x * (1.0 - x)).sum::<f64>() / eps;
    let fit: f64 = 0.5
        * (0..g.n())
            .map(|i| vw[i] * fid.mu[i] * (u[i] - fid.f_tilde[i]).powi(2))
            .sum::<f64>();
    Ok(dirichlet + well + fit)
}

/// `½ Σ_ij ω_ij (u_j - u_i)²`, the edgewise Dirichlet energy.
pub fn edge_dirichlet_energy(u: &[f64], g: &Graph) -> f64 {
    let n = g.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = u[j] - u[i];
            s += g.weight(i, j) * d * d;
        }
    }
    0.5 * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{col_vec, sym_eigenvalues};

    fn two_node(w: f64, kind: LaplacianKind) -> Graph {
        Graph::from_dense(Mat::from_fn(2, 2, |i, j| if i == j { 0.0 } else { w }), kind).unwrap()
    }

    fn path3() -> Graph {
        let w = Mat::from_fn(3, 3, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
        Graph::from_dense(w, LaplacianKind::Symmetric).unwrap()
    }

    #[test]
    fn similarity_values() {
        let sim = GaussianSimilarity::new(1.0, 2).unwrap();
        let v = gaussian_similarity(&[0.0, 0.0], &[1.0, 1.0], &sim).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(gaussian_similarity(&[0.3, 0.2], &[0.3, 0.2], &sim).unwrap(), 1.0);
        assert!(gaussian_similarity(&[0.0], &[1.0, 1.0], &sim).is_err());
        let sim3 = GaussianSimilarity::new(2.0, 3).unwrap();
        // squared distance ℓσ² = 12
        let v = gaussian_similarity(&[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0], &sim3).unwrap();
        assert!((v - 0.367879441171).abs() < 1e-11);
    }

    #[test]
    fn inner_products() {
        let g0 = two_node(1.0, LaplacianKind::Unnormalized);
        assert_eq!(inner_product_v(&[1.0, 1.0], &[1.0, 1.0], &g0).unwrap(), 2.0);
        let g1 = two_node(1.0, LaplacianKind::RandomWalk);
        assert_eq!(inner_product_v(&[1.0, 0.0], &[1.0, 0.0], &g1).unwrap(), 1.0);
        let g3 = two_node(3.0, LaplacianKind::RandomWalk);
        assert_eq!(inner_product_v(&[1.0, 1.0], &[1.0, 1.0], &g3).unwrap(), 6.0);
        assert!(inner_product_v(&[1.0], &[1.0, 1.0], &g3).is_err());
    }

    #[test]
    fn two_node_laplacians_coincide() {
        let g = two_node(1.0, LaplacianKind::RandomWalk);
        let rw = dense_laplacian(&g, LaplacianKind::RandomWalk).unwrap();
        let sym = dense_laplacian(&g, LaplacianKind::Symmetric).unwrap();
        let expect = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { -1.0 });
        assert!((&rw - &expect).norm_l2() < 1e-15);
        assert!((&sym - &expect).norm_l2() < 1e-15);
    }

    #[test]
    fn path_spectrum() {
        let lap = path3().laplacian().unwrap();
        let ev = sym_eigenvalues(&lap).unwrap();
        for (a, b) in ev.iter().zip([0.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn rejects_bad_graphs() {
        let disc = Mat::from_fn(4, 4, |i, j| if i != j && i / 2 == j / 2 { 1.0 } else { 0.0 });
        assert!(matches!(
            Graph::from_dense(disc, LaplacianKind::RandomWalk),
            Err(Error::DegenerateGraph(_))
        ));
        let asym = Mat::from_fn(2, 2, |i, j| if i < j { 1.0 } else if i > j { 2.0 } else { 0.0 });
        assert!(Graph::from_dense(asym, LaplacianKind::RandomWalk).is_err());
        let lonely = Mat::from_fn(2, 2, |_, _| 0.0);
        assert!(Graph::from_dense(lonely, LaplacianKind::RandomWalk).is_err());
    }

    #[test]
    fn energy_examples() {
        let g = two_node(1.0, LaplacianKind::RandomWalk);
        let fid = FidelityData::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        let e = ginzburg_landau_fidelity(&[1.0, 0.0], &g, &fid, 0.37).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        let fid0 = FidelityData::new(vec![2.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(ginzburg_landau_fidelity(&[0.0, 0.0], &g, &fid0, 0.1).unwrap(), 0.0);
        assert_eq!(ginzburg_landau_fidelity(&[1.2, 0.0], &g, &fid0, 0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn fidelity_validation() {
        assert!(FidelityData::new(vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(FidelityData::new(vec![1.0, 0.0], vec![0.0, 1.0]).is_err());
        assert!(FidelityData::new(vec![1.0, 0.0], vec![1.5, 0.0]).is_err());
        let fid = FidelityData::new(vec![0.0, 3.0], vec![0.0, 0.5]).unwrap();
        assert_eq!(fid.support(), &[1]);
        assert_eq!(fid.forcing(), &[0.0, 1.5]);
    }

    #[test]
    fn laplacian_kills_constants() {
        let w = Mat::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 0.1 + ((i + j) % 4) as f64 * 0.2 });
        for kind in [LaplacianKind::Unnormalized, LaplacianKind::RandomWalk] {
            let g = Graph::from_dense(w.clone(), kind).unwrap();
            let l = g.laplacian().unwrap() * col_vec(&[1.0; 5]);
            assert!(l.norm_l2() < 1e-14);
        }
        // the symmetric Laplacian annihilates sqrt(d) instead
        let g = Graph::from_dense(w, LaplacianKind::Symmetric).unwrap();
        let s: Vec<f64> = g.degrees().iter().map(|d| d.sqrt()).collect();
        assert!((g.laplacian().unwrap() * col_vec(&s)).norm_l2() < 1e-14);
    }
}
