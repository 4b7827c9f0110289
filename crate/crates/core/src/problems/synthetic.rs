//! Synthetic affine operators for tests and the `affine-toy` harness family.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inclusion::{
    AffineComponents, FiniteSumOperator, Forward, InclusionProblem, Point, Resolvent,
    StochasticOracle,
};
use crate::linalg::{self, DenseMatrix};
use crate::rng::{substream, streams, SimRng};

fn gaussian_vec(rng: &mut SimRng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `G_i x = A_i x + a_i` with dense `A_i`.
#[derive(Debug, Clone)]
pub struct DenseAffineSum {
    mats: Vec<DenseMatrix>,
    offsets: Vec<Vec<f64>>,
    mean_mat: DenseMatrix,
    mean_offset: Vec<f64>,
    closed_form: bool,
    lipschitz: f64,
}

impl DenseAffineSum {
    pub fn new(mats: Vec<DenseMatrix>, offsets: Vec<Vec<f64>>) -> Result<Self> {
        let n = mats.len();
        if n == 0 || offsets.len() != n {
            return Err(Error::invalid("need one offset per component and n >= 1"));
        }
        let p = mats[0].rows();
        if mats.iter().any(|m| m.rows() != p || m.cols() != p) || offsets.iter().any(|o| o.len() != p)
        {
            return Err(Error::invalid("components must be square and share a dimension"));
        }
        let mut mean = vec![0.0; p * p];
        let mut mean_offset = vec![0.0; p];
        let mut gram = DenseMatrix::zeros(p, p);
        for (m, o) in mats.iter().zip(&offsets) {
            linalg::axpy(1.0, m.as_slice(), &mut mean);
            linalg::axpy(1.0, o, &mut mean_offset);
            for i in 0..p {
                for j in 0..p {
                    let s: f64 = (0..p).map(|k| m[(k, i)] * m[(k, j)]).sum();
                    gram[(i, j)] += s / n as f64;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        mean_offset.iter_mut().for_each(|v| *v /= n as f64);
        let lipschitz = linalg::sym_max_eigenvalue(&gram).max(0.0).sqrt();
        Ok(Self {
            mats,
            offsets,
            mean_mat: DenseMatrix::from_row_major(p, p, mean),
            mean_offset,
            closed_form: true,
            lipschitz,
        })
    }

    /// Random Gaussian components with entries of variance `1/p` and unit-variance offsets.
    pub fn random(n: usize, p: usize, seed: u64) -> Self {
        let mut rng = substream(seed, streams::DATA);
        let s = (p as f64).sqrt().recip();
        let mats = (0..n)
            .map(|_| DenseMatrix::from_row_major(p, p, gaussian_vec(&mut rng, p * p, s)))
            .collect();
        let offsets = (0..n).map(|_| gaussian_vec(&mut rng, p, 1.0)).collect();
        Self::new(mats, offsets).expect("consistent shapes")
    }

    /// Disables the closed-form mean so full evaluations sum components.
    pub fn without_closed_form(mut self) -> Self {
        self.closed_form = false;
        self
    }

    pub fn mean_matrix(&self) -> &DenseMatrix {
        &self.mean_mat
    }

    pub fn mean_offset(&self) -> &[f64] {
        &self.mean_offset
    }

    /// Solution of `Ā x + ā = 0` if `Ā` is invertible.
    pub fn solve_zero(&self) -> Option<Point> {
        let rhs: Vec<f64> = self.mean_offset.iter().map(|v| -v).collect();
        linalg::solve(&self.mean_mat, &rhs).map(Point::from)
    }

    pub fn into_problem(self, name: &str) -> InclusionProblem {
        let sol = self.solve_zero();
        let mut prob = InclusionProblem::new(name, Forward::FiniteSum(Arc::new(self)), Resolvent::Zero)
            .expect("zero resolvent always valid");
        prob.known_solution = sol;
        prob
    }
}

impl FiniteSumOperator for DenseAffineSum {
    fn num_components(&self) -> usize {
        self.mats.len()
    }
    fn dim(&self) -> usize {
        self.mean_offset.len()
    }
    fn eval_component(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.mats[i].matvec_into(x, out);
        linalg::axpy(1.0, &self.offsets[i], out);
    }
    fn eval_mean_closed_form(&self, x: &[f64], out: &mut [f64]) -> bool {
        if !self.closed_form {
            return false;
        }
        self.mean_mat.matvec_into(x, out);
        linalg::axpy(1.0, &self.mean_offset, out);
        true
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn affine(&self) -> Option<&dyn AffineComponents> {
        Some(self)
    }
}

impl AffineComponents for DenseAffineSum {
    fn apply_linear(&self, i: usize, u: &[f64], out: &mut [f64]) {
        self.mats[i].matvec_into(u, out)
    }
    fn apply_linear_t(&self, i: usize, u: &[f64], out: &mut [f64]) {
        self.mats[i].matvec_t_into(u, out)
    }
}

/// Ten 3-dimensional random affine components: the standard verification toy.
pub fn linear_toy(n: usize, seed: u64) -> InclusionProblem {
    DenseAffineSum::random(n, 3, seed).into_problem("linear-toy")
}

/// `G(u, v) = (v, -u)`: a single-component bilinear game.
pub fn bilinear_game() -> InclusionProblem {
    let m = DenseMatrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
    DenseAffineSum::new(vec![m], vec![vec![0.0, 0.0]])
        .expect("valid")
        .into_problem("bilinear")
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineToySpec {
    pub n: usize,
    pub dim: usize,
    /// Lower end of the diagonal, i.e. the strong-monotonicity modulus of the mean.
    pub mu: f64,
    /// Scale of the skew coupling.
    pub skew: f64,
    /// Scale of the zero-mean rank-one component perturbations.
    pub hetero: f64,
    /// Scale of the zero-mean offset perturbations.
    pub offset_noise: f64,
    pub skew_rank: usize,
}

impl Default for AffineToySpec {
    fn default() -> Self {
        Self {
            n: 1000,
            dim: 50,
            mu: 0.3,
            skew: 0.5,
            hetero: 0.5,
            offset_noise: 1.0,
            skew_rank: 2,
        }
    }
}

/// Strongly monotone affine finite sum with cheap components:
/// `G_i x = M x + s_i (v_i^T x) u_i + a_i`, `M = diag(m) + Σ_j (c_j d_j^T - d_j c_j^T)`.
/// Perturbations come in `±` pairs, so the mean is exactly `M x + ā`.
#[derive(Debug, Clone)]
pub struct AffineToy {
    diag: Vec<f64>,
    skew_c: Vec<Vec<f64>>,
    skew_d: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    sign: Vec<f64>,
    offsets: Vec<Vec<f64>>,
    mean_offset: Vec<f64>,
    lipschitz: f64,
}

impl AffineToy {
    pub fn generate(spec: &AffineToySpec, seed: u64) -> Result<Self> {
        if spec.n == 0 || spec.dim == 0 {
            return Err(Error::invalid("affine toy needs n, dim >= 1"));
        }
        if !(spec.mu > 0.0 && spec.mu <= 1.0) {
            return Err(Error::invalid("affine toy mu must lie in (0, 1]"));
        }
        let p = spec.dim;
        let mut rng = substream(seed, streams::DATA);
        let sp = (p as f64).sqrt().recip();
        let diag: Vec<f64> = (0..p).map(|_| rng.random_range(spec.mu..=1.0)).collect();
        let skew_c: Vec<Vec<f64>> = (0..spec.skew_rank)
            .map(|_| gaussian_vec(&mut rng, p, spec.skew * sp))
            .collect();
        let skew_d: Vec<Vec<f64>> = (0..spec.skew_rank)
            .map(|_| gaussian_vec(&mut rng, p, spec.skew * sp))
            .collect();
        let mean_offset = gaussian_vec(&mut rng, p, 1.0);
        let pairs = spec.n / 2;
        let mut u = Vec::with_capacity(spec.n);
        let mut v = Vec::with_capacity(spec.n);
        let mut sign = Vec::with_capacity(spec.n);
        let mut offsets = Vec::with_capacity(spec.n);
        for _ in 0..pairs {
            let uk = gaussian_vec(&mut rng, p, spec.hetero * sp);
            let vk = gaussian_vec(&mut rng, p, sp);
            let ek = gaussian_vec(&mut rng, p, spec.offset_noise);
            for s in [1.0, -1.0] {
                u.push(uk.clone());
                v.push(vk.clone());
                sign.push(s);
                offsets.push(mean_offset.iter().zip(&ek).map(|(a, e)| a + s * e).collect());
            }
        }
        if spec.n % 2 == 1 {
            u.push(vec![0.0; p]);
            v.push(vec![0.0; p]);
            sign.push(0.0);
            offsets.push(mean_offset.clone());
        }
        let mut toy = Self {
            diag,
            skew_c,
            skew_d,
            u,
            v,
            sign,
            offsets,
            mean_offset,
            lipschitz: 0.0,
        };
        toy.lipschitz = toy.exact_average_lipschitz();
        Ok(toy)
    }

    pub fn mean_matrix(&self) -> DenseMatrix {
        let p = self.diag.len();
        let mut m = DenseMatrix::zeros(p, p);
        for i in 0..p {
            m[(i, i)] = self.diag[i];
        }
        for (c, d) in self.skew_c.iter().zip(&self.skew_d) {
            for i in 0..p {
                for j in 0..p {
                    m[(i, j)] += c[i] * d[j] - d[i] * c[j];
                }
            }
        }
        m
    }

    /// `λ_max(M^T M + (1/n) Σ s_i² ||u_i||² v_i v_i^T)`; cross terms cancel in pairs.
    fn exact_average_lipschitz(&self) -> f64 {
        let m = self.mean_matrix();
        let p = self.diag.len();
        let n = self.sign.len() as f64;
        let mut h = DenseMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                h[(i, j)] = (0..p).map(|k| m[(k, i)] * m[(k, j)]).sum();
            }
        }
        for ((u, v), s) in self.u.iter().zip(&self.v).zip(&self.sign) {
            let w = s * s * linalg::dot(u, u) / n;
            for i in 0..p {
                for j in 0..p {
                    h[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        linalg::sym_max_eigenvalue(&h).max(0.0).sqrt()
    }

    fn mean_linear(&self, x: &[f64], out: &mut [f64]) {
        for ((o, d), xi) in out.iter_mut().zip(&self.diag).zip(x) {
            *o = d * xi;
        }
        for (c, d) in self.skew_c.iter().zip(&self.skew_d) {
            let dx = linalg::dot(d, x);
            let cx = linalg::dot(c, x);
            for ((o, ci), di) in out.iter_mut().zip(c).zip(d) {
                *o += ci * dx - di * cx;
            }
        }
    }

    fn mean_linear_t(&self, y: &[f64], out: &mut [f64]) {
        for ((o, d), yi) in out.iter_mut().zip(&self.diag).zip(y) {
            *o = d * yi;
        }
        for (c, d) in self.skew_c.iter().zip(&self.skew_d) {
            let cy = linalg::dot(c, y);
            let dy = linalg::dot(d, y);
            for ((o, ci), di) in out.iter_mut().zip(c).zip(d) {
                *o += di * cy - ci * dy;
            }
        }
    }

    pub fn solution(&self) -> Option<Point> {
        let rhs: Vec<f64> = self.mean_offset.iter().map(|v| -v).collect();
        linalg::solve(&self.mean_matrix(), &rhs).map(Point::from)
    }

    pub fn into_problem(self) -> InclusionProblem {
        let sol = self.solution();
        let mut prob =
            InclusionProblem::new("affine-toy", Forward::FiniteSum(Arc::new(self)), Resolvent::Zero)
                .expect("zero resolvent always valid");
        prob.known_solution = sol;
        prob
    }
}

impl FiniteSumOperator for AffineToy {
    fn num_components(&self) -> usize {
        self.sign.len()
    }
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn eval_component(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.mean_linear(x, out);
        let s = self.sign[i] * linalg::dot(&self.v[i], x);
        linalg::axpy(s, &self.u[i], out);
        linalg::axpy(1.0, &self.offsets[i], out);
    }
    fn eval_mean_closed_form(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.mean_linear(x, out);
        linalg::axpy(1.0, &self.mean_offset, out);
        true
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn affine(&self) -> Option<&dyn AffineComponents> {
        Some(self)
    }
}

impl AffineComponents for AffineToy {
    fn apply_linear(&self, i: usize, u: &[f64], out: &mut [f64]) {
        self.mean_linear(u, out);
        let s = self.sign[i] * linalg::dot(&self.v[i], u);
        linalg::axpy(s, &self.u[i], out);
    }
    fn apply_linear_t(&self, i: usize, u: &[f64], out: &mut [f64]) {
        self.mean_linear_t(u, out);
        let s = self.sign[i] * linalg::dot(&self.u[i], u);
        linalg::axpy(s, &self.v[i], out);
    }
}

/// Expectation-setting oracle `G(x, ξ) = A x + c + σ z(ξ)` with `z(ξ) ~ N(0, I)`.
#[derive(Debug, Clone)]
pub struct NoisyAffineOracle {
    mat: DenseMatrix,
    offset: Vec<f64>,
    sigma: f64,
}

impl NoisyAffineOracle {
    pub fn new(mat: DenseMatrix, offset: Vec<f64>, sigma: f64) -> Result<Self> {
        if mat.rows() != mat.cols() || offset.len() != mat.rows() || !(sigma >= 0.0) {
            return Err(Error::invalid("noisy oracle needs square A, matching c, sigma >= 0"));
        }
        Ok(Self { mat, offset, sigma })
    }

    pub fn into_problem(self, name: &str) -> InclusionProblem {
        let rhs: Vec<f64> = self.offset.iter().map(|v| -v).collect();
        let sol = linalg::solve(&self.mat, &rhs).map(Point::from);
        let mut prob = InclusionProblem::new(name, Forward::Expectation(Arc::new(self)), Resolvent::Zero)
            .expect("zero resolvent always valid");
        prob.known_solution = sol;
        prob
    }
}

impl StochasticOracle for NoisyAffineOracle {
    fn dim(&self) -> usize {
        self.offset.len()
    }
    fn eval_sample(&self, xi: u64, x: &[f64], out: &mut [f64]) {
        self.mat.matvec_into(x, out);
        linalg::axpy(1.0, &self.offset, out);
        let mut rng = substream(xi, streams::DATA);
        for o in out.iter_mut() {
            *o += self.sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    fn eval_mean(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.mat.matvec_into(x, out);
        linalg::axpy(1.0, &self.offset, out);
        true
    }
    fn lipschitz(&self) -> f64 {
        linalg::spectral_norm(&self.mat, 1e-12).value
    }
    fn variance_bound(&self) -> f64 {
        self.sigma * self.sigma * self.offset.len() as f64
    }
}
