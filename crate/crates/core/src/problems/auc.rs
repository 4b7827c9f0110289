//! Square-loss AUC maximisation as a saddle problem in `z = (w, a, b, α)`.

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inclusion::{AffineComponents, FiniteSumOperator, Forward, InclusionProblem, Resolvent};
use crate::linalg::{self, DenseMatrix};
use crate::rng::{substream, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct AucDataset {
    /// `n × d` features.
    pub x: DenseMatrix,
    /// `+1` or `-1`.
    pub y: Vec<i8>,
    /// Empirical positive fraction.
    pub p_pos: f64,
    /// `max_i ||x_i||`.
    pub kappa_feat: f64,
}

impl AucDataset {
    pub fn new(x: DenseMatrix, y: Vec<i8>) -> Result<Self> {
        if x.rows() != y.len() || y.is_empty() {
            return Err(Error::invalid("feature rows and labels disagree"));
        }
        if y.iter().any(|&l| l != 1 && l != -1) {
            return Err(Error::invalid("labels must be +1 or -1"));
        }
        let pos = y.iter().filter(|&&l| l == 1).count();
        let kappa_feat = (0..x.rows())
            .map(|i| linalg::norm(x.row(i)))
            .fold(0.0, f64::max);
        Ok(Self {
            p_pos: pos as f64 / y.len() as f64,
            kappa_feat,
            x,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&l| l == 1).count()
    }
}

/// Gaussian features, unit-norm Gaussian `w*`, scores `Xw* + ε`, and the top
/// `⌊p_pos·n⌋` scores labelled positive.
pub fn gen_auc_dataset(n: usize, d: usize, p_pos: f64, noise_sigma: f64, seed: u64) -> Result<AucDataset> {
    if n < 2 || d < 1 {
        return Err(Error::invalid("need n >= 2 and d >= 1"));
    }
    if !(p_pos > 0.0 && p_pos < 1.0) || !(noise_sigma >= 0.0) {
        return Err(Error::invalid("need p_pos in (0,1) and noise_sigma >= 0"));
    }
    let m = (p_pos * n as f64).floor() as usize;
    if m < 1 {
        return Err(Error::invalid("p_pos * n < 1 leaves no positive sample"));
    }
    let mut rng = substream(seed, streams::DATA);
    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let x = DenseMatrix::from_row_major(n, d, data);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let nw = linalg::norm(&w);
    w.iter_mut().for_each(|v| *v /= nw);
    let scores: Vec<f64> = (0..n)
        .map(|i| linalg::dot(x.row(i), &w) + noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - m - 1];
    let y = scores
        .iter()
        .map(|&s| if s > threshold { 1 } else { -1 })
        .collect();
    AucDataset::new(x, y)
}

/// Per-sample operator of the AUC saddle function; the mean is `Qz + q`.
#[derive(Debug)]
pub struct AucOperator {
    x: DenseMatrix,
    y: Vec<i8>,
    p: f64,
    q_mat: DenseMatrix,
    q_vec: Vec<f64>,
    avg_lipschitz: OnceLock<f64>,
}

impl AucOperator {
    pub fn new(data: &AucDataset) -> Result<Self> {
        let n = data.n();
        let d = data.d();
        let npos = data.positives();
        if npos == 0 || npos == n {
            return Err(Error::invalid("AUC operator needs both classes non-empty"));
        }
        let p = npos as f64 / n as f64;
        let mut mu_pos = vec![0.0; d];
        let mut mu_neg = vec![0.0; d];
        let mut s_sum = DenseMatrix::zeros(d, d);
        for i in 0..n {
            let xi = data.x.row(i);
            let (mu, cnt) = if data.y[i] == 1 {
                (&mut mu_pos, npos)
            } else {
                (&mut mu_neg, n - npos)
            };
            linalg::axpy(1.0 / cnt as f64, xi, mu);
            let wgt = 1.0 / cnt as f64;
            for r in 0..d {
                for c in 0..d {
                    s_sum[(r, c)] += wgt * xi[r] * xi[c];
                }
            }
        }
        let scale = 2.0 * p * (1.0 - p);
        let dim = d + 3;
        let mut q = DenseMatrix::zeros(dim, dim);
        let (ia, ib, ial) = (d, d + 1, d + 2);
        for r in 0..d {
            for c in 0..d {
                q[(r, c)] = scale * s_sum[(r, c)];
            }
            let diff = mu_neg[r] - mu_pos[r];
            q[(r, ia)] = -scale * mu_pos[r];
            q[(r, ib)] = -scale * mu_neg[r];
            q[(r, ial)] = scale * diff;
            q[(ia, r)] = -scale * mu_pos[r];
            q[(ib, r)] = -scale * mu_neg[r];
            q[(ial, r)] = -scale * diff;
        }
        q[(ia, ia)] = scale;
        q[(ib, ib)] = scale;
        q[(ial, ial)] = scale;
        let mut q_vec = vec![0.0; dim];
        for r in 0..d {
            q_vec[r] = scale * (mu_neg[r] - mu_pos[r]);
        }
        Ok(Self {
            x: data.x.clone(),
            y: data.y.clone(),
            p,
            q_mat: q,
            q_vec,
            avg_lipschitz: OnceLock::new(),
        })
    }

    pub fn q_matrix(&self) -> &DenseMatrix {
        &self.q_mat
    }

    pub fn q_vector(&self) -> &[f64] {
        &self.q_vec
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn d(&self) -> usize {
        self.x.cols()
    }
}

impl FiniteSumOperator for AucOperator {
    fn num_components(&self) -> usize {
        self.y.len()
    }

    fn dim(&self) -> usize {
        self.d() + 3
    }

    fn eval_component(&self, i: usize, z: &[f64], out: &mut [f64]) {
        let d = self.d();
        let p = self.p;
        let xi = self.x.row(i);
        let (w, rest) = z.split_at(d);
        let (a, b, alpha) = (rest[0], rest[1], rest[2]);
        let xw = linalg::dot(xi, w);
        let pq = 2.0 * p * (1.0 - p);
        let (ow, orest) = out.split_at_mut(d);
        if self.y[i] == 1 {
            let c = 1.0 - p;
            let coef = 2.0 * c * (xw - a) - 2.0 * (1.0 + alpha) * c;
            for (o, xv) in ow.iter_mut().zip(xi) {
                *o = coef * xv;
            }
            orest[0] = -2.0 * c * (xw - a);
            orest[1] = 0.0;
            orest[2] = 2.0 * c * xw + pq * alpha;
        } else {
            let coef = 2.0 * p * (xw - b) + 2.0 * (1.0 + alpha) * p;
            for (o, xv) in ow.iter_mut().zip(xi) {
                *o = coef * xv;
            }
            orest[0] = 0.0;
            orest[1] = -2.0 * p * (xw - b);
            orest[2] = -2.0 * p * xw + pq * alpha;
        }
    }

    fn eval_mean_closed_form(&self, z: &[f64], out: &mut [f64]) -> bool {
        self.q_mat.matvec_into(z, out);
        linalg::axpy(1.0, &self.q_vec, out);
        true
    }

    fn lipschitz(&self) -> f64 {
        *self
            .avg_lipschitz
            .get_or_init(|| crate::inclusion::average_lipschitz(self, 1e-9).value)
    }

    fn affine(&self) -> Option<&dyn AffineComponents> {
        Some(self)
    }
}

impl AffineComponents for AucOperator {
    fn apply_linear(&self, i: usize, u: &[f64], out: &mut [f64]) {
        let d = self.d();
        let p = self.p;
        let xi = self.x.row(i);
        let (uw, rest) = u.split_at(d);
        let (ua, ub, ual) = (rest[0], rest[1], rest[2]);
        let xu = linalg::dot(xi, uw);
        let pq = 2.0 * p * (1.0 - p);
        let (ow, orest) = out.split_at_mut(d);
        if self.y[i] == 1 {
            let c = 1.0 - p;
            let coef = 2.0 * c * (xu - ua) - 2.0 * ual * c;
            ow.iter_mut().zip(xi).for_each(|(o, xv)| *o = coef * xv);
            orest[0] = -2.0 * c * (xu - ua);
            orest[1] = 0.0;
            orest[2] = 2.0 * c * xu + pq * ual;
        } else {
            let coef = 2.0 * p * (xu - ub) + 2.0 * ual * p;
            ow.iter_mut().zip(xi).for_each(|(o, xv)| *o = coef * xv);
            orest[0] = 0.0;
            orest[1] = -2.0 * p * (xu - ub);
            orest[2] = -2.0 * p * xu + pq * ual;
        }
    }

    fn apply_linear_t(&self, i: usize, u: &[f64], out: &mut [f64]) {
        let d = self.d();
        let p = self.p;
        let xi = self.x.row(i);
        let (uw, rest) = u.split_at(d);
        let (ua, ub, ual) = (rest[0], rest[1], rest[2]);
        let xu = linalg::dot(xi, uw);
        let pq = 2.0 * p * (1.0 - p);
        let (ow, orest) = out.split_at_mut(d);
        if self.y[i] == 1 {
            let c = 1.0 - p;
            let coef = 2.0 * c * xu - 2.0 * c * ua + 2.0 * c * ual;
            ow.iter_mut().zip(xi).for_each(|(o, xv)| *o = coef * xv);
            orest[0] = -2.0 * c * xu + 2.0 * c * ua;
            orest[1] = 0.0;
            orest[2] = -2.0 * c * xu + pq * ual;
        } else {
            let coef = 2.0 * p * xu - 2.0 * p * ub - 2.0 * p * ual;
            ow.iter_mut().zip(xi).for_each(|(o, xv)| *o = coef * xv);
            orest[0] = 0.0;
            orest[1] = -2.0 * p * xu + 2.0 * p * ub;
            orest[2] = 2.0 * p * xu + pq * ual;
        }
    }
}

/// Default radius `100 (1 + ||x0||)`.
pub fn default_radius(x0_norm: f64) -> f64 {
    100.0 * (1.0 + x0_norm)
}

/// AUC inclusion with the ball-box resolvent and `L = ||Q||_2`.
pub fn build_auc_problem(data: &AucDataset, radius: f64) -> Result<InclusionProblem> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    let op = AucOperator::new(data)?;
    let l = linalg::spectral_norm(op.q_matrix(), 1e-12).value;
    let resolvent = Resolvent::auc(data.d(), radius, data.kappa_feat);
    resolvent.validate(op.dim())?;
    Ok(InclusionProblem {
        name: "auc".into(),
        forward: Forward::FiniteSum(Arc::new(op)),
        resolvent,
        lipschitz: l,
        weak_minty_rho: 0.0,
        known_solution: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inclusion::component_mean_into;

    fn hand_dataset() -> AucDataset {
        let x = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0], &[1.0, 1.0], &[-1.0, 0.5]]);
        AucDataset::new(x, vec![1, -1, -1, 1]).unwrap()
    }

    #[test]
    fn positives_count_exact() {
        let ds = gen_auc_dataset(1000, 3, 0.1, 0.1, 4).unwrap();
        assert_eq!(ds.positives(), 100);
        let again = gen_auc_dataset(1000, 3, 0.1, 0.1, 4).unwrap();
        assert_eq!(ds, again);
        assert!(gen_auc_dataset(5, 2, 0.1, 0.1, 1).is_err());
    }

    #[test]
    fn noiseless_one_dim_labels_top_fraction() {
        let ds = gen_auc_dataset(50, 1, 0.2, 0.0, 8).unwrap();
        let mut col: Vec<(f64, i8)> = (0..50).map(|i| (ds.x[(i, 0)], ds.y[i])).collect();
        // w* = ±1 in one dimension; orient by the label of the maximal |x|.
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let top: Vec<i8> = col.iter().rev().take(10).map(|c| c.1).collect();
        let bottom: Vec<i8> = col.iter().take(10).map(|c| c.1).collect();
        assert!(top.iter().all(|&l| l == 1) || bottom.iter().all(|&l| l == 1));
        assert_eq!(ds.positives(), 10);
    }

    #[test]
    fn kappa_is_max_row_norm() {
        let ds = hand_dataset();
        assert_eq!(ds.kappa_feat, 2.0);
    }

    #[test]
    fn q_matches_hand_blocks() {
        let ds = hand_dataset();
        let op = AucOperator::new(&ds).unwrap();
        // p = 1/2, scale 2p(1-p) = 1/2.
        // S+ = ((1,0)(1,0)^T + (-1,.5)(-1,.5)^T)/2, S- = ((0,2)(0,2)^T + (1,1)(1,1)^T)/2.
        let q = op.q_matrix();
        let s00 = 0.5 * ((1.0 + 1.0) / 2.0 + (0.0 + 1.0) / 2.0);
        let s01 = 0.5 * ((0.0 - 0.5) / 2.0 + (0.0 + 1.0) / 2.0);
        let s11 = 0.5 * ((0.0 + 0.25) / 2.0 + (4.0 + 1.0) / 2.0);
        assert!((q[(0, 0)] - s00).abs() < 1e-15);
        assert!((q[(0, 1)] - s01).abs() < 1e-15);
        assert!((q[(1, 1)] - s11).abs() < 1e-15);
        // mu+ = (0, 0.25), mu- = (0.5, 1.5)
        assert!((q[(1, 2)] + 0.5 * 0.25).abs() < 1e-15);
        assert!((q[(0, 3)] + 0.5 * 0.5).abs() < 1e-15);
        assert!((q[(1, 4)] - 0.5 * 1.25).abs() < 1e-15);
        assert!((q[(4, 1)] + 0.5 * 1.25).abs() < 1e-15);
        assert_eq!(q[(2, 2)], 0.5);
        assert_eq!(q[(2, 3)], 0.0);
        assert!((op.q_vector()[0] - 0.25).abs() < 1e-15);
        assert!((op.q_vector()[1] - 0.625).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_component_mean() {
        let ds = gen_auc_dataset(200, 4, 0.3, 0.1, 2).unwrap();
        let op = AucOperator::new(&ds).unwrap();
        let mut rng = substream(1, 99);
        for _ in 0..10 {
            let z: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let mut a = vec![0.0; 7];
            let mut b = vec![0.0; 7];
            op.eval_mean_closed_form(&z, &mut a);
            component_mean_into(&op, &z, &mut b);
            assert!(linalg::dist_sq(&a, &b).sqrt() <= 1e-10 * (1.0 + linalg::norm(&a)));
        }
        let mut at0 = vec![0.0; 7];
        component_mean_into(&op, &[0.0; 7], &mut at0);
        assert!(linalg::dist_sq(&at0, op.q_vector()).sqrt() < 1e-14);
    }

    #[test]
    fn transpose_consistent() {
        let ds = gen_auc_dataset(20, 3, 0.3, 0.1, 6).unwrap();
        let op = AucOperator::new(&ds).unwrap();
        let mut rng = substream(2, 99);
        for i in 0..20 {
            let u: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut ju = vec![0.0; 6];
            let mut jtv = vec![0.0; 6];
            op.apply_linear(i, &u, &mut ju);
            op.apply_linear_t(i, &v, &mut jtv);
            assert!((linalg::dot(&ju, &v) - linalg::dot(&u, &jtv)).abs() < 1e-12);
            let mut g = vec![0.0; 6];
            let mut g0 = vec![0.0; 6];
            op.eval_component(i, &u, &mut g);
            op.eval_component(i, &[0.0; 6], &mut g0);
            for k in 0..6 {
                assert!((g[k] - g0[k] - ju[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_part_psd() {
        let ds = gen_auc_dataset(300, 5, 0.1, 0.1, 3).unwrap();
        let op = AucOperator::new(&ds).unwrap();
        let q = op.q_matrix().to_nalgebra();
        let sym = (&q + q.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-8));
    }

    #[test]
    fn empty_class_rejected() {
        let x = DenseMatrix::from_rows(&[&[1.0], &[2.0]]);
        let ds = AucDataset::new(x, vec![1, 1]).unwrap();
        assert!(build_auc_problem(&ds, 1.0).is_err());
    }
}
