//! Policy evaluation as a saddle problem in `x = (θ, w)` over sampled transitions.

use std::sync::{Arc, OnceLock};

use rand::Rng;

use crate::error::{Error, Result};
use crate::inclusion::{AffineComponents, FiniteSumOperator, Forward, InclusionProblem, Resolvent};
use crate::linalg::{self, DenseMatrix};
use crate::rng::{substream, streams, SimRng};

/// Finite MDP with a fixed stochastic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    pub states: usize,
    pub actions: usize,
    /// `P[(a * S + s) * S + s']`.
    pub transition: Vec<f64>,
    /// `R[s * A + a]`.
    pub reward: Vec<f64>,
    /// `π[s * A + a]`.
    pub policy: Vec<f64>,
    pub initial: Vec<f64>,
}

const SMOOTHING: f64 = 1e-5;

fn smoothed_row(rng: &mut SimRng, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + SMOOTHING).collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    row
}

impl Mdp {
    pub fn transition_row(&self, a: usize, s: usize) -> &[f64] {
        let st = self.states;
        &self.transition[(a * st + s) * st..(a * st + s + 1) * st]
    }

    pub fn policy_row(&self, s: usize) -> &[f64] {
        &self.policy[s * self.actions..(s + 1) * self.actions]
    }

    /// `P^π(s, s') = Σ_a π(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self) -> DenseMatrix {
        let st = self.states;
        let mut m = DenseMatrix::zeros(st, st);
        for s in 0..st {
            for a in 0..self.actions {
                let w = self.policy_row(s)[a];
                for (t, p) in self.transition_row(a, s).iter().enumerate() {
                    m[(s, t)] += w * p;
                }
            }
        }
        m
    }
}

/// Transition rows `∝ U[0,1] + 1e-5`; policy and initial distribution by the same recipe; rewards `U[0,1]`.
pub fn gen_random_mdp(states: usize, actions: usize, seed: u64) -> Result<Mdp> {
    if states < 2 || actions < 1 {
        return Err(Error::invalid("need at least 2 states and 1 action"));
    }
    let mut rng = substream(seed, streams::DATA);
    let mut transition = Vec::with_capacity(actions * states * states);
    for _ in 0..actions * states {
        transition.extend(smoothed_row(&mut rng, states));
    }
    let reward = (0..states * actions).map(|_| rng.random::<f64>()).collect();
    let mut policy = Vec::with_capacity(states * actions);
    for _ in 0..states {
        policy.extend(smoothed_row(&mut rng, actions));
    }
    let initial = smoothed_row(&mut rng, states);
    Ok(Mdp {
        states,
        actions,
        transition,
        reward,
        policy,
        initial,
    })
}

/// Per-state features: `U[0,1]^{d-1}` and a trailing constant 1.
pub fn random_features(states: usize, d: usize, seed: u64) -> Result<DenseMatrix> {
    if d < 1 {
        return Err(Error::invalid("feature dimension must be >= 1"));
    }
    let mut rng = substream(seed, streams::FEATURES);
    let mut data = Vec::with_capacity(states * d);
    for _ in 0..states {
        data.extend((0..d - 1).map(|_| rng.random::<f64>()));
        data.push(1.0);
    }
    Ok(DenseMatrix::from_row_major(states, d, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub phi: Vec<f64>,
    pub phi_next: Vec<f64>,
    pub reward: f64,
}

/// Inverse-CDF draw from a probability row with one uniform variate.
pub fn categorical(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// One trajectory of `n` steps under `π`. Each step consumes two uniforms:
/// the action draw, then the next-state draw. The initial state consumes one.
pub fn sample_transitions(mdp: &Mdp, n: usize, features: &DenseMatrix, seed: u64) -> Result<Vec<Transition>> {
    if n < 1 {
        return Err(Error::invalid("need n >= 1 transitions"));
    }
    if features.rows() != mdp.states {
        return Err(Error::invalid("feature map needs one row per state"));
    }
    let mut rng = substream(seed, streams::TRAJECTORY);
    let mut s = categorical(&mdp.initial, rng.random());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = categorical(mdp.policy_row(s), rng.random());
        let next = categorical(mdp.transition_row(a, s), rng.random());
        out.push(Transition {
            phi: features.row(s).to_vec(),
            phi_next: features.row(next).to_vec(),
            reward: mdp.reward[s * mdp.actions + a],
        });
        s = next;
    }
    Ok(out)
}

/// `G_t(θ, w) = (-A_t^T w, A_t θ + C_t w - b_t)` with rank-one `A_t = φ(φ - γφ')^T`, `C_t = φφ^T`, `b_t = rφ`.
#[derive(Debug)]
pub struct PeOperator {
    d: usize,
    phi: Vec<f64>,
    psi: Vec<f64>,
    reward: Vec<f64>,
    g_mat: DenseMatrix,
    g_vec: Vec<f64>,
    avg_lipschitz: OnceLock<f64>,
}

impl PeOperator {
    pub fn new(transitions: &[Transition], d: usize, gamma: f64) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::invalid("no transitions"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma must lie in (0,1)"));
        }
        if transitions.iter().any(|t| t.phi.len() != d || t.phi_next.len() != d) {
            return Err(Error::invalid("feature dimension mismatch"));
        }
        let n = transitions.len();
        let mut phi = Vec::with_capacity(n * d);
        let mut psi = Vec::with_capacity(n * d);
        let mut reward = Vec::with_capacity(n);
        let mut a_hat = DenseMatrix::zeros(d, d);
        let mut c_hat = DenseMatrix::zeros(d, d);
        let mut b_hat = vec![0.0; d];
        let inv = 1.0 / n as f64;
        for t in transitions {
            let ps: Vec<f64> = t.phi.iter().zip(&t.phi_next).map(|(f, g)| f - gamma * g).collect();
            for r in 0..d {
                for c in 0..d {
                    a_hat[(r, c)] += inv * t.phi[r] * ps[c];
                    c_hat[(r, c)] += inv * t.phi[r] * t.phi[c];
                }
            }
            linalg::axpy(inv * t.reward, &t.phi, &mut b_hat);
            phi.extend_from_slice(&t.phi);
            psi.extend(ps);
            reward.push(t.reward);
        }
        let mut g_mat = DenseMatrix::zeros(2 * d, 2 * d);
        for r in 0..d {
            for c in 0..d {
                g_mat[(r, d + c)] = -a_hat[(c, r)];
                g_mat[(d + r, c)] = a_hat[(r, c)];
                g_mat[(d + r, d + c)] = c_hat[(r, c)];
            }
        }
        let mut g_vec = vec![0.0; 2 * d];
        for r in 0..d {
            g_vec[d + r] = -b_hat[r];
        }
        Ok(Self {
            d,
            phi,
            psi,
            reward,
            g_mat,
            g_vec,
            avg_lipschitz: OnceLock::new(),
        })
    }

    pub fn g_matrix(&self) -> &DenseMatrix {
        &self.g_mat
    }

    pub fn g_vector(&self) -> &[f64] {
        &self.g_vec
    }

    fn rows(&self, t: usize) -> (&[f64], &[f64]) {
        let d = self.d;
        (&self.phi[t * d..(t + 1) * d], &self.psi[t * d..(t + 1) * d])
    }
}

impl FiniteSumOperator for PeOperator {
    fn num_components(&self) -> usize {
        self.reward.len()
    }

    fn dim(&self) -> usize {
        2 * self.d
    }

    fn eval_component(&self, t: usize, x: &[f64], out: &mut [f64]) {
        let (phi, psi) = self.rows(t);
        let (theta, w) = x.split_at(self.d);
        let (o_theta, o_w) = out.split_at_mut(self.d);
        let phi_w = linalg::dot(phi, w);
        let psi_theta = linalg::dot(psi, theta);
        let r = self.reward[t];
        for (o, s) in o_theta.iter_mut().zip(psi) {
            *o = -s * phi_w;
        }
        let coef = psi_theta + phi_w - r;
        for (o, f) in o_w.iter_mut().zip(phi) {
            *o = f * coef;
        }
    }

    fn eval_mean_closed_form(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.g_mat.matvec_into(x, out);
        linalg::axpy(1.0, &self.g_vec, out);
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

impl AffineComponents for PeOperator {
    fn apply_linear(&self, t: usize, u: &[f64], out: &mut [f64]) {
        let (phi, psi) = self.rows(t);
        let (ut, uw) = u.split_at(self.d);
        let (ot, ow) = out.split_at_mut(self.d);
        let phi_w = linalg::dot(phi, uw);
        let psi_t = linalg::dot(psi, ut);
        ot.iter_mut().zip(psi).for_each(|(o, s)| *o = -s * phi_w);
        ow.iter_mut().zip(phi).for_each(|(o, f)| *o = f * (psi_t + phi_w));
    }

    fn apply_linear_t(&self, t: usize, u: &[f64], out: &mut [f64]) {
        let (phi, psi) = self.rows(t);
        let (ut, uw) = u.split_at(self.d);
        let (ot, ow) = out.split_at_mut(self.d);
        let phi_w = linalg::dot(phi, uw);
        let psi_t = linalg::dot(psi, ut);
        ot.iter_mut().zip(psi).for_each(|(o, s)| *o = s * phi_w);
        ow.iter_mut().zip(phi).for_each(|(o, f)| *o = f * (phi_w - psi_t));
    }
}

/// PE inclusion with the `ℓ1` soft-threshold on `θ` and `L = ||𝐆||_2`.
pub fn build_pe_problem(transitions: &[Transition], d: usize, gamma: f64, tau_reg: f64) -> Result<InclusionProblem> {
    if !(tau_reg >= 0.0) {
        return Err(Error::invalid("tau_reg must be >= 0"));
    }
    let op = PeOperator::new(transitions, d, gamma)?;
    let l = linalg::spectral_norm(op.g_matrix(), 1e-12).value;
    let resolvent = if tau_reg == 0.0 {
        Resolvent::Zero
    } else {
        Resolvent::SoftThreshold {
            start: 0,
            len: d,
            weight: tau_reg,
        }
    };
    Ok(InclusionProblem {
        name: "policy-eval".into(),
        forward: Forward::FiniteSum(Arc::new(op)),
        resolvent,
        lipschitz: l,
        weak_minty_rho: 0.0,
        known_solution: None,
    })
}
