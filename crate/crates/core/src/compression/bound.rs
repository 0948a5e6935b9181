//! Exact check of the compression performance bound.
//!
//! A tabular process has a state reward linear in the state's observation
//! vector and a softmax-linear policy over observations. The compressed
//! policy acts on the reconstruction `psi(phi(h))` of each observation.
//! Values are computed by solving the policy-evaluation system exactly, and
//! every constant in the bound is a sup over the finite state space.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{softmax_rows, CompressionError};

/// Observations closer than this are treated as duplicates by the sups.
const DUPLICATE_TOL: f64 = 1e-12;
/// Slack allowed when comparing the two sides of the bound.
pub const HOLDS_TOL: f64 = 1e-9;
const ROW_TOL: f64 = 1e-9;

/// `states x actions` action probabilities.
pub type PolicyTable = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    /// One `S x S` row-stochastic matrix per action.
    pub transitions: Vec<DMatrix<f64>>,
    /// `S x d`; row `s` is the observation of state `s`.
    pub observations: DMatrix<f64>,
    /// Reward of state `s` is `<reward_weights, observation(s)>`.
    pub reward_weights: DVector<f64>,
    pub gamma: f64,
    /// `k x d` linear compression.
    pub compress: DMatrix<f64>,
    /// `d x k` linear reconstruction.
    pub reconstruct: DMatrix<f64>,
    /// `A x d` logits map of the policy.
    pub policy_weights: DMatrix<f64>,
}

impl TabularMdp {
    pub fn states(&self) -> usize {
        self.observations.nrows()
    }

    pub fn actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn validate(&self) -> Result<(), CompressionError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CompressionError::Discount(self.gamma));
        }
        let (s, d) = self.observations.shape();
        let k = self.compress.nrows();
        let shape_err = |what: &str| Err(CompressionError::Shape(what.into()));
        if s == 0 || self.actions() == 0 {
            return shape_err("at least one state and one action are required");
        }
        if self.reward_weights.len() != d {
            return shape_err("reward weights must match the observation width");
        }
        if self.compress.ncols() != d || self.reconstruct.shape() != (d, k) {
            return shape_err("compression must be k x d and reconstruction d x k");
        }
        if self.policy_weights.shape() != (self.actions(), d) {
            return shape_err("policy weights must be actions x observation width");
        }
        for (a, p) in self.transitions.iter().enumerate() {
            if p.shape() != (s, s) {
                return shape_err("transition matrices must be states x states");
            }
            for (state, row) in p.row_iter().enumerate() {
                if row.iter().any(|x| *x < 0.0) || (row.sum() - 1.0).abs() > ROW_TOL {
                    return Err(CompressionError::Transition { state, action: a });
                }
            }
        }
        Ok(())
    }

    pub fn rewards(&self) -> DVector<f64> {
        &self.observations * &self.reward_weights
    }

    /// `S x d` reconstructed observations, one per row.
    pub fn reconstructed(&self) -> DMatrix<f64> {
        (&self.reconstruct * &self.compress * self.observations.transpose()).transpose()
    }

    fn policy_on(&self, obs: &DMatrix<f64>) -> PolicyTable {
        softmax_rows(&(obs * self.policy_weights.transpose()))
    }

    /// Policy acting on the original observations.
    pub fn policy_full(&self) -> PolicyTable {
        self.policy_on(&self.observations)
    }

    /// Policy acting on reconstructed observations.
    pub fn policy_compressed(&self) -> PolicyTable {
        self.policy_on(&self.reconstructed())
    }

    fn state_kernel(&self, pi: &PolicyTable) -> DMatrix<f64> {
        let s = self.states();
        let mut m = DMatrix::zeros(s, s);
        for (a, p) in self.transitions.iter().enumerate() {
            for i in 0..s {
                let w = pi[(i, a)];
                for j in 0..s {
                    m[(i, j)] += w * p[(i, j)];
                }
            }
        }
        m
    }

    /// State values of `pi` from the linear evaluation system.
    pub fn state_values(&self, pi: &PolicyTable) -> Result<DVector<f64>, CompressionError> {
        self.validate()?;
        if pi.shape() != (self.states(), self.actions()) {
            return Err(CompressionError::Shape("policy must be states x actions".into()));
        }
        let s = self.states();
        let system = DMatrix::identity(s, s) - self.state_kernel(pi) * self.gamma;
        system.lu().solve(&self.rewards()).ok_or(CompressionError::Singular)
    }

    /// `Q(s, a) = r(s) + gamma * sum_t P_a(s, t) V(t)`.
    pub fn action_values(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let r = self.rewards();
        let mut q = DMatrix::zeros(self.states(), self.actions());
        for (a, p) in self.transitions.iter().enumerate() {
            q.set_column(a, &(&r + p * v * self.gamma));
        }
        q
    }
}

/// Discounted return of `pi` from a uniformly drawn start state.
pub fn exact_value(mdp: &TabularMdp, pi: &PolicyTable) -> Result<f64, CompressionError> {
    Ok(mdp.state_values(pi)?.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Direct reward sensitivity to reconstruction error.
    pub reward: f64,
    /// Compounded effect through the state distribution.
    pub shift: f64,
    /// Policy mismatch.
    pub policy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub value_full: f64,
    pub value_compressed: f64,
    /// Mean Euclidean reconstruction error over states.
    pub obs_error: f64,
    /// Mean `KL(compressed policy || full policy)` over states.
    pub policy_kl: f64,
    pub reward_lipschitz: f64,
    pub q_lipschitz: f64,
    /// Lipschitz constant of the policy in L1 over actions.
    pub policy_lipschitz: f64,
    pub q_max: f64,
    /// State pairs with coinciding observations, left out of the sups.
    pub pairs_skipped: usize,
    pub terms: BoundTerms,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .fold(0.0, |acc, x| acc + x)
        .max(0.0)
}

/// Evaluate both policies exactly and compare the gap with the bound.
pub fn bound_check(mdp: &TabularMdp) -> Result<BoundReport, CompressionError> {
    mdp.validate()?;
    let (s, a) = (mdp.states(), mdp.actions());
    let g = mdp.gamma;
    let pi_h = mdp.policy_full();
    let pi_z = mdp.policy_compressed();
    let v_h = mdp.state_values(&pi_h)?;
    let value_full = v_h.mean();
    let value_compressed = exact_value(mdp, &pi_z)?;

    let obs = &mdp.observations;
    let rec = mdp.reconstructed();
    let obs_error = (0..s).map(|i| (obs.row(i) - rec.row(i)).norm()).sum::<f64>() / s as f64;
    let row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<f64>>();
    let policy_kl = (0..s).map(|i| kl(&row(&pi_z, i), &row(&pi_h, i))).sum::<f64>() / s as f64;

    let q = mdp.action_values(&v_h);
    let mut q_lipschitz: f64 = 0.0;
    let mut policy_lipschitz: f64 = 0.0;
    let mut pairs_skipped = 0;
    for i in 0..s {
        for j in i + 1..s {
            let dist = (obs.row(i) - obs.row(j)).norm();
            if dist <= DUPLICATE_TOL {
                pairs_skipped += 1;
                continue;
            }
            for b in 0..a {
                q_lipschitz = q_lipschitz.max((q[(i, b)] - q[(j, b)]).abs() / dist);
            }
            policy_lipschitz = policy_lipschitz.max((pi_h.row(i) - pi_h.row(j)).lp_norm(1) / dist);
        }
    }
    let reward_lipschitz = mdp.reward_weights.norm();
    let q_max = mdp.rewards().amax() / (1.0 - g);

    let terms = BoundTerms {
        reward: reward_lipschitz / (1.0 - g) * obs_error,
        shift: g * q_lipschitz * policy_lipschitz / (1.0 - g).powi(2) * obs_error,
        policy: 2.0 * q_max / (1.0 - g) * (policy_kl / 2.0).sqrt(),
    };
    let lhs = (value_compressed - value_full).abs();
    let rhs = terms.reward + terms.shift + terms.policy;
    Ok(BoundReport {
        states: s,
        actions: a,
        gamma: g,
        value_full,
        value_compressed,
        obs_error,
        policy_kl,
        reward_lipschitz,
        q_lipschitz,
        policy_lipschitz,
        q_max,
        pairs_skipped,
        terms,
        lhs,
        rhs,
        holds: lhs <= rhs + HOLDS_TOL,
    })
}

/// Dimensions of a random process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub states: usize,
    pub actions: usize,
    pub obs_dim: usize,
    pub code_dim: usize,
    pub gamma: f64,
}

impl MdpSpec {
    /// Seeded dimensions: 2 to 20 states, 2 to 4 actions, observation width
    /// 3 to 6, code width below it, discount in [0.5, 0.95].
    pub fn sampled(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f5_ca1e);
        let obs_dim = rng.random_range(3..=6);
        Self {
            states: rng.random_range(2..=20),
            actions: rng.random_range(2..=4),
            obs_dim,
            code_dim: rng.random_range(1..obs_dim),
            gamma: rng.random_range(0.5..=0.95),
        }
    }
}

/// Random process of the given dimensions: Gaussian observations, reward
/// weights, compression and policy weights; reconstruction is the
/// pseudo-inverse of the compression; transition rows are normalized
/// uniform draws.
pub fn random_mdp(spec: MdpSpec, seed: u64) -> Result<TabularMdp, CompressionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (s, d, k) = (spec.states, spec.obs_dim, spec.code_dim);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| normal.sample(&mut rng));
    let observations = gauss(s, d);
    let reward_weights = gauss(d, 1).column(0).into_owned();
    let compress = gauss(k, d);
    let policy_weights = gauss(spec.actions, d);
    let reconstruct = compress
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| CompressionError::Shape(e.to_string()))?;
    let transitions = (0..spec.actions)
        .map(|_| {
            let mut p = DMatrix::from_fn(s, s, |_, _| rng.random::<f64>() + 1e-3);
            for mut row in p.row_iter_mut() {
                let t = row.sum();
                row /= t;
            }
            p
        })
        .collect();
    let mdp = TabularMdp {
        transitions,
        observations,
        reward_weights,
        gamma: spec.gamma,
        compress,
        reconstruct,
        policy_weights,
    };
    mdp.validate()?;
    Ok(mdp)
}
