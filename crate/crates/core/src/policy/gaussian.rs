//! Tanh-bounded Gaussian policy with a one-hidden-layer mean network.
//!
//! `μ(s) = mid + half ⊙ tanh(W₂ tanh(W₁ s + b₁) + b₂)` keeps the mean inside
//! the action box. The standard deviation is a learned state-independent
//! vector `exp(log_std)` clipped to `[σ_min, σ_max]`; where the clip binds the
//! log-density has zero slope in that coordinate.
//!
//! Parameter layout: `W₁` (hidden × state, row-major), `b₁`, `W₂`
//! (action × hidden, row-major), `b₂`, `log_std`.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{fd_hvp, Policy, WeightedLogProbFunctional};
use crate::env::Action;
use crate::rng::Rng;
use crate::{Error, ParamVector, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMlpPolicy {
    state_dim: usize,
    action_dim: usize,
    hidden: usize,
    mid: Vec<f64>,
    half: Vec<f64>,
    sigma_min: f64,
    sigma_max: f64,
    theta: ParamVector,
}

struct Forward {
    hidden: Vec<f64>,
    /// `tanh` of the output pre-activation.
    squashed: Vec<f64>,
    mean: Vec<f64>,
    sigma: Vec<f64>,
    /// Whether `log_std` is strictly inside the clip range.
    sigma_free: Vec<bool>,
}

impl GaussianMlpPolicy {
    pub const DEFAULT_HIDDEN: usize = 32;
    pub const DEFAULT_SIGMA_MIN: f64 = 1e-2;
    pub const DEFAULT_SIGMA_MAX: f64 = 1.0;
    pub const INIT_STD: f64 = 0.5;

    /// Weights uniform in `±1/√fan_in`, `log_std = ln 0.5`.
    pub fn new(state_dim: usize, low: &[f64], high: &[f64], hidden: usize, rng: &mut Rng) -> Self {
        assert_eq!(low.len(), high.len());
        let action_dim = low.len();
        let mut pol = GaussianMlpPolicy {
            state_dim,
            action_dim,
            hidden,
            mid: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            half: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
            sigma_min: Self::DEFAULT_SIGMA_MIN,
            sigma_max: Self::DEFAULT_SIGMA_MAX,
            theta: ParamVector::zeros(0),
        };
        let d = pol.layout().len;
        let mut theta = ParamVector::zeros(d);
        let l = pol.layout();
        let b1 = 1.0 / (state_dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        for i in 0..l.log_std {
            let bound = if i < l.w2 { b1 } else { b2 };
            theta[i] = rng.random_range(-bound..bound);
        }
        for i in l.log_std..d {
            theta[i] = Self::INIT_STD.ln();
        }
        pol.theta = theta;
        pol
    }

    pub fn with_sigma_bounds(mut self, sigma_min: f64, sigma_max: f64) -> Self {
        assert!(0.0 < sigma_min && sigma_min <= sigma_max);
        self.sigma_min = sigma_min;
        self.sigma_max = sigma_max;
        self
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn sigma_bounds(&self) -> (f64, f64) {
        (self.sigma_min, self.sigma_max)
    }

    fn layout(&self) -> Layout {
        let (s, h, a) = (self.state_dim, self.hidden, self.action_dim);
        let b1 = h * s;
        let w2 = b1 + h;
        let b2 = w2 + a * h;
        let log_std = b2 + a;
        Layout {
            b1,
            w2,
            b2,
            log_std,
            len: log_std + a,
        }
    }

    fn forward(&self, state: &[f64]) -> Forward {
        let l = self.layout();
        let th = self.theta.as_slice();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &th[j * self.state_dim..(j + 1) * self.state_dim];
                (row.iter().zip(state).map(|(w, x)| w * x).sum::<f64>() + th[l.b1 + j]).tanh()
            })
            .collect();
        let squashed: Vec<f64> = (0..self.action_dim)
            .map(|i| {
                let row = &th[l.w2 + i * self.hidden..l.w2 + (i + 1) * self.hidden];
                (row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + th[l.b2 + i]).tanh()
            })
            .collect();
        let mean = (0..self.action_dim)
            .map(|i| self.mid[i] + self.half[i] * squashed[i])
            .collect();
        let (lo, hi) = (self.sigma_min.ln(), self.sigma_max.ln());
        let log_std = &th[l.log_std..];
        Forward {
            hidden,
            squashed,
            mean,
            sigma: log_std.iter().map(|x| x.exp().clamp(self.sigma_min, self.sigma_max)).collect(),
            sigma_free: log_std.iter().map(|x| *x > lo && *x < hi).collect(),
        }
    }

    /// Mean action `μ(s)`.
    pub fn mean(&self, state: &[f64]) -> Vec<f64> {
        self.forward(state).mean
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.forward(&vec![0.0; self.state_dim]).sigma
    }

    fn continuous<'a>(&self, action: &'a Action) -> &'a [f64] {
        match action {
            Action::Continuous(a) if a.len() == self.action_dim => a,
            other => panic!("action {other:?} outside the Gaussian support"),
        }
    }
}

struct Layout {
    b1: usize,
    w2: usize,
    b2: usize,
    log_std: usize,
    len: usize,
}

impl Policy for GaussianMlpPolicy {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn params(&self) -> &ParamVector {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.theta
    }

    /// Draws from the unclipped Gaussian; the environment clips on execution
    /// so the stored action keeps an exact score.
    fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<Action> {
        if state.len() != self.state_dim {
            return Err(Error::ContractViolation(format!(
                "state has dimension {}, policy expects {}",
                state.len(),
                self.state_dim
            )));
        }
        let fw = self.forward(state);
        if fw.mean.iter().chain(&fw.sigma).any(|x| !x.is_finite()) {
            return Err(Error::non_finite(
                "gaussian policy output",
                format!("mean {:?}, sigma {:?}, |θ|∞ = {}", fw.mean, fw.sigma, self.theta.amax()),
            ));
        }
        Ok(Action::Continuous(
            fw.mean
                .iter()
                .zip(&fw.sigma)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        ))
    }

    fn log_prob(&self, state: &[f64], action: &Action) -> f64 {
        let a = self.continuous(action);
        let fw = self.forward(state);
        (0..self.action_dim)
            .map(|i| {
                let z = (a[i] - fw.mean[i]) / fw.sigma[i];
                -0.5 * z * z - fw.sigma[i].ln() - HALF_LN_2PI
            })
            .sum()
    }

    fn accumulate_grad_log_prob(&self, state: &[f64], action: &Action, scale: f64, out: &mut ParamVector) {
        let a = self.continuous(action);
        let fw = self.forward(state);
        let l = self.layout();
        let th = self.theta.as_slice();
        let o = out.as_mut_slice();
        let mut delta_hidden = vec![0.0; self.hidden];
        for i in 0..self.action_dim {
            let var = fw.sigma[i] * fw.sigma[i];
            let diff = a[i] - fw.mean[i];
            if fw.sigma_free[i] {
                o[l.log_std + i] += scale * (diff * diff / var - 1.0);
            }
            let dz = scale * diff / var * self.half[i] * (1.0 - fw.squashed[i] * fw.squashed[i]);
            o[l.b2 + i] += dz;
            let row = l.w2 + i * self.hidden;
            for j in 0..self.hidden {
                o[row + j] += dz * fw.hidden[j];
                delta_hidden[j] += dz * th[row + j];
            }
        }
        for j in 0..self.hidden {
            let dp = delta_hidden[j] * (1.0 - fw.hidden[j] * fw.hidden[j]);
            o[l.b1 + j] += dp;
            for (k, x) in state.iter().enumerate() {
                o[j * self.state_dim + k] += dp * x;
            }
        }
    }

    fn hvp_weighted_logprob(
        &self,
        functional: &WeightedLogProbFunctional<'_>,
        v: &ParamVector,
    ) -> Result<ParamVector> {
        if v.len() != self.dim() {
            return Err(Error::ContractViolation(format!(
                "vector dimension {} does not match policy dimension {}",
                v.len(),
                self.dim()
            )));
        }
        fd_hvp(self, functional, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{fd_gradient, fd_hessian_dense, FdSpec};
    use crate::policy::StateAction;
    use crate::rng::{stream, Rng, Stream};
    use proptest::prelude::*;

    fn policy(seed: u64) -> GaussianMlpPolicy {
        GaussianMlpPolicy::new(3, &[-1.0, -2.0], &[1.0, 0.5], 5, &mut stream(seed, Stream::Init))
    }

    fn random_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn density_at_mean_with_unit_sigma() {
        let pol = GaussianMlpPolicy::new(2, &[-1.0], &[1.0], 4, &mut stream(0, Stream::Init));
        let mut theta = pol.params().clone();
        let n = theta.len();
        theta[n - 1] = 0.0;
        let pol = pol.with_params(theta);
        let s = [0.4, -0.3];
        let m = pol.mean(&s);
        assert!((pol.log_prob(&s, &Action::Continuous(m)) + 0.918_938_533_204_672_8).abs() < 1e-12);
    }

    #[test]
    fn init_layout_and_bounds() {
        let pol = policy(1);
        assert_eq!(pol.dim(), 5 * 3 + 5 + 2 * 5 + 2 + 2);
        assert!(pol.sigma().iter().all(|s| (s - 0.5).abs() < 1e-12));
        let mut rng = stream(2, Stream::Init);
        for _ in 0..100 {
            let s = random_vec(&mut rng, 3, 50.0);
            let m = pol.mean(&s);
            assert!((-1.0..=1.0).contains(&m[0]) && (-2.0..=0.5).contains(&m[1]));
        }
    }

    #[test]
    fn sigma_is_clipped() {
        let pol = policy(1);
        let mut theta = pol.params().clone();
        let n = theta.len();
        theta[n - 2] = -50.0;
        theta[n - 1] = 50.0;
        let pol = pol.with_params(theta);
        assert_eq!(pol.sigma(), vec![1e-2, 1.0]);
        let g = pol.grad_log_prob(&[0.1, 0.2, 0.3], &Action::Continuous(vec![0.3, -0.2]));
        assert_eq!((g[n - 2], g[n - 1]), (0.0, 0.0));
        assert!(pol.log_prob(&[0.0; 3], &Action::Continuous(vec![0.0, 0.0])).is_finite());
    }

    #[test]
    fn small_sigma_concentrates_on_mean() {
        let pol = policy(3);
        let mut theta = pol.params().clone();
        let n = theta.len();
        theta[n - 2] = (1e-2f64).ln() + 1e-9;
        theta[n - 1] = (1e-2f64).ln() + 1e-9;
        let pol = pol.with_params(theta);
        let s = [0.2, 0.1, -0.5];
        let m = pol.mean(&s);
        let mut rng = stream(3, Stream::Policy);
        for _ in 0..200 {
            let Action::Continuous(a) = pol.sample_action(&s, &mut rng).unwrap() else { panic!() };
            for i in 0..2 {
                assert!((a[i] - m[i]).abs() < 3.0 * 1e-2 * 1.5);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(5, Stream::Init);
        for seed in 0..10 {
            let pol = policy(seed);
            let s = random_vec(&mut rng, 3, 1.0);
            let a = Action::Continuous(random_vec(&mut rng, 2, 1.0));
            let g = pol.grad_log_prob(&s, &a);
            let fd = fd_gradient(
                |th| Ok(pol.with_params(th.clone()).log_prob(&s, &a)),
                pol.params(),
                &FdSpec::default(),
            )
            .unwrap();
            assert!((&g - &fd).norm() <= 1e-6 * fd.norm(), "seed {seed}: {}", (&g - &fd).norm() / fd.norm());
        }
    }

    #[test]
    fn fd_hvp_matches_dense_hessian() {
        let pol = GaussianMlpPolicy::new(3, &[-1.0, -2.0], &[1.0, 0.5], 4, &mut stream(7, Stream::Init));
        let mut rng = stream(7, Stream::Diagnostics);
        let samples: Vec<StateAction> = (0..4)
            .map(|_| StateAction {
                state: random_vec(&mut rng, 3, 1.0),
                action: Action::Continuous(random_vec(&mut rng, 2, 1.0)),
            })
            .collect();
        let weights = random_vec(&mut rng, 4, 1.0);
        let f = WeightedLogProbFunctional::new(&samples, &weights).unwrap();
        let dense = fd_hessian_dense(
            |th| Ok(f.value(&pol.with_params(th.clone()))),
            pol.params(),
            &FdSpec::hessian(),
        )
        .unwrap();
        let v = ParamVector::from_vec(random_vec(&mut rng, pol.dim(), 1.0));
        let hv = pol.hvp_weighted_logprob(&f, &v).unwrap();
        let reference = &dense * &v;
        assert!((&hv - &reference).norm() <= 1e-4 * reference.norm());
        assert_eq!(pol.hvp_weighted_logprob(&f, &ParamVector::zeros(pol.dim())).unwrap().norm(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn fd_hvp_is_linear(seed in 0u64..1000, alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
            let pol = policy(seed);
            let mut rng = stream(seed, Stream::Diagnostics);
            let samples: Vec<StateAction> = (0..3)
                .map(|_| StateAction {
                    state: random_vec(&mut rng, 3, 1.0),
                    action: Action::Continuous(random_vec(&mut rng, 2, 1.0)),
                })
                .collect();
            let weights = random_vec(&mut rng, 3, 1.0);
            let f = WeightedLogProbFunctional::new(&samples, &weights).unwrap();
            let u = ParamVector::from_vec(random_vec(&mut rng, pol.dim(), 1.0));
            let v = ParamVector::from_vec(random_vec(&mut rng, pol.dim(), 1.0));
            let lhs = pol.hvp_weighted_logprob(&f, &(&u * alpha + &v * beta)).unwrap();
            let rhs = pol.hvp_weighted_logprob(&f, &u).unwrap() * alpha
                + pol.hvp_weighted_logprob(&f, &v).unwrap() * beta;
            prop_assert!((&lhs - &rhs).norm() <= 1e-4 * rhs.norm().max(1e-6));
        }
    }
}
