//! Metropolis-Hastings and Hamiltonian Monte Carlo kernels, chain driver and
//! posterior-predictive classification.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, NetworkSpec};
use crate::rng::{stream_rng, SamplerRng};

/// Energy error above which an HMC trajectory is treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Unnormalised log-density over `R^dim`.
///
/// `log_density` may return `-inf` for states outside the support; samplers
/// reject such proposals. Implementations must be reentrant.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Gradient of `log_density`. Required by HMC.
    fn grad_log_density(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Target built from closures; handy for tests and synthetic problems.
pub struct FnTarget<F, G> {
    dim: usize,
    log_density: F,
    grad: Option<G>,
}

impl<F> FnTarget<F, fn(&[f64]) -> Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, log_density: F) -> Self {
        Self {
            dim,
            log_density,
            grad: None,
        }
    }
}

impl<F, G> FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn with_gradient(dim: usize, log_density: F, grad: G) -> Self {
        Self {
            dim,
            log_density,
            grad: Some(grad),
        }
    }
}

impl<F, G> TargetDensity for FnTarget<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(x))
    }
}

/// Proposal distribution `q(to | from)` for Metropolis-Hastings.
pub trait Proposal {
    fn propose(&self, from: &[f64], rng: &mut SamplerRng) -> Vec<f64>;

    /// `log q(to | from)`, up to a constant shared by all pairs.
    fn log_prob(&self, from: &[f64], to: &[f64]) -> f64;

    /// `q(to | from) = q(from | to)` for all pairs; the q-ratio is skipped.
    fn is_symmetric(&self) -> bool {
        false
    }
}

/// Isotropic Gaussian random walk. Symmetric, so its q-ratio is exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkProposal {
    pub step_scale: f64,
}

impl RandomWalkProposal {
    pub fn new(step_scale: f64) -> Result<Self> {
        let p = Self { step_scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step_scale must be positive, got {}",
                self.step_scale
            )));
        }
        Ok(())
    }
}

impl Proposal for RandomWalkProposal {
    fn propose(&self, from: &[f64], rng: &mut SamplerRng) -> Vec<f64> {
        from.iter()
            .map(|&x| x + self.step_scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn log_prob(&self, from: &[f64], to: &[f64]) -> f64 {
        let sq: f64 = from.iter().zip(to).map(|(a, b)| (a - b) * (a - b)).sum();
        -sq / (2.0 * self.step_scale * self.step_scale)
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Log acceptance probability of a Metropolis-Hastings move:
/// `min(0, [log pi(cand) - log pi(cur)] + [log q(cur|cand) - log q(cand|cur)])`.
pub fn mh_acceptance_log_prob(
    log_target_current: f64,
    log_target_candidate: f64,
    log_q_fwd: f64,
    log_q_rev: f64,
) -> Result<f64> {
    if !log_target_current.is_finite() {
        return Err(Error::InvalidState);
    }
    if !log_target_candidate.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let log_ratio = (log_target_candidate - log_target_current) + (log_q_rev - log_q_fwd);
    if log_ratio.is_nan() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_ratio.min(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub log_density: f64,
    pub accepted: bool,
}

/// Accepts with probability `exp(log_alpha)`.
fn accept(log_alpha: f64, rng: &mut SamplerRng) -> bool {
    if log_alpha >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_alpha
}

/// One Metropolis-Hastings step. A rejected move returns the current state
/// unchanged.
pub fn mh_step<T, P>(
    state: &[f64],
    log_target: f64,
    target: &T,
    proposal: &P,
    rng: &mut SamplerRng,
) -> Result<Transition>
where
    T: TargetDensity + ?Sized,
    P: Proposal + ?Sized,
{
    let candidate = proposal.propose(state, rng);
    let cand_lp = target.log_density(&candidate);
    let (log_q_fwd, log_q_rev) = if proposal.is_symmetric() {
        (0.0, 0.0)
    } else {
        (
            proposal.log_prob(state, &candidate),
            proposal.log_prob(&candidate, state),
        )
    };
    let log_alpha = mh_acceptance_log_prob(log_target, cand_lp, log_q_fwd, log_q_rev)?;
    if accept(log_alpha, rng) {
        Ok(Transition {
            state: candidate,
            log_density: cand_lp,
            accepted: true,
        })
    } else {
        Ok(Transition {
            state: state.to_vec(),
            log_density: log_target,
            accepted: false,
        })
    }
}

/// `U + |p|^2 / 2` with identity mass.
pub fn hamiltonian(potential: f64, momentum: &[f64]) -> f64 {
    potential + 0.5 * momentum.iter().map(|v| v * v).sum::<f64>()
}

/// Kick-drift-kick leapfrog integration of `n_steps` steps.
///
/// `grad_u` is the gradient of the potential energy (the negative
/// log-density).
pub fn leapfrog<G>(
    grad_u: G,
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    n_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut w = position.to_vec();
    let mut p = momentum.to_vec();
    if n_steps == 0 {
        return Ok((w, p));
    }
    let half = 0.5 * step_size;
    let mut g = grad_u(&w);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    for step in 1..=n_steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= half * gi;
        }
        for (wi, pi) in w.iter_mut().zip(&p) {
            *wi += step_size * pi;
        }
        g = grad_u(&w);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= half * gi;
        }
    }
    Ok((w, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
}

impl HmcConfig {
    pub fn new(step_size: f64, n_leapfrog: usize) -> Result<Self> {
        let cfg = Self {
            step_size,
            n_leapfrog,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.n_leapfrog == 0 {
            return Err(Error::InvalidConfig("n_leapfrog must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcTransition {
    pub state: Vec<f64>,
    pub log_density: f64,
    pub accepted: bool,
    /// `H(end) - H(start)`; `NaN` when the integrator broke down.
    pub delta_h: f64,
    pub divergent: bool,
}

fn grad_potential<T: TargetDensity + ?Sized>(target: &T, x: &[f64]) -> Vec<f64> {
    target
        .grad_log_density(x)
        .expect("HMC target without gradient")
        .into_iter()
        .map(|g| -g)
        .collect()
}

/// One HMC transition with a fresh standard-normal momentum.
///
/// Divergent trajectories (non-finite energy or energy error above
/// [`DIVERGENCE_THRESHOLD`]) are rejected.
pub fn hmc_step<T>(
    state: &[f64],
    log_density: f64,
    target: &T,
    cfg: &HmcConfig,
    rng: &mut SamplerRng,
) -> Result<HmcTransition>
where
    T: TargetDensity + ?Sized,
{
    if !log_density.is_finite() {
        return Err(Error::InvalidState);
    }
    if target.grad_log_density(state).is_none() {
        return Err(Error::InvalidConfig("HMC requires a target with gradients".into()));
    }
    let momentum: Vec<f64> = (0..state.len()).map(|_| rng.sample(StandardNormal)).collect();
    let h_start = hamiltonian(-log_density, &momentum);

    let reject = |delta_h: f64, divergent: bool| HmcTransition {
        state: state.to_vec(),
        log_density,
        accepted: false,
        delta_h,
        divergent,
    };

    let (w_end, p_end) = match leapfrog(
        |x| grad_potential(target, x),
        state,
        &momentum,
        cfg.step_size,
        cfg.n_leapfrog,
    ) {
        Ok(end) => end,
        Err(Error::Divergence { .. }) => return Ok(reject(f64::NAN, true)),
        Err(e) => return Err(e),
    };
    let end_lp = target.log_density(&w_end);
    let delta_h = hamiltonian(-end_lp, &p_end) - h_start;
    if !delta_h.is_finite() || delta_h > DIVERGENCE_THRESHOLD {
        return Ok(reject(delta_h, true));
    }
    if accept(-delta_h, rng) {
        Ok(HmcTransition {
            state: w_end,
            log_density: end_lp,
            accepted: true,
            delta_h,
            divergent: false,
        })
    } else {
        Ok(reject(delta_h, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Mh(RandomWalkProposal),
    Hmc(HmcConfig),
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::Mh(p) => p.validate(),
            Kernel::Hmc(c) => c.validate(),
        }
    }
}

/// Length, burn-in and thinning of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainControls {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainControls {
    pub fn new(n_iter: usize, burn_in: usize, thin: usize) -> Result<Self> {
        let c = Self {
            n_iter,
            burn_in,
            thin,
        };
        c.validate()?;
        Ok(c)
    }

    /// Default burn-in of `n_iter / 5` and no thinning.
    pub fn with_defaults(n_iter: usize) -> Result<Self> {
        Self::new(n_iter, n_iter / 5, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Retained draws of one chain plus its acceptance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub log_posts: Vec<f64>,
    pub n_proposed: usize,
    pub n_accepted: usize,
    pub n_divergent: usize,
    pub seed: u64,
    pub stream: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    /// Values of coordinate `d` across retained samples.
    pub fn coordinate(&self, d: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[d]).collect()
    }
}

/// Runs one chain on stream 0 of `seed`.
pub fn run_chain<T>(
    target: &T,
    kernel: &Kernel,
    init: &[f64],
    controls: &ChainControls,
    seed: u64,
) -> Result<Chain>
where
    T: TargetDensity + ?Sized,
{
    run_chain_on_stream(target, kernel, init, controls, seed, 0)
}

/// Runs `controls.n_iter` kernel steps from `init`, keeping every
/// `thin`-th state after the first `burn_in`.
pub fn run_chain_on_stream<T>(
    target: &T,
    kernel: &Kernel,
    init: &[f64],
    controls: &ChainControls,
    seed: u64,
    stream: u64,
) -> Result<Chain>
where
    T: TargetDensity + ?Sized,
{
    controls.validate()?;
    kernel.validate()?;
    if init.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: target.dim(),
            got: init.len(),
        });
    }
    let mut log_density = target.log_density(init);
    if !log_density.is_finite() {
        return Err(Error::InvalidConfig(
            "initial state has zero target density".into(),
        ));
    }
    if matches!(kernel, Kernel::Hmc(_)) && target.grad_log_density(init).is_none() {
        return Err(Error::InvalidConfig("HMC requires a target with gradients".into()));
    }

    let mut rng = stream_rng(seed, stream);
    let mut state = init.to_vec();
    let n_keep = controls.n_retained();
    let mut chain = Chain {
        samples: Vec::with_capacity(n_keep),
        log_posts: Vec::with_capacity(n_keep),
        n_proposed: 0,
        n_accepted: 0,
        n_divergent: 0,
        seed,
        stream,
    };

    for iter in 0..controls.n_iter {
        let accepted = match kernel {
            Kernel::Mh(proposal) => {
                let t = mh_step(&state, log_density, target, proposal, &mut rng)?;
                state = t.state;
                log_density = t.log_density;
                t.accepted
            }
            Kernel::Hmc(cfg) => {
                let t = hmc_step(&state, log_density, target, cfg, &mut rng)?;
                chain.n_divergent += t.divergent as usize;
                state = t.state;
                log_density = t.log_density;
                t.accepted
            }
        };
        chain.n_proposed += 1;
        chain.n_accepted += accepted as usize;

        if iter >= controls.burn_in && (iter - controls.burn_in + 1) % controls.thin == 0 {
            chain.samples.push(state.clone());
            chain.log_posts.push(log_density);
        }
    }
    Ok(chain)
}

/// Runs one chain per initial state concurrently. Chain `i` uses stream `i`
/// of `seed`, so the result does not depend on thread scheduling.
pub fn run_chains<T>(
    target: &T,
    kernel: &Kernel,
    inits: &[Vec<f64>],
    controls: &ChainControls,
    seed: u64,
) -> Result<Vec<Chain>>
where
    T: TargetDensity + ?Sized,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = inits
            .iter()
            .enumerate()
            .map(|(i, init)| {
                scope.spawn(move || {
                    run_chain_on_stream(target, kernel, init, controls, seed, i as u64)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
    /// Entropy of the mean predictive distribution, in nats.
    pub entropy: f64,
}

/// `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Averages class probabilities over posterior samples.
pub fn posterior_mean_probs<S: AsRef<[f64]>>(
    spec: &NetworkSpec,
    samples: &[S],
    x: &[f64],
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("posterior sample set is empty".into()));
    }
    let mut mean = vec![0.0; spec.n_classes];
    for w in samples {
        for (m, p) in mean.iter_mut().zip(forward(spec, w.as_ref(), x)?) {
            *m += p;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Posterior-predictive class distribution, its argmax and entropy.
pub fn posterior_predict<S: AsRef<[f64]>>(
    spec: &NetworkSpec,
    samples: &[S],
    x: &[f64],
) -> Result<Prediction> {
    let probabilities = posterior_mean_probs(spec, samples, x)?;
    Ok(Prediction {
        class: argmax(&probabilities),
        entropy: entropy(&probabilities),
        probabilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use std::f64::consts::LN_2;

    fn std_normal(dim: usize) -> impl TargetDensity {
        FnTarget::with_gradient(
            dim,
            |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            |x: &[f64]| x.iter().map(|v| -v).collect(),
        )
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(mh_acceptance_log_prob(-1.0, -1.0, 0.0, 0.0).unwrap(), 0.0);
        let a = mh_acceptance_log_prob(0.0, -LN_2, 0.0, 0.0).unwrap();
        assert!((a + LN_2).abs() < 1e-15);
        // target ratio ln 2, q-ratio ln 0.25
        let a = mh_acceptance_log_prob(0.0, LN_2, 0.0, 0.25f64.ln()).unwrap();
        assert!((a + 0.693147).abs() < 1e-6);
        assert!((a.exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn acceptance_edge_cases() {
        assert!(matches!(
            mh_acceptance_log_prob(f64::NEG_INFINITY, 0.0, 0.0, 0.0),
            Err(Error::InvalidState)
        ));
        assert_eq!(
            mh_acceptance_log_prob(0.0, f64::NEG_INFINITY, 0.0, 0.0).unwrap(),
            f64::NEG_INFINITY
        );
        // uphill moves under a symmetric proposal are always accepted
        assert_eq!(mh_acceptance_log_prob(-5.0, -1.0, -0.3, -0.3).unwrap(), 0.0);
    }

    #[test]
    fn vanishing_step_always_accepts() {
        let target = std_normal(3);
        let prop = RandomWalkProposal::new(1e-300).unwrap();
        let mut rng = stream_rng(1, 0);
        let x = vec![0.4, -1.2, 2.0];
        let lp = target.log_density(&x);
        for _ in 0..100 {
            let t = mh_step(&x, lp, &target, &prop, &mut rng).unwrap();
            assert!(t.accepted);
            assert_eq!(t.state, x);
        }
    }

    #[test]
    fn zero_density_candidates_are_rejected_bit_exact() {
        // support is x > 0; start near the edge with a huge step
        let target = FnTarget::new(1, |x: &[f64]| {
            if x[0] > 0.0 && x[0] < 1e-9 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        });
        let prop = RandomWalkProposal::new(10.0).unwrap();
        let mut rng = stream_rng(2, 0);
        let x = vec![5e-10];
        for _ in 0..200 {
            let t = mh_step(&x, 0.0, &target, &prop, &mut rng).unwrap();
            assert!(!t.accepted);
            assert_eq!(t.state[0].to_bits(), x[0].to_bits());
        }
    }

    #[test]
    fn hamiltonian_examples() {
        assert_eq!(hamiltonian(2.0, &[3.0, 4.0]), 14.5);
        assert_eq!(hamiltonian(1.7, &[0.0; 5]), 1.7);
        let unit = [0.0, 0.6, 0.8, 0.0];
        assert!((hamiltonian(0.0, &unit) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn leapfrog_zero_steps_is_identity() {
        let (w, p) = leapfrog(|x| x.to_vec(), &[1.0, 2.0], &[3.0, 4.0], 0.1, 0).unwrap();
        assert_eq!((w, p), (vec![1.0, 2.0], vec![3.0, 4.0]));
    }

    #[test]
    fn leapfrog_harmonic_single_step() {
        let (w, p) = leapfrog(|x| x.to_vec(), &[1.0], &[0.0], 0.1, 1).unwrap();
        assert!((w[0] - 0.995).abs() < 1e-15);
        assert!((p[0] + 0.09975).abs() < 1e-15);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let grad = |x: &[f64]| x.iter().map(|v| v.powi(3) + v).collect::<Vec<_>>();
        let w0 = [0.3, -1.1, 0.7];
        let p0 = [1.0, 0.2, -0.5];
        let (w1, p1) = leapfrog(grad, &w0, &p0, 0.05, 40).unwrap();
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (w2, p2) = leapfrog(grad, &w1, &back, 0.05, 40).unwrap();
        for i in 0..3 {
            assert!((w2[i] - w0[i]).abs() < 1e-10);
            assert!((-p2[i] - p0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn leapfrog_reports_divergence_step() {
        let grad = |x: &[f64]| {
            if x[0] > 1.5 {
                vec![f64::NAN]
            } else {
                vec![-1.0]
            }
        };
        let err = leapfrog(grad, &[0.0], &[1.0], 1.0, 10).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 2 }));
    }

    #[test]
    fn tiny_step_hmc_conserves_energy() {
        let target = std_normal(4);
        let cfg = HmcConfig::new(1e-6, 10).unwrap();
        let mut rng = stream_rng(3, 0);
        let x = vec![0.5, -0.5, 1.0, 0.0];
        let lp = target.log_density(&x);
        for _ in 0..50 {
            let t = hmc_step(&x, lp, &target, &cfg, &mut rng).unwrap();
            assert!(t.delta_h.abs() < 1e-10);
            assert!(t.accepted);
        }
    }

    #[test]
    fn hmc_step_rejects_gradientless_target() {
        let target = FnTarget::new(1, |x: &[f64]| -x[0] * x[0]);
        let cfg = HmcConfig::new(0.1, 5).unwrap();
        let mut rng = stream_rng(0, 0);
        assert!(hmc_step(&[0.0], 0.0, &target, &cfg, &mut rng).is_err());
    }

    #[test]
    fn hmc_divergence_is_a_counted_rejection() {
        // steep quartic well with a huge step: energy blows up
        let target = FnTarget::with_gradient(
            1,
            |x: &[f64]| -x[0].powi(4) * 1e3,
            |x: &[f64]| vec![-4e3 * x[0].powi(3)],
        );
        let cfg = HmcConfig::new(1.0, 20).unwrap();
        let mut rng = stream_rng(4, 0);
        let x = [1.0];
        let t = hmc_step(&x, target.log_density(&x), &target, &cfg, &mut rng).unwrap();
        assert!(t.divergent);
        assert!(!t.accepted);
        assert_eq!(t.state, x.to_vec());
    }

    #[test]
    fn retained_sample_count() {
        let target = std_normal(1);
        let kernel = Kernel::Mh(RandomWalkProposal::new(1.0).unwrap());
        let controls = ChainControls::new(1000, 200, 4).unwrap();
        let chain = run_chain(&target, &kernel, &[0.0], &controls, 9).unwrap();
        assert_eq!(chain.len(), 200);
        assert_eq!(chain.log_posts.len(), 200);
        assert_eq!(chain.n_proposed, 1000);
        assert!(chain.n_accepted <= chain.n_proposed);
    }

    #[test]
    fn chains_are_deterministic_per_seed() {
        let target = std_normal(2);
        let kernel = Kernel::Hmc(HmcConfig::new(0.2, 5).unwrap());
        let controls = ChainControls::new(300, 50, 1).unwrap();
        let a = run_chain(&target, &kernel, &[1.0, 1.0], &controls, 42).unwrap();
        let b = run_chain(&target, &kernel, &[1.0, 1.0], &controls, 42).unwrap();
        let c = run_chain(&target, &kernel, &[1.0, 1.0], &controls, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn run_chain_validates_configuration() {
        let target = std_normal(1);
        let kernel = Kernel::Mh(RandomWalkProposal { step_scale: 1.0 });
        assert!(ChainControls::new(10, 10, 1).is_err());
        assert!(ChainControls::new(10, 0, 0).is_err());
        let bad = ChainControls {
            n_iter: 5,
            burn_in: 7,
            thin: 1,
        };
        assert!(run_chain(&target, &kernel, &[0.0], &bad, 0).is_err());

        let support = FnTarget::new(1, |x: &[f64]| if x[0] > 0.0 { 0.0 } else { f64::NEG_INFINITY });
        let ok = ChainControls::with_defaults(10).unwrap();
        assert_eq!(ok.burn_in, 2);
        assert!(matches!(
            run_chain(&support, &kernel, &[-1.0], &ok, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn log_posts_match_recomputed_density() {
        let target = std_normal(3);
        let kernel = Kernel::Hmc(HmcConfig::new(0.3, 8).unwrap());
        let controls = ChainControls::new(200, 20, 3).unwrap();
        let chain = run_chain(&target, &kernel, &[0.1, 0.2, 0.3], &controls, 5).unwrap();
        for (s, lp) in chain.samples.iter().zip(&chain.log_posts) {
            assert!((target.log_density(s) - lp).abs() < 1e-10);
        }
    }

    #[test]
    fn parallel_chains_match_sequential_streams() {
        let target = std_normal(2);
        let kernel = Kernel::Mh(RandomWalkProposal::new(0.8).unwrap());
        let controls = ChainControls::new(500, 100, 2).unwrap();
        let inits = vec![vec![0.0, 0.0], vec![1.0, -1.0], vec![2.0, 2.0]];
        let chains = run_chains(&target, &kernel, &inits, &controls, 77).unwrap();
        for (i, chain) in chains.iter().enumerate() {
            let solo = run_chain_on_stream(&target, &kernel, &inits[i], &controls, 77, i as u64).unwrap();
            assert_eq!(chain, &solo);
        }
    }

    #[test]
    fn posterior_predict_examples() {
        let spec = NetworkSpec::new(1, vec![], 2, Activation::Relu).unwrap();
        // one sample: same as forward
        let w = vec![1.0, -1.0, 0.5, 0.0];
        let single = posterior_predict(&spec, &[w.clone()], &[0.3]).unwrap();
        let direct = forward(&spec, &w, &[0.3]).unwrap();
        assert_eq!(single.probabilities, direct);
        assert!((single.entropy - entropy(&direct)).abs() < 1e-15);

        // two confident, opposite samples
        let a = vec![0.0, 0.0, 800.0, 0.0];
        let b = vec![0.0, 0.0, 0.0, 800.0];
        let pred = posterior_predict(&spec, &[a, b], &[1.0]).unwrap();
        assert!((pred.probabilities[0] - 0.5).abs() < 1e-12);
        assert!((pred.entropy - LN_2).abs() < 1e-12);
        assert_eq!(pred.class, 0);

        let spec5 = NetworkSpec::new(2, vec![3], 5, Activation::Tanh).unwrap();
        let zeros = vec![vec![0.0; spec5.param_count()]; 4];
        let pred = posterior_predict(&spec5, &zeros, &[0.2, 0.1]).unwrap();
        assert!((pred.entropy - 5f64.ln()).abs() < 1e-12);

        assert!(posterior_predict::<Vec<f64>>(&spec, &[], &[0.0]).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn asymmetric_proposal_uses_q_ratio() {
        // Independence proposal with density q(x) ∝ exp(-x) on x > 0 for an
        // Exp(1) target: q-ratio cancels the target ratio exactly.
        struct ExpIndependence;
        impl Proposal for ExpIndependence {
            fn propose(&self, _from: &[f64], rng: &mut SamplerRng) -> Vec<f64> {
                let u: f64 = rng.random();
                vec![-(1.0 - u).ln()]
            }
            fn log_prob(&self, _from: &[f64], to: &[f64]) -> f64 {
                -to[0]
            }
        }
        let target = FnTarget::new(1, |x: &[f64]| if x[0] > 0.0 { -x[0] } else { f64::NEG_INFINITY });
        let mut rng = stream_rng(8, 0);
        let mut x = vec![1.0];
        let mut lp = target.log_density(&x);
        for _ in 0..500 {
            let t = mh_step(&x, lp, &target, &ExpIndependence, &mut rng).unwrap();
            assert!(t.accepted);
            x = t.state;
            lp = t.log_density;
        }
    }
}
