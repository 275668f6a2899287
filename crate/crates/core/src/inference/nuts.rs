//! No-U-turn sampler: multiplicative trajectory doubling with multinomial
//! state selection, dual-averaging step-size adaptation and windowed diagonal
//! mass-matrix estimation during warmup.

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GradientTarget;
use crate::error::Error;
use crate::params::Layout;
use crate::Result;

/// Energy error beyond which a trajectory counts as divergent.
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Half-width of the uniform jitter applied to the init point per chain.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_jitter: 0.1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws == 0 {
            return Err(Error::Domain("need at least one chain and one draw".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain(format!(
                "target_accept must be in (0,1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 14 {
            return Err(Error::Domain(format!(
                "max_tree_depth must be in 1..=14, got {}",
                self.max_tree_depth
            )));
        }
        Ok(())
    }
}

/// Posterior draws in constrained space, one row of statistics per draw.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// chains x draws x dim
    pub draws: Array3<f64>,
    /// Log density (unconstrained, including transform Jacobians).
    pub logp: Array2<f64>,
    pub divergences: Array2<bool>,
    pub tree_depths: Array2<u16>,
    /// Final adapted step size per chain.
    pub step_sizes: Vec<f64>,
    pub warmup_divergences: Vec<usize>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.shape()[0]
    }
    pub fn n_draws(&self) -> usize {
        self.draws.shape()[1]
    }
    pub fn dim(&self) -> usize {
        self.draws.shape()[2]
    }
    pub fn divergence_counts(&self) -> Vec<usize> {
        (0..self.n_chains())
            .map(|c| (0..self.n_draws()).filter(|&d| self.divergences[(c, d)]).count())
            .collect()
    }
    /// Pooled draws of one parameter across chains, draw-major.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_chains() * self.n_draws());
        for c in 0..self.n_chains() {
            for d in 0..self.n_draws() {
                out.push(self.draws[(c, d, param)]);
            }
        }
        out
    }
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
    /// Posterior mean of one parameter.
    pub fn mean(&self, param: usize) -> f64 {
        crate::math::mean(&self.pooled(param))
    }
}

/// Adapter for closure-defined targets.
pub struct FnTarget<F: FnMut(&[f64], &mut [f64]) -> f64> {
    pub dim: usize,
    pub f: F,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> GradientTarget for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn logp_and_grad(&mut self, position: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(position, grad)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(chain as u64 + 1)))
}

struct DualAverage {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    delta: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, delta: f64) -> Self {
        DualAverage {
            mu: (10.0 * eps).ln(),
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            h_bar: 0.0,
            m: 0.0,
            delta,
        }
    }

    fn update(&mut self, alpha: f64) {
        self.m += 1.0;
        let frac = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.delta - alpha);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate, shrunk toward a small diagonal.
    fn variance(&self) -> Option<Vec<f64>> {
        if self.n < 3 {
            return None;
        }
        let n = self.n as f64;
        let w = n / (n + 5.0);
        Some(
            self.m2
                .iter()
                .map(|m2| (w * m2 / (n - 1.0) + (1.0 - w) * 1e-3).max(1e-10))
                .collect(),
        )
    }

    fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Mass-matrix adaptation windows: (start, end) iteration ranges during which
/// draws feed the estimator, with the matrix updated at each `end`.
fn adaptation_windows(warmup: usize) -> (usize, usize, Vec<(usize, usize)>) {
    if warmup < 20 {
        return (warmup, 0, Vec::new());
    }
    let (init_buf, term_buf, base) = if warmup >= 150 {
        (75usize, 50usize, 25usize)
    } else {
        let init = ((warmup as f64) * 0.15).round() as usize;
        let term = ((warmup as f64) * 0.10).round() as usize;
        let base = warmup - init - term;
        (init, term, base.max(1))
    };
    let mut windows = Vec::new();
    let mut start = init_buf;
    let mut width = base;
    let last = warmup - term_buf;
    while start < last {
        let mut end = start + width;
        // absorb a remainder too small for its own doubled window
        if end + 2 * width > last {
            end = last;
        }
        windows.push((start, end.min(last)));
        start = end;
        width *= 2;
    }
    (init_buf, term_buf, windows)
}

#[derive(Clone)]
struct State {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(pi, mi)| pi * pi * mi)
        .sum::<f64>()
}

fn energy(logp: f64, p: &[f64], inv_mass: &[f64]) -> f64 {
    -logp + kinetic(p, inv_mass)
}

fn leapfrog<T: GradientTarget>(
    target: &mut T,
    state: &State,
    eps: f64,
    inv_mass: &[f64],
) -> State {
    let dim = state.q.len();
    let mut p = state.p.clone();
    for i in 0..dim {
        p[i] += 0.5 * eps * state.grad[i];
    }
    let mut q = state.q.clone();
    for i in 0..dim {
        q[i] += eps * inv_mass[i] * p[i];
    }
    let mut grad = vec![0.0; dim];
    let logp = target.logp_and_grad(&q, &mut grad);
    for i in 0..dim {
        p[i] += 0.5 * eps * grad[i];
    }
    State { q, p, grad, logp }
}

fn is_uturn(q_minus: &[f64], q_plus: &[f64], p_minus: &[f64], p_plus: &[f64], inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..q_minus.len() {
        let dq = q_plus[i] - q_minus[i];
        dot_minus += dq * inv_mass[i] * p_minus[i];
        dot_plus += dq * inv_mass[i] * p_plus[i];
    }
    dot_minus < 0.0 || dot_plus < 0.0
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Proposal candidate: position with its cached density and gradient.
#[derive(Clone)]
struct Proposal {
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Tree {
    minus: State,
    plus: State,
    proposal: Proposal,
    log_weight: f64,
    turning: bool,
    diverged: bool,
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: GradientTarget>(
    target: &mut T,
    rng: &mut ChaCha8Rng,
    depth: usize,
    from: &State,
    eps_signed: f64,
    h0: f64,
    inv_mass: &[f64],
    sum_alpha: &mut f64,
    n_alpha: &mut usize,
) -> Tree {
    if depth == 0 {
        let next = leapfrog(target, from, eps_signed, inv_mass);
        let h = energy(next.logp, &next.p, inv_mass);
        let delta = h - h0;
        let diverged = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
        let log_weight = if diverged { f64::NEG_INFINITY } else { -delta };
        *sum_alpha += if delta.is_finite() {
            (-delta).exp().min(1.0)
        } else {
            0.0
        };
        *n_alpha += 1;
        return Tree {
            proposal: Proposal {
                q: next.q.clone(),
                grad: next.grad.clone(),
                logp: next.logp,
            },
            minus: next.clone(),
            plus: next,
            log_weight,
            turning: false,
            diverged,
        };
    }

    let first = build_tree(
        target, rng, depth - 1, from, eps_signed, h0, inv_mass, sum_alpha, n_alpha,
    );
    if first.turning || first.diverged {
        return first;
    }
    let grow_from = if eps_signed > 0.0 {
        first.plus.clone()
    } else {
        first.minus.clone()
    };
    let second = build_tree(
        target, rng, depth - 1, &grow_from, eps_signed, h0, inv_mass, sum_alpha, n_alpha,
    );

    let mut tree = Tree {
        minus: if eps_signed > 0.0 {
            first.minus
        } else {
            second.minus.clone()
        },
        plus: if eps_signed > 0.0 {
            second.plus.clone()
        } else {
            first.plus
        },
        proposal: first.proposal,
        log_weight: log_add_exp(first.log_weight, second.log_weight),
        turning: second.turning,
        diverged: second.diverged,
    };
    if tree.diverged || tree.turning {
        return tree;
    }
    // multinomial swap toward the new subtree
    let accept_log = second.log_weight - tree.log_weight;
    if accept_log > 0.0 || rng.gen::<f64>().ln() < accept_log {
        tree.proposal = second.proposal;
    }
    tree.turning = is_uturn(
        &tree.minus.q,
        &tree.plus.q,
        &tree.minus.p,
        &tree.plus.p,
        inv_mass,
    );
    tree
}

struct Transition {
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    divergent: bool,
    depth: u16,
    accept_mean: f64,
}

#[allow(clippy::too_many_arguments)]
fn nuts_transition<T: GradientTarget>(
    target: &mut T,
    rng: &mut ChaCha8Rng,
    q: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
) -> Transition {
    let dim = q.len();
    let mut p = vec![0.0; dim];
    for i in 0..dim {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        p[i] = z / inv_mass[i].sqrt();
    }
    let h0 = energy(logp, &p, inv_mass);
    let start = State {
        q: q.clone(),
        p,
        grad: grad.clone(),
        logp,
    };

    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut proposal = Proposal { q, grad, logp };
    let mut log_weight = 0.0; // current point
    let mut sum_alpha = 0.0;
    let mut n_alpha = 0usize;
    let mut divergent = false;
    let mut depth_reached: u16 = 0;

    for depth in 0..max_depth {
        let dir: bool = rng.gen();
        let eps_signed = if dir { eps } else { -eps };
        let from = if dir { plus.clone() } else { minus.clone() };
        let subtree = build_tree(
            target,
            rng,
            depth,
            &from,
            eps_signed,
            h0,
            inv_mass,
            &mut sum_alpha,
            &mut n_alpha,
        );
        if subtree.diverged {
            divergent = true;
            break;
        }
        if subtree.turning {
            break;
        }
        // biased progressive sampling: favor the fresh half of the trajectory
        let accept_log = subtree.log_weight - log_weight;
        if accept_log > 0.0 || rng.gen::<f64>().ln() < accept_log {
            proposal = subtree.proposal;
        }
        if dir {
            plus = subtree.plus;
        } else {
            minus = subtree.minus;
        }
        log_weight = log_add_exp(log_weight, subtree.log_weight);
        depth_reached = depth as u16 + 1;
        if is_uturn(&minus.q, &plus.q, &minus.p, &plus.p, inv_mass) {
            break;
        }
    }

    let accept_mean = if n_alpha > 0 {
        sum_alpha / n_alpha as f64
    } else {
        0.0
    };
    Transition {
        q: proposal.q,
        grad: proposal.grad,
        logp: proposal.logp,
        divergent,
        depth: depth_reached,
        accept_mean,
    }
}

fn find_reasonable_epsilon<T: GradientTarget>(
    target: &mut T,
    rng: &mut ChaCha8Rng,
    q: &[f64],
    grad: &[f64],
    logp: f64,
    inv_mass: &[f64],
) -> f64 {
    let dim = q.len();
    let mut eps = 1.0;
    let mut p = vec![0.0; dim];
    for i in 0..dim {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        p[i] = z / inv_mass[i].sqrt();
    }
    let state = State {
        q: q.to_vec(),
        p,
        grad: grad.to_vec(),
        logp,
    };
    let h0 = energy(logp, &state.p, inv_mass);
    let ratio = |eps: f64, target: &mut T| {
        let next = leapfrog(target, &state, eps, inv_mass);
        let h = energy(next.logp, &next.p, inv_mass);
        if h.is_finite() {
            (h0 - h).exp()
        } else {
            0.0
        }
    };
    let r0 = ratio(eps, target);
    let a: f64 = if r0 > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let r = ratio(eps, target);
        if a * r.max(1e-300).ln() <= -a * std::f64::consts::LN_2 {
            break;
        }
        eps *= 2f64.powf(a);
        if !(1e-10..=1e2).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e2)
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    logp: Vec<f64>,
    divergences: Vec<bool>,
    depths: Vec<u16>,
    step_size: f64,
    warmup_divergences: usize,
}

fn run_chain<T: GradientTarget>(
    mut target: T,
    cfg: &SamplerConfig,
    init: &[f64],
    chain_idx: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = chain_rng(cfg.seed, chain_idx);

    // jittered init, retried until the density is finite there
    let mut q = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NEG_INFINITY;
    let mut ok = false;
    for _ in 0..100 {
        for i in 0..dim {
            q[i] = init[i]
                + if cfg.init_jitter > 0.0 {
                    rng.gen_range(-cfg.init_jitter..=cfg.init_jitter)
                } else {
                    0.0
                };
        }
        logp = target.logp_and_grad(&q, &mut grad);
        if logp.is_finite() {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::Sampling(format!(
            "chain {chain_idx}: no finite density near the init point after 100 jitter attempts"
        )));
    }

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_epsilon(&mut target, &mut rng, &q, &grad, logp, &inv_mass);
    let mut da = DualAverage::new(eps, cfg.target_accept);
    let (_, _, windows) = adaptation_windows(cfg.warmup);
    let mut welford = Welford::new(dim);
    let mut window_idx = 0usize;

    let total = cfg.warmup + cfg.draws;
    let mut out = ChainOutput {
        draws: Vec::with_capacity(cfg.draws),
        logp: Vec::with_capacity(cfg.draws),
        divergences: Vec::with_capacity(cfg.draws),
        depths: Vec::with_capacity(cfg.draws),
        step_size: eps,
        warmup_divergences: 0,
    };

    for iter in 0..total {
        let tr = nuts_transition(
            &mut target,
            &mut rng,
            std::mem::take(&mut q),
            std::mem::take(&mut grad),
            logp,
            eps,
            &inv_mass,
            cfg.max_tree_depth,
        );
        q = tr.q;
        grad = tr.grad;
        logp = tr.logp;

        if iter < cfg.warmup {
            if tr.divergent {
                out.warmup_divergences += 1;
            }
            da.update(tr.accept_mean);
            eps = da.current();
            if window_idx < windows.len() {
                let (start, end) = windows[window_idx];
                if iter >= start {
                    welford.add(&q);
                }
                if iter + 1 == end {
                    if let Some(var) = welford.variance() {
                        inv_mass = var;
                    }
                    welford.reset();
                    window_idx += 1;
                    // fresh step-size run against the new metric
                    eps = find_reasonable_epsilon(
                        &mut target, &mut rng, &q, &grad, logp, &inv_mass,
                    );
                    da = DualAverage::new(eps, cfg.target_accept);
                }
            }
            if iter + 1 == cfg.warmup {
                eps = da.averaged();
                out.step_size = eps;
                if out.warmup_divergences == cfg.warmup {
                    return Err(Error::Sampling(format!(
                        "chain {chain_idx}: every warmup iteration diverged (step size {eps:.3e}); \
                         the posterior geometry or init may be degenerate"
                    )));
                }
            }
        } else {
            out.draws.push(q.clone());
            out.logp.push(logp);
            out.divergences.push(tr.divergent);
            out.depths.push(tr.depth);
        }
    }
    if cfg.warmup == 0 {
        out.step_size = eps;
    }
    Ok(out)
}

/// Runs NUTS chains. `transform`, when given, maps draws to constrained space
/// and provides parameter names; otherwise draws are reported as-is with
/// positional names. Identical seed, config, data and targets give
/// bit-identical output regardless of thread scheduling.
pub fn nuts_sample<T, F>(
    make_target: F,
    cfg: &SamplerConfig,
    init: &[f64],
    transform: Option<&Layout>,
) -> Result<PosteriorDraws>
where
    T: GradientTarget + Send,
    F: Fn() -> T + Sync,
{
    cfg.validate()?;
    let dim = make_target().dim();
    if init.len() != dim {
        return Err(Error::Domain(format!(
            "init has length {} but target dimension is {dim}",
            init.len()
        )));
    }
    if let Some(layout) = transform {
        if layout.dim() != dim {
            return Err(Error::Domain(
                "layout dimension does not match target dimension".into(),
            ));
        }
    }

    // EIVTRAJ_THREADS caps chain parallelism; output is identical either way.
    let threads = std::env::var("EIVTRAJ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .min(cfg.chains);
    let mut results: Vec<Option<Result<ChainOutput>>> = (0..cfg.chains).map(|_| None).collect();
    if threads <= 1 {
        for (c, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_chain(make_target(), cfg, init, c));
        }
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for c in 0..cfg.chains {
                let make_target = &make_target;
                handles.push((
                    c,
                    scope.spawn(move || run_chain(make_target(), cfg, init, c)),
                ));
            }
            for (c, h) in handles {
                results[c] = Some(h.join().expect("chain thread panicked"));
            }
        });
    }

    let mut chains = Vec::with_capacity(cfg.chains);
    for r in results {
        chains.push(r.expect("chain slot not filled")?);
    }

    let names = match transform {
        Some(layout) => layout.names().to_vec(),
        None => (0..dim).map(|i| format!("x{i}")).collect(),
    };
    let mut draws = Array3::zeros((cfg.chains, cfg.draws, dim));
    let mut logp = Array2::zeros((cfg.chains, cfg.draws));
    let mut divergences = Array2::from_elem((cfg.chains, cfg.draws), false);
    let mut tree_depths = Array2::zeros((cfg.chains, cfg.draws));
    let mut step_sizes = Vec::with_capacity(cfg.chains);
    let mut warmup_divergences = Vec::with_capacity(cfg.chains);
    for (c, ch) in chains.iter().enumerate() {
        for d in 0..cfg.draws {
            let row = match transform {
                Some(layout) => layout.constrain(&ch.draws[d]).0,
                None => ch.draws[d].clone(),
            };
            for (i, v) in row.iter().enumerate() {
                draws[(c, d, i)] = *v;
            }
            logp[(c, d)] = ch.logp[d];
            divergences[(c, d)] = ch.divergences[d];
            tree_depths[(c, d)] = ch.depths[d];
        }
        step_sizes.push(ch.step_size);
        warmup_divergences.push(ch.warmup_divergences);
    }
    Ok(PosteriorDraws {
        names,
        draws,
        logp,
        divergences,
        tree_depths,
        step_sizes,
        warmup_divergences,
    })
}
