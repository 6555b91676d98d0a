//! Exact-oracle checks of the mixed target on random tabular MDPs.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::nn::argmax;

/// Finite MDP with dense transition table `p[(s * A + a) * S + s']`.
/// Entering a terminal state ends the episode, so its continuation value
/// is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    /// Dirichlet(1) transition rows and uniform(-1, 1) rewards.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Self {
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let row: Vec<f64> = (0..n_states).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = row.iter().sum();
            p.extend(row.iter().map(|x| x / total));
        }
        let reward = Uniform::new(-1.0, 1.0).expect("valid range");
        let r = (0..n_states * n_actions).map(|_| reward.sample(rng)).collect();
        Self {
            n_states,
            n_actions,
            p,
            r,
            gamma,
            terminal: vec![false; n_states],
        }
    }

    /// The default harness MDP: 20 states, 4 actions, discount 0.9.
    pub fn random_default(seed: u64) -> Self {
        Self::random(20, 4, 0.9, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn is_deterministic(&self, s: usize, a: usize) -> bool {
        self.row(s, a).iter().filter(|&&x| x > 0.0).count() <= 1
    }

    /// Inverse-CDF sampler for each (s, a).
    pub fn sampler(&self) -> SuccessorSampler {
        let cdf = self
            .p
            .chunks(self.n_states)
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect()
            })
            .collect();
        SuccessorSampler {
            cdf,
            n_actions: self.n_actions,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuccessorSampler {
    cdf: Vec<Vec<f64>>,
    n_actions: usize,
}

impl SuccessorSampler {
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let row = &self.cdf[s * self.n_actions + a];
        let u: f64 = rng.random::<f64>() * row[row.len() - 1];
        row.partition_point(|&c| c <= u).min(row.len() - 1)
    }
}

/// Optimal action values and state values.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// `q[s][a]`
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl Solution {
    /// Continuation value of landing in `s`.
    pub fn cont(&self, mdp: &TabularMdp, s: usize) -> f64 {
        if mdp.terminal[s] {
            0.0
        } else {
            self.v[s]
        }
    }
}

/// Iterates the Bellman optimality operator until the sup-norm change is
/// below `tol`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Solution {
    assert!(mdp.gamma < 1.0, "value iteration needs gamma < 1");
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![0.0; na]; ns];
    loop {
        let cont: Vec<f64> = (0..ns).map(|s| if mdp.terminal[s] { 0.0 } else { v[s] }).collect();
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.row(s, a).iter().zip(&cont).map(|(p, c)| p * c).sum();
                q[s][a] = mdp.reward(s, a) + mdp.gamma * ev;
            }
        }
        for s in 0..ns {
            let nv = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((nv - v[s]).abs());
            v[s] = nv;
        }
        if delta < tol {
            return Solution { q, v };
        }
    }
}

/// The per-sample bootstrap terms for one (s, a): the replayed successor's
/// value and the value of the best of one independent successor draw per
/// action.
fn draw_terms<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    sol: &Solution,
    sampler: &SuccessorSampler,
    s: usize,
    a: usize,
    rng: &mut R,
) -> (f64, f64) {
    let next = sampler.sample(s, a, rng);
    let cands: Vec<f64> = (0..mdp.n_actions)
        .map(|b| sol.cont(mdp, sampler.sample(s, b, rng)))
        .collect();
    let best = argmax(cands.iter().copied()).expect("actions");
    (sol.cont(mdp, next), cands[best])
}

#[derive(Debug, Clone, Serialize)]
pub struct PairVariance {
    pub state: usize,
    pub action: usize,
    pub var_original: f64,
    pub var_modified: f64,
    /// `2 alpha (1 - alpha) Cov(V(s_hat), V(s'))`
    pub covariance_term: f64,
    pub bound: f64,
    /// Standard error of `var_modified - bound`.
    pub std_error: f64,
    pub degenerate: bool,
}

impl PairVariance {
    pub fn holds(&self) -> bool {
        self.var_modified < self.bound
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub alpha: f64,
    pub pairs: Vec<PairVariance>,
}

impl VarianceReport {
    /// Fraction of non-degenerate pairs where the strict bound holds.
    pub fn pass_rate(&self) -> f64 {
        let live: Vec<_> = self.pairs.iter().filter(|p| !p.degenerate).collect();
        if live.is_empty() {
            return 1.0;
        }
        live.iter().filter(|p| p.holds()).count() as f64 / live.len() as f64
    }

    /// Fraction of non-degenerate pairs within three standard errors of
    /// the bound or below it.
    pub fn pass_rate_with_margin(&self) -> f64 {
        let live: Vec<_> = self.pairs.iter().filter(|p| !p.degenerate).collect();
        if live.is_empty() {
            return 1.0;
        }
        live.iter()
            .filter(|p| p.var_modified < p.bound + 3.0 * p.std_error)
            .count() as f64
            / live.len() as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance of the bootstrap term with and without mixing, for
/// every (s, a), from `n_samples` draws each.
pub fn variance_experiment<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    sol: &Solution,
    alpha: f64,
    n_samples: usize,
    rng: &mut R,
) -> VarianceReport {
    assert!(n_samples >= 2);
    let sampler = mdp.sampler();
    let c = (1.0 - alpha).powi(2) + alpha * alpha;
    let mut pairs = Vec::new();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let (orig, hat): (Vec<f64>, Vec<f64>) =
                (0..n_samples).map(|_| draw_terms(mdp, sol, &sampler, s, a, rng)).unzip();
            let modi: Vec<f64> = orig
                .iter()
                .zip(&hat)
                .map(|(o, h)| (1.0 - alpha) * h + alpha * o)
                .collect();
            let (mo, mh, mm) = (mean(&orig), mean(&hat), mean(&modi));
            let n = n_samples as f64;
            let var_o = orig.iter().map(|x| (x - mo).powi(2)).sum::<f64>() / n;
            let var_m = modi.iter().map(|x| (x - mm).powi(2)).sum::<f64>() / n;
            let cov = orig.iter().zip(&hat).map(|(o, h)| (o - mo) * (h - mh)).sum::<f64>() / n;
            let influence: Vec<f64> = orig
                .iter()
                .zip(&modi)
                .map(|(o, m)| (m - mm).powi(2) - c * (o - mo).powi(2))
                .collect();
            let mi = mean(&influence);
            let sd = (influence.iter().map(|x| (x - mi).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            pairs.push(PairVariance {
                state: s,
                action: a,
                var_original: var_o,
                var_modified: var_m,
                covariance_term: 2.0 * alpha * (1.0 - alpha) * cov,
                bound: c * var_o,
                std_error: sd / n.sqrt(),
                degenerate: mdp.is_deterministic(s, a) || var_o == 0.0,
            });
        }
    }
    VarianceReport { alpha, pairs }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairBias {
    pub state: usize,
    pub action: usize,
    pub bias_original: f64,
    pub bias_modified: f64,
    /// Standard error of `bias_modified - bias_original`.
    pub std_error: f64,
}

impl PairBias {
    pub fn difference(&self) -> f64 {
        self.bias_modified - self.bias_original
    }

    pub fn within(&self, k: f64) -> bool {
        self.difference().abs() < k * self.std_error || self.difference() == 0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    pub alpha: f64,
    pub pairs: Vec<PairBias>,
}

impl BiasReport {
    pub fn max_abs_difference(&self) -> f64 {
        self.pairs.iter().map(|p| p.difference().abs()).fold(0.0, f64::max)
    }

    pub fn all_within(&self, k: f64) -> bool {
        self.pairs.iter().all(|p| p.within(k))
    }
}

/// `E[y] - y*` for the plain and mixed targets with `Q' = Q*`, per (s, a).
pub fn bias_experiment<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    sol: &Solution,
    alpha: f64,
    n_samples: usize,
    rng: &mut R,
) -> BiasReport {
    assert!(n_samples >= 2);
    let sampler = mdp.sampler();
    let g = mdp.gamma;
    let mut pairs = Vec::new();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let r = mdp.reward(s, a);
            let y_star = sol.q[s][a];
            let mut y_o = Vec::with_capacity(n_samples);
            let mut y_m = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let (o, h) = draw_terms(mdp, sol, &sampler, s, a, rng);
                y_o.push(r + g * o);
                y_m.push(r + g * ((1.0 - alpha) * h + alpha * o));
            }
            let d: Vec<f64> = y_m.iter().zip(&y_o).map(|(m, o)| m - o).collect();
            let md = mean(&d);
            let n = n_samples as f64;
            let sd = (d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            pairs.push(PairBias {
                state: s,
                action: a,
                bias_original: mean(&y_o) - y_star,
                bias_modified: mean(&y_m) - y_star,
                std_error: sd / n.sqrt(),
            });
        }
    }
    BiasReport { alpha, pairs }
}

/// With `V` defined as the row maximum of `Q`, the value-based and
/// action-value-based bootstrap targets coincide for every transition.
pub fn value_and_q_targets_agree(mdp: &TabularMdp, q: &[Vec<f64>]) -> bool {
    let v: Vec<f64> = q
        .iter()
        .map(|row| row[argmax(row.iter().copied()).expect("actions")])
        .collect();
    (0..mdp.n_states).all(|s| {
        (0..mdp.n_actions).all(|a| {
            (0..mdp.n_states).all(|s2| {
                let r = mdp.reward(s, a);
                let y_v = r + mdp.gamma * v[s2];
                let y_q = r + mdp.gamma * q[s2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                y_v == y_q
            })
        })
    })
}

/// Summary of the full harness over several seeded MDPs.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub seeds: Vec<u64>,
    pub alphas: Vec<f64>,
    pub n_samples: usize,
    /// Per alpha: fraction of (s, a) pairs over all MDPs where the strict
    /// variance bound holds.
    pub variance_pass_rate: Vec<f64>,
    pub variance_pass_rate_with_margin: Vec<f64>,
    /// Mean covariance term per alpha.
    pub mean_covariance_term: Vec<f64>,
    /// Per alpha: fraction of pairs whose bias difference is within three
    /// standard errors.
    pub bias_within_rate: Vec<f64>,
    pub max_bias_difference: Vec<f64>,
    pub min_bias_z: Vec<f64>,
    pub identity_holds: bool,
}

impl TheoryReport {
    pub fn variance_ok(&self) -> bool {
        self.variance_pass_rate.iter().all(|&r| r >= 0.95)
    }

    pub fn bias_ok(&self) -> bool {
        self.bias_within_rate.iter().all(|&r| r == 1.0)
    }
}

pub const DEFAULT_ALPHAS: [f64; 3] = [0.25, 0.5, 0.75];

pub fn verify_theory(seeds: &[u64], alphas: &[f64], n_samples: usize) -> TheoryReport {
    let mut var_pass = vec![(0usize, 0usize); alphas.len()];
    let mut var_margin = vec![0usize; alphas.len()];
    let mut cov = vec![0.0; alphas.len()];
    let mut bias_in = vec![(0usize, 0usize); alphas.len()];
    let mut bias_max = vec![0.0f64; alphas.len()];
    let mut bias_z = vec![f64::INFINITY; alphas.len()];
    let mut identity = true;
    for &seed in seeds {
        let mdp = TabularMdp::random_default(seed);
        let sol = value_iteration(&mdp, 1e-12);
        identity &= value_and_q_targets_agree(&mdp, &sol.q);
        for (i, &alpha) in alphas.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + i as u64);
            let vr = variance_experiment(&mdp, &sol, alpha, n_samples, &mut rng);
            for p in vr.pairs.iter().filter(|p| !p.degenerate) {
                var_pass[i].1 += 1;
                if p.holds() {
                    var_pass[i].0 += 1;
                }
                if p.var_modified < p.bound + 3.0 * p.std_error {
                    var_margin[i] += 1;
                }
                cov[i] += p.covariance_term;
            }
            let br = bias_experiment(&mdp, &sol, alpha, n_samples, &mut rng);
            for p in &br.pairs {
                bias_in[i].1 += 1;
                if p.within(3.0) {
                    bias_in[i].0 += 1;
                }
                if p.std_error > 0.0 {
                    bias_z[i] = bias_z[i].min(p.difference().abs() / p.std_error);
                }
            }
            bias_max[i] = bias_max[i].max(br.max_abs_difference());
        }
    }
    let rate = |(k, n): (usize, usize)| if n == 0 { 1.0 } else { k as f64 / n as f64 };
    TheoryReport {
        seeds: seeds.to_vec(),
        alphas: alphas.to_vec(),
        n_samples,
        variance_pass_rate: var_pass.iter().map(|&x| rate(x)).collect(),
        variance_pass_rate_with_margin: var_margin
            .iter()
            .zip(&var_pass)
            .map(|(&m, &(_, n))| rate((m, n)))
            .collect(),
        mean_covariance_term: cov
            .iter()
            .zip(&var_pass)
            .map(|(&c, &(_, n))| if n == 0 { 0.0 } else { c / n as f64 })
            .collect(),
        bias_within_rate: bias_in.iter().map(|&x| rate(x)).collect(),
        max_bias_difference: bias_max,
        min_bias_z: bias_z,
        identity_holds: identity,
    }
}
