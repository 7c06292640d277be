//! Exact sampling of continuous-time jump paths and endpoint-conditioned
//! bridges, plus occupation local times and cycle concatenation.
//!
//! Bridges are sampled by uniformization: with `lam` bounding every exit
//! rate and `R = I + L/lam`, the jump count `M` of the dominating Poisson
//! clock has posterior `P(M = m) proportional to Poisson(lam beta; m) *
//! R^m[x][y]`, the discrete skeleton given `M = m` is the bridge of the
//! chain `R`, and the clock times are uniform order statistics.  Virtual
//! (self-loop) steps of the dominating chain are dropped from the stored
//! path.  This conditions exactly without rejection, so rare endpoints cost
//! no more than typical ones.
//!
//! All randomness flows through [`RngStream`], a ChaCha8 stream keyed by
//! `(seed, stream_id)` via splitmix64 expansion.  Identical identifiers
//! reproduce identical draws on every platform and thread count, and
//! [`RngStream::substream`] derives statistically independent child streams
//! from the identifiers alone.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::markov_core::Generator;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("endpoint {to} is unreachable from {from} at this horizon")]
    UnreachableEndpoint { from: usize, to: usize },
    #[error("piece {piece} starts at {found}, expected {expected}")]
    EndpointMismatch {
        piece: usize,
        expected: usize,
        found: usize,
    },
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic, splittable random stream (ChaCha8 core).
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut st = seed;
        let mixed_seed = splitmix64(&mut st);
        let mut st2 = stream_id ^ mixed_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut st2).to_le_bytes());
        }
        RngStream {
            seed,
            stream_id,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream derived from the identifiers only; independent of how
    /// much of this stream has been consumed.
    pub fn substream(&self, k: u64) -> RngStream {
        let mut st = self.stream_id ^ k.wrapping_mul(0xD134_2543_DE82_EF95);
        let id = splitmix64(&mut st);
        RngStream::new(self.seed, id)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is empty");
        let z = n as u64;
        let bucket = u64::MAX / z;
        let limit = bucket * z;
        loop {
            let r = self.next_u64();
            if r < limit {
                return (r / bucket) as usize;
            }
        }
    }

    /// Exponential holding time with the given positive rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        assert!(rate > 0.0, "exponential rate must be positive");
        loop {
            let t = -(1.0 - self.uniform()).ln() / rate;
            if t > 0.0 {
                return t;
            }
        }
    }

    /// Index drawn proportionally to the nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "categorical weights must have positive mass");
        let target = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            debug_assert!(w >= 0.0);
            if w > 0.0 {
                last_positive = i;
                acc += w;
                if target < acc {
                    return i;
                }
            }
        }
        last_positive
    }

    /// Uniform permutation in place (Fisher-Yates).
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// A cadlag jump path on `{0, .., n_states - 1}` over `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpPath {
    n_states: usize,
    start: usize,
    horizon: f64,
    jump_times: Vec<f64>,
    jump_targets: Vec<usize>,
}

impl JumpPath {
    pub fn new(
        n_states: usize,
        start: usize,
        horizon: f64,
        jump_times: Vec<f64>,
        jump_targets: Vec<usize>,
    ) -> Self {
        assert!(start < n_states, "start state out of range");
        assert!(horizon > 0.0, "horizon must be positive");
        assert_eq!(jump_times.len(), jump_targets.len());
        let mut prev_t = 0.0;
        let mut prev_state = start;
        for (&t, &s) in jump_times.iter().zip(&jump_targets) {
            assert!(
                t > prev_t && t < horizon,
                "jump times must be strictly increasing inside (0, horizon)"
            );
            assert!(s < n_states, "jump target out of range");
            assert_ne!(s, prev_state, "consecutive states must differ");
            prev_t = t;
            prev_state = s;
        }
        JumpPath {
            n_states,
            start,
            horizon,
            jump_times,
            jump_targets,
        }
    }

    pub fn constant(n_states: usize, state: usize, horizon: f64) -> Self {
        Self::new(n_states, state, horizon, Vec::new(), Vec::new())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn jump_targets(&self) -> &[usize] {
        &self.jump_targets
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    pub fn terminal(&self) -> usize {
        *self.jump_targets.last().unwrap_or(&self.start)
    }

    /// Right-continuous evaluation: the state after the last jump at or
    /// before `t`.
    pub fn state_at(&self, t: f64) -> usize {
        assert!(
            (0.0..=self.horizon).contains(&t),
            "time outside [0, horizon]"
        );
        let k = self.jump_times.partition_point(|&s| s <= t);
        if k == 0 {
            self.start
        } else {
            self.jump_targets[k - 1]
        }
    }
}

/// Normalised occupation local time: fraction of the horizon spent in each
/// state; entries sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTime {
    weights: Vec<f64>,
}

impl LocalTime {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// `sum_x f(x) weights[x]`.
    pub fn pair_with(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.weights.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

pub fn occupation_local_time(path: &JumpPath) -> LocalTime {
    let mut weights = vec![0.0; path.n_states()];
    let mut state = path.start();
    let mut prev = 0.0;
    for (&t, &s) in path.jump_times().iter().zip(path.jump_targets()) {
        weights[state] += (t - prev) / path.horizon();
        state = s;
        prev = t;
    }
    weights[state] += (path.horizon() - prev) / path.horizon();
    LocalTime { weights }
}

/// Unconditioned CTMC path started at `x` over `[0, beta]`.
pub fn sample_path(g: &Generator, x: usize, beta: f64, rng: &mut RngStream) -> JumpPath {
    assert!(beta > 0.0, "horizon must be positive");
    assert!(x < g.n(), "start state out of range");
    let l = g.rate_matrix();
    let mut times = Vec::new();
    let mut targets = Vec::new();
    let mut state = x;
    let mut t = 0.0;
    loop {
        let rate = -l[(state, state)];
        if rate <= 0.0 {
            break;
        }
        t += rng.exponential(rate);
        if t >= beta {
            break;
        }
        let weights: Vec<f64> = (0..g.n())
            .map(|y| {
                if y == state {
                    0.0
                } else {
                    l[(state, y)].max(0.0)
                }
            })
            .collect();
        let next = rng.categorical(&weights);
        times.push(t);
        targets.push(next);
        state = next;
    }
    JumpPath::new(g.n(), x, beta, times, targets)
}

/// Precomputed uniformization data for bridges of one generator at one
/// horizon.  Reuse this across many draws; [`sample_bridge`] wraps it for
/// one-shot use.
pub struct BridgeSampler {
    n: usize,
    beta: f64,
    r_pows: Vec<DMatrix<f64>>,
    log_pois: Vec<f64>,
}

impl BridgeSampler {
    /// Poisson truncation level: smallest M with tail mass below 1e-12; the
    /// retained weights are renormalized by the sampling itself.
    pub fn new(g: &Generator, beta: f64) -> Self {
        assert!(beta > 0.0, "horizon must be positive");
        let n = g.n();
        let l = g.rate_matrix();
        let lam = (0..n).map(|z| -l[(z, z)]).fold(0.0f64, f64::max);
        if lam <= 0.0 {
            // Frozen chain: zero jumps with probability one.
            return BridgeSampler {
                n,
                beta,
                r_pows: vec![DMatrix::identity(n, n)],
                log_pois: vec![0.0],
            };
        }
        let mu = lam * beta;
        let mut log_pois = Vec::new();
        let mut log_pmf = -mu;
        let mut cum = log_pmf.exp();
        let mut m = 0usize;
        log_pois.push(log_pmf);
        while 1.0 - cum > 1e-12 {
            m += 1;
            log_pmf += mu.ln() - (m as f64).ln();
            log_pois.push(log_pmf);
            cum += log_pmf.exp();
            assert!(m < 100_000, "Poisson truncation failed to converge");
        }
        let r = DMatrix::identity(n, n) + l / lam;
        let mut r_pows = vec![DMatrix::identity(n, n)];
        for k in 1..=m {
            let next = &r_pows[k - 1] * &r;
            r_pows.push(next);
        }
        BridgeSampler {
            n,
            beta,
            r_pows,
            log_pois,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.beta
    }

    /// Endpoint mass `p_beta(x, y)` as seen by the truncated expansion.
    pub fn endpoint_mass(&self, x: usize, y: usize) -> f64 {
        self.log_pois
            .iter()
            .enumerate()
            .map(|(m, &lp)| lp.exp() * self.r_pows[m][(x, y)])
            .sum()
    }

    pub fn sample(&self, x: usize, y: usize, rng: &mut RngStream) -> Result<JumpPath, PathError> {
        assert!(x < self.n && y < self.n, "endpoint out of range");
        // Jump-count posterior in log space, shifted by its maximum.
        let m_max = self.log_pois.len() - 1;
        let mut log_w = vec![f64::NEG_INFINITY; m_max + 1];
        let mut shift = f64::NEG_INFINITY;
        for m in 0..=m_max {
            let r = self.r_pows[m][(x, y)];
            if r > 0.0 {
                log_w[m] = self.log_pois[m] + r.ln();
                shift = shift.max(log_w[m]);
            }
        }
        if shift == f64::NEG_INFINITY {
            return Err(PathError::UnreachableEndpoint { from: x, to: y });
        }
        let weights: Vec<f64> = log_w.iter().map(|&lw| (lw - shift).exp()).collect();
        let m = rng.categorical(&weights);

        // Backward-filtered forward sampling of the discrete skeleton.
        let mut skeleton = Vec::with_capacity(m + 1);
        skeleton.push(x);
        for k in 1..=m {
            let r = &self.r_pows[1];
            let prev = skeleton[k - 1];
            let w: Vec<f64> = (0..self.n)
                .map(|z| r[(prev, z)] * self.r_pows[m - k][(z, y)])
                .collect();
            skeleton.push(rng.categorical(&w));
        }
        debug_assert_eq!(*skeleton.last().unwrap(), y);

        // Clock times: uniform order statistics; redraw on the
        // probability-zero event of a tie.
        let times = loop {
            let mut ts: Vec<f64> = (0..m).map(|_| rng.uniform() * self.beta).collect();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let distinct = ts.windows(2).all(|w| w[0] < w[1])
                && ts.first().map_or(true, |&t| t > 0.0)
                && ts.last().map_or(true, |&t| t < self.beta);
            if distinct {
                break ts;
            }
        };

        let mut jump_times = Vec::new();
        let mut jump_targets = Vec::new();
        for k in 1..=m {
            if skeleton[k] != skeleton[k - 1] {
                jump_times.push(times[k - 1]);
                jump_targets.push(skeleton[k]);
            }
        }
        Ok(JumpPath::new(
            self.n,
            x,
            self.beta,
            jump_times,
            jump_targets,
        ))
    }
}

/// Path distributed as the chain conditioned on `xi_beta = y`.
pub fn sample_bridge(
    g: &Generator,
    x: usize,
    y: usize,
    beta: f64,
    rng: &mut RngStream,
) -> Result<JumpPath, PathError> {
    BridgeSampler::new(g, beta).sample(x, y, rng)
}

/// Concatenates bridges whose endpoints chain into a cycle: the result has
/// horizon `k * beta` and visits the junction states at times `beta`,
/// `2 beta`, and so on.  Its local time is the mean of the pieces' local
/// times.
pub fn concatenate_cycle(paths: &[JumpPath]) -> Result<JumpPath, PathError> {
    assert!(!paths.is_empty(), "cannot concatenate zero paths");
    let n = paths[0].n_states();
    let beta = paths[0].horizon();
    for p in paths {
        assert_eq!(p.n_states(), n, "pieces must share one state space");
        assert_eq!(p.horizon(), beta, "pieces must share one horizon");
    }
    for (i, pair) in paths.windows(2).enumerate() {
        if pair[0].terminal() != pair[1].start() {
            return Err(PathError::EndpointMismatch {
                piece: i + 1,
                expected: pair[0].terminal(),
                found: pair[1].start(),
            });
        }
    }
    let last = paths.last().unwrap();
    if last.terminal() != paths[0].start() {
        return Err(PathError::EndpointMismatch {
            piece: 0,
            expected: last.terminal(),
            found: paths[0].start(),
        });
    }
    let mut times = Vec::new();
    let mut targets = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let offset = i as f64 * beta;
        for (&t, &s) in p.jump_times().iter().zip(p.jump_targets()) {
            times.push(offset + t);
            targets.push(s);
        }
    }
    Ok(JumpPath::new(
        n,
        paths[0].start(),
        beta * paths.len() as f64,
        times,
        targets,
    ))
}
