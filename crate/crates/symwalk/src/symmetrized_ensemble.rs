//! Symmetrised ensembles of bridges: a uniform permutation pairs the
//! endpoints of independent walks, so path `i` runs from `x_i` to
//! `x_{sigma(i)}` over one common horizon.  The module samples these
//! ensembles, extracts the standard observables (mean path, mean occupation
//! measure, empirical path functional), and evaluates their exponential
//! moments exactly for affine potentials through the cycle-type recursion
//!
//! `S_N = (1/N) sum_{k=1}^N Tr(A^k) S_{N-k}`,
//!
//! the complete homogeneous symmetric function of the kernel `A` that
//! collapses the `N!`-term permutation sum into `O(N^2)` work.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::functional::ScalarFn;
use crate::markov_core::{feynman_kac_kernel, transition_kernel, Generator};
use crate::pair_measure::ReferenceMeasure;
use crate::path_sampler::{occupation_local_time, BridgeSampler, JumpPath, PathError, RngStream};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("functional is not affine in the observable, exact factorization unavailable")]
    NonLinearFunctional,
    #[error("effective sample size {ess:.2} below 10, importance weights degenerate")]
    DegenerateWeights { ess: f64 },
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Ensemble description: `n_particles` walks of the given generator over
/// horizon `beta`, initial points drawn from `init`, optionally reweighted
/// by a positive endpoint factor `weight[x][y]` per particle.
pub struct EnsembleSpec {
    generator: Generator,
    beta: f64,
    n_particles: usize,
    init: ReferenceMeasure,
    weight: Option<DMatrix<f64>>,
}

impl EnsembleSpec {
    pub fn new(
        generator: Generator,
        beta: f64,
        n_particles: usize,
        init: ReferenceMeasure,
    ) -> Self {
        assert!(beta > 0.0, "horizon must be positive");
        assert!(n_particles >= 1, "need at least one particle");
        assert_eq!(
            init.len(),
            generator.n(),
            "initial measure dimension mismatch"
        );
        assert!(init.weights().iter().sum::<f64>() > 0.0);
        EnsembleSpec {
            generator,
            beta,
            n_particles,
            init,
            weight: None,
        }
    }

    pub fn with_weight(mut self, weight: DMatrix<f64>) -> Self {
        assert_eq!(weight.nrows(), self.generator.n());
        assert_eq!(weight.ncols(), self.generator.n());
        assert!(
            weight.iter().all(|&w| w > 0.0),
            "endpoint weight must be strictly positive"
        );
        self.weight = Some(weight);
        self
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn init(&self) -> &ReferenceMeasure {
        &self.init
    }

    pub fn weight(&self) -> Option<&DMatrix<f64>> {
        self.weight.as_ref()
    }
}

/// One draw of the ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleSample {
    permutation: Vec<usize>,
    cycle_type: Vec<usize>,
    initial_points: Vec<usize>,
    paths: Vec<JumpPath>,
    importance_weight: f64,
    log_importance_weight: f64,
}

fn cycle_type_of(perm: &[usize]) -> Vec<usize> {
    let n = perm.len();
    let mut counts = vec![0usize; n];
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            len += 1;
            i = perm[i];
        }
        counts[len - 1] += 1;
    }
    counts
}

impl EnsembleSample {
    pub fn n_particles(&self) -> usize {
        self.paths.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Entry `k - 1` counts the cycles of length `k`; the weighted total
    /// `sum_k k * counts[k-1]` is the particle number.
    pub fn cycle_type(&self) -> &[usize] {
        &self.cycle_type
    }

    /// Cycles of the pairing permutation; concatenating the paths along a
    /// cycle closes into a long bridge.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let n = self.permutation.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                cycle.push(i);
                i = self.permutation[i];
            }
            out.push(cycle);
        }
        out
    }

    pub fn initial_points(&self) -> &[usize] {
        &self.initial_points
    }

    pub fn paths(&self) -> &[JumpPath] {
        &self.paths
    }

    pub fn importance_weight(&self) -> f64 {
        self.importance_weight
    }

    pub fn log_importance_weight(&self) -> f64 {
        self.log_importance_weight
    }
}

/// Reusable sampler: the bridge tables are built once per spec.
pub struct EnsembleSampler<'a> {
    spec: &'a EnsembleSpec,
    bridge: BridgeSampler,
}

impl<'a> EnsembleSampler<'a> {
    pub fn new(spec: &'a EnsembleSpec) -> Self {
        EnsembleSampler {
            spec,
            bridge: BridgeSampler::new(&spec.generator, spec.beta),
        }
    }

    /// Draw order is fixed (permutation, then initial points, then bridges
    /// in particle order) so identical streams reproduce identical samples.
    pub fn sample(&self, rng: &mut RngStream) -> Result<EnsembleSample, EnsembleError> {
        let n = self.spec.n_particles;
        let mut permutation: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut permutation);
        let initial_points: Vec<usize> = (0..n)
            .map(|_| rng.categorical(self.spec.init.weights()))
            .collect();
        let mut paths = Vec::with_capacity(n);
        let mut log_w = 0.0;
        for i in 0..n {
            let (x, y) = (initial_points[i], initial_points[permutation[i]]);
            paths.push(self.bridge.sample(x, y, rng)?);
            if let Some(g) = &self.spec.weight {
                log_w += g[(x, y)].ln();
            }
        }
        let cycle_type = cycle_type_of(&permutation);
        debug_assert_eq!(
            cycle_type
                .iter()
                .enumerate()
                .map(|(i, c)| (i + 1) * c)
                .sum::<usize>(),
            n
        );
        Ok(EnsembleSample {
            permutation,
            cycle_type,
            initial_points,
            paths,
            importance_weight: log_w.exp(),
            log_importance_weight: log_w,
        })
    }
}

pub fn sample_ensemble(
    spec: &EnsembleSpec,
    rng: &mut RngStream,
) -> Result<EnsembleSample, EnsembleError> {
    EnsembleSampler::new(spec).sample(rng)
}

/// Scalar mean path on a left-endpoint grid of `[0, horizon]`; grid values
/// are exact averages of the particle observables, and integrals are
/// Riemann sums with weight `horizon / len`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanPath {
    horizon: f64,
    values: Vec<f64>,
}

impl MeanPath {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> Vec<f64> {
        let t = self.values.len() as f64;
        (0..self.values.len())
            .map(|j| j as f64 * self.horizon / t)
            .collect()
    }

    /// `int_0^horizon f(path(s)) ds` by the grid Riemann sum.
    pub fn integral_of<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let w = self.horizon / self.values.len() as f64;
        self.values.iter().map(|&v| f(v) * w).sum()
    }

    /// `int_0^horizon path(s) other(s) ds` by the grid Riemann sum.
    pub fn pair_with(&self, other: &MeanPath) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        assert_eq!(self.horizon, other.horizon);
        let w = self.horizon / self.values.len() as f64;
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b * w)
            .sum()
    }
}

/// Mean of the normalised occupation local times; a probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationMeasure {
    weights: Vec<f64>,
}

impl OccupationMeasure {
    pub fn new(weights: Vec<f64>) -> Self {
        assert!(weights.iter().all(|&w| w >= 0.0));
        let total: f64 = weights.iter().sum();
        assert!(
            (total - 1.0).abs() <= 1e-12,
            "occupation mass {total} is not 1"
        );
        OccupationMeasure { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pair_with(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.weights.len());
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// Empirical path measure: averages user functionals over the particles.
pub struct EmpiricalPathMeasure<'a> {
    paths: &'a [JumpPath],
}

impl EmpiricalPathMeasure<'_> {
    pub fn average<F: FnMut(&JumpPath) -> f64>(&self, mut f: F) -> f64 {
        self.paths.iter().map(|p| f(p)).sum::<f64>() / self.paths.len() as f64
    }
}

/// Mean path under an explicit state-to-observable embedding.
pub fn mean_path(sample: &EnsembleSample, grid_t: usize, values: &[f64]) -> MeanPath {
    assert!(grid_t >= 1);
    let n = sample.n_particles() as f64;
    let beta = sample.paths[0].horizon();
    let grid_values = (0..grid_t)
        .map(|j| {
            let t = j as f64 * beta / grid_t as f64;
            sample
                .paths
                .iter()
                .map(|p| values[p.state_at(t)])
                .sum::<f64>()
                / n
        })
        .collect();
    MeanPath {
        horizon: beta,
        values: grid_values,
    }
}

/// The three standard observables.  The mean path embeds states by their
/// index; use [`mean_path`] directly for other embeddings.
pub fn observables(
    sample: &EnsembleSample,
    grid_t: usize,
) -> (MeanPath, OccupationMeasure, EmpiricalPathMeasure<'_>) {
    let n_states = sample.paths[0].n_states();
    let index_values: Vec<f64> = (0..n_states).map(|x| x as f64).collect();
    let mp = mean_path(sample, grid_t, &index_values);
    let mut weights = vec![0.0; n_states];
    for p in &sample.paths {
        for (x, w) in occupation_local_time(p).weights().iter().enumerate() {
            weights[x] += w / sample.n_particles() as f64;
        }
    }
    let occ = OccupationMeasure::new(weights);
    (
        mp,
        occ,
        EmpiricalPathMeasure {
            paths: &sample.paths,
        },
    )
}

fn logsumexp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|&t| (t - m).exp()).sum::<f64>().ln()
}

/// `log S_n` for the permutation-and-endpoint sum `S_n = (1/n!)
/// sum_{sigma} sum_{x} prod_i A(x_i, x_{sigma(i)})`, via the cycle-type
/// recursion in log space.  `A` must be entrywise nonnegative.
pub fn exact_symmetrized_partition(a: &DMatrix<f64>, n: usize) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "kernel must be square");
    assert!(a.iter().all(|&v| v >= 0.0), "kernel must be nonnegative");
    if n == 0 {
        return 0.0;
    }
    let rho = (0..a.nrows())
        .map(|x| a.row(x).iter().sum::<f64>())
        .fold(0.0f64, f64::max);
    if rho == 0.0 {
        return f64::NEG_INFINITY;
    }
    // Normalising by the max row sum keeps every power bounded.
    let b = a / rho;
    let log_rho = rho.ln();
    let mut log_tr = vec![f64::NEG_INFINITY; n + 1];
    let mut pow = b.clone();
    for (k, slot) in log_tr.iter_mut().enumerate().skip(1) {
        let tr = pow.trace();
        if tr > 0.0 {
            *slot = tr.ln() + k as f64 * log_rho;
        }
        if k < n {
            pow = &pow * &b;
        }
    }
    let mut log_s = vec![f64::NEG_INFINITY; n + 1];
    log_s[0] = 0.0;
    for m in 1..=n {
        let terms: Vec<f64> = (1..=m).map(|k| log_tr[k] + log_s[m - k]).collect();
        log_s[m] = logsumexp(&terms) - (m as f64).ln();
    }
    log_s[n]
}

fn weighted_kernel(spec: &EnsembleSpec, kernel: &DMatrix<f64>) -> DMatrix<f64> {
    let n = spec.generator.n();
    DMatrix::from_fn(n, n, |x, y| {
        let g = spec.weight.as_ref().map_or(1.0, |w| w[(x, y)]);
        spec.init.weights()[x] * g * kernel[(x, y)]
    })
}

/// Exact `(1/N) log` of the unnormalised exponential moment
/// `E[exp(sum_i int_0^beta f(v(xi_i(s))) ds)]` of the ensemble, for affine
/// `f` and the state embedding `v = values`.  At `f = 0` this is the
/// normalised log-partition of the ensemble kernel itself.
pub fn finite_n_free_energy(
    spec: &EnsembleSpec,
    f: &ScalarFn,
    values: &[f64],
    n_list: &[usize],
) -> Result<Vec<(usize, f64)>, EnsembleError> {
    let (slope, intercept) = f.linear_part().ok_or(EnsembleError::NonLinearFunctional)?;
    assert_eq!(values.len(), spec.generator.n());
    let fvec: Vec<f64> = values.iter().map(|&v| slope * v).collect();
    let kernel = feynman_kac_kernel(&spec.generator, &fvec, spec.beta, None)
        .expect("Feynman-Kac kernel for the configured potential");
    let a = weighted_kernel(spec, kernel.matrix());
    Ok(n_list
        .iter()
        .map(|&n| {
            assert!(n >= 1);
            let v = exact_symmetrized_partition(&a, n) / n as f64 + spec.beta * intercept;
            (n, v)
        })
        .collect())
}

/// Self-normalised importance-sampling estimate of the normalised
/// exponential moment `(1/N) log E[exp(N int_0^beta f(Y_N(s)) ds)]`, where
/// `Y_N` is the mean of the embedded particle observables.  Affine `f`
/// integrates exactly through local times; other shapes use a 256-point
/// grid.  Returns `(estimate, bootstrap standard error)`.
pub fn mc_mean_field_estimate(
    spec: &EnsembleSpec,
    f: &ScalarFn,
    values: &[f64],
    samples: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64), EnsembleError> {
    assert!(samples >= 2, "need at least two replicas");
    assert_eq!(values.len(), spec.generator.n());
    let sampler = EnsembleSampler::new(spec);
    let p_beta = transition_kernel(&spec.generator, spec.beta)
        .expect("transition kernel")
        .matrix()
        .clone();
    let n = spec.n_particles as f64;

    let mut log_w = Vec::with_capacity(samples);
    let mut f_int = Vec::with_capacity(samples);
    for _ in 0..samples {
        let sample = sampler.sample(rng)?;
        let mut lw = sample.log_importance_weight;
        for i in 0..spec.n_particles {
            let (x, y) = (
                sample.initial_points[i],
                sample.initial_points[sample.permutation[i]],
            );
            lw += p_beta[(x, y)].ln();
        }
        log_w.push(lw);
        let fs = match f.linear_part() {
            Some((slope, intercept)) => {
                let occupation: f64 = sample
                    .paths
                    .iter()
                    .map(|p| occupation_local_time(p).pair_with(values))
                    .sum();
                slope * spec.beta * occupation / n + spec.beta * intercept
            }
            None => mean_path(&sample, 256, values).integral_of(|u| f.eval(u)),
        };
        f_int.push(fs);
    }

    let w_max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|&l| (l - w_max).exp()).collect();
    let sum_w: f64 = w.iter().sum();
    let ess = sum_w * sum_w / w.iter().map(|&x| x * x).sum::<f64>();
    if ess < 10.0 {
        return Err(EnsembleError::DegenerateWeights { ess });
    }

    let ratio = |idx: &[usize]| -> f64 {
        let num: Vec<f64> = idx.iter().map(|&s| log_w[s] + n * f_int[s]).collect();
        let den: Vec<f64> = idx.iter().map(|&s| log_w[s]).collect();
        (logsumexp(&num) - logsumexp(&den)) / n
    };
    let all: Vec<usize> = (0..samples).collect();
    let estimate = ratio(&all);

    let boots = 200;
    let mut boot_rng = rng.substream(0xB007);
    let mut boot_vals = Vec::with_capacity(boots);
    for _ in 0..boots {
        let idx: Vec<usize> = (0..samples).map(|_| boot_rng.below(samples)).collect();
        boot_vals.push(ratio(&idx));
    }
    let mean: f64 = boot_vals.iter().sum::<f64>() / boots as f64;
    let var: f64 = boot_vals
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (boots - 1) as f64;
    Ok((estimate, var.sqrt()))
}
