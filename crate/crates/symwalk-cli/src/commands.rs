//! Subcommand implementations.  Each renderer is a pure function from the
//! run context to file content plus a one-line summary; disk and stdout are
//! handled by the caller, so the verify suite can compare renders in memory.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use symwalk::bose_trace::{
    finite_n_mean_field_free_energy, inner_rate, lift_sum_operator, log_symmetric_trace_cycles,
    symmetric_trace_cycles, symmetric_trace_exact, variational_mean_field_free_energy,
    MeanFieldProblem, SymmetricBasis,
};
use symwalk::markov_core::{boltzmann_kernel, feynman_kac_kernel, transition_kernel};
use symwalk::rate_engine::{self, RateProblem};
use symwalk::symmetrized_ensemble::observables;
use symwalk::{EnsembleSampler, EnsembleSpec, OccupationMeasure, ReferenceMeasure, RngStream};

use crate::config::ExperimentConfig;
use crate::output::{fmt, Csv};
use crate::CliError;

pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub config_hash: u64,
    /// Effective seed: the `--seed` override when given, else the config's.
    pub seed: u64,
}

pub struct Rendered {
    pub file_name: String,
    pub content: String,
    pub summary: String,
}

impl RunContext<'_> {
    fn file_name(&self, default: &str) -> String {
        self.config
            .output
            .clone()
            .unwrap_or_else(|| default.to_string())
    }

    fn n_sweep(&self) -> Result<Vec<usize>, CliError> {
        self.config
            .n_list
            .clone()
            .or_else(|| self.config.n_particles.map(|n| vec![n]))
            .ok_or_else(|| CliError::Config("this subcommand needs n_list or n_particles".into()))
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

pub fn kernel(ctx: &RunContext) -> Result<Rendered, CliError> {
    let cfg = ctx.config;
    let g = cfg.generator()?;
    let f = cfg.scalar_fn();
    let potential: Vec<f64> = cfg.observable_values().iter().map(|&v| f.eval(v)).collect();
    let trans = transition_kernel(&g, cfg.beta).map_err(numerical)?;
    let fk = feynman_kac_kernel(&g, &potential, cfg.beta, None).map_err(numerical)?;
    let boltz = boltzmann_kernel(&g, cfg.beta).map_err(numerical)?;

    let mut csv = Csv::new("kernel", ctx.config_hash, ctx.seed);
    for (kind, k) in [
        ("transition", &trans),
        ("feynman_kac", &fk),
        ("boltzmann", &boltz),
    ] {
        let m = k.matrix();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                csv.row(&[kind, &r.to_string(), &c.to_string(), &fmt(m[(r, c)])]);
            }
        }
    }
    Ok(Rendered {
        file_name: ctx.file_name("kernel.csv"),
        content: csv.finish(),
        summary: format!("kernel: {} states, beta = {}", g.n(), fmt(cfg.beta)),
    })
}

pub fn sample(ctx: &RunContext) -> Result<Rendered, CliError> {
    let cfg = ctx.config;
    let g = cfg.generator()?;
    let n_states = g.n();
    let n_particles = cfg
        .n_particles
        .ok_or_else(|| CliError::Config("sample needs n_particles".into()))?;
    let n_samples = cfg.samples.unwrap_or(1000);
    let init = ReferenceMeasure::probability(vec![1.0 / n_states as f64; n_states]);
    let spec = EnsembleSpec::new(g, cfg.beta, n_particles, init);
    let sampler = EnsembleSampler::new(&spec);
    let base = RngStream::new(ctx.seed, 0);

    type ReplicaRow = (usize, f64, Vec<f64>);
    // One independent substream per replica: the draw is a function of the
    // replica index alone, so the table is identical for any thread count.
    let drawn: Vec<Result<ReplicaRow, CliError>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = base.substream(i as u64);
            let s = sampler.sample(&mut rng).map_err(numerical)?;
            let (_, occ, _) = observables(&s, 64);
            Ok((
                s.cycles().len(),
                s.log_importance_weight(),
                occ.weights().to_vec(),
            ))
        })
        .collect();

    let mut csv = Csv::new("sample", ctx.config_hash, ctx.seed);
    let mut mean_occ = vec![0.0; n_states];
    let mut mean_cycles = 0.0;
    for (i, item) in drawn.into_iter().enumerate() {
        let (cycles, log_w, occ) = item?;
        let id = i.to_string();
        csv.row(&[&id, "cycle_count", "", &fmt(cycles as f64)]);
        csv.row(&[&id, "log_weight", "", &fmt(log_w)]);
        for (x, &w) in occ.iter().enumerate() {
            csv.row(&[&id, "occupation", &x.to_string(), &fmt(w)]);
            mean_occ[x] += w / n_samples as f64;
        }
        mean_cycles += cycles as f64 / n_samples as f64;
    }
    for (x, &w) in mean_occ.iter().enumerate() {
        csv.row(&["", "mean_occupation", &x.to_string(), &fmt(w)]);
    }
    csv.row(&["", "mean_cycle_count", "", &fmt(mean_cycles)]);
    Ok(Rendered {
        file_name: ctx.file_name("sample.csv"),
        content: csv.finish(),
        summary: format!(
            "sample: {n_samples} replicas of {n_particles} particles, mean cycles = {}",
            fmt(mean_cycles)
        ),
    })
}

pub fn dv_rate(ctx: &RunContext) -> Result<Rendered, CliError> {
    let cfg = ctx.config;
    let (space, boundary) = cfg
        .lattice()
        .ok_or_else(|| CliError::Config("dv-rate needs a lattice model".into()))?;
    let p = OccupationMeasure::new(cfg.target_occupation());
    let value = rate_engine::dv_rate(&p, &space, boundary);

    let mut csv = Csv::new("dv-rate", ctx.config_hash, ctx.seed);
    csv.row(&["dv_rate", &fmt(value)]);
    csv.row(&["beta_dv_rate", &fmt(cfg.beta * value)]);
    Ok(Rendered {
        file_name: ctx.file_name("dv-rate.csv"),
        content: csv.finish(),
        summary: fmt(value),
    })
}

#[derive(Serialize)]
struct CertificateFile {
    config_hash: String,
    seed: u64,
    beta: f64,
    lower: f64,
    upper: f64,
    gap: f64,
    regularized: bool,
    f_star: Vec<f64>,
    q_star: Vec<Vec<f64>>,
}

pub fn jsym(ctx: &RunContext) -> Result<Rendered, CliError> {
    let cfg = ctx.config;
    let (space, boundary) = cfg
        .lattice()
        .ok_or_else(|| CliError::Config("jsym needs a lattice model".into()))?;
    let n = space.len();
    let p = OccupationMeasure::new(cfg.target_occupation());
    let problem = RateProblem::new(space, boundary, cfg.beta, p, ReferenceMeasure::counting(n));
    let cert = rate_engine::j_sym(&problem).map_err(numerical)?;

    let q = cert.q_star().matrix();
    let q_star: Vec<Vec<f64>> = (0..q.nrows())
        .map(|r| (0..q.ncols()).map(|c| q[(r, c)]).collect())
        .collect();
    let file = CertificateFile {
        config_hash: format!("{:016x}", ctx.config_hash),
        seed: ctx.seed,
        beta: cfg.beta,
        lower: cert.lower(),
        upper: cert.upper(),
        gap: cert.gap(),
        regularized: cert.regularized(),
        f_star: cert.f_star().to_vec(),
        q_star,
    };
    let mut content = serde_json::to_string_pretty(&file).expect("certificate serializes to JSON");
    content.push('\n');
    Ok(Rendered {
        file_name: ctx.file_name("jsym.json"),
        content,
        summary: format!(
            "lower = {} upper = {} gap = {}",
            fmt(cert.lower()),
            fmt(cert.upper()),
            fmt(cert.gap())
        ),
    })
}

pub fn free_energy(ctx: &RunContext) -> Result<Rendered, CliError> {
    let cfg = ctx.config;
    let g = cfg.generator()?;
    if !g.is_symmetric(1e-10) {
        return Err(CliError::Config(
            "free-energy needs a symmetric generator".into(),
        ));
    }
    let h = g.h().clone();
    let values = cfg.observable_values();
    let f = cfg.scalar_fn();
    let n_sweep = ctx.n_sweep()?;
    let beta = cfg.beta;
    let x = DMatrix::from_diagonal(&DVector::from_vec(values.clone()));

    let mut rows: Vec<(usize, f64)> = Vec::with_capacity(n_sweep.len());
    if let Some((slope, intercept)) = f.linear_part() {
        // Affine functionals fold into the one-body operator, so the cycle
        // recursion gives the exact value at any particle number.
        let h_eff = &h - &x * slope;
        for &n in &n_sweep {
            let v = log_symmetric_trace_cycles(&h_eff, beta, n) / n as f64 + beta * intercept;
            rows.push((n, v));
        }
    } else {
        for &n in &n_sweep {
            let prob = MeanFieldProblem::new(h.clone(), x.clone(), f, beta, n);
            rows.push((
                n,
                finite_n_mean_field_free_energy(&prob).map_err(numerical)?,
            ));
        }
    }

    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let limit = if hi - lo <= 1e-12 {
        beta * (f.eval(lo) - inner_rate(&h, &x, lo))
    } else {
        // Keep the scan strictly inside the observable's numerical range;
        // the endpoints are reached only by unbounded tilts.
        let span = hi - lo;
        let grid: Vec<f64> = (0..=100)
            .map(|i| lo + span * (0.005 + 0.99 * i as f64 / 100.0))
            .collect();
        let prob = MeanFieldProblem::new(h.clone(), x.clone(), f, beta, 1);
        variational_mean_field_free_energy(&prob, &grid)
    };

    let mut csv = Csv::new("free-energy", ctx.config_hash, ctx.seed);
    for &(n, v) in &rows {
        csv.row(&["finite_n", &n.to_string(), &fmt(v)]);
    }
    csv.row(&["variational", "", &fmt(limit)]);
    let (last_n, last_v) = *rows.last().expect("sweep is nonempty");
    Ok(Rendered {
        file_name: ctx.file_name("free-energy.csv"),
        content: csv.finish(),
        summary: format!(
            "free-energy: variational = {}, finite_n({last_n}) = {}",
            fmt(limit),
            fmt(last_v)
        ),
    })
}

pub fn trace(ctx: &RunContext) -> Result<Rendered, CliError> {
    let cfg = ctx.config;
    let g = cfg.generator()?;
    if !g.is_symmetric(1e-10) {
        return Err(CliError::Config("trace needs a symmetric generator".into()));
    }
    let h = g.h().clone();
    let n_states = h.nrows();
    let n_sweep = ctx.n_sweep()?;
    let beta = cfg.beta;

    let mut csv = Csv::new("trace", ctx.config_hash, ctx.seed);
    for &n in &n_sweep {
        let id = n.to_string();
        // Basis route: skipped above the subspace dimension cap.
        if let Ok(basis) = SymmetricBasis::new(n_states, n) {
            let v = symmetric_trace_exact(&lift_sum_operator(&h, &basis), beta);
            csv.row(&[&id, "basis", &fmt(v)]);
        }
        csv.row(&[&id, "cycles", &fmt(symmetric_trace_cycles(&h, beta, n))]);
        if permanent_cost(n_states, n) <= 5e7 {
            let b = boltzmann_kernel(&g, beta).map_err(numerical)?;
            let v = brute_force_trace(b.matrix(), n);
            csv.row(&[&id, "permanent", &fmt(v)]);
        }
    }
    Ok(Rendered {
        file_name: ctx.file_name("trace.csv"),
        content: csv.finish(),
        summary: format!("trace: {} states, particle numbers {:?}", n_states, n_sweep),
    })
}

fn permanent_cost(n_states: usize, n_particles: usize) -> f64 {
    let mut cost = n_particles as f64;
    for _ in 0..n_particles {
        cost *= n_states as f64;
    }
    for k in 2..=n_particles {
        cost *= k as f64;
    }
    cost
}

/// `(1/N!) sum_sigma sum_x prod_i B[x_sigma(i), x_i]` by complete
/// enumeration; the permanent-style oracle for the symmetric trace.
pub fn brute_force_trace(b: &DMatrix<f64>, n_particles: usize) -> f64 {
    let n = b.nrows();
    let mut total = 0.0;
    let mut n_perms = 0u64;
    let mut perm: Vec<usize> = (0..n_particles).collect();
    heap_permutations(&mut perm, n_particles, &mut |sigma| {
        n_perms += 1;
        let mut config = vec![0usize; n_particles];
        loop {
            let mut prod = 1.0;
            for i in 0..n_particles {
                prod *= b[(config[sigma[i]], config[i])];
            }
            total += prod;
            let mut pos = 0;
            while pos < n_particles {
                config[pos] += 1;
                if config[pos] < n {
                    break;
                }
                config[pos] = 0;
                pos += 1;
            }
            if pos == n_particles {
                break;
            }
        }
    });
    total / n_perms as f64
}

fn heap_permutations<F: FnMut(&[usize])>(a: &mut [usize], k: usize, visit: &mut F) {
    if k <= 1 {
        visit(a);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(a, k - 1, visit);
        if k.is_multiple_of(2) {
            a.swap(i, k - 1);
        } else {
            a.swap(0, k - 1);
        }
    }
    heap_permutations(a, k - 1, visit);
}
