//! The `verify` subcommand: the runtime invariant suite.
//!
//! Each check prints one line; any failure flips the overall verdict, which
//! the caller turns into a nonzero exit.  Test instances are fabricated from
//! the configured seed, so the suite runs on any valid configuration.

use symwalk::rate_engine::{self, RateProblem};
use symwalk::{Boundary, OccupationMeasure, ReferenceMeasure, RngStream, StateSpace};

use crate::commands::{self, RunContext};
use crate::output;

/// Independent copy of the documented schema table.  [`output::SCHEMAS`]
/// feeds the writers; this copy is what reviewers read.  The two must agree,
/// so a renderer edit that touches only one side fails the check.
const DOCUMENTED_SCHEMAS: &[(&str, &str)] = &[
    ("kernel", "kind,row,col,value"),
    ("sample", "sample,statistic,key,value"),
    ("dv-rate", "quantity,value"),
    ("free-energy", "quantity,n,value"),
    ("trace", "n_particles,route,value"),
];

pub fn verify(ctx: &RunContext) -> bool {
    let checks: Vec<(&str, Result<(), String>)> = vec![
        (
            "principal eigenvalue gradient vs finite differences",
            check_gradient(ctx),
        ),
        (
            "martingale kernels are row-stochastic",
            check_martingale(ctx),
        ),
        (
            "saddle certificate reproduces the target marginals",
            check_certificate(ctx),
        ),
        (
            "identical sample output for 1 and 8 worker threads",
            check_determinism(ctx),
        ),
        (
            "output schemas match the documented table",
            check_schemas(ctx),
        ),
    ];
    let total = checks.len();
    let mut ok = true;
    for (i, (name, res)) in checks.into_iter().enumerate() {
        match res {
            Ok(()) => println!("[{}/{total}] {name} ... ok", i + 1),
            Err(detail) => {
                ok = false;
                println!("[{}/{total}] {name} ... FAILED: {detail}", i + 1);
            }
        }
    }
    if ok {
        println!("verify: all checks passed");
    } else {
        println!("verify: failures detected");
    }
    ok
}

fn instances() -> Vec<(StateSpace, Boundary)> {
    vec![
        (StateSpace::lattice_box(&[0], &[4]), Boundary::Internal),
        (
            StateSpace::lattice_box(&[0, 0], &[2, 1]),
            Boundary::Absorbing,
        ),
    ]
}

fn random_potential(rng: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| 1.6 * rng.uniform() - 0.8).collect()
}

fn check_gradient(ctx: &RunContext) -> Result<(), String> {
    let tol = ctx.config.tolerances.gradient_check.max(1e-6);
    let mut rng = RngStream::new(ctx.seed, 0x6E);
    for (space, boundary) in instances() {
        let n = space.len();
        let f = random_potential(&mut rng, n);
        let pair = rate_engine::lambda_top(&space, boundary, &f).map_err(|e| e.to_string())?;
        let eps = 1e-5;
        for z in 0..n {
            let grad = pair.vector[z] * pair.vector[z];
            let mut up = f.clone();
            up[z] += eps;
            let mut down = f.clone();
            down[z] -= eps;
            let plus = rate_engine::lambda_top(&space, boundary, &up)
                .map_err(|e| e.to_string())?
                .value;
            let minus = rate_engine::lambda_top(&space, boundary, &down)
                .map_err(|e| e.to_string())?
                .value;
            let fd = (plus - minus) / (2.0 * eps);
            if (grad - fd).abs() > tol {
                return Err(format!(
                    "site {z}: analytic {grad} vs finite difference {fd}"
                ));
            }
        }
    }
    Ok(())
}

fn check_martingale(ctx: &RunContext) -> Result<(), String> {
    let tol = ctx.config.tolerances.stochastic_rows;
    let mut rng = RngStream::new(ctx.seed, 0x4D);
    for (space, boundary) in instances() {
        let f = random_potential(&mut rng, space.len());
        let kernel = rate_engine::martingale_kernel(&f, ctx.config.beta, &space, boundary)
            .map_err(|e| e.to_string())?;
        let m = kernel.matrix();
        for x in 0..m.nrows() {
            let s: f64 = m.row(x).iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(format!("row {x} sums to {s}"));
            }
        }
    }
    Ok(())
}

fn check_certificate(ctx: &RunContext) -> Result<(), String> {
    let tols = ctx.config.tolerances;
    let space = StateSpace::lattice_box(&[0, 0], &[2, 1]);
    let n = space.len();
    let mut rng = RngStream::new(ctx.seed, 0x9C);
    let raw: Vec<f64> = (0..n).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let problem = RateProblem::new(
        space,
        Boundary::Absorbing,
        ctx.config.beta,
        OccupationMeasure::new(p.clone()),
        ReferenceMeasure::counting(n),
    );
    let cert = rate_engine::j_sym(&problem).map_err(|e| e.to_string())?;
    let rows = cert.q_star().first_marginal();
    let cols = cert.q_star().second_marginal();
    for x in 0..n {
        if (rows[x] - p[x]).abs() > tols.marginals || (cols[x] - p[x]).abs() > tols.marginals {
            return Err(format!(
                "site {x}: marginals ({}, {}) vs target {}",
                rows[x], cols[x], p[x]
            ));
        }
    }
    if cert.lower() > cert.upper() + 1e-9 {
        return Err(format!(
            "lower bound {} exceeds upper bound {}",
            cert.lower(),
            cert.upper()
        ));
    }
    if cert.gap().abs() > tols.certificate_gap * cert.upper().abs().max(1e-12) {
        return Err(format!(
            "relative duality gap {} above {}",
            cert.gap().abs() / cert.upper().abs().max(1e-12),
            tols.certificate_gap
        ));
    }
    Ok(())
}

/// A sample-able clone of the config: small replica counts keep the check
/// fast while exercising the full parallel pipeline.
fn sample_config(ctx: &RunContext) -> crate::config::ExperimentConfig {
    let mut cfg = ctx.config.clone();
    cfg.n_particles = Some(cfg.n_particles.unwrap_or(4));
    cfg.samples = Some(cfg.samples.unwrap_or(64).min(64));
    cfg
}

fn render_sample(ctx: &RunContext, threads: usize) -> Result<String, String> {
    let cfg = sample_config(ctx);
    let sub = RunContext {
        config: &cfg,
        config_hash: ctx.config_hash,
        seed: ctx.seed,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| commands::sample(&sub))
        .map(|r| r.content)
        .map_err(|e| e.to_string())
}

fn check_determinism(ctx: &RunContext) -> Result<(), String> {
    let one = render_sample(ctx, 1)?;
    let eight = render_sample(ctx, 8)?;
    if one != eight {
        return Err("sample output differs between 1 and 8 threads".into());
    }
    Ok(())
}

fn check_schemas(ctx: &RunContext) -> Result<(), String> {
    if output::SCHEMAS != DOCUMENTED_SCHEMAS {
        return Err("writer schema table drifted from the documented table".into());
    }
    let head = output::header("kernel", 0xabc, 7);
    let expected = [
        "# symwalk kernel v1".to_string(),
        "# config_hash = 0000000000000abc".to_string(),
        "# seed = 7".to_string(),
    ];
    if head != expected {
        return Err("metadata header format drifted".into());
    }
    // Live renders, where the configured model supports the command.
    let mut renders: Vec<(&str, String)> = vec![(
        "kernel",
        commands::kernel(ctx).map_err(|e| e.to_string())?.content,
    )];
    renders.push(("sample", render_sample(ctx, 1)?));
    if ctx.config.lattice().is_some() {
        renders.push((
            "dv-rate",
            commands::dv_rate(ctx).map_err(|e| e.to_string())?.content,
        ));
    }
    if ctx
        .config
        .generator()
        .map(|g| g.is_symmetric(1e-10))
        .unwrap_or(false)
    {
        let cfg = sample_config(ctx);
        let sub = RunContext {
            config: &cfg,
            config_hash: ctx.config_hash,
            seed: ctx.seed,
        };
        renders.push((
            "free-energy",
            commands::free_energy(&sub)
                .map_err(|e| e.to_string())?
                .content,
        ));
        renders.push((
            "trace",
            commands::trace(&sub).map_err(|e| e.to_string())?.content,
        ));
    }
    for (command, content) in renders {
        let want = DOCUMENTED_SCHEMAS
            .iter()
            .find(|(c, _)| *c == command)
            .map(|(_, s)| *s)
            .expect("rendered command is documented");
        let got = content.lines().nth(3).unwrap_or("");
        if got != want {
            return Err(format!(
                "{command}: emitted columns `{got}` vs documented `{want}`"
            ));
        }
    }
    Ok(())
}
