//! Large-deviation rate functions for occupation measures of confined
//! walks: the Donsker-Varadhan form, its Legendre dual through the
//! principal eigenvalue `lambda(f)` of the box operator plus potential,
//! the pair-measure functional `J_Q`, and the saddle certificate
//! `(f*, Q*)` that ties them together.  The certificate is algebraic:
//! `f* = -(A sqrt(p)) / sqrt(p)` makes `sqrt(p)` the ground state at
//! eigenvalue zero, and `Q*(x,y) = sqrt(p(x) p(y)) K^{f*}(x,y)` then has
//! both marginals exactly `p`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::markov_core::{
    lattice_laplacian, principal_eig, Boundary, EigenPair, Generator, Kernel, KernelKind,
    MarkovError, StateSpace,
};
use crate::pair_measure::{relative_entropy, PairMeasure, ReferenceMeasure};
use crate::symmetrized_ensemble::OccupationMeasure;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("kernel vanishes at ({x}, {y}) where the pair measure has mass")]
    SupportViolation { x: usize, y: usize },
    #[error("target measure vanishes at site {site}")]
    ZeroMassSite { site: usize },
    #[error("optimizer stalled at value {best} with gradient norm {grad_norm:.3e}")]
    NonConvergence { best: f64, grad_norm: f64 },
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// A rate-function instance: box with boundary mode, horizon, target
/// occupation measure and the reference measure for pair entropies.
pub struct RateProblem {
    space: StateSpace,
    boundary: Boundary,
    beta: f64,
    target: OccupationMeasure,
    reference: ReferenceMeasure,
}

impl RateProblem {
    pub fn new(
        space: StateSpace,
        boundary: Boundary,
        beta: f64,
        target: OccupationMeasure,
        reference: ReferenceMeasure,
    ) -> Self {
        assert!(beta > 0.0, "horizon must be positive");
        assert_eq!(target.weights().len(), space.len());
        assert_eq!(reference.len(), space.len());
        RateProblem {
            space,
            boundary,
            beta,
            target,
            reference,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn target(&self) -> &OccupationMeasure {
        &self.target
    }

    pub fn reference(&self) -> &ReferenceMeasure {
        &self.reference
    }
}

/// Two-sided bracket on the symmetrised rate with the optimizers that
/// produce it.
pub struct SaddleCertificate {
    f_star: Vec<f64>,
    q_star: PairMeasure,
    lower: f64,
    upper: f64,
    regularized: bool,
}

impl SaddleCertificate {
    pub fn f_star(&self) -> &[f64] {
        &self.f_star
    }

    pub fn q_star(&self) -> &PairMeasure {
        &self.q_star
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }

    /// True when the target had zero-mass sites and was mixed with
    /// 1e-12 uniform mass before solving.
    pub fn regularized(&self) -> bool {
        self.regularized
    }
}

fn box_operator(space: &StateSpace, boundary: Boundary) -> DMatrix<f64> {
    lattice_laplacian(space, boundary).killed_matrix()
}

fn with_potential(a: &DMatrix<f64>, f: &[f64]) -> DMatrix<f64> {
    let mut m = a.clone();
    for (z, &v) in f.iter().enumerate() {
        m[(z, z)] += v;
    }
    m
}

fn top_eigenvalue(m: DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Principal eigenvalue `lambda(f)` of the box operator plus `diag(f)`,
/// with its positive unit eigenvector.
pub fn lambda_top(
    space: &StateSpace,
    boundary: Boundary,
    f: &[f64],
) -> Result<EigenPair, RateError> {
    assert_eq!(f.len(), space.len());
    Ok(principal_eig(&with_potential(
        &box_operator(space, boundary),
        f,
    ))?)
}

/// Donsker-Varadhan rate `(1/2) sum_{x ~ y} (sqrt(p_x) - sqrt(p_y))^2`
/// over ordered adjacent pairs.  Absorbing mode extends `p` by zero
/// outside the box, so each missing neighbour contributes the full site
/// mass; internal mode keeps only in-box edges.
pub fn dv_rate(p: &OccupationMeasure, space: &StateSpace, boundary: Boundary) -> f64 {
    assert!(space.is_lattice(), "rate functions need a lattice box");
    assert_eq!(p.weights().len(), space.len());
    let w = p.weights();
    let mut total = 0.0;
    for x in 0..space.len() {
        for y in space.neighbours(x) {
            if y > x {
                let d = w[x].sqrt() - w[y].sqrt();
                total += d * d;
            }
        }
        if let Boundary::Absorbing = boundary {
            total += space.boundary_deficit(x) as f64 * w[x];
        }
    }
    total
}

/// Legendre dual `sup_f { <f, p> - lambda(f) }`, solved by damped Newton
/// steps on the concave objective starting from `f = 0`.
pub fn legendre_rate(
    p: &OccupationMeasure,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<f64, RateError> {
    legendre_rate_from(p, space, boundary, &vec![0.0; space.len()])
}

/// Same maximization from an explicit starting potential; the optimum is
/// unique up to the flat all-ones direction, so every start must land on
/// the same value.
pub fn legendre_rate_from(
    p: &OccupationMeasure,
    space: &StateSpace,
    boundary: Boundary,
    f0: &[f64],
) -> Result<f64, RateError> {
    let n = space.len();
    assert_eq!(p.weights().len(), n);
    assert_eq!(f0.len(), n);
    let a = box_operator(space, boundary);
    let pw = DVector::from_column_slice(p.weights());
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut f = DVector::from_column_slice(f0);
    let mut best = f64::NEG_INFINITY;
    let mut gnorm = f64::INFINITY;
    let mut prev_val = f64::NEG_INFINITY;
    let mut stalled = 0;
    for _ in 0..2000 {
        let eig = nalgebra::SymmetricEigen::new(with_potential(&a, f.as_slice()));
        let mut top = 0;
        for i in 1..n {
            if eig.eigenvalues[i] > eig.eigenvalues[top] {
                top = i;
            }
        }
        let lam1 = eig.eigenvalues[top];
        let u1: DVector<f64> = eig.eigenvectors.column(top).into();
        let val = pw.dot(&f) - lam1;
        best = best.max(val);
        let grad = &pw - u1.component_mul(&u1);
        gnorm = grad.amax();
        // The eigensolver floors the measured gradient near small spectral
        // gaps; once the objective stops moving at working precision, a
        // gradient at that floor is as converged as the arithmetic allows.
        if (val - prev_val).abs() <= 1e-15 * (1.0 + val.abs()) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        prev_val = val;
        if gnorm <= 1e-9 || (gnorm <= 1e-6 && stalled >= 25) {
            return Ok(val);
        }
        // Curvature of lambda through the spectral gap; the all-ones
        // rank-one term removes the flat direction without shifting the
        // solution, since the gradient sums to zero.
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            if j == top {
                continue;
            }
            let w = u1.component_mul(&eig.eigenvectors.column(j).into_owned());
            hess += &w * w.transpose() * (2.0 / (lam1 - eig.eigenvalues[j]));
        }
        let mut d = (hess + &ones)
            .lu()
            .solve(&grad)
            .unwrap_or_else(|| grad.clone());
        if grad.dot(&d) <= 0.0 {
            d = grad.clone();
        }
        let slope = grad.dot(&d);
        let mut t = 1.0;
        let mut moved = false;
        while t >= 1e-12 {
            let cand = &f + &d * t;
            let vc = pw.dot(&cand) - top_eigenvalue(with_potential(&a, cand.as_slice()));
            if vc >= val + 1e-4 * t * slope {
                f = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            if gnorm <= 1e-6 {
                return Ok(val);
            }
            break;
        }
    }
    if gnorm <= 1e-6 {
        return Ok(best);
    }
    Err(RateError::NonConvergence {
        best,
        grad_norm: gnorm,
    })
}

/// Secant factor `(e^{b li} - e^{b lj}) / (li - lj)` in a form stable
/// near coinciding eigenvalues, where it degenerates to `b e^{b l}`.
fn exp_secant(li: f64, lj: f64, beta: f64) -> f64 {
    let x = beta * (li + lj) / 2.0;
    let d = beta * (li - lj) / 2.0;
    let factor = if d.abs() < 1e-6 {
        1.0 + d * d / 6.0
    } else {
        d.sinh() / d
    };
    beta * x.exp() * factor
}

/// Spectral calculus around one potential: the kernel `e^{beta (A + F)}`
/// and the derivative contraction used by both the `J_Q` gradient and
/// the Euler-Lagrange residual.
struct PotentialCalculus {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    beta: f64,
    kernel: DMatrix<f64>,
}

impl PotentialCalculus {
    fn new(a: &DMatrix<f64>, f: &[f64], beta: f64) -> Self {
        let eig = nalgebra::SymmetricEigen::new(with_potential(a, f));
        let e = eig.eigenvalues.map(|l| (beta * l).exp());
        let kernel = &eig.eigenvectors * DMatrix::from_diagonal(&e) * eig.eigenvectors.transpose();
        PotentialCalculus {
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
            beta,
            kernel,
        }
    }

    fn log_pairing(&self, q: &PairMeasure) -> Result<f64, RateError> {
        let n = self.kernel.nrows();
        let mut total = 0.0;
        for x in 0..n {
            for y in 0..n {
                let qv = q.entry(x, y);
                if qv > 0.0 {
                    let k = self.kernel[(x, y)];
                    if k <= 0.0 {
                        return Err(RateError::SupportViolation { x, y });
                    }
                    total += qv * k.ln();
                }
            }
        }
        Ok(total)
    }

    /// `z`-th entry is `sum_{x,y} Q(x,y) (d K / d f_z)(x,y) / K(x,y)`,
    /// the `Q`-averaged conditioned occupation of site `z` scaled by the
    /// horizon.  Contracting `U^T (Q/K) U` against the secant matrix
    /// turns the per-site derivative sum into one diagonal extraction.
    fn occupation_gradient(&self, q: &PairMeasure) -> Result<DVector<f64>, RateError> {
        let n = self.kernel.nrows();
        let mut w = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                let qv = q.entry(x, y);
                if qv > 0.0 {
                    let k = self.kernel[(x, y)];
                    if k <= 0.0 {
                        return Err(RateError::SupportViolation { x, y });
                    }
                    w[(x, y)] = qv / k;
                }
            }
        }
        let c = self.eigvecs.transpose() * w * &self.eigvecs;
        let mut pc = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                pc[(i, j)] = exp_secant(self.eigvals[i], self.eigvals[j], self.beta) * c[(i, j)];
            }
        }
        Ok((&self.eigvecs * pc * self.eigvecs.transpose()).diagonal())
    }
}

/// `sup_f { beta <f, p> - sum_{x,y} Q(x,y) log K^f(x,y) }` for a
/// symmetric generator, by gradient ascent with Barzilai-Borwein step
/// lengths and backtracking.
pub fn j_q(
    p: &OccupationMeasure,
    q: &PairMeasure,
    g: &Generator,
    beta: f64,
) -> Result<f64, RateError> {
    j_q_from(p, q, g, beta, &vec![0.0; g.n()])
}

pub fn j_q_from(
    p: &OccupationMeasure,
    q: &PairMeasure,
    g: &Generator,
    beta: f64,
    f0: &[f64],
) -> Result<f64, RateError> {
    assert!(beta > 0.0);
    assert!(
        g.is_symmetric(1e-10),
        "the pair functional needs a symmetric generator"
    );
    let n = g.n();
    assert_eq!(p.weights().len(), n);
    assert_eq!(q.n(), n);
    assert_eq!(f0.len(), n);
    let a = g.killed_matrix();
    let pw = DVector::from_column_slice(p.weights());
    let eval = |f: &DVector<f64>| -> Result<(f64, DVector<f64>), RateError> {
        let calc = PotentialCalculus::new(&a, f.as_slice(), beta);
        let val = beta * pw.dot(f) - calc.log_pairing(q)?;
        let grad = &pw * beta - calc.occupation_gradient(q)?;
        Ok((val, grad))
    };

    let mut f = DVector::from_column_slice(f0);
    let (mut val, mut grad) = eval(&f)?;
    let mut alpha = 1.0 / (1.0 + beta);
    for _ in 0..10_000 {
        if grad.amax() <= 1e-8 {
            return Ok(val);
        }
        let slope = grad.norm_squared();
        let mut t = alpha;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &f + &grad * t;
            let (vc, gc) = eval(&cand)?;
            if vc >= val + 1e-4 * t * slope {
                accepted = Some((cand, vc, gc, t));
                break;
            }
            t *= 0.5;
        }
        let Some((new_f, new_val, new_grad, used_t)) = accepted else {
            return Err(RateError::NonConvergence {
                best: val,
                grad_norm: grad.amax(),
            });
        };
        let df = &new_f - &f;
        let dg = &new_grad - &grad;
        let curvature = -df.dot(&dg);
        alpha = if curvature > 0.0 {
            (df.norm_squared() / curvature).clamp(1e-8, 1e8)
        } else {
            used_t * 2.0
        };
        f = new_f;
        val = new_val;
        grad = new_grad;
    }
    Err(RateError::NonConvergence {
        best: val,
        grad_norm: grad.amax(),
    })
}

/// The potential that turns `sqrt(p)` into a ground state at eigenvalue
/// zero: `f*(z) = -(A sqrt(p))(z) / sqrt(p)(z)`.
pub fn optimal_potential(
    p: &OccupationMeasure,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<Vec<f64>, RateError> {
    let n = space.len();
    assert_eq!(p.weights().len(), n);
    for (site, &w) in p.weights().iter().enumerate() {
        if w <= 0.0 {
            return Err(RateError::ZeroMassSite { site });
        }
    }
    let a = box_operator(space, boundary);
    let u: Vec<f64> = p.weights().iter().map(|w| w.sqrt()).collect();
    Ok((0..n)
        .map(|z| {
            let au: f64 = (0..n).map(|y| a[(z, y)] * u[y]).sum();
            -au / u[z]
        })
        .collect())
}

/// `Q*(x,y) = sqrt(p(x) p(y)) K^{f*}(x,y)`; symmetric with both
/// marginals `p` because `K^{f*}` fixes `sqrt(p)`.
pub fn optimal_pair_measure(
    p: &OccupationMeasure,
    beta: f64,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<PairMeasure, RateError> {
    assert!(beta > 0.0);
    let f = optimal_potential(p, space, boundary)?;
    let a = box_operator(space, boundary);
    let calc = PotentialCalculus::new(&a, &f, beta);
    let n = space.len();
    let u: Vec<f64> = p.weights().iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::from_fn(n, n, |x, y| (u[x] * u[y] * calc.kernel[(x, y)]).max(0.0));
    let total = m.sum();
    debug_assert!(
        (total - 1.0).abs() <= 1e-10,
        "certificate mass {total} drifted"
    );
    m /= total;
    for v in m.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(PairMeasure::new(m))
}

/// Doob transform of the kernel at potential `f`: row-stochastic matrix
/// `e^{-beta lambda} K^f(x,y) u(y) / u(x)`.
pub fn martingale_kernel(
    f: &[f64],
    beta: f64,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<Kernel, RateError> {
    assert!(beta > 0.0);
    let a = box_operator(space, boundary);
    let eig = lambda_top(space, boundary, f)?;
    let calc = PotentialCalculus::new(&a, f, beta);
    let n = space.len();
    let scale = (-beta * eig.value).exp();
    let m = DMatrix::from_fn(n, n, |x, y| {
        scale * calc.kernel[(x, y)] * eig.vector[y] / eig.vector[x]
    });
    Ok(Kernel::new(m, beta, KernelKind::Martingale)?)
}

/// Stationarity mismatch at the certificate, per unit horizon: the
/// largest deviation between `beta p_z` and the `Q*`-averaged
/// conditioned occupation of site `z`.
pub fn euler_lagrange_residual(
    p: &OccupationMeasure,
    beta: f64,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<f64, RateError> {
    let f = optimal_potential(p, space, boundary)?;
    let q = optimal_pair_measure(p, beta, space, boundary)?;
    euler_lagrange_residual_at(p, &q, &f, beta, space, boundary)
}

/// Same residual at an arbitrary potential and pair measure; grows away
/// from the exact saddle.
pub fn euler_lagrange_residual_at(
    p: &OccupationMeasure,
    q: &PairMeasure,
    f: &[f64],
    beta: f64,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<f64, RateError> {
    assert!(beta > 0.0);
    let a = box_operator(space, boundary);
    let calc = PotentialCalculus::new(&a, f, beta);
    let occ = calc.occupation_gradient(q)?;
    let worst = p
        .weights()
        .iter()
        .zip(occ.iter())
        .map(|(&pz, &oz)| (beta * pz - oz).abs())
        .fold(0.0f64, f64::max);
    Ok(worst / beta)
}

/// Sandwich for the symmetrised rate: the upper bound evaluates the pair
/// functional directly at the algebraic certificate `(f*, Q*)`, the
/// lower bound is `beta` times the Legendre dual.  Targets with
/// zero-mass sites are mixed with 1e-12 uniform mass first and the
/// certificate is flagged.
pub fn j_sym(problem: &RateProblem) -> Result<SaddleCertificate, RateError> {
    let w = problem.target.weights();
    let (target, regularized) = if w.iter().any(|&v| v <= 0.0) {
        let eps = 1e-12;
        let total: f64 = w.iter().map(|v| v + eps).sum();
        (
            OccupationMeasure::new(w.iter().map(|v| (v + eps) / total).collect()),
            true,
        )
    } else {
        (problem.target.clone(), false)
    };
    let f_star = optimal_potential(&target, &problem.space, problem.boundary)?;
    let q_star = optimal_pair_measure(&target, problem.beta, &problem.space, problem.boundary)?;
    let entropy = relative_entropy(&q_star, &problem.reference);
    let a = box_operator(&problem.space, problem.boundary);
    let calc = PotentialCalculus::new(&a, &f_star, problem.beta);
    let linear: f64 = f_star
        .iter()
        .zip(target.weights())
        .map(|(f, p)| f * p)
        .sum();
    let upper = entropy + problem.beta * linear - calc.log_pairing(&q_star)?;
    let lower = problem.beta * legendre_rate(&target, &problem.space, problem.boundary)?;
    Ok(SaddleCertificate {
        f_star,
        q_star,
        lower,
        upper,
        regularized,
    })
}

fn perron_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..100_000 {
        let mut w = a * &v;
        let norm = w.norm();
        assert!(norm > 0.0, "matrix annihilated a positive vector");
        w /= norm;
        let delta = (&w - &v).amax();
        v = w;
        if delta <= 1e-15 {
            break;
        }
    }
    v
}

/// Minimum of `H(Q | Q1 x m) - <Q, log(A/m)>` over equal-marginal pair
/// measures, which only depends on `A` itself on that polytope.  Solved
/// by mirror steps `Q <- project(diag(Q1) A)` where the projection is the
/// symmetric scaling onto equal marginals; the unique minimiser and the
/// value `-log rho(A)` come from the Perron root `rho` and its left and
/// right vectors, and the iteration must agree with them to 1e-6.
pub fn pair_entropy_min(
    a: &DMatrix<f64>,
    reference: &ReferenceMeasure,
) -> Result<(f64, PairMeasure), RateError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(reference.len(), n);
    assert!(a.iter().all(|&v| v >= 0.0), "kernel must be nonnegative");
    for x in 0..n {
        assert!(a.row(x).iter().sum::<f64>() > 0.0, "row {x} has no mass");
        assert!(
            a.column(x).iter().sum::<f64>() > 0.0,
            "column {x} has no mass"
        );
    }

    let objective = |q: &DMatrix<f64>| -> f64 {
        let mut rows = vec![0.0; n];
        for x in 0..n {
            rows[x] = q.row(x).iter().sum();
        }
        let mut total = 0.0;
        for x in 0..n {
            for y in 0..n {
                let qv = q[(x, y)];
                if qv > 0.0 {
                    total += qv * (qv.ln() - rows[x].ln() - a[(x, y)].ln());
                }
            }
        }
        total
    };

    let mut q = project_equal_marginals(&(a / a.sum()));
    let mut value = objective(&q);
    for _ in 0..10_000 {
        let mut stepped = DMatrix::zeros(n, n);
        for x in 0..n {
            let row: f64 = q.row(x).iter().sum();
            for y in 0..n {
                stepped[(x, y)] = row * a[(x, y)];
            }
        }
        // Unit mirror step; geometric interpolation backs off if the
        // projected step ever overshoots.
        let mut eta = 1.0;
        let (next, next_value) = loop {
            let raw = if eta == 1.0 {
                stepped.clone()
            } else {
                DMatrix::from_fn(n, n, |x, y| {
                    q[(x, y)].powf(1.0 - eta) * stepped[(x, y)].powf(eta)
                })
            };
            let cand = project_equal_marginals(&raw);
            let cv = objective(&cand);
            if cv <= value + 1e-12 || eta < 1e-6 {
                break (cand, cv);
            }
            eta *= 0.5;
        };
        let done = (value - next_value).abs() <= 1e-13 * (1.0 + value.abs());
        q = next;
        value = next_value;
        if done {
            break;
        }
    }

    let r = perron_vector(a);
    let l = perron_vector(&a.transpose());
    let rho = l.dot(&(a * &r)) / l.dot(&r);
    let certificate_value = -rho.ln();
    let gap = (value - certificate_value).abs();
    if gap > 1e-6 {
        return Err(RateError::NonConvergence {
            best: value,
            grad_norm: gap,
        });
    }
    let z = rho * l.dot(&r);
    let mut opt = DMatrix::from_fn(n, n, |x, y| l[x] * a[(x, y)] * r[y] / z);
    let total = opt.sum();
    opt /= total;
    for v in opt.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((value, PairMeasure::new(opt)))
}

/// KL projection onto equal-marginal probability measures: diagonal
/// similarity scaling `s M s^{-1}` balanced until row and column sums
/// coincide, then mass-normalized.
fn project_equal_marginals(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut s = vec![1.0f64; n];
    let mut t = m.clone();
    for _ in 0..50_000 {
        for x in 0..n {
            for y in 0..n {
                t[(x, y)] = s[x] * m[(x, y)] / s[y];
            }
        }
        let total = t.sum();
        let mut worst = 0.0f64;
        for x in 0..n {
            let row: f64 = t.row(x).iter().sum();
            let col: f64 = t.column(x).iter().sum();
            worst = worst.max((row - col).abs());
            if row > 0.0 && col > 0.0 {
                s[x] *= (col / row).sqrt();
            }
        }
        if worst <= 1e-14 * total {
            break;
        }
    }
    &t / t.sum()
}
