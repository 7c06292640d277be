//! Traces over the symmetric subspace and the mean-field free energy.
//!
//! A system of `N` indistinguishable particles with one-body Hamiltonian `h`
//! lives on the symmetric subspace of the `N`-fold tensor power.  This module
//! builds that subspace explicitly (occupation-number basis), lifts one-body
//! sums to it, and evaluates `Tr e^{-beta H}` three ways: by diagonalising the
//! lifted operator, by the cycle-sum recursion, and (in tests) by brute-force
//! permanents.  On top of the traces sits the mean-field free energy: the
//! finite-`N` value from the lifted operator and its variational limit
//!
//! `beta * sup_u { f(u) - I(u) }`,   `I(u) = sup_a { a u - lambda_1(a) }`,
//!
//! where `lambda_1(a)` is the top eigenvalue of `a x - h`.  The telegraph
//! instance, whose rate function is known in closed form, serves as the
//! reference model throughout.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::collections::HashMap;
use thiserror::Error;

use crate::functional::ScalarFn;
use crate::markov_core::{build_generator, Generator};
use crate::pair_measure::PairMeasure;

/// Largest admissible dimension of the symmetric subspace.
const MAX_BASIS_DIM: u128 = 100_000;

/// Tilt parameters are confined to `[-TILT_CAP, TILT_CAP]`; outside the open
/// numerical range of the observable the Legendre sup is attained only in the
/// limit and the capped value is an under-approximation.
const TILT_CAP: f64 = 50.0;

#[derive(Debug, Error)]
pub enum BoseError {
    #[error("symmetric basis dimension {dim} exceeds the supported maximum {max}", max = MAX_BASIS_DIM)]
    DimensionOverflow { dim: u128 },
    #[error("argument {value} outside the domain of the rate function")]
    DomainError { value: f64 },
}

/// Occupation-number basis of the `N`-particle symmetric subspace over `n`
/// modes, enumerated with the first mode's occupation decreasing.
#[derive(Debug)]
pub struct SymmetricBasis {
    n_modes: usize,
    n_particles: usize,
    occupations: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

impl SymmetricBasis {
    pub fn new(n_modes: usize, n_particles: usize) -> Result<Self, BoseError> {
        assert!(n_modes >= 1, "need at least one mode");
        let dim = binomial((n_particles + n_modes - 1) as u128, (n_modes - 1) as u128);
        if dim > MAX_BASIS_DIM {
            return Err(BoseError::DimensionOverflow { dim });
        }
        let mut occupations = Vec::with_capacity(dim as usize);
        let mut prefix = Vec::with_capacity(n_modes);
        enumerate_occupations(n_modes, n_particles, &mut prefix, &mut occupations);
        debug_assert_eq!(occupations.len() as u128, dim);
        let index = occupations
            .iter()
            .enumerate()
            .map(|(i, occ)| (occ.clone(), i))
            .collect();
        Ok(Self {
            n_modes,
            n_particles,
            occupations,
            index,
        })
    }

    pub fn dimension(&self) -> usize {
        self.occupations.len()
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    /// Occupation vectors in basis order; each has length `n_modes` and sums
    /// to `n_particles`.
    pub fn occupations(&self) -> &[Vec<usize>] {
        &self.occupations
    }

    pub fn index_of(&self, occupation: &[usize]) -> Option<usize> {
        self.index.get(occupation).copied()
    }
}

fn enumerate_occupations(
    n_modes: usize,
    remaining: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() + 1 == n_modes {
        let mut occ = prefix.clone();
        occ.push(remaining);
        out.push(occ);
        return;
    }
    for k in (0..=remaining).rev() {
        prefix.push(k);
        enumerate_occupations(n_modes, remaining - k, prefix, out);
        prefix.pop();
    }
}

/// Second-quantised form of the one-body sum `a_1 + ... + a_N` on the
/// symmetric subspace: diagonal `sum_j n_j a[j][j]`, and moving one particle
/// from mode `k` to mode `j` carries amplitude `a[j][k] sqrt(n_k (n_j + 1))`.
pub fn lift_sum_operator(a: &DMatrix<f64>, basis: &SymmetricBasis) -> DMatrix<f64> {
    assert_eq!(a.nrows(), a.ncols(), "one-body operator must be square");
    assert_eq!(
        a.nrows(),
        basis.n_modes(),
        "operator and basis dimensions differ"
    );
    let dim = basis.dimension();
    let n_modes = basis.n_modes();
    let mut lifted = DMatrix::<f64>::zeros(dim, dim);
    for (col, occ) in basis.occupations().iter().enumerate() {
        let mut diag = 0.0;
        for j in 0..n_modes {
            diag += occ[j] as f64 * a[(j, j)];
        }
        lifted[(col, col)] = diag;
        for k in 0..n_modes {
            if occ[k] == 0 {
                continue;
            }
            for j in 0..n_modes {
                if j == k {
                    continue;
                }
                let mut target = occ.clone();
                target[k] -= 1;
                target[j] += 1;
                let row = basis
                    .index_of(&target)
                    .expect("moved occupation stays in the basis");
                let amp = a[(j, k)] * ((occ[k] * (occ[j] + 1)) as f64).sqrt();
                lifted[(row, col)] += amp;
            }
        }
    }
    lifted
}

fn assert_symmetric(m: &DMatrix<f64>, what: &str) {
    let scale = 1.0 + m.amax();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            assert!(
                (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale,
                "{what} must be symmetric"
            );
        }
    }
}

fn logsumexp(terms: &[f64]) -> f64 {
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// `Tr e^{-beta H}` by direct diagonalisation of an operator already
/// expressed on the symmetric subspace.
pub fn symmetric_trace_exact(h_sym: &DMatrix<f64>, beta: f64) -> f64 {
    assert_eq!(h_sym.nrows(), h_sym.ncols());
    assert_symmetric(h_sym, "subspace operator");
    let eig = SymmetricEigen::new(h_sym.clone());
    eig.eigenvalues.iter().map(|l| (-beta * l).exp()).sum()
}

/// `Tr e^{-beta (h_1 + ... + h_N)}` over the symmetric subspace via the
/// cycle-sum recursion `T_N = (1/N) sum_k Tr(e^{-k beta h}) T_{N-k}`,
/// accumulated in log space.  Needs only the one-body spectrum, so it scales
/// to particle numbers far beyond what the explicit basis supports.
pub fn symmetric_trace_cycles(h: &DMatrix<f64>, beta: f64, n_particles: usize) -> f64 {
    log_symmetric_trace_cycles(h, beta, n_particles).exp()
}

/// Log of [`symmetric_trace_cycles`]; safe when the trace itself would
/// overflow.
pub fn log_symmetric_trace_cycles(h: &DMatrix<f64>, beta: f64, n_particles: usize) -> f64 {
    assert_eq!(h.nrows(), h.ncols());
    assert_symmetric(h, "one-body operator");
    let eig = SymmetricEigen::new(h.clone());
    let lam: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    // log Tr(e^{-k beta h}) = logsumexp_j(-k beta lambda_j)
    let log_tr: Vec<f64> = (1..=n_particles)
        .map(|k| {
            let terms: Vec<f64> = lam.iter().map(|l| -(k as f64) * beta * l).collect();
            logsumexp(&terms)
        })
        .collect();
    let mut log_s = vec![0.0; n_particles + 1];
    for m in 1..=n_particles {
        let terms: Vec<f64> = (1..=m).map(|k| log_tr[k - 1] + log_s[m - k]).collect();
        log_s[m] = logsumexp(&terms) - (m as f64).ln();
    }
    log_s[n_particles]
}

/// Mean-field data: one-body Hamiltonian `h`, observable `x`, functional `f`
/// of the empirical mean `(x_1 + ... + x_N)/N`, both matrices symmetric.
pub struct MeanFieldProblem {
    h: DMatrix<f64>,
    x: DMatrix<f64>,
    f: ScalarFn,
    beta: f64,
    n_particles: usize,
}

impl MeanFieldProblem {
    pub fn new(
        h: DMatrix<f64>,
        x: DMatrix<f64>,
        f: ScalarFn,
        beta: f64,
        n_particles: usize,
    ) -> Self {
        assert_eq!(h.nrows(), h.ncols());
        assert_eq!(x.nrows(), x.ncols());
        assert_eq!(h.nrows(), x.nrows(), "h and x must act on the same space");
        assert_symmetric(&h, "one-body hamiltonian");
        assert_symmetric(&x, "observable");
        assert!(beta > 0.0, "inverse temperature must be positive");
        assert!(n_particles >= 1, "need at least one particle");
        Self {
            h,
            x,
            f,
            beta,
            n_particles,
        }
    }

    pub fn hamiltonian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn observable(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn functional(&self) -> ScalarFn {
        self.f
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }
}

/// `sum_i h_i - N f(mean x)` on the symmetric subspace; the functional acts
/// through the spectral calculus of the lifted mean observable.
pub fn mean_field_operator(prob: &MeanFieldProblem) -> Result<DMatrix<f64>, BoseError> {
    let basis = SymmetricBasis::new(prob.h.nrows(), prob.n_particles)?;
    let lifted_h = lift_sum_operator(&prob.h, &basis);
    let lifted_x = lift_sum_operator(&prob.x, &basis);
    let n = prob.n_particles as f64;
    let eig = SymmetricEigen::new(lifted_x);
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|d| n * prob.f.eval(d / n)),
    );
    let n_f = &eig.eigenvectors * DMatrix::from_diagonal(&scaled) * eig.eigenvectors.transpose();
    Ok(lifted_h - n_f)
}

/// `(1/N) log Tr exp(-beta (sum h_i - N f(mean x)))` over the symmetric
/// subspace, evaluated from the lifted spectrum in log space.
pub fn finite_n_mean_field_free_energy(prob: &MeanFieldProblem) -> Result<f64, BoseError> {
    let op = mean_field_operator(prob)?;
    let eig = SymmetricEigen::new(op);
    let terms: Vec<f64> = eig.eigenvalues.iter().map(|l| -prob.beta * l).collect();
    Ok(logsumexp(&terms) / prob.n_particles as f64)
}

fn top_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    (
        eig.eigenvalues[best],
        eig.eigenvectors.column(best).into_owned(),
    )
}

/// Top eigenvalue `lambda_1(a)` of the tilted operator `a x - h`.
pub fn tilt_eigenvalue(h: &DMatrix<f64>, x: &DMatrix<f64>, a: f64) -> f64 {
    top_eigenpair(&(x * a - h)).0
}

/// Legendre transform `sup_a { a u - lambda_1(a) }`, solved by bisection on
/// the stationarity condition `<v_a, x v_a> = u`; `lambda_1` is convex so the
/// derivative is nondecreasing in `a`.  Tilts are capped at `TILT_CAP`, which
/// truncates the sup when `u` sits at the edge of the observable's range.
pub fn inner_rate(h: &DMatrix<f64>, x: &DMatrix<f64>, u: f64) -> f64 {
    let slope = |a: f64| -> f64 {
        let (_, v) = top_eigenpair(&(x * a - h));
        (v.transpose() * x * &v)[(0, 0)] / v.norm_squared()
    };
    let mut lo = -1.0;
    let mut hi = 1.0;
    while slope(lo) > u && lo > -TILT_CAP {
        lo = (lo * 2.0).max(-TILT_CAP);
    }
    while slope(hi) < u && hi < TILT_CAP {
        hi = (hi * 2.0).min(TILT_CAP);
    }
    let mut iter = 0;
    while hi - lo > 1e-12 && iter < 200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let a = 0.5 * (lo + hi);
    a * u - tilt_eigenvalue(h, x, a)
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > tol {
        let m1 = hi - ratio * (hi - lo);
        let m2 = lo + ratio * (hi - lo);
        if f(m1) >= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let u = 0.5 * (lo + hi);
    (u, f(u))
}

/// Limiting free energy `beta sup_u { f(u) - I(u) }`.  The sup is scanned on
/// the supplied grid and refined by golden-section search between the grid
/// neighbours of the best point.
///
/// The grid should cover the numerical range of the observable; values of `u`
/// outside it make `I(u) = +infinity` in principle and a large capped value
/// here, so they never win the sup.
pub fn variational_mean_field_free_energy(prob: &MeanFieldProblem, u_grid: &[f64]) -> f64 {
    assert!(u_grid.len() >= 2, "grid needs at least two points");
    let score = |u: f64| prob.f.eval(u) - inner_rate(&prob.h, &prob.x, u);
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &u) in u_grid.iter().enumerate() {
        let v = score(u);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let lo = u_grid[best.saturating_sub(1)];
    let hi = u_grid[(best + 1).min(u_grid.len() - 1)];
    let (_, refined) = golden_max(&score, lo, hi, 1e-8);
    prob.beta * refined.max(best_val)
}

/// The two-state flip chain with rate 1/2: `h = [[1/2, -1/2], [-1/2, 1/2]]`.
pub fn telegraph_generator() -> Generator {
    build_generator(DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]))
        .expect("telegraph matrix satisfies the generator conventions")
}

/// Spin observable of the telegraph model, `diag(1, -1)`.
pub fn telegraph_observable() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

/// Closed-form occupation rate of the telegraph model,
/// `I(u) = (1 - sqrt(1 - u^2)) / 2` on `[-1, 1]`.
pub fn telegraph_rate(u: f64) -> Result<f64, BoseError> {
    if u.abs() > 1.0 {
        return Err(BoseError::DomainError { value: u });
    }
    Ok(0.5 * (1.0 - (1.0 - u * u).sqrt()))
}

/// `<Q, log p_beta>`: the endpoint-density correction that converts
/// unconditioned path expectations into bridge expectations.  Summed over the
/// support of `Q`; requires `p_beta > 0` there.
pub fn endpoint_correction(q: &PairMeasure, g: &Generator, beta: f64) -> f64 {
    let n = g.n();
    assert_eq!(q.n(), n, "pair measure and generator dimensions differ");
    let p = crate::markov_core::transition_kernel(g, beta)
        .expect("validated generator yields a transition kernel");
    let mut acc = 0.0;
    for x in 0..n {
        for y in 0..n {
            let w = q.entry(x, y);
            if w == 0.0 {
                continue;
            }
            let k = p.entry(x, y);
            assert!(k > 0.0, "transition density vanishes on the support of Q");
            acc += w * k.ln();
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functional::ScalarFn;
    use nalgebra::DMatrix;

    fn two_mode_h(a: f64, b: f64, c: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, b, c])
    }

    #[test]
    fn basis_enumeration_is_descending_in_the_first_mode() {
        let basis = SymmetricBasis::new(2, 2).unwrap();
        assert_eq!(basis.dimension(), 3);
        assert_eq!(basis.occupations()[0], vec![2, 0]);
        assert_eq!(basis.occupations()[1], vec![1, 1]);
        assert_eq!(basis.occupations()[2], vec![0, 2]);
        assert_eq!(basis.index_of(&[1, 1]), Some(1));

        let basis = SymmetricBasis::new(3, 2).unwrap();
        assert_eq!(basis.dimension(), 6);
        for occ in basis.occupations() {
            assert_eq!(occ.iter().sum::<usize>(), 2);
        }
    }

    #[test]
    fn oversized_basis_is_rejected() {
        let err = SymmetricBasis::new(10, 12).unwrap_err();
        match err {
            BoseError::DimensionOverflow { dim } => assert!(dim > 100_000),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn lifted_identity_counts_particles() {
        let basis = SymmetricBasis::new(3, 3).unwrap();
        let lifted = lift_sum_operator(&DMatrix::identity(3, 3), &basis);
        let expected = DMatrix::<f64>::identity(basis.dimension(), basis.dimension()) * 3.0;
        assert_eq!(lifted, expected);
    }

    #[test]
    fn lifted_diagonal_weights_by_occupation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, -0.4]);
        let basis = SymmetricBasis::new(2, 3).unwrap();
        let lifted = lift_sum_operator(&a, &basis);
        for (i, occ) in basis.occupations().iter().enumerate() {
            let want = occ[0] as f64 * 0.7 + occ[1] as f64 * (-0.4);
            assert!((lifted[(i, i)] - want).abs() < 1e-14);
            for j in 0..basis.dimension() {
                if j != i {
                    assert_eq!(lifted[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn two_particle_lift_has_pair_sum_spectrum() {
        let a = two_mode_h(0.9, 0.35, -0.2);
        let eig_a = SymmetricEigen::new(a.clone());
        let mut alphas: Vec<f64> = eig_a.eigenvalues.iter().cloned().collect();
        alphas.sort_by(f64::total_cmp);

        let basis = SymmetricBasis::new(2, 2).unwrap();
        let lifted = lift_sum_operator(&a, &basis);
        let mut got: Vec<f64> = SymmetricEigen::new(lifted)
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        got.sort_by(f64::total_cmp);

        let mut want = vec![2.0 * alphas[0], alphas[0] + alphas[1], 2.0 * alphas[1]];
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "lift spectrum {got:?} vs {want:?}");
        }
    }

    #[test]
    fn single_particle_trace_is_the_plain_trace() {
        let h = two_mode_h(0.4, -0.3, 1.1);
        let beta = 0.8;
        let basis = SymmetricBasis::new(2, 1).unwrap();
        let lifted = lift_sum_operator(&h, &basis);
        assert_eq!(lifted, h);
        let direct: f64 = SymmetricEigen::new(h.clone())
            .eigenvalues
            .iter()
            .map(|l| (-beta * l).exp())
            .sum();
        assert!((symmetric_trace_exact(&lifted, beta) - direct).abs() < 1e-12);
        assert!((symmetric_trace_cycles(&h, beta, 1) - direct).abs() < 1e-12);
    }

    #[test]
    fn single_mode_trace_is_a_pure_exponential() {
        let h = DMatrix::from_row_slice(1, 1, &[0.65]);
        for n in 1..=6 {
            let got = symmetric_trace_cycles(&h, 1.3, n);
            let want = (-1.3 * 0.65 * n as f64).exp();
            assert!((got - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn two_mode_pair_trace_matches_the_closed_form() {
        let h = two_mode_h(0.2, -0.45, 0.9);
        let beta = 0.7;
        let eig = SymmetricEigen::new(h.clone());
        let q1 = (-beta * eig.eigenvalues[0]).exp();
        let q2 = (-beta * eig.eigenvalues[1]).exp();
        let want = q1 * q1 + q1 * q2 + q2 * q2;

        let cycles = symmetric_trace_cycles(&h, beta, 2);
        assert!((cycles - want).abs() < 1e-12 * want);

        let basis = SymmetricBasis::new(2, 2).unwrap();
        let exact = symmetric_trace_exact(&lift_sum_operator(&h, &basis), beta);
        assert!((exact - want).abs() < 1e-12 * want);
    }

    #[test]
    fn telegraph_traces_agree_between_routes() {
        let h = two_mode_h(0.5, -0.5, 0.5);
        let beta = 1.0;
        let basis = SymmetricBasis::new(2, 3).unwrap();
        let exact = symmetric_trace_exact(&lift_sum_operator(&h, &basis), beta);
        let cycles = symmetric_trace_cycles(&h, beta, 3);
        assert!(
            (exact - cycles).abs() < 1e-12 * exact,
            "exact {exact} vs cycles {cycles}"
        );
    }

    #[test]
    fn zero_functional_leaves_the_lifted_hamiltonian() {
        let h = two_mode_h(0.3, -0.2, -0.1);
        let x = telegraph_observable();
        let prob = MeanFieldProblem::new(h.clone(), x, ScalarFn::Constant(0.0), 1.0, 3);
        let op = mean_field_operator(&prob).unwrap();
        let basis = SymmetricBasis::new(2, 3).unwrap();
        let lifted = lift_sum_operator(&h, &basis);
        assert!((op - lifted).amax() < 1e-12);
    }

    #[test]
    fn linear_functional_folds_into_the_one_body_term() {
        let h = two_mode_h(0.5, -0.5, 0.5);
        let x = two_mode_h(1.0, 0.25, -1.0);
        let c = 0.6;
        let prob = MeanFieldProblem::new(h.clone(), x.clone(), ScalarFn::Linear(c), 0.9, 3);
        let op = mean_field_operator(&prob).unwrap();
        let basis = SymmetricBasis::new(2, 3).unwrap();
        let folded = lift_sum_operator(&(h - x * c), &basis);
        assert!((op - folded).amax() < 1e-11);
    }

    #[test]
    fn squared_mean_spin_gives_the_expected_diagonal() {
        // x = diag(1, -1), f(u) = u^2, N = 2: N f(mean x) is diagonal with
        // entries 2, 0, 2 in occupation order (2,0), (1,1), (0,2).
        let prob = MeanFieldProblem::new(
            DMatrix::zeros(2, 2),
            telegraph_observable(),
            ScalarFn::Quadratic {
                a: 1.0,
                b: 0.0,
                c: 0.0,
            },
            1.0,
            2,
        );
        let op = mean_field_operator(&prob).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[-2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -2.0]);
        assert!((op - want).amax() < 1e-12);
    }

    #[test]
    fn single_particle_free_energy_reduces_to_the_plain_spectrum() {
        let h = two_mode_h(0.5, -0.5, 0.5);
        let x = telegraph_observable();
        let c = 0.4;
        let beta = 1.2;
        let prob = MeanFieldProblem::new(h.clone(), x.clone(), ScalarFn::Linear(c), beta, 1);
        let got = finite_n_mean_field_free_energy(&prob).unwrap();
        let shifted = h - x * c;
        let want: f64 = SymmetricEigen::new(shifted)
            .eigenvalues
            .iter()
            .map(|l| (-beta * l).exp())
            .sum::<f64>()
            .ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn zero_functional_free_energy_matches_the_cycle_recursion() {
        let h = two_mode_h(0.35, -0.15, 0.85);
        let beta = 0.75;
        for n in 1..=4 {
            let prob = MeanFieldProblem::new(
                h.clone(),
                telegraph_observable(),
                ScalarFn::Constant(0.0),
                beta,
                n,
            );
            let via_basis = finite_n_mean_field_free_energy(&prob).unwrap();
            let via_cycles = symmetric_trace_cycles(&h, beta, n).ln() / n as f64;
            assert!(
                (via_basis - via_cycles).abs() < 1e-12,
                "n = {n}: {via_basis} vs {via_cycles}"
            );
        }
    }

    #[test]
    fn diagonal_problem_has_a_counting_closed_form() {
        // h = 0, x = diag(1,-1), f(u) = u^2: the lifted operator is diagonal
        // in the occupation basis, so the trace is a sum over occupation
        // splits k of exp(beta N ((2k - N)/N)^2).
        let n_particles = 5;
        let beta = 0.6;
        let prob = MeanFieldProblem::new(
            DMatrix::zeros(2, 2),
            telegraph_observable(),
            ScalarFn::Quadratic {
                a: 1.0,
                b: 0.0,
                c: 0.0,
            },
            beta,
            n_particles,
        );
        let got = finite_n_mean_field_free_energy(&prob).unwrap();
        let nf = n_particles as f64;
        let direct: f64 = (0..=n_particles)
            .map(|k| {
                let u = (2.0 * k as f64 - nf) / nf;
                (beta * nf * u * u).exp()
            })
            .sum();
        let want = direct.ln() / nf;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn telegraph_rate_has_the_known_values() {
        assert_eq!(telegraph_rate(0.0).unwrap(), 0.0);
        assert!((telegraph_rate(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((telegraph_rate(-1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((telegraph_rate(0.6).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(
            telegraph_rate(1.0 + 1e-9),
            Err(BoseError::DomainError { .. })
        ));
    }

    #[test]
    fn telegraph_tilt_eigenvalue_matches_the_closed_form() {
        let g = telegraph_generator();
        let x = telegraph_observable();
        for a in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let got = tilt_eigenvalue(g.h(), &x, a);
            let want = 0.5 * ((1.0 + 4.0 * a * a).sqrt() - 1.0);
            assert!((got - want).abs() < 1e-12, "a = {a}: {got} vs {want}");
        }
    }

    #[test]
    fn telegraph_inner_rate_matches_the_closed_form() {
        let g = telegraph_generator();
        let x = telegraph_observable();
        for u in [0.0, 0.3, -0.3, 0.6, -0.6, 0.9, -0.9] {
            let got = inner_rate(g.h(), &x, u);
            let want = telegraph_rate(u).unwrap();
            assert!((got - want).abs() < 1e-8, "u = {u}: {got} vs {want}");
        }
    }

    #[test]
    fn linear_tilts_recover_the_tilted_eigenvalue() {
        let g = telegraph_generator();
        let x = telegraph_observable();
        let grid: Vec<f64> = (0..=100).map(|i| -0.99 + 1.98 * i as f64 / 100.0).collect();
        for beta in [0.8, 1.0] {
            for c in [0.25, 0.75] {
                let prob =
                    MeanFieldProblem::new(g.h().clone(), x.clone(), ScalarFn::Linear(c), beta, 2);
                let got = variational_mean_field_free_energy(&prob, &grid);
                let want = beta * 0.5 * ((1.0 + 4.0 * c * c).sqrt() - 1.0);
                assert!(
                    (got - want).abs() < 1e-6 * want.abs(),
                    "beta = {beta}, c = {c}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn constant_functional_shifts_the_free_energy_linearly() {
        let g = telegraph_generator();
        let x = telegraph_observable();
        let grid: Vec<f64> = (0..=100).map(|i| -0.99 + 1.98 * i as f64 / 100.0).collect();
        let beta = 1.4;
        let c = 0.55;
        let prob = MeanFieldProblem::new(g.h().clone(), x, ScalarFn::Constant(c), beta, 2);
        let got = variational_mean_field_free_energy(&prob, &grid);
        assert!((got - beta * c).abs() < 1e-8, "{got} vs {}", beta * c);
    }

    #[test]
    fn endpoint_correction_sums_log_transition_densities() {
        let g = telegraph_generator();
        let beta = 0.9;
        let q = PairMeasure::new(DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.2, 0.3]));
        let p = crate::markov_core::transition_kernel(&g, beta).unwrap();
        let mut want = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                want += q.entry(x, y) * p.entry(x, y).ln();
            }
        }
        let got = endpoint_correction(&q, &g, beta);
        assert!((got - want).abs() < 1e-14);
    }
}
