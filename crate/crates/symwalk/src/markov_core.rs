//! Finite-state Markov generators and the matrix calculus built on them.
//!
//! The central object is [`Generator`]: a matrix `h` with nonpositive
//! off-diagonal entries, from which three derived quantities are kept in
//! lockstep:
//!
//! * `htilde`, equal to `h` off the diagonal with diagonal entries chosen so
//!   that every column sums to zero (the conservative part);
//! * the potential `h_d[x] = htilde[x][x] - h[x][x]`;
//! * the row-convention jump-rate matrix `L[x][y] = -htilde[y][x]`, whose rows
//!   sum to zero.
//!
//! Transition kernels are `exp(t L)` read in row convention, so
//! `kernel[x][y] = P(state y at time t | state x at time 0)`, which is the
//! same matrix as `exp(-t htilde)` read in column convention.  The killed
//! matrix `-h^T = L + diag(h_d)` generates the walk with soft killing at rate
//! `-h_d`; its exponential is the Boltzmann kernel and, equivalently, the
//! Feynman-Kac kernel with potential `h_d`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("off-diagonal entry h[{row}][{col}] = {value} is positive")]
    PositiveOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("matrix exponential produced non-finite entries")]
    NonfiniteExponential,
    #[error("off-diagonal pattern is reducible; principal eigenvector not unique")]
    Reducible,
}

/// Neighbour relation used for lattice boxes.
///
/// `L1` is the 2d-neighbour relation (differ by one in exactly one
/// coordinate); `LInf` is the max-norm relation with 3^d - 1 neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adjacency {
    L1,
    LInf,
}

/// Boundary convention for the box Laplacian.
///
/// `Absorbing` keeps the full lattice degree on the diagonal, so mass leaks
/// through the boundary (zero extension outside the box).  `Internal` uses
/// the in-box degree and conserves mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Absorbing,
    Internal,
}

#[derive(Clone, Debug)]
enum SpaceKind {
    Abstract {
        n: usize,
    },
    Lattice {
        lo: Vec<i64>,
        hi: Vec<i64>,
        adjacency: Adjacency,
        points: Vec<Vec<i64>>,
        index: HashMap<Vec<i64>, usize>,
    },
}

/// An ordered finite state space: either abstract indices `0..n` or the
/// integer points of a box in `Z^d` with a nearest-neighbour relation.
#[derive(Clone, Debug)]
pub struct StateSpace {
    kind: SpaceKind,
}

impl StateSpace {
    /// Abstract index space `{0, .., n-1}` with no adjacency structure.
    pub fn indices(n: usize) -> Self {
        assert!(n > 0, "state space must be nonempty");
        StateSpace {
            kind: SpaceKind::Abstract { n },
        }
    }

    /// Box `prod_k [lo[k], hi[k]]` in `Z^d` with l1 nearest-neighbour adjacency.
    pub fn lattice_box(lo: &[i64], hi: &[i64]) -> Self {
        Self::lattice_box_with(lo, hi, Adjacency::L1)
    }

    pub fn lattice_box_with(lo: &[i64], hi: &[i64], adjacency: Adjacency) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal dimension");
        assert!(!lo.is_empty(), "box must have dimension at least 1");
        assert!(
            lo.iter().zip(hi).all(|(a, b)| a <= b),
            "each box interval must be nonempty"
        );
        let d = lo.len();
        let mut points = vec![vec![0i64; d]];
        for k in 0..d {
            let mut next = Vec::new();
            for p in &points {
                for v in lo[k]..=hi[k] {
                    let mut q = p.clone();
                    q[k] = v;
                    next.push(q);
                }
            }
            points = next;
        }
        let index = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        StateSpace {
            kind: SpaceKind::Lattice {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
                adjacency,
                points,
                index,
            },
        }
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            SpaceKind::Abstract { n } => *n,
            SpaceKind::Lattice { points, .. } => points.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.kind, SpaceKind::Lattice { .. })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SpaceKind::Abstract { .. } => 0,
            SpaceKind::Lattice { lo, .. } => lo.len(),
        }
    }

    /// Box bounds `(lo, hi)`; `None` on abstract spaces.
    pub fn bounds(&self) -> Option<(&[i64], &[i64])> {
        match &self.kind {
            SpaceKind::Abstract { .. } => None,
            SpaceKind::Lattice { lo, hi, .. } => Some((lo, hi)),
        }
    }

    /// Lattice coordinates of state `i`; panics on abstract spaces.
    pub fn point(&self, i: usize) -> &[i64] {
        match &self.kind {
            SpaceKind::Abstract { .. } => panic!("abstract state space has no lattice points"),
            SpaceKind::Lattice { points, .. } => &points[i],
        }
    }

    pub fn index_of(&self, point: &[i64]) -> Option<usize> {
        match &self.kind {
            SpaceKind::Abstract { .. } => None,
            SpaceKind::Lattice { index, .. } => index.get(point).copied(),
        }
    }

    fn neighbour_offsets(&self) -> Vec<Vec<i64>> {
        let (d, adjacency) = match &self.kind {
            SpaceKind::Abstract { .. } => panic!("abstract state space has no adjacency"),
            SpaceKind::Lattice { lo, adjacency, .. } => (lo.len(), *adjacency),
        };
        match adjacency {
            Adjacency::L1 => {
                let mut offs = Vec::with_capacity(2 * d);
                for k in 0..d {
                    for s in [-1i64, 1] {
                        let mut o = vec![0i64; d];
                        o[k] = s;
                        offs.push(o);
                    }
                }
                offs
            }
            Adjacency::LInf => {
                let mut offs = vec![vec![]];
                for _ in 0..d {
                    let mut next = Vec::new();
                    for o in &offs {
                        for s in [-1i64, 0, 1] {
                            let mut q = o.clone();
                            q.push(s);
                            next.push(q);
                        }
                    }
                    offs = next;
                }
                offs.retain(|o| o.iter().any(|&s| s != 0));
                offs
            }
        }
    }

    /// Number of neighbours of any site in the full lattice: 2d for l1,
    /// 3^d - 1 for the max norm.
    pub fn full_degree(&self) -> usize {
        self.neighbour_offsets().len()
    }

    /// Indices of in-box neighbours of state `i`.
    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        let p = self.point(i).to_vec();
        self.neighbour_offsets()
            .iter()
            .filter_map(|o| {
                let q: Vec<i64> = p.iter().zip(o).map(|(a, b)| a + b).collect();
                self.index_of(&q)
            })
            .collect()
    }

    pub fn in_box_degree(&self, i: usize) -> usize {
        self.neighbours(i).len()
    }

    /// Number of neighbours of `i` lying outside the box.
    pub fn boundary_deficit(&self, i: usize) -> usize {
        self.full_degree() - self.in_box_degree(i)
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        i != j && self.neighbours(i).contains(&j)
    }
}

/// A validated Markov generator; see the module docs for conventions.
#[derive(Clone, Debug)]
pub struct Generator {
    h: DMatrix<f64>,
    htilde: DMatrix<f64>,
    h_d: DVector<f64>,
    l: DMatrix<f64>,
}

impl Generator {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn htilde(&self) -> &DMatrix<f64> {
        &self.htilde
    }

    /// Diagonal potential `h_d[x] = htilde[x][x] - h[x][x]`.
    pub fn h_d(&self) -> &DVector<f64> {
        &self.h_d
    }

    /// Row-convention jump-rate matrix; rows sum to zero.
    pub fn rate_matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `-h^T`: the rate matrix of the walk killed at rate `-h_d`, equal to
    /// `L + diag(h_d)`.  For a box Laplacian in absorbing mode this is the
    /// Laplacian matrix itself.
    pub fn killed_matrix(&self) -> DMatrix<f64> {
        -self.h.transpose()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.h.nrows();
        (0..n).all(|i| (0..i).all(|j| (self.h[(i, j)] - self.h[(j, i)]).abs() <= tol))
    }
}

/// Kind tag for [`Kernel`]; transition and martingale kernels are
/// row-stochastic, the other two are nonnegative but not normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Transition,
    FeynmanKac,
    Boltzmann,
    Martingale,
}

/// A nonnegative kernel matrix in row convention together with its time
/// horizon.
#[derive(Clone, Debug)]
pub struct Kernel {
    matrix: DMatrix<f64>,
    horizon: f64,
    kind: KernelKind,
}

impl Kernel {
    /// Stochasticity tolerance for transition and martingale kernels.
    pub const ROW_SUM_TOL: f64 = 1e-10;

    pub(crate) fn new(
        mut matrix: DMatrix<f64>,
        horizon: f64,
        kind: KernelKind,
    ) -> Result<Self, MarkovError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(MarkovError::NonfiniteExponential);
        }
        // Matrix exponentials of nonnegative kernels can carry roundoff of
        // order 1e-16 below zero; clamp it, fail on anything larger.
        for v in matrix.iter_mut() {
            if *v < 0.0 {
                assert!(
                    *v > -1e-10,
                    "kernel entry {v} is negative beyond roundoff tolerance"
                );
                *v = 0.0;
            }
        }
        if matches!(kind, KernelKind::Transition | KernelKind::Martingale) {
            for x in 0..matrix.nrows() {
                let s: f64 = matrix.row(x).iter().sum();
                assert!(
                    (s - 1.0).abs() <= Self::ROW_SUM_TOL,
                    "row {x} of a {kind:?} kernel sums to {s}, not 1"
                );
            }
        }
        Ok(Kernel {
            matrix,
            horizon,
            kind,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.matrix[(x, y)]
    }
}

/// Maximal eigenvalue of a symmetric matrix with its positive, l2-normalized
/// eigenvector.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Validates `h` and derives `htilde`, `h_d` and `L`.
pub fn build_generator(h: DMatrix<f64>) -> Result<Generator, MarkovError> {
    assert_eq!(h.nrows(), h.ncols(), "generator matrix must be square");
    assert!(
        h.iter().all(|v| v.is_finite()),
        "generator entries must be finite"
    );
    let n = h.nrows();
    for x in 0..n {
        for y in 0..n {
            if y != x && h[(y, x)] > 0.0 {
                return Err(MarkovError::PositiveOffDiagonal {
                    row: y,
                    col: x,
                    value: h[(y, x)],
                });
            }
        }
    }
    let mut htilde = h.clone();
    for x in 0..n {
        let off: f64 = (0..n).filter(|&z| z != x).map(|z| h[(z, x)]).sum();
        // Column x of htilde sums to zero exactly: the diagonal is the
        // negated sum of the very same off-diagonal entries.
        htilde[(x, x)] = -off;
    }
    let h_d = DVector::from_fn(n, |x, _| htilde[(x, x)] - h[(x, x)]);
    let l = DMatrix::from_fn(n, n, |x, y| -htilde[(y, x)]);
    Ok(Generator { h, htilde, h_d, l })
}

/// Dense matrix exponential: spectral for symmetric input, Pade
/// scaling-and-squaring otherwise.
pub(crate) fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MarkovError> {
    let n = m.nrows();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let sym =
        (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale.max(1.0)));
    let e = if sym {
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = eig.eigenvalues[i].exp();
        }
        &eig.eigenvectors * d * eig.eigenvectors.transpose()
    } else {
        m.exp()
    };
    if e.iter().any(|v| !v.is_finite()) {
        return Err(MarkovError::NonfiniteExponential);
    }
    Ok(e)
}

/// `kernel[x][y] = P(state y at t | state x at 0) = exp(t L)[x][y]`.
pub fn transition_kernel(g: &Generator, t: f64) -> Result<Kernel, MarkovError> {
    if t < 0.0 {
        return Err(MarkovError::NegativeTime(t));
    }
    let e = expm(&(g.rate_matrix() * t))?;
    Kernel::new(e, t, KernelKind::Transition)
}

/// Feynman-Kac kernel `E_x(exp(int_0^beta f(xi_s) ds); xi stays in the
/// confinement set; xi_beta = y)`, computed as `exp(beta (L + diag f))` with
/// rows and columns outside the set zeroed before exponentiation.
///
/// Without confinement the whole space is used.  Rows and columns outside
/// the confinement set are identically zero in the result.
pub fn feynman_kac_kernel(
    g: &Generator,
    f: &[f64],
    beta: f64,
    confine: Option<&[usize]>,
) -> Result<Kernel, MarkovError> {
    if beta < 0.0 {
        return Err(MarkovError::NegativeTime(beta));
    }
    let n = g.n();
    assert_eq!(f.len(), n, "potential must have one value per state");
    let mut m = g.rate_matrix().clone();
    for x in 0..n {
        m[(x, x)] += f[x];
    }
    let inside: Vec<bool> = match confine {
        None => vec![true; n],
        Some(set) => {
            let mut v = vec![false; n];
            for &i in set {
                assert!(i < n, "confinement index {i} out of range");
                v[i] = true;
            }
            v
        }
    };
    for x in 0..n {
        for y in 0..n {
            if !inside[x] || !inside[y] {
                m[(x, y)] = 0.0;
            }
        }
    }
    let mut e = expm(&(m * beta))?;
    // The zeroed block exponentiates to the identity plus eigendecomposition
    // dust; outside states carry no Feynman-Kac mass, so clear it exactly.
    for x in 0..n {
        for y in 0..n {
            if !inside[x] || !inside[y] {
                e[(x, y)] = 0.0;
            }
        }
    }
    Kernel::new(e, beta, KernelKind::FeynmanKac)
}

/// Boltzmann kernel `kernel[x][y] = exp(-beta h)[y][x]`.  Equals the
/// Feynman-Kac kernel with potential `h_d` (same matrix, since
/// `L + diag(h_d) = -h^T`).
pub fn boltzmann_kernel(g: &Generator, beta: f64) -> Result<Kernel, MarkovError> {
    if beta < 0.0 {
        return Err(MarkovError::NegativeTime(beta));
    }
    let e = expm(&(-g.h() * beta))?;
    Kernel::new(e.transpose(), beta, KernelKind::Boltzmann)
}

/// Box Laplacian as a [`Generator`].
///
/// Absorbing mode: `A[x][x] = -(full lattice degree)`, off-diagonal 1 for
/// in-box neighbours, so mass leaks at the boundary; the matrix `A` is
/// recovered as [`Generator::killed_matrix`].  Internal mode:
/// `A[x][x] = -(in-box degree)`, conservative, and `A` equals the rate
/// matrix `L` itself.
pub fn lattice_laplacian(space: &StateSpace, boundary: Boundary) -> Generator {
    assert!(
        space.is_lattice(),
        "lattice_laplacian requires a lattice box"
    );
    let n = space.len();
    let mut h = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in space.neighbours(x) {
            h[(x, y)] = -1.0;
        }
        h[(x, x)] = match boundary {
            Boundary::Absorbing => space.full_degree() as f64,
            Boundary::Internal => space.in_box_degree(x) as f64,
        };
    }
    build_generator(h).expect("box Laplacian is a valid generator")
}

fn pattern_is_irreducible(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(x) = stack.pop() {
        for y in 0..n {
            if y != x && !seen[y] && (a[(x, y)] != 0.0 || a[(y, x)] != 0.0) {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Maximal eigenvalue and positive eigenvector of a symmetric matrix with
/// nonnegative, irreducible off-diagonal pattern.
pub fn principal_eig(a: &DMatrix<f64>) -> Result<EigenPair, MarkovError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "principal_eig requires a square matrix");
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..n {
            assert!(
                (a[(i, j)] - a[(j, i)]).abs() <= 1e-10 * scale,
                "principal_eig requires a symmetric matrix"
            );
            assert!(
                i == j || a[(i, j)] >= 0.0,
                "principal_eig requires nonnegative off-diagonal entries"
            );
        }
    }
    if !pattern_is_irreducible(a) {
        return Err(MarkovError::Reducible);
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let mut top = 0;
    for i in 1..n {
        if eig.eigenvalues[i] > eig.eigenvalues[top] {
            top = i;
        }
    }
    let mut u: DVector<f64> = eig.eigenvectors.column(top).into();
    if u.sum() < 0.0 {
        u = -u;
    }
    u /= u.norm();
    Ok(EigenPair {
        value: eig.eigenvalues[top],
        vector: u,
    })
}
