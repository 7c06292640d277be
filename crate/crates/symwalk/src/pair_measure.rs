//! Pair probability measures with equal marginals: relative entropies, the
//! marginal-construction and floor-discretization algorithms, the
//! coordinate-vector bijection, and exact counting of permutations
//! compatible with a discrete pair measure.
//!
//! Two arithmetic modes coexist.  The `f64` functions drive the optimizers;
//! the `_exact` variants work in arbitrary-precision rationals and back the
//! structural lemmas (equal marginals, round trips) with exact checks.

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PairError {
    #[error("l1 distance {alpha} exceeds 1/2, the entropy bound does not apply")]
    AlphaTooLarge { alpha: f64 },
    #[error("anchor state is not a member of the box")]
    AnchorOutsideBox,
    #[error("anchor mass {mass} below the required {required}")]
    AnchorMassTooSmall { mass: f64, required: f64 },
    #[error("box too large for this resolution: 4|box|^2 exceeds N/2")]
    BoxTooLargeForN,
    #[error("coordinate condition ({0}) violated")]
    ConditionViolated(u8),
    #[error("coordinate {index} outside [0, 1]")]
    CoordinateOutOfRange { index: usize },
    #[error("first and second marginals differ")]
    UnequalMarginals,
}

/// Positive weight on each state: a probability vector for initial
/// distributions, all ones for the counting measure.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMeasure {
    weights: Vec<f64>,
}

impl ReferenceMeasure {
    pub fn probability(weights: Vec<f64>) -> Self {
        assert!(
            weights.iter().all(|&w| w >= 0.0),
            "probability weights must be nonnegative"
        );
        let total: f64 = weights.iter().sum();
        assert!(
            (total - 1.0).abs() <= 1e-12,
            "probability weights must sum to 1, got {total}"
        );
        ReferenceMeasure { weights }
    }

    pub fn counting(n: usize) -> Self {
        ReferenceMeasure {
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Probability measure on ordered pairs of states.  Equal first and second
/// marginals are a checked predicate, not a constructor requirement: the
/// type also houses reference products whose marginals differ.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMeasure {
    q: DMatrix<f64>,
}

impl PairMeasure {
    pub fn new(q: DMatrix<f64>) -> Self {
        assert_eq!(q.nrows(), q.ncols(), "pair measure must be square");
        for &v in q.iter() {
            assert!((0.0..=1.0).contains(&v), "entry {v} outside [0, 1]");
        }
        let total: f64 = q.iter().sum();
        assert!(
            (total - 1.0).abs() <= 1e-12,
            "pair measure mass {total} is not 1"
        );
        PairMeasure { q }
    }

    /// Product `p (x) m` of two probability vectors.
    pub fn product(p: &[f64], m: &[f64]) -> Self {
        let q = DMatrix::from_fn(p.len(), m.len(), |x, y| p[x] * m[y]);
        Self::new(q)
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.q[(x, y)]
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|x| (0..self.n()).map(|y| self.q[(x, y)]).sum())
            .collect()
    }

    pub fn second_marginal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|y| (0..self.n()).map(|x| self.q[(x, y)]).sum())
            .collect()
    }

    pub fn has_equal_marginals(&self, tol: f64) -> bool {
        self.first_marginal()
            .iter()
            .zip(self.second_marginal())
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Pair measure with all entries integer multiples of `1/scale`; equal
/// marginals are part of the validity of the type.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPairMeasure {
    numerators: DMatrix<u64>,
    scale: u64,
}

impl GridPairMeasure {
    pub fn new(numerators: DMatrix<u64>, scale: u64) -> Result<Self, PairError> {
        assert_eq!(numerators.nrows(), numerators.ncols());
        assert!(scale > 0, "scale must be positive");
        let total: u64 = numerators.iter().sum();
        assert_eq!(total, scale, "numerators must sum to the scale");
        let n = numerators.nrows();
        for z in 0..n {
            let row: u64 = (0..n).map(|y| numerators[(z, y)]).sum();
            let col: u64 = (0..n).map(|x| numerators[(x, z)]).sum();
            if row != col {
                return Err(PairError::UnequalMarginals);
            }
        }
        Ok(GridPairMeasure { numerators, scale })
    }

    pub fn n(&self) -> usize {
        self.numerators.nrows()
    }

    pub fn numerators(&self) -> &DMatrix<u64> {
        &self.numerators
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    /// Common marginal in counts: `sum_y numerators[x][y]`.
    pub fn marginal_counts(&self) -> Vec<u64> {
        let n = self.n();
        (0..n)
            .map(|x| (0..n).map(|y| self.numerators[(x, y)]).sum())
            .collect()
    }

    pub fn to_pair_measure(&self) -> PairMeasure {
        let s = self.scale as f64;
        PairMeasure::new(self.numerators.map(|v| v as f64 / s))
    }
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

/// Relative entropy `H(Q | Q1 (x) ref) = sum Q(x,y) log(Q(x,y) /
/// (Q1(x) ref(y)))` with `0 log 0 = 0`.
///
/// Returns `+inf` when `Q` puts mass where the product vanishes.  The value
/// can be negative when `ref` is an unnormalised counting measure.
pub fn relative_entropy(q: &PairMeasure, reference: &ReferenceMeasure) -> f64 {
    assert_eq!(q.n(), reference.len(), "dimension mismatch");
    let q1 = q.first_marginal();
    let mut h = 0.0;
    for x in 0..q.n() {
        for y in 0..q.n() {
            let v = q.entry(x, y);
            if v > 0.0 {
                let denom = q1[x] * reference.weights()[y];
                if denom <= 0.0 {
                    return f64::INFINITY;
                }
                h += v * (v / denom).ln();
            }
        }
    }
    h
}

fn shannon_entropy(v: &[f64]) -> f64 {
    -v.iter().map(|&p| xlogx(p)).sum::<f64>()
}

/// Entropy continuity bound: for subprobability vectors at l1 distance
/// `alpha <= 1/2`, `|H(p) - H(q)| <= -alpha log(alpha / n)`.  Returns
/// `(bound, actual)` and asserts the inequality.
pub fn entropy_difference_bound(p: &[f64], q: &[f64]) -> Result<(f64, f64), PairError> {
    assert_eq!(p.len(), q.len(), "vectors must share a state space");
    for v in p.iter().chain(q) {
        assert!(
            (0.0..=1.0 + 1e-12).contains(v),
            "entries must lie in [0, 1]"
        );
    }
    assert!(
        p.iter().sum::<f64>() <= 1.0 + 1e-9,
        "p must be subprobability"
    );
    assert!(
        q.iter().sum::<f64>() <= 1.0 + 1e-9,
        "q must be subprobability"
    );
    let alpha: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    if alpha > 0.5 + 1e-15 {
        return Err(PairError::AlphaTooLarge { alpha });
    }
    let bound = if alpha == 0.0 {
        0.0
    } else {
        -alpha * (alpha / p.len() as f64).ln()
    };
    let actual = (shannon_entropy(p) - shannon_entropy(q)).abs();
    assert!(
        actual <= bound + 1e-12,
        "entropy difference {actual} violates the bound {bound}"
    );
    Ok((bound, actual))
}

/// Restriction of an equal-marginal pair measure to `box_states x
/// box_states`, keeping the marginals equal: interior entries are copied,
/// the anchor row and column absorb the missing marginal mass, and the
/// anchor diagonal absorbs the remaining total mass.  If the anchor entry
/// falls below `eta`, every other entry is shrunk by the factor
/// `(1 - eta) / (1 - anchor)` to push it back up.
///
/// The total-variation distance to the input is at most twice the mass
/// outside the box plus `1 - shrink factor`.
pub fn marginal_construction(
    q: &PairMeasure,
    box_states: &[usize],
    anchor: usize,
    eta: f64,
) -> Result<PairMeasure, PairError> {
    assert!(
        (0.0..1.0).contains(&eta) && eta > 0.0,
        "eta must lie in (0, 1)"
    );
    let e = box_states.len();
    assert!(e >= 1, "box must be nonempty");
    for &x in box_states {
        assert!(x < q.n(), "box state {x} out of range");
    }
    let a = box_states
        .iter()
        .position(|&x| x == anchor)
        .ok_or(PairError::AnchorOutsideBox)?;
    if !q.has_equal_marginals(1e-12) {
        return Err(PairError::UnequalMarginals);
    }
    let q1 = q.first_marginal();
    let q2 = q.second_marginal();

    let mut m = DMatrix::zeros(e, e);
    for (i, &x) in box_states.iter().enumerate() {
        for (j, &y) in box_states.iter().enumerate() {
            if i != a && j != a {
                m[(i, j)] = q.entry(x, y);
            }
        }
    }
    for (i, &x) in box_states.iter().enumerate() {
        if i == a {
            continue;
        }
        let row_inner: f64 = box_states
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != a)
            .map(|(_, &y)| q.entry(x, y))
            .sum();
        let col_inner: f64 = box_states
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != a)
            .map(|(_, &z)| q.entry(z, x))
            .sum();
        m[(i, a)] = (q1[x] - row_inner).max(0.0);
        m[(a, i)] = (q2[x] - col_inner).max(0.0);
    }
    let off_anchor: f64 = m.iter().sum();
    m[(a, a)] = (1.0 - off_anchor).max(0.0);

    if m[(a, a)] < eta {
        let alpha = (1.0 - eta) / (1.0 - m[(a, a)]);
        for i in 0..e {
            for j in 0..e {
                if (i, j) != (a, a) {
                    m[(i, j)] *= alpha;
                }
            }
        }
        let rest: f64 = m.iter().sum::<f64>() - m[(a, a)];
        m[(a, a)] = 1.0 - rest;
    }
    Ok(PairMeasure::new(m))
}

/// Exact-rational [`marginal_construction`]; `q` is a square matrix whose
/// entries sum to 1 with exactly equal marginals.
pub fn marginal_construction_exact(
    q: &[Vec<BigRational>],
    box_states: &[usize],
    anchor: usize,
    eta: &BigRational,
) -> Result<Vec<Vec<BigRational>>, PairError> {
    let n = q.len();
    assert!(q.iter().all(|row| row.len() == n), "matrix must be square");
    assert!(
        eta > &BigRational::zero() && eta < &BigRational::one(),
        "eta must lie in (0, 1)"
    );
    let e = box_states.len();
    let a = box_states
        .iter()
        .position(|&x| x == anchor)
        .ok_or(PairError::AnchorOutsideBox)?;
    let row_sum = |x: usize| -> BigRational { q[x].iter().sum() };
    let col_sum = |y: usize| -> BigRational { (0..n).map(|x| q[x][y].clone()).sum() };
    for z in 0..n {
        if row_sum(z) != col_sum(z) {
            return Err(PairError::UnequalMarginals);
        }
    }

    let zero = BigRational::zero();
    let mut m = vec![vec![zero.clone(); e]; e];
    for (i, &x) in box_states.iter().enumerate() {
        for (j, &y) in box_states.iter().enumerate() {
            if i != a && j != a {
                m[i][j] = q[x][y].clone();
            }
        }
    }
    for (i, &x) in box_states.iter().enumerate() {
        if i == a {
            continue;
        }
        let row_inner: BigRational = box_states
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != a)
            .map(|(_, &y)| q[x][y].clone())
            .sum();
        let col_inner: BigRational = box_states
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != a)
            .map(|(_, &z)| q[z][x].clone())
            .sum();
        m[i][a] = row_sum(x) - row_inner;
        m[a][i] = col_sum(x) - col_inner;
        assert!(!m[i][a].is_negative() && !m[a][i].is_negative());
    }
    let off_anchor: BigRational = m
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(move |&(j, _)| (i, j) != (a, a))
                .map(|(_, v)| v.clone())
        })
        .sum();
    m[a][a] = BigRational::one() - off_anchor;
    assert!(!m[a][a].is_negative());

    if &m[a][a] < eta {
        let alpha = (BigRational::one() - eta.clone()) / (BigRational::one() - m[a][a].clone());
        for i in 0..e {
            for j in 0..e {
                if (i, j) != (a, a) {
                    m[i][j] = &m[i][j] * &alpha;
                }
            }
        }
        m[a][a] = eta.clone();
    }
    Ok(m)
}

/// Anchor for [`discretize`]: the state with the largest diagonal entry,
/// smallest index on ties.
fn diagonal_anchor(q: &PairMeasure) -> usize {
    let mut best = 0;
    for x in 1..q.n() {
        if q.entry(x, x) > q.entry(best, best) {
            best = x;
        }
    }
    best
}

/// Floor discretization at resolution `1/n`: interior entries become
/// `floor(n q(x,y)) / n` and the anchor row and column complete the
/// marginals, all in integer arithmetic.  The l1 error is at most
/// `2 |box|^2 / n`.
pub fn discretize(q: &PairMeasure, n: u64) -> Result<GridPairMeasure, PairError> {
    let e = q.n();
    if !q.has_equal_marginals(1e-12) {
        return Err(PairError::UnequalMarginals);
    }
    if 8 * (e * e) as u64 > n {
        return Err(PairError::BoxTooLargeForN);
    }
    let a = diagonal_anchor(q);
    let required = ((e - 1) * (e - 1)) as f64 / n as f64;
    if q.entry(a, a) < required {
        return Err(PairError::AnchorMassTooSmall {
            mass: q.entry(a, a),
            required,
        });
    }

    let nf = n as f64;
    let q1 = q.first_marginal();
    let mut c = vec![0i64; e];
    let mut rest = n as i64;
    for x in 0..e {
        if x != a {
            c[x] = (nf * q1[x]).floor() as i64;
            rest -= c[x];
        }
    }
    c[a] = rest;

    let mut m = DMatrix::<i64>::zeros(e, e);
    for x in 0..e {
        for y in 0..e {
            if x != a && y != a {
                m[(x, y)] = (nf * q.entry(x, y)).floor() as i64;
            }
        }
    }
    for x in 0..e {
        if x == a {
            continue;
        }
        let row_inner: i64 = (0..e).filter(|&y| y != a).map(|y| m[(x, y)]).sum();
        let col_inner: i64 = (0..e).filter(|&z| z != a).map(|z| m[(z, x)]).sum();
        m[(x, a)] = c[x] - row_inner;
        m[(a, x)] = c[x] - col_inner;
    }
    let anchor_row: i64 = (0..e).filter(|&y| y != a).map(|y| m[(a, y)]).sum();
    m[(a, a)] = c[a] - anchor_row;
    for &v in m.iter() {
        assert!(
            v >= 0,
            "floor completion went negative despite the mass preconditions"
        );
    }
    GridPairMeasure::new(m.map(|v| v as u64), n)
}

fn coordinate_side(len: usize) -> usize {
    // len = e^2 - e.
    let e = (1.0 + (1.0 + 4.0 * len as f64).sqrt()) / 2.0;
    let e = e.round() as usize;
    assert!(
        e >= 2 && e * e - e == len,
        "coordinate vector length must be e^2 - e for some e >= 2"
    );
    e
}

/// Pair measure encoded by the `e^2 - e` coordinates `(Q1(j), Q(j, 1), ..,
/// Q(j, e-1))` for `j = 1 .. e-1`.  The four admissibility conditions are
///
/// 1. the listed first-marginal values sum to at most 1,
/// 2. each listed row is dominated by its marginal value,
/// 3. each listed column is dominated by the matching marginal value,
/// 4. twice the listed marginal mass minus the listed matrix mass is at
///    most 1.
///
/// Under these the remaining row, column, and corner are determined by the
/// marginal constraints, and the result has equal marginals.
pub fn from_coordinates(coords: &[f64]) -> Result<PairMeasure, PairError> {
    let e = coordinate_side(coords.len());
    for (index, &v) in coords.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(PairError::CoordinateOutOfRange { index });
        }
    }
    let tol = 1e-12;
    let marg = |j: usize| coords[j * e];
    let inner = |j: usize, k: usize| coords[j * e + 1 + k];

    let marg_total: f64 = (0..e - 1).map(marg).sum();
    if marg_total > 1.0 + tol {
        return Err(PairError::ConditionViolated(1));
    }
    for j in 0..e - 1 {
        let row: f64 = (0..e - 1).map(|k| inner(j, k)).sum();
        if row > marg(j) + tol {
            return Err(PairError::ConditionViolated(2));
        }
    }
    for k in 0..e - 1 {
        let col: f64 = (0..e - 1).map(|j| inner(j, k)).sum();
        if col > marg(k) + tol {
            return Err(PairError::ConditionViolated(3));
        }
    }
    let inner_total: f64 = (0..e - 1)
        .flat_map(|j| (0..e - 1).map(move |k| inner(j, k)))
        .sum();
    if 2.0 * marg_total - inner_total > 1.0 + tol {
        return Err(PairError::ConditionViolated(4));
    }

    let mut m = DMatrix::zeros(e, e);
    for j in 0..e - 1 {
        for k in 0..e - 1 {
            m[(j, k)] = inner(j, k);
        }
    }
    for j in 0..e - 1 {
        let row: f64 = (0..e - 1).map(|k| inner(j, k)).sum();
        m[(j, e - 1)] = (marg(j) - row).max(0.0);
        let col: f64 = (0..e - 1).map(|i| inner(i, j)).sum();
        m[(e - 1, j)] = (marg(j) - col).max(0.0);
    }
    let corner = 1.0 - 2.0 * marg_total + inner_total;
    m[(e - 1, e - 1)] = corner.max(0.0);
    Ok(PairMeasure::new(m))
}

/// Inverse of [`from_coordinates`]; requires equal marginals.
pub fn to_coordinates(q: &PairMeasure) -> Result<Vec<f64>, PairError> {
    if !q.has_equal_marginals(1e-12) {
        return Err(PairError::UnequalMarginals);
    }
    let e = q.n();
    assert!(e >= 2, "coordinates need at least two states");
    let q1 = q.first_marginal();
    let mut coords = Vec::with_capacity(e * e - e);
    for j in 0..e - 1 {
        coords.push(q1[j]);
        for k in 0..e - 1 {
            coords.push(q.entry(j, k));
        }
    }
    Ok(coords)
}

/// Exact-rational [`from_coordinates`].
pub fn from_coordinates_exact(coords: &[BigRational]) -> Result<Vec<Vec<BigRational>>, PairError> {
    let e = coordinate_side(coords.len());
    for (index, v) in coords.iter().enumerate() {
        if v.is_negative() || v > &BigRational::one() {
            return Err(PairError::CoordinateOutOfRange { index });
        }
    }
    let marg = |j: usize| coords[j * e].clone();
    let inner = |j: usize, k: usize| coords[j * e + 1 + k].clone();

    let marg_total: BigRational = (0..e - 1).map(marg).sum();
    if marg_total > BigRational::one() {
        return Err(PairError::ConditionViolated(1));
    }
    for j in 0..e - 1 {
        let row: BigRational = (0..e - 1).map(|k| inner(j, k)).sum();
        if row > marg(j) {
            return Err(PairError::ConditionViolated(2));
        }
    }
    for k in 0..e - 1 {
        let col: BigRational = (0..e - 1).map(|j| inner(j, k)).sum();
        if col > marg(k) {
            return Err(PairError::ConditionViolated(3));
        }
    }
    let inner_total: BigRational = (0..e - 1)
        .flat_map(|j| (0..e - 1).map(move |k| inner(j, k)))
        .sum();
    let two = BigRational::from_integer(2.into());
    if &two * &marg_total - &inner_total > BigRational::one() {
        return Err(PairError::ConditionViolated(4));
    }

    let mut m = vec![vec![BigRational::zero(); e]; e];
    for j in 0..e - 1 {
        for k in 0..e - 1 {
            m[j][k] = inner(j, k);
        }
    }
    for j in 0..e - 1 {
        let row: BigRational = (0..e - 1).map(|k| inner(j, k)).sum();
        m[j][e - 1] = marg(j) - row;
        let col: BigRational = (0..e - 1).map(|i| inner(i, j)).sum();
        m[e - 1][j] = marg(j) - col;
    }
    m[e - 1][e - 1] = BigRational::one() - two * marg_total + inner_total;
    Ok(m)
}

/// Exact-rational [`to_coordinates`].
pub fn to_coordinates_exact(q: &[Vec<BigRational>]) -> Result<Vec<BigRational>, PairError> {
    let e = q.len();
    assert!(e >= 2 && q.iter().all(|row| row.len() == e));
    for z in 0..e {
        let row: BigRational = q[z].iter().sum();
        let col: BigRational = (0..e).map(|x| q[x][z].clone()).sum();
        if row != col {
            return Err(PairError::UnequalMarginals);
        }
    }
    let mut coords = Vec::with_capacity(e * e - e);
    for j in 0..e - 1 {
        coords.push(q[j].iter().sum());
        for k in 0..e - 1 {
            coords.push(q[j][k].clone());
        }
    }
    Ok(coords)
}

fn factorial(k: u64) -> BigUint {
    let mut out = BigUint::one();
    for i in 2..=k {
        out *= i;
    }
    out
}

/// Number of permutations `s` of `{1..N}` with `#{i : x_i = x, x_{s(i)} =
/// y} = numerators[x][y]` for all pairs.  Zero unless the marginal counts
/// match the empirical counts of `config`; otherwise
/// `(prod_x c_x!)^2 / prod_{x,y} numerators[x][y]!`.
pub fn count_admissible_permutations(config: &[usize], q: &GridPairMeasure) -> BigUint {
    assert_eq!(
        config.len() as u64,
        q.scale(),
        "configuration length must equal the grid scale"
    );
    let mut counts = vec![0u64; q.n()];
    for &x in config {
        assert!(x < q.n(), "configuration state {x} out of range");
        counts[x] += 1;
    }
    if counts != q.marginal_counts() {
        return BigUint::zero();
    }
    let mut num = BigUint::one();
    for &c in &counts {
        let f = factorial(c);
        num *= &f * &f;
    }
    let mut den = BigUint::one();
    for &v in q.numerators().iter() {
        den *= factorial(v);
    }
    debug_assert!((&num % &den).is_zero(), "count must be an integer");
    num / den
}

/// Stirling approximation of `(1/N) log` of the reference-weighted count:
/// `-H(q | q1 (x) ref)`.  The exact normalised log-count differs by at most
/// `C |box|^2 log N / N` with `C = 2`.
pub fn log_count_stirling(q: &GridPairMeasure, reference: &ReferenceMeasure) -> f64 {
    -relative_entropy(&q.to_pair_measure(), reference)
}
