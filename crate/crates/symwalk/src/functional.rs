//! Scalar functions of a real observable, restricted to the shapes the
//! exact recursions can factorize.

/// Function applied to the mean observable; only the affine shapes admit
/// exact cycle factorization, the quadratic shape is for mean-field
/// functionals evaluated variationally or by Monte Carlo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarFn {
    Constant(f64),
    /// `u -> slope * u`.
    Linear(f64),
    Affine {
        slope: f64,
        intercept: f64,
    },
    /// `u -> a u^2 + b u + c`.
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
}

impl ScalarFn {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            ScalarFn::Constant(c) => c,
            ScalarFn::Linear(s) => s * u,
            ScalarFn::Affine { slope, intercept } => slope * u + intercept,
            ScalarFn::Quadratic { a, b, c } => a * u * u + b * u + c,
        }
    }

    /// `(slope, intercept)` when the function is affine, else `None`.
    pub fn linear_part(&self) -> Option<(f64, f64)> {
        match *self {
            ScalarFn::Constant(c) => Some((0.0, c)),
            ScalarFn::Linear(s) => Some((s, 0.0)),
            ScalarFn::Affine { slope, intercept } => Some((slope, intercept)),
            ScalarFn::Quadratic { a, b, c } if a == 0.0 => Some((b, c)),
            ScalarFn::Quadratic { .. } => None,
        }
    }
}
