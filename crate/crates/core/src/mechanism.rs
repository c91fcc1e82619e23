//! Structural mechanisms `f_i` with analytic first and second derivatives.
//!
//! The oracle needs exact gradients and Hessians, so every mechanism carries
//! its own derivatives. User mechanisms are added through
//! [`MechanismRegistry::register`] or [`AnalyticMechanism`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::random_unit;

pub trait Mechanism: Send + Sync + fmt::Debug {
    /// Registry name used in SCM documents.
    fn name(&self) -> &str;
    fn arity(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

pub type MechanismRef = Arc<dyn Mechanism>;

/// Constant mechanism for roots. The unscaled model uses `c = 0`; the
/// affinely reparameterized model uses the root's offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Mechanism for Constant {
    fn name(&self) -> &str {
        if self.0 == 0.0 {
            "zero"
        } else {
            "constant"
        }
    }
    fn arity(&self) -> usize {
        0
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &[f64]) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }
}

/// f(x) = ‖x‖².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquaredNorm {
    pub arity: usize,
}

impl Mechanism for SquaredNorm {
    fn name(&self) -> &str {
        "squared_norm"
    }
    fn arity(&self) -> usize {
        self.arity
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().map(|v| 2.0 * v))
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) * 2.0
    }
}

/// f(x) = Σ sin(x_j) + ‖x‖²/2. The quadratic term keeps the Hessian away from
/// zero at the sine's inflection points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinSum {
    pub arity: usize,
}

impl Mechanism for SinSum {
    fn name(&self) -> &str {
        "sin_sum"
    }
    fn arity(&self) -> usize {
        self.arity
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.sin() + 0.5 * v * v).sum()
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len(), x.iter().map(|v| v.cos() + v))
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            x.len(),
            x.iter().map(|v| 1.0 - v.sin()),
        ))
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type HessFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A mechanism given by closures for the value and its derivatives.
#[derive(Clone)]
pub struct AnalyticMechanism {
    name: String,
    arity: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
    hessian: Arc<HessFn>,
}

impl AnalyticMechanism {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            arity,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
        }
    }
}

impl fmt::Debug for AnalyticMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticMechanism")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish()
    }
}

impl Mechanism for AnalyticMechanism {
    fn name(&self) -> &str {
        &self.name
    }
    fn arity(&self) -> usize {
        self.arity
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        (self.gradient)(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        (self.hessian)(x)
    }
}

/// g(y) = a_out · f((y − b_in) ⊘ a_in) + b_out.
///
/// This is the mechanism of node i after every latent is mapped by
/// z' = a ⊙ z + b.
#[derive(Debug, Clone)]
pub struct Affine {
    pub inner: MechanismRef,
    pub a_out: f64,
    pub b_out: f64,
    pub a_in: Vec<f64>,
    pub b_in: Vec<f64>,
}

impl Affine {
    fn inner_point(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.a_in.iter().zip(&self.b_in))
            .map(|(v, (a, b))| (v - b) / a)
            .collect()
    }
}

impl Mechanism for Affine {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn arity(&self) -> usize {
        self.inner.arity()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.a_out * self.inner.value(&self.inner_point(y)) + self.b_out
    }
    fn gradient(&self, y: &[f64]) -> DVector<f64> {
        let g = self.inner.gradient(&self.inner_point(y));
        DVector::from_fn(g.len(), |j, _| self.a_out * g[j] / self.a_in[j])
    }
    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let h = self.inner.hessian(&self.inner_point(y));
        DMatrix::from_fn(h.nrows(), h.ncols(), |j, k| {
            self.a_out * h[(j, k)] / (self.a_in[j] * self.a_in[k])
        })
    }
}

type Constructor = dyn Fn(usize) -> Result<MechanismRef> + Send + Sync;

/// Name → constructor (taking the arity) table used when reading SCM documents.
#[derive(Clone)]
pub struct MechanismRegistry {
    entries: BTreeMap<String, Arc<Constructor>>,
}

impl fmt::Debug for MechanismRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl Default for MechanismRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("zero", |arity| {
            if arity != 0 {
                return Err(Error::Structure("`zero` mechanism is only valid for roots".into()));
            }
            Ok(Arc::new(Constant(0.0)) as MechanismRef)
        });
        r.register("squared_norm", |arity| Ok(Arc::new(SquaredNorm { arity }) as MechanismRef));
        r.register("sin_sum", |arity| Ok(Arc::new(SinSum { arity }) as MechanismRef));
        r
    }
}

impl MechanismRegistry {
    pub fn register(
        &mut self,
        name: impl Into<String>,
        ctor: impl Fn(usize) -> Result<MechanismRef> + Send + Sync + 'static,
    ) {
        self.entries.insert(name.into(), Arc::new(ctor));
    }

    pub fn build(&self, name: &str, arity: usize) -> Result<MechanismRef> {
        let ctor = self
            .entries
            .get(name)
            .ok_or_else(|| Error::UnknownMechanism(name.to_string()))?;
        let m = ctor(arity)?;
        if m.arity() != arity {
            return Err(Error::Structure(format!(
                "mechanism `{name}` built with arity {} but {arity} requested",
                m.arity()
            )));
        }
        Ok(m)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

/// Worst relative errors of the analytic derivatives against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub gradient: f64,
    pub hessian: f64,
}

/// Compares gradient and Hessian with central differences at `probes` random
/// points in [-2, 2]^arity.
pub fn finite_difference_check<R: Rng + ?Sized>(
    m: &dyn Mechanism,
    rng: &mut R,
    probes: usize,
) -> FdReport {
    let p = m.arity();
    let mut worst = FdReport { gradient: 0.0, hessian: 0.0 };
    if p == 0 {
        return worst;
    }
    for _ in 0..probes {
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = m.gradient(&x);
        let h = m.hessian(&x);
        let mut fd_g = DVector::zeros(p);
        let mut fd_h = DMatrix::zeros(p, p);
        let mut xp = x.clone();
        for j in 0..p {
            let step = 1e-5 * (1.0 + x[j].abs());
            xp[j] = x[j] + step;
            let (fp, gp) = (m.value(&xp), m.gradient(&xp));
            xp[j] = x[j] - step;
            let (fm, gm) = (m.value(&xp), m.gradient(&xp));
            xp[j] = x[j];
            fd_g[j] = (fp - fm) / (2.0 * step);
            fd_h.set_column(j, &((gp - gm) / (2.0 * step)));
        }
        let rel = |a: f64, scale: f64| a / scale.max(1.0);
        worst.gradient = worst.gradient.max(rel((&fd_g - &g).amax(), g.amax()));
        worst.hessian = worst.hessian.max(rel((&fd_h - &h).amax(), h.amax()));
    }
    worst
}

/// Statistical check that the second directional derivative is not identically
/// zero along any sampled direction: for each of `directions` random unit β the
/// largest |βᵀ∇²f β| over `probes` points in [-2, 2]^arity must reach 1e-8.
pub fn is_directionally_nonlinear<R: Rng + ?Sized>(
    m: &dyn Mechanism,
    rng: &mut R,
    directions: usize,
    probes: usize,
) -> bool {
    let p = m.arity();
    if p == 0 {
        return false;
    }
    let points: Vec<Vec<f64>> = (0..probes)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let hessians: Vec<DMatrix<f64>> = points.iter().map(|x| m.hessian(x)).collect();
    (0..directions).all(|_| {
        let beta = random_unit(rng, p);
        hessians
            .iter()
            .any(|h| (beta.transpose() * h * &beta)[(0, 0)].abs() >= 1e-8)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn builtins_pass_finite_differences() {
        let mut r = rng::stream(11, 0);
        for m in [
            Arc::new(SquaredNorm { arity: 3 }) as MechanismRef,
            Arc::new(SinSum { arity: 2 }),
        ] {
            let rep = finite_difference_check(m.as_ref(), &mut r, 20);
            assert!(rep.gradient <= 1e-5, "{} grad {}", m.name(), rep.gradient);
            assert!(rep.hessian <= 1e-5, "{} hess {}", m.name(), rep.hessian);
        }
    }

    #[test]
    fn nonlinearity_check_separates_linear_from_quadratic() {
        let mut r = rng::stream(12, 0);
        assert!(is_directionally_nonlinear(&SquaredNorm { arity: 2 }, &mut r, 20, 100));
        assert!(is_directionally_nonlinear(&SinSum { arity: 2 }, &mut r, 20, 100));
        let linear = AnalyticMechanism::new(
            "linear",
            2,
            |x| x[0] + x[1],
            |_| DVector::from_element(2, 1.0),
            |_| DMatrix::zeros(2, 2),
        );
        assert!(!is_directionally_nonlinear(&linear, &mut r, 20, 100));
        // x0·x1 has βᵀHβ = 2β0β1, nonzero for almost every β.
        let bilinear = AnalyticMechanism::new(
            "product",
            2,
            |x| x[0] * x[1],
            |x| DVector::from_vec(vec![x[1], x[0]]),
            |_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        );
        assert!(is_directionally_nonlinear(&bilinear, &mut r, 20, 100));
    }

    #[test]
    fn registry_builds_and_rejects() {
        let reg = MechanismRegistry::default();
        assert_eq!(reg.build("squared_norm", 2).unwrap().arity(), 2);
        assert!(matches!(reg.build("nope", 1), Err(Error::UnknownMechanism(_))));
        assert!(reg.build("zero", 1).is_err());
        assert_eq!(reg.build("zero", 0).unwrap().value(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn affine_wrapper_matches_finite_differences(
            a_out in 0.1f64..3.0, b_out in -2.0f64..2.0,
            a0 in 0.2f64..3.0, a1 in 0.2f64..3.0,
            b0 in -1.0f64..1.0, b1 in -1.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let m = Affine {
                inner: Arc::new(SinSum { arity: 2 }),
                a_out, b_out,
                a_in: vec![a0, a1],
                b_in: vec![b0, b1],
            };
            let rep = finite_difference_check(&m, &mut rng::stream(seed, 0), 5);
            prop_assert!(rep.gradient <= 1e-5);
            prop_assert!(rep.hessian <= 1e-5);
        }
    }
}
