//! Bregman-divergence losses and the tail-function machinery used by the
//! information-theoretic bounds.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::PointRef;

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type PsiFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Strictly convex, continuously differentiable generator `F` of a Bregman
/// divergence.
#[derive(Clone)]
pub enum Generator {
    /// `F(p) = ||p||²`, giving the squared Euclidean loss.
    SquaredNorm,
    Custom(CustomGenerator),
}

#[derive(Clone)]
pub struct CustomGenerator {
    name: String,
    value: Arc<ValueFn>,
    gradient: Arc<GradientFn>,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::SquaredNorm => f.write_str("SquaredNorm"),
            Generator::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl Generator {
    /// Wraps a user supplied generator. The caller must assert strict
    /// convexity; [`Generator::spot_check`] can back the claim numerically.
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        strictly_convex: bool,
    ) -> Result<Self> {
        if !strictly_convex {
            return Err(Error::config(
                "custom generator must be asserted strictly convex",
            ));
        }
        Ok(Generator::Custom(CustomGenerator {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }))
    }

    /// `F(p) = Σ p_i ln p_i` on the positive orthant; its divergence on the
    /// simplex is the KL divergence.
    pub fn negative_entropy() -> Self {
        Generator::custom(
            "negative-entropy",
            |p| p.iter().map(|&v| v * v.ln()).sum(),
            |p| p.iter().map(|&v| v.ln() + 1.0).collect(),
            true,
        )
        .expect("asserted convex")
    }

    pub fn is_squared_norm(&self) -> bool {
        matches!(self, Generator::SquaredNorm)
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match self {
            Generator::SquaredNorm => p.iter().map(|v| v * v).sum(),
            Generator::Custom(c) => (c.value)(p),
        }
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Generator::SquaredNorm => p.iter().map(|v| 2.0 * v).collect(),
            Generator::Custom(c) => (c.gradient)(p),
        }
    }

    /// Randomized check of midpoint convexity and of the gradient against
    /// central finite differences on points produced by `sample`.
    pub fn spot_check<R: Rng>(
        &self,
        rng: &mut R,
        trials: usize,
        mut sample: impl FnMut(&mut R) -> Vec<f64>,
    ) -> Result<()> {
        for t in 0..trials {
            let p = sample(rng);
            let q = sample(rng);
            let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = self.value(&mid);
            let rhs = 0.5 * (self.value(&p) + self.value(&q));
            if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
                return Err(Error::Numeric(format!(
                    "midpoint convexity violated at trial {t}: F(mid)={lhs} > {rhs}"
                )));
            }
            let grad = self.gradient(&p);
            for i in 0..p.len() {
                let h = 1e-6 * p[i].abs().max(1e-3);
                let mut up = p.clone();
                let mut dn = p.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (self.value(&up) - self.value(&dn)) / (2.0 * h);
                let err = (fd - grad[i]).abs() / grad[i].abs().max(1.0);
                if err > 1e-5 {
                    return Err(Error::Numeric(format!(
                        "gradient mismatch at trial {t}, coord {i}: analytic {} vs fd {fd}",
                        grad[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How a Bregman divergence turns into a loss on a data point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// `ℓ(w, z) = D_F(w, z)`.
    Location,
    /// `ℓ(w, (x, y)) = D_F(<x, w>, y)`.
    LinearPrediction,
}

/// `D_F(p, q) = F(p) - F(q) - <∇F(q), p - q>`.
pub fn bregman_div(generator: &Generator, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(match generator {
        Generator::SquaredNorm => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
        Generator::Custom(_) => {
            let grad = generator.gradient(q);
            let inner: f64 = grad.iter().zip(p.iter().zip(q)).map(|(g, (a, b))| g * (a - b)).sum();
            generator.value(p) - generator.value(q) - inner
        }
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn form_mismatch(form: LossForm) -> Error {
    Error::arg(format!("{form:?} loss does not match the data point variant"))
}

pub fn loss_eval(form: LossForm, generator: &Generator, w: &[f64], z: PointRef<'_>) -> Result<f64> {
    match (form, z) {
        (LossForm::Location, PointRef::Location(z)) => bregman_div(generator, w, z),
        (LossForm::LinearPrediction, PointRef::Labeled { x, y }) => {
            if x.len() != w.len() {
                return Err(Error::arg("feature and weight dimensions differ"));
            }
            let pred = dot(x, w);
            match generator {
                Generator::SquaredNorm => Ok((pred - y) * (pred - y)),
                _ => bregman_div(generator, &[pred], &[y]),
            }
        }
        _ => Err(form_mismatch(form)),
    }
}

/// Gradient of [`loss_eval`] with respect to `w`.
pub fn loss_gradient(
    form: LossForm,
    generator: &Generator,
    w: &[f64],
    z: PointRef<'_>,
) -> Result<Vec<f64>> {
    match (form, z) {
        (LossForm::Location, PointRef::Location(z)) => {
            if z.len() != w.len() {
                return Err(Error::arg("weight and data dimensions differ"));
            }
            match generator {
                Generator::SquaredNorm => Ok(w.iter().zip(z).map(|(a, b)| 2.0 * (a - b)).collect()),
                _ => {
                    let gw = generator.gradient(w);
                    let gz = generator.gradient(z);
                    Ok(gw.iter().zip(&gz).map(|(a, b)| a - b).collect())
                }
            }
        }
        (LossForm::LinearPrediction, PointRef::Labeled { x, y }) => {
            if x.len() != w.len() {
                return Err(Error::arg("feature and weight dimensions differ"));
            }
            let pred = dot(x, w);
            let scale = match generator {
                Generator::SquaredNorm => 2.0 * (pred - y),
                _ => generator.gradient(&[pred])[0] - generator.gradient(&[y])[0],
            };
            Ok(x.iter().map(|v| scale * v).collect())
        }
        _ => Err(form_mismatch(form)),
    }
}

/// Tail condition on the centered loss under product marginals.
#[derive(Clone)]
pub enum TailSpec {
    /// `ψ(λ) = R² λ² / 2`.
    SubGaussian { r2: f64 },
    /// A convex `ψ` on `[0, b)` with `ψ(0) = ψ'(0) = 0`.
    GeneralPsi { psi: Arc<PsiFn>, b: f64 },
}

impl fmt::Debug for TailSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailSpec::SubGaussian { r2 } => write!(f, "SubGaussian {{ r2: {r2} }}"),
            TailSpec::GeneralPsi { b, .. } => write!(f, "GeneralPsi {{ b: {b} }}"),
        }
    }
}

impl TailSpec {
    pub fn sub_gaussian(r2: f64) -> Result<Self> {
        if !(r2 > 0.0 && r2.is_finite()) {
            return Err(Error::config(format!("R² must be positive, got {r2}")));
        }
        Ok(TailSpec::SubGaussian { r2 })
    }

    pub fn general(psi: impl Fn(f64) -> f64 + Send + Sync + 'static, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::config(format!("endpoint b must be positive, got {b}")));
        }
        Ok(TailSpec::GeneralPsi {
            psi: Arc::new(psi),
            b,
        })
    }

    /// `ψ*⁻¹(y)`; infinite information maps to an infinite value.
    pub fn psi_star_inverse(&self, y: f64) -> Result<f64> {
        if y == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        match self {
            TailSpec::SubGaussian { r2 } => psi_star_inverse_subgaussian(*r2, y),
            TailSpec::GeneralPsi { psi, b } => psi_star_inverse_numeric(psi.as_ref(), *b, y),
        }
    }
}

/// Closed form `√(2 R² y)` of the sub-Gaussian inverse dual.
pub fn psi_star_inverse_subgaussian(r2: f64, y: f64) -> Result<f64> {
    if !(r2 > 0.0) {
        return Err(Error::arg(format!("R² must be positive, got {r2}")));
    }
    if !(y >= 0.0) {
        return Err(Error::arg(format!("information value must be >= 0, got {y}")));
    }
    Ok((2.0 * r2 * y).sqrt())
}

const SCAN_POINTS: usize = 64;
const LAMBDA_FLOOR: f64 = 1e-12;
const GOLDEN_TOL: f64 = 1e-10;

/// `inf_{λ∈(0,b)} (y + ψ(λ)) / λ` by a log-spaced scan followed by
/// golden-section refinement in `ln λ`.
///
/// The objective is unimodal for convex `ψ` with `ψ(0) = 0`, since the sign of
/// its derivative is that of the nondecreasing `λψ'(λ) - ψ(λ) - y`.
pub fn psi_star_inverse_numeric(psi: &(dyn Fn(f64) -> f64 + Send + Sync), b: f64, y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::arg(format!("information value must be >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    // an unbounded domain is searched up to a large finite endpoint
    let hi = if b.is_finite() { b * (1.0 - 1e-12) } else { 1e12 };
    if !(hi > LAMBDA_FLOOR) {
        return Err(Error::arg(format!("endpoint b={b} leaves an empty search interval")));
    }
    let objective = |t: f64| -> Result<f64> {
        let lambda = t.exp();
        let value = (y + psi(lambda)) / lambda;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Numeric(format!(
                "non-finite objective at lambda={lambda:e} (psi={}, y={y})",
                psi(lambda)
            )))
        }
    };

    let (t_lo, t_hi) = (LAMBDA_FLOOR.ln(), hi.ln());
    let step = (t_hi - t_lo) / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|j| if j + 1 == SCAN_POINTS { t_hi } else { t_lo + step * j as f64 })
        .collect();
    let mut best = (0, f64::INFINITY);
    for (j, &t) in grid.iter().enumerate() {
        let v = objective(t)?;
        if v < best.1 {
            best = (j, v);
        }
    }
    let mut a = grid[best.0.saturating_sub(1)];
    let mut c = grid[(best.0 + 1).min(SCAN_POINTS - 1)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = c - inv_phi * (c - a);
    let mut x2 = a + inv_phi * (c - a);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    while c - a > GOLDEN_TOL {
        if f1 <= f2 {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - inv_phi * (c - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (c - a);
            f2 = objective(x2)?;
        }
    }
    let ends = objective(a)?.min(objective(c)?);
    Ok(best.1.min(f1).min(f2).min(ends))
}
