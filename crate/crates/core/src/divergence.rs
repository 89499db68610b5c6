//! Bregman divergences `D(x, y) = phi(x) - phi(y) - phi'(y) (x - y)` for the
//! three generators used here:
//!
//! | kind               | `phi(x)`          | `phi''(x)` |
//! |--------------------|-------------------|------------|
//! | `SquaredEuclidean` | `x^2`             | `2`        |
//! | `GeneralizedKl`    | `x ln x - x`      | `1/x`      |
//! | `ItakuraSaito`     | `-ln x`           | `1/x^2`    |
//!
//! KL and IS are singular at zero. Arguments are clipped to `eps_domain`
//! wherever the generator needs a strictly positive value.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    SquaredEuclidean,
    GeneralizedKl,
    ItakuraSaito,
}

pub const DEFAULT_EPS_DOMAIN: f64 = 1e-12;

/// A strictly convex generator `phi` and its first two derivatives.
pub trait BregmanGenerator {
    fn phi(&self, x: f64) -> f64;
    fn phi_prime(&self, x: f64) -> f64;
    fn phi_second_derivative(&self, x: f64) -> f64;

    /// Scalar divergence straight from the definition.
    fn bregman(&self, x: f64, y: f64) -> f64 {
        self.phi(x) - self.phi(y) - self.phi_prime(y) * (x - y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    pub eps_domain: f64,
}

impl DivergenceSpec {
    pub fn new(kind: DivergenceKind) -> Self {
        Self {
            kind,
            eps_domain: DEFAULT_EPS_DOMAIN,
        }
    }

    pub fn squared_euclidean() -> Self {
        Self::new(DivergenceKind::SquaredEuclidean)
    }

    pub fn generalized_kl() -> Self {
        Self::new(DivergenceKind::GeneralizedKl)
    }

    pub fn itakura_saito() -> Self {
        Self::new(DivergenceKind::ItakuraSaito)
    }

    pub fn with_eps_domain(mut self, eps: f64) -> Self {
        self.eps_domain = eps;
        self
    }

    /// Clips a value into the generator's domain.
    #[inline]
    pub fn clip(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredEuclidean => x,
            _ => x.max(self.eps_domain),
        }
    }

    /// Elementwise divergence in closed form with domain clipping. Returns
    /// a non-negative value.
    pub fn elementwise(&self, x: f64, y: f64) -> f64 {
        let d = match self.kind {
            DivergenceKind::SquaredEuclidean => (x - y) * (x - y),
            DivergenceKind::GeneralizedKl => {
                if x <= 0.0 {
                    y.max(0.0)
                } else {
                    let y = self.clip(y);
                    x * (x / y).ln() - x + y
                }
            }
            DivergenceKind::ItakuraSaito => {
                let (x, y) = (self.clip(x), self.clip(y));
                let q = x / y;
                q - q.ln() - 1.0
            }
        };
        d.max(0.0)
    }

    /// `d/dy D(x, y) = -phi''(y) (x - y)`.
    #[inline]
    pub(crate) fn grad_second_arg(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredEuclidean => 2.0 * (y - x),
            DivergenceKind::GeneralizedKl => {
                let y = self.clip(y);
                1.0 - x / y
            }
            DivergenceKind::ItakuraSaito => {
                let (x, y) = (self.clip(x), self.clip(y));
                (y - x) / (y * y)
            }
        }
    }

    /// `d^2/dy^2 D(x, y)`; negative for IS when `y > 2x`.
    #[inline]
    pub(crate) fn curvature_second_arg(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredEuclidean => 2.0,
            DivergenceKind::GeneralizedKl => {
                let y = self.clip(y);
                x.max(0.0) / (y * y)
            }
            DivergenceKind::ItakuraSaito => {
                let (x, y) = (self.clip(x), self.clip(y));
                (2.0 * x - y) / (y * y * y)
            }
        }
    }

    /// Sum of elementwise divergences between two vectors.
    pub fn vector_divergence(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(&a, &b)| self.elementwise(a, b)).sum()
    }
}

impl BregmanGenerator for DivergenceSpec {
    fn phi(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredEuclidean => x * x,
            DivergenceKind::GeneralizedKl => {
                if x <= 0.0 {
                    0.0
                } else {
                    x * x.ln() - x
                }
            }
            DivergenceKind::ItakuraSaito => -self.clip(x).ln(),
        }
    }

    fn phi_prime(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::SquaredEuclidean => 2.0 * x,
            DivergenceKind::GeneralizedKl => self.clip(x).ln(),
            DivergenceKind::ItakuraSaito => -1.0 / self.clip(x),
        }
    }

    fn phi_second_derivative(&self, x: f64) -> f64 {
        phi_second_derivative(self, x)
    }
}

/// `phi''(x)` after clipping `x` into the domain.
pub fn phi_second_derivative(spec: &DivergenceSpec, x: f64) -> f64 {
    match spec.kind {
        DivergenceKind::SquaredEuclidean => 2.0,
        DivergenceKind::GeneralizedKl => 1.0 / spec.clip(x),
        DivergenceKind::ItakuraSaito => {
            let x = spec.clip(x);
            1.0 / (x * x)
        }
    }
}

/// `sum_ij D(X_ij, Y_ij)`.
pub fn divergence(spec: &DivergenceSpec, x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            expected: x.shape(),
            found: y.shape(),
        });
    }
    Ok(spec.vector_divergence(x.as_slice(), y.as_slice()))
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceKind::SquaredEuclidean => "l2",
            DivergenceKind::GeneralizedKl => "kl",
            DivergenceKind::ItakuraSaito => "is",
        })
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(DivergenceKind::SquaredEuclidean),
            "kl" => Ok(DivergenceKind::GeneralizedKl),
            "is" => Ok(DivergenceKind::ItakuraSaito),
            other => Err(Error::InvalidArgument(format!(
                "unknown divergence {other:?} (expected l2, kl or is)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const KINDS: [DivergenceKind; 3] = [
        DivergenceKind::SquaredEuclidean,
        DivergenceKind::GeneralizedKl,
        DivergenceKind::ItakuraSaito,
    ];

    fn m(v: f64) -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![v]]).unwrap()
    }

    #[test]
    fn second_derivatives() {
        let se = DivergenceSpec::squared_euclidean();
        assert_eq!(phi_second_derivative(&se, 123.0), 2.0);
        assert_eq!(phi_second_derivative(&se, 0.0), 2.0);
        assert_eq!(phi_second_derivative(&DivergenceSpec::generalized_kl(), 4.0), 0.25);
        assert_eq!(phi_second_derivative(&DivergenceSpec::itakura_saito(), 2.0), 0.25);
    }

    #[test]
    fn closed_forms() {
        let kl = divergence(&DivergenceSpec::generalized_kl(), &m(2.0), &m(1.0)).unwrap();
        assert!((kl - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);
        assert!((kl - 0.386294).abs() < 1e-6);
        let is = divergence(&DivergenceSpec::itakura_saito(), &m(2.0), &m(1.0)).unwrap();
        assert!((is - (2.0 - 2f64.ln() - 1.0)).abs() < 1e-12);
        assert!((is - 0.306853).abs() < 1e-6);
        for kind in KINDS {
            let y = DenseMatrix::from_rows(&[vec![0.3, 2.0], vec![0.0, 7.5]]).unwrap();
            assert_eq!(divergence(&DivergenceSpec::new(kind), &y, &y).unwrap(), 0.0);
        }
    }

    #[test]
    fn closed_form_matches_generator_definition() {
        for kind in KINDS {
            let s = DivergenceSpec::new(kind);
            for (x, y) in [(0.5, 2.0), (3.0, 1.0), (1.0, 1.0), (7.0, 0.25)] {
                assert!((s.elementwise(x, y) - s.bregman(x, y)).abs() < 1e-10, "{kind} {x} {y}");
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = DenseMatrix::zeros(2, 2);
        let b = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            divergence(&DivergenceSpec::generalized_kl(), &a, &b),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zeros_are_clipped_not_rejected() {
        let kl = DivergenceSpec::generalized_kl();
        assert!((kl.elementwise(0.0, 3.0) - 3.0).abs() < 1e-15);
        let is = DivergenceSpec::itakura_saito();
        assert!(is.elementwise(0.0, 1.0).is_finite());
        assert_eq!(is.elementwise(0.0, 0.0), 0.0);
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        for kind in KINDS {
            let s = DivergenceSpec::new(kind);
            for x in [0.5, 1.0, 2.0, 10.0] {
                let h = 1e-5 * x;
                let fd = (s.phi_prime(x + h) - s.phi_prime(x - h)) / (2.0 * h);
                let exact = s.phi_second_derivative(x);
                assert!(((fd - exact) / exact).abs() < 1e-5, "{kind} at {x}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn parses_cli_names() {
        assert_eq!("kl".parse::<DivergenceKind>().unwrap(), DivergenceKind::GeneralizedKl);
        assert_eq!("IS".parse::<DivergenceKind>().unwrap(), DivergenceKind::ItakuraSaito);
        assert_eq!("l2".parse::<DivergenceKind>().unwrap(), DivergenceKind::SquaredEuclidean);
        assert!("l1".parse::<DivergenceKind>().is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_positive_off_diagonal(x in 0.01f64..20.0, y in 0.01f64..20.0) {
            for kind in KINDS {
                let d = DivergenceSpec::new(kind).elementwise(x, y);
                prop_assert!(d >= 0.0);
                if (x - y).abs() > 1e-3 {
                    prop_assert!(d > 0.0);
                }
            }
        }

        #[test]
        fn convex_in_first_argument(x1 in 0.01f64..20.0, x2 in 0.01f64..20.0, y in 0.01f64..20.0, t in 0.0f64..1.0) {
            for kind in KINDS {
                let s = DivergenceSpec::new(kind);
                let lhs = s.elementwise(t * x1 + (1.0 - t) * x2, y);
                let rhs = t * s.elementwise(x1, y) + (1.0 - t) * s.elementwise(x2, y);
                prop_assert!(lhs <= rhs + 1e-10, "{} {} {}", kind, lhs, rhs);
            }
        }
    }
}
