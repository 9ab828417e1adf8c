//! Known covariate likelihood ratios `dQ_X/dP_X`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Which integrability regime the ratio is declared to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", content = "value", rename_all = "snake_case")]
pub enum RatioRegime {
    /// `dQ/dP ≤ B` everywhere.
    Bounded(f64),
    /// `‖dQ/dP‖_{P,2} ≤ K`.
    SecondMoment(f64),
    /// `dQ/dP ≡ 1`.
    Unweighted,
}

type RatioFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct LikelihoodRatio {
    eval: Arc<RatioFn>,
    regime: RatioRegime,
}

impl fmt::Debug for LikelihoodRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LikelihoodRatio").field("regime", &self.regime).finish()
    }
}

impl LikelihoodRatio {
    pub fn unweighted() -> Self {
        Self {
            eval: Arc::new(|_| 1.0),
            regime: RatioRegime::Unweighted,
        }
    }

    pub fn bounded<F>(bound: f64, eval: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(invalid(format!("ratio bound must be positive and finite, got {bound}")));
        }
        Ok(Self {
            eval: Arc::new(eval),
            regime: RatioRegime::Bounded(bound),
        })
    }

    pub fn second_moment<F>(k: f64, eval: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if !(k > 0.0 && k.is_finite()) {
            return Err(invalid(format!(
                "second-moment bound must be positive and finite, got {k}"
            )));
        }
        Ok(Self {
            eval: Arc::new(eval),
            regime: RatioRegime::SecondMoment(k),
        })
    }

    pub fn regime(&self) -> RatioRegime {
        self.regime
    }

    /// `B`, `K`, or 1 for the unweighted ratio.
    pub fn bound_value(&self) -> f64 {
        match self.regime {
            RatioRegime::Bounded(b) => b,
            RatioRegime::SecondMoment(k) => k,
            RatioRegime::Unweighted => 1.0,
        }
    }

    pub fn is_unweighted(&self) -> bool {
        self.regime == RatioRegime::Unweighted
    }

    /// Evaluates the ratio, enforcing nonnegativity and, in the bounded
    /// regime, the declared bound.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let r = (self.eval)(x);
        if !(r >= 0.0) || r.is_infinite() {
            return Err(invalid(format!(
                "likelihood ratio must be finite and nonnegative, got {r}"
            )));
        }
        if let RatioRegime::Bounded(bound) = self.regime {
            if r > bound * (1.0 + 1e-12) {
                return Err(Error::RatioExceedsBound { value: r, bound });
            }
        }
        Ok(r)
    }

    pub fn eval_many<'a, I>(&self, xs: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        xs.into_iter().map(|x| self.eval(x)).collect()
    }
}
