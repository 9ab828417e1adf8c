//! Prediction intervals and sets: split and full conformal, jackknife,
//! jackknife+, its inflated variant, CV+, and their likelihood-ratio
//! weighted forms.

mod full;
mod jackknife;
mod split;

use serde::{Deserialize, Serialize};

pub use full::{
    default_grid, full_conformal, full_conformal_with_form, FullConformalForm, FullConformalPredictor, GridPoint,
    PredictionSet, DEFAULT_GRID_POINTS,
};
pub use jackknife::{
    assign_folds, cv_plus, cv_plus_with_folds, jackknife_plain, jackknife_plus, jackknife_plus_from_parts,
    jackknife_plus_inflated, jackknife_threshold, jaw, JackknifePlusPredictor,
};
pub use split::{split_conformal, SplitConformalPredictor};

use crate::error::{invalid, Result};
use crate::serde_ext;

/// Closed interval over the extended reals, or the empty set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PredictionInterval {
    Interval {
        #[serde(with = "serde_ext::ext_real")]
        lower: f64,
        #[serde(with = "serde_ext::ext_real")]
        upper: f64,
    },
    Empty,
}

impl PredictionInterval {
    /// `[lower, upper]`, or `Empty` when `lower > upper`.
    pub fn new(lower: f64, upper: f64) -> Self {
        if lower > upper {
            PredictionInterval::Empty
        } else {
            PredictionInterval::Interval { lower, upper }
        }
    }

    pub fn whole_line() -> Self {
        PredictionInterval::Interval {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        match *self {
            PredictionInterval::Interval { lower, upper } => lower <= y && y <= upper,
            PredictionInterval::Empty => false,
        }
    }

    pub fn width(&self) -> f64 {
        match *self {
            PredictionInterval::Interval { lower, upper } => upper - lower,
            PredictionInterval::Empty => 0.0,
        }
    }

    /// Widened by `epsilon` on both sides.
    pub fn inflate(&self, epsilon: f64) -> Self {
        match *self {
            PredictionInterval::Interval { lower, upper } => PredictionInterval::Interval {
                lower: lower - epsilon,
                upper: upper + epsilon,
            },
            PredictionInterval::Empty => PredictionInterval::Empty,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            PredictionInterval::Interval { lower, upper } => Some((lower, upper)),
            PredictionInterval::Empty => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Method {
    Split,
    Full,
    Jackknife,
    JackknifePlus,
    JackknifePlusInflated { epsilon: f64 },
    CvPlus { folds: usize },
    Jaw,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::Full => "full",
            Method::Jackknife => "jackknife",
            Method::JackknifePlus => "jackknife_plus",
            Method::JackknifePlusInflated { .. } => "jackknife_plus_inflated",
            Method::CvPlus { .. } => "cv_plus",
            Method::Jaw => "jaw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub alpha: f64,
    pub method: Method,
    pub weighted: bool,
}

impl MethodConfig {
    pub fn new(alpha: f64, method: Method, weighted: bool) -> Result<Self> {
        let cfg = Self {
            alpha,
            method,
            weighted,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        match self.method {
            Method::CvPlus { folds } if folds < 2 => Err(invalid("cv_plus requires at least 2 folds")),
            Method::JackknifePlusInflated { epsilon } if !(epsilon >= 0.0) => {
                Err(invalid("inflation epsilon must be nonnegative"))
            }
            _ => Ok(()),
        }
    }

    /// Label including the weighting, e.g. `split_weighted`.
    pub fn label(&self) -> String {
        match (self.method, self.weighted) {
            (Method::Jaw, _) => "jaw".to_string(),
            (m, true) => format!("{}_weighted", m.label()),
            (m, false) => m.label().to_string(),
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_basics() {
        let i = PredictionInterval::new(-1.0, 2.0);
        assert!(i.contains(-1.0) && i.contains(2.0) && !i.contains(2.1));
        assert_eq!(i.width(), 3.0);
        assert_eq!(PredictionInterval::new(1.0, 0.0), PredictionInterval::Empty);
        assert!(!PredictionInterval::Empty.contains(0.0));
        assert!(PredictionInterval::whole_line().contains(1e300));
        assert_eq!(i.inflate(1.0), PredictionInterval::new(-2.0, 3.0));
    }

    #[test]
    fn interval_json_handles_infinity() {
        let s = serde_json::to_string(&PredictionInterval::whole_line()).unwrap();
        assert_eq!(s, r#"{"kind":"interval","lower":"-inf","upper":"inf"}"#);
        let back: PredictionInterval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, PredictionInterval::whole_line());
    }

    #[test]
    fn method_config_validation() {
        assert!(MethodConfig::new(0.1, Method::CvPlus { folds: 1 }, false).is_err());
        assert!(MethodConfig::new(0.1, Method::JackknifePlusInflated { epsilon: -0.1 }, false).is_err());
        assert!(MethodConfig::new(1.0, Method::Split, false).is_err());
        assert_eq!(
            MethodConfig::new(0.1, Method::Split, true).unwrap().label(),
            "split_weighted"
        );
    }
}
