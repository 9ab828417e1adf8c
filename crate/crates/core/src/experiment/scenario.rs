use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{invalid, Result};
use crate::ratio::LikelihoodRatio;
use crate::rng::StreamRng;

/// A covariate-shift data source: training covariates from `P_X`, test
/// covariates from `Q_X`, one shared conditional law of `y` given `x`.
pub trait Scenario: Send + Sync {
    fn dim(&self) -> usize;
    /// Radius of the feature ball.
    fn b(&self) -> f64;
    /// Bound on `|y|`.
    fn i_bound(&self) -> f64;
    /// `dQ_X/dP_X`.
    fn ratio(&self) -> &LikelihoodRatio;
    fn sample_p_x(&self, rng: &mut StreamRng, count: usize) -> Vec<Vec<f64>>;
    fn sample_q_x(&self, rng: &mut StreamRng, count: usize) -> Vec<Vec<f64>>;
    fn sample_y_given_x(&self, rng: &mut StreamRng, x: &[f64]) -> f64;

    fn sample_p(&self, rng: &mut StreamRng, count: usize) -> Vec<Sample> {
        let xs = self.sample_p_x(rng, count);
        xs.into_iter()
            .map(|x| {
                let y = self.sample_y_given_x(rng, &x);
                Sample::new(x, y)
            })
            .collect()
    }

    fn sample_q(&self, rng: &mut StreamRng, count: usize) -> Vec<Sample> {
        let xs = self.sample_q_x(rng, count);
        xs.into_iter()
            .map(|x| {
                let y = self.sample_y_given_x(rng, &x);
                Sample::new(x, y)
            })
            .collect()
    }

    /// `count` training samples as a validated dataset.
    fn training_set(&self, rng: &mut StreamRng, count: usize) -> Result<Dataset> {
        Dataset::new(self.sample_p(rng, count), self.dim(), self.b(), self.i_bound())
    }
}

/// Which tilt a [`ShiftScenario`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftKind {
    /// `dQ/dP = (1+γu)/(1−γu)`, bounded by `(1+γ)/(1−γ)`.
    Bounded { gamma: f64 },
    /// `dQ/dP = (1−s)·v^{−s}`, unbounded with `E_P[(dQ/dP)²] = k_target²`.
    SecondMoment { k_target: f64 },
}

/// Serializable recipe for a [`ShiftScenario`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub shift: ShiftKind,
    pub d: usize,
    pub b: f64,
    pub noise_scale: f64,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<ShiftScenario> {
        match self.shift {
            ShiftKind::Bounded { gamma } => make_scenario_bounded(gamma, self.d, self.b, self.noise_scale),
            ShiftKind::SecondMoment { k_target } => {
                make_scenario_second_moment(k_target, self.d, self.b, self.noise_scale)
            }
        }
    }
}

/// Synthetic linear model on the cube `[−h, h]^d`, `h = b/√d` (so every
/// covariate lies in the ball of radius `b`). With `u = x₁/h ∈ [−1, 1]`:
///
/// * `y = θᵀx + σ(u)·ε`, `ε ~ U(−1, 1)`, `σ(u) = s₀ + s₁u` increasing in
///   `u`, so a tilt towards large `u` makes the test noise larger;
/// * `θ_j = (−1)^j/√d`, hence `|θᵀx| ≤ b` and `|y| ≤ b + noise_scale = I`.
#[derive(Debug, Clone)]
pub struct ShiftScenario {
    spec: ScenarioSpec,
    half_side: f64,
    theta: Vec<f64>,
    s0: f64,
    s1: f64,
    i_bound: f64,
    /// Exponent of the second-moment tilt; zero for the bounded kind.
    power: f64,
    ratio: LikelihoodRatio,
}

fn check_common(d: usize, b: f64, noise_scale: f64) -> Result<()> {
    if d == 0 {
        return Err(invalid("dimension d must be positive"));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid(format!("feature radius b must be positive, got {b}")));
    }
    if !(noise_scale > 0.0 && noise_scale.is_finite()) {
        return Err(invalid(format!("noise scale must be positive, got {noise_scale}")));
    }
    Ok(())
}

fn base(spec: ScenarioSpec, power: f64, ratio: LikelihoodRatio) -> ShiftScenario {
    let d = spec.d as f64;
    ShiftScenario {
        half_side: spec.b / d.sqrt(),
        theta: (0..spec.d)
            .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / d.sqrt())
            .collect(),
        s0: 0.625 * spec.noise_scale,
        s1: 0.375 * spec.noise_scale,
        i_bound: spec.b + spec.noise_scale,
        power,
        ratio,
        spec,
    }
}

/// Bounded-ratio scenario: `P_X ∝ 1 − γu`, `Q_X ∝ 1 + γu` on the cube,
/// so `dQ/dP = (1+γu)/(1−γu) ≤ B = (1+γ)/(1−γ)`.
pub fn make_scenario_bounded(gamma: f64, d: usize, b: f64, noise_scale: f64) -> Result<ShiftScenario> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid(format!("gamma must be in [0, 1), got {gamma}")));
    }
    check_common(d, b, noise_scale)?;
    let h = b / (d as f64).sqrt();
    let bound = (1.0 + gamma) / (1.0 - gamma);
    let ratio = LikelihoodRatio::bounded(bound, move |x: &[f64]| {
        let u = (x[0] / h).clamp(-1.0, 1.0);
        (1.0 + gamma * u) / (1.0 - gamma * u)
    })?;
    let spec = ScenarioSpec {
        shift: ShiftKind::Bounded { gamma },
        d,
        b,
        noise_scale,
    };
    Ok(base(spec, 0.0, ratio))
}

/// Exponent `s ∈ [0, 1/2)` with `(1−s)²/(1−2s) = k²`.
pub fn second_moment_power(k_target: f64) -> f64 {
    let a = k_target * k_target - 1.0;
    -a + (a * a + a).sqrt()
}

/// Square-integrable but unbounded ratio: `P_X` uniform on the cube,
/// `v = (u+1)/2`, `dQ/dP = (1−s)v^{−s}` with `E_P[(dQ/dP)²] = k_target²`.
pub fn make_scenario_second_moment(k_target: f64, d: usize, b: f64, noise_scale: f64) -> Result<ShiftScenario> {
    if !(k_target > 1.0 && k_target.is_finite()) {
        return Err(invalid(format!("k_target must be finite and > 1, got {k_target}")));
    }
    check_common(d, b, noise_scale)?;
    let s = second_moment_power(k_target);
    let h = b / (d as f64).sqrt();
    let ratio = LikelihoodRatio::second_moment(k_target, move |x: &[f64]| {
        let v = ((x[0] / h + 1.0) / 2.0).clamp(f64::MIN_POSITIVE, 1.0);
        (1.0 - s) * v.powf(-s)
    })?;
    let spec = ScenarioSpec {
        shift: ShiftKind::SecondMoment { k_target },
        d,
        b,
        noise_scale,
    };
    Ok(base(spec, s, ratio))
}

impl ShiftScenario {
    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// Declared sup of the ratio (bounded kind) or its second-moment root.
    pub fn ratio_bound(&self) -> f64 {
        self.ratio.bound_value()
    }

    /// `‖dQ/dP‖_{P,2}`, exact for both kinds.
    pub fn second_moment_norm(&self) -> f64 {
        match self.spec.shift {
            ShiftKind::Bounded { gamma } if gamma > 0.0 => {
                // ∫ (1+γu)² / (2(1−γu)) du over [−1, 1].
                (2.0 * ((1.0 + gamma) / (1.0 - gamma)).ln() / gamma - 3.0).sqrt()
            }
            ShiftKind::Bounded { .. } => 1.0,
            ShiftKind::SecondMoment { k_target } => k_target,
        }
    }

    /// `θᵀx`, the regression function.
    pub fn regression(&self, x: &[f64]) -> f64 {
        crate::ridge::dot(&self.theta, x)
    }

    fn noise_sd(&self, u: f64) -> f64 {
        self.s0 + self.s1 * u
    }

    fn uniform_rest(&self, rng: &mut StreamRng, first: f64) -> Vec<f64> {
        let h = self.half_side;
        let mut x = Vec::with_capacity(self.spec.d);
        x.push(first);
        for _ in 1..self.spec.d {
            x.push(rng.random_range(-h..=h));
        }
        x
    }

    /// `u` drawn from `P_X`'s first-coordinate law.
    fn draw_u_p(&self, rng: &mut StreamRng) -> f64 {
        match self.spec.shift {
            ShiftKind::Bounded { gamma } => loop {
                let u: f64 = rng.random_range(-1.0..=1.0);
                if rng.random::<f64>() * (1.0 + gamma) < 1.0 - gamma * u {
                    return u;
                }
            },
            ShiftKind::SecondMoment { .. } => rng.random_range(-1.0..=1.0),
        }
    }

    fn draw_x_p(&self, rng: &mut StreamRng) -> Vec<f64> {
        let u = self.draw_u_p(rng);
        self.uniform_rest(rng, u * self.half_side)
    }

    fn draw_x_q(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self.spec.shift {
            ShiftKind::Bounded { .. } => {
                // Rejection from P_X with acceptance ratio/B.
                let bound = self.ratio.bound_value();
                loop {
                    let x = self.draw_x_p(rng);
                    let r = self.ratio.eval(&x).expect("scenario ratio is finite on the cube");
                    if rng.random::<f64>() * bound < r {
                        return x;
                    }
                }
            }
            ShiftKind::SecondMoment { .. } => {
                let v = rng.random::<f64>().powf(1.0 / (1.0 - self.power));
                self.uniform_rest(rng, (2.0 * v - 1.0) * self.half_side)
            }
        }
    }

    /// CDF under `Q` of the score `|y − θᵀx|` at `t`.
    pub fn true_score_cdf_q(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t.is_infinite() {
            return 1.0;
        }
        let (s0, s1) = (self.s0, self.s1);
        // σ(u) ≤ t exactly when u ≤ u*.
        let u_star = ((t - s0) / s1).clamp(-1.0, 1.0);
        match self.spec.shift {
            ShiftKind::Bounded { gamma } => {
                // Q-density of u is (1+γu)/2; P(σ|ε| ≤ t | u) = min(1, t/σ(u)).
                let mass_below = |u: f64| (u + 1.0) / 2.0 + gamma * (u * u - 1.0) / 4.0;
                let g = |u: f64| gamma / s1 * u + (1.0 - gamma * s0 / s1) / s1 * (s0 + s1 * u).ln();
                (mass_below(u_star) + t / 2.0 * (g(1.0) - g(u_star))).min(1.0)
            }
            ShiftKind::SecondMoment { .. } => {
                // Substituting w = v^{1−s} turns the Q-law of v into U(0,1).
                let e = 1.0 / (1.0 - self.power);
                let w_star = ((u_star + 1.0) / 2.0).powf(1.0 - self.power);
                let f = |w: f64| t / self.noise_sd(2.0 * w.powf(e) - 1.0);
                (w_star + simpson(f, w_star, 1.0, 2000)).min(1.0)
            }
        }
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

impl Scenario for ShiftScenario {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn b(&self) -> f64 {
        self.spec.b
    }

    fn i_bound(&self) -> f64 {
        self.i_bound
    }

    fn ratio(&self) -> &LikelihoodRatio {
        &self.ratio
    }

    fn sample_p_x(&self, rng: &mut StreamRng, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.draw_x_p(rng)).collect()
    }

    fn sample_q_x(&self, rng: &mut StreamRng, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.draw_x_q(rng)).collect()
    }

    fn sample_y_given_x(&self, rng: &mut StreamRng, x: &[f64]) -> f64 {
        let u = (x[0] / self.half_side).clamp(-1.0, 1.0);
        let eps: f64 = rng.random_range(-1.0..=1.0);
        (self.regression(x) + self.noise_sd(u) * eps).clamp(-self.i_bound, self.i_bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::l2_norm;
    use crate::ratio::RatioRegime;
    use crate::rng::RngStream;

    fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn bounded_constants() {
        let s = make_scenario_bounded(0.5, 3, 1.0, 0.5).unwrap();
        assert_eq!(s.ratio_bound(), 3.0);
        assert_eq!(s.ratio().regime(), RatioRegime::Bounded(3.0));
        let flat = make_scenario_bounded(0.0, 3, 1.0, 0.5).unwrap();
        assert_eq!(flat.ratio_bound(), 1.0);
        let mut r = RngStream::new(1, 0).rng();
        for x in flat.sample_p_x(&mut r, 100) {
            assert_eq!(flat.ratio().eval(&x).unwrap(), 1.0);
        }
        assert!(make_scenario_bounded(1.0, 3, 1.0, 0.5).is_err());
        assert!(make_scenario_bounded(-0.1, 3, 1.0, 0.5).is_err());
        // γ = 1/2: E_P[r²] = 4 ln 3 − 3.
        assert!((s.second_moment_norm().powi(2) - 1.394_449_154_7).abs() < 1e-9);
    }

    #[test]
    fn samples_respect_bounds() {
        let s = make_scenario_bounded(0.8, 4, 1.5, 0.3).unwrap();
        let mut r = RngStream::new(2, 0).rng();
        for z in s.sample_p(&mut r, 2000).into_iter().chain(s.sample_q(&mut r, 2000)) {
            assert!(l2_norm(&z.x) <= 1.5 * (1.0 + 1e-12));
            assert!(z.y.abs() <= s.i_bound());
        }
        assert!(s.training_set(&mut r, 50).is_ok());
    }

    #[test]
    fn ratios_never_exceed_bound() {
        for seed in 0..4 {
            let s = make_scenario_bounded(0.5, 2, 1.0, 0.5).unwrap();
            let mut r = RngStream::new(seed, 0).rng();
            let worst = s
                .sample_p_x(&mut r, 250_000)
                .iter()
                .map(|x| s.ratio().eval(x).unwrap())
                .fold(0.0, f64::max);
            assert!(worst <= 3.0, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn ratio_integrates_to_one_under_p() {
        for s in [
            make_scenario_bounded(0.5, 2, 1.0, 0.5).unwrap(),
            make_scenario_second_moment(1.5, 2, 1.0, 0.5).unwrap(),
        ] {
            let mut r = RngStream::new(3, 0).rng();
            let v: Vec<f64> = s
                .sample_p_x(&mut r, 200_000)
                .iter()
                .map(|x| s.ratio().eval(x).unwrap())
                .collect();
            let (mean, se) = mean_and_stderr(&v);
            assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");
        }
    }

    #[test]
    fn second_moment_matches_target() {
        // E_P[r²] = E_Q[r]; the Q-side estimate has finite variance when
        // E_P[r³] < ∞, i.e. s < 1/3, which holds for k = 1.1.
        let k = 1.1;
        let s = make_scenario_second_moment(k, 2, 1.0, 0.5).unwrap();
        let mut r = RngStream::new(4, 0).rng();
        let v: Vec<f64> = s
            .sample_q_x(&mut r, 400_000)
            .iter()
            .map(|x| s.ratio().eval(x).unwrap())
            .collect();
        let (mean, se) = mean_and_stderr(&v);
        assert!((mean - k * k).abs() <= 3.0 * se, "{mean} ± {se}");
        let p = second_moment_power(k);
        assert!(((1.0 - p).powi(2) / (1.0 - 2.0 * p) - k * k).abs() < 1e-12);
    }

    #[test]
    fn second_moment_limit_is_flat() {
        let s = make_scenario_second_moment(1.0 + 1e-12, 2, 1.0, 0.5).unwrap();
        for x in [[-0.7, 0.0], [0.0, 0.3], [0.7, 0.1]] {
            assert!((s.ratio().eval(&x).unwrap() - 1.0).abs() < 1e-5);
        }
        assert!(make_scenario_second_moment(1.0, 2, 1.0, 0.5).is_err());
    }

    #[test]
    fn true_cdf_matches_monte_carlo() {
        for s in [
            make_scenario_bounded(0.5, 2, 1.0, 0.5).unwrap(),
            make_scenario_bounded(0.0, 3, 1.0, 0.8).unwrap(),
            make_scenario_second_moment(1.3, 2, 1.0, 0.5).unwrap(),
        ] {
            let mut r = RngStream::new(5, 0).rng();
            let scores: Vec<f64> = s
                .sample_q(&mut r, 200_000)
                .iter()
                .map(|z| (z.y - s.regression(&z.x)).abs())
                .collect();
            for t in [0.05, 0.12, 0.2, 0.3, 0.45] {
                let emp = scores.iter().filter(|&&v| v <= t).count() as f64 / scores.len() as f64;
                let exact = s.true_score_cdf_q(t);
                assert!((emp - exact).abs() < 0.005, "t={t}: {emp} vs {exact}");
            }
            assert_eq!(s.true_score_cdf_q(0.0), 0.0);
            assert!((s.true_score_cdf_q(10.0) - 1.0).abs() < 1e-12);
        }
    }
}
