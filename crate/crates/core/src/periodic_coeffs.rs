//! L-periodic coefficients as truncated Fourier series, and the full
//! coefficient set of the competition system.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn fft(samples: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Derivative of the trigonometric interpolant of periodic samples, at the
/// sample nodes. The Nyquist mode is dropped.
pub fn spectral_derivative(period: f64, samples: &[f64]) -> Vec<f64> {
    spectral_derivatives(period, samples, 1)
}

/// `order`-th derivative of the trigonometric interpolant at the nodes.
pub fn spectral_derivatives(period: f64, samples: &[f64], order: u32) -> Vec<f64> {
    let n = samples.len();
    let mut spec = fft(samples);
    let w = 2.0 * PI / period;
    for (k, c) in spec.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        if n.is_multiple_of(2) && k == n / 2 {
            *c = Complex::new(0.0, 0.0);
            continue;
        }
        *c *= Complex::new(0.0, w * kk).powu(order);
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.iter().map(|c| c.re / n as f64).collect()
}

/// Default number of samples per period for positivity checks.
pub const DEFAULT_SAMPLES: usize = 4096;

/// `f(x) = mean + sum_k cos[k-1] cos(2 pi k x / L) + sin[k-1] sin(2 pi k x / L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicFn {
    pub period: f64,
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl PeriodicFn {
    pub fn new(period: f64, mean: f64, cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Invalid(format!("period must be positive, got {period}")));
        }
        if !mean.is_finite() || cos.iter().chain(&sin).any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite Fourier coefficient".into()));
        }
        Ok(Self { period, mean, cos, sin })
    }

    pub fn constant(period: f64, value: f64) -> Self {
        Self { period, mean: value, cos: vec![], sin: vec![] }
    }

    /// `mean + amp cos(2 pi x / L)`.
    pub fn cosine(period: f64, mean: f64, amp: f64) -> Self {
        Self { period, mean, cos: vec![amp], sin: vec![] }
    }

    /// `mean + amp sin(2 pi x / L)`.
    pub fn sine(period: f64, mean: f64, amp: f64) -> Self {
        Self { period, mean, cos: vec![], sin: vec![amp] }
    }

    fn modes(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn coef(v: &[f64], k: usize) -> f64 {
        v.get(k).copied().unwrap_or(0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|&c| c == 0.0)
    }

    /// True when the sine part vanishes, so `f(-x) = f(x)`.
    pub fn is_even(&self) -> bool {
        self.sin.iter().all(|&c| c == 0.0)
    }

    /// True when the mean and cosine part vanish, so `f(-x) = -f(x)`.
    pub fn is_odd(&self) -> bool {
        self.mean == 0.0 && self.cos.iter().all(|&c| c == 0.0)
    }

    // sum over modes of g(k, cos(k w x), sin(k w x)), by angle addition
    fn fold_modes(&self, x: f64, mut g: impl FnMut(usize, f64, f64) -> f64) -> f64 {
        let (s1, c1) = (2.0 * PI * x / self.period).sin_cos();
        let (mut ck, mut sk) = (c1, s1);
        let mut acc = 0.0;
        for k in 0..self.modes() {
            acc += g(k, ck, sk);
            (ck, sk) = (ck * c1 - sk * s1, sk * c1 + ck * s1);
        }
        acc
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.mean + self.fold_modes(x, |k, c, s| Self::coef(&self.cos, k) * c + Self::coef(&self.sin, k) * s)
    }

    pub fn eval_d1(&self, x: f64) -> f64 {
        let w = 2.0 * PI / self.period;
        self.fold_modes(x, |k, c, s| {
            w * (k + 1) as f64 * (-Self::coef(&self.cos, k) * s + Self::coef(&self.sin, k) * c)
        })
    }

    pub fn eval_d2(&self, x: f64) -> f64 {
        let w = 2.0 * PI / self.period;
        self.fold_modes(x, |k, c, s| {
            let wk = w * (k + 1) as f64;
            -wk * wk * (Self::coef(&self.cos, k) * c + Self::coef(&self.sin, k) * s)
        })
    }

    /// Values at `x_j = j L / n`, `j = 0..n`.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        let h = self.period / n as f64;
        (0..n).map(|j| self.eval(j as f64 * h)).collect()
    }

    /// Upper bound on `|f'|` from the coefficients.
    pub fn lipschitz_bound(&self) -> f64 {
        let w = 2.0 * PI / self.period;
        (0..self.modes())
            .map(|k| w * (k + 1) as f64 * (Self::coef(&self.cos, k).abs() + Self::coef(&self.sin, k).abs()))
            .sum()
    }

    /// Upper bound on `|f''|` from the coefficients.
    pub fn curvature_bound(&self) -> f64 {
        let w = 2.0 * PI / self.period;
        (0..self.modes())
            .map(|k| {
                let wk = w * (k + 1) as f64;
                wk * wk * (Self::coef(&self.cos, k).abs() + Self::coef(&self.sin, k).abs())
            })
            .sum()
    }

    /// Pointwise `self * s + t`, kept in Fourier form.
    pub fn affine(&self, s: f64, t: f64) -> Self {
        Self {
            period: self.period,
            mean: self.mean * s + t,
            cos: self.cos.iter().map(|c| c * s).collect(),
            sin: self.sin.iter().map(|c| c * s).collect(),
        }
    }

    /// Trigonometric interpolant of `samples` taken at `x_j = j L / n`. The
    /// Nyquist mode of an even `n` is kept as a pure cosine, halved.
    pub fn interpolate(period: f64, samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Invalid("cannot interpolate zero samples".into()));
        }
        let spec = fft(samples);
        let nf = n as f64;
        let kmax = n / 2;
        let mut cos = vec![0.0; kmax];
        let mut sin = vec![0.0; kmax];
        for k in 1..=kmax {
            let c = spec[k];
            if 2 * k == n {
                cos[k - 1] = c.re / nf;
            } else {
                cos[k - 1] = 2.0 * c.re / nf;
                sin[k - 1] = -2.0 * c.im / nf;
            }
        }
        Self::new(period, spec[0].re / nf, cos, sin)
    }

    /// Sampled minimum and a rigorous lower bound for the true minimum.
    pub fn min_certified(&self, n: usize) -> (f64, f64, f64) {
        let h = self.period / n as f64;
        let (mut m, mut xm) = (f64::INFINITY, 0.0);
        for j in 0..n {
            let x = j as f64 * h;
            let v = self.eval(x);
            if v < m {
                m = v;
                xm = x;
            }
        }
        // Between samples f is above its chord minus h^2 max|f''| / 8, and
        // within h/2 of a sample by the Lipschitz bound; take the tighter one.
        let slack = (0.5 * h * self.lipschitz_bound()).min(h * h * self.curvature_bound() / 8.0);
        (m, xm, m - slack)
    }
}

/// Full coefficient set of the two-species competition system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitionSystem {
    pub period: f64,
    pub d1: PeriodicFn,
    pub d2: PeriodicFn,
    pub a1: PeriodicFn,
    pub a2: PeriodicFn,
    pub b1: PeriodicFn,
    pub b2: PeriodicFn,
    pub a11: PeriodicFn,
    pub a12: PeriodicFn,
    pub a21: PeriodicFn,
    pub a22: PeriodicFn,
}

/// One line of a [`ValidationReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMin {
    pub name: String,
    pub sampled_min: f64,
    pub at_x: f64,
    pub certified_min: f64,
    /// The sampled minimum is positive but the certified bound is not.
    pub near_violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub minima: Vec<CoefficientMin>,
    /// Sampled ellipticity constant `min(min d1, min d2)`.
    pub d0: f64,
    /// Lower bound on the ellipticity constant including the sampling slack.
    pub d0_certified: f64,
    /// Smallest certified minimum over all sign-constrained coefficients.
    pub margin: f64,
}

impl CompetitionSystem {
    /// All coefficients constant.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        period: f64,
        d: [f64; 2],
        a: [f64; 2],
        b: [f64; 2],
        a11: f64,
        a12: f64,
        a21: f64,
        a22: f64,
    ) -> Self {
        let c = |v| PeriodicFn::constant(period, v);
        Self {
            period,
            d1: c(d[0]),
            d2: c(d[1]),
            a1: c(a[0]),
            a2: c(a[1]),
            b1: c(b[0]),
            b2: c(b[1]),
            a11: c(a11),
            a12: c(a12),
            a21: c(a21),
            a22: c(a22),
        }
    }

    /// `d = 1`, `a = 0`, `b = 1` and the given competition constants.
    pub fn unit_constants(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self::constant(1.0, [1.0, 1.0], [0.0, 0.0], [1.0, 1.0], a11, a12, a21, a22)
    }

    /// `(name, coefficient)` pairs in declaration order.
    pub fn named(&self) -> [(&'static str, &PeriodicFn); 10] {
        [
            ("d1", &self.d1),
            ("d2", &self.d2),
            ("a1", &self.a1),
            ("a2", &self.a2),
            ("b1", &self.b1),
            ("b2", &self.b2),
            ("a11", &self.a11),
            ("a12", &self.a12),
            ("a21", &self.a21),
            ("a22", &self.a22),
        ]
    }

    /// Parses the structured-text format: a top-level `period` and one
    /// table per coefficient. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SystemFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_system()
    }

    pub fn to_toml_string(&self) -> String {
        let file = SystemFile::from_system(self);
        toml::to_string(&file).expect("system serializes")
    }
}

/// Check ellipticity and positivity of the competition coefficients.
pub fn validate_system(s: &CompetitionSystem, n_samples: usize) -> Result<ValidationReport> {
    if n_samples < 64 {
        return Err(Error::Invalid(format!("n_samples must be at least 64, got {n_samples}")));
    }
    for (name, f) in s.named() {
        if (f.period - s.period).abs() > 1e-12 * s.period {
            return Err(Error::Config(format!(
                "coefficient {name} has period {} but the system period is {}",
                f.period, s.period
            )));
        }
    }
    let checked = [
        ("d1", &s.d1),
        ("d2", &s.d2),
        ("a11", &s.a11),
        ("a12", &s.a12),
        ("a21", &s.a21),
        ("a22", &s.a22),
    ];
    let mut minima = Vec::with_capacity(checked.len());
    for (name, f) in checked {
        let (m, x, cert) = f.min_certified(n_samples);
        if m <= 0.0 {
            return Err(Error::NotPositive { coefficient: name.into(), x, value: m });
        }
        minima.push(CoefficientMin {
            name: name.into(),
            sampled_min: m,
            at_x: x,
            certified_min: cert,
            near_violation: cert <= 0.0,
        });
    }
    let d0 = minima[0].sampled_min.min(minima[1].sampled_min);
    let d0_certified = minima[0].certified_min.min(minima[1].certified_min);
    let margin = minima.iter().map(|m| m.certified_min).fold(f64::INFINITY, f64::min);
    Ok(ValidationReport { n_samples, minima, d0, d0_certified, margin })
}

/// Coefficient table as written in config files; the period lives at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefBlock {
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl CoefBlock {
    pub fn zero() -> Self {
        Self { mean: 0.0, cos: vec![], sin: vec![] }
    }

    pub fn to_fn(&self, period: f64) -> Result<PeriodicFn> {
        PeriodicFn::new(period, self.mean, self.cos.clone(), self.sin.clone())
    }

    pub fn from_fn(f: &PeriodicFn) -> Self {
        Self { mean: f.mean, cos: f.cos.clone(), sin: f.sin.clone() }
    }
}

/// On-disk layout of a system. Advection blocks may be omitted (zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub period: f64,
    pub d1: CoefBlock,
    pub d2: CoefBlock,
    #[serde(default = "CoefBlock::zero")]
    pub a1: CoefBlock,
    #[serde(default = "CoefBlock::zero")]
    pub a2: CoefBlock,
    pub b1: CoefBlock,
    pub b2: CoefBlock,
    pub a11: CoefBlock,
    pub a12: CoefBlock,
    pub a21: CoefBlock,
    pub a22: CoefBlock,
}

impl SystemFile {
    pub fn into_system(self) -> Result<CompetitionSystem> {
        let p = self.period;
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::Config(format!("period must be positive, got {p}")));
        }
        let f = |b: &CoefBlock| b.to_fn(p).map_err(|e| Error::Config(e.to_string()));
        Ok(CompetitionSystem {
            period: p,
            d1: f(&self.d1)?,
            d2: f(&self.d2)?,
            a1: f(&self.a1)?,
            a2: f(&self.a2)?,
            b1: f(&self.b1)?,
            b2: f(&self.b2)?,
            a11: f(&self.a11)?,
            a12: f(&self.a12)?,
            a21: f(&self.a21)?,
            a22: f(&self.a22)?,
        })
    }

    pub fn from_system(s: &CompetitionSystem) -> Self {
        Self {
            period: s.period,
            d1: CoefBlock::from_fn(&s.d1),
            d2: CoefBlock::from_fn(&s.d2),
            a1: CoefBlock::from_fn(&s.a1),
            a2: CoefBlock::from_fn(&s.a2),
            b1: CoefBlock::from_fn(&s.b1),
            b2: CoefBlock::from_fn(&s.b2),
            a11: CoefBlock::from_fn(&s.a11),
            a12: CoefBlock::from_fn(&s.a12),
            a21: CoefBlock::from_fn(&s.a21),
            a22: CoefBlock::from_fn(&s.a22),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_evaluates_to_itself() {
        assert_eq!(PeriodicFn::constant(1.0, 1.5).eval(0.3), 1.5);
    }

    #[test]
    fn sine_quarter_period() {
        let f = PeriodicFn::sine(1.0, 1.0, 0.5);
        assert!((f.eval(0.25) - 1.5).abs() < 1e-15);
        assert!((f.eval(1.37) - f.eval(0.37)).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_closed_form() {
        let f = PeriodicFn::new(2.0, 0.3, vec![0.2, -0.1], vec![0.4]).unwrap();
        let w = PI;
        let x = 0.77;
        let d1 = -0.2 * w * (w * x).sin() + 0.4 * w * (w * x).cos() + 0.1 * 2.0 * w * (2.0 * w * x).sin();
        let d2 = -0.2 * w * w * (w * x).cos() - 0.4 * w * w * (w * x).sin() + 0.1 * 4.0 * w * w * (2.0 * w * x).cos();
        assert!((f.eval_d1(x) - d1).abs() < 1e-12);
        assert!((f.eval_d2(x) - d2).abs() < 1e-12);
    }

    #[test]
    fn interpolant_reproduces_samples_and_modes() {
        let f = PeriodicFn::new(2.0, 0.4, vec![0.3, 0.0, -0.2], vec![0.1, 0.5]).unwrap();
        let g = PeriodicFn::interpolate(2.0, &f.sample(16)).unwrap();
        for x in [0.0, 0.123, 0.77, 1.9] {
            assert!((f.eval(x) - g.eval(x)).abs() < 1e-13);
        }
        let odd = PeriodicFn::interpolate(2.0, &f.sample(15)).unwrap();
        assert!((f.eval(0.3) - odd.eval(0.3)).abs() < 1e-13);
    }

    #[test]
    fn spectral_derivative_exact_for_band_limited() {
        let f = PeriodicFn::new(1.5, 0.4, vec![0.3, 0.0, -0.2], vec![0.1, 0.5]).unwrap();
        let n = 32;
        let d1 = spectral_derivative(1.5, &f.sample(n));
        let d2 = spectral_derivatives(1.5, &f.sample(n), 2);
        for j in 0..n {
            let x = j as f64 * 1.5 / n as f64;
            assert!((d1[j] - f.eval_d1(x)).abs() < 1e-11);
            assert!((d2[j] - f.eval_d2(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn validate_constants() {
        let s = CompetitionSystem::constant(1.0, [0.7, 1.3], [0.0, 0.0], [1.0, 1.0], 1.0, 1.5, 1.5, 1.0);
        let r = validate_system(&s, 256).unwrap();
        assert_eq!(r.d0, 0.7);
        assert_eq!(r.d0_certified, 0.7);
    }

    #[test]
    fn validate_rejects_negative_diffusion() {
        let mut s = CompetitionSystem::unit_constants(1.0, 1.5, 1.5, 1.0);
        s.d1 = PeriodicFn::cosine(1.0, 1.0, 1.2);
        match validate_system(&s, 256) {
            Err(Error::NotPositive { coefficient, x, value }) => {
                assert_eq!(coefficient, "d1");
                assert!((x - 0.5).abs() < 0.01, "x = {x}");
                assert!(value < 0.0);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn validate_cosine_diffusion_against_dense_sampling() {
        let mut s = CompetitionSystem::unit_constants(1.0, 1.5, 1.5, 1.0);
        s.d1 = PeriodicFn::cosine(1.0, 1.0, 0.5);
        let r = validate_system(&s, 256).unwrap();
        let dense = s.d1.sample(65536).into_iter().fold(f64::INFINITY, f64::min);
        assert!((r.d0 - dense).abs() < 1e-6);
        assert!(r.d0_certified <= dense && r.d0_certified > 0.49);
    }

    #[test]
    fn validate_rejects_small_sample_count() {
        let s = CompetitionSystem::unit_constants(1.0, 1.5, 1.5, 1.0);
        assert!(validate_system(&s, 32).is_err());
    }

    #[test]
    fn toml_round_trip_and_strictness() {
        let text = r#"
period = 1.0
[d1]
mean = 1.0
cos = [0.5]
[d2]
mean = 1.0
[b1]
mean = 1.0
sin = [0.0, 0.1]
[b2]
mean = 1.0
[a11]
mean = 1.0
[a12]
mean = 1.5
[a21]
mean = 1.5
[a22]
mean = 1.0
"#;
        let s = CompetitionSystem::from_toml_str(text).unwrap();
        assert_eq!(s.d1.cos, vec![0.5]);
        assert!(s.a1.is_constant() && s.a1.mean == 0.0);
        let again = CompetitionSystem::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);

        let bad = text.replace("[d2]\nmean = 1.0", "[d2]\nmean = 1.0\nphase = 2.0");
        assert!(matches!(CompetitionSystem::from_toml_str(&bad), Err(Error::Config(_))));
        let bad_top = format!("extra = 1\n{text}");
        assert!(matches!(CompetitionSystem::from_toml_str(&bad_top), Err(Error::Config(_))));
    }

    fn arb_fn() -> impl Strategy<Value = PeriodicFn> {
        (
            0.5f64..3.0,
            -2.0f64..2.0,
            proptest::collection::vec(-1.0f64..1.0, 0..4),
            proptest::collection::vec(-1.0f64..1.0, 0..4),
        )
            .prop_map(|(p, m, c, s)| PeriodicFn::new(p, m, c, s).unwrap())
    }

    proptest! {
        #[test]
        fn periodic_in_x(f in arb_fn(), x in -10.0f64..10.0) {
            prop_assert!((f.eval(x + f.period) - f.eval(x)).abs() < 1e-12);
        }

        #[test]
        fn first_derivative_second_order(f in arb_fn(), x in 0.0f64..3.0) {
            let hs = [1e-3, 5e-4, 2.5e-4];
            let errs: Vec<f64> = hs
                .iter()
                .map(|&h| ((f.eval(x + h) - f.eval(x - h)) / (2.0 * h) - f.eval_d1(x)).abs())
                .collect();
            // the leading error is f''' h^2 / 6; check it scales like h^2
            let w = 2.0 * PI / f.period;
            let bound: f64 = (0..f.modes())
                .map(|k| {
                    let wk = w * (k + 1) as f64;
                    wk.powi(3) * (PeriodicFn::coef(&f.cos, k).abs() + PeriodicFn::coef(&f.sin, k).abs())
                })
                .sum();
            for (h, e) in hs.iter().zip(&errs) {
                prop_assert!(*e <= bound * h * h / 6.0 + 1e-9);
            }
            if errs[2] > 1e-9 {
                let order = (errs[0] / errs[2]).log2() / 2.0;
                prop_assert!((order - 2.0).abs() < 0.1, "order {}", order);
            }
        }
    }
}
