//! Probabilistic-bit device model.
//!
//! A charge current `i_c` through the spin-Hall layer becomes a spin current
//! `beta * i_c`, which biases the steady-state magnetization distribution of
//! a low-barrier nanomagnet. The time-averaged magnetization is read through an
//! MTJ and an inverter chain, whose combined effect is captured by two fitted
//! factors: `eta_fit` scales the normalized spin current and `chi_fit` sets
//! the inverter gain. The result is a sigmoid `p0(i_c)`: the probability that
//! the device output is logic "0".

use rand::Rng;

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;

const QUAD_TOL: f64 = 1e-10;
const QUAD_MAX_DEPTH: u32 = 30;
const QUAD_MAX_ERROR: f64 = 1e-9;

/// Physical and fitted parameters of one p-bit. Lengths are in nanometres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PBitParams {
    /// Thermal barrier in units of kT.
    pub delta: f64,
    pub alpha: f64,
    pub theta_sh: f64,
    pub lambda_sf: f64,
    pub gshe_length: f64,
    pub gshe_width: f64,
    pub gshe_thickness: f64,
    /// Kelvin.
    pub temperature: f64,
    pub eta_fit: f64,
    pub chi_fit: f64,
}

impl PBitParams {
    /// Device of the reference design: 100 nm x 100 nm x 3.15 nm spin-Hall
    /// layer (theta = 0.5, lambda = 2.1 nm), damping 0.01, zero barrier, 300 K.
    /// Fitting factors are left at 1.
    pub fn reference() -> Self {
        PBitParams {
            delta: 0.0,
            alpha: 0.01,
            theta_sh: 0.5,
            lambda_sf: 2.1,
            gshe_length: 100.0,
            gshe_width: 100.0,
            gshe_thickness: 3.15,
            temperature: 300.0,
            eta_fit: 1.0,
            chi_fit: 1.0,
        }
    }

    pub fn with_fit(mut self, eta_fit: f64, chi_fit: f64) -> Self {
        self.eta_fit = eta_fit;
        self.chi_fit = chi_fit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda_sf", self.lambda_sf),
            ("gshe_length", self.gshe_length),
            ("gshe_width", self.gshe_width),
            ("gshe_thickness", self.gshe_thickness),
            ("temperature", self.temperature),
            ("eta_fit", self.eta_fit),
            ("chi_fit", self.chi_fit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta >= 0.0 && self.delta < 40.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in [0, 40) kT, got {}", self.delta)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.theta_sh >= 0.0) {
            return Err(Error::InvalidParameter(format!("theta_sh must be non-negative, got {}", self.theta_sh)));
        }
        Ok(())
    }

    /// Spin-current normalization `(4q/hbar) * alpha * kT`, in amperes.
    pub fn i0(&self) -> f64 {
        4.0 * ELEMENTARY_CHARGE / HBAR * self.alpha * BOLTZMANN * self.temperature
    }
}

/// Charge-to-spin current gain of the spin-Hall layer, assuming full spin
/// absorption by the free layer.
pub fn spin_current_gain(params: &PBitParams) -> Result<f64> {
    let (l, t, lambda) = (params.gshe_length, params.gshe_thickness, params.lambda_sf);
    if !(l > 0.0 && t > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "spin-Hall geometry must be positive (L={l}, t={t}, lambda={lambda})"
        )));
    }
    Ok((l / t) * params.theta_sh * (1.0 - 1.0 / (t / lambda).cosh()))
}

/// Unnormalized steady-state density of `m_z` under barrier `delta` and
/// normalized spin current `i_s`.
pub fn magnetization_density(m_z: f64, delta: f64, i_s: f64) -> Result<f64> {
    if !(m_z.abs() <= 1.0) {
        return Err(Error::Domain(format!("|m_z| must be <= 1, got {m_z}")));
    }
    Ok((delta * m_z * m_z + 2.0 * i_s * m_z).exp())
}

/// First and second moments of `m_z` by quadrature, with the integrand scaled
/// by its maximum so large spin currents do not overflow.
fn moments(delta: f64, i_s: f64) -> (f64, f64, f64, bool) {
    let peak = delta + 2.0 * i_s.abs();
    let rho = move |m: f64| (delta * m * m + 2.0 * i_s * m - peak).exp();
    // the moments are divided by z, so tighten the tolerance when z is small
    let scale = adaptive_simpson(rho, -1.0, 1.0, 1e-6, 12).value.min(1.0);
    let tol = QUAD_TOL * scale;
    let z = adaptive_simpson(rho, -1.0, 1.0, tol, QUAD_MAX_DEPTH);
    let m1 = adaptive_simpson(|m| m * rho(m), -1.0, 1.0, tol, QUAD_MAX_DEPTH);
    let m2 = adaptive_simpson(|m| m * m * rho(m), -1.0, 1.0, tol, QUAD_MAX_DEPTH);
    let mean = m1.value / z.value;
    let second = m2.value / z.value;
    // relative error of a ratio, scaled back to the normalized mean
    let err = (m1.error + mean.abs() * z.error) / z.value;
    let ok = z.converged && m1.converged && m2.converged;
    (mean, second, err, ok)
}

/// Average magnetization `<m_z>` by direct quadrature of the steady-state
/// density over `[-1, 1]`.
pub fn avg_magnetization_exact(delta: f64, i_s: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
    }
    let (mean, _, err, ok) = moments(delta, i_s);
    if !ok || err > QUAD_MAX_ERROR || !mean.is_finite() {
        return Err(Error::Numerical(format!(
            "quadrature error estimate {err:.3e} exceeds {QUAD_MAX_ERROR:e} (delta={delta}, i_s={i_s})"
        )));
    }
    Ok(mean)
}

/// Average magnetization used by the device curve. With a zero barrier the
/// density is exponential in `m_z` and the mean is exactly `L(2 i_s)`.
pub fn avg_magnetization(delta: f64, i_s: f64) -> f64 {
    if delta == 0.0 {
        langevin(2.0 * i_s)
    } else {
        moments(delta, i_s).0
    }
}

/// Langevin function `coth(x) - 1/x`.
pub fn langevin(x: f64) -> f64 {
    if x.abs() <= 1e-2 {
        let x2 = x * x;
        x * (1.0 / 3.0 - x2 * (1.0 / 45.0 - x2 * (2.0 / 945.0 - x2 / 4725.0)))
    } else {
        1.0 / x.tanh() - 1.0 / x
    }
}

/// A calibrated current-to-probability transfer curve.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCurve {
    pub params: PBitParams,
    pub gain_beta: f64,
    /// Optional (current A, p0) pairs the curve was fitted against.
    pub sample_points: Vec<(f64, f64)>,
}

impl DeviceCurve {
    pub fn new(params: PBitParams) -> Result<Self> {
        params.validate()?;
        let gain_beta = spin_current_gain(&params)?;
        if !(gain_beta > 0.0) {
            return Err(Error::InvalidParameter(format!("gain must be positive, got {gain_beta}")));
        }
        Ok(DeviceCurve { params, gain_beta, sample_points: Vec::new() })
    }

    /// Reference device fitted to the probability anchors measured on the
    /// weighted arrays (see [`crate::crossbar::probability_anchors`]).
    pub fn calibrated() -> Self {
        static CURVE: std::sync::OnceLock<DeviceCurve> = std::sync::OnceLock::new();
        CURVE
            .get_or_init(|| {
                let points = crate::crossbar::probability_anchors();
                let base = PBitParams::reference();
                let fit = fit_device_curve(&points, &base).expect("reference anchors fit");
                let mut curve =
                    DeviceCurve::new(base.with_fit(fit.eta_fit, fit.chi_fit)).expect("fitted parameters are valid");
                curve.sample_points = points;
                curve
            })
            .clone()
    }

    /// Normalized spin current produced by charge current `i_c`.
    pub fn normalized_spin_current(&self, i_c: f64) -> f64 {
        self.params.eta_fit * self.gain_beta * i_c / self.params.i0()
    }

    pub fn p0(&self, i_c: f64) -> f64 {
        output_probability(i_c, self)
    }

    /// `d p0 / d i_c` at zero current, in 1/A.
    pub fn zero_current_slope(&self) -> f64 {
        let second = if self.params.delta == 0.0 { 1.0 / 3.0 } else { moments(self.params.delta, 0.0).1 };
        // d<m>/di_s at i_s = 0 is 2 Var(m) = 2 <m^2>
        0.5 * self.params.chi_fit * 2.0 * second * self.params.eta_fit * self.gain_beta / self.params.i0()
    }
}

/// Steady-state probability that the p-bit outputs "0" for input current
/// `i_c` (A). Positive current pushes the probability towards 1.
pub fn output_probability(i_c: f64, curve: &DeviceCurve) -> f64 {
    let m = avg_magnetization(curve.params.delta, curve.normalized_spin_current(i_c));
    0.5 * (1.0 + (curve.params.chi_fit * m).tanh())
}

/// Outcome of [`fit_device_curve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFit {
    pub eta_fit: f64,
    pub chi_fit: f64,
    pub rmse: f64,
}

const LN_ETA_RANGE: (f64, f64) = (-27.631_021_115_928_547, 13.815_510_557_964_274); // 1e-12 .. 1e6
const LN_CHI_RANGE: (f64, f64) = (-27.631_021_115_928_547, 6.907_755_278_982_137); // 1e-12 .. 1e3
const FIT_MAX_ITER: usize = 10_000;
const FIT_TOL: f64 = 1e-10;

/// Least-squares fit of `(eta_fit, chi_fit)` to `(current A, p0)` points,
/// keeping every other parameter of `base` fixed. A log-spaced grid seeds a
/// coordinate descent in log space.
pub fn fit_device_curve(points: &[(f64, f64)], base: &PBitParams) -> Result<CurveFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: points.len() });
    }
    if let Some(&(i, p)) = points.iter().find(|(i, p)| !(*p > 0.0 && *p < 1.0) || !i.is_finite()) {
        return Err(Error::Domain(format!("point ({i}, {p}) must have finite current and p0 in (0,1)")));
    }
    let first = points[0].0;
    if points.iter().all(|(i, _)| *i == first) {
        return Err(Error::DegenerateData("all currents are equal".into()));
    }
    let template = DeviceCurve::new(*base)?;

    let sse = |ln_eta: f64, ln_chi: f64| -> f64 {
        let mut curve = template.clone();
        curve.params.eta_fit = ln_eta.exp();
        curve.params.chi_fit = ln_chi.exp();
        points
            .iter()
            .map(|&(i, p)| {
                let r = output_probability(i, &curve) - p;
                r * r
            })
            .sum()
    };
    let rmse = |s: f64| (s / points.len() as f64).sqrt();

    let ln10 = std::f64::consts::LN_10;
    let mut best = (0.0, 0.0, f64::INFINITY);
    for a in -60..=20 {
        for b in -30..=20 {
            let (le, lc) = (a as f64 * 0.1 * ln10, b as f64 * 0.1 * ln10);
            let s = sse(le, lc);
            if s < best.2 {
                best = (le, lc, s);
            }
        }
    }

    let (mut x, mut y, mut cur) = best;
    let mut step = 0.1 * ln10;
    for _ in 0..FIT_MAX_ITER {
        let before = rmse(cur);
        let mut improved = false;
        for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let nx = (x + dx).clamp(LN_ETA_RANGE.0, LN_ETA_RANGE.1);
            let ny = (y + dy).clamp(LN_CHI_RANGE.0, LN_CHI_RANGE.1);
            let s = sse(nx, ny);
            if s < cur {
                x = nx;
                y = ny;
                cur = s;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
        let gain = before - rmse(cur);
        if step < 1e-12 || (gain < FIT_TOL && step < 1e-6) {
            return Ok(CurveFit { eta_fit: x.exp(), chi_fit: y.exp(), rmse: rmse(cur) });
        }
    }
    Err(Error::Convergence { best: vec![x.exp(), y.exp()], rmse: rmse(cur) })
}

/// Draw one device output: 0 with probability `p0`, otherwise 1.
pub fn sample<R: Rng + ?Sized>(p0: f64, rng: &mut R) -> Result<u8> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Domain(format!("p0 must lie in [0,1], got {p0}")));
    }
    let u: f64 = rng.random();
    Ok(if u < p0 { 0 } else { 1 })
}

/// Format `x` with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// CSV export of the curve at the given currents (A).
pub fn curve_csv(curve: &DeviceCurve, currents: &[f64]) -> String {
    let mut out = String::from("current_uA,p0\n");
    for &i in currents {
        let p = output_probability(i, curve);
        out.push_str(&format!("{},{:.9}\n", sig6(i * 1e6), p));
    }
    out
}

/// `n` evenly spaced currents over `[lo, hi]` amperes, inclusive.
pub fn current_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn coth(x: f64) -> f64 {
        1.0 / x.tanh()
    }

    #[test]
    fn reference_gain() {
        let beta = spin_current_gain(&PBitParams::reference()).unwrap();
        assert!((beta - 9.1255).abs() < 1e-3, "beta = {beta}");
    }

    #[test]
    fn gain_vanishes_without_spin_hall_angle() {
        let mut p = PBitParams::reference();
        p.theta_sh = 0.0;
        assert_eq!(spin_current_gain(&p).unwrap(), 0.0);
    }

    #[test]
    fn gain_thin_layer_limit() {
        let mut p = PBitParams::reference();
        p.gshe_thickness = p.lambda_sf * 1e-6;
        let direct = spin_current_gain(&p).unwrap();
        let approx = p.gshe_length * p.theta_sh * p.gshe_thickness / (2.0 * p.lambda_sf * p.lambda_sf);
        assert!(((direct - approx) / approx).abs() < 0.01);
    }

    #[test]
    fn gain_rejects_bad_geometry() {
        let mut p = PBitParams::reference();
        p.gshe_thickness = 0.0;
        assert!(matches!(spin_current_gain(&p), Err(Error::InvalidParameter(_))));
        p.gshe_thickness = 3.15;
        p.lambda_sf = -1.0;
        assert!(matches!(spin_current_gain(&p), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn normalization_current() {
        let p = PBitParams::reference();
        let expected = (4.0 * ELEMENTARY_CHARGE / HBAR) * p.alpha * BOLTZMANN * p.temperature;
        assert!(((p.i0() - expected) / expected).abs() < 1e-9);
        assert!((p.i0() * 1e6 - 0.2517).abs() < 1e-3);
    }

    #[test]
    fn density_values() {
        assert_eq!(magnetization_density(0.0, 3.0, -2.0).unwrap(), 1.0);
        assert!((magnetization_density(1.0, 0.0, 0.5).unwrap() - std::f64::consts::E).abs() < 1e-12);
        let a = magnetization_density(0.4, 0.0, 1.25).unwrap();
        let b = magnetization_density(-0.4, 0.0, 1.25).unwrap();
        assert!((a * b - 1.0).abs() < 1e-12);
        assert!(matches!(magnetization_density(1.01, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn exact_average_magnetization() {
        assert!(avg_magnetization_exact(0.0, 0.0).unwrap().abs() < 1e-9);
        let m = avg_magnetization_exact(0.0, 0.5).unwrap();
        assert!((m - (coth(1.0) - 1.0)).abs() < 1e-6);
        assert!((m - 0.31304).abs() < 1e-5);
        let m = avg_magnetization_exact(0.0, 10.0).unwrap();
        assert!((m - 0.95).abs() < 1e-3);
        assert!(matches!(avg_magnetization_exact(-1.0, 0.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn exact_average_is_odd() {
        for &d in &[0.0, 0.5, 3.0] {
            for &i in &[0.1, 0.7, 4.0] {
                let a = avg_magnetization_exact(d, i).unwrap();
                let b = avg_magnetization_exact(d, -i).unwrap();
                assert!((a + b).abs() < 1e-9);
                assert!(a > -1.0 && a < 1.0);
            }
        }
    }

    #[test]
    fn langevin_values() {
        assert_eq!(langevin(0.0), 0.0);
        assert!((langevin(1.0) - 0.31304).abs() < 1e-5);
        assert!((langevin(1.0) - (coth(1.0) - 1.0)).abs() < 1e-12);
        assert!((langevin(-2.0) + 0.53731).abs() < 1e-5);
        // continuity across the series switch
        let (a, b) = (langevin(1.0000001e-2), langevin(0.9999999e-2));
        assert!(a > b && a - b < 1e-9);
        assert!((langevin(1e-6) - 1e-6 / 3.0).abs() < 1e-19);
    }

    #[test]
    fn unbiased_device_is_half() {
        let curve = DeviceCurve::calibrated();
        assert_eq!(curve.p0(0.0), 0.5);
    }

    #[test]
    fn calibrated_curve_hits_table_extremes() {
        let curve = DeviceCurve::calibrated();
        assert!((curve.p0(10.79e-6) - 0.95).abs() < 0.03);
        assert!((curve.p0(-14.23e-6) - 0.038).abs() < 0.02);
    }

    #[test]
    fn zero_current_slope_matches_finite_difference() {
        let curve = DeviceCurve::calibrated();
        let h = 1e-10;
        let fd = (curve.p0(h) - curve.p0(-h)) / (2.0 * h);
        assert!(((curve.zero_current_slope() - fd) / fd).abs() < 1e-5);

        let barrier = DeviceCurve::new(curve.params.with_fit(0.01, 1.5)).map(|mut c| {
            c.params.delta = 2.0;
            c
        });
        let c = barrier.unwrap();
        let fd = (c.p0(h) - c.p0(-h)) / (2.0 * h);
        assert!(((c.zero_current_slope() - fd) / fd).abs() < 1e-4);
    }

    #[test]
    fn fit_recovers_synthetic_parameters() {
        let base = PBitParams::reference();
        let truth = DeviceCurve::new(base.with_fit(0.012, 1.4)).unwrap();
        let points: Vec<(f64, f64)> =
            current_sweep(-20e-6, 20e-6, 11).into_iter().filter(|i| *i != 0.0).map(|i| (i, truth.p0(i))).collect();
        let fit = fit_device_curve(&points, &base).unwrap();
        assert!(((fit.eta_fit - 0.012) / 0.012).abs() < 0.02, "{fit:?}");
        assert!(((fit.chi_fit - 1.4) / 1.4).abs() < 0.02, "{fit:?}");
        assert!(fit.rmse < 1e-6);
    }

    #[test]
    fn flat_points_drive_chi_to_zero() {
        let points = [(-1e-6, 0.5), (0.0, 0.5), (1e-6, 0.5), (10e-6, 0.5)];
        let fit = fit_device_curve(&points, &PBitParams::reference()).unwrap();
        assert!(fit.chi_fit < 1e-3, "{fit:?}");
        assert!(fit.rmse < 1e-6);
    }

    #[test]
    fn fit_input_validation() {
        let base = PBitParams::reference();
        let three = [(1e-6, 0.6), (2e-6, 0.7), (3e-6, 0.8)];
        assert!(matches!(fit_device_curve(&three, &base), Err(Error::InsufficientData { .. })));
        let same = [(1e-6, 0.6), (1e-6, 0.7), (1e-6, 0.8), (1e-6, 0.9)];
        assert!(matches!(fit_device_curve(&same, &base), Err(Error::DegenerateData(_))));
        let bad = [(1e-6, 0.6), (2e-6, 1.0), (3e-6, 0.8), (4e-6, 0.9)];
        assert!(matches!(fit_device_curve(&bad, &base), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_sampling() {
        let mut rng = seeded(1);
        for _ in 0..1000 {
            assert_eq!(sample(1.0, &mut rng).unwrap(), 0);
            assert_eq!(sample(0.0, &mut rng).unwrap(), 1);
        }
        assert!(sample(1.5, &mut rng).is_err());
        assert!(sample(-0.1, &mut rng).is_err());
    }

    #[test]
    fn fair_sampling_concentrates() {
        let mut rng = seeded(2024);
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| sample(0.5, &mut rng).unwrap() == 0).count();
        let frac = zeros as f64 / n as f64;
        assert!((0.498..=0.502).contains(&frac), "{frac}");
    }

    #[test]
    fn sampling_reproducible() {
        let draw = |seed| {
            let mut rng = seeded(seed);
            (0..64).map(|_| sample(0.3, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn csv_format() {
        let curve = DeviceCurve::calibrated();
        let csv = curve_csv(&curve, &[-60e-6, 0.0, 10.79e-6]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "current_uA,p0");
        assert!(lines[1].starts_with("-60.0000,"));
        assert!(lines[2].starts_with("0,0.5"));
        assert!(lines[3].starts_with("10.7900,"));
    }

    #[test]
    fn sig6_digits() {
        assert_eq!(sig6(123.456789), "123.457");
        assert_eq!(sig6(0.00123456789), "0.00123457");
        assert_eq!(sig6(-2.5), "-2.50000");
        assert_eq!(sig6(1234567.0), "1234567");
    }
}
