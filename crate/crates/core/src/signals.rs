//! Sinusoidal dither and demodulation signals.
//!
//! Channel `i` is perturbed by `s_i(t) = a_i sin(ω r_i t)` and demodulated by
//! `m_i(t) = (2 / a_i) sin(ω r_i t)`. Rates are distinct positive integers, so
//! every channel shares the common period `T = 2π/ω` and the demodulators are
//! orthogonal to every other channel's dither over that period.

use std::f64::consts::TAU;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DitherError {
    #[error("dither needs at least one channel")]
    Empty,
    #[error("{amplitudes} amplitudes but {rates} rates")]
    LengthMismatch { amplitudes: usize, rates: usize },
    #[error("amplitude of channel {channel} is zero")]
    ZeroAmplitude { channel: usize },
    #[error("amplitude of channel {channel} is not finite")]
    NonFiniteAmplitude { channel: usize },
    #[error("rate of channel {channel} must be a positive integer, got {rate}")]
    NonPositiveRate { channel: usize, rate: i64 },
    #[error("channels {first} and {second} share rate {rate}")]
    DuplicateRate { first: usize, second: usize, rate: u32 },
    #[error("base frequency must be positive and finite, got {0}")]
    InvalidOmega(f64),
    #[error("overall amplitude must be positive and finite, got {0}")]
    InvalidScale(f64),
}

/// Validated dither configuration: amplitudes `a_i`, integer rates `r_i` and
/// base frequency `ω`. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DitherConfig {
    amplitudes: Vec<f64>,
    rates: Vec<u32>,
    omega: f64,
    a0: f64,
}

impl DitherConfig {
    pub fn new(amplitudes: &[f64], rates: &[i64], omega: f64) -> Result<Self, DitherError> {
        if amplitudes.len() != rates.len() {
            return Err(DitherError::LengthMismatch {
                amplitudes: amplitudes.len(),
                rates: rates.len(),
            });
        }
        if amplitudes.is_empty() {
            return Err(DitherError::Empty);
        }
        for (channel, &a) in amplitudes.iter().enumerate() {
            if !a.is_finite() {
                return Err(DitherError::NonFiniteAmplitude { channel });
            }
            if a == 0.0 {
                return Err(DitherError::ZeroAmplitude { channel });
            }
        }
        let mut checked = Vec::with_capacity(rates.len());
        for (channel, &rate) in rates.iter().enumerate() {
            if rate < 1 || rate > u32::MAX as i64 {
                return Err(DitherError::NonPositiveRate { channel, rate });
            }
            let rate = rate as u32;
            if let Some(first) = checked.iter().position(|&r| r == rate) {
                return Err(DitherError::DuplicateRate { first, second: channel, rate });
            }
            checked.push(rate);
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(DitherError::InvalidOmega(omega));
        }
        let a0 = amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
        Ok(Self { amplitudes: amplitudes.to_vec(), rates: checked, omega, a0 })
    }

    /// Single-channel dither at rate 1.
    pub fn scalar(amplitude: f64, omega: f64) -> Result<Self, DitherError> {
        Self::new(&[amplitude], &[1], omega)
    }

    /// Same channel ratios `a_i / a0`, rescaled so the overall amplitude is `a0`.
    pub fn scaled(&self, a0: f64) -> Result<Self, DitherError> {
        if !(a0.is_finite() && a0 > 0.0) {
            return Err(DitherError::InvalidScale(a0));
        }
        let factor = a0 / self.a0;
        let amplitudes: Vec<f64> = self.amplitudes.iter().map(|a| a * factor).collect();
        let rates: Vec<i64> = self.rates.iter().map(|&r| r as i64).collect();
        let mut out = Self::new(&amplitudes, &rates, self.omega)?;
        // keep the requested value rather than the re-summed one
        out.a0 = a0;
        Ok(out)
    }

    /// Same amplitudes and rates at a different base frequency.
    pub fn with_omega(&self, omega: f64) -> Result<Self, DitherError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(DitherError::InvalidOmega(omega));
        }
        Ok(Self { omega, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn rates(&self) -> &[u32] {
        &self.rates
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Common period `T = 2π/ω`.
    pub fn period(&self) -> f64 {
        TAU / self.omega
    }

    /// Overall amplitude `a0 = sqrt(Σ a_i²)`.
    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn r_max(&self) -> u32 {
        self.rates.iter().copied().max().unwrap_or(1)
    }

    /// Largest step that still samples the fastest channel 40 times per cycle.
    pub fn max_step(&self) -> f64 {
        self.period() / (40.0 * self.r_max() as f64)
    }

    /// `s(t)`, component `i` is `a_i sin(ω r_i t)`.
    pub fn dither_value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.dither_into(t, &mut out);
        out
    }

    pub fn dither_into(&self, t: f64, out: &mut [f64]) {
        for ((o, &a), &r) in out.iter_mut().zip(&self.amplitudes).zip(&self.rates) {
            *o = a * (self.omega * r as f64 * t).sin();
        }
    }

    /// `m(t)`, component `i` is `(2 / a_i) sin(ω r_i t)`.
    pub fn demod_value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.demod_into(t, &mut out);
        out
    }

    pub fn demod_into(&self, t: f64, out: &mut [f64]) {
        for ((o, &a), &r) in out.iter_mut().zip(&self.amplitudes).zip(&self.rates) {
            *o = 2.0 / a * (self.omega * r as f64 * t).sin();
        }
    }

    /// Dither and demodulation values at `nodes` uniform points of one period,
    /// `t_j = j T / nodes`. Evaluated through the phase `2π r_i j / nodes` so
    /// the table does not depend on ω.
    pub(crate) fn period_table(&self, nodes: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim();
        let mut dither = vec![0.0; nodes * n];
        let mut demod = vec![0.0; nodes * n];
        for j in 0..nodes {
            for i in 0..n {
                // reduce the phase index modulo nodes to keep the argument small
                let k = (self.rates[i] as u64 * j as u64) % nodes as u64;
                let sin = (TAU * k as f64 / nodes as f64).sin();
                dither[j * n + i] = self.amplitudes[i] * sin;
                demod[j * n + i] = 2.0 / self.amplitudes[i] * sin;
            }
        }
        (dither, demod)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn fig1() -> DitherConfig {
        DitherConfig::new(&[0.02], &[1], 10.0).unwrap()
    }

    #[test]
    fn fig1_config_derives_period_and_a0() {
        let cfg = fig1();
        assert_abs_diff_eq!(cfg.period(), 2.0 * PI / 10.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.a0(), 0.02, epsilon = 1e-15);
    }

    #[test]
    fn rejects_each_invalid_input_distinctly() {
        assert_eq!(
            DitherConfig::new(&[0.1, 0.1], &[1, 1], 1.0),
            Err(DitherError::DuplicateRate { first: 0, second: 1, rate: 1 })
        );
        assert_eq!(
            DitherConfig::new(&[0.0], &[1], 1.0),
            Err(DitherError::ZeroAmplitude { channel: 0 })
        );
        assert_eq!(
            DitherConfig::new(&[0.1], &[0], 1.0),
            Err(DitherError::NonPositiveRate { channel: 0, rate: 0 })
        );
        assert_eq!(
            DitherConfig::new(&[0.1], &[-2], 1.0),
            Err(DitherError::NonPositiveRate { channel: 0, rate: -2 })
        );
        assert_eq!(DitherConfig::new(&[0.1], &[1], 0.0), Err(DitherError::InvalidOmega(0.0)));
        assert_eq!(DitherConfig::new(&[], &[], 1.0), Err(DitherError::Empty));
        assert!(matches!(
            DitherConfig::new(&[0.1], &[1, 2], 1.0),
            Err(DitherError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dither_and_demod_values() {
        let cfg = fig1();
        assert_eq!(cfg.dither_value(0.0), vec![0.0]);
        assert_eq!(cfg.demod_value(0.0), vec![0.0]);
        assert_abs_diff_eq!(cfg.dither_value(PI / 20.0)[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.demod_value(PI / 20.0)[0], 100.0, epsilon = 1e-12);
    }

    #[test]
    fn dither_is_periodic() {
        let cfg = DitherConfig::new(&[0.3, -0.2, 0.1], &[1, 2, 5], 7.0).unwrap();
        let period = cfg.period();
        for j in 0..50 {
            let t = 0.137 * j as f64;
            let a = cfg.dither_value(t);
            let b = cfg.dither_value(t + period);
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn demodulation_is_orthonormal_against_dither() {
        // trapezoid over one period, evaluated directly from the time-domain signals
        let cfg = DitherConfig::new(&[0.05, -0.2, 0.7], &[1, 3, 4], 10.0).unwrap();
        let nodes = 512;
        let period = cfg.period();
        let n = cfg.dim();
        let mut acc = vec![0.0; n * n];
        for j in 0..nodes {
            let t = period * j as f64 / nodes as f64;
            let s = cfg.dither_value(t);
            let m = cfg.demod_value(t);
            for i in 0..n {
                for k in 0..n {
                    acc[i * n + k] += m[i] * s[k] / nodes as f64;
                }
            }
        }
        for i in 0..n {
            for k in 0..n {
                let expected = if i == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(acc[i * n + k], expected, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn demodulation_rejects_constants() {
        let cfg = DitherConfig::new(&[0.02, 0.04], &[1, 2], 10.0).unwrap();
        let (_, demod) = cfg.period_table(256);
        for c in [1.0, -3.5, 1e3] {
            for i in 0..2 {
                let avg: f64 = (0..256).map(|j| demod[j * 2 + i] * c).sum::<f64>() / 256.0;
                assert!(avg.abs() < 1e-12 * (1.0 + c.abs()), "channel {i}, c = {c}: {avg}");
            }
        }
    }

    #[test]
    fn period_table_matches_time_domain() {
        let cfg = DitherConfig::new(&[0.02, 0.5], &[2, 3], 13.0).unwrap();
        let nodes = 64;
        let (dither, demod) = cfg.period_table(nodes);
        for j in 0..nodes {
            let t = cfg.period() * j as f64 / nodes as f64;
            let s = cfg.dither_value(t);
            let m = cfg.demod_value(t);
            for i in 0..2 {
                assert_abs_diff_eq!(dither[j * 2 + i], s[i], epsilon = 1e-12);
                assert_abs_diff_eq!(demod[j * 2 + i], m[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn scaling_preserves_ratios() {
        let cfg = DitherConfig::new(&[0.3, 0.4], &[1, 2], 10.0).unwrap();
        let small = cfg.scaled(0.05).unwrap();
        assert_abs_diff_eq!(small.a0(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(small.amplitudes()[0] / small.a0(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(small.amplitudes()[1] / small.a0(), 0.8, epsilon = 1e-12);
        assert_eq!(small.rates(), cfg.rates());
        assert!(cfg.scaled(0.0).is_err());
    }
}
