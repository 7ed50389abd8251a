//! Second-order Butterworth low-pass design and zero-phase application.
//!
//! The design path is the bilinear transform of the analog Butterworth
//! prototype with frequency pre-warping at the cutoff, so the digital filter
//! hits the half-power point (−3.01 dB) exactly at the requested cutoff
//! ratio. Filtering is offline forward-backward (zero phase) with reflective
//! padding, sized at roughly three time constants of the dominant pole.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("cutoff ratio {0} outside (0, 0.5)")]
    InvalidCutoff(f64),
    #[error("unstable biquad: pole modulus {0} not inside the unit circle")]
    Unstable(f64),
    #[error("biquad DC gain {0} differs from 1 by more than 1e-9")]
    BadDcGain(f64),
    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
}

/// Low-pass specification: fixed second order, cutoff as a fraction of the
/// sampling frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowPassSpec {
    cutoff_ratio: f64,
}

impl LowPassSpec {
    pub const ORDER: usize = 2;

    pub fn new(cutoff_ratio: f64) -> Result<Self, DspError> {
        if !(cutoff_ratio > 0.0 && cutoff_ratio < 0.5) {
            return Err(DspError::InvalidCutoff(cutoff_ratio));
        }
        Ok(Self { cutoff_ratio })
    }

    pub fn cutoff_ratio(&self) -> f64 {
        self.cutoff_ratio
    }

    /// Settle length: ceil(3 / cutoff_ratio) samples, roughly three time
    /// constants of the dominant pole. Also used as the reflect-pad length.
    pub fn settle_len(&self) -> usize {
        (3.0 / self.cutoff_ratio).ceil() as usize
    }
}

/// Normalized biquad coefficients (a0 = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoefficients {
    /// Wraps coefficients, rejecting unstable poles and DC gain away from 1.
    pub fn new(b0: f64, b1: f64, b2: f64, a1: f64, a2: f64) -> Result<Self, DspError> {
        let coeffs = Self { b0, b1, b2, a1, a2 };
        let rho = coeffs.max_pole_modulus();
        if rho >= 1.0 {
            return Err(DspError::Unstable(rho));
        }
        let dc = coeffs.dc_gain();
        if (dc - 1.0).abs() > 1e-9 {
            return Err(DspError::BadDcGain(dc));
        }
        Ok(coeffs)
    }

    /// Largest modulus among the roots of z² + a1·z + a2.
    pub fn max_pole_modulus(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let r = disc.sqrt();
            let p1 = (-self.a1 + r) / 2.0;
            let p2 = (-self.a1 - r) / 2.0;
            p1.abs().max(p2.abs())
        } else {
            // Complex conjugate pair: |p|² = a2.
            self.a2.sqrt()
        }
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// |H(e^{j2π·ratio})| where `ratio` = f / fs.
    pub fn magnitude_at(&self, ratio: f64) -> f64 {
        let w = 2.0 * PI * ratio;
        let (re1, im1) = (w.cos(), -w.sin());
        let (re2, im2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b0 + self.b1 * re1 + self.b2 * re2;
        let num_im = self.b1 * im1 + self.b2 * im2;
        let den_re = 1.0 + self.a1 * re1 + self.a2 * re2;
        let den_im = self.a1 * im1 + self.a2 * im2;
        ((num_re * num_re + num_im * num_im) / (den_re * den_re + den_im * den_im)).sqrt()
    }

    /// One causal pass, direct form II transposed. The state starts at the
    /// steady-state response to the first sample, so a constant signal passes
    /// through exactly and edge steps leave no start-up transient.
    fn run(&self, signal: &[f64]) -> Vec<f64> {
        let x0 = signal[0];
        let mut s1 = (1.0 - self.b0) * x0;
        let mut s2 = (1.0 - self.b0 - self.b1 + self.a1) * x0;
        let mut out = Vec::with_capacity(signal.len());
        for &x in signal {
            let y = self.b0 * x + s1;
            s1 = self.b1 * x - self.a1 * y + s2;
            s2 = self.b2 * x - self.a2 * y;
            out.push(y);
        }
        out
    }
}

/// Designs the digital second-order Butterworth low-pass for `spec`.
///
/// Bilinear transform with pre-warping: K = tan(π·ratio), so the magnitude at
/// the cutoff is the prototype's half-power point.
pub fn design_butterworth2(spec: &LowPassSpec) -> BiquadCoefficients {
    let k = (PI * spec.cutoff_ratio).tan();
    let k2 = k * k;
    let norm = 1.0 + std::f64::consts::SQRT_2 * k + k2;
    BiquadCoefficients {
        b0: k2 / norm,
        b1: 2.0 * k2 / norm,
        b2: k2 / norm,
        a1: 2.0 * (k2 - 1.0) / norm,
        a2: (1.0 - std::f64::consts::SQRT_2 * k + k2) / norm,
    }
}

/// Applies the filter forward and backward (zero phase) with reflective
/// padding of `pad` samples on each side, cropped after.
///
/// The output has the input's length. Requires `signal.len() >= 3 * pad`.
pub fn apply_zero_phase(
    coeffs: &BiquadCoefficients,
    pad: usize,
    signal: &[f64],
) -> Result<Vec<f64>, DspError> {
    let n = signal.len();
    if n < 3 * pad || n < 3 {
        return Err(DspError::SignalTooShort {
            len: n,
            min: (3 * pad).max(3),
        });
    }
    let mut padded = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        padded.push(signal[i]);
    }
    padded.extend_from_slice(signal);
    for i in 1..=pad {
        padded.push(signal[n - 1 - i]);
    }

    let mut fwd = coeffs.run(&padded);
    fwd.reverse();
    let mut back = coeffs.run(&fwd);
    back.reverse();
    Ok(back[pad..pad + n].to_vec())
}
