//! Zero-phase Butterworth band-pass filtering.
//!
//! Classic design chain: analog prototype poles, band-pass transform,
//! bilinear transform with edge pre-warping, second-order sections. The
//! zero-phase pass runs the cascade forward and backward over an odd
//! reflection of the signal with steady-state initial conditions, so edge
//! transients stay inside the padding.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    fn real(re: f64) -> Self {
        Complex { re, im: 0.0 }
    }

    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    fn scale(self, c: f64) -> Complex {
        Complex::new(self.re * c, self.im * c)
    }

    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    /// Principal square root.
    fn sqrt(self) -> Complex {
        let r = self.abs();
        let re = ((r + self.re) / 2.0).max(0.0).sqrt();
        let im_mag = ((r - self.re) / 2.0).max(0.0).sqrt();
        Complex::new(re, if self.im >= 0.0 { im_mag } else { -im_mag })
    }
}

/// One second-order section, coefficients in `z^{-1}` form with `a0 = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    fn response_at(&self, theta: f64) -> Complex {
        // H(e^{jθ}) with z^{-1} = e^{-jθ}.
        let z1 = Complex::new(theta.cos(), -theta.sin());
        let z2 = z1.mul(z1);
        let num = Complex::real(self.b0)
            .add(z1.scale(self.b1))
            .add(z2.scale(self.b2));
        let den = Complex::real(1.0)
            .add(z1.scale(self.a1))
            .add(z2.scale(self.a2));
        num.div(den)
    }
}

/// Cascaded second-order sections implementing a digital band-pass.
#[derive(Debug, Clone)]
pub struct BandpassFilter {
    sections: Vec<Biquad>,
    fs: f64,
    low: f64,
}

/// Analog Butterworth prototype order of the band-pass (pole pairs per edge).
const PROTOTYPE_ORDER: usize = 4;

impl BandpassFilter {
    /// Design a Butterworth band-pass with edges `low`/`high` Hz at sampling
    /// rate `fs`.
    pub fn design(low: f64, high: f64, fs: f64) -> Result<Self> {
        if !(high < fs / 2.0) {
            return Err(Error::Config(format!(
                "band-pass high edge {high} Hz violates the Nyquist limit {} Hz",
                fs / 2.0
            )));
        }
        if !(0.0 < low && low < high) {
            return Err(Error::Config(format!(
                "band-pass edges must satisfy 0 < low < high, got [{low}, {high}]"
            )));
        }

        // Pre-warped analog edge frequencies.
        let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
        let wl = warp(low);
        let wh = warp(high);
        let w0 = (wl * wh).sqrt();
        let bw = wh - wl;

        // Prototype poles on the unit circle, upper half only; conjugates are
        // reattached when the sections are assembled.
        let n = PROTOTYPE_ORDER;
        let mut analog_poles = Vec::new();
        for k in 0..n {
            let angle = std::f64::consts::PI * (2.0 * k as f64 + n as f64 + 1.0) / (2.0 * n as f64);
            let p = Complex::new(angle.cos(), angle.sin());
            if p.im <= 0.0 {
                continue;
            }
            // Band-pass transform: s^2 - p·bw·s + w0^2 = 0.
            let pb = p.scale(bw);
            let disc = pb.mul(pb).sub(Complex::real(4.0 * w0 * w0)).sqrt();
            analog_poles.push(pb.add(disc).scale(0.5));
            analog_poles.push(pb.sub(disc).scale(0.5));
        }

        // Bilinear transform; each analog pole and its implicit conjugate
        // become one digital biquad with zeros at z = ±1.
        let two_fs = Complex::real(2.0 * fs);
        let mut sections: Vec<Biquad> = analog_poles
            .iter()
            .map(|&s| {
                let zp = two_fs.add(s).div(two_fs.sub(s));
                Biquad {
                    b0: 1.0,
                    b1: 0.0,
                    b2: -1.0,
                    a1: -2.0 * zp.re,
                    a2: zp.abs() * zp.abs(),
                }
            })
            .collect();

        // Normalize to unit gain at the digital center frequency.
        let theta_c = 2.0 * std::f64::consts::PI * (low * high).sqrt() / fs;
        let mut mag = 1.0;
        for s in &sections {
            mag *= s.response_at(theta_c).abs();
        }
        let per_section = (1.0 / mag).powf(1.0 / sections.len() as f64);
        for s in &mut sections {
            s.b0 *= per_section;
            s.b1 *= per_section;
            s.b2 *= per_section;
        }

        Ok(BandpassFilter { sections, fs, low })
    }

    /// Single forward pass with the given initial scaling of the steady-state
    /// conditions (direct form II transposed).
    fn filter_once(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut stage_input = *x.first().unwrap_or(&0.0);
        for s in &self.sections {
            // Steady-state state for a constant input keeps a DC offset from
            // ringing through the cascade.
            let h1 = s.dc_gain();
            let y0 = h1 * stage_input;
            let mut s1 = y0 - s.b0 * stage_input;
            let mut s2 = s.b2 * stage_input - s.a2 * y0;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b0 * xin + s1;
                s1 = s.b1 * xin - s.a1 * out + s2;
                s2 = s.b2 * xin - s.a2 * out;
                *v = out;
            }
            stage_input = y0;
        }
        y
    }

    /// Forward-backward (zero-phase) application to one channel.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let t = x.len();
        if t < 2 {
            return x.to_vec();
        }
        // Enough padding for the slow low-edge transient to settle.
        let settle = (3.0 * self.fs / self.low).round() as usize;
        let padlen = settle.max(3 * (2 * self.sections.len() + 1)).min(t - 1);

        let mut ext = Vec::with_capacity(t + 2 * padlen);
        for i in 0..padlen {
            ext.push(2.0 * x[0] - x[padlen - i]);
        }
        ext.extend_from_slice(x);
        for i in 0..padlen {
            ext.push(2.0 * x[t - 1] - x[t - 2 - i]);
        }

        let mut y = self.filter_once(&ext);
        y.reverse();
        let mut y = self.filter_once(&y);
        y.reverse();
        y[padlen..padlen + t].to_vec()
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }
}
