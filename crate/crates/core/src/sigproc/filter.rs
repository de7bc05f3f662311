//! Butterworth band-pass as second-order sections, applied forward and
//! backward with odd-extension padding and steady-state initial conditions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One biquad, a0 normalised to 1: y = (b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form-II state reached after a unit step has settled.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    /// |H(e^{jω})| at `freq` for sampling rate `fs`.
    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let ni = -(self.b[1] * s1 + self.b[2] * s2);
        let dr = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let di = -(self.a[0] * s1 + self.a[1] * s2);
        ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Low,
    High,
}

/// Bilinear-transform Butterworth sections for one edge.
fn butter_edge(order: usize, cutoff: f64, fs: f64, kind: Kind) -> Vec<Biquad> {
    let w0 = 2.0 * PI * cutoff / fs;
    let (cw, sw) = (w0.cos(), w0.sin());
    let mut out = Vec::new();
    for k in 1..=order / 2 {
        let phi = if order % 2 == 0 {
            (2 * k - 1) as f64 * PI / (2 * order) as f64
        } else {
            k as f64 * PI / order as f64
        };
        let q = 1.0 / (2.0 * phi.cos());
        let alpha = sw / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match kind {
            Kind::Low => [(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0],
            Kind::High => [(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0],
        };
        out.push(Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * cw / a0, (1.0 - alpha) / a0],
        });
    }
    if order % 2 == 1 {
        let k = (w0 / 2.0).tan();
        let a1 = (k - 1.0) / (k + 1.0);
        let b = match kind {
            Kind::Low => [k / (1.0 + k), k / (1.0 + k), 0.0],
            Kind::High => [1.0 / (1.0 + k), -1.0 / (1.0 + k), 0.0],
        };
        out.push(Biquad { b, a: [a1, 0.0] });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPass {
    pub lo: f64,
    pub hi: f64,
    pub order: usize,
    pub fs: f64,
    pub sections: Vec<Biquad>,
}

impl BandPass {
    /// High-pass at `lo` cascaded with low-pass at `hi`, each of `order`.
    pub fn design(lo: f64, hi: f64, order: usize, fs: f64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::config(format!("sampling rate must be positive, got {fs}")));
        }
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(Error::config(format!(
                "band edges must satisfy 0 < lo < hi < fs/2 ({}), got lo={lo} hi={hi}",
                fs / 2.0
            )));
        }
        if order == 0 {
            return Err(Error::config("filter order must be at least 1"));
        }
        let mut sections = butter_edge(order, lo, fs, Kind::High);
        sections.extend(butter_edge(order, hi, fs, Kind::Low));
        Ok(BandPass { lo, hi, order, fs, sections })
    }

    /// One-pass magnitude response; the zero-phase response is its square.
    pub fn magnitude(&self, freq: f64) -> f64 {
        self.sections.iter().map(|s| s.magnitude(freq, self.fs)).product()
    }

    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    fn run(&self, x: &mut [f64]) {
        let mut scale = x[0];
        for s in &self.sections {
            let zi = s.step_state();
            let (mut z1, mut z2) = (zi[0] * scale, zi[1] * scale);
            for v in x.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[0] * y + z2;
                z2 = s.b[2] * xin - s.a[1] * y;
                *v = y;
            }
            scale *= s.dc_gain();
        }
    }

    /// Zero-phase filtering of one channel.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let pad = self.pad_len().min(n.saturating_sub(1));
        if n < 2 {
            return Err(Error::data("filtering needs at least 2 samples"));
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}
