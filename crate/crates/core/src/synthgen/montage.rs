//! High-density montage: 194 long source-detector pairs and 4 short pairs,
//! each measured at 760 and 850 nm (388 long + 8 short channels).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WAVELENGTHS: [u32; 2] = [760, 850];
pub const N_LONG_PAIRS: usize = 194;
pub const N_SHORT_PAIRS: usize = 4;
pub const N_LONG_CHANNELS: usize = 2 * N_LONG_PAIRS;
pub const N_SHORT_CHANNELS: usize = 2 * N_SHORT_PAIRS;
/// HbO + HbR columns of a haemoglobin series.
pub const N_HAEMO: usize = 2 * N_LONG_PAIRS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub source: u32,
    pub detector: u32,
    pub wavelength: u32,
    pub distance_mm: f64,
    pub is_short: bool,
    /// Channel midpoint on the flattened cap, mm.
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    pub channels: Vec<Channel>,
}

/// A source-detector pair with the raw-channel index of each wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairIndex {
    pub channels: [usize; 2],
    pub distance_mm: f64,
}

impl Montage {
    /// Deterministic layout: sources and detectors alternate on an 11 x 10
    /// grid with 30 mm nominal spacing; per-pair distances are spread over
    /// 21-42 mm. Short pairs sit 8 mm from four sources.
    pub fn high_density() -> Self {
        let (rows, cols) = (11usize, 10usize);
        let spacing = 30.0;
        let mut optode = vec![vec![0u32; cols]; rows];
        let (mut n_src, mut n_det) = (0u32, 0u32);
        for (r, row) in optode.iter_mut().enumerate() {
            for (c, id) in row.iter_mut().enumerate() {
                if (r + c) % 2 == 0 {
                    n_src += 1;
                    *id = n_src;
                } else {
                    n_det += 1;
                    *id = n_det;
                }
            }
        }
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                for (dr, dc) in [(0usize, 1usize), (1, 0)] {
                    let (r2, c2) = (r + dr, c + dc);
                    if r2 >= rows || c2 >= cols {
                        continue;
                    }
                    let ((sr, sc), (dr_, dc_)) = if (r + c) % 2 == 0 { ((r, c), (r2, c2)) } else { ((r2, c2), (r, c)) };
                    pairs.push((optode[sr][sc], optode[dr_][dc_], [
                        (sc as f64 + dc_ as f64) * spacing / 2.0,
                        (sr as f64 + dr_ as f64) * spacing / 2.0,
                    ]));
                }
            }
        }
        pairs.truncate(N_LONG_PAIRS);
        let mut channels = Vec::with_capacity(N_LONG_CHANNELS + N_SHORT_CHANNELS);
        for (k, (s, d, pos)) in pairs.iter().enumerate() {
            // Low-discrepancy spread of distances across [21, 42) mm.
            let frac = (k as f64 * 0.618_033_988_75).fract();
            let distance = 21.0 + 21.0 * frac;
            for wl in WAVELENGTHS {
                channels.push(Channel {
                    source: *s,
                    detector: *d,
                    wavelength: wl,
                    distance_mm: distance,
                    is_short: false,
                    position: *pos,
                });
            }
        }
        let short_detector = n_det + 1;
        for k in 0..N_SHORT_PAIRS {
            let source = 1 + (k as u32) * (n_src / N_SHORT_PAIRS as u32);
            for wl in WAVELENGTHS {
                channels.push(Channel {
                    source,
                    detector: short_detector,
                    wavelength: wl,
                    distance_mm: 8.0,
                    is_short: true,
                    position: [k as f64 * 60.0, 0.0],
                });
            }
        }
        Montage { channels }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn long_indices(&self) -> Vec<usize> {
        (0..self.channels.len()).filter(|&i| !self.channels[i].is_short).collect()
    }

    pub fn short_indices(&self) -> Vec<usize> {
        (0..self.channels.len()).filter(|&i| self.channels[i].is_short).collect()
    }

    /// Long pairs in first-appearance order, wavelengths ordered 760 then 850.
    pub fn long_pairs(&self) -> Result<Vec<PairIndex>> {
        self.pairs(false)
    }

    pub fn short_pairs(&self) -> Result<Vec<PairIndex>> {
        self.pairs(true)
    }

    fn pairs(&self, short: bool) -> Result<Vec<PairIndex>> {
        let mut out: Vec<(u32, u32, [Option<usize>; 2], f64)> = Vec::new();
        for (i, ch) in self.channels.iter().enumerate().filter(|(_, c)| c.is_short == short) {
            let slot = WAVELENGTHS
                .iter()
                .position(|&w| w == ch.wavelength)
                .ok_or_else(|| Error::data(format!("channel {i} has unsupported wavelength {}", ch.wavelength)))?;
            match out.iter_mut().find(|p| p.0 == ch.source && p.1 == ch.detector) {
                Some(p) => p.2[slot] = Some(i),
                None => {
                    let mut idx = [None, None];
                    idx[slot] = Some(i);
                    out.push((ch.source, ch.detector, idx, ch.distance_mm));
                }
            }
        }
        out.into_iter()
            .map(|(s, d, idx, dist)| match idx {
                [Some(a), Some(b)] => Ok(PairIndex { channels: [a, b], distance_mm: dist }),
                _ => Err(Error::data(format!("pair S{s}-D{d} is missing a wavelength partner"))),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.is_short && ch.distance_mm >= 10.0 {
                return Err(Error::data(format!("short channel {i} is {} mm long", ch.distance_mm)));
            }
            if !ch.is_short && !(21.0..=42.0).contains(&ch.distance_mm) {
                return Err(Error::data(format!("long channel {i} distance {} mm outside 21-42", ch.distance_mm)));
            }
        }
        self.long_pairs()?;
        self.short_pairs()?;
        Ok(())
    }
}
