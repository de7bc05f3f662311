//! Haemoglobin extinction coefficients and the modified Beer-Lambert relation
//! shared by the forward model and the inverse in `sigproc`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHIPPED: &str = include_str!("../../data/extinction.csv");

/// Molar extinction coefficients, cm⁻¹/M, decadic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionTable {
    /// (wavelength nm, ε_HbO, ε_HbR), ascending wavelength.
    pub rows: Vec<(u32, f64, f64)>,
}

impl ExtinctionTable {
    pub fn shipped() -> Self {
        Self::parse(SHIPPED).expect("shipped extinction table parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "wavelength_nm,hbo,hbr" {
                    return Err(Error::data(format!("extinction table: unexpected header '{line}'")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::data(format!("extinction table line {}: '{line}'", n + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            rows.push((
                f[0].trim().parse().map_err(|_| bad())?,
                f[1].trim().parse().map_err(|_| bad())?,
                f[2].trim().parse().map_err(|_| bad())?,
            ));
        }
        rows.sort_by_key(|r| r.0);
        if rows.is_empty() {
            return Err(Error::data("extinction table is empty"));
        }
        Ok(ExtinctionTable { rows })
    }

    pub fn coefficients(&self, wavelength: u32) -> Result<(f64, f64)> {
        self.rows
            .iter()
            .find(|r| r.0 == wavelength)
            .map(|r| (r.1, r.2))
            .ok_or_else(|| Error::data(format!("no extinction coefficients for {wavelength} nm")))
    }

    /// Matrix A with ΔOD = A · [ΔHbO, ΔHbR] for concentrations in µM and
    /// natural-log optical density; rows follow `wavelengths`.
    pub fn path_matrix(&self, wavelengths: [u32; 2], distance_mm: f64, ppf: f64) -> Result<[[f64; 2]; 2]> {
        let scale = std::f64::consts::LN_10 * 1e-6 * (distance_mm / 10.0) * ppf;
        let (o0, r0) = self.coefficients(wavelengths[0])?;
        let (o1, r1) = self.coefficients(wavelengths[1])?;
        Ok([[o0 * scale, r0 * scale], [o1 * scale, r1 * scale]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_has_both_wavelengths() {
        let t = ExtinctionTable::shipped();
        assert!(t.coefficients(760).is_ok() && t.coefficients(850).is_ok());
        assert!(t.coefficients(700).is_err());
        let (o, r) = t.coefficients(760).unwrap();
        assert!(r > o, "HbR dominates at 760 nm");
    }

    #[test]
    fn rejects_malformed() {
        assert!(ExtinctionTable::parse("").is_err());
        assert!(ExtinctionTable::parse("wavelength_nm,hbo,hbr\n760,x,1\n").is_err());
    }
}
