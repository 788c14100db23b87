//! Unit-energy constellations with explicit symbol labels and bit mappings.
//!
//! Symbols of ring constellations are numbered ring by ring, innermost ring
//! first, and counterclockwise from the ring's phase offset. Square QAM
//! symbols are numbered row-major from the bottom-left corner, so symbol
//! `row * side + col` sits at column `col` (left to right) and row `row`
//! (bottom to top).

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bits::{ceil_log2, gray, BitString};
use crate::error::{Error, Result};

const ANGLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    QamSquare,
    ApskRings,
    Irregular,
}

/// One ring of equally spaced points at angles `phase_offset + 2πk/M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub radius: f64,
    pub num_points: usize,
    #[serde(rename = "phase_offset_rad")]
    pub phase_offset: f64,
}

impl RingSpec {
    pub fn new(radius: f64, num_points: usize, phase_offset: f64) -> Self {
        RingSpec { radius, num_points, phase_offset }
    }

    /// Angular spacing between neighbouring points.
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.num_points as f64
    }

    /// True iff the phase offset is `π/M` modulo `2π/M`.
    pub fn is_conforming(&self) -> bool {
        if self.num_points == 0 {
            return false;
        }
        let step = self.spacing();
        let r = (self.phase_offset - step / 2.0).rem_euclid(step);
        r < ANGLE_TOL || step - r < ANGLE_TOL
    }

    /// Decomposes `M = 4d·2ⁿ` with `d` odd. `None` unless `M` is a multiple of 4.
    pub fn series(&self) -> Option<(usize, u32)> {
        if self.num_points == 0 || self.num_points % 4 != 0 {
            return None;
        }
        let q = self.num_points / 4;
        let n = q.trailing_zeros();
        Some((q >> n, n))
    }

    pub fn point(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.radius, self.phase_offset + self.spacing() * k as f64)
    }
}

/// A labeled set of complex points with its bit mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    id: String,
    family: Family,
    points: Vec<Complex64>,
    bits_per_symbol: usize,
    bit_mapping: Vec<BitString>,
    rings: Option<Vec<RingSpec>>,
    grid_order: Option<usize>,
}

impl Constellation {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn bit_mapping(&self) -> &[BitString] {
        &self.bit_mapping
    }

    /// Rings after energy normalization, inner first.
    pub fn rings(&self) -> Option<&[RingSpec]> {
        self.rings.as_deref()
    }

    pub fn grid_order(&self) -> Option<usize> {
        self.grid_order
    }

    /// Side length of a square QAM grid.
    pub fn grid_side(&self) -> Option<usize> {
        self.grid_order.map(|m| (m as f64).sqrt().round() as usize)
    }

    /// `(column, row)` of a square QAM symbol.
    pub fn grid_position(&self, symbol: usize) -> Option<(usize, usize)> {
        let side = self.grid_side()?;
        (symbol < self.len()).then(|| (symbol % side, symbol / side))
    }

    /// `(ring index, index within ring)` of a ring-constellation symbol.
    pub fn ring_position(&self, symbol: usize) -> Option<(usize, usize)> {
        let mut start = 0;
        for (j, ring) in self.rings.as_ref()?.iter().enumerate() {
            if symbol < start + ring.num_points {
                return Some((j, symbol - start));
            }
            start += ring.num_points;
        }
        None
    }

    /// Whether every ring of a ring constellation has a `π/M` offset and `4 | M`.
    pub fn is_conforming(&self) -> bool {
        match (&self.family, &self.rings) {
            (Family::ApskRings, Some(rings)) => {
                rings.iter().all(|r| r.is_conforming() && r.series().is_some())
            }
            _ => false,
        }
    }

    /// Replaces the bit mapping, keeping geometry.
    pub fn with_bit_mapping(&self, bit_mapping: Vec<BitString>) -> Result<Constellation> {
        let mut c = self.clone();
        c.bit_mapping = bit_mapping;
        c.validate()?;
        Ok(c)
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    fn invalid(id: &str, reason: impl Into<String>) -> Error {
        Error::InvalidConstellation { id: id.to_string(), reason: reason.into() }
    }

    fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Self::invalid(&self.id, format!("{n} points is not a power of two")));
        }
        if 1 << self.bits_per_symbol != n {
            return Err(Self::invalid(&self.id, "bits per symbol does not match size"));
        }
        if self.bit_mapping.len() != n {
            return Err(Self::invalid(
                &self.id,
                format!("bit_mapping has {} entries, expected {n}", self.bit_mapping.len()),
            ));
        }
        let mut seen = HashSet::new();
        for (s, b) in self.bit_mapping.iter().enumerate() {
            if b.len() != self.bits_per_symbol {
                return Err(Self::invalid(
                    &self.id,
                    format!("bit string {b} of symbol {s} has length {}", b.len()),
                ));
            }
            if !seen.insert(b) {
                return Err(Self::invalid(&self.id, format!("duplicate bit string {b}")));
            }
        }
        Ok(())
    }
}

/// Interleaves the Gray codes of column and row: `i₁q₁i₂q₂…`.
pub(crate) fn interleaved_gray(col: usize, row: usize, n: usize) -> BitString {
    let gi = BitString::from_value(gray(col as u64), n);
    let gq = BitString::from_value(gray(row as u64), n);
    BitString(gi.0.iter().zip(&gq.0).flat_map(|(&i, &q)| [i, q]).collect())
}

/// Square 4ⁿ-QAM with levels `{±1, ±3, …}` scaled to unit mean energy and
/// the interleaved-Gray bit mapping.
pub fn build_qam(order: usize) -> Result<Constellation> {
    let n = order.trailing_zeros() as usize / 2;
    if order < 4 || 1usize << (2 * n) != order {
        return Err(Error::Domain(format!("QAM order {order} is not a power of four")));
    }
    let side = 1usize << n;
    // mean of I² + Q² over the grid is 2(side² − 1)/3
    let scale = (2.0 * (order as f64 - 1.0) / 3.0).sqrt().recip();
    let level = |k: usize| (2.0 * k as f64 - (side as f64 - 1.0)) * scale;
    let mut points = Vec::with_capacity(order);
    let mut bit_mapping = Vec::with_capacity(order);
    for row in 0..side {
        for col in 0..side {
            points.push(Complex64::new(level(col), level(row)));
            bit_mapping.push(interleaved_gray(col, row, n));
        }
    }
    let id = if order == 4 { "QPSK".to_string() } else { format!("{order}QAM") };
    let c = Constellation {
        id,
        family: Family::QamSquare,
        points,
        bits_per_symbol: 2 * n,
        bit_mapping,
        rings: None,
        grid_order: Some(order),
    };
    c.validate()?;
    Ok(c)
}

/// Same as [`build_qam`] with an explicit id and bit mapping.
pub fn build_qam_with(id: &str, order: usize, bit_mapping: Option<Vec<BitString>>) -> Result<Constellation> {
    let mut c = build_qam(order)?;
    c.id = id.to_string();
    if let Some(m) = bit_mapping {
        c.bit_mapping = m;
    }
    c.validate()?;
    Ok(c)
}

/// Builds a ring constellation from pre-normalization rings; all radii are
/// scaled jointly to unit mean symbol energy.
pub fn build_apsk(id: &str, rings: &[RingSpec], bit_mapping: Vec<BitString>) -> Result<Constellation> {
    build_rings(id, Family::ApskRings, rings, bit_mapping)
}

pub(crate) fn build_rings(
    id: &str,
    family: Family,
    rings: &[RingSpec],
    bit_mapping: Vec<BitString>,
) -> Result<Constellation> {
    if rings.is_empty() {
        return Err(Constellation::invalid(id, "no rings"));
    }
    for (j, r) in rings.iter().enumerate() {
        if !(r.radius > 0.0 && r.radius.is_finite()) || r.num_points == 0 || !r.phase_offset.is_finite() {
            return Err(Constellation::invalid(id, format!("ring {j} is degenerate")));
        }
        if j > 0 && r.radius <= rings[j - 1].radius {
            return Err(Constellation::invalid(id, "ring radii must be strictly increasing"));
        }
    }
    let total: usize = rings.iter().map(|r| r.num_points).sum();
    if !total.is_power_of_two() {
        return Err(Constellation::invalid(id, format!("{total} points is not a power of two")));
    }
    let energy: f64 = rings.iter().map(|r| r.num_points as f64 * r.radius * r.radius).sum::<f64>() / total as f64;
    // already-normalized radii are kept verbatim so catalogs round-trip exactly
    let scale = if (energy - 1.0).abs() <= 1e-14 { 1.0 } else { energy.sqrt().recip() };
    let rings: Vec<RingSpec> = rings
        .iter()
        .map(|r| RingSpec { radius: r.radius * scale, ..*r })
        .collect();
    let points = rings.iter().flat_map(|r| (0..r.num_points).map(|k| r.point(k))).collect();
    let c = Constellation {
        id: id.to_string(),
        family,
        points,
        bits_per_symbol: ceil_log2(total),
        bit_mapping,
        rings: Some(rings),
        grid_order: None,
    };
    c.validate()?;
    Ok(c)
}

/// Labels ring constellations with equal-size rings as Gray(ring) ++ Gray(k);
/// otherwise Gray code of the ring-major symbol index.
pub fn default_ring_mapping(rings: &[RingSpec]) -> Vec<BitString> {
    let total: usize = rings.iter().map(|r| r.num_points).sum();
    let bits = ceil_log2(total);
    let m = rings[0].num_points;
    if m.is_power_of_two() && rings.len().is_power_of_two() && rings.iter().all(|r| r.num_points == m) {
        let ang = ceil_log2(m);
        (0..total)
            .map(|s| {
                let (ring, k) = (s / m, s % m);
                BitString::from_value((gray(ring as u64) << ang) | gray(k as u64), bits)
            })
            .collect()
    } else {
        (0..total).map(|s| BitString::from_value(gray(s as u64), bits)).collect()
    }
}
