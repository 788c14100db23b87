//! Hierarchical representation layouts shared across a set of constellations.
//!
//! Every symbol of every constellation is assigned a code over a subset of the
//! global representation bits. Segments are allocated in a fixed order:
//!
//! 1. two quadrant bits, `[Re > 0]` then `[Im > 0]`;
//! 2. the interleaved-Gray bits 3..2n of the largest 4ⁿ-QAM present;
//! 3. per odd `d` (ascending), the base-sector selector bits followed by one
//!    bit per angular refinement level of the `4d·2ⁿ` ring series;
//! 4. ring-label bits of each hierarchical ring constellation, by id;
//! 5. flat bits (the constellation's own bit mapping) for anything else, by id.
//!
//! Symbols only use the bits that identify them; a symbol on an 8-point ring
//! uses one refinement level while one on a 32-point ring uses three.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::{ceil_log2, gray_encode, BitPattern, BitString};
use crate::constellation::{interleaved_gray, Constellation, Family};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum SegmentKind {
    Quadrant,
    QamInterleaved,
    SeriesSelector { d: usize },
    SeriesRefine { d: usize, level: usize },
    RingLabel { constellation: String },
    Flat { constellation: String },
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentKind::Quadrant => write!(f, "quadrant"),
            SegmentKind::QamInterleaved => write!(f, "qam"),
            SegmentKind::SeriesSelector { d } => write!(f, "series[d={d}].selector"),
            SegmentKind::SeriesRefine { d, level } => write!(f, "series[d={d}].refine{level}"),
            SegmentKind::RingLabel { constellation } => write!(f, "rings[{constellation}]"),
            SegmentKind::Flat { constellation } => write!(f, "flat[{constellation}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    #[serde(flatten)]
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Code of one symbol: the global bit positions it uses (ascending) and their values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolCode {
    pub positions: Vec<usize>,
    pub bits: Vec<bool>,
}

impl SymbolCode {
    pub fn iter(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.positions.iter().copied().zip(self.bits.iter().copied())
    }

    pub fn get(&self, position: usize) -> Option<bool> {
        self.positions.binary_search(&position).ok().map(|i| self.bits[i])
    }

    /// The code written over the whole layout, `-` where unused.
    pub fn pattern(&self, total_bits: usize) -> BitPattern {
        let mut p = vec![None; total_bits];
        for (k, b) in self.iter() {
            p[k] = Some(b);
        }
        BitPattern(p)
    }

    pub fn masked_bits(&self) -> BitString {
        BitString(self.bits.clone())
    }
}

/// How a constellation is represented in a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Treatment {
    Qam,
    Hierarchical,
    Flat,
}

#[derive(Debug, Clone)]
pub struct ConstellationRepr {
    pub id: String,
    pub treatment: Treatment,
    pub codes: Vec<SymbolCode>,
    /// Union of the positions used by any symbol, ascending.
    pub mask: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// Shared quadrant, QAM and ring-series bits where the geometry allows.
    #[default]
    Hierarchical,
    /// Every constellation appends its own bit mapping; nothing is shared.
    FlatAll,
}

#[derive(Debug, Clone)]
pub struct RepresentationLayout {
    total_bits: usize,
    segments: Vec<Segment>,
    entries: Vec<ConstellationRepr>,
    index: HashMap<String, usize>,
}

/// Angular code of a point on a conforming ring of the `d` series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AngularCode {
    pub selector: BitString,
    /// One slot per refinement level up to the series maximum; `None` past the ring's level.
    pub refine: BitPattern,
}

impl AngularCode {
    /// Used selector positions followed by used refinement slots.
    pub fn used_mask(&self) -> Vec<bool> {
        std::iter::repeat_n(true, self.selector.len())
            .chain(self.refine.0.iter().map(Option::is_some))
            .collect()
    }
}

/// Angular code for point `angular_index` of a `4d·2^n_ring` ring, counted
/// counterclockwise from the lower boundary of its quadrant.
///
/// The selector is the Gray code of the base sector (`angular_index >> n_ring`)
/// over `d` sectors; refinement bits are the MSB-first binary digits of the
/// position inside that sector, so level `l` tells which half of the level
/// `l-1` sector the point lies in.
pub fn apsk_angular_code(d: usize, n_ring: usize, n_max: usize, angular_index: usize) -> Result<AngularCode> {
    if d % 2 == 0 {
        return Err(Error::Domain(format!("series base d={d} must be odd")));
    }
    if n_ring > n_max {
        return Err(Error::Domain(format!("ring level {n_ring} exceeds series maximum {n_max}")));
    }
    let per_quadrant = d << n_ring;
    if angular_index >= per_quadrant {
        return Err(Error::Domain(format!(
            "angular index {angular_index} out of range for {per_quadrant} points per quadrant"
        )));
    }
    let selector = gray_encode((angular_index >> n_ring) as u64, ceil_log2(d))?;
    let fine = angular_index & ((1 << n_ring) - 1);
    let refine = (0..n_max)
        .map(|l| (l < n_ring).then(|| (fine >> (n_ring - 1 - l)) & 1 == 1))
        .collect();
    Ok(AngularCode { selector, refine: BitPattern(refine) })
}

/// Interleaved-Gray representation code of a square QAM symbol.
pub fn qam_repr_code(c: &Constellation, symbol: usize) -> Result<BitString> {
    if c.family() != Family::QamSquare {
        return Err(Error::Domain(format!("`{}` is not a square QAM constellation", c.id())));
    }
    let side = c.grid_side().expect("QamSquare has a grid");
    let (col, row) = c.grid_position(symbol).ok_or_else(|| Error::UnknownSymbol {
        id: c.id().to_string(),
        symbol,
        size: c.len(),
    })?;
    Ok(interleaved_gray(col, row, side.trailing_zeros() as usize))
}

/// Quadrant index counterclockwise from the first quadrant, and the point's
/// angular index inside the quadrant, for symbol `k` of a conforming ring.
fn ring_quadrant_position(num_points: usize, phase_offset: f64, k: usize) -> (usize, usize) {
    let step = 2.0 * std::f64::consts::PI / num_points as f64;
    // conforming offsets sit at (j + 1/2)·step
    let j0 = (phase_offset / step - 0.5).round() as i64;
    let j = (j0 + k as i64).rem_euclid(num_points as i64) as usize;
    let per_quadrant = num_points / 4;
    (j / per_quadrant, j % per_quadrant)
}

/// `[Re > 0]`, `[Im > 0]` for quadrants numbered counterclockwise from (+,+).
fn quadrant_bits(quadrant: usize) -> [bool; 2] {
    match quadrant {
        0 => [true, true],
        1 => [false, true],
        2 => [false, false],
        _ => [true, false],
    }
}

fn treatment(c: &Constellation, mode: LayoutMode) -> Treatment {
    match (mode, c.family()) {
        (LayoutMode::FlatAll, _) => Treatment::Flat,
        (_, Family::QamSquare) => Treatment::Qam,
        _ if c.is_conforming() => Treatment::Hierarchical,
        _ => Treatment::Flat,
    }
}

#[derive(Default)]
struct Allocator {
    segments: Vec<Segment>,
    next: usize,
}

impl Allocator {
    fn push(&mut self, kind: SegmentKind, len: usize) -> usize {
        let start = self.next;
        self.segments.push(Segment { kind, start, len });
        self.next += len;
        start
    }
}

/// Builds the shared layout for `constellations` (canonicalized by id).
pub fn build_layout(constellations: &[&Constellation], mode: LayoutMode) -> Result<RepresentationLayout> {
    let mut sorted: Vec<&Constellation> = constellations.to_vec();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    for w in sorted.windows(2) {
        if w[0].id() == w[1].id() {
            return Err(Error::Domain(format!("duplicate constellation id `{}`", w[0].id())));
        }
    }
    let treatments: Vec<Treatment> = sorted.iter().map(|c| treatment(c, mode)).collect();

    let mut alloc = Allocator::default();

    let mut quadrant_start = None;
    let mut qam_start = None;
    let mut series: BTreeMap<usize, usize> = BTreeMap::new();
    let mut series_slots: BTreeMap<usize, (usize, Vec<usize>)> = BTreeMap::new();
    if mode == LayoutMode::Hierarchical {
        quadrant_start = Some(alloc.push(SegmentKind::Quadrant, 2));

        let qam_n_max = sorted
            .iter()
            .zip(&treatments)
            .filter(|(_, t)| **t == Treatment::Qam)
            .map(|(c, _)| c.grid_side().unwrap().trailing_zeros() as usize)
            .max();
        if let Some(n) = qam_n_max.filter(|&n| n > 1) {
            qam_start = Some(alloc.push(SegmentKind::QamInterleaved, 2 * (n - 1)));
        }

        for (c, _) in sorted.iter().zip(&treatments).filter(|(_, t)| **t == Treatment::Hierarchical) {
            for ring in c.rings().unwrap() {
                let (d, n) = ring.series().unwrap();
                let e = series.entry(d).or_insert(0);
                *e = (*e).max(n as usize);
            }
        }
        for (&d, &n_max) in &series {
            let sel_len = ceil_log2(d);
            let sel = if sel_len > 0 {
                alloc.push(SegmentKind::SeriesSelector { d }, sel_len)
            } else {
                alloc.next
            };
            let levels = (1..=n_max)
                .map(|level| alloc.push(SegmentKind::SeriesRefine { d, level }, 1))
                .collect();
            series_slots.insert(d, (sel, levels));
        }
    }

    let mut ring_label_start = HashMap::new();
    for (c, t) in sorted.iter().zip(&treatments) {
        if *t == Treatment::Hierarchical {
            let width = ceil_log2(c.rings().unwrap().len());
            if width > 0 {
                let kind = SegmentKind::RingLabel { constellation: c.id().to_string() };
                ring_label_start.insert(c.id(), alloc.push(kind, width));
            }
        }
    }
    let mut flat_start = HashMap::new();
    for (c, t) in sorted.iter().zip(&treatments) {
        if *t == Treatment::Flat {
            let kind = SegmentKind::Flat { constellation: c.id().to_string() };
            flat_start.insert(c.id(), alloc.push(kind, c.bits_per_symbol()));
        }
    }
    let Allocator { segments, next: total_bits } = alloc;

    let mut entries = Vec::with_capacity(sorted.len());
    for (c, &t) in sorted.iter().zip(&treatments) {
        let codes: Vec<SymbolCode> = (0..c.len())
            .map(|s| {
                let mut pairs: Vec<(usize, bool)> = Vec::new();
                match t {
                    Treatment::Qam => {
                        let code = qam_repr_code(c, s).expect("square QAM");
                        let (q, rest) = code.0.split_at(2);
                        let q0 = quadrant_start.unwrap();
                        pairs.extend(q.iter().enumerate().map(|(i, &b)| (q0 + i, b)));
                        if !rest.is_empty() {
                            let s0 = qam_start.unwrap();
                            pairs.extend(rest.iter().enumerate().map(|(i, &b)| (s0 + i, b)));
                        }
                    }
                    Treatment::Hierarchical => {
                        let (ring_idx, k) = c.ring_position(s).unwrap();
                        let rings = c.rings().unwrap();
                        let ring = &rings[ring_idx];
                        let (d, n) = ring.series().unwrap();
                        let (quadrant, a) = ring_quadrant_position(ring.num_points, ring.phase_offset, k);
                        let q0 = quadrant_start.unwrap();
                        let [re, im] = quadrant_bits(quadrant);
                        pairs.push((q0, re));
                        pairs.push((q0 + 1, im));
                        let (sel, levels) = &series_slots[&d];
                        let ang = apsk_angular_code(d, n as usize, series[&d], a).expect("valid ring");
                        pairs.extend(ang.selector.0.iter().enumerate().map(|(i, &b)| (sel + i, b)));
                        pairs.extend(
                            ang.refine.0.iter().zip(levels).filter_map(|(b, &pos)| b.map(|b| (pos, b))),
                        );
                        if let Some(&r0) = ring_label_start.get(c.id()) {
                            // rings are Gray-labeled from the smallest amplitude up
                            let label = gray_encode(ring_idx as u64, ceil_log2(rings.len())).unwrap();
                            pairs.extend(label.0.iter().enumerate().map(|(i, &b)| (r0 + i, b)));
                        }
                    }
                    Treatment::Flat => {
                        let f0 = flat_start[c.id()];
                        pairs.extend(c.bit_mapping()[s].0.iter().enumerate().map(|(i, &b)| (f0 + i, b)));
                    }
                }
                pairs.sort_unstable_by_key(|p| p.0);
                SymbolCode {
                    positions: pairs.iter().map(|p| p.0).collect(),
                    bits: pairs.iter().map(|p| p.1).collect(),
                }
            })
            .collect();
        let mut mask: Vec<usize> = codes.iter().flat_map(|c| c.positions.iter().copied()).collect();
        mask.sort_unstable();
        mask.dedup();
        entries.push(ConstellationRepr { id: c.id().to_string(), treatment: t, codes, mask });
    }
    let index = entries.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
    Ok(RepresentationLayout { total_bits, segments, entries, index })
}

impl RepresentationLayout {
    pub fn total_bits(&self) -> usize {
        self.total_bits
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Per-constellation entries in canonical (id) order.
    pub fn entries(&self) -> &[ConstellationRepr] {
        &self.entries
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn entry(&self, id: &str) -> Result<&ConstellationRepr> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownConstellation(id.to_string()))
    }

    pub fn segment(&self, kind: &SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| &s.kind == kind)
    }

    /// Masked code and mask positions of one symbol.
    pub fn repr_of_symbol(&self, id: &str, symbol: usize) -> Result<&SymbolCode> {
        let e = self.entry(id)?;
        e.codes.get(symbol).ok_or_else(|| Error::UnknownSymbol {
            id: id.to_string(),
            symbol,
            size: e.codes.len(),
        })
    }

    /// Bits of `symbol` restricted to `segment`, in segment order.
    pub fn segment_bits(&self, id: &str, symbol: usize, kind: &SegmentKind) -> Result<BitPattern> {
        let code = self.repr_of_symbol(id, symbol)?;
        let seg = self
            .segment(kind)
            .ok_or_else(|| Error::Domain(format!("layout has no segment {kind}")))?;
        Ok(BitPattern(seg.range().map(|k| code.get(k)).collect()))
    }

    pub fn report(&self) -> LayoutReport {
        LayoutReport {
            total_bits: self.total_bits,
            segments: self.segments.clone(),
            constellations: self
                .entries
                .iter()
                .map(|e| ConstellationReport {
                    id: e.id.clone(),
                    treatment: e.treatment,
                    used_bits: e.mask.len(),
                    mask: e.mask.clone(),
                    codes: e.codes.iter().map(|c| c.pattern(self.total_bits).to_string()).collect(),
                })
                .collect(),
        }
    }

    /// Hex digest identifying the layout (segments and all codes).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.report()).expect("report serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LayoutReport {
    pub total_bits: usize,
    pub segments: Vec<Segment>,
    pub constellations: Vec<ConstellationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstellationReport {
    pub id: String,
    pub treatment: Treatment,
    pub used_bits: usize,
    pub mask: Vec<usize>,
    pub codes: Vec<String>,
}
