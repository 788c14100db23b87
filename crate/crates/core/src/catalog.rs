//! JSON constellation catalogs.
//!
//! A catalog file is a top-level array of entries
//! `{id, family, rings: [{radius, num_points, phase_offset_rad}], bit_mapping, grid_order?}`.
//! Square QAM entries carry `grid_order` and no rings. Radii are written
//! with shortest round-trip precision (up to 17 significant digits).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::constellation::{build_qam_with, build_rings, Constellation, Family, RingSpec};
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../data/catalog.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub id: String,
    pub family: Family,
    #[serde(default)]
    pub rings: Vec<RingSpec>,
    pub bit_mapping: Vec<BitString>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_order: Option<usize>,
}

impl CatalogEntry {
    pub fn from_constellation(c: &Constellation) -> Self {
        let rings = c.rings().unwrap_or_default().to_vec();
        CatalogEntry {
            id: c.id().to_string(),
            family: c.family(),
            rings,
            bit_mapping: c.bit_mapping().to_vec(),
            grid_order: c.grid_order(),
        }
    }

    pub fn build(&self) -> Result<Constellation> {
        let wrap = |e: Error| Error::Catalog { id: Some(self.id.clone()), message: e.to_string() };
        match self.family {
            Family::QamSquare => {
                let order = self.grid_order.ok_or_else(|| Error::Catalog {
                    id: Some(self.id.clone()),
                    message: "field `grid_order` is required for QamSquare".into(),
                })?;
                if !self.rings.is_empty() {
                    return Err(Error::Catalog {
                        id: Some(self.id.clone()),
                        message: "field `rings` must be empty for QamSquare".into(),
                    });
                }
                build_qam_with(&self.id, order, Some(self.bit_mapping.clone())).map_err(wrap)
            }
            family => build_rings(&self.id, family, &self.rings, self.bit_mapping.clone()).map_err(wrap),
        }
    }
}

/// Parses and validates a catalog document.
pub fn parse_catalog(text: &str) -> Result<Vec<Constellation>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| Error::Catalog { id: None, message: e.to_string() })?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for (i, value) in raw.into_iter().enumerate() {
        let id = value.get("id").and_then(|v| v.as_str()).map(str::to_string);
        let entry: CatalogEntry = serde_json::from_value(value).map_err(|e| Error::Catalog {
            id: id.clone().or_else(|| Some(format!("#{i}"))),
            message: e.to_string(),
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Catalog { id: Some(entry.id), message: "duplicate id".into() });
        }
        out.push(entry.build()?);
    }
    Ok(out)
}

pub fn load_constellation_file(path: impl AsRef<Path>) -> Result<Vec<Constellation>> {
    parse_catalog(&std::fs::read_to_string(path)?)
}

pub fn to_catalog_json(constellations: &[Constellation]) -> Result<String> {
    let entries: Vec<_> = constellations.iter().map(CatalogEntry::from_constellation).collect();
    Ok(serde_json::to_string_pretty(&entries)?)
}

pub fn save_constellation_file(path: impl AsRef<Path>, constellations: &[Constellation]) -> Result<()> {
    std::fs::write(path, to_catalog_json(constellations)?)?;
    Ok(())
}

/// The catalog shipped with the library.
pub fn bundled_catalog() -> Vec<Constellation> {
    parse_catalog(BUNDLED).expect("bundled catalog is valid")
}

/// Looks up constellations by id, preserving the order of `ids`.
pub fn select<'a>(catalog: &'a [Constellation], ids: &[impl AsRef<str>]) -> Result<Vec<&'a Constellation>> {
    ids.iter()
        .map(|id| {
            catalog
                .iter()
                .find(|c| c.id() == id.as_ref())
                .ok_or_else(|| Error::UnknownConstellation(id.as_ref().to_string()))
        })
        .collect()
}
