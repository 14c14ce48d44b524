//! File formats: the `HLM1` layer container, 16-bit portable graymaps and
//! JSON documents.
//!
//! `HLM1` layout (all integers and floats little-endian):
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | `[u8; 4]` | magic `HLM1` |
//! | 4 | `u32` | version (1) |
//! | 8 | `f64` | resolution (m) |
//! | 16 | `f64` ×2 | origin x, y (m) |
//! | 32 | `u32` ×2 | width, height (cells) |
//! | 40 | `u32` | layer count |
//! | 44 | `u32` | metadata length `m` |
//! | 48 | `m` bytes | UTF-8 JSON metadata (may be empty) |
//!
//! followed by each layer as a `u32` tag and `width·height` row-major `f32`
//! values, then the known mask packed 8 cells per byte, least significant
//! bit first. Infinite costs are stored as `f32` infinity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::costmap::{CostConfig, CostMap};
use crate::error::{Error, Result};
use crate::grid::GridGeometry;
use crate::terrain::{HeightMap, TerrainClass, TerrainClassMap};

pub const MAGIC: &[u8; 4] = b"HLM1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

/// Layer tags of the container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u32)]
pub enum LayerTag {
    Elevation = 1,
    ClassLabel = 2,
    ClassConfidence = 3,
    FootCost = 4,
    BaseCost = 5,
    ClassPenalty = 6,
}

impl LayerTag {
    fn from_u32(v: u32) -> Option<Self> {
        Some(match v {
            1 => LayerTag::Elevation,
            2 => LayerTag::ClassLabel,
            3 => LayerTag::ClassConfidence,
            4 => LayerTag::FootCost,
            5 => LayerTag::BaseCost,
            6 => LayerTag::ClassPenalty,
            _ => return None,
        })
    }
}

/// Decoded container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub geometry: GridGeometry,
    pub layers: Vec<(LayerTag, Vec<f32>)>,
    pub known: Vec<bool>,
    pub metadata: String,
}

impl Container {
    pub fn layer(&self, tag: LayerTag) -> Result<&[f32]> {
        self.layers
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("missing layer {tag:?}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let g = &self.geometry;
        let n = g.len();
        let mut out = Vec::with_capacity(HEADER_LEN + self.metadata.len() + self.layers.len() * (4 + 4 * n) + n.div_ceil(8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&g.resolution.to_le_bytes());
        out.extend_from_slice(&g.origin.0.to_le_bytes());
        out.extend_from_slice(&g.origin.1.to_le_bytes());
        out.extend_from_slice(&(g.width as u32).to_le_bytes());
        out.extend_from_slice(&(g.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        for (tag, values) in &self.layers {
            out.extend_from_slice(&(*tag as u32).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut mask = vec![0u8; n.div_ceil(8)];
        for (i, k) in self.known.iter().enumerate() {
            if *k {
                mask[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&mask);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected HLM1".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HLM1 version {version}")));
        }
        let resolution = r.f64()?;
        let origin = (r.f64()?, r.f64()?);
        let (width, height) = (r.u32()? as usize, r.u32()? as usize);
        let geometry = GridGeometry::new(resolution, origin, width, height)?;
        let count = r.u32()? as usize;
        let meta_len = r.u32()? as usize;
        let metadata = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?
            .to_string();
        let n = geometry.len();
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = r.u32()?;
            let tag = LayerTag::from_u32(raw).ok_or_else(|| Error::Format(format!("unknown layer tag {raw}")))?;
            let data = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("layer too large".into()))?)?;
            layers.push((tag, data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()));
        }
        let mask = r.take(n.div_ceil(8))?;
        let known = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container { geometry, layers, known, metadata })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| Error::Format("truncated HLM1 data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn encode_height_map(map: &HeightMap) -> Vec<u8> {
    Container {
        geometry: *map.geometry(),
        layers: vec![(LayerTag::Elevation, map.elevations().to_vec())],
        known: map.known_mask().to_vec(),
        metadata: String::new(),
    }
    .encode()
}

pub fn decode_height_map(bytes: &[u8]) -> Result<HeightMap> {
    let c = Container::decode(bytes)?;
    let z = c.layer(LayerTag::Elevation)?.to_vec();
    HeightMap::from_parts(c.geometry, z, c.known)
}

pub fn encode_class_map(classes: &TerrainClassMap) -> Vec<u8> {
    Container {
        geometry: *classes.geometry(),
        layers: vec![
            (LayerTag::ClassLabel, classes.labels().iter().map(|l| *l as u8 as f32).collect()),
            (LayerTag::ClassConfidence, classes.confidences().to_vec()),
        ],
        known: vec![true; classes.geometry().len()],
        metadata: String::new(),
    }
    .encode()
}

pub fn decode_class_map(bytes: &[u8]) -> Result<TerrainClassMap> {
    let c = Container::decode(bytes)?;
    let labels = c
        .layer(LayerTag::ClassLabel)?
        .iter()
        .map(|v| {
            (v.fract() == 0.0 && *v >= 0.0)
                .then(|| TerrainClass::from_u8(*v as u8))
                .flatten()
                .ok_or_else(|| Error::Format(format!("invalid class label {v}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let conf = match c.layer(LayerTag::ClassConfidence) {
        Ok(v) => v.to_vec(),
        Err(_) => vec![1.0; labels.len()],
    };
    TerrainClassMap::from_parts(c.geometry, labels, conf)
}

#[derive(Debug, Serialize, Deserialize)]
struct CostMeta {
    lambda: f64,
    config: CostConfig,
    classes_id: u64,
}

/// Cost map container: elevation, foot, base and class-penalty layers with
/// λ and the cost configuration in the metadata.
pub fn encode_cost_map(costmap: &CostMap) -> Vec<u8> {
    let map = costmap.height_map();
    let g = costmap.geometry();
    let penalty = (0..g.len()).map(|i| costmap.class_penalty_at(i) as f32).collect();
    let meta = CostMeta { lambda: costmap.lambda(), config: *costmap.config(), classes_id: costmap.provenance().1 };
    Container {
        geometry: *g,
        layers: vec![
            (LayerTag::Elevation, map.elevations().to_vec()),
            (LayerTag::FootCost, costmap.foot_costs().to_vec()),
            (LayerTag::BaseCost, costmap.base_costs().to_vec()),
            (LayerTag::ClassPenalty, penalty),
        ],
        known: map.known_mask().to_vec(),
        metadata: serde_json::to_string(&meta).expect("metadata serializes"),
    }
    .encode()
}

pub fn decode_cost_map(bytes: &[u8]) -> Result<CostMap> {
    let c = Container::decode(bytes)?;
    let meta: CostMeta = serde_json::from_str(&c.metadata)?;
    let map = HeightMap::from_parts(c.geometry, c.layer(LayerTag::Elevation)?.to_vec(), c.known.clone())?;
    CostMap::from_layers(
        Arc::new(map),
        c.layer(LayerTag::FootCost)?.to_vec(),
        c.layer(LayerTag::BaseCost)?.to_vec(),
        c.layer(LayerTag::ClassPenalty)?.to_vec(),
        meta.lambda,
        meta.config,
        meta.classes_id,
    )
}

/// Quantization of a float layer into 16-bit gray levels. Level 0 marks
/// unknown (or infinite) cells; levels 1..=65535 map linearly onto
/// `[offset, offset + 65534·scale]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrayScale {
    pub offset: f64,
    pub scale: f64,
}

/// 16-bit binary PGM (`P5`, maxval 65535, big-endian samples) of a layer.
/// Row 0 of the image is the top (largest y) row of the grid. The scale is
/// recorded in a `# hlm offset=.. scale=..` comment so [`decode_pgm`] can
/// restore the values.
pub fn encode_pgm(geometry: &GridGeometry, values: &[f32], known: &[bool]) -> Vec<u8> {
    let finite = values.iter().zip(known).filter(|(v, k)| **k && v.is_finite()).map(|(v, _)| *v as f64);
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let scale = if hi > lo { (hi - lo) / 65534.0 } else { 1.0 };
    let offset = if lo.is_finite() { lo } else { 0.0 };
    let (w, h) = (geometry.width, geometry.height);
    let mut out = format!("P5\n# hlm offset={offset:e} scale={scale:e}\n{w} {h}\n65535\n").into_bytes();
    out.reserve(w * h * 2);
    for row in (0..h).rev() {
        for col in 0..w {
            let i = row * w + col;
            let v = values[i];
            let level = if known[i] && v.is_finite() { 1 + ((v as f64 - offset) / scale).round().clamp(0.0, 65534.0) as u16 } else { 0 };
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    out
}

/// Parses a PGM written by [`encode_pgm`] into `(width, height, values, known)`
/// in grid row order.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>, Vec<bool>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut pos = 0;
    let mut tokens = Vec::new();
    let mut scale = GrayScale { offset: 0.0, scale: 1.0 };
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |e| pos + e);
            let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| bad("comment"))?;
            for part in line.split_whitespace() {
                if let Some(v) = part.strip_prefix("offset=") {
                    scale.offset = v.parse().map_err(|_| bad("offset"))?;
                } else if let Some(v) = part.strip_prefix("scale=") {
                    scale.scale = v.parse().map_err(|_| bad("scale"))?;
                }
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
    }
    pos += 1;
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(bad("expected P5 with maxval 65535"));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("height"))?;
    let data = bytes.get(pos..).filter(|d| d.len() == w * h * 2).ok_or_else(|| bad("sample count"))?;
    let mut values = vec![0.0; w * h];
    let mut known = vec![false; w * h];
    for (k, c) in data.chunks_exact(2).enumerate() {
        let level = u16::from_be_bytes([c[0], c[1]]);
        let (img_row, col) = (k / w, k % w);
        let i = (h - 1 - img_row) * w + col;
        if level > 0 {
            values[i] = (scale.offset + (level - 1) as f64 * scale.scale) as f32;
            known[i] = true;
        }
    }
    Ok((w, h, values, known))
}

pub fn height_map_pgm(map: &HeightMap) -> Vec<u8> {
    encode_pgm(map.geometry(), map.elevations(), map.known_mask())
}

pub fn class_map_pgm(classes: &TerrainClassMap) -> Vec<u8> {
    let v: Vec<f32> = classes.labels().iter().map(|l| *l as u8 as f32).collect();
    encode_pgm(classes.geometry(), &v, &vec![true; v.len()])
}

/// Foot-cost layer; infinite cells export as level 0.
pub fn cost_map_pgm(costmap: &CostMap) -> Vec<u8> {
    encode_pgm(costmap.geometry(), costmap.foot_costs(), &vec![true; costmap.geometry().len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{compute_features, TerrainClass};
    use proptest::prelude::*;

    fn geometry(w: usize, h: usize) -> GridGeometry {
        GridGeometry::new(0.025, (-1.5, 2.0), w, h).unwrap()
    }

    #[test]
    fn bad_inputs_are_format_errors() {
        let map = HeightMap::flat(geometry(5, 3), 0.5);
        let bytes = encode_height_map(&map);
        assert!(matches!(decode_height_map(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_height_map(&wrong), Err(Error::Format(_))));
        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(decode_height_map(&trailing), Err(Error::Format(_))));
    }

    #[test]
    fn class_and_cost_round_trip() {
        let g = geometry(9, 7);
        let mut map = HeightMap::flat(g, 0.0);
        map.set((4, 3), Some(0.6));
        map.set((0, 0), None);
        let mut classes = TerrainClassMap::uniform(g, TerrainClass::Safe);
        classes.set((2, 2), TerrainClass::Risky, 0.7);
        classes.set((4, 3), TerrainClass::Obstacle, 1.0);
        let decoded = decode_class_map(&encode_class_map(&classes)).unwrap();
        assert_eq!(decoded, classes);

        let features = compute_features(&map, 2);
        let cm = crate::costmap::build_cost_map(Arc::new(map), &classes, &features, 2.0).unwrap();
        let bytes = encode_cost_map(&cm);
        let back = decode_cost_map(&bytes).unwrap();
        assert_eq!(encode_cost_map(&back), bytes);
        assert!(back.foot(g.index((4, 3))).is_infinite());
        assert_eq!(back.lambda(), 2.0);
    }

    #[test]
    fn pgm_round_trips_quantized_values() {
        let g = geometry(4, 3);
        let mut map = HeightMap::flat(g, 0.0);
        map.set((1, 2), Some(0.17));
        map.set((3, 0), None);
        let (w, h, v, k) = decode_pgm(&height_map_pgm(&map)).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(k, map.known_mask());
        assert!((v[g.index((1, 2))] - 0.17).abs() < 1e-6);
        assert_eq!(v[g.index((0, 0))], 0.0);
        let labels = decode_pgm(&class_map_pgm(&TerrainClassMap::uniform(g, TerrainClass::Stair))).unwrap().2;
        assert!(labels.iter().all(|l| *l == TerrainClass::Stair as u8 as f32));
    }

    proptest! {
        #[test]
        fn height_map_round_trip_is_byte_identical(
            w in 1usize..12, h in 1usize..12,
            cells in prop::collection::vec((any::<bool>(), -5.0f32..5.0), 144),
        ) {
            let g = geometry(w, h);
            let z: Vec<f32> = cells.iter().take(g.len()).map(|c| if c.0 { c.1 } else { 0.0 }).collect();
            let k: Vec<bool> = cells.iter().take(g.len()).map(|c| c.0).collect();
            let map = HeightMap::from_parts(g, z, k).unwrap();
            let bytes = encode_height_map(&map);
            let back = decode_height_map(&bytes).unwrap();
            prop_assert_eq!(&back, &map);
            prop_assert_eq!(encode_height_map(&back), bytes);
        }
    }
}
