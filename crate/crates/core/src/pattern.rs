//! Key-axis partitioning of per-scale attention maps and the windowed
//! pattern artifact produced by calibration.
//!
//! At scale `k` the map has `s_k^2` query rows over `cum_tokens(k)` key
//! columns. The key axis splits into `k - 2` parts for `k >= 3` (one part
//! otherwise): a merged head part covering scales 1..3, then one part per
//! later scale in ascending order. Each part is either kept FULL or
//! reduced to a band of half-width `w` around per-query diagonal centers.

use std::fs;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::layout_fingerprint;
use crate::error::{Error, Result};
use crate::schedule::ScaleSchedule;

pub const PATTERN_FILE_VERSION: u32 = 1;

/// One contiguous span of key columns at a given scale's attention map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    /// 1-based part index within the scale's layout.
    pub index: usize,
    pub key_start: usize,
    pub key_end: usize,
    /// Inclusive range of source scales whose tokens fall in this part.
    pub scale_range: (usize, usize),
}

impl Part {
    pub fn width(&self) -> usize {
        self.key_end - self.key_start
    }

    /// The merged head part spans several scales and has no single grid
    /// geometry, so no diagonal centers exist for it; it always stays FULL.
    pub fn is_merged_head(&self) -> bool {
        self.index == 1
    }

    /// Side length of the single source scale, for parts that have one.
    pub fn source_side(&self, schedule: &ScaleSchedule) -> Result<u32> {
        if self.is_merged_head() {
            return Err(Error::State(
                "merged head part has no single source scale".into(),
            ));
        }
        schedule.side(self.scale_range.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartLayout {
    pub parts: Vec<Part>,
}

/// Split scale `k`'s key axis. Parts tile `[0, cum_tokens(k))` exactly:
/// the head part is `[0, cum_tokens(min(3, k)))`, then one part per scale
/// `4..=k` ascending.
pub fn partition(schedule: &ScaleSchedule, k: usize) -> Result<PartLayout> {
    let _ = schedule.cum_tokens(k)?; // range check
    let head_hi = k.min(3);
    let mut parts = vec![Part {
        index: 1,
        key_start: 0,
        key_end: schedule.cum_tokens(head_hi)?,
        scale_range: (1, head_hi),
    }];
    for m in 4..=k {
        parts.push(Part {
            index: parts.len() + 1,
            key_start: schedule.cum_tokens(m - 1)?,
            key_end: schedule.cum_tokens(m)?,
            scale_range: (m, m),
        });
    }
    Ok(PartLayout { parts })
}

/// Key offset (within a single-scale part) that query `q` of an `s_k` grid
/// projects to on the `s_m` grid: the nearest-neighbor downsampling of the
/// query's 2-D position.
pub fn diagonal_center(q: usize, s_k: u32, s_m: u32) -> usize {
    let (s_k, s_m) = (s_k as usize, s_m as usize);
    let qy = q / s_k;
    let qx = q % s_k;
    (qy * s_m / s_k) * s_m + qx * s_m / s_k
}

/// Per-part retention decision. `Width(w)` keeps keys within `w - 1` of
/// each query's diagonal center; `Width(0)` keeps nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowEntry {
    Full,
    Width(u32),
}

impl Serialize for WindowEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WindowEntry::Full => s.serialize_str("FULL"),
            WindowEntry::Width(w) => s.serialize_u32(*w),
        }
    }
}

impl<'de> Deserialize<'de> for WindowEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Num(u32),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) if t == "FULL" => Ok(WindowEntry::Full),
            Raw::Text(t) => Err(D::Error::custom(format!(
                "window entry must be \"FULL\" or a width, got {t:?}"
            ))),
            Raw::Num(w) => Ok(WindowEntry::Width(w)),
        }
    }
}

/// Calibrated retention pattern: one [`WindowEntry`] per
/// (scale, block, head, part). Carries the layout fingerprint of the
/// configuration it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPattern {
    schedule: ScaleSchedule,
    depth: usize,
    heads: usize,
    threshold: f64,
    sink_parts: usize,
    fingerprint: String,
    /// `entries[k - 1][block][head][part - 1]`.
    entries: Vec<Vec<Vec<Vec<WindowEntry>>>>,
}

impl WindowPattern {
    pub fn from_entries(
        schedule: ScaleSchedule,
        depth: usize,
        heads: usize,
        threshold: f64,
        sink_parts: usize,
        entries: Vec<Vec<Vec<Vec<WindowEntry>>>>,
    ) -> Result<Self> {
        let fingerprint = layout_fingerprint(&schedule, depth, heads);
        let p = Self { schedule, depth, heads, threshold, sink_parts, fingerprint, entries };
        p.validate()?;
        Ok(p)
    }

    /// All-FULL pattern: the exact-fallback configuration every other
    /// pattern degrades from.
    pub fn full(schedule: ScaleSchedule, depth: usize, heads: usize, sink_parts: usize) -> Self {
        let entries = (1..=schedule.len())
            .map(|k| {
                let parts = partition(&schedule, k).expect("k in range").parts.len();
                vec![vec![vec![WindowEntry::Full; parts]; heads]; depth]
            })
            .collect();
        Self::from_entries(schedule, depth, heads, 1.0, sink_parts, entries)
            .expect("all-FULL pattern is valid")
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "retention threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.depth == 0 || self.heads == 0 {
            return Err(Error::Config("pattern depth and heads must be >= 1".into()));
        }
        if self.entries.len() != self.schedule.len() {
            return Err(Error::Shape(format!(
                "pattern covers {} scales, schedule has {}",
                self.entries.len(),
                self.schedule.len()
            )));
        }
        for (ki, per_block) in self.entries.iter().enumerate() {
            let k = ki + 1;
            let layout = partition(&self.schedule, k)?;
            if per_block.len() != self.depth {
                return Err(Error::Shape(format!("scale {k}: expected {} blocks", self.depth)));
            }
            for per_head in per_block {
                if per_head.len() != self.heads {
                    return Err(Error::Shape(format!("scale {k}: expected {} heads", self.heads)));
                }
                for parts in per_head {
                    if parts.len() != layout.parts.len() {
                        return Err(Error::Shape(format!(
                            "scale {k}: expected {} parts, got {}",
                            layout.parts.len(),
                            parts.len()
                        )));
                    }
                    for (part, entry) in layout.parts.iter().zip(parts) {
                        match entry {
                            WindowEntry::Full => {}
                            WindowEntry::Width(w) => {
                                if part.is_merged_head() {
                                    return Err(Error::Config(format!(
                                        "scale {k} part 1 is the merged head part and must be FULL"
                                    )));
                                }
                                if part.index <= self.sink_parts {
                                    return Err(Error::Config(format!(
                                        "scale {k} part {} is a sink part and must be FULL",
                                        part.index
                                    )));
                                }
                                if *w as usize > part.width() {
                                    return Err(Error::Config(format!(
                                        "scale {k} part {}: width {w} exceeds part width {}",
                                        part.index,
                                        part.width()
                                    )));
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> &ScaleSchedule {
        &self.schedule
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn sink_parts(&self) -> usize {
        self.sink_parts
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn entry(&self, k: usize, block: usize, head: usize, part: usize) -> Result<WindowEntry> {
        let ki = k
            .checked_sub(1)
            .filter(|i| *i < self.entries.len())
            .ok_or_else(|| Error::Range(format!("scale {k} outside pattern")))?;
        let e = self.entries[ki]
            .get(block)
            .and_then(|h| h.get(head))
            .and_then(|p| p.get(part.wrapping_sub(1)))
            .ok_or_else(|| {
                Error::Range(format!("no entry for scale {k} block {block} head {head} part {part}"))
            })?;
        Ok(*e)
    }

    /// Entries for every part at (k, block, head), part order ascending.
    pub fn entries_at(&self, k: usize, block: usize, head: usize) -> Result<&[WindowEntry]> {
        let ki = k
            .checked_sub(1)
            .filter(|i| *i < self.entries.len())
            .ok_or_else(|| Error::Range(format!("scale {k} outside pattern")))?;
        self.entries[ki]
            .get(block)
            .and_then(|h| h.get(head))
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Range(format!("no entries for block {block} head {head}")))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut flat = Vec::new();
        for (ki, per_block) in self.entries.iter().enumerate() {
            for (b, per_head) in per_block.iter().enumerate() {
                for (h, parts) in per_head.iter().enumerate() {
                    for (pi, entry) in parts.iter().enumerate() {
                        flat.push(FlatEntry {
                            scale: ki + 1,
                            block: b,
                            head: h,
                            part: pi + 1,
                            width: *entry,
                        });
                    }
                }
            }
        }
        let file = PatternFile {
            version: PATTERN_FILE_VERSION,
            r0: self.threshold,
            sink_parts: self.sink_parts,
            schedule: self.schedule.clone(),
            depth: self.depth,
            heads: self.heads,
            fingerprint: self.fingerprint.clone(),
            entries: flat,
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PatternFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("pattern: {e}")))?;
        if file.version != PATTERN_FILE_VERSION {
            return Err(Error::Format(format!(
                "pattern version {} unsupported (expected {PATTERN_FILE_VERSION})",
                file.version
            )));
        }
        let expected = layout_fingerprint(&file.schedule, file.depth, file.heads);
        if file.fingerprint != expected {
            return Err(Error::Format(format!(
                "pattern fingerprint {} does not match its own layout {}",
                file.fingerprint, expected
            )));
        }
        let mut entries: Vec<Vec<Vec<Vec<Option<WindowEntry>>>>> = (1..=file.schedule.len())
            .map(|k| {
                let parts = partition(&file.schedule, k).map(|l| l.parts.len()).unwrap_or(0);
                vec![vec![vec![None; parts]; file.heads]; file.depth]
            })
            .collect();
        for e in &file.entries {
            let slot = entries
                .get_mut(e.scale.wrapping_sub(1))
                .and_then(|b| b.get_mut(e.block))
                .and_then(|h| h.get_mut(e.head))
                .and_then(|p| p.get_mut(e.part.wrapping_sub(1)))
                .ok_or_else(|| {
                    Error::Format(format!(
                        "entry addresses scale {} block {} head {} part {} outside the layout",
                        e.scale, e.block, e.head, e.part
                    ))
                })?;
            if slot.replace(e.width).is_some() {
                return Err(Error::Format(format!(
                    "duplicate entry for scale {} block {} head {} part {}",
                    e.scale, e.block, e.head, e.part
                )));
            }
        }
        let dense: Vec<Vec<Vec<Vec<WindowEntry>>>> = entries
            .into_iter()
            .enumerate()
            .map(|(ki, per_block)| {
                per_block
                    .into_iter()
                    .map(|per_head| {
                        per_head
                            .into_iter()
                            .map(|parts| {
                                parts
                                    .into_iter()
                                    .enumerate()
                                    .map(|(pi, slot)| {
                                        slot.ok_or_else(|| {
                                            Error::Format(format!(
                                                "missing entry for scale {} part {}",
                                                ki + 1,
                                                pi + 1
                                            ))
                                        })
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(
            file.schedule,
            file.depth,
            file.heads,
            file.r0,
            file.sink_parts,
            dense,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct FlatEntry {
    scale: usize,
    block: usize,
    head: usize,
    part: usize,
    width: WindowEntry,
}

#[derive(Serialize, Deserialize)]
struct PatternFile {
    version: u32,
    r0: f64,
    sink_parts: usize,
    schedule: ScaleSchedule,
    depth: usize,
    heads: usize,
    fingerprint: String,
    entries: Vec<FlatEntry>,
}
