//! Anchor CSV files and JSON persistence of calibrated maps.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FieldAnchor, FieldMap, FieldMapError, FieldModel};

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk form of a [`FieldMap`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMapDocument {
    pub schema: u32,
    #[serde(flatten)]
    pub model: FieldModel,
    pub domain_m: [f64; 2],
    #[serde(default = "default_travel")]
    pub travel_range_m: f64,
    #[serde(default = "default_separation")]
    pub center_separation_m: f64,
    #[serde(rename = "shield_floor_T", default = "default_floor")]
    pub shield_floor_t: f64,
}

fn default_travel() -> f64 {
    super::TRAVEL_RANGE_M
}
fn default_separation() -> f64 {
    super::CENTER_SEPARATION_M
}
fn default_floor() -> f64 {
    super::DEFAULT_SHIELD_FLOOR_T
}

impl From<&FieldMap> for FieldMapDocument {
    fn from(m: &FieldMap) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            model: m.model.clone(),
            domain_m: [m.domain_m.0, m.domain_m.1],
            travel_range_m: m.travel_range_m,
            center_separation_m: m.center_separation_m,
            shield_floor_t: m.shield_floor_t,
        }
    }
}

impl TryFrom<FieldMapDocument> for FieldMap {
    type Error = FieldMapError;
    fn try_from(d: FieldMapDocument) -> Result<Self, Self::Error> {
        if d.schema != SCHEMA_VERSION {
            return Err(FieldMapError::Io(format!("unsupported field map schema {}", d.schema)));
        }
        let [lo, hi] = d.domain_m;
        if !(hi > lo) {
            return Err(FieldMapError::Io("domain_m must be increasing".into()));
        }
        let map = FieldMap {
            model: d.model,
            domain_m: (lo, hi),
            travel_range_m: d.travel_range_m,
            center_separation_m: d.center_separation_m,
            shield_floor_t: d.shield_floor_t,
        };
        let (min_t, max_t) = map.field_span();
        if !(min_t > 0.0 && max_t > min_t) {
            return Err(FieldMapError::NonMonotonicModel(
                "field must decrease over the domain".into(),
            ));
        }
        Ok(map)
    }
}

impl FieldMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FieldMapDocument::from(self)).expect("field map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FieldMapError> {
        let doc: FieldMapDocument =
            serde_json::from_str(text).map_err(|e| FieldMapError::Io(e.to_string()))?;
        doc.try_into()
    }
}

/// Reads anchors from CSV with header
/// `kind,position_m,field_T,gradient_T_per_m,tolerance_rel`.
pub fn read_anchors_csv<R: Read>(reader: R) -> Result<Vec<FieldAnchor>, FieldMapError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let a: FieldAnchor = rec.map_err(|e| FieldMapError::Io(e.to_string()))?;
        a.validate()?;
        out.push(a);
    }
    Ok(out)
}

pub fn write_anchors_csv<W: Write>(writer: W, anchors: &[FieldAnchor]) -> Result<(), FieldMapError> {
    let mut w = csv::Writer::from_writer(writer);
    for a in anchors {
        w.serialize(a).map_err(|e| FieldMapError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| FieldMapError::Io(e.to_string()))
}
