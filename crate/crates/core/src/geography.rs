//! Two-level region hierarchy (ZCTA within county) with polygon geometry.
//!
//! Geometry is kept unprojected in lon/lat degrees. Each ZCTA carries a single
//! nominal county used for map grouping; patients carry their own county code.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Aggregation level of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Zcta,
    County,
}

impl Level {
    pub const ALL: [Level; 2] = [Level::Zcta, Level::County];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Zcta => "zcta",
            Level::County => "county",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zcta" => Ok(Level::Zcta),
            "county" => Ok(Level::County),
            other => Err(Error::Geography(format!("unknown level {other:?}"))),
        }
    }
}

/// A closed ring of `[lon, lat]` vertices; the first vertex repeats as the last.
pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub level: Level,
    pub name: String,
    /// Nominal county, only set for ZCTAs.
    pub county_id: Option<String>,
    /// Outer rings, one per polygon part.
    pub geometry: Vec<Ring>,
    pub centroid: [f64; 2],
}

/// Immutable region index. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GeographyIndex {
    counties: Vec<Region>,
    zctas: Vec<Region>,
    county_pos: HashMap<String, usize>,
    zcta_pos: HashMap<String, usize>,
    zcta_to_county: BTreeMap<String, String>,
}

impl GeographyIndex {
    /// Validates and indexes a set of regions.
    pub fn new(regions: Vec<Region>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::Geography("no regions".into()));
        }
        let mut counties = Vec::new();
        let mut zctas = Vec::new();
        for region in regions {
            for ring in &region.geometry {
                if ring.len() < 4 || ring.first() != ring.last() {
                    return Err(Error::Geography(format!(
                        "polygon of region {} is not a closed ring",
                        region.id
                    )));
                }
            }
            match region.level {
                Level::County => counties.push(region),
                Level::Zcta => zctas.push(region),
            }
        }

        let mut county_pos = HashMap::with_capacity(counties.len());
        for (i, c) in counties.iter().enumerate() {
            if county_pos.insert(c.id.clone(), i).is_some() {
                return Err(Error::Geography(format!("duplicate county id {}", c.id)));
            }
        }
        let mut zcta_pos = HashMap::with_capacity(zctas.len());
        let mut zcta_to_county = BTreeMap::new();
        let mut county_members = vec![0usize; counties.len()];
        for (i, z) in zctas.iter().enumerate() {
            if zcta_pos.insert(z.id.clone(), i).is_some() {
                return Err(Error::Geography(format!("duplicate zcta id {}", z.id)));
            }
            let county = z.county_id.as_deref().ok_or_else(|| {
                Error::Geography(format!("zcta {} is missing county_id", z.id))
            })?;
            let pos = *county_pos.get(county).ok_or_else(|| {
                Error::Geography(format!("unknown county {county:?} referenced by zcta {}", z.id))
            })?;
            county_members[pos] += 1;
            zcta_to_county.insert(z.id.clone(), county.to_string());
        }
        if let Some(pos) = county_members.iter().position(|&n| n == 0) {
            return Err(Error::Geography(format!(
                "county {} contains no zcta",
                counties[pos].id
            )));
        }

        Ok(Self {
            counties,
            zctas,
            county_pos,
            zcta_pos,
            zcta_to_county,
        })
    }

    pub fn regions(&self, level: Level) -> &[Region] {
        match level {
            Level::Zcta => &self.zctas,
            Level::County => &self.counties,
        }
    }

    pub fn region(&self, level: Level, id: &str) -> Option<&Region> {
        let (pos, regions) = match level {
            Level::Zcta => (&self.zcta_pos, &self.zctas),
            Level::County => (&self.county_pos, &self.counties),
        };
        pos.get(id).map(|&i| &regions[i])
    }

    /// Position of a region within `regions(level)`.
    pub fn position(&self, level: Level, id: &str) -> Option<usize> {
        match level {
            Level::Zcta => self.zcta_pos.get(id).copied(),
            Level::County => self.county_pos.get(id).copied(),
        }
    }

    /// Level of an id, checking ZCTAs first.
    pub fn level_of(&self, id: &str) -> Option<Level> {
        if self.zcta_pos.contains_key(id) {
            Some(Level::Zcta)
        } else if self.county_pos.contains_key(id) {
            Some(Level::County)
        } else {
            None
        }
    }

    pub fn zcta_to_county(&self) -> &BTreeMap<String, String> {
        &self.zcta_to_county
    }

    pub fn county_of(&self, zcta: &str) -> Option<&str> {
        self.zcta_to_county.get(zcta).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.zctas.len() + self.counties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// GeoJSON FeatureCollection for one level, or both when `level` is `None`
    /// (counties first).
    pub fn to_geojson(&self, level: Option<Level>) -> Value {
        let levels: &[Level] = match level {
            Some(Level::County) => &[Level::County],
            Some(Level::Zcta) => &[Level::Zcta],
            None => &[Level::County, Level::Zcta],
        };
        let features: Vec<Value> = levels
            .iter()
            .flat_map(|&l| self.regions(l).iter())
            .map(region_feature)
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn write_geojson(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_geojson(None))
            .map_err(|e| Error::parse("geojson", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn region_feature(r: &Region) -> Value {
    let mut props = serde_json::Map::new();
    props.insert("id".into(), json!(r.id));
    props.insert("level".into(), json!(r.level.as_str()));
    props.insert("name".into(), json!(r.name));
    if let Some(c) = &r.county_id {
        props.insert("county_id".into(), json!(c));
    }
    let geometry = if r.geometry.len() == 1 {
        json!({ "type": "Polygon", "coordinates": [r.geometry[0]] })
    } else {
        let parts: Vec<Value> = r.geometry.iter().map(|ring| json!([ring])).collect();
        json!({ "type": "MultiPolygon", "coordinates": parts })
    };
    json!({ "type": "Feature", "properties": props, "geometry": geometry })
}

#[derive(Deserialize)]
struct RawCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<RawFeature>,
}

#[derive(Deserialize)]
struct RawFeature {
    properties: serde_json::Map<String, Value>,
    geometry: RawGeometry,
}

#[derive(Deserialize)]
#[serde(tag = "type", content = "coordinates")]
enum RawGeometry {
    Polygon(Vec<Ring>),
    MultiPolygon(Vec<Vec<Ring>>),
}

/// Parses a GeoJSON FeatureCollection string into a validated index.
pub fn parse_geography(text: &str) -> Result<GeographyIndex> {
    let raw: RawCollection =
        serde_json::from_str(text).map_err(|e| Error::parse("geojson", e))?;
    if raw.kind != "FeatureCollection" {
        return Err(Error::parse("geojson", "expected a FeatureCollection"));
    }
    let mut regions = Vec::with_capacity(raw.features.len());
    for (i, feat) in raw.features.into_iter().enumerate() {
        let prop = |key: &str| -> Result<String> {
            feat.properties
                .get(key)
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| {
                    Error::Geography(format!("feature {i} is missing property {key:?}"))
                })
        };
        let id = prop("id")?;
        let level: Level = prop("level")?.parse()?;
        let county_id = match level {
            Level::Zcta => Some(prop("county_id")?),
            Level::County => None,
        };
        let name = prop("name").unwrap_or_else(|_| id.clone());
        // Only outer rings are kept; holes do not matter for grouping.
        let geometry: Vec<Ring> = match feat.geometry {
            RawGeometry::Polygon(rings) => rings.into_iter().take(1).collect(),
            RawGeometry::MultiPolygon(parts) => parts
                .into_iter()
                .filter_map(|rings| rings.into_iter().next())
                .collect(),
        };
        if geometry.is_empty() {
            return Err(Error::Geography(format!("region {id} has empty geometry")));
        }
        let centroid = centroid(&geometry);
        regions.push(Region {
            id,
            level,
            name,
            county_id,
            geometry,
            centroid,
        });
    }
    GeographyIndex::new(regions)
}

pub fn load_geography(path: &Path) -> Result<GeographyIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geography(&text)
}

/// Area-weighted centroid over all parts; falls back to the vertex mean for
/// degenerate (zero-area) geometry.
pub fn centroid(rings: &[Ring]) -> [f64; 2] {
    let (mut area, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for ring in rings {
        for w in ring.windows(2) {
            let [x0, y0] = w[0];
            let [x1, y1] = w[1];
            let cross = x0 * y1 - x1 * y0;
            area += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
    }
    if area.abs() > 1e-15 {
        [cx / (3.0 * area), cy / (3.0 * area)]
    } else {
        let pts: Vec<&[f64; 2]> = rings.iter().flat_map(|r| r.iter()).collect();
        let n = pts.len().max(1) as f64;
        [
            pts.iter().map(|p| p[0]).sum::<f64>() / n,
            pts.iter().map(|p| p[1]).sum::<f64>() / n,
        ]
    }
}

/// Ray-casting point-in-polygon test; points on the boundary count as inside.
pub fn contains_point(ring: &Ring, p: [f64; 2]) -> bool {
    let on_edge = ring.windows(2).any(|w| {
        let ([ax, ay], [bx, by]) = (w[0], w[1]);
        let cross = (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax);
        cross.abs() < 1e-12
            && p[0] >= ax.min(bx) - 1e-12
            && p[0] <= ax.max(bx) + 1e-12
            && p[1] >= ay.min(by) - 1e-12
            && p[1] <= ay.max(by) + 1e-12
    });
    if on_edge {
        return true;
    }
    let mut inside = false;
    for w in ring.windows(2) {
        let ([xi, yi], [xj, yj]) = (w[0], w[1]);
        if (yi > p[1]) != (yj > p[1]) && p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

const GRID_ORIGIN: [f64; 2] = [-80.5, 39.7];
const CELL_DEGREES: f64 = 0.1;

const NAME_STEMS: &[&str] = &[
    "Alder", "Birch", "Cedar", "Dover", "Elk", "Fulton", "Garnet", "Hollow", "Iron", "Juniper",
    "Kettle", "Laurel", "Maple", "North", "Oak", "Pine", "Quarry", "River", "Stone", "Timber",
];

fn square(x0: f64, y0: f64, w: f64, h: f64) -> Ring {
    vec![[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h], [x0, y0]]
}

/// Tiles a `rows`×`cols` grid of square ZCTAs into `counties_per_side²` square
/// counties. The seed only shuffles county names; ids and geometry depend on
/// the grid shape alone.
pub fn synth_grid_geography(
    rows: usize,
    cols: usize,
    counties_per_side: usize,
    seed: u64,
) -> Result<GeographyIndex> {
    if rows == 0 || cols == 0 || counties_per_side == 0 {
        return Err(Error::Geography("grid dimensions must be at least 1".into()));
    }
    if rows % counties_per_side != 0 || cols % counties_per_side != 0 {
        return Err(Error::Geography(format!(
            "{counties_per_side} counties per side does not divide a {rows}x{cols} grid"
        )));
    }
    if rows * cols > 89_999 {
        return Err(Error::Geography("grid too large for 5-digit zcta codes".into()));
    }
    let block_rows = rows / counties_per_side;
    let block_cols = cols / counties_per_side;

    let mut stems: Vec<&str> = NAME_STEMS.to_vec();
    stems.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut regions = Vec::with_capacity(rows * cols + counties_per_side * counties_per_side);
    for cr in 0..counties_per_side {
        for cc in 0..counties_per_side {
            let idx = cr * counties_per_side + cc;
            let ring = square(
                GRID_ORIGIN[0] + (cc * block_cols) as f64 * CELL_DEGREES,
                GRID_ORIGIN[1] + (cr * block_rows) as f64 * CELL_DEGREES,
                block_cols as f64 * CELL_DEGREES,
                block_rows as f64 * CELL_DEGREES,
            );
            let stem = stems[idx % stems.len()];
            let name = if idx < stems.len() {
                format!("{stem} County")
            } else {
                format!("{stem} County {}", idx / stems.len() + 1)
            };
            let geometry = vec![ring];
            regions.push(Region {
                id: county_id(idx),
                level: Level::County,
                name,
                county_id: None,
                centroid: centroid(&geometry),
                geometry,
            });
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            let code = format!("{:05}", 10_000 + r * cols + c);
            let county = county_id((r / block_rows) * counties_per_side + c / block_cols);
            let geometry = vec![square(
                GRID_ORIGIN[0] + c as f64 * CELL_DEGREES,
                GRID_ORIGIN[1] + r as f64 * CELL_DEGREES,
                CELL_DEGREES,
                CELL_DEGREES,
            )];
            regions.push(Region {
                name: format!("ZCTA {code}"),
                id: code,
                level: Level::Zcta,
                county_id: Some(county),
                centroid: centroid(&geometry),
                geometry,
            });
        }
    }
    GeographyIndex::new(regions)
}

fn county_id(idx: usize) -> String {
    format!("C{idx:03}")
}
