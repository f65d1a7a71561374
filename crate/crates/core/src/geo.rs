//! Geographic entities around an image location.
//!
//! Entities are points loaded from a tab-separated snapshot. A uniform
//! lat/lon grid answers radius queries; the context around an image is the
//! list of entities within `r` km ordered by distance (ties by id).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Context radius in km.
pub const DEFAULT_RADIUS_KM: f64 = 1.0;
/// Maximum number of entities kept per context.
pub const DEFAULT_MAX_ENTITIES: usize = 300;

/// Number of scalar features in front of the type embedding
/// (distance, azimuth north, azimuth east, size, has_facts, fact_count).
pub const SCALAR_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    /// Latitude must lie in [-90, 90]; longitude is wrapped into (-180, 180].
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Coordinate(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() {
            return Err(Error::Coordinate(format!("longitude {lon} is not finite")));
        }
        Ok(GeoPoint {
            lat,
            lon: wrap_longitude(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

fn wrap_longitude(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped <= -180.0 {
        180.0
    } else {
        wrapped
    }
}

/// Great-circle distance in km on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `from` to `to`, clockwise from north,
/// in (-180, 180].
pub fn azimuth(from: GeoPoint, to: GeoPoint) -> Result<f64> {
    if from == to || haversine_distance(from, to) == 0.0 {
        return Err(Error::UndefinedBearing);
    }
    let (p1, p2) = (from.lat.to_radians(), to.lat.to_radians());
    let dl = (to.lon - from.lon).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    let deg = y.atan2(x).to_degrees();
    Ok(if deg <= -180.0 { 180.0 } else { deg })
}

/// Maps an azimuth in [-180, 180] to `(north, east)` components in [0, 1]
/// so that directions close on the compass get close values.
pub fn normalize_azimuth(a_deg: f64) -> (f64, f64) {
    let north = a_deg.abs() / 180.0;
    let east = if a_deg >= -90.0 {
        (90.0 - a_deg).abs() / 180.0
    } else {
        (90.0 + (a_deg + 180.0).abs()) / 180.0
    };
    (north, east)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoEntity {
    pub id: String,
    pub name: String,
    pub location: GeoPoint,
    pub size: f64,
    pub type_tag: String,
}

/// Anything that can report how many facts mention an entity as subject.
pub trait FactCounts {
    fn fact_count(&self, entity_id: &str) -> usize;
}

/// No facts at all; used where no knowledge base is loaded.
pub struct NoFacts;

impl FactCounts for NoFacts {
    fn fact_count(&self, _entity_id: &str) -> usize {
        0
    }
}

const CELL_DEG: f64 = 0.05;

/// Immutable entity store with a uniform lat/lon grid index.
#[derive(Debug, Default, Clone)]
pub struct EntityStore {
    entities: Vec<GeoEntity>,
    by_id: HashMap<String, usize>,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

fn lat_cell(lat: f64) -> i64 {
    ((lat + 90.0) / CELL_DEG).floor() as i64
}

fn lon_columns() -> i64 {
    (360.0 / CELL_DEG).ceil() as i64
}

fn lon_cell(lon: f64) -> i64 {
    (((lon + 180.0) / CELL_DEG).floor() as i64).rem_euclid(lon_columns())
}

impl EntityStore {
    pub fn new(entities: Vec<GeoEntity>) -> Result<Self> {
        let mut store = EntityStore::default();
        for e in entities {
            store.insert(e)?;
        }
        Ok(store)
    }

    fn insert(&mut self, e: GeoEntity) -> Result<()> {
        if self.by_id.contains_key(&e.id) {
            return Err(Error::DuplicateId(e.id));
        }
        let idx = self.entities.len();
        let cell = (lat_cell(e.location.lat), lon_cell(e.location.lon));
        self.by_id.insert(e.id.clone(), idx);
        self.cells.entry(cell).or_default().push(idx);
        self.entities.push(e);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GeoEntity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &GeoEntity> {
        self.entities.iter()
    }

    /// Sorted, de-duplicated type tags of all stored entities.
    pub fn type_tags(&self) -> Vec<String> {
        let tags: BTreeSet<&str> = self.entities.iter().map(|e| e.type_tag.as_str()).collect();
        tags.into_iter().map(str::to_owned).collect()
    }

    /// All entities within `radius_km` of `center`, unordered.
    pub fn within_radius(&self, center: GeoPoint, radius_km: f64) -> Vec<(&GeoEntity, f64)> {
        let mut out = Vec::new();
        for idx in self.candidate_indices(center, radius_km) {
            let e = &self.entities[idx];
            let d = haversine_distance(center, e.location);
            if d <= radius_km {
                out.push((e, d));
            }
        }
        out
    }

    fn candidate_indices(&self, center: GeoPoint, radius_km: f64) -> Vec<usize> {
        let ang = radius_km / EARTH_RADIUS_KM;
        // small slack absorbs rounding at the box edge
        let dlat = ang.to_degrees() * (1.0 + 1e-9) + 1e-9;
        let lat_lo = (center.lat - dlat).max(-90.0);
        let lat_hi = (center.lat + dlat).min(90.0);
        let max_abs_lat = lat_lo.abs().max(lat_hi.abs());
        let cos_max = max_abs_lat.to_radians().cos();

        // hav(d) >= cos(lat1) cos(lat2) hav(dlon) >= cos^2(max_lat) hav(dlon)
        let ratio = (ang / 2.0).sin() / cos_max.max(0.0);
        let all_columns = ratio.is_nan() || ratio >= 1.0 || ang >= std::f64::consts::PI;
        let dlon = if all_columns {
            180.0
        } else {
            (2.0 * ratio.asin()).to_degrees() * (1.0 + 1e-9) + 1e-9
        };

        let cols = lon_columns();
        let col_range: Vec<i64> = if all_columns || 2.0 * dlon + 2.0 * CELL_DEG >= 360.0 {
            (0..cols).collect()
        } else {
            let lo = ((center.lon - dlon + 180.0) / CELL_DEG).floor() as i64;
            let hi = ((center.lon + dlon + 180.0) / CELL_DEG).floor() as i64;
            let mut seen = HashSet::new();
            (lo..=hi)
                .map(|c| c.rem_euclid(cols))
                .filter(|c| seen.insert(*c))
                .collect()
        };

        let mut out = Vec::new();
        for row in lat_cell(lat_lo)..=lat_cell(lat_hi) {
            for &col in &col_range {
                if let Some(v) = self.cells.get(&(row, col)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out
    }
}

/// Parses one entity record: id, name, lat, lon, size, type_tag.
fn parse_entity_line(line: &str) -> std::result::Result<GeoEntity, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 tab-separated fields, found {}", fields.len()));
    }
    let id = fields[0].trim();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let name = fields[1].trim().to_lowercase();
    if name.is_empty() {
        return Err(format!("entity `{id}` has an empty name"));
    }
    let num = |s: &str, what: &str| -> std::result::Result<f64, String> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad {what} `{}`", s.trim()))
    };
    let lat = num(fields[2], "latitude")?;
    let lon = num(fields[3], "longitude")?;
    let location = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let size = num(fields[4], "size")?;
    if !size.is_finite() || size < 0.0 {
        return Err(format!("size must be a non-negative number, got {size}"));
    }
    let type_tag = fields[5].trim().to_lowercase();
    if type_tag.is_empty() {
        return Err(format!("entity `{id}` has an empty type"));
    }
    Ok(GeoEntity {
        id: id.to_owned(),
        name,
        location,
        size,
        type_tag,
    })
}

/// Loads an entity snapshot. `#` lines and blank lines are skipped.
pub fn load_entities(path: impl AsRef<Path>) -> Result<EntityStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store = EntityStore::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entity = parse_entity_line(trimmed).map_err(|m| Error::parse(path, i + 1, m))?;
        store.insert(entity)?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntity {
    pub entity: GeoEntity,
    pub distance_km: f64,
    pub azimuth_deg: f64,
    pub has_facts: bool,
    pub fact_count: usize,
    pub rank: usize,
}

impl ContextEntity {
    /// The scalar part of the geographic embedding, in layout order.
    pub fn scalar_features(&self) -> [f64; SCALAR_FEATURES] {
        let (north, east) = normalize_azimuth(self.azimuth_deg);
        [
            self.distance_km,
            north,
            east,
            self.entity.size,
            if self.has_facts { 1.0 } else { 0.0 },
            self.fact_count as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoContext {
    pub image_location: GeoPoint,
    pub entities: Vec<ContextEntity>,
}

impl GeoContext {
    pub fn empty(image_location: GeoPoint) -> Self {
        GeoContext {
            image_location,
            entities: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn index_of(&self, entity_id: &str) -> Option<usize> {
        self.entities.iter().position(|c| c.entity.id == entity_id)
    }
}

/// Entities within `radius_km` of the image, nearest first (ties by id),
/// truncated to `max_entities`. Entities exactly at the image location have
/// no bearing and are left out.
pub fn build_geo_context(
    store: &EntityStore,
    image_location: GeoPoint,
    radius_km: f64,
    max_entities: usize,
    facts: &dyn FactCounts,
) -> GeoContext {
    let mut hits: Vec<(&GeoEntity, f64)> = store
        .within_radius(image_location, radius_km)
        .into_iter()
        .filter(|(_, d)| *d > 0.0)
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
    hits.truncate(max_entities);

    let entities = hits
        .into_iter()
        .enumerate()
        .map(|(rank, (e, d))| {
            let fact_count = facts.fact_count(&e.id);
            ContextEntity {
                entity: e.clone(),
                distance_km: d,
                azimuth_deg: azimuth(image_location, e.location)
                    .expect("non-zero distance implies a defined bearing"),
                has_facts: fact_count > 0,
                fact_count,
                rank,
            }
        })
        .collect();
    GeoContext {
        image_location,
        entities,
    }
}

/// Dense index over entity type tags; index 0 is reserved for unknown tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeVocabulary {
    tags: Vec<String>,
}

impl TypeVocabulary {
    pub const UNK: usize = 0;

    pub fn new(tags: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = tags.into_iter().collect();
        TypeVocabulary {
            tags: set.into_iter().collect(),
        }
    }

    /// Rows in an embedding table over this vocabulary, UNK included.
    pub fn rows(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn index(&self, tag: &str) -> usize {
        match self.tags.binary_search_by(|t| t.as_str().cmp(tag)) {
            Ok(i) => i + 1,
            Err(_) => Self::UNK,
        }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}
