//! Synthetic captioning world: images on a grid, each next to one captioned
//! landmark surrounded by distractor entities, with facts whose predicates
//! follow fixed per-type caption templates.
//!
//! Everything is drawn from one seeded generator, so a `(config, seed)` pair
//! always yields byte-identical files.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_dataset, Sample, TEST_MIN_LAT, VALIDATION_MIN_LAT};
use crate::error::{Error, Result};
use crate::eval::KeyPhraseLexicon;
use crate::geo::{GeoEntity, GeoPoint};

const PLACES: &[&str] = &[
    "kelso", "alnwick", "hexham", "morpeth", "wooler", "jedburgh", "melrose", "selkirk", "peebles", "coldstream",
    "berwick", "rothbury", "bamburgh", "warkworth", "amble", "blyth", "corbridge", "haltwhistle", "allendale", "bellingham",
    "otterburn", "elsdon", "ford", "etal", "norham", "duns", "eyemouth", "lauder", "galashiels", "hawick",
    "langholm", "moffat", "biggar", "lanark", "carluke", "ayr", "troon", "girvan", "maybole", "cumnock",
    "dalry", "beith", "largs", "dunoon", "rothesay", "oban", "crieff", "comrie", "callander", "dunblane",
    "alloa", "kinross", "cupar", "elie", "anstruther", "crail", "leven", "buckhaven", "kirkcaldy", "burntisland",
];

const MODIFIERS: &[&str] = &["", "old", "north", "south", "upper", "east", "west", "new"];

const YEARS: &[&str] = &[
    "1780", "1795", "1801", "1812", "1826", "1838", "1847", "1855", "1863", "1871", "1884", "1896",
];

const ARCHITECTS: &[&str] = &[
    "john rennie", "thomas telford", "robert adam", "james gillespie", "william burn", "david bryce",
    "robert stevenson", "john dobson", "william adam", "james playfair", "archibald simpson", "george meikle",
];

const HERITAGE: &[&str] = &["category a", "category b", "category c"];

const OWNERS: &[&str] = &["national trust", "network rail", "historic scotland", "the council", "a private trust"];

/// Landmark types: tag, name word, captioned predicates, template.
/// `{name}` and `{<predicate>}` are substituted. Templates open with the
/// name: before a fact-bearing entity is mentioned the gated vocabulary
/// scores are all zero, so a leading vocabulary word could not be learned.
const LANDMARKS: &[(&str, &str, &[&str], &str)] = &[
    ("bridge", "bridge", &["built", "architect"], "{name} . built in {built} , designed by {architect} ."),
    ("church", "church", &["built", "heritage"], "{name} . dating from {built} , it is listed as {heritage} ."),
    ("station", "station", &["opened"], "{name} , opened in {opened} ."),
    ("tower", "tower", &["architect", "built"], "{name} , designed by {architect} . built in {built} ."),
    ("castle", "castle", &["built", "heritage"], "{name} ruins . dates from {built} . listed as {heritage} ."),
];

/// Entities without facts.
const MINOR: &[(&str, &str)] = &[("street", "lane"), ("farm", "farm"), ("house", "cottage")];

/// Raw spellings of each canonical predicate, as an ingest source would
/// emit them.
const RAW_PREDICATES: &[(&str, &[&str])] = &[
    ("built", &["built", "yearbuilt", "builtin"]),
    ("opened", &["opened", "openingyear"]),
    ("architect", &["architect", "designer"]),
    ("heritage", &["heritage"]),
    ("elevation", &["elevation"]),
    ("owner", &["owner", "operator"]),
];

pub const LEXICON: &[(&str, &[&str])] = &[
    ("built", &["built in", "dating from", "dates from"]),
    ("architect", &["designed by", "architect"]),
    ("opened", &["opened in"]),
    ("heritage", &["listed as"]),
];

const GRID_LAT_STEP: f64 = 0.05;
const GRID_LON_STEP: f64 = 0.08;
const GRID_COLS: usize = 50;
const GRID_LON0: f64 = -6.0;
/// Southern edge of each split's latitude band.
const TRAIN_LAT0: f64 = 50.0;
const VALIDATION_LAT0: f64 = VALIDATION_MIN_LAT + 0.03;
const TEST_LAT0: f64 = TEST_MIN_LAT + 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    /// Fractions of samples placed in the validation and test latitude
    /// bands; the rest go to training.
    pub validation_fraction: f64,
    pub test_fraction: f64,
    /// Fact-bearing distractors per image, inclusive range.
    pub distractors: (usize, usize),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        SynthConfig {
            samples,
            validation_fraction: 0.15,
            test_fraction: 0.15,
            distractors: (1, 3),
            seed,
        }
    }

    /// Every sample in the training band.
    pub fn training_only(samples: usize, seed: u64) -> Self {
        SynthConfig {
            validation_fraction: 0.0,
            test_fraction: 0.0,
            ..Self::new(samples, seed)
        }
    }
}

/// A raw triple as found in an ingest file (predicate not yet merged).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    pub subject_id: String,
    pub predicate: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub entities: Vec<GeoEntity>,
    pub triples: Vec<RawTriple>,
    pub synonyms: Vec<(String, String)>,
    pub samples: Vec<Sample>,
    pub lexicon: KeyPhraseLexicon,
}

/// Files written by [`SynthWorld::write`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub entities: PathBuf,
    pub triples: PathBuf,
    pub synonyms: PathBuf,
    pub dataset: PathBuf,
    pub lexicon: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SynthFiles {
            entities: dir.join("entities.tsv"),
            triples: dir.join("triples.tsv"),
            synonyms: dir.join("synonyms.tsv"),
            dataset: dir.join("dataset.tsv"),
            lexicon: dir.join("lexicon.tsv"),
        }
    }
}

struct Names {
    used: HashSet<String>,
}

impl Names {
    fn fresh(&mut self, rng: &mut ChaCha8Rng, word: &str) -> String {
        for _ in 0..1000 {
            let place = PLACES.choose(rng).unwrap();
            let m = MODIFIERS.choose(rng).unwrap();
            let name = if m.is_empty() {
                format!("{place} {word}")
            } else {
                format!("{m} {place} {word}")
            };
            if self.used.insert(name.clone()) {
                return name;
            }
        }
        // Name space exhausted: disambiguate with a counter.
        let name = format!("{} {word} {}", PLACES[0], self.used.len());
        self.used.insert(name.clone());
        name
    }
}

/// Point `km` away from `p` at bearing `deg` (flat-earth step; fine below a
/// few km).
fn offset(p: GeoPoint, km: f64, deg: f64) -> GeoPoint {
    let b = deg.to_radians();
    let dlat = km * b.cos() / 111.195;
    let dlon = km * b.sin() / (111.195 * p.lat().to_radians().cos());
    GeoPoint::new(p.lat() + dlat, p.lon() + dlon).expect("offset stays in range")
}

fn grid_point(lat0: f64, cell: usize, rng: &mut ChaCha8Rng) -> GeoPoint {
    let row = cell / GRID_COLS;
    let col = cell % GRID_COLS;
    let lat = lat0 + row as f64 * GRID_LAT_STEP + rng.gen_range(-0.005..0.005);
    let lon = GRID_LON0 + col as f64 * GRID_LON_STEP + rng.gen_range(-0.005..0.005);
    GeoPoint::new(lat, lon).expect("grid inside valid range")
}

fn pick_object(rng: &mut ChaCha8Rng, predicate: &str) -> String {
    let pool = match predicate {
        "built" | "opened" => YEARS,
        "architect" => ARCHITECTS,
        "heritage" => HERITAGE,
        "owner" => OWNERS,
        "elevation" => return format!("{} m", rng.gen_range(5..400)),
        other => unreachable!("no object pool for {other}"),
    };
    pool.choose(rng).unwrap().to_string()
}

fn raw_predicate(rng: &mut ChaCha8Rng, canonical: &str) -> String {
    let (_, raws) = RAW_PREDICATES.iter().find(|(c, _)| *c == canonical).unwrap();
    raws.choose(rng).unwrap().to_string()
}

impl SynthWorld {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        if config.samples == 0 {
            return Err(Error::EmptyCorpus);
        }
        let fractions_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !fractions_ok(config.validation_fraction)
            || !fractions_ok(config.test_fraction)
            || config.validation_fraction + config.test_fraction > 1.0
            || config.distractors.0 > config.distractors.1
        {
            return Err(Error::Invalid(format!("bad synthetic corpus config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Names { used: HashSet::new() };
        let n = config.samples;
        let n_test = (n as f64 * config.test_fraction).round() as usize;
        let n_val = ((n as f64 * config.validation_fraction).round() as usize).min(n - n_test);
        let mut cells = [0usize; 3];

        let mut entities = Vec::new();
        let mut triples = Vec::new();
        let mut samples = Vec::new();
        let mut next_id = 0usize;
        let mut new_id = || {
            next_id += 1;
            format!("e{next_id:05}")
        };

        for i in 0..n {
            let band = if i < n - n_val - n_test {
                0
            } else if i < n - n_test {
                1
            } else {
                2
            };
            let lat0 = [TRAIN_LAT0, VALIDATION_LAT0, TEST_LAT0][band];
            let image_loc = grid_point(lat0, cells[band], &mut rng);
            cells[band] += 1;

            let mut add_landmark = |rng: &mut ChaCha8Rng, km: f64, size: f64, kind: usize, avoid: &[(String, String)]| {
                let (tag, word, preds, _) = LANDMARKS[kind];
                let id = new_id();
                let name = names.fresh(rng, word);
                let loc = offset(image_loc, km, rng.gen_range(-180.0..180.0));
                entities.push(GeoEntity {
                    id: id.clone(),
                    name: name.clone(),
                    location: loc,
                    size: (size * 100.0).round() / 100.0,
                    type_tag: tag.to_owned(),
                });
                let mut objects = Vec::new();
                for &p in preds {
                    // distractors get a different value than the landmark
                    let mut obj = pick_object(rng, p);
                    while avoid.iter().any(|(ap, ao)| ap == p && *ao == obj) {
                        obj = pick_object(rng, p);
                    }
                    objects.push((p.to_owned(), obj));
                }
                for noise in ["elevation", "owner"] {
                    if rng.gen_bool(0.7) {
                        objects.push((noise.to_owned(), pick_object(rng, noise)));
                    }
                }
                for (p, o) in &objects {
                    triples.push(RawTriple {
                        subject_id: id.clone(),
                        predicate: raw_predicate(rng, p),
                        object: o.clone(),
                    });
                    // the same fact spelled with another synonym
                    if rng.gen_bool(0.1) {
                        triples.push(RawTriple {
                            subject_id: id.clone(),
                            predicate: raw_predicate(rng, p),
                            object: o.clone(),
                        });
                    }
                }
                (name, objects)
            };

            let kind = rng.gen_range(0..LANDMARKS.len());
            // the captioned landmark is the nearest and the largest
            let km = rng.gen_range(0.02..0.12);
            let size = rng.gen_range(1.2..2.0);
            let (name, objects) = add_landmark(&mut rng, km, size, kind, &[]);
            let nd = rng.gen_range(config.distractors.0..=config.distractors.1);
            for _ in 0..nd {
                // mostly the same type, so distractor facts share predicates
                let dk = if rng.gen_bool(0.6) { kind } else { rng.gen_range(0..LANDMARKS.len()) };
                let km = rng.gen_range(0.45..0.95);
                let size = rng.gen_range(0.0..0.8);
                add_landmark(&mut rng, km, size, dk, &objects);
            }
            for _ in 0..rng.gen_range(0..=2) {
                let (tag, word) = *MINOR.choose(&mut rng).unwrap();
                let loc = offset(image_loc, rng.gen_range(0.2..0.95), rng.gen_range(-180.0..180.0));
                entities.push(GeoEntity {
                    id: new_id(),
                    name: names.fresh(&mut rng, word),
                    location: loc,
                    size: 0.0,
                    type_tag: tag.to_owned(),
                });
            }

            let mut caption = LANDMARKS[kind].3.replace("{name}", &name);
            for (p, o) in &objects {
                caption = caption.replace(&format!("{{{p}}}"), o);
            }
            let image_id = format!("img{i:04}");
            samples.push(Sample {
                feature_ref: format!("{image_id}.gfcf"),
                image_id,
                location: image_loc,
                caption_raw: caption,
            });
        }

        let mut synonyms = Vec::new();
        for (canonical, raws) in RAW_PREDICATES {
            for raw in *raws {
                if raw != canonical {
                    synonyms.push((raw.to_string(), canonical.to_string()));
                }
            }
        }
        let lexicon = KeyPhraseLexicon::new(LEXICON.iter().map(|(p, ph)| (*p, ph.to_vec())))?;
        Ok(SynthWorld {
            entities,
            triples,
            synonyms,
            samples,
            lexicon,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SynthFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles::in_dir(dir);
        let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| Error::io(p, e));

        let mut s = String::from("# id\tname\tlat\tlon\tsize\ttype\n");
        for e in &self.entities {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.name,
                e.location.lat(),
                e.location.lon(),
                e.size,
                e.type_tag
            );
        }
        write(&files.entities, s)?;

        let mut s = String::from("# subject\tpredicate\tobject\n");
        for t in &self.triples {
            let _ = writeln!(s, "{}\t{}\t{}", t.subject_id, t.predicate, t.object);
        }
        write(&files.triples, s)?;

        let mut s = String::new();
        for (raw, canonical) in &self.synonyms {
            let _ = writeln!(s, "{raw}\t{canonical}");
        }
        write(&files.synonyms, s)?;
        write(&files.lexicon, self.lexicon.to_lines())?;
        write_dataset(&files.dataset, &self.samples)?;
        Ok(files)
    }
}
