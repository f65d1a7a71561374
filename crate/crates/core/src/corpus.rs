//! Image/caption/location samples and caption tokenization.
//!
//! Captions are lower-cased and split into word and punctuation tokens.
//! Linking then marks which tokens name a geographic entity or realize a
//! fact object, collapsing multi-word matches into one token.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{GeoContext, GeoPoint};
use crate::knowledge::KnowledgeContext;

/// Longest caption (in tokens, after preprocessing) kept at ingestion.
pub const MAX_CAPTION_TOKENS: usize = 100;

/// Southern edge of the test band.
pub const TEST_MIN_LAT: f64 = 54.8975;
/// Southern edge of the validation band.
pub const VALIDATION_MIN_LAT: f64 = 53.5706;

fn strip_markup(text: &str) -> String {
    let text = text
        .replace("&amp;", "&")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'");
    // a `<` only opens a tag when a `>` closes it
    let mut out = String::with_capacity(text.len());
    let mut rest = text.as_str();
    while let Some(open) = rest.find('<') {
        match rest[open..].find('>') {
            Some(close) => {
                out.push_str(&rest[..open]);
                out.push(' ');
                rest = &rest[open + close + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Lower-cases, strips markup and splits into word/punctuation tokens.
///
/// Words keep inner hyphens and digit separators (`1,000`, `1.5`); inner
/// apostrophes are dropped (`mary's` -> `marys`). Every other non-space
/// character is a token of its own. `&` becomes `and`, `saint` becomes
/// `st`. The function is a fixed point on its own space-joined output.
pub fn preprocess_caption(text: &str) -> Vec<String> {
    let lowered = strip_markup(text).to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_alphanumeric() {
            tokens.push(c.to_string());
            i += 1;
            continue;
        }
        let mut word = String::new();
        while i < chars.len() {
            let c = chars[i];
            let prev = i.checked_sub(1).map(|j| chars[j]);
            let next = chars.get(i + 1).copied();
            // inner hyphens and digit separators stay inside the word
            let inner_hyphen =
                c == '-' && prev.is_some_and(char::is_alphanumeric) && next.is_some_and(char::is_alphanumeric);
            let digit_sep = matches!(c, '.' | ',')
                && prev.is_some_and(|p| p.is_ascii_digit())
                && next.is_some_and(|n| n.is_ascii_digit());
            if c.is_alphanumeric() || inner_hyphen || digit_sep {
                word.push(c);
            } else if is_apostrophe(c)
                && prev.is_some_and(char::is_alphanumeric)
                && next.is_some_and(char::is_alphanumeric)
            {
                // dropped
            } else {
                break;
            }
            i += 1;
        }
        tokens.push(word);
    }
    for t in &mut tokens {
        match t.as_str() {
            "&" => *t = "and".into(),
            "saint" => *t = "st".into(),
            _ => {}
        }
    }
    tokens
}

/// True if `needle` occurs as a contiguous run in `haystack`.
pub fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Vocab,
    Entity,
    Fact,
}

/// A caption as the model sees it. For `Vocab` tokens `refs` holds the
/// vocabulary index, for `Entity` the geographic-context slot, for `Fact`
/// the knowledge-context slot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenizedCaption {
    pub tokens: Vec<String>,
    pub kinds: Vec<TokenKind>,
    pub refs: Vec<usize>,
}

impl TokenizedCaption {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn push(&mut self, token: impl Into<String>, kind: TokenKind, r: usize) {
        self.tokens.push(token.into());
        self.kinds.push(kind);
        self.refs.push(r);
    }

    /// Space-joined surface string.
    pub fn surface(&self) -> String {
        self.tokens.join(" ")
    }

    /// Word-level tokens, multi-word entity/fact tokens split apart.
    pub fn words(&self) -> Vec<String> {
        self.tokens
            .iter()
            .flat_map(|t| t.split(' ').filter(|w| !w.is_empty()).map(str::to_owned))
            .collect()
    }

    /// Checks parallel lengths and that every reference is in range.
    pub fn validate(&self, vocab_len: usize, geo_len: usize, knowledge_len: usize) -> Result<()> {
        if self.kinds.len() != self.tokens.len() || self.refs.len() != self.tokens.len() {
            return Err(Error::Shape(format!(
                "caption lists of lengths {}/{}/{}",
                self.tokens.len(),
                self.kinds.len(),
                self.refs.len()
            )));
        }
        for (i, (k, r)) in self.kinds.iter().zip(&self.refs).enumerate() {
            let bound = match k {
                TokenKind::Vocab => vocab_len,
                TokenKind::Entity => geo_len,
                TokenKind::Fact => knowledge_len,
            };
            if *r >= bound {
                return Err(Error::Invalid(format!(
                    "token {i} `{}` ({k:?}) refers to slot {r} of {bound}",
                    self.tokens[i]
                )));
            }
        }
        Ok(())
    }

    /// Re-resolves `Vocab` references against a vocabulary.
    pub fn resolve_vocab(&mut self, vocab: &Vocabulary) {
        for ((t, k), r) in self.tokens.iter().zip(&self.kinds).zip(self.refs.iter_mut()) {
            if *k == TokenKind::Vocab {
                *r = vocab.index(t);
            }
        }
    }
}

fn longest_match<'a>(
    tokens: &[String],
    at: usize,
    candidates: impl Iterator<Item = (usize, &'a [String])>,
) -> Vec<(usize, usize)> {
    // (slot, length) of every candidate matching at `at`
    candidates
        .filter(|(_, name)| {
            !name.is_empty()
                && at + name.len() <= tokens.len()
                && &tokens[at..at + name.len()] == *name
        })
        .map(|(slot, name)| (slot, name.len()))
        .collect()
}

/// Greedy longest-match-first linking against both contexts.
///
/// When an entity name and a fact label match at the same position the
/// longer match wins; equal lengths go to the entity. Among facts sharing a
/// label, facts whose subject was already linked earlier in the caption win,
/// then the higher-ranked slot. `Vocab` tokens get [`Vocabulary::UNK`] until
/// [`TokenizedCaption::resolve_vocab`] is called.
pub fn link_caption(
    tokens: &[String],
    geo: &GeoContext,
    knowledge: &KnowledgeContext,
) -> TokenizedCaption {
    let names: Vec<Vec<String>> = geo
        .entities
        .iter()
        .map(|c| preprocess_caption(&c.entity.name))
        .collect();
    let labels: Vec<Vec<String>> = knowledge
        .facts
        .iter()
        .map(|f| preprocess_caption(&f.fact.object_label))
        .collect();

    let mut out = TokenizedCaption::default();
    let mut mentioned: HashSet<usize> = HashSet::new();
    let mut i = 0;
    while i < tokens.len() {
        let ents = longest_match(tokens, i, names.iter().enumerate().map(|(s, n)| (s, n.as_slice())));
        let facts = longest_match(tokens, i, labels.iter().enumerate().map(|(s, n)| (s, n.as_slice())));
        let ent_len = ents.iter().map(|m| m.1).max().unwrap_or(0);
        let fact_len = facts.iter().map(|m| m.1).max().unwrap_or(0);

        if ent_len == 0 && fact_len == 0 {
            out.push(tokens[i].clone(), TokenKind::Vocab, Vocabulary::UNK);
            i += 1;
        } else if ent_len >= fact_len {
            let slot = ents.iter().filter(|m| m.1 == ent_len).map(|m| m.0).min().unwrap();
            mentioned.insert(slot);
            out.push(tokens[i..i + ent_len].join(" "), TokenKind::Entity, slot);
            i += ent_len;
        } else {
            let slot = facts
                .iter()
                .filter(|m| m.1 == fact_len)
                .map(|m| m.0)
                .min_by_key(|&s| (!mentioned.contains(&knowledge.facts[s].subject_ref), s))
                .unwrap();
            out.push(tokens[i..i + fact_len].join(" "), TokenKind::Fact, slot);
            i += fact_len;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image_id: String,
    pub location: GeoPoint,
    pub caption_raw: String,
    pub feature_ref: String,
}

fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn escape_field(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

/// Result of reading a dataset file.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Image ids dropped because their caption exceeds [`MAX_CAPTION_TOKENS`].
    pub dropped_long: Vec<String>,
}

/// Reads `image_id, lat, lon, caption, feature_ref` tab-separated lines.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = Dataset::default();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 5 tab-separated fields, found {}", f.len()),
            ));
        }
        let id = f[0].trim();
        if id.is_empty() {
            return Err(Error::parse(path, i + 1, "empty image id"));
        }
        let lat: f64 = f[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad latitude `{}`", f[1])))?;
        let lon: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad longitude `{}`", f[2])))?;
        let location = GeoPoint::new(lat, lon).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !seen.insert(id.to_owned()) {
            return Err(Error::DuplicateId(id.to_owned()));
        }
        let caption_raw = unescape_field(f[3]);
        if preprocess_caption(&caption_raw).len() > MAX_CAPTION_TOKENS {
            log::warn!("dropping {id}: caption longer than {MAX_CAPTION_TOKENS} tokens");
            ds.dropped_long.push(id.to_owned());
            continue;
        }
        ds.samples.push(Sample {
            image_id: id.to_owned(),
            location,
            caption_raw,
            feature_ref: f[4].trim().to_owned(),
        });
    }
    Ok(ds)
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# image_id\tlat\tlon\tcaption\tfeature_ref\n");
    for s in samples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.image_id,
            s.location.lat(),
            s.location.lon(),
            escape_field(&s.caption_raw),
            s.feature_ref
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn of(location: GeoPoint) -> Split {
        let lat = location.lat();
        if lat > TEST_MIN_LAT {
            Split::Test
        } else if lat > VALIDATION_MIN_LAT {
            Split::Validation
        } else {
            Split::Train
        }
    }
}

/// Latitude bands: test north of 54.8975, validation above 53.5706.
pub fn split_dataset(samples: &[Sample]) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        match Split::of(s.location) {
            Split::Train => train.push(s.clone()),
            Split::Validation => validation.push(s.clone()),
            Split::Test => test.push(s.clone()),
        }
    }
    (train, validation, test)
}

/// Word vectors in GloVe text format.
#[derive(Debug, Clone, Default)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f32>>,
}

impl PretrainedVectors {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pv = PretrainedVectors::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: std::result::Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            let v = v.map_err(|_| Error::parse(path, i + 1, "non-numeric vector component"))?;
            if pv.dim == 0 {
                pv.dim = v.len();
            } else if v.len() != pv.dim {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("vector of width {} after width {}", v.len(), pv.dim),
                ));
            }
            pv.vectors.insert(word.to_owned(), v);
        }
        Ok(pv)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyData {
    tokens: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

/// Regular-token vocabulary with initial embedding vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f32>>,
}

impl From<VocabularyData> for Vocabulary {
    fn from(d: VocabularyData) -> Self {
        let index = d.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: d.tokens,
            index,
            vectors: d.vectors,
        }
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData {
            tokens: v.tokens,
            vectors: v.vectors,
        }
    }
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    pub const UNK: usize = 3;
    pub const RESERVED: [&'static str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }
}

/// Collects `Vocab`-kind tokens seen at least `min_count` times, sorted,
/// after the reserved tokens. Rows come from `pretrained` where available,
/// otherwise uniform in [-0.05, 0.05] from a seeded generator.
pub fn build_vocabulary(
    captions: &[TokenizedCaption],
    min_count: usize,
    dim: usize,
    pretrained: Option<&PretrainedVectors>,
    seed: u64,
) -> Result<Vocabulary> {
    if let Some(p) = pretrained {
        if p.dim != dim && !p.vectors.is_empty() {
            return Err(Error::Shape(format!(
                "pretrained vectors of width {} for model width {dim}",
                p.dim
            )));
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in captions {
        for (t, k) in c.tokens.iter().zip(&c.kinds) {
            if *k == TokenKind::Vocab {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut tokens: Vec<String> = Vocabulary::RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        counts
            .into_iter()
            .filter(|(t, n)| *n >= min_count.max(1) && !Vocabulary::RESERVED.contains(t))
            .map(|(t, _)| t.to_owned()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = tokens
        .iter()
        .map(|t| {
            let random: Vec<f32> = (0..dim).map(|_| rng.gen_range(-0.05f32..=0.05)).collect();
            match pretrained.and_then(|p| p.vectors.get(t)) {
                Some(v) => v.clone(),
                None => random,
            }
        })
        .collect();
    let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(Vocabulary {
        tokens,
        index,
        vectors,
    })
}

const FEATURE_MAGIC: &[u8; 4] = b"GFCF";

/// A grid of image features flattened to `positions` rows of `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub positions: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageFeatures {
    pub fn row(&self, p: usize) -> &[f32] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }
}

pub fn write_image_features(path: impl AsRef<Path>, f: &ImageFeatures) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(12 + 4 * f.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(f.positions as u32).to_le_bytes());
    buf.extend_from_slice(&(f.channels as u32).to_le_bytes());
    for v in &f.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a feature file and checks it against the configured shape.
pub fn read_image_features(path: impl AsRef<Path>, shape: (usize, usize)) -> Result<ImageFeatures> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::Invalid(format!("{}: not a GFCF feature file", path.display())));
    }
    let positions = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let channels = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if (positions, channels) != shape {
        return Err(Error::Shape(format!(
            "{}: features are {positions}x{channels}, config expects {}x{}",
            path.display(),
            shape.0,
            shape.1
        )));
    }
    let expected = 12 + 4 * positions * channels;
    if bytes.len() != expected {
        return Err(Error::Shape(format!(
            "{}: {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ImageFeatures {
        positions,
        channels,
        data,
    })
}

/// Deterministic stand-in features in [0, 1), seeded by the image id.
pub fn synthetic_features(image_id: &str, shape: (usize, usize)) -> ImageFeatures {
    let digest = Sha256::digest(image_id.as_bytes());
    let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageFeatures {
        positions: shape.0,
        channels: shape.1,
        data: (0..shape.0 * shape.1).map(|_| rng.gen::<f32>()).collect(),
    }
}

/// Where image features come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// Feature files under a directory; a missing file is an error.
    Files(PathBuf),
    /// Files under the directory when present, otherwise synthetic features.
    Synthetic(Option<PathBuf>),
}

pub fn load_image_features(
    feature_ref: &str,
    image_id: &str,
    source: &FeatureSource,
    shape: (usize, usize),
) -> Result<ImageFeatures> {
    match source {
        FeatureSource::Files(dir) => read_image_features(dir.join(feature_ref), shape),
        FeatureSource::Synthetic(dir) => {
            if let Some(dir) = dir {
                let p = dir.join(feature_ref);
                if !feature_ref.is_empty() && p.is_file() {
                    return read_image_features(p, shape);
                }
            }
            Ok(synthetic_features(image_id, shape))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{ContextEntity, GeoEntity};
    use crate::knowledge::{ContextFact, Fact};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(
            preprocess_caption("Theatre Royal & Haymarket"),
            toks("theatre royal and haymarket")
        );
        assert!(preprocess_caption("").is_empty());
        assert_eq!(
            preprocess_caption("St. Mary's Lighthouse, built in 1898!"),
            toks("st . marys lighthouse , built in 1898 !")
        );
        assert_eq!(
            preprocess_caption("Saint Paul's <b>grade-ii</b> listed, 1,000 ft (1.5 km)"),
            toks("st pauls grade-ii listed , 1,000 ft ( 1.5 km )")
        );
        assert_eq!(preprocess_caption("A &amp; B"), toks("a and b"));
    }

    #[test]
    fn subsequence_search() {
        let hay = toks("the river tweed flows");
        assert!(contains_subsequence(&hay, &toks("river tweed")));
        assert!(!contains_subsequence(&hay, &toks("tweed river")));
        assert!(!contains_subsequence(&hay, &[]));
    }

    fn entity(id: &str, name: &str, rank: usize) -> ContextEntity {
        ContextEntity {
            entity: GeoEntity {
                id: id.into(),
                name: name.into(),
                location: GeoPoint::new(51.5, -0.13).unwrap(),
                size: 0.0,
                type_tag: "x".into(),
            },
            distance_km: 0.1 * (rank + 1) as f64,
            azimuth_deg: 0.0,
            has_facts: false,
            fact_count: 0,
            rank,
        }
    }

    fn fact(subject: &str, pred: &str, obj: &str, subject_ref: usize) -> ContextFact {
        ContextFact {
            fact: Fact {
                subject_id: subject.into(),
                predicate: pred.into(),
                object_label: obj.into(),
            },
            subject_ref,
            score: 0.0,
        }
    }

    fn figure_contexts() -> (GeoContext, KnowledgeContext) {
        let geo = GeoContext {
            image_location: GeoPoint::new(51.5, -0.13).unwrap(),
            entities: vec![entity("tr", "theatre royal", 0), entity("hm", "haymarket", 1)],
        };
        let know = KnowledgeContext {
            facts: vec![
                fact("tr", "built_in", "1720", 0),
                fact("tr", "architect", "john nash", 0),
                fact("tr", "rebuilt", "1879", 0),
            ],
        };
        (geo, know)
    }

    #[test]
    fn link_worked_example() {
        let (geo, know) = figure_contexts();
        let tokens = preprocess_caption("Theatre Royal Haymarket. Dating back to 1720");
        let linked = link_caption(&tokens, &geo, &know);
        use TokenKind::*;
        assert_eq!(
            linked.kinds,
            vec![Entity, Entity, Vocab, Vocab, Vocab, Vocab, Fact]
        );
        assert_eq!(linked.tokens[0], "theatre royal");
        assert_eq!(linked.refs[0], 0);
        assert_eq!(linked.refs[1], 1);
        assert_eq!(linked.refs[6], 0);
        assert_eq!(linked.surface(), tokens.join(" "));
    }

    #[test]
    fn link_without_matches_is_all_vocab() {
        let (geo, know) = figure_contexts();
        let linked = link_caption(&toks("a quiet street"), &geo, &know);
        assert!(linked.kinds.iter().all(|k| *k == TokenKind::Vocab));
    }

    #[test]
    fn link_prefers_longest_and_entity_on_ties() {
        let geo = GeoContext {
            image_location: GeoPoint::new(51.5, -0.13).unwrap(),
            entities: vec![entity("t", "tweed", 0), entity("rt", "river tweed", 1)],
        };
        let know = KnowledgeContext {
            facts: vec![fact("t", "named", "tweed", 0), fact("t", "x", "river tweed valley", 0)],
        };
        let linked = link_caption(&toks("the river tweed"), &geo, &know);
        assert_eq!(linked.tokens, toks("the").into_iter().chain(["river tweed".to_string()]).collect::<Vec<_>>());
        assert_eq!(linked.kinds[1], TokenKind::Entity);
        assert_eq!(linked.refs[1], 1);

        let tie = link_caption(&toks("tweed"), &geo, &know);
        assert_eq!(tie.kinds, vec![TokenKind::Entity]);

        let longer_fact = link_caption(&toks("river tweed valley"), &geo, &know);
        assert_eq!(longer_fact.kinds, vec![TokenKind::Fact]);
        assert_eq!(longer_fact.refs, vec![1]);
    }

    #[test]
    fn shared_labels_prefer_mentioned_subject() {
        let geo = GeoContext {
            image_location: GeoPoint::new(51.5, -0.13).unwrap(),
            entities: vec![entity("a", "alpha", 0), entity("b", "beta", 1)],
        };
        let know = KnowledgeContext {
            facts: vec![fact("a", "built", "1800", 0), fact("b", "built", "1800", 1)],
        };
        let linked = link_caption(&toks("beta built in 1800"), &geo, &know);
        assert_eq!(linked.refs[3], 1);
        let linked = link_caption(&toks("built in 1800"), &geo, &know);
        assert_eq!(linked.refs[2], 0);
    }

    fn sample(id: &str, lat: f64) -> Sample {
        Sample {
            image_id: id.into(),
            location: GeoPoint::new(lat, -2.0).unwrap(),
            caption_raw: String::new(),
            feature_ref: String::new(),
        }
    }

    #[test]
    fn split_thresholds() {
        let s = vec![
            sample("a", 55.0),
            sample("b", 54.0),
            sample("c", 51.5),
            sample("d", 54.8975),
            sample("e", 53.5706),
        ];
        let (train, val, test) = split_dataset(&s);
        let ids = |v: &[Sample]| v.iter().map(|s| s.image_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&test), vec!["a"]);
        assert_eq!(ids(&val), vec!["b", "d"]);
        assert_eq!(ids(&train), vec!["c", "e"]);
    }

    #[test]
    fn vocabulary_construction() {
        let empty = build_vocabulary(&[], 1, 4, None, 0).unwrap();
        assert_eq!(empty.len(), 4);
        assert_eq!(empty.index("anything"), Vocabulary::UNK);

        let (geo, know) = figure_contexts();
        let linked = link_caption(
            &preprocess_caption("Theatre Royal Haymarket. Dating back to 1720"),
            &geo,
            &know,
        );
        let v = build_vocabulary(std::slice::from_ref(&linked), 1, 4, None, 9).unwrap();
        assert_eq!(&v.tokens()[4..], &toks(". back dating to")[..]);
        assert_eq!(v.index("theatre royal"), Vocabulary::UNK);
        assert_eq!(v.index("1720"), Vocabulary::UNK);
        assert_eq!(v, build_vocabulary(std::slice::from_ref(&linked), 1, 4, None, 9).unwrap());
        assert_ne!(v.vectors(), build_vocabulary(&[linked], 1, 4, None, 10).unwrap().vectors());
        assert!(v.vectors().iter().flatten().all(|x| x.abs() <= 0.05));
    }

    #[test]
    fn vocabulary_uses_pretrained_rows() {
        let mut pv = PretrainedVectors { dim: 2, ..Default::default() };
        pv.vectors.insert("dating".into(), vec![1.0, 2.0]);
        let mut c = TokenizedCaption::default();
        c.push("dating", TokenKind::Vocab, 0);
        let v = build_vocabulary(&[c], 1, 2, Some(&pv), 0).unwrap();
        assert_eq!(v.vectors()[v.index("dating")], vec![1.0, 2.0]);
        assert!(build_vocabulary(&[], 1, 3, Some(&pv), 0).is_err());
    }

    #[test]
    fn feature_files() {
        let dir = tempfile::tempdir().unwrap();
        let f = ImageFeatures {
            positions: 196,
            channels: 2048,
            data: vec![0.0; 196 * 2048],
        };
        let p = dir.path().join("img.gfcf");
        write_image_features(&p, &f).unwrap();
        let back = read_image_features(&p, (196, 2048)).unwrap();
        assert_eq!(back.positions, 196);
        assert_eq!(back.row(195).len(), 2048);
        assert!(matches!(read_image_features(&p, (4, 16)), Err(Error::Shape(_))));

        let src = FeatureSource::Synthetic(Some(dir.path().to_path_buf()));
        let a = load_image_features("missing.gfcf", "img-1", &src, (4, 8)).unwrap();
        let b = load_image_features("missing.gfcf", "img-1", &src, (4, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthetic_features("img-2", (4, 8)));
        let strict = FeatureSource::Files(dir.path().to_path_buf());
        assert!(load_image_features("missing.gfcf", "img-1", &strict, (4, 8)).is_err());
    }

    #[test]
    fn dataset_round_trip_and_filtering() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = sample("a", 51.0);
        a.caption_raw = "Tab\there".into();
        let mut long = sample("long", 51.0);
        long.caption_raw = "word ".repeat(101);
        let p = dir.path().join("ds.tsv");
        write_dataset(&p, &[a.clone(), long]).unwrap();
        let ds = load_dataset(&p).unwrap();
        assert_eq!(ds.samples, vec![a]);
        assert_eq!(ds.dropped_long, vec!["long".to_string()]);

        std::fs::write(&p, "a\t51\t0\tx\tf\na\t52\t0\ty\tg\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::DuplicateId(_))));
        std::fs::write(&p, "a\t51\t0\tx\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Parse { line: 1, .. })));
    }
}
