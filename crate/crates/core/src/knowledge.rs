//! Knowledge-base triples attached to geographic entities.
//!
//! Facts are `(subject, predicate, object)` triples whose subject is an
//! entity id. Objects act as atomic labels that can appear in captions; the
//! `(subject, predicate)` pair is the fact's meaning. Candidate facts for an
//! image are ranked by a logistic-regression model and the top `m` form the
//! knowledge context.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{contains_subsequence, preprocess_caption};
use crate::error::{Error, Result};
use crate::geo::{normalize_azimuth, FactCounts, GeoContext};

pub const DEFAULT_MAX_FACTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub subject_id: String,
    pub predicate: String,
    pub object_label: String,
}

/// Raw predicate to canonical predicate. Chains are resolved on
/// construction so every value is a fixed point of the map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynonymMap {
    map: BTreeMap<String, String>,
}

impl SynonymMap {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let raw: BTreeMap<String, String> = pairs
            .into_iter()
            .map(|(a, b)| (a.into().to_lowercase(), b.into().to_lowercase()))
            .filter(|(a, b)| a != b)
            .collect();
        let mut map = BTreeMap::new();
        for start in raw.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            while let Some(next) = raw.get(cur) {
                if !seen.insert(cur) {
                    return Err(Error::SynonymCycle(start.clone()));
                }
                cur = next;
            }
            map.insert(start.clone(), cur.to_owned());
        }
        Ok(SynonymMap { map })
    }

    /// Reads `raw<TAB>canonical` lines; `#` starts a comment line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split('\t');
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    pairs.push((a.trim().to_owned(), b.trim().to_owned()))
                }
                _ => return Err(Error::parse(path, i + 1, "expected `raw<TAB>canonical`")),
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

/// Canonical form of a raw predicate; unknown predicates map to themselves.
pub fn merge_predicates(raw_predicate: &str, synonyms: &SynonymMap) -> String {
    let key = raw_predicate.to_lowercase();
    match synonyms.map.get(&key) {
        Some(canonical) => canonical.clone(),
        None => key,
    }
}

/// Facts grouped by subject id, in file order. Exact duplicates (which
/// appear once synonyms are merged) are kept once.
#[derive(Debug, Clone, Default)]
pub struct FactStore {
    by_subject: BTreeMap<String, Vec<Fact>>,
    len: usize,
}

impl FactStore {
    pub fn new(facts: impl IntoIterator<Item = Fact>) -> Self {
        let mut store = FactStore::default();
        for f in facts {
            store.insert(f);
        }
        store
    }

    fn insert(&mut self, fact: Fact) {
        let list = self.by_subject.entry(fact.subject_id.clone()).or_default();
        if !list.contains(&fact) {
            list.push(fact);
            self.len += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn facts_about(&self, subject_id: &str) -> &[Fact] {
        self.by_subject
            .get(subject_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> {
        self.by_subject.values().flatten()
    }

    pub fn predicates(&self) -> BTreeSet<String> {
        self.iter().map(|f| f.predicate.clone()).collect()
    }

    /// Every distinct object label, tokenized the way captions are.
    pub fn object_labels(&self) -> BTreeSet<Vec<String>> {
        self.iter()
            .map(|f| preprocess_caption(&f.object_label))
            .filter(|t| !t.is_empty())
            .collect()
    }
}

impl FactCounts for FactStore {
    fn fact_count(&self, entity_id: &str) -> usize {
        self.facts_about(entity_id).len()
    }
}

/// Reads `subject_id<TAB>raw_predicate<TAB>object_label` lines.
pub fn load_facts(path: impl AsRef<Path>, synonyms: &SynonymMap) -> Result<FactStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store = FactStore::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(
                path,
                i + 1,
                "expected three non-empty tab-separated fields",
            ));
        }
        store.insert(Fact {
            subject_id: fields[0].to_owned(),
            predicate: merge_predicates(fields[1], synonyms),
            object_label: fields[2].to_lowercase(),
        });
    }
    Ok(store)
}

/// Fixed, ordered set of canonical predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateVocabulary {
    predicates: Vec<String>,
}

impl PredicateVocabulary {
    pub fn new(predicates: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = predicates.into_iter().collect();
        PredicateVocabulary {
            predicates: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn index(&self, predicate: &str) -> Option<usize> {
        self.predicates
            .binary_search_by(|p| p.as_str().cmp(predicate))
            .ok()
    }

    pub fn predicates(&self) -> &[String] {
        &self.predicates
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFact {
    pub fact: Fact,
    /// Index of the subject in the paired geographic context.
    pub subject_ref: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeContext {
    pub facts: Vec<ContextFact>,
}

impl KnowledgeContext {
    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

/// Every stored fact whose subject is in the geographic context, linked to
/// its subject. Ordered by subject rank, then store order.
pub fn candidate_facts(geo: &GeoContext, store: &FactStore) -> Vec<ContextFact> {
    geo.entities
        .iter()
        .enumerate()
        .flat_map(|(idx, ce)| {
            store
                .facts_about(&ce.entity.id)
                .iter()
                .map(move |f| ContextFact {
                    fact: f.clone(),
                    subject_ref: idx,
                    score: 0.0,
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Unknown predicates are an error.
    Training,
    /// Unknown predicates get an all-zero one-hot block.
    Inference,
}

/// Number of non-predicate ranker features.
pub const RANKER_GEO_FEATURES: usize = 7;

/// `[one-hot(predicate), subject rank, distance, azimuth north, azimuth
/// east, size, has_facts, fact_count]`.
pub fn featurize_fact(
    cf: &ContextFact,
    geo: &GeoContext,
    predicates: &PredicateVocabulary,
    mode: FeatureMode,
) -> Result<Vec<f64>> {
    let subject = geo.entities.get(cf.subject_ref).ok_or_else(|| {
        Error::Invalid(format!(
            "subject_ref {} outside geographic context of {} entities",
            cf.subject_ref,
            geo.len()
        ))
    })?;
    let mut x = vec![0.0; predicates.len() + RANKER_GEO_FEATURES];
    match (predicates.index(&cf.fact.predicate), mode) {
        (Some(i), _) => x[i] = 1.0,
        (None, FeatureMode::Inference) => {}
        (None, FeatureMode::Training) => {
            return Err(Error::UnknownPredicate(cf.fact.predicate.clone()))
        }
    }
    let (north, east) = normalize_azimuth(subject.azimuth_deg);
    let tail = &mut x[predicates.len()..];
    tail[0] = subject.rank as f64;
    tail[1] = subject.distance_km;
    tail[2] = north;
    tail[3] = east;
    tail[4] = subject.entity.size;
    tail[5] = if subject.has_facts { 1.0 } else { 0.0 };
    tail[6] = subject.fact_count as f64;
    Ok(x)
}

/// Positive label: both the subject's name and the fact's object occur in
/// the preprocessed caption.
pub fn ranker_label(cf: &ContextFact, geo: &GeoContext, caption_tokens: &[String]) -> bool {
    let Some(subject) = geo.entities.get(cf.subject_ref) else {
        return false;
    };
    let name = preprocess_caption(&subject.entity.name);
    let object = preprocess_caption(&cf.fact.object_label);
    contains_subsequence(caption_tokens, &name) && contains_subsequence(caption_tokens, &object)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            l2: 1e-4,
            tolerance: 1e-6,
            max_epochs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRanker {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Epochs actually run; informational.
    #[serde(default)]
    pub epochs: usize,
}

impl FactRanker {
    /// Linear score; monotone in the logistic probability.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + dot(&self.weights, x)
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(-z)), stable for large |z|.
fn log_loss_margin(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Full-batch gradient descent on mean log-loss with an L2 penalty.
///
/// Features are standardized internally and the result is folded back into
/// raw-feature weights. The step size is the inverse Lipschitz constant of
/// the gradient, estimated by power iteration, so the loss decreases
/// monotonically. Starting from zero weights makes the fit fully
/// deterministic.
pub fn train_fact_ranker(examples: &[(Vec<f64>, bool)], config: &RankerConfig) -> Result<FactRanker> {
    let pos = examples.iter().filter(|(_, y)| *y).count();
    if pos == 0 || pos == examples.len() {
        return Err(Error::DegenerateLabels);
    }
    let dim = examples[0].0.len();
    if let Some((x, _)) = examples.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::Shape(format!(
            "ranker features of width {} and {dim}",
            x.len()
        )));
    }
    let n = examples.len() as f64;

    let mut mean = vec![0.0; dim];
    for (x, _) in examples {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for (x, _) in examples {
        for j in 0..dim {
            scale[j] += (x[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let rows: Vec<(Vec<f64>, f64)> = examples
        .iter()
        .map(|(x, y)| {
            let z = (0..dim).map(|j| (x[j] - mean[j]) / scale[j]).collect();
            (z, if *y { 1.0 } else { -1.0 })
        })
        .collect();

    // Lipschitz constant of the gradient: 0.25 * lambda_max([X 1]^T [X 1] / n) + l2
    let mut v = vec![1.0; dim + 1];
    let mut lambda = 1.0;
    for _ in 0..100 {
        let mut next = vec![0.0; dim + 1];
        for (x, _) in &rows {
            let xv = dot(x, &v[..dim]) + v[dim];
            for j in 0..dim {
                next[j] += x[j] * xv / n;
            }
            next[dim] += xv / n;
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        v = next.into_iter().map(|a| a / norm).collect();
    }
    let step = 1.0 / (0.25 * lambda * 1.01 + config.l2);

    let objective = |w: &[f64], b: f64| -> f64 {
        let data: f64 = rows
            .iter()
            .map(|(x, s)| log_loss_margin(s * (dot(w, x) + b)))
            .sum::<f64>()
            / n;
        data + 0.5 * config.l2 * dot(w, w)
    };

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut prev = objective(&w, b);
    let mut epochs = 0;
    for _ in 0..config.max_epochs {
        epochs += 1;
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, s) in &rows {
            // d/dz log(1 + exp(-s z)) = -s * sigmoid(-s z)
            let g = -s * sigmoid(-s * (dot(&w, x) + b)) / n;
            for j in 0..dim {
                gw[j] += g * x[j];
            }
            gb += g;
        }
        for j in 0..dim {
            w[j] -= step * (gw[j] + config.l2 * w[j]);
        }
        b -= step * gb;
        let cur = objective(&w, b);
        let rel = (prev - cur).abs() / prev.abs().max(1e-12);
        prev = cur;
        if rel < config.tolerance {
            break;
        }
    }

    let weights: Vec<f64> = (0..dim).map(|j| w[j] / scale[j]).collect();
    let bias = b - (0..dim).map(|j| w[j] * mean[j] / scale[j]).sum::<f64>();
    Ok(FactRanker {
        weights,
        bias,
        epochs,
    })
}

/// Scores candidates, sorts them by descending score (ties by subject,
/// predicate, object) and keeps the top `max_facts`.
pub fn build_knowledge_context(
    candidates: &[ContextFact],
    geo: &GeoContext,
    ranker: &FactRanker,
    predicates: &PredicateVocabulary,
    max_facts: usize,
) -> Result<KnowledgeContext> {
    let mut scored = Vec::with_capacity(candidates.len());
    for cf in candidates {
        let x = featurize_fact(cf, geo, predicates, FeatureMode::Inference)?;
        let mut cf = cf.clone();
        cf.score = ranker.score(&x);
        scored.push(cf);
    }
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.subject_ref.cmp(&b.subject_ref))
            .then_with(|| a.fact.predicate.cmp(&b.fact.predicate))
            .then_with(|| a.fact.object_label.cmp(&b.fact.object_label))
    });
    scored.truncate(max_facts);
    Ok(KnowledgeContext { facts: scored })
}
