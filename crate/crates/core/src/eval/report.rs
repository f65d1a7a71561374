//! Whole-run evaluation and the report file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactMeta;
use crate::error::{Error, Result};
use crate::geo::GeoContext;
use crate::knowledge::ContextFact;

use super::facts::{fact_accuracy, FactCheckInput, FactVerdict, KeyPhraseLexicon};
use super::metrics::{bleu_all, cider_scores, mean, meteor_simplified, rouge_l_scores, two_sample_t_test, Sentence};
use super::records::CaptionsFile;

pub const METEOR_NOTE: &str = "meteor is a simplified re-implementation (exact + stem unigram \
alignment, fragmentation penalty 0.5*(chunks/matches)^3, Fmean 10PR/(R+9P)); no synonym or \
paraphrase modules, so values are not comparable with the reference METEOR 1.5 tool";

pub const FACT_NOTE: &str = "fact accuracy uses automated rules only: subject in geographic \
context, subject named by an entity token, predicate trigger phrase within 5 tokens before the fact";

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub image_id: String,
    pub references: Vec<Sentence>,
    pub geo: GeoContext,
    /// Every stored fact about the entities of `geo`.
    pub image_facts: Vec<ContextFact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ArtifactMeta,
    pub notes: Vec<String>,
    pub images: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    /// Not applicable (`None`) when no facts were generated.
    pub fact_accuracy: Option<f64>,
    pub facts_generated: usize,
    pub facts_correct: usize,
    /// Facts judged without rule (c) because the lexicon lacks their predicate.
    pub facts_waived: usize,
    pub waived_predicates: Vec<String>,
    /// Per-image scores kept for significance tests between runs.
    pub per_image: BTreeMap<String, ImageScores>,
    pub verdicts: Vec<FactVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub rouge_l: f64,
    pub cider: f64,
}

/// Welch t statistic and two-sided p-value for a metric across two runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub t: f64,
    pub p: f64,
}

/// Scores a captions file against ground truth.
///
/// Captions and items are matched by image id; an id present on one side
/// only is an error.
pub fn evaluate_run(
    captions: &CaptionsFile,
    items: &[EvalItem],
    lexicon: &KeyPhraseLexicon,
    object_labels: &BTreeSet<Vec<String>>,
    meta: ArtifactMeta,
) -> Result<MetricReport> {
    if captions.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let by_id: BTreeMap<&str, &EvalItem> = items.iter().map(|it| (it.image_id.as_str(), it)).collect();
    let rec_ids: BTreeSet<&str> = captions.records.iter().map(|r| r.image_id.as_str()).collect();
    let mut missing: Vec<String> = rec_ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .map(|s| s.to_string())
        .collect();
    missing.extend(by_id.keys().filter(|id| !rec_ids.contains(*id)).map(|s| s.to_string()));
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingIds(missing));
    }

    let candidates: Vec<Sentence> = captions.records.iter().map(|r| r.caption.words()).collect();
    let references: Vec<Vec<Sentence>> = captions
        .records
        .iter()
        .map(|r| by_id[r.image_id.as_str()].references.clone())
        .collect();

    let bleu = bleu_all(&candidates, &references, 4)?;
    let rouge = rouge_l_scores(&candidates, &references)?;
    let cider = cider_scores(&candidates, &references)?;
    let meteor = meteor_simplified(&candidates, &references)?;

    let inputs: Vec<FactCheckInput<'_>> = captions
        .records
        .iter()
        .map(|r| {
            let item = by_id[r.image_id.as_str()];
            FactCheckInput {
                image_id: &r.image_id,
                caption: &r.caption,
                geo: &item.geo,
                knowledge: &r.knowledge,
                image_facts: &item.image_facts,
            }
        })
        .collect();
    let acc = fact_accuracy(&inputs, lexicon, object_labels);
    let waived_predicates: BTreeSet<String> = acc
        .verdicts
        .iter()
        .filter(|v| v.phrase_found.is_none())
        .filter_map(|v| v.predicate.clone())
        .collect();
    if !waived_predicates.is_empty() {
        log::warn!("no trigger phrases for predicates: {waived_predicates:?}");
    }

    let per_image = captions
        .records
        .iter()
        .zip(rouge.iter().zip(&cider))
        .map(|(r, (&rl, &c))| (r.image_id.clone(), ImageScores { rouge_l: rl, cider: c }))
        .collect();

    Ok(MetricReport {
        meta,
        notes: vec![METEOR_NOTE.to_owned(), FACT_NOTE.to_owned()],
        images: captions.records.len(),
        bleu1: bleu[0],
        bleu2: bleu[1],
        bleu3: bleu[2],
        bleu4: bleu[3],
        rouge_l: mean(&rouge),
        meteor,
        cider: mean(&cider),
        fact_accuracy: acc.percentage,
        facts_generated: acc.generated,
        facts_correct: acc.correct,
        facts_waived: acc.waived,
        waived_predicates: waived_predicates.into_iter().collect(),
        per_image,
        verdicts: acc.verdicts,
    })
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Human-readable metric table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let fact = match self.fact_accuracy {
            Some(a) => format!("{a:.2}"),
            None => "n/a".to_owned(),
        };
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
            "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "METEOR", "CIDEr", "Facts %"
        );
        let _ = writeln!(
            out,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>10}",
            self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.rouge_l, self.meteor, self.cider, fact
        );
        let _ = writeln!(
            out,
            "images {}  facts generated {}  correct {}  waived {}",
            self.images, self.facts_generated, self.facts_correct, self.facts_waived
        );
        out
    }

    /// Welch t-tests of per-image ROUGE-L and CIDEr against another run.
    pub fn compare(&self, other: &MetricReport) -> Result<BTreeMap<String, Comparison>> {
        let mut out = BTreeMap::new();
        let pick = |r: &MetricReport, f: fn(&ImageScores) -> f64| -> Vec<f64> { r.per_image.values().map(f).collect() };
        for (name, f) in [("rouge_l", (|s: &ImageScores| s.rouge_l) as fn(&ImageScores) -> f64), ("cider", |s| s.cider)] {
            let (t, p) = two_sample_t_test(&pick(self, f), &pick(other, f))?;
            out.insert(name.to_owned(), Comparison { t, p });
        }
        Ok(out)
    }
}
