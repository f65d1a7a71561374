//! Rule-based fact accuracy and the random-fact baseline.
//!
//! A generated fact is either a `Fact`-kind token or a run of `Vocab`
//! tokens spelling a known fact object (how variants without a knowledge
//! context produce facts). It counts as correct when
//!   (a) the fact's subject is in the image's geographic context,
//!   (b) the subject's name is among the caption's `Entity` tokens, and
//!   (c) a trigger phrase for the fact's predicate appears in the `Vocab`
//!       tokens within [`TRIGGER_WINDOW`] tokens before the fact.
//! Predicates missing from the lexicon skip rule (c) and are flagged.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{preprocess_caption, TokenKind, TokenizedCaption};
use crate::error::{Error, Result};
use crate::geo::GeoContext;
use crate::knowledge::{ContextFact, Fact};

use super::records::CaptionRecord;

/// Tokens before a fact searched for its trigger phrase.
pub const TRIGGER_WINDOW: usize = 5;

/// Canonical predicate to the phrases that announce it in a caption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyPhraseLexicon {
    phrases: BTreeMap<String, Vec<Vec<String>>>,
}

impl KeyPhraseLexicon {
    pub fn new<I, P, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (P, Vec<S>)>,
        P: Into<String>,
        S: AsRef<str>,
    {
        let mut lex = KeyPhraseLexicon::default();
        for (pred, phrases) in entries {
            let pred = pred.into();
            for ph in phrases {
                lex.add(&pred, ph.as_ref())?;
            }
        }
        Ok(lex)
    }

    fn add(&mut self, predicate: &str, phrase: &str) -> Result<()> {
        let tokens = preprocess_caption(phrase);
        if tokens.is_empty() {
            return Err(Error::Invalid(format!("empty trigger phrase for `{predicate}`")));
        }
        let list = self.phrases.entry(predicate.to_lowercase()).or_default();
        if !list.contains(&tokens) {
            list.push(tokens);
        }
        Ok(())
    }

    /// Reads `predicate<TAB>phrase` lines; a predicate may repeat.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lex = KeyPhraseLexicon::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((pred, phrase)) = line.split_once('\t') else {
                return Err(Error::parse(path, i + 1, "expected `predicate<TAB>phrase`"));
            };
            lex.add(pred.trim(), phrase.trim())
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn phrases(&self, predicate: &str) -> Option<&[Vec<String>]> {
        self.phrases.get(predicate).map(Vec::as_slice)
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for (p, list) in &self.phrases {
            for ph in list {
                out.push_str(&format!("{p}\t{}\n", ph.join(" ")));
            }
        }
        out
    }
}

/// Everything needed to judge the facts of one generated caption.
#[derive(Debug, Clone, Copy)]
pub struct FactCheckInput<'a> {
    pub image_id: &'a str,
    pub caption: &'a TokenizedCaption,
    pub geo: &'a GeoContext,
    /// Knowledge context the caption's `Fact` refs point into.
    pub knowledge: &'a [ContextFact],
    /// All stored facts about entities of the image's geographic context.
    pub image_facts: &'a [ContextFact],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactOrigin {
    Token,
    Vocabulary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactVerdict {
    pub image_id: String,
    /// Index of the (first) caption token realizing the fact.
    pub position: usize,
    pub object_label: String,
    pub origin: FactOrigin,
    pub subject_id: Option<String>,
    pub predicate: Option<String>,
    pub subject_in_context: bool,
    pub subject_mentioned: bool,
    /// `None` when the lexicon has no phrases for the predicate.
    pub phrase_found: Option<bool>,
    pub correct: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactAccuracy {
    pub generated: usize,
    pub correct: usize,
    /// `None` when no facts were generated.
    pub percentage: Option<f64>,
    /// Facts whose predicate had no lexicon entry.
    pub waived: usize,
    pub verdicts: Vec<FactVerdict>,
}

/// Whether a `Vocab`-only phrase of the lexicon ends right before `end`
/// within the trigger window.
fn phrase_before(caption: &TokenizedCaption, end: usize, phrases: &[Vec<String>]) -> bool {
    let start = end.saturating_sub(TRIGGER_WINDOW);
    phrases.iter().any(|ph| {
        (start..end).any(|j| {
            j + ph.len() <= end
                && (0..ph.len()).all(|k| {
                    caption.kinds[j + k] == TokenKind::Vocab && caption.tokens[j + k] == ph[k]
                })
        })
    })
}

/// Outcomes of rules (a), (b) and (c); (c) is `None` when waived.
type Rules = (bool, bool, Option<bool>);

fn judge(input: &FactCheckInput<'_>, fact: &Fact, position: usize, lexicon: &KeyPhraseLexicon) -> Rules {
    let subject = input.geo.entities.iter().find(|c| c.entity.id == fact.subject_id);
    let in_context = subject.is_some();
    let mentioned = subject.is_some_and(|s| {
        let name = preprocess_caption(&s.entity.name).join(" ");
        input
            .caption
            .tokens
            .iter()
            .zip(&input.caption.kinds)
            .any(|(t, k)| *k == TokenKind::Entity && *t == name)
    });
    let phrase = lexicon
        .phrases(&fact.predicate)
        .map(|ph| phrase_before(input.caption, position, ph));
    (in_context, mentioned, phrase)
}

/// Runs of `Vocab` tokens equal to a known object label, longest first.
fn vocabulary_facts(
    caption: &TokenizedCaption,
    labels: &BTreeSet<Vec<String>>,
) -> Vec<(usize, Vec<String>)> {
    let max_len = labels.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < caption.len() {
        let mut found = None;
        for len in (1..=max_len.min(caption.len() - i)).rev() {
            if (i..i + len).any(|j| caption.kinds[j] != TokenKind::Vocab) {
                continue;
            }
            let span: Vec<String> = caption.tokens[i..i + len].to_vec();
            if labels.contains(&span) {
                found = Some(span);
                break;
            }
        }
        match found {
            Some(span) => {
                i += span.len();
                out.push((i - span.len(), span));
            }
            None => i += 1,
        }
    }
    out
}

fn check_caption(
    input: &FactCheckInput<'_>,
    lexicon: &KeyPhraseLexicon,
    labels: &BTreeSet<Vec<String>>,
) -> Vec<FactVerdict> {
    let mut verdicts = Vec::new();
    let caption = input.caption;
    for (pos, (kind, r)) in caption.kinds.iter().zip(&caption.refs).enumerate() {
        if *kind != TokenKind::Fact {
            continue;
        }
        let Some(cf) = input.knowledge.get(*r) else {
            verdicts.push(FactVerdict {
                image_id: input.image_id.to_owned(),
                position: pos,
                object_label: caption.tokens[pos].clone(),
                origin: FactOrigin::Token,
                subject_id: None,
                predicate: None,
                subject_in_context: false,
                subject_mentioned: false,
                phrase_found: Some(false),
                correct: false,
            });
            continue;
        };
        let (a, b, c) = judge(input, &cf.fact, pos, lexicon);
        verdicts.push(FactVerdict {
            image_id: input.image_id.to_owned(),
            position: pos,
            object_label: cf.fact.object_label.clone(),
            origin: FactOrigin::Token,
            subject_id: Some(cf.fact.subject_id.clone()),
            predicate: Some(cf.fact.predicate.clone()),
            subject_in_context: a,
            subject_mentioned: b,
            phrase_found: c,
            correct: a && b && c.unwrap_or(true),
        });
    }

    for (pos, span) in vocabulary_facts(caption, labels) {
        let label = span.join(" ");
        let matching: Vec<&ContextFact> = input
            .image_facts
            .iter()
            .filter(|cf| preprocess_caption(&cf.fact.object_label) == span)
            .collect();
        let judged: Vec<(&ContextFact, Rules)> = matching
            .iter()
            .map(|cf| (*cf, judge(input, &cf.fact, pos, lexicon)))
            .collect();
        let best = judged
            .iter()
            .find(|(_, (a, b, c))| *a && *b && c.unwrap_or(true))
            .or_else(|| judged.first());
        let verdict = match best {
            Some((cf, (a, b, c))) => FactVerdict {
                image_id: input.image_id.to_owned(),
                position: pos,
                object_label: label,
                origin: FactOrigin::Vocabulary,
                subject_id: Some(cf.fact.subject_id.clone()),
                predicate: Some(cf.fact.predicate.clone()),
                subject_in_context: *a,
                subject_mentioned: *b,
                phrase_found: *c,
                correct: *a && *b && c.unwrap_or(true),
            },
            None => FactVerdict {
                image_id: input.image_id.to_owned(),
                position: pos,
                object_label: label,
                origin: FactOrigin::Vocabulary,
                subject_id: None,
                predicate: None,
                subject_in_context: false,
                subject_mentioned: false,
                phrase_found: None,
                correct: false,
            },
        };
        verdicts.push(verdict);
    }
    verdicts.sort_by_key(|v| v.position);
    verdicts
}

/// Percentage of generated facts judged correct, with per-fact verdicts.
pub fn fact_accuracy(
    inputs: &[FactCheckInput<'_>],
    lexicon: &KeyPhraseLexicon,
    object_labels: &BTreeSet<Vec<String>>,
) -> FactAccuracy {
    let verdicts: Vec<FactVerdict> = inputs
        .iter()
        .flat_map(|inp| check_caption(inp, lexicon, object_labels))
        .collect();
    let generated = verdicts.len();
    let correct = verdicts.iter().filter(|v| v.correct).count();
    let waived = verdicts
        .iter()
        .filter(|v| v.predicate.is_some() && v.phrase_found.is_none())
        .count();
    FactAccuracy {
        generated,
        correct,
        percentage: (generated > 0).then(|| 100.0 * correct as f64 / generated as f64),
        waived,
        verdicts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Year,
    Name,
}

/// All-digit labels of 3 or 4 characters are years, everything else names.
pub fn object_class(label: &str) -> ObjectClass {
    let len = label.chars().count();
    if (3..=4).contains(&len) && label.chars().all(|c| c.is_ascii_digit()) {
        ObjectClass::Year
    } else {
        ObjectClass::Name
    }
}

/// A `Fact` token the baseline could not replace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnchangedFact {
    pub image_id: String,
    pub position: usize,
}

/// Replaces every `Fact` token with a uniformly drawn fact of the same
/// object class from the same knowledge context (possibly itself).
pub fn random_fact_baseline(records: &[CaptionRecord], seed: u64) -> (Vec<CaptionRecord>, Vec<UnchangedFact>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unchanged = Vec::new();
    let out = records
        .iter()
        .map(|rec| {
            let mut rec = rec.clone();
            for pos in 0..rec.caption.len() {
                if rec.caption.kinds[pos] != TokenKind::Fact {
                    continue;
                }
                let Some(current) = rec.knowledge.get(rec.caption.refs[pos]) else {
                    unchanged.push(UnchangedFact {
                        image_id: rec.image_id.clone(),
                        position: pos,
                    });
                    continue;
                };
                let class = object_class(&current.fact.object_label);
                let pool: Vec<usize> = rec
                    .knowledge
                    .iter()
                    .enumerate()
                    .filter(|(_, cf)| object_class(&cf.fact.object_label) == class)
                    .map(|(i, _)| i)
                    .collect();
                let pick = pool[rng.gen_range(0..pool.len())];
                rec.caption.refs[pos] = pick;
                rec.caption.tokens[pos] = preprocess_caption(&rec.knowledge[pick].fact.object_label).join(" ");
            }
            rec
        })
        .collect();
    (out, unchanged)
}
