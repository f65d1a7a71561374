//! The stages behind the subcommands, usable in-process.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use geoknow_core::artifact::{read_jsonl, write_jsonl, ArtifactMeta};
use geoknow_core::corpus::{
    build_vocabulary, link_caption, load_image_features, preprocess_caption, Dataset, FeatureSource,
    PretrainedVectors, Split, TokenizedCaption,
};
use geoknow_core::eval::{evaluate_run, CaptionRecord, CaptionsFile, EvalItem, KeyPhraseLexicon, MetricReport};
use geoknow_core::geo::{build_geo_context, EntityStore, GeoContext, GeoPoint, TypeVocabulary};
use geoknow_core::knowledge::{
    build_knowledge_context, candidate_facts, featurize_fact, ranker_label, train_fact_ranker, ContextFact,
    FactRanker, FactStore, FeatureMode, KnowledgeContext, PredicateVocabulary, RankerConfig,
};
use geoknow_core::Exec;
use geoknow_model::{
    generate_all, train, variant_contexts, Captioner, EpochLog, Example, ModelConfig, ModelVocab, TrainLog, Variant,
};

pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const CORPUS_FILE: &str = "corpus.json";

/// One image with its geographic context and every candidate fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub image_id: String,
    pub split: Split,
    pub location: GeoPoint,
    pub feature_ref: String,
    /// Preprocessed caption tokens.
    pub caption: Vec<String>,
    pub geo: GeoContext,
    pub candidates: Vec<ContextFact>,
}

/// Corpus-wide vocabularies, stored next to the context records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub meta: ArtifactMeta,
    pub predicates: Vec<String>,
    pub type_tags: Vec<String>,
    /// Preprocessed object labels of every stored fact.
    pub object_labels: Vec<Vec<String>>,
    /// Images dropped for over-long captions.
    pub dropped_long: Vec<String>,
    pub radius_km: f64,
    pub max_entities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub info: CorpusInfo,
    pub records: Vec<ContextRecord>,
}

impl Corpus {
    pub fn build(
        dataset: &Dataset,
        store: &EntityStore,
        facts: &FactStore,
        radius_km: f64,
        max_entities: usize,
        exec: Exec,
        meta: ArtifactMeta,
    ) -> Corpus {
        let records = exec.map(&dataset.samples, |s| {
            let geo = build_geo_context(store, s.location, radius_km, max_entities, facts);
            let candidates = candidate_facts(&geo, facts);
            ContextRecord {
                image_id: s.image_id.clone(),
                split: Split::of(s.location),
                location: s.location,
                feature_ref: s.feature_ref.clone(),
                caption: preprocess_caption(&s.caption_raw),
                geo,
                candidates,
            }
        });
        Corpus {
            info: CorpusInfo {
                meta,
                predicates: facts.predicates().into_iter().collect(),
                type_tags: store.type_tags(),
                object_labels: facts.object_labels().into_iter().collect(),
                dropped_long: dataset.dropped_long.clone(),
                radius_km,
                max_entities,
            },
            records,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_jsonl(dir.join(CONTEXTS_FILE), &self.info.meta, &self.records)?;
        let text = serde_json::to_string_pretty(&self.info)? + "\n";
        fs::write(dir.join(CORPUS_FILE), text).with_context(|| format!("writing {}", dir.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let info_path = dir.join(CORPUS_FILE);
        let text = fs::read_to_string(&info_path).with_context(|| format!("reading {}", info_path.display()))?;
        let info: CorpusInfo = serde_json::from_str(&text).with_context(|| format!("parsing {}", info_path.display()))?;
        let (_, records) = read_jsonl(dir.join(CONTEXTS_FILE))?;
        Ok(Corpus { info, records })
    }

    pub fn split(&self, split: Option<Split>) -> Vec<&ContextRecord> {
        self.records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect()
    }

    pub fn predicates(&self) -> PredicateVocabulary {
        PredicateVocabulary::new(self.info.predicates.iter().cloned())
    }

    pub fn object_labels(&self) -> BTreeSet<Vec<String>> {
        self.info.object_labels.iter().cloned().collect()
    }
}

/// Fits the fact ranker on the training split. A fact is positive when the
/// caption names both its subject and its object.
pub fn fit_ranker(corpus: &Corpus) -> Result<FactRanker> {
    let predicates = corpus.predicates();
    let mut examples = Vec::new();
    for r in corpus.split(Some(Split::Train)) {
        for cf in &r.candidates {
            let x = featurize_fact(cf, &r.geo, &predicates, FeatureMode::Training)?;
            examples.push((x, ranker_label(cf, &r.geo, &r.caption)));
        }
    }
    if examples.is_empty() {
        bail!(geoknow_core::Error::EmptyCorpus);
    }
    let ranker = train_fact_ranker(&examples, &RankerConfig::default())?;
    info!("ranker fitted on {} candidate facts in {} epochs", examples.len(), ranker.epochs);
    Ok(ranker)
}

/// Contexts and linked caption of one record as a variant sees them.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub record: &'a ContextRecord,
    pub geo: GeoContext,
    pub knowledge: KnowledgeContext,
    pub caption: TokenizedCaption,
}

pub fn prepare<'a>(
    records: &[&'a ContextRecord],
    ranker: &FactRanker,
    predicates: &PredicateVocabulary,
    config: &ModelConfig,
) -> Result<Vec<Prepared<'a>>> {
    let mut out = Vec::with_capacity(records.len());
    for &r in records {
        let k = build_knowledge_context(&r.candidates, &r.geo, ranker, predicates, config.m)?;
        let (geo, knowledge) = variant_contexts(config.variant, &r.geo, &k);
        let caption = link_caption(&r.caption, &geo, &knowledge);
        out.push(Prepared { record: r, geo, knowledge, caption });
    }
    Ok(out)
}

pub fn model_vocab(
    corpus: &Corpus,
    training: &[Prepared<'_>],
    config: &ModelConfig,
    pretrained: Option<&PretrainedVectors>,
) -> Result<ModelVocab> {
    let captions: Vec<TokenizedCaption> = training.iter().map(|p| p.caption.clone()).collect();
    Ok(ModelVocab {
        words: build_vocabulary(&captions, config.min_count, config.d, pretrained, config.seed)?,
        predicates: corpus.predicates(),
        types: TypeVocabulary::new(corpus.info.type_tags.iter().cloned()),
    })
}

/// Model inputs; with `targets` the gold captions are attached and captions
/// longer than the model limit are skipped.
pub fn examples(
    prepared: &[Prepared<'_>],
    vocab: &ModelVocab,
    config: &ModelConfig,
    features: &FeatureSource,
    targets: bool,
) -> Result<Vec<Example>> {
    let shape = (config.image_positions, config.image_channels);
    let mut out = Vec::with_capacity(prepared.len());
    for p in prepared {
        if targets && p.caption.len() > config.max_caption_len {
            warn!("skipping {}: caption of {} tokens", p.record.image_id, p.caption.len());
            continue;
        }
        let img = load_image_features(&p.record.feature_ref, &p.record.image_id, features, shape)?;
        let target = targets.then(|| p.caption.clone());
        out.push(Example::new(&p.record.image_id, &img, &p.geo, &p.knowledge, vocab, target)?);
    }
    Ok(out)
}

/// Builds the vocabulary from the training split, then trains with early
/// stopping on the validation split.
pub fn train_model(
    corpus: &Corpus,
    ranker: &FactRanker,
    config: &ModelConfig,
    features: &FeatureSource,
    pretrained: Option<&PretrainedVectors>,
    exec: Exec,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(Captioner<f32>, TrainLog)> {
    let predicates = corpus.predicates();
    let train_prep = prepare(&corpus.split(Some(Split::Train)), ranker, &predicates, config)?;
    let val_prep = prepare(&corpus.split(Some(Split::Validation)), ranker, &predicates, config)?;
    let vocab = model_vocab(corpus, &train_prep, config, pretrained)?;
    let train_ex = examples(&train_prep, &vocab, config, features, true)?;
    let val_ex = examples(&val_prep, &vocab, config, features, true)?;
    info!(
        "training {} on {} examples ({} validation), vocabulary {}",
        config.variant,
        train_ex.len(),
        val_ex.len(),
        vocab.words.len()
    );
    let mut model = Captioner::new(config.clone(), vocab)?;
    let log = train(&mut model, &train_ex, &val_ex, exec, on_epoch)?;
    Ok((model, log))
}

/// Greedy captions for one split, each stored with the knowledge context
/// the model saw.
pub fn generate_captions(
    model: &Captioner<f32>,
    corpus: &Corpus,
    ranker: &FactRanker,
    split: Option<Split>,
    features: &FeatureSource,
    exec: Exec,
    meta: ArtifactMeta,
) -> Result<CaptionsFile> {
    let prepared = prepare(&corpus.split(split), ranker, &model.vocab.predicates, &model.config)?;
    let ex = examples(&prepared, &model.vocab, &model.config, features, false)?;
    let captions = generate_all(model, &ex, exec)?;
    let records = prepared
        .iter()
        .zip(captions)
        .map(|(p, caption)| CaptionRecord {
            image_id: p.record.image_id.clone(),
            caption,
            knowledge: p.knowledge.facts.clone(),
        })
        .collect();
    Ok(CaptionsFile {
        meta,
        variant: Some(model.variant().to_string()),
        records,
    })
}

pub fn eval_items(corpus: &Corpus, split: Option<Split>) -> Vec<EvalItem> {
    corpus
        .split(split)
        .into_iter()
        .map(|r| EvalItem {
            image_id: r.image_id.clone(),
            references: vec![r.caption.clone()],
            geo: r.geo.clone(),
            image_facts: r.candidates.clone(),
        })
        .collect()
}

pub fn evaluate(
    captions: &CaptionsFile,
    corpus: &Corpus,
    lexicon: &KeyPhraseLexicon,
    split: Option<Split>,
    meta: ArtifactMeta,
) -> Result<MetricReport> {
    let items = eval_items(corpus, split);
    Ok(evaluate_run(captions, &items, lexicon, &corpus.object_labels(), meta)?)
}

/// Ranker file: a header line with provenance, then the ranker.
pub fn write_ranker(path: &Path, meta: &ArtifactMeta, ranker: &FactRanker) -> Result<()> {
    Ok(write_jsonl(path, meta, std::slice::from_ref(ranker))?)
}

pub fn read_ranker(path: &Path) -> Result<FactRanker> {
    let (_, mut items) = read_jsonl::<FactRanker>(path)?;
    match items.pop() {
        Some(r) if items.is_empty() => Ok(r),
        _ => bail!(geoknow_core::Error::Invalid(format!("{}: expected exactly one ranker", path.display()))),
    }
}

/// Default ranker location inside a corpus directory.
pub fn ranker_path(corpus_dir: &Path) -> PathBuf {
    corpus_dir.join("ranker.jsonl")
}

/// A split selected on the command line; `None` is every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitArg(pub Option<Split>);

pub fn parse_split(s: &str) -> Result<SplitArg, String> {
    let split = match s {
        "train" => Some(Split::Train),
        "validation" | "val" => Some(Split::Validation),
        "test" => Some(Split::Test),
        "all" => None,
        other => return Err(format!("unknown split `{other}` (train, validation, test, all)")),
    };
    Ok(SplitArg(split))
}

pub fn variant_or(config: &ModelConfig, v: Option<Variant>) -> ModelConfig {
    ModelConfig {
        variant: v.unwrap_or(config.variant),
        ..config.clone()
    }
}
