//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use geoknow_core::artifact::{content_hash, ArtifactMeta};
use geoknow_core::corpus::{load_dataset, FeatureSource, PretrainedVectors};
use geoknow_core::eval::{random_fact_baseline, CaptionsFile, KeyPhraseLexicon, MetricReport};
use geoknow_core::exec::with_jobs;
use geoknow_core::geo::load_entities;
use geoknow_core::knowledge::{load_facts, SynonymMap};
use geoknow_core::synth::{SynthConfig, SynthWorld};
use geoknow_core::{artifact, Exec};
use geoknow_model::{Checkpoint, ModelConfig, Variant};

use crate::config::{Preset, RunConfig};
use crate::pipeline::{self, Corpus};
use crate::{exit_code, UsageError};

pub const OUT_DIR_ENV: &str = "GEOKNOW_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "geoknow", version, about = "Knowledge-aware image captioning pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Default directory for outputs not given explicitly.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "geoknow-out")]
    pub out_dir: PathBuf,
    /// Recompute outputs even when their config hash is unchanged.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an entity snapshot and store it as JSON lines.
    IngestGeo {
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge predicate synonyms in a triple file and store the facts.
    IngestFacts {
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Geographic contexts and candidate facts for every image.
    BuildContexts {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the fact ranker on the training split of a corpus.
    TrainRanker {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a captioner.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ranker file; defaults to the one inside the corpus directory.
        #[arg(long)]
        ranker: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Greedy captions for a split of a corpus.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus directory written by build-contexts.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, default_value = "test", value_parser = pipeline::parse_split)]
        split: pipeline::SplitArg,
    },
    /// Random-fact baseline: replace fact tokens with same-class picks.
    Perturb {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Caption metrics and fact accuracy.
    Evaluate {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = pipeline::parse_split)]
        split: pipeline::SplitArg,
    },
    /// Synthetic corpus end to end with the tiny config.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        samples: usize,
    },
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(Preset::Reference),
    };
    let ctx = Ctx {
        out_dir: config.paths.out.clone().unwrap_or_else(|| cli.global.out_dir.clone()),
        config_path: cli.global.config.clone(),
        force: cli.global.force,
        exec: Exec::from_jobs(cli.global.jobs),
        config,
    };
    with_jobs(cli.global.jobs, || ctx.dispatch(cli.command))
}

struct Ctx {
    out_dir: PathBuf,
    /// Set when a config file was given; checkpoints are checked against it.
    config_path: Option<PathBuf>,
    force: bool,
    exec: Exec,
    config: RunConfig,
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| UsageError(format!("--{name} is required (or set paths.{name} in the config)")).into())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

/// Config hash stamped in an existing artifact, if any.
fn stamped_hash(path: &Path) -> Option<String> {
    if let Some(meta) = artifact::read_meta(path) {
        return Some(meta.config_hash);
    }
    let text = fs::read_to_string(path).ok()?;
    let first = text.lines().next()?;
    let v: serde_json::Value = serde_json::from_str(first).or_else(|_| serde_json::from_str(&text)).ok()?;
    v.get("meta")?.get("config_hash")?.as_str().map(str::to_owned)
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.config.model.seed
    }

    fn features(&self) -> FeatureSource {
        FeatureSource::Synthetic(self.config.paths.features.clone())
    }

    /// True when `path` already holds the output for `hash`.
    fn up_to_date(&self, path: &Path, hash: &str) -> bool {
        let fresh = !self.force && stamped_hash(path).as_deref() == Some(hash);
        if fresh {
            info!("{} is up to date (config hash {}); use --force to rebuild", path.display(), &hash[..12]);
        }
        fresh
    }

    fn out(&self, flag: Option<PathBuf>, default: &str) -> PathBuf {
        flag.unwrap_or_else(|| self.out_dir.join(default))
    }

    fn dispatch(&self, command: Command) -> Result<()> {
        let paths = self.config.paths.clone();
        match command {
            Command::IngestGeo { entities, out } => {
                self.ingest_geo(&required(entities, &paths.entities, "entities")?, &self.out(out, "entities.jsonl"))
            }
            Command::IngestFacts { triples, synonyms, out } => self.ingest_facts(
                &required(triples, &paths.triples, "triples")?,
                synonyms.or(paths.synonyms).as_deref(),
                &self.out(out, "facts.jsonl"),
            ),
            Command::BuildContexts { dataset, entities, triples, synonyms, out } => self.build_contexts(
                &required(dataset, &paths.dataset, "dataset")?,
                &required(entities, &paths.entities, "entities")?,
                &required(triples, &paths.triples, "triples")?,
                synonyms.or(paths.synonyms).as_deref(),
                &self.out(out, "corpus"),
            ),
            Command::TrainRanker { corpus, out } => {
                let out = out.unwrap_or_else(|| pipeline::ranker_path(&corpus));
                self.train_ranker(&corpus, &out)
            }
            Command::Train { corpus, out, ranker, variant } => {
                let config = pipeline::variant_or(&self.config.model, variant);
                let out = self.out(out, &format!("model-{}.json", config.variant));
                let ranker = ranker.unwrap_or_else(|| pipeline::ranker_path(&corpus));
                self.train(&corpus, &ranker, &config, &out)
            }
            Command::Generate { ckpt, dataset, out, variant, split } => {
                let out = self.out(out, "captions.jsonl");
                self.generate(&ckpt, &dataset, variant, split.0, &out)
            }
            Command::Perturb { captions, seed, out } => {
                let out = out.unwrap_or_else(|| {
                    let stem = captions.file_stem().and_then(|s| s.to_str()).unwrap_or("captions");
                    captions.with_file_name(format!("{stem}.random-{seed}.jsonl"))
                });
                self.perturb(&captions, seed, &out)
            }
            Command::Evaluate { captions, corpus, lexicon, report, split } => {
                let lexicon = required(lexicon, &paths.lexicon, "lexicon")?;
                let report = self.out(report, "report.json");
                let r = self.evaluate(&captions, &corpus, &lexicon, split.0, &report)?;
                print!("{}", r.to_table());
                Ok(())
            }
            Command::Demo { seed, samples } => self.demo(seed, samples),
        }
    }

    fn ingest_geo(&self, entities: &Path, out: &Path) -> Result<()> {
        let hash = content_hash([b"ingest-geo".as_slice(), &read_bytes(entities)?]);
        if self.up_to_date(out, &hash) {
            return Ok(());
        }
        let store = load_entities(entities)?;
        let items: Vec<_> = store.iter().cloned().collect();
        ensure_parent(out)?;
        artifact::write_jsonl(out, &ArtifactMeta::new("entities", hash, self.seed()), &items)?;
        info!("{} entities -> {}", items.len(), out.display());
        Ok(())
    }

    fn ingest_facts(&self, triples: &Path, synonyms: Option<&Path>, out: &Path) -> Result<()> {
        let syn_bytes = synonyms.map(read_bytes).transpose()?.unwrap_or_default();
        let hash = content_hash([b"ingest-facts".as_slice(), &read_bytes(triples)?, &syn_bytes]);
        if self.up_to_date(out, &hash) {
            return Ok(());
        }
        let syn = synonyms.map(SynonymMap::load).transpose()?.unwrap_or_default();
        let facts = load_facts(triples, &syn)?;
        let items: Vec<_> = facts.iter().cloned().collect();
        ensure_parent(out)?;
        artifact::write_jsonl(out, &ArtifactMeta::new("facts", hash, self.seed()), &items)?;
        info!("{} facts over {} predicates -> {}", items.len(), facts.predicates().len(), out.display());
        Ok(())
    }

    fn build_contexts(&self, dataset: &Path, entities: &Path, triples: &Path, synonyms: Option<&Path>, out: &Path) -> Result<()> {
        let m = &self.config.model;
        let syn_bytes = synonyms.map(read_bytes).transpose()?.unwrap_or_default();
        let hash = content_hash([
            b"build-contexts".as_slice(),
            &read_bytes(dataset)?,
            &read_bytes(entities)?,
            &read_bytes(triples)?,
            &syn_bytes,
            format!("{} {}", m.n, m.r_km).as_bytes(),
        ]);
        if self.up_to_date(&out.join(pipeline::CONTEXTS_FILE), &hash) {
            return Ok(());
        }
        let store = load_entities(entities)?;
        let syn = synonyms.map(SynonymMap::load).transpose()?.unwrap_or_default();
        let facts = load_facts(triples, &syn)?;
        let data = load_dataset(dataset)?;
        if data.samples.is_empty() {
            return Err(geoknow_core::Error::EmptyCorpus).with_context(|| format!("{}", dataset.display()));
        }
        let meta = ArtifactMeta::new("contexts", hash, self.seed());
        let corpus = Corpus::build(&data, &store, &facts, m.r_km, m.n, self.exec, meta);
        corpus.write(out)?;
        info!("{} images -> {}", corpus.records.len(), out.display());
        Ok(())
    }

    fn train_ranker(&self, corpus_dir: &Path, out: &Path) -> Result<()> {
        let hash = content_hash([b"train-ranker".as_slice(), &read_bytes(&corpus_dir.join(pipeline::CONTEXTS_FILE))?]);
        if self.up_to_date(out, &hash) {
            return Ok(());
        }
        let corpus = Corpus::load(corpus_dir)?;
        let ranker = pipeline::fit_ranker(&corpus)?;
        ensure_parent(out)?;
        pipeline::write_ranker(out, &ArtifactMeta::new("ranker", hash, self.seed()), &ranker)
    }

    fn train(&self, corpus_dir: &Path, ranker_path: &Path, config: &ModelConfig, out: &Path) -> Result<()> {
        let vectors = self.config.paths.vectors.as_deref().map(read_bytes).transpose()?.unwrap_or_default();
        let hash = content_hash([
            b"train".as_slice(),
            serde_json::to_string(config)?.as_bytes(),
            &read_bytes(&corpus_dir.join(pipeline::CONTEXTS_FILE))?,
            &read_bytes(ranker_path).context("run train-ranker first")?,
            &vectors,
        ]);
        if self.up_to_date(out, &hash) {
            return Ok(());
        }
        let corpus = Corpus::load(corpus_dir)?;
        let ranker = pipeline::read_ranker(ranker_path)?;
        let pretrained = self.config.paths.vectors.as_deref().map(PretrainedVectors::load).transpose()?;
        let (model, log) = pipeline::train_model(
            &corpus,
            &ranker,
            config,
            &self.features(),
            pretrained.as_ref(),
            self.exec,
            |e| {
                let level = if e.epoch % 25 == 0 { log::Level::Info } else { log::Level::Debug };
                log::log!(level, "epoch {:>4}  train {:.4}  val {}", e.epoch, e.train_loss, e.val_loss.map_or("-".into(), |v| format!("{v:.4}")));
            },
        )?;
        ensure_parent(out)?;
        Checkpoint::new(&model, ArtifactMeta::new("model", hash, config.seed), Some(ranker), Some(log)).save(out)?;
        info!("checkpoint -> {}", out.display());
        Ok(())
    }

    fn generate(
        &self,
        ckpt_path: &Path,
        corpus_dir: &Path,
        variant: Option<Variant>,
        split: Option<geoknow_core::corpus::Split>,
        out: &Path,
    ) -> Result<()> {
        let hash = content_hash([
            b"generate".as_slice(),
            &read_bytes(ckpt_path)?,
            &read_bytes(&corpus_dir.join(pipeline::CONTEXTS_FILE))?,
            format!("{variant:?} {split:?}").as_bytes(),
        ]);
        if self.up_to_date(out, &hash) {
            return Ok(());
        }
        let ck = Checkpoint::load(ckpt_path)?;
        if let Some(p) = &self.config_path {
            ck.check_config(&self.config.model).with_context(|| format!("{} vs {}", ckpt_path.display(), p.display()))?;
        }
        let mut model = ck.model()?;
        if let Some(v) = variant {
            model.config.variant = v;
        }
        let ranker = ck
            .ranker
            .clone()
            .ok_or_else(|| geoknow_core::Error::Invalid(format!("{}: checkpoint has no ranker", ckpt_path.display())))?;
        let corpus = Corpus::load(corpus_dir)?;
        let meta = ArtifactMeta::new("captions", hash, model.config.seed);
        let captions = pipeline::generate_captions(&model, &corpus, &ranker, split, &self.features(), self.exec, meta)?;
        ensure_parent(out)?;
        captions.write(out)?;
        info!("{} captions -> {}", captions.records.len(), out.display());
        Ok(())
    }

    fn perturb(&self, captions_path: &Path, seed: u64, out: &Path) -> Result<()> {
        let hash = content_hash([b"perturb".as_slice(), &read_bytes(captions_path)?, &seed.to_le_bytes()]);
        if self.up_to_date(out, &hash) {
            return Ok(());
        }
        let captions = CaptionsFile::read(captions_path)?;
        let (records, unchanged) = random_fact_baseline(&captions.records, seed);
        if !unchanged.is_empty() {
            info!("{} fact tokens had no same-class alternative", unchanged.len());
        }
        let file = CaptionsFile {
            meta: ArtifactMeta::new("captions", hash, seed),
            variant: captions.variant.map(|v| format!("{v}+random_fact")),
            records,
        };
        ensure_parent(out)?;
        file.write(out)?;
        info!("perturbed captions -> {}", out.display());
        Ok(())
    }

    fn evaluate(
        &self,
        captions_path: &Path,
        corpus_dir: &Path,
        lexicon: &Path,
        split: Option<geoknow_core::corpus::Split>,
        out: &Path,
    ) -> Result<MetricReport> {
        let hash = content_hash([
            b"evaluate".as_slice(),
            &read_bytes(captions_path)?,
            &read_bytes(&corpus_dir.join(pipeline::CONTEXTS_FILE))?,
            &read_bytes(lexicon)?,
            format!("{split:?}").as_bytes(),
        ]);
        if self.up_to_date(out, &hash) {
            return Ok(MetricReport::read(out)?);
        }
        let captions = CaptionsFile::read(captions_path)?;
        let corpus = Corpus::load(corpus_dir)?;
        let lex = KeyPhraseLexicon::load(lexicon)?;
        let report = pipeline::evaluate(&captions, &corpus, &lex, split, ArtifactMeta::new("report", hash, captions.meta.seed))?;
        ensure_parent(out)?;
        report.write(out)?;
        Ok(report)
    }

    fn demo(&self, seed: u64, samples: usize) -> Result<()> {
        let dir = self.out_dir.join(format!("demo-{seed}"));
        let world = SynthWorld::generate(&SynthConfig::new(samples, seed))?;
        let files = world.write(dir.join("data"))?;
        let corpus = dir.join("corpus");
        let mut config = ModelConfig::tiny();
        config.seed = seed;
        let demo = Ctx {
            out_dir: dir.clone(),
            config_path: None,
            force: self.force,
            exec: self.exec,
            config: RunConfig { paths: self.config.paths.clone(), model: config.clone() },
        };
        demo.build_contexts(&files.dataset, &files.entities, &files.triples, Some(&files.synonyms), &corpus)?;
        let ranker = pipeline::ranker_path(&corpus);
        demo.train_ranker(&corpus, &ranker)?;
        let ckpt = dir.join("model.json");
        demo.train(&corpus, &ranker, &config, &ckpt)?;
        let captions = dir.join("captions.jsonl");
        demo.generate(&ckpt, &corpus, None, Some(geoknow_core::corpus::Split::Test), &captions)?;
        let report = demo.evaluate(&captions, &corpus, &files.lexicon, Some(geoknow_core::corpus::Split::Test), &dir.join("report.json"))?;
        print!("{}", report.to_table());
        Ok(())
    }
}
