//! Acceptance checks, one PASS/FAIL line each. Exits nonzero when any fails.
//!
//! `cargo test -p geoknow-cli --test acceptance -- 5 6` runs a subset.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geoknow_cli::pipeline::{self, Corpus};
use geoknow_core::artifact::ArtifactMeta;
use geoknow_core::corpus::{load_dataset, synthetic_features, FeatureSource, Split, TokenKind, TokenizedCaption};
use geoknow_core::eval::metrics::{bleu_all, cider_scores, rouge_l, Sentence};
use geoknow_core::eval::{fact_accuracy, random_fact_baseline, CaptionRecord, CaptionsFile, FactCheckInput, KeyPhraseLexicon};
use geoknow_core::geo::{load_entities, normalize_azimuth, ContextEntity, EntityStore, GeoContext, GeoEntity, GeoPoint};
use geoknow_core::knowledge::{load_facts, ContextFact, Fact, SynonymMap};
use geoknow_core::synth::{SynthConfig, SynthFiles, SynthWorld};
use geoknow_core::Exec;
use geoknow_model::fidelity::{check_identities, model, random_contexts};
use geoknow_model::layers::Graph;
use geoknow_model::{variant_contexts, Captioner, Example, ModelConfig, Variant};

type Outcome = Result<String>;
type Check = (&'static str, fn() -> Outcome);

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let checks: [Check; 9] = [
        ("model identities", identities),
        ("azimuth normalization", azimuth),
        ("radius queries", radius),
        ("gradients", gradients),
        ("overfit", overfit),
        ("ablation ordering", ablation),
        ("random-fact baseline", baseline),
        ("metric fixtures", metrics),
        ("cli determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n} {name} ({detail}; {secs:.1}s)"),
            Err(e) => {
                failed += 1;
                println!("FAIL {n} {name} ({e:#}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(t: Instant, limit: Duration, what: &str) -> Result<()> {
    ensure!(t.elapsed() <= limit, "{what} took {:.1}s, limit {}s", t.elapsed().as_secs_f64(), limit.as_secs());
    Ok(())
}

// 1

fn identities() -> Outcome {
    let t = Instant::now();
    check_identities(1000, 1).map_err(anyhow::Error::msg)?;
    within(t, Duration::from_secs(60), "1000 cases")?;
    Ok("1000 random cases".into())
}

// 2

fn azimuth() -> Outcome {
    let table = [(0.0, (0.0, 0.5)), (90.0, (0.5, 0.0)), (-90.0, (0.5, 1.0)), (180.0, (1.0, 0.5)), (-180.0, (1.0, 0.5))];
    for (a, want) in table {
        let got = normalize_azimuth(a);
        ensure!((got.0 - want.0).abs() < 1e-12 && (got.1 - want.1).abs() < 1e-12, "{a}: {got:?} vs {want:?}");
    }
    let mut prev = normalize_azimuth(-180.0);
    let steps = 360_000;
    for i in 1..=steps {
        let a = -180.0 + 360.0 * i as f64 / steps as f64;
        let cur = normalize_azimuth(a);
        ensure!((0.0..=1.0).contains(&cur.0) && (0.0..=1.0).contains(&cur.1), "{a}: {cur:?} outside [0, 1]");
        ensure!((cur.0 - prev.0).abs() < 1e-4 && (cur.1 - prev.1).abs() < 1e-4, "jump at {a}: {prev:?} -> {cur:?}");
        prev = cur;
    }
    Ok("table exact, continuous over [-180, 180]".into())
}

// 3

fn oracle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, l1) = (a.0.to_radians(), a.1.to_radians());
    let (p2, l2) = (b.0.to_radians(), b.1.to_radians());
    let dl = l2 - l1;
    let y = ((p2.cos() * dl.sin()).powi(2) + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2)).sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0 * y.atan2(x)
}

fn radius() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut compared = 0usize;
    for store_no in 0..100 {
        let center = match store_no % 10 {
            0 => (89.7, rng.gen_range(-180.0..180.0)),
            1 => (-89.6, rng.gen_range(-180.0..180.0)),
            2 => (rng.gen_range(-60.0..60.0), 179.95),
            _ => (rng.gen_range(-80.0..80.0), rng.gen_range(-180.0..180.0)),
        };
        let n = rng.gen_range(1..=10_000);
        let spread: f64 = rng.gen_range(0.01..0.8);
        let mut raw = Vec::with_capacity(n);
        let mut entities = Vec::with_capacity(n);
        for i in 0..n {
            let lat = (center.0 + rng.gen_range(-spread..spread)).clamp(-90.0, 90.0);
            let mut lon = center.1 + rng.gen_range(-spread..spread) * 2.0;
            if lon > 180.0 {
                lon -= 360.0;
            } else if lon <= -180.0 {
                lon += 360.0;
            }
            let p = GeoPoint::new(lat, lon)?;
            raw.push((format!("e{i}"), p.lat(), p.lon()));
            entities.push(GeoEntity { id: format!("e{i}"), name: format!("entity {i}"), location: p, size: 0.0, type_tag: "thing".into() });
        }
        let store = EntityStore::new(entities)?;
        for _ in 0..10 {
            let q = GeoPoint::new((center.0 + rng.gen_range(-spread..spread)).clamp(-90.0, 90.0), center.1 + rng.gen_range(-spread..spread))?;
            let r = rng.gen_range(0.05..40.0);
            let got: BTreeSet<String> = store.within_radius(q, r).into_iter().map(|(e, _)| e.id.clone()).collect();
            let (mut expected, mut ambiguous) = (BTreeSet::new(), BTreeSet::new());
            for (id, lat, lon) in &raw {
                let d = oracle_km((q.lat(), q.lon()), (*lat, *lon));
                if (d - r).abs() < 1e-9 {
                    ambiguous.insert(id.clone());
                } else if d <= r {
                    expected.insert(id.clone());
                }
            }
            let clear: BTreeSet<String> = got.difference(&ambiguous).cloned().collect();
            ensure!(clear == expected, "store {store_no}: {} found, {} expected within {r} km of {q:?}", clear.len(), expected.len());
            compared += expected.len();
        }
    }
    within(t, Duration::from_secs(120), "100 stores")?;
    Ok(format!("100 stores, 1000 queries, {compared} hits"))
}

// 4

fn grad_fixture(m: &Captioner<f64>, seed: u64) -> Result<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (geo, mut k) = random_contexts(&mut rng, 3, 4);
    k.facts[0].fact.predicate = "built".into();
    k.facts[1].fact.predicate = "owner".into();
    let mut cap = TokenizedCaption::default();
    cap.push("the", TokenKind::Vocab, 0);
    for j in [0, 1] {
        let s = k.facts[j].subject_ref;
        cap.push(geo.entities[s].entity.name.clone(), TokenKind::Entity, s);
        cap.push("built", TokenKind::Vocab, 0);
        cap.push(k.facts[j].fact.object_label.clone(), TokenKind::Fact, j);
    }
    cap.push(k.facts[2].fact.object_label.clone(), TokenKind::Fact, 2);
    cap.push(".", TokenKind::Vocab, 0);
    let (geo, k) = variant_contexts(m.variant(), &geo, &k);
    for i in 0..cap.len() {
        let missing = match cap.kinds[i] {
            TokenKind::Entity => geo.is_empty(),
            TokenKind::Fact => k.is_empty(),
            TokenKind::Vocab => false,
        };
        if missing {
            cap.tokens[i] = "old".into();
            cap.kinds[i] = TokenKind::Vocab;
        }
    }
    Ok(Example::new("grad", &synthetic_features("grad", (2, 3)), &geo, &k, &m.vocab, Some(cap))?)
}

fn fd_loss(m: &Captioner<f64>, ex: &Example) -> Result<f64> {
    let mut g = Graph::new(&m.params);
    let (l, _) = m.loss(&mut g, ex)?;
    Ok(g.tape.value(l)[[0, 0]])
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for variant in Variant::ALL {
        let m: Captioner<f64> = model(8, variant, 11);
        let ex = grad_fixture(&m, 5)?;
        let mut g = Graph::new(&m.params);
        let (l, _) = m.loss(&mut g, &ex)?;
        let grads = g.tape.backward(l, m.params.len());
        for (name, id) in m.head_params() {
            let analytic = grads[id].clone().unwrap_or_else(|| ndarray::Array2::zeros(m.params.get(id).raw_dim()));
            for ((r, c), &a) in analytic.indexed_iter() {
                let mut plus = m.clone();
                plus.params.get_mut(id)[[r, c]] += eps;
                let mut minus = m.clone();
                minus.params.get_mut(id)[[r, c]] -= eps;
                let numeric = (fd_loss(&plus, &ex)? - fd_loss(&minus, &ex)?) / (2.0 * eps);
                let scale = a.abs().max(numeric.abs());
                let rel = if scale < 1e-7 { 0.0 } else { (a - numeric).abs() / scale };
                ensure!(rel < 1e-4, "{variant} {name}[{r},{c}]: analytic {a:e}, numeric {numeric:e}");
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    within(t, Duration::from_secs(300), "gradient check")?;
    Ok(format!("{checked} entries over 5 variants, worst relative error {worst:.1e}"))
}

// shared pipeline for 5 and 6

struct Run {
    final_loss: f64,
    epochs: usize,
    captions: CaptionsFile,
    bleu4: f64,
    fact_accuracy: Option<f64>,
    facts: usize,
}

fn load_corpus(files: &SynthFiles, config: &ModelConfig) -> Result<Corpus> {
    let store = load_entities(&files.entities)?;
    let facts = load_facts(&files.triples, &SynonymMap::load(&files.synonyms)?)?;
    let data = load_dataset(&files.dataset)?;
    Ok(Corpus::build(&data, &store, &facts, config.r_km, config.n, Exec::Parallel, ArtifactMeta::new("contexts", "acceptance".to_owned(), config.seed)))
}

fn run(corpus: &Corpus, lexicon: &KeyPhraseLexicon, config: &ModelConfig, split: Option<Split>) -> Result<Run> {
    let ranker = pipeline::fit_ranker(corpus)?;
    let features = FeatureSource::Synthetic(None);
    let (model, log) = pipeline::train_model(corpus, &ranker, config, &features, None, Exec::Parallel, |_| {})?;
    let meta = ArtifactMeta::new("captions", "acceptance".to_owned(), config.seed);
    let captions = pipeline::generate_captions(&model, corpus, &ranker, split, &features, Exec::Parallel, meta.clone())?;
    let report = pipeline::evaluate(&captions, corpus, lexicon, split, meta)?;
    Ok(Run {
        final_loss: log.final_train_loss().unwrap_or(f64::NAN),
        epochs: log.epochs.len(),
        captions,
        bleu4: report.bleu4,
        fact_accuracy: report.fact_accuracy,
        facts: report.facts_generated,
    })
}

fn bundle_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synth-100")
}

// 5

fn overfit() -> Outcome {
    let files = SynthFiles::in_dir(&bundle_dir());
    let tmp = tempfile::tempdir()?;
    let fresh = SynthWorld::generate(&SynthConfig::training_only(100, 100))?.write(tmp.path())?;
    for (a, b) in [(&fresh.dataset, &files.dataset), (&fresh.entities, &files.entities), (&fresh.triples, &files.triples)] {
        ensure!(std::fs::read(a)? == std::fs::read(b).with_context(|| b.display().to_string())?, "{} is not reproducible", b.display());
    }
    let mut config = ModelConfig::tiny();
    config.seed = 100;
    config.stop_below_loss = Some(0.1);
    let corpus = load_corpus(&files, &config)?;
    let lexicon = KeyPhraseLexicon::load(&files.lexicon)?;
    let r = run(&corpus, &lexicon, &config, None)?;
    let acc = r.fact_accuracy.unwrap_or(0.0);
    // the trained captions under the random-fact baseline, for reference
    let (records, _) = random_fact_baseline(&r.captions.records, 1);
    let perturbed = CaptionsFile { records, ..r.captions.clone() };
    let meta = ArtifactMeta::new("report", "acceptance".to_owned(), config.seed);
    let random = pipeline::evaluate(&perturbed, &corpus, &lexicon, None, meta)?.fact_accuracy.unwrap_or(0.0);
    let detail = format!(
        "loss {:.4} after {} epochs, BLEU-4 {:.1}, fact accuracy {acc:.1}% over {} facts, {random:.1}% with random facts",
        r.final_loss, r.epochs, r.bleu4, r.facts
    );
    ensure!(r.final_loss < 0.1 && r.epochs <= 500, "{detail}: loss not below 0.1");
    ensure!(acc >= 90.0 && r.bleu4 >= 60.0, "{detail}: below 90% / 60");
    Ok(detail)
}

// 6

fn ablation() -> Outcome {
    let mut sums = [0.0f64; 5];
    let seeds = [1u64, 2, 3];
    for seed in seeds {
        let tmp = tempfile::tempdir()?;
        let files = SynthWorld::generate(&SynthConfig::new(300, seed))?.write(tmp.path())?;
        let lexicon = KeyPhraseLexicon::load(&files.lexicon)?;
        let mut config = ModelConfig::tiny();
        config.seed = seed;
        config.max_epochs = 40;
        config.early_stop_patience = 10;
        let corpus = load_corpus(&files, &config)?;
        for (i, variant) in Variant::ALL.into_iter().enumerate() {
            config.variant = variant;
            let r = run(&corpus, &lexicon, &config, Some(Split::Test))?;
            sums[i] += r.fact_accuracy.unwrap_or(0.0);
        }
    }
    let mean: Vec<f64> = sums.iter().map(|s| s / seeds.len() as f64).collect();
    let by = |v: Variant| mean[Variant::ALL.iter().position(|&x| x == v).unwrap()];
    let (full, no_p, no_g, geo, none) =
        (by(Variant::Full), by(Variant::NoPInd), by(Variant::NoGInd), by(Variant::GeoOnly), by(Variant::NoKnowledge));
    let detail = format!("full {full:.1}, no_p_ind {no_p:.1}, no_g_ind {no_g:.1}, geo_only {geo:.1}, no_knowledge {none:.1}");
    ensure!(full >= no_p && full >= no_g, "{detail}: full below an indicator ablation");
    ensure!(no_p > geo && no_g > geo && full > geo, "{detail}: geo_only not below the knowledge variants");
    ensure!(geo > none && none == 0.0, "{detail}: geo_only must beat no_knowledge, which must be 0");
    Ok(detail)
}

// 7

fn entity(id: &str, name: &str, rank: usize) -> Result<ContextEntity> {
    Ok(ContextEntity {
        entity: GeoEntity {
            id: id.into(),
            name: name.into(),
            location: GeoPoint::new(55.6 + rank as f64 * 1e-3, -2.43)?,
            size: 1.0,
            type_tag: "bridge".into(),
        },
        distance_km: 0.1 * (rank + 1) as f64,
        azimuth_deg: 30.0,
        has_facts: true,
        fact_count: 1,
        rank,
    })
}

fn fact(subject: &str, year: u32, subject_ref: usize) -> ContextFact {
    ContextFact {
        fact: Fact { subject_id: subject.into(), predicate: "built".into(), object_label: year.to_string() },
        subject_ref,
        score: 0.0,
    }
}

fn accuracy(records: &[CaptionRecord], geo: &[GeoContext], lexicon: &KeyPhraseLexicon) -> f64 {
    let inputs: Vec<FactCheckInput<'_>> = records
        .iter()
        .zip(geo)
        .map(|(r, g)| FactCheckInput { image_id: &r.image_id, caption: &r.caption, geo: g, knowledge: &r.knowledge, image_facts: &r.knowledge })
        .collect();
    fact_accuracy(&inputs, lexicon, &BTreeSet::new()).percentage.unwrap_or(0.0)
}

fn baseline() -> Outcome {
    // every image names one landmark and states its year; the context
    // holds four year facts about four different entities
    let lexicon = KeyPhraseLexicon::new([("built", vec!["built in"])])?;
    let (mut records, mut geos) = (Vec::new(), Vec::new());
    for i in 0..40 {
        let geo = GeoContext {
            image_location: GeoPoint::new(55.6, -2.43)?,
            entities: (0..4).map(|j| entity(&format!("e{i}-{j}"), &format!("bridge {j}"), j)).collect::<Result<_>>()?,
        };
        let knowledge: Vec<ContextFact> = (0..4).map(|j| fact(&format!("e{i}-{j}"), 1800 + 25 * j as u32, j)).collect();
        let mut caption = TokenizedCaption::default();
        caption.push("bridge 0", TokenKind::Entity, 0);
        caption.push(",", TokenKind::Vocab, 0);
        caption.push("built", TokenKind::Vocab, 0);
        caption.push("in", TokenKind::Vocab, 0);
        caption.push("1800", TokenKind::Fact, 0);
        caption.push(".", TokenKind::Vocab, 0);
        records.push(CaptionRecord { image_id: format!("img{i}"), caption, knowledge });
        geos.push(geo);
    }
    let original = accuracy(&records, &geos, &lexicon);
    let perturbed: Vec<f64> = (0..30)
        .map(|seed| {
            let (out, unchanged) = random_fact_baseline(&records, seed);
            assert!(unchanged.is_empty());
            accuracy(&out, &geos, &lexicon)
        })
        .collect();
    let mean = perturbed.iter().sum::<f64>() / perturbed.len() as f64;
    let detail = format!("original {original:.1}%, perturbed mean {mean:.2}% over 30 seeds");
    ensure!((mean - 25.0).abs() <= 5.0, "{detail}: not within 5 points of 25%");
    ensure!(mean < original, "{detail}: perturbation did not lower accuracy");
    Ok(detail)
}

// 8

fn s(x: &str) -> Sentence {
    x.split_whitespace().map(str::to_owned).collect()
}

fn metrics() -> Outcome {
    let cands: Vec<Sentence> = [
        "the kelso bridge over the river tweed built in 1800",
        "a church in the village with a tall spire",
        "view of the old railway station opened in 1847",
        "the castle ruins on the hill",
    ]
    .iter()
    .map(|c| s(c))
    .collect();
    let refs: Vec<Vec<Sentence>> = [
        ["kelso bridge spans the river tweed , built in 1800 by john rennie", "the bridge at kelso over the tweed"],
        ["the parish church with its spire", "a village church dating from 1812"],
        ["the old station , opened in 1847", "railway station building"],
        ["ruins of the castle above the town", "castle on a hill"],
    ]
    .iter()
    .map(|r| r.iter().map(|x| s(x)).collect())
    .collect();
    let tol = 1e-4;
    let bleu = bleu_all(&cands, &refs, 4)?;
    for (got, want) in bleu.iter().zip([85.29411764455018, 55.9236173740212, 33.045536415566204, 0.0035787300028039923]) {
        ensure!((got - want).abs() < tol, "BLEU {got} vs {want}");
    }
    let rouge = rouge_l(&cands, &refs)?;
    ensure!((rouge - 63.795045164537754).abs() < tol, "ROUGE-L {rouge}");

    // a token found in one image's references outweighs one found in all
    let refs3: Vec<Vec<Sentence>> = vec![
        vec![s("the kelso bridge at dusk"), s("kelso bridge and river")],
        vec![s("the bridge in the town"), s("a stone bridge")],
        vec![s("an old bridge"), s("the bridge and the mill")],
    ];
    let rest = [s("the bridge in the town"), s("an old bridge")];
    let with = |first: &str| -> Result<f64> {
        let c: Vec<Sentence> = std::iter::once(s(first)).chain(rest.iter().cloned()).collect();
        Ok(cider_scores(&c, &refs3)?[0])
    };
    let (rare, common) = (with("the kelso river")?, with("the bridge river")?);
    ensure!(rare > common, "CIDEr rare {rare} not above common {common}");

    let ident = bleu_all(&cands, &cands.iter().map(|c| vec![c.clone()]).collect::<Vec<_>>(), 4)?;
    let ident_rouge = rouge_l(&cands, &cands.iter().map(|c| vec![c.clone()]).collect::<Vec<_>>())?;
    ensure!(ident.iter().all(|b| (b - 100.0).abs() < tol) && (ident_rouge - 100.0).abs() < tol, "identity scores {ident:?} {ident_rouge}");
    Ok(format!("BLEU-1..4, ROUGE-L within {tol:e}; CIDEr rare {rare:.1} > common {common:.1}; identity = 100"))
}

// 9

fn geoknow(dir: &Path, jobs: Option<usize>, args: &[&str]) -> Result<()> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geoknow"));
    cmd.current_dir(dir).env("RUST_LOG", "warn").arg("--out-dir").arg(dir.join("out"));
    if let Some(j) = jobs {
        cmd.arg("--jobs").arg(j.to_string());
    }
    let out = cmd.args(args).output()?;
    ensure!(out.status.success(), "geoknow {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn pipeline_outputs(root: &Path, jobs: Option<usize>) -> Result<Vec<(String, Vec<u8>)>> {
    let data = SynthWorld::generate(&SynthConfig::new(40, 5))?.write(root.join("data"))?;
    std::fs::write(root.join("run.toml"), "seed = 5\npreset = \"tiny\"\n[model]\nmax_epochs = 3\nd = 16\nff_dim = 32\n")?;
    let p = |f: &Path| f.strip_prefix(root).unwrap().to_str().unwrap().to_owned();
    let (ds, en, tr, sy, lx) = (p(&data.dataset), p(&data.entities), p(&data.triples), p(&data.synonyms), p(&data.lexicon));
    let cfg = ["--config", "run.toml"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest-geo", "--entities", &en, "--out", "geo.jsonl"],
        vec!["ingest-facts", "--triples", &tr, "--synonyms", &sy, "--out", "facts.jsonl"],
        vec!["build-contexts", "--dataset", &ds, "--entities", &en, "--triples", &tr, "--synonyms", &sy, "--out", "corpus"],
        vec!["train-ranker", "--corpus", "corpus", "--out", "ranker.jsonl"],
        vec!["train", "--corpus", "corpus", "--ranker", "ranker.jsonl", "--out", "model.json"],
        vec!["generate", "--ckpt", "model.json", "--dataset", "corpus", "--out", "captions.jsonl"],
        vec!["perturb", "--captions", "captions.jsonl", "--seed", "3", "--out", "perturbed.jsonl"],
        vec!["evaluate", "--captions", "captions.jsonl", "--corpus", "corpus", "--lexicon", &lx, "--report", "report.json"],
        vec!["demo", "--seed", "2", "--samples", "20"],
    ];
    for step in &steps {
        let mut args: Vec<&str> = cfg.to_vec();
        args.extend(step);
        geoknow(root, jobs, &args)?;
    }
    let mut files = Vec::new();
    collect(root, root, &mut files)?;
    files.sort();
    Ok(files)
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            out.push((path.strip_prefix(root)?.display().to_string(), std::fs::read(&path)?));
        }
    }
    Ok(())
}

fn cli_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let first = pipeline_outputs(a.path(), None)?;
    let second = pipeline_outputs(b.path(), Some(1))?;
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    ensure!(names(&first) == names(&second), "file sets differ: {:?} vs {:?}", names(&first), names(&second));
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure!(x == y, "{name} differs between runs");
    }
    Ok(format!("{} files identical across default and --jobs 1", first.len()))
}
