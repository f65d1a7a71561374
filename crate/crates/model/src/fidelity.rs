//! Randomized self-checks of the model's defining identities: embedding
//! layout, fact-embedding additivity, position additivity, token routing,
//! indicator masking and normalization. Also provides the small random
//! fixtures used by the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geoknow_core::corpus::{build_vocabulary, synthetic_features, TokenKind, TokenizedCaption};
use geoknow_core::geo::{ContextEntity, GeoContext, GeoEntity, GeoPoint, TypeVocabulary};
use geoknow_core::knowledge::{ContextFact, Fact, KnowledgeContext, PredicateVocabulary};
use crate::layers::{positional_encoding, Graph};
use crate::{hybrid_distribution, variant_contexts, Captioner, Example, ModelConfig, ModelVocab, Variant};

pub const WORDS: [&str; 8] = ["the", "a", "built", "in", "by", ".", ",", "old"];
pub const TYPES: [&str; 3] = ["bridge", "church", "station"];
pub const PREDICATES: [&str; 3] = ["built", "architect", "opened"];

pub fn small_config(d: usize, variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        d,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        ff_dim: 2 * d,
        dropout: 0.0,
        max_caption_len: 24,
        image_positions: 2,
        image_channels: 3,
        variant,
        seed,
        ..ModelConfig::tiny()
    }
}

pub fn vocab(d: usize) -> ModelVocab {
    let mut cap = TokenizedCaption::default();
    for w in WORDS {
        cap.push(w, TokenKind::Vocab, 0);
    }
    ModelVocab {
        words: build_vocabulary(&[cap], 1, d, None, 7).unwrap(),
        predicates: PredicateVocabulary::new(PREDICATES.iter().map(|s| s.to_string())),
        types: TypeVocabulary::new(TYPES.iter().map(|s| s.to_string())),
    }
}

/// Random contexts with `n_geo` entities and `n_facts` facts (some with a
/// predicate outside the vocabulary), plus a random caption over them.
pub fn random_contexts(rng: &mut ChaCha8Rng, n_geo: usize, n_facts: usize) -> (GeoContext, KnowledgeContext) {
    let here = GeoPoint::new(50.0, -3.0).unwrap();
    let entities = (0..n_geo)
        .map(|i| ContextEntity {
            entity: GeoEntity {
                id: format!("e{i}"),
                name: format!("place{i} hall"),
                location: GeoPoint::new(50.0 + rng.gen_range(-0.005..0.005), -3.0 + rng.gen_range(-0.005..0.005)).unwrap(),
                size: rng.gen_range(0.0..2.0),
                type_tag: ["bridge", "church", "station", "mystery"][rng.gen_range(0..4)].into(),
            },
            distance_km: rng.gen_range(0.01..1.0),
            azimuth_deg: rng.gen_range(-180.0..180.0),
            has_facts: rng.gen_bool(0.5),
            fact_count: rng.gen_range(0..5),
            rank: i,
        })
        .collect();
    let geo = GeoContext { image_location: here, entities };
    let facts = if n_geo == 0 {
        Vec::new()
    } else {
        (0..n_facts)
            .map(|j| ContextFact {
                fact: Fact {
                    subject_id: format!("e{}", j % n_geo),
                    predicate: ["built", "architect", "opened", "owner"][rng.gen_range(0..4)].into(),
                    object_label: format!("label{j}"),
                },
                subject_ref: rng.gen_range(0..n_geo),
                score: 0.0,
            })
            .collect()
    };
    (geo, KnowledgeContext { facts })
}

pub fn random_caption(rng: &mut ChaCha8Rng, geo: &GeoContext, k: &KnowledgeContext, len: usize) -> TokenizedCaption {
    let mut c = TokenizedCaption::default();
    for _ in 0..len {
        match rng.gen_range(0..3) {
            1 if !geo.is_empty() => {
                let r = rng.gen_range(0..geo.len());
                c.push(geo.entities[r].entity.name.clone(), TokenKind::Entity, r);
            }
            2 if !k.is_empty() => {
                let r = rng.gen_range(0..k.len());
                c.push(k.facts[r].fact.object_label.clone(), TokenKind::Fact, r);
            }
            _ => c.push(WORDS[rng.gen_range(0..WORDS.len())], TokenKind::Vocab, 0),
        }
    }
    c
}

pub fn example(
    rng: &mut ChaCha8Rng,
    vocab: &ModelVocab,
    variant: Variant,
    n_geo: usize,
    n_facts: usize,
    len: usize,
) -> Example {
    let (geo, k) = random_contexts(rng, n_geo, n_facts);
    let (geo, k) = variant_contexts(variant, &geo, &k);
    let cap = random_caption(rng, &geo, &k, len);
    let img = synthetic_features(&format!("img{}", rng.gen::<u32>()), (2, 3));
    Example::new("x", &img, &geo, &k, vocab, Some(cap)).unwrap()
}

pub fn model<T: crate::tape::Scalar>(d: usize, variant: Variant, seed: u64) -> Captioner<T> {
    Captioner::new(small_config(d, variant, seed), vocab(d)).unwrap()
}

/// Runs `cases` randomized checks; returns the first violated identity.
pub fn check_identities(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let d = [8, 12, 16][rng.gen_range(0..3)];
        let variant = Variant::ALL[rng.gen_range(0..Variant::ALL.len())];
        let m: Captioner<f64> = model(d, variant, rng.gen());
        let (n_geo, n_facts, len) = (rng.gen_range(0..6), rng.gen_range(0..8), rng.gen_range(0..10));
        let ex = example(&mut rng, &m.vocab, variant, n_geo, n_facts, len);
        check_case(&m, &ex, &mut rng).map_err(|e| format!("case {case} ({variant}, d = {d}): {e}"))?;
    }
    Ok(())
}

fn check_case(m: &Captioner<f64>, ex: &Example, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let err = |e: crate::ModelError| e.to_string();
    let p = |name: &str| m.params.get(m.params.id(name).expect("parameter exists"));
    let mut g = Graph::new(&m.params);
    let enc = m.encode(&mut g, ex).map_err(err)?;
    let emb_g = g.tape.value(enc.emb_g).clone();
    let emb_k = g.tape.value(enc.emb_k).clone();

    // geographic embedding = [scalars | type embedding]
    let types = p("type_emb");
    for (i, row) in emb_g.rows().into_iter().enumerate() {
        let (sc, ty) = (ex.geo_scalars.row(i), types.row(ex.geo_types[i]));
        if !row.iter().eq(sc.iter().chain(ty.iter())) {
            return Err(format!("geo embedding {i} is not [scalars | type]"));
        }
    }
    // fact embedding = subject embedding + predicate embedding
    let preds = p("pred_emb");
    for (j, row) in emb_k.rows().into_iter().enumerate() {
        let pi = ex.fact_predicates[j].unwrap_or(m.n_predicates());
        let want = &emb_g.row(ex.fact_subjects[j]) + &preds.row(pi);
        if row != want {
            return Err(format!("fact embedding {j} is not subject + predicate"));
        }
    }

    let (inputs, _, ind) = m.teacher_forcing(ex).map_err(err)?;
    let sec = m.sections(ex);
    // routing of hybrid indices to embedding tables
    let x = m.token_embeddings(&mut g, &enc, &inputs);
    let xv = g.tape.value(x).clone();
    let words = p("word_emb");
    for (t, &idx) in inputs.iter().enumerate() {
        let (kind, r) = sec.token(idx);
        let want = match kind {
            TokenKind::Vocab => words.row(r),
            TokenKind::Entity => emb_g.row(r),
            TokenKind::Fact => emb_k.row(r),
        };
        if xv.row(t) != want {
            return Err(format!("input {t} routed to the wrong table"));
        }
    }
    // positions are added, nothing else
    let y = m.pos_embed(&mut g, x).map_err(err)?;
    let pe = positional_encoding::<f64>(inputs.len(), m.config.d);
    if *g.tape.value(y) != &xv + &pe {
        return Err("position encoding is not additive".into());
    }

    // masking and normalization at a random prefix
    let cap = ex.target.as_ref().expect("fixture has a caption");
    let cut = rng.gen_range(0..=cap.len());
    let prefix = TokenizedCaption {
        tokens: cap.tokens[..cut].to_vec(),
        kinds: cap.kinds[..cut].to_vec(),
        refs: cap.refs[..cut].to_vec(),
    };
    let values = m.encode_values(ex).map_err(err)?;
    let scores = m.next_scores(ex, &values, &prefix).map_err(err)?;
    let variant = m.variant();
    let n_k = if variant.uses_knowledge() { sec.facts } else { 0 };
    if scores.len() != sec.vocab + sec.geo + n_k {
        return Err(format!("{} scores for {} + {} + {n_k} slots", scores.len(), sec.vocab, sec.geo));
    }
    let state = &ind[cut];
    if variant.masks_facts() {
        for (j, on) in state.g_ind.iter().enumerate() {
            if !on && scores[sec.vocab + sec.geo + j] != 0.0 {
                return Err(format!("fact {j} of an unmentioned subject scored non-zero"));
            }
        }
    }
    if variant.gates_vocabulary() && !state.p_ind.iter().any(|&b| b) && scores[..sec.vocab].iter().any(|&s| s != 0.0) {
        return Err("vocabulary scored with every predicate indicator off".into());
    }
    let dist = hybrid_distribution(&scores).map_err(err)?;
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-6 || dist.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(format!("distribution sums to {total}"));
    }
    Ok(())
}
