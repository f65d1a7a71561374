//! The knowledge-aware captioner: context embeddings and encoders, the
//! token router over `[vocabulary | geo slots | fact slots]`, the decoder,
//! indicator-gated hybrid scores and greedy generation.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use geoknow_core::corpus::{preprocess_caption, ImageFeatures, TokenKind, TokenizedCaption, Vocabulary};
use geoknow_core::geo::{GeoContext, TypeVocabulary, SCALAR_FEATURES};
use geoknow_core::knowledge::{KnowledgeContext, PredicateVocabulary};

use crate::config::{ModelConfig, Variant};
use crate::error::{ModelError, Result};
use crate::layers::{positional_encoding, DecoderLayer, EncoderLayer, Graph, Linear};
use crate::params::{uniform, xavier, ParamSet};
use crate::tape::{cast, Scalar, Var};

/// Everything the model indexes by position: words, predicates, types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVocab {
    pub words: Vocabulary,
    pub predicates: PredicateVocabulary,
    pub types: TypeVocabulary,
}

/// The contexts a variant actually sees.
pub fn variant_contexts(variant: Variant, geo: &GeoContext, knowledge: &KnowledgeContext) -> (GeoContext, KnowledgeContext) {
    let geo = if variant.uses_geo() {
        geo.clone()
    } else {
        GeoContext::empty(geo.image_location)
    };
    let knowledge = if variant.uses_knowledge() {
        knowledge.clone()
    } else {
        KnowledgeContext::default()
    };
    (geo, knowledge)
}

/// Sizes of the three sections of the hybrid index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sections {
    pub vocab: usize,
    pub geo: usize,
    pub facts: usize,
}

impl Sections {
    pub fn total(&self) -> usize {
        self.vocab + self.geo + self.facts
    }

    pub fn index(&self, kind: TokenKind, r: usize) -> usize {
        match kind {
            TokenKind::Vocab => r,
            TokenKind::Entity => self.vocab + r,
            TokenKind::Fact => self.vocab + self.geo + r,
        }
    }

    pub fn token(&self, idx: usize) -> (TokenKind, usize) {
        if idx < self.vocab {
            (TokenKind::Vocab, idx)
        } else if idx < self.vocab + self.geo {
            (TokenKind::Entity, idx - self.vocab)
        } else {
            (TokenKind::Fact, idx - self.vocab - self.geo)
        }
    }
}

/// One image prepared for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image_id: String,
    /// `positions x channels`.
    pub image: Array2<f32>,
    /// `|G| x 6` scalar part of each geographic embedding.
    pub geo_scalars: Array2<f64>,
    pub geo_types: Vec<usize>,
    pub geo_names: Vec<String>,
    pub fact_subjects: Vec<usize>,
    /// `None` for predicates outside the model's predicate vocabulary.
    pub fact_predicates: Vec<Option<usize>>,
    pub fact_labels: Vec<String>,
    /// Gold caption with vocabulary refs resolved.
    pub target: Option<TokenizedCaption>,
}

impl Example {
    /// `geo` and `knowledge` must already be the variant's contexts (see
    /// [`variant_contexts`]) and `caption` linked against them.
    pub fn new(
        image_id: impl Into<String>,
        image: &ImageFeatures,
        geo: &GeoContext,
        knowledge: &KnowledgeContext,
        vocab: &ModelVocab,
        caption: Option<TokenizedCaption>,
    ) -> Result<Self> {
        let image = Array2::from_shape_vec((image.positions, image.channels), image.data.clone())
            .map_err(|e| ModelError::Shape(e.to_string()))?;
        let mut geo_scalars = Array2::zeros((geo.len(), SCALAR_FEATURES));
        for (mut row, ce) in geo_scalars.rows_mut().into_iter().zip(&geo.entities) {
            for (dst, v) in row.iter_mut().zip(ce.scalar_features()) {
                *dst = v;
            }
        }
        for f in &knowledge.facts {
            if f.subject_ref >= geo.len() {
                return Err(ModelError::Shape(format!(
                    "fact subject slot {} outside geographic context of {}",
                    f.subject_ref,
                    geo.len()
                )));
            }
        }
        let target = match caption {
            Some(mut c) => {
                c.resolve_vocab(&vocab.words);
                c.validate(vocab.words.len(), geo.len(), knowledge.len())?;
                Some(c)
            }
            None => None,
        };
        Ok(Example {
            image_id: image_id.into(),
            image,
            geo_scalars,
            geo_types: geo.entities.iter().map(|c| vocab.types.index(&c.entity.type_tag)).collect(),
            geo_names: geo
                .entities
                .iter()
                .map(|c| preprocess_caption(&c.entity.name).join(" "))
                .collect(),
            fact_subjects: knowledge.facts.iter().map(|f| f.subject_ref).collect(),
            fact_predicates: knowledge.facts.iter().map(|f| vocab.predicates.index(&f.fact.predicate)).collect(),
            fact_labels: knowledge
                .facts
                .iter()
                .map(|f| preprocess_caption(&f.fact.object_label).join(" "))
                .collect(),
            target,
        })
    }

    pub fn sections(&self, vocab_len: usize) -> Sections {
        Sections {
            vocab: vocab_len,
            geo: self.geo_types.len(),
            facts: self.fact_subjects.len(),
        }
    }
}

/// Indicator vectors at one decoding step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndicatorState {
    pub p_ind: Vec<bool>,
    pub g_ind: Vec<bool>,
    pub mentioned: BTreeSet<usize>,
}

impl IndicatorState {
    fn from_mentioned(mentioned: BTreeSet<usize>, subjects: &[usize], predicates: &[Option<usize>], n_predicates: usize) -> Self {
        let g_ind: Vec<bool> = subjects.iter().map(|s| mentioned.contains(s)).collect();
        let mut p_ind = vec![false; n_predicates];
        for (on, p) in g_ind.iter().zip(predicates) {
            if let (true, Some(p)) = (on, p) {
                p_ind[*p] = true;
            }
        }
        IndicatorState { p_ind, g_ind, mentioned }
    }
}

/// Indicators after the prefix `(kinds, refs)`: an entity is mentioned once
/// an `Entity` token refers to it.
pub fn compute_indicators(
    kinds: &[TokenKind],
    refs: &[usize],
    fact_subjects: &[usize],
    fact_predicates: &[Option<usize>],
    n_predicates: usize,
) -> IndicatorState {
    let mentioned = kinds
        .iter()
        .zip(refs)
        .filter(|(k, _)| **k == TokenKind::Entity)
        .map(|(_, r)| *r)
        .collect();
    IndicatorState::from_mentioned(mentioned, fact_subjects, fact_predicates, n_predicates)
}

/// Softmax over the concatenated scores.
pub fn hybrid_distribution<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(ModelError::Shape("empty score vector".into()));
    }
    let m = scores.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let e: Vec<T> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z = e.iter().fold(T::zero(), |a, &b| a + b);
    Ok(e.into_iter().map(|v| v / z).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Architecture {
    image_proj: Linear,
    type_emb: usize,
    pred_emb: usize,
    word_emb: usize,
    enc_geo: Vec<EncoderLayer>,
    enc_facts: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    w_vocab: usize,
    w_pred: usize,
    w_geo: usize,
    w_f: usize,
}

/// Encoder-side vars of one example.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub e_context: Var,
    pub emb_g: Var,
    pub emb_k: Var,
    pub sections: (usize, usize, usize),
}

/// Encoder outputs detached from their graph, for step-wise decoding.
#[derive(Debug, Clone)]
pub struct EncodedValues<T> {
    pub e_context: Array2<T>,
    pub emb_g: Array2<T>,
    pub emb_k: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct Captioner<T> {
    pub config: ModelConfig,
    pub vocab: ModelVocab,
    arch: Architecture,
    pub params: ParamSet<T>,
    pos: Array2<T>,
}

impl<T: Scalar> Captioner<T> {
    /// Fresh parameters drawn from `config.seed`. Word embeddings start from
    /// the vocabulary's vectors, which must have width `d`.
    pub fn new(config: ModelConfig, vocab: ModelVocab) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        if vocab.words.dim() != d {
            return Err(ModelError::Config(format!(
                "vocabulary vectors have width {} but d = {d}",
                vocab.words.dim()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let image_proj = Linear::new(&mut ps, "image_proj", config.image_channels, d, true, &mut rng);
        let type_emb = ps.add("type_emb", uniform(&mut rng, vocab.types.rows(), d - SCALAR_FEATURES, 0.1));
        // one extra row for predicates outside the vocabulary
        let pred_emb = ps.add("pred_emb", uniform(&mut rng, vocab.predicates.len() + 1, d, 0.1));
        let words = Array2::from_shape_fn((vocab.words.len(), d), |(i, j)| cast(vocab.words.vectors()[i][j] as f64));
        let word_emb = ps.add("word_emb", words);
        let (h, ff) = (config.heads, config.ff_dim);
        let enc_geo = (0..config.enc_layers)
            .map(|i| EncoderLayer::new(&mut ps, &format!("enc_geo.{i}"), d, h, ff, &mut rng))
            .collect();
        let enc_facts = (0..config.enc_layers)
            .map(|i| EncoderLayer::new(&mut ps, &format!("enc_facts.{i}"), d, h, ff, &mut rng))
            .collect();
        let dec = (0..config.dec_layers)
            .map(|i| DecoderLayer::new(&mut ps, &format!("dec.{i}"), d, h, ff, &mut rng))
            .collect();
        let w_vocab = ps.add("w_vocab", xavier(&mut rng, d, vocab.words.len()));
        // unit-variance rows so that gated and ungated heads start at a
        // similar scale
        let w_pred = ps.add("w_pred", uniform(&mut rng, vocab.predicates.len(), d, 3f64.sqrt()));
        let w_geo = ps.add("w_geo", xavier(&mut rng, 1, d));
        let w_f = ps.add("w_f", xavier(&mut rng, 1, d));
        let pos = positional_encoding(config.max_caption_len + 1, d);
        Ok(Captioner {
            config,
            vocab,
            arch: Architecture {
                image_proj,
                type_emb,
                pred_emb,
                word_emb,
                enc_geo,
                enc_facts,
                dec,
                w_vocab,
                w_pred,
                w_geo,
                w_f,
            },
            params: ps,
            pos,
        })
    }

    /// The same model in another precision.
    pub fn convert<U: Scalar>(&self) -> Captioner<U> {
        Captioner {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            arch: self.arch.clone(),
            params: self.params.convert(),
            pos: positional_encoding(self.config.max_caption_len + 1, self.config.d),
        }
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn n_predicates(&self) -> usize {
        self.vocab.predicates.len()
    }

    pub fn sections(&self, ex: &Example) -> Sections {
        ex.sections(self.vocab.words.len())
    }

    /// Named parameter ids of the output head and the context embedders.
    pub fn head_params(&self) -> Vec<(&'static str, usize)> {
        let a = &self.arch;
        vec![
            ("w_vocab", a.w_vocab),
            ("w_pred", a.w_pred),
            ("w_geo", a.w_geo),
            ("w_f", a.w_f),
            ("pred_emb", a.pred_emb),
            ("type_emb", a.type_emb),
        ]
    }

    /// `Concat[scalars, Emb_t(type)]`, `|G| x d`.
    pub fn geo_embeddings(&self, g: &mut Graph<'_, T>, ex: &Example) -> Var {
        let scalars = g.tape.constant(ex.geo_scalars.mapv(cast));
        let table = g.param(self.arch.type_emb);
        let types = g.tape.gather_rows(table, &ex.geo_types);
        g.tape.concat_cols(&[scalars, types])
    }

    /// `GeoEmb(subject) + Emb_p(predicate)`, `|K| x d`.
    pub fn fact_embeddings(&self, g: &mut Graph<'_, T>, ex: &Example, emb_g: Var) -> Var {
        let subj = g.tape.gather_rows(emb_g, &ex.fact_subjects);
        let unknown = self.n_predicates();
        let idx: Vec<usize> = ex.fact_predicates.iter().map(|p| p.unwrap_or(unknown)).collect();
        let table = g.param(self.arch.pred_emb);
        let pred = g.tape.gather_rows(table, &idx);
        g.tape.add(subj, pred)
    }

    pub fn encode(&self, g: &mut Graph<'_, T>, ex: &Example) -> Result<Encoded> {
        if ex.image.ncols() != self.config.image_channels {
            return Err(ModelError::Shape(format!(
                "image features have {} channels, model expects {}",
                ex.image.ncols(),
                self.config.image_channels
            )));
        }
        let img = g.tape.constant(ex.image.mapv(|x| cast(x as f64)));
        let img = self.arch.image_proj.apply(g, img);
        let emb_g = self.geo_embeddings(g, ex);
        let emb_k = self.fact_embeddings(g, ex, emb_g);
        let mut parts = vec![img];
        let (ng, nk) = (ex.geo_types.len(), ex.fact_subjects.len());
        if ng > 0 {
            let mut x = emb_g;
            for layer in &self.arch.enc_geo {
                x = layer.apply(g, x);
            }
            parts.push(x);
        }
        if nk > 0 {
            let mut x = emb_k;
            for layer in &self.arch.enc_facts {
                x = layer.apply(g, x);
            }
            parts.push(x);
        }
        let e_context = if parts.len() == 1 { parts[0] } else { g.tape.concat_rows(&parts) };
        Ok(Encoded {
            e_context,
            emb_g,
            emb_k,
            sections: (ex.image.nrows(), ng, nk),
        })
    }

    /// Rows of `[word_emb; EmbG; EmbK]` for hybrid indices.
    pub fn token_embeddings(&self, g: &mut Graph<'_, T>, enc: &Encoded, inputs: &[usize]) -> Var {
        let words = g.param(self.arch.word_emb);
        let table = g.tape.concat_rows(&[words, enc.emb_g, enc.emb_k]);
        g.tape.gather_rows(table, inputs)
    }

    /// Adds the fixed position encodings.
    pub fn pos_embed(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (t, _) = g.tape.shape(x);
        if t > self.pos.nrows() {
            return Err(ModelError::Shape(format!(
                "sequence of {t} positions exceeds the limit of {}",
                self.pos.nrows()
            )));
        }
        let pe = g.tape.constant(self.pos.slice(ndarray::s![..t, ..]).to_owned());
        Ok(g.tape.add(x, pe))
    }

    /// Final decoder states for every input position, `T x d`.
    pub fn decode(&self, g: &mut Graph<'_, T>, enc: &Encoded, inputs: &[usize]) -> Result<Var> {
        let x = self.token_embeddings(g, enc, inputs);
        let x = self.pos_embed(g, x)?;
        let mut x = g.dropout(x);
        for layer in &self.arch.dec {
            x = layer.apply(g, x, enc.e_context);
        }
        Ok(x)
    }

    /// `[y_v | y_e | y_f]` for each row of `h`, one indicator state per row.
    pub fn hybrid_scores(&self, g: &mut Graph<'_, T>, h: Var, emb_g: Var, emb_k: Var, ind: &[IndicatorState]) -> Var {
        let variant = self.variant();
        let (t, _) = g.tape.shape(h);
        assert_eq!(t, ind.len(), "one indicator state per position");
        let w_vocab = g.param(self.arch.w_vocab);
        let y_v = if variant.gates_vocabulary() {
            let np = self.n_predicates();
            let p = Array2::from_shape_fn((t, np), |(i, j)| if ind[i].p_ind[j] { T::one() } else { T::zero() });
            let p = g.tape.constant(p);
            let w_pred = g.param(self.arch.w_pred);
            let pw = g.tape.matmul(p, w_pred);
            let gated = g.tape.mul(h, pw);
            g.tape.matmul(gated, w_vocab)
        } else {
            g.tape.matmul(h, w_vocab)
        };
        let mut parts = vec![y_v];
        if g.tape.shape(emb_g).0 > 0 {
            let w = g.param(self.arch.w_geo);
            let hw = g.tape.mul_row(h, w);
            parts.push(g.tape.matmul_nt(hw, emb_g));
        }
        let nk = g.tape.shape(emb_k).0;
        if nk > 0 && variant.uses_knowledge() {
            let w = g.param(self.arch.w_f);
            let hw = g.tape.mul_row(h, w);
            let y_f = g.tape.matmul_nt(hw, emb_k);
            let y_f = if variant.masks_facts() {
                let mask = Array2::from_shape_fn((t, nk), |(i, j)| if ind[i].g_ind[j] { T::one() } else { T::zero() });
                g.tape.mul_const(y_f, mask)
            } else {
                y_f
            };
            parts.push(y_f);
        }
        if parts.len() == 1 {
            parts[0]
        } else {
            g.tape.concat_cols(&parts)
        }
    }

    fn indicators_for(&self, ex: &Example, kinds: &[TokenKind], refs: &[usize]) -> IndicatorState {
        compute_indicators(kinds, refs, &ex.fact_subjects, &ex.fact_predicates, self.n_predicates())
    }

    /// Teacher-forced inputs, targets and per-position indicators.
    pub fn teacher_forcing(&self, ex: &Example) -> Result<(Vec<usize>, Vec<usize>, Vec<IndicatorState>)> {
        let cap = ex
            .target
            .as_ref()
            .ok_or_else(|| ModelError::Shape(format!("example {} has no target caption", ex.image_id)))?;
        let sec = self.sections(ex);
        let gold: Vec<usize> = cap.kinds.iter().zip(&cap.refs).map(|(k, r)| sec.index(*k, *r)).collect();
        let mut inputs = vec![Vocabulary::BOS];
        inputs.extend(&gold);
        let mut targets = gold;
        targets.push(Vocabulary::EOS);
        let ind = (0..inputs.len())
            .map(|t| self.indicators_for(ex, &cap.kinds[..t], &cap.refs[..t]))
            .collect();
        Ok((inputs, targets, ind))
    }

    /// Mean cross-entropy of the gold caption (EOS included), `1 x 1`.
    pub fn loss(&self, g: &mut Graph<'_, T>, ex: &Example) -> Result<(Var, usize)> {
        let (inputs, targets, ind) = self.teacher_forcing(ex)?;
        let enc = self.encode(g, ex)?;
        let h = self.decode(g, &enc, &inputs)?;
        let scores = self.hybrid_scores(g, h, enc.emb_g, enc.emb_k, &ind);
        Ok((g.tape.cross_entropy(scores, &targets), targets.len()))
    }

    pub fn encode_values(&self, ex: &Example) -> Result<EncodedValues<T>> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode(&mut g, ex)?;
        Ok(EncodedValues {
            e_context: g.tape.value(enc.e_context).clone(),
            emb_g: g.tape.value(enc.emb_g).clone(),
            emb_k: g.tape.value(enc.emb_k).clone(),
        })
    }

    /// Scores for the token following `prefix` (without BOS).
    pub fn next_scores(&self, ex: &Example, enc: &EncodedValues<T>, prefix: &TokenizedCaption) -> Result<Vec<T>> {
        let mut g = Graph::new(&self.params);
        let e = g.tape.constant(enc.e_context.clone());
        let emb_g = g.tape.constant(enc.emb_g.clone());
        let emb_k = g.tape.constant(enc.emb_k.clone());
        let encoded = Encoded {
            e_context: e,
            emb_g,
            emb_k,
            sections: (0, enc.emb_g.nrows(), enc.emb_k.nrows()),
        };
        let sec = self.sections(ex);
        let mut inputs = vec![Vocabulary::BOS];
        inputs.extend(prefix.kinds.iter().zip(&prefix.refs).map(|(k, r)| sec.index(*k, *r)));
        let h = self.decode(&mut g, &encoded, &inputs)?;
        let last = g.tape.gather_rows(h, &[inputs.len() - 1]);
        let ind = self.indicators_for(ex, &prefix.kinds, &prefix.refs);
        let scores = self.hybrid_scores(&mut g, last, emb_g, emb_k, &[ind]);
        Ok(g.tape.value(scores).iter().copied().collect())
    }

    /// Greedy decoding from BOS until EOS or `max_caption_len` tokens.
    pub fn generate(&self, ex: &Example) -> Result<TokenizedCaption> {
        let enc = self.encode_values(ex)?;
        let sec = self.sections(ex);
        let mut out = TokenizedCaption::default();
        while out.len() < self.config.max_caption_len {
            let scores = self.next_scores(ex, &enc, &out)?;
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(ModelError::Numeric(format!("non-finite scores for {}", ex.image_id)));
            }
            let best = argmax(&scores);
            let (kind, r) = sec.token(best);
            if kind == TokenKind::Vocab && r == Vocabulary::EOS {
                break;
            }
            let surface = match kind {
                TokenKind::Vocab => self.vocab.words.token(r).to_owned(),
                TokenKind::Entity => ex.geo_names[r].clone(),
                TokenKind::Fact => ex.fact_labels[r].clone(),
            };
            out.push(surface, kind, r);
        }
        Ok(out)
    }
}

/// Index of the first maximum.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
