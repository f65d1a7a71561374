//! Corpus-level caption metrics over pre-tokenized sentences.
//!
//! BLEU, ROUGE-L and CIDEr-D follow the coco-caption definitions (closest
//! reference length for BLEU, beta = 1.2 for ROUGE-L, sigma = 6 and the x10
//! factor for CIDEr-D). METEOR is a simplified variant: exact then stem
//! unigram alignment with the usual fragmentation penalty, no synonyms or
//! paraphrase tables. All scores are scaled to 0..100.

use std::collections::{BTreeMap, BTreeSet};

use rust_stemmers::{Algorithm, Stemmer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub type Sentence = Vec<String>;

// ordered so that floating-point sums do not depend on hash seeds
type NgramCounts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(words: &[String], max_n: usize) -> NgramCounts<'_> {
    let mut counts = BTreeMap::new();
    for n in 1..=max_n {
        for w in words.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_corpus(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} candidates for {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("item {i} has no reference")));
    }
    Ok(())
}

/// Corpus BLEU-1..=max_n with uniform weights and brevity penalty.
/// Returns one score per order.
pub fn bleu_all(candidates: &[Sentence], references: &[Vec<Sentence>], max_n: usize) -> Result<Vec<f64>> {
    check_corpus(candidates, references)?;
    let mut guess = vec![0usize; max_n];
    let mut correct = vec![0usize; max_n];
    let (mut test_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, max_n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for (g, c) in ngram_counts(cand, max_n) {
            correct[g.len() - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
        }
        for (k, slot) in guess.iter_mut().enumerate() {
            *slot += (cand.len() + 1).saturating_sub(k + 1);
        }
        test_len += cand.len();
        // closest reference length, shorter on ties
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap();
    }
    // coco-caption smoothing: a zero precision yields ~1e-15, not 0
    const TINY: f64 = 1e-15;
    const SMALL: f64 = 1e-9;
    let ratio = (test_len as f64 + TINY) / (ref_len as f64 + SMALL);
    let bp = if ratio < 1.0 { (1.0 - 1.0 / ratio).exp() } else { 1.0 };
    let mut out = Vec::with_capacity(max_n);
    let mut prod = 1.0;
    for k in 0..max_n {
        prod *= (correct[k] as f64 + TINY) / (guess[k] as f64 + SMALL);
        out.push(100.0 * bp * prod.powf(1.0 / (k + 1) as f64));
    }
    Ok(out)
}

/// Corpus BLEU-n.
pub fn bleu(candidates: &[Sentence], references: &[Vec<Sentence>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid("BLEU order must be at least 1".into()));
    }
    Ok(bleu_all(candidates, references, n)?[n - 1])
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

const ROUGE_BETA: f64 = 1.2;

/// Sentence-level ROUGE-L F-measure (0..1) against the best reference.
pub fn rouge_l_sentence(candidate: &[String], refs: &[Sentence]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut p_max: f64 = 0.0;
    let mut r_max: f64 = 0.0;
    for r in refs {
        if r.is_empty() {
            continue;
        }
        let l = lcs_len(r, candidate) as f64;
        p_max = p_max.max(l / candidate.len() as f64);
        r_max = r_max.max(l / r.len() as f64);
    }
    if p_max == 0.0 || r_max == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max)
}

/// Per-item ROUGE-L scores, 0..100.
pub fn rouge_l_scores(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<Vec<f64>> {
    check_corpus(candidates, references)?;
    Ok(candidates
        .iter()
        .zip(references)
        .map(|(c, r)| 100.0 * rouge_l_sentence(c, r))
        .collect())
}

/// Mean ROUGE-L over the corpus, 0..100.
pub fn rouge_l(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64> {
    let s = rouge_l_scores(candidates, references)?;
    Ok(mean(&s))
}

const CIDER_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

struct TfIdf {
    vec: Vec<BTreeMap<Vec<String>, f64>>,
    norm: [f64; CIDER_N],
    length: usize,
}

/// Per-item CIDEr-D scores (x10 as in coco-caption, then x100).
///
/// Document frequencies come from the references of the whole corpus.
pub fn cider_scores(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<Vec<f64>> {
    check_corpus(candidates, references)?;
    let mut df: BTreeMap<Vec<String>, f64> = BTreeMap::new();
    for refs in references {
        let mut grams: BTreeSet<&[String]> = BTreeSet::new();
        for r in refs {
            grams.extend(ngram_counts(r, CIDER_N).into_keys());
        }
        for g in grams {
            *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    let log_items = (references.len() as f64).ln();

    let to_vec = |words: &[String]| -> TfIdf {
        let mut vec: Vec<BTreeMap<Vec<String>, f64>> = vec![BTreeMap::new(); CIDER_N];
        let mut norm = [0.0; CIDER_N];
        let mut length = 0;
        for (g, tf) in ngram_counts(words, CIDER_N) {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let n = g.len() - 1;
            let w = tf as f64 * (log_items - d);
            norm[n] += w * w;
            vec[n].insert(g.to_vec(), w);
            // coco-caption counts bigrams here; kept for parity
            if n == 1 {
                length += tf;
            }
        }
        for v in &mut norm {
            *v = v.sqrt();
        }
        TfIdf { vec, norm, length }
    };

    let mut scores = Vec::with_capacity(candidates.len());
    for (cand, refs) in candidates.iter().zip(references) {
        let hyp = to_vec(cand);
        let mut total = [0.0; CIDER_N];
        for r in refs {
            let rv = to_vec(r);
            let delta = hyp.length as f64 - rv.length as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for (n, tot) in total.iter_mut().enumerate() {
                let mut val = 0.0;
                for (g, &h) in &hyp.vec[n] {
                    let rw = rv.vec[n].get(g).copied().unwrap_or(0.0);
                    val += h.min(rw) * rw;
                }
                if hyp.norm[n] != 0.0 && rv.norm[n] != 0.0 {
                    val /= hyp.norm[n] * rv.norm[n];
                }
                *tot += val * penalty;
            }
        }
        let avg = total.iter().sum::<f64>() / CIDER_N as f64 / refs.len() as f64;
        scores.push(avg * 10.0 * 100.0);
    }
    Ok(scores)
}

pub fn cider(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64> {
    Ok(mean(&cider_scores(candidates, references)?))
}

/// Unigram alignment used by the simplified METEOR: exact matches first,
/// then matches on Porter stems, each stage left to right with the earliest
/// free reference position. Returns (matches, chunks).
pub fn meteor_alignment(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let stemmer = Stemmer::create(Algorithm::English);
    let mut ref_used = vec![false; reference.len()];
    let mut cand_to_ref: Vec<Option<usize>> = vec![None; candidate.len()];

    for (i, w) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && &reference[j] == w) {
            ref_used[j] = true;
            cand_to_ref[i] = Some(j);
        }
    }
    let ref_stems: Vec<String> = reference.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    for (i, w) in candidate.iter().enumerate() {
        if cand_to_ref[i].is_some() {
            continue;
        }
        let s = stemmer.stem(w);
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_stems[j] == s) {
            ref_used[j] = true;
            cand_to_ref[i] = Some(j);
        }
    }

    let matches = cand_to_ref.iter().flatten().count();
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for m in &cand_to_ref {
        match (m, prev) {
            (Some(j), Some(p)) if *j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *m;
    }
    (matches, chunks)
}

/// Sentence-level simplified METEOR (0..1), best over references.
pub fn meteor_sentence(candidate: &[String], refs: &[Sentence]) -> f64 {
    refs.iter()
        .map(|r| {
            let (m, chunks) = meteor_alignment(candidate, r);
            if m == 0 {
                return 0.0;
            }
            let p = m as f64 / candidate.len() as f64;
            let rc = m as f64 / r.len() as f64;
            let fmean = 10.0 * p * rc / (rc + 9.0 * p);
            let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
            fmean * (1.0 - penalty)
        })
        .fold(0.0, f64::max)
}

pub fn meteor_simplified(candidates: &[Sentence], references: &[Vec<Sentence>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let s: Vec<f64> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| 100.0 * meteor_sentence(c, r))
        .collect();
    Ok(mean(&s))
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Welch's two-sample t-test. Returns `(t, two-sided p)`.
pub fn two_sample_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid("t-test needs at least two values per sample".into()));
    }
    let var = |xs: &[f64], m: f64| xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma) / a.len() as f64, var(b, mb) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb { (0.0, 1.0) } else { (f64::INFINITY.copysign(ma - mb), 0.0) });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2
        / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Invalid(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        text.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn perfect_match_scores_hundred() {
        let c = vec![s("the bridge was built in 1800 ."), s("kelso bridge over the river tweed")];
        let r: Vec<Vec<Sentence>> = c.iter().map(|x| vec![x.clone()]).collect();
        for n in 1..=4 {
            assert!((bleu(&c, &r, n).unwrap() - 100.0).abs() < 1e-6);
        }
        assert!((rouge_l(&c, &r).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_overlap_scores_zero() {
        let c = vec![s("alpha beta gamma delta")];
        let r = vec![vec![s("one two three four")]];
        assert!(bleu(&c, &r, 1).unwrap().abs() < 1e-6);
        assert!(bleu(&c, &r, 4).unwrap().abs() < 1e-6);
        assert_eq!(rouge_l(&c, &r).unwrap(), 0.0);
        assert_eq!(cider(&c, &r).unwrap(), 0.0);
        assert_eq!(meteor_simplified(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(bleu(&[], &[], 4), Err(Error::EmptyCorpus)));
        assert!(matches!(rouge_l(&[], &[]), Err(Error::EmptyCorpus)));
        assert!(matches!(cider(&[], &[]), Err(Error::EmptyCorpus)));
        assert!(matches!(meteor_simplified(&[], &[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn meteor_hand_alignment() {
        // candidate: the cat sat on the mat ; reference: on the mat sat the cat
        // exact matches left to right: the->1, cat->5, sat->3, on->0, the->4, mat->2
        // candidate order of ref positions: 1 5 3 0 4 2 -> 6 chunks
        let (m, ch) = meteor_alignment(&s("the cat sat on the mat"), &s("on the mat sat the cat"));
        assert_eq!((m, ch), (6, 6));
        let score = meteor_sentence(&s("the cat sat on the mat"), &[s("on the mat sat the cat")]);
        // P = R = 1, Fmean = 1, penalty = 0.5 * 1^3
        assert!((score - 0.5).abs() < 1e-12);

        // stem stage: "bridges" ~ "bridge"; 3 of 4 match in one chunk
        let (m, ch) = meteor_alignment(&s("old bridges built here"), &s("old bridge built"));
        assert_eq!((m, ch), (3, 1));
        let score = meteor_sentence(&s("old bridges built here"), &[s("old bridge built")]);
        let (p, r) = (0.75_f64, 1.0_f64);
        let fmean = 10.0 * p * r / (r + 9.0 * p);
        let expected = fmean * (1.0 - 0.5 * (1.0_f64 / 3.0).powi(3));
        assert!((score - expected).abs() < 1e-12, "{score} vs {expected}");
    }

    #[test]
    fn t_test_basic() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (t, p) = two_sample_t_test(&a, &a).unwrap();
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        let b = [11.0, 12.0, 13.0, 14.0, 15.0];
        let (t, p) = two_sample_t_test(&a, &b).unwrap();
        assert!(t < 0.0);
        assert!(p < 1e-4);
    }
}
