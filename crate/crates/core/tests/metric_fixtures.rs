//! Metric values frozen from the coco-caption reference implementation
//! (pycocoevalcap Bleu(4), Rouge, Cider on whitespace-tokenized strings).

use geoknow_core::eval::metrics::{bleu_all, cider, cider_scores, rouge_l, Sentence};

fn s(x: &str) -> Sentence {
    x.split_whitespace().map(str::to_owned).collect()
}

fn fixture() -> (Vec<Sentence>, Vec<Vec<Sentence>>) {
    let cands = [
        "the kelso bridge over the river tweed built in 1800",
        "a church in the village with a tall spire",
        "view of the old railway station opened in 1847",
        "the castle ruins on the hill",
    ];
    let refs = [
        ["kelso bridge spans the river tweed , built in 1800 by john rennie", "the bridge at kelso over the tweed"],
        ["the parish church with its spire", "a village church dating from 1812"],
        ["the old station , opened in 1847", "railway station building"],
        ["ruins of the castle above the town", "castle on a hill"],
    ];
    (
        cands.iter().map(|c| s(c)).collect(),
        refs.iter().map(|r| r.iter().map(|x| s(x)).collect()).collect(),
    )
}

const TOL: f64 = 1e-4;

#[test]
fn bleu_matches_reference() {
    let (c, r) = fixture();
    let b = bleu_all(&c, &r, 4).unwrap();
    let expected = [85.29411764455018, 55.9236173740212, 33.045536415566204, 0.0035787300028039923];
    for (got, want) in b.iter().zip(expected) {
        assert!((got - want).abs() < TOL, "{got} vs {want}");
    }
}

#[test]
fn rouge_matches_reference() {
    let (c, r) = fixture();
    let got = rouge_l(&c, &r).unwrap();
    assert!((got - 63.795045164537754).abs() < TOL, "{got}");
}

#[test]
fn cider_matches_reference() {
    let (c, r) = fixture();
    let got = cider(&c, &r).unwrap();
    assert!((got - 183.2758530214873).abs() < TOL, "{got}");
    let per = cider_scores(&c, &r).unwrap();
    let expected = [243.91197991759742, 102.52942967327185, 210.638621679268, 176.023380815812];
    for (g, w) in per.iter().zip(expected) {
        assert!((g - w).abs() < TOL, "{g} vs {w}");
    }
}

#[test]
fn metrics_ignore_sample_order() {
    let (mut c, mut r) = fixture();
    let before = (bleu_all(&c, &r, 4).unwrap(), rouge_l(&c, &r).unwrap(), cider(&c, &r).unwrap());
    c.reverse();
    r.reverse();
    let after = (bleu_all(&c, &r, 4).unwrap(), rouge_l(&c, &r).unwrap(), cider(&c, &r).unwrap());
    for (a, b) in before.0.iter().zip(&after.0) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!((before.1 - after.1).abs() < 1e-9);
    assert!((before.2 - after.2).abs() < 1e-9);
}
