//! Caption metrics, fact accuracy and run reports.

pub mod facts;
pub mod metrics;
pub mod records;
pub mod report;

pub use facts::{
    fact_accuracy, object_class, random_fact_baseline, FactAccuracy, FactCheckInput, FactOrigin, FactVerdict,
    KeyPhraseLexicon, ObjectClass, UnchangedFact, TRIGGER_WINDOW,
};
pub use metrics::{bleu, bleu_all, cider, cider_scores, meteor_simplified, rouge_l, two_sample_t_test, Sentence};
pub use records::{CaptionRecord, CaptionsFile};
pub use report::{evaluate_run, Comparison, EvalItem, ImageScores, MetricReport};
