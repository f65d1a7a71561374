//! The bundled corpora are exactly what the generator produces.
//! `GEOKNOW_WRITE_BUNDLE=1 cargo test -p geoknow-cli --test bundled` rewrites them.

use std::path::PathBuf;

use geoknow_core::synth::{SynthConfig, SynthWorld};

pub fn bundle_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synth-100")
}

#[test]
fn bundled_overfit_corpus_is_reproducible() {
    let world = SynthWorld::generate(&SynthConfig::training_only(100, 100)).unwrap();
    if std::env::var_os("GEOKNOW_WRITE_BUNDLE").is_some() {
        world.write(bundle_dir()).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    let fresh = world.write(tmp.path()).unwrap();
    for (a, name) in [
        (&fresh.entities, "entities"),
        (&fresh.triples, "triples"),
        (&fresh.synonyms, "synonyms"),
        (&fresh.dataset, "dataset"),
        (&fresh.lexicon, "lexicon"),
    ] {
        let bundled = bundle_dir().join(a.file_name().unwrap());
        let want = std::fs::read(&bundled).unwrap_or_else(|e| panic!("{}: {e}", bundled.display()));
        assert_eq!(std::fs::read(a).unwrap(), want, "{name} differs from {}", bundled.display());
    }
}
