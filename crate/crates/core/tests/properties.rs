use geoknow_core::corpus::{link_caption, preprocess_caption, split_dataset, Sample, Split, TokenKind};
use geoknow_core::geo::{azimuth, build_geo_context, haversine_distance, normalize_azimuth, EntityStore, GeoEntity, GeoPoint, NoFacts};
use geoknow_core::knowledge::{merge_predicates, ContextFact, Fact, KnowledgeContext, SynonymMap};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = GeoPoint> {
    (-90.0f64..=90.0, -180.0f64..180.0).prop_map(|(a, b)| GeoPoint::new(a, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn haversine_symmetric_and_bounded(a in point(), b in point()) {
        let ab = haversine_distance(a, b);
        prop_assert!((ab - haversine_distance(b, a)).abs() < 1e-9);
        prop_assert!((0.0..=std::f64::consts::PI * 6371.0 + 1e-6).contains(&ab));
        prop_assert!(haversine_distance(a, a) < 1e-9);
    }

    #[test]
    fn azimuth_in_half_open_range(a in point(), b in point()) {
        prop_assume!(haversine_distance(a, b) > 1e-6);
        let az = azimuth(a, b).unwrap();
        prop_assert!(az > -180.0 && az <= 180.0);
        let (n, e) = normalize_azimuth(az);
        prop_assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&e));
    }

    #[test]
    fn normalized_azimuth_is_continuous(a in -180.0f64..=180.0) {
        let (n0, e0) = normalize_azimuth(a);
        let step = 1e-7;
        let b = if a + step > 180.0 { a + step - 360.0 } else { a + step };
        let (n1, e1) = normalize_azimuth(b);
        prop_assert!((n0 - n1).abs() < 1e-6 && (e0 - e1).abs() < 1e-6);
    }

    #[test]
    fn preprocessing_is_idempotent(text in "[A-Za-z0-9 ,.'&<>;!-]{0,60}") {
        let once = preprocess_caption(&text);
        let twice = preprocess_caption(&once.join(" "));
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn predicate_merge_is_idempotent(raw in "[a-z]{1,8}") {
        let map = SynonymMap::from_pairs([("yearbuilt", "built"), ("builtin", "yearbuilt"), ("designer", "architect")]).unwrap();
        let once = merge_predicates(&raw, &map);
        prop_assert_eq!(merge_predicates(&once, &map), once.clone());
    }

    #[test]
    fn split_is_a_partition(lats in prop::collection::vec(49.0f64..60.0, 1..50)) {
        let samples: Vec<Sample> = lats.iter().enumerate().map(|(i, &lat)| Sample {
            image_id: format!("i{i}"),
            location: GeoPoint::new(lat, -2.0).unwrap(),
            caption_raw: String::new(),
            feature_ref: String::new(),
        }).collect();
        let (tr, va, te) = split_dataset(&samples);
        prop_assert_eq!(tr.len() + va.len() + te.len(), samples.len());
        prop_assert!(tr.iter().all(|s| Split::of(s.location) == Split::Train));
        prop_assert!(va.iter().all(|s| Split::of(s.location) == Split::Validation));
        prop_assert!(te.iter().all(|s| Split::of(s.location) == Split::Test));
    }

    #[test]
    fn linking_produces_valid_refs(
        picks in prop::collection::vec(0usize..8, 1..20),
        n_entities in 1usize..4,
    ) {
        let words = ["the", "kelso", "bridge", "built", "in", "1800", "river", "1826"];
        let loc = GeoPoint::new(55.6, -2.43).unwrap();
        let names = ["kelso bridge", "river tweed", "kelso"];
        let entities: Vec<GeoEntity> = (0..n_entities).map(|i| GeoEntity {
            id: format!("e{i}"),
            name: names[i % names.len()].to_owned(),
            location: GeoPoint::new(55.6 + 0.001 * (i + 1) as f64, -2.43).unwrap(),
            size: 0.0,
            type_tag: "x".into(),
        }).collect();
        let store = EntityStore::new(entities).unwrap();
        let geo = build_geo_context(&store, loc, 1.0, 300, &NoFacts);
        let k = KnowledgeContext { facts: vec![
            ContextFact { fact: Fact { subject_id: "e0".into(), predicate: "built".into(), object_label: "1800".into() }, subject_ref: 0, score: 0.0 },
            ContextFact { fact: Fact { subject_id: "e0".into(), predicate: "opened".into(), object_label: "1826".into() }, subject_ref: 0, score: 0.0 },
        ]};
        let tokens: Vec<String> = picks.iter().map(|&i| words[i].to_owned()).collect();
        let linked = link_caption(&tokens, &geo, &k);
        prop_assert!(linked.validate(4, geo.len(), k.len()).is_ok());
        // surface words are preserved
        prop_assert_eq!(linked.words(), tokens);
        prop_assert!(linked.kinds.iter().zip(&linked.tokens).all(|(k, t)| *k != TokenKind::Vocab || !t.contains(' ')));
    }
}
