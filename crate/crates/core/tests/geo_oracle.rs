//! Radius queries against a brute-force scan with an independently written
//! great-circle distance.

use std::collections::BTreeSet;

use geoknow_core::geo::{EntityStore, GeoEntity, GeoPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vincenty-style atan2 form of the central angle, radius 6371 km.
fn oracle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, l1) = (a.0.to_radians(), a.1.to_radians());
    let (p2, l2) = (b.0.to_radians(), b.1.to_radians());
    let dl = l2 - l1;
    let y = ((p2.cos() * dl.sin()).powi(2) + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2)).sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    6371.0 * y.atan2(x)
}

fn random_store(rng: &mut ChaCha8Rng, center: (f64, f64), spread_deg: f64, n: usize) -> (EntityStore, Vec<(String, f64, f64)>) {
    let mut raw = Vec::with_capacity(n);
    let mut entities = Vec::with_capacity(n);
    for i in 0..n {
        let lat = (center.0 + rng.gen_range(-spread_deg..spread_deg)).clamp(-90.0, 90.0);
        let mut lon = center.1 + rng.gen_range(-spread_deg..spread_deg) * 2.0;
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon <= -180.0 {
            lon += 360.0;
        }
        let p = GeoPoint::new(lat, lon).unwrap();
        raw.push((format!("e{i}"), p.lat(), p.lon()));
        entities.push(GeoEntity {
            id: format!("e{i}"),
            name: format!("entity {i}"),
            location: p,
            size: 0.0,
            type_tag: "thing".into(),
        });
    }
    (EntityStore::new(entities).unwrap(), raw)
}

#[test]
fn radius_queries_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0usize;
    for store_no in 0..100 {
        // a few stores sit on the poles and the antimeridian
        let center = match store_no % 10 {
            0 => (89.7, rng.gen_range(-180.0..180.0)),
            1 => (-89.6, rng.gen_range(-180.0..180.0)),
            2 => (rng.gen_range(-60.0..60.0), 179.95),
            3 => (rng.gen_range(-60.0..60.0), -179.9),
            _ => (rng.gen_range(-80.0..80.0), rng.gen_range(-180.0..180.0)),
        };
        let n = rng.gen_range(1..=10_000);
        let spread = rng.gen_range(0.01..0.8);
        let (store, raw) = random_store(&mut rng, center, spread, n);
        for _ in 0..10 {
            let q = GeoPoint::new(
                (center.0 + rng.gen_range(-spread..spread)).clamp(-90.0, 90.0),
                center.1 + rng.gen_range(-spread..spread),
            )
            .unwrap();
            let r = rng.gen_range(0.05..40.0);
            let got: BTreeSet<String> = store.within_radius(q, r).into_iter().map(|(e, _)| e.id.clone()).collect();
            let mut expected = BTreeSet::new();
            let mut ambiguous = BTreeSet::new();
            for (id, lat, lon) in &raw {
                let d = oracle_km((q.lat(), q.lon()), (*lat, *lon));
                if (d - r).abs() < 1e-9 {
                    ambiguous.insert(id.clone());
                } else if d <= r {
                    expected.insert(id.clone());
                }
            }
            let got_clear: BTreeSet<String> = got.difference(&ambiguous).cloned().collect();
            assert_eq!(got_clear, expected, "store {store_no}, query {q:?}, r {r}");
            compared += expected.len();
        }
    }
    assert!(compared > 1000, "queries too sparse to be meaningful: {compared}");
}
