use geoknow_model::fidelity::check_identities;

#[test]
fn identities_hold_on_random_inputs() {
    let t = std::time::Instant::now();
    check_identities(1000, 2024).unwrap();
    assert!(t.elapsed().as_secs() < 60, "took {:?}", t.elapsed());
}
