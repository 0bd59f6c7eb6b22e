use openhealth_bench::{har_models, har_recording, short_scenario};

#[test]
fn fixtures_are_usable() {
    let rec = har_recording();
    assert!(rec.samples.len() > 1128);
    let (float, dequant) = har_models();
    assert_eq!(float.sizes, dequant.sizes);
    assert_eq!(short_scenario(5).scenario.duration_ms, 300_000);
}
