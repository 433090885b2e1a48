use maxloc_wasm::{argmax_histogram_json, m_curve_json, sample_path_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn flat_path_with_positive_tilt_peaks_at_the_end() {
    let v = parse(sample_path_json("flat", 2.0, 8, 0.5, 0).unwrap());
    assert_eq!(v["max"], 1.0);
    assert_eq!(v["z1"], 2.0);
    assert_eq!(v["times"].as_array().unwrap().len(), 9);
}

#[test]
fn flat_m_curve_is_a_kink() {
    let v = parse(m_curve_json("flat", 1.0, 16, 0.4, 2, 4, 0).unwrap());
    let a: Vec<f64> = serde_json::from_value(v["a"].clone()).unwrap();
    let m: Vec<f64> = serde_json::from_value(v["mean"].clone()).unwrap();
    for (a, m) in a.iter().zip(&m) {
        assert!((m - a.max(0.0)).abs() < 1e-12, "m({a}) = {m}");
    }
}

#[test]
fn histogram_counts_every_replicate() {
    let v = parse(argmax_histogram_json("brownian_minus_parabola", 2.0, 256, 500, 20, 1).unwrap());
    let total: u64 = v["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(total, 500);
    assert_eq!(v["edges"].as_array().unwrap().len(), 21);
}

#[test]
fn bad_inputs_are_reported() {
    assert!(sample_path_json("levy", 1.0, 8, 0.0, 0).is_err());
    assert!(sample_path_json("brownian", 1.0, 0, 0.0, 0).is_err());
    assert!(m_curve_json("brownian", 1.0, 8, 0.1, 2, 1, 0).is_err());
    assert!(argmax_histogram_json("brownian", 1.0, 8, 10, 0, 0).is_err());
}
