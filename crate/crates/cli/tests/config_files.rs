use std::path::Path;

use csesim::config::{load_reception_table, parse_config, parse_config_str, to_toml};
use csesim_core::channel::ChannelKind;
use csesim_core::tx_pipeline::RedundancyMode;
use csesim_core::SimConfig;

fn data() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data"))
}

#[test]
fn empty_file_gives_defaults() {
    assert_eq!(parse_config_str("", data()).unwrap(), SimConfig::default());
}

#[test]
fn out_of_range_beta_names_the_key() {
    let err = parse_config_str("[pipeline]\nbeta = 1.5\n", data()).unwrap_err();
    assert_eq!(err.key(), Some("pipeline.beta"));
}

#[test]
fn unknown_key_is_rejected() {
    let err = parse_config_str("[channel]\nrx_midpoint_m = 300.0\nbogus = 1\n", data()).unwrap_err();
    assert_eq!(err.key(), Some("channel.bogus"));
}

#[test]
fn decreasing_cr_limit_bounds_are_a_table_error() {
    let text = "[congestion]\ncr_limits = [[0.5, 0.01], [0.3, 0.005], [1.0, 0.0]]\n";
    let err = parse_config_str(text, data()).unwrap_err();
    assert_eq!(err.key(), Some("congestion.cr_limits"));
    assert!(err.to_string().contains("increasing"), "{err}");
}

#[test]
fn round_trip_preserves_every_field() {
    let mut c = SimConfig::default();
    c.n_vehicles = 123;
    c.seeds = vec![4, 5, 9];
    c.pipeline.redundancy = RedundancyMode::Soft;
    c.pipeline.beta = 0.35;
    c.channel.interference_gamma = 0.25;
    c.congestion.enabled = false;
    c.scenario.torus = true;
    let text = to_toml(&c);
    assert_eq!(parse_config_str(&text, data()).unwrap(), c);
    assert_eq!(parse_config_str(&to_toml(&SimConfig::default()), data()).unwrap(), SimConfig::default());
}

#[test]
fn table_channel_loads_relative_to_the_config() {
    let c = parse_config_str("[channel]\nmodel = \"table\"\ntable_path = \"reception.csv\"\n", data()).unwrap();
    assert_eq!(c.channel.model, ChannelKind::Table);
    let table = c.reception_table.as_ref().unwrap();
    assert_eq!(table.probability(200.0, 0.0), 0.9);
    assert!((table.probability(300.0, 0.25) - 0.55).abs() < 1e-12);

    let rt = parse_config_str(&to_toml(&c), data()).unwrap();
    assert_eq!(rt, c);
}

#[test]
fn malformed_reception_table_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "distance_m,0.0,1.0\n0,0.5,0.9\n").unwrap();
    let err = load_reception_table(&path).unwrap_err();
    assert_eq!(err.key(), Some("channel.table_path"));
}

#[test]
fn shipped_tiny_config_parses() {
    let c = parse_config(&data().join("tiny.toml")).unwrap();
    assert_eq!(c.seeds, vec![1, 2]);
    assert_eq!(c.scenario.area_side, 600.0);
}
