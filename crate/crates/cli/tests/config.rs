use ssd_cli::config::{parse_config, parse_config_str, ConfigError, DEFAULT_REPLICATIONS};
use std::path::PathBuf;

const MINIMAL: &str = r#"
target_power = 0.8
n0 = 50

[hypothesis]
kind = "one_sided_lower"
theta0 = 0.0
alpha = 0.05

[n1]
n1 = 100

[[scenario]]
label = "a"
family = "two_arm_normal"
eta = { mean_difference = 0.5, control_mean = 0.0, sigma = 1.0 }
rho = { allocation = 0.5 }
analysis = { recipe = "mean_diff" }
"#;

fn field_path(err: ConfigError) -> String {
    match err {
        ConfigError::Field { path, .. } => path,
        other => panic!("expected a field error, got {other}"),
    }
}

#[test]
fn minimal_config_applies_and_reports_defaults() {
    let loaded = parse_config_str(MINIMAL).unwrap();
    assert_eq!(loaded.config.replications, DEFAULT_REPLICATIONS);
    for key in ["replications", "seed", "output_dir", "svg", "n1.strategy", "scenario[0].true_theta"] {
        assert!(
            loaded.defaults.iter().any(|d| d.starts_with(&format!("{key} ="))),
            "{key} not echoed in {:?}",
            loaded.defaults
        );
    }
    assert_eq!(loaded.scenarios[0].true_theta(), 0.5);
}

#[test]
fn config_round_trips_through_serialization() {
    let first = parse_config_str(MINIMAL).unwrap();
    let text = first.config.to_toml_string();
    let second = parse_config_str(&text).unwrap();
    assert_eq!(first.config, second.config);
    assert!(second.defaults.is_empty(), "{:?}", second.defaults);
    assert_eq!(first.scenarios, second.scenarios);
}

#[test]
fn alpha_out_of_range_names_the_field() {
    let err = parse_config_str(&MINIMAL.replace("alpha = 0.05", "alpha = 1.5")).unwrap_err();
    assert!(err.to_string().contains("alpha"), "{err}");
    let err = parse_config_str(&MINIMAL.replace("alpha = 0.05", "alpha = 0.0")).unwrap_err();
    assert!(err.to_string().contains("alpha"), "{err}");
}

#[test]
fn reversed_equivalence_bounds_are_rejected() {
    let text = MINIMAL.replace(
        "kind = \"one_sided_lower\"\ntheta0 = 0.0",
        "kind = \"equivalence\"\ntheta0_lower = 0.3\ntheta0_upper = -0.3",
    );
    let err = parse_config_str(&text).unwrap_err();
    assert_eq!(field_path(err), "hypothesis");
}

#[test]
fn unknown_and_missing_keys_are_path_qualified() {
    let err = parse_config_str(&MINIMAL.replace("n0 = 50", "n0 = 50\nbogus = 1")).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");

    let err = parse_config_str(&MINIMAL.replace("sigma = 1.0", "sigma = 1.0, extra = 2")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.starts_with("scenario[0].eta"), "{msg}");

    let err = parse_config_str(&MINIMAL.replace("n0 = 50\n", "")).unwrap_err();
    assert!(err.to_string().contains("n0"), "{err}");
}

#[test]
fn invalid_scenario_values_are_reported_per_scenario() {
    let err = parse_config_str(&MINIMAL.replace("sigma = 1.0", "sigma = -1.0")).unwrap_err();
    assert_eq!(field_path(err), "scenario[0]");
    let err = parse_config_str(&MINIMAL.replace("label = \"a\"", "label = \"a\"\ntrue_theta = 0.4")).unwrap_err();
    assert_eq!(field_path(err), "scenario[0].true_theta");
}

#[test]
fn unknown_dropout_covariate_is_rejected() {
    let text = std::fs::read_to_string(configs().join("clustered_noninferiority.toml"))
        .unwrap()
        .replacen("previous_response", "heart_rate", 1);
    let err = parse_config_str(&text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("scenario[0].rho.dropout") && msg.contains("heart_rate"), "{msg}");
}

#[test]
fn weights_must_match_scenarios() {
    let err = parse_config_str(&MINIMAL.replace("n0 = 50", "n0 = 50\nweights = [0.5, 0.5]")).unwrap_err();
    assert_eq!(field_path(err), "weights");
}

#[test]
fn side_rule_and_duplicates() {
    let err = parse_config_str(&MINIMAL.replace("n1 = 100", "n1 = 50")).unwrap_err();
    assert_eq!(field_path(err), "n1.n1");
    let twice = format!("{MINIMAL}{}", &MINIMAL[MINIMAL.find("[[scenario]]").unwrap()..]);
    let err = parse_config_str(&twice).unwrap_err();
    assert_eq!(field_path(err), "scenario[1].label");
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn cookbook_configs_validate_and_round_trip() {
    let mut count = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let loaded = parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let again = parse_config_str(&loaded.config.to_toml_string()).unwrap();
        assert_eq!(loaded.config, again.config, "{}", path.display());
        count += 1;
    }
    assert!(count >= 4);
}

mod props {
    use super::MINIMAL;
    use proptest::prelude::*;
    use ssd_cli::config::{parse_config_str, GridSpec};

    proptest! {
        #[test]
        fn grid_points_are_in_range_and_evenly_spaced(start in 1usize..500, len in 0usize..500, step in 1usize..50) {
            let g = GridSpec { start, stop: start + len, step };
            let pts = g.points();
            prop_assert_eq!(pts[0], start);
            prop_assert!(pts.iter().all(|&n| n >= start && n <= start + len));
            prop_assert!(pts.windows(2).all(|w| w[1] - w[0] == step));
            prop_assert!(pts.last().unwrap() + step > start + len);
        }

        #[test]
        fn valid_settings_round_trip(alpha in 0.001f64..0.2, target in 0.5f64..0.99, n0 in 2usize..1000, seed in 0..=i64::MAX as u64) {
            let text = MINIMAL
                .replace("alpha = 0.05", &format!("alpha = {alpha:?}"))
                .replace("target_power = 0.8", &format!("target_power = {target:?}\nseed = {seed}"))
                .replace("n0 = 50", &format!("n0 = {n0}"))
                .replace("n1 = 100", &format!("n1 = {}", n0 * 2));
            let a = parse_config_str(&text).unwrap();
            let b = parse_config_str(&a.config.to_toml_string()).unwrap();
            prop_assert_eq!(a.config, b.config);
        }
    }
}

#[test]
fn missing_top_level_table_is_named() {
    let text = MINIMAL.replace("[n1]\nn1 = 100\n", "");
    let msg = parse_config_str(&text).unwrap_err().to_string();
    assert!(msg.starts_with("config: missing field `n1`"), "{msg}");
}
