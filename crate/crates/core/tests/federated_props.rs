use edgekd::dataio::{generate_synthetic_scenario, GenConfig, Scenario};
use edgekd::federated::{
    aggregate, aggregate_weighted, clients_per_round, run_federated, select_clients, FedConfig, Privacy,
};
use edgekd::metrics::frame_accuracy;
use edgekd::par;
use edgekd::rng::{Purpose, Streams};
use edgekd::Error;
use proptest::prelude::*;

fn scenario(devices: usize, frames: usize, seed: u64) -> Scenario {
    generate_synthetic_scenario(
        &GenConfig {
            devices,
            frames_per_device: frames,
            ..GenConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn quick() -> FedConfig {
    FedConfig {
        rounds: 3,
        client_fraction: 0.5,
        hidden: vec![16, 16],
        ..FedConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn selection_is_sorted_distinct_and_sized(n in 1usize..300, fraction in 0.001..1.0f64, seed in 0u64..1000) {
        let mut rng = Streams::new(seed).stream(Purpose::ClientSelect, 0, 0);
        let sel = select_clients(n, fraction, &mut rng).unwrap();
        prop_assert_eq!(sel.len(), clients_per_round(n, fraction));
        prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(sel.iter().all(|&i| i < n));
    }
}

#[test]
fn at_least_one_client_is_selected() {
    assert_eq!(clients_per_round(5, 0.01), 1);
    assert_eq!(clients_per_round(154, 0.1), 15);
    assert_eq!(clients_per_round(408, 0.1), 41);
}

#[test]
fn weighted_aggregation_with_equal_weights_matches_plain() {
    let s = Streams::new(3);
    let models: Vec<_> = (0..4)
        .map(|i| edgekd::nn::ModelWeights::init(&[3, 5, 2], &mut s.stream(Purpose::StudentInit, i, 0)).unwrap())
        .collect();
    let plain = aggregate(&models).unwrap();
    let weighted = aggregate_weighted(&models, &[2.0; 4]).unwrap();
    for (a, b) in plain.to_flat().iter().zip(weighted.to_flat()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(aggregate(&[]).is_err());
}

#[test]
fn identical_devices_aggregate_to_either_update() {
    let mut sc = scenario(1, 200, 4);
    let mut twin = sc.devices[0].clone();
    twin.device_id = "twin".into();
    sc.devices.push(twin);
    let rows = sc.devices[0].train.len();
    // One full batch per epoch, so shuffling only reorders a sum.
    let cfg = FedConfig {
        rounds: 1,
        client_fraction: 1.0,
        batch_size: rows,
        local_epochs: 3,
        hidden: vec![8],
        ..FedConfig::default()
    };
    let both = run_federated(&sc, &cfg, 9).unwrap();
    let single = run_federated(
        &Scenario {
            devices: vec![sc.devices[0].clone()],
            ..sc.clone()
        },
        &cfg,
        9,
    )
    .unwrap();
    for (a, b) in both.global.to_flat().iter().zip(single.global.to_flat()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn separable_scenario_reaches_high_global_accuracy() {
    let sc = generate_synthetic_scenario(
        &GenConfig {
            devices: 10,
            frames_per_device: 1000,
            sharpness: 50.0,
            error_rate_range: [0.33, 0.33],
            ..GenConfig::default()
        },
        11,
    )
    .unwrap();
    let out = run_federated(
        &sc,
        &FedConfig {
            rounds: 10,
            client_fraction: 0.5,
            local_epochs: 5,
            ..FedConfig::default()
        },
        11,
    )
    .unwrap();
    let acc = frame_accuracy(&out.report).unwrap();
    assert!(acc > 0.9, "global frame accuracy {acc}");
    assert_eq!(out.rounds.len(), 10);
}

#[test]
fn worker_count_does_not_change_results() {
    let sc = scenario(6, 200, 5);
    let cfg = FedConfig {
        privacy: Privacy::Dp,
        ..quick()
    };
    let one = par::with_threads(Some(1), || run_federated(&sc, &cfg, 5)).unwrap();
    let four = par::with_threads(Some(4), || run_federated(&sc, &cfg, 5)).unwrap();
    assert_eq!(one.global, four.global);
    assert_eq!(one.rounds, four.rounds);
}

#[test]
fn dp_noise_changes_the_trajectory() {
    let sc = scenario(4, 200, 6);
    let plain = run_federated(&sc, &quick(), 6).unwrap();
    let dp = run_federated(
        &sc,
        &FedConfig {
            privacy: Privacy::Dp,
            ..quick()
        },
        6,
    )
    .unwrap();
    assert_ne!(plain.global, dp.global);
    assert_eq!(dp.rounds[0].method, "dpfed");
}

#[test]
fn telemetry_lists_selected_devices_per_round() {
    let sc = scenario(6, 200, 7);
    let out = run_federated(&sc, &quick(), 7).unwrap();
    for (r, t) in out.rounds.iter().enumerate() {
        assert_eq!(t.round, r);
        assert_eq!(t.selected.len(), 3);
        assert!(t.global_train_loss.is_finite());
    }
    let text = String::from_utf8(edgekd::federated::telemetry_jsonl(&out.rounds)).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn empty_scenario_and_bad_fraction_are_config_errors() {
    let mut sc = scenario(2, 100, 8);
    assert!(matches!(
        run_federated(&sc, &FedConfig { client_fraction: 1.5, ..quick() }, 1),
        Err(Error::Config(_))
    ));
    sc.devices.clear();
    assert!(matches!(run_federated(&sc, &quick(), 1), Err(Error::Config(_))));
}
