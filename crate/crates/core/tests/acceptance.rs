//! End-to-end acceptance checks. Each criterion prints one line:
//! `criterion <n> <PASS|FAIL|SKIP>: <detail>`.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use edgekd::dataio::{dataset_stats, generate_synthetic_scenario, load_scenario, GenConfig, Origin, Samples, Scenario, SchemaConfig};
use edgekd::distill::{
    prepare_teacher, run_kd_with_teacher, run_local, train_local, train_student_kd, KdConfig, KdVariant, StudentConfig,
    TeacherData,
};
use edgekd::ensemble::run_ensemble;
use edgekd::experiment::{self, Method, RunConfig};
use edgekd::federated::{aggregate, run_federated, FedConfig, Privacy};
use edgekd::metrics::{
    accuracy_delta_table, edge_accuracy, error_rate_groups_from_rates, DeviceResult, Grouping, MethodReport,
};
use edgekd::nn::{loss_and_gradients, KlDirection, LossSpec, Matrix, ModelWeights};
use edgekd::rng::{Purpose, Streams};
use edgekd::smote::{generate_synthetic_dataset, k_nearest_neighbors, SampleCount, SmoteConfig, SmoteDirection};
use rand::seq::SliceRandom;
use rand::Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn small_scenario(devices: usize, frames: usize, seed: u64) -> Scenario {
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

fn small_student(epochs: usize) -> StudentConfig {
    StudentConfig {
        hidden: vec![16, 16],
        local_epochs: epochs,
        ..StudentConfig::default()
    }
}

fn small_kd() -> KdConfig {
    KdConfig {
        teacher_hidden: vec![32, 32],
        teacher_epochs: 2,
        kd_epochs: 3,
        finetune_epochs: 2,
        ..KdConfig::default()
    }
}

fn bits(m: &ModelWeights) -> Vec<u64> {
    m.to_flat().iter().map(|v| v.to_bits()).collect()
}

// 1 -------------------------------------------------------------------------

fn criterion_1() -> Check {
    let start = Instant::now();
    let combos: Vec<Option<(f64, f64)>> = {
        let mut v = vec![None];
        for alpha in [0.0, 0.4, 1.0] {
            for t in [1.0, 10.0] {
                v.push(Some((alpha, t)));
            }
        }
        v
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for case in 0..20u64 {
        let mut rng = Streams::new(1000 + case).stream(Purpose::Split, 1, 0);
        let d = 2 + (case as usize % 4);
        let sizes = [d, 6, 5, 2];
        let model = random_model(&sizes, 77 + case);
        let n = 4 + (case as usize % 5);
        let x = random_matrix(n, d, 1.5, &mut rng);
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let spec = match combos[case as usize % combos.len()] {
            None => LossSpec::CrossEntropy,
            Some((alpha, temperature)) => LossSpec::Distill {
                teacher_logits: random_matrix(n, 2, 3.0, &mut rng),
                temperature,
                alpha,
                direction: if case % 2 == 0 {
                    KlDirection::TeacherReference
                } else {
                    KlDirection::AsWritten
                },
            },
        };
        let (loss, grads) = loss_and_gradients(&model, &x, &y, &spec).map_err(|e| e.to_string())?;
        let oracle = oracle_loss(&oracle_logits(&model, &x), &y, &spec);
        ensure((loss - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), || {
            format!("case {case}: loss {loss} vs oracle {oracle}")
        })?;
        let fd = finite_difference_check(&model, &x, &y, &spec, &grads, 1e-5, 1e-6);
        worst = worst.max(fd.max_rel_error);
        checked += fd.checked;
        skipped += fd.skipped_kinks;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-4, || format!("max relative error {worst:.3e} >= 1e-4"))?;
    ensure(skipped * 100 < checked, || format!("{skipped} coordinates sat on ReLU kinks"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "20 cases, {checked} coordinates, max rel error {worst:.2e}, {skipped} kink-skipped, {secs:.2}s"
    ))
}

// 2 -------------------------------------------------------------------------

fn criterion_2() -> Check {
    let mut rng = Streams::new(2).stream(Purpose::Split, 2, 0);
    let mut worst = 0.0f64;
    for set in 0..100u64 {
        let sizes = [rng.random_range(1..6), rng.random_range(1..8), 2];
        let count = rng.random_range(1..9);
        let models: Vec<ModelWeights> = (0..count)
            .map(|i| {
                let mut m = random_model(&sizes, set * 100 + i);
                m.scale(rng.random_range(0.1..100.0));
                m
            })
            .collect();
        let agg = aggregate(&models).map_err(|e| e.to_string())?;
        let flats: Vec<Vec<f64>> = models.iter().map(ModelWeights::to_flat).collect();
        for (j, got) in agg.to_flat().iter().enumerate() {
            let mean = flats.iter().map(|f| f[j]).sum::<f64>() / count as f64;
            let err = (got - mean).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12 * mean.abs().max(1.0), || format!("set {set} coord {j}: {got} vs {mean}"))?;
        }
        let mut shuffled = models.clone();
        for _ in 0..3 {
            shuffled.shuffle(&mut rng);
            let again = aggregate(&shuffled).map_err(|e| e.to_string())?;
            ensure(bits(&again) == bits(&agg), || format!("set {set}: permutation changed the aggregate"))?;
        }
    }
    Ok(format!("100 weight sets, max abs error {worst:.2e}, permutations bit-identical"))
}

// 3 -------------------------------------------------------------------------

fn criterion_3() -> Check {
    let scenario = small_scenario(4, 240, 3);
    let student = small_student(4);

    // (a) alpha = 1 distillation is plain local training.
    let streams = Streams::new(31);
    let teacher = ModelWeights::init(&[scenario.feature_dim(), 8, 2], &mut streams.stream(Purpose::TeacherInit, 0, 0))
        .map_err(|e| e.to_string())?;
    let kd_alpha1 = KdConfig {
        alpha: 1.0,
        kd_epochs: student.local_epochs,
        ..small_kd()
    };
    for (i, d) in scenario.devices.iter().enumerate() {
        let (local, local_log) = train_local(&d.train, i, &student, &streams).map_err(|e| e.to_string())?;
        let (kd, kd_log) =
            train_student_kd(&d.train, &teacher, i, &student, &kd_alpha1, &streams).map_err(|e| e.to_string())?;
        ensure(bits(&local) == bits(&kd), || format!("(a) device {i}: weights differ"))?;
        let same_losses = local_log.step_losses.iter().map(|v| v.to_bits()).eq(kd_log.step_losses.iter().map(|v| v.to_bits()));
        ensure(same_losses, || format!("(a) device {i}: loss trajectories differ"))?;
    }

    // (b) DP-Fed without noise and with an unreachable clip is FedAvg.
    let fed = FedConfig {
        rounds: 4,
        client_fraction: 0.5,
        local_epochs: 2,
        hidden: vec![16, 16],
        ..FedConfig::default()
    };
    let plain = run_federated(&scenario, &fed, 32).map_err(|e| e.to_string())?;
    let dp = run_federated(
        &scenario,
        &FedConfig {
            privacy: Privacy::Dp,
            noise_std: 0.0,
            clip_norm: 1e9,
            ..fed.clone()
        },
        32,
    )
    .map_err(|e| e.to_string())?;
    let diff = plain
        .global
        .to_flat()
        .iter()
        .zip(dp.global.to_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(diff <= 1e-9, || format!("(b) max weight difference {diff:.3e}"))?;

    // (c) TF-KD without fine-tuning is its stage-1 student.
    let kd0 = KdConfig {
        finetune_epochs: 0,
        ..small_kd()
    };
    let bundle = prepare_teacher(&scenario, TeacherData::SmotePooled, &kd0, 33).map_err(|e| e.to_string())?;
    let tf = run_kd_with_teacher(&scenario, KdVariant::TfKd, &bundle, &student, &kd0, 33).map_err(|e| e.to_string())?;
    let streams = Streams::new(33);
    for i in 0..scenario.devices.len() {
        let rows = bundle.pool.synthetic[i].as_ref().ok_or("(c) SMOTE failed on fixture")?;
        let (stage1, _) =
            train_student_kd(rows, &bundle.teacher, i, &student, &kd0, &streams).map_err(|e| e.to_string())?;
        ensure(bits(&stage1) == bits(&tf.students[i]), || format!("(c) device {i}: differs from stage 1"))?;
    }

    // (d) one device, everyone selected, same total epochs.
    let single = small_scenario(1, 400, 34);
    let (rounds, per_round) = (3, 2);
    let fed1 = FedConfig {
        rounds,
        client_fraction: 1.0,
        local_epochs: per_round,
        hidden: student.hidden.clone(),
        ..FedConfig::default()
    };
    let fed_out = run_federated(&single, &fed1, 35).map_err(|e| e.to_string())?;
    let local = run_local(
        &single,
        &StudentConfig {
            local_epochs: rounds * per_round,
            ..student.clone()
        },
        35,
    )
    .map_err(|e| e.to_string())?;
    ensure(bits(&fed_out.global) == bits(&local.models[0]), || "(d) FedAvg differs from Local".into())?;
    ensure(fed_out.report.devices == local.report.devices, || "(d) predictions differ".into())?;

    Ok(format!("(a) bit-exact, (b) max diff {diff:.1e}, (c) bit-exact, (d) bit-exact"))
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Check {
    let mut rng = Streams::new(4).stream(Purpose::Split, 4, 0);
    let n = 400;
    let x = random_matrix(n, 4, 3.0, &mut rng);
    let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let real = Samples::new(x, y, Origin::Real).map_err(|e| e.to_string())?;
    let mut generated = 0;
    let mut worst_spread = 0.0f64;
    for direction in [SmoteDirection::AsWritten, SmoteDirection::Interpolate] {
        let cfg = SmoteConfig {
            k: 5,
            samples_per_class: SampleCount::PerClass(2500),
            direction,
        };
        let set = generate_synthetic_dataset("fixture", &real, &cfg, &mut rng).map_err(|e| e.to_string())?;
        for (row, p) in set.samples.x.iter_rows().zip(&set.provenance) {
            let (v, w) = (real.x.row(p.seed), real.x.row(p.neighbor));
            ensure(real.y[p.seed] == real.y[p.neighbor], || "neighbour from another class".into())?;
            let rs: Vec<f64> = (0..v.len())
                .filter(|&j| (v[j] - w[j]).abs() > 1e-9)
                .map(|j| match direction {
                    SmoteDirection::AsWritten => (row[j] - v[j]) / (v[j] - w[j]),
                    SmoteDirection::Interpolate => (row[j] - v[j]) / (w[j] - v[j]),
                })
                .collect();
            let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            ensure(hi - lo < 1e-9, || format!("coordinate spread {:.3e}", hi - lo))?;
            ensure(lo >= -1e-12 && hi <= 1.0 + 1e-12, || format!("recovered r {lo} outside [0,1]"))?;
            ensure((lo - p.r).abs() < 1e-9, || "recovered r disagrees with logged r".into())?;
            worst_spread = worst_spread.max(hi - lo);
            generated += 1;
        }
    }
    ensure(generated >= 10_000, || format!("only {generated} samples"))?;

    for inst in 0..100 {
        let pts = rng.random_range(2..=200);
        let dim = rng.random_range(1..=5);
        // Integer grid points produce plenty of distance ties.
        let grid = inst % 2 == 0;
        let data: Vec<f64> = (0..pts * dim)
            .map(|_| if grid { rng.random_range(0..4) as f64 } else { rng.random::<f64>() })
            .collect();
        let m = Matrix::from_vec(pts, dim, data).unwrap();
        let q = rng.random_range(0..pts);
        let k = rng.random_range(1..pts);
        let got = k_nearest_neighbors(&m, q, k).map_err(|e| e.to_string())?;
        ensure(got == brute_knn(&m, q, k), || format!("k-NN instance {inst} disagrees with brute force"))?;
    }
    Ok(format!("{generated} samples, max r spread {worst_spread:.1e}; 100 k-NN instances match"))
}

// 5 -------------------------------------------------------------------------

fn criterion_5() -> Check {
    let scenario = small_scenario(5, 300, 5);
    let kd = small_kd();
    let bundle = prepare_teacher(&scenario, TeacherData::SmotePooled, &kd, 5).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for variant in [KdVariant::KdSmote, KdVariant::TfKd] {
        let out = run_kd_with_teacher(&scenario, variant, &bundle, &small_student(3), &kd, 5).map_err(|e| e.to_string())?;
        let real = out.audit.cloud_real_rows();
        let synth = out.audit.cloud_synthetic_rows();
        ensure(real == 0, || format!("{variant}: {real} real rows reached the cloud"))?;
        ensure(synth > 0, || format!("{variant}: audit recorded no cloud activity"))?;
        lines.push(format!("{variant}: 0 real / {synth} synthetic cloud rows"));
    }
    // The audit must be able to see real rows: KD-Scr uploads them.
    let scr = prepare_teacher(&scenario, TeacherData::RealPooled, &kd, 5).map_err(|e| e.to_string())?;
    ensure(scr.audit.cloud_real_rows() > 0, || "audit blind to real uploads".into())?;
    Ok(lines.join(", "))
}

// 6 -------------------------------------------------------------------------

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_6() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::from_json(&serde_json::json!({"profile": "synthetic"}), None).map_err(|e| e.to_string())?;
    cfg.seed = 6;
    cfg.out = tmp.path().join("a");
    let start = Instant::now();
    let first = experiment::run(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();

    let stats = &first.scenario_stats;
    ensure(stats.devices == 20 && stats.total_frames == 40_000, || "fixture is not 20 x 2000".into())?;
    let rate = stats.aggregate_frame_error_rate;
    ensure((rate - 0.3333).abs() < 0.05, || format!("aggregate error rate {rate:.4}"))?;
    let acc = |m: Method| edge_accuracy(first.report(m).expect("method ran")).unwrap();
    let local = acc(Method::Local);
    let kd_smote = acc(Method::KdSmote);
    let tf_kd = acc(Method::TfKd);
    ensure(first.reports.len() == 7, || format!("{} methods ran", first.reports.len()))?;
    ensure(local >= 0.85, || format!("Local edge accuracy {local:.4} < 0.85"))?;
    ensure(kd_smote >= local - 0.02, || format!("KD-SMOTE {kd_smote:.4} < Local {local:.4} - 0.02"))?;
    ensure(tf_kd >= local - 0.02, || format!("TF-KD {tf_kd:.4} < Local {local:.4} - 0.02"))?;
    ensure(secs < 300.0, || format!("full run took {secs:.0}s"))?;
    for m in [Method::KdSmote, Method::TfKd] {
        ensure(first.audit(m).unwrap().cloud_real_rows() == 0, || format!("{m} moved real rows to the cloud"))?;
    }

    cfg.out = tmp.path().join("b");
    experiment::run(&cfg).map_err(|e| e.to_string())?;
    let a = read_tree(&tmp.path().join("a"));
    let b = read_tree(&tmp.path().join("b"));
    ensure(a.keys().eq(b.keys()), || "runs produced different file sets".into())?;
    for (path, bytes) in &a {
        ensure(&b[path] == bytes, || format!("{} differs between identical runs", path.display()))?;
    }
    Ok(format!(
        "error rate {rate:.4}, Local {local:.4}, KD-SMOTE {kd_smote:.4}, TF-KD {tf_kd:.4}, 7 methods in {secs:.0}s, {} files byte-identical",
        a.len()
    ))
}

// 7 -------------------------------------------------------------------------

fn fixture_report(method: &str, accs: &[(usize, usize)], flip: u64) -> MethodReport {
    // accs[i] = (correct, frames) for device i; predictions are arranged to hit it.
    let mut rng = Streams::new(flip).stream(Purpose::Split, 7, 0);
    let devices = accs
        .iter()
        .enumerate()
        .map(|(i, &(correct, frames))| {
            let labels: Vec<u8> = (0..frames).map(|f| ((f * 7 + i) % 3 == 0) as u8).collect();
            let mut wrong: Vec<usize> = (0..frames).collect();
            wrong.shuffle(&mut rng);
            let mut predictions = labels.clone();
            for &f in &wrong[..frames - correct] {
                predictions[f] ^= 1;
            }
            DeviceResult::new(format!("n{i:02}"), predictions, labels, false).unwrap()
        })
        .collect();
    MethodReport {
        method: method.into(),
        devices,
        config_fingerprint: "fixture".into(),
        seed: 0,
    }
}

fn criterion_7() -> Check {
    // 10 devices x 40 frames; deltas land on and around every bucket edge.
    let base: Vec<(usize, usize)> = [20, 30, 24, 36, 16, 28, 32, 20, 40, 26].iter().map(|&c| (c, 40)).collect();
    let other: Vec<(usize, usize)> = [6, 40, 18, 38, 34, 22, 26, 30, 29, 24].iter().map(|&c| (c, 40)).collect();
    let local = fixture_report("local", &base, 1);
    let method = fixture_report("kd_smote", &other, 2);
    let third = fixture_report("dpfed", &base.iter().rev().copied().collect::<Vec<_>>(), 3);

    let table = accuracy_delta_table(&method, &local).map_err(|e| e.to_string())?;
    let mut expect = [0usize; 7];
    for (m, b) in method.devices.iter().zip(&local.devices) {
        let delta = 100.0 * (m.correct() as f64 / m.frames() as f64 - b.correct() as f64 / b.frames() as f64);
        expect[oracle_bucket(delta)] += 1;
    }
    ensure(table.counts == expect, || format!("delta table {:?} vs oracle {expect:?}", table.counts))?;

    let rates: Vec<(String, f64)> = [0.31, 0.12, 0.45, 0.12, 0.38, 0.29, 0.50, 0.05, 0.33, 0.21]
        .iter()
        .enumerate()
        .map(|(i, &r)| (format!("n{i:02}"), r))
        .collect();
    let reports = [&local, &method];
    for grouping in [Grouping::Quartile, Grouping::Fixed(vec![0.2, 0.3, 0.4])] {
        let table = error_rate_groups_from_rates(&rates, &reports, &grouping).map_err(|e| e.to_string())?;
        // Oracle: membership by explicit rule, then plain means.
        let mut ranked: Vec<(f64, String)> = rates.iter().map(|(id, r)| (*r, id.clone())).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let n_groups = match &grouping {
            Grouping::Quartile => 4,
            Grouping::Fixed(e) => e.len() + 1,
        };
        for g in 0..n_groups {
            let mut members: Vec<String> = match &grouping {
                Grouping::Quartile => ranked
                    .iter()
                    .enumerate()
                    .filter(|(rank, _)| rank * 4 / ranked.len() == g)
                    .map(|(_, (_, id))| id.clone())
                    .collect(),
                Grouping::Fixed(edges) => rates
                    .iter()
                    .filter(|(_, r)| {
                        let lower = if g == 0 { f64::NEG_INFINITY } else { edges[g - 1] };
                        let upper = if g == edges.len() { f64::INFINITY } else { edges[g] };
                        *r >= lower && *r < upper
                    })
                    .map(|(id, _)| id.clone())
                    .collect(),
            };
            members.sort();
            let got = &table.groups[g];
            ensure(got.devices == members, || format!("{grouping:?} group {g}: {:?} vs {members:?}", got.devices))?;
            for (report, (name, mean)) in reports.iter().zip(&got.edge_accuracy) {
                let accs: Vec<f64> = report
                    .devices
                    .iter()
                    .filter(|d| members.contains(&d.device_id))
                    .map(|d| d.accuracy)
                    .collect();
                let oracle = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
                ensure(name == &report.method && *mean == oracle, || {
                    format!("{grouping:?} group {g} {name}: {mean:?} vs {oracle:?}")
                })?;
            }
        }
    }

    let ens = run_ensemble("ensemble", [&local, &third, &method], "fixture".into(), 0).map_err(|e| e.to_string())?;
    let mut frames = 0;
    for (i, d) in ens.devices.iter().enumerate() {
        for f in 0..d.frames() {
            let vote = oracle_vote(
                local.devices[i].predictions[f],
                third.devices[i].predictions[f],
                method.devices[i].predictions[f],
            );
            ensure(d.predictions[f] == vote, || format!("ensemble device {i} frame {f}"))?;
            frames += 1;
        }
    }
    Ok(format!("delta buckets {expect:?}, quartile and fixed groups exact, {frames} ensemble votes exact"))
}

// 8 -------------------------------------------------------------------------

fn criterion_8() -> Verdict {
    let Ok(root) = std::env::var("EDGEKD_SC2_DIR") else {
        return Verdict::Skip("EDGEKD_SC2_DIR not set; SC2 CSVs not present".into());
    };
    let root = PathBuf::from(root);
    let load = |name: &str| -> std::result::Result<Scenario, String> {
        let schema = SchemaConfig::from_json_file(&root.join(format!("{name}_schema.json"))).map_err(|e| e.to_string())?;
        load_scenario(&root.join(name), &schema).map_err(|e| e.to_string())
    };
    let check = || -> Check {
        let scr4 = dataset_stats(&load("scr4")?);
        let scr5 = dataset_stats(&load("scr5")?);
        ensure(scr4.devices == 154, || format!("Scr4 has {} devices, expected 154", scr4.devices))?;
        ensure(scr5.devices == 408, || format!("Scr5 has {} devices, expected 408", scr5.devices))?;
        let combined = (scr4.total_errors + scr5.total_errors) as f64 / (scr4.total_frames + scr5.total_frames) as f64;
        for (name, got, want) in [
            ("Scr4", scr4.aggregate_frame_error_rate, 0.39),
            ("Scr5", scr5.aggregate_frame_error_rate, 0.30),
            ("combined", combined, 0.3333),
        ] {
            ensure((got - want).abs() <= 0.005, || format!("{name} error rate {got:.4}, expected {want} +- 0.005"))?;
        }
        Ok(format!(
            "154 / 408 devices; rates {:.4} / {:.4} / {combined:.4}",
            scr4.aggregate_frame_error_rate, scr5.aggregate_frame_error_rate
        ))
    };
    match check() {
        Ok(s) => Verdict::Pass(s),
        Err(s) => Verdict::Fail(s),
    }
}

fn verdict(c: Check) -> Verdict {
    match c {
        Ok(s) => Verdict::Pass(s),
        Err(s) => Verdict::Fail(s),
    }
}

fn main() {
    let checks: Vec<Criterion> = vec![
        (1, "gradient correctness", || verdict(criterion_1())),
        (2, "aggregation exactness", || verdict(criterion_2())),
        (3, "degenerate equivalences", || verdict(criterion_3())),
        (4, "SMOTE provenance and k-NN", || verdict(criterion_4())),
        (5, "privacy audit", || verdict(criterion_5())),
        (6, "desk-scale end-to-end run", || verdict(criterion_6())),
        (7, "metrics oracles", || verdict(criterion_7())),
        (8, "SC2 ingestion", criterion_8),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        match check() {
            Verdict::Pass(s) => println!("criterion {id} PASS: {name}: {s}"),
            Verdict::Skip(s) => println!("criterion {id} SKIP: {name}: {s}"),
            Verdict::Fail(s) => {
                println!("criterion {id} FAIL: {name}: {s}");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed or skipped");
}
