//! Scratch harness for sizing the statistical acceptance setups.
//! Not part of the deliverable; deleted before release.

use lmdp_core::accountant::PrivacySpec;
use lmdp_core::clip::ClipMethod;
use lmdp_core::data::{accuracy, generate_synthetic, shuffled_split, Dataset, SyntheticKind, SyntheticSpec};
use lmdp_core::mia::{attack_target, AttackConfig};
use lmdp_core::nn::{sgd_train, Activation, LayerSpec, LayeredModel, Loss, SgdOptions};
use lmdp_core::risk::{estimate_risk_profile, AdversaryConfig, RiskProfile, ShadowConfig};
use lmdp_core::seed;
use lmdp_core::trainer::{train, LrSchedule, TrainConfig, WeightScheme};

fn overfit_spec(n: usize) -> SyntheticSpec {
    SyntheticSpec {
        kind: SyntheticKind::Blobs,
        n,
        dims: 16,
        classes: 10,
        cluster_std: 3.0,
        separation: 6.0,
        label_noise: 0.0,
    }
}

fn overfit_model_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(16, 32, Activation::Tanh),
        LayerSpec::new(32, 24, Activation::Tanh),
        LayerSpec::new(24, 16, Activation::Tanh),
        LayerSpec::new(16, 10, Activation::SoftmaxOutput),
    ]
}

fn attack_cfg() -> AttackConfig {
    AttackConfig {
        adversary: AdversaryConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.2,
            hidden_units: Some(64),
        },
        train_fraction: 0.7,
        max_per_class: None,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// criterion 7 shape: overfit non-private model, attack per layer
fn leak() {
    let mut gaps = Vec::new();
    let mut first = Vec::new();
    let mut last = Vec::new();
    for seed_v in 0..5u64 {
        let pool = generate_synthetic(&overfit_spec(1000), seed::derive_seed(seed_v, "pool")).unwrap();
        let (members, non_members) = shuffled_split(&pool, 500, seed::derive_seed(seed_v, "split")).unwrap();
        let mut rng = seed::derive_rng(seed_v, "init");
        let model = LayeredModel::init_random(overfit_model_specs(), &mut rng).unwrap();
        let opts = SgdOptions { epochs: 250, batch_size: 32, learning_rate: 0.25, loss: Loss::CrossEntropy };
        let mut train_rng = seed::derive_rng(seed_v, "train");
        let t0 = std::time::Instant::now();
        let trained = sgd_train(&model, members.features(), &members.one_hot_targets(), &opts, &mut train_rng).unwrap();
        let train_acc = accuracy(&trained, &members).unwrap();
        let test_acc = accuracy(&trained, &non_members).unwrap();
        let report = attack_target(&trained, &members, &non_members, &attack_cfg(), seed_v).unwrap();
        println!(
            "seed {}: train {:.3} test {:.3} accs {:?} ({:?})",
            seed_v, train_acc, test_acc,
            report.per_layer_accuracy.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t0.elapsed()
        );
        let l = report.per_layer_accuracy.len();
        gaps.push(report.per_layer_accuracy[l - 1] - report.per_layer_accuracy[0]);
        first.push(report.per_layer_accuracy[0]);
        last.push(report.per_layer_accuracy[l - 1]);
    }
    println!("median gap deepest-shallowest: {:.4}", median(gaps));
    println!("median shallow {:.4} deep {:.4}", median(first), median(last));
}

// risk-estimation trend: overfit shadow -> ER decreasing with depth
fn risk_trend() {
    for (std_v, noise, epochs) in [(3.0, 0.0, 250)] {
        let mut shallow = Vec::new();
        let mut deep = Vec::new();
        for seed_v in 0..5u64 {
            let spec = SyntheticSpec { cluster_std: std_v, label_noise: noise, ..overfit_spec(1000) };
            let shadow_data = generate_synthetic(&spec, seed::derive_seed(seed_v, "shadow")).unwrap();
            let mut rng = seed::derive_rng(seed_v, "sm-init");
            let shadow_model = LayeredModel::init_random(overfit_model_specs(), &mut rng).unwrap();
            let cfg = ShadowConfig {
                split_ratio: 0.5,
                epochs,
                batch_size: 32,
                learning_rate: 0.3,
                adversary: AdversaryConfig { epochs: 40, batch_size: 32, learning_rate: 0.2, hidden_units: None },
                seed: seed_v,
            };
            let t0 = std::time::Instant::now();
            let est = estimate_risk_profile(&shadow_model, &shadow_data, &cfg).unwrap();
            println!(
                "seed {}: shadow acc {:.3} er {:?} ({:?})",
                seed_v, est.shadow_train_accuracy,
                est.profile.rates().iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                t0.elapsed()
            );
            shallow.push(est.profile.rates()[0]);
            deep.push(*est.profile.rates().last().unwrap());
        }
        println!("std {} noise {}: median shallow {:.4} deep {:.4}", std_v, noise, median(shallow), median(deep));
    }
}

fn dp_cfg(method: ClipMethod, scheme: WeightScheme, q: f64, t: u64, seed_v: u64, eta: f64) -> TrainConfig {
    TrainConfig {
        method,
        weight_scheme: scheme,
        privacy: PrivacySpec { epsilon: 8.0, delta: 1e-5, q, iterations: t },
        learning_rate: LrSchedule::Constant { rate: eta },
        seed: seed_v,
        eval_every: 0,
        sigma_override: None,
    }
}

// criterion 8 shape: DP-trained (eps=8) on the overfit setup, LM vs standard
fn peak_reduction() {
    let mut lm_peaks = Vec::new();
    let mut std_peaks = Vec::new();
    for seed_v in 0..5u64 {
        let pool = generate_synthetic(&overfit_spec(1000), seed::derive_seed(seed_v, "pool")).unwrap();
        let (members, non_members) = shuffled_split(&pool, 500, seed::derive_seed(seed_v, "split")).unwrap();
        let shadow_data = generate_synthetic(&overfit_spec(1000), seed::derive_seed(seed_v, "shadow")).unwrap();
        let mut rng = seed::derive_rng(seed_v, "sm-init");
        let shadow_model = LayeredModel::init_random(overfit_model_specs(), &mut rng).unwrap();
        let shadow_cfg = ShadowConfig {
            split_ratio: 0.5,
            epochs: 250,
            batch_size: 32,
            learning_rate: 0.15,
            adversary: AdversaryConfig { epochs: 40, batch_size: 32, learning_rate: 0.2, hidden_units: Some(64) },
            seed: seed_v,
        };
        let est = estimate_risk_profile(&shadow_model, &shadow_data, &shadow_cfg).unwrap();

        let mut rng = seed::derive_rng(seed_v, "target-init");
        let target0 = LayeredModel::init_random(overfit_model_specs(), &mut rng).unwrap();

        let t0 = std::time::Instant::now();
        let lm = train(
            &target0, &members, None,
            &dp_cfg(ClipMethod::Layerwise { c: 1.0 }, WeightScheme::Heuristic { emphasis: 3.0 }, 0.1, 400, seed_v, 0.3),
            Some(&est.profile),
        ).unwrap();
        let st = train(
            &target0, &members, None,
            &dp_cfg(ClipMethod::Standard { c: 1.0 }, WeightScheme::Lagrange, 0.1, 400, seed_v, 0.3),
            None,
        ).unwrap();
        let lm_report = attack_target(&lm.model, &members, &non_members, &attack_cfg(), seed_v).unwrap();
        let st_report = attack_target(&st.model, &members, &non_members, &attack_cfg(), seed_v).unwrap();
        let lm_acc = accuracy(&lm.model, &non_members).unwrap();
        let st_acc = accuracy(&st.model, &non_members).unwrap();
        println!(
            "seed {}: sigma {:.3} lm peak {:.3} (acc {:.3}) std peak {:.3} (acc {:.3}) lm_accs {:?} std_accs {:?} ({:?})",
            seed_v, lm.sigma, lm_report.peak_accuracy, lm_acc, st_report.peak_accuracy, st_acc,
            lm_report.per_layer_accuracy.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            st_report.per_layer_accuracy.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t0.elapsed()
        );
        lm_peaks.push(lm_report.peak_accuracy);
        std_peaks.push(st_report.peak_accuracy);
    }
    println!("median lm {:.4} std {:.4}", median(lm_peaks), median(std_peaks));
}

// criterion 9/10 shape: utility parity + bias trend on easy blobs
fn utility() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::Blobs, n: 2000, dims: 2, classes: 2,
        cluster_std: 1.0, separation: 6.0, label_noise: 0.0,
    };
    let model_specs = vec![
        LayerSpec::new(2, 16, Activation::Relu),
        LayerSpec::new(16, 2, Activation::SoftmaxOutput),
    ];
    let mut acc_by_method: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    let mut first_bias = Vec::new();
    let mut last_bias = Vec::new();
    let mut lagr_mean = Vec::new();
    let mut heur_mean = Vec::new();
    for seed_v in 0..5u64 {
        let pool = generate_synthetic(&spec, seed::derive_seed(seed_v, "pool")).unwrap();
        let (tr, te) = shuffled_split(&pool, 1500, seed::derive_seed(seed_v, "split")).unwrap();
        let shadow_data = generate_synthetic(&spec, seed::derive_seed(seed_v, "shadow")).unwrap();
        let mut rng = seed::derive_rng(seed_v, "sm-init");
        let shadow_model = LayeredModel::init_random(model_specs.clone(), &mut rng).unwrap();
        let shadow_cfg = ShadowConfig {
            split_ratio: 0.5, epochs: 40, batch_size: 32, learning_rate: 0.2,
            adversary: AdversaryConfig { epochs: 25, batch_size: 32, learning_rate: 0.3, hidden_units: None },
            seed: seed_v,
        };
        let est = estimate_risk_profile(&shadow_model, &shadow_data, &shadow_cfg).unwrap();
        let mut rng = seed::derive_rng(seed_v, "target-init");
        let target0 = LayeredModel::init_random(model_specs.clone(), &mut rng).unwrap();
        let t0 = std::time::Instant::now();
        let runs: Vec<(&str, ClipMethod, WeightScheme, Option<&RiskProfile>)> = vec![
            ("layerwise", ClipMethod::Layerwise { c: 1.0 }, WeightScheme::Heuristic { emphasis: 3.0 }, Some(&est.profile)),
            ("lagrange", ClipMethod::Layerwise { c: 1.0 }, WeightScheme::Lagrange, None),
            ("standard", ClipMethod::Standard { c: 1.0 }, WeightScheme::Lagrange, None),
            ("auto_s", ClipMethod::AutoS { r_stab: 0.01 }, WeightScheme::Lagrange, None),
            ("psac", ClipMethod::Psac { c: 1.0, r_stab: 0.01 }, WeightScheme::Lagrange, None),
        ];
        for (name, method, scheme, risks) in runs {
            let out = train(&target0, &tr, None, &dp_cfg(method, scheme, 0.05, 300, seed_v, 0.25), risks).unwrap();
            let acc = accuracy(&out.model, &te).unwrap();
            acc_by_method.entry(name).or_default().push(acc);
            let biases: Vec<f64> = out.logs.iter().filter(|l| l.batch_size > 0).map(|l| l.bias_norm).collect();
            let k = (biases.len() / 10).max(1);
            let fm = biases[..k].iter().sum::<f64>() / k as f64;
            let lm_ = biases[biases.len() - k..].iter().sum::<f64>() / k as f64;
            let mean_all = biases.iter().sum::<f64>() / biases.len() as f64;
            if name == "layerwise" {
                first_bias.push(fm);
                last_bias.push(lm_);
                heur_mean.push(mean_all);
            }
            if name == "lagrange" {
                lagr_mean.push(mean_all);
            }
        }
        println!("seed {} done ({:?})", seed_v, t0.elapsed());
    }
    for (name, accs) in &acc_by_method {
        println!("{}: median acc {:.4} {:?}", name, median(accs.clone()), accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    }
    println!("bias first10% median {:.4} last10% median {:.4}", median(first_bias), median(last_bias));
    println!("mean bias heuristic {:.4} lagrange {:.4}", median(heur_mean), median(lagr_mean));
}

fn diag() {
    for std_v in [3.0f64, 4.0, 5.0] {
        for epochs in [150usize, 300] {
            let mut gaps = Vec::new();
            let mut deep_accs = Vec::new();
            let mut shallow_accs = Vec::new();
            for seed_v in 0..3u64 {
                let spec = SyntheticSpec { cluster_std: std_v, ..overfit_spec(1000) };
                let pool = generate_synthetic(&spec, seed::derive_seed(seed_v, "pool")).unwrap();
                let (members, non_members) = shuffled_split(&pool, 500, seed::derive_seed(seed_v, "split")).unwrap();
                let mut rng = seed::derive_rng(seed_v, "init");
                let model = LayeredModel::init_random(overfit_model_specs(), &mut rng).unwrap();
                let opts = SgdOptions { epochs, batch_size: 32, learning_rate: 0.15, loss: Loss::CrossEntropy };
                let mut train_rng = seed::derive_rng(seed_v, "train");
                let trained = sgd_train(&model, members.features(), &members.one_hot_targets(), &opts, &mut train_rng).unwrap();
                let train_acc = accuracy(&trained, &members).unwrap();
                let test_acc = accuracy(&trained, &non_members).unwrap();
                let maxp = |ds: &Dataset| -> f64 {
                    let mut s = 0.0;
                    for x in ds.features() {
                        let out = trained.forward(x).unwrap();
                        s += out.as_slice().iter().cloned().fold(0.0, f64::max);
                    }
                    s / ds.len() as f64
                };
                let report = attack_target(&trained, &members, &non_members, &attack_cfg(), seed_v).unwrap();
                let l = report.per_layer_accuracy.len();
                gaps.push(report.per_layer_accuracy[l-1] - report.per_layer_accuracy[0]);
                deep_accs.push(report.per_layer_accuracy[l-1]);
                shallow_accs.push(report.per_layer_accuracy[0]);
                if seed_v == 0 {
                    println!("  std {} epochs {}: train {:.3} test {:.3} maxp member {:.3} non {:.3} accs {:?}",
                        std_v, epochs, train_acc, test_acc, maxp(&members), maxp(&non_members),
                        report.per_layer_accuracy.iter().map(|a| (a*100.0).round()/100.0).collect::<Vec<_>>());
                }
            }
            println!("std {} epochs {}: median gap {:.3} deep {:.3} shallow {:.3}",
                std_v, epochs, median(gaps), median(deep_accs), median(shallow_accs));
        }
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "leak".into());
    match which.as_str() {
        "leak" => leak(),
        "diag" => diag(),
        "risk" => risk_trend(),
        "peak" => peak_reduction(),
        "utility" => utility(),
        other => eprintln!("unknown: {}", other),
    }
}
