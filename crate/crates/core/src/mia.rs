//! IR-level membership-inference evaluation of trained models.
//!
//! For every layer, a balanced member/non-member pool is split into attack
//! train and eval parts; the attack model (same shape as the risk-estimation
//! adversary) is fit on the train part and reported on the held-out part.
//! The headline figure is the peak accuracy across layers.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::LayeredModel;
use crate::risk::{
    error_rate, extract_irs, train_adversary, AdversaryConfig, AdversaryDataset, AdversaryRow,
    LayerIrs,
};
use crate::seed;

const MIN_PER_CLASS: usize = 20;

/// Attack-evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub adversary: AdversaryConfig,
    /// Fraction of the balanced pool used to fit the attack model; the rest
    /// is the held-out evaluation part.
    pub train_fraction: f64,
    /// Optional cap on the balanced pool size per class.
    #[serde(default)]
    pub max_per_class: Option<usize>,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.adversary.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.max_per_class == Some(0) {
            return Err(Error::InvalidConfig("max_per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-layer held-out attack accuracies and the across-layer peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub per_layer_accuracy: Vec<f64>,
    pub peak_accuracy: f64,
    /// 1-based index of the peak layer.
    pub peak_layer: usize,
    pub seed: u64,
    pub members_used: usize,
    pub non_members_used: usize,
}

/// First-maximum rule over per-layer accuracies; returns (1-based layer,
/// value).
pub(crate) fn peak(per_layer: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    for i in 1..per_layer.len() {
        if per_layer[i] > per_layer[best] {
            best = i;
        }
    }
    (best + 1, per_layer[best])
}

fn balanced_indices(
    members: usize,
    non_members: usize,
    cap: Option<usize>,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut take = members.min(non_members);
    if let Some(cap) = cap {
        take = take.min(cap);
    }
    let mut m: Vec<usize> = (0..members).collect();
    let mut n: Vec<usize> = (0..non_members).collect();
    m.shuffle(rng);
    n.shuffle(rng);
    m.truncate(take);
    n.truncate(take);
    (m, n)
}

fn split_positions(
    count: usize,
    train_fraction: f64,
    rng: &mut rand_chacha::ChaCha20Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let cut = ((count as f64) * train_fraction).floor() as usize;
    let train = order[..cut].to_vec();
    let eval = order[cut..].to_vec();
    (train, eval)
}

fn rows_for(irs: &[crate::tensor::Tensor1], positions: &[usize], member: bool) -> Vec<AdversaryRow> {
    positions
        .iter()
        .map(|p| AdversaryRow {
            ir: irs[*p].clone(),
            member,
        })
        .collect()
}

/// Attacks every layer of the target and assembles the report.
///
/// Members and non-members must be disjoint pools from the same
/// distribution; the larger side is subsampled so both attack datasets are
/// exactly balanced and 0.5 is the correct null accuracy.
pub fn attack_target(
    target: &LayeredModel,
    members: &Dataset,
    non_members: &Dataset,
    cfg: &AttackConfig,
    attack_seed: u64,
) -> Result<AttackReport> {
    cfg.validate()?;
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let mut balance_rng = seed::derive_rng(attack_seed, "mia/balance");
    let (m_idx, n_idx) = balanced_indices(
        members.len(),
        non_members.len(),
        cfg.max_per_class,
        &mut balance_rng,
    );
    let per_class = m_idx.len();
    if per_class < MIN_PER_CLASS {
        return Err(Error::InsufficientData(format!(
            "balanced pool has {} examples per class, need at least {}",
            per_class, MIN_PER_CLASS
        )));
    }
    let member_pool = members.subset(&m_idx);
    let non_member_pool = non_members.subset(&n_idx);
    let irs: Vec<LayerIrs> = extract_irs(target, &member_pool, &non_member_pool)?;

    // one stratified train/eval split shared by every layer; attack-train and
    // attack-eval rows are disjoint by construction
    let mut split_rng = seed::derive_rng(attack_seed, "mia/split");
    let (m_train, m_eval) = split_positions(per_class, cfg.train_fraction, &mut split_rng);
    let (n_train, n_eval) = split_positions(per_class, cfg.train_fraction, &mut split_rng);
    if m_train.is_empty() || m_eval.is_empty() {
        return Err(Error::InsufficientData(
            "train/eval split left an empty side".into(),
        ));
    }

    let per_layer_accuracy: Vec<f64> = irs
        .par_iter()
        .enumerate()
        .map(|(l, layer_irs)| -> Result<f64> {
            let mut train_rows = rows_for(&layer_irs.members, &m_train, true);
            train_rows.extend(rows_for(&layer_irs.non_members, &n_train, false));
            let train_ds = AdversaryDataset::new(l, train_rows)?;
            let layer_seed = seed::derive_seed(attack_seed, &format!("mia/adversary/{}", l));
            let attack_model = train_adversary(&train_ds, &cfg.adversary, layer_seed)?;

            let mut eval_rows = rows_for(&layer_irs.members, &m_eval, true);
            eval_rows.extend(rows_for(&layer_irs.non_members, &n_eval, false));
            let eval_ds = AdversaryDataset::new(l, eval_rows)?;
            Ok(1.0 - error_rate(&attack_model, &eval_ds)?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let (peak_layer, peak_accuracy) = peak(&per_layer_accuracy);
    Ok(AttackReport {
        per_layer_accuracy,
        peak_accuracy,
        peak_layer,
        seed: attack_seed,
        members_used: per_class,
        non_members_used: per_class,
    })
}

/// One row of the method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub method: String,
    pub peak_accuracy: f64,
    pub peak_layer: usize,
    /// Set on every method attaining the lowest peak.
    pub best: bool,
}

/// Ranks methods by peak accuracy ascending (name order breaks ties) and
/// flags the minimum.
pub fn compare_methods(reports: &[(String, AttackReport)]) -> Result<Vec<RankedMethod>> {
    if reports.len() < 2 {
        return Err(Error::InvalidConfig(
            "method comparison needs at least two reports".into(),
        ));
    }
    let layers = reports[0].1.per_layer_accuracy.len();
    if reports
        .iter()
        .any(|(_, r)| r.per_layer_accuracy.len() != layers)
    {
        return Err(Error::ShapeMismatch(
            "attack reports cover different layer counts".into(),
        ));
    }
    let mut rows: Vec<RankedMethod> = reports
        .iter()
        .map(|(name, r)| RankedMethod {
            method: name.clone(),
            peak_accuracy: r.peak_accuracy,
            peak_layer: r.peak_layer,
            best: false,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.peak_accuracy
            .total_cmp(&b.peak_accuracy)
            .then_with(|| a.method.cmp(&b.method))
    });
    let min = rows[0].peak_accuracy;
    for row in &mut rows {
        row.best = row.peak_accuracy == min;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticKind, SyntheticSpec};
    use crate::nn::{Activation, LayerSpec};

    fn blobs(n: usize, seed: u64) -> Dataset {
        generate_synthetic(
            &SyntheticSpec {
                kind: SyntheticKind::Blobs,
                n,
                dims: 2,
                classes: 2,
                cluster_std: 1.5,
                separation: 4.0,
                label_noise: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    fn attack_cfg() -> AttackConfig {
        AttackConfig {
            adversary: AdversaryConfig {
                epochs: 20,
                batch_size: 32,
                learning_rate: 0.3,
                hidden_units: None,
            },
            train_fraction: 0.7,
            max_per_class: None,
        }
    }

    fn random_target(seed: u64) -> LayeredModel {
        let mut rng = seed::derive_rng(seed, "test/target");
        LayeredModel::init_random(
            vec![
                LayerSpec::new(2, 8, Activation::Relu),
                LayerSpec::new(8, 4, Activation::Tanh),
                LayerSpec::new(4, 2, Activation::SoftmaxOutput),
            ],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn peak_picks_the_maximum() {
        assert_eq!(peak(&[0.57, 0.63, 0.68]), (3, 0.68));
        assert_eq!(peak(&[0.7]), (1, 0.7));
        assert_eq!(peak(&[0.6, 0.6]), (1, 0.6));
    }

    #[test]
    fn untrained_target_attacks_sit_near_chance() {
        let mut peaks = Vec::new();
        for seed_v in 0..5u64 {
            let target = random_target(seed_v);
            let members = blobs(120, 100 + seed_v);
            let non_members = blobs(120, 200 + seed_v);
            let report =
                attack_target(&target, &members, &non_members, &attack_cfg(), seed_v).unwrap();
            assert_eq!(report.per_layer_accuracy.len(), 3);
            assert_eq!(report.members_used, report.non_members_used);
            for acc in &report.per_layer_accuracy {
                assert!((0.0..=1.0).contains(acc));
            }
            let mut mean = 0.0;
            for acc in &report.per_layer_accuracy {
                mean += acc / 3.0;
            }
            peaks.push(mean);
        }
        peaks.sort_by(f64::total_cmp);
        assert!(
            (peaks[2] - 0.5).abs() <= 0.05,
            "median mean accuracy {} strays from chance",
            peaks[2]
        );
    }

    #[test]
    fn unbalanced_pools_are_subsampled_to_parity() {
        let target = random_target(9);
        let members = blobs(60, 1);
        let non_members = blobs(25, 2);
        let report = attack_target(&target, &members, &non_members, &attack_cfg(), 3).unwrap();
        assert_eq!(report.members_used, 25);
        assert_eq!(report.non_members_used, 25);
    }

    #[test]
    fn tiny_pools_are_rejected() {
        let target = random_target(10);
        let members = blobs(30, 1);
        let non_members = blobs(10, 2);
        assert!(matches!(
            attack_target(&target, &members, &non_members, &attack_cfg(), 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn attack_is_deterministic_under_seed() {
        let target = random_target(11);
        let members = blobs(80, 5);
        let non_members = blobs(80, 6);
        let a = attack_target(&target, &members, &non_members, &attack_cfg(), 42).unwrap();
        let b = attack_target(&target, &members, &non_members, &attack_cfg(), 42).unwrap();
        assert_eq!(a, b);
    }

    fn report_with_peak(accs: &[f64]) -> AttackReport {
        let (peak_layer, peak_accuracy) = peak(accs);
        AttackReport {
            per_layer_accuracy: accs.to_vec(),
            peak_accuracy,
            peak_layer,
            seed: 0,
            members_used: 50,
            non_members_used: 50,
        }
    }

    #[test]
    fn comparison_flags_the_lowest_peak() {
        let reports = vec![
            ("standard".to_string(), report_with_peak(&[0.64, 0.698])),
            ("auto_s".to_string(), report_with_peak(&[0.65, 0.707])),
            ("psac".to_string(), report_with_peak(&[0.63, 0.694])),
            ("layerwise".to_string(), report_with_peak(&[0.66, 0.679])),
        ];
        let ranked = compare_methods(&reports).unwrap();
        assert_eq!(ranked[0].method, "layerwise");
        assert!(ranked[0].best);
        assert!(ranked[1..].iter().all(|r| !r.best));
        assert!((ranked[0].peak_accuracy - 0.679).abs() < 1e-12);
    }

    #[test]
    fn ties_flag_both_methods_in_name_order() {
        let reports = vec![
            ("beta".to_string(), report_with_peak(&[0.6])),
            ("alpha".to_string(), report_with_peak(&[0.6])),
        ];
        let ranked = compare_methods(&reports).unwrap();
        assert_eq!(ranked[0].method, "alpha");
        assert_eq!(ranked[1].method, "beta");
        assert!(ranked[0].best && ranked[1].best);
    }

    #[test]
    fn mismatched_layer_counts_are_not_comparable() {
        let reports = vec![
            ("a".to_string(), report_with_peak(&[0.6])),
            ("b".to_string(), report_with_peak(&[0.6, 0.7])),
        ];
        assert!(matches!(
            compare_methods(&reports),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
