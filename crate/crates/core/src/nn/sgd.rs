//! Plain (non-private) mini-batch SGD, used for shadow models and
//! membership adversaries.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor1;

use super::{batch_mean_gradient, example_loss, per_example_gradient, LayeredModel, Loss};

#[derive(Debug, Clone, Copy)]
pub struct SgdOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: Loss,
}

/// Trains by mini-batch SGD. Each epoch shuffles the example order with the
/// caller's RNG; the trailing partial batch is kept. Deterministic for a
/// fixed RNG state.
pub fn sgd_train<R: Rng + ?Sized>(
    model: &LayeredModel,
    features: &[Tensor1],
    targets: &[Tensor1],
    opts: &SgdOptions,
    rng: &mut R,
) -> Result<LayeredModel> {
    if features.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if features.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} features vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "epochs and batch_size must be >= 1".into(),
        ));
    }
    if !(opts.learning_rate >= 0.0) {
        return Err(Error::InvalidConfig("learning rate must be >= 0".into()));
    }

    let mut trained = model.clone();
    let mut order: Vec<usize> = (0..features.len()).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(opts.batch_size) {
            let mut batch_loss = 0.0;
            let mut grads = Vec::with_capacity(chunk.len());
            for &i in chunk {
                batch_loss += example_loss(&trained, &features[i], &targets[i], opts.loss)?;
                grads.push(per_example_gradient(
                    &trained,
                    &features[i],
                    &targets[i],
                    opts.loss,
                )?);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    unit: "epoch",
                    index: epoch,
                });
            }
            let mean = batch_mean_gradient(&grads)?;
            trained.apply_scaled_update(mean.blocks(), opts.learning_rate)?;
        }
        if !trained.params_are_finite() {
            return Err(Error::Divergence {
                unit: "epoch",
                index: epoch,
            });
        }
    }
    Ok(trained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{one_hot, Activation, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let model = LayeredModel::init_random(
            vec![LayerSpec::new(2, 2, Activation::SoftmaxOutput)],
            &mut rng,
        )
        .unwrap();
        let features = vec![
            Tensor1::new(vec![1.0, 0.0]).unwrap(),
            Tensor1::new(vec![0.0, 1.0]).unwrap(),
        ];
        let targets = vec![one_hot(0, 2), one_hot(1, 2)];
        let opts = SgdOptions {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            loss: Loss::CrossEntropy,
        };
        let trained = sgd_train(&model, &features, &targets, &opts, &mut rng).unwrap();
        assert_eq!(trained.flatten_params(), model.flatten_params());
    }

    #[test]
    fn training_is_deterministic_under_a_fixed_seed() {
        let specs = vec![
            LayerSpec::new(2, 4, Activation::Tanh),
            LayerSpec::new(4, 2, Activation::SoftmaxOutput),
        ];
        let features: Vec<Tensor1> = (0..20)
            .map(|i| Tensor1::new(vec![(i % 5) as f64 * 0.3 - 0.6, (i % 3) as f64 * 0.5]).unwrap())
            .collect();
        let targets: Vec<Tensor1> = (0..20).map(|i| one_hot(i % 2, 2)).collect();
        let opts = SgdOptions {
            epochs: 4,
            batch_size: 4,
            learning_rate: 0.2,
            loss: Loss::CrossEntropy,
        };
        let run = |seed: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let model = LayeredModel::init_random(specs.clone(), &mut rng).unwrap();
            sgd_train(&model, &features, &targets, &opts, &mut rng)
                .unwrap()
                .flatten_params()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
