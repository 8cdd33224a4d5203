use rand::seq::SliceRandom;

use crate::error::{Result, VrdError};
use crate::model::{rng_from_seed, softmax_xent, AdaGradState, LabeledExample, Network};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Halve the learning rate every `epochs / 2` epochs.
    pub anneal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean pre-update training loss for each epoch.
    pub loss_history: Vec<f64>,
}

// Numerical breakdown inside a step means the parameters have run away.
fn as_divergence(e: VrdError, epoch: usize, example: usize) -> VrdError {
    match e {
        VrdError::NonFinite(_)
        | VrdError::NotPositiveDefinite(_)
        | VrdError::NonConvergence(_)
        | VrdError::Singular(_) => VrdError::Divergence { epoch, example },
        other => other,
    }
}

/// Sequential AdaGrad, one step per example, examples shuffled each epoch.
pub fn train(
    net: &mut Network,
    dataset: &[LabeledExample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(VrdError::invalid("training set is empty"));
    }
    let mut rng = rng_from_seed(opts.seed);
    let mut state = AdaGradState::new(net.param_len(), opts.learning_rate);
    let mut params = net.params_flat();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut per_example = vec![0.0; dataset.len()];
    let mut loss_history = Vec::with_capacity(opts.epochs);
    let half = (opts.epochs / 2).max(1);

    for epoch in 0..opts.epochs {
        if opts.anneal && epoch > 0 && epoch % half == 0 {
            state.learning_rate *= 0.5;
        }
        order.shuffle(&mut rng);
        for &idx in &order {
            let ex = &dataset[idx];
            let div = |e| as_divergence(e, epoch, idx);
            let (scores, caches) = net.forward(&ex.input).map_err(div)?;
            let (loss, dl) = softmax_xent(&scores, &ex.labels)?;
            if !loss.is_finite() {
                return Err(VrdError::Divergence {
                    epoch,
                    example: idx,
                });
            }
            per_example[idx] = loss;
            let grads = net.backward(&caches, &dl).map_err(div)?;
            state.step(&mut params, &grads.flat())?;
            if params.iter().any(|v| !v.is_finite()) {
                return Err(VrdError::Divergence {
                    epoch,
                    example: idx,
                });
            }
            net.set_params_flat(&params)?;
        }
        loss_history.push(per_example.iter().sum::<f64>() / dataset.len() as f64);
    }
    Ok(TrainReport { loss_history })
}

fn argmax(px: &[f64]) -> usize {
    px.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |b, (c, &v)| if v > b.1 { (c, v) } else { b },
        )
        .0
}

/// Fraction of pixels whose argmax score equals the label.
pub fn evaluate_accuracy(net: &Network, dataset: &[LabeledExample]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in dataset {
        let (scores, _) = net.forward(&ex.input)?;
        let k = scores.channels();
        for (px, &l) in scores.data().chunks_exact(k).zip(&ex.labels.data) {
            correct += (argmax(px) == l) as usize;
            total += 1;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Accuracy of taking the argmax of the raw input channels.
pub fn pointwise_argmax_accuracy(dataset: &[LabeledExample]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in dataset {
        let k = ex.input.channels();
        for (px, &l) in ex.input.data().chunks_exact(k).zip(&ex.labels.data) {
            correct += (argmax(px) == l) as usize;
            total += 1;
        }
    }
    correct as f64 / total.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::model::{gen_synthetic, parse_arch, Labels, LayerKind};

    fn opts(epochs: usize, lr: f64) -> TrainOptions {
        TrainOptions {
            epochs,
            learning_rate: lr,
            seed: 1,
            anneal: false,
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = gen_synthetic(1, 3, 8, 8, 2, 0.5).unwrap();
        let mut net = Network::build(&parse_arch("mix:3,vrd:2").unwrap(), 2, 2).unwrap();
        let before = net.clone();
        let rep = train(&mut net, &data, &opts(4, 0.0)).unwrap();
        assert_eq!(net, before);
        assert!(rep.loss_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn separable_pixels_train_monotonically() {
        // class is the sign of channel 0; a single channel mix separates it
        let mut rng = rng_from_seed(9);
        let data: Vec<LabeledExample> = (0..8)
            .map(|_| {
                let input = crate::model::random_field(&mut rng, 6, 6, 2).unwrap();
                let labels = Labels::from_fn(6, 6, |i, j| (input.get(i, j, 0) > 0.0) as usize);
                LabeledExample::new(input, labels).unwrap()
            })
            .collect();
        let mut net = Network::build(&[LayerKind::ChannelMix(2)], 2, 3).unwrap();
        let rep = train(&mut net, &data, &opts(10, 0.1)).unwrap();
        assert!(
            rep.loss_history.windows(2).all(|w| w[1] < w[0]),
            "{:?}",
            rep.loss_history
        );
    }

    #[test]
    fn divergence_is_reported() {
        let input = Field::from_vec(1, 1, 1, vec![f64::MAX]).unwrap();
        let ex = LabeledExample::new(input, Labels::from_fn(1, 1, |_, _| 0)).unwrap();
        let mut net = Network::build(&[LayerKind::ChannelMix(2)], 1, 0).unwrap();
        net.set_params_flat(&[1e300, -1e300, 0.0, 0.0]).unwrap();
        assert!(matches!(
            train(&mut net, &[ex], &opts(1, 0.1)),
            Err(VrdError::Divergence { .. })
        ));
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let data = gen_synthetic(4, 4, 8, 8, 2, 1.0).unwrap();
        let arch = parse_arch("mix:3,vrd:3,relu,mix:2").unwrap();
        let run = || {
            let mut net = Network::build(&arch, 2, 5).unwrap();
            let rep = train(&mut net, &data, &opts(3, 0.05)).unwrap();
            (net, rep)
        };
        let (n1, r1) = run();
        let (n2, r2) = run();
        assert_eq!(n1, n2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut net = Network::build(&[], 1, 0).unwrap();
        assert!(train(&mut net, &[], &opts(1, 0.1)).is_err());
    }
}
