use crate::data::LabeledDataset;
use crate::error::Result;
use crate::tensor::{
    model_forward, softmax_cross_entropy, ModelParams, NetworkSpec, StatsMode, StatsSet,
};

/// Accuracy and mean loss of a model on a dataset, using the supplied
/// (moving-average) statistics for every batch-norm layer. Argmax ties
/// break toward the lowest class index.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ModelParams,
    stats: &StatsSet,
    dataset: &LabeledDataset,
) -> Result<(f64, f64)> {
    let (logits, _) = model_forward(
        spec,
        params,
        &dataset.samples.view(),
        StatsMode::Moving(stats),
    )?;
    let (loss, _) = softmax_cross_entropy(&logits.view(), &dataset.labels)?;
    let mut correct = 0usize;
    for (row, &label) in logits.outer_iter().zip(&dataset.labels) {
        let mut best = 0usize;
        let mut best_value = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_value {
                best_value = v;
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok((correct as f64 / dataset.len() as f64, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian;
    use crate::tensor::{LayerParams, NetworkSpec, StatsSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn untrained_ten_class_model_is_near_chance() {
        let ds = synth_gaussian(10, 100, 12, 3).unwrap();
        let spec = NetworkSpec::bn_mlp(&[12, 8, 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = ModelParams::init(&spec, 1e-5, &mut rng);
        let stats = StatsSet::identity(&spec);
        let (acc, _) = evaluate(&spec, &params, &stats, &ds).unwrap();
        assert!(
            (acc - 0.1).abs() < 0.05,
            "untrained accuracy {acc} not near chance"
        );
    }

    #[test]
    fn perfect_margin_model_scores_one() {
        // Two clearly separated 1-d classes and a hand-built perfect
        // classifier: logit_0 = -x, logit_1 = +x.
        let samples = ndarray::array![[-3.0], [-2.5], [2.5], [3.0]];
        let ds = LabeledDataset::new(samples, vec![0, 0, 1, 1], 2).unwrap();
        let spec = NetworkSpec::plain_mlp(&[1, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(&spec, 1e-5, &mut rng);
        if let LayerParams::Dense(d) = &mut params.layers[0] {
            d.weights[[0, 0]] = -1.0;
            d.weights[[1, 0]] = 1.0;
            d.bias.fill(0.0);
        }
        let stats = StatsSet::identity(&spec);
        let (acc, _) = evaluate(&spec, &params, &stats, &ds).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn uniform_logits_loss_is_ln_class_count() {
        let ds = synth_gaussian(10, 20, 6, 4).unwrap();
        let spec = NetworkSpec::plain_mlp(&[6, 10]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(&spec, 1e-5, &mut rng);
        if let LayerParams::Dense(d) = &mut params.layers[0] {
            d.weights.fill(0.0);
            d.bias.fill(0.0);
        }
        let stats = StatsSet::identity(&spec);
        let (_, loss) = evaluate(&spec, &params, &stats, &ds).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }
}
