use super::layers::Chain;
use super::loss::{bce_grad, bce_loss};
use super::tensor::Tensor2D;
use crate::Result;

/// Central-difference gradients of an arbitrary scalar loss over a
/// parameter list. O(#params) loss evaluations; test-sized inputs only.
pub fn numeric_gradients(
    params: &[Tensor2D],
    mut loss: impl FnMut(&[Tensor2D]) -> f64,
    h: f64,
) -> Vec<Tensor2D> {
    let mut work: Vec<Tensor2D> = params.to_vec();
    let mut grads: Vec<Tensor2D> = params
        .iter()
        .map(|p| Tensor2D::zeros(p.rows(), p.cols()))
        .collect();
    for t in 0..params.len() {
        for i in 0..params[t].data().len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let up = loss(&work);
            work[t].data_mut()[i] = orig - h;
            let down = loss(&work);
            work[t].data_mut()[i] = orig;
            grads[t].data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    grads
}

/// max over entries of |ga - gn| / max(1e-8, |ga| + |gn|).
pub fn max_relative_error(analytic: &[Tensor2D], numeric: &[Tensor2D]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0_f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&ga, &gn) in a.data().iter().zip(n.data()) {
            let denom = 1e-8_f64.max(ga.abs() + gn.abs());
            worst = worst.max((ga - gn).abs() / denom);
        }
    }
    worst
}

/// Compares a caller-supplied analytic gradient against central differences.
pub fn check_against_numeric(
    params: &[Tensor2D],
    loss: impl FnMut(&[Tensor2D]) -> f64,
    analytic: &[Tensor2D],
    h: f64,
) -> f64 {
    let numeric = numeric_gradients(params, loss, h);
    max_relative_error(analytic, &numeric)
}

/// Gradient check for a chain ending in a single probability column,
/// trained with binary cross-entropy. Returns the worst relative error.
pub fn gradient_check(
    chain: &Chain,
    params: &[Tensor2D],
    input: &Tensor2D,
    aux: Option<&Tensor2D>,
    labels: &[u8],
    h: f64,
) -> Result<f64> {
    let analytic = {
        let acts = chain.forward(params, input, aux)?;
        let out = chain.output(&acts);
        let probs: Vec<f64> = (0..out.rows()).map(|r| out.get(r, 0)).collect();
        let dp = bce_grad(&probs, labels)?;
        let d_out = Tensor2D::from_vec(out.rows(), 1, dp)?;
        chain.backward(params, &acts, &d_out).params
    };
    let loss = |p: &[Tensor2D]| {
        let acts = chain.forward(p, input, aux).expect("forward in loss eval");
        let out = chain.output(&acts);
        let probs: Vec<f64> = (0..out.rows()).map(|r| out.get(r, 0)).collect();
        bce_loss(&probs, labels).expect("loss eval")
    };
    Ok(check_against_numeric(params, loss, &analytic, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::layers::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_input(rows: usize, cols: usize, seed: u64) -> Tensor2D {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor2D::zeros(rows, cols);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn dense_relu_sigmoid_chain_passes() {
        let chain = Chain::new(vec![
            LayerSpec::Dense { in_dim: 5, out_dim: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 4, out_dim: 1 },
            LayerSpec::Sigmoid,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = chain.init_params(&mut rng);
        let x = small_input(6, 5, 17);
        let labels = [1u8, 0, 1, 1, 0, 0];
        let err = gradient_check(&chain, &params, &x, None, &labels, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn conv_maxpool_chain_passes() {
        let chain = Chain::new(vec![
            LayerSpec::Conv1d { in_dim: 3, kernel_width: 2, n_filters: 4 },
            LayerSpec::Relu,
            LayerSpec::MaxOverTime,
            LayerSpec::Dense { in_dim: 4, out_dim: 1 },
            LayerSpec::Sigmoid,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = chain.init_params(&mut rng);
        let x = small_input(5, 3, 23);
        let err = gradient_check(&chain, &params, &x, None, &[1u8], 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn concat_input_chain_passes() {
        let chain = Chain::new(vec![
            LayerSpec::ConcatInput { extra_dim: 3 },
            LayerSpec::Dense { in_dim: 5, out_dim: 1 },
            LayerSpec::Sigmoid,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = chain.init_params(&mut rng);
        let x = small_input(4, 2, 31);
        let aux = small_input(4, 3, 37);
        let labels = [0u8, 1, 0, 1];
        let err = gradient_check(&chain, &params, &x, Some(&aux), &labels, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let chain = Chain::new(vec![
            LayerSpec::Dense { in_dim: 3, out_dim: 2 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 2, out_dim: 1 },
            LayerSpec::Sigmoid,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = chain.init_params(&mut rng);
        let x = small_input(4, 3, 41);
        let labels = [1u8, 0, 0, 1];

        let acts = chain.forward(&params, &x, None).unwrap();
        let out = chain.output(&acts);
        let probs: Vec<f64> = (0..out.rows()).map(|r| out.get(r, 0)).collect();
        let dp = bce_grad(&probs, &labels).unwrap();
        let d_out = Tensor2D::from_vec(out.rows(), 1, dp).unwrap();
        let mut analytic = chain.backward(&params, &acts, &d_out).params;
        // corrupt one weight gradient
        let v = analytic[0].get(0, 0);
        analytic[0].set(0, 0, v + 0.5);

        let loss = |p: &[Tensor2D]| {
            let acts = chain.forward(p, &x, None).unwrap();
            let out = chain.output(&acts);
            let probs: Vec<f64> = (0..out.rows()).map(|r| out.get(r, 0)).collect();
            bce_loss(&probs, &labels).unwrap()
        };
        let err = check_against_numeric(&params, loss, &analytic, 1e-5);
        assert!(err > 1e-2, "corruption went unnoticed: {err}");
    }
}
