use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for relative errors so that near-zero gradients are
/// compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked_params: usize,
    pub max_param_rel_error: f64,
    pub max_input_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_param_rel_error.max(self.max_input_rel_error)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Relative error of `analytic` against central differences. When step `h`
/// straddles a ReLU kink the estimate is off by O(1); a retry at `h / 100`
/// then agrees, while a wrong analytic gradient fails at both steps.
pub fn kink_tolerant_error<F>(analytic: f64, h: f64, mut central: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let e = relative_error(analytic, central(h)?);
    if e <= KINK_RETRY_THRESHOLD {
        return Ok(e);
    }
    Ok(e.min(relative_error(analytic, central(h / 100.0)?)))
}

const KINK_RETRY_THRESHOLD: f64 = 1e-6;

/// Compare backpropagated gradients with central differences of step `step`.
///
/// `loss` maps a network output to a scalar loss and its gradient. At most
/// `max_params` parameters are probed, evenly strided over the flat vector;
/// every input coordinate is probed.
pub fn grad_check<F>(net: &mut Network, input: &Tensor, loss: F, step: f64, tolerance: f64, max_params: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> (f64, Tensor),
{
    net.zero_grad();
    let y = net.forward(input)?;
    let (_, dy) = loss(&y);
    let dx = net.backward(&dy)?;
    let analytic = net.grads().to_vec();

    let n = net.num_params();
    let stride = match max_params {
        Some(m) if m > 0 && m < n => n.div_ceil(m),
        _ => 1,
    };
    let mut max_param: f64 = 0.0;
    let mut checked = 0;
    for i in (0..n).step_by(stride) {
        let orig = net.params()[i];
        let e = kink_tolerant_error(analytic[i], step, |h| {
            net.params_mut()[i] = orig + h;
            let lp = loss(&net.predict(input)?).0;
            net.params_mut()[i] = orig - h;
            let lm = loss(&net.predict(input)?).0;
            net.params_mut()[i] = orig;
            Ok((lp - lm) / (2.0 * h))
        })?;
        max_param = max_param.max(e);
        checked += 1;
    }

    let mut max_input: f64 = 0.0;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = input.data()[i];
        let e = kink_tolerant_error(dx.data()[i], step, |h| {
            probe.data_mut()[i] = orig + h;
            let lp = loss(&net.predict(&probe)?).0;
            probe.data_mut()[i] = orig - h;
            let lm = loss(&net.predict(&probe)?).0;
            probe.data_mut()[i] = orig;
            Ok((lp - lm) / (2.0 * h))
        })?;
        max_input = max_input.max(e);
    }
    net.zero_grad();
    Ok(GradCheckReport {
        checked_params: checked,
        max_param_rel_error: max_param,
        max_input_rel_error: max_input,
        tolerance,
    })
}

/// Squared-error loss against a fixed target, for gradient checks.
pub fn squared_error_loss(target: &Tensor) -> impl Fn(&Tensor) -> (f64, Tensor) + '_ {
    move |y: &Tensor| {
        let mut grad = y.clone();
        let mut l = 0.0;
        for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
            let r = *g - t;
            l += 0.5 * r * r;
            *g = r;
        }
        (l, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::{Activation, LayerSpec, NetworkSpec};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dense_and_conv_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let spec = NetworkSpec {
                input_shape: vec![7, 3],
                layers: vec![
                    LayerSpec::Conv { filters: 3, height: 5, width: 1 },
                    LayerSpec::Activation { activation: Activation::Relu },
                    LayerSpec::Dense { units: 6 },
                    LayerSpec::Activation { activation: Activation::Relu },
                    LayerSpec::Dense { units: 4 },
                    LayerSpec::Activation { activation: Activation::Exp },
                ],
            };
            let mut net = Network::new(spec, &mut rng).unwrap();
            let x = rand_tensor(&mut rng, vec![3, 7, 3]);
            let t = rand_tensor(&mut rng, vec![3, 4]);
            let report = grad_check(&mut net, &x, squared_error_loss(&t), 1e-5, 1e-4, None).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::new(NetworkSpec::mlp(3, &[4], 2, Activation::Identity), &mut rng).unwrap();
        let x = rand_tensor(&mut rng, vec![2, 3]);
        let t = rand_tensor(&mut rng, vec![2, 2]);
        // Report a doubled gradient: the check must fail.
        let loss = |y: &Tensor| {
            let (l, mut g) = squared_error_loss(&t)(y);
            g.data_mut().iter_mut().for_each(|v| *v *= 2.0);
            (l, g)
        };
        assert!(!grad_check(&mut net, &x, loss, 1e-5, 1e-4, None).unwrap().passed());
    }

    #[test]
    fn kink_retry_does_not_hide_wrong_gradients() {
        let relu = |x: f64| x.max(0.0);
        let x0 = 3e-6;
        let central = |h: f64| Ok((relu(x0 + h) - relu(x0 - h)) / (2.0 * h));
        assert!(relative_error(1.0, central(1e-5).unwrap()) > 0.1);
        assert!(kink_tolerant_error(1.0, 1e-5, central).unwrap() < 1e-9);
        assert!(kink_tolerant_error(0.5, 1e-5, central).unwrap() > 0.1);
    }
}
