//! Central finite-difference check of the analytic gradients.

use super::network::{Network, NetworkSpec};
use super::TrainError;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor, so entries where both gradients are ~0 compare by
/// absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_entry: usize,
    pub entries_checked: usize,
}

/// Builds the network from `spec` and checks it on the given batch.
pub fn gradcheck(spec: &NetworkSpec, features: &[Vec<f64>], labels: &[usize]) -> Result<GradcheckReport, TrainError> {
    let net = Network::new(spec)?;
    Ok(gradcheck_network(&net, features, labels))
}

/// `max |analytic − numeric| / max(|analytic|, |numeric|, floor)` over every
/// parameter entry.
pub fn gradcheck_network(net: &Network, features: &[Vec<f64>], labels: &[usize]) -> GradcheckReport {
    let all: Vec<usize> = (0..labels.len()).collect();
    let analytic = net.gradients(features, labels, &all).grads;
    let mut probe = net.clone();
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_entry: 0,
        entries_checked: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        for (e, &a) in grad.iter().enumerate() {
            let orig = probe.params()[p].data[e];
            probe.params_mut()[p].data[e] = orig + FD_STEP;
            let (plus, _) = probe.evaluate(features, labels);
            probe.params_mut()[p].data[e] = orig - FD_STEP;
            let (minus, _) = probe.evaluate(features, labels);
            probe.params_mut()[p].data[e] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.entries_checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = net.params()[p].name.clone();
                report.worst_entry = e;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::rng;
    use crate::trainer::network::{Init, LayerSpec};
    use rand::Rng;

    fn batch(n: usize, dim: usize, classes: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng(seed);
        let x = (0..n)
            .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let y = (0..n).map(|i| i % classes).collect();
        (x, y)
    }

    #[test]
    fn mlp_gradients_match() {
        let spec = NetworkSpec::mlp(&[2, 8, 2], LayerSpec::Tanh, 4, Init::KaimingUniform);
        let (x, y) = batch(16, 2, 2, 1);
        let rep = gradcheck(&spec, &x, &y).unwrap();
        assert!(rep.max_relative_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn zero_network_has_zero_gradients() {
        let spec = NetworkSpec::mlp(&[3, 4, 2], LayerSpec::Relu, 0, Init::KaimingUniform);
        let mut net = Network::new(&spec).unwrap();
        for p in net.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = vec![vec![0.0; 3]; 4];
        // balanced labels: p − e_y sums to zero over the batch at the head bias
        let y = vec![0, 1, 0, 1];
        let g = net.gradients(&x, &y, &[0, 1, 2, 3]);
        assert!(g.grads.iter().flatten().all(|&v| v == 0.0));
        assert!(gradcheck_network(&net, &x, &y).max_relative_error < 1e-6);
    }
}
