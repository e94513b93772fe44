//! Shared test oracles.

use tgan3d::autodiff::{Tape, Tensor, Var};
use tgan3d::prng::Prng;

/// Max relative error between analytic gradients and central finite
/// differences (h = 1e-5, denominator max(1, |analytic|)) for a scalar-rooted
/// graph built by `build` over the given leaf tensors.
pub fn grad_check(leaves: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let root = build(&mut tape, &vars);
        tape.value(root).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = build(&mut tape, &vars);
    let grads = tape.backward(root).expect("backward");

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(vars[li])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        for j in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[j] += h;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - fd).abs() / a.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

/// Random tensor with entries pushed away from zero, so kinked activations
/// (relu family) are not probed at their corner.
pub fn randn_away_from_zero(prng: &mut Prng, shape: &[usize], margin: f64) -> Tensor {
    let mut t = Tensor::randn(prng, shape);
    for v in t.data_mut() {
        *v += margin * v.signum();
    }
    t
}
