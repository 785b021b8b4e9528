//! Central finite differences against the analytic backward pass, op by op.

use ctma_autograd::{ConvGeom, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks d f / d inputs[k] for every k with central differences.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars);
    let grads = g.backward(loss).unwrap();
    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
        f(&g, &vars).value().item()
    };
    let h = 1e-6;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("gradient present");
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (a - numeric).abs() / scale < 1e-5,
                "input {k} element {i}: analytic {a} numeric {numeric}"
            );
        }
    }
}

/// Weighted sum with fixed pseudo-random coefficients, so every output
/// element contributes a distinct amount.
fn probe<'g>(g: &'g Graph<f64>, v: Var<'g, f64>) -> Var<'g, f64> {
    let n = v.value().numel();
    let w = Tensor::new(v.shape(), (0..n).map(|i| ((i * 7919 % 101) as f64) / 50.0 - 1.0).collect()).unwrap();
    v.mul(&g.constant(w)).unwrap().sum()
}

#[test]
fn planar_conv_with_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(&[2, 3, 5, 6], &mut rng), random(&[4, 3, 3, 3], &mut rng), random(&[4], &mut rng)];
    check(inputs, |g, v| probe(g, v[0].conv(&v[1], Some(&v[2]), ConvGeom::planar(3, 1, 1)).unwrap()));
}

#[test]
fn strided_planar_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = vec![random(&[1, 2, 8, 8], &mut rng), random(&[3, 2, 7, 7], &mut rng)];
    check(inputs, |g, v| probe(g, v[0].conv(&v[1], None, ConvGeom::planar(7, 2, 3)).unwrap()));
}

#[test]
fn volumetric_conv_quartering_and_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&[1, 2, 3, 8, 8], &mut rng), random(&[2, 2, 3, 9, 9], &mut rng)];
    check(inputs, |g, v| {
        probe(g, v[0].conv(&v[1], None, ConvGeom::volumetric([3, 9, 9], [1, 4, 4], [1, 4, 4])).unwrap())
    });
    let inputs = vec![random(&[2, 3, 2, 3, 3], &mut rng), random(&[4, 3, 1, 1, 1], &mut rng), random(&[4], &mut rng)];
    check(inputs, |g, v| probe(g, v[0].conv(&v[1], Some(&v[2]), ConvGeom::volumetric([1; 3], [1; 3], [0; 3])).unwrap()));
}

#[test]
fn batch_norm_training_and_fixed() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![random(&[3, 2, 3, 2], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)];
    check(inputs.clone(), |g, v| probe(g, v[0].batch_norm(&v[1], &v[2], 1e-5).unwrap().0));
    check(inputs, |g, v| probe(g, v[0].batch_norm_fixed(&v[1], &v[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5).unwrap()));
}

#[test]
fn pooling_and_time_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(vec![random(&[2, 2, 4, 6], &mut rng)], |g, v| probe(g, v[0].max_pool2().unwrap()));
    check(vec![random(&[1, 2, 4, 2, 3], &mut rng)], |g, v| {
        let a = v[0].time_mean().unwrap();
        let b = v[0].time_max().unwrap();
        probe(g, g.concat(&[a, b]).unwrap())
    });
}

#[test]
fn resize_concat_broadcast_and_pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(vec![random(&[1, 2, 3, 5], &mut rng)], |g, v| probe(g, v[0].resize_bilinear(7, 4).unwrap()));
    check(vec![random(&[1, 2, 6, 4], &mut rng)], |g, v| probe(g, v[0].resize_bilinear(3, 2).unwrap()));
    check(vec![random(&[2, 3, 2, 2], &mut rng), random(&[2, 1, 2, 2], &mut rng)], |g, v| {
        probe(g, v[0].mul_broadcast(&v[1]).unwrap())
    });
    check(vec![random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)], |g, v| {
        let s = v[0].add(&v[1]).unwrap().sigmoid();
        let d = v[0].sub(&v[1]).unwrap().relu().scale(0.7);
        probe(g, s.mul(&d).unwrap()).add(&v[0].mean()).unwrap()
    });
}

#[test]
fn weighted_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = Tensor::new(vec![2, 1, 2, 3], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    let logits = random(&[2, 1, 2, 3], &mut rng);
    check(vec![logits], move |_, v| v[0].sigmoid().bce(&target, 0.7, 0.3, 1e-7).unwrap());
}

#[test]
fn bce_propagates_nan_probabilities() {
    let g = Graph::<f64>::new();
    let p = g.constant(Tensor::new(vec![2], vec![f64::NAN, 0.5]).unwrap());
    let target = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
    assert!(p.bce(&target, 1.0, 1.0, 1e-7).unwrap().value().item().is_nan());
}

#[test]
fn shared_leaf_accumulates_gradient() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[4.0, -3.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let g = Graph::<f64>::new();
    let x = g.param(Tensor::ones(&[3]));
    let c = g.constant(Tensor::full(&[3], 2.0));
    let grads = g.backward(x.mul(&c).unwrap().sum()).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn time_mean_is_bitwise_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::<f32>::from_fn(&[1, 3, 9, 4, 4], |_| rng.random_range(-10.0..10.0));
    let perm = [4usize, 0, 8, 2, 7, 1, 3, 6, 5];
    let inner = 16;
    let mut shuffled = x.clone();
    for c in 0..3 {
        for (dst, &src) in perm.iter().enumerate() {
            for i in 0..inner {
                shuffled.data_mut()[(c * 9 + dst) * inner + i] = x.data()[(c * 9 + src) * inner + i];
            }
        }
    }
    let g = Graph::new();
    let a = g.constant(x).time_mean().unwrap().value();
    let b = g.constant(shuffled).time_mean().unwrap().value();
    assert_eq!(a.data(), b.data());
}
