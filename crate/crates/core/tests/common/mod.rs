//! Helpers shared by the integration tests and the acceptance binary.
#![allow(dead_code)]

use ctma_autograd::{Float, Graph, Tensor};
use ctma_core::loss_metrics::total_loss;
use ctma_core::model::Ctma;
use ctma_core::nn::{Ctx, Mode, ParamStore};
use ctma_core::{Result, TrainConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values on `[0, 1)`.
pub fn uniform<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::from_f64(rng.random::<f64>())).collect()).unwrap()
}

pub fn binary<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.random_bool(p) { T::one() } else { T::zero() }).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    /// Trainable tensors checked.
    pub groups: usize,
    pub coords: usize,
    /// Largest per-group relative error and the group it came from.
    pub worst: f64,
    pub worst_group: String,
}

/// Midpoint of the widest gap between sorted coarse probabilities, so that
/// small parameter perturbations cannot flip the binary mask.
fn safe_threshold(p: &[f64]) -> f64 {
    let mut v: Vec<f64> = p.iter().copied().filter(|x| *x > 0.02 && *x < 0.98).collect();
    v.sort_by(f64::total_cmp);
    v.windows(2)
        .max_by(|a, b| (a[1] - a[0]).total_cmp(&(b[1] - b[0])))
        .map(|w| 0.5 * (w[0] + w[1]))
        .unwrap_or(0.5)
}

/// Central differences against backprop on the total objective of the
/// tiny configuration, in double precision and training mode. Each
/// trainable tensor is probed at its two largest analytic entries and one
/// random entry; the group error is the worst absolute difference over the
/// group's largest gradient magnitude.
///
/// Steps much above 1e-6 start crossing ReLU and max-pool switch points
/// on some entries; much below it double rounding dominates.
pub fn model_gradient_check(seed: u64, step: f64) -> Result<GradCheck> {
    let mut cfg = TrainConfig::tiny();
    cfg.train.seed = seed;
    let (mut model, mut store) = Ctma::new::<f64>(&cfg)?;
    let mut r = rng(seed ^ 0xC0FFEE);
    let (b, h, w) = (2, 16, 16);
    let i1: Tensor<f64> = uniform(&mut r, &[b, 3, h, w]);
    let i2: Tensor<f64> = uniform(&mut r, &[b, 3, h, w]);
    let y: Tensor<f64> = binary(&mut r, &[b, 1, h, w], 0.3);

    {
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Train);
        let out = model.forward(&ctx, &i1, &i2)?;
        model.cfg.te.mask_threshold = safe_threshold(out.p1.value().data());
    }

    let eval = |model: &Ctma, store: &ParamStore<f64>| -> Result<(f64, Tensor<f64>)> {
        let g = Graph::new();
        let ctx = Ctx::new(&g, store, Mode::Train);
        let out = model.forward(&ctx, &i1, &i2)?;
        let l = total_loss(&out.p1_full, &out.p2, &y, &model.cfg.loss)?;
        Ok((l.total.value().item(), out.mask))
    };

    let (analytic, base_mask) = {
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Train);
        let out = model.forward(&ctx, &i1, &i2)?;
        let l = total_loss(&out.p1_full, &out.p2, &y, &model.cfg.loss)?;
        let mut grads = g.backward(l.total)?;
        (ctx.param_grads(&mut grads), out.mask)
    };

    let ids: Vec<_> = store.trainable().collect();
    let mut report = GradCheck { groups: 0, coords: 0, worst: 0.0, worst_group: String::new() };
    for id in ids {
        let name = store.name(id).to_string();
        let numel = store.get(id).numel();
        let a = analytic
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; numel]);
        let mut order: Vec<usize> = (0..numel).collect();
        order.sort_by(|&p, &q| a[q].abs().total_cmp(&a[p].abs()));
        let mut coords: Vec<usize> = order.into_iter().take(2).collect();
        let extra = r.random_range(0..numel);
        if !coords.contains(&extra) {
            coords.push(extra);
        }
        let (mut num_err, mut scale) = (0.0f64, 1e-6f64);
        for &k in &coords {
            let orig = store.get(id).data()[k];
            let mut probe = |v: f64| -> Result<f64> {
                store.get_mut(id).data_mut()[k] = v;
                let (l, m) = eval(&model, &store)?;
                if m != base_mask {
                    return Err(ctma_core::Error::Data(format!("coarse mask flipped while probing {name}[{k}]")));
                }
                Ok(l)
            };
            let up = probe(orig + step)?;
            let down = probe(orig - step)?;
            store.get_mut(id).data_mut()[k] = orig;
            let n = (up - down) / (2.0 * step);
            num_err = num_err.max((n - a[k]).abs());
            scale = scale.max(a[k].abs()).max(n.abs());
        }
        let rel = num_err / scale;
        report.groups += 1;
        report.coords += coords.len();
        if rel > report.worst {
            report.worst = rel;
            report.worst_group = name;
        }
    }
    Ok(report)
}
