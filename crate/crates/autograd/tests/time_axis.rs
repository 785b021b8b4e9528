use ctma_autograd::{Graph, Tensor};
use proptest::prelude::*;

fn reorder(x: &Tensor<f32>, perm: &[usize]) -> Tensor<f32> {
    let s = x.shape();
    let (planes, t, inner) = (s[0] * s[1], s[2], s[3] * s[4]);
    let mut out = vec![0.0; x.numel()];
    for p in 0..planes {
        for (k, &src) in perm.iter().enumerate() {
            out[(p * t + k) * inner..(p * t + k + 1) * inner].copy_from_slice(&x.data()[(p * t + src) * inner..(p * t + src + 1) * inner]);
        }
    }
    Tensor::new(s.to_vec(), out).unwrap()
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #[test]
    fn time_reductions_ignore_frame_order(
        (t, data, perm) in (2usize..9).prop_flat_map(|t| (
            Just(t),
            proptest::collection::vec(-1e3f32..1e3, 2 * 3 * t * 4),
            Just((0..t).collect::<Vec<_>>()).prop_shuffle(),
        ))
    ) {
        let x = Tensor::new(vec![2, 3, t, 2, 2], data).unwrap();
        let y = reorder(&x, &perm);
        let g = Graph::new();
        let (a, b) = (g.constant(x), g.constant(y));
        prop_assert_eq!(bits(&a.time_mean().unwrap().value()), bits(&b.time_mean().unwrap().value()));
        prop_assert_eq!(bits(&a.time_max().unwrap().value()), bits(&b.time_max().unwrap().value()));
    }
}
