mod common;

#[test]
fn backprop_matches_central_differences_for_every_tensor() {
    for seed in [3, 17, 29] {
        let r = common::model_gradient_check(seed, 1e-6).unwrap();
        assert!(r.groups > 50, "{r:?}");
        assert!(r.worst < 1e-4, "seed {seed}: {r:?}");
    }
}
