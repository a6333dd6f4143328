//! Finite-difference oracles for every backward pass, in 64-bit precision.

use fringe_core::model::{build_model, model_backward_into, model_forward, Mode, Variant};
use fringe_core::nn::{finite_difference_check, grad_check, init_params, l1_loss, rel_error, ParamStore};
use fringe_core::ops::*;
use fringe_core::synth::LcgState;
use fringe_core::Tensor;

fn random(dims: &[usize], rng: &mut LcgState) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.uniform(-1.0, 1.0))
}

/// Scalar functional `sum(out^2) / 2`; its gradient w.r.t. `out` is `out`.
fn half_square(t: &Tensor<f64>) -> f64 {
    t.data().iter().map(|v| v * v).sum::<f64>() / 2.0
}

/// Central differences of `f` w.r.t. every entry of `x`.
fn numeric_grad(x: &Tensor<f64>, eps: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.dims());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    out
}

fn max_rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max)
}

#[test]
fn conv_backward_matches_differences() {
    let mut rng = LcgState::seeded(21);
    for (cin, m, ks) in [(1, 2, 3), (3, 2, 3), (2, 3, 2), (2, 2, 1)] {
        let x = random(&[cin, 5, 5], &mut rng);
        let k = random(&[m, cin, ks, ks], &mut rng);
        let bias: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let out = conv2d_forward(&x, &k, &bias).unwrap();
        let (gx, gk, gb) = conv2d_backward(&out, &x, &k).unwrap();

        let nx = numeric_grad(&x, 1e-5, |x| half_square(&conv2d_forward(x, &k, &bias).unwrap()));
        let nk = numeric_grad(&k, 1e-5, |k| half_square(&conv2d_forward(&x, k, &bias).unwrap()));
        let b_t = Tensor::new(vec![m], bias.clone()).unwrap();
        let nb = numeric_grad(&b_t, 1e-5, |b| half_square(&conv2d_forward(&x, &k, b.data()).unwrap()));
        assert!(max_rel(&gx, &nx) < 1e-6, "input grad, kernel {ks}");
        assert!(max_rel(&gk, &nk) < 1e-6, "kernel grad, kernel {ks}");
        assert!(max_rel(&Tensor::new(vec![m], gb).unwrap(), &nb) < 1e-6);
    }
}

#[test]
fn pool_upsample_concat_sub_relu_backward() {
    let mut rng = LcgState::seeded(22);
    let x = random(&[2, 4, 6], &mut rng);
    let (y, idx) = maxpool2x2_forward(&x).unwrap();
    let gx = maxpool2x2_backward(&y, &idx).unwrap();
    let nx = numeric_grad(&x, 1e-6, |x| half_square(&maxpool2x2_forward(x).unwrap().0));
    assert!(max_rel(&gx, &nx) < 1e-6);
    assert!((gx.sum() - y.sum()).abs() < 1e-12);

    let up = upsample_nearest2x(&x).unwrap();
    let gu = upsample_nearest2x_backward(&up).unwrap();
    let nu = numeric_grad(&x, 1e-6, |x| half_square(&upsample_nearest2x(x).unwrap()));
    assert!(max_rel(&gu, &nu) < 1e-6);

    let b = random(&[3, 4, 6], &mut rng);
    let c = concat_channels(&x, &b).unwrap();
    let (ga, gb) = split_channels(&c, 2).unwrap();
    let na = numeric_grad(&x, 1e-6, |a| half_square(&concat_channels(a, &b).unwrap()));
    let nb = numeric_grad(&b, 1e-6, |bb| half_square(&concat_channels(&x, bb).unwrap()));
    assert!(max_rel(&ga, &na) < 1e-6 && max_rel(&gb, &nb) < 1e-6);

    let z = random(&[2, 4, 6], &mut rng);
    let d = elementwise_sub(&x, &z).unwrap();
    let (gsa, gsb) = elementwise_sub_backward(&d);
    let nsa = numeric_grad(&x, 1e-6, |a| half_square(&elementwise_sub(a, &z).unwrap()));
    let nsb = numeric_grad(&z, 1e-6, |bb| half_square(&elementwise_sub(&x, bb).unwrap()));
    assert!(max_rel(&gsa, &nsa) < 1e-6 && max_rel(&gsb, &nsb) < 1e-6);

    let r = relu(&x);
    let gr = relu_backward(&x, &r).unwrap();
    let nr = numeric_grad(&x, 1e-6, |x| half_square(&relu(x)));
    assert!(max_rel(&gr, &nr) < 1e-6);
}

#[test]
fn conv_is_linear() {
    let mut rng = LcgState::seeded(23);
    let x: Tensor<f32> = random(&[2, 6, 6], &mut rng).cast();
    let z: Tensor<f32> = random(&[2, 6, 6], &mut rng).cast();
    let k: Tensor<f32> = random(&[3, 2, 3, 3], &mut rng).cast();
    let (a, b) = (0.7f32, -1.3f32);
    let mix = x.zip_map(&z, |p, q| a * p + b * q).unwrap();
    let lhs = conv2d_forward(&mix, &k, &[0.0; 3]).unwrap();
    let cx = conv2d_forward(&x, &k, &[0.0; 3]).unwrap();
    let cz = conv2d_forward(&z, &k, &[0.0; 3]).unwrap();
    let rhs = cx.zip_map(&cz, |p, q| a * p + b * q).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-5);
}

#[test]
fn single_conv_l1_model() {
    let mut rng = LcgState::seeded(24);
    let x = random(&[1, 6, 6], &mut rng);
    let y = random(&[2, 6, 6], &mut rng);
    let k = random(&[2, 1, 3, 3], &mut rng);
    let b = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
    let pred = conv2d_forward(&x, &k, b.data()).unwrap();
    let (_, g) = l1_loss(&pred, &y).unwrap();
    let (_, gk, gb) = conv2d_backward(&g, &x, &k).unwrap();
    let report = finite_difference_check(
        &[k, b],
        &[gk, Tensor::new(vec![2], gb).unwrap()],
        1e-6,
        usize::MAX,
        |p| Ok(l1_loss(&conv2d_forward(&x, &p[0], p[1].data()).unwrap(), &y).unwrap().0),
    )
    .unwrap();
    assert!(report.checked >= 15);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

fn tiny_batch(rng: &mut LcgState, n: usize, side: usize) -> Vec<(Tensor<f64>, Tensor<f64>)> {
    (0..n)
        .map(|_| {
            let x = Tensor::from_fn(&[1, side, side], |_| rng.uniform(0.0, 2.0));
            let y = Tensor::from_fn(&[1, side, side], |_| rng.uniform(0.0, 2.0));
            (x, y)
        })
        .collect()
}

#[test]
fn tiny_networks_match_differences() {
    for variant in [Variant::VNet, Variant::UNet, Variant::ResVNet] {
        let model = build_model(variant, 2, 2, (8, 8)).unwrap();
        let mut rng = LcgState::seeded(25);
        let mut store: ParamStore<f64> = init_params(&model, &mut rng);
        // small positive biases keep most ReLUs active so the probe exercises every path
        for p in store.iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.value.fill(0.1);
        }
        let batch = tiny_batch(&mut rng, 2, 8);
        let report = grad_check(&model, &store, &batch, 1e-6, 12).unwrap();
        assert!(report.checked > report.skipped * 4, "{variant}: {report:?}");
        assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
    }
}

#[test]
fn input_gradient_matches_differences() {
    let model = build_model(Variant::VNet, 2, 2, (8, 8)).unwrap();
    let mut rng = LcgState::seeded(26);
    let store: ParamStore<f64> = init_params(&model, &mut rng);
    let (x, y) = tiny_batch(&mut rng, 1, 8).remove(0);
    let (pred, cache) = model_forward(&model, &store, &x, Mode::Infer).unwrap();
    let (_, g) = l1_loss(&pred, &y).unwrap();
    let mut grads = store.grad_buffers();
    let gx = model_backward_into(&model, &store, cache, &g, &mut grads, true).unwrap().unwrap();
    let report = finite_difference_check(&[x.clone()], &[gx], 1e-6, usize::MAX, |p| {
        let (pred, _) = model_forward(&model, &store, &p[0], Mode::Infer)?;
        Ok(l1_loss(&pred, &y)?.0)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn skip_links_carry_gradient_when_decoder_kernels_are_zero() {
    let model = build_model(Variant::VNet, 2, 2, (8, 8)).unwrap();
    let mut rng = LcgState::seeded(27);
    let mut store: ParamStore<f64> = init_params(&model, &mut rng);
    // cut the bottleneck path: level-2 output only reaches the decoder through up2.upconv
    for p in store.iter_mut().filter(|p| p.name.starts_with("up2.upconv")) {
        p.value.fill(0.0);
    }
    for p in store.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value.fill(0.1);
    }
    let (x, y) = tiny_batch(&mut rng, 1, 8).remove(0);
    let (pred, cache) = model_forward(&model, &store, &x, Mode::Infer).unwrap();
    let (_, g) = l1_loss(&pred, &y).unwrap();
    let mut grads = store.grad_buffers();
    model_backward_into(&model, &store, cache, &g, &mut grads, false).unwrap();
    let deep = store.index_of("down2.conv1.weight").unwrap();
    assert!(grads[deep].data().iter().all(|&v| v == 0.0));
    let enc = store.index_of("down1.conv1.weight").unwrap();
    assert!(grads[enc].data().iter().any(|&v| v != 0.0));
}
