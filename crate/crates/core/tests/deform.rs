mod common;

use common::*;
use vidmatte_core::kernels::*;
use vidmatte_core::Tensor;

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn forward_matches_direct_sampling() {
    let mut r = rng(20);
    for k in [1, 3, 5] {
        let x = random_tensor(&[2, 3, 6, 5], -1.0, 1.0, &mut r);
        let off = random_tensor(&[2, 2 * k * k, 6, 5], -2.5, 2.5, &mut r);
        let w = random_tensor(&[4, 3, k, k], -1.0, 1.0, &mut r);
        let b = random_tensor(&[4], -1.0, 1.0, &mut r);
        let got = deform_conv2d_forward(&x, &off, &w, Some(&b)).unwrap();
        let want = deform_oracle(&x, &off, &w, Some(&b));
        assert!(got.max_abs_diff(&want) < 1e-12, "k={k}");
    }
}

#[test]
fn zero_offsets_reduce_to_convolution() {
    let mut r = rng(21);
    for k in [1, 3] {
        let x = random_tensor(&[2, 4, 7, 9], -1.0, 1.0, &mut r).cast::<f32>();
        let w = random_tensor(&[5, 4, k, k], -1.0, 1.0, &mut r).cast::<f32>();
        let off = Tensor::<f32>::zeros(&[2, 2 * k * k, 7, 9]);
        let d = deform_conv2d_forward(&x, &off, &w, None).unwrap();
        let c = conv2d_forward(&x, &w, None, ConvGeometry::same(k, k));
        assert!(d.max_abs_diff(&c) <= 1e-5, "k={k}: {}", d.max_abs_diff(&c));
        let direct = conv_oracle(&x.cast::<f64>(), &w.cast::<f64>());
        assert!(c.cast::<f64>().max_abs_diff(&direct) <= 1e-5);
    }
}

#[test]
fn offset_out_of_image_samples_zero() {
    let x = Tensor::full(&[1, 1, 3, 3], 1.0f64);
    let w = Tensor::full(&[1, 1, 1, 1], 1.0);
    let off = Tensor::full(&[1, 2, 3, 3], 10.0);
    let y = deform_conv2d_forward(&x, &off, &w, None).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn rejects_mismatched_offsets() {
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    let w = Tensor::zeros(&[1, 2, 3, 3]);
    assert!(deform_conv2d_forward(&x, &Tensor::zeros(&[1, 9, 4, 4]), &w, None).is_err());
    let bad = Tensor::full(&[1, 18, 4, 4], f64::NAN);
    assert!(deform_conv2d_forward(&x, &bad, &w, None).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let step = 1e-5;
    let mut r = rng(22);
    let k = 3;
    let (n, c, h, w, co) = (1, 2, 5, 6, 2);
    let x = random_tensor(&[n, c, h, w], -1.0, 1.0, &mut r);
    let off = random_tensor(&[n, 2 * k * k, h, w], -1.5, 1.5, &mut r);
    let wt = random_tensor(&[co, c, k, k], -1.0, 1.0, &mut r);
    let bias = random_tensor(&[co], -1.0, 1.0, &mut r);
    let probe = random_tensor(&[n, co, h, w], -1.0, 1.0, &mut r);
    let loss = |x: &Tensor<f64>, off: &Tensor<f64>, wt: &Tensor<f64>| dot(&deform_conv2d_forward(x, off, wt, Some(&bias)).unwrap(), &probe);

    let (mut gx, mut goff, mut gw, mut gb) = (Tensor::zeros(x.shape()), Tensor::zeros(off.shape()), Tensor::zeros(wt.shape()), Tensor::zeros(&[co]));
    deform_conv2d_backward(
        &x,
        &off,
        &wt,
        &probe,
        DeformGradients { x: Some(&mut gx), offsets: Some(&mut goff), weight: Some(&mut gw), bias: Some(&mut gb) },
    )
    .unwrap();

    let check = |name: &str, analytic: f64, fd: f64| {
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
        assert!(err <= 1e-4, "{name}: analytic {analytic} fd {fd}");
    };
    for i in 0..x.len() {
        let mut f = |v: f64| {
            let mut t = x.clone();
            t.data_mut()[i] = v;
            loss(&t, &off, &wt)
        };
        check("x", gx.data()[i], central_diff(&mut f, x.data()[i], step));
    }
    for i in 0..wt.len() {
        let mut f = |v: f64| {
            let mut t = wt.clone();
            t.data_mut()[i] = v;
            loss(&x, &off, &t)
        };
        check("weight", gw.data()[i], central_diff(&mut f, wt.data()[i], step));
    }
    let mut checked = 0;
    for i in 0..off.len() {
        if offset_kink_distance(&off, k, i) <= 10.0 * step {
            continue;
        }
        let mut f = |v: f64| {
            let mut t = off.clone();
            t.data_mut()[i] = v;
            loss(&x, &t, &wt)
        };
        check("offset", goff.data()[i], central_diff(&mut f, off.data()[i], step));
        checked += 1;
    }
    assert!(checked > off.len() * 9 / 10);
    for o in 0..co {
        let want: f64 = probe.data()[o * h * w..(o + 1) * h * w].iter().sum();
        assert!((gb.data()[o] - want).abs() < 1e-10);
    }
}
