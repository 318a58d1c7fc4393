//! Central-difference gradient checks for every differentiable operation,
//! on small random tensors. Each op's backward is probed through a scalar
//! readout `L = sum(cotangent * output)` so the analytic gradient under
//! test is exactly the backward's output.

use slc_core::gradcheck::gradient_check;
use slc_core::rng::SeededRng;
use slc_core::segmentation::{segmentation_loss, segmentation_loss_backward};
use slc_core::tensor::{self as ops, Tensor};

const TOL: f64 = 1e-2;
const STEP: f32 = 1e-3;

fn rand(shape: &[usize], lo: f32, hi: f32, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(lo, hi)).collect()).unwrap()
}

fn readout(out: &Tensor, cot: &Tensor) -> f32 {
    let mut acc = 0.0f64;
    for (&o, &c) in out.data().iter().zip(cot.data()) {
        acc += o as f64 * c as f64;
    }
    acc as f32
}

fn all(t: &Tensor) -> Vec<usize> {
    (0..t.data().len()).collect()
}

fn check<F>(what: &str, point: &Tensor, analytic: &Tensor, loss: F)
where
    F: FnMut(&Tensor) -> slc_core::Result<f32>,
{
    let report = gradient_check(point, analytic, STEP, &all(point), loss).unwrap();
    assert!(report.passes(TOL), "{what}: {report:?}");
}

#[test]
fn conv2d_valid_all_arguments() {
    let mut rng = SeededRng::new(1);
    let x = rand(&[2, 5, 5], -1.0, 1.0, &mut rng);
    let k = rand(&[3, 2, 3, 3], -0.5, 0.5, &mut rng);
    let b = rand(&[3], -0.5, 0.5, &mut rng);
    let cot = rand(&[3, 3, 3], -1.0, 1.0, &mut rng);
    let (gx, gk, gb) = ops::conv2d_backward(&x, &k, &cot).unwrap();
    check("conv2d wrt input", &x, &gx, |t| Ok(readout(&ops::conv2d(t, &k, &b)?, &cot)));
    check("conv2d wrt kernels", &k, &gk, |t| Ok(readout(&ops::conv2d(&x, t, &b)?, &cot)));
    check("conv2d wrt bias", &b, &gb, |t| Ok(readout(&ops::conv2d(&x, &k, t)?, &cot)));
}

#[test]
fn conv2d_same_all_arguments() {
    let mut rng = SeededRng::new(2);
    let x = rand(&[2, 4, 4], -1.0, 1.0, &mut rng);
    let k = rand(&[3, 2, 3, 3], -0.5, 0.5, &mut rng);
    let b = rand(&[3], -0.5, 0.5, &mut rng);
    let cot = rand(&[3, 4, 4], -1.0, 1.0, &mut rng);
    let (gx, gk, gb) = ops::conv2d_same_backward(&x, &k, &cot).unwrap();
    check("conv2d_same wrt input", &x, &gx, |t| Ok(readout(&ops::conv2d_same(t, &k, &b)?, &cot)));
    check("conv2d_same wrt kernels", &k, &gk, |t| Ok(readout(&ops::conv2d_same(&x, t, &b)?, &cot)));
    check("conv2d_same wrt bias", &b, &gb, |t| Ok(readout(&ops::conv2d_same(&x, &k, t)?, &cot)));
}

#[test]
fn conv1x1_all_arguments() {
    let mut rng = SeededRng::new(3);
    let x = rand(&[3, 4, 4], -1.0, 1.0, &mut rng);
    let k = rand(&[2, 3], -0.5, 0.5, &mut rng);
    let b = rand(&[2], -0.5, 0.5, &mut rng);
    let cot = rand(&[2, 4, 4], -1.0, 1.0, &mut rng);
    let (gx, gk, gb) = ops::conv1x1_backward(&x, &k, &cot).unwrap();
    check("conv1x1 wrt input", &x, &gx, |t| Ok(readout(&ops::conv1x1(t, &k, &b)?, &cot)));
    check("conv1x1 wrt kernels", &k, &gk, |t| Ok(readout(&ops::conv1x1(&x, t, &b)?, &cot)));
    check("conv1x1 wrt bias", &b, &gb, |t| Ok(readout(&ops::conv1x1(&x, &k, t)?, &cot)));
}

#[test]
fn dense_all_arguments() {
    let mut rng = SeededRng::new(4);
    let x = rand(&[6], -1.0, 1.0, &mut rng);
    let w = rand(&[4, 6], -0.5, 0.5, &mut rng);
    let b = rand(&[4], -0.5, 0.5, &mut rng);
    let cot = rand(&[4], -1.0, 1.0, &mut rng);
    let (gx, gw, gb) = ops::dense_backward(&x, &w, &b, &cot).unwrap();
    check("dense wrt input", &x, &gx, |t| Ok(readout(&ops::dense(t, &w, &b)?, &cot)));
    check("dense wrt weights", &w, &gw, |t| Ok(readout(&ops::dense(&x, t, &b)?, &cot)));
    check("dense wrt bias", &b, &gb, |t| Ok(readout(&ops::dense(&x, &w, t)?, &cot)));
}

#[test]
fn relu_away_from_kink() {
    let mut rng = SeededRng::new(5);
    // keep probes clear of the hinge at zero
    let data: Vec<f32> = (0..8)
        .map(|_| {
            let v = rng.uniform(0.1, 1.0);
            if rng.next_f32() > 0.5 {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::new(vec![8], data).unwrap();
    let cot = rand(&[8], -1.0, 1.0, &mut rng);
    let g = ops::relu_backward(&x, &cot).unwrap();
    check("relu", &x, &g, |t| Ok(readout(&ops::relu(t)?, &cot)));
}

#[test]
fn sigmoid_everywhere() {
    let mut rng = SeededRng::new(6);
    let x = rand(&[6], -2.0, 2.0, &mut rng);
    let cot = rand(&[6], -1.0, 1.0, &mut rng);
    let s = ops::sigmoid(&x).unwrap();
    let g = ops::sigmoid_backward(&s, &cot).unwrap();
    check("sigmoid", &x, &g, |t| Ok(readout(&ops::sigmoid(t)?, &cot)));
}

#[test]
fn softmax_jacobian() {
    let mut rng = SeededRng::new(7);
    let x = rand(&[8], -1.5, 1.5, &mut rng);
    let cot = rand(&[8], -1.0, 1.0, &mut rng);
    let s = ops::softmax(&x).unwrap();
    let g = ops::softmax_backward(&s, &cot).unwrap();
    check("softmax", &x, &g, |t| Ok(readout(&ops::softmax(t)?, &cot)));
}

#[test]
fn maxpool_with_separated_values() {
    let mut rng = SeededRng::new(8);
    // values spaced well apart so the argmax never flips under the probe step
    let mut vals: Vec<f32> = (0..2 * 4 * 4).map(|i| i as f32 * 0.17).collect();
    rng.shuffle(&mut vals);
    let x = Tensor::new(vec![2, 4, 4], vals).unwrap();
    let cot = rand(&[2, 2, 2], -1.0, 1.0, &mut rng);
    let g = ops::maxpool2d_backward(&x, &cot).unwrap();
    check("maxpool2d", &x, &g, |t| Ok(readout(&ops::maxpool2d(t, 2, 2)?, &cot)));
}

#[test]
fn upsample_nearest() {
    let mut rng = SeededRng::new(9);
    let x = rand(&[2, 3, 3], -1.0, 1.0, &mut rng);
    let cot = rand(&[2, 6, 6], -1.0, 1.0, &mut rng);
    let g = ops::upsample_nearest_2x_backward(&x, &cot).unwrap();
    check("upsample_nearest_2x", &x, &g, |t| Ok(readout(&ops::upsample_nearest_2x(t)?, &cot)));
}

#[test]
fn concat_both_flavors() {
    let mut rng = SeededRng::new(10);
    let a = rand(&[5], -1.0, 1.0, &mut rng);
    let b = rand(&[3], -1.0, 1.0, &mut rng);
    let cot = rand(&[8], -1.0, 1.0, &mut rng);
    let (ga, gb) = ops::concat_backward(&a, &b, &cot).unwrap();
    check("concat wrt lhs", &a, &ga, |t| Ok(readout(&ops::concat(t, &b)?, &cot)));
    check("concat wrt rhs", &b, &gb, |t| Ok(readout(&ops::concat(&a, t)?, &cot)));

    let ca = rand(&[2, 3, 3], -1.0, 1.0, &mut rng);
    let cb = rand(&[1, 3, 3], -1.0, 1.0, &mut rng);
    let ccot = rand(&[3, 3, 3], -1.0, 1.0, &mut rng);
    let (gca, gcb) = ops::concat_channels_backward(&ca, &cb, &ccot).unwrap();
    check("concat_channels wrt lhs", &ca, &gca, |t| Ok(readout(&ops::concat_channels(t, &cb)?, &ccot)));
    check("concat_channels wrt rhs", &cb, &gcb, |t| Ok(readout(&ops::concat_channels(&ca, t)?, &ccot)));
}

#[test]
fn flatten_is_transparent() {
    let mut rng = SeededRng::new(11);
    let x = rand(&[2, 3, 4], -1.0, 1.0, &mut rng);
    let cot = rand(&[24], -1.0, 1.0, &mut rng);
    let g = ops::flatten_backward(&x, &cot).unwrap();
    check("flatten", &x, &g, |t| Ok(readout(&ops::flatten(t)?, &cot)));
}

#[test]
fn categorical_cross_entropy_wrt_probabilities() {
    let mut rng = SeededRng::new(12);
    let p = rand(&[8], 0.1, 0.9, &mut rng);
    let mut hot = vec![0.0f32; 8];
    hot[3] = 1.0;
    let t = Tensor::new(vec![8], hot).unwrap();
    let g = ops::categorical_cross_entropy_backward(&p, &t).unwrap();
    check("categorical cross-entropy", &p, &g, |q| ops::categorical_cross_entropy(q, &t));
}

#[test]
fn binary_cross_entropy_wrt_predictions() {
    let mut rng = SeededRng::new(13);
    let p = rand(&[6], 0.1, 0.9, &mut rng);
    let t = Tensor::new(vec![6], vec![1.0, 0.0, 1.0, 0.5, 0.0, 1.0]).unwrap();
    let g = ops::binary_cross_entropy_mean_backward(&p, &t).unwrap();
    check("binary cross-entropy", &p, &g, |q| ops::binary_cross_entropy_mean(q, &t));
}

#[test]
fn combined_segmentation_loss() {
    let mut rng = SeededRng::new(14);
    let p = rand(&[1, 4, 4], 0.15, 0.85, &mut rng);
    let t = Tensor::new(vec![1, 4, 4], (0..16).map(|i| f32::from(i % 3 == 0)).collect()).unwrap();
    let g = segmentation_loss_backward(&p, &t).unwrap();
    check("segmentation loss", &p, &g, |q| segmentation_loss(q, &t));
}
