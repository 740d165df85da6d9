//! Finite-difference checks of every differentiable operation at 8x8.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use runway::nets::{build_unet, Network};
use runway::tensor::{grad_check, Activation, Float, GradCheckReport, LossKind, Result, Tensor, TensorError};

pub const TOL32: f64 = 1e-2;
pub const TOL64: f64 = 1e-5;

/// Random values with magnitude at least 0.05, away from activation kinks.
pub fn values<T: Float>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            T::lit(if rng.random::<bool>() { v } else { -v })
        })
        .collect()
}

pub fn param<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, values(rng, shape.iter().product())).unwrap()
}

fn constant<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_vec(shape, values(rng, shape.iter().product())).unwrap()
}

/// Random linear readout so every output element gets an O(1) gradient.
pub fn readout<T: Float>(y: Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = constant(&mut rng, y.shape());
    Ok(y.mul(&w)?.sum())
}

pub fn is_f32<T: Float>() -> bool {
    std::mem::size_of::<T>() == 4
}

pub fn tol<T: Float>() -> f64 {
    if is_f32::<T>() {
        TOL32
    } else {
        TOL64
    }
}

pub type Checks = Vec<(String, GradCheckReport)>;

fn check<T: Float, F>(out: &mut Checks, name: &str, f: F, inputs: &[Tensor<T>])
where
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    check_with(out, name, f, inputs, if is_f32::<T>() { 1e-2 } else { 1e-6 });
}

fn check_with<T: Float, F>(out: &mut Checks, name: &str, f: F, inputs: &[Tensor<T>], h: f64)
where
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let r = grad_check(f, inputs, T::lit(h), tol::<T>()).unwrap();
    out.push((format!("{name} ({}-bit)", 8 * std::mem::size_of::<T>()), r));
}

pub fn all_ops<T: Float>() -> Checks {
    let mut out = Vec::new();
    let o = &mut out;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = [1, 2, 8, 8];
    let (a, b) = (param::<T>(&mut rng, &s), param::<T>(&mut rng, &s));
    check(o, "add", |x| readout(x[0].add(&x[1])?, 1), &[a.clone(), b.clone()]);
    check(o, "mul", |x| readout(x[0].mul(&x[1])?, 2), &[a.clone(), b.clone()]);
    check(o, "scale", |x| readout(x[0].scale(T::lit(-1.7)), 3), &[a.clone()]);
    check(o, "sum", |x| Ok(x[0].sum().scale(T::lit(0.3))), &[a.clone()]);
    check(o, "mean", |x| Ok(x[0].mean()), &[a.clone()]);
    for kind in [Activation::Relu, Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid] {
        check(o, &format!("{kind:?}"), move |x| readout(x[0].activation(kind), 4), &[a.clone()]);
    }
    check(o, "concat", |x| readout(x[0].concat_channels(&x[1])?, 5), &[a.clone(), param(&mut rng, &[1, 3, 8, 8])]);

    let gamma = param::<T>(&mut rng, &[2]);
    let beta = param::<T>(&mut rng, &[2]);
    check(o, "instance_norm", |x| readout(x[0].instance_norm(&x[1], &x[2], T::lit(1e-5))?, 6), &[a.clone(), gamma, beta]);

    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let w = param::<T>(&mut rng, &[3, 2, 4, 4]);
        let bias = param::<T>(&mut rng, &[3]);
        check(o, &format!("conv2d s{stride} p{pad}"), move |x| readout(x[0].conv2d(&x[1], &x[2], stride, pad)?, 7), &[a.clone(), w, bias]);
        let wt = param::<T>(&mut rng, &[2, 3, 4, 4]);
        let bt = param::<T>(&mut rng, &[3]);
        check(o, &format!("conv_transpose2d s{stride} p{pad}"), move |x| readout(x[0].conv_transpose2d(&x[1], &x[2], stride, pad)?, 8), &[a.clone(), wt, bt]);
    }

    // targets differ from predictions by at least 0.05, clear of the L1 kink
    let offset = values::<T>(&mut rng, 128);
    let target = Tensor::parameter(&s, a.to_vec().iter().zip(&offset).map(|(&p, &o)| p + o).collect()).unwrap();
    for kind in [LossKind::L1, LossKind::Mse, LossKind::BceLogits] {
        // mean-normalized losses are scaled back up to keep gradients O(1)
        check(o, &format!("{kind:?}"), move |x| Ok(x[0].loss(&x[1], kind)?.scale(T::lit(128.0))), &[a.clone(), target.clone()]);
    }
    out
}

pub fn unet_block<T: Float>() -> (String, GradCheckReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net: Network<T> = build_unet(8, 2, 3, 3, 2, &mut rng).unwrap();
    let x = param::<T>(&mut rng, &[1, 3, 8, 8]);
    let mut inputs = vec![x];
    inputs.extend(net.parameters());
    let f = |xs: &[Tensor<T>]| readout(net.forward(&xs[0]).map_err(|e| TensorError::Shape(e.to_string()))?, 9);
    let mut out = Vec::new();
    // internal ReLU kinks need a small step in 32-bit
    check_with(&mut out, "unet 8x8", f, &inputs, if is_f32::<T>() { 3e-4 } else { 1e-6 });
    out.pop().unwrap()
}
