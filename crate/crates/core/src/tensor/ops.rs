use serde::{Deserialize, Serialize};

use super::{Backward, Float, Result, Tensor, TensorError};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope 0.2 on the negative side.
    LeakyRelu,
    Tanh,
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.2;

/// Mean-reduced loss functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    Mse,
    /// Binary cross-entropy on raw logits.
    BceLogits,
}

fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

struct AddBackward;
impl<T: Float> Backward<T> for AddBackward {
    fn backward(&self, g: &[T], _: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
    }
}

struct MulBackward;
impl<T: Float> Backward<T> for MulBackward {
    fn backward(&self, g: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let a = parents[0].data();
        let b = parents[1].data();
        vec![
            needs[0].then(|| g.iter().zip(b.iter()).map(|(&g, &b)| g * b).collect()),
            needs[1].then(|| g.iter().zip(a.iter()).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

struct ScaleBackward<T>(T);
impl<T: Float> Backward<T> for ScaleBackward<T> {
    fn backward(&self, g: &[T], _: &[Tensor<T>], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&g| g * self.0).collect())]
    }
}

struct SumBackward {
    len: usize,
    scale: f64,
}
impl<T: Float> Backward<T> for SumBackward {
    fn backward(&self, g: &[T], _: &[Tensor<T>], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![g[0] * T::lit(self.scale); self.len])]
    }
}

struct ActivationBackward(Activation);
impl<T: Float> Backward<T> for ActivationBackward {
    fn backward(&self, g: &[T], parents: &[Tensor<T>], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let x = parents[0].data();
        let one = T::one();
        let dx = match self.0 {
            Activation::Relu => g.iter().zip(x.iter()).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect(),
            Activation::LeakyRelu => {
                let slope = T::lit(LEAKY_SLOPE);
                g.iter().zip(x.iter()).map(|(&g, &x)| if x > T::zero() { g } else { g * slope }).collect()
            }
            Activation::Tanh => g
                .iter()
                .zip(x.iter())
                .map(|(&g, &x)| {
                    let y = x.tanh();
                    g * (one - y * y)
                })
                .collect(),
            Activation::Sigmoid => g
                .iter()
                .zip(x.iter())
                .map(|(&g, &x)| {
                    let y = sigmoid(x);
                    g * y * (one - y)
                })
                .collect(),
        };
        vec![Some(dx)]
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

struct InstanceNormBackward<T> {
    channels: usize,
    plane: usize,
    /// Standardized input, same layout as the input.
    xhat: Vec<T>,
    /// Per (sample, channel) inverse standard deviation.
    inv_std: Vec<T>,
}

impl<T: Float> Backward<T> for InstanceNormBackward<T> {
    fn backward(&self, g: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let gamma = parents[1].data();
        let m = self.plane;
        let mt = T::from_usize(m).unwrap();
        let mut dx = needs[0].then(|| vec![T::zero(); g.len()]);
        let mut dgamma = vec![T::zero(); self.channels];
        let mut dbeta = vec![T::zero(); self.channels];
        for (slot, &inv) in self.inv_std.iter().enumerate() {
            let c = slot % self.channels;
            let range = slot * m..(slot + 1) * m;
            let gs = &g[range.clone()];
            let xh = &self.xhat[range.clone()];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (&gv, &xv) in gs.iter().zip(xh) {
                sum_g += gv;
                sum_gx += gv * xv;
            }
            dbeta[c] += sum_g;
            dgamma[c] += sum_gx;
            if let Some(dx) = dx.as_mut() {
                // d xhat = g * gamma; dx = inv/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                let gm = gamma[c];
                let scale = inv * gm / mt;
                for ((d, &gv), &xv) in dx[range].iter_mut().zip(gs).zip(xh) {
                    *d = scale * (mt * gv - sum_g - xv * sum_gx);
                }
            }
        }
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
}

struct ConcatBackward {
    n: usize,
    a_block: usize,
    b_block: usize,
}
impl<T: Float> Backward<T> for ConcatBackward {
    fn backward(&self, g: &[T], _: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let stride = self.a_block + self.b_block;
        let mut da = needs[0].then(|| Vec::with_capacity(self.n * self.a_block));
        let mut db = needs[1].then(|| Vec::with_capacity(self.n * self.b_block));
        for s in 0..self.n {
            let block = &g[s * stride..(s + 1) * stride];
            if let Some(da) = da.as_mut() {
                da.extend_from_slice(&block[..self.a_block]);
            }
            if let Some(db) = db.as_mut() {
                db.extend_from_slice(&block[self.a_block..]);
            }
        }
        vec![da, db]
    }
}

struct LossBackward(LossKind);
impl<T: Float> Backward<T> for LossBackward {
    fn backward(&self, g: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let p = parents[0].data();
        let t = parents[1].data();
        let n = T::from_usize(p.len()).unwrap();
        let s = g[0] / n;
        let two = T::lit(2.0);
        let dp: Vec<T> = match self.0 {
            LossKind::L1 => p
                .iter()
                .zip(t.iter())
                .map(|(&p, &t)| {
                    let d = p - t;
                    if d > T::zero() {
                        s
                    } else if d < T::zero() {
                        -s
                    } else {
                        T::zero()
                    }
                })
                .collect(),
            LossKind::Mse => p.iter().zip(t.iter()).map(|(&p, &t)| s * two * (p - t)).collect(),
            LossKind::BceLogits => p.iter().zip(t.iter()).map(|(&x, &t)| s * (sigmoid(x) - t)).collect(),
        };
        let dt = needs[1].then(|| match self.0 {
            LossKind::L1 => dp.iter().map(|&v| -v).collect(),
            LossKind::Mse => dp.iter().map(|&v| -v).collect(),
            LossKind::BceLogits => p.iter().map(|&x| -s * x).collect(),
        });
        vec![needs[0].then_some(dp), dt]
    }
}

impl<T: Float> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "add")?;
        let out = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), other.clone()], Box::new(AddBackward)))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape(self, other, "mul")?;
        let out = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), out, vec![self.clone(), other.clone()], Box::new(MulBackward)))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        let out = self.data().iter().map(|&a| a * factor).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], Box::new(ScaleBackward(factor)))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum::<T>();
        Tensor::from_op(Vec::new(), vec![s], vec![self.clone()], Box::new(SumBackward { len: self.numel(), scale: 1.0 }))
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let s = self.data().iter().copied().sum::<T>() / T::from_usize(n).unwrap();
        Tensor::from_op(
            Vec::new(),
            vec![s],
            vec![self.clone()],
            Box::new(SumBackward { len: n, scale: 1.0 / n as f64 }),
        )
    }

    pub fn activation(&self, kind: Activation) -> Tensor<T> {
        let slope = T::lit(LEAKY_SLOPE);
        let out = self
            .data()
            .iter()
            .map(|&x| match kind {
                Activation::Relu => x.max(T::zero()),
                Activation::LeakyRelu => {
                    if x > T::zero() {
                        x
                    } else {
                        x * slope
                    }
                }
                Activation::Tanh => x.tanh(),
                Activation::Sigmoid => sigmoid(x),
            })
            .collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], Box::new(ActivationBackward(kind)))
    }

    /// Per-(sample, channel) standardization over the spatial plane followed
    /// by a per-channel affine transform.
    pub fn instance_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let [n, c, h, w] = match self.shape() {
            [a, b, c, d] => [*a, *b, *c, *d],
            s => return Err(TensorError::Shape(format!("instance_norm input must be rank 4, got {s:?}"))),
        };
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::Shape(format!(
                "instance_norm affine shapes {:?}/{:?} do not match {c} channels",
                gamma.shape(),
                beta.shape()
            )));
        }
        let plane = h * w;
        if plane <= 1 {
            return Err(TensorError::Degenerate(format!(
                "instance_norm over a {h}x{w} plane has no spread"
            )));
        }
        let mt = T::from_usize(plane).unwrap();
        let x = self.data();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for slot in 0..n * c {
            let ch = slot % c;
            let range = slot * plane..(slot + 1) * plane;
            let xs = &x[range.clone()];
            let mean = xs.iter().copied().sum::<T>() / mt;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mt;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for ((xh, o), &v) in xhat[range.clone()].iter_mut().zip(&mut out[range]).zip(xs) {
                *xh = (v - mean) * inv;
                *o = gd[ch] * *xh + bd[ch];
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(InstanceNormBackward { channels: c, plane, xhat, inv_std }),
        ))
    }

    /// Concatenate two rank-4 tensors along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(TensorError::Shape(format!("concat_channels: incompatible shapes {sa:?} and {sb:?}")));
        }
        let n = sa[0];
        let a_block = sa[1] * sa[2] * sa[3];
        let b_block = sb[1] * sb[2] * sb[3];
        let (ad, bd) = (self.data(), other.data());
        let mut out = Vec::with_capacity(ad.len() + bd.len());
        for s in 0..n {
            out.extend_from_slice(&ad[s * a_block..(s + 1) * a_block]);
            out.extend_from_slice(&bd[s * b_block..(s + 1) * b_block]);
        }
        drop((ad, bd));
        Ok(Tensor::from_op(
            vec![n, sa[1] + sb[1], sa[2], sa[3]],
            out,
            vec![self.clone(), other.clone()],
            Box::new(ConcatBackward { n, a_block, b_block }),
        ))
    }

    /// Mean-reduced loss of `self` (prediction) against `target`.
    pub fn loss(&self, target: &Tensor<T>, kind: LossKind) -> Result<Tensor<T>> {
        same_shape(self, target, "loss")?;
        let (p, t) = (self.data(), target.data());
        let n = T::from_usize(p.len()).unwrap();
        let total: T = match kind {
            LossKind::L1 => p.iter().zip(t.iter()).map(|(&p, &t)| (p - t).abs()).sum(),
            LossKind::Mse => p.iter().zip(t.iter()).map(|(&p, &t)| (p - t) * (p - t)).sum(),
            // max(x,0) - x*t + ln(1 + e^{-|x|})
            LossKind::BceLogits => p
                .iter()
                .zip(t.iter())
                .map(|(&x, &t)| x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p())
                .sum(),
        };
        drop((p, t));
        Ok(Tensor::from_op(
            Vec::new(),
            vec![total / n],
            vec![self.clone(), target.clone()],
            Box::new(LossBackward(kind)),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn activation_values() {
        let x = t1(&[-1.0, 0.0, 2.0]);
        assert_eq!(x.activation(Activation::LeakyRelu).to_vec(), vec![-0.2, 0.0, 2.0]);
        assert_eq!(t1(&[0.0]).activation(Activation::Tanh).item(), 0.0);
        assert_eq!(t1(&[0.0]).activation(Activation::Sigmoid).item(), 0.5);
        let neg = t1(&[-3.0, -0.5, -1e-6]);
        assert!(neg.activation(Activation::Relu).to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_values() {
        assert_eq!(t1(&[1.0]).loss(&t1(&[0.0]), LossKind::L1).unwrap().item(), 1.0);
        assert_eq!(t1(&[2.0]).loss(&t1(&[0.0]), LossKind::Mse).unwrap().item(), 4.0);
        let bce = t1(&[0.0]).loss(&t1(&[1.0]), LossKind::BceLogits).unwrap().item();
        assert!((bce - std::f32::consts::LN_2).abs() < 1e-6);
        let p = t1(&[0.3, -0.7, 0.1]);
        assert_eq!(p.loss(&p.detach(), LossKind::L1).unwrap().item(), 0.0);
        assert_eq!(p.loss(&p.detach(), LossKind::Mse).unwrap().item(), 0.0);
        assert!(matches!(p.loss(&t1(&[1.0]), LossKind::Mse), Err(TensorError::Shape(_))));
    }

    #[test]
    fn bce_logits_is_finite_over_wide_range() {
        let logits: Vec<f32> = (-88..=88).map(|v| v as f32).collect();
        let n = logits.len();
        for target in [0.0f32, 1.0] {
            let p = Tensor::parameter(&[n], logits.clone()).unwrap();
            let l = p.loss(&Tensor::full(&[n], target), LossKind::BceLogits).unwrap();
            assert!(l.item().is_finite());
            l.backward().unwrap();
            assert!(p.grad().unwrap().iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn instance_norm_standardizes() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0f32, 3.0]).unwrap();
        let y = x.instance_norm(&Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5).unwrap();
        let v = y.to_vec();
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4, "{v:?}");

        let c = Tensor::full(&[1, 2, 3, 3], 7.0f32);
        let y = c.instance_norm(&Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));

        let data: Vec<f32> = (0..32).map(|i| ((i * 37) % 11) as f32 * 0.3 - 1.0).collect();
        let x = Tensor::from_vec(&[1, 2, 4, 4], data).unwrap();
        let y = x.instance_norm(&Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-5).unwrap().to_vec();
        for ch in y.chunks(16) {
            let mean: f32 = ch.iter().sum::<f32>() / 16.0;
            let var: f32 = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 16.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn instance_norm_rejects_single_pixel_planes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let r = x.instance_norm(&Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), 1e-5);
        assert!(matches!(r, Err(TensorError::Degenerate(_))));
    }

    #[test]
    fn concat_shapes_and_gradient_split() {
        let a = Tensor::parameter(&[1, 3, 8, 8], vec![0.5f32; 192]).unwrap();
        let b = Tensor::parameter(&[1, 3, 8, 8], vec![-0.5f32; 192]).unwrap();
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.shape(), &[1, 6, 8, 8]);
        c.sum().backward().unwrap();
        assert!(a.grad().unwrap().iter().all(|&g| g == 1.0));
        assert!(b.grad().unwrap().iter().all(|&g| g == 1.0));
        let small = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        assert!(matches!(a.concat_channels(&small), Err(TensorError::Shape(_))));
    }
}
