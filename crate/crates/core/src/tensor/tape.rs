use rand::Rng;

use super::conv::{conv3d_backward, conv3d_forward};
use super::norm::{instance_norm_backward, instance_norm_forward};
use super::pool::{maxpool3d_forward, upsample3d_backward, upsample3d_forward};
use super::{Element, Tensor, TensorError};
use crate::ssim::{ssim3d_with_grad, SsimParams};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        input: Var,
        scale: T,
    },
    Sum(Var),
    Mean(Var),
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        padding: usize,
    },
    InstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Prelu {
        input: Var,
        alpha: Var,
    },
    Relu(Var),
    Dropout {
        input: Var,
        /// Per-element multiplier: 0 for dropped, `1/(1-rate)` for kept.
        scale: Vec<T>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample(Var),
    Concat(Var, Var),
    MaskedMae {
        pred: Var,
        target: Vec<T>,
        mask: Vec<bool>,
        count: usize,
    },
    Ssim {
        pred: Var,
        target: Tensor<T>,
        params: SsimParams,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a differentiable computation.
///
/// Nodes are appended in evaluation order and never removed, so the order of
/// creation is a valid topological order for the backward sweep.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of `var`, or `None` when no gradient reached it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero-filled when it was not reached.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), TensorError> {
    if a == b {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            expected: a.to_vec(),
            actual: b.to_vec(),
        })
    }
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
        None => *slot = Some(g),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that participates in gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that does not participate in gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Var, Var) -> Op<T>,
    ) -> Result<Var, TensorError> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, make(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine { input: x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean",
                reason: "mean of an empty tensor".into(),
            });
        }
        let value = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// Stride-1 convolution; `weight` is `[cout, cin, kd, kh, kw]`, `bias` is `[cout]`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Result<Var, TensorError> {
        let xd = self.value(input).dims5("conv3d")?;
        let wd = self.value(weight).dims5("conv3d")?;
        let (out, od) = conv3d_forward(
            self.value(input).data(),
            xd,
            self.value(weight).data(),
            wd,
            self.value(bias).data(),
            padding,
        )?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            Tensor::new(od.to_vec(), out)?,
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
            },
            rg,
        ))
    }

    /// Per-instance, per-channel normalization with learnable `gamma`, `beta` of shape `[C]`.
    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, TensorError> {
        let dims = self.value(input).dims5("instance_norm")?;
        let c = dims[1];
        same_shape("instance_norm", &[c], self.shape(gamma))?;
        same_shape("instance_norm", &[c], self.shape(beta))?;
        if dims[2] * dims[3] * dims[4] == 0 {
            return Err(TensorError::InvalidShape {
                op: "instance_norm",
                reason: "spatial volume must be at least one voxel".into(),
            });
        }
        let out = instance_norm_forward(
            self.value(input).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(dims.to_vec(), out.output)?,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
            },
            rg,
        ))
    }

    /// Parametric ReLU with a single learnable slope (`alpha` has one element).
    pub fn prelu(&mut self, input: Var, alpha: Var) -> Result<Var, TensorError> {
        let a = self.value(alpha).item().ok_or_else(|| TensorError::ShapeMismatch {
            op: "prelu",
            expected: vec![1],
            actual: self.shape(alpha).to_vec(),
        })?;
        let value = self.value(input).map(|x| if x >= T::zero() { x } else { a * x });
        let rg = self.rg(input) || self.rg(alpha);
        Ok(self.push(value, Op::Prelu { input, alpha }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(input);
        self.push(value, Op::Relu(input), rg)
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is zero;
    /// the generator is only consumed in the stochastic case.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("rate {rate} outside [0, 1)"),
            });
        }
        let n = self.value(input).len();
        let scale = if training && rate > 0.0 {
            let keep = T::lit(1.0 / (1.0 - rate));
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                .collect()
        } else {
            vec![T::one(); n]
        };
        let v = self.value(input);
        let data = v.data().iter().zip(&scale).map(|(&x, &s)| x * s).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Dropout { input, scale }, rg))
    }

    /// Non-overlapping 2×2×2 max pooling.
    pub fn maxpool3d(&mut self, input: Var) -> Result<Var, TensorError> {
        let dims = self.value(input).dims5("maxpool3d")?;
        let (values, argmax, od) = maxpool3d_forward(self.value(input).data(), dims)?;
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(od.to_vec(), values)?, Op::MaxPool { input, argmax }, rg))
    }

    /// Nearest-neighbour upsampling by two along each spatial axis.
    pub fn upsample3d(&mut self, input: Var) -> Result<Var, TensorError> {
        let dims = self.value(input).dims5("upsample3d")?;
        let (values, od) = upsample3d_forward(self.value(input).data(), dims);
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(od.to_vec(), values)?, Op::Upsample(input), rg))
    }

    /// Channel-axis concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let [n, ca, d, h, w] = self.value(a).dims5("concat_channels")?;
        let db = self.value(b).dims5("concat_channels")?;
        if [db[0], db[2], db[3], db[4]] != [n, d, h, w] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                expected: vec![n, db[1], d, h, w],
                actual: db.to_vec(),
            });
        }
        let cb = db[1];
        let vol = d * h * w;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for i in 0..n {
            data.extend_from_slice(&va[i * ca * vol..(i + 1) * ca * vol]);
            data.extend_from_slice(&vb[i * cb * vol..(i + 1) * cb * vol]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, ca + cb, d, h, w], data)?, Op::Concat(a, b), rg))
    }

    /// Mean absolute error over elements where `mask` is set.
    pub fn masked_mae(&mut self, pred: Var, target: &Tensor<T>, mask: &[bool]) -> Result<Var, TensorError> {
        same_shape("masked_mae", self.shape(pred), target.shape())?;
        if mask.len() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_mae",
                expected: target.shape().to_vec(),
                actual: vec![mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::InvalidArgument {
                op: "masked_mae",
                reason: "evaluation region is empty".into(),
            });
        }
        let p = self.value(pred).data();
        let total: T = p
            .iter()
            .zip(target.data())
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&a, &b), _)| (a - b).abs())
            .sum();
        let value = Tensor::scalar(total / T::lit(count as f64));
        let rg = self.rg(pred);
        Ok(self.push(
            value,
            Op::MaskedMae {
                pred,
                target: target.data().to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Mean 3D SSIM between `pred` and a constant `target`, averaged over every
    /// `(n, c)` volume.
    pub fn ssim3d(&mut self, pred: Var, target: &Tensor<T>, params: &SsimParams) -> Result<Var, TensorError> {
        same_shape("ssim3d", self.shape(pred), target.shape())?;
        let [n, c, d, h, w] = target.dims5("ssim3d")?;
        let vol = d * h * w;
        let p = self.value(pred).data();
        let mut total = T::zero();
        for i in 0..n * c {
            let s = crate::ssim::ssim3d(&p[i * vol..][..vol], &target.data()[i * vol..][..vol], [d, h, w], params)?;
            total = total + s;
        }
        let value = Tensor::scalar(total / T::lit((n * c) as f64));
        let rg = self.rg(pred);
        Ok(self.push(
            value,
            Op::Ssim {
                pred,
                target: target.clone(),
                params: *params,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let l = lv.data()[0];
        if !l.is_finite() {
            return Err(TensorError::NonFiniteLoss(l.as_f64()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.node_backward(node, &g)?;
            for (parent, pg) in contributions {
                if self.rg(parent) {
                    accumulate(&mut grads[parent.0], pg);
                }
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    /// Gradient contributions from one node to its parents.
    fn node_backward(&self, node: &Node<T>, g: &[T]) -> Result<Vec<(Var, Vec<T>)>, TensorError> {
        let val = |v: Var| self.value(v).data();
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&x| -x).collect())],
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect();
                let gb = g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Affine { input, scale } => vec![(*input, g.iter().map(|&x| x * *scale).collect())],
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::Mean(x) => {
                let n = self.value(*x).len();
                vec![(*x, vec![g[0] / T::lit(n as f64); n])]
            }
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
            } => {
                let gr = conv3d_backward(
                    val(*input),
                    self.value(*input).dims5("conv3d")?,
                    val(*weight),
                    self.value(*weight).dims5("conv3d")?,
                    *padding,
                    g,
                )?;
                vec![(*input, gr.input), (*weight, gr.weight), (*bias, gr.bias)]
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let dims = self.value(*input).dims5("instance_norm")?;
                let (dx, dg, db) = instance_norm_backward(g, dims, val(*gamma), xhat, inv_std);
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Prelu { input, alpha } => {
                let a = val(*alpha)[0];
                let x = val(*input);
                let gx = g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv >= T::zero() { gv } else { a * gv })
                    .collect();
                let ga = g
                    .iter()
                    .zip(x)
                    .filter(|(_, &xv)| xv < T::zero())
                    .map(|(&gv, &xv)| gv * xv)
                    .sum();
                vec![(*input, gx), (*alpha, vec![ga])]
            }
            Op::Relu(input) => {
                let gx = g
                    .iter()
                    .zip(val(*input))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*input, gx)]
            }
            Op::Dropout { input, scale } => {
                vec![(*input, g.iter().zip(scale).map(|(&a, &s)| a * s).collect())]
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = vec![T::zero(); self.value(*input).len()];
                for (&i, &gv) in argmax.iter().zip(g) {
                    gx[i] = gx[i] + gv;
                }
                vec![(*input, gx)]
            }
            Op::Upsample(input) => {
                let dims = self.value(*input).dims5("upsample3d")?;
                vec![(*input, upsample3d_backward(g, dims))]
            }
            Op::Concat(a, b) => {
                let [n, ca, d, h, w] = self.value(*a).dims5("concat_channels")?;
                let cb = self.value(*b).dims5("concat_channels")?[1];
                let vol = d * h * w;
                let mut ga = Vec::with_capacity(n * ca * vol);
                let mut gb = Vec::with_capacity(n * cb * vol);
                for chunk in g.chunks((ca + cb) * vol) {
                    ga.extend_from_slice(&chunk[..ca * vol]);
                    gb.extend_from_slice(&chunk[ca * vol..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::MaskedMae {
                pred,
                target,
                mask,
                count,
            } => {
                let scale = g[0] / T::lit(*count as f64);
                let gp = val(*pred)
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&p, &t), &m)| {
                        if !m || p == t {
                            T::zero()
                        } else if p > t {
                            scale
                        } else {
                            -scale
                        }
                    })
                    .collect();
                vec![(*pred, gp)]
            }
            Op::Ssim { pred, target, params } => {
                let [n, c, d, h, w] = target.dims5("ssim3d")?;
                let vol = d * h * w;
                let inst = T::lit((n * c) as f64);
                let p = val(*pred);
                let mut gp = Vec::with_capacity(p.len());
                for i in 0..n * c {
                    let (_, gx, _) = ssim3d_with_grad(
                        &p[i * vol..][..vol],
                        &target.data()[i * vol..][..vol],
                        [d, h, w],
                        params,
                    )?;
                    gp.extend(gx.into_iter().map(|v| v * g[0] / inst));
                }
                vec![(*pred, gp)]
            }
        })
    }
}
