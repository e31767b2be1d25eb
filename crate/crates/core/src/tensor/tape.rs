use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Conv2d { x: usize, w: usize, b: usize },
    PixelShuffle(usize, usize),
    Gelu(usize),
    Sigmoid(usize),
    AvgPool(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    ChannelAffine { x: usize, gamma: usize, beta: usize },
    GaussianFilter(usize, Arc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it
/// and a single reverse sweep visits each node once.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the leaf does not require a gradient or is unreachable
    /// from the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.idx).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but yields zeros for unreachable leaves.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; len])
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
        None => *slot = Some(contrib),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id {
            return Err(Error::DetachedTensor);
        }
        self.nodes.get(v.idx).ok_or(Error::DetachedTensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("var belongs to another tape").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn idx(&self, v: Var) -> Result<usize> {
        self.node(v).map(|_| v.idx)
    }

    /// `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let (m, k, k2, n) = match (av.shape(), bv.shape()) {
            ([m, k], [k2, n]) => (*m, *k, *k2, *n),
            (sa, sb) => return Err(Error::ShapeMismatch(format!("matmul of {sa:?} and {sb:?}"))),
        };
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims {k} vs {k2}"
            )));
        }
        let out = Tensor::new(
            vec![m, n],
            kernels::matmul_fwd(av.data(), bv.data(), m, k, n),
        )?;
        self.push("matmul", out, Op::MatMul(ai, bi), &[ai, bi])
    }

    /// Adds `b[n]` to every row of `x[m x n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xi, bi) = (self.idx(x)?, self.idx(b)?);
        let (xv, bv) = (&self.nodes[xi].value, &self.nodes[bi].value);
        let n = *xv.shape().last().unwrap();
        if bv.len() != n || xv.shape().len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "bias {:?} for input {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let data = xv
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(a, b)| a + b))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("add_bias", out, Op::AddBias(xi, bi), &[xi, bi])
    }

    /// Same-padded 2-D cross-correlation of `x[C_in x H x W]` with
    /// `w[C_out x C_in x k x k]` plus bias `b[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xv, wv, bv) = (
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            &self.nodes[bi].value,
        );
        let (c_in, h, wd) = xv.chw()?;
        let (c_out, wc_in, k, k2) = match wv.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(Error::ShapeMismatch(format!("conv weight shape {s:?}"))),
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel {k}x{k2} must be square and odd"
            )));
        }
        if wc_in != c_in || bv.len() != c_out {
            return Err(Error::ShapeMismatch(format!(
                "conv input channels {c_in}, weight {:?}, bias {:?}",
                wv.shape(),
                bv.shape()
            )));
        }
        let dims = ConvDims {
            c_in,
            c_out,
            h,
            w: wd,
            k,
        };
        let out = Tensor::new(
            vec![c_out, h, wd],
            kernels::conv2d_fwd(xv.data(), wv.data(), bv.data(), dims),
        )?;
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                x: xi,
                w: wi,
                b: bi,
            },
            &[xi, wi, bi],
        )
    }

    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let (c, h, w) = self.nodes[xi].value.chw()?;
        if s == 0 || c % (s * s) != 0 {
            return Err(Error::InvalidShape(format!(
                "{c} channels not divisible by {s}^2"
            )));
        }
        let co = c / (s * s);
        let out = Tensor::new(
            vec![co, h * s, w * s],
            kernels::pixel_shuffle_fwd(self.nodes[xi].value.data(), co, h, w, s),
        )?;
        self.push("pixel_shuffle", out, Op::PixelShuffle(xi, s), &[xi])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(kernels::gelu);
        self.push("gelu", out, Op::Gelu(xi), &[xi])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(kernels::sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(xi), &[xi])
    }

    pub fn avg_pool2d(&mut self, x: Var, f: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.avg_pool2d(f)?;
        self.push("avg_pool2d", out, Op::AvgPool(xi, f), &[xi])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        same_shape(name, av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, out, op(ai, bi), &[ai, bi])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(|v| v * c);
        self.push("scale", out, Op::Scale(xi, c), &[xi])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(|v| v + c);
        self.push("add_scalar", out, Op::AddScalar(xi), &[xi])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(f64::abs);
        self.push("abs", out, Op::Abs(xi), &[xi])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.map(|v| v * v);
        self.push("square", out, Op::Square(xi), &[xi])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = Tensor::scalar(self.nodes[xi].value.data().iter().sum());
        self.push("sum", out, Op::Sum(xi), &[xi])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = &self.nodes[xi].value;
        let out = Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64);
        self.push("mean", out, Op::Mean(xi), &[xi])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = self.nodes[xi].value.reshape(shape)?;
        self.push("reshape", out, Op::Reshape(xi), &[xi])
    }

    /// Per-channel `gamma[c] * x[c, ..] + beta[c]` on a `C x H x W` tensor.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (c, h, w) = self.nodes[xi].value.chw()?;
        if self.nodes[gi].value.len() != c || self.nodes[bi].value.len() != c {
            return Err(Error::ShapeMismatch(format!(
                "channel affine over {c} channels"
            )));
        }
        let plane = h * w;
        let (g, b) = (self.nodes[gi].value.data(), self.nodes[bi].value.data());
        let data = self.nodes[xi]
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| g[i / plane] * v + b[i / plane])
            .collect();
        let out = Tensor::new(vec![c, h, w], data)?;
        self.push(
            "channel_affine",
            out,
            Op::ChannelAffine {
                x: xi,
                gamma: gi,
                beta: bi,
            },
            &[xi, gi, bi],
        )
    }

    /// Valid-mode separable filtering of every channel of `x[C x H x W]`
    /// with the 1-D `taps` along rows and columns.
    pub fn gaussian_filter(&mut self, x: Var, taps: Arc<[f64]>) -> Result<Var> {
        let xi = self.idx(x)?;
        let (c, h, w) = self.nodes[xi].value.chw()?;
        let k = taps.len();
        if k == 0 || k > h || k > w {
            return Err(Error::WindowTooLarge {
                window: k,
                height: h,
                width: w,
            });
        }
        let data = kernels::sep_filter_fwd(self.nodes[xi].value.data(), c, h, w, &taps);
        let out = Tensor::new(vec![c, h - k + 1, w - k + 1], data)?;
        self.push("gaussian_filter", out, Op::GaussianFilter(xi, taps), &[xi])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.idx(loss)?;
        let lv = &self.nodes[li].value;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![1.0]);
        for idx in (0..=li).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].requires_grad;
        let mut send = |i: usize, contrib: Vec<f64>| {
            if self.nodes[i].requires_grad {
                accumulate(&mut grads[i], contrib);
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(a) {
                    send(a, kernels::matmul_bwd_a(g, bv.data(), m, k, n));
                }
                if needs(b) {
                    send(b, kernels::matmul_bwd_b(g, av.data(), m, k, n));
                }
            }
            Op::AddBias(x, b) => {
                let n = val(b).len();
                if needs(b) {
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(b, db);
                }
                send(x, g.to_vec());
            }
            Op::Conv2d { x, w, b } => {
                let (xv, wv) = (val(x), val(w));
                let s = wv.shape();
                let dims = ConvDims {
                    c_in: s[1],
                    c_out: s[0],
                    h: xv.shape()[1],
                    w: xv.shape()[2],
                    k: s[2],
                };
                let cg = kernels::conv2d_bwd(
                    g,
                    xv.data(),
                    wv.data(),
                    dims,
                    (needs(x), needs(w), needs(b)),
                );
                if let Some(dx) = cg.dx {
                    send(x, dx);
                }
                if let Some(dw) = cg.dw {
                    send(w, dw);
                }
                if let Some(db) = cg.db {
                    send(b, db);
                }
            }
            Op::PixelShuffle(x, s) => {
                let (c, h, w) = val(x).chw().unwrap();
                send(x, kernels::pixel_shuffle_bwd(g, c / (s * s), h, w, s));
            }
            Op::Gelu(x) => {
                send(
                    x,
                    val(x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| gv * kernels::gelu_grad(v))
                        .collect(),
                );
            }
            Op::Sigmoid(x) => {
                let out = node.value.data();
                send(
                    x,
                    out.iter()
                        .zip(g)
                        .map(|(&s, &gv)| gv * s * (1.0 - s))
                        .collect(),
                );
            }
            Op::AvgPool(x, f) => {
                let (c, h, w) = val(x).chw().unwrap();
                send(x, kernels::avg_pool_bwd(g, c, h, w, f));
            }
            Op::Add(a, b) => {
                send(a, g.to_vec());
                send(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(a, g.to_vec());
                send(b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                if needs(a) {
                    send(a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                }
                if needs(b) {
                    send(b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a).data(), val(b).data());
                if needs(a) {
                    send(a, g.iter().zip(bv).map(|(x, y)| x / y).collect());
                }
                if needs(b) {
                    send(
                        b,
                        g.iter()
                            .zip(av)
                            .zip(bv)
                            .map(|((gv, x), y)| -gv * x / (y * y))
                            .collect(),
                    );
                }
            }
            Op::Scale(x, c) => send(x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => send(x, g.to_vec()),
            Op::Abs(x) => {
                send(
                    x,
                    val(x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| gv * sign(v))
                        .collect(),
                );
            }
            Op::Square(x) => {
                send(
                    x,
                    val(x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| 2.0 * v * gv)
                        .collect(),
                );
            }
            Op::Sum(x) => send(x, vec![g[0]; val(x).len()]),
            Op::Mean(x) => {
                let n = val(x).len();
                send(x, vec![g[0] / n as f64; n]);
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let (c, h, w) = val(x).chw().unwrap();
                let plane = h * w;
                let (xv, gv) = (val(x).data(), val(gamma).data());
                if needs(x) {
                    send(
                        x,
                        g.iter()
                            .enumerate()
                            .map(|(i, &d)| d * gv[i / plane])
                            .collect(),
                    );
                }
                if needs(gamma) {
                    send(
                        gamma,
                        (0..c)
                            .map(|ch| {
                                let r = ch * plane..(ch + 1) * plane;
                                g[r.clone()].iter().zip(&xv[r]).map(|(a, b)| a * b).sum()
                            })
                            .collect(),
                    );
                }
                if needs(beta) {
                    send(
                        beta,
                        (0..c)
                            .map(|ch| g[ch * plane..(ch + 1) * plane].iter().sum())
                            .collect(),
                    );
                }
            }
            Op::GaussianFilter(x, ref taps) => {
                let (c, h, w) = val(x).chw().unwrap();
                send(x, kernels::sep_filter_bwd(g, c, h, w, taps));
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
