use super::kernels::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward rule for an operation defined outside this module.
pub trait CustomBackward<T: Scalar> {
    /// Gradient for each input given the upstream gradient of the output.
    fn backward(&self, inputs: &[&Tensor<T>], grad_out: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    LnClamped(Var, T),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    PixelShuffle(Var, usize),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    ChannelScale(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanAbsDiff(Var, Var),
    MeanSqDiff(Var, Var),
    UpsampleNearest(Var, usize),
    Reshape(Var),
    Custom(Vec<Var>, Box<dyn CustomBackward<T>>),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

struct Binding<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    trainable: bool,
    vars: Vec<Option<Var>>,
}

/// Define-by-run tape: every op appends a node whose inputs precede it, so
/// node order is a topological order and backward is one reverse sweep.
pub struct Graph<'p, T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    bindings: Vec<Binding<'p, T>>,
    branches: Option<BranchTape>,
}

#[derive(Default)]
struct BranchTape {
    sides: Vec<Vec<bool>>,
    replay: bool,
    cursor: usize,
    diverged: bool,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bindings: Vec::new(),
            branches: None,
        }
    }

    /// Starts recording which side of its kink every non-smooth op lands on.
    pub fn record_branches(&mut self) {
        self.branches = Some(BranchTape::default());
    }

    /// Evaluates non-smooth ops on the sides given by an earlier recording
    /// instead of the sides their inputs select, so the graph computes one
    /// smooth piece of the function.
    pub fn replay_branches(&mut self, sides: Vec<Vec<bool>>) {
        self.branches = Some(BranchTape {
            sides,
            replay: true,
            ..BranchTape::default()
        });
    }

    pub fn take_branches(&mut self) -> Option<Vec<Vec<bool>>> {
        self.branches.take().map(|t| t.sides)
    }

    /// True if, during replay, some input fell on the other side of a kink
    /// than the recording prescribed.
    pub fn branches_diverged(&self) -> bool {
        self.branches.as_ref().is_some_and(|t| t.diverged)
    }

    /// Returns the side each element takes: the actual one, or the
    /// prescribed one when replaying.
    fn branch_sides(&mut self, actual: Vec<bool>) -> Result<Vec<bool>> {
        let Some(tape) = self.branches.as_mut() else {
            return Ok(actual);
        };
        if !tape.replay {
            tape.sides.push(actual.clone());
            return Ok(actual);
        }
        let pinned = tape
            .sides
            .get(tape.cursor)
            .filter(|p| p.len() == actual.len())
            .ok_or_else(|| Error::usage("replayed branch tape does not match the graph"))?
            .clone();
        tape.cursor += 1;
        tape.diverged |= pinned != actual;
        Ok(pinned)
    }

    /// Makes the tensors of `store` reachable through [`Graph::param`].
    /// Frozen stores enter the graph as constants.
    pub fn bind(&mut self, store: &'p ParamStore<T>, trainable: bool) {
        self.bindings.push(Binding {
            store,
            trainable,
            vars: vec![None; store.len()],
        });
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite output from {} producing {:?}",
                op_name(&op),
                value.shape()
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Free leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf for a bound parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let bi = self
            .bindings
            .iter()
            .position(|b| b.store.tag() == id.tag)
            .ok_or_else(|| Error::usage("parameter store not bound to this graph"))?;
        if let Some(v) = self.bindings[bi].vars[id.index] {
            return Ok(v);
        }
        let value = self.bindings[bi].store.get(id).clone();
        let trainable = self.bindings[bi].trainable;
        let v = self.leaf(value, trainable);
        self.bindings[bi].vars[id.index] = Some(v);
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let mut out = ta.clone();
        out.add_assign(tb);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x - *y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Result<Var> {
        let out = if self.branches.is_some() {
            let sides = self.branch_sides(self.value(a).data().iter().map(|x| *x >= T::zero()).collect())?;
            let mut out = self.value(a).clone();
            out.data_mut()
                .iter_mut()
                .zip(sides)
                .for_each(|(x, pos)| if !pos { *x = alpha * *x });
            out
        } else {
            self.value(a).map(|x| if x >= T::zero() { x } else { alpha * x })
        };
        self.push(out, Op::LeakyRelu(a, alpha), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, a: Var, eps: T) -> Result<Var> {
        let out = if self.branches.is_some() {
            let sides = self.branch_sides(self.value(a).data().iter().map(|x| *x > eps).collect())?;
            let mut out = self.value(a).clone();
            out.data_mut()
                .iter_mut()
                .zip(sides)
                .for_each(|(x, open)| *x = if open { x.ln() } else { eps.ln() });
            out
        } else {
            self.value(a).map(|x| x.max(eps).ln())
        };
        self.push(out, Op::LnClamped(a, eps), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        let [c_out, wc, k, k2] = ws[..] else {
            return Err(Error::dim(format!("conv2d weight must be 4-D, got {ws:?}")));
        };
        if wc != c_in || k != k2 {
            return Err(Error::dim(format!(
                "conv2d weight {ws:?} does not fit input with {c_in} channels"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::dim(format!("conv2d bias {:?}, expected [{c_out}]", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(c_in, h, wd, k, stride, pad)
            .ok_or_else(|| Error::dim(format!("conv2d kernel {k} too large for {h}x{wd} with pad {pad}")))?;
        let (out, cols) = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            c_out,
            &geom,
        );
        let out = Tensor::new(&[c_out, geom.h_out, geom.w_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Conv2d { x, w, b, geom, cols }, &inputs)
    }

    /// Per-channel convolution with `w[C,1,k,k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, wd) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        let [wc, one, k, k2] = ws[..] else {
            return Err(Error::dim(format!("depthwise weight must be 4-D, got {ws:?}")));
        };
        if wc != c || one != 1 || k != k2 {
            return Err(Error::dim(format!(
                "depthwise weight {ws:?} does not fit input with {c} channels"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(Error::dim(format!("depthwise bias {:?}, expected [{c}]", self.shape(b))));
            }
        }
        let geom = ConvGeom::new(c, h, wd, k, stride, pad)
            .ok_or_else(|| Error::dim(format!("depthwise kernel {k} too large for {h}x{wd}")))?;
        let out = kernels::depthwise_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let out = Tensor::new(&[c, geom.h_out, geom.w_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Depthwise { x, w, b, geom }, &inputs)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::dim(format!(
                "pixel_shuffle: {c} channels not divisible by {r}^2"
            )));
        }
        let co = c / (r * r);
        let data = kernels::pixel_shuffle(self.value(x).data(), co, h, w, r, false);
        let out = Tensor::new(&[co, h * r, w * r], data)?;
        self.push(out, Op::PixelShuffle(x, r), &[x])
    }

    /// Concatenation along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() == 0 || t.shape()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat: {:?} does not match trailing extents {:?}",
                    t.shape(),
                    tail
                )));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let out = Tensor::new(&shape, data)?;
        self.push(out, Op::Concat(parts.to_vec()), parts)
    }

    /// `[C,H,W] -> [C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let n = T::of((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().copied().sum::<T>() / n)
            .collect();
        let out = Tensor::new(&[c], data)?;
        self.push(out, Op::GlobalAvgPool(x), &[x])
    }

    /// Fully connected layer: `w[out,in]·flatten(x) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        let [n_out, n_in] = ws[..] else {
            return Err(Error::dim(format!("linear weight must be 2-D, got {ws:?}")));
        };
        if self.value(x).len() != n_in {
            return Err(Error::dim(format!(
                "linear: input {:?} does not have {n_in} values",
                self.shape(x)
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [n_out] {
                return Err(Error::dim(format!("linear bias {:?}, expected [{n_out}]", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n_out];
        super::tensor::matmul(
            super::tensor::MatRef::new(self.value(w).data(), n_out, n_in),
            super::tensor::MatRef::new(self.value(x).data(), n_in, 1),
            &mut out,
            false,
        );
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(self.value(b).data()) {
                *o = *o + *bv;
            }
        }
        let out = Tensor::new(&[n_out], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Linear { x, w, b }, &inputs)
    }

    /// `x[c,h,w] * gate[c]`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.shape(gate) != [c] {
            return Err(Error::dim(format!(
                "channel_scale: gate {:?} for {c} channels",
                self.shape(gate)
            )));
        }
        let g = self.value(gate).data().to_vec();
        let mut out = self.value(x).clone();
        for (plane, gv) in out.data_mut().chunks_exact_mut(h * w).zip(&g) {
            for v in plane {
                *v = *v * *gv;
            }
        }
        self.push(out, Op::ChannelScale(x, gate), &[x, gate])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.len().max(1);
        let out = Tensor::scalar(t.sum() / T::of(n as f64));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean absolute difference (L1).
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mean_abs_diff", ta, tb)?;
        let n = T::of(ta.len().max(1) as f64);
        let s: T = if self.branches.is_some() {
            let sides = self.branch_sides(ta.data().iter().zip(tb.data()).map(|(x, y)| x >= y).collect())?;
            let (ta, tb) = (self.value(a), self.value(b));
            ta.data()
                .iter()
                .zip(tb.data())
                .zip(sides)
                .map(|((x, y), up)| if up { *x - *y } else { *y - *x })
                .sum()
        } else {
            ta.data().iter().zip(tb.data()).map(|(x, y)| (*x - *y).abs()).sum()
        };
        self.push(Tensor::scalar(s / n), Op::MeanAbsDiff(a, b), &[a, b])
    }

    /// Mean squared difference (L2).
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mean_sq_diff", ta, tb)?;
        let n = T::of(ta.len().max(1) as f64);
        let s: T = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (*x - *y) * (*x - *y))
            .sum();
        self.push(Tensor::scalar(s / n), Op::MeanSqDiff(a, b), &[a, b])
    }

    /// Nearest-neighbour upsampling of `[C,H,W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, f: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if f == 0 {
            return Err(Error::usage("upsample factor must be positive"));
        }
        let src = self.value(x).data();
        let (ho, wo) = (h * f, w * f);
        let mut data = vec![T::zero(); c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    data[(ch * ho + y) * wo + xx] = src[(ch * h + y / f) * w + xx / f];
                }
            }
        }
        let out = Tensor::new(&[c, ho, wo], data)?;
        self.push(out, Op::UpsampleNearest(x, f), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, rule: Box<dyn CustomBackward<T>>) -> Result<Var> {
        self.push(output, Op::Custom(inputs.to_vec(), rule), inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(node, &gy, &mut grads)?;
        }
        Ok(Gradients {
            grads,
            bindings: self
                .bindings
                .iter()
                .filter(|b| b.trainable)
                .map(|b| (b.store.tag(), b.vars.clone()))
                .collect(),
        })
    }

    fn backprop_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let like = |v: Var, data: Vec<T>| Tensor::new(self.nodes[v.0].value.shape(), data);
        let gd = gy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = gd.iter().zip(val(*b).data()).map(|(g, y)| *g * *y).collect();
                    acc(*a, like(*a, d)?);
                }
                if needs(*b) {
                    let d = gd.iter().zip(val(*a).data()).map(|(g, x)| *g * *x).collect();
                    acc(*b, like(*b, d)?);
                }
            }
            Op::Scale(a, c) => acc(*a, gy.map(|g| g * *c)),
            Op::Offset(a) => acc(*a, gy.clone()),
            Op::LeakyRelu(a, alpha) => {
                let d = gd
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, x)| if *x >= T::zero() { *g } else { *g * *alpha })
                    .collect();
                acc(*a, like(*a, d)?);
            }
            Op::Sigmoid(a) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, s)| *g * *s * (T::one() - *s))
                    .collect();
                acc(*a, like(*a, d)?);
            }
            Op::LnClamped(a, eps) => {
                let d = gd
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, x)| if *x > *eps { *g / *x } else { T::zero() })
                    .collect();
                acc(*a, like(*a, d)?);
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let c_out = val(*w).shape()[0];
                let r = kernels::conv2d_backward(
                    val(*x).data(),
                    cols,
                    val(*w).data(),
                    gd,
                    c_out,
                    geom,
                    (needs(*x), needs(*w), b.is_some_and(needs)),
                );
                if let Some(d) = r.dx {
                    acc(*x, like(*x, d)?);
                }
                if let Some(d) = r.dw {
                    acc(*w, like(*w, d)?);
                }
                if let (Some(b), Some(d)) = (b, r.db) {
                    acc(*b, like(*b, d)?);
                }
            }
            Op::Depthwise { x, w, b, geom } => {
                let r = kernels::depthwise_backward(
                    val(*x).data(),
                    val(*w).data(),
                    gd,
                    geom,
                    (needs(*x), needs(*w), b.is_some_and(needs)),
                );
                if let Some(d) = r.dx {
                    acc(*x, like(*x, d)?);
                }
                if let Some(d) = r.dw {
                    acc(*w, like(*w, d)?);
                }
                if let (Some(b), Some(d)) = (b, r.db) {
                    acc(*b, like(*b, d)?);
                }
            }
            Op::PixelShuffle(x, r) => {
                let (c, h, w) = val(*x).chw()?;
                let d = kernels::pixel_shuffle(gd, c / (r * r), h, w, *r, true);
                acc(*x, like(*x, d)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        acc(p, like(p, gd[offset..offset + n].to_vec())?);
                    }
                    offset += n;
                }
            }
            Op::GlobalAvgPool(x) => {
                let (_, h, w) = val(*x).chw()?;
                let inv = T::one() / T::of((h * w) as f64);
                let mut d = Vec::with_capacity(val(*x).len());
                for g in gd {
                    d.extend(std::iter::repeat_n(*g * inv, h * w));
                }
                acc(*x, like(*x, d)?);
            }
            Op::Linear { x, w, b } => {
                let xs = val(*x).data();
                let ws = val(*w).data();
                let n_in = xs.len();
                if needs(*w) {
                    let mut d = Vec::with_capacity(ws.len());
                    for g in gd {
                        d.extend(xs.iter().map(|xv| *g * *xv));
                    }
                    acc(*w, like(*w, d)?);
                }
                if needs(*x) {
                    let mut d = vec![T::zero(); n_in];
                    for (row, g) in ws.chunks_exact(n_in).zip(gd) {
                        for (dv, wv) in d.iter_mut().zip(row) {
                            *dv = *dv + *g * *wv;
                        }
                    }
                    acc(*x, like(*x, d)?);
                }
                if let Some(b) = b {
                    acc(*b, like(*b, gd.to_vec())?);
                }
            }
            Op::ChannelScale(x, gate) => {
                let (_, h, w) = val(*x).chw()?;
                let gv = val(*gate).data();
                if needs(*x) {
                    let mut d = gy.clone();
                    for (plane, s) in d.data_mut().chunks_exact_mut(h * w).zip(gv) {
                        for v in plane {
                            *v = *v * *s;
                        }
                    }
                    acc(*x, d);
                }
                if needs(*gate) {
                    let d = gd
                        .chunks_exact(h * w)
                        .zip(val(*x).data().chunks_exact(h * w))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(g, xv)| *g * *xv).sum())
                        .collect();
                    acc(*gate, like(*gate, d)?);
                }
            }
            Op::Sum(x) => {
                let g = gy.item();
                acc(*x, Tensor::full(val(*x).shape(), g));
            }
            Op::Mean(x) => {
                let n = T::of(val(*x).len().max(1) as f64);
                acc(*x, Tensor::full(val(*x).shape(), gy.item() / n));
            }
            Op::MeanAbsDiff(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let s = gy.item() / T::of(ta.len().max(1) as f64);
                let d: Vec<T> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| {
                        let r = *x - *y;
                        if r > T::zero() {
                            s
                        } else if r < T::zero() {
                            -s
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if needs(*b) {
                    acc(*b, like(*b, d.iter().map(|v| -*v).collect())?);
                }
                acc(*a, like(*a, d)?);
            }
            Op::MeanSqDiff(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let s = T::of(2.0) * gy.item() / T::of(ta.len().max(1) as f64);
                let d: Vec<T> = ta.data().iter().zip(tb.data()).map(|(x, y)| s * (*x - *y)).collect();
                if needs(*b) {
                    acc(*b, like(*b, d.iter().map(|v| -*v).collect())?);
                }
                acc(*a, like(*a, d)?);
            }
            Op::UpsampleNearest(x, f) => {
                let (c, h, w) = val(*x).chw()?;
                let (ho, wo) = (h * f, w * f);
                let mut d = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let i = (ch * h + y / f) * w + xx / f;
                            d[i] = d[i] + gd[(ch * ho + y) * wo + xx];
                        }
                    }
                }
                acc(*x, like(*x, d)?);
            }
            Op::Reshape(x) => acc(*x, like(*x, gd.to_vec())?),
            Op::Custom(inputs, rule) => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
                let outs = rule.backward(&ins, gy);
                for (v, g) in inputs.iter().zip(outs) {
                    if let Some(g) = g {
                        if g.shape() != val(*v).shape() {
                            return Err(Error::dim("custom backward returned a mis-shaped gradient"));
                        }
                        acc(*v, g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn op_name<T: Scalar>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Offset(..) => "add_scalar",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::LnClamped(..) => "ln",
        Op::Conv2d { .. } => "conv2d",
        Op::Depthwise { .. } => "depthwise_conv2d",
        Op::PixelShuffle(..) => "pixel_shuffle",
        Op::Concat(..) => "concat",
        Op::GlobalAvgPool(..) => "global_avg_pool",
        Op::Linear { .. } => "linear",
        Op::ChannelScale(..) => "channel_scale",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::MeanAbsDiff(..) => "mean_abs_diff",
        Op::MeanSqDiff(..) => "mean_sq_diff",
        Op::UpsampleNearest(..) => "upsample_nearest",
        Op::Reshape(..) => "reshape",
        Op::Custom(..) => "custom",
    }
}

/// Gradients of one backward sweep, addressable by leaf or parameter.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    bindings: Vec<(u32, Vec<Option<Var>>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::variable`] or `param`.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        let (_, vars) = self.bindings.iter().find(|(tag, _)| *tag == id.tag)?;
        vars.get(id.index).copied().flatten().and_then(|v| self.wrt(v))
    }

    /// Adds `scale * grad` for every parameter of `store` into `acc`
    /// (laid out like `store.zeros_like()`).
    pub fn accumulate(&self, store: &ParamStore<T>, acc: &mut [Tensor<T>], scale: T) {
        for id in store.ids() {
            if let Some(g) = self.param(id) {
                let dst = acc[id.index].data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d = *d + scale * *s;
                }
            }
        }
    }
}
