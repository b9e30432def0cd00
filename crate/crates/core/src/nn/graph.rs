//! Static computation graph with reverse-mode differentiation.
//!
//! Nodes are created in topological order by the builders in `model`, so
//! forward execution is a single pass over the node list and backward a
//! single reverse pass. Only ancestors of the requested outputs are
//! computed, and only nodes actually reached by a gradient contribute
//! parameter gradients.

use ndarray::{concatenate, Array2, Array4, Axis};

use super::norm::BnSaved;
use super::{BatchNorm, Conv2d, Dense, ParamStore, Scalar, StateStore};

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub enum Op {
    /// Placeholder for the i-th graph input.
    Input(usize),
    Conv(Conv2d),
    Norm(BatchNorm),
    Relu,
    Add,
    /// Element-wise product of two same-shape maps.
    Mul,
    /// Nearest-neighbor spatial upsampling.
    Upsample {
        factor: usize,
    },
    /// Concatenate along the channel axis.
    ConcatChannels,
    /// Concatenate along the row (height) axis.
    ConcatRows,
    /// [N,C,H,W] -> [N, C*H*W]
    Flatten,
    Dense(Dense),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub enum Value<T> {
    A4(Array4<T>),
    A2(Array2<T>),
}

impl<T: Scalar> Value<T> {
    pub fn a4(&self) -> &Array4<T> {
        match self {
            Value::A4(a) => a,
            Value::A2(_) => panic!("expected rank-4 value"),
        }
    }

    pub fn a2(&self) -> &Array2<T> {
        match self {
            Value::A2(a) => a,
            Value::A4(_) => panic!("expected rank-2 value"),
        }
    }

    fn accumulate(slot: &mut Option<Value<T>>, add: Value<T>) {
        match slot {
            None => *slot = Some(add),
            Some(Value::A4(g)) => match add {
                Value::A4(a) => g.zip_mut_with(&a, |x, y| *x = *x + *y),
                Value::A2(_) => panic!("gradient rank mismatch"),
            },
            Some(Value::A2(g)) => match add {
                Value::A2(a) => g.zip_mut_with(&a, |x, y| *x = *x + *y),
                Value::A4(_) => panic!("gradient rank mismatch"),
            },
        }
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Value::A4(a) => a.iter().all(|v| v.is_finite()),
            Value::A2(a) => a.iter().all(|v| v.is_finite()),
        }
    }
}

/// Normalization state access mode for a forward pass.
pub enum BnState<'a, T> {
    /// Training: batch statistics, running estimates updated.
    Train(&'a mut StateStore<T>),
    /// Inference: fixed running statistics.
    Eval(&'a StateStore<T>),
}

/// Saved activations of one forward pass.
pub struct Tape<T> {
    pub values: Vec<Option<Value<T>>>,
    bn_saved: Vec<Option<BnSaved<T>>>,
    conv_cols: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn value(&self, id: NodeId) -> &Value<T> {
        self.values[id].as_ref().expect("value not computed")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub nodes: Vec<Node>,
    pub num_inputs: usize,
}

impl Graph {
    pub fn input(&mut self) -> NodeId {
        let idx = self.num_inputs;
        self.num_inputs += 1;
        self.push(Op::Input(idx), &[])
    }

    pub fn push(&mut self, op: Op, inputs: &[NodeId]) -> NodeId {
        for &i in inputs {
            assert!(i < self.nodes.len(), "graph inputs must already exist");
        }
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
        });
        self.nodes.len() - 1
    }

    fn needed(&self, wanted: &[NodeId]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        let mut stack: Vec<NodeId> = wanted.to_vec();
        while let Some(id) = stack.pop() {
            if mark[id] {
                continue;
            }
            mark[id] = true;
            stack.extend_from_slice(&self.nodes[id].inputs);
        }
        mark
    }

    /// Run the graph over `inputs`, computing only ancestors of `wanted`.
    pub fn forward<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        mut bn: BnState<'_, T>,
        inputs: Vec<Value<T>>,
        wanted: &[NodeId],
    ) -> Tape<T> {
        assert_eq!(inputs.len(), self.num_inputs, "graph input count");
        let needed = self.needed(wanted);
        let keep_cols = matches!(bn, BnState::Train(_));
        let mut values: Vec<Option<Value<T>>> = vec![None; self.nodes.len()];
        let mut bn_saved: Vec<Option<BnSaved<T>>> = vec![None; self.nodes.len()];
        let mut conv_cols: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        let mut inputs: Vec<Option<Value<T>>> = inputs.into_iter().map(Some).collect();
        for id in 0..self.nodes.len() {
            if !needed[id] {
                continue;
            }
            let node = &self.nodes[id];
            let out = match &node.op {
                Op::Input(i) => inputs[*i].take().expect("input consumed twice"),
                Op::Conv(conv) => {
                    let x = values[node.inputs[0]].as_ref().unwrap().a4();
                    let (y, cols) = conv.forward_keep_cols(ps, &x.view(), keep_cols);
                    conv_cols[id] = cols;
                    Value::A4(y)
                }
                Op::Norm(bnorm) => {
                    let x = values[node.inputs[0]].as_ref().unwrap().a4();
                    match &mut bn {
                        BnState::Train(st) => {
                            let (y, saved) = bnorm.forward_train(ps, st, &x.view());
                            bn_saved[id] = Some(saved);
                            Value::A4(y)
                        }
                        BnState::Eval(st) => Value::A4(bnorm.forward_eval(ps, st, &x.view())),
                    }
                }
                Op::Relu => match values[node.inputs[0]].as_ref().unwrap() {
                    Value::A4(x) => Value::A4(x.map(|v| v.maxv(T::from_f64(0.0)))),
                    Value::A2(x) => Value::A2(x.map(|v| v.maxv(T::from_f64(0.0)))),
                },
                Op::Add => {
                    let a = values[node.inputs[0]].as_ref().unwrap().a4();
                    let b = values[node.inputs[1]].as_ref().unwrap().a4();
                    let mut y = a.clone();
                    y.zip_mut_with(b, |x, v| *x = *x + *v);
                    Value::A4(y)
                }
                Op::Mul => {
                    let a = values[node.inputs[0]].as_ref().unwrap().a4();
                    let b = values[node.inputs[1]].as_ref().unwrap().a4();
                    let mut y = a.clone();
                    y.zip_mut_with(b, |x, v| *x = *x * *v);
                    Value::A4(y)
                }
                Op::Upsample { factor } => {
                    let x = values[node.inputs[0]].as_ref().unwrap().a4();
                    Value::A4(upsample_nearest(x, *factor))
                }
                Op::ConcatChannels => {
                    let views: Vec<_> = node
                        .inputs
                        .iter()
                        .map(|&i| values[i].as_ref().unwrap().a4().view())
                        .collect();
                    let cat = concatenate(Axis(1), &views).expect("channel concat shapes");
                    Value::A4(cat.as_standard_layout().into_owned())
                }
                Op::ConcatRows => {
                    let views: Vec<_> = node
                        .inputs
                        .iter()
                        .map(|&i| values[i].as_ref().unwrap().a4().view())
                        .collect();
                    let cat = concatenate(Axis(2), &views).expect("row concat shapes");
                    Value::A4(cat.as_standard_layout().into_owned())
                }
                Op::Flatten => {
                    let x = values[node.inputs[0]].as_ref().unwrap().a4();
                    let (n, c, h, w) = x.dim();
                    let flat = Array2::from_shape_vec((n, c * h * w), x.iter().copied().collect())
                        .expect("flatten reshape");
                    Value::A2(flat)
                }
                Op::Dense(dense) => {
                    let x = values[node.inputs[0]].as_ref().unwrap().a2();
                    Value::A2(dense.forward(ps, &x.view()))
                }
            };
            values[id] = Some(out);
        }
        Tape {
            values,
            bn_saved,
            conv_cols,
        }
    }

    /// Reverse pass from `seeds` (node id, output gradient). Parameter
    /// gradients accumulate into `ps`; returns gradients of the graph
    /// inputs, indexed by input slot.
    pub fn backward<T: Scalar>(
        &self,
        ps: &mut ParamStore<T>,
        tape: &Tape<T>,
        seeds: Vec<(NodeId, Value<T>)>,
    ) -> Vec<Option<Value<T>>> {
        ps.ensure_grads();
        let mut grads: Vec<Option<Value<T>>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            Value::accumulate(&mut grads[id], g);
        }
        let mut input_grads: Vec<Option<Value<T>>> = vec![None; self.num_inputs];
        for id in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input(i) => Value::accumulate(&mut input_grads[*i], dy),
                Op::Conv(conv) => {
                    let x = tape.value(node.inputs[0]).a4();
                    let dx =
                        conv.backward(ps, &x.view(), &dy.a4().view(), tape.conv_cols[id].as_ref());
                    Value::accumulate(&mut grads[node.inputs[0]], Value::A4(dx));
                }
                Op::Norm(bnorm) => {
                    let x = tape.value(node.inputs[0]).a4();
                    let saved = tape.bn_saved[id]
                        .as_ref()
                        .expect("backward requires a training-mode tape");
                    let dx = bnorm.backward(ps, saved, &x.view(), &dy.a4().view());
                    Value::accumulate(&mut grads[node.inputs[0]], Value::A4(dx));
                }
                Op::Relu => {
                    let masked = match (tape.value(node.inputs[0]), &dy) {
                        (Value::A4(x), Value::A4(g)) => {
                            let mut dx = g.clone();
                            dx.zip_mut_with(x, |g, v| {
                                if v.to_f64() <= 0.0 {
                                    *g = T::from_f64(0.0);
                                }
                            });
                            Value::A4(dx)
                        }
                        (Value::A2(x), Value::A2(g)) => {
                            let mut dx = g.clone();
                            dx.zip_mut_with(x, |g, v| {
                                if v.to_f64() <= 0.0 {
                                    *g = T::from_f64(0.0);
                                }
                            });
                            Value::A2(dx)
                        }
                        _ => panic!("relu rank mismatch"),
                    };
                    Value::accumulate(&mut grads[node.inputs[0]], masked);
                }
                Op::Add => {
                    Value::accumulate(&mut grads[node.inputs[0]], dy.clone());
                    Value::accumulate(&mut grads[node.inputs[1]], dy);
                }
                Op::Mul => {
                    let a = tape.value(node.inputs[0]).a4();
                    let b = tape.value(node.inputs[1]).a4();
                    let mut da = dy.a4().clone();
                    da.zip_mut_with(b, |g, v| *g = *g * *v);
                    let mut db = dy.a4().clone();
                    db.zip_mut_with(a, |g, v| *g = *g * *v);
                    Value::accumulate(&mut grads[node.inputs[0]], Value::A4(da));
                    Value::accumulate(&mut grads[node.inputs[1]], Value::A4(db));
                }
                Op::Upsample { factor } => {
                    let dx = downsample_sum(dy.a4(), *factor);
                    Value::accumulate(&mut grads[node.inputs[0]], Value::A4(dx));
                }
                Op::ConcatChannels => {
                    let dy = dy.a4();
                    let mut offset = 0;
                    for &src in &node.inputs {
                        let c = tape.value(src).a4().dim().1;
                        let part = dy
                            .slice(ndarray::s![.., offset..offset + c, .., ..])
                            .to_owned();
                        Value::accumulate(&mut grads[src], Value::A4(part));
                        offset += c;
                    }
                }
                Op::ConcatRows => {
                    let dy = dy.a4();
                    let mut offset = 0;
                    for &src in &node.inputs {
                        let h = tape.value(src).a4().dim().2;
                        let part = dy
                            .slice(ndarray::s![.., .., offset..offset + h, ..])
                            .to_owned();
                        Value::accumulate(&mut grads[src], Value::A4(part));
                        offset += h;
                    }
                }
                Op::Flatten => {
                    let (n, c, h, w) = tape.value(node.inputs[0]).a4().dim();
                    let dy2 = dy.a2();
                    let dx = Array4::from_shape_vec((n, c, h, w), dy2.iter().copied().collect())
                        .expect("unflatten reshape");
                    Value::accumulate(&mut grads[node.inputs[0]], Value::A4(dx));
                }
                Op::Dense(dense) => {
                    let x = tape.value(node.inputs[0]).a2();
                    let dx = dense.backward(ps, &x.view(), &dy.a2().view());
                    Value::accumulate(&mut grads[node.inputs[0]], Value::A2(dx));
                }
            }
        }
        input_grads
    }

    /// Number of learnable scalars referenced by this graph.
    pub fn param_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match &n.op {
                Op::Conv(c) => c.weight.len + c.bias.map(|b| b.len).unwrap_or(0),
                Op::Norm(b) => b.gamma.len + b.beta.len,
                Op::Dense(d) => d.weight.len + d.bias.len,
                _ => 0,
            })
            .sum()
    }
}

fn upsample_nearest<T: Scalar>(x: &Array4<T>, f: usize) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h * f, w * f);
    let mut y = Array4::<T>::zeros((n, c, oh, ow));
    let xs = x.as_slice().expect("contiguous upsample input");
    let ys = y.as_slice_mut().unwrap();
    for plane in 0..n * c {
        let xb = plane * h * w;
        let yb = plane * oh * ow;
        for i in 0..oh {
            let xrow = xb + (i / f) * w;
            let yrow = yb + i * ow;
            for j in 0..w {
                let v = xs[xrow + j];
                for k in 0..f {
                    ys[yrow + j * f + k] = v;
                }
            }
        }
    }
    y
}

fn downsample_sum<T: Scalar>(dy: &Array4<T>, f: usize) -> Array4<T> {
    let (n, c, hf, wf) = dy.dim();
    let (h, w) = (hf / f, wf / f);
    let mut dx = Array4::<T>::zeros((n, c, h, w));
    let ds = dy.as_slice().expect("contiguous downsample input");
    let xs = dx.as_slice_mut().unwrap();
    for plane in 0..n * c {
        let db = plane * hf * wf;
        let xb = plane * h * w;
        for i in 0..hf {
            let drow = db + i * wf;
            let xrow = xb + (i / f) * w;
            for j in 0..w {
                let mut acc = T::from_f64(0.0);
                for k in 0..f {
                    acc = acc + ds[drow + j * f + k];
                }
                xs[xrow + j] = xs[xrow + j] + acc;
            }
        }
    }
    dx
}
