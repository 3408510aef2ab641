//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the tape is a
//! valid topological order for the backward pass.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    /// `x + v` with `v` shaped `(1 | n) x c x 1 x 1`.
    AddBroadcast(Var, Var),
    Silu(Var),
    Upsample2(Var),
    /// Mean squared difference, a `1 x 1 x 1 x 1` scalar.
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every parameter touched on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.store.get(id).clone();
        self.push(t, Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        self.push(out, Op::Conv { x, w, b, stride, pad })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let out = va.zip_map(vb, |p, q| p + q).expect("shapes checked");
        self.push(out, Op::Add(a, b))
    }

    pub fn add_broadcast(&mut self, x: Var, v: Var) -> Var {
        let (xv, vv) = (self.value(x), self.value(v));
        let [n, c, h, w] = xv.shape();
        let [vn, vc, vh, vw] = vv.shape();
        assert!(vc == c && vh == 1 && vw == 1 && (vn == 1 || vn == n), "broadcast shape mismatch");
        let mut out = xv.clone();
        let plane = h * w;
        for b in 0..n {
            for ch in 0..c {
                let add = vv.at(if vn == 1 { 0 } else { b }, ch, 0, 0);
                let base = (b * c + ch) * plane;
                out.data_mut()[base..base + plane].iter_mut().for_each(|o| *o += add);
            }
        }
        self.push(out, Op::AddBroadcast(x, v))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        let i = out.index(b, ch, y, xx);
                        out.data_mut()[i] = xv.at(b, ch, y / 2, xx / 2);
                    }
                }
            }
        }
        self.push(out, Op::Upsample2(x))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let (p, t) = (self.value(pred), self.value(target));
        assert_eq!(p.shape(), t.shape(), "mse shape mismatch");
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let out = Tensor::filled([1, 1, 1, 1], s / p.len() as f64);
        self.push(out, Op::Mse(pred, target))
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled([1, 1, 1, 1], 1.0));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::Conv { x, w, b, stride, pad } => {
                    let (gx, gw, gb) = conv_backward(self.value(*x), self.value(*w), &g, *stride, *pad, b.is_some());
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    if let (Some(b), Some(gb)) = (b, gb) {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddBroadcast(x, v) => {
                    let [vn, c, _, _] = self.shape(*v);
                    let [n, _, h, w] = g.shape();
                    let mut gv = Tensor::zeros([vn, c, 1, 1]);
                    let plane = h * w;
                    for bi in 0..n {
                        for ch in 0..c {
                            let base = (bi * c + ch) * plane;
                            let s: f64 = g.data()[base..base + plane].iter().sum();
                            let j = gv.index(if vn == 1 { 0 } else { bi }, ch, 0, 0);
                            gv.data_mut()[j] += s;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *v, gv);
                }
                Op::Silu(x) => {
                    let gx = self
                        .value(*x)
                        .zip_map(&g, |v, gv| {
                            let s = sigmoid(v);
                            gv * s * (1.0 + v * (1.0 - s))
                        })
                        .expect("same shape");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Upsample2(x) => {
                    let [n, c, h, w] = self.shape(*x);
                    let mut gx = Tensor::zeros([n, c, h, w]);
                    for bi in 0..n {
                        for ch in 0..c {
                            for y in 0..2 * h {
                                for xx in 0..2 * w {
                                    let j = gx.index(bi, ch, y / 2, xx / 2);
                                    gx.data_mut()[j] += g.at(bi, ch, y, xx);
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let scale = 2.0 * g.data()[0] / pv.len() as f64;
                    let gp = pv.zip_map(tv, |a, b| scale * (a - b)).expect("same shape");
                    let gt = gp.map(|v| -v);
                    accumulate(&mut grads, *p, gp);
                    accumulate(&mut grads, *t, gt);
                }
            }
        }

        let mut by_param: Vec<Option<Tensor>> = vec![None; self.store.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads[i].take()) {
                match &mut by_param[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Gradients { grads: by_param }
    }
}

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

/// `w` is `out x in x k x k`; `b` is `1 x out x 1 x 1`.
pub(crate) fn conv_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [n, cin, h, wd] = x.shape();
    let [cout, wcin, k, _] = w.shape();
    assert_eq!(cin, wcin, "conv input channels");
    let (oh, ow) = (conv_out_len(h, k, stride, pad), conv_out_len(wd, k, stride, pad));
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    let xd = x.data();
    let wdat = w.data();
    let od = out.data_mut();
    for bi in 0..n {
        for o in 0..cout {
            let bias = b.map_or(0.0, |b| b.data()[o]);
            let obase = (bi * cout + o) * oh * ow;
            od[obase..obase + oh * ow].iter_mut().for_each(|v| *v = bias);
            for i in 0..cin {
                let xbase = (bi * cin + i) * h * wd;
                let wbase = (o * cin + i) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[wbase + ky * k + kx];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * wd;
                            let orow = obase + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                od[orow + ox] += wv * xd[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    has_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, k, _] = w.shape();
    let [_, _, oh, ow] = g.shape();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = has_bias.then(|| Tensor::zeros([1, cout, 1, 1]));
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    for bi in 0..n {
        for o in 0..cout {
            let gbase = (bi * cout + o) * oh * ow;
            if let Some(gb) = gb.as_mut() {
                gb.data_mut()[o] += gd[gbase..gbase + oh * ow].iter().sum::<f64>();
            }
            for i in 0..cin {
                let xbase = (bi * cin + i) * h * wd;
                let wbase = (o * cin + i) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[wbase + ky * k + kx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * wd;
                            let grow = gbase + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let gv = gd[grow + ox];
                                acc += gv * xd[xrow + ix as usize];
                                gx.data_mut()[xrow + ix as usize] += gv * wv;
                            }
                        }
                        gw.data_mut()[wbase + ky * k + kx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}
