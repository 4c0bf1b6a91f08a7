//! The recording tape behind reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so reverse iteration is already a
//! valid topological order for the backward sweep. Saved activations are
//! `Arc` clones of the forward buffers; nothing is copied until backward
//! actually needs to write.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::{blur, conv, resize, shuffle};
use super::{GradSlot, NodeRef, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Forward buffer captured for the backward pass.
pub(crate) struct Saved<T> {
    pub data: Arc<Vec<T>>,
    pub shape: Shape,
}

impl<T: Scalar> Saved<T> {
    pub fn of(t: &Tensor<T>) -> Saved<T> {
        Saved {
            data: t.data_arc(),
            shape: t.shape(),
        }
    }
}

pub(crate) enum OpKind<T: Scalar> {
    Leaf,
    /// inputs: [x, w, b]
    Conv2d {
        x: Saved<T>,
        w: Saved<T>,
        stride: usize,
        padding: usize,
        pad_mode: conv::PadMode,
    },
    GaussianBlur {
        kernel: Arc<Vec<T>>,
        shape: Shape,
    },
    PixelShuffle {
        r: usize,
        out_shape: Shape,
    },
    PixelUnshuffle {
        r: usize,
        out_shape: Shape,
    },
    BilinearResize {
        in_shape: Shape,
        out_shape: Shape,
    },
    Relu {
        x: Saved<T>,
    },
    /// inputs: [x, slope]; slope is a (1,1,1,1) tensor.
    Prelu {
        x: Saved<T>,
        slope: T,
    },
    Sigmoid {
        y: Saved<T>,
    },
    Add,
    Sub,
    Mul {
        a: Saved<T>,
        b: Saved<T>,
    },
    Div {
        a: Saved<T>,
        b: Saved<T>,
    },
    Scale {
        s: T,
    },
    AddScalar,
    Blend {
        lambda: T,
    },
    Exp {
        y: Saved<T>,
    },
    Abs {
        x: Saved<T>,
    },
    GlobalAvgPool {
        in_shape: Shape,
    },
    MeanChannels {
        in_shape: Shape,
    },
    ConcatChannels {
        widths: Vec<usize>,
        out_shape: Shape,
    },
    /// inputs: [x (n,c,h,w), g (n,c,1,1)]
    MulBroadcast {
        x: Saved<T>,
        g: Saved<T>,
    },
    MeanAll {
        in_shape: Shape,
    },
    SumAll {
        in_shape: Shape,
    },
}

pub(crate) enum Src {
    Node(usize),
    Constant,
}

pub(crate) struct Node<T: Scalar> {
    pub op: OpKind<T>,
    pub inputs: Vec<Src>,
    pub leaf_slot: Option<GradSlot<T>>,
}

pub struct Tape<T: Scalar> {
    generation: u64,
    nodes: Vec<Node<T>>,
    // grad-slot pointer -> leaf node, so repeated uses of one parameter
    // accumulate instead of forking.
    leaf_index: HashMap<usize, usize>,
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

impl<T: Scalar> Tape<T> {
    fn new() -> Tape<T> {
        Tape {
            generation: GENERATION.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaf_index: HashMap::new(),
        }
    }

    fn resolve(&mut self, t: &Tensor<T>) -> Src {
        if let Some(nref) = t.node {
            if nref.generation == self.generation {
                return Src::Node(nref.id);
            }
        }
        if let Some(slot) = &t.grad {
            let key = Arc::as_ptr(slot) as usize;
            if let Some(&id) = self.leaf_index.get(&key) {
                return Src::Node(id);
            }
            let id = self.nodes.len();
            self.nodes.push(Node {
                op: OpKind::Leaf,
                inputs: Vec::new(),
                leaf_slot: Some(slot.clone()),
            });
            self.leaf_index.insert(key, id);
            return Src::Node(id);
        }
        Src::Constant
    }
}

/// Starts recording on this thread. Errors if a graph is already active.
pub fn start_graph<T: Scalar>() -> Result<()> {
    T::with_tape(|tape| {
        if tape.is_some() {
            return Err(Error::InvalidState(
                "a computation graph is already being recorded on this thread".into(),
            ));
        }
        *tape = Some(Tape::new());
        Ok(())
    })
}

pub fn graph_active<T: Scalar>() -> bool {
    T::with_tape(|tape| tape.is_some())
}

/// Drops the active graph without running backward (abort path).
pub fn clear_graph<T: Scalar>() {
    T::with_tape(|tape| *tape = None);
}

/// Checks the output buffer for non-finite values, then records the node if
/// a tape is active and any input is tracked. Every public operation funnels
/// through here.
pub(crate) fn finish<T: Scalar>(
    op_name: &'static str,
    out_shape: Shape,
    out_data: Vec<T>,
    inputs: &[&Tensor<T>],
    make_op: impl FnOnce() -> OpKind<T>,
) -> Result<Tensor<T>> {
    if !out_data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: op_name });
    }
    let node = T::with_tape(|tape| {
        let tape = tape.as_mut()?;
        let srcs: Vec<Src> = inputs.iter().map(|t| tape.resolve(t)).collect();
        if srcs.iter().all(|s| matches!(s, Src::Constant)) {
            return None;
        }
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            op: make_op(),
            inputs: srcs,
            leaf_slot: None,
        });
        Some(NodeRef {
            generation: tape.generation,
            id,
        })
    });
    Ok(Tensor::from_parts(out_shape, Arc::new(out_data), node))
}

/// Reverse sweep from a scalar root. Gradients accumulate additively into
/// the slots of every reachable trainable tensor; the graph is freed before
/// returning, on success and on error alike.
pub fn backward<T: Scalar>(root: &Tensor<T>) -> Result<()> {
    let tape = T::with_tape(|tape| tape.take()).ok_or_else(|| {
        Error::InvalidState("backward called with no active computation graph".into())
    })?;
    if !root.shape().is_scalar() {
        return Err(Error::invalid(
            "backward",
            format!("root must be scalar-shaped (1,1,1,1), got {}", root.shape()),
        ));
    }
    let root_id = match root.node {
        Some(nref) if nref.generation == tape.generation => nref.id,
        _ => {
            return Err(Error::InvalidState(
                "backward root was not recorded on the active graph".into(),
            ))
        }
    };

    let mut grads: Vec<Option<Vec<T>>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[root_id] = Some(vec![T::ONE]);

    for id in (0..tape.nodes.len()).rev() {
        let Some(gy) = grads[id].take() else { continue };
        let node = &tape.nodes[id];
        if let Some(slot) = &node.leaf_slot {
            let mut guard = slot.lock().unwrap();
            match guard.as_mut() {
                Some(existing) => {
                    for (e, g) in existing.iter_mut().zip(&gy) {
                        *e += *g;
                    }
                }
                None => *guard = Some(gy),
            }
            continue;
        }
        let input_grads = node_backward(&node.op, &gy);
        for (src, gin) in node.inputs.iter().zip(input_grads) {
            let (Src::Node(j), Some(g)) = (src, gin) else { continue };
            match grads[*j].as_mut() {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&g) {
                        *a += *v;
                    }
                }
                None => grads[*j] = Some(g),
            }
        }
    }
    Ok(())
}

fn node_backward<T: Scalar>(op: &OpKind<T>, gy: &[T]) -> Vec<Option<Vec<T>>> {
    match op {
        OpKind::Leaf => Vec::new(),
        OpKind::Conv2d {
            x,
            w,
            stride,
            padding,
            pad_mode,
        } => {
            let (gx, gw, gb) = conv::backward(x, w, *stride, *padding, *pad_mode, gy);
            vec![Some(gx), Some(gw), Some(gb)]
        }
        OpKind::GaussianBlur { kernel, shape } => {
            vec![Some(blur::adjoint(gy, *shape, kernel))]
        }
        OpKind::PixelShuffle { r, out_shape } => {
            vec![Some(shuffle::unshuffle_data(gy, *out_shape, *r))]
        }
        OpKind::PixelUnshuffle { r, out_shape } => {
            vec![Some(shuffle::shuffle_data(gy, *out_shape, *r))]
        }
        OpKind::BilinearResize {
            in_shape,
            out_shape,
        } => {
            vec![Some(resize::backward(gy, *in_shape, *out_shape))]
        }
        OpKind::Relu { x } => {
            let g = x
                .data
                .iter()
                .zip(gy)
                .map(|(&xv, &g)| if xv > T::ZERO { g } else { T::ZERO })
                .collect();
            vec![Some(g)]
        }
        OpKind::Prelu { x, slope } => {
            let gx = x
                .data
                .iter()
                .zip(gy)
                .map(|(&xv, &g)| if xv > T::ZERO { g } else { *slope * g })
                .collect();
            let mut gs = T::ZERO;
            for (&xv, &g) in x.data.iter().zip(gy) {
                if xv <= T::ZERO {
                    gs += xv * g;
                }
            }
            vec![Some(gx), Some(vec![gs])]
        }
        OpKind::Sigmoid { y } => {
            let g = y
                .data
                .iter()
                .zip(gy)
                .map(|(&yv, &g)| g * yv * (T::ONE - yv))
                .collect();
            vec![Some(g)]
        }
        OpKind::Add => vec![Some(gy.to_vec()), Some(gy.to_vec())],
        OpKind::Sub => vec![Some(gy.to_vec()), Some(gy.iter().map(|&g| -g).collect())],
        OpKind::Mul { a, b } => {
            let ga = b.data.iter().zip(gy).map(|(&bv, &g)| bv * g).collect();
            let gb = a.data.iter().zip(gy).map(|(&av, &g)| av * g).collect();
            vec![Some(ga), Some(gb)]
        }
        OpKind::Div { a, b } => {
            let ga = b.data.iter().zip(gy).map(|(&bv, &g)| g / bv).collect();
            let gb = a
                .data
                .iter()
                .zip(b.data.iter())
                .zip(gy)
                .map(|((&av, &bv), &g)| -g * av / (bv * bv))
                .collect();
            vec![Some(ga), Some(gb)]
        }
        OpKind::Scale { s } => vec![Some(gy.iter().map(|&g| *s * g).collect())],
        OpKind::AddScalar => vec![Some(gy.to_vec())],
        OpKind::Blend { lambda } => {
            let la = T::ONE - *lambda;
            vec![
                Some(gy.iter().map(|&g| la * g).collect()),
                Some(gy.iter().map(|&g| *lambda * g).collect()),
            ]
        }
        OpKind::Exp { y } => {
            let g = y.data.iter().zip(gy).map(|(&yv, &g)| yv * g).collect();
            vec![Some(g)]
        }
        OpKind::Abs { x } => {
            let g = x
                .data
                .iter()
                .zip(gy)
                .map(|(&xv, &g)| {
                    if xv > T::ZERO {
                        g
                    } else if xv < T::ZERO {
                        -g
                    } else {
                        T::ZERO
                    }
                })
                .collect();
            vec![Some(g)]
        }
        OpKind::GlobalAvgPool { in_shape } => {
            let hw = in_shape.h * in_shape.w;
            let inv = T::ONE / T::from_f64(hw as f64);
            let mut gx = vec![T::ZERO; in_shape.numel()];
            for nc in 0..in_shape.n * in_shape.c {
                let g = gy[nc] * inv;
                for v in &mut gx[nc * hw..(nc + 1) * hw] {
                    *v = g;
                }
            }
            vec![Some(gx)]
        }
        OpKind::MeanChannels { in_shape } => {
            let inv = T::ONE / T::from_f64(in_shape.c as f64);
            let hw = in_shape.h * in_shape.w;
            let mut gx = vec![T::ZERO; in_shape.numel()];
            for n in 0..in_shape.n {
                for c in 0..in_shape.c {
                    let dst = (n * in_shape.c + c) * hw;
                    let src = n * hw;
                    for i in 0..hw {
                        gx[dst + i] = gy[src + i] * inv;
                    }
                }
            }
            vec![Some(gx)]
        }
        OpKind::ConcatChannels { widths, out_shape } => {
            let hw = out_shape.h * out_shape.w;
            let mut grads = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for &wk in widths {
                let mut g = vec![T::ZERO; out_shape.n * wk * hw];
                for n in 0..out_shape.n {
                    let src = (n * out_shape.c + offset) * hw;
                    let dst = n * wk * hw;
                    g[dst..dst + wk * hw].copy_from_slice(&gy[src..src + wk * hw]);
                }
                grads.push(Some(g));
                offset += wk;
            }
            grads
        }
        OpKind::MulBroadcast { x, g } => {
            let s = x.shape;
            let hw = s.h * s.w;
            let mut gx = vec![T::ZERO; x.data.len()];
            let mut gg = vec![T::ZERO; g.data.len()];
            for nc in 0..s.n * s.c {
                let gv = g.data[nc];
                let base = nc * hw;
                let mut acc = T::ZERO;
                for i in 0..hw {
                    gx[base + i] = gy[base + i] * gv;
                    acc += gy[base + i] * x.data[base + i];
                }
                gg[nc] = acc;
            }
            vec![Some(gx), Some(gg)]
        }
        OpKind::MeanAll { in_shape } => {
            let inv = T::ONE / T::from_f64(in_shape.numel() as f64);
            let g = gy[0] * inv;
            vec![Some(vec![g; in_shape.numel()])]
        }
        OpKind::SumAll { in_shape } => {
            vec![Some(vec![gy[0]; in_shape.numel()])]
        }
    }
}
