use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom, PoolKind};
use super::tensor::TensorValue;
use super::weights::{NodeWeights, WeightStore};
use crate::error::{Error, Result};
use crate::network::{
    transform_primitives, ConvSlot, Edge, IrNode, NetworkIR, NodeId, NodeRole, Primitive,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch norm uses running statistics.
    Eval,
    /// Batch norm uses the statistics of the current batch. Batches of one
    /// sample fall back to running statistics.
    TrainLike,
}

struct NodeTrace {
    /// `(aggregation weight index, producer)` for every live in-edge.
    live: Vec<(usize, NodeId)>,
    /// Input of every primitive, per sample.
    prim_inputs: Vec<Vec<TensorValue>>,
}

struct Run {
    outputs: HashMap<NodeId, Vec<TensorValue>>,
    traces: HashMap<NodeId, NodeTrace>,
    logits: Vec<Vec<f64>>,
}

fn weights_of(w: &WeightStore, id: NodeId) -> Result<&NodeWeights> {
    w.nodes.get(&id).ok_or(Error::MissingWeight {
        node: id,
        role: "node",
    })
}

fn conv_weight(nw: &NodeWeights, slot: ConvSlot, id: NodeId) -> Result<&[f64]> {
    let (v, role) = match slot {
        ConvSlot::Depthwise => (nw.depthwise.as_deref(), "depthwise"),
        ConvSlot::Main => (nw.conv.as_deref(), "conv"),
    };
    v.ok_or(Error::MissingWeight { node: id, role })
}

fn geom(p: &Primitive) -> Option<(ConvSlot, ConvGeom)> {
    match *p {
        Primitive::Conv {
            slot,
            kernel,
            groups,
            out_ch,
            stride,
            ..
        } => Some((
            slot,
            ConvGeom {
                kernel,
                groups,
                out_ch,
                stride,
            },
        )),
        _ => None,
    }
}

fn run(
    ir: &NetworkIR,
    w: &WeightStore,
    xs: &[TensorValue],
    mode: Mode,
    dropped: &[Edge],
    keep_trace: bool,
) -> Result<Run> {
    ir.validate()?;
    w.check(ir)?;
    if xs.is_empty() {
        return Err(Error::Parameter("empty input batch".into()));
    }
    let dropped: HashSet<Edge> = dropped.iter().copied().collect();
    let batch_stats = mode == Mode::TrainLike && xs.len() >= 2;
    if mode == Mode::TrainLike && xs.len() < 2 {
        log::warn!("train-like batch norm needs at least 2 samples; using running statistics");
    }

    let mut outputs: HashMap<NodeId, Vec<TensorValue>> = HashMap::new();
    let mut traces = HashMap::new();
    for node in &ir.nodes {
        let nw = weights_of(w, node.id).ok();
        let live: Vec<(usize, NodeId)> = node
            .in_edges
            .iter()
            .enumerate()
            .filter(|(_, &src)| {
                !dropped.contains(&Edge {
                    from: src,
                    to: node.id,
                })
            })
            .map(|(k, &src)| (k, src))
            .collect();

        let mut acts = aggregate(ir, node, nw, &live, &outputs, xs)?;
        for a in &acts {
            if a.shape != (node.in_ch, node.in_res, node.in_res) {
                return Err(Error::Shape {
                    node: node.id,
                    detail: format!(
                        "aggregated input {:?}, expected {:?}",
                        a.shape,
                        (node.in_ch, node.in_res, node.in_res)
                    ),
                });
            }
        }

        let mut prim_inputs = Vec::new();
        for p in transform_primitives(node, ir.head.hidden) {
            let nw = weights_of(w, node.id)?;
            if keep_trace {
                prim_inputs.push(acts.clone());
            }
            acts = match p {
                Primitive::Relu => acts.iter().map(ops::relu).collect(),
                Primitive::Conv { .. } => {
                    let (slot, g) = geom(&p).expect("conv primitive");
                    let k = conv_weight(nw, slot, node.id)?;
                    acts.iter().map(|a| ops::conv2d(a, k, &g)).collect()
                }
                Primitive::BatchNorm { .. } => {
                    let bn = nw.bn.as_ref().ok_or(Error::MissingWeight {
                        node: node.id,
                        role: "bn",
                    })?;
                    let (mean, var) = if batch_stats {
                        ops::batch_statistics(&acts)
                    } else {
                        (bn.running_mean.clone(), bn.running_var.clone())
                    };
                    acts.iter()
                        .map(|a| ops::batch_norm(a, &bn.gamma, &bn.beta, &mean, &var))
                        .collect()
                }
                Primitive::MaxPool3x3 { stride } => acts
                    .iter()
                    .map(|a| ops::pool3x3(a, stride, PoolKind::Max))
                    .collect(),
                Primitive::AvgPool3x3 { stride } => acts
                    .iter()
                    .map(|a| ops::pool3x3(a, stride, PoolKind::Avg))
                    .collect(),
                Primitive::GlobalAvgPool => acts.iter().map(ops::global_avg_pool).collect(),
                Primitive::Linear { .. } => {
                    let (fw, fb) = match (&nw.fc_weight, &nw.fc_bias) {
                        (Some(a), Some(b)) => (a, b),
                        _ => {
                            return Err(Error::MissingWeight {
                                node: node.id,
                                role: "fc",
                            })
                        }
                    };
                    acts.iter().map(|a| ops::linear(a, fw, fb)).collect()
                }
            };
        }
        for a in &acts {
            a.check_finite(node.id)?;
        }
        if keep_trace {
            traces.insert(node.id, NodeTrace { live, prim_inputs });
        }
        outputs.insert(node.id, acts);
    }
    let logits = outputs[&ir.head.node]
        .iter()
        .map(|t| t.data.clone())
        .collect();
    Ok(Run {
        outputs,
        traces,
        logits,
    })
}

fn aggregate(
    ir: &NetworkIR,
    node: &IrNode,
    nw: Option<&NodeWeights>,
    live: &[(usize, NodeId)],
    outputs: &HashMap<NodeId, Vec<TensorValue>>,
    xs: &[TensorValue],
) -> Result<Vec<TensorValue>> {
    let fetch = |src: NodeId| -> Result<&Vec<TensorValue>> {
        outputs.get(&src).ok_or_else(|| {
            Error::Structural(format!("node {} reads unexecuted node {}", node.id, src))
        })
    };
    let zero = || TensorValue::zeros(node.in_ch, node.in_res, node.in_res);
    let batch = xs.len();
    match node.role {
        NodeRole::Internal { .. } => {
            let raw = &nw
                .ok_or(Error::MissingWeight {
                    node: node.id,
                    role: "aggregation",
                })?
                .aggregation;
            let mut acc = vec![zero(); batch];
            for &(k, src) in live {
                let s = ops::sigmoid(raw[k]);
                for (a, x) in acc.iter_mut().zip(fetch(src)?) {
                    if a.shape != x.shape {
                        return Err(Error::Shape {
                            node: node.id,
                            detail: format!("input from {src} has shape {:?}", x.shape),
                        });
                    }
                    a.add_scaled(x, s);
                }
            }
            Ok(acc)
        }
        NodeRole::StageOutput { .. } => {
            if live.is_empty() {
                return Err(Error::Structural(format!(
                    "stage output node {} has no live inputs",
                    node.id
                )));
            }
            let mut acc = vec![zero(); batch];
            for &(_, src) in live {
                for (a, x) in acc.iter_mut().zip(fetch(src)?) {
                    a.add_scaled(x, 1.0);
                }
            }
            let inv = 1.0 / live.len() as f64;
            for a in &mut acc {
                a.data.iter_mut().for_each(|v| *v *= inv);
            }
            Ok(acc)
        }
        _ => match node.in_edges.first() {
            None => {
                let expect = (node.in_ch, ir.input_resolution, ir.input_resolution);
                if let Some(x) = xs.iter().find(|x| x.shape != expect) {
                    return Err(Error::Shape {
                        node: node.id,
                        detail: format!("network input {:?}, expected {:?}", x.shape, expect),
                    });
                }
                Ok(xs.to_vec())
            }
            Some(&src) if live.is_empty() => Err(Error::Structural(format!(
                "node {} lost its only input {src}",
                node.id
            ))),
            Some(&src) => Ok(fetch(src)?.clone()),
        },
    }
}

/// Class scores (logits) for one sample.
pub fn forward(ir: &NetworkIR, w: &WeightStore, x: &TensorValue, mode: Mode) -> Result<Vec<f64>> {
    Ok(run(ir, w, std::slice::from_ref(x), mode, &[], false)?
        .logits
        .remove(0))
}

pub fn forward_batch(
    ir: &NetworkIR,
    w: &WeightStore,
    xs: &[TensorValue],
    mode: Mode,
) -> Result<Vec<Vec<f64>>> {
    forward_masked(ir, w, xs, mode, &[])
}

/// Forward pass with `dropped` edges contributing nothing. Remaining
/// aggregation weights are not renormalized.
pub fn forward_masked(
    ir: &NetworkIR,
    w: &WeightStore,
    xs: &[TensorValue],
    mode: Mode,
    dropped: &[Edge],
) -> Result<Vec<Vec<f64>>> {
    Ok(run(ir, w, xs, mode, dropped, false)?.logits)
}

/// Eval-mode output tensor of every node for one sample.
pub fn node_outputs(
    ir: &NetworkIR,
    w: &WeightStore,
    x: &TensorValue,
) -> Result<HashMap<NodeId, TensorValue>> {
    Ok(run(ir, w, std::slice::from_ref(x), Mode::Eval, &[], false)?
        .outputs
        .into_iter()
        .map(|(k, mut v)| (k, v.remove(0)))
        .collect())
}

/// Eval-mode tensor carried by every edge, as read by its consumer.
pub fn edge_messages(
    ir: &NetworkIR,
    w: &WeightStore,
    x: &TensorValue,
) -> Result<BTreeMap<Edge, TensorValue>> {
    let r = run(ir, w, std::slice::from_ref(x), Mode::Eval, &[], true)?;
    let mut out = BTreeMap::new();
    for node in &ir.nodes {
        for &(_, src) in &r.traces[&node.id].live {
            out.insert(
                Edge {
                    from: src,
                    to: node.id,
                },
                r.outputs[&src][0].clone(),
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    /// Softmax cross-entropy against `label`.
    CrossEntropy { label: usize },
    /// `0.5 * sum(score^2)`.
    HalfSquaredNorm,
}

impl Loss {
    pub fn value_and_grad(&self, scores: &[f64]) -> Result<(f64, Vec<f64>)> {
        match *self {
            Loss::CrossEntropy { label } => {
                if label >= scores.len() {
                    return Err(Error::Parameter(format!(
                        "label {label} out of range for {} classes",
                        scores.len()
                    )));
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let value = z.ln() + max - scores[label];
                let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
                grad[label] -= 1.0;
                Ok((value, grad))
            }
            Loss::HalfSquaredNorm => Ok((
                0.5 * scores.iter().map(|s| s * s).sum::<f64>(),
                scores.to_vec(),
            )),
        }
    }

    pub fn value(&self, scores: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(scores)?.0)
    }
}

/// Eval-mode loss and its gradient with respect to every learnable weight,
/// by reverse-mode differentiation. The returned store mirrors `w`; running
/// statistics slots hold zeros.
pub fn loss_and_gradients(
    ir: &NetworkIR,
    w: &WeightStore,
    x: &TensorValue,
    loss: &Loss,
    dropped: &[Edge],
) -> Result<(f64, WeightStore)> {
    let r = run(ir, w, std::slice::from_ref(x), Mode::Eval, dropped, true)?;
    let (value, dscores) = loss.value_and_grad(&r.logits[0])?;
    if !value.is_finite() {
        return Err(Error::NonFinite(ir.head.node));
    }

    let mut grads = zeros_like(w);
    let mut pending: HashMap<NodeId, TensorValue> = HashMap::new();
    let head_len = dscores.len();
    pending.insert(ir.head.node, TensorValue::new((head_len, 1, 1), dscores)?);

    for node in ir.nodes.iter().rev() {
        let Some(mut g) = pending.remove(&node.id) else {
            continue;
        };
        let trace = &r.traces[&node.id];
        let nw = w.nodes.get(&node.id);
        let gw = grads.nodes.get_mut(&node.id);
        let prims = transform_primitives(node, ir.head.hidden);
        if let (Some(nw), Some(gw)) = (nw, gw) {
            for (p, inputs) in prims.iter().zip(&trace.prim_inputs).rev() {
                let x = &inputs[0];
                g = match *p {
                    Primitive::Relu => ops::relu_backward(x, &g),
                    Primitive::Conv { .. } => {
                        let (slot, geo) = geom(p).expect("conv primitive");
                        let k = conv_weight(nw, slot, node.id)?;
                        let (gx, gk) = ops::conv2d_backward(x, k, &geo, &g);
                        let dst = match slot {
                            ConvSlot::Depthwise => gw.depthwise.as_mut(),
                            ConvSlot::Main => gw.conv.as_mut(),
                        }
                        .expect("gradient slot mirrors weights");
                        dst.iter_mut().zip(gk).for_each(|(a, b)| *a += b);
                        gx
                    }
                    Primitive::BatchNorm { .. } => {
                        let bn = nw.bn.as_ref().expect("checked");
                        let (gx, gg, gb) = ops::batch_norm_backward(
                            x,
                            &bn.gamma,
                            &bn.running_mean,
                            &bn.running_var,
                            &g,
                        );
                        let gbn = gw.bn.as_mut().expect("gradient slot mirrors weights");
                        gbn.gamma.iter_mut().zip(gg).for_each(|(a, b)| *a += b);
                        gbn.beta.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
                        gx
                    }
                    Primitive::MaxPool3x3 { stride } => {
                        ops::pool3x3_backward(x, stride, PoolKind::Max, &g)
                    }
                    Primitive::AvgPool3x3 { stride } => {
                        ops::pool3x3_backward(x, stride, PoolKind::Avg, &g)
                    }
                    Primitive::GlobalAvgPool => ops::global_avg_pool_backward(x, &g),
                    Primitive::Linear { .. } => {
                        let fw = nw.fc_weight.as_ref().expect("checked");
                        let (gx, gfw, gfb) = ops::linear_backward(x, fw, &g);
                        gw.fc_weight
                            .as_mut()
                            .expect("mirrors")
                            .iter_mut()
                            .zip(gfw)
                            .for_each(|(a, b)| *a += b);
                        gw.fc_bias
                            .as_mut()
                            .expect("mirrors")
                            .iter_mut()
                            .zip(gfb)
                            .for_each(|(a, b)| *a += b);
                        gx
                    }
                };
            }
        }

        let mut send = |src: NodeId, t: TensorValue| match pending.get_mut(&src) {
            Some(acc) => acc.add_scaled(&t, 1.0),
            None => {
                pending.insert(src, t);
            }
        };
        match node.role {
            NodeRole::Internal { .. } => {
                let raw = &w.nodes[&node.id].aggregation;
                for &(k, src) in &trace.live {
                    let s = ops::sigmoid(raw[k]);
                    let xin = &r.outputs[&src][0];
                    let graw = s * (1.0 - s) * g.dot(xin);
                    grads.nodes.get_mut(&node.id).expect("mirrors").aggregation[k] += graw;
                    let mut t = g.clone();
                    t.data.iter_mut().for_each(|v| *v *= s);
                    send(src, t);
                }
            }
            NodeRole::StageOutput { .. } => {
                let inv = 1.0 / trace.live.len() as f64;
                for &(_, src) in &trace.live {
                    let mut t = g.clone();
                    t.data.iter_mut().for_each(|v| *v *= inv);
                    send(src, t);
                }
            }
            _ => {
                if let Some(&(_, src)) = trace.live.first() {
                    send(src, g);
                }
            }
        }
    }
    Ok((value, grads))
}

fn zeros_like(w: &WeightStore) -> WeightStore {
    let mut z = w.clone();
    for nw in z.nodes.values_mut() {
        nw.aggregation.iter_mut().for_each(|v| *v = 0.0);
        for v in [
            &mut nw.depthwise,
            &mut nw.conv,
            &mut nw.fc_weight,
            &mut nw.fc_bias,
        ]
        .into_iter()
        .flatten()
        {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        if let Some(bn) = &mut nw.bn {
            for v in [
                &mut bn.gamma,
                &mut bn.beta,
                &mut bn.running_mean,
                &mut bn.running_var,
            ] {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_models::{GeneratorSpec, GraphModel};
    use crate::network::{assemble, AssembleConfig, Regime};
    use crate::rng::SeededStream;

    fn tiny(model: GraphModel, seed: u64) -> NetworkIR {
        let spec = GeneratorSpec::new(model, 4, seed).unwrap();
        let cfg = AssembleConfig::new(Regime::Small, 8)
            .with_classes(10)
            .with_resolution(32);
        assemble(&spec, &cfg).unwrap()
    }

    fn input(res: usize, seed: u64) -> TensorValue {
        let mut rng = SeededStream::new(seed);
        let data = (0..3 * res * res).map(|_| rng.unit() * 2.0 - 1.0).collect();
        TensorValue::new((3, res, res), data).unwrap()
    }

    fn ws() -> GraphModel {
        GraphModel::Ws { k: 2, p: 0.0 }
    }

    #[test]
    fn tiny_forward_shape() {
        let ir = tiny(ws(), 1);
        let w = WeightStore::init(&ir, 7);
        let y = forward(&ir, &w, &input(32, 3), Mode::Eval).unwrap();
        assert_eq!(y.len(), 10);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_is_bitwise_deterministic() {
        let ir = tiny(GraphModel::Er { p: 0.6 }, 2);
        let w = WeightStore::init(&ir, 1);
        let x = input(32, 5);
        let a = forward(&ir, &w, &x, Mode::Eval).unwrap();
        let b = forward(&ir, &w, &x, Mode::Eval).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn single_sample_train_like_uses_running_stats() {
        let ir = tiny(ws(), 1);
        let w = WeightStore::init(&ir, 1);
        let x = input(32, 2);
        assert_eq!(
            forward(&ir, &w, &x, Mode::TrainLike).unwrap(),
            forward(&ir, &w, &x, Mode::Eval).unwrap()
        );
        let xs = [x, input(32, 3)];
        assert_ne!(
            forward_batch(&ir, &w, &xs, Mode::TrainLike).unwrap(),
            forward_batch(&ir, &w, &xs, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn two_input_aggregation_with_zero_raws_is_the_mean() {
        let ir = tiny(GraphModel::Er { p: 0.9 }, 4);
        let node = ir
            .nodes
            .iter()
            .find(|n| matches!(n.role, NodeRole::Internal { .. }) && n.in_edges.len() == 2)
            .expect("fixture has an in-degree-2 node");
        let mut w = WeightStore::init(&ir, 3);
        w.nodes.get_mut(&node.id).unwrap().aggregation = vec![0.0, 0.0];
        let x = input(32, 1);
        let outs = node_outputs(&ir, &w, &x).unwrap();
        let (a, b) = (&outs[&node.in_edges[0]], &outs[&node.in_edges[1]]);
        let mut agg = TensorValue::zeros(node.in_ch, node.in_res, node.in_res);
        for i in 0..agg.data.len() {
            agg.data[i] = 0.5 * a.data[i] + 0.5 * b.data[i];
        }
        let nw = &w.nodes[&node.id];
        let bn = nw.bn.as_ref().unwrap();
        let dw = ConvGeom {
            kernel: 3,
            groups: node.in_ch,
            out_ch: node.in_ch,
            stride: node.stride,
        };
        let pw = ConvGeom {
            kernel: 1,
            groups: 1,
            out_ch: node.out_ch,
            stride: 1,
        };
        let expect = ops::batch_norm(
            &ops::conv2d(
                &ops::conv2d(&ops::relu(&agg), nw.depthwise.as_ref().unwrap(), &dw),
                nw.conv.as_ref().unwrap(),
                &pw,
            ),
            &bn.gamma,
            &bn.beta,
            &bn.running_mean,
            &bn.running_var,
        );
        let got = &outs[&node.id];
        let diff = got
            .data
            .iter()
            .zip(&expect.data)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "max diff {diff}");
    }

    #[test]
    fn fan_out_copies_are_identical() {
        let ir = tiny(GraphModel::Er { p: 0.7 }, 3);
        let w = WeightStore::init(&ir, 2);
        let msgs = edge_messages(&ir, &w, &input(32, 4)).unwrap();
        let mut checked = 0;
        for n in &ir.nodes {
            let outs: Vec<_> = msgs
                .iter()
                .filter(|(e, _)| e.from == n.id)
                .map(|(_, t)| t)
                .collect();
            for t in &outs[1.min(outs.len())..] {
                assert!(t
                    .data
                    .iter()
                    .zip(&outs[0].data)
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn masked_edge_contributes_nothing() {
        let ir = tiny(GraphModel::Er { p: 0.9 }, 4);
        let node = ir
            .nodes
            .iter()
            .find(|n| matches!(n.role, NodeRole::Internal { .. }) && n.in_edges.len() >= 2)
            .unwrap();
        let edge = Edge {
            from: node.in_edges[0],
            to: node.id,
        };
        let mut w = WeightStore::init(&ir, 3);
        let x = input(32, 9);
        let masked =
            forward_masked(&ir, &w, std::slice::from_ref(&x), Mode::Eval, &[edge]).unwrap();
        w.nodes.get_mut(&node.id).unwrap().aggregation[0] = -800.0;
        let saturated = forward(&ir, &w, &x, Mode::Eval).unwrap();
        assert_eq!(masked[0], saturated);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let ir = tiny(ws(), 1);
        let w = WeightStore::init(&ir, 1);
        let err = forward(&ir, &w, &input(16, 1), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn non_finite_weight_is_detected() {
        let ir = tiny(ws(), 1);
        let mut w = WeightStore::init(&ir, 1);
        let stem = ir.stem[0];
        w.nodes.get_mut(&stem).unwrap().conv.as_mut().unwrap()[0] = f64::NAN;
        let err = forward(&ir, &w, &input(32, 1), Mode::Eval).unwrap_err();
        assert!(matches!(err, Error::NonFinite(id) if id == stem));
    }

    #[test]
    fn missing_weight_is_reported() {
        let ir = tiny(ws(), 1);
        let mut w = WeightStore::init(&ir, 1);
        w.nodes.remove(&ir.head.node);
        assert!(forward(&ir, &w, &input(32, 1), Mode::Eval).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let (v, g) = Loss::CrossEntropy { label: 1 }
            .value_and_grad(&[0.0, 0.0])
            .unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g, vec![0.5, -0.5]);
    }

    #[test]
    fn saturated_edge_blocks_gradient() {
        let ir = tiny(GraphModel::Er { p: 0.7 }, 3);
        let consumers = ir.consumers();
        let by_id: HashMap<_, _> = ir.nodes.iter().map(|n| (n.id, n)).collect();
        let src = ir
            .nodes
            .iter()
            .find(|n| {
                matches!(n.role, NodeRole::Internal { .. })
                    && consumers[&n.id]
                        .iter()
                        .all(|c| matches!(by_id[c].role, NodeRole::Internal { .. }))
            })
            .expect("fixture has a node feeding only internal nodes");
        let mut w = WeightStore::init(&ir, 5);
        for c in &consumers[&src.id] {
            let k = by_id[c].in_edges.iter().position(|e| *e == src.id).unwrap();
            w.nodes.get_mut(c).unwrap().aggregation[k] = -40.0;
        }
        let (_, g) =
            loss_and_gradients(&ir, &w, &input(32, 6), &Loss::HalfSquaredNorm, &[]).unwrap();
        let gmax = g.nodes[&src.id]
            .conv
            .as_ref()
            .unwrap()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gmax < 1e-8, "gradient leaked: {gmax}");
    }
}
