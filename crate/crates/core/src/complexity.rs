//! Static FLOPs and parameter counting.
//!
//! Conventions:
//!
//! * FLOPs are multiply-adds: one MAC counts as one FLOP.
//! * Convolutions carry no bias (batch norm follows each one). A k×k
//!   convolution with `groups` groups costs `k·k·(in/groups)·out·H_out·W_out`
//!   MACs and `k·k·(in/groups)·out` weights.
//! * Batch norm contributes `2·channels` affine parameters and no FLOPs; its
//!   running statistics are not parameters.
//! * Aggregation at an internal node costs `in_degree · C_in · H · W`
//!   multiplies and `in_degree` parameters (one raw weight per in-edge). The
//!   stage output mean costs `in_degree · C · H · W` and has no parameters.
//! * The classifier `fc` counts weights and biases. Global average pooling,
//!   ReLU and softmax are free.
//! * Pooling window work (9 per output element) is tracked separately as
//!   `pool_ops` and only added to `flops` when requested.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{param, Result};
use crate::graph_models::GeneratorSpec;
use crate::network::{
    assemble, transform_primitives, AssembleConfig, IrNode, NetworkIR, NodeId, NodeKind, NodeRole,
    Primitive, Regime,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalyzeOptions {
    pub include_pool_ops: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeCost {
    pub id: NodeId,
    pub stage: Option<String>,
    pub kind: NodeKind,
    pub in_degree: usize,
    pub out_degree: usize,
    pub flops: u64,
    pub params: u64,
    pub pool_ops: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub flops: u64,
    pub params: u64,
    pub pool_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    pub name: String,
    pub channels: usize,
    pub in_res: usize,
    pub out_res: usize,
    pub internal_nodes: usize,
    pub internal_edges: usize,
    pub flops: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub generator: GeneratorSpec,
    pub regime: Regime,
    pub base_channels: usize,
    pub op: NodeKind,
    pub include_pool_ops: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub schema: &'static str,
    pub meta: ReportMeta,
    pub totals: Totals,
    pub stages: Vec<StageTrace>,
    pub per_node: Vec<NodeCost>,
}

pub const REPORT_SCHEMA: &str = "randwire.report/v1";

/// FLOPs, parameters and pool work of one transformation primitive applied
/// to a `channels × res × res` input. Returns the output resolution too.
fn primitive_cost(p: &Primitive, res: usize) -> (u64, u64, u64, usize) {
    match *p {
        Primitive::Relu | Primitive::BatchNorm { .. } => {
            let params = match *p {
                Primitive::BatchNorm { channels } => 2 * channels as u64,
                _ => 0,
            };
            (0, params, 0, res)
        }
        Primitive::Conv {
            kernel,
            groups,
            in_ch,
            out_ch,
            stride,
            ..
        } => {
            let pad = kernel / 2;
            let out = (res + 2 * pad - kernel) / stride + 1;
            let weights = (kernel * kernel * (in_ch / groups) * out_ch) as u64;
            (weights * (out * out) as u64, weights, 0, out)
        }
        Primitive::MaxPool3x3 { stride } | Primitive::AvgPool3x3 { stride } => {
            // channel count is unchanged by pooling; caller scales by it
            let out = (res - 1) / stride + 1;
            (0, 0, 9 * (out * out) as u64, out)
        }
        Primitive::GlobalAvgPool => (0, 0, 0, 1),
        Primitive::Linear {
            in_features,
            out_features,
        } => {
            let w = (in_features * out_features) as u64;
            (w, w + out_features as u64, 0, 1)
        }
    }
}

/// Cost of a node's transformation alone (no aggregation).
pub fn transform_cost(node: &IrNode, hidden: usize) -> Totals {
    let mut res = node.in_res;
    let mut totals = Totals::default();
    for p in transform_primitives(node, hidden) {
        let (f, w, pool, out) = primitive_cost(&p, res);
        totals.flops += f;
        totals.params += w;
        totals.pool_ops += pool * node.in_ch as u64;
        res = out;
    }
    totals
}

/// Cost of a node's aggregation alone.
pub fn aggregation_cost(node: &IrNode) -> Totals {
    let area = (node.in_res * node.in_res) as u64;
    let deg = node.in_edges.len() as u64;
    match node.role {
        NodeRole::Internal { .. } => Totals {
            flops: deg * node.in_ch as u64 * area,
            params: deg,
            pool_ops: 0,
        },
        NodeRole::StageOutput { .. } => Totals {
            flops: deg * node.in_ch as u64 * area,
            params: 0,
            pool_ops: 0,
        },
        _ => Totals::default(),
    }
}

pub fn analyze(ir: &NetworkIR) -> ComplexityReport {
    analyze_with(ir, AnalyzeOptions::default())
}

pub fn analyze_with(ir: &NetworkIR, opts: AnalyzeOptions) -> ComplexityReport {
    let consumers = ir.consumers();
    let mut per_node = Vec::with_capacity(ir.nodes.len());
    let mut totals = Totals::default();
    let mut stages: Vec<StageTrace> = ir
        .stages
        .iter()
        .map(|s| StageTrace {
            name: s.name.clone(),
            channels: s.channels,
            in_res: s.in_res,
            out_res: s.out_res,
            internal_nodes: 0,
            internal_edges: 0,
            flops: 0,
            params: 0,
        })
        .collect();

    for node in &ir.nodes {
        let t = transform_cost(node, ir.head.hidden);
        let a = aggregation_cost(node);
        let pool_ops = t.pool_ops;
        let mut flops = t.flops + a.flops;
        if opts.include_pool_ops {
            flops += pool_ops;
        }
        let params = t.params + a.params;
        totals.flops += flops;
        totals.params += params;
        totals.pool_ops += pool_ops;

        let stage = node.stage();
        if let Some(s) = stage {
            let trace = &mut stages[s];
            trace.flops += flops;
            trace.params += params;
            if let NodeRole::Internal { .. } = node.role {
                trace.internal_nodes += 1;
                trace.internal_edges += node
                    .in_edges
                    .iter()
                    .filter(|&&e| e != ir.stages[s].input_node)
                    .count();
            }
        }
        per_node.push(NodeCost {
            id: node.id,
            stage: stage.map(|s| ir.stages[s].name.clone()),
            kind: node.kind,
            in_degree: node.in_edges.len(),
            out_degree: consumers.get(&node.id).map_or(0, Vec::len),
            flops,
            params,
            pool_ops,
        });
    }

    ComplexityReport {
        schema: REPORT_SCHEMA,
        meta: ReportMeta {
            generator: ir.provenance,
            regime: ir.regime,
            base_channels: ir.base_channels,
            op: ir.op,
            include_pool_ops: opts.include_pool_ops,
        },
        totals,
        stages,
        per_node,
    }
}

impl ComplexityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible") + "\n"
    }

    /// Aligned plain-text table, one row per node, followed by totals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>5} {:>7} {:>7} {:>14} {:>10}",
            "stage", "node", "in_deg", "out_deg", "flops", "params"
        );
        for n in &self.per_node {
            let _ = writeln!(
                out,
                "{:<6} {:>5} {:>7} {:>7} {:>14} {:>10}",
                n.stage.as_deref().unwrap_or("-"),
                n.id.0,
                n.in_degree,
                n.out_degree,
                n.flops,
                n.params
            );
        }
        let _ = writeln!(
            out,
            "{:<6} {:>5} {:>7} {:>7} {:>14} {:>10}",
            "total", "", "", "", self.totals.flops, self.totals.params
        );
        out
    }
}

/// Finds the base channel count whose mean FLOPs over `specs` (typically
/// one generator at several seeds) are closest to `target_flops`. FLOPs grow
/// strictly with C for fixed wiring, so this is a binary search followed by
/// a neighbour comparison. Ties go to the smaller C.
pub fn fit_channels(
    specs: &[GeneratorSpec],
    template: &AssembleConfig,
    target_flops: u64,
    search: std::ops::RangeInclusive<usize>,
) -> Result<usize> {
    if specs.is_empty() {
        return param("fit_channels needs at least one generator spec");
    }
    if target_flops == 0 {
        return param("target FLOPs must be positive");
    }
    let (lo, hi) = (*search.start(), *search.end());
    if lo == 0 || lo > hi {
        return param(format!("empty channel search range {lo}..={hi}"));
    }
    // Compare sums against target * len to stay in integers.
    let target = target_flops as u128 * specs.len() as u128;
    let flops_at = |c: usize| -> Result<u128> {
        let cfg = AssembleConfig {
            base_channels: c,
            ..*template
        };
        specs.iter().try_fold(0u128, |acc, spec| {
            Ok(acc + analyze(&assemble(spec, &cfg)?).totals.flops as u128)
        })
    };

    // smallest C in [lo, hi] with flops >= target, or hi
    let (mut a, mut b) = (lo, hi);
    while a < b {
        let mid = a + (b - a) / 2;
        if flops_at(mid)? >= target {
            b = mid;
        } else {
            a = mid + 1;
        }
    }
    let upper = a;
    if upper == lo {
        return Ok(lo);
    }
    let below = upper - 1;
    let d_upper = flops_at(upper)?.abs_diff(target);
    let d_below = flops_at(below)?.abs_diff(target);
    Ok(if d_below <= d_upper { below } else { upper })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecouplingReport {
    pub flops: Vec<u64>,
    pub params: Vec<u64>,
    pub internal_edges: Vec<usize>,
    /// `max_i |x_i - mean| / mean` over total FLOPs.
    pub flops_spread: f64,
    pub params_spread: f64,
    /// Sample standard deviation over mean.
    pub flops_cv: f64,
    pub params_cv: f64,
}

fn relative_spread(xs: &[u64]) -> f64 {
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64;
    xs.iter()
        .map(|&x| (x as f64 - mean).abs() / mean)
        .fold(0.0, f64::max)
}

fn coefficient_of_variation(xs: &[u64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / mean
}

/// Measures how far total FLOPs and parameters move across networks that
/// share regime, C and operation but differ in wiring.
pub fn decoupling_check(irs: &[NetworkIR]) -> Result<DecouplingReport> {
    if irs.len() < 2 {
        return param("decoupling check needs at least two networks");
    }
    let first = &irs[0];
    for ir in &irs[1..] {
        if ir.regime != first.regime
            || ir.base_channels != first.base_channels
            || ir.op != first.op
            || ir.class_count != first.class_count
            || ir.input_resolution != first.input_resolution
        {
            return param("networks in a decoupling check must share regime, C, op and head");
        }
    }
    let reports: Vec<_> = irs.iter().map(analyze).collect();
    let flops: Vec<u64> = reports.iter().map(|r| r.totals.flops).collect();
    let params: Vec<u64> = reports.iter().map(|r| r.totals.params).collect();
    Ok(DecouplingReport {
        flops_spread: relative_spread(&flops),
        params_spread: relative_spread(&params),
        flops_cv: coefficient_of_variation(&flops),
        params_cv: coefficient_of_variation(&params),
        internal_edges: irs.iter().map(NetworkIR::internal_edge_count).collect(),
        flops,
        params,
    })
}

/// Assembles every spec with `cfg` and runs [`decoupling_check`].
pub fn decoupling_check_specs(
    specs: &[GeneratorSpec],
    cfg: &AssembleConfig,
) -> Result<DecouplingReport> {
    let irs = specs
        .iter()
        .map(|s| assemble(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    decoupling_check(&irs)
}
