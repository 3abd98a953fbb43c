use std::fmt::Write as _;

use randwire_core::complexity::{analyze_with, AnalyzeOptions};
use randwire_core::dag::{topological_order, validate_dag};
use randwire_core::damage::{damage_table, DamageOutcome, DamageRow, Removal};
use randwire_core::exec::{
    forward, forward_masked, grad_check, GradCheckOptions, Loss, Mode, TensorValue, WeightStore,
};
use randwire_core::graph_models::UndirectedGraph;
use randwire_core::network::{stage_generators, NodeRole};
use randwire_core::{
    analyze, assemble, edge_drop_mask, fit_channels, to_dag, Edge, GraphModel, NetworkIR, NodeId,
    SeededStream,
};

use crate::args::*;
use crate::error::CliError;
use crate::output::{artifact, read_ir, read_text, read_weights, write_atomic};

pub fn run(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::FitC(a) => fit_c(a),
        Command::Sweep(a) => sweep(a),
        Command::Damage(a) => damage_cmd(a),
        Command::Exec(a) => exec(a),
        Command::InitWeights(a) => init_weights(a),
        Command::Mask(a) => mask(a),
        Command::Check(a) => check(a),
    }
}

fn gen(a: GenArgs) -> Result<String, CliError> {
    let r = a.net.resolve()?;
    let ir = assemble(&r.spec, &r.cfg)?;
    let prefix = r.out.as_deref().unwrap_or("randwire");
    write_atomic(&artifact(prefix, ".ir.json"), &ir.to_json())?;
    write_atomic(&artifact(prefix, ".dot"), &ir.to_dot())?;
    Ok(format!(
        "{} n={} seed={} {:?} C={}: {} nodes, {} internal edges\n",
        r.spec.model,
        r.spec.nodes,
        r.spec.seed,
        r.cfg.regime,
        r.cfg.base_channels,
        ir.nodes.len(),
        ir.internal_edge_count()
    ))
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<String, CliError> {
    let ir = read_ir(&a.ir)?;
    let report = analyze_with(
        &ir,
        AnalyzeOptions {
            include_pool_ops: a.include_pool_ops,
        },
    );
    if let Some(prefix) = &a.out {
        write_atomic(&artifact(prefix, ".report.json"), &report.to_json())?;
    }
    Ok(if a.json {
        report.to_json()
    } else {
        report.to_table()
    })
}

fn fit_c(a: FitArgs) -> Result<String, CliError> {
    let r = a.net.resolve()?;
    let specs = r.seed_specs();
    let c = fit_channels(&specs, &r.cfg, a.target, a.min_c..=a.max_c)?;
    let cfg = randwire_core::AssembleConfig {
        base_channels: c,
        ..r.cfg
    };
    let mut total = 0u128;
    for s in &specs {
        total += analyze(&assemble(s, &cfg)?).totals.flops as u128;
    }
    Ok(format!(
        "c={c} mean_flops={} target={} seeds={}\n",
        total / specs.len() as u128,
        a.target,
        specs.len()
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub flops: u64,
    pub params: u64,
    pub internal_edges: usize,
    pub stride2_nodes: usize,
    pub max_in_degree: usize,
}

fn sweep_row(
    spec: &randwire_core::GeneratorSpec,
    cfg: &randwire_core::AssembleConfig,
) -> Result<SweepRow, CliError> {
    let ir = assemble(spec, cfg)?;
    let totals = analyze(&ir).totals;
    let internal = ir
        .nodes
        .iter()
        .filter(|n| matches!(n.role, NodeRole::Internal { .. }));
    Ok(SweepRow {
        seed: spec.seed,
        flops: totals.flops,
        params: totals.params,
        internal_edges: ir.internal_edge_count(),
        stride2_nodes: internal.clone().filter(|n| n.stride == 2).count(),
        max_in_degree: internal.map(|n| n.in_edges.len()).max().unwrap_or(0),
    })
}

/// Evaluates seeds on worker threads; rows come back in seed order.
fn sweep_rows(r: &Resolved, threads: usize) -> Result<Vec<SweepRow>, CliError> {
    let specs = r.seed_specs();
    let threads = threads.clamp(1, specs.len());
    let chunk = specs.len().div_ceil(threads);
    let results: Vec<Result<Vec<SweepRow>, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|sp| sweep_row(sp, &r.cfg)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(specs.len());
    for part in results {
        rows.extend(part?);
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "seed,flops,params,internal_edges,stride2_nodes,max_in_degree";

/// CSV with one row per seed, then `mean` and `std` rows. `std` is the
/// sample standard deviation (n - 1); it is `NaN` for a single seed.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed, r.flops, r.params, r.internal_edges, r.stride2_nodes, r.max_in_degree
        );
    }
    let cols: Vec<Vec<f64>> = vec![
        rows.iter().map(|r| r.flops as f64).collect(),
        rows.iter().map(|r| r.params as f64).collect(),
        rows.iter().map(|r| r.internal_edges as f64).collect(),
        rows.iter().map(|r| r.stride2_nodes as f64).collect(),
        rows.iter().map(|r| r.max_in_degree as f64).collect(),
    ];
    let n = rows.len() as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let stds: Vec<f64> = cols
        .iter()
        .zip(&means)
        .map(|(c, m)| (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
        .collect();
    for (label, vals) in [("mean", &means), ("std", &stds)] {
        let cells: Vec<String> = vals.iter().map(|v| format!("{v:.2}")).collect();
        let _ = writeln!(out, "{label},{}", cells.join(","));
    }
    out
}

fn sweep(a: SweepArgs) -> Result<String, CliError> {
    let r = a.net.resolve()?;
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let csv = sweep_csv(&sweep_rows(&r, threads)?);
    if let Some(prefix) = &r.out {
        write_atomic(&artifact(prefix, ".sweep.csv"), &csv)?;
    }
    Ok(csv)
}

fn load_weights(ir: &NetworkIR, src: &WeightSource) -> Result<WeightStore, CliError> {
    let w = match &src.weights {
        Some(path) => read_weights(path)?,
        None => WeightStore::init(ir, src.weight_seed),
    };
    w.check(ir)?;
    Ok(w)
}

fn removal_label(r: &Removal) -> String {
    match r {
        Removal::Node { id } => format!("node:{id}"),
        Removal::Edge { from, to } => format!("edge:{from}->{to}"),
    }
}

pub const DAMAGE_HEADER: &str = "removal,stage,metric,degree,status,lost_input,affected,orphaned";

pub fn damage_csv(rows: &[DamageRow]) -> String {
    let mut out = String::from(DAMAGE_HEADER);
    out.push('\n');
    for row in rows {
        let metric = match row.metric {
            randwire_core::damage::DegreeMetric::OutputDegree => "output_degree",
            randwire_core::damage::DegreeMetric::TargetInputDegree => "target_input_degree",
        };
        let tail = match &row.outcome {
            DamageOutcome::Applied {
                lost_input,
                affected,
                orphaned,
            } => format!("applied,{lost_input},{affected},{orphaned}"),
            DamageOutcome::Structural { .. } => "structural,,,".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{metric},{},{tail}",
            removal_label(&row.removal),
            row.stage,
            row.degree
        );
    }
    out
}

fn damage_cmd(a: DamageArgs) -> Result<String, CliError> {
    let ir = read_ir(&a.ir)?;
    let w = load_weights(&ir, &a.weights)?;
    let rows = damage_table(&ir, &w)?;
    let csv = damage_csv(&rows);
    if let Some(prefix) = &a.out {
        write_atomic(&artifact(prefix, ".damage.csv"), &csv)?;
    }
    Ok(if a.json {
        serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"
    } else {
        csv
    })
}

fn random_input(ir: &NetworkIR, seed: u64) -> TensorValue {
    let res = ir.input_resolution;
    let mut rng = SeededStream::new(seed);
    let data = (0..3 * res * res).map(|_| rng.unit() * 2.0 - 1.0).collect();
    TensorValue::new((3, res, res), data).expect("length matches shape")
}

fn exec(a: ExecArgs) -> Result<String, CliError> {
    let ir = read_ir(&a.ir)?;
    let w = load_weights(&ir, &a.weights)?;
    let x = match &a.input {
        Some(path) => {
            let t: TensorValue =
                serde_json::from_str(&read_text(path)?).map_err(randwire_core::Error::from)?;
            TensorValue::new(t.shape, t.data)?
        }
        None => random_input(&ir, a.input_seed),
    };
    let mode = match a.mode {
        ModeName::Eval => Mode::Eval,
        ModeName::TrainLike => Mode::TrainLike,
    };
    let drops: Vec<Edge> = a
        .drops
        .iter()
        .map(|&(f, t)| Edge {
            from: NodeId(f),
            to: NodeId(t),
        })
        .collect();
    let scores = if drops.is_empty() {
        forward(&ir, &w, &x, mode)?
    } else {
        forward_masked(&ir, &w, std::slice::from_ref(&x), mode, &drops)?.remove(0)
    };
    let mut out = serde_json::to_string_pretty(&serde_json::json!({ "scores": scores }))
        .expect("scores serialize");
    out.push('\n');
    if a.grad_check {
        let opts = GradCheckOptions {
            eps: a.eps,
            tol: a.tol,
            max_params: Some(a.sample),
            seed: a.input_seed,
        };
        let report = grad_check(&ir, &w, &x, &Loss::CrossEntropy { label: a.label }, &opts)?;
        let _ = writeln!(
            out,
            "grad_check checked={} max_rel_err={:.3e} tol={:.1e} {}",
            report.checks.len(),
            report.max_rel_err,
            report.tol,
            if report.passed() { "PASS" } else { "FAIL" }
        );
        if !report.passed() {
            print!("{out}");
            return Err(CliError::Check(1));
        }
    }
    Ok(out)
}

fn init_weights(a: InitArgs) -> Result<String, CliError> {
    let ir = read_ir(&a.ir)?;
    let w = WeightStore::init(&ir, a.seed);
    let path = artifact(&a.out, ".weights.json");
    write_atomic(&path, &w.to_json())?;
    Ok(format!("{} learnable weights\n", w.learnable_count()))
}

fn mask(a: MaskArgs) -> Result<String, CliError> {
    let ir = read_ir(&a.ir)?;
    let mut rng = SeededStream::new(a.seed);
    let mut out = String::new();
    for _ in 0..a.draws {
        let m = edge_drop_mask(&ir, a.p, &mut rng)?;
        out.push_str(&serde_json::to_string(&m).expect("edges serialize"));
        out.push('\n');
    }
    Ok(out)
}

struct Suite {
    out: String,
    failed: usize,
}

impl Suite {
    fn record(&mut self, ok: bool, name: &str, detail: String) {
        let _ = writeln!(
            self.out,
            "{} {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failed += 1;
        }
    }
}

/// Independent of the analyzer: recomputes the sampled graph per stage
/// and checks the generator laws, DAG validity, degree conservation and IR
/// bookkeeping.
fn check(a: CheckArgs) -> Result<String, CliError> {
    let r = a.net.resolve()?;
    let mut suite = Suite {
        out: String::new(),
        failed: 0,
    };
    for (i, g) in stage_generators(&r.spec, r.cfg.regime)?.iter().enumerate() {
        let mut rng = SeededStream::new(g.seed);
        let sampled = randwire_core::graph_models::sample(g.model, g.nodes, &mut rng)?;
        let graph = &sampled.graph;
        let e = graph.edge_count();
        let law = match g.model {
            GraphModel::Ba { m } => Some(m * (g.nodes - m)),
            GraphModel::Ws { k, .. } => Some(g.nodes * k / 2),
            GraphModel::Er { .. } => None,
        };
        if let Some(expect) = law {
            suite.record(
                e == expect,
                &format!("stage{i} edge count"),
                format!("{e} (expected {expect})"),
            );
        }
        let simple = UndirectedGraph::from_edges(graph.n, graph.edges().iter().copied()).is_ok();
        suite.record(
            simple,
            &format!("stage{i} simple graph"),
            format!("{e} edges"),
        );
        let again = g.sample()?;
        suite.record(
            again.graph == *graph,
            &format!("stage{i} deterministic"),
            g.seed.to_string(),
        );

        let dag = to_dag(&sampled, &mut rng)?;
        let diag = validate_dag(&dag);
        suite.record(
            diag.is_valid() && topological_order(&dag).is_some(),
            &format!("stage{i} dag"),
            format!("{} internal edges", dag.edges.len()),
        );
        let degrees = graph.degrees();
        let (pred, succ) = (dag.predecessors(), dag.successors());
        let conserved = (0..graph.n).all(|v| {
            let d = dag.index_map[v];
            pred[d].len() + succ[d].len() == degrees[v]
        });
        suite.record(
            conserved && dag.edges.len() == e,
            &format!("stage{i} degree conservation"),
            format!("{} nodes", graph.n),
        );
    }

    let ir = assemble(&r.spec, &r.cfg)?;
    suite.record(
        ir.validate().is_ok(),
        "ir valid",
        format!("{} nodes", ir.nodes.len()),
    );
    let round = NetworkIR::from_json(&ir.to_json())
        .map(|b| b == ir)
        .unwrap_or(false);
    suite.record(
        round,
        "ir json round trip",
        randwire_core::network::IR_SCHEMA.to_string(),
    );
    let strides_ok = ir.stages.iter().all(|s| {
        s.internal.iter().all(|&id| {
            let n = ir.node(id).expect("assembled node");
            (n.stride == 2) == (n.in_edges == [s.input_node])
        })
    });
    suite.record(
        strides_ok,
        "stride-2 nodes are stage entries",
        format!("{} stages", ir.stages.len()),
    );

    if suite.failed > 0 {
        print!("{}", suite.out);
        return Err(CliError::Check(suite.failed));
    }
    Ok(suite.out)
}
