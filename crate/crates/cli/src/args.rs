use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use randwire_core::network::{DEFAULT_CLASSES, DEFAULT_RESOLUTION};
use randwire_core::{AssembleConfig, GeneratorSpec, GraphModel, NodeKind, Regime};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "randwire",
    version,
    about = "Sample, analyze and execute randomly wired networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a network; writes <out>.ir.json and <out>.dot
    Gen(GenArgs),
    /// FLOPs and parameter report for an IR file
    Analyze(AnalyzeArgs),
    /// Width C whose mean FLOPs over the seeds is closest to a target
    FitC(FitArgs),
    /// Per-seed budgets with mean and sample standard deviation
    Sweep(SweepArgs),
    /// Every single-node and single-edge removal of an IR
    Damage(DamageArgs),
    /// Forward pass (and optional gradient check) at toy size
    Exec(ExecArgs),
    /// Deterministic weights for an IR; writes <out>.weights.json
    InitWeights(InitArgs),
    /// Edge-drop masks for training
    Mask(MaskArgs),
    /// Run the structural invariant suite on a spec
    Check(CheckArgs),
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Er,
    Ba,
    Ws,
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RegimeName {
    Small,
    Regular,
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OpName {
    Separable,
    Conv3x3,
    Maxpool,
    Avgpool,
}

impl From<OpName> for NodeKind {
    fn from(op: OpName) -> Self {
        match op {
            OpName::Separable => NodeKind::SeparableConv3x3,
            OpName::Conv3x3 => NodeKind::RegularConv3x3,
            OpName::Maxpool => NodeKind::MaxpoolConv1x1,
            OpName::Avgpool => NodeKind::AvgpoolConv1x1,
        }
    }
}

/// Network flags shared by every spec-driven subcommand. Each one can also
/// come from `--config`; flags win.
#[derive(Args, Debug, Clone, Default)]
pub struct NetFlags {
    /// TOML file with any of the keys below
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    /// Nodes per stage
    #[arg(long)]
    pub n: Option<usize>,
    /// WS neighbours (even)
    #[arg(long)]
    pub k: Option<usize>,
    /// ER edge or WS rewiring probability
    #[arg(long)]
    pub p: Option<f64>,
    /// BA attachments per new node
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeName>,
    /// Base channel count
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long, value_enum)]
    pub op: Option<OpName>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Seed count for sweep and fit-c (seeds 1..=N)
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Output path prefix
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<ModelName>,
    n: Option<usize>,
    k: Option<usize>,
    p: Option<f64>,
    m: Option<usize>,
    seed: Option<u64>,
    regime: Option<RegimeName>,
    c: Option<usize>,
    op: Option<OpName>,
    classes: Option<usize>,
    resolution: Option<usize>,
    seeds: Option<u64>,
    out: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: GeneratorSpec,
    pub cfg: AssembleConfig,
    pub seeds: u64,
    pub out: Option<String>,
}

impl Resolved {
    /// Specs for seeds `1..=seeds`, other fields from `spec`.
    pub fn seed_specs(&self) -> Vec<GeneratorSpec> {
        (1..=self.seeds)
            .map(|seed| GeneratorSpec { seed, ..self.spec })
            .collect()
    }
}

fn read_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl NetFlags {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let file = match &self.config {
            Some(path) => read_config(path)?,
            None => FileConfig::default(),
        };
        let model = self.model.or(file.model).unwrap_or(ModelName::Ws);
        let regime = match self.regime.or(file.regime).unwrap_or(RegimeName::Small) {
            RegimeName::Small => Regime::Small,
            RegimeName::Regular => Regime::Regular,
        };
        let p = self.p.or(file.p);
        let model = match model {
            ModelName::Er => GraphModel::Er {
                p: p.unwrap_or(0.2),
            },
            ModelName::Ba => GraphModel::Ba {
                m: self.m.or(file.m).unwrap_or(5),
            },
            ModelName::Ws => GraphModel::Ws {
                k: self.k.or(file.k).unwrap_or(4),
                p: p.unwrap_or(0.75),
            },
        };
        let default_c = match regime {
            Regime::Small => 78,
            Regime::Regular => 109,
        };
        let spec = GeneratorSpec::new(
            model,
            self.n.or(file.n).unwrap_or(32),
            self.seed.or(file.seed).unwrap_or(1),
        )?;
        let cfg = AssembleConfig::new(regime, self.c.or(file.c).unwrap_or(default_c))
            .with_op(self.op.or(file.op).unwrap_or(OpName::Separable).into())
            .with_classes(self.classes.or(file.classes).unwrap_or(DEFAULT_CLASSES))
            .with_resolution(
                self.resolution
                    .or(file.resolution)
                    .unwrap_or(DEFAULT_RESOLUTION),
            );
        let seeds = self.seeds.or(file.seeds).unwrap_or(5);
        if seeds == 0 {
            return Err(CliError::Usage("--seeds must be at least 1".into()));
        }
        Ok(Resolved {
            spec,
            cfg,
            seeds,
            out: self.out.clone().or(file.out),
        })
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub net: NetFlags,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// IR JSON file
    pub ir: PathBuf,
    /// Write <out>.report.json
    #[arg(long)]
    pub out: Option<String>,
    /// Print the JSON report instead of the table
    #[arg(long)]
    pub json: bool,
    /// Add pooling window operations to the FLOPs total
    #[arg(long)]
    pub include_pool_ops: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub net: NetFlags,
    /// Target multiply-adds, e.g. 583M or 4.0B
    #[arg(long, value_parser = parse_count)]
    pub target: u64,
    #[arg(long, default_value_t = 1)]
    pub min_c: usize,
    #[arg(long, default_value_t = 1024)]
    pub max_c: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub net: NetFlags,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct WeightSource {
    /// Weights JSON; without it weights are initialized from --weight-seed
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub weight_seed: u64,
}

#[derive(Args, Debug)]
pub struct DamageArgs {
    pub ir: PathBuf,
    #[command(flatten)]
    pub weights: WeightSource,
    /// Write <out>.damage.csv
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeName {
    Eval,
    TrainLike,
}

#[derive(Args, Debug)]
pub struct ExecArgs {
    pub ir: PathBuf,
    #[command(flatten)]
    pub weights: WeightSource,
    /// Input tensor JSON {"shape": [3, H, W], "data": [...]}
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed for a uniform(-1, 1) input when --input is absent
    #[arg(long, default_value_t = 0)]
    pub input_seed: u64,
    #[arg(long, value_enum, default_value_t = ModeName::Eval)]
    pub mode: ModeName,
    /// Drop an edge, as FROM:TO node ids; repeatable
    #[arg(long = "drop", value_parser = parse_edge)]
    pub drops: Vec<(u32, u32)>,
    /// Compare analytic gradients with central differences
    #[arg(long)]
    pub grad_check: bool,
    #[arg(long, default_value_t = 0)]
    pub label: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Scalars checked (aggregation weights always included)
    #[arg(long, default_value_t = 60)]
    pub sample: usize,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    pub ir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "randwire")]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    pub ir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub p: f64,
    /// Number of masks (one per mini-batch)
    #[arg(long, default_value_t = 1)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub net: NetFlags,
}

/// Parses `583M`, `4.0B`, `7.9G`, `12k` or a plain integer.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (num, scale) = match s.char_indices().last() {
        Some((i, 'k' | 'K')) => (&s[..i], 1e3),
        Some((i, 'm' | 'M')) => (&s[..i], 1e6),
        Some((i, 'b' | 'B' | 'g' | 'G')) => (&s[..i], 1e9),
        _ => (s, 1.0),
    };
    if scale == 1.0 {
        return s.parse().map_err(|e| format!("invalid count {s:?}: {e}"));
    }
    let v: f64 = num
        .parse()
        .map_err(|e| format!("invalid count {s:?}: {e}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("invalid count {s:?}"));
    }
    Ok((v * scale).round() as u64)
}

fn parse_edge(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected FROM:TO, got {s:?}"))?;
    let id = |t: &str| {
        t.trim()
            .parse::<u32>()
            .map_err(|e| format!("bad node id {t:?}: {e}"))
    };
    Ok((id(a)?, id(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(parse_count("583M"), Ok(583_000_000));
        assert_eq!(parse_count("4.0B"), Ok(4_000_000_000));
        assert_eq!(parse_count("7.9G"), Ok(7_900_000_000));
        assert_eq!(parse_count("1200"), Ok(1200));
        assert!(parse_count("abc").is_err());
        assert!(parse_count("-1M").is_err());
    }

    #[test]
    fn edges() {
        assert_eq!(parse_edge("3:7"), Ok((3, 7)));
        assert!(parse_edge("3-7").is_err());
    }

    #[test]
    fn defaults_follow_regime() {
        let small = NetFlags::default().resolve().unwrap();
        assert_eq!(small.cfg.base_channels, 78);
        assert_eq!(small.spec.model, GraphModel::Ws { k: 4, p: 0.75 });
        let regular = NetFlags {
            regime: Some(RegimeName::Regular),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(regular.cfg.base_channels, 109);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.toml");
        std::fs::write(&path, "model = \"er\"\np = 0.3\nn = 16\nc = 40\n").unwrap();
        let r = NetFlags {
            config: Some(path.clone()),
            c: Some(50),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(r.spec.model, GraphModel::Er { p: 0.3 });
        assert_eq!(r.spec.nodes, 16);
        assert_eq!(r.cfg.base_channels, 50);

        std::fs::write(&path, "colour = 1\n").unwrap();
        let bad = NetFlags {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(bad.resolve(), Err(CliError::Usage(_))));
    }
}
