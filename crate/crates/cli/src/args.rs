use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "choicectx",
    version,
    about = "Discrete choice models with feature context effects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a model by maximum likelihood.
    Fit(FitArgs),
    /// Negative log-likelihood and mean relative rank of a saved model.
    Eval(EvalArgs),
    /// Compare two saved models with a likelihood-ratio or Wilcoxon test.
    Lrt(LrtArgs),
    /// Test a single context effect against the MNL.
    ConstrainedLrt(ConstrainedArgs),
    /// Check whether the LCL is identifiable from a dataset.
    Identify(IdentifyArgs),
    /// L1 regularization path over the context matrix.
    L1path(L1PathArgs),
    /// Per-bin MNL coefficients against a context feature.
    Binned(BinnedArgs),
    /// Turn a temporal edge list into triadic-closure choices.
    NetExtract(NetExtractArgs),
    /// Grow a synthetic network whose closures follow a known model.
    NetGenerate(NetGenerateArgs),
    /// Fit a DLCL by expectation-maximization.
    EmFit(EmFitArgs),
    /// Choose learning rate and weight decay on the validation split.
    GridSearch(GridSearchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Eval(_) => "eval",
            Command::Lrt(_) => "lrt",
            Command::ConstrainedLrt(_) => "constrained-lrt",
            Command::Identify(_) => "identify",
            Command::L1path(_) => "l1path",
            Command::Binned(_) => "binned",
            Command::NetExtract(_) => "net-extract",
            Command::NetGenerate(_) => "net-generate",
            Command::EmFit(_) => "em-fit",
            Command::GridSearch(_) => "grid-search",
        }
    }

    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Command::Fit(a) => a.out.as_ref(),
            Command::Eval(a) => a.out.as_ref(),
            Command::Lrt(a) => a.out.as_ref(),
            Command::ConstrainedLrt(a) => a.out.as_ref(),
            Command::Identify(a) => a.out.as_ref(),
            Command::L1path(a) => a.out.as_ref(),
            Command::Binned(a) => a.out.as_ref(),
            Command::NetExtract(a) => a.out.as_ref(),
            Command::NetGenerate(a) => a.out.as_ref(),
            Command::EmFit(a) => a.out.as_ref(),
            Command::GridSearch(a) => a.out.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Mnl,
    Lcl,
    Mixed,
    Dlcl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Random,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeArg {
    /// Fit the feature scaling on the training split only.
    Train,
    /// Fit the feature scaling on the whole dataset.
    All,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartArg {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareMode {
    /// Likelihood-ratio test on total NLL.
    Lrt,
    /// Signed-rank test on per-observation relative ranks.
    Wilcoxon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorArg {
    Mnl,
    Lcl,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// Choice dataset in JSON Lines form.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Random)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = StandardizeArg::Train)]
    pub standardize: StandardizeArg,
    /// Seed for the split, shuffling and initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Learning rate. `fit` searches a grid when omitted.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.001)]
    pub wd: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// Wall-clock budget per training run, in seconds.
    #[arg(long, default_value_t = 3600.0)]
    pub time_limit: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Number of mixed logit classes (defaults to the feature dimension).
    #[arg(long)]
    pub components: Option<usize>,
    /// Write the per-epoch training log here as JSON Lines.
    #[arg(long)]
    pub log_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Model file or fit report.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = PartArg::Test)]
    pub part: PartArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Random)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include every observation's relative rank in the report.
    #[arg(long)]
    pub emit_ranks: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct LrtArgs {
    /// Restricted model (file or fit report).
    #[arg(long)]
    pub null: PathBuf,
    /// Larger model (file or fit report).
    #[arg(long)]
    pub full: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = CompareMode::Lrt)]
    pub mode: CompareMode,
    /// Degrees of freedom; defaults to the difference in parameter counts.
    #[arg(long)]
    pub dof: Option<usize>,
    #[arg(long, value_enum, default_value_t = PartArg::All)]
    pub part: PartArg,
    #[arg(long, value_enum, default_value_t = SplitArg::Random)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ConstrainedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Context entry `p,q`: the effect of mean feature q on feature p.
    #[arg(long, value_parser = parse_entry)]
    pub entry: (usize, usize),
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct IdentifyArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = StandardizeArg::All)]
    pub standardize: StandardizeArg,
    /// Round features to this grid when deciding which choice sets are equal.
    #[arg(long)]
    pub dedup_tol: Option<f64>,
    #[arg(long, default_value_t = choicectx::identify::MAX_ROWS)]
    pub max_rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct L1PathArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Significance level of the per-lambda likelihood-ratio test.
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BinnedArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Bins use the features as stored unless scaling is requested.
    #[arg(long, value_enum, default_value_t = StandardizeArg::Off)]
    pub standardize: StandardizeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Context feature whose choice-set mean defines the bins.
    #[arg(long)]
    pub feature_q: usize,
    /// Feature whose per-bin coefficient is regressed.
    #[arg(long)]
    pub feature_p: usize,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    #[arg(long, default_value_t = 50)]
    pub min_count: usize,
    /// Also write `(bin_center, coefficient, count)` rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct NetExtractArgs {
    /// Edge list with `src dst timestamp` lines.
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dataset_out: Option<PathBuf>,
    #[arg(long)]
    pub closures_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct NetGenerateArgs {
    /// Generator with the built-in synthetic parameters.
    #[arg(long, value_enum, default_value_t = GeneratorArg::Mnl, conflicts_with = "params")]
    pub model: GeneratorArg,
    /// Generator model file with d = 6, replacing `--model`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub nodes: usize,
    #[arg(long, default_value_t = 50_000)]
    pub closures: usize,
    #[arg(long, default_value_t = 0.1)]
    pub closure_prob: f64,
    /// Mean of the Poisson gap between consecutive edges.
    #[arg(long, default_value_t = 5.0)]
    pub rate: f64,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the generated edge list.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub dataset_out: Option<PathBuf>,
    #[arg(long)]
    pub closures_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EmFitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub inner_iters: usize,
    /// Learning rate of the inner Adam iterations.
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 3600.0)]
    pub time_limit: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GridSearchArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 3600.0)]
    pub time_limit: f64,
    /// Learning rates to try (defaults to the built-in grid).
    #[arg(long, value_delimiter = ',')]
    pub lrs: Option<Vec<f64>>,
    /// Weight decays to try (defaults to the built-in grid).
    #[arg(long, value_delimiter = ',')]
    pub wds: Option<Vec<f64>>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_entry(s: &str) -> Result<(usize, usize), String> {
    let (p, q) = s.split_once(',').ok_or_else(|| format!("expected `p,q`, got {s:?}"))?;
    let index = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("{v:?} is not a feature index"))
    };
    Ok((index(p)?, index(q)?))
}
