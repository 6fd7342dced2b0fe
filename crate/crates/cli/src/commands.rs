use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use choicectx::data::{
    load_dataset, split_dataset, ChoiceDataset, DatasetSplit, SplitFractions, SplitMode, Standardizer,
};
use choicectx::em::{em_fit, EmConfig};
use choicectx::identify::{lcl_identifiable, IdentifyOptions};
use choicectx::models::{negative_log_likelihood, ModelFile, ModelKind, Params};
use choicectx::network::{
    extract_closures, generate_synthetic, ingest_edges, synthetic_lcl_params, synthetic_mnl_params, write_closure_log,
    write_edges, SyntheticConfig, FEATURE_NAMES,
};
use choicectx::optimize::{
    fit_constrained_lcl, fit_mle_with_validation, grid_search, l1_path, thread_limit, write_training_log, FitResult,
    GridSearchSpec, RegPathConfig, TrainConfig,
};
use choicectx::stats::{binned_mnl, likelihood_ratio_test, mean_relative_rank, wilcoxon_signed_rank, BinnedConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::report::write_atomic;

/// Failure of a subcommand after argument parsing succeeded.
#[derive(Debug)]
pub enum CliError {
    /// Flags that parse but do not make sense together.
    Usage(String),
    /// Unreadable input, invalid data, numerical failure or unwritable output.
    Data(String),
}

impl From<choicectx::Error> for CliError {
    fn from(e: choicectx::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CmdResult = Result<Value, CliError>;

fn to_value(v: impl Serialize) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Data(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_with(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> choicectx::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_text(
        path,
        &String::from_utf8(buf).map_err(|e| CliError::Data(e.to_string()))?,
    )
}

fn model_kind(m: ModelArg) -> ModelKind {
    match m {
        ModelArg::Mnl => ModelKind::Mnl,
        ModelArg::Lcl => ModelKind::Lcl,
        ModelArg::Mixed => ModelKind::MixedLogit,
        ModelArg::Dlcl => ModelKind::Dlcl,
    }
}

fn split_mode(s: SplitArg) -> SplitMode {
    match s {
        SplitArg::Random => SplitMode::Random,
        SplitArg::Temporal => SplitMode::Temporal,
    }
}

fn load(path: &Path) -> Result<(ChoiceDataset, usize), CliError> {
    let loaded = load_dataset(path)?;
    if loaded.dropped_singletons > 0 {
        log::warn!(
            "dropped {} single-item choice set(s) from {}",
            loaded.dropped_singletons,
            path.display()
        );
    }
    Ok((loaded.dataset, loaded.dropped_singletons))
}

/// Split dataset with every part in the same (possibly standardized) basis.
struct Prepared {
    split: DatasetSplit,
    standardizer: Option<Standardizer>,
    dropped_singletons: usize,
}

impl Prepared {
    fn summary(&self) -> Value {
        let m = &self.split.manifest;
        json!({
            "mode": m.mode,
            "seed": m.seed,
            "fractions": m.fractions,
            "sizes": {"train": m.train.len(), "validation": m.validation.len(), "test": m.test.len()},
            "dropped_singletons": self.dropped_singletons,
        })
    }
}

fn prepare(args: &DataArgs) -> Result<Prepared, CliError> {
    let (dataset, dropped_singletons) = load(&args.data)?;
    let split = split_dataset(&dataset, split_mode(args.split), SplitFractions::default(), args.seed)?;
    let standardizer = match args.standardize {
        StandardizeArg::Off => None,
        StandardizeArg::All => Some(Standardizer::fit(&dataset)?),
        StandardizeArg::Train => Some(Standardizer::fit(&split.train)?),
    };
    let split = match &standardizer {
        None => split,
        Some(s) => DatasetSplit {
            train: s.apply(&split.train)?,
            validation: s.apply(&split.validation)?,
            test: s.apply(&split.test)?,
            manifest: split.manifest,
        },
    };
    Ok(Prepared {
        split,
        standardizer,
        dropped_singletons,
    })
}

fn select_part(path: &Path, part: PartArg, split: SplitArg, seed: u64) -> Result<ChoiceDataset, CliError> {
    let (dataset, _) = load(path)?;
    if part == PartArg::All {
        return Ok(dataset);
    }
    let s = split_dataset(&dataset, split_mode(split), SplitFractions::default(), seed)?;
    Ok(match part {
        PartArg::Train => s.train,
        PartArg::Validation => s.validation,
        PartArg::Test => s.test,
        PartArg::All => unreachable!(),
    })
}

/// Reads a model file, or the `model` entry of a report written by `fit`,
/// `grid-search` or `em-fit`.
pub fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{} is not JSON: {e}", path.display())))?;
    let model = match value.get("payload").and_then(|p| p.get("model")) {
        Some(m) => m.clone(),
        None => value,
    };
    serde_json::from_value(model).map_err(|e| CliError::Data(format!("{} is not a model file: {e}", path.display())))
}

/// The model's parameters and `dataset` in the model's feature basis.
fn model_and_data(file: &ModelFile, dataset: &ChoiceDataset) -> Result<(Params, ChoiceDataset), CliError> {
    let params = file.to_params()?;
    if params.dim() != dataset.dim() {
        return Err(CliError::Data(format!(
            "model has dimension {} but the data has {}",
            params.dim(),
            dataset.dim()
        )));
    }
    let data = match &file.standardizer {
        Some(s) => s.apply(dataset)?,
        None => dataset.clone(),
    };
    Ok((params, data))
}

fn train_config(t: &TrainArgs, seed: u64, learning_rate: f64) -> TrainConfig {
    TrainConfig {
        learning_rate,
        weight_decay: t.wd,
        batch_size: t.batch,
        epochs: t.epochs,
        wall_clock_limit_seconds: Some(t.time_limit),
        seed,
        ..TrainConfig::default()
    }
}

fn check_time_limit(seconds: f64) -> Result<(), CliError> {
    if seconds > 0.0 && seconds.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--time-limit must be positive, got {seconds}")))
    }
}

fn part_nlls(params: &Params, split: &DatasetSplit) -> Result<Value, CliError> {
    Ok(json!({
        "train": negative_log_likelihood(params, &split.train)?,
        "validation": negative_log_likelihood(params, &split.validation)?,
        "test": negative_log_likelihood(params, &split.test)?,
    }))
}

fn log_without_timing(fit: &FitResult) -> Value {
    fit.log
        .iter()
        .map(|r| json!({"epoch": r.epoch, "train_nll": r.train_nll, "val_nll": r.val_nll}))
        .collect()
}

/// Trains one model per learning rate (in parallel) and keeps the lowest
/// final training NLL; ties go to the smaller learning rate.
fn fit_best_learning_rate(
    kind: ModelKind,
    split: &DatasetSplit,
    base: &TrainConfig,
    components: Option<usize>,
    learning_rates: &[f64],
) -> Result<(FitResult, f64, Value), CliError> {
    let results: Mutex<Vec<Option<choicectx::Result<FitResult>>>> =
        Mutex::new((0..learning_rates.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = thread_limit().min(learning_rates.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= learning_rates.len() {
                    break;
                }
                let config = TrainConfig {
                    learning_rate: learning_rates[i],
                    ..base.clone()
                };
                let fit =
                    fit_mle_with_validation(kind, &split.train, Some(&split.validation), &config, None, components);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(fit);
            });
        }
    });
    let results = results.into_inner().expect("workers have finished");
    let mut table = Vec::new();
    let mut best: Option<(FitResult, f64)> = None;
    for (lr, result) in learning_rates.iter().zip(results) {
        match result.expect("every learning rate was tried") {
            Ok(fit) => {
                let nll = fit.final_nll();
                table.push(json!({"learning_rate": lr, "train_nll": nll, "error": null}));
                let better = match &best {
                    None => true,
                    Some((b, blr)) => nll < b.final_nll() || (nll == b.final_nll() && lr < blr),
                };
                if better {
                    best = Some((fit, *lr));
                }
            }
            Err(e) => table.push(json!({"learning_rate": lr, "train_nll": null, "error": e.to_string()})),
        }
    }
    let (fit, lr) = best.ok_or_else(|| CliError::Data("training failed for every learning rate".into()))?;
    Ok((fit, lr, Value::Array(table)))
}

pub fn fit(a: &FitArgs) -> CmdResult {
    check_time_limit(a.train.time_limit)?;
    let kind = model_kind(a.model);
    if a.components.is_some() && kind != ModelKind::MixedLogit {
        return Err(CliError::Usage("--components only applies to --model mixed".into()));
    }
    let prepared = prepare(&a.data)?;
    let split = &prepared.split;
    let (fit, learning_rate, lr_search) = match a.train.lr {
        Some(lr) => {
            let config = train_config(&a.train, a.data.seed, lr);
            config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let fit =
                fit_mle_with_validation(kind, &split.train, Some(&split.validation), &config, None, a.components)?;
            (fit, lr, Value::Null)
        }
        None => {
            let base = train_config(&a.train, a.data.seed, 0.005);
            base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let lrs = GridSearchSpec::default().learning_rates;
            fit_best_learning_rate(kind, split, &base, a.components, &lrs)?
        }
    };
    if let Some(path) = &a.log_out {
        write_with(path, |buf| write_training_log(buf, &fit.log))?;
    }
    let model = ModelFile::from_params(&fit.params, prepared.standardizer.clone());
    Ok(json!({
        "model": model,
        "learning_rate": learning_rate,
        "weight_decay": a.train.wd,
        "learning_rate_search": lr_search,
        "initial_nll": fit.initial_nll,
        "stop_reason": fit.stop_reason,
        "epochs_run": fit.log.len(),
        "nll": part_nlls(&fit.params, split)?,
        "split": prepared.summary(),
        "training_log": log_without_timing(&fit),
    }))
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let file = load_model(&a.params)?;
    let part = select_part(&a.data, a.part, a.split, a.seed)?;
    let (params, data) = model_and_data(&file, &part)?;
    let nll = negative_log_likelihood(&params, &data)?;
    let ranks = mean_relative_rank(&params, &data)?;
    Ok(json!({
        "kind": params.kind(),
        "part": a.part,
        "n": data.len(),
        "nll": nll,
        "mean_nll": nll / data.len() as f64,
        "mean_relative_rank": ranks.mean,
        "relative_ranks": if a.emit_ranks { to_value(&ranks.ranks)? } else { Value::Null },
    }))
}

pub fn lrt(a: &LrtArgs) -> CmdResult {
    let null_file = load_model(&a.null)?;
    let full_file = load_model(&a.full)?;
    let part = select_part(&a.data, a.part, a.split, a.seed)?;
    let (null_params, null_data) = model_and_data(&null_file, &part)?;
    let (full_params, full_data) = model_and_data(&full_file, &part)?;
    match a.mode {
        CompareMode::Lrt => {
            let nll_null = negative_log_likelihood(&null_params, &null_data)?;
            let nll_full = negative_log_likelihood(&full_params, &full_data)?;
            let difference = full_params.n_free().abs_diff(null_params.n_free());
            let dof = match a.dof {
                Some(0) => return Err(CliError::Usage("--dof must be at least 1".into())),
                Some(d) => d,
                None if difference == 0 => {
                    log::warn!("both models have the same number of parameters; using 1 degree of freedom");
                    1
                }
                None => difference,
            };
            let test = likelihood_ratio_test(nll_null, nll_full, dof)?;
            Ok(json!({
                "mode": a.mode,
                "part": a.part,
                "n": part.len(),
                "null": {"kind": null_params.kind(), "nll": nll_null, "parameters": null_params.n_free()},
                "full": {"kind": full_params.kind(), "nll": nll_full, "parameters": full_params.n_free()},
                "statistic": test.statistic,
                "dof": test.dof,
                "p_value": test.p_value,
            }))
        }
        CompareMode::Wilcoxon => {
            let null_ranks = mean_relative_rank(&null_params, &null_data)?;
            let full_ranks = mean_relative_rank(&full_params, &full_data)?;
            let differences: Vec<f64> = null_ranks
                .ranks
                .iter()
                .zip(&full_ranks.ranks)
                .map(|(n, f)| n - f)
                .collect();
            let test = wilcoxon_signed_rank(&differences)?;
            Ok(json!({
                "mode": a.mode,
                "part": a.part,
                "n": part.len(),
                "null": {"kind": null_params.kind(), "mean_relative_rank": null_ranks.mean},
                "full": {"kind": full_params.kind(), "mean_relative_rank": full_ranks.mean},
                "wilcoxon": test,
            }))
        }
    }
}

pub fn constrained_lrt(a: &ConstrainedArgs) -> CmdResult {
    check_time_limit(a.train.time_limit)?;
    let config = train_config(&a.train, a.data.seed, a.train.lr.unwrap_or(0.005));
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let prepared = prepare(&a.data)?;
    let train = &prepared.split.train;
    let mnl = fit_mle_with_validation(ModelKind::Mnl, train, None, &config, None, None)?;
    let mnl_theta = mnl.params.flatten();
    let constrained = fit_constrained_lcl(train, a.entry, &config, Some(&mnl_theta))?;
    let test = likelihood_ratio_test(mnl.final_nll(), constrained.nll, 1)?;
    Ok(json!({
        "entry": [a.entry.0, a.entry.1],
        "feature_names": train.feature_names(),
        "theta": constrained.theta,
        "value": constrained.value,
        "mnl_theta": mnl_theta,
        "mnl_nll": mnl.final_nll(),
        "constrained_nll": constrained.nll,
        "statistic": test.statistic,
        "dof": test.dof,
        "p_value": test.p_value,
        "split": prepared.summary(),
    }))
}

pub fn identify(a: &IdentifyArgs) -> CmdResult {
    let (dataset, _) = load(&a.data)?;
    let dataset = match a.standardize {
        StandardizeArg::Off => dataset,
        StandardizeArg::All | StandardizeArg::Train => Standardizer::fit(&dataset)?.apply(&dataset)?,
    };
    let options = IdentifyOptions {
        dedup_tolerance: a.dedup_tol,
        max_rows: a.max_rows,
        seed: a.seed,
    };
    to_value(lcl_identifiable(&dataset, &options)?)
}

pub fn l1path(a: &L1PathArgs) -> CmdResult {
    check_time_limit(a.train.time_limit)?;
    let base = train_config(&a.train, a.data.seed, a.train.lr.unwrap_or(0.005));
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let prepared = prepare(&a.data)?;
    let config = RegPathConfig {
        alpha: a.alpha,
        ..RegPathConfig::new(a.lambdas.clone(), base)
    };
    let path = l1_path(&prepared.split.train, &config)?;
    Ok(json!({"path": path, "split": prepared.summary()}))
}

pub fn binned(a: &BinnedArgs) -> CmdResult {
    check_time_limit(a.train.time_limit)?;
    let (dataset, _) = load(&a.data)?;
    let dataset = match a.standardize {
        StandardizeArg::Off => dataset,
        StandardizeArg::All | StandardizeArg::Train => Standardizer::fit(&dataset)?.apply(&dataset)?,
    };
    let train = train_config(&a.train, a.seed, a.train.lr.unwrap_or(0.005));
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let config = BinnedConfig {
        n_bins: a.bins,
        min_count: a.min_count,
        train,
        ..BinnedConfig::default()
    };
    let fit = binned_mnl(&dataset, a.feature_q, a.feature_p, &config)?;
    if let Some(path) = &a.csv {
        write_text(path, &fit.to_csv())?;
    }
    to_value(&fit)
}

pub fn net_extract(a: &NetExtractArgs) -> CmdResult {
    let list = ingest_edges(&a.edges)?;
    let extraction = extract_closures(&list.edges, a.seed)?;
    if let Some(path) = &a.dataset_out {
        let dataset = extraction.dataset()?;
        write_with(path, |buf| choicectx::data::write_dataset_to(buf, &dataset))?;
    }
    if let Some(path) = &a.closures_out {
        write_closure_log(path, &extraction.records)?;
    }
    let sizes: Vec<usize> = extraction.observations.iter().map(|o| o.choice_set().len()).collect();
    Ok(json!({
        "edges": list.edges.len(),
        "self_loops_dropped": list.self_loops,
        "nodes": extraction.graph.node_count(),
        "observations": extraction.observations.len(),
        "skipped_small_sets": extraction.skipped,
        "mean_choice_set_size": mean_size(&sizes),
        "feature_names": FEATURE_NAMES,
    }))
}

fn mean_size(sizes: &[usize]) -> Option<f64> {
    (!sizes.is_empty()).then(|| sizes.iter().sum::<usize>() as f64 / sizes.len() as f64)
}

pub fn net_generate(a: &NetGenerateArgs) -> CmdResult {
    let model = match &a.params {
        Some(path) => load_model(path)?.to_params()?,
        None => match a.model {
            GeneratorArg::Mnl => synthetic_mnl_params(),
            GeneratorArg::Lcl => synthetic_lcl_params(),
        },
    };
    let config = SyntheticConfig {
        n_nodes: a.nodes,
        closure_prob: a.closure_prob,
        target_closures: a.closures,
        poisson_rate: a.rate,
        model,
        seed: a.seed,
        max_steps: a.max_steps,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let net = generate_synthetic(&config)?;
    if let Some(path) = &a.edges {
        write_edges(path, &net.edges)?;
    }
    if let Some(path) = &a.dataset_out {
        let dataset = net.dataset()?;
        write_with(path, |buf| choicectx::data::write_dataset_to(buf, &dataset))?;
    }
    if let Some(path) = &a.closures_out {
        write_closure_log(path, &net.records)?;
    }
    let sizes: Vec<usize> = net.observations.iter().map(|o| o.choice_set().len()).collect();
    Ok(json!({
        "generator": ModelFile::from_params(&config.model, None),
        "edges": net.edges.len(),
        "steps": net.steps,
        "closures": net.closures,
        "observations": net.observations.len(),
        "mean_choice_set_size": mean_size(&sizes),
        "truncated": net.truncated,
    }))
}

pub fn em(a: &EmFitArgs) -> CmdResult {
    check_time_limit(a.time_limit)?;
    let prepared = prepare(&a.data)?;
    let config = EmConfig {
        inner_iterations: a.inner_iters,
        inner_learning_rate: a.lr,
        max_iterations: a.max_iters,
        grad_tolerance: a.tol,
        wall_clock_limit_seconds: Some(a.time_limit),
        seed: a.data.seed,
    };
    let fit = em_fit(&prepared.split.train, &config, None)?;
    let params = Params::Dlcl(fit.params.clone());
    Ok(json!({
        "model": ModelFile::from_params(&params, prepared.standardizer.clone()),
        "stop_reason": fit.stop_reason,
        "iterations": fit.trace.len().saturating_sub(1),
        "nll": part_nlls(&params, &prepared.split)?,
        "trace": fit.trace,
        "split": prepared.summary(),
    }))
}

pub fn grid(a: &GridSearchArgs) -> CmdResult {
    check_time_limit(a.time_limit)?;
    let kind = model_kind(a.model);
    let defaults = GridSearchSpec::default();
    let spec = GridSearchSpec {
        learning_rates: a.lrs.clone().unwrap_or(defaults.learning_rates),
        weight_decays: a.wds.clone().unwrap_or(defaults.weight_decays),
        ..defaults
    };
    let base = TrainConfig {
        batch_size: a.batch,
        epochs: a.epochs,
        wall_clock_limit_seconds: Some(a.time_limit),
        seed: a.data.seed,
        ..TrainConfig::default()
    };
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let prepared = prepare(&a.data)?;
    let split = &prepared.split;
    let result = grid_search(kind, &split.train, &split.validation, &spec, &base, a.components)?;
    Ok(json!({
        "model": ModelFile::from_params(&result.params, prepared.standardizer.clone()),
        "learning_rate": result.learning_rate,
        "weight_decay": result.weight_decay,
        "table": result.table,
        "nll": part_nlls(&result.params, split)?,
        "split": prepared.summary(),
    }))
}

/// The seed a subcommand ran with, echoed at the top level of the report.
pub fn seed_of(command: &Command) -> Option<u64> {
    Some(match command {
        Command::Fit(a) => a.data.seed,
        Command::Eval(a) => a.seed,
        Command::Lrt(a) => a.seed,
        Command::ConstrainedLrt(a) => a.data.seed,
        Command::Identify(a) => a.seed,
        Command::L1path(a) => a.data.seed,
        Command::Binned(a) => a.seed,
        Command::NetExtract(a) => a.seed,
        Command::NetGenerate(a) => a.seed,
        Command::EmFit(a) => a.data.seed,
        Command::GridSearch(a) => a.data.seed,
    })
}

pub fn dispatch(command: &Command) -> CmdResult {
    match command {
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Lrt(a) => lrt(a),
        Command::ConstrainedLrt(a) => constrained_lrt(a),
        Command::Identify(a) => identify(a),
        Command::L1path(a) => l1path(a),
        Command::Binned(a) => binned(a),
        Command::NetExtract(a) => net_extract(a),
        Command::NetGenerate(a) => net_generate(a),
        Command::EmFit(a) => em(a),
        Command::GridSearch(a) => grid(a),
    }
}
