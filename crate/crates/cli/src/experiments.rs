//! Named experiments. Each returns CSV tables whose bodies depend only on
//! the spec; jobs run in parallel but rows are emitted in sweep order.

use std::path::Path;

use rayon::prelude::*;

use adaclip::data::{load_idx, make_classification_split, make_signflip_dataset, Dataset};
use adaclip::models::{GradientOracle, L2Regression, Logistic, Mlp};
use adaclip::optimizer::{reports_to_csv, serialize_params, PrivacyTarget, TrainConfig, TrainOutcome, Trainer};

use crate::config::{DatasetSpec, ExperimentKind, ExperimentSpec, ModelSpec, RunTemplate, StrategySpec};
use crate::output::CsvTable;
use crate::CliError;

/// Everything an experiment produced.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub tables: Vec<CsvTable>,
    /// Non-CSV artifacts as `(file name, contents)`.
    pub files: Vec<(String, String)>,
    /// Number of runs that ended in an error.
    pub failures: usize,
}

pub const VERSION: &str = concat!("adaclip-cli ", env!("CARGO_PKG_VERSION"));

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    match spec.kind {
        ExperimentKind::RegressionVsDim => regression_vs_dim(spec),
        ExperimentKind::NoiseVsEpsilon => noise_vs_epsilon(spec),
        ExperimentKind::AccuracyTable => accuracy_table(spec),
        ExperimentKind::MomentumStudy => momentum_study(spec),
        ExperimentKind::SingleRun => single_run(spec),
    }
}

pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub classes: usize,
    pub notes: Vec<String>,
}

const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

pub fn mnist_available(dir: &Path) -> bool {
    MNIST_FILES.iter().all(|f| dir.join(f).is_file())
}

/// Loads or generates the dataset. `dim` overrides the signflip width.
pub fn load_dataset(spec: &DatasetSpec, dim: Option<usize>, seed: u64) -> Result<LoadedData, CliError> {
    match spec {
        DatasetSpec::SignFlip { n, mu } => {
            let d = dim.unwrap_or(1);
            let ds = make_signflip_dataset(*n, d, *mu, seed)?;
            Ok(LoadedData { test: ds.clone(), train: ds, classes: 0, notes: Vec::new() })
        }
        DatasetSpec::Clusters { n_train, n_test, dim, classes, separation } => {
            let (train, test) = make_classification_split(*n_train, *n_test, *dim, *classes, *separation, seed)?;
            Ok(LoadedData { train, test, classes: *classes, notes: Vec::new() })
        }
        DatasetSpec::Mnist { dir, fallback } => {
            if mnist_available(dir) {
                let train = load_idx(dir.join(MNIST_FILES[0]), dir.join(MNIST_FILES[1]))?;
                let test = load_idx(dir.join(MNIST_FILES[2]), dir.join(MNIST_FILES[3]))?;
                Ok(LoadedData { train, test, classes: 10, notes: Vec::new() })
            } else {
                let mut data = load_dataset(fallback, dim, seed)?;
                data.notes.push(format!(
                    "warning: MNIST files not found in {}; using synthetic clusters instead",
                    dir.display()
                ));
                Ok(data)
            }
        }
    }
}

pub fn build_model(spec: &ModelSpec, data: &LoadedData, seed: u64) -> Result<Box<dyn GradientOracle>, CliError> {
    Ok(match *spec {
        ModelSpec::L2Regression => Box::new(L2Regression::for_dataset(&data.train)?),
        ModelSpec::Logistic => Box::new(Logistic::for_dataset(&data.train, data.classes)?),
        ModelSpec::Mlp { hidden, projection, activation } => {
            Box::new(Mlp::for_dataset(&data.train, hidden, data.classes, activation, projection.map(|p| (p, seed)))?)
        }
    })
}

pub fn train_config(
    template: &RunTemplate,
    strategy: adaclip::mechanism::PrivatizationStrategy,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        learning_rate: template.learning_rate,
        batch_size: template.batch_size,
        epochs: template.epochs,
        strategy,
        privacy: PrivacyTarget {
            epsilon: template.epsilon,
            sigma: template.sigma,
            delta: template.delta,
            accountant: template.accountant,
        },
        momentum: template.momentum,
        noise_mode: template.noise_mode,
        seed,
        moments: template.moments,
        eval_every: template.eval_every,
    }
}

/// The bound behind `norm_bound(auto)`: the dataset's input norm bound
/// (28 for MNIST scaled to `[0, 1]`). The strategy's safety clip enforces it
/// where the true gradient bound is larger.
pub fn auto_bound(data: &Dataset) -> f64 {
    data.input_norm_bound()
}

fn run_training(model: &dyn GradientOracle, data: &LoadedData, config: TrainConfig) -> Result<TrainOutcome, CliError> {
    Ok(Trainer::new(model, &data.train, config)?.run(Some(&data.test))?)
}

fn status(err: &CliError) -> String {
    format!("error: {}", err.to_string().replace([',', '\n'], ";"))
}

fn base_metadata(spec: &ExperimentSpec) -> Vec<(String, String)> {
    let t = &spec.template;
    let mut meta = vec![
        ("version".into(), VERSION.into()),
        ("experiment".into(), spec.kind.name().into()),
        ("master_seed".into(), spec.seed.to_string()),
        ("data_seed".into(), spec.data_seed.to_string()),
        ("repetitions".into(), spec.repetitions.to_string()),
        ("accountant".into(), t.accountant.name().into()),
        ("noise_mode".into(), t.noise_mode.name().into()),
        ("delta".into(), t.delta.to_string()),
        ("learning_rate".into(), t.learning_rate.to_string()),
        ("batch_size".into(), t.batch_size.to_string()),
        ("epochs".into(), t.epochs.to_string()),
        ("momentum".into(), t.momentum.to_string()),
        (
            "moments".into(),
            format!("beta1={} beta2={} h1={} h2={}", t.moments.beta1, t.moments.beta2, t.moments.h1, t.moments.h2),
        ),
        ("sampling".into(), "shuffle-and-partition minibatches; accountant assumes Poisson sampling with q=B/N".into()),
    ];
    if t.batch_size > 1 {
        meta.push((
            "variance_debiasing".into(),
            format!("std update subtracts b^2 sigma_eff^2 for {} noise and rescales by B", t.noise_mode.name()),
        ));
    }
    if matches!(spec.model, ModelSpec::Mlp { .. }) {
        meta.push(("note".into(), "non-PCA variant: fixed random projection replaces private PCA".into()));
    }
    meta
}

fn data_metadata(meta: &mut Vec<(String, String)>, data: &LoadedData, model: &dyn GradientOracle) {
    meta.push((
        "dataset".into(),
        format!(
            "{} n={} d={} normalization={}",
            data.train.name(),
            data.train.len(),
            data.train.dim(),
            data.train.normalization()
        ),
    ));
    meta.push(("model".into(), format!("{} params={}", model.kind(), model.dim())));
    for note in &data.notes {
        meta.push(("note".into(), note.clone()));
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn rep_seed(spec: &ExperimentSpec, rep: usize) -> u64 {
    spec.seed.wrapping_add(rep as u64)
}

fn strategy_list(spec: &ExperimentSpec, with_baseline: bool) -> Vec<StrategySpec> {
    let mut out = spec.strategies.clone();
    if with_baseline && !out.contains(&spec.baseline) {
        out.insert(0, spec.baseline);
    }
    out
}

fn regression_vs_dim(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let strategies = strategy_list(spec, false);
    let mut jobs = Vec::new();
    for &d in &spec.dims {
        for (si, _) in strategies.iter().enumerate() {
            for rep in 0..spec.repetitions {
                jobs.push((d, si, rep));
            }
        }
    }
    let datasets = spec
        .dims
        .iter()
        .map(|&d| load_dataset(&spec.dataset, Some(d), spec.data_seed))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<(f64, f64), CliError>> = jobs
        .par_iter()
        .map(|&(d, si, rep)| {
            let data = &datasets[spec.dims.iter().position(|&x| x == d).expect("dim from sweep")];
            let model = L2Regression::for_dataset(&data.train)?;
            let strategy = strategies[si].resolve(auto_bound(&data.train));
            let out = run_training(&model, data, train_config(&spec.template, strategy, rep_seed(spec, rep)))?;
            let optimum = L2Regression::optimum(&data.train);
            let err = out.params.iter().zip(&optimum).map(|(t, s)| (t - s).powi(2)).sum();
            Ok((err, out.mean_total_change_norm()))
        })
        .collect();

    let mut meta = base_metadata(spec);
    meta.push(("metric".into(), "final_error = ||theta - theta*||^2 with theta* the data mean".into()));
    if let Some(s) = spec.template.sigma {
        meta.push(("sigma".into(), s.to_string()));
    }
    let mut table = CsvTable::new(
        "regression_vs_dim",
        meta.clone(),
        "d,strategy,repetition,seed,final_error,mean_noise_norm,status",
    );
    let mut summary = CsvTable::new("regression_vs_dim_summary", meta, "d,strategy,mean_error,stderr_error,runs");
    let mut failures = 0;
    let mut idx = 0;
    for &d in &spec.dims {
        for s in &strategies {
            let mut errors = Vec::new();
            for rep in 0..spec.repetitions {
                let row = match &results[idx] {
                    Ok((err, noise)) => {
                        errors.push(*err);
                        format!("{d},{s},{rep},{},{err},{noise},ok", rep_seed(spec, rep))
                    }
                    Err(e) => {
                        failures += 1;
                        format!("{d},{s},{rep},{},,,{}", rep_seed(spec, rep), status(e))
                    }
                };
                table.rows.push(row);
                idx += 1;
            }
            if !errors.is_empty() {
                let (m, sd) = mean_std(&errors);
                summary.rows.push(format!("{d},{s},{m},{},{}", sd / (errors.len() as f64).sqrt(), errors.len()));
            }
        }
    }
    Ok(ExperimentOutput { tables: vec![table, summary], files: Vec::new(), failures })
}

/// Sigma per epsilon; identical for every strategy since accounting only
/// sees `(q, T, delta)`.
fn sigma_per_epsilon(spec: &ExperimentSpec, n: usize, eps: f64) -> Result<f64, CliError> {
    let mut template = spec.template.clone();
    template.epsilon = Some(eps);
    template.sigma = None;
    let config = train_config(&template, adaclip::mechanism::PrivatizationStrategy::L2Clip { threshold: 1.0 }, 0);
    config.validate(n)?;
    Ok(config.resolve_privacy(n)?.1)
}

type RunResult<T> = Result<T, CliError>;

struct EpsilonRun {
    sigma: f64,
    mean_noise: f64,
    metric: f64,
}

fn epsilon_sweep(
    spec: &ExperimentSpec,
    strategies: &[StrategySpec],
    data: &LoadedData,
    model: &dyn GradientOracle,
) -> Result<(Vec<f64>, Vec<RunResult<EpsilonRun>>), CliError> {
    let n = data.train.len();
    let sigmas = spec.epsilons.iter().map(|&e| sigma_per_epsilon(spec, n, e)).collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for ei in 0..spec.epsilons.len() {
        for si in 0..strategies.len() {
            for rep in 0..spec.repetitions {
                jobs.push((ei, si, rep));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(ei, si, rep)| {
            let mut template = spec.template.clone();
            template.epsilon = Some(spec.epsilons[ei]);
            template.sigma = None;
            let strategy = strategies[si].resolve(auto_bound(&data.train));
            let out = run_training(model, data, train_config(&template, strategy, rep_seed(spec, rep)))?;
            Ok(EpsilonRun {
                sigma: out.sigma,
                mean_noise: out.mean_total_change_norm(),
                metric: model.metric(&out.params, &data.test),
            })
        })
        .collect();
    Ok((sigmas, results))
}

fn classification_setup(spec: &ExperimentSpec) -> Result<(LoadedData, Box<dyn GradientOracle>), CliError> {
    let data = load_dataset(&spec.dataset, None, spec.data_seed)?;
    let model = build_model(&spec.model, &data, spec.data_seed)?;
    Ok((data, model))
}

fn noise_vs_epsilon(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let strategies = strategy_list(spec, true);
    let (data, model) = classification_setup(spec)?;
    let (sigmas, results) = epsilon_sweep(spec, &strategies, &data, model.as_ref())?;
    let mut meta = base_metadata(spec);
    data_metadata(&mut meta, &data, model.as_ref());
    for (e, s) in spec.epsilons.iter().zip(&sigmas) {
        meta.push((format!("sigma[eps={e}]"), s.to_string()));
    }
    meta.push(("baseline".into(), spec.baseline.to_string()));
    let mut table = CsvTable::new(
        "noise_vs_epsilon",
        meta,
        "epsilon,sigma,strategy,repetition,mean_noise_norm,ratio_to_baseline,test_metric,status",
    );
    let base_idx = strategies.iter().position(|s| *s == spec.baseline).expect("baseline inserted");
    let reps = spec.repetitions;
    let per_eps = strategies.len() * reps;
    let mut failures = 0;
    for (ei, &eps) in spec.epsilons.iter().enumerate() {
        for (si, s) in strategies.iter().enumerate() {
            for rep in 0..reps {
                let row = match &results[ei * per_eps + si * reps + rep] {
                    Ok(r) => {
                        let ratio = match &results[ei * per_eps + base_idx * reps + rep] {
                            Ok(b) => (r.mean_noise / b.mean_noise).to_string(),
                            Err(_) => String::new(),
                        };
                        format!("{eps},{},{s},{rep},{},{ratio},{},ok", r.sigma, r.mean_noise, r.metric)
                    }
                    Err(e) => {
                        failures += 1;
                        format!("{eps},{},{s},{rep},,,,{}", sigmas[ei], status(e))
                    }
                };
                table.rows.push(row);
            }
        }
    }
    Ok(ExperimentOutput { tables: vec![table], files: Vec::new(), failures })
}

fn accuracy_table(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let strategies = strategy_list(spec, false);
    let (data, model) = classification_setup(spec)?;
    let (sigmas, results) = epsilon_sweep(spec, &strategies, &data, model.as_ref())?;
    let mut meta = base_metadata(spec);
    data_metadata(&mut meta, &data, model.as_ref());
    for (e, s) in spec.epsilons.iter().zip(&sigmas) {
        meta.push((format!("sigma[eps={e}]"), s.to_string()));
    }
    let mut raw = CsvTable::new("accuracy_runs", meta.clone(), "epsilon,strategy,repetition,sigma,accuracy,status");
    let mut summary = CsvTable::new(
        "accuracy_table",
        meta,
        "epsilon,strategy,sigma,mean_accuracy_pct,std_accuracy_pct,runs,formatted",
    );
    let reps = spec.repetitions;
    let mut failures = 0;
    let mut idx = 0;
    for (ei, &eps) in spec.epsilons.iter().enumerate() {
        for s in &strategies {
            let mut accs = Vec::new();
            for rep in 0..reps {
                match &results[idx] {
                    Ok(r) => {
                        accs.push(100.0 * r.metric);
                        raw.rows.push(format!("{eps},{s},{rep},{},{},ok", r.sigma, r.metric));
                    }
                    Err(e) => {
                        failures += 1;
                        raw.rows.push(format!("{eps},{s},{rep},{},,{}", sigmas[ei], status(e)));
                    }
                }
                idx += 1;
            }
            if !accs.is_empty() {
                let (m, sd) = mean_std(&accs);
                summary.rows.push(format!("{eps},{s},{},{m},{sd},{},{m:.2} \u{00b1} {sd:.2}", sigmas[ei], accs.len()));
            }
        }
    }
    Ok(ExperimentOutput { tables: vec![summary, raw], files: Vec::new(), failures })
}

fn momentum_study(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let (data, model) = classification_setup(spec)?;
    let strategy = spec.strategies[0].resolve(auto_bound(&data.train));
    let mut template = spec.template.clone();
    if template.eval_every == 0 {
        template.eval_every = (data.train.len() / template.batch_size).max(1);
    }
    let mut jobs = Vec::new();
    for bi in 0..spec.betas.len() {
        for rep in 0..spec.repetitions {
            jobs.push((bi, rep));
        }
    }
    let results: Vec<Result<TrainOutcome, CliError>> = jobs
        .par_iter()
        .map(|&(bi, rep)| {
            let mut t = template.clone();
            t.momentum = spec.betas[bi];
            run_training(model.as_ref(), &data, train_config(&t, strategy, rep_seed(spec, rep)))
        })
        .collect();
    let mut meta = base_metadata(spec);
    data_metadata(&mut meta, &data, model.as_ref());
    meta.push(("strategy".into(), strategy.to_string()));
    let mut curve = CsvTable::new("momentum_curve", meta.clone(), "beta,repetition,step,accuracy");
    let mut finals = CsvTable::new(
        "momentum_final",
        meta,
        "beta,repetition,sigma,final_accuracy,mean_update_noise_norm,mean_step_noise_norm,status",
    );
    let mut failures = 0;
    for (&(bi, rep), res) in jobs.iter().zip(&results) {
        let beta = spec.betas[bi];
        match res {
            Ok(out) => {
                for (step, acc) in &out.metric_curve {
                    curve.rows.push(format!("{beta},{rep},{step},{acc}"));
                }
                let n = out.reports.len().max(1) as f64;
                let upd = out.reports.iter().map(|r| r.update_noise_norm).sum::<f64>() / n;
                let raw = out.reports.iter().map(|r| r.noise_norm).sum::<f64>() / n;
                let acc = out.metric_curve.last().map_or(f64::NAN, |c| c.1);
                finals.rows.push(format!("{beta},{rep},{},{acc},{upd},{raw},ok", out.sigma));
            }
            Err(e) => {
                failures += 1;
                finals.rows.push(format!("{beta},{rep},,,,,{}", status(e)));
            }
        }
    }
    Ok(ExperimentOutput { tables: vec![finals, curve], files: Vec::new(), failures })
}

fn single_run(spec: &ExperimentSpec) -> Result<ExperimentOutput, CliError> {
    let dim = spec.dims.first().copied();
    let data = load_dataset(&spec.dataset, dim, spec.data_seed)?;
    let model = build_model(&spec.model, &data, spec.data_seed)?;
    let strategy = spec.strategies[0].resolve(auto_bound(&data.train));
    let out = run_training(model.as_ref(), &data, train_config(&spec.template, strategy, spec.seed))?;
    let mut meta = base_metadata(spec);
    data_metadata(&mut meta, &data, model.as_ref());
    meta.push(("strategy".into(), strategy.to_string()));
    meta.push(("sigma".into(), out.sigma.to_string()));
    meta.push(("epsilon_spent".into(), out.epsilon_spent().to_string()));
    meta.push(("stopped_early".into(), out.stopped_early.to_string()));
    meta.push(("final_metric".into(), model.metric(&out.params, &data.test).to_string()));

    let steps_csv = reports_to_csv(&out.reports);
    let (header, body) = steps_csv.split_once('\n').expect("header line");
    let mut tables = vec![CsvTable::new("steps", meta.clone(), header).with_rows(body.lines().map(String::from))];
    if let Some(ledger) = &out.ledger {
        let csv = ledger.to_csv();
        let (h, b) = csv.split_once('\n').expect("header line");
        tables.push(CsvTable::new("ledger", meta.clone(), h).with_rows(b.lines().map(String::from)));
    }
    if let Some(state) = &out.moments {
        let csv = state.to_csv();
        let (h, b) = csv.split_once('\n').expect("header line");
        tables.push(CsvTable::new("moments", meta.clone(), h).with_rows(b.lines().map(String::from)));
    }
    if !out.metric_curve.is_empty() {
        tables.push(
            CsvTable::new("metric_curve", meta, "step,metric")
                .with_rows(out.metric_curve.iter().map(|(s, m)| format!("{s},{m}"))),
        );
    }
    Ok(ExperimentOutput {
        tables,
        files: vec![("params.txt".into(), serialize_params(&out.params, model.kind()))],
        failures: 0,
    })
}
