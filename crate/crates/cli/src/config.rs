//! Experiment spec files: one `key = value` per line, `#` comments, lists
//! separated by commas.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaclip::accountant::AccountantKind;
use adaclip::estimator::MomentConfig;
use adaclip::mechanism::{NoiseMode, PrivatizationStrategy};
use adaclip::models::Activation;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    RegressionVsDim,
    NoiseVsEpsilon,
    AccuracyTable,
    MomentumStudy,
    SingleRun,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::RegressionVsDim => "regression_vs_dim",
            Self::NoiseVsEpsilon => "noise_vs_epsilon",
            Self::AccuracyTable => "accuracy_table",
            Self::MomentumStudy => "momentum_study",
            Self::SingleRun => "single_run",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "regression_vs_dim" => Self::RegressionVsDim,
            "noise_vs_epsilon" => Self::NoiseVsEpsilon,
            "accuracy_table" => Self::AccuracyTable,
            "momentum_study" => Self::MomentumStudy,
            "single_run" => Self::SingleRun,
            other => return Err(format!("unknown experiment {other:?}")),
        })
    }
}

/// A strategy whose parameter may be `auto`, meaning the dataset's input
/// norm bound (only meaningful for `norm_bound`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategySpec {
    Fixed(PrivatizationStrategy),
    NormBoundAuto,
}

impl StrategySpec {
    pub fn resolve(self, input_norm_bound: f64) -> PrivatizationStrategy {
        match self {
            Self::Fixed(s) => s,
            Self::NormBoundAuto => PrivatizationStrategy::NormBound { bound: input_norm_bound },
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(s) => write!(f, "{s}"),
            Self::NormBoundAuto => f.write_str("norm_bound(auto)"),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact == "norm_bound(auto)" || compact == "norm_bound:auto" {
            return Ok(Self::NormBoundAuto);
        }
        s.parse().map(Self::Fixed).map_err(|e: adaclip::Error| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// `(+-mu, 0, ..., 0)` points; the dimension comes from the sweep.
    SignFlip {
        n: usize,
        mu: f64,
    },
    Clusters {
        n_train: usize,
        n_test: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// MNIST IDX files in `dir`; falls back to `fallback` when missing.
    Mnist {
        dir: PathBuf,
        fallback: Box<DatasetSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    L2Regression,
    Logistic,
    Mlp { hidden: usize, projection: Option<usize>, activation: Activation },
}

/// Hyperparameters shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTemplate {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub noise_mode: NoiseMode,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub sigma: Option<f64>,
    pub accountant: AccountantKind,
    pub moments: MomentConfig,
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub data_seed: u64,
    pub repetitions: usize,
    pub dims: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub betas: Vec<f64>,
    pub strategies: Vec<StrategySpec>,
    /// Reference strategy for ratio columns.
    pub baseline: StrategySpec,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub template: RunTemplate,
    pub output: PathBuf,
}

/// Raw key-value pairs with their line numbers.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), (no + 1, value.trim().to_string())).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {key:?}", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((line, v)) => {
                v.parse().map(Some).map_err(|e| CliError::Config(format!("line {line}: bad value for {key}: {e}")))
            }
        }
    }

    fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(None),
            Some((line, v)) => {
                let items = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse().map_err(|e| CliError::Config(format!("line {line}: bad item {s:?} in {key}: {e}")))
                    })
                    .collect::<Result<Vec<T>, _>>()?;
                if items.is_empty() {
                    return Err(CliError::Config(format!("line {line}: {key} must not be empty")));
                }
                Ok(Some(items))
            }
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.iter().next() {
            Some((k, (line, _))) => Err(CliError::Config(format!("line {line}: unknown key {k:?}"))),
            None => Ok(()),
        }
    }
}

/// `none` and empty parse to `None`.
struct OptF64(Option<f64>);

impl FromStr for OptF64 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "" | "none" => Ok(Self(None)),
            v => v.parse().map(|x| Self(Some(x))).map_err(|_| format!("{v:?} is not a number")),
        }
    }
}

fn positive<T: PartialOrd + Default + fmt::Display>(key: &str, v: T) -> Result<T, CliError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{key} must be positive, got {v}")))
    }
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut kv = KeyValues::parse(text)?;
        let kind: ExperimentKind =
            kv.get("experiment")?.ok_or_else(|| CliError::Config("missing key `experiment`".into()))?;
        let seed: u64 = kv.get_or("seed", 0)?;
        let data_seed = kv.get_or("data_seed", seed)?;
        let repetitions = positive("repetitions", kv.get_or("repetitions", 1usize)?)?;
        let output: PathBuf = kv.get_or("output", PathBuf::from("results"))?;

        let default_strategies = match kind {
            ExperimentKind::RegressionVsDim => "l2_clip(1.0), adaclip(1.0)",
            ExperimentKind::NoiseVsEpsilon => "l2_clip(4.0), adaclip(1.0)",
            ExperimentKind::AccuracyTable => "norm_bound(auto), l2_clip(4.0), adaclip(1.0)",
            ExperimentKind::MomentumStudy => "norm_bound(auto)",
            ExperimentKind::SingleRun => "adaclip(1.0)",
        };
        let strategies = match kv.list("strategies")? {
            Some(s) => s,
            None => default_strategies
                .split(',')
                .map(|s| s.trim().parse().map_err(CliError::Config))
                .collect::<Result<_, _>>()?,
        };
        let baseline = kv.get_or("baseline", StrategySpec::Fixed(PrivatizationStrategy::L2Clip { threshold: 4.0 }))?;

        let dims = kv.list("dims")?.unwrap_or_else(|| vec![1, 10, 100, 1000]);
        if dims.contains(&0) {
            return Err(CliError::Config("dims must be positive".into()));
        }
        let epsilons: Vec<f64> = kv.list("epsilons")?.unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
        let betas: Vec<f64> = kv.list("betas")?.unwrap_or_else(|| vec![0.0, 0.5, 0.9]);
        if epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(CliError::Config("epsilons must be positive".into()));
        }
        if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(CliError::Config("betas must lie in [0, 1)".into()));
        }

        let dataset_name: String = kv.get_or(
            "dataset",
            if kind == ExperimentKind::RegressionVsDim { "signflip" } else { "clusters" }.to_string(),
        )?;
        let n: usize = kv.get_or("n", if kind == ExperimentKind::RegressionVsDim { 1000 } else { 2000 })?;
        let clusters = DatasetSpec::Clusters {
            n_train: positive("n", n)?,
            n_test: kv.get_or("n_test", 1000)?,
            dim: positive("dim", kv.get_or("dim", 20)?)?,
            classes: kv.get_or("classes", 2)?,
            separation: kv.get_or("separation", 3.0)?,
        };
        let mu: f64 = kv.get_or("mu", 1.0)?;
        let mnist_dir: Option<PathBuf> = kv.get("mnist_dir")?;
        let dataset = match dataset_name.as_str() {
            "signflip" => DatasetSpec::SignFlip { n: positive("n", n)?, mu: positive("mu", mu)? },
            "clusters" => clusters,
            "mnist" => DatasetSpec::Mnist {
                dir: mnist_dir
                    .or_else(|| std::env::var_os("ADACLIP_MNIST_DIR").map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from("mnist")),
                fallback: Box::new(clusters),
            },
            other => return Err(CliError::Config(format!("unknown dataset {other:?}"))),
        };
        if let DatasetSpec::SignFlip { n, .. } = dataset {
            if n % 2 != 0 {
                return Err(CliError::Config(format!("signflip dataset needs an even n, got {n}")));
            }
        }

        let model_name: String = kv.get_or(
            "model",
            if matches!(dataset, DatasetSpec::SignFlip { .. }) { "l2_regression" } else { "logistic" }.to_string(),
        )?;
        let hidden = kv.get_or("hidden", 64usize)?;
        let projection: OptF64 = kv.get_or("projection", OptF64(None))?;
        let activation = kv.get_or("activation", Activation::Tanh)?;
        let model = match model_name.as_str() {
            "l2_regression" => ModelSpec::L2Regression,
            "logistic" => ModelSpec::Logistic,
            "mlp" => ModelSpec::Mlp {
                hidden: positive("hidden", hidden)?,
                projection: projection.0.map(|p| p as usize),
                activation,
            },
            other => return Err(CliError::Config(format!("unknown model {other:?}"))),
        };
        if matches!(dataset, DatasetSpec::SignFlip { .. }) != (model == ModelSpec::L2Regression) {
            return Err(CliError::Config("l2_regression pairs with the signflip dataset only".into()));
        }

        let defaults = MomentConfig::default();
        let epsilon: OptF64 = kv.get_or("epsilon", OptF64(None))?;
        let sigma: OptF64 = kv.get_or("sigma", OptF64(None))?;
        let template = RunTemplate {
            learning_rate: positive("learning_rate", kv.get_or("learning_rate", 0.01)?)?,
            batch_size: positive("batch_size", kv.get_or("batch_size", 1usize)?)?,
            epochs: positive("epochs", kv.get_or("epochs", 10usize)?)?,
            momentum: kv.get_or("momentum", 0.0)?,
            noise_mode: kv.get_or("noise_mode", NoiseMode::default())?,
            delta: kv.get_or("delta", 1e-5)?,
            epsilon: epsilon.0,
            sigma: sigma.0,
            accountant: kv.get_or("accountant", AccountantKind::Rdp)?,
            moments: MomentConfig {
                beta1: kv.get_or("beta1", defaults.beta1)?,
                beta2: kv.get_or("beta2", defaults.beta2)?,
                h1: kv.get_or("h1", defaults.h1)?,
                h2: kv.get_or("h2", defaults.h2)?,
            },
            eval_every: kv.get_or("eval_every", 0usize)?,
        };
        template.moments.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let needs_privacy = !matches!(kind, ExperimentKind::NoiseVsEpsilon | ExperimentKind::AccuracyTable);
        if needs_privacy && template.epsilon.is_none() && template.sigma.is_none() {
            return Err(CliError::Config("set `sigma` or `epsilon`".into()));
        }
        kv.finish()?;
        Ok(Self {
            kind,
            seed,
            data_seed,
            repetitions,
            dims,
            epsilons,
            betas,
            strategies,
            baseline,
            dataset,
            model,
            template,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_regression_spec() {
        let text = "
            # regression sweep
            experiment = regression_vs_dim
            seed = 3
            repetitions = 5
            dims = 1, 10, 100
            sigma = 0.1   # noise
        ";
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.kind, ExperimentKind::RegressionVsDim);
        assert_eq!(spec.dims, vec![1, 10, 100]);
        assert_eq!(spec.repetitions, 5);
        assert_eq!(spec.template.sigma, Some(0.1));
        assert_eq!(spec.dataset, DatasetSpec::SignFlip { n: 1000, mu: 1.0 });
        assert_eq!(spec.strategies.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentSpec::parse("seed = 1").is_err());
        assert!(ExperimentSpec::parse("experiment = nope").is_err());
        assert!(ExperimentSpec::parse("experiment = single_run\nsigma = 1\ncolour = red").is_err());
        assert!(ExperimentSpec::parse("experiment = single_run\nsigma = 1\nsigma = 2").is_err());
        assert!(ExperimentSpec::parse("experiment = single_run").is_err());
        assert!(ExperimentSpec::parse("experiment = noise_vs_epsilon\nepsilons =").is_err());
        assert!(ExperimentSpec::parse("experiment = single_run\nsigma = 1\nline without equals").is_err());
    }

    #[test]
    fn strategy_lists() {
        let spec = ExperimentSpec::parse(
            "experiment = accuracy_table\nstrategies = norm_bound(auto), coord_clip(0.1), whitening(1)",
        )
        .unwrap();
        assert_eq!(spec.strategies[0], StrategySpec::NormBoundAuto);
        assert_eq!(spec.strategies[0].resolve(28.0), PrivatizationStrategy::NormBound { bound: 28.0 });
        assert_eq!(spec.strategies[1], StrategySpec::Fixed(PrivatizationStrategy::CoordClip { threshold: 0.1 }));
    }
}
