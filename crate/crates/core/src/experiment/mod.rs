//! Experiment orchestration: configs, the per-seed protocol, grid search
//! with validation-only model selection, and result rows.

pub mod checkpoint;
pub mod metrics;
pub mod report;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv_dataset, split_train_val, Dataset, ResultRow, SchemaFlags, SplitSpec};
use crate::error::{Error, Result, StageExt};
use crate::estimators::{train_drnet, train_drnet_oracle, train_snet, train_tnet, CateModel, SNet, SNetArch};
use crate::nuisance::{pretrain_nuisance, Arch, NuisanceTriple};
use crate::robust::{train_nudrnet, tune_nusnet, RobustConfig, RobustReport};
use crate::scalar::Scalar;
use crate::synthetic::{sample_dataset, SyntheticConfig};
use crate::train::{derive_seed, TrainerConfig};

use metrics::{mse_transformed_target, mse_vs_noisy_tau, pehe, MetricName, MetricValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tnet,
    Drnet,
    DrnetOracle,
    Nudrnet,
    Snet,
    Nusnet,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tnet => "tnet",
            Method::Drnet => "drnet",
            Method::DrnetOracle => "drnet_oracle",
            Method::Nudrnet => "nudrnet",
            Method::Snet => "snet",
            Method::Nusnet => "nusnet",
        }
    }

    pub fn uses_grid(self) -> bool {
        matches!(self, Method::Nudrnet | Method::Nusnet)
    }

    fn needs_nuisance(self) -> bool {
        matches!(self, Method::Drnet | Method::DrnetOracle | Method::Nudrnet)
    }

    fn needs_snet(self) -> bool {
        matches!(self, Method::Snet | Method::Nusnet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// fresh training pool and test sample per seed
    Synthetic {
        #[serde(default)]
        generator: SyntheticConfig,
        #[serde(default = "default_n_test")]
        n_test: usize,
    },
    /// fixed files; the test file supplies the oracle columns the metrics need
    Csv { path: PathBuf, test_path: PathBuf },
}

fn default_n_test() -> usize {
    10_000
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic {
            generator: SyntheticConfig::default(),
            n_test: default_n_test(),
        }
    }
}

impl DatasetSpec {
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Synthetic { generator, .. } => format!("synthetic_{}", generator.noise.tag()),
            DatasetSpec::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha0: f64,
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub alpha0: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            alpha0: vec![1.0, 10.0],
            gamma: vec![1.5, 2.0, 3.0],
            beta: vec![10.0, 100.0, 300.0],
        }
    }
}

impl HyperGrid {
    pub fn single(p: GridPoint) -> Self {
        HyperGrid {
            alpha0: vec![p.alpha0],
            gamma: vec![p.gamma],
            beta: vec![p.beta],
        }
    }

    /// Cartesian product, `alpha0` outermost and `beta` innermost.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &alpha0 in &self.alpha0 {
            for &gamma in &self.gamma {
                for &beta in &self.beta {
                    out.push(GridPoint { alpha0, gamma, beta });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// dataset label in result rows; derived from the dataset when empty
    pub name: String,
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    /// training pool size (train + validation) for synthetic data
    pub n: usize,
    pub seeds: Vec<u64>,
    pub grid: HyperGrid,
    pub trainer: TrainerConfig,
    /// non-grid settings of the adversarial methods
    pub robust: RobustConfig,
    pub arch: Arch,
    pub snet_arch: SNetArch,
    pub bce_weight: f64,
    pub val_ratio: f64,
    pub metrics: Vec<MetricName>,
    pub precision: Precision,
    /// emit constraint diagnostics rows for the adversarial methods
    pub diagnostics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: String::new(),
            dataset: DatasetSpec::default(),
            methods: vec![Method::Drnet, Method::Nudrnet],
            n: 10_000,
            seeds: (0..5).collect(),
            grid: HyperGrid::default(),
            trainer: TrainerConfig::default(),
            robust: RobustConfig::default(),
            arch: Arch::default(),
            snet_arch: SNetArch::default(),
            bce_weight: 1.0,
            val_ratio: 0.3,
            metrics: vec![MetricName::PeheMse, MetricName::PeheRmse],
            precision: Precision::F64,
            diagnostics: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods configured"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("no seeds configured"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.grid.points().is_empty() {
            return Err(Error::invalid("hyperparameter grid is empty"));
        }
        if !(self.val_ratio > 0.0 && self.val_ratio < 1.0) {
            return Err(Error::invalid("val_ratio must lie in (0, 1)"));
        }
        if self.metrics.is_empty() {
            return Err(Error::invalid("no metrics configured"));
        }
        self.trainer.validate()?;
        for p in self.grid.points() {
            self.robust_at(p).validate()?;
        }
        if let DatasetSpec::Synthetic { generator, n_test } = &self.dataset {
            generator.validate()?;
            if *n_test == 0 || self.n < 4 {
                return Err(Error::invalid("synthetic sizes too small"));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.name.is_empty() {
            self.dataset.label()
        } else {
            self.name.clone()
        }
    }

    pub fn robust_at(&self, p: GridPoint) -> RobustConfig {
        RobustConfig {
            alpha0: p.alpha0,
            gamma: p.gamma,
            beta: p.beta,
            ..self.robust
        }
    }
}

/// Result of one trained candidate (a method, or a method at one grid
/// point) for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub method: Method,
    pub seed: u64,
    pub point: Option<GridPoint>,
    /// the method's own validation criterion (lower is better)
    pub val_score: f64,
    pub selected: bool,
    pub metrics: Vec<MetricValue>,
    pub diagnostics: Vec<(String, f64)>,
}

impl Candidate {
    fn params_json(&self) -> String {
        match self.point {
            Some(p) => serde_json::to_string(&p).expect("grid point serializes"),
            None => "{}".into(),
        }
    }

    fn rows(&self, dataset: &str, n: usize, with_selection: bool, diagnostics: bool) -> Vec<ResultRow> {
        let params = self.params_json();
        let row = |metric: &str, value: f64| ResultRow {
            method: self.method.as_str().into(),
            dataset: dataset.into(),
            n,
            seed: self.seed,
            metric: metric.into(),
            value,
            params: params.clone(),
        };
        let mut out: Vec<ResultRow> = self.metrics.iter().map(|m| row(m.name.as_str(), m.value)).collect();
        out.push(row("val_score", self.val_score));
        if diagnostics {
            out.extend(self.diagnostics.iter().map(|(k, v)| row(k, *v)));
        }
        if with_selection {
            out.push(row("selected", if self.selected { 1.0 } else { 0.0 }));
        }
        out
    }
}

/// Index of the lowest validation score; ties keep the earliest candidate.
/// Only validation scores are visible here.
pub fn select_best(val_scores: &[f64]) -> Result<usize> {
    if val_scores.is_empty() {
        return Err(Error::invalid("nothing to select from"));
    }
    let mut best = 0;
    for (i, &s) in val_scores.iter().enumerate() {
        if s < val_scores[best] || (val_scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    Ok(best)
}

/// Observed split for the training and selection path.
struct Splits<T> {
    train: Dataset<T>,
    val: Dataset<T>,
    /// kept only for the method that plugs in the true propensity
    train_mu: Option<Vec<T>>,
    val_mu: Option<Vec<T>>,
}

fn load_data<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic { generator, n_test } => {
            let (pool, _) = sample_dataset::<T>(&generator.with_seed(seed), cfg.n)?;
            let (test, _) = sample_dataset::<T>(&generator.with_seed(derive_seed(seed, 3)), *n_test)?;
            Ok((pool, test))
        }
        DatasetSpec::Csv { path, test_path } => {
            let pool = load_csv_dataset::<T>(path, SchemaFlags::default())?;
            let test = load_csv_dataset::<T>(test_path, SchemaFlags::default())?;
            if test.d() != pool.d() {
                return Err(Error::data(format!(
                    "test covariate dimension {} differs from training {}",
                    test.d(),
                    pool.d()
                )));
            }
            Ok((pool, test))
        }
    }
}

fn evaluate<T: Scalar>(model: &CateModel<T>, test: &Dataset<T>, wanted: &[MetricName]) -> Result<Vec<MetricValue>> {
    let tau_hat = model.predict_cate(&test.x)?;
    let mut out = Vec::new();
    for &m in wanted {
        match m {
            MetricName::PeheMse | MetricName::PeheRmse => {
                let tau = test.tau.as_ref().ok_or_else(|| Error::MissingColumn("tau".into()))?;
                let (mse, rmse) = pehe(&tau_hat, tau)?;
                out.push(if m == MetricName::PeheMse { mse } else { rmse });
            }
            MetricName::MseVsNoisyTau => out.push(mse_vs_noisy_tau(&tau_hat, test)?),
            MetricName::MseVsTransformed => out.push(mse_transformed_target(&tau_hat, test, None)?),
        }
    }
    Ok(out)
}

fn robust_diagnostics(r: &RobustReport) -> Vec<(String, f64)> {
    vec![
        ("tolerance_c".into(), r.c),
        ("evidence_train".into(), r.evidence_train),
        ("mean_sq_weight".into(), r.mean_sq_weight),
        ("epochs".into(), r.fit.epochs_run as f64),
        ("diverged".into(), if r.fit.diverged { 1.0 } else { 0.0 }),
    ]
}

struct Trained<T> {
    method: Method,
    point: Option<GridPoint>,
    model: CateModel<T>,
    val_score: f64,
    diagnostics: Vec<(String, f64)>,
}

/// Trains every candidate of every configured method on the observed
/// splits. Nothing here can see test rows or oracle effect columns.
fn train_candidates<T: Scalar>(cfg: &ExperimentConfig, s: &Splits<T>, tcfg: &TrainerConfig) -> Result<Vec<Trained<T>>> {
    let nuisance: Option<NuisanceTriple<T>> = if cfg.methods.iter().any(|m| m.needs_nuisance()) {
        Some(pretrain_nuisance(&s.train, &s.val, &cfg.arch, tcfg, cfg.robust.tolerance).stage("nuisance")?)
    } else {
        None
    };
    let snet: Option<(SNet<T>, f64)> = if cfg.methods.iter().any(|m| m.needs_snet()) {
        let (net, rep) = train_snet(&s.train, &s.val, &cfg.snet_arch, tcfg, cfg.bce_weight).stage("snet")?;
        Some((net, rep.best_score))
    } else {
        None
    };
    let points = cfg.grid.points();
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let stage = method.as_str();
        match method {
            Method::Tnet => {
                let model = train_tnet(&s.train, &s.val, &cfg.arch, tcfg).stage(stage)?;
                let CateModel::TNet { f0, f1 } = &model else {
                    unreachable!()
                };
                let score = tnet_val_score(f0, f1, &s.val)?;
                out.push(Trained {
                    method,
                    point: None,
                    model,
                    val_score: score,
                    diagnostics: vec![],
                });
            }
            Method::Drnet => {
                let nu = nuisance.as_ref().expect("nuisance trained");
                let (model, rep) = train_drnet(&s.train, &s.val, nu, &cfg.arch, tcfg).stage(stage)?;
                out.push(Trained {
                    method,
                    point: None,
                    model,
                    val_score: rep.best_score,
                    diagnostics: vec![],
                });
            }
            Method::DrnetOracle => {
                let nu = nuisance.as_ref().expect("nuisance trained");
                let mut tr = s.train.clone();
                let mut va = s.val.clone();
                tr.mu = s.train_mu.clone();
                va.mu = s.val_mu.clone();
                let (model, rep) = train_drnet_oracle(&tr, &va, nu, &cfg.arch, tcfg).stage(stage)?;
                out.push(Trained {
                    method,
                    point: None,
                    model,
                    val_score: rep.best_score,
                    diagnostics: vec![],
                });
            }
            Method::Snet => {
                let (net, score) = snet.clone().expect("snet trained");
                out.push(Trained {
                    method,
                    point: None,
                    model: CateModel::SNet { net },
                    val_score: score,
                    diagnostics: vec![],
                });
            }
            Method::Nudrnet => {
                let nu = nuisance.as_ref().expect("nuisance trained");
                let runs = points
                    .par_iter()
                    .map(|&p| {
                        let (model, rep) = train_nudrnet(&s.train, &s.val, nu, &cfg.arch, tcfg, &cfg.robust_at(p))?;
                        Ok(Trained {
                            method,
                            point: Some(p),
                            model,
                            val_score: rep.fit.best_score,
                            diagnostics: robust_diagnostics(&rep),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .stage(stage)?;
                out.extend(runs);
            }
            Method::Nusnet => {
                let (pre, _) = snet.as_ref().expect("snet trained");
                let runs = points
                    .par_iter()
                    .map(|&p| {
                        let (net, rep) = tune_nusnet(pre, &s.train, &s.val, tcfg, &cfg.robust_at(p))?;
                        Ok(Trained {
                            method,
                            point: Some(p),
                            model: CateModel::SNet { net },
                            val_score: rep.fit.best_score,
                            diagnostics: robust_diagnostics(&rep),
                        })
                    })
                    .collect::<Result<Vec<_>>>()
                    .stage(stage)?;
                out.extend(runs);
            }
        }
    }
    Ok(out)
}

/// Validation factual MSE of a two-model fit.
fn tnet_val_score<T: Scalar>(f0: &crate::tensor::Mlp<T>, f1: &crate::tensor::Mlp<T>, val: &Dataset<T>) -> Result<f64> {
    let p0 = f0.predict(&val.x)?;
    let p1 = f1.predict(&val.x)?;
    let yhat = crate::estimators::snet::factual(&val.a, p1.as_slice(), p0.as_slice());
    crate::nuisance::mse(&yhat, &val.y)
}

/// Runs the full protocol for one seed and returns every candidate, with
/// the per-method selection marked. Selected models are checkpointed to
/// `models_dir` as `<method>_seed<seed>` when given.
pub fn run_seed<T: Scalar>(
    cfg: &ExperimentConfig,
    seed: u64,
    models_dir: Option<&Path>,
) -> Result<(Vec<Candidate>, usize)> {
    let (pool, test) = load_data::<T>(cfg, seed).stage("data")?;
    let (train, val) = split_train_val(
        &pool,
        SplitSpec {
            val_ratio: cfg.val_ratio,
            seed: derive_seed(seed, 1),
        },
    )
    .stage("split")?;
    let splits = Splits {
        train_mu: train.mu.clone(),
        val_mu: val.mu.clone(),
        train: train.without_oracle(),
        val: val.without_oracle(),
    };
    let tcfg = cfg.trainer.with_seed(derive_seed(seed, 2));
    let trained = train_candidates(cfg, &splits, &tcfg)?;

    let mut out = Vec::with_capacity(trained.len());
    for &method in &cfg.methods {
        let group: Vec<&Trained<T>> = trained.iter().filter(|t| t.method == method).collect();
        let scores: Vec<f64> = group.iter().map(|t| t.val_score).collect();
        let best = select_best(&scores)?;
        if let Some(dir) = models_dir {
            checkpoint::save_model(&group[best].model, dir, &format!("{}_seed{seed}", method.as_str()))
                .stage("checkpoint")?;
        }
        for (i, t) in group.iter().enumerate() {
            out.push(Candidate {
                method,
                seed,
                point: t.point,
                val_score: t.val_score,
                selected: i == best,
                metrics: evaluate(&t.model, &test, &cfg.metrics).stage("evaluate")?,
                diagnostics: t.diagnostics.clone(),
            });
        }
    }
    Ok((out, pool.n()))
}

/// Outcome of a whole experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub candidates: Vec<Candidate>,
    /// rows of the selected candidates only
    pub selected: Vec<ResultRow>,
    /// rows of every candidate with a `selected` indicator
    pub grid: Vec<ResultRow>,
}

fn run_all<T: Scalar>(cfg: &ExperimentConfig, models_dir: Option<&Path>) -> Result<ExperimentOutput> {
    let per_seed: Vec<(Vec<Candidate>, usize)> = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            run_seed::<T>(cfg, s, models_dir).map_err(|e| Error::Stage {
                stage: format!("seed {s}"),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let label = cfg.label();
    let mut out = ExperimentOutput {
        candidates: Vec::new(),
        selected: Vec::new(),
        grid: Vec::new(),
    };
    for (cands, n) in per_seed {
        for c in cands {
            if c.selected {
                out.selected.extend(c.rows(&label, n, false, cfg.diagnostics));
            }
            out.grid.extend(c.rows(&label, n, true, cfg.diagnostics));
            out.candidates.push(c);
        }
    }
    Ok(out)
}

/// Runs every seed and grid point on a pool of `jobs` worker threads.
/// Results do not depend on `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, jobs, None)
}

/// [`run_experiment`] that also checkpoints every selected model.
pub fn run_experiment_with(cfg: &ExperimentConfig, jobs: usize, models_dir: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if let Some(dir) = models_dir {
        std::fs::create_dir_all(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.precision {
        Precision::F64 => run_all::<f64>(cfg, models_dir),
        Precision::F32 => run_all::<f32>(cfg, models_dir),
    })
}

/// Grid search: the selected rows plus the full per-point table.
pub fn hyperparam_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    if cfg.grid.points().is_empty() {
        return Err(Error::invalid("hyperparameter grid is empty"));
    }
    run_experiment(cfg, jobs)
}
