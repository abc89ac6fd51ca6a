//! End-to-end stages shared by the command-line driver and the test suites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart_metrics::{self, MetricReport};
use crate::charting::{self, ChartPosition, FcfModel, TrainConfig};
use crate::dataset::{generate_scenario, Dataset, ScenarioConfig, Trajectory};
use crate::dissimilarity::{fused_geodesic, DissimilarityConfig};
use crate::error::{Error, Result};
use crate::eval::{self, ExperimentConfig, ExperimentInputs, HorizonReport, NoiseModel};
use crate::features::{angle_delay_profile, csi_feature, CsiFeature, FeatureConfig};
use crate::geometry::Triangulation;
use crate::tensor::{equally_spaced_subcarriers, CsiTensor};
use crate::wiener::{estimate_correlations, WienerBank};

/// Which of the two generated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Pred,
}

/// Every knob of a run. Scalar keys are flat so each one maps to a
/// command-line flag of the same name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Scenario of the training split.
    pub scenario: ScenarioConfig,
    /// Trajectory seed of the prediction split.
    pub pred_trajectory_seed: u64,
    /// Phase and noise seed of the prediction split.
    pub pred_seed: u64,
    pub pred_snapshots: usize,
    /// Trajectory margin of the prediction split; the training margin if unset.
    pub pred_margin: Option<f64>,

    pub taps: usize,
    pub beam_bins: usize,
    pub delay_bins: usize,

    pub knn_k: usize,
    pub t_max_intervals: f64,

    pub beta: Option<f64>,
    pub epochs: usize,
    pub batch_points: usize,
    pub learning_rate: f64,
    pub train_seed: u64,
    pub hidden: Vec<usize>,

    pub memory: usize,
    pub horizons: Vec<usize>,
    pub eval_subcarriers: usize,
    pub mu: f64,
    pub fallback_to_nn: bool,
    pub dump_samples: bool,

    /// Neighborhood size for continuity/trustworthiness; default 5% of L.
    pub metrics_k: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let features = FeatureConfig::default();
        let dis = DissimilarityConfig::default();
        let train = TrainConfig::default();
        let exp = ExperimentConfig::default();
        Self {
            scenario: ScenarioConfig::default(),
            pred_trajectory_seed: 2,
            pred_seed: 8,
            pred_snapshots: 1000,
            pred_margin: None,
            taps: features.taps,
            beam_bins: features.beam_bins,
            delay_bins: features.delay_bins,
            knn_k: dis.k,
            t_max_intervals: dis.t_max_intervals,
            beta: train.beta,
            epochs: train.epochs,
            batch_points: train.batch_points,
            learning_rate: train.learning_rate,
            train_seed: train.seed,
            hidden: train.hidden,
            memory: exp.memory,
            horizons: exp.horizons,
            eval_subcarriers: 32,
            mu: 100.0,
            fallback_to_nn: exp.fallback_to_nn,
            dump_samples: exp.dump_samples,
            metrics_k: None,
        }
    }
}

impl RunConfig {
    /// The bundled demo: 3000 training and 3000 prediction snapshots at
    /// 0.5 m/s, four delay taps, prediction trajectory kept 2 m off the walls.
    pub fn demo() -> Self {
        let mut cfg = Self::default();
        cfg.scenario.speed = 0.5;
        cfg.scenario.num_snapshots = 3000;
        cfg.pred_snapshots = 3000;
        cfg.pred_margin = Some(2.0);
        cfg.taps = 4;
        cfg
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            taps: self.taps,
            beam_bins: self.beam_bins,
            delay_bins: self.delay_bins,
        }
    }

    pub fn dissimilarity(&self) -> DissimilarityConfig {
        DissimilarityConfig {
            k: self.knn_k,
            t_max_intervals: self.t_max_intervals,
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            epochs: self.epochs,
            batch_points: self.batch_points,
            learning_rate: self.learning_rate,
            seed: self.train_seed,
            hidden: self.hidden.clone(),
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            memory: self.memory,
            horizons: self.horizons.clone(),
            fallback_to_nn: self.fallback_to_nn,
            dump_samples: self.dump_samples,
        }
    }

    /// Scenario of one split. The prediction split shares the environment
    /// but walks a different random trajectory with fresh phases and noise.
    pub fn scenario_for(&self, split: Split) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        if split == Split::Pred {
            s.seed = self.pred_seed;
            s.num_snapshots = self.pred_snapshots;
            s.trajectory = match s.trajectory {
                Trajectory::Random { margin, .. } => Trajectory::Random {
                    seed: self.pred_trajectory_seed,
                    margin: self.pred_margin.unwrap_or(margin),
                },
                Trajectory::Waypoints(w) => Trajectory::Waypoints(w.into_iter().rev().collect()),
            };
        }
        s
    }

    pub fn subcarrier_subset(&self) -> Result<Vec<usize>> {
        equally_spaced_subcarriers(self.scenario.num_subcarriers, self.eval_subcarriers)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.memory < 2 {
            return bad(format!("memory must be at least 2, got {}", self.memory));
        }
        if self.horizons.is_empty() {
            return bad("horizons must not be empty".into());
        }
        if self.taps == 0 || self.taps > self.scenario.num_subcarriers {
            return bad(format!(
                "taps must be in 1..={}, got {}",
                self.scenario.num_subcarriers, self.taps
            ));
        }
        if self
            .pred_margin
            .is_some_and(|m| !(m >= 0.0 && m.is_finite()))
        {
            return bad(format!(
                "pred_margin must be finite and nonnegative, got {:?}",
                self.pred_margin
            ));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be positive".into());
        }
        if !(self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if self.eval_subcarriers == 0 || self.eval_subcarriers > self.scenario.num_subcarriers {
            return bad(format!(
                "eval_subcarriers must be in 1..={}, got {}",
                self.scenario.num_subcarriers, self.eval_subcarriers
            ));
        }
        Ok(())
    }
}

pub fn generate(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    generate_scenario(&cfg.scenario_for(split))
}

/// Charting-function inputs of every snapshot.
pub fn features_of(data: &Dataset, taps: usize) -> Result<Vec<CsiFeature>> {
    data.snapshots()
        .par_iter()
        .map(|s| csi_feature(&s.csi, taps))
        .collect()
}

/// Chart positions of every snapshot under `model`.
pub fn infer_chart(model: &FcfModel, data: &Dataset, taps: usize) -> Result<Vec<ChartPosition>> {
    model.forward_batch(&features_of(data, taps)?)
}

#[derive(Debug, Clone)]
pub struct ChartArtifacts {
    pub model: FcfModel,
    pub beta: f64,
    /// Calibrated time-fusion scale.
    pub alpha: f64,
    pub history: Vec<f64>,
    pub train_chart: Vec<ChartPosition>,
}

/// Dissimilarities over the training set, then charting-function training.
pub fn chart(cfg: &RunConfig, train: &Dataset) -> Result<ChartArtifacts> {
    let fcfg = cfg.features();
    let adps = train
        .snapshots()
        .par_iter()
        .map(|s| angle_delay_profile(&s.csi, &fcfg))
        .collect::<Result<Vec<_>>>()?;
    let (d, alpha) = fused_geodesic(
        &adps,
        &train.times(),
        train.meta().sample_interval,
        &cfg.dissimilarity(),
    )?;
    drop(adps);
    let features = features_of(train, cfg.taps)?;
    let outcome = charting::train(&features, &d, &cfg.training())?;
    let train_chart = outcome.model.forward_batch(&features)?;
    Ok(ChartArtifacts {
        model: outcome.model,
        beta: outcome.beta,
        alpha,
        history: outcome.history,
        train_chart,
    })
}

/// Chart quality against the ground-truth positions of `data`.
pub fn metrics(cfg: &RunConfig, data: &Dataset, chart: &[ChartPosition]) -> Result<MetricReport> {
    let truth = data
        .positions()
        .ok_or_else(|| Error::InsufficientData("dataset has no ground-truth positions".into()))?;
    let k = cfg
        .metrics_k
        .unwrap_or_else(|| chart_metrics::default_k(truth.len()));
    let z: Vec<[f64; 2]> = chart.iter().map(|c| c.0).collect();
    chart_metrics::evaluate(&truth, &z, k)
}

/// Correlation estimation on the training split and filters for every
/// configured horizon.
pub fn wiener_fit(cfg: &RunConfig, train: &Dataset) -> Result<WienerBank> {
    let subset = cfg.subcarrier_subset()?;
    let csi = train.subcarrier_subset(&subset)?;
    let p_max = cfg.horizons.iter().copied().max().unwrap_or(0);
    let model = estimate_correlations(&csi, cfg.memory - 1 + p_max)?;
    WienerBank::build(&model, cfg.memory, &cfg.horizons)
}

/// Run the horizon sweep with a trained model and filter bank.
pub fn evaluate(
    cfg: &RunConfig,
    train: &Dataset,
    pred: &Dataset,
    model: &FcfModel,
    bank: &WienerBank,
) -> Result<HorizonReport> {
    let p_max = cfg.horizons.iter().copied().max().unwrap_or(0);
    if pred.len() < cfg.memory + p_max {
        return Err(Error::InsufficientData(format!(
            "prediction set has {} snapshots, K + max horizon needs {}",
            pred.len(),
            cfg.memory + p_max
        )));
    }
    if bank.order() != Some(cfg.memory) {
        return Err(Error::InvalidConfig(format!(
            "filter bank order {:?} does not match memory {}",
            bank.order(),
            cfg.memory
        )));
    }
    let train_chart = infer_chart(model, train, cfg.taps)?;
    let pred_chart = infer_chart(model, pred, cfg.taps)?;
    evaluate_with_chart(cfg, train, pred, &train_chart, &pred_chart, bank)
}

/// As [`evaluate`] with chart positions supplied directly.
pub fn evaluate_with_chart(
    cfg: &RunConfig,
    train: &Dataset,
    pred: &Dataset,
    train_chart: &[ChartPosition],
    pred_chart: &[ChartPosition],
    bank: &WienerBank,
) -> Result<HorizonReport> {
    let subset = cfg.subcarrier_subset()?;
    let train_csi: Vec<CsiTensor> = train.subcarrier_subset(&subset)?;
    let pred_csi: Vec<CsiTensor> = pred.subcarrier_subset(&subset)?;
    let noise: NoiseModel = eval::calibrate_noise(&train_csi, cfg.mu)?;
    let triangulation = Triangulation::delaunay(train_chart)?;
    let inputs = ExperimentInputs {
        train_csi: &train_csi,
        train_chart,
        triangulation: &triangulation,
        pred_csi: &pred_csi,
        pred_chart,
        wiener: bank,
        noise,
    };
    eval::run_experiment(&inputs, &cfg.experiment())
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub train: Dataset,
    pub pred: Dataset,
    pub chart: ChartArtifacts,
    pub pred_chart: Vec<ChartPosition>,
    pub train_metrics: MetricReport,
    pub pred_metrics: MetricReport,
    pub bank: WienerBank,
    pub report: HorizonReport,
}

pub fn run(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let train = generate(cfg, Split::Train)?;
    let pred = generate(cfg, Split::Pred)?;
    let chart_art = chart(cfg, &train)?;
    let pred_chart = infer_chart(&chart_art.model, &pred, cfg.taps)?;
    let train_metrics = metrics(cfg, &train, &chart_art.train_chart)?;
    let pred_metrics = metrics(cfg, &pred, &pred_chart)?;
    let bank = wiener_fit(cfg, &train)?;
    let report = evaluate_with_chart(
        cfg,
        &train,
        &pred,
        &chart_art.train_chart,
        &pred_chart,
        &bank,
    )?;
    Ok(PipelineOutput {
        train,
        pred,
        chart: chart_art,
        pred_chart,
        train_metrics,
        pred_metrics,
        bank,
        report,
    })
}
