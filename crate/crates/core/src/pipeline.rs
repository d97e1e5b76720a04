//! End-to-end orchestration: run configuration plus the gen-data, train,
//! infer, eval, pf, and report commands that the CLI wraps.
//!
//! Every command resolves its configuration, performs its work under the
//! configured output directory, and writes the resolved config next to its
//! outputs so any run is reproducible from the sidecar alone. All
//! randomness derives from the run seed via salted, per-index RNG streams;
//! worker counts never affect results.

use crate::classifier::{classifier_train_step, label_row, ClassifierConfig,
                        ClassifierModel};
use crate::datagen::{
    read_dataset, simulate_scenario, slice_datapoints, split_by_scenario, to_diffusion_sample,
    write_dataset, ContactState, DataPoint, DatagenConfig,
};
use crate::diffusion::{
    eval_loss, infer, train_step, DenoiserConfig, DenoiserModel, DiffusionSample,
    DiffusionSchedule, HistoricalState, TrainState,
};
use crate::error::{CdmError, Result};
use crate::mat::Mat;
use crate::metrics::{
    c_rmse_cm, evaluate, m_rmse_cm, EvalOptions, MetricsReport,
};
use crate::nn::{checkpoint, AdamParams, AdamState, ParamStore};
use crate::parallel::par_map;
use crate::pf::{pf_estimate, pf_init, pf_step, PfConfig};
use crate::rng::{stream_rng, Rng};
use crate::robot::{forward_kinematics, RobotModel};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

// RNG stream salts: one per pipeline stage.
const SALT_SLICE: u64 = 1;
const SALT_INIT: u64 = 2;
const SALT_TRAIN: u64 = 3;
const SALT_CLS: u64 = 4;
const SALT_EVAL: u64 = 5;
const SALT_NULL_HIST: u64 = 6;
const SALT_INFER: u64 = 7;
const SALT_PF: u64 = 8;

fn salted(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub k_max: usize,
    pub beta_1: f64,
    pub beta_k: f64,
    pub ddim_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { k_max: 1000, beta_1: 1e-6, beta_k: 1e-3, ddim_steps: 10 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.k_max, self.beta_1, self.beta_k, self.ddim_steps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub classifier_steps: usize,
    pub classifier_batch: usize,
    pub classifier_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 6000,
            batch_size: 16,
            lr: 1e-3,
            classifier_steps: 8000,
            classifier_batch: 256,
            classifier_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Cap on evaluated windows for the main report (0 = all).
    pub max_windows: usize,
    pub mu: f64,
    pub m_e: usize,
    /// Scatter plots emitted by eval.
    pub n_plots: usize,
    /// Dual-contact scenarios used for the history ablation.
    pub ablation_scenarios: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { max_windows: 2000, mu: 0.5, m_e: 8, n_plots: 6, ablation_scenarios: 120 }
    }
}

/// Model variant selector: `his` is the full model, `null` uses the same
/// checkpoint but ignores history at inference, `nosdf` is the ablation
/// trained without the pointwise FiLM path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    His,
    Null,
    NoSdf,
}

impl std::str::FromStr for Variant {
    type Err = CdmError;
    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "his" => Ok(Variant::His),
            "null" => Ok(Variant::Null),
            "nosdf" => Ok(Variant::NoSdf),
            other => Err(CdmError::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub datagen: DatagenConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub pf: PfConfig,
}

impl RunConfig {
    pub fn desk_default(preset: &str, seed: u64, out_dir: &Path) -> Result<RunConfig> {
        let robot = RobotModel::preset(preset)?;
        Ok(RunConfig {
            preset: preset.to_string(),
            seed,
            out_dir: out_dir.to_path_buf(),
            datagen: DatagenConfig::desk_default(preset, seed),
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::desk_default(robot.n_q(), robot.reach),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            pf: PfConfig::default(),
        })
    }

    pub fn from_toml_path(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&s).map_err(|e| CdmError::InvalidConfig(e.to_string()))?;
        cfg.sync();
        Ok(cfg)
    }

    /// Apply CLI overrides and keep the nested configs consistent with the
    /// top-level preset/seed.
    pub fn apply_overrides(
        &mut self,
        preset: Option<&str>,
        seed: Option<u64>,
        out: Option<&Path>,
    ) -> Result<()> {
        if let Some(p) = preset {
            self.preset = p.to_string();
            let robot = RobotModel::preset(p)?;
            let use_sdf = self.denoiser.use_sdf;
            self.denoiser = DenoiserConfig::desk_default(robot.n_q(), robot.reach);
            self.denoiser.use_sdf = use_sdf;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out_dir = o.to_path_buf();
        }
        self.sync();
        Ok(())
    }

    fn sync(&mut self) {
        self.datagen.preset = self.preset.clone();
        self.datagen.seed = self.seed;
    }

    pub fn robot(&self) -> Result<RobotModel> {
        if self.preset.ends_with(".toml") {
            RobotModel::from_path(Path::new(&self.preset))
        } else {
            RobotModel::preset(&self.preset)
        }
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out_dir.join("dataset.cdm")
    }

    pub fn denoiser_ckpt(&self, variant: Variant) -> PathBuf {
        match variant {
            Variant::NoSdf => self.out_dir.join("denoiser_nosdf.ckpt"),
            _ => self.out_dir.join("denoiser.ckpt"),
        }
    }

    pub fn train_state_ckpt(&self, variant: Variant) -> PathBuf {
        match variant {
            Variant::NoSdf => self.out_dir.join("denoiser_nosdf_state.ckpt"),
            _ => self.out_dir.join("denoiser_state.ckpt"),
        }
    }

    pub fn classifier_ckpt(&self) -> PathBuf {
        self.out_dir.join("classifier.ckpt")
    }

    fn write_resolved(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        std::fs::write(self.out_dir.join("config_resolved.toml"), self.resolved_toml())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub scenarios: usize,
    pub windows: usize,
    pub counts: BTreeMap<&'static str, usize>,
    pub dataset_path: PathBuf,
}

/// Generate scenarios, slice windows, and write the dataset plus manifest.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<GenSummary> {
    cfg.write_resolved()?;
    let robot = cfg.robot()?;
    let n = cfg.datagen.scenarios;
    let per_scenario: Vec<Result<Vec<DataPoint>>> = par_map(n, |i| {
        let id = i as u64;
        let scenario = simulate_scenario(&robot, &cfg.datagen, id)?;
        let mut rng = stream_rng(salted(cfg.seed, SALT_SLICE), id);
        slice_datapoints(&robot, &scenario, &cfg.datagen, &mut rng)
    });
    let mut points = Vec::new();
    for res in per_scenario {
        points.extend(res?);
    }
    let mut counts = BTreeMap::new();
    for state in ContactState::all() {
        counts.insert(state.as_str(), points.iter().filter(|p| p.label == state).count());
    }
    let path = cfg.dataset_path();
    write_dataset(
        &points,
        &cfg.preset,
        robot.n_q(),
        cfg.datagen.t_w(),
        cfg.denoiser.n_p,
        &path,
    )?;
    let manifest = toml::to_string_pretty(&cfg.datagen).expect("config serializes");
    std::fs::write(
        cfg.out_dir.join("dataset.manifest.toml"),
        format!(
            "{manifest}\n[counts]\nsingle = {}\ntrans_dual = {}\nsteady_dual = {}\n",
            counts["single"], counts["trans_dual"], counts["steady_dual"]
        ),
    )?;
    Ok(GenSummary { scenarios: n, windows: points.len(), counts, dataset_path: path })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub denoiser_params: usize,
    pub classifier_params: usize,
    pub steps_run: usize,
    pub final_denoiser_loss: f64,
    pub final_classifier_loss: f64,
    pub denoiser_ckpt: PathBuf,
    pub classifier_ckpt: PathBuf,
}

/// Train the denoiser (and the classifier unless training the nosdf
/// ablation variant). With `resume` the run continues bit-identically from
/// the saved optimizer state.
pub fn cmd_train(cfg: &RunConfig, variant: Variant, resume: bool) -> Result<TrainSummary> {
    cfg.write_resolved()?;
    let robot = cfg.robot()?;
    let schedule = cfg.schedule.build()?;
    let (_, points) = read_dataset(&cfg.dataset_path())?;
    let (train_points, _) = split_by_scenario(points);
    let mut denoiser_config = cfg.denoiser.clone();
    if variant == Variant::NoSdf {
        denoiser_config.use_sdf = false;
    }
    let samples: Vec<DiffusionSample> = train_points
        .into_iter()
        .map(|p| to_diffusion_sample(&p, &denoiser_config))
        .collect();
    if samples.is_empty() {
        return Err(CdmError::InvalidArgument("empty training split".into()));
    }

    // Denoiser.
    let mut init_rng = stream_rng(salted(cfg.seed, SALT_INIT), variant as u64);
    let mut model = DenoiserModel::new(denoiser_config.clone(), &mut init_rng);
    let opt = AdamParams { lr: cfg.train.lr, ..Default::default() };
    let mut state = TrainState::new(&model, opt);
    let mut start_step = 0usize;
    if resume {
        let (params, adam, t) = load_train_state(
            &cfg.denoiser_ckpt(variant),
            &cfg.train_state_ckpt(variant),
            &model.params,
        )?;
        model = DenoiserModel::from_params(denoiser_config.clone(), params)?;
        state = TrainState { adam, opt };
        start_step = t as usize;
    }
    let mut loss_log = if resume && start_step > 0 {
        std::fs::read_to_string(loss_path(cfg, variant)).unwrap_or_else(|_| "step,loss\n".into())
    } else {
        String::from("step,loss\n")
    };
    let salt_train = salted(cfg.seed, SALT_TRAIN) ^ variant as u64;
    let mut final_loss = f64::NAN;
    for step in start_step..cfg.train.steps {
        let mut rng = stream_rng(salt_train, step as u64);
        let batch = sample_batch(&samples, cfg.train.batch_size, &mut rng);
        let loss = train_step(&mut model, &mut state, &batch, &robot, &schedule, &mut rng)?;
        loss_log.push_str(&format!("{step},{loss:.6}\n"));
        final_loss = loss;
    }
    checkpoint::save(&model.params, &cfg.denoiser_ckpt(variant))?;
    save_train_state(&state.adam, &model.params, &cfg.train_state_ckpt(variant))?;
    std::fs::write(loss_path(cfg, variant), &loss_log)?;

    // Classifier (shared across variants; trained with the main model).
    let mut classifier_summary = (0usize, f64::NAN);
    if variant != Variant::NoSdf {
        let cls_config = ClassifierConfig::from_denoiser(&denoiser_config);
        let mut cls_rng = stream_rng(salted(cfg.seed, SALT_INIT), 100);
        let mut cls = ClassifierModel::new(cls_config, &mut cls_rng);
        let mut cls_state = AdamState::new(&cls.params);
        let cls_opt = AdamParams { lr: cfg.train.classifier_lr, ..Default::default() };
        let mut log = String::from("step,loss\n");
        let salt_cls = salted(cfg.seed, SALT_CLS);
        let mut last = f64::NAN;
        for step in 0..cfg.train.classifier_steps {
            let mut rng = stream_rng(salt_cls, step as u64);
            let batch = sample_batch(&samples, cfg.train.classifier_batch, &mut rng);
            let (rows, labels) = classifier_batch(&batch, denoiser_config.obs_dim());
            last = classifier_train_step(&mut cls, &rows, &labels, &mut cls_state, &cls_opt)?;
            log.push_str(&format!("{step},{last:.6}\n"));
        }
        checkpoint::save(&cls.params, &cfg.classifier_ckpt())?;
        std::fs::write(cfg.out_dir.join("loss_classifier.csv"), &log)?;
        classifier_summary = (cls.param_count(), last);
    }

    Ok(TrainSummary {
        denoiser_params: model.param_count(),
        classifier_params: classifier_summary.0,
        steps_run: cfg.train.steps,
        final_denoiser_loss: final_loss,
        final_classifier_loss: classifier_summary.1,
        denoiser_ckpt: cfg.denoiser_ckpt(variant),
        classifier_ckpt: cfg.classifier_ckpt(),
    })
}

fn loss_path(cfg: &RunConfig, variant: Variant) -> PathBuf {
    match variant {
        Variant::NoSdf => cfg.out_dir.join("loss_denoiser_nosdf.csv"),
        _ => cfg.out_dir.join("loss_denoiser.csv"),
    }
}

fn sample_batch<'a>(
    samples: &'a [DiffusionSample],
    batch_size: usize,
    rng: &mut Rng,
) -> Vec<&'a DiffusionSample> {
    use rand::RngExt;
    (0..batch_size).map(|_| &samples[rng.random_range(0..samples.len())]).collect()
}

fn classifier_batch(batch: &[&DiffusionSample], obs_dim: usize) -> (Mat, Mat) {
    let mut rows = Mat::zeros(batch.len(), obs_dim);
    let mut labels = Mat::zeros(batch.len(), 2);
    for (i, s) in batch.iter().enumerate() {
        rows.row_mut(i).copy_from_slice(&s.obs_encoded);
        labels.row_mut(i).copy_from_slice(&label_row(s.label_dual));
    }
    (rows, labels)
}

fn save_train_state(adam: &AdamState, params: &ParamStore, path: &Path) -> Result<()> {
    let (m, v, t) = adam.parts();
    let mut store = ParamStore::new();
    store.add("step", Mat::scalar(t as f64))?;
    for (i, (name, _)) in params.iter().enumerate() {
        store.add(&format!("m.{name}"), m[i].clone())?;
        store.add(&format!("v.{name}"), v[i].clone())?;
    }
    checkpoint::save(&store, path)
}

fn load_train_state(
    params_path: &Path,
    state_path: &Path,
    reference: &ParamStore,
) -> Result<(ParamStore, AdamState, u64)> {
    let params = checkpoint::load(params_path)?;
    let store = checkpoint::load(state_path)?;
    let t = store
        .get("step")
        .ok_or_else(|| CdmError::CheckpointFormat("missing step counter".into()))?
        .at(0, 0) as u64;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, _) in reference.iter() {
        let mm = store
            .get(&format!("m.{name}"))
            .ok_or_else(|| CdmError::CheckpointFormat(format!("missing moment m.{name}")))?;
        let vv = store
            .get(&format!("v.{name}"))
            .ok_or_else(|| CdmError::CheckpointFormat(format!("missing moment v.{name}")))?;
        m.push(mm.clone());
        v.push(vv.clone());
    }
    Ok((params, AdamState::from_parts(m, v, t), t))
}

/// Load the trained models for evaluation/inference.
pub fn load_models(cfg: &RunConfig, variant: Variant) -> Result<(DenoiserModel, ClassifierModel)> {
    let mut denoiser_config = cfg.denoiser.clone();
    if variant == Variant::NoSdf {
        denoiser_config.use_sdf = false;
    }
    let params = checkpoint::load(&cfg.denoiser_ckpt(variant))?;
    let denoiser = DenoiserModel::from_params(denoiser_config.clone(), params)?;
    let cls_params = checkpoint::load(&cfg.classifier_ckpt())?;
    let classifier =
        ClassifierModel::from_params(ClassifierConfig::from_denoiser(&cfg.denoiser), cls_params)?;
    Ok((denoiser, classifier))
}

#[derive(Debug, Clone)]
pub struct InferSummary {
    pub windows: usize,
    pub mean_inference_ms: f64,
    pub dump_path: PathBuf,
}

/// Sequential-window inference over eval scenarios with history threading.
/// Dumps per-window decisions and sample point sets.
pub fn cmd_infer(cfg: &RunConfig, variant: Variant, max_scenarios: usize) -> Result<InferSummary> {
    cfg.write_resolved()?;
    let robot = cfg.robot()?;
    let schedule = cfg.schedule.build()?;
    let (denoiser, classifier) = load_models(cfg, variant)?;
    let (_, points) = read_dataset(&cfg.dataset_path())?;
    let (_, eval_points) = split_by_scenario(points);
    let scenarios = group_by_scenario(eval_points, max_scenarios);

    let mut dump = String::from("scenario_id,t_ms,label,p_single,p_dual,history_updated,inference_ms\n");
    let mut samples_dump = String::from("scenario_id,t_ms,point,x,y,z\n");
    let mut total_ms = 0.0;
    let mut windows = 0usize;
    for (sid, group) in &scenarios {
        let mut rng = stream_rng(salted(cfg.seed, SALT_INFER), *sid);
        let mut state = HistoricalState::null_conditioned(denoiser.config.n_p, &mut rng);
        let force_null = variant == Variant::Null;
        for point in group {
            if force_null {
                // The null variant gets a fresh noise history every window.
                state = HistoricalState::null_conditioned(denoiser.config.n_p, &mut rng);
            }
            let out =
                infer(&denoiser, &classifier, &point.obs, &state, &robot, &schedule, &mut rng)?;
            total_ms += out.elapsed.as_secs_f64() * 1e3;
            windows += 1;
            dump.push_str(&format!(
                "{},{},{},{:.6},{:.6},{},{:.3}\n",
                sid,
                point.t_ms,
                point.label.as_str(),
                out.p_single,
                out.p_dual,
                out.state.updated,
                out.elapsed.as_secs_f64() * 1e3
            ));
            for i in 0..out.samples.n_p() {
                let p = out.samples.point(i);
                samples_dump.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{:.6}\n",
                    sid, point.t_ms, i, p.x, p.y, p.z
                ));
            }
            if !force_null {
                state = out.state;
            }
        }
    }
    let dump_path = cfg.out_dir.join("infer_dump.csv");
    std::fs::write(&dump_path, &dump)?;
    std::fs::write(cfg.out_dir.join("infer_samples.csv"), &samples_dump)?;
    let mean = total_ms / windows.max(1) as f64;
    std::fs::write(
        cfg.out_dir.join("infer_timing.txt"),
        format!("windows: {windows}\nmean_inference_ms: {mean:.3}\n"),
    )?;
    Ok(InferSummary { windows, mean_inference_ms: mean, dump_path })
}

fn group_by_scenario(points: Vec<DataPoint>, max_scenarios: usize) -> BTreeMap<u64, Vec<DataPoint>> {
    let mut map: BTreeMap<u64, Vec<DataPoint>> = BTreeMap::new();
    for p in points {
        map.entry(p.scenario_id).or_default().push(p);
    }
    let keep: Vec<u64> = map
        .keys()
        .copied()
        .take(if max_scenarios == 0 { usize::MAX } else { max_scenarios })
        .collect();
    let mut out = BTreeMap::new();
    for k in keep {
        let mut group = map.remove(&k).unwrap();
        group.sort_by_key(|p| p.t_ms);
        out.insert(k, group);
    }
    out
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricsReport,
    pub report_path: PathBuf,
    pub history_ablation: Option<HistoryAblation>,
    pub sdf_ablation: Option<SdfAblation>,
}

#[derive(Debug, Clone)]
pub struct HistoryAblation {
    pub windows: usize,
    pub m_rmse_his_cm: f64,
    pub m_rmse_null_cm: f64,
    pub c_rmse_his_cm: [f64; 2],
    pub c_rmse_null_cm: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SdfAblation {
    pub windows: usize,
    pub surface_dist_with_cm: f64,
    pub surface_dist_without_cm: f64,
}

/// Main evaluation: per-state metrics CSV, scatter plots, and the history
/// and SDF ablations (the latter when a nosdf checkpoint exists).
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.write_resolved()?;
    let robot = cfg.robot()?;
    let schedule = cfg.schedule.build()?;
    let (denoiser, classifier) = load_models(cfg, Variant::His)?;
    let (_, points) = read_dataset(&cfg.dataset_path())?;
    let (_, eval_points) = split_by_scenario(points);
    if eval_points.is_empty() {
        return Err(CdmError::InvalidArgument("empty evaluation split".into()));
    }

    let options = EvalOptions {
        mu: cfg.eval.mu,
        m_e: cfg.eval.m_e,
        seed: salted(cfg.seed, SALT_EVAL),
        max_windows: cfg.eval.max_windows,
    };
    let (report, window_evals) =
        evaluate(&eval_points, &denoiser, &classifier, &robot, &schedule, &options)?;
    let report_path = cfg.out_dir.join("report.csv");
    std::fs::write(&report_path, report.to_csv())?;
    std::fs::write(
        cfg.out_dir.join("timing.txt"),
        format!("mean_inference_ms: {:.3}\nwindows: {}\n", report.mean_inference_ms,
                window_evals.len()),
    )?;

    // Scatter plots for the first few windows.
    let plot_dir = cfg.out_dir.join("plots");
    std::fs::create_dir_all(&plot_dir)?;
    for (i, ev) in window_evals.iter().take(cfg.eval.n_plots).enumerate() {
        let svg = crate::svg::scatter_svg(
            &ev.samples,
            &ev.truths,
            crate::svg::Plane::Xy,
            robot.reach * 1.2,
            &format!("window {i} ({})", ev.label.as_str()),
        );
        std::fs::write(plot_dir.join(format!("window_{i}.svg")), svg)?;
    }

    let history_ablation =
        history_ablation(cfg, &robot, &schedule, &denoiser, &classifier, &eval_points)?;
    let mut csv = String::from("arm,windows,m_rmse_cm,c_rmse_1_cm,c_rmse_2_cm\n");
    if let Some(h) = &history_ablation {
        csv.push_str(&format!(
            "his,{},{:.6},{:.6},{:.6}\n",
            h.windows, h.m_rmse_his_cm, h.c_rmse_his_cm[0], h.c_rmse_his_cm[1]
        ));
        csv.push_str(&format!(
            "null,{},{:.6},{:.6},{:.6}\n",
            h.windows, h.m_rmse_null_cm, h.c_rmse_null_cm[0], h.c_rmse_null_cm[1]
        ));
        std::fs::write(cfg.out_dir.join("ablation_history.csv"), &csv)?;
    }

    let sdf_ablation = if cfg.denoiser_ckpt(Variant::NoSdf).exists() {
        let (nosdf, _) = load_models(cfg, Variant::NoSdf)?;
        let subset = cfg.eval.max_windows.min(500).max(1);
        let opts = EvalOptions { max_windows: subset, ..options };
        let (with_report, _) =
            evaluate(&eval_points, &denoiser, &classifier, &robot, &schedule, &opts)?;
        let (without_report, _) =
            evaluate(&eval_points, &nosdf, &classifier, &robot, &schedule, &opts)?;
        let mean_of = |r: &MetricsReport| {
            let total: f64 = r.rows.iter().map(|row| row.surface_dist_cm * row.n as f64).sum();
            let n: usize = r.rows.iter().map(|row| row.n).sum();
            total / n as f64
        };
        let ab = SdfAblation {
            windows: subset,
            surface_dist_with_cm: mean_of(&with_report),
            surface_dist_without_cm: mean_of(&without_report),
        };
        std::fs::write(
            cfg.out_dir.join("ablation_sdf.csv"),
            format!(
                "arm,windows,surface_dist_cm\nwith_sdf,{},{:.6}\nwithout_sdf,{},{:.6}\n",
                ab.windows, ab.surface_dist_with_cm, ab.windows, ab.surface_dist_without_cm
            ),
        )?;
        Some(ab)
    } else {
        None
    };

    Ok(EvalSummary { report, report_path, history_ablation, sdf_ablation })
}

/// History-conditioning ablation over sequential dual-contact scenarios:
/// the `his` arm threads the classifier-gated history through each
/// scenario; the `null` arm evaluates the same windows with fresh null
/// conditioning. Both arms share per-window RNG streams, so the initial
/// noise is identical.
fn history_ablation(
    cfg: &RunConfig,
    robot: &RobotModel,
    schedule: &DiffusionSchedule,
    denoiser: &DenoiserModel,
    classifier: &ClassifierModel,
    eval_points: &[DataPoint],
) -> Result<Option<HistoryAblation>> {
    let scenarios = group_by_scenario(eval_points.to_vec(), cfg.eval.ablation_scenarios);
    let jobs: Vec<(u64, Vec<DataPoint>)> = scenarios.into_iter().collect();
    if jobs.is_empty() {
        return Ok(None);
    }
    struct ArmEval {
        m_his: Vec<f64>,
        m_null: Vec<f64>,
        c_his: Vec<[f64; 2]>,
        c_null: Vec<[f64; 2]>,
    }
    let per_scenario: Vec<Result<ArmEval>> = par_map(jobs.len(), |j| {
        let (sid, group) = &jobs[j];
        let mut out =
            ArmEval { m_his: vec![], m_null: vec![], c_his: vec![], c_null: vec![] };
        let mut state_rng = stream_rng(salted(cfg.seed, SALT_INFER), *sid);
        let mut state = HistoricalState::null_conditioned(denoiser.config.n_p, &mut state_rng);
        for (w, point) in group.iter().enumerate() {
            let stream = sid.wrapping_mul(1000).wrapping_add(w as u64);
            // Shared init noise across arms.
            let mut rng_his = stream_rng(salted(cfg.seed, SALT_EVAL), stream);
            let his = infer(denoiser, classifier, &point.obs, &state, robot, schedule,
                            &mut rng_his)?;
            let mut null_rng = stream_rng(salted(cfg.seed, SALT_NULL_HIST), stream);
            let null_state =
                HistoricalState::null_conditioned(denoiser.config.n_p, &mut null_rng);
            let mut rng_null = stream_rng(salted(cfg.seed, SALT_EVAL), stream);
            let null = infer(denoiser, classifier, &point.obs, &null_state, robot, schedule,
                             &mut rng_null)?;
            if point.label.is_dual() {
                out.m_his.push(m_rmse_cm(&his.samples, &point.contacts_world)?);
                out.m_null.push(m_rmse_cm(&null.samples, &point.contacts_world)?);
                let ch = c_rmse_cm(&his.samples, &point.contacts_world, stream)?;
                let cn = c_rmse_cm(&null.samples, &point.contacts_world, stream)?;
                out.c_his.push([ch[0], ch[1]]);
                out.c_null.push([cn[0], cn[1]]);
            }
            state = his.state;
        }
        Ok(out)
    });
    let mut m_his = Vec::new();
    let mut m_null = Vec::new();
    let mut c_his: Vec<[f64; 2]> = Vec::new();
    let mut c_null: Vec<[f64; 2]> = Vec::new();
    for r in per_scenario {
        let r = r?;
        m_his.extend(r.m_his);
        m_null.extend(r.m_null);
        c_his.extend(r.c_his);
        c_null.extend(r.c_null);
    }
    if m_his.is_empty() {
        return Ok(None);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean2 = |v: &[[f64; 2]], i: usize| {
        v.iter().map(|x| x[i]).sum::<f64>() / v.len() as f64
    };
    Ok(Some(HistoryAblation {
        windows: m_his.len(),
        m_rmse_his_cm: mean(&m_his),
        m_rmse_null_cm: mean(&m_null),
        c_rmse_his_cm: [mean2(&c_his, 0), mean2(&c_his, 1)],
        c_rmse_null_cm: [mean2(&c_null, 0), mean2(&c_null, 1)],
    }))
}

#[derive(Debug, Clone)]
pub struct PfSummary {
    pub trials: usize,
    pub within_2cm: usize,
    pub mean_error_cm: f64,
    pub report_path: PathBuf,
}

/// Particle-filter baseline on the single-contact phase of eval scenarios.
pub fn cmd_pf(cfg: &RunConfig, trials: usize) -> Result<PfSummary> {
    cfg.write_resolved()?;
    let robot = cfg.robot()?;
    // Eval scenarios are ids ending in 9; regenerate their streams.
    let ids: Vec<u64> = (0..cfg.datagen.scenarios as u64)
        .filter(|id| id % 10 == 9)
        .take(trials)
        .collect();
    if ids.is_empty() {
        return Err(CdmError::InvalidArgument("no eval scenarios for the PF baseline".into()));
    }
    let results: Vec<Result<(u64, f64)>> = par_map(ids.len(), |i| {
        let id = ids[i];
        let scenario = simulate_scenario(&robot, &cfg.datagen, id)?;
        let poses = forward_kinematics(&robot, &scenario.q)?;
        let mut rng = stream_rng(salted(cfg.seed, SALT_PF), id);
        let mut set = pf_init(&robot, &poses, cfg.pf.n_particles, &mut rng)?;
        // One step per millisecond over the single-contact phase, after the
        // observer has mostly converged.
        let t0 = cfg.datagen.window_ms as usize;
        for step in 0..25 {
            let w = &scenario.observed[t0 + step];
            set = pf_step(&set, w, &robot, &poses, &cfg.pf, &mut rng)?;
        }
        let est = pf_estimate(&set, &robot, &poses);
        let err_cm = (est - scenario.contacts[0].r).norm() * 100.0;
        Ok((id, err_cm))
    });
    let mut rows = String::from("scenario_id,error_cm,within_2cm\n");
    let mut errors = Vec::new();
    for r in results {
        let (id, err) = r?;
        rows.push_str(&format!("{},{:.6},{}\n", id, err, err <= 2.0));
        errors.push(err);
    }
    let within = errors.iter().filter(|e| **e <= 2.0).count();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    rows.push_str(&format!(
        "aggregate,{:.6},{}\n",
        mean,
        format_args!("{}/{}", within, errors.len())
    ));
    let path = cfg.out_dir.join("pf_report.csv");
    std::fs::write(&path, &rows)?;
    Ok(PfSummary { trials: errors.len(), within_2cm: within, mean_error_cm: mean, report_path: path })
}

/// Collate the run artifacts into a readable summary.
pub fn cmd_report(cfg: &RunConfig) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("# Run report: {}\n\n", cfg.out_dir.display()));
    for (title, file) in [
        ("Per-state metrics", "report.csv"),
        ("History ablation", "ablation_history.csv"),
        ("SDF ablation", "ablation_sdf.csv"),
        ("PF baseline", "pf_report.csv"),
        ("Timing", "timing.txt"),
        ("Inference timing", "infer_timing.txt"),
    ] {
        let path = cfg.out_dir.join(file);
        if let Ok(content) = std::fs::read_to_string(&path) {
            out.push_str(&format!("## {title}\n\n```\n{content}```\n\n"));
        }
    }
    std::fs::write(cfg.out_dir.join("report.md"), &out)?;
    Ok(out)
}

/// Full pipeline convenience used by tests: gen -> train -> eval.
pub fn run_full_pipeline(cfg: &RunConfig, with_nosdf: bool) -> Result<EvalSummary> {
    cmd_gen_data(cfg)?;
    cmd_train(cfg, Variant::His, false)?;
    if with_nosdf {
        cmd_train(cfg, Variant::NoSdf, false)?;
    }
    cmd_eval(cfg)
}

/// Whole-dataset denoiser loss, used by overfit smoke tests.
pub fn dataset_loss(
    cfg: &RunConfig,
    model: &DenoiserModel,
    samples: &[DiffusionSample],
) -> Result<f64> {
    let robot = cfg.robot()?;
    let schedule = cfg.schedule.build()?;
    let refs: Vec<&DiffusionSample> = samples.iter().collect();
    let mut rng = stream_rng(salted(cfg.seed, SALT_EVAL), 9999);
    eval_loss(model, &refs, &robot, &schedule, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::desk_default("planar3", 42, dir).unwrap();
        cfg.datagen.scenarios = 30;
        cfg.denoiser.n_p = 16;
        cfg.denoiser.width_outer = 16;
        cfg.denoiser.width_inner = 24;
        cfg.denoiser.global_width = 32;
        cfg.denoiser.hist_embed = 8;
        cfg.train.steps = 12;
        cfg.train.batch_size = 4;
        cfg.train.classifier_steps = 12;
        cfg.train.classifier_batch = 16;
        cfg.eval.max_windows = 12;
        cfg.eval.ablation_scenarios = 2;
        cfg.eval.n_plots = 2;
        cfg.pf.n_particles = 60;
        cfg
    }

    fn temp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("cdm_pipeline_test").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let dir = temp_dir("config");
        let cfg = tiny_config(&dir);
        let s = cfg.resolved_toml();
        let path = dir.join("cfg.toml");
        std::fs::write(&path, &s).unwrap();
        let loaded = RunConfig::from_toml_path(&path).unwrap();
        assert_eq!(loaded.resolved_toml(), s);
    }

    #[test]
    fn gen_data_counts_are_consistent_and_deterministic() {
        let dir = temp_dir("gen");
        let cfg = tiny_config(&dir);
        let a = cmd_gen_data(&cfg).unwrap();
        assert_eq!(a.counts.values().sum::<usize>(), a.windows);
        assert!(a.counts["single"] > 0);
        let hash_a = file_hash(&cfg.dataset_path());
        let b = cmd_gen_data(&cfg).unwrap();
        assert_eq!(a.windows, b.windows);
        assert_eq!(hash_a, file_hash(&cfg.dataset_path()));
        assert!(cfg.out_dir.join("config_resolved.toml").exists());
        assert!(cfg.out_dir.join("dataset.manifest.toml").exists());
    }

    fn file_hash(path: &Path) -> u64 {
        // FNV-1a.
        let bytes = std::fs::read(path).unwrap();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    #[test]
    fn train_resume_is_bit_identical() {
        let dir_straight = temp_dir("train_straight");
        let mut cfg_s = tiny_config(&dir_straight);
        cmd_gen_data(&cfg_s).unwrap();
        cfg_s.train.steps = 8;
        cmd_train(&cfg_s, Variant::His, false).unwrap();
        let straight = std::fs::read(cfg_s.denoiser_ckpt(Variant::His)).unwrap();

        let dir_resume = temp_dir("train_resume");
        let mut cfg_r = tiny_config(&dir_resume);
        cmd_gen_data(&cfg_r).unwrap();
        cfg_r.train.steps = 5;
        cmd_train(&cfg_r, Variant::His, false).unwrap();
        cfg_r.train.steps = 8;
        cmd_train(&cfg_r, Variant::His, true).unwrap();
        let resumed = std::fs::read(cfg_r.denoiser_ckpt(Variant::His)).unwrap();
        assert_eq!(straight, resumed, "resumed training must match straight-through");
    }

    #[test]
    fn full_tiny_pipeline_runs_and_is_deterministic() {
        let run = |name: &str| -> (String, String) {
            let dir = temp_dir(name);
            let cfg = tiny_config(&dir);
            let summary = run_full_pipeline(&cfg, false).unwrap();
            assert_eq!(summary.report.rows.len(), 3, "three contact states");
            let report = std::fs::read_to_string(cfg.out_dir.join("report.csv")).unwrap();
            let ablation =
                std::fs::read_to_string(cfg.out_dir.join("ablation_history.csv")).unwrap();
            (report, ablation)
        };
        let (r1, a1) = run("full_a");
        let (r2, a2) = run("full_b");
        assert_eq!(r1, r2, "metric CSV must be bit-identical across runs");
        assert_eq!(a1, a2);
        assert!(r1.lines().count() == 4);
    }

    #[test]
    fn eval_emits_plots_and_timing() {
        let dir = temp_dir("eval_artifacts");
        let cfg = tiny_config(&dir);
        run_full_pipeline(&cfg, false).unwrap();
        assert!(cfg.out_dir.join("timing.txt").exists());
        let svg = std::fs::read_to_string(cfg.out_dir.join("plots/window_0.svg")).unwrap();
        assert!(crate::svg::is_well_formed_xml(&svg));
    }

    #[test]
    fn pf_command_reports_errors() {
        let dir = temp_dir("pf");
        let mut cfg = tiny_config(&dir);
        cfg.datagen.scenarios = 40;
        let summary = cmd_pf(&cfg, 3).unwrap();
        assert_eq!(summary.trials, 3);
        assert!(summary.mean_error_cm >= 0.0);
        let report = std::fs::read_to_string(summary.report_path).unwrap();
        assert!(report.lines().count() == 5); // header + 3 trials + aggregate
    }

    #[test]
    fn infer_dumps_windows_and_decisions() {
        let dir = temp_dir("infer");
        let cfg = tiny_config(&dir);
        cmd_gen_data(&cfg).unwrap();
        cmd_train(&cfg, Variant::His, false).unwrap();
        let summary = cmd_infer(&cfg, Variant::His, 2).unwrap();
        assert!(summary.windows > 0);
        let dump = std::fs::read_to_string(summary.dump_path).unwrap();
        assert!(dump.lines().count() == summary.windows + 1);
        let samples = std::fs::read_to_string(cfg.out_dir.join("infer_samples.csv")).unwrap();
        assert_eq!(
            samples.lines().count(),
            summary.windows * cfg.denoiser.n_p + 1,
            "n_p points per window"
        );
    }
}
