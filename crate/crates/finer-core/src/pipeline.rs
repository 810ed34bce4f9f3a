//! Experiment pipeline: the seven CLI commands as library functions.
//! Every artifact embeds the resolved config hash and the seed plan, and
//! every computation derives its randomness from named sub-seeds, so a
//! whole pipeline run is reproducible byte for byte.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{line_chart, Series};
use crate::config::ExperimentConfig;
use crate::ensemble::{explain_ensemble, DomainExplanation, EnsembleEnv, Scenario, Weighting};
use crate::error::{Error, Result};
use crate::explain::{
    deeplift_explain, feature_level_lime_queries, feature_level_shapley_guard, gradients_explain,
    ic_aggregate, ig_explain, lime_explain, shapley_explain, Attribution, CountingProbe,
    ExplainerId, MaskContext, ProbModel, ShapleyBudget,
};
use crate::finetune::{finetune, TrainItem};
use crate::ic::{select_roi, BaselineSet, Roi, RoiMode};
use crate::metrics::{intersection_size, localization_auc, mpd_k};
use crate::net::{accuracy, fit, load_checkpoint, save_checkpoint, LabeledSet, Model};
use crate::report::{csv_to_markdown, num, write_csv, write_text};
use crate::seeds::SeedPlan;
use crate::task::{generate_dataset, read_samples, write_samples, TaskSpec, Vectorizer};

/// Output directory layout.
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: &Path) -> Paths {
        Paths { root: root.to_path_buf() }
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".finer.lock")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("dataset").join("manifest.json")
    }

    pub fn samples(&self, split: &str) -> PathBuf {
        self.root.join("dataset").join(format!("{split}.jsonl"))
    }

    pub fn model(&self, tag: ModelTag) -> PathBuf {
        self.root.join("models").join(format!("{tag}.json"))
    }

    pub fn model_meta(&self, tag: ModelTag) -> PathBuf {
        self.root.join("models").join(format!("{tag}.meta.json"))
    }

    pub fn finetune_log(&self) -> PathBuf {
        self.root.join("models").join("finetune_log.csv")
    }

    pub fn records(&self, tag: ModelTag, scenario: Scenario, k: usize) -> PathBuf {
        self.root
            .join("explanations")
            .join(tag.to_string())
            .join(format!("{scenario}-k{k}.jsonl"))
    }

    pub fn eval_dir(&self, tag: ModelTag) -> PathBuf {
        self.root.join("eval").join(tag.to_string())
    }

    pub fn ablation(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(format!("{name}.csv"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

/// Guards an output directory against concurrent commands.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(paths: &Paths) -> Result<DirLock> {
        std::fs::create_dir_all(&paths.root)?;
        let path = paths.lock();
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::runtime(
                format!(
                    "output directory is locked by another command (remove {} if stale)",
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Baseline,
    Finetuned,
}

impl ModelTag {
    pub fn parse(s: &str) -> Result<ModelTag> {
        match s {
            "baseline" => Ok(ModelTag::Baseline),
            "finetuned" => Ok(ModelTag::Finetuned),
            other => Err(Error::config(format!(
                "unknown model tag '{other}' (expected baseline or finetuned)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelTag::Baseline => "baseline",
            ModelTag::Finetuned => "finetuned",
        })
    }
}

/// Sidecar describing how the dataset was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: SeedPlan,
    pub task: TaskSpec,
}

/// Sidecar for saved models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config_hash: String,
    pub seeds: SeedPlan,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Dataset plus everything derived from it that commands share.
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub seeds: SeedPlan,
    pub hash: String,
    pub vectorizer: Vectorizer,
    pub train: Vec<TrainItem>,
    pub test: Vec<TrainItem>,
    pub global_pool: BaselineSet,
    pub settings: crate::explain::ExplainSettings,
}

impl Workspace {
    pub fn load(cfg: &ExperimentConfig) -> Result<Workspace> {
        let paths = Paths::new(&cfg.out_dir);
        let manifest_bytes = std::fs::read(paths.manifest()).map_err(|_| {
            Error::data(format!(
                "missing dataset manifest {} (run gen-data first)",
                paths.manifest().display()
            ))
        })?;
        let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|e| Error::data(format!("bad manifest: {e}")))?;
        let seeds = cfg.seeds();
        if manifest.task != cfg.task || manifest.seeds != seeds {
            return Err(Error::data(
                "dataset manifest does not match the current config/seed; re-run gen-data",
            ));
        }
        let vectorizer = Vectorizer::new(&cfg.task, seeds.embedding);
        let train_samples = read_samples(&paths.samples("train"))?;
        let test_samples = read_samples(&paths.samples("test"))?;
        let benign: Vec<_> = train_samples.iter().filter(|s| s.label == 0).cloned().collect();
        let global_pool = BaselineSet::new(benign, seeds.mask)?;
        let prepare = |samples: Vec<crate::task::ProblemSample>| -> Vec<TrainItem> {
            samples
                .into_iter()
                .map(|s| TrainItem::prepare(s, &vectorizer))
                .collect()
        };
        let train = prepare(train_samples);
        let test = prepare(test_samples);
        Ok(Workspace {
            cfg: cfg.clone(),
            seeds,
            hash: cfg.hash(),
            vectorizer,
            train,
            test,
            global_pool,
            settings: cfg.explain_settings(),
        })
    }

    pub fn load_model(&self, tag: ModelTag) -> Result<Model> {
        let paths = Paths::new(&self.cfg.out_dir);
        let bytes = std::fs::read(paths.model(tag)).map_err(|_| {
            Error::data(format!(
                "missing model {} (run {} first)",
                paths.model(tag).display(),
                match tag {
                    ModelTag::Baseline => "train",
                    ModelTag::Finetuned => "finetune",
                }
            ))
        })?;
        load_checkpoint(&bytes)
    }

    fn labeled(items: &[TrainItem]) -> LabeledSet {
        LabeledSet {
            inputs: items.iter().map(|i| i.x_v.matrix.clone()).collect(),
            labels: items.iter().map(|i| i.sample.label).collect(),
        }
    }

    pub fn ensemble_env<'a>(&'a self, model: &'a Model) -> EnsembleEnv<'a> {
        EnsembleEnv {
            model,
            baselines: &self.global_pool,
            vectorizer: &self.vectorizer,
            settings: &self.settings,
            mask_seed: self.seeds.mask,
            weight_mask_seed: self.seeds.weight_mask,
            eval_mask_seed: self.seeds.eval_mask,
            explain_seed: self.seeds.explain,
        }
    }
}

pub fn run_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let paths = Paths::new(&cfg.out_dir);
    let seeds = cfg.seeds();
    let data = generate_dataset(&cfg.task, seeds.data)?;
    std::fs::create_dir_all(paths.root.join("dataset"))?;
    write_samples(&paths.samples("train"), &data.train)?;
    write_samples(&paths.samples("test"), &data.test)?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seeds,
        task: cfg.task.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialization");
    bytes.push(b'\n');
    std::fs::write(paths.manifest(), bytes)?;
    log::info!(
        "generated {} train / {} test samples",
        data.train.len(),
        data.test.len()
    );
    Ok(())
}

fn save_model(
    paths: &Paths,
    tag: ModelTag,
    model: &Model,
    ws: &Workspace,
) -> Result<(f64, f64)> {
    std::fs::create_dir_all(paths.root.join("models"))?;
    std::fs::write(paths.model(tag), save_checkpoint(model))?;
    let train_accuracy = accuracy(model, &Workspace::labeled(&ws.train))?;
    let test_accuracy = accuracy(model, &Workspace::labeled(&ws.test))?;
    let meta = ModelMeta {
        config_hash: ws.hash.clone(),
        seeds: ws.seeds,
        train_accuracy,
        test_accuracy,
    };
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serialization");
    bytes.push(b'\n');
    std::fs::write(paths.model_meta(tag), bytes)?;
    Ok((train_accuracy, test_accuracy))
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::load(cfg)?;
    let paths = Paths::new(&cfg.out_dir);
    let model = Model::seeded(
        cfg.task.max_rows,
        cfg.task.embedding_dim,
        cfg.model_layers(),
        ws.seeds.model,
    )?;
    let trained = fit(&model, &Workspace::labeled(&ws.train), &cfg.train_config(), &[])?;
    let (train_acc, test_acc) = save_model(&paths, ModelTag::Baseline, &trained, &ws)?;
    log::info!("baseline model: train acc {train_acc:.4}, test acc {test_acc:.4}");
    Ok(())
}

/// Deterministic monitor split: every fifth training item is held out of
/// the update steps and used for the per-epoch validation diagnostics.
fn finetune_split(items: &[TrainItem]) -> (Vec<TrainItem>, Vec<TrainItem>) {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if i % 5 == 4 {
            validation.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, validation)
}

pub fn run_finetune(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::load(cfg)?;
    let paths = Paths::new(&cfg.out_dir);
    let baseline = ws.load_model(ModelTag::Baseline)?;
    let (train_items, val_items) = finetune_split(&ws.train);
    let settings = cfg.explain_settings();
    let ft_cfg = cfg.finetune_config()?;
    let (tuned, rows) = finetune(
        &baseline,
        &train_items,
        &val_items,
        &ws.global_pool,
        &ws.vectorizer,
        &settings,
        &ft_cfg,
    )?;
    let (train_acc, test_acc) = save_model(&paths, ModelTag::Finetuned, &tuned, &ws)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                num(r.l0),
                num(r.l1),
                num(r.l2),
                num(r.l3),
                num(r.train_acc),
                num(r.val_acc),
                num(r.val_amp),
                ws.hash.clone(),
                ws.seeds.master.to_string(),
            ]
        })
        .collect();
    write_csv(
        &paths.finetune_log(),
        &[
            "epoch", "l0", "l1", "l2", "l3", "train_acc", "val_acc", "val_amp", "config_hash",
            "master_seed",
        ],
        &csv_rows,
    )?;
    log::info!(
        "finetuned model after {} epochs: train acc {train_acc:.4}, test acc {test_acc:.4}",
        rows.len()
    );
    Ok(())
}

/// Naive (uniform-weight) combination derived from the per-explainer
/// attributions already computed for the weighted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveSummary {
    pub final_scores: Vec<f64>,
    pub roi: Vec<usize>,
    pub mpd: f64,
}

fn naive_from_weighted(
    env: &EnsembleEnv<'_>,
    item: &TrainItem,
    weighted: &DomainExplanation,
    k: usize,
) -> Result<NaiveSummary> {
    if weighted.reason.is_some() {
        return Ok(NaiveSummary {
            final_scores: Vec::new(),
            roi: Vec::new(),
            mpd: 0.0,
        });
    }
    let dims = weighted.final_scores.len();
    let share = 1.0 / weighted.per_explainer.len() as f64;
    let mut final_scores = vec![0.0; dims];
    for result in &weighted.per_explainer {
        for (acc, &v) in final_scores.iter_mut().zip(&result.normalized) {
            *acc += share * v;
        }
    }
    let roi = match select_roi(&final_scores, RoiMode::TopK(k))? {
        Roi::Ics(set) => set.into_iter().collect::<Vec<_>>(),
        Roi::Cells(_) => unreachable!(),
    };
    let eval_ctx = MaskContext {
        x_v: &item.x_v,
        indicator: &item.indicator,
        baselines: env.baselines,
        vectorizer: env.vectorizer,
        mask_seed: env.eval_mask_seed,
    };
    let mpd = mpd_k(env.model, &eval_ctx, &final_scores, k)?;
    Ok(NaiveSummary {
        final_scores,
        roi,
        mpd,
    })
}

/// One line of the explanation record file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub config_hash: String,
    pub master_seed: u64,
    pub eval_mask_seed: u64,
    pub model_tag: ModelTag,
    pub sample_id: String,
    pub label: u8,
    pub ic_count: usize,
    /// Ground-truth bit per valid component.
    pub truth: Vec<bool>,
    pub weighted: DomainExplanation,
    pub naive: NaiveSummary,
}

pub fn run_explain(
    cfg: &ExperimentConfig,
    tag: ModelTag,
    scenario: Scenario,
    k: usize,
) -> Result<()> {
    let ws = Workspace::load(cfg)?;
    let model = ws.load_model(tag)?;
    let env = ws.ensemble_env(&model);
    let paths = Paths::new(&cfg.out_dir);

    let records: Vec<Option<ExplanationRecord>> = ws
        .test
        .par_iter()
        .map(|item| -> Result<Option<ExplanationRecord>> {
            let predicted = model.predict_label(&item.x_v.matrix)?;
            // Record every sample the system explains (predicted risk)
            // plus labeled risks the model missed, for accounting.
            if predicted == 0 && item.sample.label == 0 {
                return Ok(None);
            }
            let weighted = explain_ensemble(
                &env,
                &item.sample.id,
                &item.x_v,
                &item.indicator,
                scenario,
                k,
                Weighting::MpdLocal,
            )?;
            let naive = naive_from_weighted(&env, item, &weighted, k)?;
            let truth = item
                .indicator
                .ics
                .iter()
                .map(|d| item.sample.ground_truth.contains(&d.original_index))
                .collect();
            Ok(Some(ExplanationRecord {
                config_hash: ws.hash.clone(),
                master_seed: ws.seeds.master,
                eval_mask_seed: ws.seeds.eval_mask,
                model_tag: tag,
                sample_id: item.sample.id.clone(),
                label: item.sample.label,
                ic_count: item.indicator.len(),
                truth,
                weighted,
                naive,
            }))
        })
        .collect::<Result<Vec<_>>>()?;

    let path = paths.records(tag, scenario, k);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let mut count = 0usize;
    for record in records.into_iter().flatten() {
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| Error::runtime(format!("serialize record: {e}")))?;
        out.write_all(b"\n")?;
        count += 1;
    }
    out.flush()?;
    log::info!("wrote {count} explanation records to {}", path.display());
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ExplanationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        Error::data(format!(
            "missing explanation records {} (run explain first)",
            path.display()
        ))
    })?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExplanationRecord = serde_json::from_str(line).map_err(|e| {
            Error::data(format!("{}:{}: bad record: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

fn explained<'a>(records: &'a [ExplanationRecord]) -> Vec<&'a ExplanationRecord> {
    records.iter().filter(|r| r.weighted.reason.is_none()).collect()
}

/// Verifies that the embedded fidelity values reproduce bit-for-bit
/// under the current model and seeds; stale records fail loudly instead
/// of being silently recomputed.
fn verify_records(
    ws: &Workspace,
    model: &Model,
    records: &[ExplanationRecord],
) -> Result<()> {
    for record in explained(records) {
        let item = ws
            .test
            .iter()
            .find(|i| i.sample.id == record.sample_id)
            .ok_or_else(|| {
                Error::data(format!("record {} not in the dataset", record.sample_id))
            })?;
        let eval_ctx = MaskContext {
            x_v: &item.x_v,
            indicator: &item.indicator,
            baselines: &ws.global_pool,
            vectorizer: &ws.vectorizer,
            mask_seed: ws.seeds.eval_mask,
        };
        let again = mpd_k(model, &eval_ctx, &record.weighted.final_scores, record.weighted.k)?;
        if again.to_bits() != record.weighted.mpd.to_bits() {
            return Err(Error::data(format!(
                "record {} does not reproduce its fidelity value (stale records?)",
                record.sample_id
            )));
        }
    }
    Ok(())
}

struct EvalSeries<'a> {
    name: String,
    /// Per record: the IC scores this series ranks with.
    scores: Vec<(&'a ExplanationRecord, &'a [f64])>,
}

fn series_for<'a>(records: &[&'a ExplanationRecord]) -> Vec<EvalSeries<'a>> {
    let mut series: Vec<EvalSeries<'a>> = Vec::new();
    if records.is_empty() {
        return series;
    }
    for (i, result) in records[0].weighted.per_explainer.iter().enumerate() {
        series.push(EvalSeries {
            name: result.id.to_string(),
            scores: records
                .iter()
                .map(|r| (*r, r.weighted.per_explainer[i].raw_scores.as_slice()))
                .collect(),
        });
    }
    series.push(EvalSeries {
        name: "ensemble".to_string(),
        scores: records
            .iter()
            .map(|r| (*r, r.weighted.final_scores.as_slice()))
            .collect(),
    });
    series.push(EvalSeries {
        name: "naive".to_string(),
        scores: records
            .iter()
            .map(|r| (*r, r.naive.final_scores.as_slice()))
            .collect(),
    });
    series
}

fn mean_mpd_at(
    ws: &Workspace,
    model: &Model,
    series: &EvalSeries<'_>,
    k: usize,
) -> Result<(f64, usize, usize)> {
    let mut values = Vec::new();
    let mut filtered = 0usize;
    for (record, scores) in &series.scores {
        if record.ic_count <= k {
            filtered += 1;
            continue;
        }
        let item = ws.test.iter().find(|i| i.sample.id == record.sample_id).unwrap();
        let ctx = MaskContext {
            x_v: &item.x_v,
            indicator: &item.indicator,
            baselines: &ws.global_pool,
            vectorizer: &ws.vectorizer,
            mask_seed: ws.seeds.eval_mask,
        };
        values.push(mpd_k(model, &ctx, scores, k)?);
    }
    let mean = if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    Ok((mean, values.len(), filtered))
}

pub fn run_eval(
    cfg: &ExperimentConfig,
    tag: ModelTag,
    scenario: Scenario,
    k: usize,
) -> Result<()> {
    let ws = Workspace::load(cfg)?;
    let model = ws.load_model(tag)?;
    let paths = Paths::new(&cfg.out_dir);
    let records = read_records(&paths.records(tag, scenario, k))?;
    verify_records(&ws, &model, &records)?;
    let usable = explained(&records);
    let series = series_for(&usable);
    let eval_dir = paths.eval_dir(tag);

    // Fidelity table at the record workload.
    let mut rows = Vec::new();
    for s in &series {
        let (mean, n, filtered) = mean_mpd_at(&ws, &model, s, k)?;
        rows.push(vec![
            s.name.clone(),
            k.to_string(),
            num(mean),
            n.to_string(),
            filtered.to_string(),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
            ws.seeds.eval_mask.to_string(),
        ]);
    }
    write_csv(
        &eval_dir.join(format!("{scenario}-k{k}-fidelity.csv")),
        &[
            "series", "k", "mean_mpd", "n", "filtered", "config_hash", "master_seed",
            "eval_mask_seed",
        ],
        &rows,
    )?;

    // Workload curve over the configured k grid.
    let mut curve_rows = Vec::new();
    let mut chart_series = Vec::new();
    for s in &series {
        let mut points = Vec::new();
        for &grid_k in &ws.cfg.metrics.k_grid {
            let (mean, n, _) = mean_mpd_at(&ws, &model, s, grid_k)?;
            if n > 0 {
                points.push((grid_k as f64, mean));
            }
            curve_rows.push(vec![
                s.name.clone(),
                grid_k.to_string(),
                num(mean),
                n.to_string(),
                ws.hash.clone(),
                ws.seeds.master.to_string(),
            ]);
        }
        chart_series.push(Series {
            name: s.name.clone(),
            points,
        });
    }
    write_csv(
        &eval_dir.join(format!("{scenario}-mpd-curve.csv")),
        &["series", "k", "mean_mpd", "n", "config_hash", "master_seed"],
        &curve_rows,
    )?;
    write_text(
        &eval_dir.join(format!("{scenario}-mpd-curve.svg")),
        &line_chart(
            &format!("Prediction drop vs masked components ({tag}, {scenario})"),
            "masked components k",
            "mean MPD",
            &chart_series,
        ),
    )?;

    // Percentile deduction curve (averaged over the scenario's explainers).
    let mut amp_rows = Vec::new();
    let mut amp_points = Vec::new();
    for &p in &ws.cfg.metrics.p_grid {
        let mut total = 0.0;
        let mut count = 0usize;
        for record in &usable {
            let item = ws.test.iter().find(|i| i.sample.id == record.sample_id).unwrap();
            let ctx = MaskContext {
                x_v: &item.x_v,
                indicator: &item.indicator,
                baselines: &ws.global_pool,
                vectorizer: &ws.vectorizer,
                mask_seed: ws.seeds.eval_mask,
            };
            for result in &record.weighted.per_explainer {
                let roi = select_roi(&result.raw_scores, RoiMode::TopPercentile(p))?;
                let masked = ctx.masked(&roi)?;
                total += model.prob(&masked.matrix)?;
                count += 1;
            }
        }
        let value = if count == 0 { f64::NAN } else { total / count as f64 };
        amp_rows.push(vec![
            num(p),
            num(value),
            count.to_string(),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
        if count > 0 {
            amp_points.push((p, value));
        }
    }
    write_csv(
        &eval_dir.join(format!("{scenario}-amp-curve.csv")),
        &["percentile", "amp", "pairs", "config_hash", "master_seed"],
        &amp_rows,
    )?;
    write_text(
        &eval_dir.join(format!("{scenario}-amp-curve.svg")),
        &line_chart(
            &format!("Masked prediction vs deduction percentile ({tag}, {scenario})"),
            "masked percentile p",
            "AMP",
            &[Series {
                name: format!("{scenario} explainers"),
                points: amp_points,
            }],
        ),
    )?;

    // Ground-truth localization.
    let mut auc_rows = Vec::new();
    for s in &series {
        let samples: Vec<(String, Vec<f64>, Vec<bool>)> = s
            .scores
            .iter()
            .map(|(r, scores)| (r.sample_id.clone(), scores.to_vec(), r.truth.clone()))
            .collect();
        let report = localization_auc(&samples);
        auc_rows.push(vec![
            s.name.clone(),
            num(report.mean),
            report.per_sample.len().to_string(),
            report.excluded.to_string(),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
    }
    write_csv(
        &eval_dir.join(format!("{scenario}-k{k}-auc.csv")),
        &["series", "mean_auc", "n", "excluded", "config_hash", "master_seed"],
        &auc_rows,
    )?;

    log::info!("eval artifacts written to {}", eval_dir.display());
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn improvement_pct(without: f64, with: f64) -> f64 {
    (with - without) / without * 100.0
}

pub fn run_ablate(cfg: &ExperimentConfig, k: usize) -> Result<()> {
    let ws = Workspace::load(cfg)?;
    let paths = Paths::new(&cfg.out_dir);
    let baseline_model = ws.load_model(ModelTag::Baseline)?;
    let finetuned_model = ws.load_model(ModelTag::Finetuned)?;
    let baseline_records = read_records(&paths.records(ModelTag::Baseline, Scenario::Unlimited, k))?;
    let finetuned_records =
        read_records(&paths.records(ModelTag::Finetuned, Scenario::Unlimited, k))?;
    verify_records(&ws, &baseline_model, &baseline_records)?;
    verify_records(&ws, &finetuned_model, &finetuned_records)?;

    // Model-updating ablation: per-explainer fidelity without vs with the
    // update, on samples with more than k components.
    let per_explainer_mean = |records: &[ExplanationRecord], id: ExplainerId| -> f64 {
        let values: Vec<f64> = explained(records)
            .iter()
            .filter(|r| r.ic_count > k)
            .filter_map(|r| {
                r.weighted
                    .per_explainer
                    .iter()
                    .find(|e| e.id == id)
                    .map(|e| e.mpd)
            })
            .collect();
        mean(&values)
    };
    let mut m1_rows = Vec::new();
    for id in ExplainerId::ALL {
        let without = per_explainer_mean(&baseline_records, id);
        let with = per_explainer_mean(&finetuned_records, id);
        m1_rows.push(vec![
            id.to_string(),
            num(without),
            num(with),
            num(improvement_pct(without, with)),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
    }
    write_csv(
        &paths.ablation("m1_ablation"),
        &["explainer", "without", "with", "improvement_pct", "config_hash", "master_seed"],
        &m1_rows,
    )?;

    // Ensembling ablation: naive vs locally weighted, on the updated
    // model, per scenario.
    let mut m2_rows = Vec::new();
    for scenario in ws.cfg.scenarios()? {
        let records = if scenario == Scenario::Unlimited {
            finetuned_records.clone()
        } else {
            let r = read_records(&paths.records(ModelTag::Finetuned, scenario, k))?;
            verify_records(&ws, &finetuned_model, &r)?;
            r
        };
        let eligible: Vec<&ExplanationRecord> = explained(&records)
            .into_iter()
            .filter(|r| r.ic_count > k)
            .collect();
        let naive: Vec<f64> = eligible.iter().map(|r| r.naive.mpd).collect();
        let weighted: Vec<f64> = eligible.iter().map(|r| r.weighted.mpd).collect();
        let (naive, weighted) = (mean(&naive), mean(&weighted));
        m2_rows.push(vec![
            scenario.to_string(),
            num(naive),
            num(weighted),
            num(improvement_pct(naive, weighted)),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
    }
    write_csv(
        &paths.ablation("m2_ablation"),
        &["scenario", "naive", "weighted", "improvement_pct", "config_hash", "master_seed"],
        &m2_rows,
    )?;

    // IC-abstraction ablation for the gradient family: rank components by
    // how many of the top cells they contain instead of aggregating, and
    // measure the fidelity decrease plus the explanation overlap.
    let settings = ws.cfg.explain_settings();
    let gradient_family = [ExplainerId::Gradients, ExplainerId::Ig, ExplainerId::Deeplift];
    let mut ic_rows = Vec::new();
    for id in gradient_family {
        let mut adjusted = Vec::new();
        let mut feature = Vec::new();
        let mut overlap = Vec::new();
        for record in explained(&finetuned_records) {
            if record.ic_count <= k {
                continue;
            }
            let item = ws.test.iter().find(|i| i.sample.id == record.sample_id).unwrap();
            let ctx = MaskContext {
                x_v: &item.x_v,
                indicator: &item.indicator,
                baselines: &ws.global_pool,
                vectorizer: &ws.vectorizer,
                mask_seed: ws.seeds.mask,
            };
            let e_v: Attribution = match id {
                ExplainerId::Gradients => gradients_explain(&finetuned_model, &item.x_v.matrix)?,
                ExplainerId::Ig => {
                    let b = ctx.baseline_input()?;
                    ig_explain(&finetuned_model, &item.x_v.matrix, &b.matrix, settings.ig_steps)?
                }
                ExplainerId::Deeplift => {
                    let b = ctx.baseline_input()?;
                    deeplift_explain(&finetuned_model, &item.x_v.matrix, &b.matrix)?
                }
                _ => unreachable!(),
            };
            let ic_scores = ic_aggregate(&e_v, &item.indicator);
            // Cell budget: as many features as the top-k components hold.
            let top = select_roi(&ic_scores, RoiMode::TopK(k))?;
            let n_cells: usize = match &top {
                Roi::Ics(set) => set
                    .iter()
                    .map(|&i| item.indicator.ics[i].row_len * item.x_v.matrix.cols())
                    .sum(),
                Roi::Cells(_) => unreachable!(),
            };
            // Count the top cells inside each component.
            let mut cells: Vec<(usize, usize, f64)> = (0..e_v.values.rows())
                .flat_map(|r| (0..e_v.values.cols()).map(move |c| (r, c)))
                .map(|(r, c)| (r, c, e_v.values.get(r, c).abs()))
                .collect();
            cells.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut counts = vec![0.0; item.indicator.len()];
            for &(r, c, _) in cells.iter().take(n_cells) {
                let idx = item.indicator.cell(r, c);
                if idx >= 0 {
                    counts[idx as usize] += 1.0;
                }
            }
            let eval_ctx = MaskContext {
                mask_seed: ws.seeds.eval_mask,
                ..ctx
            };
            adjusted.push(mpd_k(&finetuned_model, &eval_ctx, &ic_scores, k)?);
            feature.push(mpd_k(&finetuned_model, &eval_ctx, &counts, k)?);
            overlap.push(intersection_size(&ic_scores, &counts, k)?);
        }
        let (adjusted, feature, overlap) = (mean(&adjusted), mean(&feature), mean(&overlap));
        ic_rows.push(vec![
            id.to_string(),
            num(adjusted),
            num(feature),
            num((adjusted - feature) / adjusted * 100.0),
            num(overlap),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
    }
    write_csv(
        &paths.ablation("ic_ablation"),
        &[
            "explainer",
            "adjusted_mpd",
            "feature_mpd",
            "decrease_pct",
            "intersection",
            "config_hash",
            "master_seed",
        ],
        &ic_rows,
    )?;

    // Cost comparison: perturbation budget with and without the IC
    // adjustment, at matched surrogate adequacy (neighbors = 2*(dims+1)).
    let mut cost_rows = Vec::new();
    let cells = ws.cfg.task.max_rows * ws.cfg.task.embedding_dim;
    let eligible: Vec<&ExplanationRecord> = explained(&finetuned_records)
        .into_iter()
        .filter(|r| ws.cfg.task.max_rows >= 10 * r.ic_count && r.ic_count > 0)
        .take(3)
        .collect();
    for record in &eligible {
        let item = ws.test.iter().find(|i| i.sample.id == record.sample_id).unwrap();
        let ctx = MaskContext {
            x_v: &item.x_v,
            indicator: &item.indicator,
            baselines: &ws.global_pool,
            vectorizer: &ws.vectorizer,
            mask_seed: ws.seeds.mask,
        };
        let dims = item.indicator.len();
        let ic_neighbors = 2 * (dims + 1);
        let feature_neighbors = 2 * (cells + 1);
        let probe = CountingProbe::new(&finetuned_model as &dyn ProbModel);
        let _ = lime_explain(&probe, &ctx, ic_neighbors, &settings, ws.seeds.explain)?;
        let ic_forwards = probe.count();
        let probe = CountingProbe::new(&finetuned_model as &dyn ProbModel);
        let feature_forwards = feature_level_lime_queries(
            &probe,
            &item.x_v.matrix,
            feature_neighbors,
            settings.neighbor_off_prob,
            ws.seeds.explain,
        )?;
        cost_rows.push(vec![
            "lime".to_string(),
            record.sample_id.clone(),
            ic_forwards.to_string(),
            feature_forwards.to_string(),
            num((1.0 - ic_forwards as f64 / feature_forwards as f64) * 100.0),
            String::new(),
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
    }
    // Exact Shapley feasibility: component level completes, cell level
    // trips the coalition guard.
    if let Some(record) = explained(&finetuned_records)
        .into_iter()
        .find(|r| r.ic_count <= settings.shapley_exact_cap && r.ic_count > 0)
    {
        let item = ws.test.iter().find(|i| i.sample.id == record.sample_id).unwrap();
        let ctx = MaskContext {
            x_v: &item.x_v,
            indicator: &item.indicator,
            baselines: &ws.global_pool,
            vectorizer: &ws.vectorizer,
            mask_seed: ws.seeds.mask,
        };
        let probe = CountingProbe::new(&finetuned_model as &dyn ProbModel);
        let _ = shapley_explain(&probe, &ctx, ShapleyBudget::Exact, &settings, ws.seeds.explain)?;
        let budget = 1u64 << 40;
        let note = match feature_level_shapley_guard(cells, budget) {
            Ok(_) => "feature level feasible".to_string(),
            Err(e) => format!("feature level rejected: {e}"),
        };
        cost_rows.push(vec![
            "shapley".to_string(),
            record.sample_id.clone(),
            probe.count().to_string(),
            "infeasible".to_string(),
            num(100.0),
            note,
            ws.hash.clone(),
            ws.seeds.master.to_string(),
        ]);
    }
    write_csv(
        &paths.ablation("cost"),
        &[
            "method",
            "sample",
            "ic_forward_passes",
            "feature_forward_passes",
            "reduction_pct",
            "note",
            "config_hash",
            "master_seed",
        ],
        &cost_rows,
    )?;

    log::info!("ablation artifacts written to {}", paths.root.join("eval").display());
    Ok(())
}

pub fn run_report(cfg: &ExperimentConfig, k: usize) -> Result<()> {
    let paths = Paths::new(&cfg.out_dir);
    let seeds = cfg.seeds();
    let read_meta = |tag: ModelTag| -> Result<ModelMeta> {
        let bytes = std::fs::read(paths.model_meta(tag)).map_err(|_| {
            Error::data(format!("missing {} (run the pipeline first)", paths.model_meta(tag).display()))
        })?;
        serde_json::from_slice(&bytes).map_err(|e| Error::data(format!("bad model meta: {e}")))
    };
    let baseline_meta = read_meta(ModelTag::Baseline)?;
    let finetuned_meta = read_meta(ModelTag::Finetuned)?;

    let mut doc = String::new();
    doc.push_str("# Experiment report\n\n");
    doc.push_str(&format!("- config hash: `{}`\n", cfg.hash()));
    doc.push_str(&format!("- master seed: {}\n", seeds.master));
    doc.push_str(&format!(
        "- sub-seeds: data {}, embedding {}, model {}, train {}, finetune {}, explain {}, mask {}, weight-mask {}, eval-mask {}\n",
        seeds.data,
        seeds.embedding,
        seeds.model,
        seeds.train,
        seeds.finetune,
        seeds.explain,
        seeds.mask,
        seeds.weight_mask,
        seeds.eval_mask
    ));
    doc.push_str(&format!("- workload k: {k}\n\n"));

    doc.push_str("## Classification accuracy\n\n");
    doc.push_str("| model | train acc | test acc |\n|---|---|---|\n");
    doc.push_str(&format!(
        "| baseline | {:.4} | {:.4} |\n",
        baseline_meta.train_accuracy, baseline_meta.test_accuracy
    ));
    doc.push_str(&format!(
        "| finetuned | {:.4} | {:.4} |\n\n",
        finetuned_meta.train_accuracy, finetuned_meta.test_accuracy
    ));

    let sections: [(&str, PathBuf); 4] = [
        ("Model updating: per-explainer fidelity", paths.ablation("m1_ablation")),
        ("Ensembling: naive vs weighted", paths.ablation("m2_ablation")),
        ("IC abstraction: gradient-family comparison", paths.ablation("ic_ablation")),
        ("Perturbation cost", paths.ablation("cost")),
    ];
    for (title, path) in sections {
        doc.push_str(&format!("## {title}\n\n"));
        doc.push_str(&csv_to_markdown(&path)?);
        doc.push('\n');
    }

    let auc_path = paths
        .eval_dir(ModelTag::Finetuned)
        .join(format!("unlimited-k{k}-auc.csv"));
    doc.push_str("## Ground-truth localization (finetuned, unlimited)\n\n");
    doc.push_str(&csv_to_markdown(&auc_path)?);
    doc.push('\n');
    doc.push_str("## Curves\n\n");
    doc.push_str(
        "Vector charts and their CSV contracts live under `eval/` per model tag: \
         `*-mpd-curve.{csv,svg}` and `*-amp-curve.{csv,svg}`.\n",
    );

    write_text(&paths.report(), &doc)?;
    log::info!("report written to {}", paths.report().display());
    Ok(())
}
