//! Stage orchestration: synth → baseline → encode → train → eval →
//! project / maps / explain. Every stage is keyed on content hashes and is
//! skipped when its outputs already exist under the same hash.

use std::path::{Path, PathBuf};

use geoproto_core::aggregate::PoolMode;
use geoproto_core::encoder::{concept_conv, ConceptSpec, ConceptTensor, GlobalBaselines};
use geoproto_core::explain::{self, SampleMeta, SimilarityMap};
use geoproto_core::grid::{extract_samples, split_indices, GridDataset, SampleWindow, Split};
use geoproto_core::synth::synth_generate;
use geoproto_core::train::{self, EpochRecord, Metrics};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{self, ModelArchive, Provenance};
use crate::cache::{Cache, CacheIndex, CachedMeta};
use crate::config::RunConfig;
use crate::dataset::{self, Manifest};
use crate::error::{AppError, AppResult};
use crate::hashing::{hash_json, Chain};
use crate::report::{self, CaseDocument, Format, HardProjection, ProjectionDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
}

pub fn mode_name(mode: PoolMode) -> &'static str {
    match mode {
        PoolMode::Mean => "spatial",
        PoolMode::Max => "max",
        PoolMode::None => "none",
    }
}

/// A loaded dataset and its content hash.
pub struct Data {
    pub ds: GridDataset,
    pub manifest: Manifest,
    pub hash: String,
}

/// Encoded samples with their metadata, in cache-index order.
pub struct Encoded {
    pub cache: Cache,
    pub index: CacheIndex,
    pub baselines: GlobalBaselines,
    pub spec: ConceptSpec,
    pub tensors: Vec<ConceptTensor>,
}

impl Encoded {
    pub fn examples(&self, ids: &[usize]) -> Vec<train::Example<'_>> {
        ids.iter().map(|&i| (&self.tensors[i], self.index.samples[i].label)).collect()
    }

    pub fn meta(&self, ids: &[usize]) -> Vec<SampleMeta> {
        ids.iter().map(|&i| self.index.samples[i].meta).collect()
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.index.samples.iter().position(|m| m.meta.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub config_hash: String,
    pub train_hash: String,
    pub pooling: String,
    pub best_epoch: usize,
    pub validation: Metrics,
    pub test: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pooling: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub encode_hash: String,
    pub train_hash: String,
    pub stages: Vec<StageRecord>,
    pub metrics: MetricsDocument,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub stages: Vec<StageRecord>,
}

fn metric_stats(runs: &[Metrics]) -> (Metrics, Metrics) {
    let n = runs.len() as f64;
    let field = |f: fn(&Metrics) -> f64| {
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = if runs.len() > 1 {
            runs.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (ce, ce_s) = field(|m| m.cross_entropy);
    let (acc, acc_s) = field(|m| m.accuracy);
    let (p, p_s) = field(|m| m.precision);
    let (r, r_s) = field(|m| m.recall);
    let (f1, f1_s) = field(|m| m.f1);
    let total = runs.first().map_or(0, |m| m.n);
    (
        Metrics {
            cross_entropy: ce,
            accuracy: acc,
            precision: p,
            recall: r,
            f1,
            n: total,
        },
        Metrics {
            cross_entropy: ce_s,
            accuracy: acc_s,
            precision: p_s,
            recall: r_s,
            f1: f1_s,
            n: total,
        },
    )
}

pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<8} {:>16} {:>16} {:>16} {:>16} {:>16}\n",
        "pooling", "CrsEnt", "ACC", "Precision", "Recall", "F1"
    );
    for r in rows {
        let cell = |m: f64, sd: f64| format!("{m:.4}±{sd:.4}");
        s.push_str(&format!(
            "{:<8} {:>16} {:>16} {:>16} {:>16} {:>16}\n",
            r.pooling,
            cell(r.mean.cross_entropy, r.std.cross_entropy),
            cell(r.mean.accuracy, r.std.accuracy),
            cell(r.mean.precision, r.std.precision),
            cell(r.mean.recall, r.std.recall),
            cell(r.mean.f1, r.std.f1)
        ));
    }
    s
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        Self { cfg, stages: Vec::new() }
    }

    fn record(&mut self, stage: &str, status: StageStatus) {
        match status {
            StageStatus::Ran => info!("{stage}: done"),
            StageStatus::Skipped => info!("{stage}: up to date, skipped"),
        }
        self.stages.push(StageRecord {
            stage: stage.into(),
            status,
        });
    }

    pub fn data_dir(&self) -> &Path {
        &self.cfg.paths.data
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.paths.out
    }

    pub fn model_path(&self) -> PathBuf {
        self.out_dir().join("model.gpn")
    }

    pub fn synth_hash(&self) -> String {
        Chain::new("synth").json(&self.cfg.synth).json(&self.cfg.seed).hex()
    }

    /// Generate the synthetic dataset unless an up-to-date one is present.
    /// Datasets not written by the generator are never overwritten.
    pub fn synth(&mut self, force: bool) -> AppResult<StageStatus> {
        let dir = self.cfg.paths.data.clone();
        let want = self.synth_hash();
        if !force {
            if let Ok(m) = dataset::read_manifest(&dir) {
                if m.generator.is_none() || m.generator.as_deref() == Some(want.as_str()) {
                    self.record("synth", StageStatus::Skipped);
                    return Ok(StageStatus::Skipped);
                }
            }
        }
        let s = &self.cfg.synth;
        let (mut ds, truth) = synth_generate(self.cfg.seed, &s.grid_spec(), &s.pattern)?;
        ds.epoch_weekday = s.epoch_weekday;
        let mut manifest = Manifest::for_dataset(&ds, Some(truth));
        manifest.generator = Some(want);
        dataset::write_dataset(&dir, &ds, &manifest)?;
        info!("synth: wrote {}", dir.display());
        self.record("synth", StageStatus::Ran);
        Ok(StageStatus::Ran)
    }

    /// Load the dataset, generating it first when configured to.
    pub fn data(&mut self) -> AppResult<Data> {
        let dir = self.cfg.paths.data.clone();
        if self.cfg.synth.enabled {
            self.synth(false)?;
        }
        if !dir.join(dataset::MANIFEST).exists() {
            return Err(AppError::Data(format!("no dataset at {}", dir.display())));
        }
        let (ds, manifest) = dataset::read_dataset(&dir)?;
        let hash = dataset::dataset_hash(&ds);
        Ok(Data { ds, manifest, hash })
    }

    pub fn encode_hash(&self, data_hash: &str) -> String {
        Chain::new("encode")
            .part(data_hash.as_bytes())
            .json(&self.cfg.seed)
            .json(&self.cfg.extract)
            .json(&self.cfg.split)
            .json(&self.cfg.concepts)
            .hex()
    }

    pub fn train_hash(&self, encode_hash: &str, mode: PoolMode, seed: u64) -> String {
        let mut pooling = self.cfg.pooling.clone();
        pooling.mode = mode;
        Chain::new("train")
            .part(encode_hash.as_bytes())
            .json(&pooling)
            .json(&self.cfg.hyperparams(seed))
            .hex()
    }

    fn samples(&self, data: &Data) -> AppResult<(Vec<SampleWindow>, Split)> {
        let samples = extract_samples(&data.ds, &self.cfg.extract_config())?;
        let split = split_indices(samples.len(), self.cfg.split.train, self.cfg.split.validation, self.cfg.seed)?;
        Ok((samples, split))
    }

    /// Fit (or load) the global baselines on the training split.
    pub fn baseline(&mut self, data: &Data) -> AppResult<(Cache, GlobalBaselines)> {
        let hash = self.encode_hash(&data.hash);
        let cache = Cache::new(&self.cfg.cache_root(), &hash);
        let path = cache.baselines_path();
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(AppError::io(&path))?;
            let b = archive::baselines_from_bytes(&bytes, &hash, &path.display().to_string())?;
            self.record("baseline", StageStatus::Skipped);
            return Ok((cache, b));
        }
        let spec = self.cfg.concept_spec(data.ds.features())?;
        let (samples, split) = self.samples(data)?;
        let train: Vec<SampleWindow> = split.train.iter().map(|&i| samples[i].clone()).collect();
        let b = GlobalBaselines::fit(&train, &spec, self.cfg.concepts.compress_threshold)?;
        report::write_file(&path, archive::baselines_to_bytes(&b, &hash))?;
        self.record("baseline", StageStatus::Ran);
        Ok((cache, b))
    }

    /// Encode every sample into the cache, or load an existing encoding.
    pub fn encode(&mut self, data: &Data) -> AppResult<Encoded> {
        let (cache, baselines) = self.baseline(data)?;
        let spec = self.cfg.concept_spec(data.ds.features())?;
        if cache.is_complete()? {
            let index = cache.read_index()?.expect("complete cache has an index");
            info!("encode: cache hit {}", cache.dir.display());
            let tensors = load_tensors(&cache, &index)?;
            self.record("encode", StageStatus::Skipped);
            return Ok(Encoded {
                cache,
                index,
                baselines,
                spec,
                tensors,
            });
        }
        let (samples, split) = self.samples(data)?;
        let tensors: Vec<ConceptTensor> = samples
            .par_iter()
            .map(|s| concept_conv(s, &spec, &baselines))
            .collect::<geoproto_core::Result<_>>()?;
        let metas: Vec<CachedMeta> = samples
            .iter()
            .map(|s| CachedMeta {
                meta: SampleMeta {
                    id: s.id,
                    time: s.time,
                    center: s.center,
                },
                label: s.label,
            })
            .collect();
        tensors
            .par_iter()
            .zip(&metas)
            .try_for_each(|(t, m)| cache.write_sample(t, m))?;
        let index = CacheIndex {
            encode_hash: cache.hash.clone(),
            config_hash: self.cfg.hash(),
            data_hash: data.hash.clone(),
            epoch_weekday: data.ds.epoch_weekday,
            grid: (data.ds.spec().rows, data.ds.spec().cols),
            samples: metas,
            train: split.train,
            validation: split.validation,
            test: split.test,
        };
        cache.write_index(&index)?;
        info!("encode: {} samples into {}", tensors.len(), cache.dir.display());
        self.record("encode", StageStatus::Ran);
        Ok(Encoded {
            cache,
            index,
            baselines,
            spec,
            tensors,
        })
    }

    /// Open the cache a model was trained on.
    pub fn encoded_for(&mut self, model: &ModelArchive) -> AppResult<Encoded> {
        let cache = Cache::new(&self.cfg.cache_root(), &model.provenance.encode_hash);
        let index = cache.read_index()?.ok_or_else(|| {
            AppError::Data(format!(
                "no encoding cache at {}; run encode with the model's config",
                cache.dir.display()
            ))
        })?;
        let tensors = load_tensors(&cache, &index)?;
        Ok(Encoded {
            cache,
            index,
            baselines: model.baselines.clone(),
            spec: model.model.spec.clone(),
            tensors,
        })
    }

    /// Train one model on the encoded corpus.
    pub fn fit(&self, enc: &Encoded, mode: PoolMode, seed: u64) -> AppResult<(ModelArchive, Vec<EpochRecord>, usize)> {
        let plan = self.cfg.pooling_plan(mode)?;
        let train_set = enc.examples(&enc.index.train);
        let validation = enc.examples(&enc.index.validation);
        let hyper = self.cfg.hyperparams(seed);
        let model = train::init_model(enc.spec.clone(), plan, self.cfg.pooling.fusion, hyper, &train_set)?;
        let out = train::train(model, &train_set, &validation, |_| {})?;
        let mut model = out.model;
        archive::quantize(&mut model);
        let provenance = Provenance {
            config_hash: self.cfg.hash(),
            data_hash: enc.index.data_hash.clone(),
            encode_hash: enc.index.encode_hash.clone(),
            train_hash: self.train_hash(&enc.index.encode_hash, mode, seed),
        };
        Ok((
            ModelArchive {
                provenance,
                model,
                baselines: enc.baselines.clone(),
            },
            out.history,
            out.best_epoch,
        ))
    }

    /// Train and save the configured model unless an identical one exists.
    pub fn train(&mut self, enc: &Encoded, model_path: &Path) -> AppResult<ModelArchive> {
        let mode = self.cfg.pooling.mode;
        let want = self.train_hash(&enc.index.encode_hash, mode, self.cfg.seed);
        if model_path.exists() {
            let existing = ModelArchive::load(model_path)?;
            if existing.provenance.train_hash == want {
                self.record("train", StageStatus::Skipped);
                return Ok(existing);
            }
        }
        let (model, history, best) = self.fit(enc, mode, self.cfg.seed)?;
        model.save(model_path)?;
        let history_path = model_path.with_extension("history.json");
        report::write_file(&history_path, report::to_json(&history))?;
        info!("train: best epoch {best}, saved {}", model_path.display());
        self.record("train", StageStatus::Ran);
        Ok(model)
    }

    pub fn evaluate(&mut self, model: &ModelArchive, enc: &Encoded) -> AppResult<MetricsDocument> {
        model.check_encoding(&enc.index.encode_hash)?;
        let m = &model.model;
        let validation = train::evaluate(m, &enc.examples(&enc.index.validation))?;
        let test = train::evaluate(m, &enc.examples(&enc.index.test))?;
        let doc = MetricsDocument {
            config_hash: model.provenance.config_hash.clone(),
            train_hash: model.provenance.train_hash.clone(),
            pooling: mode_name(m.plan.mode).into(),
            best_epoch: m.epoch,
            validation,
            test,
        };
        let out = self.out_dir();
        report::write_file(&out.join("metrics.json"), report::to_json(&doc))?;
        let text = report::metrics_text("validation", &doc.validation) + &report::metrics_text("test", &doc.test);
        report::write_file(&out.join("metrics.txt"), text)?;
        self.record("eval", StageStatus::Ran);
        Ok(doc)
    }

    pub fn pooled(model: &ModelArchive, enc: &Encoded, ids: &[usize]) -> AppResult<Vec<Vec<f64>>> {
        ids.par_iter()
            .map(|&i| model.model.pool(&enc.tensors[i]).map_err(AppError::from))
            .collect()
    }

    pub fn project(&mut self, model: &ModelArchive, enc: &Encoded, hard: bool) -> AppResult<ProjectionDocument> {
        model.check_encoding(&enc.index.encode_hash)?;
        let ids = &enc.index.train;
        let pooled = Self::pooled(model, enc, ids)?;
        let meta = enc.meta(ids);
        let prototypes = explain::project(&model.model, &pooled, &meta, self.cfg.explain.top_n)?;
        let hard = if hard {
            let projected = explain::hard_project(&model.model, &prototypes, &pooled)?;
            let val = enc.examples(&enc.index.validation);
            let before = train::evaluate(&model.model, &val)?;
            let after = train::evaluate(&projected, &val)?;
            Some(HardProjection {
                before,
                after,
                delta_accuracy: after.accuracy - before.accuracy,
                delta_f1: after.f1 - before.f1,
            })
        } else {
            None
        };
        let doc = ProjectionDocument { prototypes, hard };
        let out = self.out_dir();
        report::write_file(&out.join("projection.json"), report::to_json(&doc))?;
        report::write_file(&out.join("projection.txt"), report::projection_text(&doc))?;
        self.record("project", StageStatus::Ran);
        Ok(doc)
    }

    pub fn maps(&mut self, model: &ModelArchive, enc: &Encoded, percentile: f64, dir: &Path) -> AppResult<Vec<SimilarityMap>> {
        model.check_encoding(&enc.index.encode_hash)?;
        let ids: Vec<usize> = (0..enc.index.samples.len()).collect();
        let pooled = Self::pooled(model, enc, &ids)?;
        let maps = explain::similarity_maps(
            &model.model,
            &pooled,
            &enc.meta(&ids),
            enc.index.grid,
            enc.index.epoch_weekday,
            percentile,
        )?;
        report::write_maps(dir, &maps)?;
        self.record("maps", StageStatus::Ran);
        Ok(maps)
    }

    pub fn explain(&mut self, model: &ModelArchive, enc: &Encoded, sample_id: usize, top_n: usize) -> AppResult<CaseDocument> {
        model.check_encoding(&enc.index.encode_hash)?;
        let pos = enc
            .position(sample_id)
            .ok_or_else(|| AppError::Data(format!("no sample with id {sample_id}")))?;
        let pooled = model.model.pool(&enc.tensors[pos])?;
        let report = explain::explain_case(&model.model, &pooled, top_n)?;
        Ok(CaseDocument {
            sample: enc.index.samples[pos].meta,
            label: enc.index.samples[pos].label,
            report,
        })
    }

    pub fn write_case(&self, doc: &CaseDocument, format: Format) -> AppResult<String> {
        let rendered = report::render(doc, format, report::case_text);
        let ext = if format == Format::Json { "json" } else { "txt" };
        report::write_file(&self.out_dir().join(format!("explain_{}.{ext}", doc.sample.id)), &rendered)?;
        Ok(rendered)
    }

    /// One row per pooling mode, each averaged over the configured seeds.
    pub fn ablation(&mut self, enc: &Encoded, modes: &[PoolMode]) -> AppResult<Vec<AblationRow>> {
        let seeds: Vec<u64> = (0..self.cfg.evaluation.seeds as u64).map(|s| self.cfg.seed + s).collect();
        let test = enc.examples(&enc.index.test);
        let mut rows = Vec::new();
        for &mode in modes {
            let mut runs = Vec::new();
            for &seed in &seeds {
                let (model, _, _) = self.fit(enc, mode, seed)?;
                runs.push(train::evaluate(&model.model, &test)?);
            }
            let (mean, std) = metric_stats(&runs);
            info!("ablation: {} F1 {:.4}", mode_name(mode), mean.f1);
            rows.push(AblationRow {
                pooling: mode_name(mode).into(),
                seeds: seeds.clone(),
                runs,
                mean,
                std,
            });
        }
        let out = self.out_dir();
        report::write_file(&out.join("ablation.json"), report::to_json(&rows))?;
        report::write_file(&out.join("ablation.txt"), ablation_text(&rows))?;
        self.record("ablation", StageStatus::Ran);
        Ok(rows)
    }

    /// The whole pipeline, then a run manifest.
    pub fn all(&mut self) -> AppResult<RunManifest> {
        let data = self.data()?;
        let enc = self.encode(&data)?;
        let model_path = self.model_path();
        let model = self.train(&enc, &model_path)?;
        let metrics = self.evaluate(&model, &enc)?;
        self.project(&model, &enc, self.cfg.explain.hard_projection)?;
        let maps_dir = self.out_dir().join("maps");
        self.maps(&model, &enc, self.cfg.explain.percentile, &maps_dir)?;
        if let Some(&first) = enc.index.test.first() {
            let id = enc.index.samples[first].meta.id;
            let doc = self.explain(&model, &enc, id, self.cfg.explain.top_n)?;
            self.write_case(&doc, Format::Text)?;
            self.record("explain", StageStatus::Ran);
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
            data_hash: data.hash,
            encode_hash: enc.index.encode_hash.clone(),
            train_hash: model.provenance.train_hash.clone(),
            stages: self.stages.clone(),
            metrics,
        };
        report::write_file(&self.out_dir().join("run.json"), report::to_json(&manifest))?;
        report::write_file(&self.out_dir().join("config.toml"), self.cfg.to_toml())?;
        Ok(manifest)
    }
}

fn load_tensors(cache: &Cache, index: &CacheIndex) -> AppResult<Vec<ConceptTensor>> {
    index
        .samples
        .par_iter()
        .map(|m| {
            let (t, got) = cache.read_sample(m.meta.id)?;
            if &got != m {
                return Err(AppError::Data(format!(
                    "{}: metadata disagrees with the index",
                    cache.sample_path(m.meta.id).display()
                )));
            }
            Ok(t)
        })
        .collect()
}

/// Stable hash of a metrics document, handy for determinism checks.
pub fn metrics_hash(doc: &MetricsDocument) -> String {
    hash_json("metrics", doc)
}
