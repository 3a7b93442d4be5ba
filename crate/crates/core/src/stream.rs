//! End-to-end episode stream: validate → score → partition → buffer update →
//! modality-drop plan for replay → optional evaluation row, per episode.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::{select_partition, Category, GlobalBuffer};
use crate::error::{Error, Result};
use crate::io::manifest::{load_manifest, validate_manifest, EpisodeManifest};
use crate::io::vol1;
use crate::io::{schema, write_validated_json};
use crate::metrics::{episode_dsc, metrics_report, MetricsReport, ResultMatrix};
use crate::modality::{rmd_mask_with, ChannelLayout, LayoutDocument, RmdPolicy};
use crate::scoring::{finalize_scores, raw_scores, ScoredDataset, ScoresDocument, ScoringConfig};
use crate::volume::LabelMask;

pub const STREAM_CONFIG_VERSION: u64 = 1;
pub const STREAM_REPORT_VERSION: u64 = 1;
pub const EVAL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub pred_dir: String,
    pub gt_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub version: u64,
    /// Episode manifest paths, in stream order.
    pub episodes: Vec<String>,
    pub beta: usize,
    /// Candidates selected per episode before trimming; defaults to `beta`.
    pub partition_size: Option<usize>,
    pub seed: u64,
    pub output_dir: String,
    pub scoring: ScoringConfig,
    /// Modality-drop masks planned per replay entry for the next session.
    pub rmd_epochs: u64,
    pub rmd_policy: RmdPolicy,
    /// `eval[t][i]`: predictions and ground truth for task `i` after session `t`.
    pub eval: Option<Vec<Vec<EvalPair>>>,
    pub eval_threshold: f32,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            version: STREAM_CONFIG_VERSION,
            episodes: Vec::new(),
            beta: 10,
            partition_size: None,
            seed: 0,
            output_dir: "run".into(),
            scoring: ScoringConfig::default(),
            rmd_epochs: 1,
            rmd_policy: RmdPolicy::UniformSize,
            eval: None,
            eval_threshold: 0.5,
            base_dir: PathBuf::new(),
        }
    }
}

impl StreamConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: StreamConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != STREAM_CONFIG_VERSION {
            return Err(Error::SchemaMismatch {
                document: "stream config",
                found: self.version,
                expected: STREAM_CONFIG_VERSION,
            });
        }
        if self.beta == 0 {
            return Err(Error::InvalidConfig("beta must be at least 1".into()));
        }
        if self.episodes.is_empty() {
            return Err(Error::InvalidConfig("stream needs at least one episode".into()));
        }
        if self.partition_size == Some(0) {
            return Err(Error::InvalidConfig("partition_size must be at least 1".into()));
        }
        self.scoring.validate()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// SHA-256 over the serialised config (paths as written, not resolved).
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationEvent {
    pub episode: u32,
    pub old_k: usize,
    pub new_k: usize,
    pub added: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSplit {
    pub representative: usize,
    pub difficult: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantChecks {
    pub capacity: bool,
    pub parity: bool,
    pub split: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmdPlanEntry {
    pub episode: u32,
    pub sample_id: String,
    /// One mask per planned epoch.
    pub masks: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub index: u32,
    pub name: String,
    pub scored: usize,
    pub excluded: usize,
    pub k_max: usize,
    pub inflation: Option<InflationEvent>,
    pub partition: PartitionSplit,
    pub buffer_sizes: Vec<usize>,
    pub evicted: usize,
    pub invariants: InvariantChecks,
    pub rmd_plan: Vec<RmdPlanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub version: u64,
    pub config_hash: String,
    pub beta: usize,
    pub seed: u64,
    pub episodes: Vec<EpisodeReport>,
    pub inflation_events: Vec<InflationEvent>,
    pub final_buffer_sizes: Vec<usize>,
    pub layout: LayoutDocument,
    pub metrics: Option<MetricsReport>,
}

impl StreamReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stream {} (beta {}, seed {})", &self.config_hash[..12], self.beta, self.seed);
        for e in &self.episodes {
            let _ = writeln!(
                s,
                "  [{}] {}: scored {} excluded {} | partition {}R/{}D | buffer {:?} | evicted {} | K={}{}",
                e.index,
                e.name,
                e.scored,
                e.excluded,
                e.partition.representative,
                e.partition.difficult,
                e.buffer_sizes,
                e.evicted,
                e.k_max,
                e.inflation
                    .as_ref()
                    .map(|i| format!(" (inflated {}→{}: {})", i.old_k, i.new_k, i.added.join(",")))
                    .unwrap_or_default()
            );
        }
        if let Some(m) = &self.metrics {
            let _ = writeln!(
                s,
                "  AVG {:.4}  ILM {:.4}  BWT {}",
                m.avg,
                m.ilm,
                m.bwt.map_or("n/a".to_string(), |b| format!("{b:.4}"))
            );
        }
        s
    }
}

/// Read and score every sample of a manifest, fanning out over the rayon pool.
pub fn score_manifest(m: &EpisodeManifest, config: &ScoringConfig) -> Result<ScoredDataset> {
    let raw = m
        .samples
        .par_iter()
        .map(|s| -> Result<_> {
            let prob = vol1::read_file(&m.resolve(&s.prob))?.to_probability()?;
            let gt = vol1::read_file(&m.resolve(&s.gt))?.to_mask()?;
            Ok((s.sample_id.clone(), raw_scores(&prob, &gt, config)))
        })
        .collect::<Result<Vec<_>>>()?;
    finalize_scores(raw, config)
}

/// Manifest load plus full validation; the first violation becomes the error.
pub fn load_valid_manifest(path: &Path) -> Result<EpisodeManifest> {
    let m = load_manifest(path)?;
    if let Some(v) = validate_manifest(&m).into_iter().next() {
        return Err(v.into_error());
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDice {
    pub name: String,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub version: u64,
    pub threshold: f32,
    pub dsc: f64,
    pub per_sample: Vec<SampleDice>,
}

fn vol_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "vol") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Pair predictions and ground truth by file name and average Dice.
/// f32 predictions are binarised with `p > threshold`; u8 are used as masks.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, threshold: f32) -> Result<EvalRow> {
    let preds = vol_files(pred_dir)?;
    let gts = vol_files(gt_dir)?;
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    let mut names = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(&gts) {
        if p.file_name() != g.file_name() {
            return Err(Error::InvalidConfig(format!(
                "prediction {} has no ground truth of the same name",
                p.display()
            )));
        }
        names.push(p.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    let load_pred = |p: &PathBuf| -> Result<LabelMask> {
        let t = vol1::read_file(p)?;
        match t.dtype() {
            vol1::Dtype::U8 => t.to_mask(),
            vol1::Dtype::F32 => Ok(t.to_probability()?.binarize(threshold)),
        }
    };
    let pairs = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| Ok((load_pred(p)?, vol1::read_file(g)?.to_mask()?)))
        .collect::<Result<Vec<_>>>()?;
    let (pm, gm): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let dsc = episode_dsc(&pm, &gm)?;
    let per_sample = names
        .into_iter()
        .zip(pm.iter().zip(&gm))
        .map(|(name, (p, g))| Ok(SampleDice { name, dice: crate::volume::dice(p, g)? }))
        .collect::<Result<_>>()?;
    Ok(EvalRow {
        version: EVAL_VERSION,
        threshold,
        dsc,
        per_sample,
    })
}

fn checked(cond: bool, what: String) -> Result<bool> {
    if cond {
        Ok(true)
    } else {
        Err(Error::InvariantViolation(what))
    }
}

/// Run the whole stream and write its artefacts under `output_dir`:
/// `scores/<episode>.json`, `buffer_state.json`, `layout.json`,
/// `report.json`, `summary.txt`, and `metrics.json` when evaluation is configured.
pub fn run_stream(cfg: &StreamConfig) -> Result<StreamReport> {
    cfg.validate()?;
    let out = cfg.resolve(&cfg.output_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut buffer = GlobalBuffer::new(cfg.beta)?;
    let mut layout = ChannelLayout::new();
    let mut episodes = Vec::with_capacity(cfg.episodes.len());
    let mut inflation_events = Vec::new();
    let mut names = Vec::with_capacity(cfg.episodes.len());
    let mut results: Option<ResultMatrix> = None;

    for (t, rel) in cfg.episodes.iter().enumerate() {
        let index = t as u32;
        let manifest = load_valid_manifest(&cfg.resolve(rel))?;
        names.push(manifest.episode.clone());

        let old_k = layout.k_max();
        let added = layout.register(&manifest.modalities)?;
        let inflation = (old_k > 0 && !added.is_empty()).then(|| InflationEvent {
            episode: index,
            old_k,
            new_k: layout.k_max(),
            added: added.clone(),
        });
        if let Some(ev) = &inflation {
            inflation_events.push(ev.clone());
        }

        let scored = score_manifest(&manifest, &cfg.scoring)?;
        let doc = ScoresDocument::new(manifest.episode.clone(), cfg.scoring, &scored);
        write_validated_json(
            &out.join("scores").join(format!("{t:02}-{}.json", manifest.episode)),
            "scores",
            &doc,
            &schema::scores(),
        )?;

        let valid = scored.valid();
        let n = cfg.partition_size.unwrap_or(cfg.beta);
        let partition = select_partition(&valid, n, index)?.with_refs(|id| manifest.refs(id));
        let split = PartitionSplit {
            representative: partition.count(Category::Representative),
            difficult: partition.count(Category::Difficult),
        };
        let update = buffer.update(partition)?;

        let invariants = InvariantChecks {
            capacity: checked(
                buffer.total() <= cfg.beta,
                format!("episode {t}: {} entries exceed beta {}", buffer.total(), cfg.beta),
            )?,
            parity: checked(
                update.parity_ok(),
                format!("episode {t}: partition sizes {:?} break parity", update.allocation),
            )?,
            split: checked(
                buffer.check_invariants().is_ok(),
                format!("episode {t}: {}", buffer.check_invariants().err().unwrap_or_default()),
            )?,
        };

        let mut rmd_plan = Vec::new();
        for entry in buffer.entries() {
            let available: Vec<&String> = entry.refs.modalities.keys().collect();
            if available.is_empty() {
                continue;
            }
            let key = format!("{}/{}", entry.episode, entry.sample_id);
            let masks = (0..cfg.rmd_epochs)
                .map(|e| {
                    rmd_mask_with(
                        cfg.rmd_policy,
                        &available,
                        cfg.seed,
                        &key,
                        (t as u64 + 1) * cfg.rmd_epochs + e,
                    )
                })
                .collect::<Result<_>>()?;
            rmd_plan.push(RmdPlanEntry {
                episode: entry.episode,
                sample_id: entry.sample_id.clone(),
                masks,
            });
        }

        if let Some(eval) = &cfg.eval {
            let m = results.get_or_insert_with(|| ResultMatrix::new(Vec::new()));
            if let Some(pairs) = eval.get(t) {
                let row = pairs
                    .iter()
                    .map(|p| {
                        evaluate_dirs(&cfg.resolve(&p.pred_dir), &cfg.resolve(&p.gt_dir), cfg.eval_threshold)
                            .map(|r| r.dsc)
                    })
                    .collect::<Result<Vec<_>>>()?;
                m.tasks = names.clone();
                m.push_row(row)?;
            }
        }

        episodes.push(EpisodeReport {
            index,
            name: manifest.episode.clone(),
            scored: scored.records.len() - scored.excluded_count(),
            excluded: scored.excluded_count(),
            k_max: layout.k_max(),
            inflation,
            partition: split,
            buffer_sizes: buffer.sizes(),
            evicted: update.evicted.len(),
            invariants,
            rmd_plan,
        });
    }

    let metrics = match &results {
        Some(m) => {
            write_validated_json(&out.join("results.json"), "results", m, &schema::results())?;
            Some(metrics_report(m)?)
        }
        None => None,
    };
    if let Some(mr) = &metrics {
        write_validated_json(&out.join("metrics.json"), "metrics", mr, &schema::metrics())?;
    }

    let report = StreamReport {
        version: STREAM_REPORT_VERSION,
        config_hash: cfg.hash()?,
        beta: cfg.beta,
        seed: cfg.seed,
        episodes,
        inflation_events,
        final_buffer_sizes: buffer.sizes(),
        layout: layout.to_document(),
        metrics,
    };

    let state = buffer.save_state()?;
    schema::validate(&serde_json::from_str(&state)?, &schema::buffer_state()).map_err(|detail| {
        Error::SchemaViolation {
            document: "buffer state",
            detail,
        }
    })?;
    let state_path = out.join("buffer_state.json");
    std::fs::write(&state_path, state).map_err(|e| Error::io(&state_path, e))?;
    write_validated_json(&out.join("layout.json"), "layout", &report.layout, &schema::layout())?;
    write_validated_json(&out.join("report.json"), "stream report", &report, &schema::stream_report())?;
    let summary_path = out.join("summary.txt");
    std::fs::write(&summary_path, report.summary()).map_err(|e| Error::io(&summary_path, e))?;
    Ok(report)
}
