//! Lesion-aware sample scores: confidence, size, boundary uncertainty and
//! fragmentation, plus their per-dataset normalisation and weighted combination.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    boundary_band, connected_components, ensure_same_dims, BandSpec, Connectivity, LabelMask,
    ProbabilityVolume,
};

pub const SCORES_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Lesion voxels contribute to confidence only when strictly above this.
    pub tau: f64,
    /// Weight of the size term in the representativeness score.
    pub alpha: f64,
    /// Weight of the uncertainty term in the difficulty score.
    pub gamma: f64,
    pub band: BandSpec,
    pub connectivity: Connectivity,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            alpha: 0.9,
            gamma: 0.9,
            band: BandSpec::default(),
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScores {
    pub conf: f64,
    pub size: u64,
    pub unc: f64,
    pub comp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScores {
    pub conf: f64,
    pub size: f64,
    pub unc: f64,
    pub comp: f64,
}

/// Scores of one sample that passed candidacy.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub sample_id: String,
    pub raw: RawScores,
    pub norm: NormalizedScores,
    pub r_rep: f64,
    pub r_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    EmptyLesion,
    EmptyBand,
}

/// One row of the scores document; excluded samples carry only the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub raw: Option<RawScores>,
    pub norm: Option<NormalizedScores>,
    pub r_rep: Option<f64>,
    pub r_diff: Option<f64>,
    pub excluded: bool,
    pub exclusion_reason: Option<ExclusionReason>,
}

impl ScoreRecord {
    fn excluded(sample_id: String, reason: ExclusionReason) -> Self {
        Self {
            sample_id,
            raw: None,
            norm: None,
            r_rep: None,
            r_diff: None,
            excluded: true,
            exclusion_reason: Some(reason),
        }
    }

    pub fn scores(&self) -> Option<SampleScores> {
        if self.excluded {
            return None;
        }
        Some(SampleScores {
            sample_id: self.sample_id.clone(),
            raw: self.raw?,
            norm: self.norm?,
            r_rep: self.r_rep?,
            r_diff: self.r_diff?,
        })
    }
}

impl From<&SampleScores> for ScoreRecord {
    fn from(s: &SampleScores) -> Self {
        Self {
            sample_id: s.sample_id.clone(),
            raw: Some(s.raw),
            norm: Some(s.norm),
            r_rep: Some(s.r_rep),
            r_diff: Some(s.r_diff),
            excluded: false,
            exclusion_reason: None,
        }
    }
}

/// Scores for one episode, records in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    pub records: Vec<ScoreRecord>,
}

impl ScoredDataset {
    pub fn valid(&self) -> Vec<SampleScores> {
        self.records.iter().filter_map(ScoreRecord::scores).collect()
    }

    pub fn excluded_count(&self) -> usize {
        self.records.iter().filter(|r| r.excluded).count()
    }
}

/// On-disk scores document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresDocument {
    pub version: u64,
    pub episode: String,
    pub config: ScoringConfig,
    pub records: Vec<ScoreRecord>,
}

impl ScoresDocument {
    pub fn new(episode: impl Into<String>, config: ScoringConfig, scored: &ScoredDataset) -> Self {
        Self {
            version: SCORES_VERSION,
            episode: episode.into(),
            config,
            records: scored.records.clone(),
        }
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != SCORES_VERSION {
            return Err(Error::SchemaMismatch {
                document: "scores",
                found: self.version,
                expected: SCORES_VERSION,
            });
        }
        Ok(())
    }

    pub fn valid(&self) -> Vec<SampleScores> {
        self.records.iter().filter_map(ScoreRecord::scores).collect()
    }
}

/// Mean thresholded lesion probability: voxels at or below `tau` count as zero.
pub fn confidence_score(prob: &ProbabilityVolume, gt: &LabelMask, tau: f64) -> Result<f64> {
    ensure_same_dims(prob.dims(), gt.dims())?;
    let (mut sum, mut n) = (0.0f64, 0u64);
    for (&p, &g) in prob.data().iter().zip(gt.data()) {
        if g != 0 {
            n += 1;
            let p = f64::from(p);
            if p > tau {
                sum += p;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyLesion);
    }
    Ok(sum / n as f64)
}

pub fn size_score(gt: &LabelMask) -> u64 {
    gt.count() as u64
}

/// Mean distance of the band probabilities from the 0.5 decision threshold.
/// Lower means less stable predictions along the lesion margin.
pub fn uncertainty_score(prob: &ProbabilityVolume, gt: &LabelMask, band: BandSpec) -> Result<f64> {
    ensure_same_dims(prob.dims(), gt.dims())?;
    let band = boundary_band(gt, band)?;
    let (mut sum, mut n) = (0.0f64, 0u64);
    for (&p, &b) in prob.data().iter().zip(band.data()) {
        if b != 0 {
            n += 1;
            sum += (f64::from(p) - 0.5).abs();
        }
    }
    if n == 0 {
        return Err(Error::EmptyBand);
    }
    Ok(sum / n as f64)
}

/// Squared component count over lesion voxel count.
pub fn complexity_score(gt: &LabelMask, connectivity: Connectivity) -> Result<f64> {
    let n = gt.count();
    if n == 0 {
        return Err(Error::EmptyLesion);
    }
    let c = connected_components(gt, connectivity).count as f64;
    Ok(c * c / n as f64)
}

/// Min-max normalisation to `[0, 1]`; a constant list maps to 0.5 everywhere.
pub fn normalize_scores(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("score {v}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.5; values.len()]);
    }
    let span = max - min;
    Ok(values
        .iter()
        .map(|&v| ((v - min) / span).clamp(0.0, 1.0))
        .collect())
}

pub fn rep_score(conf_norm: f64, size_norm: f64, alpha: f64) -> f64 {
    ((1.0 - alpha) * conf_norm + alpha * size_norm).clamp(0.0, 1.0)
}

/// Uncertainty enters inverted so that a higher score means a harder sample.
pub fn diff_score(unc_norm: f64, comp_norm: f64, gamma: f64) -> f64 {
    (gamma * (1.0 - unc_norm) + (1.0 - gamma) * comp_norm).clamp(0.0, 1.0)
}

/// All four raw scores of one sample. Empty lesions and empty bands are
/// reported as errors so the caller can exclude the sample.
pub fn raw_scores(prob: &ProbabilityVolume, gt: &LabelMask, config: &ScoringConfig) -> Result<RawScores> {
    let conf = confidence_score(prob, gt, config.tau)?;
    let comp = complexity_score(gt, config.connectivity)?;
    let unc = uncertainty_score(prob, gt, config.band)?;
    Ok(RawScores {
        conf,
        size: size_score(gt),
        unc,
        comp,
    })
}

/// Normalise across every non-excluded sample and combine.
///
/// `EmptyLesion`/`EmptyBand` outcomes become exclusions; any other error aborts.
pub fn finalize_scores(
    raw: Vec<(String, Result<RawScores>)>,
    config: &ScoringConfig,
) -> Result<ScoredDataset> {
    config.validate()?;
    if raw.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut valid: Vec<(usize, RawScores)> = Vec::new();
    let mut records: Vec<Option<ScoreRecord>> = Vec::with_capacity(raw.len());
    let mut ids = Vec::with_capacity(raw.len());
    for (i, (id, outcome)) in raw.into_iter().enumerate() {
        match outcome {
            Ok(r) => {
                valid.push((i, r));
                records.push(None);
            }
            Err(Error::EmptyLesion) => {
                records.push(Some(ScoreRecord::excluded(id.clone(), ExclusionReason::EmptyLesion)))
            }
            Err(Error::EmptyBand) => {
                records.push(Some(ScoreRecord::excluded(id.clone(), ExclusionReason::EmptyBand)))
            }
            Err(e) => return Err(e),
        }
        ids.push(id);
    }
    if valid.is_empty() {
        return Err(Error::AllSamplesEmpty);
    }

    let column = |f: fn(&RawScores) -> f64| -> Result<Vec<f64>> {
        normalize_scores(&valid.iter().map(|(_, r)| f(r)).collect::<Vec<_>>())
    };
    let conf = column(|r| r.conf)?;
    let size = column(|r| r.size as f64)?;
    let unc = column(|r| r.unc)?;
    let comp = column(|r| r.comp)?;

    for (k, (i, r)) in valid.iter().enumerate() {
        let norm = NormalizedScores {
            conf: conf[k],
            size: size[k],
            unc: unc[k],
            comp: comp[k],
        };
        let s = SampleScores {
            sample_id: ids[*i].clone(),
            raw: *r,
            norm,
            r_rep: rep_score(norm.conf, norm.size, config.alpha),
            r_diff: diff_score(norm.unc, norm.comp, config.gamma),
        };
        records[*i] = Some(ScoreRecord::from(&s));
    }

    Ok(ScoredDataset {
        records: records.into_iter().map(|r| r.expect("every slot filled")).collect(),
    })
}

pub struct ScoringInput {
    pub sample_id: String,
    pub prob: ProbabilityVolume,
    pub gt: LabelMask,
}

/// Score a whole episode. Raw scores fan out over the current rayon pool;
/// output order follows input order regardless of worker count.
pub fn score_dataset(samples: &[ScoringInput], config: &ScoringConfig) -> Result<ScoredDataset> {
    config.validate()?;
    let raw = samples
        .par_iter()
        .map(|s| (s.sample_id.clone(), raw_scores(&s.prob, &s.gt, config)))
        .collect();
    finalize_scores(raw, config)
}
