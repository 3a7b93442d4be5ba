//! Synthetic lesion corpus for self-contained runs.
//!
//! Each sample gets one to three random ellipsoidal lesions as ground truth.
//! Its probability map is the ground truth smoothed by iterated 6-neighbour
//! box averaging plus seeded uniform noise, clamped to `[0, 1]`. Modality
//! channels are lesion-contrast volumes with noise. Every episode lists a
//! different modality set so that streams exercise channel inflation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::manifest::{EpisodeManifest, SampleEntry, MANIFEST_VERSION};
use crate::io::schema;
use crate::io::vol1::{self, Vol1Tensor};
use crate::rng::Prng;
use crate::scoring::ScoringConfig;
use crate::stream::{StreamConfig, STREAM_CONFIG_VERSION};
use crate::volume::{linear_index, Dims, LabelMask};

/// `(lesion type, modalities)` per episode, cycled when more episodes are requested.
const EPISODES: [(&str, &[&str]); 5] = [
    ("brain tumor", &["T1", "T2", "FLAIR"]),
    ("stroke", &["T1", "FLAIR", "DWI"]),
    ("multiple sclerosis", &["T2", "DWI"]),
    ("stroke", &["T1", "T1C"]),
    ("white matter hyperintensity", &["FLAIR", "PD"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub episodes: usize,
    pub samples: usize,
    pub dims: Dims,
    pub seed: u64,
    /// Buffer capacity written into the generated stream config.
    pub beta: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            episodes: 3,
            samples: 20,
            dims: [32, 32, 32],
            seed: 0,
            beta: 10,
        }
    }
}

pub struct SynthSample {
    pub gt: LabelMask,
    pub prob: Vec<f32>,
    pub modalities: Vec<(String, Vec<f32>)>,
}

pub fn episode_modalities(episode: usize) -> (&'static str, &'static [&'static str]) {
    EPISODES[episode % EPISODES.len()]
}

fn ellipsoid_lesions(rng: &mut Prng, dims: Dims) -> LabelMask {
    let blobs = 1 + rng.below(3) as usize;
    let mut mask = LabelMask::empty(dims).expect("dims validated");
    for _ in 0..blobs {
        let mut center = [0.0f64; 3];
        let mut radii = [0.0f64; 3];
        for a in 0..3 {
            let n = dims[a] as f64;
            let margin = (n / 8.0).floor();
            center[a] = (margin + rng.next_f64() * (n - 2.0 * margin)).floor().min(n - 1.0);
            radii[a] = 1.0 + rng.next_f64() * (n / 6.0);
        }
        let [cx, cy, cz] = center;
        mask.set(cx as usize, cy as usize, cz as usize, true);
        for x in 0..dims[0] {
            let dx = (x as f64 - cx) / radii[0];
            if dx.abs() > 1.0 {
                continue;
            }
            for y in 0..dims[1] {
                let dy = (y as f64 - cy) / radii[1];
                if dx * dx + dy * dy > 1.0 {
                    continue;
                }
                for z in 0..dims[2] {
                    let dz = (z as f64 - cz) / radii[2];
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        mask.set(x, y, z, true);
                    }
                }
            }
        }
    }
    mask
}

fn box_blur(dims: Dims, src: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let mut sum = src[linear_index(dims, x, y, z)];
                let mut n = 1.0f32;
                let mut add = |xx: usize, yy: usize, zz: usize| {
                    sum += src[linear_index(dims, xx, yy, zz)];
                    n += 1.0;
                };
                if x > 0 {
                    add(x - 1, y, z);
                }
                if x + 1 < dims[0] {
                    add(x + 1, y, z);
                }
                if y > 0 {
                    add(x, y - 1, z);
                }
                if y + 1 < dims[1] {
                    add(x, y + 1, z);
                }
                if z > 0 {
                    add(x, y, z - 1);
                }
                if z + 1 < dims[2] {
                    add(x, y, z + 1);
                }
                out[linear_index(dims, x, y, z)] = sum / n;
            }
        }
    }
    out
}

pub fn synth_sample(seed: u64, episode: usize, index: usize, dims: Dims) -> SynthSample {
    let mut rng = Prng::derived(seed, &format!("synth/{episode}/{index}"), 0);
    let gt = ellipsoid_lesions(&mut rng, dims);

    let confidence = 0.55 + 0.45 * rng.next_f64() as f32;
    let mut prob: Vec<f32> = gt.data().iter().map(|&g| f32::from(g) * confidence).collect();
    for _ in 0..rng.below(4) {
        prob = box_blur(dims, &prob);
    }
    let amp = 0.35 * rng.next_f64();
    for p in &mut prob {
        let noise = (rng.next_f64() * 2.0 - 1.0) * amp;
        *p = (f64::from(*p) + noise).clamp(0.0, 1.0) as f32;
    }

    let (_, names) = episode_modalities(episode);
    let modalities = names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let base = 0.2 + 0.1 * m as f64;
            let contrast = 0.3 + 0.5 * rng.next_f64();
            let data = gt
                .data()
                .iter()
                .map(|&g| (base + contrast * f64::from(g) + 0.05 * rng.next_f64()) as f32)
                .collect();
            (name.to_string(), data)
        })
        .collect();

    SynthSample {
        gt,
        prob,
        modalities,
    }
}

pub struct SynthOutput {
    pub manifests: Vec<PathBuf>,
    pub stream_config: PathBuf,
}

/// Write `cfg.episodes` manifests with volumes plus a `stream.json` under `out`.
pub fn synth_corpus(cfg: &SynthConfig, out: &Path) -> Result<SynthOutput> {
    if cfg.dims.iter().any(|&d| d < 8) {
        return Err(Error::InvalidConfig(format!("dims {:?} must be at least 8", cfg.dims)));
    }
    if cfg.episodes == 0 || cfg.samples == 0 {
        return Err(Error::InvalidConfig("need at least one episode and one sample".into()));
    }
    let mut manifests = Vec::with_capacity(cfg.episodes);
    let mut rel_manifests = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let name = format!("episode-{e}");
        let dir = out.join(&name);
        let (lesion_type, names) = episode_modalities(e);

        let samples: Vec<SampleEntry> = (0..cfg.samples)
            .into_par_iter()
            .map(|i| -> Result<SampleEntry> {
                let s = synth_sample(cfg.seed, e, i, cfg.dims);
                let id = format!("ep{e}-case{i:03}");
                let dims = cfg.dims.to_vec();
                let gt = format!("volumes/{id}_gt.vol");
                let prob = format!("volumes/{id}_prob.vol");
                vol1::write_file(&dir.join(&gt), &Vol1Tensor::from(&s.gt))?;
                vol1::write_file(&dir.join(&prob), &Vol1Tensor::f32(dims.clone(), s.prob))?;
                let mut modalities = BTreeMap::new();
                for (m, data) in s.modalities {
                    let rel = format!("volumes/{id}_{}.vol", m.to_lowercase());
                    vol1::write_file(&dir.join(&rel), &Vol1Tensor::f32(dims.clone(), data))?;
                    modalities.insert(m, rel);
                }
                Ok(SampleEntry {
                    sample_id: id,
                    modalities,
                    gt,
                    prob,
                })
            })
            .collect::<Result<_>>()?;

        let manifest = EpisodeManifest {
            version: MANIFEST_VERSION,
            episode: name.clone(),
            lesion_type: lesion_type.to_string(),
            modalities: names.iter().map(|s| s.to_string()).collect(),
            samples,
            base_dir: dir.clone(),
        };
        let path = dir.join("manifest.json");
        crate::io::write_validated_json(&path, "manifest", &manifest, &schema::manifest())?;
        manifests.push(path);
        rel_manifests.push(format!("{name}/manifest.json"));
    }

    let stream = StreamConfig {
        version: STREAM_CONFIG_VERSION,
        episodes: rel_manifests,
        beta: cfg.beta,
        seed: cfg.seed,
        output_dir: "run".into(),
        scoring: ScoringConfig::default(),
        ..StreamConfig::default()
    };
    let stream_path = out.join("stream.json");
    crate::io::write_validated_json(&stream_path, "stream config", &stream, &schema::stream_config())?;
    Ok(SynthOutput {
        manifests,
        stream_config: stream_path,
    })
}
