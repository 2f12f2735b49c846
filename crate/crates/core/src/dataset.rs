//! Synthetic audio-visual event clips.
//!
//! Each class has a fixed random audio prototype and visual prototype. Event
//! segments sit near their class prototypes, perturbed by a latent shared
//! between the two modalities plus independent noise, all scaled by `jitter`.
//! The visual object occupies one spatial location; the others show clutter.
//! Some background segments carry a distractor: an event visible or audible
//! in one modality only. They stay labelled background, so a single modality
//! cannot resolve them.

use std::path::Path;

use crate::codec::{FeatureSequence, VisualSequence};
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numeric::{sample_normal, RealMatrix, SeededRng};
use crate::tensor_io::{load_named, save_named, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub samples: usize,
    pub segments: usize,
    /// Event classes plus background (the last index).
    pub classes: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub locations: usize,
    pub latent_dim: usize,
    pub jitter: f64,
    /// Probability that a background segment carries a one-modality event.
    pub distractor_rate: f64,
    pub min_span: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            segments: 10,
            classes: 5,
            audio_dim: 16,
            visual_dim: 24,
            locations: 4,
            latent_dim: 4,
            jitter: 0.5,
            distractor_rate: 0.3,
            min_span: 2,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("need at least one event class plus background".into()));
        }
        if self.segments < 2 || self.min_span < 1 || self.min_span > self.segments {
            return Err(Error::Config(format!("bad span constraint {} within {} segments", self.min_span, self.segments)));
        }
        if self.audio_dim == 0 || self.visual_dim == 0 || self.locations == 0 {
            return Err(Error::Config("feature widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) || self.jitter < 0.0 {
            return Err(Error::Config("distractor rate must lie in [0, 1] and jitter be nonnegative".into()));
        }
        Ok(())
    }
}

/// Fixed per-class prototypes and latent mixing maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub audio: RealMatrix,
    pub visual: RealMatrix,
    /// Visual clutter at non-object locations.
    pub clutter: Vec<f64>,
    pub mix_audio: RealMatrix,
    pub mix_visual: RealMatrix,
}

impl Prototypes {
    pub fn draw(cfg: &DatasetConfig, rng: &mut SeededRng) -> Self {
        let z = cfg.latent_dim.max(1) as f64;
        Self {
            audio: sample_normal(rng, cfg.classes, cfg.audio_dim, 1.0),
            visual: sample_normal(rng, cfg.classes, cfg.visual_dim, 1.0),
            clutter: sample_normal(rng, 1, cfg.visual_dim, 1.0).into_data(),
            mix_audio: sample_normal(rng, cfg.latent_dim, cfg.audio_dim, 1.0 / z.sqrt()),
            mix_visual: sample_normal(rng, cfg.latent_dim, cfg.visual_dim, 1.0 / z.sqrt()),
        }
    }
}

/// A dataset plus where every sample's event lies.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples and the rest.
    pub fn split(&self, n: usize) -> (&[Sample], &[Sample]) {
        self.samples.split_at(n.min(self.samples.len()))
    }
}

fn perturbed(base: &[f64], mix: &RealMatrix, latent: &[f64], jitter: f64, rng: &mut SeededRng) -> Vec<f64> {
    base.iter()
        .enumerate()
        .map(|(i, &b)| {
            if jitter == 0.0 {
                return b;
            }
            let shared: f64 = latent.iter().enumerate().map(|(j, z)| z * mix[(j, i)]).sum();
            b + jitter * (shared + rng.standard_normal())
        })
        .collect()
}

pub fn synth_dataset(cfg: &DatasetConfig, rng: &mut SeededRng) -> Result<Dataset> {
    cfg.validate()?;
    let protos = Prototypes::draw(cfg, &mut rng.derive("prototypes"));
    let background = cfg.classes - 1;
    let events = background.max(1);
    let t_len = cfg.segments;
    let mut samples = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let class = if background == 0 { 0 } else { rng.range(0, events) };
        let span = rng.range(cfg.min_span, t_len + 1);
        let start = rng.range(0, t_len - span + 1);
        let object = rng.range(0, cfg.locations);
        let mut labels = vec![background; t_len];
        let mut audio = RealMatrix::zeros(t_len, cfg.audio_dim);
        let mut visual = Vec::with_capacity(t_len);
        for (t, label) in labels.iter_mut().enumerate() {
            let in_event = t >= start && t < start + span;
            let (mut audio_class, mut visual_class) = (background, background);
            if in_event {
                *label = class;
                audio_class = class;
                visual_class = class;
            } else if background > 0 && rng.uniform() < cfg.distractor_rate {
                let other = rng.range(0, events);
                if rng.uniform() < 0.5 {
                    audio_class = other;
                } else {
                    visual_class = other;
                }
            }
            let latent: Vec<f64> = (0..cfg.latent_dim).map(|_| rng.standard_normal()).collect();
            let a = perturbed(protos.audio.row(audio_class), &protos.mix_audio, &latent, cfg.jitter, rng);
            audio.row_mut(t).copy_from_slice(&a);
            let mut v = RealMatrix::zeros(cfg.locations, cfg.visual_dim);
            for j in 0..cfg.locations {
                let row = if j == object {
                    perturbed(protos.visual.row(visual_class), &protos.mix_visual, &latent, cfg.jitter, rng)
                } else {
                    protos
                        .clutter
                        .iter()
                        .map(|&c| if cfg.jitter == 0.0 { c } else { c + cfg.jitter * rng.standard_normal() })
                        .collect()
                };
                v.row_mut(j).copy_from_slice(&row);
            }
            visual.push(v);
        }
        samples.push(Sample { audio: FeatureSequence::new(audio)?, visual: VisualSequence::new(visual)?, labels });
    }
    Ok(Dataset { samples, classes: cfg.classes })
}

/// Writes the dataset as three named tensors: `audio` `[N, T, d_a]`,
/// `visual` `[N, T, k, d_v]` and `labels` `[N, T]`.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let first = data.samples.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let (n, t) = (data.len(), first.segments());
    let (da, k, dv) = (first.audio.dim(), first.visual.locations(), first.visual.dim());
    let mut audio = Vec::with_capacity(n * t * da);
    let mut visual = Vec::with_capacity(n * t * k * dv);
    let mut labels = Vec::with_capacity(n * t);
    for s in &data.samples {
        if s.segments() != t || s.audio.dim() != da || s.visual.locations() != k || s.visual.dim() != dv {
            return Err(Error::ShapeMismatch("samples have differing shapes".into()));
        }
        audio.extend_from_slice(s.audio.data.data());
        for seg in &s.visual.segments {
            visual.extend_from_slice(seg.data());
        }
        labels.extend(s.labels.iter().map(|&c| c as f64));
    }
    save_named(
        path,
        &[
            ("audio".into(), Tensor::from_f64(vec![n, t, da], &audio)?),
            ("visual".into(), Tensor::from_f64(vec![n, t, k, dv], &visual)?),
            ("labels".into(), Tensor::from_f64(vec![n, t], &labels)?),
            ("classes".into(), Tensor::from_f64(vec![1], &[data.classes as f64])?),
        ],
    )
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let named = load_named(path)?;
    let get = |name: &str| {
        named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("dataset is missing tensor '{name}'")))
    };
    let (audio, visual, labels, classes) = (get("audio")?, get("visual")?, get("labels")?, get("classes")?);
    let bad = || Error::Format("inconsistent dataset tensor shapes".into());
    let [n, t, da] = audio.dims[..] else { return Err(bad()) };
    let [n2, t2, k, dv] = visual.dims[..] else { return Err(bad()) };
    if n2 != n || t2 != t || labels.dims != [n, t] {
        return Err(bad());
    }
    let classes = classes.data.first().copied().ok_or_else(bad)? as usize;
    let (audio, visual) = (audio.to_f64(), visual.to_f64());
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let a = RealMatrix::from_vec(t, da, audio[i * t * da..(i + 1) * t * da].to_vec())?;
        let segs = (0..t)
            .map(|s| {
                let off = (i * t + s) * k * dv;
                RealMatrix::from_vec(k, dv, visual[off..off + k * dv].to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let lab: Vec<usize> = labels.data[i * t..(i + 1) * t].iter().map(|&c| c as usize).collect();
        if lab.iter().any(|&c| c >= classes) {
            return Err(Error::Format("label out of range".into()));
        }
        samples.push(Sample { audio: FeatureSequence::new(a)?, visual: VisualSequence::new(segs)?, labels: lab });
    }
    Ok(Dataset { samples, classes })
}
