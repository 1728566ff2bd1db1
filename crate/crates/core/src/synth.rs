//! Synthetic cohorts with planted per-modality disease signatures.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{
    signal_path, write_manifest, write_signal_file, CohortManifest, Modality, Recording,
    SubjectRecord, MANIFEST_FILE, SIGNAL_DIR,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, label_hash};

pub const EFFECTS_FILE: &str = "effects.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseWaveform {
    SinusoidMix,
    BandNoise,
}

/// Prevalence and per-modality template amplitude of one outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeEffect {
    pub name: String,
    pub prevalence: f64,
    #[serde(default)]
    pub eeg: f64,
    #[serde(default)]
    pub ecg: f64,
    #[serde(default)]
    pub resp: f64,
}

impl OutcomeEffect {
    pub fn new(name: &str, prevalence: f64, eeg: f64, ecg: f64, resp: f64) -> Self {
        OutcomeEffect {
            name: name.to_string(),
            prevalence,
            eeg,
            ecg,
            resp,
        }
    }

    pub fn effect(&self, modality: Modality) -> f64 {
        match modality {
            Modality::Eeg => self.eeg,
            Modality::Ecg => self.ecg,
            Modality::Resp => self.resp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub segments_per_subject: usize,
    pub outcomes: Vec<OutcomeEffect>,
    pub base_waveform: BaseWaveform,
    /// SD of white noise added on top of the unit-RMS base signal.
    pub noise_sigma: f64,
    /// Share of a positive subject's segments that carry the template.
    pub planted_fraction: f64,
    /// Scale of the label-correlated shifts in age, sex, BMI, SBP and FRS.
    pub covariate_shift: f64,
    pub modalities: Vec<Modality>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 200,
            segments_per_subject: 20,
            outcomes: vec![
                OutcomeEffect::new("AF", 0.3, 0.0, 3.0, 0.0),
                OutcomeEffect::new("HTN", 0.4, 2.0, 0.0, 0.0),
                OutcomeEffect::new("CHF", 0.25, 0.0, 0.0, 2.0),
            ],
            base_waveform: BaseWaveform::SinusoidMix,
            noise_sigma: 0.5,
            planted_fraction: 0.3,
            covariate_shift: 1.0,
            modalities: Modality::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_subjects == 0 || self.segments_per_subject == 0 {
            return bad("n_subjects and segments_per_subject must be positive".into());
        }
        if self.outcomes.is_empty() {
            return bad("at least one outcome is required".into());
        }
        for (i, o) in self.outcomes.iter().enumerate() {
            if self.outcomes[..i].iter().any(|p| p.name == o.name) {
                return bad(format!("duplicate outcome {:?}", o.name));
            }
            if !(o.prevalence > 0.0 && o.prevalence < 1.0) {
                return bad(format!("prevalence of {} must lie in (0, 1)", o.name));
            }
            if [o.eeg, o.ecg, o.resp]
                .iter()
                .any(|e| !(*e >= 0.0) || !e.is_finite())
            {
                return bad(format!(
                    "effect sizes of {} must be finite and nonnegative",
                    o.name
                ));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and nonnegative".into());
        }
        if !(0.1..=1.0).contains(&self.planted_fraction) {
            return bad("planted_fraction must lie in [0.1, 1]".into());
        }
        if !self.covariate_shift.is_finite() {
            return bad("covariate_shift must be finite".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is required".into());
        }
        Ok(())
    }

    pub fn outcome_names(&self) -> Vec<String> {
        self.outcomes.iter().map(|o| o.name.clone()).collect()
    }

    pub fn planted_segments(&self) -> usize {
        ((self.planted_fraction * self.segments_per_subject as f64).ceil() as usize)
            .clamp(1, self.segments_per_subject)
    }
}

/// Frequency band (Hz) of the base rhythm for each modality.
fn band(modality: Modality) -> (f64, f64) {
    match modality {
        Modality::Eeg => (1.0, 20.0),
        Modality::Ecg => (0.8, 8.0),
        Modality::Resp => (0.1, 0.6),
    }
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

fn sinusoid_mix(rng: &mut ChaCha8Rng, modality: Modality, len: usize, parts: usize) -> Vec<f64> {
    let (lo, hi) = band(modality);
    let rate = modality.nominal_rate_hz();
    let comps: Vec<(f64, f64, f64)> = (0..parts)
        .map(|_| {
            (
                rng.random_range(lo..hi),
                rng.random_range(0.0..TAU),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let mut x: Vec<f64> = (0..len)
        .map(|t| {
            let s = t as f64 / rate;
            comps
                .iter()
                .map(|(f, ph, a)| a * (TAU * f * s + ph).sin())
                .sum()
        })
        .collect();
    normalize_rms(&mut x);
    x
}

fn band_noise(rng: &mut ChaCha8Rng, modality: Modality, len: usize) -> Vec<f64> {
    let (_, hi) = band(modality);
    let window = ((modality.nominal_rate_hz() / hi).round() as usize).max(1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let white: Vec<f64> = (0..len + window).map(|_| normal.sample(rng)).collect();
    let mut x: Vec<f64> = white
        .windows(window)
        .take(len)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    normalize_rms(&mut x);
    x
}

/// Fixed unit-RMS smooth waveform for one (outcome, modality) pair.
pub fn template(seed: u64, outcome: &str, modality: Modality) -> Vec<f64> {
    let key = derive_seed(seed ^ label_hash(outcome), 1000 + modality.tag() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    sinusoid_mix(&mut rng, modality, modality.nominal_segment_len(), 3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub record: SubjectRecord,
    pub recordings: Vec<Recording>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub outcome: String,
    pub modality: Modality,
    pub effect_size: f64,
    pub prevalence: f64,
    pub n_positive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub manifest: CohortManifest,
    pub subjects: Vec<SynthSubject>,
    pub effects: Vec<EffectRow>,
}

pub fn subject_id(index: usize) -> String {
    format!("S{index:04}")
}

/// One subject, reproducible from the cohort seed and its index alone.
pub fn generate_subject(
    config: &SynthConfig,
    index: usize,
    templates: &[Vec<Vec<f64>>],
) -> SynthSubject {
    let seed = derive_seed(config.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = config
        .outcomes
        .iter()
        .map(|o| rng.random_bool(o.prevalence))
        .collect();
    let load = config.covariate_shift * labels.iter().filter(|&&y| y).count() as f64;
    let normal = |m: f64, s: f64| Normal::new(m, s).expect("finite normal");
    let age = normal(55.0 + 5.0 * load, 10.0)
        .sample(&mut rng)
        .clamp(20.0, 95.0);
    let sex = u8::from(rng.random_bool((0.5 + 0.1 * load).clamp(0.05, 0.95)));
    let bmi = normal(28.0 + 1.5 * load, 4.0)
        .sample(&mut rng)
        .clamp(15.0, 60.0);
    let sbp = normal(125.0 + 8.0 * load, 15.0)
        .sample(&mut rng)
        .clamp(80.0, 220.0);
    let frs = 0.06 * (age - 40.0)
        + 0.4 * f64::from(sex)
        + 0.02 * (sbp - 120.0)
        + normal(0.0, 0.5).sample(&mut rng);
    let id = subject_id(index);
    let round = |v: f64| (v * 100.0).round() / 100.0;
    let record = SubjectRecord {
        subject_id: id.clone(),
        age: Some(round(age)),
        sex: Some(sex),
        bmi: Some(round(bmi)),
        sbp: Some(round(sbp)),
        frs: Some(round(frs)),
        outcomes: labels.iter().map(|&y| Some(y)).collect(),
    };

    let recordings = config
        .modalities
        .iter()
        .map(|&m| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + m.tag() as u64));
            let len = m.nominal_segment_len();
            let noise = Normal::new(0.0, 1.0).expect("unit normal");
            let mut samples = Vec::with_capacity(len * config.segments_per_subject);
            let planted: Vec<Vec<usize>> = config
                .outcomes
                .iter()
                .map(|_| {
                    sample(
                        &mut rng,
                        config.segments_per_subject,
                        config.planted_segments(),
                    )
                    .into_vec()
                })
                .collect();
            for s in 0..config.segments_per_subject {
                let mut x = match config.base_waveform {
                    BaseWaveform::SinusoidMix => sinusoid_mix(&mut rng, m, len, 3),
                    BaseWaveform::BandNoise => band_noise(&mut rng, m, len),
                };
                for v in &mut x {
                    *v += config.noise_sigma * noise.sample(&mut rng);
                }
                for (k, o) in config.outcomes.iter().enumerate() {
                    let effect = o.effect(m);
                    if labels[k] && effect > 0.0 && planted[k].contains(&s) {
                        let tpl = &templates[k][m.tag() as usize];
                        for (v, t) in x.iter_mut().zip(tpl) {
                            *v += effect * t;
                        }
                    }
                }
                samples.extend(x.into_iter().map(|v| v as f32));
            }
            Recording {
                subject_id: id.clone(),
                modality: m,
                sample_rate_hz: m.nominal_rate_hz(),
                samples,
            }
        })
        .collect();
    SynthSubject { record, recordings }
}

fn templates(config: &SynthConfig) -> Vec<Vec<Vec<f64>>> {
    config
        .outcomes
        .iter()
        .map(|o| {
            Modality::ALL
                .iter()
                .map(|&m| template(config.seed, &o.name, m))
                .collect()
        })
        .collect()
}

fn effect_table(config: &SynthConfig, manifest: &CohortManifest) -> Vec<EffectRow> {
    let mut rows = Vec::new();
    for o in &config.outcomes {
        let n_positive = manifest
            .subject_ids()
            .filter(|id| manifest.label(id, &o.name) == Some(true))
            .count();
        for &m in &config.modalities {
            rows.push(EffectRow {
                outcome: o.name.clone(),
                modality: m,
                effect_size: o.effect(m),
                prevalence: o.prevalence,
                n_positive,
            });
        }
    }
    rows
}

pub fn effects_csv(rows: &[EffectRow]) -> String {
    let mut out = String::from("outcome,modality,effect_size,prevalence,n_positive\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.outcome, r.modality, r.effect_size, r.prevalence, r.n_positive
        );
    }
    out
}

pub fn generate_cohort(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let templates = templates(config);
    let subjects: Vec<SynthSubject> = (0..config.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(config, i, &templates))
        .collect();
    let manifest = CohortManifest::new(
        config.outcome_names(),
        subjects.iter().map(|s| s.record.clone()).collect(),
    )?;
    let effects = effect_table(config, &manifest);
    Ok(SynthCohort {
        manifest,
        subjects,
        effects,
    })
}

/// Writes signals, `manifest.csv` and `effects.csv` under `dir`, generating
/// subjects in parallel without holding the whole cohort in memory.
pub fn write_cohort(config: &SynthConfig, dir: &Path) -> Result<(CohortManifest, Vec<EffectRow>)> {
    config.validate()?;
    let signals = dir.join(SIGNAL_DIR);
    fs::create_dir_all(&signals).map_err(|e| Error::io(&signals, e))?;
    let templates = templates(config);
    let records = (0..config.n_subjects)
        .into_par_iter()
        .map(|i| {
            let s = generate_subject(config, i, &templates);
            for rec in &s.recordings {
                write_signal_file(rec, signal_path(dir, &rec.subject_id, rec.modality))?;
            }
            Ok(s.record)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CohortManifest::new(config.outcome_names(), records)?;
    write_manifest(&manifest, dir.join(MANIFEST_FILE))?;
    let effects = effect_table(config, &manifest);
    let path = dir.join(EFFECTS_FILE);
    fs::write(&path, effects_csv(&effects)).map_err(|e| Error::io(&path, e))?;
    Ok((manifest, effects))
}
