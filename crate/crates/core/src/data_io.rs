//! On-disk signal and cohort formats, segmentation into 30-second windows,
//! and the train/test split.
//!
//! Signal file layout (little-endian):
//!
//! ```text
//! "PSGS" | version u32 | modality u8 | 3 pad bytes | sample_rate_hz f64
//!        | n_samples u64 | id_len u16 | id bytes | n_samples x f32
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGNAL_MAGIC: [u8; 4] = *b"PSGS";
pub const SIGNAL_VERSION: u32 = 1;
pub const SEGMENT_SECONDS: f64 = 30.0;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Modality {
    Eeg,
    Ecg,
    Resp,
}

impl TryFrom<String> for Modality {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Modality> for String {
    fn from(m: Modality) -> String {
        m.as_str().to_string()
    }
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Eeg, Modality::Ecg, Modality::Resp];

    pub fn tag(self) -> u8 {
        match self {
            Modality::Eeg => 0,
            Modality::Ecg => 1,
            Modality::Resp => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Modality::Eeg),
            1 => Ok(Modality::Ecg),
            2 => Ok(Modality::Resp),
            other => Err(Error::UnknownModality(other.to_string())),
        }
    }

    pub fn nominal_rate_hz(self) -> f64 {
        match self {
            Modality::Eeg | Modality::Ecg => 125.0,
            Modality::Resp => 10.0,
        }
    }

    /// Samples in one nominal 30-second segment.
    pub fn nominal_segment_len(self) -> usize {
        window_len(SEGMENT_SECONDS, self.nominal_rate_hz())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Eeg => "EEG",
            Modality::Ecg => "ECG",
            Modality::Resp => "RESP",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EEG" => Ok(Modality::Eeg),
            "ECG" => Ok(Modality::Ecg),
            "RESP" => Ok(Modality::Resp),
            _ => Err(Error::UnknownModality(s.to_string())),
        }
    }
}

fn window_len(seconds: f64, rate: f64) -> usize {
    (seconds * rate).round() as usize
}

/// One subject's waveform for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub modality: Modality,
    pub sample_rate_hz: f64,
    pub samples: Vec<f32>,
}

impl Recording {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if self.subject_id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument("subject id too long".into()));
        }
        if let Some(index) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let id = self.subject_id.as_bytes();
        let mut out = Vec::with_capacity(30 + id.len() + 4 * self.samples.len());
        out.extend_from_slice(&SIGNAL_MAGIC);
        out.extend_from_slice(&SIGNAL_VERSION.to_le_bytes());
        out.push(self.modality.tag());
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != SIGNAL_MAGIC {
            return Err(Error::BadMagic {
                expected: SIGNAL_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != SIGNAL_VERSION {
            return Err(Error::VersionMismatch {
                expected: SIGNAL_VERSION,
                found: version,
            });
        }
        let modality = Modality::from_tag(r.u8()?)?;
        r.take(3)?;
        let sample_rate_hz = r.f64()?;
        let n = r.u64()? as usize;
        let id_len = r.u16()? as usize;
        let subject_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|e| Error::Encoding(e.to_string()))?;
        let payload = r.take(n.checked_mul(4).ok_or(Error::Truncated {
            needed: usize::MAX,
            available: r.remaining(),
        })?)?;
        let samples: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if r.remaining() != 0 {
            return Err(Error::TrailingBytes(r.remaining()));
        }
        let rec = Recording {
            subject_id,
            modality,
            sample_rate_hz,
            samples,
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    pub(crate) fn string_u16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub(crate) fn string_u32(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Encoding(e.to_string()))
    }
}

pub fn read_signal_file(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Recording::from_bytes(&bytes)
}

pub fn write_signal_file(recording: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = recording.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A non-overlapping 30-second window of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub subject_id: String,
    pub modality: Modality,
    pub index: usize,
    pub samples: Vec<f32>,
}

/// Cuts a recording into consecutive full windows; the trailing partial
/// window is dropped.
pub fn segment_recording(recording: &Recording, window_seconds: f64) -> Vec<Segment> {
    let len = window_len(window_seconds, recording.sample_rate_hz);
    if len == 0 {
        return Vec::new();
    }
    recording
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(index, chunk)| Segment {
            subject_id: recording.subject_id.clone(),
            modality: recording.modality,
            index,
            samples: chunk.to_vec(),
        })
        .collect()
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub age: Option<f64>,
    /// 1 = male, 0 = female.
    pub sex: Option<u8>,
    pub bmi: Option<f64>,
    pub sbp: Option<f64>,
    pub frs: Option<f64>,
    pub outcomes: Vec<Option<bool>>,
}

impl SubjectRecord {
    /// Eligible for model fitting: age, sex and BMI all present.
    pub fn has_core_covariates(&self) -> bool {
        self.age.is_some() && self.sex.is_some() && self.bmi.is_some()
    }
}

pub const MANIFEST_FIXED_COLUMNS: [&str; 6] = ["subject_id", "age", "sex", "bmi", "sbp", "frs"];

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    outcomes: Vec<String>,
    rows: Vec<SubjectRecord>,
    index: HashMap<String, usize>,
}

/// Names must survive an unquoted CSV cell with surrounding whitespace
/// trimmed.
fn check_cell_name(name: &str, row: usize, column: &str) -> Result<()> {
    let bad = name.is_empty() || name.trim() != name || name.contains([',', '"', '\n', '\r']);
    if bad {
        return Err(Error::Manifest {
            row,
            column: column.into(),
            message: format!("{name:?} is not a valid name"),
        });
    }
    Ok(())
}

impl CohortManifest {
    pub fn new(outcomes: Vec<String>, rows: Vec<SubjectRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for o in &outcomes {
            check_cell_name(o, 0, "header")?;
            if MANIFEST_FIXED_COLUMNS.contains(&o.as_str()) || !seen.insert(o.as_str()) {
                return Err(Error::Manifest {
                    row: 0,
                    column: o.clone(),
                    message: "duplicate column".into(),
                });
            }
        }
        let mut index = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            check_cell_name(&r.subject_id, i + 1, "subject_id")?;
            if r.outcomes.len() != outcomes.len() {
                return Err(Error::Manifest {
                    row: i + 1,
                    column: "outcomes".into(),
                    message: format!(
                        "{} outcome values for {} outcome columns",
                        r.outcomes.len(),
                        outcomes.len()
                    ),
                });
            }
            for (col, v) in [("age", r.age), ("bmi", r.bmi)] {
                if let Some(v) = v {
                    if !(v > 0.0) {
                        return Err(Error::Manifest {
                            row: i + 1,
                            column: col.into(),
                            message: format!("must be positive, got {v}"),
                        });
                    }
                }
            }
            if index.insert(r.subject_id.clone(), i).is_some() {
                return Err(Error::DuplicateSubject(r.subject_id.clone()));
            }
        }
        Ok(CohortManifest {
            outcomes,
            rows,
            index,
        })
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn rows(&self) -> &[SubjectRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn outcome_index(&self, outcome: &str) -> Option<usize> {
        self.outcomes.iter().position(|o| o == outcome)
    }

    /// Label of `outcome` for `subject`; `None` when missing or unknown.
    pub fn label(&self, subject: &str, outcome: &str) -> Option<bool> {
        let j = self.outcome_index(outcome)?;
        self.subject(subject)?.outcomes[j]
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.subject_id.as_str())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = MANIFEST_FIXED_COLUMNS.join(",");
        for o in &self.outcomes {
            out.push(',');
            out.push_str(o);
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let mut fields = vec![
                r.subject_id.clone(),
                opt(r.age),
                r.sex.map(|s| s.to_string()).unwrap_or_default(),
                opt(r.bmi),
                opt(r.sbp),
                opt(r.frs),
            ];
            fields.extend(r.outcomes.iter().map(|o| match o {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.len() < MANIFEST_FIXED_COLUMNS.len()
            || header[..MANIFEST_FIXED_COLUMNS.len()] != MANIFEST_FIXED_COLUMNS
        {
            return Err(Error::Manifest {
                row: 0,
                column: "header".into(),
                message: format!(
                    "expected header to start with {}",
                    MANIFEST_FIXED_COLUMNS.join(",")
                ),
            });
        }
        let outcomes = header[MANIFEST_FIXED_COLUMNS.len()..].to_vec();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Manifest {
                row,
                column: "*".into(),
                message: e.to_string(),
            })?;
            if rec.len() != header.len() {
                return Err(Error::Manifest {
                    row,
                    column: "*".into(),
                    message: format!("{} fields, expected {}", rec.len(), header.len()),
                });
            }
            let real = |j: usize| -> Result<Option<f64>> {
                let s = &rec[j];
                if s.is_empty() {
                    return Ok(None);
                }
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(Error::Manifest {
                        row,
                        column: header[j].clone(),
                        message: format!("not a finite number: {s:?}"),
                    }),
                }
            };
            let binary = |j: usize| -> Result<Option<bool>> {
                match &rec[j] {
                    "" => Ok(None),
                    "0" => Ok(Some(false)),
                    "1" => Ok(Some(true)),
                    s => Err(Error::Manifest {
                        row,
                        column: header[j].clone(),
                        message: format!("expected 0, 1 or empty, got {s:?}"),
                    }),
                }
            };
            let subject_id = rec[0].to_string();
            if subject_id.is_empty() {
                return Err(Error::Manifest {
                    row,
                    column: "subject_id".into(),
                    message: "empty subject id".into(),
                });
            }
            rows.push(SubjectRecord {
                subject_id,
                age: real(1)?,
                sex: binary(2)?.map(u8::from),
                bmi: real(3)?,
                sbp: real(4)?,
                frs: real(5)?,
                outcomes: (MANIFEST_FIXED_COLUMNS.len()..header.len())
                    .map(binary)
                    .collect::<Result<_>>()?,
            });
        }
        CohortManifest::new(outcomes, rows)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CohortManifest::parse_csv(&text)
}

pub fn write_manifest(manifest: &CohortManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_csv_string()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortSplit {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub seed: u64,
}

impl CohortSplit {
    pub fn is_train(&self, id: &str) -> bool {
        self.train_ids.contains(id)
    }

    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.contains(id)
    }

    pub fn to_csv_string(&self) -> String {
        let mut rows: Vec<(&str, &str)> = self
            .train_ids
            .iter()
            .map(|id| (id.as_str(), "train"))
            .chain(self.test_ids.iter().map(|id| (id.as_str(), "test")))
            .collect();
        rows.sort();
        let mut out = String::from("subject_id,split\n");
        for (id, s) in rows {
            out.push_str(id);
            out.push(',');
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    /// Reads the `subject_id,split` table. The seed is not stored in the
    /// file and comes back as `seed`.
    pub fn parse_csv(text: &str, seed: u64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != ["subject_id", "split"] {
            return Err(Error::Manifest {
                row: 0,
                column: "header".into(),
                message: "expected subject_id,split".into(),
            });
        }
        let mut split = CohortSplit {
            train_ids: BTreeSet::new(),
            test_ids: BTreeSet::new(),
            seed,
        };
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let id = rec[0].to_string();
            let fresh = match &rec[1] {
                "train" => split.train_ids.insert(id.clone()),
                "test" => split.test_ids.insert(id.clone()),
                other => {
                    return Err(Error::Manifest {
                        row: i + 1,
                        column: "split".into(),
                        message: format!("unknown split {other:?}"),
                    })
                }
            };
            if !fresh || (split.train_ids.contains(&id) && split.test_ids.contains(&id)) {
                return Err(Error::DuplicateSubject(id));
            }
        }
        Ok(split)
    }
}

/// Seeded shuffle of the sorted subject ids; the first `round(ratio * N)`
/// become the training split.
pub fn split_cohort(manifest: &CohortManifest, ratio: f64, seed: u64) -> Result<CohortSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("empty manifest".into()));
    }
    let mut ids: Vec<String> = manifest.subject_ids().map(str::to_string).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let test_ids = ids.split_off(n_train);
    Ok(CohortSplit {
        train_ids: ids.into_iter().collect(),
        test_ids: test_ids.into_iter().collect(),
        seed,
    })
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SIGNAL_DIR: &str = "signals";

/// `<data_dir>/signals/<subject>_<MOD>.psgs`
pub fn signal_path(data_dir: &Path, subject_id: &str, modality: Modality) -> PathBuf {
    data_dir
        .join(SIGNAL_DIR)
        .join(format!("{subject_id}_{modality}.psgs"))
}

/// Segments of one modality for the listed subjects, in subject order.
/// Subjects without a recording for the modality contribute nothing.
pub fn load_segments<'a>(
    data_dir: &Path,
    subjects: impl IntoIterator<Item = &'a str>,
    modality: Modality,
) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for id in subjects {
        let path = signal_path(data_dir, id, modality);
        if !path.exists() {
            continue;
        }
        let rec = read_signal_file(&path)?;
        if rec.modality != modality || rec.subject_id != id {
            return Err(Error::Schema(format!(
                "{} holds {} {} instead of {id} {modality}",
                path.display(),
                rec.subject_id,
                rec.modality
            )));
        }
        out.extend(segment_recording(&rec, SEGMENT_SECONDS));
    }
    Ok(out)
}
