//! Parsers for the toolkit's external file formats and the IV/OOV
//! vocabulary machinery.
//!
//! Three formats are consumed:
//!
//! - detection records: one JSON object per line with fields `image_id`,
//!   `polygon` (array of `[x, y]` pairs), `score`, optional
//!   `transcription`, `model` and `scale`;
//! - ground truth: ICDAR-style lines `x1,y1,...,x4,y4,transcription`
//!   (transcriptions containing commas are re-joined from field 9 on);
//! - vocabulary: one word per line, blank lines ignored.
//!
//! Every parse error carries a 1-based line number pointing at the
//! offending record.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Point, Polygon};

/// Don't-care sentinel used by the ICDAR-style annotation convention.
pub const DEFAULT_DONT_CARE: &str = "###";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: score {score} outside [0, 1]")]
    ScoreRange { line: usize, score: f64 },
    #[error("line {line}: bad polygon: {source}")]
    BadPolygon {
        line: usize,
        source: GeometryError,
    },
    #[error("empty or don't-care word cannot be classified")]
    EmptyWord,
}

fn parse_err(line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        msg: msg.into(),
    }
}

/// One predicted word region with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub region: Polygon,
    pub score: f64,
    pub transcription: Option<String>,
    /// Producing model tag.
    pub model: String,
    /// Longer-side length (pixels) of the inference input this detection
    /// was produced at.
    pub scale: f64,
}

/// One annotated word region.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthWord {
    pub image_id: String,
    pub region: Polygon,
    pub transcription: String,
    pub dont_care: bool,
}

/// Wire form of a detection record; field names are part of the format.
#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    image_id: String,
    polygon: Vec<[f64; 2]>,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    transcription: Option<String>,
    model: String,
    scale: f64,
}

const KNOWN_FIELDS: [&str; 6] = [
    "image_id",
    "polygon",
    "score",
    "transcription",
    "model",
    "scale",
];

fn detection_from_line(line_no: usize, line: &str) -> Result<Detection, IngestError> {
    let value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| parse_err(line_no, format!("invalid record: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(line_no, "record is not an object"))?;
    for key in obj.keys() {
        if !KNOWN_FIELDS.contains(&key.as_str()) {
            log::warn!("line {line_no}: ignoring unknown field `{key}`");
        }
    }
    let rec: DetectionRecord = serde_json::from_value(value)
        .map_err(|e| parse_err(line_no, format!("invalid record: {e}")))?;
    if !(0.0..=1.0).contains(&rec.score) {
        return Err(IngestError::ScoreRange {
            line: line_no,
            score: rec.score,
        });
    }
    if rec.image_id.is_empty() {
        return Err(parse_err(line_no, "empty image_id"));
    }
    if !rec.scale.is_finite() || rec.scale <= 0.0 {
        return Err(parse_err(line_no, format!("scale must be positive, got {}", rec.scale)));
    }
    let vertices: Vec<Point> = rec.polygon.iter().map(|&[x, y]| Point::new(x, y)).collect();
    let region = Polygon::new(vertices).map_err(|source| IngestError::BadPolygon {
        line: line_no,
        source,
    })?;
    Ok(Detection {
        image_id: rec.image_id,
        region,
        score: rec.score,
        transcription: rec.transcription,
        model: rec.model,
        scale: rec.scale,
    })
}

/// Parses a detection file whose records may mix models and scales
/// (e.g. the fused output fed back into evaluation).
pub fn parse_detections_mixed<R: BufRead>(reader: R) -> Result<Vec<Detection>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err(line_no, format!("read error: {e}")))?;
        let line = strip_bom(line_no, &line);
        if line.trim().is_empty() {
            continue;
        }
        out.push(detection_from_line(line_no, line)?);
    }
    Ok(out)
}

/// Parses one per-model, per-scale detection file. Each record's `model`
/// and `scale` fields must match the declared values; a mismatch means
/// the file is mislabeled and is reported as a parse error.
pub fn parse_detections<R: BufRead>(
    reader: R,
    declared_model: &str,
    declared_scale: f64,
) -> Result<Vec<Detection>, IngestError> {
    if declared_scale.is_nan() || declared_scale <= 0.0 {
        return Err(parse_err(0, format!("declared scale must be positive, got {declared_scale}")));
    }
    let dets = parse_detections_mixed(reader)?;
    for (idx, d) in dets.iter().enumerate() {
        if d.model != declared_model {
            return Err(parse_err(
                idx + 1,
                format!("record model `{}` does not match declared `{declared_model}`", d.model),
            ));
        }
        if d.scale != declared_scale {
            return Err(parse_err(
                idx + 1,
                format!("record scale {} does not match declared {declared_scale}", d.scale),
            ));
        }
    }
    Ok(dets)
}

/// Serializes detections back to the line-delimited record format.
pub fn write_detections<W: std::io::Write>(
    mut writer: W,
    dets: &[Detection],
) -> std::io::Result<()> {
    for d in dets {
        let rec = DetectionRecord {
            image_id: d.image_id.clone(),
            polygon: d.region.vertices().iter().map(|p| [p.x, p.y]).collect(),
            score: d.score,
            transcription: d.transcription.clone(),
            model: d.model.clone(),
            scale: d.scale,
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn strip_bom(line_no: usize, line: &str) -> &str {
    if line_no == 1 {
        line.strip_prefix('\u{feff}').unwrap_or(line)
    } else {
        line
    }
}

/// Parses an ICDAR-style ground-truth file for one image.
///
/// Lines are `x1,y1,x2,y2,x3,y3,x4,y4,transcription`; when a line has
/// more than nine comma-separated fields the tail is re-joined with
/// commas (transcriptions may contain commas).
pub fn parse_ground_truth<R: BufRead>(
    reader: R,
    image_id: &str,
    dont_care_sentinel: &str,
) -> Result<Vec<GroundTruthWord>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err(line_no, format!("read error: {e}")))?;
        let line = strip_bom(line_no, &line).trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 9 {
            return Err(parse_err(
                line_no,
                format!("expected 8 coordinates + transcription, got {} fields", fields.len()),
            ));
        }
        let mut coords = [0.0f64; 8];
        for (i, f) in fields[..8].iter().enumerate() {
            coords[i] = f
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad coordinate `{f}`")))?;
        }
        let transcription = fields[8..].join(",");
        let vertices = vec![
            Point::new(coords[0], coords[1]),
            Point::new(coords[2], coords[3]),
            Point::new(coords[4], coords[5]),
            Point::new(coords[6], coords[7]),
        ];
        let region = Polygon::new(vertices).map_err(|source| IngestError::BadPolygon {
            line: line_no,
            source,
        })?;
        let dont_care = transcription == dont_care_sentinel;
        out.push(GroundTruthWord {
            image_id: image_id.to_string(),
            region,
            transcription,
            dont_care,
        });
    }
    Ok(out)
}

/// In-vocabulary / out-of-vocabulary word class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordClass {
    InVocabulary,
    OutOfVocabulary,
}

/// Normalized set of training-set words that defines IV membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: BTreeSet<String>,
    case_fold: bool,
}

impl Vocabulary {
    /// Builds the vocabulary from ground-truth words; don't-care entries
    /// and empty transcriptions are excluded, duplicates collapse.
    pub fn build(gt_words: &[GroundTruthWord], case_fold: bool) -> Self {
        Self::from_words(
            gt_words
                .iter()
                .filter(|w| !w.dont_care)
                .map(|w| w.transcription.as_str()),
            case_fold,
        )
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>, case_fold: bool) -> Self {
        let mut set = BTreeSet::new();
        for w in words {
            let n = normalize(w, case_fold);
            if !n.is_empty() {
                set.insert(n);
            }
        }
        Self {
            words: set,
            case_fold,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn case_fold(&self) -> bool {
        self.case_fold
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&normalize(word, self.case_fold))
    }

    /// Words in sorted order, for serialization.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|s| s.as_str())
    }

    /// Classifies a transcription as IV or OOV. Empty strings and the
    /// don't-care sentinel are not classifiable.
    pub fn classify(&self, transcription: &str, dont_care_sentinel: &str) -> Result<WordClass, IngestError> {
        if transcription.is_empty() || transcription == dont_care_sentinel {
            return Err(IngestError::EmptyWord);
        }
        if self.contains(transcription) {
            Ok(WordClass::InVocabulary)
        } else {
            Ok(WordClass::OutOfVocabulary)
        }
    }
}

/// Transcription normalization: simple case-folding when enabled,
/// nothing else.
pub fn normalize(word: &str, case_fold: bool) -> String {
    if case_fold {
        word.to_lowercase()
    } else {
        word.to_string()
    }
}

/// Reads a vocabulary file: one word per line, blank lines ignored.
pub fn read_vocabulary<R: BufRead>(reader: R, case_fold: bool) -> Result<Vocabulary, IngestError> {
    let mut words = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err(line_no, format!("read error: {e}")))?;
        let line = strip_bom(line_no, &line).trim();
        if !line.is_empty() {
            words.push(line.to_string());
        }
    }
    Ok(Vocabulary::from_words(words.iter().map(|s| s.as_str()), case_fold))
}
