//! File formats: feature matrices (binary and CSV), label sidecars,
//! cluster assignments, score traces, loss curves, and projection heads.
//!
//! The binary feature format is:
//!
//! ```text
//! magic "GCDF" | u16 version=1 | u64 n_points | u32 dim
//! n_points*dim f32 little-endian, row-major
//! u8 label flag (0/1) | if 1: n_points i64 little-endian (-1 = unlabelled)
//! ```
//!
//! The CSV feature format starts with a `dim=<D>` header, then one row of D
//! decimal floats per point with an optional trailing `label=<id|none>`
//! field. Floats are written with shortest-roundtrip formatting, so a CSV
//! roundtrip reproduces the exact values. All parsers report the byte or
//! line position of the first problem and never panic on malformed input.

use std::fs;
use std::path::Path;

use crate::contrastive::ProjectionHead;
use crate::dataset::FeatureMatrix;
use crate::error::{FormatError, GcdError, Result};

const FEATURE_MAGIC: [u8; 4] = *b"GCDF";
const HEAD_MAGIC: [u8; 4] = *b"GCDH";
const FORMAT_VERSION: u16 = 1;

/// Sequential reader over an in-memory payload that reports exact byte
/// offsets on underrun.
struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, at: 0 }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let found = self.buf.len() - self.at;
        if found < n {
            return Err(FormatError::Truncated {
                offset: self.at,
                expected: n,
                found,
            });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> std::result::Result<(), FormatError> {
        let rest = self.buf.len() - self.at;
        if rest != 0 {
            return Err(FormatError::BadValue {
                offset: self.at,
                detail: format!("{rest} trailing bytes beyond the declared payload"),
            });
        }
        Ok(())
    }
}

fn check_magic(c: &mut Cursor<'_>, expected: [u8; 4]) -> std::result::Result<(), FormatError> {
    let found: [u8; 4] = c.take(4)?.try_into().unwrap();
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    let offset = c.at;
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            offset,
        });
    }
    Ok(())
}

/// Saves features in the binary format; `labels` uses -1 for unlabelled
/// points. Values must fit in an f32.
pub fn save_features_binary(
    path: &Path,
    features: &FeatureMatrix,
    labels: Option<&[i64]>,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != features.n_points() {
            return Err(GcdError::InvalidInput(format!(
                "{} labels for {} points",
                l.len(),
                features.n_points()
            )));
        }
    }
    let (n, d) = (features.n_points(), features.dim());
    let mut out = Vec::with_capacity(4 + 2 + 8 + 4 + n * d * 4 + 1 + labels.map_or(0, |l| l.len() * 8));
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for (i, row) in features.values().rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(GcdError::InvalidInput(format!(
                    "feature value {v} at row {i}, column {j} does not fit in f32 storage"
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    match labels {
        Some(l) => {
            out.push(1);
            for &v in l {
                if v < -1 {
                    return Err(GcdError::InvalidInput(format!(
                        "label {v} is negative; only -1 (unlabelled) is allowed"
                    )));
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads the binary feature format; returns the matrix and, when the file
/// carries a label block, per-point labels with -1 meaning unlabelled.
pub fn load_features_binary(path: &Path) -> Result<(FeatureMatrix, Option<Vec<i64>>)> {
    let buf = fs::read(path)?;
    let mut c = Cursor::new(&buf);
    check_magic(&mut c, FEATURE_MAGIC)?;
    let n = c.u64()? as usize;
    let d = c.u32()? as usize;
    if n == 0 || d == 0 {
        return Err(FormatError::BadValue {
            offset: 6,
            detail: format!("feature shape {n} x {d} must be at least 1 x 1"),
        }
        .into());
    }
    let total = n
        .checked_mul(d)
        .filter(|t| t.checked_mul(4).is_some())
        .ok_or_else(|| FormatError::BadValue {
            offset: 6,
            detail: format!("feature shape {n} x {d} overflows the payload size"),
        })?;
    let mut data = Vec::with_capacity(total);
    for idx in 0..total {
        let offset = c.at;
        let v = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                value: format!("{v}"),
                position: format!("byte {offset} (row {}, column {})", idx / d, idx % d),
            }
            .into());
        }
        data.push(v as f64);
    }
    let flag_offset = c.at;
    let flag = c.take(1)?[0];
    let labels = match flag {
        0 => None,
        1 => {
            let mut l = Vec::with_capacity(n);
            for _ in 0..n {
                let offset = c.at;
                let v = i64::from_le_bytes(c.take(8)?.try_into().unwrap());
                if v < -1 {
                    return Err(FormatError::BadValue {
                        offset,
                        detail: format!("label {v} is negative; only -1 (unlabelled) is allowed"),
                    }
                    .into());
                }
                l.push(v);
            }
            Some(l)
        }
        other => {
            return Err(FormatError::BadValue {
                offset: flag_offset,
                detail: format!("label flag must be 0 or 1, found {other}"),
            }
            .into())
        }
    };
    c.finish()?;
    let features = FeatureMatrix::from_rows(n, d, data)?;
    Ok((features, labels))
}

/// Saves features as CSV with a `dim=<D>` header and shortest-roundtrip
/// decimal floats.
pub fn save_features_csv(
    path: &Path,
    features: &FeatureMatrix,
    labels: Option<&[i64]>,
) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != features.n_points() {
            return Err(GcdError::InvalidInput(format!(
                "{} labels for {} points",
                l.len(),
                features.n_points()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(&format!("dim={}\n", features.dim()));
    for (i, row) in features.values().rows().into_iter().enumerate() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        if let Some(l) = labels {
            if l[i] == -1 {
                out.push_str(",label=none");
            } else {
                out.push_str(&format!(",label={}", l[i]));
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads the CSV feature format. Either every row carries a trailing
/// `label=` field or none does.
pub fn load_features_csv(path: &Path) -> Result<(FeatureMatrix, Option<Vec<i64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(FormatError::BadHeader {
        line: 1,
        detail: "empty file; expected a dim=<D> header".into(),
    })?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|v| v.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| FormatError::BadHeader {
            line: 1,
            detail: format!("expected dim=<D> with D >= 1, found {header:?}"),
        })?;

    let mut data = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut labelled_rows: Option<bool> = None;
    let mut n = 0usize;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').collect();
        let has_label = fields.last().is_some_and(|f| f.trim().starts_with("label="));
        match labelled_rows {
            None => labelled_rows = Some(has_label),
            Some(expected) if expected != has_label => {
                return Err(FormatError::BadField {
                    line: line_no,
                    detail: "label field present on some rows but not others".into(),
                }
                .into())
            }
            Some(_) => {}
        }
        if has_label {
            let field = fields.pop().unwrap().trim();
            let value = &field["label=".len()..];
            if value == "none" {
                labels.push(-1);
            } else {
                let id: i64 = value.parse().map_err(|_| FormatError::BadField {
                    line: line_no,
                    detail: format!("expected label=<integer|none>, found {field:?}"),
                })?;
                if id < -1 {
                    return Err(FormatError::BadField {
                        line: line_no,
                        detail: format!("label {id} is negative; only -1 (unlabelled) is allowed"),
                    }
                    .into());
                }
                labels.push(id);
            }
        }
        if fields.len() != dim {
            return Err(FormatError::RowLengthMismatch {
                line: line_no,
                expected: dim,
                found: fields.len(),
            }
            .into());
        }
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| FormatError::BadField {
                line: line_no,
                detail: format!("expected a decimal float in column {}, found {field:?}", col + 1),
            })?;
            if !v.is_finite() {
                return Err(FormatError::NonFinite {
                    value: field.trim().to_string(),
                    position: format!("line {line_no}, column {}", col + 1),
                }
                .into());
            }
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(FormatError::BadHeader {
            line: 1,
            detail: "no data rows after the header".into(),
        }
        .into());
    }
    let features = FeatureMatrix::from_rows(n, dim, data)?;
    let labels = if labelled_rows == Some(true) {
        Some(labels)
    } else {
        None
    };
    Ok((features, labels))
}

/// Saves features in the format implied by the path: `.csv` selects the
/// text format, anything else the binary format.
pub fn save_features(path: &Path, features: &FeatureMatrix, labels: Option<&[i64]>) -> Result<()> {
    if is_csv(path) {
        save_features_csv(path, features, labels)
    } else {
        save_features_binary(path, features, labels)
    }
}

/// Loads features in the format implied by the path (see [`save_features`]).
pub fn load_features(path: &Path) -> Result<(FeatureMatrix, Option<Vec<i64>>)> {
    if is_csv(path) {
        load_features_csv(path)
    } else {
        load_features_binary(path)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Per-point label visibility: the label column may carry ground truth for
/// points whose `is_labelled` flag is false (hidden from training, used by
/// evaluation), or `none` when the truth is unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSidecar {
    pub labels: Vec<Option<i64>>,
    pub is_labelled: Vec<bool>,
}

impl LabelSidecar {
    pub fn new(labels: Vec<Option<i64>>, is_labelled: Vec<bool>) -> Result<Self> {
        if labels.len() != is_labelled.len() {
            return Err(GcdError::InvalidInput(format!(
                "{} labels but {} visibility flags",
                labels.len(),
                is_labelled.len()
            )));
        }
        for i in 0..labels.len() {
            if is_labelled[i] && labels[i].is_none() {
                return Err(GcdError::InvalidInput(format!(
                    "point {i} is marked labelled but has no label"
                )));
            }
        }
        Ok(Self {
            labels,
            is_labelled,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

const SIDECAR_HEADER: &str = "index,label,is_labelled";

pub fn save_label_sidecar(path: &Path, sidecar: &LabelSidecar) -> Result<()> {
    let mut out = String::from(SIDECAR_HEADER);
    out.push('\n');
    for i in 0..sidecar.len() {
        let label = match sidecar.labels[i] {
            Some(v) => v.to_string(),
            None => "none".into(),
        };
        out.push_str(&format!("{i},{label},{}\n", sidecar.is_labelled[i]));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_label_sidecar(path: &Path) -> Result<LabelSidecar> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    for (line_no, fields) in csv_rows(&text, SIDECAR_HEADER, 3)? {
        let index = parse_index(fields[0], line_no, labels.len())?;
        debug_assert_eq!(index, labels.len());
        let label = match fields[1] {
            "none" => None,
            v => Some(v.parse::<i64>().map_err(|_| FormatError::BadField {
                line: line_no,
                detail: format!("expected an integer label or none, found {v:?}"),
            })?),
        };
        let is_labelled = match fields[2] {
            "true" | "1" => true,
            "false" | "0" => false,
            v => {
                return Err(FormatError::BadField {
                    line: line_no,
                    detail: format!("expected true/false, found {v:?}"),
                }
                .into())
            }
        };
        if is_labelled && label.is_none() {
            return Err(FormatError::BadField {
                line: line_no,
                detail: "point is marked labelled but its label is none".into(),
            }
            .into());
        }
        labels.push(label);
        mask.push(is_labelled);
    }
    LabelSidecar::new(labels, mask)
}

/// Shared shape check for the small `header\nrow,row,...` CSV artifacts:
/// verifies the header and yields trimmed fields per line.
fn csv_rows<'a>(
    text: &'a str,
    header: &str,
    n_fields: usize,
) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == header => {}
        Some((_, h)) => {
            return Err(FormatError::BadHeader {
                line: 1,
                detail: format!("expected header {header:?}, found {h:?}"),
            }
            .into())
        }
        None => {
            return Err(FormatError::BadHeader {
                line: 1,
                detail: format!("empty file; expected header {header:?}"),
            }
            .into())
        }
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n_fields {
            return Err(FormatError::RowLengthMismatch {
                line: line_no,
                expected: n_fields,
                found: fields.len(),
            }
            .into());
        }
        rows.push((line_no, fields));
    }
    Ok(rows)
}

fn parse_index(field: &str, line_no: usize, expected: usize) -> Result<usize> {
    let index: usize = field.parse().map_err(|_| FormatError::BadField {
        line: line_no,
        detail: format!("expected a point index, found {field:?}"),
    })?;
    if index != expected {
        return Err(FormatError::BadField {
            line: line_no,
            detail: format!("indices must ascend from 0; expected {expected}, found {index}"),
        }
        .into());
    }
    Ok(index)
}

const ASSIGNMENTS_HEADER: &str = "index,cluster";

pub fn save_assignments(path: &Path, assignments: &[usize]) -> Result<()> {
    let mut out = String::from(ASSIGNMENTS_HEADER);
    out.push('\n');
    for (i, &c) in assignments.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_assignments(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, fields) in csv_rows(&text, ASSIGNMENTS_HEADER, 2)? {
        parse_index(fields[0], line_no, out.len())?;
        let cluster: usize = fields[1].parse().map_err(|_| FormatError::BadField {
            line: line_no,
            detail: format!("expected a cluster id, found {:?}", fields[1]),
        })?;
        out.push(cluster);
    }
    Ok(out)
}

const K_SCORE_HEADER: &str = "k,score";

/// Saves `(k, score)` pairs sorted by k, ready for plotting.
pub fn save_k_scores(path: &Path, evaluations: &[(usize, f64)]) -> Result<()> {
    let mut sorted = evaluations.to_vec();
    sorted.sort_by_key(|&(k, _)| k);
    let mut out = String::from(K_SCORE_HEADER);
    out.push('\n');
    for (k, score) in sorted {
        out.push_str(&format!("{k},{score}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_k_scores(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, fields) in csv_rows(&text, K_SCORE_HEADER, 2)? {
        let k: usize = fields[0].parse().map_err(|_| FormatError::BadField {
            line: line_no,
            detail: format!("expected a cluster count, found {:?}", fields[0]),
        })?;
        let score = parse_finite_f64(fields[1], line_no, 2)?;
        out.push((k, score));
    }
    Ok(out)
}

const LOSS_CURVE_HEADER: &str = "epoch,mean_loss";

pub fn save_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut out = String::from(LOSS_CURVE_HEADER);
    out.push('\n');
    for (epoch, loss) in curve.iter().enumerate() {
        out.push_str(&format!("{epoch},{loss}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, fields) in csv_rows(&text, LOSS_CURVE_HEADER, 2)? {
        parse_index(fields[0], line_no, out.len())?;
        out.push(parse_finite_f64(fields[1], line_no, 2)?);
    }
    Ok(out)
}

fn parse_finite_f64(field: &str, line_no: usize, column: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| FormatError::BadField {
        line: line_no,
        detail: format!("expected a decimal float in column {column}, found {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(FormatError::NonFinite {
            value: field.to_string(),
            position: format!("line {line_no}, column {column}"),
        }
        .into());
    }
    Ok(v)
}

/// Saves a projection head: magic "GCDH", version, the three layer sizes,
/// then the flat f64 parameter vector.
pub fn save_head(path: &Path, head: &ProjectionHead) -> Result<()> {
    let params = head.params_flat();
    let mut out = Vec::with_capacity(4 + 2 + 12 + params.len() * 8);
    out.extend_from_slice(&HEAD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.d_in() as u32).to_le_bytes());
    out.extend_from_slice(&(head.hidden() as u32).to_le_bytes());
    out.extend_from_slice(&(head.d_out() as u32).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_head(path: &Path) -> Result<ProjectionHead> {
    let buf = fs::read(path)?;
    let mut c = Cursor::new(&buf);
    check_magic(&mut c, HEAD_MAGIC)?;
    let shape_offset = c.at;
    let d_in = c.u32()? as usize;
    let hidden = c.u32()? as usize;
    let d_out = c.u32()? as usize;
    if d_in == 0 || hidden == 0 || d_out == 0 {
        return Err(FormatError::BadValue {
            offset: shape_offset,
            detail: format!("head shape {d_in} -> {hidden} -> {d_out} must be at least 1 per layer"),
        }
        .into());
    }
    let n_params = hidden * d_in + hidden + d_out * hidden + d_out;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let offset = c.at;
        let v = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                value: format!("{v}"),
                position: format!("byte {offset}"),
            }
            .into());
        }
        params.push(v);
    }
    c.finish()?;
    ProjectionHead::from_flat(d_in, hidden, d_out, &params)
}
