//! Dataset text format:
//!
//! ```text
//! # format=1
//! band_0,...,band_{d-1}[,label_0,...,label_7],tag
//! <one row per spectrum, values with 17 significant digits>
//! # dim=<d>
//! # camera=<name>
//! # illuminant=<name>
//! # seed=<u64>
//! # config_hash=<hex>
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, DatasetMeta, SplitTag, FORMAT_VERSION};
use crate::error::{Error, Result};

/// 17 significant digits: enough to round-trip any `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("'{s}' is not a number")))
}

/// Checks the leading `# format=N` line.
pub(crate) fn check_format_line(first: Option<&str>) -> Result<()> {
    let first = first.ok_or_else(|| Error::Format("empty file".into()))?;
    let version = first
        .strip_prefix("# format=")
        .ok_or_else(|| Error::Format("missing leading '# format=' line".into()))?
        .trim();
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::UnsupportedVersion {
            found: version.to_string(),
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_string(dataset)).map_err(|e| Error::io(path, e))
}

pub(crate) fn dataset_to_string(dataset: &Dataset) -> String {
    let d = dataset.dim();
    let mut out = String::with_capacity(dataset.n_rows() * (d + 9) * 24 + 256);
    out.push_str(&format!("# format={FORMAT_VERSION}\n"));
    let mut header: Vec<String> = (0..d).map(|i| format!("band_{i}")).collect();
    if let Some(labels) = dataset.labels() {
        header.extend((0..labels.ncols()).map(|i| format!("label_{i}")));
    }
    header.push("tag".into());
    out.push_str(&header.join(","));
    out.push('\n');
    let labels = dataset.labels();
    for (r, row) in dataset.measurements().rows().into_iter().enumerate() {
        for v in row {
            out.push_str(&fmt_f64(*v));
            out.push(',');
        }
        if let Some(l) = &labels {
            for v in l.row(r) {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
        }
        out.push_str(dataset.tags()[r].as_str());
        out.push('\n');
    }
    let meta = &dataset.meta;
    out.push_str(&format!("# dim={d}\n"));
    out.push_str(&format!("# camera={}\n", meta.camera));
    out.push_str(&format!("# illuminant={}\n", meta.illuminant));
    out.push_str(&format!("# seed={}\n", meta.seed));
    out.push_str(&format!("# config_hash={}\n", meta.config_hash));
    out
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_str(&text)
}

pub(crate) fn dataset_from_str(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    check_format_line(lines.next().map(|(_, l)| l))?;
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let d = columns.iter().take_while(|c| c.starts_with("band_")).count();
    let n_labels = columns[d..].iter().take_while(|c| c.starts_with("label_")).count();
    if d == 0 || columns.len() != d + n_labels + 1 || columns.last() != Some(&"tag") {
        return Err(Error::Format(format!(
            "header on line {header_line} must be band_*, optional label_*, tag"
        )));
    }

    let mut values = Vec::new();
    let mut label_values = Vec::new();
    let mut tags = Vec::new();
    let mut meta = DatasetMeta::default();
    let mut declared_dim = None;
    let mut in_meta = false;
    for (line_no, line) in lines {
        if let Some(comment) = line.strip_prefix('#') {
            in_meta = true;
            let Some((key, value)) = comment.trim().split_once('=') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "dim" => {
                    declared_dim = Some(value.parse::<usize>().map_err(|_| Error::parse(line_no, "bad dim"))?)
                }
                "camera" => meta.camera = value.to_string(),
                "illuminant" => meta.illuminant = value.to_string(),
                "seed" => meta.seed = value.parse().map_err(|_| Error::parse(line_no, "bad seed"))?,
                "config_hash" => meta.config_hash = value.to_string(),
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if in_meta {
            return Err(Error::parse(line_no, "data row after the trailing meta block"));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        for f in &fields[..d] {
            values.push(parse_f64(f, line_no)?);
        }
        for f in &fields[d..d + n_labels] {
            label_values.push(parse_f64(f, line_no)?);
        }
        let tag = fields[d + n_labels]
            .trim()
            .parse::<SplitTag>()
            .map_err(|e| Error::parse(line_no, e))?;
        tags.push(tag);
    }
    match declared_dim {
        Some(dim) if dim != d => {
            return Err(Error::Format(format!("meta block declares dim={dim} but header has {d} bands")))
        }
        None => return Err(Error::Format("missing trailing meta block".into())),
        _ => {}
    }
    let n = tags.len();
    let measurements = Array2::from_shape_vec((n, d), values).expect("row lengths checked");
    let labels = (n_labels > 0).then(|| Array2::from_shape_vec((n, n_labels), label_values).expect("checked"));
    Dataset::new(measurements, labels, tags, meta)
}
