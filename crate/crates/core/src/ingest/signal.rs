use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::IngestError;
use crate::Tensor;

/// Parse a whitespace-separated text export into `[N, C]` rows, keeping the
/// columns listed in `channel_columns` in that order.
///
/// Leading lines starting with `#` are header metadata. After the first
/// data line, every non-empty line must be a data row with the same token
/// count; blank lines are ignored.
pub fn parse_signal_text(path: &Path, channel_columns: &[usize]) -> Result<Tensor<f32>, IngestError> {
    let distinct: HashSet<_> = channel_columns.iter().collect();
    if channel_columns.is_empty() || distinct.len() != channel_columns.len() {
        return Err(IngestError::BadChannels(channel_columns.to_vec()));
    }
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut data = Vec::new();
    let mut width = None;
    let mut in_header = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if in_header && (trimmed.starts_with('#') || trimmed.is_empty()) {
            continue;
        }
        in_header = false;
        if trimmed.is_empty() {
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedRow {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match width {
            None => width = Some(tokens.len()),
            Some(w) if w != tokens.len() => {
                return Err(malformed(format!("{} columns, expected {w}", tokens.len())));
            }
            Some(_) => {}
        }
        for &c in channel_columns {
            let tok = tokens
                .get(c)
                .ok_or_else(|| malformed(format!("{} columns, channel column {c} requested", tokens.len())))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| malformed(format!("non-numeric token `{tok}`")))?;
            let v = v as f32;
            if !v.is_finite() {
                return Err(malformed(format!("non-finite value `{tok}`")));
            }
            data.push(v);
        }
    }
    if data.is_empty() {
        return Err(IngestError::EmptyRecording(path.to_path_buf()));
    }
    let c = channel_columns.len();
    Ok(Tensor::from_vec(&[data.len() / c, c], data))
}
