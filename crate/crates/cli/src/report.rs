//! CSV reports and the label file format.

use std::fs;
use std::path::Path;

use asopf_core::labels::{ActiveSetLabels, LabelLayout};
use serde::Serialize;

use crate::error::{CliError, CliResult, Stage};

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::file(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| CliError::file(path, e))
}

/// Labels as CSV: a `sample` column followed by one 0/1 column per manifest entry.
pub fn write_labels(
    path: &Path,
    layout: LabelLayout,
    rows: &[(usize, ActiveSetLabels)],
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend(layout.manifest());
    w.write_record(&header)?;
    for (sample, labels) in rows {
        let mut record = vec![sample.to_string()];
        record.extend(labels.iter().map(|b| if b { "1" } else { "0" }.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| CliError::file(path, e))?;
    Ok(())
}

pub fn read_labels(path: &Path, layout: LabelLayout) -> CliResult<Vec<(usize, ActiveSetLabels)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("sample") || header[1..] != layout.manifest()[..]
    {
        return Err(CliError::Failed {
            stage: Stage::Predict,
            message: format!("{}: label columns do not match the grid", path.display()),
        });
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let parse_err = |what: &str| CliError::Failed {
            stage: Stage::Predict,
            message: format!("{}: bad {what} in row {}", path.display(), rows.len() + 1),
        };
        let sample: usize = record[0].parse().map_err(|_| parse_err("sample index"))?;
        let bits = record
            .iter()
            .skip(1)
            .map(|v| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(parse_err("label bit")),
            })
            .collect::<CliResult<Vec<u8>>>()?;
        let labels =
            ActiveSetLabels::from_bits(layout, &bits).map_err(|source| CliError::Stage {
                stage: Stage::Predict,
                source,
            })?;
        rows.push((sample, labels));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let layout = LabelLayout {
            n_units: 1,
            n_lines: 2,
            n_buses: 2,
            n_farms: 1,
        };
        let rows = vec![
            (3, ActiveSetLabels::from_fn(layout, |v| v % 3 == 0).unwrap()),
            (7, ActiveSetLabels::zeros(layout)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        write_labels(&path, layout, &rows).unwrap();
        assert_eq!(read_labels(&path, layout).unwrap(), rows);
        let other = LabelLayout {
            n_farms: 2,
            ..layout
        };
        assert!(read_labels(&path, other).is_err());
    }
}
