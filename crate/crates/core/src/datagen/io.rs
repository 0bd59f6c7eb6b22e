use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::DatagenError;
use crate::types::{Annotation, Label, LabeledRecording, SensorSample};

pub const DATASET_HEADER: &str = "t_ms,ax,ay,az,gx,gy,gz,stretch,label";

const COLUMNS: usize = 9;

/// Reads a dataset CSV. Annotations are rebuilt from contiguous runs of the
/// label column; the subject id is the file stem.
pub fn read_dataset(path: &Path) -> Result<LabeledRecording, DatagenError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;

    let mut records = reader.records();
    match records.next() {
        Some(Ok(header)) if header.iter().eq(DATASET_HEADER.split(',')) => {}
        Some(Err(e)) => return Err(e.into()),
        _ => {
            return Err(DatagenError::Header {
                path: display,
                expected: DATASET_HEADER,
            })
        }
    }

    let mut samples = Vec::new();
    let mut row_labels: Vec<Option<Label>> = Vec::new();
    let mut stretch_present: Option<bool> = None;

    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |reason: String| DatagenError::Row {
            path: display.clone(),
            line,
            reason,
        };
        if record.len() != COLUMNS {
            return Err(row_err(format!("expected {COLUMNS} columns, found {}", record.len())));
        }
        let t_ms: i64 = record[0]
            .trim()
            .parse()
            .map_err(|_| row_err(format!("bad t_ms `{}`", &record[0])))?;
        let mut values = [0.0f64; 6];
        for (k, v) in values.iter_mut().enumerate() {
            *v = parse_finite(&record[k + 1]).map_err(&row_err)?;
        }
        let stretch = match record[7].trim() {
            "" => None,
            s => Some(parse_finite(s).map_err(&row_err)?),
        };
        match stretch_present {
            None => stretch_present = Some(stretch.is_some()),
            Some(p) if p != stretch.is_some() => {
                return Err(row_err("stretch column must be empty for all rows or none".into()))
            }
            _ => {}
        }
        if let Some(prev) = samples.last().map(|s: &SensorSample| s.t_ms) {
            if t_ms <= prev {
                return Err(row_err(format!("t_ms {t_ms} not after previous {prev}")));
            }
        }
        let label = match record[8].trim() {
            "" => None,
            s => Some(s.parse::<Label>().map_err(|e| row_err(e.to_string()))?),
        };
        samples.push(SensorSample {
            t_ms,
            accel: [values[0], values[1], values[2]],
            gyro: [values[3], values[4], values[5]],
            stretch,
        });
        row_labels.push(label);
    }

    let annotations = runs_to_annotations(&samples, &row_labels);
    let recording = LabeledRecording {
        samples,
        annotations,
        subject_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        metadata: Default::default(),
    };
    recording.validate()?;
    Ok(recording)
}

fn parse_finite(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a finite decimal")),
    }
}

fn runs_to_annotations(samples: &[SensorSample], labels: &[Option<Label>]) -> Vec<Annotation> {
    let mut out: Vec<Annotation> = Vec::new();
    let mut prev: Option<Label> = None;
    for (sample, label) in samples.iter().zip(labels) {
        match (*label, prev) {
            (Some(l), Some(p)) if l == p => {
                out.last_mut().expect("open run").end_ms = sample.t_ms;
            }
            (Some(l), _) => out.push(Annotation {
                start_ms: sample.t_ms,
                end_ms: sample.t_ms,
                label: l,
            }),
            (None, _) => {}
        }
        prev = *label;
    }
    out
}

/// Writes `recording` with six fractional digits per value. Subject id and
/// metadata are not part of the file format.
pub fn write_dataset(recording: &LabeledRecording, path: &Path) -> Result<(), DatagenError> {
    recording.validate()?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{DATASET_HEADER}")?;
    let mut ann = recording.annotations.iter().peekable();
    for s in &recording.samples {
        while ann.peek().is_some_and(|a| a.end_ms < s.t_ms) {
            ann.next();
        }
        let label = ann
            .peek()
            .filter(|a| a.contains(s.t_ms))
            .map_or("", |a| a.label.name());
        let stretch = s.stretch.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            s.t_ms, s.accel[0], s.accel[1], s.accel[2], s.gyro[0], s.gyro[1], s.gyro[2], stretch, label
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ActivityLabel;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn label_runs_become_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "s1.csv",
            "t_ms,ax,ay,az,gx,gy,gz,stretch,label\n\
             0,0,0,1,0,0,0,0.5,Walk\n\
             10,0,0,1,0,0,0,0.5,Walk\n\
             20,0,0,1,0,0,0,0.5,Sit\n",
        );
        let rec = read_dataset(&path).unwrap();
        assert_eq!(rec.samples.len(), 3);
        assert_eq!(rec.subject_id, "s1");
        assert_eq!(
            rec.annotations,
            vec![
                Annotation { start_ms: 0, end_ms: 10, label: ActivityLabel::Walk.into() },
                Annotation { start_ms: 20, end_ms: 20, label: ActivityLabel::Sit.into() },
            ]
        );
    }

    #[test]
    fn header_only_is_empty_recording() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "e.csv", "t_ms,ax,ay,az,gx,gy,gz,stretch,label\n");
        let rec = read_dataset(&path).unwrap();
        assert!(rec.samples.is_empty());
        assert!(rec.annotations.is_empty());
    }

    #[test]
    fn decreasing_timestamp_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            "bad.csv",
            "t_ms,ax,ay,az,gx,gy,gz,stretch,label\n\
             10,0,0,1,0,0,0,,\n\
             5,0,0,1,0,0,0,,\n",
        );
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, DatagenError::Row { line: 3, .. }), "{err}");
        assert!(err.to_string().contains(":3:"));
    }

    #[test]
    fn malformed_header_and_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "h.csv", "t,ax,ay,az,gx,gy,gz,stretch,label\n");
        assert!(matches!(read_dataset(&path), Err(DatagenError::Header { .. })));

        let path = write(
            &dir,
            "r.csv",
            "t_ms,ax,ay,az,gx,gy,gz,stretch,label\n0,0,abc,1,0,0,0,,\n",
        );
        assert!(matches!(read_dataset(&path), Err(DatagenError::Row { line: 2, .. })));

        let path = write(
            &dir,
            "m.csv",
            "t_ms,ax,ay,az,gx,gy,gz,stretch,label\n0,0,0,1,0,0,0,0.1,\n10,0,0,1,0,0,0,,\n",
        );
        assert!(matches!(read_dataset(&path), Err(DatagenError::Row { line: 3, .. })));

        let path = write(
            &dir,
            "n.csv",
            "t_ms,ax,ay,az,gx,gy,gz,stretch,label\n0,0,0,NaN,0,0,0,,\n",
        );
        assert!(matches!(read_dataset(&path), Err(DatagenError::Row { .. })));
    }

    #[test]
    fn overlapping_annotations_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let sample = |t| SensorSample { t_ms: t, accel: [0.0, 0.0, 1.0], gyro: [0.0; 3], stretch: None };
        let rec = LabeledRecording {
            samples: vec![sample(0), sample(10), sample(20)],
            annotations: vec![
                Annotation { start_ms: 0, end_ms: 10, label: ActivityLabel::Walk.into() },
                Annotation { start_ms: 10, end_ms: 20, label: ActivityLabel::Sit.into() },
            ],
            ..Default::default()
        };
        let path = dir.path().join("o.csv");
        assert!(matches!(write_dataset(&rec, &path), Err(DatagenError::InvalidRecording(_))));
        assert!(!path.exists());
    }
}
