//! QA and prediction files.
//!
//! A QA file starts with an optional header line, followed by one
//! [`QAPair`] per line with fields in the order id, dataset, clip_id,
//! timepoint_id, task, question, answer (then `context` when present).
//! A predictions file is one `{"qa_id", "answer"}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::QAPair;
use crate::qagen::TEMPLATE_VERSION;
use crate::sampler::SampleSpec;
use crate::scorer::Prediction;

pub const QA_FORMAT_VERSION: &str = "1.0.0";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("template version {found:?} does not match this build ({TEMPLATE_VERSION:?})")]
    TemplateVersion { found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaHeader {
    pub format_version: String,
    pub template_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_spec: Option<SampleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_digest: Option<String>,
}

impl Default for QaHeader {
    fn default() -> Self {
        Self {
            format_version: QA_FORMAT_VERSION.into(),
            template_version: TEMPLATE_VERSION.into(),
            split: None,
            sample_spec: None,
            table_digest: None,
        }
    }
}

/// Streaming QA reader. A first line without an `id` field is the header.
pub struct QaReader<R> {
    header: Option<QaHeader>,
    pending: Option<(usize, String)>,
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl QaReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IoError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> QaReader<R> {
    pub fn new(reader: R) -> Result<Self, IoError> {
        let mut lines = reader.lines();
        let mut header = None;
        let mut pending = None;
        if let Some(first) = lines.next() {
            let first = first?;
            let value: serde_json::Value = serde_json::from_str(&first).map_err(|e| IoError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            if value.get("id").is_none() {
                let h: QaHeader = serde_json::from_value(value).map_err(|e| IoError::Parse {
                    line: 1,
                    message: format!("header: {e}"),
                })?;
                if h.template_version != TEMPLATE_VERSION {
                    return Err(IoError::TemplateVersion {
                        found: h.template_version,
                    });
                }
                header = Some(h);
            } else {
                pending = Some((1, first));
            }
        }
        Ok(Self {
            header,
            pending,
            lines,
            line_no: 1,
        })
    }

    pub fn header(&self) -> Option<&QaHeader> {
        self.header.as_ref()
    }
}

fn parse_pair(line_no: usize, line: &str) -> Result<QAPair, IoError> {
    serde_json::from_str(line).map_err(|e| IoError::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

impl<R: BufRead> Iterator for QaReader<R> {
    type Item = Result<QAPair, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some((n, line)) = self.pending.take() {
            return Some(parse_pair(n, &line));
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if !line.trim().is_empty() {
                return Some(parse_pair(self.line_no, &line));
            }
        }
    }
}

pub fn read_qa_file(path: impl AsRef<Path>) -> Result<(Option<QaHeader>, Vec<QAPair>), IoError> {
    let reader = QaReader::open(path)?;
    let header = reader.header().cloned();
    let pairs = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, pairs))
}

pub struct QaWriter<W: Write> {
    out: W,
}

impl<W: Write> QaWriter<W> {
    pub fn new(mut out: W, header: &QaHeader) -> Result<Self, IoError> {
        serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, pair: &QAPair) -> Result<(), IoError> {
        serde_json::to_writer(&mut self.out, pair).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, IoError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_qa_file(path: impl AsRef<Path>, header: &QaHeader, pairs: &[QAPair]) -> Result<(), IoError> {
    let mut w = QaWriter::new(BufWriter::new(File::create(path)?), header)?;
    for p in pairs {
        w.write(p)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IoError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in preds {
        serde_json::to_writer(&mut out, p).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskKind;

    fn pair() -> QAPair {
        QAPair {
            id: "00ff".into(),
            dataset: "d".into(),
            clip_id: "c".into(),
            timepoint_id: "t".into(),
            task: TaskKind::PeopleCounting,
            question: "How many?".into(),
            answer: "3".into(),
            context: None,
        }
    }

    #[test]
    fn field_order_is_canonical() {
        let s = serde_json::to_string(&pair()).unwrap();
        assert_eq!(
            s,
            r#"{"id":"00ff","dataset":"d","clip_id":"c","timepoint_id":"t","task":"people_counting","question":"How many?","answer":"3"}"#
        );
    }

    #[test]
    fn round_trip_with_and_without_header() {
        let mut buf = Vec::new();
        let mut w = QaWriter::new(&mut buf, &QaHeader::default()).unwrap();
        w.write(&pair()).unwrap();
        w.finish().unwrap();
        let r = QaReader::new(&buf[..]).unwrap();
        assert!(r.header().is_some());
        assert_eq!(r.collect::<Result<Vec<_>, _>>().unwrap(), vec![pair()]);

        let bare = serde_json::to_string(&pair()).unwrap() + "\n";
        let r = QaReader::new(bare.as_bytes()).unwrap();
        assert!(r.header().is_none());
        assert_eq!(r.count(), 1);
    }

    #[test]
    fn template_mismatch_rejected() {
        let text = r#"{"format_version":"1.0.0","template_version":"0"}"#;
        assert!(matches!(QaReader::new(text.as_bytes()), Err(IoError::TemplateVersion { .. })));
    }
}
