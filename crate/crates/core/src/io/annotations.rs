//! Line-oriented annotation formats.
//!
//! Ground truth: `class_id cx cy w h`
//! Detections:   `class_id confidence cx cy w h`
//!
//! Values are whitespace separated and normalized to the image size. Blank
//! lines and lines whose first non-blank character is `#` are skipped. LF and
//! CRLF line endings are both accepted.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BoxField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class_id: u32,
    pub bbox: BBox,
}

impl GroundTruth {
    pub fn new(class_id: u32, bbox: BBox) -> Self {
        GroundTruth { class_id, bbox }
    }
}

/// A predicted box. `confidence` is guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(class_id: u32, confidence: f64, bbox: BBox) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidGeometry(format!(
                "confidence = {confidence} outside [0, 1]"
            )));
        }
        Ok(Detection {
            class_id,
            confidence,
            bbox,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// Same detection with a different score. Fails if `confidence` is out of range.
    pub fn with_confidence(&self, confidence: f64) -> Result<Self> {
        Detection::new(self.class_id, confidence, self.bbox)
    }
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    column: line[..s].chars().count() + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            column: line[..s].chars().count() + 1,
        });
    }
    out
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: None,
        line,
        column,
        message: message.into(),
    }
}

fn validation_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Validation {
        source_name: None,
        line,
        column,
        message: message.into(),
    }
}

/// Iterate over `(1-based line number, tokens)` of every content line.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<Token<'_>>)> {
    text.split('\n').enumerate().filter_map(|(i, raw)| {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, tokenize(line)))
        }
    })
}

fn parse_class(tok: &Token<'_>, line: usize) -> Result<u32> {
    tok.text.parse::<u32>().map_err(|_| {
        parse_err(
            line,
            tok.column,
            format!("class_id `{}` is not a non-negative integer", tok.text),
        )
    })
}

fn parse_real(tok: &Token<'_>, line: usize, name: &str) -> Result<f64> {
    let v: f64 = tok
        .text
        .parse()
        .map_err(|_| parse_err(line, tok.column, format!("{name} `{}` is not a number", tok.text)))?;
    if !v.is_finite() {
        return Err(validation_err(line, tok.column, format!("{name} = {v} is not finite")));
    }
    Ok(v)
}

fn parse_box(toks: &[Token<'_>], line: usize) -> Result<BBox> {
    let cx = parse_real(&toks[0], line, "cx")?;
    let cy = parse_real(&toks[1], line, "cy")?;
    let w = parse_real(&toks[2], line, "w")?;
    let h = parse_real(&toks[3], line, "h")?;
    BBox::check(cx, cy, w, h).map_err(|(field, v)| {
        let idx = match field {
            BoxField::CenterX => 0,
            BoxField::CenterY => 1,
            BoxField::Width => 2,
            BoxField::Height => 3,
        };
        let range = match field {
            BoxField::CenterX | BoxField::CenterY => "[0, 1]",
            BoxField::Width | BoxField::Height => "(0, 1]",
        };
        validation_err(
            line,
            toks[idx].column,
            format!("{} = {v} outside {range}", field.name()),
        )
    })?;
    BBox::new(cx, cy, w, h)
}

fn expect_fields(toks: &[Token<'_>], n: usize, line: usize, layout: &str) -> Result<()> {
    if toks.len() == n {
        return Ok(());
    }
    let column = toks.get(n).map_or(1, |t| t.column);
    Err(parse_err(
        line,
        column,
        format!("expected {n} fields `{layout}`, found {}", toks.len()),
    ))
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>> {
    content_lines(text)
        .map(|(line, toks)| {
            expect_fields(&toks, 5, line, "class_id cx cy w h")?;
            Ok(GroundTruth {
                class_id: parse_class(&toks[0], line)?,
                bbox: parse_box(&toks[1..], line)?,
            })
        })
        .collect()
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    content_lines(text)
        .map(|(line, toks)| {
            expect_fields(&toks, 6, line, "class_id confidence cx cy w h")?;
            let class_id = parse_class(&toks[0], line)?;
            let confidence = parse_real(&toks[1], line, "confidence")?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(validation_err(
                    line,
                    toks[1].column,
                    format!("confidence = {confidence} outside [0, 1]"),
                ));
            }
            let bbox = parse_box(&toks[2..], line)?;
            Detection::new(class_id, confidence, bbox)
        })
        .collect()
}

/// Canonical text form: one line per box, LF endings, shortest round-trip decimals.
pub fn format_ground_truth(truths: &[GroundTruth]) -> String {
    let mut out = String::new();
    for t in truths {
        let b = &t.bbox;
        let _ = writeln!(out, "{} {} {} {} {}", t.class_id, b.cx(), b.cy(), b.w(), b.h());
    }
    out
}

pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let b = &d.bbox;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            d.class_id,
            d.confidence,
            b.cx(),
            b.cy(),
            b.w(),
            b.h()
        );
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    parse_ground_truth(&read_text(path)?).map_err(|e| e.with_source_name(path.display().to_string()))
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    parse_detections(&read_text(path)?).map_err(|e| e.with_source_name(path.display().to_string()))
}
