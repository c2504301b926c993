//! Expectation sidecar: `expect frame <n> redundant <tile indices>` lines.
//!
//! Frames are numbered from 0. Tile indices are row-major.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpectedFrame {
    pub frame: usize,
    /// Sorted, unique tile indices whose inputs and pixels repeat the previous frame.
    pub redundant: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Expectation {
    pub frames: Vec<ExpectedFrame>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expectation line {line}: {message}")]
pub struct ExpectationError {
    pub line: usize,
    pub message: String,
}

impl Expectation {
    pub fn for_frame(&self, frame: usize) -> Option<&ExpectedFrame> {
        self.frames.iter().find(|f| f.frame == frame)
    }

    /// Redundancy as a per-tile mask, if the frame is covered.
    pub fn mask(&self, frame: usize, tile_count: usize) -> Option<Vec<bool>> {
        self.for_frame(frame).map(|f| {
            let mut mask = vec![false; tile_count];
            for &t in &f.redundant {
                mask[t] = true;
            }
            mask
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            let _ = write!(out, "expect frame {} redundant", f.frame);
            for t in &f.redundant {
                let _ = write!(out, " {t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ExpectationError> {
        let mut frames = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let err = |message: &str| ExpectationError {
                line,
                message: message.to_string(),
            };
            let mut toks = content.split_whitespace();
            if toks.next() != Some("expect") || toks.next() != Some("frame") {
                return Err(err("expected 'expect frame'"));
            }
            let frame = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("invalid frame number"))?;
            if toks.next() != Some("redundant") {
                return Err(err("expected 'redundant'"));
            }
            let mut redundant = toks
                .map(|t| t.parse::<usize>().map_err(|_| err("invalid tile index")))
                .collect::<Result<Vec<_>, _>>()?;
            redundant.sort_unstable();
            redundant.dedup();
            frames.push(ExpectedFrame { frame, redundant });
        }
        Ok(Expectation { frames })
    }
}
