//! Tracking and forecast output records and their JSONL files.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use trackcast_eval::{OrientedBox3D, TrackBox};

use crate::error::{CoreError, Result};
use crate::scene::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: usize,
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub score: f64,
}

impl TrackRecord {
    pub fn new(frame: usize, id: u64, d: &Detection) -> Self {
        TrackRecord {
            frame,
            id,
            x: d.x,
            y: d.y,
            z: d.z,
            l: d.l,
            w: d.w,
            h: d.h,
            theta: d.theta,
            score: d.conf,
        }
    }

    pub fn track_box(&self) -> TrackBox {
        TrackBox {
            id: self.id,
            bbox: OrientedBox3D {
                x: self.x,
                y: self.y,
                z: self.z,
                l: self.l,
                w: self.w,
                h: self.h,
                theta: self.theta,
            },
            score: self.score,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.track_box().bbox.is_valid() || !self.score.is_finite() {
            return Err("track record has an invalid box or score".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub frame: usize,
    pub id: u64,
    pub sample_index: usize,
    /// Ground-plane `(x, z)` positions for the forecast horizon.
    pub trajectory: Vec<[f64; 2]>,
}

impl ForecastRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.trajectory.is_empty() {
            return Err("forecast trajectory is empty".into());
        }
        if self.trajectory.iter().flatten().any(|v| !v.is_finite()) {
            return Err("forecast trajectory has a non-finite value".into());
        }
        Ok(())
    }
}

trait Checked {
    fn validate(&self) -> std::result::Result<(), String>;
}

impl Checked for TrackRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        self.check()
    }
}

impl Checked for ForecastRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        self.check()
    }
}

fn read_lines<T: DeserializeOwned + Checked>(input: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CoreError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| CoreError::Parse { line: line_no, message })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(records: &[T], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_tracks(text: &str) -> Result<Vec<TrackRecord>> {
    read_lines(text.as_bytes())
}

pub fn parse_forecasts(text: &str) -> Result<Vec<ForecastRecord>> {
    read_lines(text.as_bytes())
}

pub fn tracks_to_string(records: &[TrackRecord]) -> String {
    let mut buf = Vec::new();
    write_lines(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn forecasts_to_string(records: &[ForecastRecord]) -> String {
    let mut buf = Vec::new();
    write_lines(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))
}

pub fn load_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    parse_tracks(&read_file(path)?)
}

pub fn load_forecasts(path: &Path) -> Result<Vec<ForecastRecord>> {
    parse_forecasts(&read_file(path)?)
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let t = TrackRecord {
            frame: 3,
            id: 9,
            x: 0.1 + 0.2,
            y: 1.0,
            z: -2.5,
            l: 4.0,
            w: 1.8,
            h: 1.5,
            theta: 0.3,
            score: 0.77,
        };
        assert_eq!(parse_tracks(&tracks_to_string(&[t])).unwrap(), vec![t]);
        let f = ForecastRecord {
            frame: 1,
            id: 2,
            sample_index: 0,
            trajectory: vec![[1.0 / 3.0, 2.0], [3.0, 4.0]],
        };
        assert_eq!(parse_forecasts(&forecasts_to_string(&[f.clone()])).unwrap(), vec![f]);
    }

    #[test]
    fn errors_name_the_line() {
        let text = "{\"frame\":0,\"id\":1,\"sample_index\":0,\"trajectory\":[[0,0]]}\n{\"frame\":1";
        match parse_forecasts(text) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let bad_box = "{\"frame\":0,\"id\":1,\"x\":0,\"y\":0,\"z\":0,\"l\":-1,\"w\":1,\"h\":1,\"theta\":0,\"score\":1}";
        assert!(parse_tracks(bad_box).is_err());
    }
}
