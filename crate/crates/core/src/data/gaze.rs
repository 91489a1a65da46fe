//! Per-frame gaze traces and their `frame,x,y` CSV form.

use std::fmt::Write as _;

use super::DataError;

/// One gaze slot. `x` is the column and `y` the row, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazePoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub present: bool,
}

impl GazePoint {
    pub fn present(frame: usize, x: f64, y: f64) -> Self {
        Self {
            frame,
            x,
            y,
            present: true,
        }
    }

    pub fn missing(frame: usize) -> Self {
        Self {
            frame,
            x: f64::NAN,
            y: f64::NAN,
            present: false,
        }
    }

    fn same_as(&self, other: &Self) -> bool {
        self.frame == other.frame
            && self.present == other.present
            && (!self.present || (self.x == other.x && self.y == other.y))
    }
}

/// Gaze samples for a clip, one slot per frame.
#[derive(Debug, Clone)]
pub struct GazeTrace {
    pub clip_id: String,
    pub points: Vec<GazePoint>,
}

impl PartialEq for GazeTrace {
    fn eq(&self, other: &Self) -> bool {
        self.clip_id == other.clip_id
            && self.points.len() == other.points.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.same_as(b))
    }
}

/// Result of [`GazeTrace::interpolate_missing`].
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    pub trace: GazeTrace,
    /// No sample was present, so nothing could be filled.
    pub all_missing: bool,
}

impl GazeTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn present_count(&self) -> usize {
        self.points.iter().filter(|p| p.present).count()
    }

    /// Fills interior gaps by linear interpolation between the bounding
    /// present samples, and leading/trailing gaps with the nearest present
    /// sample.
    pub fn interpolate_missing(&self) -> Interpolated {
        let present: Vec<usize> = (0..self.points.len()).filter(|&i| self.points[i].present).collect();
        let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
            return Interpolated {
                trace: self.clone(),
                all_missing: true,
            };
        };
        let mut points = self.points.clone();
        let fill = |points: &mut Vec<GazePoint>, i: usize, x: f64, y: f64| {
            points[i] = GazePoint::present(points[i].frame, x, y);
        };
        for i in 0..first {
            fill(&mut points, i, self.points[first].x, self.points[first].y);
        }
        for i in last + 1..points.len() {
            fill(&mut points, i, self.points[last].x, self.points[last].y);
        }
        for pair in present.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (pa, pb) = (self.points[a], self.points[b]);
            for i in a + 1..b {
                let t = (i - a) as f64 / (b - a) as f64;
                fill(&mut points, i, pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y));
            }
        }
        Interpolated {
            trace: GazeTrace {
                clip_id: self.clip_id.clone(),
                points,
            },
            all_missing: false,
        }
    }

    /// Clamps present coordinates into `[0, width-1] × [0, height-1]`.
    pub fn clamped(&self, height: usize, width: usize) -> GazeTrace {
        let points = self
            .points
            .iter()
            .map(|p| {
                if p.present {
                    GazePoint::present(
                        p.frame,
                        p.x.clamp(0.0, (width - 1) as f64),
                        p.y.clamp(0.0, (height - 1) as f64),
                    )
                } else {
                    *p
                }
            })
            .collect();
        GazeTrace {
            clip_id: self.clip_id.clone(),
            points,
        }
    }

    /// Writes the trace as `frame,x,y` with empty fields for missing slots.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,x,y\n");
        for p in &self.points {
            if p.present {
                let _ = writeln!(out, "{},{},{}", p.frame, p.x, p.y);
            } else {
                let _ = writeln!(out, "{},,", p.frame);
            }
        }
        out
    }
}

/// Parses `frame,x,y` rows into a trace with `expected_frames` slots.
/// Frames without a row, and rows with an empty coordinate, are missing.
pub fn parse_gaze_csv(clip_id: &str, text: &str, expected_frames: usize) -> Result<GazeTrace, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| DataError::parse(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["frame", "x", "y"] {
        return Err(DataError::parse(
            1,
            format!(
                "expected header `frame,x,y`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut points: Vec<GazePoint> = (0..expected_frames).map(GazePoint::missing).collect();
    let mut last_frame: Option<usize> = None;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            DataError::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(DataError::parse(
                line,
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let frame: i64 = record[0]
            .parse()
            .map_err(|_| DataError::parse(line, format!("frame `{}` is not an integer", &record[0])))?;
        if frame < 0 {
            return Err(DataError::parse(line, format!("negative frame {frame}")));
        }
        let frame = frame as usize;
        if frame >= expected_frames {
            return Err(DataError::parse(
                line,
                format!("frame {frame} beyond clip length {expected_frames}"),
            ));
        }
        match last_frame {
            Some(prev) if prev == frame => {
                return Err(DataError::parse(line, format!("duplicate frame {frame}")));
            }
            Some(prev) if prev > frame => {
                return Err(DataError::parse(
                    line,
                    format!("frame {frame} after frame {prev}; rows must be sorted"),
                ));
            }
            _ => {}
        }
        last_frame = Some(frame);
        let coord = |s: &str, name: &str| -> Result<Option<f64>, DataError> {
            if s.is_empty() {
                return Ok(None);
            }
            let v: f64 = s
                .parse()
                .map_err(|_| DataError::parse(line, format!("{name} `{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(DataError::parse(line, format!("{name} `{s}` is not finite")));
            }
            Ok(Some(v))
        };
        if let (Some(x), Some(y)) = (coord(&record[1], "x")?, coord(&record[2], "y")?) {
            points[frame] = GazePoint::present(frame, x, y);
        }
    }
    Ok(GazeTrace {
        clip_id: clip_id.to_string(),
        points,
    })
}
