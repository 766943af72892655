use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::MinutiaeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MinutiaKind {
    Ending,
    Bifurcation,
}

impl MinutiaKind {
    fn code(self) -> char {
        match self {
            MinutiaKind::Ending => 'E',
            MinutiaKind::Bifurcation => 'B',
        }
    }
}

/// A ridge event. `angle` is in radians, counter-clockwise from +x with y up,
/// in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub kind: MinutiaKind,
}

impl Minutia {
    pub fn new(x: f64, y: f64, angle: f64, kind: MinutiaKind) -> Self {
        Self {
            x,
            y,
            angle: normalize_angle(angle),
            kind,
        }
    }

    pub fn distance(&self, other: &Minutia) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub(crate) fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

fn canonical(a: &Minutia, b: &Minutia) -> Ordering {
    a.y.total_cmp(&b.y)
        .then(a.x.total_cmp(&b.x))
        .then(a.angle.total_cmp(&b.angle))
        .then((a.kind as u8).cmp(&(b.kind as u8)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinutiaeTemplate {
    pub source_side: usize,
    minutiae: Vec<Minutia>,
}

impl MinutiaeTemplate {
    /// Stores the minutiae in canonical `(y, x)` order.
    pub fn new(source_side: usize, mut minutiae: Vec<Minutia>) -> Self {
        minutiae.sort_by(canonical);
        Self {
            source_side,
            minutiae,
        }
    }

    pub fn empty(source_side: usize) -> Self {
        Self {
            source_side,
            minutiae: Vec::new(),
        }
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# side={}\n", self.source_side);
        for m in &self.minutiae {
            writeln!(
                s,
                "{:.2} {:.2} {:.2} {}",
                m.x,
                m.y,
                m.angle.to_degrees(),
                m.kind.code()
            )
            .expect("string write");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, MinutiaeError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(MinutiaeError::Parse {
            line: 1,
            msg: "empty template".into(),
        })?;
        let side = header
            .trim()
            .strip_prefix("# side=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| MinutiaeError::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            })?;
        let mut minutiae = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| MinutiaeError::Parse {
                line: i + 1,
                msg: format!("{msg}: {line:?}"),
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(err("expected `x y theta kind`"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err("bad number"))
            };
            let kind = match cols[3] {
                "E" => MinutiaKind::Ending,
                "B" => MinutiaKind::Bifurcation,
                _ => return Err(err("kind must be E or B")),
            };
            minutiae.push(Minutia::new(
                num(cols[0])?,
                num(cols[1])?,
                num(cols[2])?.to_radians(),
                kind,
            ));
        }
        Ok(Self::new(side, minutiae))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MinutiaeError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MinutiaeError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
