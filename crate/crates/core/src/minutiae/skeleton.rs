use alloc::vec;
use alloc::vec::Vec;

use super::crossing::{crossing_number, RING_OFFSETS};
use super::{Minutia, MinutiaKind, MinutiaeError, Template};

pub const DEFAULT_TRACE_LENGTH: usize = 5;

/// A thinned ridge image: one byte per pixel, 1 = ridge, row-major, top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl BinaryImage {
    pub fn blank(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, MinutiaeError> {
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(MinutiaeError::BadDimensions { width, height, len: pixels.len() });
        }
        if let Some(i) = pixels.iter().position(|&p| p > 1) {
            return Err(MinutiaeError::NotBinary(i));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn set(&mut self, row: usize, col: usize, ridge: bool) {
        assert!(row < self.height && col < self.width, "pixel ({row}, {col}) out of bounds");
        self.pixels[row * self.width + col] = u8::from(ridge);
    }

    /// Out-of-bounds reads are background.
    pub fn get(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return false;
        }
        self.pixels[row as usize * self.width + col as usize] == 1
    }

    pub fn ring(&self, row: usize, col: usize) -> [bool; 8] {
        let (r, c) = (row as isize, col as isize);
        core::array::from_fn(|i| {
            let (dr, dc) = RING_OFFSETS[i];
            self.get(r + dr, c + dc)
        })
    }

    /// Image row → upward y coordinate.
    fn y_of(&self, row: usize) -> f64 {
        (self.height - 1 - row) as f64
    }
}

/// Scans the interior (outside `border_margin`) in row-major order and emits
/// one minutia per ridge pixel whose crossing number is 1 or 3.
pub fn extract_minutiae(image: &BinaryImage, border_margin: usize) -> Result<Template, MinutiaeError> {
    let (w, h) = (image.width, image.height);
    if border_margin > 0 && (2 * border_margin >= w || 2 * border_margin >= h) {
        return Err(MinutiaeError::BadMargin { margin: border_margin, width: w, height: h });
    }
    let mut minutiae = Vec::new();
    for row in border_margin..h.saturating_sub(border_margin) {
        for col in border_margin..w.saturating_sub(border_margin) {
            if !image.get(row as isize, col as isize) {
                continue;
            }
            let kind = match crossing_number(&image.ring(row, col)) {
                1 => MinutiaKind::Termination,
                3 => MinutiaKind::Bifurcation,
                _ => continue,
            };
            let theta = estimate_direction(image, (row, col), DEFAULT_TRACE_LENGTH)?;
            minutiae.push(Minutia::new(col as f64, image.y_of(row), theta, kind));
        }
    }
    Ok(Template { minutiae, source_id: Default::default() })
}

/// Direction of a minutia at `(row, col)`, found by walking `trace_length`
/// pixels along each ridge branch leaving it. A single branch gives its own
/// direction; with several, the branch pointing most against the mean of the
/// others wins.
pub fn estimate_direction(
    image: &BinaryImage,
    (row, col): (usize, usize),
    trace_length: usize,
) -> Result<f64, MinutiaeError> {
    if trace_length < 2 {
        return Err(MinutiaeError::BadTraceLength(trace_length));
    }
    let too_short = MinutiaeError::TraceTooShort { row, col };
    if !image.get(row as isize, col as isize) {
        return Err(too_short);
    }
    let ring = image.ring(row, col);
    let runs = ring_runs(&ring);
    if runs.is_empty() {
        return Err(too_short);
    }

    let centre = (row as isize, col as isize);
    let mut directions: Vec<(f64, f64)> = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        let mut visited: Vec<(isize, isize)> = vec![centre];
        for (j, other) in runs.iter().enumerate() {
            if j != k {
                visited.extend(other.iter().map(|&i| offset(centre, i)));
            }
        }
        let start = run.iter().copied().find(|i| i % 2 == 0).unwrap_or(run[0]);
        let end = trace(image, offset(centre, start), trace_length, &mut visited);
        let (dx, dy) = ((end.1 - centre.1) as f64, (centre.0 - end.0) as f64);
        let norm = libm::hypot(dx, dy);
        directions.push((dx / norm, dy / norm));
    }

    let chosen = if directions.len() == 1 {
        directions[0]
    } else {
        let mut best = (f64::INFINITY, directions[0]);
        for (i, &u) in directions.iter().enumerate() {
            let (mut mx, mut my) = (0.0, 0.0);
            for (j, &v) in directions.iter().enumerate() {
                if i != j {
                    mx += v.0;
                    my += v.1;
                }
            }
            let norm = libm::hypot(mx, my);
            let cos = if norm > 1e-12 { (u.0 * mx + u.1 * my) / norm } else { 0.0 };
            if cos < best.0 {
                best = (cos, u);
            }
        }
        best.1
    };
    Ok(super::normalize_angle(libm::atan2(chosen.1, chosen.0)))
}

fn offset((r, c): (isize, isize), ring_index: usize) -> (isize, isize) {
    let (dr, dc) = RING_OFFSETS[ring_index];
    (r + dr, c + dc)
}

/// Maximal circular runs of set ring positions, each listed in clockwise order.
fn ring_runs(ring: &[bool; 8]) -> Vec<Vec<usize>> {
    if ring.iter().all(|&b| b) {
        return vec![(0..8).collect()];
    }
    // start just after a background pixel so no run wraps the scan origin
    let origin = (0..8).find(|&i| !ring[i]).unwrap_or(0);
    let mut runs: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for step in 1..=8 {
        let i = (origin + step) % 8;
        if ring[i] {
            current.push(i);
        } else if !current.is_empty() {
            runs.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

/// Walks from `start` for up to `length` steps (counting `start` as the
/// first), preferring edge neighbours over diagonal ones. Returns the last
/// pixel reached.
fn trace(
    image: &BinaryImage,
    start: (isize, isize),
    length: usize,
    visited: &mut Vec<(isize, isize)>,
) -> (isize, isize) {
    let mut current = start;
    visited.push(current);
    for _ in 1..length {
        let next = [0usize, 2, 4, 6, 1, 3, 5, 7]
            .iter()
            .map(|&i| offset(current, i))
            .find(|&p| image.get(p.0, p.1) && !visited.contains(&p));
        match next {
            Some(p) => {
                visited.push(p);
                current = p;
            }
            None => break,
        }
    }
    current
}
