//! File formats: IDX image archives, PGM, CSV point clouds, plan and grid
//! outputs, and JSON run records.
//!
//! Image pixel `(row i, col j)` of an `H × W` image sits at
//! `((j + ½)/W, (H − i − ½)/H)` in the unit square, so images stay upright
//! when plotted. Zero pixels are not part of the support.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::{BinaryGrid, Grid, WeightedPointCloud};
use crate::measures::{Configuration, DualPotentials, Marginal, SparsePlan};

const IDX3_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdxHeader {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: "file truncated inside the header".into(),
        })
}

/// Parses and checks an IDX3 header, including that the payload is complete.
pub fn parse_idx_header(bytes: &[u8]) -> Result<IdxHeader> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX3_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected {IDX3_MAGIC:#010x}"),
        });
    }
    let h = IdxHeader {
        count: be_u32(bytes, 4)? as usize,
        rows: be_u32(bytes, 8)? as usize,
        cols: be_u32(bytes, 12)? as usize,
    };
    let need = 16 + h.count * h.rows * h.cols;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "payload truncated: {} images of {}x{} need {need} bytes",
                h.count, h.rows, h.cols
            ),
        });
    }
    Ok(h)
}

/// Marginal of a row-major grayscale image; zero pixels are dropped.
pub fn image_to_marginal(pixels: &[u16], height: usize, width: usize) -> Result<Marginal> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..height {
        for j in 0..width {
            let v = pixels[i * width + j];
            if v > 0 {
                points.push(vec![
                    (j as f64 + 0.5) / width as f64,
                    (height as f64 - i as f64 - 0.5) / height as f64,
                ]);
                weights.push(v as f64);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyMeasure("image has no nonzero pixel".into()));
    }
    Marginal::from_weights(points, weights)
}

/// Reads the selected images of an IDX3 archive as marginals.
pub fn read_idx_images(path: impl AsRef<Path>, which: &[usize]) -> Result<Vec<Marginal>> {
    let bytes = fs::read(path)?;
    let h = parse_idx_header(&bytes)?;
    let size = h.rows * h.cols;
    which
        .iter()
        .map(|&n| {
            if n >= h.count {
                return Err(Error::InvalidParameter(format!(
                    "image {n} requested from an archive of {}",
                    h.count
                )));
            }
            let start = 16 + n * size;
            let px: Vec<u16> = bytes[start..start + size].iter().map(|&b| b as u16).collect();
            image_to_marginal(&px, h.rows, h.cols)
                .map(|m| m.with_label(format!("image {n}")))
                .map_err(|e| match e {
                    Error::EmptyMeasure(_) => Error::EmptyMeasure(format!("image {n} is all zero")),
                    e => e,
                })
        })
        .collect()
}

/// Writes 8-bit images as an IDX3 archive.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX3_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for (k, img) in images.iter().enumerate() {
        if img.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "image {k} has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(img);
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                offset: start as u64,
                message: format!("expected {what}"),
            })
    }
}

/// Parses a P2 or P5 graymap.
pub fn parse_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => {
            return Err(Error::Format {
                offset: 0,
                message: "not a P2/P5 graymap".into(),
            })
        }
    };
    let mut t = Tokens { bytes, pos: 2 };
    let width = t.number("width")?;
    let height = t.number("height")?;
    let maxval_at = t.pos;
    let maxval = t.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format {
            offset: maxval_at as u64,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        let start = t.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let data = bytes.get(start..start + need).ok_or(Error::Format {
            offset: bytes.len() as u64,
            message: format!("raster truncated: need {need} bytes"),
        })?;
        if wide {
            pixels.extend(data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
        } else {
            pixels.extend(data.iter().map(|&b| b as u16));
        }
    } else {
        for _ in 0..n {
            let at = t.pos;
            let v = t.number("pixel value")?;
            if v > maxval {
                return Err(Error::Format {
                    offset: at as u64,
                    message: format!("pixel {v} exceeds maxval {maxval}"),
                });
            }
            pixels.push(v as u16);
        }
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Marginal> {
    let img = parse_pgm(&fs::read(path)?)?;
    image_to_marginal(&img.pixels, img.height, img.width)
}

/// Reads rows `x[,y[,z...]],mass`. Blank lines and `#` comments are
/// skipped; zero masses are dropped; negative masses are rejected.
pub fn parse_csv_cloud(text: &str) -> Result<Marginal> {
    let mut points = Vec::new();
    let mut masses = Vec::new();
    let mut dim = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = s
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line,
                message: format!("{e} in {s:?}"),
            })?;
        if vals.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "need at least one coordinate and a mass".into(),
            });
        }
        let d = vals.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Parse {
                line,
                message: format!("{d} coordinates, earlier rows had {}", dim.unwrap()),
            });
        }
        let mass = vals[d];
        if !mass.is_finite() || mass < 0.0 || vals[..d].iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line,
                message: format!("invalid mass or coordinate in {s:?}"),
            });
        }
        if mass > 0.0 {
            points.push(vals[..d].to_vec());
            masses.push(mass);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyMeasure("no rows with positive mass".into()));
    }
    Marginal::new(points, masses)
}

pub fn read_csv_cloud(path: impl AsRef<Path>) -> Result<Marginal> {
    parse_csv_cloud(&fs::read_to_string(path)?)
}

/// Lines `i1,...,iN,mass` in lexicographic order.
pub fn format_plan(plan: &SparsePlan) -> String {
    let mut out = String::new();
    for (c, m) in plan.iter() {
        for i in c.indices() {
            write!(out, "{i},").unwrap();
        }
        writeln!(out, "{m:.16e}").unwrap();
    }
    out
}

pub fn write_plan(path: impl AsRef<Path>, plan: &SparsePlan) -> Result<()> {
    fs::write(path, format_plan(plan))?;
    Ok(())
}

pub fn read_plan(path: impl AsRef<Path>, shape: &[usize]) -> Result<SparsePlan> {
    let text = fs::read_to_string(path)?;
    let mut plan = SparsePlan::new(shape.to_vec());
    for (n, raw) in text.lines().enumerate() {
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() != shape.len() + 1 {
            return Err(bad(format!("expected {} fields", shape.len() + 1)));
        }
        let idx: Vec<usize> = fields[..shape.len()]
            .iter()
            .map(|f| f.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("{e}")))?;
        let mass: f64 = fields[shape.len()].parse().map_err(|e| bad(format!("{e}")))?;
        plan.add(Configuration::new(idx), mass)?;
    }
    Ok(plan)
}

pub fn format_cloud(cloud: &WeightedPointCloud) -> String {
    let mut out = String::new();
    for (p, m) in cloud.points.iter().zip(&cloud.masses) {
        for x in p {
            write!(out, "{x:.16e},").unwrap();
        }
        writeln!(out, "{m:.16e}").unwrap();
    }
    out
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &WeightedPointCloud) -> Result<()> {
    fs::write(path, format_cloud(cloud))?;
    Ok(())
}

/// Reads a cloud written by [`write_cloud`] without renormalizing.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<WeightedPointCloud> {
    let m = read_csv_cloud(path)?;
    Ok(WeightedPointCloud {
        points: m.points().to_vec(),
        masses: m.masses().to_vec(),
    })
}

/// Lines `k,i,u`.
pub fn write_potentials(path: impl AsRef<Path>, u: &DualPotentials) -> Result<()> {
    let mut out = String::from("k,i,u\n");
    for (k, uk) in u.u.iter().enumerate() {
        for (i, v) in uk.iter().enumerate() {
            writeln!(out, "{k},{i},{v:.16e}").unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn grid_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [w] => Ok((w, 1)),
        [w, h] => Ok((w, h)),
        _ => Err(Error::ShapeMismatch(format!(
            "only 1-D and 2-D grids can be written as images, got {}-D",
            shape.len()
        ))),
    }
}

fn pgm16(width: usize, height: usize, value: impl Fn(usize, usize) -> u16) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            out.extend_from_slice(&value(x, y).to_be_bytes());
        }
    }
    out
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}

/// Writes a 16-bit PGM scaled so the largest cell is 65535, and a
/// `<path>.scale` file holding the mass of a full-scale pixel.
///
/// Grid dimension 0 runs left to right and dimension 1 bottom to top.
pub fn write_grid(path: impl AsRef<Path>, grid: &Grid) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = grid_dims(&grid.spec.shape)?;
    let max = grid.values.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let img = pgm16(w, h, |x, y| (grid.values[x * h + y] * scale).round() as u16);
    fs::write(path, img)?;
    let mut meta = String::new();
    writeln!(meta, "max_mass {max:.16e}").unwrap();
    writeln!(meta, "total_mass {:.16e}", grid.total()).unwrap();
    writeln!(meta, "width {w}").unwrap();
    writeln!(meta, "height {h}").unwrap();
    for (d, (o, s)) in grid.spec.origin.iter().zip(&grid.spec.spacing).enumerate() {
        writeln!(meta, "axis{d} origin {o:.16e} spacing {s:.16e}").unwrap();
    }
    fs::write(sidecar(path), meta)?;
    Ok(())
}

/// Writes a mask as a 16-bit PGM with set cells at 65535.
pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryGrid) -> Result<()> {
    let (w, h) = grid_dims(&mask.shape)?;
    fs::write(path, pgm16(w, h, |x, y| if mask.cells[x * h + y] { 65535 } else { 0 }))?;
    Ok(())
}

/// Everything needed to rerun a command, plus its outcome.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub seed: u64,
    pub beta: f64,
    pub max_stall: usize,
    pub acceptance_tol: f64,
    pub locality: Option<usize>,
    pub resolve: String,
    pub cost: String,
    pub shape: Vec<usize>,
    pub objective: f64,
    pub support_size: usize,
    pub sparsity_bound: usize,
    pub peak_omega: usize,
    pub iterations: usize,
    pub proposals: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub termination: String,
    pub certificate_exhaustive: Option<bool>,
    pub certificate_checked: Option<u64>,
    pub certificate_violations: Option<u64>,
    pub certificate_max_violation: Option<f64>,
    pub wall_clock_seconds: f64,
    pub cost_history: Vec<(usize, f64)>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, String>,
}

pub fn write_run_record(path: impl AsRef<Path>, record: &RunRecord) -> Result<()> {
    let mut s = serde_json::to_string_pretty(record)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
