//! Raster primitives: grayscale images, summed-area tables, pyramids and
//! sliding-window enumeration.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of the canonical detection window, in pixels.
pub const WINDOW_SIZE: usize = 40;

/// 8-bit luminance raster stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl AsRef<GrayImage> for GrayImage {
    fn as_ref(&self) -> &GrayImage {
        self
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::input(format!(
                "pixel buffer has {} bytes, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single value.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Copy of the region `rect`, which must lie inside the image.
    pub fn crop(&self, rect: Rect) -> Result<GrayImage> {
        if !rect.fits(self.width, self.height) || rect.width == 0 || rect.height == 0 {
            return Err(Error::input(format!(
                "crop {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + rect.x..row + rect.x + rect.width]);
        }
        GrayImage::new(rect.width, rect.height, data)
    }

    /// Bilinear sample at continuous coordinates where pixel `(i, j)` has its
    /// centre at `(i + 0.5, j + 0.5)`. Coordinates outside the raster are
    /// clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + (p10 - p00) * ax;
        let bottom = p01 + (p11 - p01) * ax;
        top + (bottom - top) * ay
    }

    /// Bilinear resize to `width` x `height` with pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> Result<GrayImage> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            let y = (j as f64 + 0.5) * sy;
            for i in 0..width {
                let x = (i as f64 + 0.5) * sx;
                data.push(round_u8(self.sample_bilinear(x, y)));
            }
        }
        GrayImage::new(width, height, data)
    }

    /// Reads an 8-bit binary PGM (P5) file.
    pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pgm_from(BufReader::new(file)).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: msg,
        })
    }

    fn read_pgm_from(mut reader: impl BufRead) -> std::result::Result<GrayImage, String> {
        // Header: magic, width, height, maxval separated by whitespace, with
        // '#' comments running to end of line.
        let mut tokens = Vec::with_capacity(4);
        let mut token = String::new();
        let mut byte = [0u8; 1];
        let mut in_comment = false;
        while tokens.len() < 4 {
            let n = reader.read(&mut byte).map_err(|e| e.to_string())?;
            if n == 0 {
                return Err("unexpected end of PGM header".into());
            }
            let c = byte[0];
            if in_comment {
                in_comment = c != b'\n';
                continue;
            }
            if c == b'#' {
                in_comment = true;
            } else if c.is_ascii_whitespace() {
                if !token.is_empty() {
                    tokens.push(std::mem::take(&mut token));
                }
            } else {
                token.push(c as char);
            }
        }
        if tokens[0] != "P5" {
            return Err(format!("unsupported PGM magic {:?} (only P5)", tokens[0]));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("bad PGM {what}: {s:?}"))
        };
        let width = parse(&tokens[1], "width")?;
        let height = parse(&tokens[2], "height")?;
        let maxval = parse(&tokens[3], "maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(format!("unsupported PGM maxval {maxval} (8-bit only)"));
        }
        let mut data = vec![0u8; width * height];
        reader
            .read_exact(&mut data)
            .map_err(|_| "truncated PGM pixel data".to_string())?;
        if maxval != 255 {
            for p in &mut data {
                *p = ((*p as usize * 255 + maxval / 2) / maxval).min(255) as u8;
            }
        }
        GrayImage::new(width, height, data).map_err(|e| e.to_string())
    }

    /// Writes the image as binary PGM (P5).
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.data);
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads PGM, or PNG when built with the `png` feature.
    pub fn open(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        #[cfg(feature = "png")]
        {
            let is_png = path
                .extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false);
            if is_png {
                let img = image::open(path)
                    .map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        line: 1,
                        message: e.to_string(),
                    })?
                    .to_luma8();
                let (w, h) = img.dimensions();
                return GrayImage::new(w as usize, h as usize, img.into_raw());
            }
        }
        Self::read_pgm(path)
    }
}

#[inline]
pub(crate) fn round_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Converts interleaved 8-bit RGB to luminance with ITU-R 601 weights.
pub fn to_grayscale(rgb: &[u8], width: usize, height: usize) -> Result<GrayImage> {
    if rgb.len() != 3 * width * height {
        return Err(Error::input(format!(
            "RGB buffer has {} bytes, expected 3x{}x{}",
            rgb.len(),
            width,
            height
        )));
    }
    let data = rgb
        .chunks_exact(3)
        .map(|p| round_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    GrayImage::new(width, height, data)
}

/// Axis-aligned integer rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    #[inline]
    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.width <= width && self.y + self.height <= height
    }
}

/// Summed-area table with a zero guard row and column.
///
/// `value(x, y)` is the sum of all pixels with `x' <= x` and `y' <= y`.
#[derive(Clone, Debug)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    // (width + 1) x (height + 1), first row and column zero.
    table: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut table = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0u64;
            let src = &img.data()[y * w..(y + 1) * w];
            for (x, &p) in src.iter().enumerate() {
                row_sum += p as u64;
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage {
            width: w,
            height: h,
            table,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Inclusive cumulative sum at `(x, y)`.
    #[inline]
    pub fn value(&self, x: usize, y: usize) -> u64 {
        self.table[(y + 1) * (self.width + 1) + x + 1]
    }

    /// Sum over `rect`, checked against the image bounds.
    pub fn box_sum(&self, rect: Rect) -> Result<u64> {
        if !rect.fits(self.width, self.height) {
            return Err(Error::input(format!(
                "rectangle {rect:?} outside {}x{} integral image",
                self.width, self.height
            )));
        }
        Ok(self.sum(rect.x, rect.y, rect.width, rect.height))
    }

    /// Unchecked rectangle sum via four table reads.
    #[inline]
    pub fn sum(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        let s = self.width + 1;
        let a = self.table[y * s + x];
        let b = self.table[y * s + x + w];
        let c = self.table[(y + h) * s + x];
        let d = self.table[(y + h) * s + x + w];
        d + a - b - c
    }
}

/// Convenience wrapper matching the free-function form.
pub fn integral_image(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}

/// A canonical-size window at a pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WindowRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub scale_index: usize,
}

impl WindowRect {
    pub const fn canonical(x: usize, y: usize, scale_index: usize) -> Self {
        WindowRect {
            x,
            y,
            width: WINDOW_SIZE,
            height: WINDOW_SIZE,
            scale_index,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.width, self.height)
    }
}

/// One level of an image pyramid.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    pub image: GrayImage,
    /// Level size divided by original size.
    pub scale: f64,
}

/// Pyramid parameters; `max_face` of `None` means unbounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidParams {
    pub scale_factor: f64,
    pub min_face: usize,
    pub max_face: Option<usize>,
}

impl Default for PyramidParams {
    fn default() -> Self {
        PyramidParams {
            scale_factor: 1.25,
            min_face: 40,
            max_face: None,
        }
    }
}

impl PyramidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_factor > 1.0) || !self.scale_factor.is_finite() {
            return Err(Error::config(format!(
                "scale factor must be > 1, got {}",
                self.scale_factor
            )));
        }
        if self.min_face < WINDOW_SIZE {
            return Err(Error::config(format!(
                "minimum face size {} is below the {WINDOW_SIZE}px window",
                self.min_face
            )));
        }
        if let Some(max) = self.max_face {
            if max < self.min_face {
                return Err(Error::config(format!(
                    "maximum face size {max} is below minimum {}",
                    self.min_face
                )));
            }
        }
        Ok(())
    }

    /// Geometry of every level as `(width, height, scale)` without resampling.
    pub fn level_geometry(&self, width: usize, height: usize) -> Result<Vec<(usize, usize, f64)>> {
        self.validate()?;
        let mut levels = Vec::new();
        let base = WINDOW_SIZE as f64 / self.min_face as f64;
        for k in 0.. {
            let scale = base / self.scale_factor.powi(k);
            let w = level_dim(width, scale);
            let h = level_dim(height, scale);
            if w < WINDOW_SIZE || h < WINDOW_SIZE {
                break;
            }
            if let Some(max) = self.max_face {
                if WINDOW_SIZE as f64 / scale > max as f64 + 1e-9 {
                    break;
                }
            }
            levels.push((w, h, scale));
        }
        Ok(levels)
    }
}

#[inline]
fn level_dim(n: usize, scale: f64) -> usize {
    (n as f64 * scale + 1e-9).floor() as usize
}

/// Builds the detection pyramid. The first level is scaled by
/// `40 / min_face`; each further level is smaller by `scale_factor`.
pub fn build_pyramid(img: &GrayImage, params: &PyramidParams) -> Result<Vec<PyramidLevel>> {
    params
        .level_geometry(img.width(), img.height())?
        .into_iter()
        .map(|(w, h, scale)| {
            Ok(PyramidLevel {
                image: img.resize(w, h)?,
                scale,
            })
        })
        .collect()
}

/// Row-major iterator over all window positions on the stride grid.
#[derive(Clone, Debug)]
pub struct Windows {
    cols: usize,
    rows: usize,
    stride: usize,
    window: usize,
    scale_index: usize,
    next: usize,
}

impl Iterator for Windows {
    type Item = WindowRect;

    fn next(&mut self) -> Option<WindowRect> {
        if self.next >= self.cols * self.rows {
            return None;
        }
        let (r, c) = (self.next / self.cols, self.next % self.cols);
        self.next += 1;
        Some(WindowRect {
            x: c * self.stride,
            y: r * self.stride,
            width: self.window,
            height: self.window,
            scale_index: self.scale_index,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.cols * self.rows - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Windows {}

/// Enumerates `window`-sized positions at multiples of `stride`.
/// A level smaller than the window yields nothing.
pub fn enumerate_windows(
    level_width: usize,
    level_height: usize,
    window: usize,
    stride: usize,
    scale_index: usize,
) -> Result<Windows> {
    if stride == 0 {
        return Err(Error::config("window stride must be at least 1"));
    }
    let count = |n: usize| if n < window { 0 } else { (n - window) / stride + 1 };
    Ok(Windows {
        cols: count(level_width),
        rows: count(level_height),
        stride,
        window,
        scale_index,
        next: 0,
    })
}
