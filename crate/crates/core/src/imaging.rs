//! Raster containers and the primitive operations every later stage uses.
//!
//! Pixels are stored row-major with the origin at the top-left corner and
//! `y` increasing downward.

use crate::error::{Error, Result};

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be nonzero".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Bilinear sample at a real-valued location. Returns `None` outside the
    /// pixel-center lattice.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if x > max_x || y > max_y {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
        let bottom = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

/// 1-bit image; `true` is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} image",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &BinaryImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Real-valued grid produced by convolution and differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl RealGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid values must be finite".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

impl From<&GrayImage> for RealGrid {
    fn from(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            values: img.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Odd-sized convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width % 2 == 0 || height % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel dimensions must be odd, got {width}x{height}"
            )));
        }
        if weights.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a {width}x{height} kernel",
                weights.len()
            )));
        }
        if weights.iter().all(|&w| w == 0.0) || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "kernel needs at least one nonzero finite weight".into(),
            ));
        }
        Ok(Self { width, height, weights })
    }

    /// The 3x3 correlation detection operator with every row `[1, 2, 1]`.
    pub fn zero_crossing_detector() -> Self {
        Self {
            width: 3,
            height: 3,
            weights: vec![1.0, 2.0, 1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 1.0],
        }
    }

    /// Normalized `size`x`size` Gaussian.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if size % 2 == 0 || sigma <= 0.0 {
            return Err(Error::InvalidArgument(
                "gaussian kernel needs odd size and positive sigma".into(),
            ));
        }
        let half = (size / 2) as f64;
        let mut weights = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - half;
                let dy = y as f64 - half;
                weights.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(size, size, weights)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }
}

/// Reads a binary (P5) PGM.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedPgm("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::MalformedPgm("header ended early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPgm(format!("expected a number at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::MalformedPgm(format!("header value {text:?} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedPgm("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 || maxval == 0 {
        return Err(Error::MalformedPgm("zero width, height or maxval".into()));
    }
    let expected = width as usize * height as usize;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPgm {
            expected,
            found: payload.len(),
        });
    }
    GrayImage::new(width as usize, height as usize, payload[..expected].to_vec())
}

/// Writes a binary PGM with maxval 255: `P5\n<w> <h>\n255\n` then raw pixels.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub(crate) fn gradients_real(grid: &RealGrid) -> Result<(RealGrid, RealGrid)> {
    let (w, h) = (grid.width, grid.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: 3,
            min_height: 3,
        });
    }
    let v = &grid.values;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        let row = y * w;
        gx[row] = v[row + 1] - v[row];
        gx[row + w - 1] = v[row + w - 1] - v[row + w - 2];
        for x in 1..w - 1 {
            gx[row + x] = (v[row + x + 1] - v[row + x - 1]) / 2.0;
        }
    }
    for x in 0..w {
        gy[x] = v[w + x] - v[x];
        gy[(h - 1) * w + x] = v[(h - 1) * w + x] - v[(h - 2) * w + x];
    }
    for y in 1..h - 1 {
        for x in 0..w {
            gy[y * w + x] = (v[(y + 1) * w + x] - v[(y - 1) * w + x]) / 2.0;
        }
    }
    Ok((
        RealGrid { width: w, height: h, values: gx },
        RealGrid { width: w, height: h, values: gy },
    ))
}

/// First derivatives: central differences inside, one-sided on the border.
pub fn gradients(img: &GrayImage) -> Result<(RealGrid, RealGrid)> {
    gradients_real(&RealGrid::from(img))
}

pub(crate) fn convolve_real(grid: &RealGrid, k: &Kernel) -> Result<RealGrid> {
    let (w, h) = (grid.width, grid.height);
    if k.width > w || k.height > h {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min_width: k.width,
            min_height: k.height,
        });
    }
    let hx = (k.width / 2) as isize;
    let hy = (k.height / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for ky in 0..k.height as isize {
                // flipped kernel: true convolution
                let sy = (y + hy - ky).clamp(0, h as isize - 1) as usize;
                let src = &grid.values[sy * w..(sy + 1) * w];
                let krow = &k.weights[ky as usize * k.width..(ky as usize + 1) * k.width];
                for (kx, &wgt) in krow.iter().enumerate() {
                    let sx = (x + hx - kx as isize).clamp(0, w as isize - 1) as usize;
                    acc += wgt * src[sx];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    Ok(RealGrid { width: w, height: h, values: out })
}

/// Same-size 2-D convolution with edge-replication padding.
pub fn convolve2d(img: &GrayImage, k: &Kernel) -> Result<RealGrid> {
    convolve_real(&RealGrid::from(img), k)
}

/// `true` where `value >= t`.
pub fn threshold(grid: &RealGrid, t: f64) -> BinaryImage {
    BinaryImage {
        width: grid.width,
        height: grid.height,
        bits: grid.values.iter().map(|&v| v >= t).collect(),
    }
}

/// Bit-plane decomposition, returned most significant first (b7, b6, ..., b0).
pub fn bit_planes(img: &GrayImage) -> [BinaryImage; 8] {
    std::array::from_fn(|i| {
        let shift = 7 - i;
        BinaryImage {
            width: img.width,
            height: img.height,
            bits: img.data.iter().map(|&v| (v >> shift) & 1 == 1).collect(),
        }
    })
}

/// Inverse of [`bit_planes`].
pub fn from_bit_planes(planes: &[BinaryImage; 8]) -> Result<GrayImage> {
    let (w, h) = (planes[0].width, planes[0].height);
    if planes.iter().any(|p| p.width != w || p.height != h) {
        return Err(Error::DimensionMismatch("bit planes differ in size".into()));
    }
    let mut data = vec![0u8; w * h];
    for (i, plane) in planes.iter().enumerate() {
        let weight = 1u8 << (7 - i);
        for (px, &bit) in data.iter_mut().zip(&plane.bits) {
            if bit {
                *px |= weight;
            }
        }
    }
    GrayImage::new(w, h, data)
}
