//! Planar floating-point images, colour conversion, cropping and PNG I/O.
//!
//! Pixel values are nominally in `[0, 1]` and stored channel-major
//! (`data[c * h * w + y * w + x]`). The only interchange format is 8-bit
//! PNG with one (gray) or three (RGB) channels.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Which channels a metric is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    Rgb,
    Y,
}

impl ColorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ColorMode::Rgb => "rgb",
            ColorMode::Y => "y",
        }
    }
}

impl std::fmt::Display for ColorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ColorMode::Rgb),
            "y" => Ok(ColorMode::Y),
            other => Err(Error::InvalidArgument(format!(
                "unknown color mode `{other}` (expected rgb or y)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from channel-major data, rejecting bad shapes and
    /// non-finite values.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedFormat(format!(
                "{channels} channels (expected 1 or 3)"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::TooSmall(format!("{height}x{width} image")));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image value at index {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image by evaluating `f(c, y, x)` at every sample.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_rgb(&self) -> bool {
        self.channels == 3
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Applies `f` to every sample. The result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Image> {
        Image::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamped(&self) -> Image {
        Image {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Snaps every value onto the 8-bit grid used by [`save_image`], so the
    /// in-memory image equals what a save/load round trip would produce.
    pub fn quantized(&self) -> Image {
        Image {
            data: self
                .data
                .iter()
                .map(|&v| quantize_u8(v) as f32 / 255.0)
                .collect(),
            ..self.clone()
        }
    }

    /// Copies the `h x w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || y + h > self.height || x + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({y}, {x}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for row in y..y + h {
                data.extend_from_slice(&plane[row * self.width + x..row * self.width + x + w]);
            }
        }
        Ok(Image {
            channels: self.channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Unchecked constructor for internal producers that already guarantee
    /// the invariants (finite data of the right length).
    pub(crate) fn from_parts(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Image {
        debug_assert_eq!(data.len(), channels * height * width);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Image {
            channels,
            height,
            width,
            data,
        }
    }
}

/// Clamps to `[0, 1]` and rounds half away from zero onto `0..=255`.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|source| Error::Decode {
        path: path.to_owned(),
        source,
    })?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: bit depth {:?} (only 8-bit PNG is supported)",
            path.display(),
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: color type {other:?} (expected gray or RGB)",
                path.display()
            )))
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|source| Error::Decode {
        path: path.to_owned(),
        source,
    })?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let bytes = &buf[..frame.buffer_size()];

    // interleaved -> planar
    let mut data = vec![0f32; channels * h * w];
    for (i, px) in bytes.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * h * w + i] = b as f32 / 255.0;
        }
    }
    Image::new(channels, h, w, data)
}

/// Encodes the image as an interleaved 8-bit buffer (gray or RGB).
pub fn to_bytes(img: &Image) -> Vec<u8> {
    let (h, w, ch) = (img.height, img.width, img.channels);
    let mut out = vec![0u8; ch * h * w];
    for c in 0..ch {
        for (i, &v) in img.plane(c).iter().enumerate() {
            out[i * ch + c] = quantize_u8(v);
        }
    }
    out
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    encoder.set_depth(png::BitDepth::Eight);
    let enc_err = |source| Error::Encode {
        path: path.to_owned(),
        source,
    };
    let mut writer = encoder.write_header().map_err(enc_err)?;
    writer.write_image_data(&to_bytes(img)).map_err(enc_err)?;
    writer.finish().map_err(enc_err)?;
    Ok(())
}

/// BT.601 studio-swing luma: `(16 + 65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if !img.is_rgb() {
        return Err(Error::InvalidArgument(format!(
            "rgb_to_y needs a 3-channel image, got {}",
            img.channels
        )));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| {
            ((16.0 + 65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) / 255.0) as f32
        })
        .collect();
    Image::new(1, img.height, img.width, data)
}

/// Centered crop removing `n` pixels from each border.
pub fn shave_border(img: &Image, n: usize) -> Result<Image> {
    if 2 * n >= img.height || 2 * n >= img.width {
        return Err(Error::TooSmall(format!(
            "shaving {n} px from a {}x{} image leaves nothing",
            img.height, img.width
        )));
    }
    if n == 0 {
        return Ok(img.clone());
    }
    img.crop(n, n, img.height - 2 * n, img.width - 2 * n)
}
