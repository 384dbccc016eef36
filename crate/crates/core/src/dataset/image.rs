use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// Planar (channel-major) `f32` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::Contract(format!(
                "{} values cannot form a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty image");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    fn sample(&self, c: usize, sx: f64, sy: f64, interp: Interpolation) -> f32 {
        let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
        let (sx, sy) = (clamp(sx, self.width), clamp(sy, self.height));
        match interp {
            Interpolation::Nearest => self.get(c, sy.round() as usize, sx.round() as usize),
            Interpolation::Bilinear => {
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let v = |y, x| self.get(c, y, x) as f64;
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                (top * (1.0 - fy) + bottom * fy) as f32
            }
        }
    }

    /// Resamples the square window of side `side` at `(x0, y0)` onto an
    /// `out x out` grid. Output pixel `p` reads source `origin + p * side / out`;
    /// reads past the border clamp to the edge.
    pub fn resample_square(
        &self,
        x0: f64,
        y0: f64,
        side: f64,
        out: usize,
        interp: Interpolation,
    ) -> Image {
        let scale = side / out as f64;
        let mut img = Image::filled(self.channels, out, out, 0.0);
        for c in 0..self.channels {
            for y in 0..out {
                for x in 0..out {
                    let v = self.sample(c, x0 + x as f64 * scale, y0 + y as f64 * scale, interp);
                    img.set(c, y, x, v);
                }
            }
        }
        img
    }
}
