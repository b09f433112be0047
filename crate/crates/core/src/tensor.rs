//! Planar `channels x height x width` arrays of `f64`.

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{} values ({channels}x{height}x{width})", channels * height * width),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    /// Stack single-channel grids of identical shape.
    pub fn from_planes(planes: &[&Grid<f64>]) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Ok(Tensor::zeros(0, 0, 0));
        };
        let (w, h) = first.dims();
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in planes {
            if p.dims() != (w, h) {
                return Err(Error::shape(format!("{w}x{h}"), format!("{}x{}", p.width(), p.height())));
            }
            data.extend_from_slice(p.as_slice());
        }
        Tensor::from_vec(planes.len(), h, w, data)
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

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy channel `c` into a grid.
    pub fn plane_grid(&self, c: usize) -> Grid<f64> {
        Grid::from_vec(self.width, self.height, self.plane(c).to_vec()).expect("plane length")
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Tensor {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(self.channels * w * h);
        for c in 0..self.channels {
            for y in y0..y0 + h {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            }
        }
        Tensor {
            channels: self.channels,
            height: h,
            width: w,
            data,
        }
    }

    /// Concatenate along the channel axis.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Split off the first `c` channels: returns `(first c, rest)`.
    pub fn split_channels(&self, c: usize) -> (Tensor, Tensor) {
        assert!(c <= self.channels);
        let n = c * self.plane_len();
        (
            Tensor {
                channels: c,
                height: self.height,
                width: self.width,
                data: self.data[..n].to_vec(),
            },
            Tensor {
                channels: self.channels - c,
                height: self.height,
                width: self.width,
                data: self.data[n..].to_vec(),
            },
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
