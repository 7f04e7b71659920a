use crate::error::{Error, Result};
use crate::image::Image;
use crate::num::Real;

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for tensor of shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// A batch of one image: `(1, C, H, W)`.
    pub fn from_image(img: &Image) -> Self {
        Self::from_images(std::slice::from_ref(img)).expect("single image batch")
    }

    /// Stacks equally-shaped images into one batch.
    pub fn from_images(imgs: &[Image]) -> Result<Self> {
        let first = imgs
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        if imgs.iter().any(|im| !im.same_shape(first)) {
            return Err(Error::ShapeMismatch("batch images differ in shape".into()));
        }
        let data = imgs
            .iter()
            .flat_map(|im| im.data().iter().map(|&v| T::from_f64(v as f64)))
            .collect();
        Self::from_vec(
            [imgs.len(), first.channels(), first.height(), first.width()],
            data,
        )
    }

    /// Converts batch element `n` back to an image.
    pub fn to_image(&self, n: usize) -> Result<Image> {
        let [b, c, h, w] = self.shape;
        if n >= b {
            return Err(Error::InvalidArgument(format!("batch index {n} of {b}")));
        }
        let len = c * h * w;
        Image::new(
            c,
            h,
            w,
            self.data[n * len..(n + 1) * len]
                .iter()
                .map(|&v| v.as_f64() as f32)
                .collect(),
        )
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|&v| U::from_f64(v.as_f64())).collect()),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) {
        debug_assert!(grad.as_ref().is_none_or(|g| g.len() == self.data.len()));
        self.grad = grad;
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<T>> {
        &mut self.grad
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
