//! Common interface of trainable function approximators.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};

use super::layers::Dense;
use super::network::he_uniform;
use super::{Batch, ForwardCache, GradientBuffer, Mode, Network, ParamLayout, Parameters, Real};

/// A differentiable map from a [`Batch`] to `rows × output_width` values.
pub trait Model<T: Real>: Send + Sync {
    type Cache;

    fn layout(&self) -> &Arc<ParamLayout>;

    fn output_width(&self) -> usize;

    fn init_params(&self, rng: &mut dyn RngCore) -> Parameters<T> {
        he_uniform(self.layout(), rng)
    }

    fn forward(
        &self,
        params: &Parameters<T>,
        batch: &Batch<'_, T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<T>, Self::Cache)>;

    /// Gradient of `Σ d_out ⊙ output` with respect to every parameter.
    fn backward(&self, params: &Parameters<T>, cache: &Self::Cache, d_out: &[T]) -> Result<GradientBuffer<T>>;
}

impl<T: Real> Model<T> for Network {
    type Cache = ForwardCache<T>;

    fn layout(&self) -> &Arc<ParamLayout> {
        Network::layout(self)
    }

    fn output_width(&self) -> usize {
        self.spec().head.width()
    }

    fn forward(
        &self,
        params: &Parameters<T>,
        batch: &Batch<'_, T>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        Network::forward(self, params, batch, mode, rng)
    }

    fn backward(&self, params: &Parameters<T>, cache: &ForwardCache<T>, d_out: &[T]) -> Result<GradientBuffer<T>> {
        Network::backward(self, params, cache, d_out)
    }
}

/// `y = W·obs + b` on the observation rows alone; MAIMs are ignored.
/// Small enough for closed-form checks of the update rules.
#[derive(Debug, Clone)]
pub struct LinearModel {
    layer: Dense,
    layout: Arc<ParamLayout>,
}

/// Observation rows the linear model saw, kept for its backward pass.
#[derive(Debug, Clone)]
pub struct LinearCache<T> {
    observations: Vec<T>,
    rows: usize,
}

impl LinearModel {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        let layer = Dense::new(in_dim, out_dim);
        let layout = ParamLayout::from_entries([
            ("linear.weights", layer.weight_len(), in_dim),
            ("linear.bias", out_dim, 0),
        ]);
        Self {
            layer,
            layout: Arc::new(layout),
        }
    }
}

impl<T: Real> Model<T> for LinearModel {
    type Cache = LinearCache<T>;

    fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    fn output_width(&self) -> usize {
        self.layer.out_dim
    }

    fn forward(
        &self,
        params: &Parameters<T>,
        batch: &Batch<'_, T>,
        _mode: Mode,
        _rng: &mut dyn RngCore,
    ) -> Result<(Vec<T>, LinearCache<T>)> {
        if params.len() != self.layout.total {
            return Err(Error::Shape("linear model parameter count".into()));
        }
        let rows = batch.rows();
        let w = self.layer.weight_len();
        let y = self
            .layer
            .forward(&params.values[..w], &params.values[w..], batch.observations, rows)?;
        Ok((
            y,
            LinearCache {
                observations: batch.observations.to_vec(),
                rows,
            },
        ))
    }

    fn backward(&self, params: &Parameters<T>, cache: &LinearCache<T>, d_out: &[T]) -> Result<GradientBuffer<T>> {
        let mut grads = params.zeros_like();
        let w = self.layer.weight_len();
        let (gw, gb) = grads.values.split_at_mut(w);
        self.layer
            .backward(&params.values[..w], &cache.observations, d_out, cache.rows, gw, gb, None)?;
        Ok(grads)
    }
}
