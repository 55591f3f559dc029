//! Actor and critic networks.
//!
//! ```text
//! MAIM (1×H×W) ─► [conv3×3 → elu → maxpool2] × L ─► flatten ─► dense → elu ─► f
//! obs ─┐
//!      ├─ layer 1: [obs | f]              → dense → elu → dropout ─► d1
//!      ├─ layer 2: [obs | d1 | f]         → dense → elu → dropout ─► d2
//!      └─ layer 3: [obs | d1 | d2 | f]    → dense → elu → dropout ─► d3 ─► head
//! ```
//!
//! The dense block concatenates every earlier output (DenseNet style) and
//! re-injects the MAIM feature vector `f` at every layer. With
//! [`ConvSharing::PerLayer`] each dense layer gets its own encoder. The
//! [`Architecture::DenseOnly`] baseline replaces the convolutional encoder
//! by a single dense projection of the flattened MAIM, so it owns no
//! convolution parameters at all.
//!
//! Forward passes are batched: a batch is a set of observation rows plus a
//! set of MAIMs, with every row pointing at the MAIM of its environment
//! step. Each MAIM is encoded once per pass regardless of how many rows use it.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{dropout, elu_backward, elu_inplace, Conv2d, Dense, MaxPool2};
use super::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Dense block fed by a flat projection of the MAIM, no convolutions.
    DenseOnly,
    /// Dense block fed by the convolutional MAIM encoder.
    DenseCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvSharing {
    /// One encoder whose features feed all dense layers.
    Shared,
    /// A separate encoder per dense layer.
    PerLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Policy { actions: usize },
    Value,
}

impl Head {
    pub fn width(self) -> usize {
        match self {
            Head::Policy { actions } => actions,
            Head::Value => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub observation_dim: usize,
    pub maim_height: usize,
    pub maim_width: usize,
    pub architecture: Architecture,
    pub conv_sharing: ConvSharing,
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub maim_feature_dim: usize,
    pub dense_layers: usize,
    pub dense_width: usize,
    pub head: Head,
    pub dropout_rate: f64,
}

impl NetworkSpec {
    /// Two 32-filter conv stages, 64 MAIM features, three 256-wide dense layers, dropout 0.1.
    pub fn new(observation_dim: usize, maim_height: usize, maim_width: usize, head: Head) -> Self {
        Self {
            observation_dim,
            maim_height,
            maim_width,
            architecture: Architecture::DenseCnn,
            conv_sharing: ConvSharing::Shared,
            conv_layers: 2,
            conv_filters: 32,
            maim_feature_dim: 64,
            dense_layers: 3,
            dense_width: 256,
            head,
            dropout_rate: 0.1,
        }
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("network spec: {m}")));
        if !(0.1..=0.5).contains(&self.dropout_rate) {
            return fail(format!("dropout {} outside [0.1, 0.5]", self.dropout_rate));
        }
        if self.observation_dim == 0
            || self.maim_feature_dim == 0
            || self.dense_layers == 0
            || self.dense_width == 0
            || self.head.width() == 0
            || self.maim_height == 0
            || self.maim_width == 0
        {
            return fail("all dimensions must be positive".into());
        }
        if self.architecture == Architecture::DenseCnn {
            if self.conv_layers == 0 || self.conv_filters == 0 {
                return fail("a convolutional encoder needs at least one 1+ filter layer".into());
            }
            let min = 1usize << self.conv_layers;
            if self.maim_height < min || self.maim_width < min {
                return fail(format!(
                    "MAIM {}x{} too small for {} pooling stages",
                    self.maim_height, self.maim_width, self.conv_layers
                ));
            }
        }
        Ok(())
    }

    pub fn encoder_count(&self) -> usize {
        match (self.architecture, self.conv_sharing) {
            (Architecture::DenseCnn, ConvSharing::PerLayer) => self.dense_layers,
            _ => 1,
        }
    }

    /// Encoder feeding dense layer `layer`.
    pub fn encoder_for_layer(&self, layer: usize) -> usize {
        layer.min(self.encoder_count() - 1)
    }

    /// Input width of dense layer `layer` (0-based).
    pub fn dense_input_width(&self, layer: usize) -> usize {
        self.observation_dim + layer * self.dense_width + self.maim_feature_dim
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).total
    }
}

/// Names the slice of the flat parameter vector that belongs to one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Fan-in used for initialisation; zero for biases.
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    weights: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct ConvStage {
    conv: Conv2d,
    pool: MaxPool2,
    slot: Slot,
}

#[derive(Debug, Clone)]
struct EncoderLayout {
    stages: Vec<ConvStage>,
    projection: Dense,
    projection_slot: Slot,
}

/// Parameter layout table: where each tensor's values live in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        Wiring::build(spec).0
    }

    /// Builds a layout from `(name, len, fan_in)` entries laid out in order.
    pub fn from_entries<S: Into<String>>(entries: impl IntoIterator<Item = (S, usize, usize)>) -> Self {
        let mut layout = Self {
            blocks: Vec::new(),
            total: 0,
        };
        for (name, len, fan_in) in entries {
            layout.push(name.into(), len, fan_in);
        }
        layout
    }

    fn push(&mut self, name: String, len: usize, fan_in: usize) -> usize {
        let offset = self.total;
        self.blocks.push(ParamBlock {
            name,
            offset,
            len,
            fan_in,
        });
        self.total += len;
        offset
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Which layer reads which slice of the parameter vector.
#[derive(Debug, Clone)]
struct Wiring {
    encoders: Vec<EncoderLayout>,
    dense: Vec<(Dense, Slot)>,
    head: (Dense, Slot),
}

impl Wiring {
    fn build(spec: &NetworkSpec) -> (ParamLayout, Wiring) {
        let mut layout = ParamLayout::from_entries(std::iter::empty::<(String, usize, usize)>());
        let mut encoders = Vec::new();
        for e in 0..spec.encoder_count() {
            let mut stages = Vec::new();
            let (mut c, mut h, mut w) = (1, spec.maim_height, spec.maim_width);
            if spec.architecture == Architecture::DenseCnn {
                for l in 0..spec.conv_layers {
                    let conv = Conv2d {
                        in_channels: c,
                        filters: spec.conv_filters,
                        height: h,
                        width: w,
                    };
                    let slot = Slot {
                        weights: layout.push(format!("enc{e}.conv{l}.kernels"), conv.kernel_len(), c * 9),
                        bias: layout.push(format!("enc{e}.conv{l}.bias"), conv.filters, 0),
                    };
                    let pool = MaxPool2 {
                        channels: conv.filters,
                        height: h,
                        width: w,
                    };
                    stages.push(ConvStage { conv, pool, slot });
                    c = conv.filters;
                    h = pool.out_height();
                    w = pool.out_width();
                }
            }
            let projection = Dense::new(c * h * w, spec.maim_feature_dim);
            let projection_slot = Slot {
                weights: layout.push(
                    format!("enc{e}.projection.weights"),
                    projection.weight_len(),
                    projection.in_dim,
                ),
                bias: layout.push(format!("enc{e}.projection.bias"), projection.out_dim, 0),
            };
            encoders.push(EncoderLayout {
                stages,
                projection,
                projection_slot,
            });
        }
        let mut dense = Vec::new();
        for l in 0..spec.dense_layers {
            let layer = Dense::new(spec.dense_input_width(l), spec.dense_width);
            let slot = Slot {
                weights: layout.push(format!("dense{l}.weights"), layer.weight_len(), layer.in_dim),
                bias: layout.push(format!("dense{l}.bias"), layer.out_dim, 0),
            };
            dense.push((layer, slot));
        }
        let head_layer = Dense::new(spec.dense_width, spec.head.width());
        let head = (
            head_layer,
            Slot {
                weights: layout.push("head.weights".into(), head_layer.weight_len(), head_layer.in_dim),
                bias: layout.push("head.bias".into(), head_layer.out_dim, 0),
            },
        );
        (layout, Wiring { encoders, dense, head })
    }
}

/// Flat learnable-parameter store with its layout table.
#[derive(Debug, Clone)]
pub struct Parameters<T> {
    pub values: Vec<T>,
    pub layout: Arc<ParamLayout>,
}

/// Gradient accumulator sharing the parameter layout.
pub type GradientBuffer<T> = Parameters<T>;

impl<T: Real> Parameters<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![T::zero(); layout.total],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(Arc::clone(&self.layout))
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.total {
            return Err(Error::Shape(format!(
                "layout needs {} parameters, got {}",
                layout.total,
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[T]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn check_same_layout(&self, other: &Parameters<T>) -> Result<()> {
        if self.values.len() != other.values.len() || self.layout.blocks != other.layout.blocks {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Parameters<T>) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        Ok(())
    }

    /// FNV-style fold over the exact bit patterns. Used to detect a forward
    /// cache being replayed against a different snapshot.
    pub fn fingerprint(&self) -> u64 {
        self.values.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.as_f64().to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            layout: Arc::clone(&self.layout),
        }
    }

    fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.values[offset..offset + len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No dropout; a pure function of parameters and inputs.
    Eval,
    /// Dropout active, masks recorded for the backward pass.
    Train,
}

/// One forward-pass input batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    /// `rows × observation_dim`, row-major.
    pub observations: &'a [T],
    /// Encoded MAIMs, each `1 × H × W`.
    pub maims: &'a [Tensor<T>],
    /// For every observation row, the index of its MAIM.
    pub row_maim: &'a [usize],
}

impl<T> Batch<'_, T> {
    pub fn rows(&self) -> usize {
        self.row_maim.len()
    }
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    input: Vec<T>,
    activated: Vec<T>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
struct EncoderCache<T> {
    /// `[maim][stage]`
    stages: Vec<Vec<StageCache<T>>>,
    /// `maims × flat`
    flat: Vec<T>,
    /// `maims × feature_dim`, post-ELU.
    features: Vec<T>,
}

#[derive(Debug, Clone)]
struct DenseCache<T> {
    input: Vec<T>,
    activated: Vec<T>,
    mask: Option<Vec<T>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    rows: usize,
    row_maim: Vec<usize>,
    maim_count: usize,
    encoders: Vec<EncoderCache<T>>,
    dense: Vec<DenseCache<T>>,
    /// Output of the last dense layer after dropout.
    block_output: Vec<T>,
    mode: Mode,
    fingerprint: u64,
}

impl<T> ForwardCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Hash of every recorded max-pool argmax. Two passes with equal
    /// signatures routed gradients through the same pooling winners.
    pub fn pooling_signature(&self) -> u64 {
        self.encoders
            .iter()
            .flat_map(|e| e.stages.iter().flatten())
            .flat_map(|s| s.argmax.iter())
            .fold(0xcbf2_9ce4_8422_2325u64, |h, &i| (h ^ i as u64).wrapping_mul(0x0100_0000_01b3))
    }
}

impl<T: Real> ForwardCache<T> {
    /// Hash of the sign of every ELU output. ELU keeps the sign of its
    /// input, so equal signatures mean no pre-activation crossed zero.
    pub fn activation_signature(&self) -> u64 {
        let encoders = self.encoders.iter().flat_map(|e| {
            e.stages
                .iter()
                .flatten()
                .flat_map(|s| s.activated.iter())
                .chain(e.features.iter())
        });
        let dense = self.dense.iter().flat_map(|d| d.activated.iter());
        encoders
            .chain(dense)
            .fold(0xcbf2_9ce4_8422_2325u64, |h, &v| (h ^ (v > T::zero()) as u64).wrapping_mul(0x0100_0000_01b3))
    }

    /// Combined pooling and activation signature: the piecewise region of
    /// the network the forward pass ran in.
    pub fn kink_signature(&self) -> u64 {
        self.pooling_signature() ^ self.activation_signature().rotate_left(1)
    }
}

/// Architecture plus layout; parameters are passed in separately so that
/// snapshots stay immutable.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    layout: Arc<ParamLayout>,
    wiring: Wiring,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let (layout, wiring) = Wiring::build(&spec);
        Ok(Self {
            layout: Arc::new(layout),
            spec,
            wiring,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Parameters<T> {
        he_uniform(&self.layout, rng)
    }

    fn check_params<T: Real>(&self, params: &Parameters<T>) -> Result<()> {
        if params.values.len() != self.layout.total {
            return Err(Error::Shape(format!(
                "network needs {} parameters, got {}",
                self.layout.total,
                params.values.len()
            )));
        }
        Ok(())
    }

    fn check_batch<T: Real>(&self, batch: &Batch<'_, T>) -> Result<()> {
        let rows = batch.rows();
        if batch.observations.len() != rows * self.spec.observation_dim {
            return Err(Error::Shape(format!(
                "{} observation values for {rows} rows of width {}",
                batch.observations.len(),
                self.spec.observation_dim
            )));
        }
        let want = [1, self.spec.maim_height, self.spec.maim_width];
        if let Some(bad) = batch.maims.iter().find(|m| m.shape() != want) {
            return Err(Error::Shape(format!(
                "MAIM shape {:?}, expected {want:?}",
                bad.shape()
            )));
        }
        if let Some(&bad) = batch.row_maim.iter().find(|&&m| m >= batch.maims.len()) {
            return Err(Error::Shape(format!(
                "row refers to MAIM {bad} of {}",
                batch.maims.len()
            )));
        }
        Ok(())
    }

    /// Encodes each MAIM through one encoder.
    fn encode<T: Real>(
        &self,
        enc: &EncoderLayout,
        params: &Parameters<T>,
        maims: &[Tensor<T>],
    ) -> Result<EncoderCache<T>> {
        let flat_dim = enc.projection.in_dim;
        let mut flat = Vec::with_capacity(maims.len() * flat_dim);
        let mut stages = Vec::with_capacity(maims.len());
        for maim in maims {
            let mut x = maim.data().to_vec();
            let mut caches = Vec::with_capacity(enc.stages.len());
            for stage in &enc.stages {
                let mut y = stage.conv.forward(
                    params.slice(stage.slot.weights, stage.conv.kernel_len()),
                    params.slice(stage.slot.bias, stage.conv.filters),
                    &x,
                )?;
                elu_inplace(&mut y);
                let (pooled, argmax) = stage.pool.forward(&y)?;
                caches.push(StageCache {
                    input: std::mem::replace(&mut x, pooled),
                    activated: y,
                    argmax,
                });
            }
            flat.extend_from_slice(&x);
            stages.push(caches);
        }
        let mut features = enc.projection.forward(
            params.slice(enc.projection_slot.weights, enc.projection.weight_len()),
            params.slice(enc.projection_slot.bias, enc.projection.out_dim),
            &flat,
            maims.len(),
        )?;
        elu_inplace(&mut features);
        Ok(EncoderCache {
            stages,
            flat,
            features,
        })
    }

    /// Batched forward pass. Returns `rows × head_width` outputs (policy
    /// logits or values) and the cache for [`Network::backward`].
    pub fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        params: &Parameters<T>,
        batch: &Batch<'_, T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let spec = &self.spec;
        let rows = batch.rows();
        let encoders = self
            .wiring
            .encoders
            .iter()
            .map(|enc| self.encode(enc, params, batch.maims))
            .collect::<Result<Vec<_>>>()?;

        let f_dim = spec.maim_feature_dim;
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(spec.dense_layers);
        let mut dense = Vec::with_capacity(spec.dense_layers);
        for (l, (layer, slot)) in self.wiring.dense.iter().enumerate() {
            let features = &encoders[spec.encoder_for_layer(l)].features;
            let mut input = Vec::with_capacity(rows * layer.in_dim);
            for r in 0..rows {
                let obs = &batch.observations[r * spec.observation_dim..(r + 1) * spec.observation_dim];
                input.extend_from_slice(obs);
                for prev in &outputs {
                    input.extend_from_slice(&prev[r * spec.dense_width..(r + 1) * spec.dense_width]);
                }
                let m = batch.row_maim[r];
                input.extend_from_slice(&features[m * f_dim..(m + 1) * f_dim]);
            }
            let mut activated = layer.forward(
                params.slice(slot.weights, layer.weight_len()),
                params.slice(slot.bias, layer.out_dim),
                &input,
                rows,
            )?;
            elu_inplace(&mut activated);
            let mut out = activated.clone();
            let mask = dropout(&mut out, spec.dropout_rate, rng, mode == Mode::Train);
            outputs.push(out);
            dense.push(DenseCache {
                input,
                activated,
                mask,
            });
        }
        let block_output = outputs.pop().expect("at least one dense layer");
        let (head, slot) = &self.wiring.head;
        let y = head.forward(
            params.slice(slot.weights, head.weight_len()),
            params.slice(slot.bias, head.out_dim),
            &block_output,
            rows,
        )?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged("non-finite network output".into()));
        }
        let cache = ForwardCache {
            rows,
            row_maim: batch.row_maim.to_vec(),
            maim_count: batch.maims.len(),
            encoders,
            dense,
            block_output,
            mode,
            fingerprint: params.fingerprint(),
        };
        Ok((y, cache))
    }

    /// Gradient of `Σ d_out ⊙ output` with respect to every parameter.
    pub fn backward<T: Real>(
        &self,
        params: &Parameters<T>,
        cache: &ForwardCache<T>,
        d_out: &[T],
    ) -> Result<GradientBuffer<T>> {
        self.check_params(params)?;
        if cache.fingerprint != params.fingerprint() {
            return Err(Error::Contract(
                "forward cache was produced with different parameters".into(),
            ));
        }
        let spec = &self.spec;
        let rows = cache.rows;
        if d_out.len() != rows * spec.head.width() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, expected {}",
                d_out.len(),
                rows * spec.head.width()
            )));
        }
        let mut grads = params.zeros_like();
        let width = spec.dense_width;
        let f_dim = spec.maim_feature_dim;

        let (head, slot) = &self.wiring.head;
        let mut d_block = vec![T::zero(); rows * width];
        {
            let (gw, gb) = split_slot(&mut grads.values, slot, head);
            head.backward(
                params.slice(slot.weights, head.weight_len()),
                &cache.block_output,
                d_out,
                rows,
                gw,
                gb,
                Some(&mut d_block),
            )?;
        }

        let mut d_outputs: Vec<Vec<T>> = vec![vec![T::zero(); rows * width]; spec.dense_layers];
        d_outputs[spec.dense_layers - 1] = d_block;
        let mut d_features: Vec<Vec<T>> =
            vec![vec![T::zero(); cache.maim_count * f_dim]; self.wiring.encoders.len()];

        for l in (0..spec.dense_layers).rev() {
            let (layer, slot) = &self.wiring.dense[l];
            let dc = &cache.dense[l];
            let mut dz = std::mem::take(&mut d_outputs[l]);
            if let Some(mask) = &dc.mask {
                for (g, m) in dz.iter_mut().zip(mask) {
                    *g *= *m;
                }
            }
            elu_backward(&dc.activated, &mut dz);
            let mut dx = vec![T::zero(); rows * layer.in_dim];
            {
                let (gw, gb) = split_slot(&mut grads.values, slot, layer);
                layer.backward(
                    params.slice(slot.weights, layer.weight_len()),
                    &dc.input,
                    &dz,
                    rows,
                    gw,
                    gb,
                    Some(&mut dx),
                )?;
            }
            let d_feat = &mut d_features[spec.encoder_for_layer(l)];
            for r in 0..rows {
                let row = &dx[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (j, prev) in d_outputs.iter_mut().enumerate().take(l) {
                    let src = &row[spec.observation_dim + j * width..spec.observation_dim + (j + 1) * width];
                    for (a, b) in prev[r * width..(r + 1) * width].iter_mut().zip(src) {
                        *a += *b;
                    }
                }
                let m = cache.row_maim[r];
                let src = &row[spec.observation_dim + l * width..];
                for (a, b) in d_feat[m * f_dim..(m + 1) * f_dim].iter_mut().zip(src) {
                    *a += *b;
                }
            }
        }

        for ((enc, ec), mut d_feat) in self
            .wiring
            .encoders
            .iter()
            .zip(&cache.encoders)
            .zip(d_features)
        {
            elu_backward(&ec.features, &mut d_feat);
            let proj = &enc.projection;
            let need_flat_grad = !enc.stages.is_empty();
            let mut d_flat = vec![T::zero(); if need_flat_grad { ec.flat.len() } else { 0 }];
            {
                let (gw, gb) = split_slot(&mut grads.values, &enc.projection_slot, proj);
                proj.backward(
                    params.slice(enc.projection_slot.weights, proj.weight_len()),
                    &ec.flat,
                    &d_feat,
                    cache.maim_count,
                    gw,
                    gb,
                    need_flat_grad.then_some(d_flat.as_mut_slice()),
                )?;
            }
            if !need_flat_grad {
                continue;
            }
            for (m, stages) in ec.stages.iter().enumerate() {
                let mut upstream = d_flat[m * proj.in_dim..(m + 1) * proj.in_dim].to_vec();
                for (s, (stage, sc)) in enc.stages.iter().zip(stages).enumerate().rev() {
                    let mut d_act = vec![T::zero(); sc.activated.len()];
                    stage.pool.backward(&sc.argmax, &upstream, &mut d_act)?;
                    elu_backward(&sc.activated, &mut d_act);
                    let mut d_in = vec![T::zero(); if s > 0 { sc.input.len() } else { 0 }];
                    let conv = &stage.conv;
                    let (gk, gb) = {
                        let (head, tail) = grads.values.split_at_mut(stage.slot.bias);
                        (
                            &mut head[stage.slot.weights..stage.slot.weights + conv.kernel_len()],
                            &mut tail[..conv.filters],
                        )
                    };
                    conv.backward(
                        params.slice(stage.slot.weights, conv.kernel_len()),
                        &sc.input,
                        &d_act,
                        gk,
                        gb,
                        (s > 0).then_some(d_in.as_mut_slice()),
                    )?;
                    upstream = d_in;
                }
            }
        }
        debug_assert!(grads.is_finite(), "non-finite gradient");
        Ok(grads)
    }
}

/// Uniform He-style initialisation, `U(±sqrt(6 / fan_in))`, zero biases.
/// Blocks named `head.*` use `U(±sqrt(3 / fan_in))`.
pub fn he_uniform<T: Real, R: Rng + ?Sized>(layout: &Arc<ParamLayout>, rng: &mut R) -> Parameters<T> {
    let mut params = Parameters::zeros(Arc::clone(layout));
    for block in &layout.blocks {
        if block.fan_in == 0 {
            continue;
        }
        let gain = if block.name.starts_with("head") { 3.0 } else { 6.0 };
        let bound = (gain / block.fan_in as f64).sqrt();
        for v in &mut params.values[block.range()] {
            *v = T::from_f64(rng.gen_range(-bound..bound));
        }
    }
    params
}

/// Disjoint mutable views of a dense layer's weight and bias gradients.
/// The layout always places a layer's bias right after its weights.
fn split_slot<'a, T>(values: &'a mut [T], slot: &Slot, layer: &Dense) -> (&'a mut [T], &'a mut [T]) {
    let (head, tail) = values.split_at_mut(slot.bias);
    (
        &mut head[slot.weights..slot.weights + layer.weight_len()],
        &mut tail[..layer.out_dim],
    )
}
