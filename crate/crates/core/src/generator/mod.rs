//! The encoder–decoder generator and its frozen random input.
//!
//! Layer order per level (`L` levels, level 0 at full resolution):
//!
//! ```text
//! encoder i : LeakyReLU → BN → conv3×3(→ d[i]) → BN → LeakyReLU      = eᵢ
//! skip i    : conv1×1(eᵢ → n_s[i]) → BN → LeakyReLU                   = sᵢ
//! down      : maxpool2×2(eᵢ)                                          = input of level i+1
//! decoder i : upsample(y_{i+1}) ⧺ sᵢ → BN → conv1×1(→ u[i]) → BN → LeakyReLU
//!                                       → conv3×3 → BN → LeakyReLU    = yᵢ
//! head      : conv3×3(y₀ → out) + bias → sigmoid
//! ```
//!
//! `y_L` is the pooled output of the deepest encoder level. Only the head
//! convolution has a bias; every other convolution feeds a batch norm that
//! would cancel it.
//!
//! Gradients are computed by an explicit reverse pass over cached activations.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, MIN_SIDE};
use layers::{BnCache, ConvCache, Tensor};

/// Largest value of the uniform seed input.
pub const SEED_INPUT_MAX: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub levels: usize,
    pub down_channels: Vec<usize>,
    pub up_channels: Vec<usize>,
    pub skip_channels: Vec<usize>,
    pub input_channels: usize,
    pub output_channels: usize,
    pub upsample_mode: UpsampleMode,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            levels: 4,
            down_channels: vec![16, 32, 64, 128],
            up_channels: vec![16, 32, 64, 128],
            skip_channels: vec![4, 4, 4, 4],
            input_channels: 32,
            output_channels: 1,
            upsample_mode: UpsampleMode::Bilinear,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// One level with `width` channels everywhere; handy for gradient checks.
    pub fn tiny(width: usize, input_channels: usize, output_channels: usize, seed: u64) -> Self {
        GeneratorConfig {
            levels: 1,
            down_channels: vec![width],
            up_channels: vec![width],
            skip_channels: vec![width],
            input_channels,
            output_channels,
            upsample_mode: UpsampleMode::Bilinear,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("generator.levels", "must be at least 1"));
        }
        for (key, list) in [
            ("generator.down_channels", &self.down_channels),
            ("generator.up_channels", &self.up_channels),
            ("generator.skip_channels", &self.skip_channels),
        ] {
            if list.len() != self.levels {
                return Err(Error::config(
                    key,
                    format!("has {} entries but levels = {}", list.len(), self.levels),
                ));
            }
            if list.contains(&0) {
                return Err(Error::config(key, "channel counts must be at least 1"));
            }
        }
        if self.input_channels == 0 {
            return Err(Error::config("generator.input_channels", "must be at least 1"));
        }
        if self.output_channels != 1 && self.output_channels != 3 {
            return Err(Error::config("generator.output_channels", "must be 1 or 3"));
        }
        Ok(())
    }

    /// Trainable parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let l = self.levels;
        let mut total = 0;
        for i in 0..l {
            let cin = if i == 0 {
                self.input_channels
            } else {
                self.down_channels[i - 1]
            };
            let d = self.down_channels[i];
            let ns = self.skip_channels[i];
            total += 2 * cin + 9 * cin * d + 2 * d + d * ns + 2 * ns;

            let up_in = if i == l - 1 {
                self.down_channels[l - 1]
            } else {
                self.up_channels[i + 1]
            };
            let cat = up_in + ns;
            let u = self.up_channels[i];
            total += 2 * cat + cat * u + 2 * u + 9 * u * u + 2 * u;
        }
        total + 9 * self.up_channels[0] * self.output_channels + self.output_channels
    }

    /// Spatial size after padding up to a multiple of `2^levels`.
    pub fn padded_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let m = 1usize << self.levels;
        (height.div_ceil(m) * m, width.div_ceil(m) * m)
    }
}

/// Location of one named parameter tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub values: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    entries: Vec<ParamEntry>,
}

impl GeneratorParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.values[e.offset..e.offset + e.len])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// The frozen network input `z`, stored `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedInput {
    data: Array3<f64>,
}

impl SeedInput {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (_, h, w) = data.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::dim(format!(
                "seed input {h}x{w} smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        Ok(SeedInput { data })
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }
}

/// Draws `z` i.i.d. uniform on `[0, 0.1]`.
pub fn sample_input(cfg: &GeneratorConfig, height: usize, width: usize, seed: u64) -> Result<SeedInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array3::from_shape_simple_fn((cfg.input_channels, height, width), || {
        rng.random_range(0.0..=SEED_INPUT_MAX)
    });
    SeedInput::new(data)
}

/// Which statistics batch normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Statistics of the current activation; what the optimizer differentiates.
    Train,
    /// Running averages accumulated during training.
    Eval,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: usize,
    bias: Option<usize>,
    cin: usize,
    cout: usize,
    k: usize,
}

#[derive(Debug, Clone)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    stats: usize,
    ch: usize,
}

#[derive(Debug, Clone)]
struct EncoderLevel {
    pre_bn: BnLayer,
    conv: ConvLayer,
    post_bn: BnLayer,
    skip_conv: ConvLayer,
    skip_bn: BnLayer,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    cat_bn: BnLayer,
    conv1: ConvLayer,
    bn1: BnLayer,
    conv3: ConvLayer,
    bn3: BnLayer,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    n_params: usize,
    n_stats: usize,
}

impl LayoutBuilder {
    fn alloc(&mut self, name: String, len: usize) -> usize {
        let offset = self.n_params;
        self.entries.push(ParamEntry { name, offset, len });
        self.n_params += len;
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> ConvLayer {
        let weight = self.alloc(format!("{name}.weight"), cout * cin * k * k);
        let bias = bias.then(|| self.alloc(format!("{name}.bias"), cout));
        ConvLayer {
            weight,
            bias,
            cin,
            cout,
            k,
        }
    }

    fn bn(&mut self, name: &str, ch: usize) -> BnLayer {
        let gamma = self.alloc(format!("{name}.gamma"), ch);
        let beta = self.alloc(format!("{name}.beta"), ch);
        let stats = self.n_stats;
        self.n_stats += ch;
        BnLayer { gamma, beta, stats, ch }
    }
}

/// Architecture handle; parameters live in [`GeneratorParams`].
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    head: ConvLayer,
    n_params: usize,
    n_stats: usize,
}

/// Builds the architecture and seeded parameters.
///
/// Convolution weights (and the head bias) are uniform in `±1/√fan_in`;
/// batch-norm scales start at 1, shifts at 0.
pub fn build_generator(cfg: &GeneratorConfig) -> Result<(Generator, GeneratorParams)> {
    cfg.validate()?;
    let l = cfg.levels;
    let mut b = LayoutBuilder {
        entries: Vec::new(),
        n_params: 0,
        n_stats: 0,
    };
    let mut encoder = Vec::with_capacity(l);
    for i in 0..l {
        let cin = if i == 0 {
            cfg.input_channels
        } else {
            cfg.down_channels[i - 1]
        };
        let d = cfg.down_channels[i];
        let ns = cfg.skip_channels[i];
        encoder.push(EncoderLevel {
            pre_bn: b.bn(&format!("enc{i}.pre_bn"), cin),
            conv: b.conv(&format!("enc{i}.conv"), cin, d, 3, false),
            post_bn: b.bn(&format!("enc{i}.post_bn"), d),
            skip_conv: b.conv(&format!("skip{i}.conv"), d, ns, 1, false),
            skip_bn: b.bn(&format!("skip{i}.bn"), ns),
        });
    }
    let mut decoder = Vec::with_capacity(l);
    for i in 0..l {
        let up_in = if i == l - 1 {
            cfg.down_channels[l - 1]
        } else {
            cfg.up_channels[i + 1]
        };
        let cat = up_in + cfg.skip_channels[i];
        let u = cfg.up_channels[i];
        decoder.push(DecoderLevel {
            cat_bn: b.bn(&format!("dec{i}.cat_bn"), cat),
            conv1: b.conv(&format!("dec{i}.conv1"), cat, u, 1, false),
            bn1: b.bn(&format!("dec{i}.bn1"), u),
            conv3: b.conv(&format!("dec{i}.conv3"), u, u, 3, false),
            bn3: b.bn(&format!("dec{i}.bn3"), u),
        });
    }
    let head = b.conv("head", cfg.up_channels[0], cfg.output_channels, 3, true);

    let generator = Generator {
        cfg: cfg.clone(),
        encoder,
        decoder,
        head,
        n_params: b.n_params,
        n_stats: b.n_stats,
    };
    let params = generator.init_params(b.entries);
    Ok((generator, params))
}

impl Generator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    fn conv_layers(&self) -> Vec<&ConvLayer> {
        let mut out: Vec<&ConvLayer> = Vec::new();
        for e in &self.encoder {
            out.push(&e.conv);
            out.push(&e.skip_conv);
        }
        for d in &self.decoder {
            out.push(&d.conv1);
            out.push(&d.conv3);
        }
        out.push(&self.head);
        out
    }

    fn bn_layers(&self) -> Vec<&BnLayer> {
        let mut out: Vec<&BnLayer> = Vec::new();
        for e in &self.encoder {
            out.extend([&e.pre_bn, &e.post_bn, &e.skip_bn]);
        }
        for d in &self.decoder {
            out.extend([&d.cat_bn, &d.bn1, &d.bn3]);
        }
        out
    }

    fn init_params(&self, entries: Vec<ParamEntry>) -> GeneratorParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut values = vec![0.0; self.n_params];
        for conv in self.conv_layers() {
            let bound = 1.0 / ((conv.cin * conv.k * conv.k) as f64).sqrt();
            let n = conv.cout * conv.cin * conv.k * conv.k;
            for v in &mut values[conv.weight..conv.weight + n] {
                *v = rng.random_range(-bound..bound);
            }
            if let Some(bias) = conv.bias {
                for v in &mut values[bias..bias + conv.cout] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        for bn in self.bn_layers() {
            values[bn.gamma..bn.gamma + bn.ch].fill(1.0);
        }
        GeneratorParams {
            values,
            running_mean: vec![0.0; self.n_stats],
            running_var: vec![1.0; self.n_stats],
            entries,
        }
    }

    fn check_params(&self, params: &GeneratorParams) -> Result<()> {
        if params.values.len() != self.n_params
            || params.running_mean.len() != self.n_stats
            || params.running_var.len() != self.n_stats
        {
            return Err(Error::dim(format!(
                "parameter vector has {} values, architecture needs {}",
                params.values.len(),
                self.n_params
            )));
        }
        Ok(())
    }

    fn padded_input(&self, z: &SeedInput) -> Result<Tensor> {
        if z.channels() != self.cfg.input_channels {
            return Err(Error::dim(format!(
                "seed input has {} channels, generator expects {}",
                z.channels(),
                self.cfg.input_channels
            )));
        }
        let (h, w) = (z.height(), z.width());
        let (hp, wp) = self.cfg.padded_dims(h, w);
        let mut t = Tensor::zeros(z.channels(), hp, wp);
        for k in 0..z.channels() {
            for y in 0..hp {
                let sy = layers::reflect(y as isize, h);
                for x in 0..wp {
                    let sx = layers::reflect(x as isize, w);
                    t.data[(k * hp + y) * wp + x] = z.data[[k, sy, sx]];
                }
            }
        }
        Ok(t)
    }

    /// Non-finite activations surface here as a divergence (iteration 0; callers relabel).
    fn crop_to_image(&self, t: &Tensor, h: usize, w: usize) -> Result<Image> {
        let data = Array3::from_shape_fn((h, w, t.c), |(r, c, k)| t.data[(k * t.h + r) * t.w + c]);
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                iteration: 0,
                message: "network output is not finite".into(),
            });
        }
        Ok(Image::from_array_unchecked(data))
    }

    /// `f(θ; z)`, cropped back to the spatial size of `z`.
    pub fn forward(&self, params: &GeneratorParams, z: &SeedInput, mode: BnMode) -> Result<Image> {
        self.check_params(params)?;
        let x = self.padded_input(z)?;
        let out = match mode {
            BnMode::Train => self.run_forward(params, x, None),
            BnMode::Eval => self.run_forward_eval(params, x),
        };
        self.crop_to_image(&out, z.height(), z.width())
    }

    /// Training-mode forward pass that keeps what [`backward`](Self::backward) needs.
    pub fn forward_train(&self, params: &GeneratorParams, z: &SeedInput) -> Result<(Image, ForwardCache)> {
        self.check_params(params)?;
        let x = self.padded_input(z)?;
        let mut cache = ForwardCache {
            enc: Vec::with_capacity(self.cfg.levels),
            dec: Vec::with_capacity(self.cfg.levels),
            head: None,
            output: Tensor::zeros(0, 0, 0),
            crop: (z.height(), z.width()),
        };
        let out = self.run_forward(params, x, Some(&mut cache));
        let img = self.crop_to_image(&out, z.height(), z.width())?;
        cache.output = out;
        Ok((img, cache))
    }

    fn run_forward(&self, params: &GeneratorParams, x: Tensor, mut cache: Option<&mut ForwardCache>) -> Tensor {
        let p = &params.values;
        let bilinear = self.cfg.upsample_mode == UpsampleMode::Bilinear;
        let mut skips = Vec::with_capacity(self.cfg.levels);
        let mut x = x;
        for level in &self.encoder {
            let a0 = layers::leaky_forward(&x);
            let (b0, pre_bn) = bn_train(&a0, &level.pre_bn, p);
            let (e, main) = conv_bn_act(&b0, &level.conv, &level.post_bn, p);
            let (s, skip) = conv_bn_act(&e, &level.skip_conv, &level.skip_bn, p);
            let (pooled, pool_idx) = layers::maxpool_forward(&e);
            skips.push(s);
            if let Some(c) = cache.as_deref_mut() {
                c.enc.push(EncoderCache {
                    a0,
                    pre_bn,
                    main,
                    skip,
                    pool_idx,
                    in_hw: (e.h, e.w),
                });
            }
            x = pooled;
        }
        let mut y = x;
        for (i, level) in self.decoder.iter().enumerate().rev() {
            let up = layers::upsample_forward(&y, bilinear);
            let cat = layers::concat(&up, &skips[i]);
            let (nb, cat_bn) = bn_train(&cat, &level.cat_bn, p);
            let (h1, first) = conv_bn_act(&nb, &level.conv1, &level.bn1, p);
            let (h3, second) = conv_bn_act(&h1, &level.conv3, &level.bn3, p);
            if let Some(c) = cache.as_deref_mut() {
                c.dec.push(DecoderCache {
                    level: i,
                    up_c: up.c,
                    in_hw: (y.h, y.w),
                    cat_bn,
                    first,
                    second,
                });
            }
            y = h3;
        }
        let (pre, head) = conv(&y, &self.head, p);
        let out = layers::sigmoid_forward(&pre);
        if let Some(c) = cache {
            c.head = Some(head);
        }
        out
    }

    fn run_forward_eval(&self, params: &GeneratorParams, x: Tensor) -> Tensor {
        let bn = |t: &Tensor, l: &BnLayer| {
            layers::bn_forward_eval(
                t,
                &params.values[l.gamma..l.gamma + l.ch],
                &params.values[l.beta..l.beta + l.ch],
                &params.running_mean[l.stats..l.stats + l.ch],
                &params.running_var[l.stats..l.stats + l.ch],
            )
        };
        let cba = |t: &Tensor, c: &ConvLayer, l: &BnLayer| {
            let (y, _) = conv(t, c, &params.values);
            layers::leaky_forward(&bn(&y, l))
        };
        let bilinear = self.cfg.upsample_mode == UpsampleMode::Bilinear;
        let mut skips = Vec::with_capacity(self.cfg.levels);
        let mut x = x;
        for level in &self.encoder {
            let b0 = bn(&layers::leaky_forward(&x), &level.pre_bn);
            let e = cba(&b0, &level.conv, &level.post_bn);
            skips.push(cba(&e, &level.skip_conv, &level.skip_bn));
            x = layers::maxpool_forward(&e).0;
        }
        let mut y = x;
        for (i, level) in self.decoder.iter().enumerate().rev() {
            let cat = layers::concat(&layers::upsample_forward(&y, bilinear), &skips[i]);
            let nb = bn(&cat, &level.cat_bn);
            y = cba(&cba(&nb, &level.conv1, &level.bn1), &level.conv3, &level.bn3);
        }
        layers::sigmoid_forward(&conv(&y, &self.head, &params.values).0)
    }

    /// Gradient of a scalar loss with respect to every trainable parameter,
    /// given `∂loss/∂output` shaped `height × width × output_channels`.
    pub fn backward(
        &self,
        params: &GeneratorParams,
        cache: &ForwardCache,
        grad_output: &Array3<f64>,
    ) -> Result<Vec<f64>> {
        self.check_params(params)?;
        let (h, w) = cache.crop;
        if grad_output.dim() != (h, w, self.cfg.output_channels) {
            return Err(Error::dim(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.dim(),
                (h, w, self.cfg.output_channels)
            )));
        }
        let p = &params.values;
        let mut grads = vec![0.0; self.n_params];
        let out = &cache.output;
        let mut dy = Tensor::zeros(out.c, out.h, out.w);
        for ((r, c, k), g) in grad_output.indexed_iter() {
            dy.data[(k * out.h + r) * out.w + c] = *g;
        }

        let dpre = layers::sigmoid_backward(&dy, out);
        let head_cache = cache.head.as_ref().expect("forward_train fills the head cache");
        let mut dy = conv_back(&dpre, head_cache, &self.head, p, &mut grads);

        let mut dskips: Vec<Option<Tensor>> = vec![None; self.cfg.levels];
        for dc in cache.dec.iter().rev() {
            let level = &self.decoder[dc.level];
            let d_h1 = conv_bn_act_back(&dy, &dc.second, &level.conv3, &level.bn3, p, &mut grads);
            let d_nb = conv_bn_act_back(&d_h1, &dc.first, &level.conv1, &level.bn1, p, &mut grads);
            let d_cat = bn_back(&d_nb, &dc.cat_bn, &level.cat_bn, p, &mut grads);
            let (d_up, d_skip) = layers::split(&d_cat, dc.up_c);
            dskips[dc.level] = Some(d_skip);
            let bilinear = self.cfg.upsample_mode == UpsampleMode::Bilinear;
            dy = layers::upsample_backward(&d_up, dc.in_hw.0, dc.in_hw.1, bilinear);
        }

        let mut dx = dy;
        for (i, ec) in cache.enc.iter().enumerate().rev() {
            let level = &self.encoder[i];
            let mut de = layers::maxpool_backward(&dx, &ec.pool_idx, ec.in_hw.0, ec.in_hw.1);
            let d_skip = dskips[i].take().expect("every level has a skip");
            let de_skip = conv_bn_act_back(&d_skip, &ec.skip, &level.skip_conv, &level.skip_bn, p, &mut grads);
            de.data.iter_mut().zip(&de_skip.data).for_each(|(a, b)| *a += b);
            let d_b0 = conv_bn_act_back(&de, &ec.main, &level.conv, &level.post_bn, p, &mut grads);
            let d_a0 = bn_back(&d_b0, &ec.pre_bn, &level.pre_bn, p, &mut grads);
            dx = layers::leaky_backward(&d_a0, &ec.a0);
        }
        Ok(grads)
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&self, params: &mut GeneratorParams, cache: &ForwardCache) {
        let mut apply = |layer: &BnLayer, bc: &BnCache, n: usize| {
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for k in 0..layer.ch {
                let rm = &mut params.running_mean[layer.stats + k];
                *rm = (1.0 - layers::BN_MOMENTUM) * *rm + layers::BN_MOMENTUM * bc.batch_mean[k];
                let rv = &mut params.running_var[layer.stats + k];
                *rv = (1.0 - layers::BN_MOMENTUM) * *rv + layers::BN_MOMENTUM * bc.batch_var[k] * unbias;
            }
        };
        for (level, ec) in self.encoder.iter().zip(&cache.enc) {
            apply(&level.pre_bn, &ec.pre_bn, ec.pre_bn.xhat.plane());
            apply(&level.post_bn, &ec.main.bn, ec.main.bn.xhat.plane());
            apply(&level.skip_bn, &ec.skip.bn, ec.skip.bn.xhat.plane());
        }
        for dc in &cache.dec {
            let level = &self.decoder[dc.level];
            apply(&level.cat_bn, &dc.cat_bn, dc.cat_bn.xhat.plane());
            apply(&level.bn1, &dc.first.bn, dc.first.bn.xhat.plane());
            apply(&level.bn3, &dc.second.bn, dc.second.bn.xhat.plane());
        }
    }
}

#[derive(Debug, Clone)]
struct UnitCache {
    conv: ConvCache,
    bn: BnCache,
    act: Tensor,
}

#[derive(Debug, Clone)]
struct EncoderCache {
    a0: Tensor,
    pre_bn: BnCache,
    main: UnitCache,
    skip: UnitCache,
    pool_idx: Vec<usize>,
    in_hw: (usize, usize),
}

#[derive(Debug, Clone)]
struct DecoderCache {
    level: usize,
    up_c: usize,
    in_hw: (usize, usize),
    cat_bn: BnCache,
    first: UnitCache,
    second: UnitCache,
}

/// Activations retained by [`Generator::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    enc: Vec<EncoderCache>,
    dec: Vec<DecoderCache>,
    head: Option<ConvCache>,
    output: Tensor,
    crop: (usize, usize),
}

impl ForwardCache {
    /// Per-channel `(mean, variance, batch variance)` of every batch-norm layer:
    /// moments of the normalized activation before the affine transform, and the
    /// variance of the layer input it was normalized by.
    pub fn normalized_moments(&self) -> Vec<Vec<(f64, f64, f64)>> {
        let moments = |bc: &BnCache| {
            let t = &bc.xhat;
            (0..t.c)
                .map(|k| {
                    let ch = t.channel(k);
                    let n = ch.len() as f64;
                    let mean = ch.iter().sum::<f64>() / n;
                    let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var, bc.batch_var[k])
                })
                .collect::<Vec<_>>()
        };
        let mut out = Vec::new();
        for ec in &self.enc {
            out.extend([moments(&ec.pre_bn), moments(&ec.main.bn), moments(&ec.skip.bn)]);
        }
        for dc in &self.dec {
            out.extend([moments(&dc.cat_bn), moments(&dc.first.bn), moments(&dc.second.bn)]);
        }
        out
    }
}

fn conv(x: &Tensor, l: &ConvLayer, p: &[f64]) -> (Tensor, ConvCache) {
    let w = &p[l.weight..l.weight + l.cout * l.cin * l.k * l.k];
    let b = l.bias.map(|o| &p[o..o + l.cout]);
    layers::conv_forward(x, w, b, l.cout, l.k)
}

fn conv_back(dy: &Tensor, cache: &ConvCache, l: &ConvLayer, p: &[f64], grads: &mut [f64]) -> Tensor {
    let n = l.cout * l.cin * l.k * l.k;
    let w = &p[l.weight..l.weight + n];
    let (before_bias, db) = match l.bias {
        Some(b) => {
            let (lo, hi) = grads.split_at_mut(b);
            (lo, Some(&mut hi[..l.cout]))
        }
        None => (&mut grads[..], None),
    };
    layers::conv_backward(dy, cache, w, l.k, &mut before_bias[l.weight..l.weight + n], db)
}

fn bn_train(x: &Tensor, l: &BnLayer, p: &[f64]) -> (Tensor, BnCache) {
    layers::bn_forward_train(x, &p[l.gamma..l.gamma + l.ch], &p[l.beta..l.beta + l.ch])
}

fn bn_back(dy: &Tensor, cache: &BnCache, l: &BnLayer, p: &[f64], grads: &mut [f64]) -> Tensor {
    // gamma and beta are allocated back to back.
    debug_assert_eq!(l.beta, l.gamma + l.ch);
    let (dgamma, dbeta) = grads[l.gamma..l.gamma + 2 * l.ch].split_at_mut(l.ch);
    layers::bn_backward(dy, cache, &p[l.gamma..l.gamma + l.ch], dgamma, dbeta)
}

fn conv_bn_act(x: &Tensor, c: &ConvLayer, b: &BnLayer, p: &[f64]) -> (Tensor, UnitCache) {
    let (y, conv_cache) = conv(x, c, p);
    let (n, bn_cache) = bn_train(&y, b, p);
    let act = layers::leaky_forward(&n);
    (
        act.clone(),
        UnitCache {
            conv: conv_cache,
            bn: bn_cache,
            act,
        },
    )
}

fn conv_bn_act_back(
    dy: &Tensor,
    cache: &UnitCache,
    c: &ConvLayer,
    b: &BnLayer,
    p: &[f64],
    grads: &mut [f64],
) -> Tensor {
    let dn = layers::leaky_backward(dy, &cache.act);
    let dyc = bn_back(&dn, &cache.bn, b, p, grads);
    conv_back(&dyc, &cache.conv, c, p, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_output_shape() {
        let cfg = GeneratorConfig::default();
        let (gen, params) = build_generator(&cfg).unwrap();
        let z = sample_input(&cfg, 64, 64, 1).unwrap();
        let out = gen.forward(&params, &z, BnMode::Train).unwrap();
        assert_eq!(out.dim(), (64, 64, 1));
    }

    #[test]
    fn minimal_depth() {
        let cfg = GeneratorConfig::tiny(4, 3, 1, 0);
        let (gen, params) = build_generator(&cfg).unwrap();
        let z = sample_input(&cfg, 8, 8, 1).unwrap();
        assert_eq!(gen.forward(&params, &z, BnMode::Train).unwrap().dim(), (8, 8, 1));
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let cfg = GeneratorConfig {
            levels: 2,
            down_channels: vec![4, 4],
            up_channels: vec![4, 4],
            skip_channels: vec![2, 2],
            input_channels: 3,
            output_channels: 3,
            ..Default::default()
        };
        assert_eq!(cfg.padded_dims(13, 9), (16, 12));
        let (gen, params) = build_generator(&cfg).unwrap();
        let z = sample_input(&cfg, 13, 9, 1).unwrap();
        let (out, cache) = gen.forward_train(&params, &z).unwrap();
        assert_eq!(out.dim(), (13, 9, 3));
        let g = gen.backward(&params, &cache, &Array3::ones((13, 9, 3))).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = GeneratorConfig::default();
        let (_, a) = build_generator(&cfg).unwrap();
        let (_, b) = build_generator(&cfg).unwrap();
        assert_eq!(a, b);
        let (_, c) = build_generator(&GeneratorConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn param_count_formula_matches_layout() {
        for cfg in [
            GeneratorConfig::default(),
            GeneratorConfig::tiny(4, 3, 1, 0),
            GeneratorConfig {
                levels: 3,
                down_channels: vec![5, 7, 9],
                up_channels: vec![6, 8, 10],
                skip_channels: vec![1, 2, 3],
                input_channels: 4,
                output_channels: 3,
                ..Default::default()
            },
        ] {
            let (gen, params) = build_generator(&cfg).unwrap();
            assert_eq!(gen.param_count(), cfg.param_count());
            assert_eq!(params.len(), cfg.param_count());
            let covered: usize = params.entries().iter().map(|e| e.len).sum();
            assert_eq!(covered, params.len());
        }
    }

    #[test]
    fn inconsistent_channel_lists_rejected() {
        let cfg = GeneratorConfig {
            down_channels: vec![16, 32],
            ..Default::default()
        };
        match build_generator(&cfg) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "generator.down_channels"),
            other => panic!("expected config error, got {other:?}"),
        }
        let zero = GeneratorConfig {
            skip_channels: vec![4, 0, 4, 4],
            ..Default::default()
        };
        assert!(build_generator(&zero).is_err());
    }

    #[test]
    fn seed_input_range_and_determinism() {
        let cfg = GeneratorConfig::default();
        let z = sample_input(&cfg, 64, 64, 7).unwrap();
        assert!(z.data().iter().all(|&v| (0.0..=SEED_INPUT_MAX).contains(&v)));
        assert_eq!(z, sample_input(&cfg, 64, 64, 7).unwrap());
        let mean = z.data().mean().unwrap();
        assert!((mean - 0.05).abs() < 0.003, "mean {mean}");
        assert!(sample_input(&cfg, 4, 64, 7).is_err());
    }

    #[test]
    fn forward_rejects_mismatched_input() {
        let cfg = GeneratorConfig::tiny(4, 3, 1, 0);
        let (gen, params) = build_generator(&cfg).unwrap();
        let wrong = sample_input(&GeneratorConfig::tiny(4, 5, 1, 0), 8, 8, 1).unwrap();
        assert!(matches!(
            gen.forward(&params, &wrong, BnMode::Train),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn eval_mode_is_deterministic_and_uses_running_stats() {
        let cfg = GeneratorConfig::tiny(4, 3, 1, 2);
        let (gen, mut params) = build_generator(&cfg).unwrap();
        let z = sample_input(&cfg, 8, 8, 3).unwrap();
        let a = gen.forward(&params, &z, BnMode::Eval).unwrap();
        let b = gen.forward(&params, &z, BnMode::Eval).unwrap();
        assert_eq!(a, b);
        let (_, cache) = gen.forward_train(&params, &z).unwrap();
        gen.update_running_stats(&mut params, &cache);
        assert!(params.running_mean.iter().any(|&m| m != 0.0));
        assert_ne!(gen.forward(&params, &z, BnMode::Eval).unwrap(), a);
    }

    #[test]
    fn named_parameters_resolve() {
        let cfg = GeneratorConfig::tiny(4, 3, 1, 0);
        let (_, params) = build_generator(&cfg).unwrap();
        assert_eq!(params.get("head.bias").unwrap().len(), 1);
        assert!(params.get("enc0.pre_bn.gamma").unwrap().iter().all(|&g| g == 1.0));
        assert!(params.get("nope").is_none());
    }
}
