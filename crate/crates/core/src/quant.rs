//! Post-training int8 quantization: symmetric per-tensor weights, affine
//! activations, static (calibrated) or dynamic (per-batch) activation
//! ranges, integer-accumulator inference, and the inference benchmark.

use std::time::Instant;

use crate::embedder::{EmbedderConfig, EmbedderNet};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{dims4, Tensor};

/// Scale/zero-point pair for one tensor or activation site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
    pub scheme: QScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QScheme {
    Symmetric,
    Affine,
}

/// Smallest representable scale; keeps degenerate ranges finite.
pub const SCALE_FLOOR: f32 = 1e-12;

/// Symmetric: scale = max(|min|,|max|)/127, zero_point 0.
/// Affine: scale = (max-min)/255, zero_point = round(-128 - min/scale),
/// clamped to int8. Scales are floored at `SCALE_FLOOR`.
pub fn compute_qparams(min: f32, max: f32, scheme: QScheme) -> Result<QuantParams> {
    if !(min.is_finite() && max.is_finite()) || min > max {
        return Err(Error::Contract(format!(
            "compute_qparams needs finite min <= max, got [{min}, {max}]"
        )));
    }
    match scheme {
        QScheme::Symmetric => Ok(QuantParams {
            scale: (min.abs().max(max.abs()) / 127.0).max(SCALE_FLOOR),
            zero_point: 0,
            scheme,
        }),
        QScheme::Affine => {
            let scale = ((max - min) / 255.0).max(SCALE_FLOOR);
            let zero_point = (-128.0 - min / scale).round().clamp(-128.0, 127.0) as i32;
            Ok(QuantParams {
                scale,
                zero_point,
                scheme,
            })
        }
    }
}

/// An int8 tensor with its shape; values only make sense next to a
/// `QuantParams`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    shape: Vec<usize>,
    data: Vec<i8>,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || want != data.len() {
            return Err(Error::Dimension(format!(
                "int8 tensor shape {shape:?} vs {} values",
                data.len()
            )));
        }
        Ok(QTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// q = clamp(round(x/scale) + zero_point, -128, 127), rounding half away
/// from zero.
pub fn quantize_tensor(x: &Tensor, qp: &QuantParams) -> QTensor {
    let data = x
        .data()
        .iter()
        .map(|&v| ((v / qp.scale).round() + qp.zero_point as f32).clamp(-128.0, 127.0) as i8)
        .collect();
    QTensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// x^ = scale * (q - zero_point).
pub fn dequantize_tensor(q: &QTensor, qp: &QuantParams) -> Tensor {
    let data = q
        .data
        .iter()
        .map(|&v| qp.scale * (v as i32 - qp.zero_point) as f32)
        .collect();
    Tensor::new(q.shape.clone(), data).expect("shape preserved")
}

/// Observed (min, max) per activation site, expanded to include zero.
/// Sites are the inputs of each conv block and of the final dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRanges {
    pub sites: Vec<(f32, f32)>,
}

impl CalibrationRanges {
    pub fn site_count(&self) -> usize {
        self.sites.len()
    }
}

fn min_max(data: &[f32]) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

fn include_zero(range: (f32, f32)) -> (f32, f32) {
    (range.0.min(0.0), range.1.max(0.0))
}

/// The float activations entering each quantization site for `images`:
/// the raw input per conv block, then the flattened dense input.
pub fn activation_sites(net: &EmbedderNet, images: &Tensor) -> Result<Vec<Tensor>> {
    dims4(images.shape(), "activation_sites images")?;
    let mut sites = Vec::with_capacity(net.conv_kernels.len() + 1);
    let mut x = images.clone();
    for (k, b) in net.conv_kernels.iter().zip(&net.conv_biases) {
        sites.push(x.clone());
        x = ops::maxpool2(&ops::relu(&ops::conv2d(&x, k, b)?))?.0;
    }
    let batch = x.shape()[0];
    let flat = x.reshaped(vec![batch, net.config.dense_input_len()])?;
    sites.push(flat);
    Ok(sites)
}

/// Forward-only pass over the calibration set recording per-site extrema.
/// Never touches parameters.
pub fn calibrate_static(net: &EmbedderNet, calib: &crate::data::Dataset) -> Result<CalibrationRanges> {
    if calib.is_empty() {
        return Err(Error::Contract("calibration set is empty".into()));
    }
    let n_sites = net.conv_kernels.len() + 1;
    let mut ranges = vec![(f32::INFINITY, f32::NEG_INFINITY); n_sites];
    let all: Vec<usize> = (0..calib.len()).collect();
    for chunk in all.chunks(64) {
        let images = calib.batch_tensor(chunk)?;
        for (site, t) in activation_sites(net, &images)?.iter().enumerate() {
            let (lo, hi) = min_max(t.data());
            ranges[site].0 = ranges[site].0.min(lo);
            ranges[site].1 = ranges[site].1.max(hi);
        }
    }
    Ok(CalibrationRanges {
        sites: ranges.into_iter().map(include_zero).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Dynamic,
    Static,
}

/// Int8 embedder: symmetric per-tensor weights, float biases, and (static
/// mode) fixed affine activation params derived from calibration ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedNet {
    pub config: EmbedderConfig,
    pub mode: QuantMode,
    pub conv_kernels: Vec<QTensor>,
    pub conv_kernel_qp: Vec<QuantParams>,
    pub conv_biases: Vec<Tensor>,
    pub dense_w: QTensor,
    pub dense_w_qp: QuantParams,
    pub dense_b: Tensor,
    /// Per-site affine activation params; `None` in dynamic mode.
    pub activation_qp: Option<Vec<QuantParams>>,
    /// The calibration ranges behind `activation_qp`, kept for serialization.
    pub ranges: Option<CalibrationRanges>,
}

fn quantize_weights(t: &Tensor) -> Result<(QTensor, QuantParams)> {
    let (lo, hi) = min_max(t.data());
    let qp = compute_qparams(lo, hi, QScheme::Symmetric)?;
    Ok((quantize_tensor(t, &qp), qp))
}

/// Quantizes a float embedder. Static mode needs calibration ranges with
/// one entry per site; dynamic mode computes activation params per batch.
pub fn quantize_net(
    net: &EmbedderNet,
    mode: QuantMode,
    ranges: Option<&CalibrationRanges>,
) -> Result<QuantizedNet> {
    let n_sites = net.conv_kernels.len() + 1;
    let (activation_qp, kept_ranges) = match mode {
        QuantMode::Static => {
            let ranges = ranges.ok_or_else(|| {
                Error::Config("static quantization needs calibration ranges".into())
            })?;
            if ranges.site_count() != n_sites {
                return Err(Error::Config(format!(
                    "{} calibration sites for a net with {n_sites}",
                    ranges.site_count()
                )));
            }
            let qp = ranges
                .sites
                .iter()
                .map(|&(lo, hi)| compute_qparams(lo, hi, QScheme::Affine))
                .collect::<Result<Vec<_>>>()?;
            (Some(qp), Some(ranges.clone()))
        }
        QuantMode::Dynamic => (None, None),
    };
    let mut conv_kernels = Vec::new();
    let mut conv_kernel_qp = Vec::new();
    for k in &net.conv_kernels {
        let (q, qp) = quantize_weights(k)?;
        conv_kernels.push(q);
        conv_kernel_qp.push(qp);
    }
    let (dense_w, dense_w_qp) = quantize_weights(&net.dense_w)?;
    Ok(QuantizedNet {
        config: net.config.clone(),
        mode,
        conv_kernels,
        conv_kernel_qp,
        conv_biases: net.conv_biases.clone(),
        dense_w,
        dense_w_qp,
        dense_b: net.dense_b.clone(),
        activation_qp,
        ranges: kept_ranges,
    })
}

fn site_qp(qnet: &QuantizedNet, site: usize, activation: &Tensor) -> Result<QuantParams> {
    match (&qnet.activation_qp, qnet.mode) {
        (Some(qp), QuantMode::Static) => Ok(qp[site]),
        (_, QuantMode::Dynamic) => {
            let (lo, hi) = include_zero(min_max(activation.data()));
            compute_qparams(lo, hi, QScheme::Affine)
        }
        (None, QuantMode::Static) => Err(Error::State(
            "static quantized net lost its activation params".into(),
        )),
    }
}

/// Integer 3x3/pad-1 cross-correlation on quantized values:
/// acc[i,j] = sum (q_x - zp_x) * q_w in i32, then y = s_x*s_w*acc + bias.
///
/// Unlike the float path, integer sums are exact in any order, so the loops
/// are arranged for speed rather than for accumulation discipline: each
/// input channel is copied once into a zero-point-centered i16 plane with a
/// one-cell border (a border tap dequantizes to exactly zero, matching the
/// float path's zero padding), and every kernel tap then sweeps whole rows
/// branch-free. The centering work is shared across all filters.
fn conv2d_int8(
    x: &QTensor,
    x_qp: &QuantParams,
    k: &QTensor,
    k_qp: &QuantParams,
    bias: &Tensor,
) -> Result<Tensor> {
    let (b, c, h, w) = dims4(x.shape(), "quantized conv input")?;
    let f = k.shape()[0];
    let zp = x_qp.zero_point as i16;
    let out_scale = x_qp.scale * k_qp.scale;
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0f32; b * f * h * w];
    let mut padded = vec![0i16; c * ph * pw];
    let mut acc = vec![0i32; h * w];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x.data[(bi * c + ci) * h * w..][..h * w];
            let dst = &mut padded[ci * ph * pw..][..ph * pw];
            dst.fill(0);
            for i in 0..h {
                let drow = &mut dst[(i + 1) * pw + 1..][..w];
                let srow = &src[i * w..][..w];
                for (d, s) in drow.iter_mut().zip(srow) {
                    *d = *s as i16 - zp;
                }
            }
        }
        for fi in 0..f {
            acc.fill(0);
            for ci in 0..c {
                let plane = &padded[ci * ph * pw..][..ph * pw];
                let k_base = (fi * c + ci) * 9;
                for u in 0..3usize {
                    for v in 0..3usize {
                        let qw = k.data[k_base + u * 3 + v] as i32;
                        if qw == 0 {
                            continue;
                        }
                        for i in 0..h {
                            let prow = &plane[(i + u) * pw + v..][..w];
                            let arow = &mut acc[i * w..][..w];
                            for (a, p) in arow.iter_mut().zip(prow) {
                                *a += *p as i32 * qw;
                            }
                        }
                    }
                }
            }
            let bias_v = bias.data()[fi];
            let orow = &mut out[(bi * f + fi) * h * w..][..h * w];
            for (o, a) in orow.iter_mut().zip(&acc) {
                *o = out_scale * *a as f32 + bias_v;
            }
        }
    }
    Tensor::new(vec![b, f, h, w], out)
}

/// Integer dense layer: acc in i32, dequantized by the scale product.
///
/// The input row is centered once, then each input coordinate sweeps the
/// contiguous weight row it scales — and relu upstream makes many centered
/// inputs exactly zero, so whole weight rows are skipped outright.
fn dense_int8(
    x: &QTensor,
    x_qp: &QuantParams,
    w: &QTensor,
    w_qp: &QuantParams,
    bias: &Tensor,
) -> Result<Tensor> {
    let (b, i_dim) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let zp = x_qp.zero_point;
    let out_scale = x_qp.scale * w_qp.scale;
    let mut out = vec![0.0f32; b * o];
    let mut acc = vec![0i32; o];
    for bi in 0..b {
        let row = &x.data[bi * i_dim..(bi + 1) * i_dim];
        acc.fill(0);
        for (ii, &q) in row.iter().enumerate() {
            let xi = q as i32 - zp;
            if xi == 0 {
                continue;
            }
            let w_row = &w.data[ii * o..][..o];
            for (a, &wv) in acc.iter_mut().zip(w_row) {
                *a += xi * wv as i32;
            }
        }
        let orow = &mut out[bi * o..][..o];
        for ((o_val, &a), &b_val) in orow.iter_mut().zip(&acc).zip(bias.data()) {
            *o_val = out_scale * a as f32 + b_val;
        }
    }
    Tensor::new(vec![b, o], out)
}

/// Quantized forward pass mirroring `EmbedderNet::embed_batch`: activations
/// are quantized at each site, convs/dense run on integers, relu/pool and
/// the final normalization stay in f32.
pub fn quantized_embed(qnet: &QuantizedNet, images: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = dims4(images.shape(), "quantized_embed images")?;
    let cfg = &qnet.config;
    if c != cfg.input_c || h != cfg.input_h || w != cfg.input_w {
        return Err(Error::Dimension(format!(
            "images are {c}x{h}x{w}, quantized embedder expects {}x{}x{}",
            cfg.input_c, cfg.input_h, cfg.input_w
        )));
    }
    let mut x = images.clone();
    for (site, (k, k_qp)) in qnet
        .conv_kernels
        .iter()
        .zip(&qnet.conv_kernel_qp)
        .enumerate()
    {
        let x_qp = site_qp(qnet, site, &x)?;
        let xq = quantize_tensor(&x, &x_qp);
        let y = conv2d_int8(&xq, &x_qp, k, k_qp, &qnet.conv_biases[site])?;
        x = ops::maxpool2(&ops::relu(&y))?.0;
    }
    let batch = x.shape()[0];
    let flat = x.reshaped(vec![batch, cfg.dense_input_len()])?;
    let site = qnet.conv_kernels.len();
    let x_qp = site_qp(qnet, site, &flat)?;
    let xq = quantize_tensor(&flat, &x_qp);
    let e = dense_int8(&xq, &x_qp, &qnet.dense_w, &qnet.dense_w_qp, &qnet.dense_b)?;
    if cfg.normalize {
        Ok(ops::l2_normalize(&e)?.0)
    } else {
        Ok(e)
    }
}

/// Timing of 100 consecutive single-image inferences per path, median over
/// repeats. Single-threaded by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub float_total_s: f64,
    pub quant_total_s: f64,
    pub ratio: f64,
    pub repeats: usize,
}

impl std::fmt::Display for BenchmarkReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "float_total_s={} quant_total_s={} ratio={} repeats={}",
            self.float_total_s, self.quant_total_s, self.ratio, self.repeats
        )
    }
}

/// Median of the timings; even counts average the two middle values.
pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Runs the paper's benchmark discipline: one hundred batch-of-1 inferences
/// back to back, on both the float and the quantized path, `repeats` times
/// each; totals are medians over the repeats. The given images cycle to
/// fill the hundred.
pub fn benchmark_inference(
    net: &EmbedderNet,
    qnet: &QuantizedNet,
    images: &Tensor,
    repeats: usize,
) -> Result<BenchmarkReport> {
    if repeats == 0 {
        return Err(Error::Config("benchmark needs at least 1 repeat".into()));
    }
    let (n, c, h, w) = dims4(images.shape(), "benchmark images")?;
    let per = c * h * w;
    let singles: Vec<Tensor> = (0..100)
        .map(|i| {
            let at = i % n;
            Tensor::new(
                vec![1, c, h, w],
                images.data()[at * per..(at + 1) * per].to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut float_times = Vec::with_capacity(repeats);
    let mut quant_times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for img in &singles {
            std::hint::black_box(net.embed_batch(img)?);
        }
        float_times.push(start.elapsed().as_secs_f64());

        let start = Instant::now();
        for img in &singles {
            std::hint::black_box(quantized_embed(qnet, img)?);
        }
        quant_times.push(start.elapsed().as_secs_f64());
    }
    let float_total_s = median(&float_times);
    let quant_total_s = median(&quant_times);
    Ok(BenchmarkReport {
        float_total_s,
        quant_total_s,
        ratio: float_total_s / quant_total_s,
        repeats,
    })
}
