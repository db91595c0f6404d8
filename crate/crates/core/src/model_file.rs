//! Binary model container: a fixed little-endian header, the embedder
//! topology, then length-prefixed typed chunks for weights, quantization
//! parameters, the classifier head, and the nearest-neighbor index.
//!
//! Layout:
//! `"TMLM" | version u32 | flags u8 | config | chunk_count u32 | chunks...`
//! where the config block is `input_h u32, input_w u32, input_c u32,
//! n_blocks u32, channels u32 x n, embedding_dim u32, normalize u8,
//! init_seed u64` and each chunk is `type u8 | len u64 | payload`.
//! Tensor payloads are rank-prefixed: `rank u32, dims u32 x rank, values`.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::classifier::{KnnIndex, MlpHead};
use crate::embedder::{EmbedderConfig, EmbedderNet};
use crate::error::{Error, Result};
use crate::quant::{
    compute_qparams, CalibrationRanges, QScheme, QTensor, QuantMode, QuantParams, QuantizedNet,
};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TMLM";
pub const VERSION: u32 = 1;

const FLAG_QUANTIZED: u8 = 0b0000_0001;

const CHUNK_F32_WEIGHTS: u8 = 0;
const CHUNK_I8_WEIGHTS: u8 = 1;
const CHUNK_QPARAMS: u8 = 2;
const CHUNK_KNN_INDEX: u8 = 3;
const CHUNK_MLP_HEAD: u8 = 4;
const CHUNK_ACT_RANGES: u8 = 5;

/// The embedder stored in a model file: float or int8.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedderModel {
    Float(EmbedderNet),
    Quantized(QuantizedNet),
}

impl EmbedderModel {
    pub fn config(&self) -> &EmbedderConfig {
        match self {
            EmbedderModel::Float(n) => &n.config,
            EmbedderModel::Quantized(n) => &n.config,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, EmbedderModel::Quantized(_))
    }

    /// Embeds a batch through whichever pathway is stored.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        match self {
            EmbedderModel::Float(n) => n.embed_batch(images),
            EmbedderModel::Quantized(n) => crate::quant::quantized_embed(n, images),
        }
    }
}

/// A complete saved artifact: the embedder plus optional classifier state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub embedder: EmbedderModel,
    pub head: Option<MlpHead>,
    pub index: Option<KnnIndex>,
}

impl Model {
    pub fn float(net: EmbedderNet) -> Self {
        Model {
            embedder: EmbedderModel::Float(net),
            head: None,
            index: None,
        }
    }

    pub fn quantized(net: QuantizedNet) -> Self {
        Model {
            embedder: EmbedderModel::Quantized(net),
            head: None,
            index: None,
        }
    }
}

// ---------------------------------------------------------------- writing

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| Error::Contract(format!("value {v} exceeds the file format's u32 fields")))?;
    buf.write_u32::<LittleEndian>(v).expect("vec write");
    Ok(())
}

fn put_f32_tensor(buf: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    put_u32(buf, t.shape().len())?;
    for &d in t.shape() {
        put_u32(buf, d)?;
    }
    for &v in t.data() {
        buf.write_f32::<LittleEndian>(v).expect("vec write");
    }
    Ok(())
}

fn put_i8_tensor(buf: &mut Vec<u8>, t: &QTensor) -> Result<()> {
    put_u32(buf, t.shape().len())?;
    for &d in t.shape() {
        put_u32(buf, d)?;
    }
    buf.extend(t.data().iter().map(|&v| v as u8));
    Ok(())
}

fn put_names(buf: &mut Vec<u8>, names: &[String]) -> Result<()> {
    put_u32(buf, names.len())?;
    for n in names {
        put_u32(buf, n.len())?;
        buf.extend_from_slice(n.as_bytes());
    }
    Ok(())
}

fn put_chunk(out: &mut Vec<u8>, kind: u8, payload: &[u8]) {
    out.push(kind);
    out.write_u64::<LittleEndian>(payload.len() as u64)
        .expect("vec write");
    out.extend_from_slice(payload);
}

fn qparams_payload(qps: &[QuantParams]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    put_u32(&mut buf, qps.len())?;
    for qp in qps {
        buf.push(match qp.scheme {
            QScheme::Symmetric => 0,
            QScheme::Affine => 1,
        });
        buf.write_f32::<LittleEndian>(qp.scale).expect("vec write");
        buf.write_i32::<LittleEndian>(qp.zero_point)
            .expect("vec write");
    }
    Ok(buf)
}

fn ranges_payload(ranges: &CalibrationRanges) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    put_u32(&mut buf, ranges.sites.len())?;
    for &(lo, hi) in &ranges.sites {
        buf.write_f32::<LittleEndian>(lo).expect("vec write");
        buf.write_f32::<LittleEndian>(hi).expect("vec write");
    }
    Ok(buf)
}

fn head_payload(head: &MlpHead) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for t in head.params() {
        put_f32_tensor(&mut buf, t)?;
    }
    put_names(&mut buf, &head.class_names)?;
    Ok(buf)
}

fn index_payload(index: &KnnIndex) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    put_u32(&mut buf, index.len())?;
    put_u32(&mut buf, index.dim())?;
    for &v in index.rows() {
        buf.write_f32::<LittleEndian>(v).expect("vec write");
    }
    put_u32(&mut buf, index.labels().len())?;
    for &l in index.labels() {
        put_u32(&mut buf, l)?;
    }
    put_names(&mut buf, index.class_names())?;
    Ok(buf)
}

/// Serializes a model to the container format.
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let cfg = model.embedder.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).expect("vec write");
    out.push(if model.embedder.is_quantized() {
        FLAG_QUANTIZED
    } else {
        0
    });
    put_u32(&mut out, cfg.input_h)?;
    put_u32(&mut out, cfg.input_w)?;
    put_u32(&mut out, cfg.input_c)?;
    put_u32(&mut out, cfg.conv_channels.len())?;
    for &c in &cfg.conv_channels {
        put_u32(&mut out, c)?;
    }
    put_u32(&mut out, cfg.embedding_dim)?;
    out.push(cfg.normalize as u8);
    out.write_u64::<LittleEndian>(cfg.init_seed)
        .expect("vec write");

    let mut chunks: Vec<(u8, Vec<u8>)> = Vec::new();
    match &model.embedder {
        EmbedderModel::Float(net) => {
            for t in net.params() {
                let mut buf = Vec::new();
                put_f32_tensor(&mut buf, t)?;
                chunks.push((CHUNK_F32_WEIGHTS, buf));
            }
        }
        EmbedderModel::Quantized(net) => {
            for (k, b) in net.conv_kernels.iter().zip(&net.conv_biases) {
                let mut buf = Vec::new();
                put_i8_tensor(&mut buf, k)?;
                chunks.push((CHUNK_I8_WEIGHTS, buf));
                let mut buf = Vec::new();
                put_f32_tensor(&mut buf, b)?;
                chunks.push((CHUNK_F32_WEIGHTS, buf));
            }
            let mut buf = Vec::new();
            put_i8_tensor(&mut buf, &net.dense_w)?;
            chunks.push((CHUNK_I8_WEIGHTS, buf));
            let mut buf = Vec::new();
            put_f32_tensor(&mut buf, &net.dense_b)?;
            chunks.push((CHUNK_F32_WEIGHTS, buf));

            let mut qps: Vec<QuantParams> = net.conv_kernel_qp.clone();
            qps.push(net.dense_w_qp);
            chunks.push((CHUNK_QPARAMS, qparams_payload(&qps)?));
            if let Some(ranges) = &net.ranges {
                chunks.push((CHUNK_ACT_RANGES, ranges_payload(ranges)?));
            }
        }
    }
    if let Some(head) = &model.head {
        chunks.push((CHUNK_MLP_HEAD, head_payload(head)?));
    }
    if let Some(index) = &model.index {
        chunks.push((CHUNK_KNN_INDEX, index_payload(index)?));
    }

    put_u32(&mut out, chunks.len())?;
    for (kind, payload) in chunks {
        put_chunk(&mut out, kind, &payload);
    }
    Ok(out)
}

// ---------------------------------------------------------------- reading

fn short(what: &str) -> Error {
    Error::Format(format!("model file truncated inside {what}"))
}

fn get_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<usize> {
    cur.read_u32::<LittleEndian>()
        .map(|v| v as usize)
        .map_err(|_| short(what))
}

fn remaining(cur: &Cursor<&[u8]>) -> usize {
    cur.get_ref().len().saturating_sub(cur.position() as usize)
}

/// Shared shape prefix of tensor payloads; bounds `numel` by the bytes left
/// so corrupt sizes fail cleanly instead of allocating.
fn get_shape(cur: &mut Cursor<&[u8]>, elem_bytes: usize, what: &str) -> Result<(Vec<usize>, usize)> {
    let rank = get_u32(cur, what)?;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("{what}: tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(get_u32(cur, what)?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("{what}: tensor size overflow")))?;
    if numel.saturating_mul(elem_bytes) > remaining(cur) {
        return Err(short(what));
    }
    Ok((shape, numel))
}

fn get_f32_tensor(cur: &mut Cursor<&[u8]>, what: &str) -> Result<Tensor> {
    let (shape, numel) = get_shape(cur, 4, what)?;
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(cur.read_f32::<LittleEndian>().map_err(|_| short(what))?);
    }
    Tensor::new(shape, data).map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn get_i8_tensor(cur: &mut Cursor<&[u8]>, what: &str) -> Result<QTensor> {
    let (shape, numel) = get_shape(cur, 1, what)?;
    let mut data = vec![0u8; numel];
    cur.read_exact(&mut data).map_err(|_| short(what))?;
    QTensor::new(shape, data.into_iter().map(|v| v as i8).collect())
        .map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn get_names(cur: &mut Cursor<&[u8]>, what: &str) -> Result<Vec<String>> {
    let count = get_u32(cur, what)?;
    let mut names = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = get_u32(cur, what)?;
        if len > remaining(cur) {
            return Err(short(what));
        }
        let mut bytes = vec![0u8; len];
        cur.read_exact(&mut bytes).map_err(|_| short(what))?;
        names.push(
            String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("{what}: class name is not utf-8")))?,
        );
    }
    Ok(names)
}

fn expect_consumed(cur: &Cursor<&[u8]>, what: &str) -> Result<()> {
    if cur.position() as usize != cur.get_ref().len() {
        return Err(Error::Format(format!("{what}: trailing bytes in chunk")));
    }
    Ok(())
}

fn parse_qparams(payload: &[u8]) -> Result<Vec<QuantParams>> {
    let mut cur = Cursor::new(payload);
    let count = get_u32(&mut cur, "qparams chunk")?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let scheme = match cur.read_u8().map_err(|_| short("qparams chunk"))? {
            0 => QScheme::Symmetric,
            1 => QScheme::Affine,
            other => {
                return Err(Error::Format(format!(
                    "qparams chunk: unknown scheme tag {other}"
                )))
            }
        };
        let scale = cur
            .read_f32::<LittleEndian>()
            .map_err(|_| short("qparams chunk"))?;
        let zero_point = cur
            .read_i32::<LittleEndian>()
            .map_err(|_| short("qparams chunk"))?;
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Format(format!("qparams chunk: scale {scale}")));
        }
        out.push(QuantParams {
            scale,
            zero_point,
            scheme,
        });
    }
    expect_consumed(&cur, "qparams chunk")?;
    Ok(out)
}

fn parse_ranges(payload: &[u8]) -> Result<CalibrationRanges> {
    let mut cur = Cursor::new(payload);
    let count = get_u32(&mut cur, "activation-ranges chunk")?;
    let mut sites = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let lo = cur
            .read_f32::<LittleEndian>()
            .map_err(|_| short("activation-ranges chunk"))?;
        let hi = cur
            .read_f32::<LittleEndian>()
            .map_err(|_| short("activation-ranges chunk"))?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Format(format!(
                "activation-ranges chunk: range [{lo}, {hi}]"
            )));
        }
        sites.push((lo, hi));
    }
    expect_consumed(&cur, "activation-ranges chunk")?;
    Ok(CalibrationRanges { sites })
}

fn parse_head(payload: &[u8]) -> Result<MlpHead> {
    let mut cur = Cursor::new(payload);
    let w1 = get_f32_tensor(&mut cur, "head chunk")?;
    let b1 = get_f32_tensor(&mut cur, "head chunk")?;
    let w2 = get_f32_tensor(&mut cur, "head chunk")?;
    let b2 = get_f32_tensor(&mut cur, "head chunk")?;
    let class_names = get_names(&mut cur, "head chunk")?;
    expect_consumed(&cur, "head chunk")?;
    if w1.shape().len() != 2
        || w2.shape().len() != 2
        || b1.shape() != [w1.shape()[1]]
        || b2.shape() != [w2.shape()[1]]
        || w1.shape()[1] != w2.shape()[0]
        || w2.shape()[1] != class_names.len()
    {
        return Err(Error::Format("head chunk: inconsistent layer shapes".into()));
    }
    Ok(MlpHead {
        w1,
        b1,
        w2,
        b2,
        class_names,
    })
}

fn parse_index(payload: &[u8]) -> Result<KnnIndex> {
    let mut cur = Cursor::new(payload);
    let n = get_u32(&mut cur, "index chunk")?;
    let dim = get_u32(&mut cur, "index chunk")?;
    let numel = n
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("index chunk: size overflow".into()))?;
    if numel.saturating_mul(4) > remaining(&cur) {
        return Err(short("index chunk"));
    }
    let mut embeddings = Vec::with_capacity(numel);
    for _ in 0..numel {
        embeddings.push(
            cur.read_f32::<LittleEndian>()
                .map_err(|_| short("index chunk"))?,
        );
    }
    let label_count = get_u32(&mut cur, "index chunk")?;
    if label_count != n {
        return Err(Error::Format(format!(
            "index chunk: {label_count} labels for {n} rows"
        )));
    }
    let mut labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        labels.push(get_u32(&mut cur, "index chunk")?);
    }
    let class_names = get_names(&mut cur, "index chunk")?;
    expect_consumed(&cur, "index chunk")?;
    KnnIndex::from_parts(dim, embeddings, labels, class_names)
        .map_err(|e| Error::Format(format!("index chunk: {e}")))
}

/// Parses a model from bytes, validating magic, version, flags, every chunk
/// type, and all shape/count invariants.
pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| short("header"))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, not a model file"
        )));
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| short("header"))?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported model file version {version} (expected {VERSION})"
        )));
    }
    let flags = cur.read_u8().map_err(|_| short("header"))?;
    if flags & !FLAG_QUANTIZED != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#010b}")));
    }
    let quantized = flags & FLAG_QUANTIZED != 0;

    let input_h = get_u32(&mut cur, "config block")?;
    let input_w = get_u32(&mut cur, "config block")?;
    let input_c = get_u32(&mut cur, "config block")?;
    let n_blocks = get_u32(&mut cur, "config block")?;
    if n_blocks == 0 || n_blocks > 16 {
        return Err(Error::Format(format!("config block: {n_blocks} blocks")));
    }
    let mut conv_channels = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        conv_channels.push(get_u32(&mut cur, "config block")?);
    }
    let embedding_dim = get_u32(&mut cur, "config block")?;
    let normalize = match cur.read_u8().map_err(|_| short("config block"))? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format(format!(
                "config block: normalize byte {other}"
            )))
        }
    };
    let init_seed = cur
        .read_u64::<LittleEndian>()
        .map_err(|_| short("config block"))?;
    let config = EmbedderConfig {
        input_h,
        input_w,
        input_c,
        conv_channels,
        embedding_dim,
        normalize,
        init_seed,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("config block: {e}")))?;

    let chunk_count = get_u32(&mut cur, "chunk table")?;
    let mut chunks: Vec<(u8, &[u8])> = Vec::with_capacity(chunk_count.min(1024));
    for i in 0..chunk_count {
        let kind = cur
            .read_u8()
            .map_err(|_| short(&format!("chunk {i} header")))?;
        if kind > CHUNK_ACT_RANGES {
            return Err(Error::Format(format!("chunk {i}: unknown chunk type {kind}")));
        }
        let len = cur
            .read_u64::<LittleEndian>()
            .map_err(|_| short(&format!("chunk {i} header")))? as usize;
        let start = cur.position() as usize;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| short(&format!("chunk {i} payload")))?;
        chunks.push((kind, &bytes[start..end]));
        cur.set_position(end as u64);
    }
    if cur.position() as usize != bytes.len() {
        return Err(Error::Format("trailing bytes after the last chunk".into()));
    }

    fn take_chunk<'a>(
        chunks: &[(u8, &'a [u8])],
        at: &mut usize,
        expected: u8,
        what: &str,
    ) -> Result<&'a [u8]> {
        let (kind, payload) = *chunks
            .get(*at)
            .ok_or_else(|| Error::Format(format!("missing chunk: {what}")))?;
        if kind != expected {
            return Err(Error::Format(format!(
                "chunk {at}: expected {what} (type {expected}), found type {kind}"
            )));
        }
        *at += 1;
        Ok(payload)
    }
    let mut at = 0usize;

    let embedder = if quantized {
        let mut conv_kernels = Vec::with_capacity(n_blocks);
        let mut conv_biases = Vec::with_capacity(n_blocks);
        let mut in_c = config.input_c;
        for (b, &out_c) in config.conv_channels.iter().enumerate() {
            let k = get_i8_tensor(
                &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_I8_WEIGHTS, "conv kernel")?),
                "conv kernel chunk",
            )?;
            if k.shape() != [out_c, in_c, 3, 3] {
                return Err(Error::Format(format!(
                    "conv kernel {b}: shape {:?} does not match the config",
                    k.shape()
                )));
            }
            let bias = get_f32_tensor(
                &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_F32_WEIGHTS, "conv bias")?),
                "conv bias chunk",
            )?;
            if bias.shape() != [out_c] {
                return Err(Error::Format(format!("conv bias {b}: wrong shape")));
            }
            conv_kernels.push(k);
            conv_biases.push(bias);
            in_c = out_c;
        }
        let dense_w = get_i8_tensor(
            &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_I8_WEIGHTS, "dense weight")?),
            "dense weight chunk",
        )?;
        if dense_w.shape() != [config.dense_input_len(), config.embedding_dim] {
            return Err(Error::Format("dense weight: wrong shape".into()));
        }
        let dense_b = get_f32_tensor(
            &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_F32_WEIGHTS, "dense bias")?),
            "dense bias chunk",
        )?;
        if dense_b.shape() != [config.embedding_dim] {
            return Err(Error::Format("dense bias: wrong shape".into()));
        }
        let qps = parse_qparams(take_chunk(&chunks, &mut at, CHUNK_QPARAMS, "weight qparams")?)?;
        if qps.len() != n_blocks + 1 {
            return Err(Error::Format(format!(
                "qparams chunk: {} entries for {} weight tensors",
                qps.len(),
                n_blocks + 1
            )));
        }
        if qps.iter().any(|qp| qp.scheme != QScheme::Symmetric || qp.zero_point != 0) {
            return Err(Error::Format(
                "qparams chunk: weight entries must be symmetric".into(),
            ));
        }
        let dense_w_qp = qps[n_blocks];
        let conv_kernel_qp = qps[..n_blocks].to_vec();

        // an activation-ranges chunk means static mode; absence means dynamic
        let mut ranges = None;
        if chunks.get(at).map(|c| c.0) == Some(CHUNK_ACT_RANGES) {
            let r = parse_ranges(take_chunk(&chunks, &mut at, CHUNK_ACT_RANGES, "activation ranges")?)?;
            if r.site_count() != n_blocks + 1 {
                return Err(Error::Format(format!(
                    "activation-ranges chunk: {} sites for {} layers",
                    r.site_count(),
                    n_blocks + 1
                )));
            }
            ranges = Some(r);
        }
        let (mode, activation_qp) = match &ranges {
            Some(r) => {
                let qp = r
                    .sites
                    .iter()
                    .map(|&(lo, hi)| compute_qparams(lo, hi, QScheme::Affine))
                    .collect::<Result<Vec<_>>>()?;
                (QuantMode::Static, Some(qp))
            }
            None => (QuantMode::Dynamic, None),
        };
        EmbedderModel::Quantized(QuantizedNet {
            config,
            mode,
            conv_kernels,
            conv_kernel_qp,
            conv_biases,
            dense_w,
            dense_w_qp,
            dense_b,
            activation_qp,
            ranges,
        })
    } else {
        let mut conv_kernels = Vec::with_capacity(n_blocks);
        let mut conv_biases = Vec::with_capacity(n_blocks);
        let mut in_c = config.input_c;
        for (b, &out_c) in config.conv_channels.iter().enumerate() {
            let k = get_f32_tensor(
                &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_F32_WEIGHTS, "conv kernel")?),
                "conv kernel chunk",
            )?;
            if k.shape() != [out_c, in_c, 3, 3] {
                return Err(Error::Format(format!(
                    "conv kernel {b}: shape {:?} does not match the config",
                    k.shape()
                )));
            }
            let bias = get_f32_tensor(
                &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_F32_WEIGHTS, "conv bias")?),
                "conv bias chunk",
            )?;
            if bias.shape() != [out_c] {
                return Err(Error::Format(format!("conv bias {b}: wrong shape")));
            }
            conv_kernels.push(k);
            conv_biases.push(bias);
            in_c = out_c;
        }
        let dense_w = get_f32_tensor(
            &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_F32_WEIGHTS, "dense weight")?),
            "dense weight chunk",
        )?;
        if dense_w.shape() != [config.dense_input_len(), config.embedding_dim] {
            return Err(Error::Format("dense weight: wrong shape".into()));
        }
        let dense_b = get_f32_tensor(
            &mut Cursor::new(take_chunk(&chunks, &mut at, CHUNK_F32_WEIGHTS, "dense bias")?),
            "dense bias chunk",
        )?;
        if dense_b.shape() != [config.embedding_dim] {
            return Err(Error::Format("dense bias: wrong shape".into()));
        }
        EmbedderModel::Float(EmbedderNet {
            config,
            conv_kernels,
            conv_biases,
            dense_w,
            dense_b,
        })
    };

    let mut head = None;
    let mut index = None;
    while at < chunks.len() {
        let (kind, payload) = chunks[at];
        at += 1;
        match kind {
            CHUNK_MLP_HEAD if head.is_none() => head = Some(parse_head(payload)?),
            CHUNK_KNN_INDEX if index.is_none() => index = Some(parse_index(payload)?),
            CHUNK_MLP_HEAD | CHUNK_KNN_INDEX => {
                return Err(Error::Format("duplicate head or index chunk".into()))
            }
            other => {
                return Err(Error::Format(format!(
                    "unexpected chunk type {other} after the embedder chunks"
                )))
            }
        }
    }

    Ok(Model {
        embedder,
        head,
        index,
    })
}

/// Writes a model file.
pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let bytes = encode_model(model)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_model(&bytes)
}
