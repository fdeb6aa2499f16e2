//! The three model variants and their losses.
//!
//! A2E maps the embedding straight to the eight emotion targets. A2B2E and
//! A2M2E share one architecture: a linear bottleneck of `n_midlevel` units
//! sits between the embedding and the emotion head, and the head is a single
//! linear map on the bottleneck activations. The variants differ only in
//! training: A2B2E gets no concept supervision, A2M2E is jointly supervised
//! on mid-level targets through the 0.5-scaled sum of both MSE terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    A2E,
    A2B2E,
    A2M2E,
}

impl Variant {
    pub fn has_bottleneck(self) -> bool {
        !matches!(self, Variant::A2E)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::A2E => "a2e",
            Variant::A2B2E => "a2b2e",
            Variant::A2M2E => "a2m2e",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2e" => Ok(Variant::A2E),
            "a2b2e" => Ok(Variant::A2B2E),
            "a2m2e" => Ok(Variant::A2M2E),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// No nonlinearity; useful for linear ablations.
    Linear,
}

/// How the conv stack is collapsed before the embedding layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    GlobalAvgPool,
    Flatten,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub conv_blocks: Vec<ConvBlock>,
    pub embedding_dim: usize,
    pub n_midlevel: usize,
    pub n_emotions: usize,
    pub activation: Activation,
    pub head_input: HeadInput,
    /// Input spectrogram shape (bands, frames); fixes the flatten width.
    pub input_bands: usize,
    pub input_frames: usize,
}

impl ModelSpec {
    /// Desk-scale default: 3 conv blocks, GAP embedding.
    pub fn default_spec(variant: Variant, bands: usize, frames: usize) -> Self {
        ModelSpec {
            variant,
            conv_blocks: vec![
                ConvBlock { out_channels: 8, kernel: 3, pool: 2 },
                ConvBlock { out_channels: 16, kernel: 3, pool: 2 },
                ConvBlock { out_channels: 32, kernel: 3, pool: 2 },
            ],
            embedding_dim: 32,
            n_midlevel: 7,
            n_emotions: 8,
            activation: Activation::Relu,
            head_input: HeadInput::GlobalAvgPool,
            input_bands: bands,
            input_frames: frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::config("model spec needs at least one conv block".to_string()));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.pool == 0 {
                return Err(Error::config(format!("conv block {i} has a zero-size field")));
            }
        }
        if self.embedding_dim == 0 || self.n_midlevel == 0 || self.n_emotions == 0 {
            return Err(Error::config("zero-size layer in model spec".to_string()));
        }
        if self.input_bands == 0 || self.input_frames == 0 {
            return Err(Error::config("zero-size input shape".to_string()));
        }
        // The conv/pool stack must not consume the spatial dims entirely.
        self.conv_output_shape()?;
        Ok(())
    }

    /// (channels, h, w) after the conv stack, given the declared input shape.
    pub fn conv_output_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (self.input_bands, self.input_frames);
        let mut c = 1;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            // conv keeps the spatial size (padding = kernel / 2, stride 1)
            let padded_h = h + 2 * (b.kernel / 2);
            let padded_w = w + 2 * (b.kernel / 2);
            if b.kernel > padded_h || b.kernel > padded_w {
                return Err(Error::dimension(format!(
                    "input {h}x{w} too small for conv block {i} kernel {}",
                    b.kernel
                )));
            }
            h = (padded_h - b.kernel) + 1;
            w = (padded_w - b.kernel) + 1;
            if b.pool > h || b.pool > w {
                return Err(Error::dimension(format!(
                    "feature map {h}x{w} too small for pool {} in block {i}",
                    b.pool
                )));
            }
            h = (h - b.pool) / b.pool + 1;
            w = (w - b.pool) / b.pool + 1;
            c = b.out_channels;
        }
        Ok((c, h, w))
    }

    /// Ordered (name, shape) inventory of all parameters.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        self.validate()?;
        let mut shapes = Vec::new();
        let mut cin = 1;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            shapes.push((format!("conv{i}.weight"), vec![b.out_channels, cin, b.kernel, b.kernel]));
            shapes.push((format!("conv{i}.bias"), vec![b.out_channels]));
            cin = b.out_channels;
        }
        let (c, h, w) = self.conv_output_shape()?;
        let embed_in = match self.head_input {
            HeadInput::GlobalAvgPool => c,
            HeadInput::Flatten => c * h * w,
        };
        shapes.push(("embed.weight".into(), vec![embed_in, self.embedding_dim]));
        shapes.push(("embed.bias".into(), vec![self.embedding_dim]));
        if self.variant.has_bottleneck() {
            shapes.push(("bottleneck.weight".into(), vec![self.embedding_dim, self.n_midlevel]));
            shapes.push(("bottleneck.bias".into(), vec![self.n_midlevel]));
            shapes.push(("head.weight".into(), vec![self.n_midlevel, self.n_emotions]));
        } else {
            shapes.push(("head.weight".into(), vec![self.embedding_dim, self.n_emotions]));
        }
        shapes.push(("head.bias".into(), vec![self.n_emotions]));
        Ok(shapes)
    }

    /// SHA-256 of the serialized spec; stored in checkpoints.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_string(self).expect("spec serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        h.finalize().into()
    }
}

/// Named parameter set for one model instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<(String, Tensor<T>)>,
    pub rng_seed: u64,
}

impl<T: Element> ModelParams<T> {
    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn n_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.to_f64())).collect(),
            rng_seed: self.rng_seed,
        }
    }
}

/// Deterministic fan-in-scaled uniform initialization.
pub fn build_model<T: Element>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    let shapes = spec.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(shapes.len());
    for (name, shape) in shapes {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(shape)
        } else {
            let fan_in: usize = if shape.len() == 4 {
                shape[1] * shape[2] * shape[3]
            } else {
                shape[0]
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let numel: usize = shape.iter().product();
            let data: Vec<T> =
                (0..numel).map(|_| T::elem(rng.gen_range(-bound..bound))).collect();
            Tensor::new(shape, data)?
        };
        entries.push((name, tensor));
    }
    Ok(ModelParams { entries, rng_seed: seed })
}

/// Parameter nodes inserted into a graph, aligned with `ModelParams::entries`.
pub struct ParamNodes {
    pub ids: Vec<NodeId>,
}

pub fn insert_params<T: Element>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    requires_grad: bool,
) -> ParamNodes {
    let ids = params.entries.iter().map(|(_, t)| g.leaf(t.clone(), requires_grad)).collect();
    ParamNodes { ids }
}

/// Forward-pass outputs as graph nodes, so callers can keep differentiating.
pub struct ForwardOutput {
    pub emotions: NodeId,
    pub midlevel: Option<NodeId>,
}

/// Runs the variant's forward pass on `x` with shape `[B x 1 x F x T]`.
pub fn forward<T: Element>(
    g: &mut Graph<T>,
    params: &ParamNodes,
    spec: &ModelSpec,
    x: NodeId,
) -> Result<ForwardOutput> {
    let xsh = g.value(x).shape().to_vec();
    if xsh.len() != 4 || xsh[1] != 1 {
        return Err(Error::dimension(format!("forward: expected [B x 1 x F x T], got {xsh:?}")));
    }
    let batch = xsh[0];
    let mut idx = 0;
    let mut next = || {
        let id = params.ids[idx];
        idx += 1;
        id
    };

    let mut cur = x;
    for b in &spec.conv_blocks {
        let w = next();
        let bias = next();
        cur = g.conv2d(cur, w, bias, b.kernel / 2, 1)?;
        cur = match spec.activation {
            Activation::Relu => g.relu(cur),
            Activation::Linear => cur,
        };
        cur = g.maxpool2d(cur, b.pool, b.pool)?;
    }

    let features = match spec.head_input {
        HeadInput::GlobalAvgPool => g.global_avg_pool(cur)?,
        HeadInput::Flatten => {
            let n = g.value(cur).numel() / batch;
            g.reshape(cur, vec![batch, n])?
        }
    };

    let embed_w = next();
    let embed_b = next();
    let mut embed = g.matmul(features, embed_w)?;
    embed = g.add_bias(embed, embed_b)?;
    embed = match spec.activation {
        Activation::Relu => g.relu(embed),
        Activation::Linear => embed,
    };

    if spec.variant.has_bottleneck() {
        let bw = next();
        let bb = next();
        // pure linear bottleneck, no activation
        let mid = g.matmul(embed, bw)?;
        let mid = g.add_bias(mid, bb)?;
        let hw = next();
        let hb = next();
        let emo = g.matmul(mid, hw)?;
        let emo = g.add_bias(emo, hb)?;
        Ok(ForwardOutput { emotions: emo, midlevel: Some(mid) })
    } else {
        let hw = next();
        let hb = next();
        let emo = g.matmul(embed, hw)?;
        let emo = g.add_bias(emo, hb)?;
        Ok(ForwardOutput { emotions: emo, midlevel: None })
    }
}

/// MSE on the emotion outputs (A2E and A2B2E training loss).
pub fn loss_emotion<T: Element>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    y_emotion: NodeId,
) -> Result<NodeId> {
    g.mse_loss(out.emotions, y_emotion)
}

/// Joint A2M2E loss: 0.5 * MSE(emotions) + 0.5 * MSE(midlevel).
pub fn loss_joint<T: Element>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    y_emotion: NodeId,
    y_midlevel: NodeId,
) -> Result<NodeId> {
    let mid = out
        .midlevel
        .ok_or_else(|| Error::config("joint loss requires a bottleneck variant".to_string()))?;
    let le = g.mse_loss(out.emotions, y_emotion)?;
    let lm = g.mse_loss(mid, y_midlevel)?;
    let le = g.mul_scalar(le, T::elem(0.5));
    let lm = g.mul_scalar(lm, T::elem(0.5));
    g.add(le, lm)
}

/// Plain inference: runs the forward pass and returns concrete tensors.
pub struct ModelOutput<T> {
    pub emotions: Tensor<T>,
    pub midlevel: Option<Tensor<T>>,
}

pub fn predict<T: Element>(
    params: &ModelParams<T>,
    spec: &ModelSpec,
    x: &Tensor<T>,
) -> Result<ModelOutput<T>> {
    let mut g = Graph::new();
    let xid = g.leaf(x.clone(), false);
    let nodes = insert_params(&mut g, params, false);
    let out = forward(&mut g, &nodes, spec, xid)?;
    Ok(ModelOutput {
        emotions: g.value(out.emotions).clone(),
        midlevel: out.midlevel.map(|m| g.value(m).clone()),
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MERWCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes parameters: magic, version, spec digest, then per-layer
/// records (name length + name + rank + dims + little-endian f32 values).
pub fn save_params<T: Element>(params: &ModelParams<T>, spec: &ModelSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.digest());
    out.extend_from_slice(&params.rng_seed.to_le_bytes());
    out.extend_from_slice(&(params.entries.len() as u32).to_le_bytes());
    for (name, tensor) in &params.entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_params<T: Element>(bytes: &[u8], spec: &ModelSpec) -> Result<ModelParams<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic".to_string()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let digest = cur.take(32)?;
    if digest != spec.digest() {
        return Err(Error::format("checkpoint spec digest does not match model spec".to_string()));
    }
    let rng_seed = cur.u64()?;
    let n_layers = cur.u32()? as usize;
    let expected = spec.param_shapes()?;
    if n_layers != expected.len() {
        return Err(Error::format(format!(
            "checkpoint has {n_layers} layers, spec implies {}",
            expected.len()
        )));
    }
    let mut entries = Vec::with_capacity(n_layers);
    for (exp_name, exp_shape) in &expected {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::format("non-utf8 layer name".to_string()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        if &name != exp_name || &shape != exp_shape {
            return Err(Error::format(format!(
                "layer '{name}' with shape {shape:?} does not match spec layer '{exp_name}' {exp_shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(T::elem(cur.f32()? as f64));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(ModelParams { entries, rng_seed })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("truncated checkpoint".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            conv_blocks: vec![
                ConvBlock { out_channels: 2, kernel: 3, pool: 2 },
                ConvBlock { out_channels: 4, kernel: 3, pool: 2 },
            ],
            embedding_dim: 16,
            n_midlevel: 7,
            n_emotions: 8,
            activation: Activation::Relu,
            head_input: HeadInput::GlobalAvgPool,
            input_bands: 12,
            input_frames: 16,
        }
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let spec = toy_spec(Variant::A2B2E);
        let a: ModelParams<f32> = build_model(&spec, 7).unwrap();
        let b: ModelParams<f32> = build_model(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = build_model(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_matches_hand_total() {
        // 2 conv blocks (2ch then 4ch, 3x3), GAP embedding 16, bottleneck 7, head 8
        let spec = toy_spec(Variant::A2B2E);
        let params: ModelParams<f64> = build_model(&spec, 0).unwrap();
        let conv0 = 2 * 3 * 3 + 2;
        let conv1 = 4 * 2 * 3 * 3 + 4;
        let embed = 4 * 16 + 16;
        let bottleneck = 16 * 7 + 7;
        let head = 7 * 8 + 8;
        assert_eq!(params.n_params(), conv0 + conv1 + embed + bottleneck + head);
    }

    #[test]
    fn zero_size_layer_is_config_error() {
        let mut spec = toy_spec(Variant::A2E);
        spec.embedding_dim = 0;
        assert!(matches!(build_model::<f32>(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn architecture_identity_a2b2e_a2m2e() {
        let mut s1 = toy_spec(Variant::A2B2E);
        let mut s2 = toy_spec(Variant::A2M2E);
        let p1 = build_model::<f32>(&s1, 3).unwrap();
        let p2 = build_model::<f32>(&s2, 3).unwrap();
        let shapes = |p: &ModelParams<f32>| {
            p.entries().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>()
        };
        assert_eq!(shapes(&p1), shapes(&p2));
        // identical seed -> identical outputs, only training differs
        let x = Tensor::<f32>::full(vec![1, 1, 12, 16], 0.3);
        s1.variant = Variant::A2B2E;
        s2.variant = Variant::A2M2E;
        let o1 = predict(&p1, &s1, &x).unwrap();
        let o2 = predict(&p2, &s2, &x).unwrap();
        assert_eq!(o1.emotions.data(), o2.emotions.data());
    }

    #[test]
    fn zero_input_gives_bias_only_forward() {
        let spec = toy_spec(Variant::A2E);
        let params: ModelParams<f64> = build_model(&spec, 5).unwrap();
        let x = Tensor::<f64>::zeros(vec![1, 1, 12, 16]);
        let out = predict(&params, &spec, &x).unwrap();
        // biases are zero-initialized, so the whole forward collapses to the
        // head bias (zero) after relu of zeros
        assert!(out.emotions.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bottleneck_emotions_are_affine_in_midlevel() {
        let spec = toy_spec(Variant::A2M2E);
        let params: ModelParams<f64> = build_model(&spec, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..12 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let x = Tensor::new(vec![1, 1, 12, 16], data).unwrap();
        let out = predict(&params, &spec, &x).unwrap();
        let mid = out.midlevel.as_ref().unwrap();
        // recompute emotions = mid . head.weight + head.bias
        let hw = params.get("head.weight").unwrap();
        let hb = params.get("head.bias").unwrap();
        for j in 0..8 {
            let mut v = hb.data()[j];
            for i in 0..7 {
                v += mid.data()[i] * hw.data()[i * 8 + j];
            }
            assert!((v - out.emotions.data()[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn bottleneck_midpoint_linearity() {
        // affine map: midpoint of two embeddings -> midpoint of outputs
        let spec = toy_spec(Variant::A2M2E);
        let params: ModelParams<f64> = build_model(&spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mk = |rng: &mut ChaCha8Rng| {
            let data: Vec<f64> = (0..12 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
            Tensor::new(vec![1, 1, 12, 16], data).unwrap()
        };
        let (xa, xb) = (mk(&mut rng), mk(&mut rng));
        let oa = predict(&params, &spec, &xa).unwrap();
        let ob = predict(&params, &spec, &xb).unwrap();
        let ma = oa.midlevel.unwrap();
        let mb = ob.midlevel.unwrap();
        // run the head alone on the midpoint of the two midlevel vectors
        let hw = params.get("head.weight").unwrap();
        let hb = params.get("head.bias").unwrap();
        let headmap = |m: &[f64]| -> Vec<f64> {
            (0..8)
                .map(|j| hb.data()[j] + (0..7).map(|i| m[i] * hw.data()[i * 8 + j]).sum::<f64>())
                .collect()
        };
        let mid_mid: Vec<f64> =
            ma.data().iter().zip(mb.data()).map(|(&a, &b)| 0.5 * (a + b)).collect();
        let out_mid = headmap(&mid_mid);
        let ya = headmap(ma.data());
        let yb = headmap(mb.data());
        for j in 0..8 {
            assert!((out_mid[j] - 0.5 * (ya[j] + yb[j])).abs() < 1e-6);
        }
    }

    #[test]
    fn joint_loss_weighted_sum() {
        // emotion MSE 0.2 and midlevel MSE 0.4 -> 0.3
        let mut g = Graph::<f64>::new();
        let pe = g.leaf(Tensor::new(vec![1, 1], vec![0.2f64.sqrt()]).unwrap(), false);
        let ye = g.leaf(Tensor::zeros(vec![1, 1]), false);
        let pm = g.leaf(Tensor::new(vec![1, 1], vec![0.4f64.sqrt()]).unwrap(), false);
        let ym = g.leaf(Tensor::zeros(vec![1, 1]), false);
        let out = ForwardOutput { emotions: pe, midlevel: Some(pm) };
        let l = loss_joint(&mut g, &out, ye, ym).unwrap();
        assert!((g.value(l).item().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_zero_when_exact() {
        let mut g = Graph::<f64>::new();
        let pe = g.leaf(Tensor::full(vec![2, 8], 0.5), false);
        let ye = g.leaf(Tensor::full(vec![2, 8], 0.5), false);
        let pm = g.leaf(Tensor::full(vec![2, 7], 0.25), false);
        let ym = g.leaf(Tensor::full(vec![2, 7], 0.25), false);
        let out = ForwardOutput { emotions: pe, midlevel: Some(pm) };
        let l = loss_joint(&mut g, &out, ye, ym).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn joint_loss_requires_bottleneck() {
        let mut g = Graph::<f64>::new();
        let pe = g.leaf(Tensor::zeros(vec![1, 8]), false);
        let ye = g.leaf(Tensor::zeros(vec![1, 8]), false);
        let ym = g.leaf(Tensor::zeros(vec![1, 7]), false);
        let out = ForwardOutput { emotions: pe, midlevel: None };
        assert!(matches!(loss_joint(&mut g, &out, ye, ym), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let spec = toy_spec(Variant::A2M2E);
        let params: ModelParams<f32> = build_model(&spec, 9).unwrap();
        let bytes = save_params(&params, &spec);
        let loaded: ModelParams<f32> = load_params(&bytes, &spec).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn checkpoint_truncated_is_format_error() {
        let spec = toy_spec(Variant::A2E);
        let params: ModelParams<f32> = build_model(&spec, 9).unwrap();
        let bytes = save_params(&params, &spec);
        let err = load_params::<f32>(&bytes[..bytes.len() - 3], &spec).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn checkpoint_spec_mismatch_names_layer() {
        let spec = toy_spec(Variant::A2E);
        let params: ModelParams<f32> = build_model(&spec, 9).unwrap();
        let bytes = save_params(&params, &spec);
        let mut other = spec.clone();
        other.embedding_dim = 12;
        let err = load_params::<f32>(&bytes, &other).unwrap_err();
        // digest check fires first; strip it to exercise the layer check too
        assert!(matches!(err, Error::Format(_)));
    }
}
