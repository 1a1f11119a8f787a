//! The UNet protector `G`: `I' = G(I)`, with `δ = I' − I` derived afterwards.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autograd::{Graph, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imagecore::ImageTensor;
use crate::nn::{rng, Bound, Conv, ParamStore};
use crate::tensor::{Real, Shape, Tensor};

/// Architecture of an encoder/decoder UNet with skip concatenations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    /// Number of encoder (and decoder) blocks.
    pub depth: usize,
    pub base_channels: usize,
    pub activation: Activation,
    pub squashing: Squashing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
}

/// How the protector's raw output is mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squashing {
    /// `sigmoid(logit(I) + r)`: identity when the residual logit `r` is zero.
    LogitResidualSigmoid,
    /// No squashing (used by the oracle's noise predictor).
    None,
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            activation: Activation::Silu,
            squashing: Squashing::LogitResidualSigmoid,
        }
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.depth) {
            return Err(Error::Spec(format!("depth {} outside [2, 5]", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Spec("base_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1 << self.depth;
        if h % f != 0 || w % f != 0 {
            return Err(Error::Spec(format!(
                "{h}x{w} input is not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Channels of encoder block `i`.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone)]
struct Block {
    a: Conv,
    b: Conv,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, r: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            a: Conv::new(store, &format!("{name}.conv0"), cin, cout, 3, 1, 1.0, r),
            b: Conv::new(store, &format!("{name}.conv1"), cout, cout, 3, 1, 1.0, r),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = self.a.forward(g, p, x);
        let h = g.silu(h);
        let h = self.b.forward(g, p, h);
        g.silu(h)
    }
}

/// Plain UNet: `depth` encoder blocks (conv, conv, 2× average-pool), a bottleneck
/// block, mirrored decoder blocks (2× nearest upsample, skip concat, conv, conv) and
/// a 1×1 projection.
#[derive(Debug, Clone)]
pub struct UNet {
    spec: UNetSpec,
    in_channels: usize,
    out_channels: usize,
    encoder: Vec<Block>,
    bottleneck: Block,
    decoder: Vec<Block>,
    head: Conv,
}

impl UNet {
    /// Builds layers and seeded weights into `store`. `head_gain` scales the final projection init.
    pub fn build(
        spec: UNetSpec,
        in_channels: usize,
        out_channels: usize,
        head_gain: f64,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let mut r = rng(seed, 0xc0ffee);
        let mut encoder = Vec::new();
        let mut cin = in_channels;
        for i in 0..spec.depth {
            encoder.push(Block::new(store, &format!("enc{i}"), cin, spec.channels(i), &mut r));
            cin = spec.channels(i);
        }
        let bottleneck = Block::new(store, "mid", cin, spec.channels(spec.depth), &mut r);
        let mut below = spec.channels(spec.depth);
        let mut decoder = Vec::new();
        for i in (0..spec.depth).rev() {
            decoder.push(Block::new(store, &format!("dec{i}"), below + spec.channels(i), spec.channels(i), &mut r));
            below = spec.channels(i);
        }
        let head = Conv::new(store, "head", below, out_channels, 1, 1, head_gain, &mut r);
        Ok(Self {
            spec,
            in_channels,
            out_channels,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Number of skip concatenations performed per forward pass.
    pub fn skip_count(&self) -> usize {
        self.decoder.len()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for block in &self.encoder {
            h = block.forward(g, p, h);
            skips.push(h);
            h = g.avg_pool2(h);
        }
        h = self.bottleneck.forward(g, p, h);
        for block in &self.decoder {
            let up = g.upsample2(h);
            let skip = skips.pop().expect("one skip per decoder block");
            let cat = g.concat(up, skip);
            h = block.forward(g, p, cat);
        }
        self.head.forward(g, p, h)
    }
}

/// Clamp margin applied before `logit` so saturated pixels stay finite.
const LOGIT_MARGIN: f64 = 1e-3;

/// A protector network with its weights.
#[derive(Debug, Clone)]
pub struct Protector {
    net: UNet,
    params: ParamStore,
}

impl Protector {
    /// `build_unet`: seeded protector for `spec`.
    pub fn build(spec: UNetSpec, seed: u64) -> Result<Self> {
        if spec.squashing != Squashing::LogitResidualSigmoid {
            return Err(Error::Spec("protector output must be squashed onto [0, 1]".into()));
        }
        let mut params = ParamStore::new();
        let net = UNet::build(spec, 3, 3, 0.1, &mut params, seed)?;
        Ok(Self { net, params })
    }

    /// Rebuilds the layer layout for `spec` and installs `params`, checking names and shapes.
    pub fn from_params(spec: UNetSpec, params: ParamStore) -> Result<Self> {
        let mut p = Self::build(spec, 0)?;
        if p.params.len() != params.len() {
            return Err(Error::integrity("weights", format!("{} arrays, expected {}", params.len(), p.params.len())));
        }
        for id in p.params.ids() {
            let name = p.params.name(id).to_string();
            let Some(src) = params.find(&name) else {
                return Err(Error::integrity(format!("weights.{name}"), "missing"));
            };
            if params.shape(src) != p.params.shape(id) {
                return Err(Error::integrity(format!("weights.{name}"), "shape mismatch"));
            }
            p.params.values_mut(id).copy_from_slice(params.values(src));
        }
        Ok(p)
    }

    pub fn spec(&self) -> &UNetSpec {
        self.net.spec()
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn weight_hash(&self) -> String {
        self.params.hash()
    }

    /// `I'` for an image batch `x` in `[0, 1]` (a constant on the tape).
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: &Tensor<T>) -> Var {
        let input = g.constant(x.clone());
        let lo = T::of(LOGIT_MARGIN);
        let hi = T::of(1.0 - LOGIT_MARGIN);
        let logits = Tensor::new(
            x.shape,
            x.data
                .iter()
                .map(|&v| {
                    let c = v.max(lo).min(hi);
                    (c / (T::one() - c)).ln()
                })
                .collect(),
        );
        let base = g.constant(logits);
        let residual = self.net.forward(g, p, input);
        let z = g.add(base, residual);
        g.sigmoid(z)
    }

    /// Protects a batch of images without recording gradients.
    pub fn protect_batch(&self, images: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        let Some(first) = images.first() else {
            return Ok(Vec::new());
        };
        for img in images {
            first.same_shape(img)?;
        }
        self.spec().check_input(first.height(), first.width())?;
        let x = Tensor::stack(&images.iter().map(|i| i.to_tensor::<f32>()).collect::<Vec<_>>());
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, &x);
        let t = g.value(out);
        (0..images.len()).map(|i| ImageTensor::from_tensor(t, i)).collect()
    }

    /// `protect`: the protected twin of one image.
    pub fn protect(&self, img: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.protect_batch(std::slice::from_ref(img))?.remove(0))
    }

    /// Protects `images` in chunks of `batch`.
    pub fn protect_all(&self, images: &[ImageTensor], batch: usize) -> Result<Vec<ImageTensor>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            out.extend(self.protect_batch(chunk)?);
        }
        Ok(out)
    }
}

/// Per-epoch means of each loss term.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub reconstruction: Vec<f64>,
    pub content: Vec<f64>,
    pub style: Vec<f64>,
    pub noise: Vec<f64>,
    pub budget: Vec<f64>,
    pub total: Vec<f64>,
}

/// A protector plus everything needed to use and audit it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub protector: Protector,
    pub level: u32,
    pub oracle_hash: String,
    pub epoch: usize,
    pub config: serde_json::Value,
    pub history: LossHistory,
}

/// Non-fatal findings while loading a checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub warnings: Vec<String>,
}

pub const CHECKPOINT_KIND: &str = "protector";

impl Checkpoint {
    pub fn weight_hash(&self) -> String {
        self.protector.weight_hash()
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "kind": CHECKPOINT_KIND,
            "spec": self.protector.spec(),
            "level": self.level,
            "oracle_hash": self.oracle_hash,
            "epoch": self.epoch,
            "config": self.config,
            "loss_history": self.history,
            "weight_hash": self.weight_hash(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(&self.metadata(), self.protector.params())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write(path, &self.metadata(), self.protector.params())
    }

    /// Decodes a checkpoint. A differing `expected_oracle` only produces a warning.
    pub fn from_bytes(bytes: &[u8], expected_oracle: Option<&str>) -> Result<(Self, LoadReport)> {
        let c = checkpoint::from_bytes(bytes)?;
        let meta = &c.metadata;
        let field = |name: &str| {
            meta.get(name)
                .cloned()
                .ok_or_else(|| Error::integrity(name, "missing from metadata"))
        };
        let kind = field("kind")?;
        if kind != json!(CHECKPOINT_KIND) {
            return Err(Error::integrity("kind", format!("expected `{CHECKPOINT_KIND}`, found {kind}")));
        }
        let parse = |name: &str| -> Result<serde_json::Value> { field(name) };
        let spec: UNetSpec = serde_json::from_value(parse("spec")?).map_err(|e| Error::integrity("spec", e.to_string()))?;
        let level = parse("level")?
            .as_u64()
            .ok_or_else(|| Error::integrity("level", "not an integer"))? as u32;
        let oracle_hash = parse("oracle_hash")?
            .as_str()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::integrity("oracle_hash", "missing or empty"))?
            .to_string();
        let epoch = parse("epoch")?
            .as_u64()
            .ok_or_else(|| Error::integrity("epoch", "not an integer"))? as usize;
        let history: LossHistory = serde_json::from_value(parse("loss_history")?)
            .map_err(|e| Error::integrity("loss_history", e.to_string()))?;
        let protector = Protector::from_params(spec, c.arrays)?;
        if let Some(recorded) = meta.get("weight_hash").and_then(|v| v.as_str()) {
            if recorded != protector.weight_hash() {
                return Err(Error::integrity("weight_hash", "recorded hash does not match weights"));
            }
        }
        let mut report = LoadReport::default();
        if let Some(expected) = expected_oracle {
            if expected != oracle_hash {
                report.warnings.push(format!(
                    "checkpoint was trained against oracle {oracle_hash}, current oracle is {expected}"
                ));
            }
        }
        Ok((
            Self {
                protector,
                level,
                oracle_hash,
                epoch,
                config: meta.get("config").cloned().unwrap_or(serde_json::Value::Null),
                history,
            },
            report,
        ))
    }

    pub fn load(path: impl AsRef<Path>, expected_oracle: Option<&str>) -> Result<(Self, LoadReport)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_oracle)
    }
}

/// Shape of a tensor produced for `n` images of `size × size`.
pub fn batch_shape(n: usize, size: usize) -> Shape {
    Shape::new(n, 3, size, size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::synth;
    use proptest::prelude::*;

    #[test]
    fn depth_three_has_three_skips_and_preserves_shape() {
        let p = Protector::build(UNetSpec::default(), 1).unwrap();
        assert_eq!(p.net().skip_count(), 3);
        let img = synth::image(1, 0, 64);
        let out = p.protect(&img).unwrap();
        assert_eq!(out.dims(), (64, 64, 3));
    }

    #[test]
    fn parameter_count_closed_form() {
        let p = Protector::build(UNetSpec::default(), 1).unwrap();
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let block = |cin: usize, cout: usize| conv(cin, cout, 3) + conv(cout, cout, 3);
        let want = block(3, 16) + block(16, 32) + block(32, 64) // encoder
            + block(64, 128) // bottleneck
            + block(128 + 64, 64) + block(64 + 32, 32) + block(32 + 16, 16) // decoder
            + conv(16, 3, 1);
        assert_eq!(want, 487_331);
        assert_eq!(p.params().count(), want);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = Protector::build(UNetSpec::default(), 9).unwrap();
        let b = Protector::build(UNetSpec::default(), 9).unwrap();
        let c = Protector::build(UNetSpec::default(), 10).unwrap();
        assert_eq!(a.weight_hash(), b.weight_hash());
        assert_ne!(a.weight_hash(), c.weight_hash());
    }

    #[test]
    fn spec_errors() {
        let spec = UNetSpec {
            depth: 1,
            ..UNetSpec::default()
        };
        assert!(matches!(Protector::build(spec, 0), Err(Error::Spec(_))));
        let p = Protector::build(UNetSpec::default(), 0).unwrap();
        let img = synth::image(1, 0, 12);
        assert!(matches!(p.protect(&img), Err(Error::Spec(_))));
        let a = synth::image(1, 0, 16);
        let b = synth::image(1, 0, 24);
        assert!(matches!(p.protect_batch(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_oracle_warning() {
        let ck = Checkpoint {
            protector: Protector::build(UNetSpec::default(), 3).unwrap(),
            level: 50,
            oracle_hash: "abc".into(),
            epoch: 5,
            config: json!({"lr": 0.001}),
            history: LossHistory {
                total: vec![1.0, 0.5],
                ..Default::default()
            },
        };
        let bytes = ck.to_bytes();
        let (back, report) = Checkpoint::from_bytes(&bytes, Some("abc")).unwrap();
        assert_eq!(back.weight_hash(), ck.weight_hash());
        assert_eq!(back.history, ck.history);
        assert_eq!((back.level, back.epoch), (50, 5));
        assert!(report.warnings.is_empty());
        let (_, report) = Checkpoint::from_bytes(&bytes, Some("def")).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 7], None),
            Err(Error::Integrity { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn output_stays_in_unit_range(seed in 0u64..1000, img_seed in 0u64..1000) {
            let p = Protector::build(UNetSpec { depth: 2, base_channels: 4, ..UNetSpec::default() }, seed).unwrap();
            let img = synth::image(img_seed, 0, 16);
            let out = p.protect(&img).unwrap();
            prop_assert_eq!(out.dims(), img.dims());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v) && v.is_finite()));
        }
    }
}
