//! The frozen diffusion oracle `M`: a small noise-predicting UNet with a
//! variance-preserving schedule, driven by a deterministic DDIM sampler.
//!
//! `strength` in `0..=10` selects how far along the schedule the guide image is
//! noised before denoising back: `t_start = round(strength/10 · T)`. The sampler
//! then takes `max(1, floor(steps · strength/10))` uniformly spaced DDIM steps
//! down to `t = 0`. Strength 0 returns the input untouched.

use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imagecore::{Dataset, ImageTensor, MaskSpec};
use crate::nn::{normal_vec, rng, Adam, Bound, ParamStore};
use crate::protector::{Activation, Squashing, UNet, UNetSpec};
use crate::tensor::{Real, Shape, Tensor};

/// Discretization points of the forward noising process.
pub const TIMESTEPS: usize = 100;
pub const MAX_STRENGTH: u8 = 10;
pub const MAX_STEPS: usize = 50;
pub const MIN_PRETRAIN_CORPUS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Reconstruct,
    Inpaint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    #[default]
    Cosine,
    Linear,
}

impl NoiseSchedule {
    /// `ᾱ_t` for `t = 0..=T` (`ᾱ_0 = 1`).
    pub fn alpha_bar(&self) -> Vec<f64> {
        let t = TIMESTEPS as f64;
        let betas: Vec<f64> = match self {
            NoiseSchedule::Cosine => {
                let s = 0.008;
                let f = |i: f64| ((i / t + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=TIMESTEPS)
                    .map(|i| (1.0 - f(i as f64) / f(i as f64 - 1.0)).min(0.999))
                    .collect()
            }
            NoiseSchedule::Linear => {
                let (lo, hi) = (0.1 / t, 20.0 / t);
                (0..TIMESTEPS)
                    .map(|i| lo + (hi - lo) * i as f64 / (TIMESTEPS - 1) as f64)
                    .collect()
            }
        };
        let mut ab = Vec::with_capacity(TIMESTEPS + 1);
        ab.push(1.0);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            ab.push(acc);
        }
        ab
    }
}

/// Invocation parameters of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// `0..=10`; larger means less adherence to the guide image.
    pub strength: u8,
    pub steps: usize,
    pub mode: OracleMode,
    pub seed: u64,
    pub noise_schedule: NoiseSchedule,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            strength: 5,
            steps: 5,
            mode: OracleMode::Reconstruct,
            seed: 0,
            noise_schedule: NoiseSchedule::Cosine,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strength > MAX_STRENGTH {
            return Err(Error::Config(format!("strength {} outside [0, {MAX_STRENGTH}]", self.strength)));
        }
        if !(1..=MAX_STEPS).contains(&self.steps) {
            return Err(Error::Config(format!("steps {} outside [1, {MAX_STEPS}]", self.steps)));
        }
        Ok(())
    }

    pub fn with_strength(mut self, strength: u8) -> Self {
        self.strength = strength;
        self
    }

    pub fn with_mode(mut self, mode: OracleMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Timestep sequence from `t_start` down to 0; empty at strength 0.
    pub fn timesteps(&self) -> Vec<usize> {
        if self.strength == 0 {
            return Vec::new();
        }
        let frac = self.strength as f64 / MAX_STRENGTH as f64;
        let start = ((frac * TIMESTEPS as f64).round() as usize).clamp(1, TIMESTEPS);
        let n = ((self.steps as f64 * frac).floor() as usize).max(1);
        (0..=n)
            .map(|i| ((start * (n - i)) as f64 / n as f64).round() as usize)
            .collect()
    }
}

/// Architecture of the oracle's noise predictor.
pub fn default_denoiser_spec() -> UNetSpec {
    UNetSpec {
        depth: 2,
        base_channels: 16,
        activation: Activation::Silu,
        squashing: Squashing::None,
    }
}

/// Frozen oracle weights. Immutable once built; there is no `&mut` accessor.
#[derive(Debug, Clone)]
pub struct OracleWeights {
    net: UNet,
    params: ParamStore,
    resolution: usize,
    corpus_fingerprint: String,
    schedule: NoiseSchedule,
    hash: String,
}

pub const ORACLE_KIND: &str = "diffusion-oracle";

impl OracleWeights {
    /// Untrained, seeded weights. Useful for gradient checks; not a usable oracle.
    pub fn init(spec: UNetSpec, resolution: usize, seed: u64) -> Result<Self> {
        spec.check_input(resolution, resolution)?;
        let mut params = ParamStore::new();
        let net = UNet::build(spec, 4, 3, 1.0, &mut params, seed)?;
        Ok(Self::freeze(net, params, resolution, String::new(), NoiseSchedule::Cosine))
    }

    fn freeze(net: UNet, params: ParamStore, resolution: usize, fingerprint: String, schedule: NoiseSchedule) -> Self {
        let hash = params.hash();
        Self {
            net,
            params,
            resolution,
            corpus_fingerprint: fingerprint,
            schedule,
            hash,
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Recomputes the weight hash (for frozen-ness audits).
    pub fn recompute_hash(&self) -> String {
        self.params.hash()
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn spec(&self) -> &UNetSpec {
        self.net.spec()
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "kind": ORACLE_KIND,
            "spec": self.net.spec(),
            "resolution": self.resolution,
            "corpus_fingerprint": self.corpus_fingerprint,
            "schedule": self.schedule,
            "weight_hash": self.hash,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(&self.metadata(), &self.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write(path, &self.metadata(), &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = checkpoint::from_bytes(bytes)?;
        let m = &c.metadata;
        if m.get("kind") != Some(&json!(ORACLE_KIND)) {
            return Err(Error::integrity("kind", format!("expected `{ORACLE_KIND}`")));
        }
        let get = |k: &str| m.get(k).cloned().ok_or_else(|| Error::integrity(k, "missing from metadata"));
        let spec: UNetSpec = serde_json::from_value(get("spec")?).map_err(|e| Error::integrity("spec", e.to_string()))?;
        let resolution = get("resolution")?
            .as_u64()
            .ok_or_else(|| Error::integrity("resolution", "not an integer"))? as usize;
        let schedule: NoiseSchedule =
            serde_json::from_value(get("schedule")?).map_err(|e| Error::integrity("schedule", e.to_string()))?;
        let fingerprint = get("corpus_fingerprint")?.as_str().unwrap_or_default().to_string();
        let recorded = get("weight_hash")?.as_str().unwrap_or_default().to_string();
        let mut params = ParamStore::new();
        let net = UNet::build(spec, 4, 3, 1.0, &mut params, 0)?;
        if params.len() != c.arrays.len() {
            return Err(Error::integrity("weights", "array count does not match the declared spec"));
        }
        for id in params.ids().collect::<Vec<_>>() {
            let name = params.name(id).to_string();
            let src = c
                .arrays
                .find(&name)
                .ok_or_else(|| Error::integrity(format!("weights.{name}"), "missing"))?;
            if c.arrays.shape(src) != params.shape(id) {
                return Err(Error::integrity(format!("weights.{name}"), "shape mismatch"));
            }
            params.values_mut(id).copy_from_slice(c.arrays.values(src));
        }
        let w = Self::freeze(net, params, resolution, fingerprint, schedule);
        if w.hash != recorded {
            return Err(Error::integrity("weight_hash", "weights do not match the recorded hash"));
        }
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn bind<'a, T: Real>(&'a self, g: &mut Graph<T>) -> BoundOracle<'a> {
        BoundOracle {
            oracle: self,
            bound: self.params.bind(g, false),
            alpha_bar: self.schedule.alpha_bar(),
        }
    }

    fn check_image(&self, img: &ImageTensor) -> Result<()> {
        if img.height() != self.resolution || img.width() != self.resolution {
            return Err(Error::Shape(format!(
                "oracle runs at {0}x{0}, got {1}x{2}",
                self.resolution,
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// `diffuse`: img2img reconstruction.
    pub fn diffuse(&self, img: &ImageTensor, config: &OracleConfig) -> Result<ImageTensor> {
        Ok(self.diffuse_batch(std::slice::from_ref(img), config, &[config.seed])?.remove(0))
    }

    /// Batched [`OracleWeights::diffuse`]; `seeds[i]` drives image `i`'s noise.
    pub fn diffuse_batch(&self, images: &[ImageTensor], config: &OracleConfig, seeds: &[u64]) -> Result<Vec<ImageTensor>> {
        config.validate()?;
        if config.mode != OracleMode::Reconstruct {
            return Err(Error::Config("diffuse requires mode = reconstruct".into()));
        }
        self.run(images, config, seeds, None)
    }

    /// `inpaint`: regenerates the masked rectangle; pixels outside it are copied from `img`.
    pub fn inpaint(&self, img: &ImageTensor, mask: &MaskSpec, config: &OracleConfig) -> Result<ImageTensor> {
        Ok(self.inpaint_batch(std::slice::from_ref(img), mask, config, &[config.seed])?.remove(0))
    }

    pub fn inpaint_batch(
        &self,
        images: &[ImageTensor],
        mask: &MaskSpec,
        config: &OracleConfig,
        seeds: &[u64],
    ) -> Result<Vec<ImageTensor>> {
        config.validate()?;
        if config.mode != OracleMode::Inpaint {
            return Err(Error::Config("inpaint requires mode = inpaint".into()));
        }
        if let Some(first) = images.first() {
            mask.check_bounds(first.height(), first.width())?;
        }
        self.run(images, config, seeds, Some(mask))
    }

    /// Dispatches on `config.mode`.
    pub fn apply_batch(
        &self,
        images: &[ImageTensor],
        config: &OracleConfig,
        seeds: &[u64],
        mask: Option<&MaskSpec>,
    ) -> Result<Vec<ImageTensor>> {
        match config.mode {
            OracleMode::Reconstruct => self.diffuse_batch(images, config, seeds),
            OracleMode::Inpaint => {
                let mask = mask.ok_or_else(|| Error::Config("inpaint mode needs a mask".into()))?;
                self.inpaint_batch(images, mask, config, seeds)
            }
        }
    }

    fn run(
        &self,
        images: &[ImageTensor],
        config: &OracleConfig,
        seeds: &[u64],
        mask: Option<&MaskSpec>,
    ) -> Result<Vec<ImageTensor>> {
        if images.len() != seeds.len() {
            return Err(Error::Config("one seed per image".into()));
        }
        for img in images {
            self.check_image(img)?;
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        if config.strength == 0 || mask.is_some_and(|m| m.area() == 0) {
            return Ok(images.to_vec());
        }
        let x = Tensor::stack(&images.iter().map(|i| i.to_tensor::<f32>()).collect::<Vec<_>>());
        let mut g = Graph::<f32>::new();
        let bo = self.bind(&mut g);
        let xv = g.constant(x);
        let out = bo.sample(&mut g, xv, config, seeds, mask);
        let t = g.value(out);
        (0..images.len()).map(|i| ImageTensor::from_tensor(t, i)).collect()
    }
}

/// Oracle weights placed (frozen) on a graph; gradients flow to the guide image only.
pub struct BoundOracle<'a> {
    oracle: &'a OracleWeights,
    bound: Bound,
    alpha_bar: Vec<f64>,
}

/// Standard-normal noise `[1, 3, h, w]` for one seed.
fn noise_for<T: Real>(seed: u64, h: usize, w: usize) -> Vec<T> {
    normal_vec(&mut rng(seed, 0xd1ff), 3 * h * w)
        .into_iter()
        .map(|v| T::of(v as f64))
        .collect()
}

impl BoundOracle<'_> {
    fn predict_noise<T: Real>(&self, g: &mut Graph<T>, x: Var, t: usize) -> Var {
        let s = g.shape(x);
        let plane = g.constant(Tensor::full(
            Shape::new(s.n, 1, s.h, s.w),
            T::of(t as f64 / TIMESTEPS as f64),
        ));
        let input = g.concat(x, plane);
        self.oracle.net.forward(g, &self.bound, input)
    }

    /// Differentiable sampler. `x` is an image batch in `[0, 1]`; output likewise.
    ///
    /// With `mask`, pixels outside the rectangle are re-imposed from `x` after every
    /// step and copied exactly into the output.
    pub fn sample<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        config: &OracleConfig,
        seeds: &[u64],
        mask: Option<&MaskSpec>,
    ) -> Var {
        let steps = config.timesteps();
        if steps.is_empty() {
            return x;
        }
        let s = g.shape(x);
        assert_eq!(seeds.len(), s.n, "one seed per sample");
        let mut noise = Vec::with_capacity(s.numel());
        for &seed in seeds {
            noise.extend(noise_for::<T>(seed, s.h, s.w));
        }
        let eps0 = g.constant(Tensor::new(s, noise));
        let x0 = {
            let y = g.scale(x, 2.0);
            g.add_scalar(y, -1.0)
        };
        let masks = mask.map(|m| {
            let one: Tensor<T> = m.to_tensor(s.h, s.w);
            let mut inside = Vec::with_capacity(s.numel());
            for _ in 0..s.n * s.c {
                inside.extend_from_slice(&one.data);
            }
            let outside: Vec<T> = inside.iter().map(|&v| T::one() - v).collect();
            (g.constant(Tensor::new(s, inside)), g.constant(Tensor::new(s, outside)))
        });
        let ab = &self.alpha_bar;
        let noised = |g: &mut Graph<T>, t: usize| {
            let a = g.scale(x0, ab[t].sqrt());
            let b = g.scale(eps0, (1.0 - ab[t]).sqrt());
            g.add(a, b)
        };
        let mut xt = noised(g, steps[0]);
        for pair in steps.windows(2) {
            let (t, next) = (pair[0], pair[1]);
            let eps = self.predict_noise(g, xt, t);
            let scaled = g.scale(eps, (1.0 - ab[t]).sqrt());
            let diff = g.sub(xt, scaled);
            let pred = g.scale(diff, 1.0 / ab[t].sqrt());
            let pred = g.clamp(pred, -1.0, 1.0);
            xt = if next == 0 {
                pred
            } else {
                let a = g.scale(pred, ab[next].sqrt());
                let b = g.scale(eps, (1.0 - ab[next]).sqrt());
                g.add(a, b)
            };
            if let (Some((inside, outside)), true) = (masks, next > 0) {
                let known = noised(g, next);
                let keep = g.mul(known, outside);
                let gen = g.mul(xt, inside);
                xt = g.add(keep, gen);
            }
        }
        let y = g.add_scalar(xt, 1.0);
        let y = g.scale(y, 0.5);
        let y = g.clamp(y, 0.0, 1.0);
        match masks {
            Some((inside, outside)) => {
                let keep = g.mul(x, outside);
                let gen = g.mul(y, inside);
                g.add(keep, gen)
            }
            None => y,
        }
    }
}

/// Options for [`pretrain_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

/// Hash of corpus pixels (in order), used to tie an oracle to what it saw.
pub fn corpus_fingerprint(images: &[ImageTensor]) -> String {
    let mut h = Sha256::new();
    for img in images {
        for v in img.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// `pretrain_oracle`: trains the noise predictor with the standard ε-prediction objective.
///
/// `progress` receives `(epoch, mean loss)` after every epoch.
pub fn pretrain_oracle(
    corpus: &Dataset,
    spec: UNetSpec,
    config: &PretrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<OracleWeights> {
    if config.epochs == 0 {
        return Err(Error::Config("oracle pretraining needs at least one epoch".into()));
    }
    if corpus.len() < MIN_PRETRAIN_CORPUS {
        return Err(Error::Config(format!(
            "oracle corpus has {} images, need at least {MIN_PRETRAIN_CORPUS}",
            corpus.len()
        )));
    }
    let res = corpus.resolution().expect("non-empty corpus");
    if corpus.images.iter().any(|i| i.height() != res || i.width() != res) {
        return Err(Error::Shape("oracle corpus must share one square resolution".into()));
    }
    spec.check_input(res, res)?;
    let schedule = NoiseSchedule::Cosine;
    let ab = schedule.alpha_bar();
    let mut params = ParamStore::new();
    let net = UNet::build(spec, 4, 3, 1.0, &mut params, config.seed)?;
    let mut opt = Adam::new(&params, config.learning_rate);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut r = rng(config.seed, 0x0dd);
    let plane = res * res;
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let n = chunk.len();
            let shape = Shape::new(n, 3, res, res);
            let mut xt = Vec::with_capacity(shape.numel());
            let mut tplane = Vec::with_capacity(n * plane);
            let eps = normal_vec(&mut r, shape.numel());
            for (k, &i) in chunk.iter().enumerate() {
                let t = rand::Rng::gen_range(&mut r, 1..=TIMESTEPS);
                let (a, b) = (ab[t].sqrt() as f32, (1.0 - ab[t]).sqrt() as f32);
                let x0 = corpus.images[i].to_tensor::<f32>();
                let e = &eps[k * 3 * plane..(k + 1) * 3 * plane];
                xt.extend(x0.data.iter().zip(e).map(|(&x, &e)| a * (2.0 * x - 1.0) + b * e));
                tplane.extend(std::iter::repeat(t as f32 / TIMESTEPS as f32).take(plane));
            }
            let mut g = Graph::<f32>::new();
            let p = params.bind(&mut g, true);
            let xv = g.constant(Tensor::new(shape, xt));
            let tv = g.constant(Tensor::new(Shape::new(n, 1, res, res), tplane));
            let input = g.concat(xv, tv);
            let pred = net.forward(&mut g, &p, input);
            let target = g.constant(Tensor::new(shape, eps));
            let d = g.sub(pred, target);
            let sq = g.square(d);
            let loss = g.mean_all(sq);
            let lv = g.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    term: "oracle_denoising".into(),
                    step: opt.steps(),
                });
            }
            let mut grads = g.backward(loss);
            let grads = p.grads(&params, &mut grads);
            opt.step(&mut params, &grads);
            sum += lv;
            batches += 1;
        }
        let mean = sum / batches as f64;
        tracing::info!(epoch, loss = mean, "oracle pretraining");
        progress(epoch, mean);
    }
    Ok(OracleWeights::freeze(
        net,
        params,
        res,
        corpus_fingerprint(&corpus.images),
        schedule,
    ))
}

pub mod remote {
    //! Client for a hosted img2img service. Evaluation only; never differentiable.
    //!
    //! Request: `POST <endpoint>` with JSON
    //! `{"image": <base64 PNG>, "strength", "steps", "seed", "mode"}` and, when
    //! `MAMC_ORACLE_KEY` is set, `Authorization: Bearer <key>`.
    //! Response: PNG (or JPEG) bytes.

    use std::sync::{Condvar, Mutex};

    use base64::Engine;

    use super::*;

    pub const URL_ENV: &str = "MAMC_ORACLE_URL";
    pub const KEY_ENV: &str = "MAMC_ORACLE_KEY";

    #[derive(Debug, Clone, Copy)]
    pub struct RetryPolicy {
        /// Retries after the first attempt.
        pub retries: u32,
        pub base_delay: Duration,
        pub timeout: Duration,
    }

    impl Default for RetryPolicy {
        fn default() -> Self {
            Self {
                retries: 3,
                base_delay: Duration::from_millis(200),
                timeout: Duration::from_secs(60),
            }
        }
    }

    /// JSON body sent to the service.
    pub fn request_body(img: &ImageTensor, config: &OracleConfig) -> serde_json::Value {
        json!({
            "image": base64::engine::general_purpose::STANDARD.encode(img.to_png_bytes()),
            "strength": config.strength,
            "steps": config.steps,
            "seed": config.seed,
            "mode": config.mode,
        })
    }

    /// Bounded-concurrency client.
    pub struct RemoteOracle {
        endpoint: String,
        key: Option<String>,
        policy: RetryPolicy,
        resolution: usize,
        client: reqwest::blocking::Client,
        in_flight: Mutex<usize>,
        slot_free: Condvar,
        cap: usize,
    }

    impl RemoteOracle {
        pub fn new(endpoint: impl Into<String>, key: Option<String>, resolution: usize, cap: usize, policy: RetryPolicy) -> Result<Self> {
            let client = reqwest::blocking::Client::builder()
                .timeout(policy.timeout)
                .build()
                .map_err(|e| Error::Transport {
                    attempts: 0,
                    reason: e.to_string(),
                })?;
            Ok(Self {
                endpoint: endpoint.into(),
                key,
                policy,
                resolution,
                client,
                in_flight: Mutex::new(0),
                slot_free: Condvar::new(),
                cap: cap.max(1),
            })
        }

        /// Reads `MAMC_ORACLE_URL` / `MAMC_ORACLE_KEY`; in-flight cap 4.
        pub fn from_env(resolution: usize) -> Result<Self> {
            let url = std::env::var(URL_ENV).map_err(|_| Error::Config(format!("{URL_ENV} is not set")))?;
            Self::new(url, std::env::var(KEY_ENV).ok(), resolution, 4, RetryPolicy::default())
        }

        pub fn diffuse(&self, img: &ImageTensor, config: &OracleConfig) -> Result<ImageTensor> {
            config.validate()?;
            {
                let mut n = self.in_flight.lock().expect("poisoned");
                while *n >= self.cap {
                    n = self.slot_free.wait(n).expect("poisoned");
                }
                *n += 1;
            }
            let out = self.attempt_all(img, config);
            *self.in_flight.lock().expect("poisoned") -= 1;
            self.slot_free.notify_one();
            out
        }

        fn attempt_all(&self, img: &ImageTensor, config: &OracleConfig) -> Result<ImageTensor> {
            let body = request_body(img, config);
            let mut last = String::new();
            let attempts = self.policy.retries + 1;
            for attempt in 0..attempts {
                if attempt > 0 {
                    std::thread::sleep(self.policy.base_delay * 2u32.pow(attempt - 1));
                }
                let mut req = self.client.post(&self.endpoint).json(&body);
                if let Some(key) = &self.key {
                    req = req.bearer_auth(key);
                }
                match req.send() {
                    Ok(resp) if resp.status().is_server_error() => {
                        last = format!("server returned {}", resp.status());
                    }
                    Ok(resp) if !resp.status().is_success() => {
                        return Err(Error::Protocol(format!("service returned {}", resp.status())));
                    }
                    Ok(resp) => {
                        let bytes = resp.bytes().map_err(|e| Error::Transport {
                            attempts: attempt + 1,
                            reason: e.to_string(),
                        })?;
                        return ImageTensor::from_encoded(&bytes, self.resolution)
                            .map_err(|e| Error::Protocol(format!("response is not an image: {e}")));
                    }
                    Err(e) => last = e.to_string(),
                }
                tracing::warn!(attempt = attempt + 1, reason = %last, "remote oracle attempt failed");
            }
            Err(Error::Transport { attempts, reason: last })
        }
    }

    /// `remote_diffuse` with an explicit endpoint.
    pub fn remote_diffuse(img: &ImageTensor, endpoint: &str, config: &OracleConfig) -> Result<ImageTensor> {
        RemoteOracle::new(endpoint, std::env::var(KEY_ENV).ok(), img.height(), 4, RetryPolicy::default())?
            .diffuse(img, config)
    }
}
