//! Polar codes: construction, encoding, BPSK over AWGN, LLR-domain
//! successive-cancellation decoding, and a one-shot neural decoder.
//!
//! Index convention: natural order, no bit reversal. The codeword is
//! `x = u·F^{⊗n}` with `F = [[1,0],[1,1]]` over GF(2), so for `N = 2`,
//! `x = (u₀ ⊕ u₁, u₁)`. Bit `i` of the input vector sees the synthetic channel
//! selected by the binary digits of `i`, most significant digit first
//! (0 = degraded, 1 = upgraded).

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActivationMode, NetworkModel};
use crate::rng::{derive_seed, rng_from_seed, substream, StreamRng};
use crate::training::Example;

/// Block length, message length and frozen mask of a polar code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarCodeSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub design_snr_db: f64,
    /// `true` marks a frozen (always zero) input position.
    #[serde(rename = "frozen_mask")]
    pub frozen: Vec<bool>,
}

impl PolarCodeSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() {
            return Err(Error::Domain(format!("block length {} is not a power of two", self.n)));
        }
        if self.frozen.len() != self.n {
            return Err(Error::Shape(format!(
                "frozen mask has {} entries for N = {}",
                self.frozen.len(),
                self.n
            )));
        }
        let free = self.frozen.iter().filter(|&&f| !f).count();
        if free != self.k {
            return Err(Error::Domain(format!("mask leaves {free} information bits, K = {}", self.k)));
        }
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// Non-frozen positions in ascending order.
    pub fn info_positions(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.frozen[i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Bhattacharyya parameter of each synthetic channel for a BEC surrogate with
/// `z₀ = exp(−10^(design_snr_db/10))`.
pub fn bhattacharyya_parameters(n: usize, design_snr_db: f64) -> Vec<f64> {
    let levels = n.trailing_zeros();
    let z0 = (-(10f64.powf(design_snr_db / 10.0))).exp();
    (0..n)
        .map(|i| (0..levels).rev().fold(z0, |z, bit| if i >> bit & 1 == 1 { z * z } else { 2.0 * z - z * z }))
        .collect()
}

/// Freezes the `N − K` least reliable positions (largest Bhattacharyya
/// parameter); ties freeze the lower index first.
pub fn construct_frozen_set(n: usize, k: usize, design_snr_db: f64) -> Result<PolarCodeSpec> {
    if !n.is_power_of_two() {
        return Err(Error::Domain(format!("block length {n} is not a power of two")));
    }
    if k > n {
        return Err(Error::Domain(format!("K = {k} exceeds N = {n}")));
    }
    let z = bhattacharyya_parameters(n, design_snr_db);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut frozen = vec![false; n];
    for &i in &order[..n - k] {
        frozen[i] = true;
    }
    Ok(PolarCodeSpec { n, k, design_snr_db, frozen })
}

/// In-place `v ← v·F^{⊗n}` over GF(2). The transform is its own inverse.
pub fn polar_transform(v: &mut [u8]) {
    let n = v.len();
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                v[j] ^= v[j + half];
            }
        }
        half *= 2;
    }
}

/// Places `message` on the information positions and applies the transform.
pub fn encode(message: &[u8], spec: &PolarCodeSpec) -> Result<Vec<u8>> {
    if message.len() != spec.k {
        return Err(Error::Shape(format!("message has {} bits, K = {}", message.len(), spec.k)));
    }
    let mut u = vec![0u8; spec.n];
    for (&pos, &bit) in spec.info_positions().iter().zip(message) {
        u[pos] = bit & 1;
    }
    polar_transform(&mut u);
    Ok(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelOutput {
    /// `log P(y|0)/P(y|1)`; positive favors bit 0.
    pub llrs: Vec<f64>,
    pub snr_db: f64,
}

/// Noise variance for Eb/N0 = `snr_db` at code rate `rate`.
pub fn noise_variance(snr_db: f64, rate: f64) -> f64 {
    1.0 / (2.0 * rate * 10f64.powf(snr_db / 10.0))
}

fn bpsk_awgn_with(codeword: &[u8], snr_db: f64, rate: f64, rng: &mut StreamRng) -> ChannelOutput {
    let var = noise_variance(snr_db, rate);
    let sigma = var.sqrt();
    let llrs = codeword
        .iter()
        .map(|&b| {
            let s = 1.0 - 2.0 * f64::from(b);
            let noise: f64 = rng.sample(StandardNormal);
            2.0 * (s + sigma * noise) / var
        })
        .collect();
    ChannelOutput { llrs, snr_db }
}

/// BPSK (`0 → +1`, `1 → −1`) over AWGN with `σ² = 1/(2·R·10^(snr/10))`.
pub fn bpsk_awgn(codeword: &[u8], snr_db: f64, rate: f64, seed: u64) -> ChannelOutput {
    bpsk_awgn_with(codeword, snr_db, rate, &mut rng_from_seed(seed))
}

/// Check-node combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckNodeRule {
    /// `2·atanh(tanh(a/2)·tanh(b/2))`.
    #[default]
    Exact,
    /// `sign(a)·sign(b)·min(|a|, |b|)`.
    MinSum,
}

/// Exact check-node update in log form:
/// `sign(a)sign(b)min(|a|,|b|) + ln(1+e^{−|a+b|}) − ln(1+e^{−|a−b|})`.
#[inline]
pub fn check_node(a: f64, b: f64) -> f64 {
    min_sum(a, b) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p()
}

#[inline]
fn min_sum(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if (a < 0.0) != (b < 0.0) {
        -m
    } else {
        m
    }
}

/// Variable-node update `b + (1 − 2û)·a`.
#[inline]
pub fn variable_node(a: f64, b: f64, u: u8) -> f64 {
    if u == 0 {
        b + a
    } else {
        b - a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub u_hat: Vec<u8>,
    pub message_hat: Vec<u8>,
    /// Errors against the transmitted message, when known.
    pub bit_errors: Option<usize>,
}

impl DecodeResult {
    fn from_u(u_hat: Vec<u8>, spec: &PolarCodeSpec) -> Self {
        let message_hat = spec.info_positions().iter().map(|&i| u_hat[i]).collect();
        Self { u_hat, message_hat, bit_errors: None }
    }

    pub fn with_truth(mut self, message: &[u8]) -> Self {
        self.bit_errors = Some(self.message_hat.iter().zip(message).filter(|(a, b)| a != b).count());
        self
    }
}

fn sc_node(llr: &[f64], frozen: &[bool], rule: CheckNodeRule, u_hat: &mut [u8], x: &mut [u8]) {
    let n = llr.len();
    if n == 1 {
        let bit = if frozen[0] || llr[0] >= 0.0 { 0 } else { 1 };
        u_hat[0] = bit;
        x[0] = bit;
        return;
    }
    let half = n / 2;
    let (l_lo, l_hi) = llr.split_at(half);
    let combine = match rule {
        CheckNodeRule::Exact => check_node,
        CheckNodeRule::MinSum => min_sum,
    };
    let upper: Vec<f64> = l_lo.iter().zip(l_hi).map(|(&a, &b)| combine(a, b)).collect();
    let (u_lo, u_hi) = u_hat.split_at_mut(half);
    let (x_lo, x_hi) = x.split_at_mut(half);
    sc_node(&upper, &frozen[..half], rule, u_lo, x_lo);
    let lower: Vec<f64> = (0..half).map(|i| variable_node(l_lo[i], l_hi[i], x_lo[i])).collect();
    sc_node(&lower, &frozen[half..], rule, u_hi, x_hi);
    for i in 0..half {
        x_lo[i] ^= x_hi[i];
    }
}

/// Successive-cancellation decoding with the exact check-node rule.
pub fn sc_decode(out: &ChannelOutput, spec: &PolarCodeSpec) -> Result<DecodeResult> {
    sc_decode_with(out, spec, CheckNodeRule::Exact)
}

pub fn sc_decode_with(
    out: &ChannelOutput,
    spec: &PolarCodeSpec,
    rule: CheckNodeRule,
) -> Result<DecodeResult> {
    if out.llrs.len() != spec.n {
        return Err(Error::Shape(format!("{} LLRs for N = {}", out.llrs.len(), spec.n)));
    }
    if let Some(i) = out.llrs.iter().position(|l| !l.is_finite()) {
        return Err(Error::Domain(format!("LLR {i} is not finite")));
    }
    let mut u_hat = vec![0u8; spec.n];
    let mut x = vec![0u8; spec.n];
    sc_node(&out.llrs, &spec.frozen, rule, &mut u_hat, &mut x);
    Ok(DecodeResult::from_u(u_hat, spec))
}

/// How the neural decoder evaluates its network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralDecodeOptions {
    /// Stochastic passes averaged per frame in stochastic-firing mode.
    pub window: usize,
    pub seed: u64,
}

impl Default for NeuralDecodeOptions {
    fn default() -> Self {
        Self { window: crate::network::DEFAULT_RATE_WINDOW, seed: 0 }
    }
}

/// Network input for a frame: `tanh(llr/2)` per position.
pub fn neural_input(llrs: &[f64]) -> Vec<f64> {
    llrs.iter().map(|l| (l / 2.0).tanh()).collect()
}

/// One-shot decode: `tanh(llr/2)` in, one output per message bit, an output
/// above 0.5 decodes as 1 (exactly 0.5 decodes as 0).
pub fn neural_sc_decode(
    out: &ChannelOutput,
    model: &NetworkModel,
    spec: &PolarCodeSpec,
    opts: &NeuralDecodeOptions,
) -> Result<DecodeResult> {
    if out.llrs.len() != spec.n || model.input_dim() != spec.n || model.output_dim() != spec.k {
        return Err(Error::Shape(format!(
            "decoder network is {:?}, code is ({}, {}) with {} LLRs",
            model.dims(),
            spec.n,
            spec.k,
            out.llrs.len()
        )));
    }
    let input = neural_input(&out.llrs);
    let scores = match model.activation {
        ActivationMode::DeterministicSigmoid => model.forward_with(&input, None)?,
        ActivationMode::StochasticFiring => model.forward_rate(&input, opts.window, opts.seed)?,
    };
    let mut u_hat = vec![0u8; spec.n];
    for (&pos, &s) in spec.info_positions().iter().zip(&scores) {
        u_hat[pos] = u8::from(s > 0.5);
    }
    Ok(DecodeResult::from_u(u_hat, spec))
}

fn random_message(k: usize, rng: &mut StreamRng) -> Vec<u8> {
    (0..k).map(|_| u8::from(rng.random::<bool>())).collect()
}

/// Labeled `(tanh(llr/2), message)` pairs; frame `f` uses SNR `snrs[f % len]`
/// and substream `f` of `seed`.
pub fn neural_training_set(
    spec: &PolarCodeSpec,
    snrs_db: &[f64],
    frames: usize,
    seed: u64,
) -> Result<Vec<Example>> {
    spec.validate()?;
    if snrs_db.is_empty() {
        return Err(Error::Domain("need at least one training SNR".into()));
    }
    (0..frames)
        .map(|f| {
            let mut rng = substream(seed, "training-frame", f as u64);
            let message = random_message(spec.k, &mut rng);
            let codeword = encode(&message, spec)?;
            let out = bpsk_awgn_with(&codeword, snrs_db[f % snrs_db.len()], spec.rate(), &mut rng);
            Ok(Example::new(neural_input(&out.llrs), message.iter().map(|&b| f64::from(b)).collect()))
        })
        .collect()
}

pub enum Decoder<'a> {
    Classical(CheckNodeRule),
    Neural(&'a NetworkModel, NeuralDecodeOptions),
}

impl Decoder<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Decoder::Classical(_) => "classical",
            Decoder::Neural(..) => "neural",
        }
    }

    fn decode(&self, out: &ChannelOutput, spec: &PolarCodeSpec, frame_seed: u64) -> Result<DecodeResult> {
        match self {
            Decoder::Classical(rule) => sc_decode_with(out, spec, *rule),
            Decoder::Neural(model, opts) => {
                let opts = NeuralDecodeOptions { seed: frame_seed, ..*opts };
                neural_sc_decode(out, model, spec, &opts)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub frame_errors: u64,
    pub ber: f64,
    pub fer: f64,
    /// Mean wall time per decode, µs; only filled when latency is measured.
    pub mean_decode_us: Option<f64>,
}

impl BerPoint {
    pub fn info_bits(&self, k: usize) -> u64 {
        self.frames * k as u64
    }
}

/// Writes the BER table. An unmeasured latency leaves its field empty.
pub fn write_ber_csv<W: Write>(rows: &[BerPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "snr_db,frames,bit_errors,frame_errors,ber,fer,mean_decode_us")?;
    for r in rows {
        let latency = r.mean_decode_us.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.snr_db, r.frames, r.bit_errors, r.frame_errors, r.ber, r.fer, latency
        )?;
    }
    Ok(())
}

struct FrameOutcome {
    bit_errors: u64,
    nanos: u128,
}

/// Monte Carlo BER/FER over `snr_list`, `min_frames` frames per point. Frame
/// `f` of point `p` draws its message and noise from its own substream, so
/// results do not depend on scheduling.
pub fn ber_experiment(
    spec: &PolarCodeSpec,
    decoder: &Decoder<'_>,
    snr_list: &[f64],
    min_frames: u64,
    seed: u64,
    measure_latency: bool,
) -> Result<Vec<BerPoint>> {
    spec.validate()?;
    if min_frames == 0 {
        return Err(Error::Domain("min_frames must be >= 1".into()));
    }
    snr_list
        .iter()
        .enumerate()
        .map(|(p, &snr_db)| {
            let point_seed = derive_seed(seed, "ber-point", p as u64);
            let outcomes: Vec<Result<FrameOutcome>> = (0..min_frames)
                .into_par_iter()
                .map(|f| {
                    let mut rng = substream(point_seed, "ber-frame", f);
                    let message = random_message(spec.k, &mut rng);
                    let codeword = encode(&message, spec)?;
                    let out = bpsk_awgn_with(&codeword, snr_db, spec.rate(), &mut rng);
                    let started = Instant::now();
                    let result = decoder.decode(&out, spec, derive_seed(point_seed, "neural-frame", f))?;
                    let nanos = started.elapsed().as_nanos();
                    let bit_errors = result.with_truth(&message).bit_errors.unwrap_or(0) as u64;
                    Ok(FrameOutcome { bit_errors, nanos })
                })
                .collect();
            let (mut bit_errors, mut frame_errors, mut nanos) = (0u64, 0u64, 0u128);
            for o in outcomes {
                let o = o?;
                bit_errors += o.bit_errors;
                frame_errors += u64::from(o.bit_errors > 0);
                nanos += o.nanos;
            }
            let info_bits = min_frames * spec.k as u64;
            Ok(BerPoint {
                snr_db,
                frames: min_frames,
                bit_errors,
                frame_errors,
                ber: if info_bits == 0 { 0.0 } else { bit_errors as f64 / info_bits as f64 },
                fer: frame_errors as f64 / min_frames as f64,
                mean_decode_us: measure_latency.then(|| nanos as f64 / 1e3 / min_frames as f64),
            })
        })
        .collect()
}

/// Quality summary of a trained neural decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralEvaluation {
    pub frames: u64,
    /// Per-bit error rate of deterministic inference on noiseless frames.
    pub noiseless_bit_error: f64,
    pub agreement_snr_db: f64,
    pub window: usize,
    /// Fraction of noisy frames where stochastic-firing inference (rate over
    /// `window` passes) returns the same message as deterministic inference.
    pub agreement: f64,
}

/// Evaluates `model` on `frames` random messages: noiseless accuracy, then
/// stochastic/deterministic agreement at `snr_db`.
pub fn evaluate_neural_decoder(
    model: &NetworkModel,
    spec: &PolarCodeSpec,
    frames: u64,
    snr_db: f64,
    window: usize,
    seed: u64,
) -> Result<NeuralEvaluation> {
    spec.validate()?;
    if frames == 0 || window == 0 {
        return Err(Error::Domain("evaluation needs frames >= 1 and window >= 1".into()));
    }
    let deterministic = model.clone().with_activation(ActivationMode::DeterministicSigmoid);
    let stochastic = model.clone().with_activation(ActivationMode::StochasticFiring);
    let det_opts = NeuralDecodeOptions { window, seed: 0 };
    let per_frame: Vec<Result<(usize, bool)>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            let mut rng = substream(seed, "eval-frame", f);
            let message = random_message(spec.k, &mut rng);
            let codeword = encode(&message, spec)?;
            let clean = ChannelOutput {
                llrs: codeword.iter().map(|&b| if b == 0 { 1e3 } else { -1e3 }).collect(),
                snr_db: f64::INFINITY,
            };
            let errors = neural_sc_decode(&clean, &deterministic, spec, &det_opts)?
                .with_truth(&message)
                .bit_errors
                .unwrap_or(0);
            let noisy = bpsk_awgn_with(&codeword, snr_db, spec.rate(), &mut rng);
            let d = neural_sc_decode(&noisy, &deterministic, spec, &det_opts)?;
            let s_opts = NeuralDecodeOptions { window, seed: derive_seed(seed, "eval-firing", f) };
            let s = neural_sc_decode(&noisy, &stochastic, spec, &s_opts)?;
            Ok((errors, d.message_hat == s.message_hat))
        })
        .collect();
    let (mut errors, mut agree) = (0usize, 0u64);
    for r in per_frame {
        let (e, a) = r?;
        errors += e;
        agree += u64::from(a);
    }
    let bits = frames as f64 * spec.k as f64;
    Ok(NeuralEvaluation {
        frames,
        noiseless_bit_error: if bits == 0.0 { 0.0 } else { errors as f64 / bits },
        agreement_snr_db: snr_db,
        window,
        agreement: agree as f64 / frames as f64,
    })
}

/// Uncoded BPSK bit error rate `Q(sqrt(2·Eb/N0))`.
pub fn uncoded_bpsk_ber(snr_db: f64) -> f64 {
    let ebn0 = 10f64.powf(snr_db / 10.0);
    0.5 * statrs::function::erf::erfc(ebn0.sqrt())
}
