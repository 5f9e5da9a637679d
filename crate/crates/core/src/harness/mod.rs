//! Reproducible experiment runs: config in, data files plus a manifest out.
//!
//! Every command derives all of its randomness from the master seed, writes
//! each output through a temp file and an atomic rename, and finishes with a
//! `manifest.json` that can be fed back as `--config` to repeat the run.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    ArithSection, BerSection, CodeSection, DecoderChoice, DeviceSection, GradcheckSection, RunConfig,
    SweepSection, TrainSection, ENV_PREFIX,
};

use crate::bitstream::{multiply_and, scaled_add_mux, StreamSource};
use crate::device::{fit_stochastic_sigmoid, sweep_switching_curve, MtjParams};
use crate::error::{Error, Result};
use crate::network::{ActivationMode, NetworkModel};
use crate::polar::{
    ber_experiment, construct_frozen_set, evaluate_neural_decoder, neural_training_set, write_ber_csv,
    BerPoint, Decoder, NeuralDecodeOptions, PolarCodeSpec,
};
use crate::rng::{derive_seed, substream};
use crate::training::{gradcheck, train, write_history_csv, Example, LossSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    DeviceSweep,
    ScArithBench,
    TrainDecoder,
    Ber,
    Gradcheck,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::DeviceSweep,
        Command::ScArithBench,
        Command::TrainDecoder,
        Command::Ber,
        Command::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::DeviceSweep => "device-sweep",
            Command::ScArithBench => "sc-arith-bench",
            Command::TrainDecoder => "train-decoder",
            Command::Ber => "ber",
            Command::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub artifact_version: String,
    pub master_seed: u64,
    /// Fully resolved config, defaults and overrides included.
    pub config: RunConfig,
    /// Data files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub duration_s: f64,
    /// Wall time per phase, seconds.
    pub timings: BTreeMap<String, f64>,
    /// Set when the run failed after it started writing.
    pub error: Option<String>,
}

/// Collects atomically written outputs.
struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl OutputDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating output directory {}", dir.display()), e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), timings: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let out = f();
        self.timings.insert(phase.to_string(), started.elapsed().as_secs_f64());
        out
    }
}

/// Writes `bytes` to a temp file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let context = || format!("writing {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(context(), e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(context(), e))?;
    tmp.persist(path).map_err(|e| Error::io(context(), e.error))?;
    Ok(())
}

fn csv<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io("formatting CSV", e))?;
    Ok(buf)
}

/// A validated command, ready to run. Building one touches no files.
enum Plan {
    DeviceSweep { params: MtjParams, currents: Vec<f64> },
    ScArithBench,
    TrainDecoder { spec: PolarCodeSpec, dims: Vec<usize> },
    Ber { spec: PolarCodeSpec, model: Option<NetworkModel> },
    Gradcheck,
}

fn code_spec(cfg: &RunConfig) -> Result<PolarCodeSpec> {
    let c = &cfg.code;
    construct_frozen_set(c.n, c.k, c.design_snr_db).map_err(|e| Error::Config(format!("[code]: {e}")))
}

fn model_path(cfg: &RunConfig, out_dir: &Path) -> PathBuf {
    match &cfg.ber.model {
        Some(p) => PathBuf::from(p),
        None => out_dir.join("model.json"),
    }
}

fn plan(command: Command, cfg: &RunConfig, out_dir: &Path) -> Result<Plan> {
    if cfg.workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    Ok(match command {
        Command::DeviceSweep => {
            let params = cfg.device.params().map_err(|e| Error::Config(format!("[device]: {e}")))?;
            let s = &cfg.sweep;
            let currents = s.currents();
            if currents.len() < 5 || !currents.windows(2).all(|w| w[1] > w[0]) {
                return Err(Error::Config(format!(
                    "[sweep]: need at least 5 strictly increasing currents, got {currents:?}"
                )));
            }
            if s.trials_per_point == 0 || !(s.pulse_width_s >= params.device.dt) {
                return Err(Error::Config(format!(
                    "[sweep]: trials_per_point must be >= 1 and pulse_width_s >= dt ({} s)",
                    params.device.dt
                )));
            }
            Plan::DeviceSweep { params, currents }
        }
        Command::ScArithBench => {
            let a = &cfg.arith;
            if a.length == 0 || a.seeds == 0 || a.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(
                    "[arith]: length and seeds must be >= 1, probabilities in [0, 1]".into(),
                ));
            }
            Plan::ScArithBench
        }
        Command::TrainDecoder => {
            let spec = code_spec(cfg)?;
            let t = &cfg.train;
            if t.snrs_db.is_empty() || t.hidden.contains(&0) {
                return Err(Error::Config("[train]: need training SNRs and non-zero hidden widths".into()));
            }
            t.optimizer_config(0).validate(t.frames).map_err(|e| Error::Config(format!("[train]: {e}")))?;
            let mut dims = vec![spec.n];
            dims.extend(&t.hidden);
            dims.push(spec.k);
            Plan::TrainDecoder { spec, dims }
        }
        Command::Ber => {
            let spec = code_spec(cfg)?;
            let b = &cfg.ber;
            if b.snr_db.is_empty() || b.min_frames == 0 || b.window == 0 {
                return Err(Error::Config("[ber]: need SNR points, min_frames >= 1 and window >= 1".into()));
            }
            let model = match b.decoder {
                DecoderChoice::Classical => None,
                DecoderChoice::Neural | DecoderChoice::Both => {
                    let path = model_path(cfg, out_dir);
                    let text = std::fs::read_to_string(&path).map_err(|e| {
                        Error::io(
                            format!(
                                "neural decoder model not found at {} (run train-decoder first or set ber.model)",
                                path.display()
                            ),
                            e,
                        )
                    })?;
                    let model = NetworkModel::from_json(&text)?;
                    if model.input_dim() != spec.n || model.output_dim() != spec.k {
                        return Err(Error::Shape(format!(
                            "model {} is {:?}, code is ({}, {})",
                            path.display(),
                            model.dims(),
                            spec.n,
                            spec.k
                        )));
                    }
                    let mode = if b.stochastic {
                        ActivationMode::StochasticFiring
                    } else {
                        ActivationMode::DeterministicSigmoid
                    };
                    Some(model.with_activation(mode))
                }
            };
            Plan::Ber { spec, model }
        }
        Command::Gradcheck => {
            let g = &cfg.gradcheck;
            if g.max_dims.len() < 2 || g.max_dims.contains(&0) || !(g.step > 0.0) {
                return Err(Error::Config(
                    "[gradcheck]: max_dims needs >= 2 non-zero widths, step > 0".into(),
                ));
            }
            Plan::Gradcheck
        }
    })
}

/// Runs `command` on the configured number of worker threads and writes its
/// outputs and manifest under `out_dir`. A config that fails validation
/// leaves `out_dir` untouched.
pub fn execute(command: Command, cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    let plan = plan(command, cfg, out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let started = Instant::now();
    let mut out = OutputDir::create(out_dir)?;
    let result = pool.install(|| run_plan(plan, cfg, &mut out));
    let manifest = RunManifest {
        command,
        artifact_version: ARTIFACT_VERSION.to_string(),
        master_seed: cfg.seed,
        config: cfg.clone(),
        outputs: out.written.clone(),
        duration_s: started.elapsed().as_secs_f64(),
        timings: out.timings.clone(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    out.write(MANIFEST_FILE, &json)?;
    result.map(|()| manifest)
}

fn run_plan(plan: Plan, cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    match plan {
        Plan::DeviceSweep { params, currents } => device_sweep(cfg, &params, &currents, out),
        Plan::ScArithBench => arith_bench(cfg, out),
        Plan::TrainDecoder { spec, dims } => train_decoder(cfg, &spec, &dims, out),
        Plan::Ber { spec, model } => ber(cfg, &spec, model.as_ref(), out),
        Plan::Gradcheck => gradcheck_run(cfg, out),
    }
}

fn device_sweep(cfg: &RunConfig, params: &MtjParams, currents: &[f64], out: &mut OutputDir) -> Result<()> {
    let seed = derive_seed(cfg.seed, "device-sweep", 0);
    let s = &cfg.sweep;
    let curve = out.time("sweep", || {
        sweep_switching_curve(currents, s.pulse_width_s, s.trials_per_point, params, seed)
    })?;
    let table = csv(|b| curve.write_csv(b))?;
    out.write("switching_curve.csv", &table)?;
    match fit_stochastic_sigmoid(&curve) {
        Ok(fit) => out.write("sigmoid_fit.json", &serde_json::to_vec_pretty(&fit)?),
        Err(Error::FitDomain(msg)) => {
            Err(Error::FitDomain(format!("{msg}\noffending curve:\n{}", String::from_utf8_lossy(&table))))
        }
        Err(e) => Err(e),
    }
}

/// One row of the stochastic-arithmetic concentration benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithRow {
    pub op: String,
    pub p: f64,
    pub q: f64,
    pub target: f64,
    pub length: usize,
    pub seeds: u64,
    /// `3·sqrt(t(1−t)/L)` for target `t`.
    pub bound: f64,
    pub within_bound: u64,
    pub worst_abs_error: f64,
}

/// AND products and MUX sums for every `(p, q)` pair, each repeated over
/// `seeds` independent stream sets.
pub fn arith_concentration(
    probabilities: &[f64],
    length: usize,
    seeds: u64,
    master: u64,
) -> Result<Vec<ArithRow>> {
    let mut rows = Vec::new();
    for op in ["and", "mux"] {
        for (i, &p) in probabilities.iter().enumerate() {
            for (j, &q) in probabilities.iter().enumerate() {
                let pair_seed = derive_seed(derive_seed(master, op, i as u64), "pair", j as u64);
                let target = if op == "and" { p * q } else { (p + q) / 2.0 };
                let bound = 3.0 * (target * (1.0 - target) / length as f64).sqrt();
                let errors: Vec<Result<f64>> = (0..seeds)
                    .into_par_iter()
                    .map(|s| {
                        let mut src = StreamSource::new(derive_seed(pair_seed, "seed", s));
                        let a = src.unipolar(p, length)?;
                        let b = src.unipolar(q, length)?;
                        let v = if op == "and" {
                            multiply_and(&a, &b)?.value()
                        } else {
                            let sel = src.unipolar(0.5, length)?;
                            scaled_add_mux(&a, &b, &sel)?.value()
                        };
                        Ok((v - target).abs())
                    })
                    .collect();
                let mut within = 0;
                let mut worst: f64 = 0.0;
                for e in errors {
                    let e = e?;
                    within += u64::from(e <= bound);
                    worst = worst.max(e);
                }
                rows.push(ArithRow {
                    op: op.into(),
                    p,
                    q,
                    target,
                    length,
                    seeds,
                    bound,
                    within_bound: within,
                    worst_abs_error: worst,
                });
            }
        }
    }
    Ok(rows)
}

fn arith_bench(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let a = &cfg.arith;
    let seed = derive_seed(cfg.seed, "sc-arith-bench", 0);
    let rows = out.time("bench", || arith_concentration(&a.probabilities, a.length, a.seeds, seed))?;
    let table = csv(|b| {
        writeln!(b, "op,p,q,target,length,seeds,bound,within_bound,worst_abs_error")?;
        for r in &rows {
            writeln!(
                b,
                "{},{},{},{},{},{},{},{},{}",
                r.op, r.p, r.q, r.target, r.length, r.seeds, r.bound, r.within_bound, r.worst_abs_error
            )?;
        }
        Ok(())
    })?;
    out.write("arith_bench.csv", &table)
}

/// Seeds used by `train-decoder`, all derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSeeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
    pub eval: u64,
}

impl TrainSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            data: derive_seed(master, "train-data", 0),
            init: derive_seed(master, "train-init", 0),
            shuffle: derive_seed(master, "train-shuffle", 0),
            eval: derive_seed(master, "train-eval", 0),
        }
    }
}

/// Frames, SNR and window used to evaluate a freshly trained decoder.
pub const EVAL_FRAMES: u64 = 1000;
pub const EVAL_SNR_DB: f64 = 4.0;
pub const EVAL_WINDOW: usize = 256;

fn train_decoder(cfg: &RunConfig, spec: &PolarCodeSpec, dims: &[usize], out: &mut OutputDir) -> Result<()> {
    let t = &cfg.train;
    let seeds = TrainSeeds::from_master(cfg.seed);
    let data = out.time("dataset", || neural_training_set(spec, &t.snrs_db, t.frames, seeds.data))?;
    let init = NetworkModel::glorot_uniform(dims, ActivationMode::DeterministicSigmoid, seeds.init)?;
    let outcome = out.time("train", || train(&init, &data, &t.optimizer_config(seeds.shuffle), t.loss))?;
    let eval = out.time("evaluate", || {
        evaluate_neural_decoder(&outcome.model, spec, EVAL_FRAMES, EVAL_SNR_DB, EVAL_WINDOW, seeds.eval)
    })?;
    out.write("model.json", outcome.model.to_json()?.as_bytes())?;
    out.write("history.csv", &csv(|b| write_history_csv(&outcome.history, b))?)?;
    out.write("code_spec.json", spec.to_json()?.as_bytes())?;
    out.write("evaluation.json", &serde_json::to_vec_pretty(&eval)?)
}

fn ber(
    cfg: &RunConfig,
    spec: &PolarCodeSpec,
    model: Option<&NetworkModel>,
    out: &mut OutputDir,
) -> Result<()> {
    let b = &cfg.ber;
    let seed = derive_seed(cfg.seed, "ber", 0);
    let opts = NeuralDecodeOptions { window: b.window, seed: 0 };
    let run = |decoder: Decoder<'_>, out: &mut OutputDir| -> Result<Vec<BerPoint>> {
        let name = decoder.name();
        let rows = out.time(name, || {
            ber_experiment(spec, &decoder, &b.snr_db, b.min_frames, seed, b.measure_latency)
        })?;
        out.write(&format!("ber_{name}.csv"), &csv(|w| write_ber_csv(&rows, w))?)?;
        Ok(rows)
    };
    match (b.decoder, model) {
        (DecoderChoice::Classical, _) => {
            run(Decoder::Classical(b.check_node), out)?;
        }
        (DecoderChoice::Neural, Some(m)) => {
            run(Decoder::Neural(m, opts), out)?;
        }
        (DecoderChoice::Both, Some(m)) => {
            let classical = run(Decoder::Classical(b.check_node), out)?;
            let neural = run(Decoder::Neural(m, opts), out)?;
            let table = csv(|w| {
                writeln!(w, "snr_db,frames,ber_classical,ber_neural,fer_classical,fer_neural,uncoded_ber")?;
                for (c, n) in classical.iter().zip(&neural) {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        c.snr_db,
                        c.frames,
                        c.ber,
                        n.ber,
                        c.fer,
                        n.fer,
                        crate::polar::uncoded_bpsk_ber(c.snr_db)
                    )?;
                }
                Ok(())
            })?;
            out.write("ber_paired.csv", &table)?;
        }
        (_, None) => unreachable!("plan loads the model for neural decoding"),
    }
    Ok(())
}

/// One random network of the gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub network: usize,
    pub dims: Vec<usize>,
    pub loss: LossSpec,
    pub max_rel_error: f64,
}

/// Backprop against central differences on `networks` random networks, each
/// layer width drawn uniformly from `1..=max_dims[l]`. Losses alternate
/// between squared error and cross-entropy.
pub fn gradcheck_networks(
    networks: usize,
    max_dims: &[usize],
    step: f64,
    master: u64,
) -> Result<Vec<GradcheckRow>> {
    (0..networks)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(master, "gradcheck-net", i as u64);
            let dims: Vec<usize> = max_dims.iter().map(|&m| rng.random_range(1..=m)).collect();
            let model =
                NetworkModel::glorot_uniform(&dims, ActivationMode::DeterministicSigmoid, rng.random())?;
            let x = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = (0..dims[dims.len() - 1]).map(|_| rng.random_range(0.05..0.95)).collect();
            let loss = if i % 2 == 0 { LossSpec::SquaredError } else { LossSpec::BinaryCrossEntropy };
            let max_rel_error = gradcheck(&model, &Example::new(x, y), loss, step)?;
            Ok(GradcheckRow { network: i, dims, loss, max_rel_error })
        })
        .collect()
}

fn gradcheck_run(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let g = &cfg.gradcheck;
    let seed = derive_seed(cfg.seed, "gradcheck", 0);
    let rows = out.time("gradcheck", || gradcheck_networks(g.networks, &g.max_dims, g.step, seed))?;
    let table = csv(|b| {
        writeln!(b, "network,dims,loss,max_rel_error,pass")?;
        for r in &rows {
            let dims: Vec<String> = r.dims.iter().map(|d| d.to_string()).collect();
            let loss = match r.loss {
                LossSpec::SquaredError => "squared-error",
                LossSpec::BinaryCrossEntropy => "binary-cross-entropy",
            };
            writeln!(
                b,
                "{},{},{},{},{}",
                r.network,
                dims.join("-"),
                loss,
                r.max_rel_error,
                r.max_rel_error <= g.tolerance
            )?;
        }
        Ok(())
    })?;
    out.write("gradcheck.csv", &table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut cfg = RunConfig::default();
        cfg.sweep.currents_a = vec![3.0, 2.0, 1.0, 4.0, 5.0];
        assert!(matches!(execute(Command::DeviceSweep, &cfg, &out), Err(Error::Config(_))));
        assert!(!out.exists());
    }

    #[test]
    fn missing_model_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.ber.decoder = DecoderChoice::Neural;
        let err = execute(Command::Ber, &cfg, dir.path()).unwrap_err().to_string();
        assert!(err.contains(&dir.path().join("model.json").display().to_string()), "{err}");
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.gradcheck.networks = 4;
        let m = execute(Command::Gradcheck, &cfg, dir.path()).unwrap();
        assert_eq!(m.outputs, vec!["gradcheck.csv".to_string()]);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.command, Command::Gradcheck);
    }

    #[test]
    fn arith_rows_cover_pairs() {
        let rows = arith_concentration(&[0.25, 0.75], 256, 3, 1).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.seeds == 3));
    }
}
