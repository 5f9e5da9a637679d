//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p mtjlab-cli --test acceptance`.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::path::Path;
use std::process::Command as Process;
use std::time::Instant;

use mtjlab::harness::{arith_concentration, execute, gradcheck_networks, Command, RunConfig};
use mtjlab::llgs::{
    evolve, heun_step, sample_thermal_field, simulate_pulse, DeviceParams, MagnetizationVector,
    SpinCurrentPulse,
};
use mtjlab::network::{ActivationMode, NetworkModel};
use mtjlab::polar::{
    ber_experiment, bpsk_awgn, construct_frozen_set, encode, polar_transform, sc_decode, sc_decode_with,
    ChannelOutput, CheckNodeRule, Decoder,
};
use mtjlab::rng::{rng_from_seed, substream};
use mtjlab::training::{
    gd_step, sgd_step, train, Example, LearningRate, LossSpec, OptimizerConfig, OptimizerKind, Trainable,
};
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn thermal_statistics() -> Check {
    let started = Instant::now();
    let p = DeviceParams::default();
    let sigma = oracles::thermal_sigma(p.alpha, p.ms, p.volume, p.temperature, p.dt);
    let draws = 1_000_000;
    let mut rng = rng_from_seed(271_828);
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..draws {
        let h = sample_thermal_field(&p, &mut rng);
        for c in 0..3 {
            sum[c] += h[c];
            sum_sq[c] += h[c] * h[c];
        }
    }
    let worst = (0..3)
        .map(|c| {
            let mean = sum[c] / draws as f64;
            ((sum_sq[c] / draws as f64 - mean * mean) / (sigma * sigma) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let cold = DeviceParams { temperature: 0.0, ..p };
    let zero = (0..1000).all(|_| sample_thermal_field(&cold, &mut rng) == [0.0; 3]);
    let secs = started.elapsed().as_secs_f64();
    ensure(
        worst < 0.01 && zero && secs < 10.0,
        format!("worst variance error {:.3}%, T=0 zero: {zero}, {secs:.1} s", worst * 100.0),
    )
}

fn llgs_sanity() -> Check {
    let p = DeviceParams::default();
    let mut rng = rng_from_seed(161_803);
    let mut m = MagnetizationVector::tilted_from_z(0.1);
    let mut drift: f64 = 0.0;
    for _ in 0..1_000_000 {
        let h = sample_thermal_field(&p, &mut rng);
        m = heun_step(&m, &p, [0.0; 3], h).map_err(|e| e.to_string())?.0;
        drift = drift.max((m.norm() - 1.0).abs());
    }

    let cold = DeviceParams { temperature: 0.0, ..p };
    let mut last = f64::NEG_INFINITY;
    let mut worst_drop: f64 = 0.0;
    let relaxed =
        evolve(MagnetizationVector::tilted_from_z(1.0), &cold, [0.0; 3], 1_000_000, 0, &mut rng, |_, m| {
            worst_drop = worst_drop.max(last - m.mz);
            last = m.mz;
        })
        .map_err(|e| e.to_string())?;

    let endpoint = |dt: f64| -> Result<MagnetizationVector, String> {
        let d = DeviceParams { dt, ..cold };
        let pulse = SpinCurrentPulse::new(30.0 * d.critical_spin_current(), 2e-9, [0.0, 0.0, -1.0])
            .map_err(|e| e.to_string())?;
        Ok(simulate_pulse(MagnetizationVector::tilted_from_z(0.02), &pulse, &d, 0.0, 0)
            .map_err(|e| e.to_string())?
            .final_state())
    };
    let (a, b) = (endpoint(1e-13)?, endpoint(0.5e-13)?);
    let halving = (a.mx - b.mx).abs().max((a.my - b.my).abs()).max((a.mz - b.mz).abs());
    ensure(
        drift <= 1e-9 && worst_drop <= 1e-15 && relaxed.mz > 1.0 - 1e-6 && halving <= 1e-4,
        format!(
            "norm drift {drift:.1e}, largest mz decrease {worst_drop:.1e} (rounding), final mz {:.12}, dt-halving {halving:.1e}",
            relaxed.mz
        ),
    )
}

fn read(dir: &Path, name: &str) -> Result<String, String> {
    std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"))
}

fn stochastic_sigmoid() -> Check {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    execute(Command::DeviceSweep, &RunConfig::default(), tmp.path()).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = read(tmp.path(), "switching_curve.csv")?
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let mut violation = f64::NEG_INFINITY;
    for (i, lo) in rows.iter().enumerate() {
        for hi in &rows[i + 1..] {
            violation = violation.max(lo[1] - hi[1] - lo[3] - hi[3]);
        }
    }
    let fit: serde_json::Value = serde_json::from_str(&read(tmp.path(), "sigmoid_fit.json")?).unwrap();
    let r2 = fit["r_squared"].as_f64().unwrap_or(0.0);
    let secs = started.elapsed().as_secs_f64();
    ensure(
        rows.len() == 15
            && rows.iter().all(|r| r[2] == 2000.0)
            && violation <= 0.0
            && r2 >= 0.98
            && secs < 300.0,
        format!("{} points, worst monotonicity excess {violation:.4}, r² = {r2:.4}, {secs:.0} s", rows.len()),
    )
}

fn arith_concentration_check() -> Check {
    let rows = arith_concentration(&[0.1, 0.5, 0.9], 1_000_000, 100, 0x5eed).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut ok = rows.len() == 18;
    for r in &rows {
        let t = if r.op == "and" { r.p * r.q } else { (r.p + r.q) / 2.0 };
        let bound = 3.0 * (t * (1.0 - t) / 1e6).sqrt();
        ok &= (r.target - t).abs() < 1e-15 && (r.bound - bound).abs() < 1e-15 && r.within_bound >= 99;
        if r.within_bound < 100 {
            detail.push(format!("{}({},{})={}", r.op, r.p, r.q, r.within_bound));
        }
    }
    let min = rows.iter().map(|r| r.within_bound).min().unwrap_or(0);
    ensure(ok, format!("min {min}/100 within 3σ; below 100: [{}]", detail.join(" ")))
}

fn gradient_correctness() -> Check {
    let rows = gradcheck_networks(100, &[4, 8, 4], 1e-5, 0x9ead).map_err(|e| e.to_string())?;
    let library = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let mut oracle: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = substream(0x0dac1e, "net", i);
        let dims = [rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=4)];
        let model = NetworkModel::glorot_uniform(&dims, ActivationMode::DeterministicSigmoid, i).unwrap();
        let ex = Example::new(
            (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..dims[2]).map(|_| rng.random_range(0.05..0.95)).collect(),
        );
        let loss = if i % 2 == 0 { LossSpec::SquaredError } else { LossSpec::BinaryCrossEntropy };
        let analytic = model.gradient(&ex, loss).unwrap();
        let numeric = oracles::central_difference(&model, &ex, loss, 1e-5);
        for (a, b) in analytic.iter().zip(&numeric) {
            oracle = oracle.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
        }
    }
    ensure(
        rows.len() == 100 && library <= 1e-5 && oracle <= 1e-5,
        format!("max relative error {library:.2e} (library check), {oracle:.2e} (independent differences)"),
    )
}

fn optimizer_identities() -> Check {
    let mut rng = substream(42, "dataset", 0);
    let data: Vec<Example> = (0..20)
        .map(|_| {
            Example::new(
                (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..2).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect(),
            )
        })
        .collect();
    let init = NetworkModel::glorot_uniform(&[3, 5, 2], ActivationMode::DeterministicSigmoid, 7).unwrap();
    let cfg = |kind, batch_size| OptimizerConfig {
        kind,
        learning_rate: LearningRate::InverseDecay { initial: 0.5, decay: 0.02 },
        batch_size,
        epochs: 8,
        shuffle_seed: 99,
    };
    let loss = LossSpec::BinaryCrossEntropy;
    let run = |c: OptimizerConfig| train(&init, &data, &c, loss).map_err(|e| e.to_string());
    let (sgd, mb1) = (run(cfg(OptimizerKind::Sgd, 0))?, run(cfg(OptimizerKind::Minibatch, 1))?);
    let (gd, mbn) = (run(cfg(OptimizerKind::Gd, 0))?, run(cfg(OptimizerKind::Minibatch, data.len()))?);
    let b1 = sgd.history == mb1.history && sgd.model.params() == mb1.model.params();
    let bn = gd.history == mbn.history && gd.model.params() == mbn.model.params();

    let full = gd_step(&init, &data, 0.5, loss).map_err(|e| e.to_string())?.params();
    let mut mean = vec![0.0; full.len()];
    for ex in &data {
        for (m, p) in mean.iter_mut().zip(sgd_step(&init, ex, 0.5, loss).unwrap().params()) {
            *m += p / data.len() as f64;
        }
    }
    let gap = full.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(
        b1 && bn && gap <= 1e-12,
        format!("B=1 ≡ SGD: {b1}, B=n ≡ GD: {bn}, mean-of-SGD vs GD gap {gap:.1e}"),
    )
}

fn encode_oracle() -> Check {
    let g = oracles::polar_generator(8);
    let mismatches = (0u32..256)
        .filter(|w| {
            let u: Vec<u8> = (0..8).map(|i| ((w >> i) & 1) as u8).collect();
            let mut x = u.clone();
            polar_transform(&mut x);
            x != oracles::dense_encode(&u, &g)
        })
        .count();
    ensure(mismatches == 0, format!("{mismatches}/256 inputs differ from the dense generator"))
}

fn sc_oracle() -> Check {
    let started = Instant::now();
    let spec = construct_frozen_set(8, 4, 0.0).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for m in 0u64..16 {
        let msg: Vec<u8> = (0..4).map(|i| ((m >> i) & 1) as u8).collect();
        let x = encode(&msg, &spec).map_err(|e| e.to_string())?;
        for s in 0..20 {
            let out = bpsk_awgn(&x, 1.0, spec.rate(), 100 * m + s);
            let got = sc_decode_with(&out, &spec, CheckNodeRule::Exact).map_err(|e| e.to_string())?;
            mismatches += usize::from(got.u_hat != oracles::sc_posterior_decisions(&out.llrs, &spec.frozen));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(mismatches == 0 && secs < 60.0, format!("{mismatches}/320 frames differ, {secs:.2} s"))
}

fn noiseless_invertibility() -> Check {
    let mut failures = Vec::new();
    let mut n = 2;
    while n <= 1024 {
        let spec = construct_frozen_set(n, n / 2, 0.0).map_err(|e| e.to_string())?;
        let mut ok = 0;
        for t in 0..100u64 {
            let mut rng = substream(n as u64, "invertibility", t);
            let msg: Vec<u8> = (0..spec.k).map(|_| u8::from(rng.random::<bool>())).collect();
            let x = encode(&msg, &spec).map_err(|e| e.to_string())?;
            let out = ChannelOutput {
                llrs: x.iter().map(|&b| if b == 0 { 40.0 } else { -40.0 }).collect(),
                snr_db: f64::INFINITY,
            };
            ok += usize::from(sc_decode(&out, &spec).map_err(|e| e.to_string())?.message_hat == msg);
        }
        if ok != 100 {
            failures.push(format!("N={n}: {ok}/100"));
        }
        n *= 2;
    }
    ensure(failures.is_empty(), format!("N = 2..1024, failures: [{}]", failures.join(", ")))
}

fn coding_gain() -> Check {
    let started = Instant::now();
    let spec = construct_frozen_set(128, 64, 0.0).map_err(|e| e.to_string())?;
    let frames = 4000;
    let rows = ber_experiment(
        &spec,
        &Decoder::Classical(CheckNodeRule::Exact),
        &[2.0, 3.0, 4.0],
        frames,
        0xbe7,
        false,
    )
    .map_err(|e| e.to_string())?;
    let bits = (frames * 64) as f64;
    let se = |b: f64| (b * (1.0 - b) / bits).sqrt();
    let uncoded = oracles::uncoded_ber(3.0);
    let beats = rows[1].ber < uncoded;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].ber <= w[0].ber + 3.0 * (se(w[0].ber).powi(2) + se(w[1].ber).powi(2)).sqrt());
    let secs = started.elapsed().as_secs_f64();
    ensure(
        beats && monotone && bits >= 1e5 && secs < 600.0,
        format!(
            "BER {:.2e} / {:.2e} / {:.2e} at 2/3/4 dB over {bits:.0} bits each, uncoded at 3 dB {uncoded:.2e}, {secs:.1} s",
            rows[0].ber, rows[1].ber, rows[2].ber
        ),
    )
}

fn neural_pipeline() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    execute(Command::TrainDecoder, &RunConfig::default(), tmp.path()).map_err(|e| e.to_string())?;
    let history = read(tmp.path(), "history.csv")?;
    let last: f64 = history
        .lines()
        .last()
        .and_then(|l| l.split(',').nth(1))
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    let eval: serde_json::Value = serde_json::from_str(&read(tmp.path(), "evaluation.json")?).unwrap();
    let noiseless = eval["noiseless_bit_error"].as_f64().unwrap_or(1.0);
    let agreement = eval["agreement"].as_f64().unwrap_or(0.0);
    let window = eval["window"].as_u64().unwrap_or(0);
    let snr = eval["agreement_snr_db"].as_f64().unwrap_or(0.0);
    ensure(
        last < 0.2 && noiseless < 0.01 && agreement >= 0.95 && window == 256 && snr == 4.0,
        format!(
            "final loss {last:.4}, noiseless bit error {noiseless}, stochastic agreement {:.1}% at {snr} dB (W={window})",
            agreement * 100.0
        ),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Process::new(env!("CARGO_BIN_EXE_mtjlab")).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn reproducibility() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let model = root.join("train-decoder-a/model.json");
    let configs = [
        ("device-sweep", "[sweep]\ntrials_per_point = 64\n".to_string()),
        ("sc-arith-bench", "[arith]\nlength = 4096\nseeds = 20\n".to_string()),
        ("train-decoder", "[train]\nepochs = 4\nframes = 512\n".to_string()),
        (
            "ber",
            format!(
                "[ber]\ndecoder = \"both\"\nstochastic = true\nwindow = 16\nmin_frames = 300\nmodel = {:?}\n",
                model.display().to_string()
            ),
        ),
        ("gradcheck", "[gradcheck]\nnetworks = 20\n".to_string()),
    ];
    let mut compared = 0;
    for (cmd, toml) in &configs {
        let cfg = root.join(format!("{cmd}.toml"));
        std::fs::write(&cfg, toml).map_err(|e| e.to_string())?;
        let a = root.join(format!("{cmd}-a"));
        let b = root.join(format!("{cmd}-b"));
        let (a_s, b_s) = (a.display().to_string(), b.display().to_string());
        cli(&[
            cmd,
            "--config",
            &cfg.display().to_string(),
            "--seed",
            "77",
            "--workers",
            "1",
            "--out-dir",
            &a_s,
        ])?;
        let manifest = a.join("manifest.json").display().to_string();
        cli(&[cmd, "--config", &manifest, "--workers", "3", "--out-dir", &b_s])?;
        let m: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")?).unwrap();
        if m["outputs"].as_array().is_none_or(|o| o.is_empty()) {
            return Err(format!("{cmd}: manifest lists no outputs"));
        }
        for out in m["outputs"].as_array().into_iter().flatten() {
            let name = out.as_str().unwrap();
            let (x, y) = (std::fs::read(a.join(name)), std::fs::read(b.join(name)));
            match (x, y) {
                (Ok(x), Ok(y)) if x == y => compared += 1,
                _ => return Err(format!("{cmd}: {name} differs between runs")),
            }
        }
    }
    ensure(
        compared >= configs.len(),
        format!("{compared} data files byte-identical across 5 commands (1 vs 3 workers)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("thermal-field statistics", thermal_statistics),
        ("LLGS integrator sanity", llgs_sanity),
        ("stochastic switching sigmoid", stochastic_sigmoid),
        ("stochastic arithmetic concentration", arith_concentration_check),
        ("backprop gradient correctness", gradient_correctness),
        ("optimizer identities", optimizer_identities),
        ("polar encoder vs dense generator", encode_oracle),
        ("SC decoder vs exhaustive posterior", sc_oracle),
        ("noiseless SC invertibility", noiseless_invertibility),
        ("(128,64) coding gain", coding_gain),
        ("neural decoder pipeline", neural_pipeline),
        ("CLI reproducibility from manifests", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.1} s]", i + 1, started.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
