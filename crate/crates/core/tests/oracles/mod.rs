//! Reference implementations for integration tests. Each one is written
//! from the defining formula, deliberately naive, and shares no code with
//! the library beyond its public data types.

#![allow(dead_code)]

use mtjlab::network::{sigmoid, NetworkModel};
use mtjlab::training::{Example, LossSpec};

const MU_B: f64 = 9.274_010_078_3e-24;
const MU_0: f64 = 1.256_637_062_12e-6;
const HBAR: f64 = 1.054_571_817e-34;
const K_B: f64 = 1.380_649e-23;
const Q_E: f64 = 1.602_176_634e-19;

/// `γ = 2·μB·μ0/ħ`.
pub fn gyromagnetic_ratio() -> f64 {
    2.0 * MU_B * MU_0 / HBAR
}

/// Per-component standard deviation of the thermal field.
pub fn thermal_sigma(alpha: f64, ms: f64, volume: f64, temperature: f64, dt: f64) -> f64 {
    (alpha / (1.0 + alpha * alpha) * 2.0 * K_B * temperature
        / (gyromagnetic_ratio() * MU_0 * ms * volume * dt))
        .sqrt()
}

/// Number of spins `Ms·V/μB`.
pub fn spin_count(ms: f64, volume: f64) -> f64 {
    ms * volume / MU_B
}

/// `I_c = α·γ·(Hk + Hd/2)·q·Ns`.
pub fn critical_spin_current(alpha: f64, hk: f64, hd: f64, ms: f64, volume: f64) -> f64 {
    alpha * gyromagnetic_ratio() * (hk + hd / 2.0) * Q_E * spin_count(ms, volume)
}

/// `G = F^{⊗n}` with `F = [[1, 0], [1, 1]]`, built by repeated Kronecker
/// products.
pub fn polar_generator(n: usize) -> Vec<Vec<u8>> {
    let mut g = vec![vec![1u8]];
    while g.len() < n {
        let m = g.len();
        let mut next = vec![vec![0u8; 2 * m]; 2 * m];
        for r in 0..m {
            for c in 0..m {
                let v = g[r][c];
                next[r][c] = v;
                next[m + r][c] = v;
                next[m + r][m + c] = v;
            }
        }
        g = next;
    }
    g
}

/// `x = u·G` over GF(2).
pub fn dense_encode(u: &[u8], g: &[Vec<u8>]) -> Vec<u8> {
    let n = u.len();
    (0..n).map(|c| (0..n).fold(0u8, |acc, r| acc ^ (u[r] & g[r][c]))).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Successive decisions by exhaustive completion: bit `i` takes the value
/// that maximizes `P(y | u_0..u_{i-1} decided, u_i)` with every later bit
/// marginalized uniformly. Frozen bits are zero. Ties decide 0.
pub fn sc_posterior_decisions(llrs: &[f64], frozen: &[bool]) -> Vec<u8> {
    let n = llrs.len();
    let g = polar_generator(n);
    let log_lik = |u: &[u8]| -> f64 {
        dense_encode(u, &g).iter().zip(llrs).map(|(&x, &l)| if x == 0 { l / 2.0 } else { -l / 2.0 }).sum()
    };
    let mut decided: Vec<u8> = Vec::with_capacity(n);
    for i in 0..n {
        if frozen[i] {
            decided.push(0);
            continue;
        }
        let rest = n - i - 1;
        let mut terms = [Vec::new(), Vec::new()];
        for (bit, bucket) in terms.iter_mut().enumerate() {
            for tail in 0..(1usize << rest) {
                let mut u = decided.clone();
                u.push(bit as u8);
                u.extend((0..rest).map(|j| ((tail >> j) & 1) as u8));
                bucket.push(log_lik(&u));
            }
        }
        let llr = log_sum_exp(&terms[0]) - log_sum_exp(&terms[1]);
        decided.push(u8::from(llr < 0.0));
    }
    decided
}

/// Loss straight from its definition.
pub fn loss(prediction: &[f64], target: &[f64], spec: LossSpec) -> f64 {
    prediction
        .iter()
        .zip(target)
        .map(|(&p, &y)| match spec {
            LossSpec::SquaredError => 0.5 * (p - y) * (p - y),
            LossSpec::BinaryCrossEntropy => -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()),
        })
        .sum()
}

/// Plain forward pass with explicit loops.
pub fn forward(model: &NetworkModel, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in &model.layers {
        let w = &layer.weights;
        a = (0..w.rows)
            .map(|r| {
                let z: f64 = (0..w.cols).map(|c| w.get(r, c) * a[c]).sum::<f64>() + layer.bias[r];
                sigmoid(z)
            })
            .collect();
    }
    a
}

/// Central differences on the flat parameter vector.
pub fn central_difference(model: &NetworkModel, ex: &Example, spec: LossSpec, h: f64) -> Vec<f64> {
    let base = model.params();
    (0..base.len())
        .map(|i| {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                let mut m = model.clone();
                m.set_params(&p).unwrap();
                loss(&forward(&m, &ex.x), &ex.y, spec)
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        })
        .collect()
}

/// `Q(x) = ∫_x^∞ φ(t) dt` by composite Simpson on `[x, x + 12]`.
pub fn gaussian_tail(x: f64) -> f64 {
    let n = 20_000;
    let h = 12.0 / n as f64;
    let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(x) + phi(x + 12.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * phi(x + i as f64 * h);
    }
    s * h / 3.0
}

/// Uncoded BPSK BER `Q(sqrt(2·Eb/N0))`.
pub fn uncoded_ber(snr_db: f64) -> f64 {
    gaussian_tail((2.0 * 10f64.powf(snr_db / 10.0)).sqrt())
}
