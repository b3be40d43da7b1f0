//! Quick self-checks of the numerical core against small independent
//! reimplementations. Backs the `verify` CLI verb.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::madrl::{gae, ppo_clip_objective};
use crate::media::NetworkTrace;
use crate::qoe::{qoe_total, QoEInputs, QoEWeights};
use crate::region::{partition_points, Fov, TileGrid};
use crate::sphere::Vec3;

/// Outcome of one check suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, tol: f64, cases: usize) -> Check {
    Check {
        name,
        passed: worst <= tol,
        detail: format!("{cases} cases, worst error {worst:.3e} (tol {tol:.0e})"),
    }
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

fn qoe_suite(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..6);
        let psi = random_probs(rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..40.0)).collect();
        let prev: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..40.0)).collect();
        let reb = rng.random_range(0.0..3.0);
        let w = [1.0, rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
        let weights = QoEWeights::new(w[0], w[1], w[2], w[3])?;
        let got = qoe_total(
            &weights,
            &QoEInputs {
                probabilities: psi.clone(),
                qualities: q.clone(),
                previous: Some(prev.clone()),
                rebuffer_s: reb,
            },
            false,
        )?
        .total;
        let mut vq = 0.0;
        let mut tv = 0.0;
        let mut sv = 0.0;
        for i in 0..n {
            vq += psi[i] * q[i];
            tv += psi[i] * (q[i] - prev[i]).abs();
            for j in i + 1..n {
                sv += psi[i] * psi[j] * (q[i] - q[j]).abs();
            }
        }
        let want = w[0] * vq - w[1] * tv - w[2] * sv - w[3] * reb;
        worst = worst.max((got - want).abs());
    }
    Ok(check("qoe", worst, 1e-9, cases))
}

fn gae_suite(rng: &mut ChaCha8Rng, cases: usize) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..30);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let boot = rng.random_range(-5.0..5.0);
        let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
        let got = gae(&r, &v, boot, g, l);
        let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        for t in 0..n {
            let mut want = 0.0;
            let mut coef = 1.0;
            for k in t..n {
                want += coef * (r[k] + g * next(k) - v[k]);
                coef *= g * l;
            }
            worst = worst.max((got[t] - want).abs());
        }
    }
    check("gae", worst, 1e-9, cases)
}

fn clip_suite(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let eps = rng.random_range(0.0..0.5);
        let a = rng.random_range(-3.0..3.0);
        let new = rng.random_range(-1.0..1.0);
        let old = rng.random_range(-1.0..1.0);
        let (j, _) = ppo_clip_objective(&[new], &[old], &[a], eps)?;
        let r = f64::exp(new - old);
        let want = (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a);
        worst = worst.max((j - want).abs());
    }
    Ok(check("ppo-clip", worst, 1e-12, cases))
}

fn partition_suite(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let grid = TileGrid::new(6, 12);
    let fov = Fov::new(100.0, 100.0)?;
    let mut failures = 0;
    for seg in 0..cases {
        let n = rng.random_range(1..6);
        let points: Vec<Vec3> = (0..n)
            .map(|_| Vec3::from_lat_lon_deg(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0)))
            .collect();
        let mut probs = random_probs(rng, n);
        probs.sort_by(|a, b| b.total_cmp(a));
        let a = partition_points(&points, &probs, grid, fov, seg)?;
        if a.validate(grid.num_tiles()).is_err() || a.num_regions() != n {
            failures += 1;
        }
    }
    Ok(check("partition", failures as f64, 0.0, cases))
}

/// Integral of throughput over `[0, t]` by summing whole sample intervals.
fn cumulative_mb(trace: &NetworkTrace, t: f64) -> f64 {
    let s = trace.samples();
    let period = trace.period();
    let off = trace.offset_mbps();
    let one_pass: f64 = (0..s.len())
        .map(|i| {
            let end = s.get(i + 1).map_or(period, |x| x.0);
            (s[i].1 + off) * (end - s[i].0)
        })
        .sum();
    let (passes, local) = if period.is_finite() {
        ((t / period).floor(), t - (t / period).floor() * period)
    } else {
        (0.0, t)
    };
    let mut total = if passes > 0.0 { passes * one_pass } else { 0.0 };
    for i in 0..s.len() {
        let end = s.get(i + 1).map_or(period, |x| x.0);
        let overlap = local.min(end) - s[i].0;
        if overlap > 0.0 {
            total += (s[i].1 + off) * overlap;
        }
    }
    total
}

/// Bisection on the cumulative integral; the reference for download times.
pub fn download_time_oracle(trace: &NetworkTrace, size_mb: f64, start_s: f64) -> f64 {
    let base = cumulative_mb(trace, start_s);
    let (mut lo, mut hi) = (0.0, 1.0);
    while cumulative_mb(trace, start_s + hi) - base < size_mb {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cumulative_mb(trace, start_s + mid) - base < size_mb {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A random step trace with integer-second boundaries.
pub fn random_step_trace(rng: &mut ChaCha8Rng) -> Result<NetworkTrace> {
    let n = rng.random_range(1..12);
    let mut t = 0.0;
    let samples = (0..n)
        .map(|_| {
            let s = (t, rng.random_range(0.5..50.0));
            t += rng.random_range(1..4) as f64;
            s
        })
        .collect();
    NetworkTrace::new(samples, 0.0)
}

fn download_suite(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let trace = random_step_trace(rng)?;
        let size = rng.random_range(0.1..200.0);
        let start = rng.random_range(0.0..40.0);
        let got = trace.download_time(size, start);
        let want = download_time_oracle(&trace, size, start);
        worst = worst.max((got - want).abs());
    }
    Ok(check("download-time", worst, 1e-9, cases))
}

/// Runs every suite with `cases` random cases each.
pub fn run_all(seed: u64, cases: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        qoe_suite(&mut rng, cases)?,
        gae_suite(&mut rng, cases),
        clip_suite(&mut rng, cases)?,
        partition_suite(&mut rng, cases)?,
        download_suite(&mut rng, cases)?,
    ])
}
