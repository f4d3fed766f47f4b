use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::seed::derive_seed;

const STEPS_PER_DAY: usize = 96;

/// Seeded per-unit load and PV shapes at 15-minute resolution.
///
/// Load profiles are a diurnal base (morning and evening peaks) with AR(1)
/// noise; reactive demand follows the same base with its own, noisier
/// process. PV profiles are a clipped daylight sinusoid with cloud dips.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBank {
    start: usize,
    load_p: Vec<Vec<f64>>,
    load_q: Vec<Vec<f64>>,
    pv: Vec<Vec<f64>>,
}

fn diurnal_load(step: usize) -> f64 {
    let hour = (step % STEPS_PER_DAY) as f64 * 24.0 / STEPS_PER_DAY as f64;
    let bump = |center: f64, width: f64| (-((hour - center) / width).powi(2)).exp();
    0.35 + 0.35 * bump(7.5, 1.8) + 0.6 * bump(19.0, 2.5)
}

fn daylight(step: usize) -> f64 {
    let hour = (step % STEPS_PER_DAY) as f64 * 24.0 / STEPS_PER_DAY as f64;
    (PI * (hour - 6.0) / 13.0).sin().max(0.0)
}

fn ar1(rng: &mut ChaCha8Rng, len: usize, phi: f64, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let mut x = 0.0;
    (0..len)
        .map(|_| {
            x = phi * x + normal.sample(rng);
            x
        })
        .collect()
}

impl ProfileBank {
    /// Profiles `0..count` over steps `start..start + len`.
    pub fn generate(seed: u64, count: u32, start: usize, len: usize) -> Self {
        let total = start + len;
        let mut load_p = Vec::with_capacity(count as usize);
        let mut load_q = Vec::with_capacity(count as usize);
        let mut pv = Vec::with_capacity(count as usize);
        for id in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("profile/{id}")));
            let scale = 0.85 + 0.3 * rand::Rng::random::<f64>(&mut rng);
            // day-to-day habits shift each household's peaks a little
            let shift = rand::Rng::random_range(&mut rng, 0..6usize);
            let stream = |name: &str| ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("profile/{id}/{name}")));
            let np = ar1(&mut stream("p"), total, 0.9, 0.06);
            let nq = ar1(&mut stream("q"), total, 0.7, 0.15);
            let clouds = ar1(&mut stream("cloud"), total, 0.8, 0.25);
            let p: Vec<f64> = (start..total).map(|t| (scale * diurnal_load(t + shift) * (1.0 + np[t])).clamp(0.05, 1.2)).collect();
            let q: Vec<f64> = (start..total).map(|t| (scale * diurnal_load(t + shift) * (1.0 + nq[t])).clamp(0.0, 1.4)).collect();
            let s: Vec<f64> = (start..total).map(|t| daylight(t) * (1.0 - clouds[t].abs()).clamp(0.1, 1.0)).collect();
            load_p.push(p);
            load_q.push(q);
            pv.push(s);
        }
        ProfileBank { start, load_p, load_q, pv }
    }

    pub fn len(&self) -> usize {
        self.load_p.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Active and reactive multipliers of peak demand at absolute step `step`.
    pub fn load(&self, profile: u32, step: usize) -> (f64, f64) {
        let t = step - self.start;
        (self.load_p[profile as usize][t], self.load_q[profile as usize][t])
    }

    /// PV output as a fraction of installed capacity.
    pub fn pv(&self, profile: u32, step: usize) -> f64 {
        self.pv[profile as usize][step - self.start]
    }
}
