//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use twophase::designs::{Cohort, NwtsColumns};
use twophase::rng::StreamId;

/// A synthetic cohort shaped like the NWTS data: rare unfavorable central
/// histology, an error-prone local reading, and relapse driven by histology,
/// stage, age and tumour diameter.
pub fn synthetic_nwts(n: usize, seed: u64) -> Cohort {
    let mut rng = StreamId::root(seed).child("synthetic-nwts", 0).rng();
    let age_dist = Gamma::new(2.0, 1.5).unwrap();
    let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
    let (mut stage, mut age, mut diameter) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let st: u8 = rng.gen_range(1..=4);
        let a: f64 = rng.sample(age_dist);
        let d: f64 = (10.0 + 4.0 * rng.sample::<f64, _>(StandardNormal)).clamp(1.0, 30.0);
        let hist = if rng.gen::<f64>() < 0.1 { 1.0 } else { 0.0 };
        let local = if hist == 1.0 {
            if rng.gen::<f64>() < 0.75 { 1.0 } else { 0.0 }
        } else if rng.gen::<f64>() < 0.04 {
            1.0
        } else {
            0.0
        };
        let eta = -2.8 + 1.8 * hist + 0.4 * f64::from(st >= 3) + 0.06 * a + 0.03 * d;
        let rel = if rng.gen::<f64>() < 1.0 / (1.0 + (-eta).exp()) { 1.0 } else { 0.0 };
        y.push(rel);
        x.push(hist);
        z.push(local);
        stage.push(st);
        age.push((a * 12.0).round());
        diameter.push((d * 10.0).round() / 10.0);
    }
    Cohort {
        stratum: vec![0; n],
        y,
        x,
        z,
        nwts: Some(NwtsColumns { stage, age, diameter }),
    }
}
