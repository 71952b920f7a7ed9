//! Fast built-in contract checks, run by `tamt selftest`.

use ndarray::{array, Array2};
use num_complex::Complex64;
use rand::Rng;
use tamt_core::cqt::{energy_normalize, frame_energies, sample_std};
use tamt_core::eval::pit_match;
use tamt_core::losses::{bce, deep_cluster_loss, deep_cluster_loss_naive, focal_loss};
use tamt_core::memory::{associate, associate_once, hebb_store, hopfield_recall, weighted_memory, DEFAULT_MAX_ITER};
use tamt_core::rng::{stream, STREAM_CLUSTER};
use tamt_core::{CqtSpectrogram, GridConfig};

use crate::plot::roll_image;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_all(seed: u64) -> Vec<Check> {
    let mut rng = stream(seed, STREAM_CLUSTER);
    vec![
        normalization(&mut rng),
        association(&mut rng),
        recall(&mut rng),
        losses(&mut rng),
        permutations(&mut rng),
        plotting(),
    ]
}

fn normalization(rng: &mut impl Rng) -> Check {
    let grid = GridConfig::default();
    let data = Array2::from_shape_fn((grid.f_bins(), 32), |_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let q = CqtSpectrogram { data, grid };
    let (Ok(n1), Ok(n3)) = (energy_normalize(&q), energy_normalize(&CqtSpectrogram { data: q.data.mapv(|c| c * 3.0), grid })) else {
        return check("energy normalization", false, "normalization failed".into());
    };
    let std = sample_std(&frame_energies(&n1.data));
    let diff = (&n1.data - &n3.data).iter().map(|c| c.norm()).fold(0.0, f64::max);
    check("energy normalization", (std - 1.0).abs() <= 1e-6 && diff <= 1e-9, format!("energy std {std:.9}, scale diff {diff:.1e}"))
}

fn association(rng: &mut impl Rng) -> Check {
    let v = Array2::from_shape_fn((200, 16), |_| rng.gen_range(-1.0..1.0));
    let y: Vec<f64> = (0..200).map(|_| rng.gen_range(0.05..1.0)).collect();
    let (Ok(fused), Ok(mem)) = (associate_once(&v, &y), weighted_memory(&v, &y)) else {
        return check("associative memory", false, "association failed".into());
    };
    let Ok(two_step) = associate(&v, &mem) else {
        return check("associative memory", false, "association failed".into());
    };
    let rel = (&fused - &two_step).mapv(|x| x * x).sum().sqrt() / two_step.mapv(|x| x * x).sum().sqrt();
    check("associative memory", rel <= 1e-12, format!("fused vs two-step relative error {rel:.1e}"))
}

fn recall(rng: &mut impl Rng) -> Check {
    let n = 64;
    let mut exact = 0;
    for _ in 0..20 {
        let patterns: Vec<Vec<i8>> = (0..5).map(|_| (0..n).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect()).collect();
        let Ok(mem) = hebb_store(&patterns) else { continue };
        let target = &patterns[0];
        let mut probe: Vec<f64> = target.iter().map(|&x| x as f64).collect();
        for i in rand::seq::index::sample(rng, n, n / 10) {
            probe[i] = -probe[i];
        }
        if hopfield_recall(&mem, &probe, DEFAULT_MAX_ITER).is_ok_and(|r| &r.state == target) {
            exact += 1;
        }
    }
    check("hopfield recall", exact >= 18, format!("{exact}/20 exact recalls at 10% corruption"))
}

fn losses(rng: &mut impl Rng) -> Check {
    let (k, d, m) = (30, 6, 3);
    let v = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
    let z = Array2::from_shape_fn((k, m), |(i, j)| f64::from(u8::from(i % m == j)));
    let (Ok(fast), Ok(naive)) = (deep_cluster_loss(&v, &z), deep_cluster_loss_naive(&v, &z)) else {
        return check("loss algebra", false, "loss evaluation failed".into());
    };
    let rel = (fast - naive).abs() / naive.abs();
    let p: Vec<f64> = (0..50).map(|_| rng.gen_range(0.01..0.99)).collect();
    let t: Vec<f64> = (0..50).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect();
    let (Ok(focal), Ok(b)) = (focal_loss(&p, &t, 0.5, 0.0), bce(&p, &t)) else {
        return check("loss algebra", false, "loss evaluation failed".into());
    };
    let gap = (focal - 0.5 * b).abs();
    check("loss algebra", rel <= 1e-9 && gap <= 1e-9, format!("clustering loss rel {rel:.1e}, focal vs BCE {gap:.1e}"))
}

fn permutations(rng: &mut impl Rng) -> Check {
    let refs: Vec<Array2<f64>> = (0..3).map(|_| Array2::from_shape_fn((12, 20), |_| f64::from(u8::from(rng.gen_bool(0.3))))).collect();
    let planted = [2, 0, 1];
    let ests: Vec<Array2<f64>> = planted.iter().map(|&j| refs[j].clone()).collect();
    let ok = pit_match(&refs, &ests, 0.5).is_ok_and(|r| r.permutation == planted && r.mean.f1 == 1.0);
    check("permutation matching", ok, format!("planted {planted:?}"))
}

fn plotting() -> Check {
    let img = roll_image(&array![[1.0, 0.0], [0.0, 1.0]]);
    let lit = img.pixels.iter().filter(|p| **p != [0, 0, 0]).count();
    check("plot", lit == 2, format!("{lit} lit pixels in a 2x2 identity roll"))
}
