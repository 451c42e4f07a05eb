//! Brute-force oracles and randomized equivalence checks shared by the
//! oracle and acceptance test targets. Each check returns the number of
//! instances compared, or a description of the first mismatch.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcenorm::anchors::AnchorCounts;
use dcenorm::evaluation::{ks_statistic, roc_auc};
use dcenorm::model::{fractional_ranks, select_archetype};
use dcenorm::stats::{median_filter, percentile};
use dcenorm::{AnchorSet, Geometry, Tissue, Volume};

pub const INSTANCES: usize = 120;

pub type Check = Result<usize, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sorted(values: &[f32]) -> Vec<f32> {
    let mut s = values.to_vec();
    s.sort_by(f32::total_cmp);
    s
}

/// Nearest-rank percentile for integer q, in integer arithmetic.
pub fn percentile_oracle(values: &[f32], q: usize) -> f32 {
    let n = values.len();
    let rank = ((q * n).div_ceil(100)).max(1);
    sorted(values)[rank - 1]
}

pub fn median_filter_oracle(v: &Volume, radius: usize) -> Vec<f32> {
    let [nx, ny, nz] = v.dims();
    let r = radius as isize;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                let mut w = Vec::new();
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (a, b, c) = (x + dx, y + dy, z + dz);
                            if a >= 0 && b >= 0 && c >= 0 && a < nx as isize && b < ny as isize && c < nz as isize {
                                w.push(v.get(a as usize, b as usize, c as usize));
                            }
                        }
                    }
                }
                let w = sorted(&w);
                out.push(w[w.len().div_ceil(2) - 1]);
            }
        }
    }
    out
}

/// 1 + #smaller + (#equal - 1) / 2.
pub fn rank_oracle(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&w| w < v).count();
            let equal = values.iter().filter(|&&w| w == v).count();
            1.0 + less as f64 + (equal as f64 - 1.0) / 2.0
        })
        .collect()
}

pub fn archetype_oracle(sets: &[AnchorSet]) -> usize {
    let n = sets.len();
    let ranks: Vec<Vec<f64>> = Tissue::ANCHORS
        .iter()
        .map(|&t| rank_oracle(&sets.iter().map(|s| s.value(t)).collect::<Vec<_>>()))
        .collect();
    let middle = (n as f64 + 1.0) / 2.0;
    let score = |k: usize| ranks.iter().map(|r| r[k]).sum::<f64>() / 4.0;
    let mut best = 0;
    for i in 1..n {
        let (di, db) = ((score(i) - middle).abs(), (score(best) - middle).abs());
        if di < db || (di == db && sets[i].subject_id < sets[best].subject_id) {
            best = i;
        }
    }
    best
}

pub fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    a.iter()
        .chain(b)
        .map(|&x| {
            let ca = a.iter().filter(|&&v| v <= x).count();
            let cb = b.iter().filter(|&&v| v <= x).count();
            (ca as f64 / na - cb as f64 / nb).abs()
        })
        .fold(0.0, f64::max)
}

pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (&p, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (&q, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            pairs += 1.0;
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn random_volume(r: &mut ChaCha8Rng, dims: [usize; 3], levels: u32) -> Volume {
    let g = Geometry::new(dims, [1.0; 3]).unwrap();
    let n = g.n_voxels();
    Volume::new(g, (0..n).map(|_| r.random_range(0..levels) as f32).collect(), "").unwrap()
}

pub fn random_anchor_sets(r: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<AnchorSet> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(r);
    ids.into_iter()
        .map(|id| AnchorSet {
            subject_id: format!("s{id:03}"),
            v_air: r.random_range(0..levels) as f64,
            v_fat: r.random_range(0..levels) as f64,
            v_dense: r.random_range(0..levels) as f64,
            v_heart: r.random_range(0..levels) as f64,
            counts: AnchorCounts {
                air: 1,
                fat: 1,
                dense: 1,
                heart: 1,
            },
        })
        .collect()
}

fn mismatch<T: std::fmt::Debug>(what: &str, got: T, want: T) -> String {
    format!("{what}: got {got:?}, oracle {want:?}")
}

/// Includes the 10^4-voxel sample at q = 5, 50 and 90.
pub fn check_percentile(seed: u64) -> Check {
    let mut r = rng(seed);
    let values: Vec<f32> = (0..10_000).map(|_| r.random_range(-500.0..500.0)).collect();
    for q in [5, 50, 90] {
        let (got, want) = (percentile(&values, q as f64).unwrap(), percentile_oracle(&values, q));
        if got != want {
            return Err(mismatch(&format!("n 10000 q {q}"), got, want));
        }
    }
    for _ in 0..INSTANCES * 5 {
        let n = r.random_range(1..300);
        // few levels, so ties are common
        let values: Vec<f32> = (0..n).map(|_| r.random_range(0..20) as f32).collect();
        let q = r.random_range(0..=100usize);
        let (got, want) = (percentile(&values, q as f64).unwrap(), percentile_oracle(&values, q));
        if got != want {
            return Err(mismatch(&format!("n {n} q {q}"), got, want));
        }
    }
    Ok(3 + INSTANCES * 5)
}

/// Includes one 8x8x8 volume at radius 1.
pub fn check_median_filter(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut cases = vec![([8, 8, 8], 1, 1000)];
    for _ in 0..INSTANCES {
        cases.push(([r.random_range(1..7), r.random_range(1..7), r.random_range(1..5)], r.random_range(1..3), 10));
    }
    for &(dims, radius, levels) in &cases {
        let v = random_volume(&mut r, dims, levels);
        let got = median_filter(&v, radius).unwrap();
        if got.data() != median_filter_oracle(&v, radius).as_slice() {
            return Err(format!("median filter differs for dims {dims:?} radius {radius}"));
        }
    }
    Ok(cases.len())
}

pub fn check_ranks(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut samples = vec![(0..50).map(|_| r.random_range(0.0..1.0)).collect::<Vec<f64>>()];
    for _ in 0..INSTANCES {
        let n = r.random_range(1..60);
        samples.push((0..n).map(|_| r.random_range(0..12) as f64).collect());
    }
    for values in &samples {
        let (got, want) = (fractional_ranks(values), rank_oracle(values));
        if got != want {
            return Err(mismatch("ranks", got, want));
        }
    }
    Ok(samples.len())
}

/// The first 25 instances have 25 subjects each.
pub fn check_archetype(seed: u64) -> Check {
    let mut r = rng(seed);
    for k in 0..INSTANCES {
        let n = if k < 25 { 25 } else { r.random_range(1..30) };
        let levels = if k % 2 == 0 { 4 } else { 1000 };
        let sets = random_anchor_sets(&mut r, n, levels);
        let (got, want) = (select_archetype(&sets).unwrap(), archetype_oracle(&sets));
        if got != want {
            return Err(mismatch(&format!("archetype, instance {k}"), got, want));
        }
    }
    Ok(INSTANCES)
}

pub fn check_ks(seed: u64) -> Check {
    let mut r = rng(seed);
    for _ in 0..INSTANCES {
        let (na, nb) = (r.random_range(1..80), r.random_range(1..80));
        let levels = r.random_range(2..50);
        let a: Vec<f64> = (0..na).map(|_| r.random_range(0..levels) as f64).collect();
        let b: Vec<f64> = (0..nb).map(|_| r.random_range(0..levels) as f64 + 0.5).collect();
        let c: Vec<f64> = (0..nb).map(|_| r.random_range(0..levels) as f64).collect();
        for other in [&b, &c] {
            let (got, want) = (ks_statistic(&a, other).unwrap(), ks_oracle(&a, other));
            if got != want {
                return Err(mismatch("KS", got, want));
            }
        }
    }
    Ok(2 * INSTANCES)
}

/// Includes one 200-sample instance; tolerance 1e-12.
pub fn check_auc(seed: u64) -> Check {
    let mut r = rng(seed);
    for k in 0..INSTANCES {
        let n = if k == 0 { 200 } else { r.random_range(2..200) };
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = if k % 2 == 0 { 5 } else { 100_000 };
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / 7.0).collect();
        let (got, want) = (roc_auc(&scores, &labels).unwrap(), auc_oracle(&scores, &labels));
        if (got - want).abs() > 1e-12 {
            return Err(mismatch("AUC", got, want));
        }
    }
    Ok(INSTANCES)
}
