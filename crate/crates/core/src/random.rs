//! Seeded random test fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::{GridFunction, Grids};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nodal standard normal values on levels `1..=N_t`, zero at level 0.
pub fn normal_field(grids: &Grids, rng: &mut ChaCha8Rng) -> GridFunction {
    let mut v = GridFunction::zeros(grids);
    let n = grids.space.interior_len();
    for x in &mut v.values_mut()[n..] {
        *x = rng.sample(StandardNormal);
    }
    v
}

/// One damped Jacobi pass in space and time: each value is replaced by the
/// mean of itself and the average of its existing neighbours.
pub fn jacobi_smooth(grids: &Grids, v: &GridFunction) -> GridFunction {
    let space = &grids.space;
    let [mx, my] = space.interior_dims();
    let n = space.interior_len();
    let levels = grids.levels();
    let mut out = v.clone();
    for k in 1..levels {
        for idx in 0..n {
            let (i, j) = space.unflatten(idx);
            let mut sum = 0.0;
            let mut cnt = 0.0;
            let mut add = |s: f64| {
                sum += s;
                cnt += 1.0;
            };
            if i > 0 {
                add(v.get(idx - 1, k));
            }
            if i + 1 < mx {
                add(v.get(idx + 1, k));
            }
            if space.dim() == 2 {
                if j > 0 {
                    add(v.get(idx - mx, k));
                }
                if j + 1 < my {
                    add(v.get(idx + mx, k));
                }
            }
            if k > 1 {
                add(v.get(idx, k - 1));
            }
            if k + 1 < levels {
                add(v.get(idx, k + 1));
            }
            let avg = if cnt > 0.0 { sum / cnt } else { 0.0 };
            out.set(idx, k, 0.5 * (v.get(idx, k) + avg));
        }
    }
    out
}

/// Smoothed normal field scaled to unit `L²(Q)` norm.
pub fn smooth_unit_field(grids: &Grids, rng: &mut ChaCha8Rng) -> GridFunction {
    let v = jacobi_smooth(grids, &normal_field(grids, rng));
    let norm = grids.lp_norm(&v, 2.0).expect("shape matches");
    v.scaled(1.0 / norm)
}
