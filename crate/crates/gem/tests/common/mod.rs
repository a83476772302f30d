//! Helpers shared by the integration tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Hartigan & Hartigan's dip statistic for unimodality (AS 217).
///
/// Works on a sorted sample. Deviations are tracked in observation counts
/// and divided by 2n at the end, so the minimum value 1/(2n) is attained
/// by perfectly spaced data and the two-equal-atoms case approaches 1/4.
pub fn dip_statistic(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "dip of an empty sample");
    assert!(
        sorted.windows(2).all(|w| w[0] <= w[1]),
        "dip_statistic expects sorted input"
    );
    if n < 4 || sorted[n - 1] == sorted[0] {
        return 1.0 / (2.0 * n as f64);
    }
    // 1-based indexing to keep the hull bookkeeping readable.
    let x = |i: usize| sorted[i - 1];

    // mn[j]: previous touch point of the greatest convex minorant at j.
    let mut mn = vec![0usize; n + 1];
    mn[1] = 1;
    for j in 2..=n {
        mn[j] = j - 1;
        loop {
            let mnj = mn[j];
            if mnj == 1 {
                break;
            }
            let mnmnj = mn[mnj];
            if (x(j) - x(mnj)) * ((mnj - mnmnj) as f64)
                < (x(mnj) - x(mnmnj)) * ((j - mnj) as f64)
            {
                break;
            }
            mn[j] = mnmnj;
        }
    }
    // mj[k]: next touch point of the least concave majorant at k.
    let mut mj = vec![0usize; n + 2];
    mj[n] = n;
    for k in (1..n).rev() {
        mj[k] = k + 1;
        loop {
            let mjk = mj[k];
            if mjk == n {
                break;
            }
            let mjmjk = mj[mjk];
            if (x(k) - x(mjk)) * (mjk as f64 - mjmjk as f64)
                < (x(mjk) - x(mjmjk)) * (k as f64 - mjk as f64)
            {
                break;
            }
            mj[k] = mjmjk;
        }
    }

    let mut low = 1usize;
    let mut high = n;
    let mut dip = 1.0f64;
    let mut gcm = vec![0usize; n + 2];
    let mut lcm = vec![0usize; n + 2];

    loop {
        if low >= high {
            break;
        }
        // Touch points of the minorant from high down to low, and of the
        // majorant from low up to high.
        gcm[1] = high;
        let mut i = 1;
        while gcm[i] > low {
            gcm[i + 1] = mn[gcm[i]];
            i += 1;
        }
        let l_gcm = i;
        lcm[1] = low;
        let mut i = 1;
        while lcm[i] < high {
            lcm[i + 1] = mj[lcm[i]];
            i += 1;
        }
        let l_lcm = i;

        let mut ig = l_gcm;
        let mut ih = l_lcm;
        let mut ix = l_gcm - 1;
        let mut iv = 2usize;
        // Largest distance between the minorant and the majorant on
        // [low, high], swept from low to high.
        let mut d = 0.0f64;
        if l_gcm != 2 || l_lcm != 2 {
            loop {
                let gcmix = gcm[ix];
                let lcmiv = lcm[iv];
                if gcmix > lcmiv {
                    // next event is a majorant touch point
                    let gcmi1 = gcm[ix + 1];
                    let dx = (lcmiv - gcmi1 + 1) as f64
                        - (x(lcmiv) - x(gcmi1)) * (gcmix - gcmi1) as f64
                            / (x(gcmix) - x(gcmi1));
                    iv += 1;
                    if dx >= d {
                        d = dx;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    // next event is a minorant touch point
                    let lcmiv1 = lcm[iv - 1];
                    let dx = (x(gcmix) - x(lcmiv1)) * (lcmiv - lcmiv1) as f64
                        / (x(lcmiv) - x(lcmiv1))
                        - (gcmix as f64 - lcmiv1 as f64 - 1.0);
                    ix -= 1;
                    if dx > d {
                        d = dx;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                if ix < 1 {
                    ix = 1;
                }
                if iv > l_lcm {
                    iv = l_lcm;
                }
                if gcm[ix] == lcm[iv] {
                    break;
                }
            }
        } else {
            d = 1.0;
        }
        if d < dip {
            break;
        }

        // Deviations inside the stretches that are about to be discarded.
        let mut dip_l = 0.0f64;
        for j in ig..l_gcm {
            let jend = gcm[j];
            let jb = gcm[j + 1];
            let mut max_t = 1.0f64;
            if jend - jb > 1 && x(jend) != x(jb) {
                let c = (jend - jb) as f64 / (x(jend) - x(jb));
                for jj in jb..=jend {
                    let t = (jj - jb + 1) as f64 - (x(jj) - x(jb)) * c;
                    if t > max_t {
                        max_t = t;
                    }
                }
            }
            if max_t > dip_l {
                dip_l = max_t;
            }
        }
        let mut dip_u = 0.0f64;
        for j in ih..l_lcm {
            let jb = lcm[j];
            let jend = lcm[j + 1];
            let mut max_t = 1.0f64;
            if jend - jb > 1 && x(jend) != x(jb) {
                let c = (jend - jb) as f64 / (x(jend) - x(jb));
                for jj in jb..=jend {
                    let t = (x(jj) - x(jb)) * c - (jj as f64 - jb as f64 - 1.0);
                    if t > max_t {
                        max_t = t;
                    }
                }
            }
            if max_t > dip_u {
                dip_u = max_t;
            }
        }

        dip = dip.max(dip_l).max(dip_u);
        low = gcm[ig];
        high = lcm[ih];
        if dip >= d {
            break;
        }
    }
    dip / (2.0 * n as f64)
}

/// Dip of an unsorted sample.
pub fn dip_of(sample: &[f64]) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dip_statistic(&v)
}

/// Monte Carlo p-value of the dip against the uniform null: the fraction
/// of uniform samples of the same size whose dip reaches the observed
/// one, with the +1 correction so the p-value is never exactly zero.
pub fn dip_pvalue_uniform(observed_dip: f64, n: usize, reps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut draw = vec![0.0f64; n];
    for _ in 0..reps {
        for v in draw.iter_mut() {
            *v = rng.random::<f64>();
        }
        draw.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if dip_statistic(&draw) >= observed_dip {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (reps + 1) as f64
}

#[cfg(test)]
mod dip_checks {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn equally_spaced_points_attain_the_floor() {
        assert_eq!(dip_of(&[1.0, 2.0, 3.0, 4.0]), 0.125);
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!((dip_of(&xs) - 1.0 / 200.0).abs() < 1e-12);
    }

    #[test]
    fn two_equal_atoms_approach_one_quarter() {
        let mut xs = vec![0.0; 500];
        xs.extend(vec![1.0; 500]);
        let d = dip_of(&xs);
        assert!(d > 0.2 && d <= 0.25, "dip {d}");
    }

    #[test]
    fn unimodal_samples_stay_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let unif: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let d = dip_of(&unif);
        assert!(d < 0.01, "uniform dip {d}");
        let gauss: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = dip_of(&gauss);
        assert!(d < 0.01, "gaussian dip {d}");
    }

    #[test]
    fn separated_modes_dominate_the_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let c = if rng.random::<f64>() < 0.5 { -0.55 } else { 0.55 };
                c + 0.1 * z
            })
            .collect();
        let d = dip_of(&xs);
        assert!(d > 0.05, "bimodal dip {d}");
        let p = dip_pvalue_uniform(d, 10_000, 200, 11);
        assert!(p < 0.01, "p {p}");
    }

    #[test]
    fn dip_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let base = dip_of(&xs);
        let moved: Vec<f64> = xs.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!((dip_of(&moved) - base).abs() < 1e-12);
    }
}
