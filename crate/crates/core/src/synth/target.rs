use rand::Rng;

use super::decay_rate;
use crate::dsp::{AcousticParams, Measures};
use crate::params::default_grids;

/// Decay curve of a tail whose first 10 dB of total decay (direct sound
/// carrying `direct` of the energy included) follow the EDT slope and the
/// rest the T30 slope.
fn tail_edc(edt_s: f64, t30_s: f64, direct: f64, tau: f64) -> f64 {
    let ke = decay_rate(edt_s);
    let at_knee = (0.1 / (1.0 - direct)).min(1.0);
    let knee = -at_knee.ln() / ke;
    if tau < knee {
        (-ke * tau).exp()
    } else {
        at_knee * (-decay_rate(t30_s) * (tau - knee)).exp()
    }
}

/// D50 (%) and C80 (dB) of a two-slope tail whose direct sound carries
/// `direct_fraction` of the total energy.
pub fn natural_clarity(edt_s: f64, t30_s: f64, direct_fraction: f64) -> (f64, f64) {
    let f = direct_fraction.clamp(0.0, 0.999);
    let d = f + (1.0 - f) * (1.0 - tail_edc(edt_s, t30_s, f, 0.05));
    let late = (1.0 - f) * tail_edc(edt_s, t30_s, f, 0.08);
    (100.0 * d, 10.0 * ((1.0 - late) / late).log10())
}

/// Direct fraction whose natural D50 equals `d50_pct`, by bisection.
fn direct_for_d50(edt_s: f64, t30_s: f64, d50_pct: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.999);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if natural_clarity(edt_s, t30_s, mid).0 < d50_pct {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draw a physically consistent target made of grid bin centers.
///
/// T30 and SRD classes are uniform. EDT takes a class at or below T30 but
/// no shorter than 0.8 T30, and T15 equals T30. D50 is the class holding
/// the natural value for a direct-sound share drawn from [0, 0.7]; C80 is
/// the class holding the natural value at that D50 class center, raised
/// where needed so that C80 >= D50/(1 - D50) in linear terms. Draws whose
/// natural D50 or C80 fall outside the grid ranges are redrawn, since the
/// slopes could not produce the clipped values. All bands share the
/// broadband values.
pub fn coherent_grid_target(rng: &mut impl Rng) -> AcousticParams {
    let g = default_grids();
    let center = |grid: &crate::params::ClassGrid, k: usize| grid.dequantize(k).expect("class in range");

    loop {
        let jt = rng.random_range(0..g.t30.num_classes);
        let t30 = center(&g.t30, jt);
        let edt_classes: Vec<usize> = (0..=jt).filter(|&j| center(&g.edt, j) >= 0.8 * t30).collect();
        let edt = center(&g.edt, edt_classes[rng.random_range(0..edt_classes.len())]);
        let srd = center(&g.srd, rng.random_range(0..g.srd.num_classes));

        let direct = rng.random_range(0.0..0.7);
        let (d_nat, _) = natural_clarity(edt, t30, direct);
        if d_nat > g.d50.max {
            continue;
        }
        let d50 = center(&g.d50, g.d50.quantize(d_nat).expect("finite"));
        let (_, c_nat) = natural_clarity(edt, t30, direct_for_d50(edt, t30, d50));
        if !(g.c80.min..=g.c80.max).contains(&c_nat) {
            continue;
        }
        let dfrac = d50 / 100.0;
        let mut jc = g.c80.quantize(c_nat).expect("finite");
        while jc + 1 < g.c80.num_classes && 10f64.powf(center(&g.c80, jc) / 10.0) < dfrac / (1.0 - dfrac) {
            jc += 1;
        }
        let c80 = center(&g.c80, jc);
        return AcousticParams::uniform(Measures::new(t30, t30, edt, c80, d50), srd);
    }
}
