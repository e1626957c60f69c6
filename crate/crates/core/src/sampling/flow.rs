use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SamplingError;
use crate::codec::LatentSequence;
use crate::params::QuantizedParams;

/// Velocity field over latent sequences.
pub trait VelocityModel: Sync {
    fn velocity(&self, x: &LatentSequence, t: f64, condition: Option<&QuantizedParams>)
        -> Result<LatentSequence, SamplingError>;
}

/// Standard-normal latent of the given shape.
pub fn gaussian_latent(frames: usize, frame_len: usize, rng: &mut impl Rng) -> LatentSequence {
    LatentSequence {
        frame_len,
        frames: (0..frames).map(|_| (0..frame_len).map(|_| StandardNormal.sample(rng)).collect()).collect(),
    }
}

/// Fixed-step Euler integration from t = 0 to 1:
/// `x_{i+1} = x_i + v(x_i, i/steps) / steps`. With a condition and a
/// nonzero `cfg_weight` the velocity is `(1 + w) v_cond - w v_uncond`.
pub fn euler_sample(
    model: &dyn VelocityModel,
    x0: LatentSequence,
    condition: Option<&QuantizedParams>,
    steps: usize,
    cfg_weight: f64,
) -> Result<LatentSequence, SamplingError> {
    if steps == 0 {
        return Err(SamplingError::Config("euler sampler needs at least one step".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = x0;
    for i in 0..steps {
        let t = i as f64 * h;
        let fail = |e: SamplingError| SamplingError::Model { step: i, message: e.to_string() };
        let v = model.velocity(&x, t, condition).map_err(fail)?;
        let u = match condition {
            Some(_) if cfg_weight != 0.0 => Some(model.velocity(&x, t, None).map_err(fail)?),
            _ => None,
        };
        if v.frames.len() != x.frames.len() {
            return Err(fail(SamplingError::Shape(format!(
                "velocity has {} frames, latent {}",
                v.frames.len(),
                x.frames.len()
            ))));
        }
        for (f, (xf, vf)) in x.frames.iter_mut().zip(&v.frames).enumerate() {
            if vf.len() != xf.len() {
                return Err(fail(SamplingError::Shape(format!("velocity frame {f} has the wrong length"))));
            }
            let uf = u.as_ref().and_then(|u| u.frames.get(f));
            for (j, (xv, vv)) in xf.iter_mut().zip(vf).enumerate() {
                let vel = match uf {
                    Some(uf) => (1.0 + cfg_weight) * vv - cfg_weight * uf.get(j).copied().unwrap_or(f64::NAN),
                    None => *vv,
                };
                if !vel.is_finite() {
                    return Err(SamplingError::Divergence { step: i });
                }
                *xv += h * vel;
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{OracleVelocity, ScaledVelocity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Constant(f64);

    impl VelocityModel for Constant {
        fn velocity(&self, x: &LatentSequence, _t: f64, _c: Option<&QuantizedParams>) -> Result<LatentSequence, SamplingError> {
            Ok(LatentSequence { frame_len: x.frame_len, frames: vec![vec![self.0; x.frame_len]; x.frames.len()] })
        }
    }

    fn scalar(v: f64) -> LatentSequence {
        LatentSequence { frame_len: 1, frames: vec![vec![v]] }
    }

    #[test]
    fn constant_field_is_exact() {
        for steps in [1, 3, 8, 25] {
            let x = euler_sample(&Constant(0.5), scalar(0.25), None, steps, 0.0).unwrap();
            assert!((x.frames[0][0] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_field_matches_recurrence() {
        let x = euler_sample(&ScaledVelocity { gain: -1.0 }, scalar(1.0), None, 25, 0.0).unwrap();
        let got = x.frames[0][0];
        assert!((got - 0.96f64.powi(25)).abs() < 1e-12);
        assert!((got - 0.3604).abs() < 1e-4);
    }

    #[test]
    fn error_halves_when_steps_double() {
        let err = |steps| {
            let x = euler_sample(&ScaledVelocity { gain: -1.0 }, scalar(1.0), None, steps, 0.0).unwrap();
            (x.frames[0][0] - (-1f64).exp()).abs()
        };
        let (e25, e50) = (err(25), err(50));
        assert!((e25 - 0.0075).abs() < 2e-4, "{e25}");
        let ratio = e25 / e50;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn oracle_field_lands_on_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = gaussian_latent(5, 16, &mut rng);
        let x0 = gaussian_latent(5, 16, &mut rng);
        let x = euler_sample(&OracleVelocity { target: target.clone() }, x0, None, 25, 0.0).unwrap();
        for (a, b) in x.frames.iter().flatten().zip(target.frames.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_velocity_is_divergence() {
        let r = euler_sample(&Constant(f64::NAN), scalar(0.0), None, 4, 0.0);
        assert!(matches!(r, Err(SamplingError::Divergence { step: 0 })));
    }
}
