use rand::Rng;
use rand_distr::{Distribution, Exp1};

/// Univariate slice sampler settings (stepping out, then shrinkage).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceSettings {
    pub width: f64,
    /// Cap on stepping-out steps and on shrinkage proposals.
    pub max_steps: usize,
}

impl SliceSettings {
    /// Shape parameters, sampled on the log scale.
    pub fn log_shape() -> Self {
        Self { width: 1.0, max_steps: 100 }
    }

    /// Degrees of freedom `nu`, sampled on the natural scale.
    pub fn nu() -> Self {
        Self { width: 8.0, max_steps: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceDraw {
    pub value: f64,
    /// No point of the slice was found; `value` is the starting point.
    pub bracket_failed: bool,
}

/// One slice-sampling transition from `x0` for the log density `log_f`.
pub fn slice_sample<R, F>(x0: f64, log_f: F, settings: &SliceSettings, rng: &mut R) -> SliceDraw
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let f0 = log_f(x0);
    if !f0.is_finite() {
        return SliceDraw { value: x0, bracket_failed: true };
    }
    let e: f64 = Exp1.sample(rng);
    let level = f0 - e;
    let w = settings.width;

    let mut lo = x0 - w * rng.random::<f64>();
    let mut hi = lo + w;
    let j = (settings.max_steps as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = settings.max_steps.saturating_sub(1).saturating_sub(j);
    let mut j = j;
    while j > 0 && log_f(lo) > level {
        lo -= w;
        j -= 1;
    }
    while k > 0 && log_f(hi) > level {
        hi += w;
        k -= 1;
    }

    for _ in 0..settings.max_steps {
        let x1 = lo + (hi - lo) * rng.random::<f64>();
        if log_f(x1) >= level {
            return SliceDraw { value: x1, bracket_failed: false };
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
    SliceDraw { value: x0, bracket_failed: true }
}
