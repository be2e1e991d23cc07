//! Excitation and reference signals.

use std::f64::consts::PI;

use nalgebra::DVector;

/// Linear-frequency chirp `ψ sin(2π((c/2)t² + f₀t))`, `c = (f₁ − f₀)/T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chirp {
    pub amplitude: f64,
    pub f0: f64,
    pub f1: f64,
    pub duration: f64,
}

impl Chirp {
    pub fn rate(&self) -> f64 {
        (self.f1 - self.f0) / self.duration
    }

    pub fn eval(&self, t: f64) -> f64 {
        let c = self.rate();
        self.amplitude * (2.0 * PI * (0.5 * c * t * t + self.f0 * t)).sin()
    }
}

pub fn chirp_input(amplitude: f64, f0: f64, f1: f64, duration: f64) -> Chirp {
    assert!(duration > 0.0, "chirp duration must be positive");
    Chirp {
        amplitude,
        f0,
        f1,
        duration,
    }
}

/// Square wave: `+amplitude` for the first half of each period, `−amplitude`
/// for the second, zero from `duration` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Doublet {
    pub amplitude: f64,
    pub period: f64,
    pub duration: f64,
}

impl Doublet {
    pub fn eval(&self, t: f64) -> f64 {
        if t < 0.0 || t >= self.duration {
            return 0.0;
        }
        let phase = (t / self.period).fract();
        if phase < 0.5 {
            self.amplitude
        } else {
            -self.amplitude
        }
    }
}

/// Vector-valued doublet: the square wave on `channel` of a `dim`-vector.
pub fn doublet_input(
    amplitude: f64,
    period: f64,
    channel: usize,
    dim: usize,
    duration: f64,
) -> impl Fn(f64) -> DVector<f64> + Clone {
    assert!(period > 0.0, "doublet period must be positive");
    let d = Doublet {
        amplitude,
        period,
        duration,
    };
    on_channel(dim, channel, move |t| d.eval(t))
}

/// Sum of zero-phase cosines `Σ aᵢ cos(2π fᵢ t)` given `(aᵢ, fᵢ)` pairs in Hz.
///
/// Zero phase keeps the response of a pure double integrator bounded.
pub fn multisine(components: Vec<(f64, f64)>) -> impl Fn(f64) -> f64 + Clone {
    move |t| {
        components
            .iter()
            .map(|&(a, f)| a * (2.0 * PI * f * t).cos())
            .sum()
    }
}

/// Places a scalar signal on one channel of a `dim`-vector.
pub fn on_channel(
    dim: usize,
    channel: usize,
    f: impl Fn(f64) -> f64 + Clone,
) -> impl Fn(f64) -> DVector<f64> + Clone {
    assert!(channel < dim, "channel {channel} out of range for dimension {dim}");
    move |t| {
        let mut v = DVector::zeros(dim);
        v[channel] = f(t);
        v
    }
}
