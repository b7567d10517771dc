//! Small numerical helpers shared across modules.

use statrs::function::erf;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(xs)))` with max-shift. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl LogSumExp {
    #[inline]
    pub fn add(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var
}

/// Standard normal CDF.
pub fn ndtr(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// `log Phi(z)`, accurate deep into the lower tail.
pub fn log_ndtr(z: f64) -> f64 {
    if z > -30.0 {
        if z > 0.0 {
            (-ndtr(-z)).ln_1p()
        } else {
            ndtr(z).ln()
        }
    } else {
        // asymptotic series for the Mills ratio
        let z2 = z * z;
        let inv = 1.0 / z2;
        let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv * (1.0 - 9.0 * inv))));
        -0.5 * z2 - (-z).ln() - 0.5 * LN_2PI + series.ln()
    }
}

/// Inverse of the standard normal CDF.
pub fn ndtri(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Inverse of `log_ndtr`: the `z` with `log Phi(z) = log_p`, for `log_p <= ln(0.5)`.
pub fn log_ndtr_inv(log_p: f64) -> f64 {
    if log_p > -680.0 {
        return ndtri(log_p.exp());
    }
    let mut z = -(-2.0 * log_p).sqrt();
    for _ in 0..50 {
        let lp = log_ndtr(z);
        // d/dz log Phi(z) = phi(z) / Phi(z)
        let slope = (-0.5 * z * z - 0.5 * LN_2PI - lp).exp();
        let step = (lp - log_p) / slope;
        z -= step;
        if step.abs() < 1e-14 * z.abs().max(1.0) {
            break;
        }
    }
    z
}
