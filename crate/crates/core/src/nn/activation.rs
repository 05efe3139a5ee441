//! Slice-wise sigmoid and tanh.
//!
//! The `f32` versions use a branch-free exponential that the compiler can
//! vectorise; the LSTM spends most of its forward time here. The `f64`
//! versions call the standard library and serve as the reference.

const LOG2E: f32 = std::f32::consts::LOG2_E;
// ln 2 split so that n * LN2_HI is exact for |n| < 2^9.
const LN2_HI: f32 = 0.693_145_75;
const LN2_LO: f32 = 1.428_606_8e-6;
// 1.5 * 2^23: adding and subtracting rounds to the nearest integer.
const ROUND_MAGIC: f32 = 12_582_912.0;

/// `exp(x)` for `x` clamped to `[-87, 88]`, within a few ulp.
#[inline(always)]
pub(crate) fn exp_f32(x: f32) -> f32 {
    let x = x.max(-87.0).min(88.0);
    let shifted = x * LOG2E + ROUND_MAGIC;
    let n = shifted - ROUND_MAGIC;
    let r = x - n * LN2_HI - n * LN2_LO;
    // Taylor series to r^7; |r| <= ln2 / 2.
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0)))))));
    // The low mantissa bits of `shifted` hold n; an `as i32` cast would not
    // vectorise.
    let n_bits = shifted.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    let scale = f32::from_bits(n_bits.wrapping_add(127) << 23);
    p * scale
}

#[inline(always)]
fn sigmoid_body(xs: &mut [f32]) {
    for x in xs {
        *x = 1.0 / (1.0 + exp_f32(-*x));
    }
}

#[inline(always)]
fn tanh_body(xs: &mut [f32]) {
    for x in xs {
        *x = 1.0 - 2.0 / (1.0 + exp_f32(2.0 * *x));
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn sigmoid_avx2(xs: &mut [f32]) {
    sigmoid_body(xs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tanh_avx2(xs: &mut [f32]) {
    tanh_body(xs)
}

pub(crate) fn has_avx2_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

pub(crate) fn sigmoid_f32(xs: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the features were just detected.
        return unsafe { sigmoid_avx2(xs) };
    }
    sigmoid_body(xs)
}

pub(crate) fn tanh_f32(xs: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2_fma() {
        // SAFETY: the features were just detected.
        return unsafe { tanh_avx2(xs) };
    }
    tanh_body(xs)
}

pub(crate) fn sigmoid_f64(xs: &mut [f64]) {
    for x in xs {
        *x = if *x >= 0.0 {
            1.0 / (1.0 + (-*x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
    }
}

pub(crate) fn tanh_f64(xs: &mut [f64]) {
    for x in xs {
        *x = x.tanh();
    }
}
