//! Branch-free sine/cosine for the wavenumber-by-time inner loops.
//!
//! Cody-Waite reduction by pi/2 followed by the fdlibm minimax kernels. Written
//! without data-dependent branches so that the batch routine vectorizes. Valid
//! for |x| < 2^20 pi/2; larger arguments fall back to the standard library.

use std::f64::consts::FRAC_2_PI;

const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e+00;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_2T: f64 = 2.022_266_248_795_950_631_54e-21;

const S1: f64 = -1.666_666_666_666_663_243_48e-01;
const S2: f64 = 8.333_333_333_322_489_461_24e-03;
const S3: f64 = -1.984_126_982_985_794_931_34e-04;
const S4: f64 = 2.755_731_370_707_006_767_89e-06;
const S5: f64 = -2.505_076_025_340_686_341_95e-08;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-02;
const C2: f64 = -1.388_888_888_887_410_957_49e-03;
const C3: f64 = 2.480_158_728_947_672_941_78e-05;
const C4: f64 = -2.755_731_435_139_066_330_35e-07;
const C5: f64 = 2.087_572_321_298_174_827_90e-09;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

pub const REDUCTION_LIMIT: f64 = 1.0e6;

/// `(sin x, cos x)` for |x| below [`REDUCTION_LIMIT`].
#[inline(always)]
pub fn sincos_reduced(x: f64) -> (f64, f64) {
    let shifted = x * FRAC_2_PI + SHIFTER;
    let quadrant = shifted.to_bits();
    let n = shifted - SHIFTER;
    let r = ((x - n * PIO2_1) - n * PIO2_2) - n * PIO2_2T;

    let z = r * r;
    let sp = S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)));
    let sin_r = r + r * z * (S1 + z * sp);
    let cp = z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    let cos_r = w + (((1.0 - w) - hz) + z * cp);

    let swap = 0u64.wrapping_sub(quadrant & 1);
    let (sb, cb) = (sin_r.to_bits(), cos_r.to_bits());
    let s = (sb & !swap) | (cb & swap);
    let c = (cb & !swap) | (sb & swap);
    let s_sign = (quadrant & 2) << 62;
    let c_sign = (quadrant.wrapping_add(1) & 2) << 62;
    (f64::from_bits(s ^ s_sign), f64::from_bits(c ^ c_sign))
}

/// `(sin x, cos x)` for any finite x.
#[inline]
pub fn sincos(x: f64) -> (f64, f64) {
    if x.abs() < REDUCTION_LIMIT {
        sincos_reduced(x)
    } else {
        x.sin_cos()
    }
}

/// Fill `sin_out`/`cos_out` with sin/cos of `phases`. All three slices must
/// have the same length.
pub fn sincos_batch(phases: &[f64], sin_out: &mut [f64], cos_out: &mut [f64]) {
    assert_eq!(phases.len(), sin_out.len());
    assert_eq!(phases.len(), cos_out.len());
    let in_range = phases.iter().all(|p| p.abs() < REDUCTION_LIMIT);
    if in_range {
        for ((p, s), c) in phases.iter().zip(sin_out.iter_mut()).zip(cos_out.iter_mut()) {
            let (sv, cv) = sincos_reduced(*p);
            *s = sv;
            *c = cv;
        }
    } else {
        for ((p, s), c) in phases.iter().zip(sin_out.iter_mut()).zip(cos_out.iter_mut()) {
            let (sv, cv) = p.sin_cos();
            *s = sv;
            *c = cv;
        }
    }
}
