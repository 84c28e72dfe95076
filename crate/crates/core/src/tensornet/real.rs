use std::fmt::Debug;
use std::ops::{Add, Mul, Sub};

/// Scalar type for inference kernels.
///
/// `madd` is the only accumulation primitive the dense kernels use, so any
/// two code paths that accumulate in the same order agree bit-for-bit.
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
{
    const ZERO: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// `self + a * b`
    fn madd(self, a: Self, b: Self) -> Self;
    fn tanh_act(self) -> Self;
    fn elu_act(self) -> Self;

    /// In-place `tanh_act` over a slice.
    #[inline(always)]
    fn tanh_slice(xs: &mut [Self]) {
        xs.iter_mut().for_each(|v| *v = v.tanh_act());
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline(always)]
    fn madd(self, a: Self, b: Self) -> Self {
        self + a * b
    }

    #[inline(always)]
    fn tanh_act(self) -> Self {
        self.tanh()
    }

    #[inline(always)]
    fn elu_act(self) -> Self {
        if self > 0.0 {
            self
        } else {
            self.exp_m1()
        }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn madd(self, a: Self, b: Self) -> Self {
        #[cfg(target_feature = "fma")]
        {
            a.mul_add(b, self)
        }
        #[cfg(not(target_feature = "fma"))]
        {
            self + a * b
        }
    }

    #[inline(always)]
    fn tanh_act(self) -> Self {
        fast_tanh_f32(self)
    }

    #[inline(always)]
    fn tanh_slice(xs: &mut [Self]) {
        #[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
        {
            simd::tanh_slice(xs)
        }
        #[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
        {
            xs.iter_mut().for_each(|v| *v = fast_tanh_f32(*v));
        }
    }

    #[inline(always)]
    fn elu_act(self) -> Self {
        if self > 0.0 {
            self
        } else {
            self.exp_m1()
        }
    }
}

const TANH_CLAMP: f32 = 7.905_311;
/// Odd numerator coefficients, highest power first.
const TANH_P: [f32; 7] = [
    -2.760_768_5e-16,
    2.000_188e-13,
    -8.604_672e-11,
    5.122_297e-8,
    1.485_722_4e-5,
    6.372_619_3e-4,
    4.893_524_6e-3,
];
const TANH_Q: [f32; 4] = [1.198_258_4e-6, 1.185_347e-4, 2.268_434_6e-3, 4.893_525_2e-3];

/// Branch-free rational tanh for single precision, accurate to a few ulp.
/// Written so the batch loops around it auto-vectorize.
#[inline(always)]
pub fn fast_tanh_f32(x: f32) -> f32 {
    let x = x.clamp(-TANH_CLAMP, TANH_CLAMP);
    let x2 = x * x;
    let mut p = TANH_P[0];
    for &c in &TANH_P[1..] {
        p = c.madd(p, x2);
    }
    p *= x;
    let mut q = TANH_Q[0];
    for &c in &TANH_Q[1..] {
        q = c.madd(q, x2);
    }
    p / q
}

#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod simd {
    use super::{TANH_CLAMP, TANH_P, TANH_Q};
    use std::arch::x86_64::*;

    /// Same rational as the scalar path; the division becomes `rcp14` plus
    /// one Newton step (relative error near 1e-7).
    #[inline(always)]
    pub fn tanh_slice(xs: &mut [f32]) {
        let mut chunks = xs.chunks_exact_mut(16);
        for c in &mut chunks {
            // SAFETY: avx512f is enabled for this build and `c` holds 16 floats.
            unsafe {
                let v = _mm512_loadu_ps(c.as_ptr());
                _mm512_storeu_ps(c.as_mut_ptr(), tanh16(v));
            }
        }
        for v in chunks.into_remainder() {
            *v = super::fast_tanh_f32(*v);
        }
    }

    #[inline(always)]
    unsafe fn tanh16(x: __m512) -> __m512 {
        let lim = _mm512_set1_ps(TANH_CLAMP);
        let x = _mm512_max_ps(_mm512_min_ps(x, lim), _mm512_sub_ps(_mm512_setzero_ps(), lim));
        let x2 = _mm512_mul_ps(x, x);
        let mut p = _mm512_set1_ps(TANH_P[0]);
        for &c in &TANH_P[1..] {
            p = _mm512_fmadd_ps(p, x2, _mm512_set1_ps(c));
        }
        p = _mm512_mul_ps(p, x);
        let mut q = _mm512_set1_ps(TANH_Q[0]);
        for &c in &TANH_Q[1..] {
            q = _mm512_fmadd_ps(q, x2, _mm512_set1_ps(c));
        }
        let r = _mm512_rcp14_ps(q);
        let e = _mm512_fnmadd_ps(q, r, _mm512_set1_ps(1.0));
        let r = _mm512_fmadd_ps(r, e, r);
        _mm512_mul_ps(p, r)
    }
}
