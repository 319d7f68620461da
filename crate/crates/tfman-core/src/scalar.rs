use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of tensors.
///
/// Training and inference buffers use `f32`; gradient checks and the
/// hand-written oracles run the same code in `f64` so central differences
/// stay sharp.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + Sum
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + SubAssign
    + Mul<Output = Self>
    + MulAssign
    + Div<Output = Self>
    + DivAssign
    + Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// `exp` for throughput-bound inner loops (softmax). The `f32`
    /// implementation is a vectorizable polynomial accurate to about 1e-6
    /// relative over the softmax input range; `f64` (the
    /// oracle and gradient-check precision) stays on the libm call.
    #[inline]
    fn exp_fast(self) -> Self {
        self.exp()
    }
}

/// Branch-free exp2-based approximation: split `x = n + f` with
/// `f in [-0.5, 0.5]`, evaluate a degree-6 polynomial for `2^f` and apply
/// the integer exponent through the float's bit layout. Worst relative
/// error is about 1e-6.
#[inline]
fn exp_fast_f32(x: f32) -> f32 {
    const LOG2_E: f32 = std::f32::consts::LOG2_E;
    // exp(x) = 2^(x * log2(e)); clamp to the finite range of f32.
    let t = (x * LOG2_E).clamp(-126.0, 127.0);
    let n = t.round();
    let f = t - n;
    // 2^f on [-0.5, 0.5]: Taylor-like fit in ln(2) powers; max relative
    // error is about 1e-7.
    const LN2: f32 = std::f32::consts::LN_2;
    let w = f * LN2;
    let p = 1.0
        + w * (1.0
            + w * (0.5 + w * (1.0 / 6.0 + w * (1.0 / 24.0 + w * (1.0 / 120.0 + w / 720.0)))));
    // Multiply by 2^n via exponent bits.
    let bits = (((n as i32) + 127) as u32) << 23;
    let scale = f32::from_bits(bits);
    let r = p * scale;
    if x < -87.0 {
        0.0
    } else {
        r
    }
}

macro_rules! impl_scalar {
    ($t:ty $(, $exp_fast:item)?) => {
        impl Scalar for $t {
            $($exp_fast)?
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
            #[inline]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline]
            fn min(self, other: Self) -> Self {
                <$t>::min(self, other)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(
    f32,
    #[inline]
    fn exp_fast(self) -> Self {
        exp_fast_f32(self)
    }
);
impl_scalar!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_libm_exp() {
        let mut worst = 0.0f32;
        let mut x = -20.0f32;
        while x < 20.0 {
            let got = x.exp_fast();
            let want = x.exp();
            let err = if want > 0.0 {
                ((got - want) / want).abs()
            } else {
                got.abs()
            };
            worst = worst.max(err);
            x += 0.001;
        }
        assert!(worst < 2e-6, "worst relative error {worst}");
        assert_eq!((-200.0f32).exp_fast(), 0.0);
        assert_eq!(0.0f32.exp_fast(), 1.0);
    }
}
