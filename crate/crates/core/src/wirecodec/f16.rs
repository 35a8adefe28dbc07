//! IEEE-754 binary16 conversion directly from `f64` (no intermediate `f32`,
//! which would double-round).

const SIGN: u16 = 0x8000;
pub const POS_INF: u16 = 0x7C00;
pub const CANONICAL_NAN: u16 = 0x7E00;

/// Round-to-nearest-even; overflow saturates to infinity, NaN maps to a quiet NaN.
pub fn f16_encode(value: f64) -> u16 {
    let sign = if value.is_sign_negative() { SIGN } else { 0 };
    if value.is_nan() {
        return CANONICAL_NAN | sign;
    }
    let a = value.abs();
    if a.is_infinite() {
        return POS_INF | sign;
    }
    if a == 0.0 {
        return sign;
    }
    // Subnormal range: multiples of 2^-24 (scaling by a power of two is exact).
    if a < f64::from_bits(0x3F10_0000_0000_0000) {
        // a < 2^-14; a rounded result of 1024 lands exactly on the smallest normal.
        let q = (a * 16_777_216.0).round_ties_even();
        return sign | q as u16;
    }
    let e = ((a.to_bits() >> 52) & 0x7FF) as i32 - 1023;
    let mut mant = (a * 2f64.powi(10 - e)).round_ties_even();
    let mut e = e;
    if mant == 2048.0 {
        mant = 1024.0;
        e += 1;
    }
    let biased = e + 15;
    if biased >= 31 {
        return POS_INF | sign;
    }
    sign | ((biased as u16) << 10) | (mant as u16 - 1024)
}

pub fn f16_decode(bits: u16) -> f64 {
    let sign = if bits & SIGN != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1F) as i32;
    let mant = (bits & 0x3FF) as f64;
    let mag = match exp {
        0 => mant * 2f64.powi(-24),
        31 if mant == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        _ => (1024.0 + mant) * 2f64.powi(exp - 25),
    };
    sign * mag
}

/// Nearest binary16 value, as `f64`.
pub fn quantize(value: f64) -> f64 {
    f16_decode(f16_encode(value))
}
