//! Error-function family and standard normal helpers in 64-bit arithmetic.
//!
//! `erf`, `erfc` and `erfcx` follow W. J. Cody's rational Chebyshev
//! approximations (the CALERF routine), which are accurate to roughly one
//! unit in the last place over the whole real line. The normal quantile uses
//! Wichura's AS241 (PPND16) followed by one Halley correction.

// coefficients are kept digit-for-digit as published
#![allow(clippy::excessive_precision)]

use super::DomainError;

/// `1 / sqrt(2π)`.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_9;
/// `ln(sqrt(2π))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_780_329_736_405_617_6;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_286_948_079_451_560_772_6;

const ERF_SMALL: f64 = 0.46875;
const ERFC_UNDERFLOW: f64 = 26.543;
const ERFCX_OVERFLOW: f64 = -26.628_735_713_751_4;

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_21e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_700_89e-1,
    8.883_149_794_388_375_94,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822_42,
    1.872_952_849_923_460_47,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

/// erf(x)/x on |x| <= 0.46875, as a function of z = x².
#[inline]
fn erf_small_ratio(z: f64) -> f64 {
    let a = &ERF_A;
    let b = &ERF_B;
    let num = (((a[4] * z + a[0]) * z + a[1]) * z + a[2]) * z + a[3];
    let den = (((z + b[0]) * z + b[1]) * z + b[2]) * z + b[3];
    num / den
}

/// erfcx(y) for y > 0.46875.
#[inline]
fn erfcx_large(y: f64) -> f64 {
    if y <= 4.0 {
        let c = &ERFC_C;
        let d = &ERFC_D;
        let mut num = c[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + c[i]) * y;
            den = (den + d[i]) * y;
        }
        (num + c[7]) / (den + d[7])
    } else {
        let z = 1.0 / (y * y);
        let p = &ERFC_P;
        let q = &ERFC_Q;
        let mut num = p[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + p[i]) * z;
            den = (den + q[i]) * z;
        }
        let r = z * (num + p[4]) / (den + q[4]);
        (FRAC_1_SQRT_PI - r) / y
    }
}

/// `exp(-y²)` with the argument split so the rounding of `y²` does not
/// cost relative accuracy for large `y`.
#[inline]
fn exp_neg_square(y: f64) -> f64 {
    let head = (y * 16.0).trunc() / 16.0;
    let del = (y - head) * (y + head);
    (-head * head).exp() * (-del).exp()
}

#[inline]
fn exp_square(x: f64) -> f64 {
    let head = (x * 16.0).trunc() / 16.0;
    let del = (x - head) * (x + head);
    (head * head).exp() * del.exp()
}

pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= ERF_SMALL {
        return x * erf_small_ratio(y * y);
    }
    let tail = if y >= ERFC_UNDERFLOW {
        0.0
    } else {
        erfcx_large(y) * exp_neg_square(y)
    };
    if x < 0.0 {
        tail - 1.0
    } else {
        1.0 - tail
    }
}

pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= ERF_SMALL {
        return 1.0 - x * erf_small_ratio(y * y);
    }
    let tail = if y >= ERFC_UNDERFLOW {
        0.0
    } else {
        erfcx_large(y) * exp_neg_square(y)
    };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

/// Scaled complementary error function `exp(x²)·erfc(x)`.
///
/// Finite for every `x` above about -26.63 and decays like `1/(x√π)` for
/// large positive `x`; below the overflow point it returns `+∞`.
pub fn erfcx(x: f64) -> f64 {
    let y = x.abs();
    if y <= ERF_SMALL {
        let z = y * y;
        return z.exp() * (1.0 - x * erf_small_ratio(z));
    }
    if x < ERFCX_OVERFLOW {
        return f64::INFINITY;
    }
    let r = erfcx_large(y);
    if x < 0.0 {
        2.0 * exp_square(x) - r
    } else {
        r
    }
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn log_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x), evaluated through `erfc` so the lower tail keeps full relative
/// precision.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// 1 − Φ(x) without cancellation.
#[inline]
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// ln Φ(x), finite for all finite `x`.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x < 0.0 {
        let s = -x * std::f64::consts::FRAC_1_SQRT_2;
        (0.5 * erfcx(s)).ln() - s * s
    } else {
        (-std_normal_sf(x)).ln_1p()
    }
}

/// ln(1 − Φ(x)).
#[inline]
pub fn log_std_normal_sf(x: f64) -> f64 {
    log_std_normal_cdf(-x)
}

const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn poly8(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// AS241 for the lower half, with `r = sqrt(-ln p)` supplied by the caller
/// when `p` is in the tail branch.
#[inline]
fn ppnd16_lower(p: f64, r_tail: impl FnOnce() -> f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly8(&PPND_A, r) / poly8(&PPND_B, r);
    }
    let r = r_tail();
    if r <= 5.0 {
        let r = r - 1.6;
        -poly8(&PPND_C, r) / poly8(&PPND_D, r)
    } else {
        let r = r - 5.0;
        -poly8(&PPND_E, r) / poly8(&PPND_F, r)
    }
}

const TINY_P: f64 = 1e-300;

/// Φ⁻¹(p) for `p ∈ (0, 0.5]`; no domain check.
pub(crate) fn inv_std_normal_cdf_lower(p: f64) -> f64 {
    if p < TINY_P {
        return inv_std_normal_cdf_from_log(p.ln());
    }
    let x = ppnd16_lower(p, || (-p.ln()).sqrt());
    // Halley step on Φ(x) − p.
    let e = std_normal_cdf(x) - p;
    let u = e / std_normal_pdf(x);
    if u.is_finite() {
        x - u / (1.0 + 0.5 * x * u)
    } else {
        x
    }
}

/// Inverse standard normal CDF.
pub fn inv_std_normal_cdf(p: f64) -> Result<f64, DomainError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DomainError::new(format!(
            "normal quantile requires p in (0, 1), got {p}"
        )));
    }
    if p <= 0.5 {
        Ok(inv_std_normal_cdf_lower(p))
    } else {
        // 1 − p is exact for p in [0.5, 1).
        Ok(-inv_std_normal_cdf_lower(1.0 - p))
    }
}

/// Φ⁻¹(exp(log_p)) for `log_p <= ln 0.5`, usable far below the smallest
/// representable probability.
pub(crate) fn inv_std_normal_cdf_from_log(log_p: f64) -> f64 {
    debug_assert!(log_p <= -std::f64::consts::LN_2 + 1e-12);
    if log_p > TINY_P.ln() {
        return inv_std_normal_cdf_lower(log_p.exp());
    }
    // ln Φ(x) ≈ -x²/2 - ln(-x) - ln√(2π) for x → -∞; two fixed-point passes
    // on x² give a start within a few ulps of the Newton basin.
    let mut y = -2.0 * log_p;
    for _ in 0..2 {
        y = -2.0 * log_p - y.ln() - 2.0 * LN_SQRT_2PI;
    }
    let mut x = -y.sqrt();
    for _ in 0..8 {
        let lc = log_std_normal_cdf(x);
        let slope = (log_std_normal_pdf(x) - lc).exp();
        let step = (lc - log_p) / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs() {
            break;
        }
    }
    x
}

/// ln(1 − eˣ) for x <= 0.
#[inline]
pub(crate) fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

#[inline]
pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// ln(Φ(hi) − Φ(lo)) for `lo < hi`, accurate in both tails and near zero.
pub fn log_diff_std_normal_cdf(lo: f64, hi: f64) -> f64 {
    if lo >= hi {
        return f64::NEG_INFINITY;
    }
    if hi <= 0.0 {
        let l_hi = log_std_normal_cdf(hi);
        l_hi + log1m_exp(log_std_normal_cdf(lo) - l_hi)
    } else if lo >= 0.0 {
        let l_lo = log_std_normal_sf(lo);
        l_lo + log1m_exp(log_std_normal_sf(hi) - l_lo)
    } else {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0.5 * (erf(hi * s) + erf(-lo * s))).ln()
    }
}
