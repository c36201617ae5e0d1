//! Small numeric helpers: compensated summation and the standard-normal
//! quantile function.

// The quantile coefficients are transcribed verbatim; keep every digit.
#![allow(clippy::excessive_precision)]

/// Neumaier-compensated accumulator. Addition order is the caller's;
/// results are bit-stable for a fixed order of `add` calls.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Compensated sum of an iterator in its iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Inverse of the standard-normal CDF via Wichura's AS 241 (PPND16)
/// rational approximation, accurate to roughly full double precision.
///
/// Returns `None` for `p` outside the open interval (0, 1) or non-finite.
pub fn standard_normal_quantile(p: f64) -> Option<f64> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return None;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Some(q * rational7(r, &CENTRAL_NUM, &CENTRAL_DEN));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let s = r - 1.6;
        rational7(s, &MIDDLE_NUM, &MIDDLE_DEN)
    } else {
        let s = r - 5.0;
        rational7(s, &TAIL_NUM, &TAIL_DEN)
    };
    Some(if q < 0.0 { -z } else { z })
}

/// Ratio of two degree-7 polynomials evaluated by Horner's rule. The
/// coefficient arrays are ordered from constant term upward.
#[inline]
fn rational7(x: f64, num: &[f64; 8], den: &[f64; 8]) -> f64 {
    let mut n = num[7];
    let mut d = den[7];
    for i in (0..7).rev() {
        n = n * x + num[i];
        d = d * x + den[i];
    }
    n / d
}

const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const MIDDLE_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const MIDDLE_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const TAIL_DEN: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_cancellation() {
        let mut s = KahanSum::new();
        s.add(1e16);
        s.add(1.0);
        s.add(-1e16);
        assert_eq!(s.total(), 1.0);
    }

    #[test]
    fn quantile_matches_reference_values() {
        // Reference values from a validated inverse-CDF implementation.
        let cases = [
            (0.5, 0.0),
            (0.95, 1.6448536269514722),
            (0.975, 1.959963984540054),
            (0.995, 2.5758293035489004),
            (0.9995, 3.2905267314919255),
        ];
        for (p, z) in cases {
            let got = standard_normal_quantile(p).unwrap();
            assert!((got - z).abs() <= 1e-9, "p={p}: got {got}, want {z}");
        }
    }

    #[test]
    fn quantile_is_antisymmetric() {
        for p in [0.01, 0.2, 0.4999, 0.7, 0.999] {
            let a = standard_normal_quantile(p).unwrap();
            let b = standard_normal_quantile(1.0 - p).unwrap();
            assert!((a + b).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        for p in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(standard_normal_quantile(p).is_none());
        }
    }

    /// Independent oracle: Simpson quadrature of the normal density from 0
    /// to z must recover p - 1/2.
    #[test]
    fn quantile_inverts_cdf_by_quadrature() {
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for p in [0.55, 0.8, 0.9, 0.95, 0.975, 0.99, 0.9999] {
            let z = standard_normal_quantile(p).unwrap();
            let n = 20_000usize;
            let h = z / n as f64;
            let mut acc = KahanSum::new();
            for i in 0..n {
                let a = i as f64 * h;
                acc.add(h / 6.0 * (phi(a) + 4.0 * phi(a + 0.5 * h) + phi(a + h)));
            }
            let integral = acc.total();
            assert!(
                (integral - (p - 0.5)).abs() <= 1e-10,
                "p={p}: quadrature {integral}"
            );
        }
    }
}
