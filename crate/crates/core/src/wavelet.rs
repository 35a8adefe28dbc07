//! Multi-level orthonormal 2D Haar transform, applied per channel.
//!
//! For each 2x2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! Recursion continues on LL only. The transform is orthonormal, so its
//! adjoint is its inverse: backward passes reuse [`idwt2`] and [`dwt2`].

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

pub const MAX_LEVELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl DetailBands {
    pub fn zeros_like(ll: &Tensor) -> Self {
        Self { lh: Tensor::zeros_like(ll), hl: Tensor::zeros_like(ll), hh: Tensor::zeros_like(ll) }
    }
}

/// LL band plus detail bands; `details[0]` is the finest level.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandPyramid {
    pub ll: Tensor,
    pub details: Vec<DetailBands>,
}

impl SubbandPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Every coefficient, LL first then details finest-first (lh, hl, hh).
    pub fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.ll.data().iter().copied().chain(
            self.details
                .iter()
                .flat_map(|d| d.lh.data().iter().chain(d.hl.data()).chain(d.hh.data()).copied()),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (c, mut h, mut w) = self.ll.dims3()?;
        if self.details.is_empty() {
            return Err(Error::shape("pyramid has no levels"));
        }
        for d in self.details.iter().rev() {
            for band in [&d.lh, &d.hl, &d.hh] {
                if band.shape() != [c, h, w] {
                    return Err(Error::shape(format!(
                        "detail band {:?} does not match expected {:?}",
                        band.shape(),
                        [c, h, w]
                    )));
                }
            }
            h *= 2;
            w *= 2;
        }
        Ok(())
    }
}

fn analyze_level(x: &Tensor) -> (Tensor, DetailBands) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (h2, w2) = (h / 2, w / 2);
    let plane = h2 * w2;
    let mut bands = [vec![0.0; c * plane], vec![0.0; c * plane], vec![0.0; c * plane], vec![0.0; c * plane]];
    for ch in 0..c {
        let src = x.channel(ch);
        for y in 0..h2 {
            let (r0, r1) = (&src[2 * y * w..(2 * y + 1) * w], &src[(2 * y + 1) * w..(2 * y + 2) * w]);
            for xx in 0..w2 {
                let (a, b, cc, d) = (r0[2 * xx], r0[2 * xx + 1], r1[2 * xx], r1[2 * xx + 1]);
                let i = ch * plane + y * w2 + xx;
                bands[0][i] = (a + b + cc + d) / 2.0;
                bands[1][i] = (a + b - cc - d) / 2.0;
                bands[2][i] = (a - b + cc - d) / 2.0;
                bands[3][i] = (a - b - cc + d) / 2.0;
            }
        }
    }
    let shape = vec![c, h2, w2];
    let [ll, lh, hl, hh] = bands.map(|v| Tensor::raw(shape.clone(), v));
    (ll, DetailBands { lh, hl, hh })
}

fn synthesize_level(ll: &Tensor, bands: Option<&DetailBands>) -> Tensor {
    let (c, h2, w2) = (ll.shape()[0], ll.shape()[1], ll.shape()[2]);
    let w = 2 * w2;
    let mut out = Tensor::zeros(&[c, 2 * h2, w]);
    for ch in 0..c {
        let s = ll.channel(ch);
        let details = bands.map(|b| (b.lh.channel(ch), b.hl.channel(ch), b.hh.channel(ch)));
        let dst = out.channel_mut(ch);
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = y * w2 + xx;
                let l = s[i];
                let (lh, hl, hh) = details.map_or((0.0, 0.0, 0.0), |(a, b, c)| (a[i], b[i], c[i]));
                dst[2 * y * w + 2 * xx] = (l + lh + hl + hh) / 2.0;
                dst[2 * y * w + 2 * xx + 1] = (l + lh - hl - hh) / 2.0;
                dst[(2 * y + 1) * w + 2 * xx] = (l - lh + hl - hh) / 2.0;
                dst[(2 * y + 1) * w + 2 * xx + 1] = (l - lh - hl + hh) / 2.0;
            }
        }
    }
    out
}

/// Forward transform with `levels` in `1..=3`. Spatial dims must divide by `2^levels`.
pub fn dwt2(input: &Tensor, levels: usize) -> Result<SubbandPyramid> {
    let (_, h, w) = input.dims3()?;
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(Error::config(format!("levels must be in 1..={MAX_LEVELS}, got {levels}")));
    }
    let div = 1usize << levels;
    if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("{h}x{w} is not divisible by 2^{levels}")));
    }
    let mut details = Vec::with_capacity(levels);
    let mut cur = input.clone();
    for _ in 0..levels {
        let (ll, bands) = analyze_level(&cur);
        details.push(bands);
        cur = ll;
    }
    Ok(SubbandPyramid { ll: cur, details })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(pyr: &SubbandPyramid) -> Result<Tensor> {
    pyr.validate()?;
    let mut cur = pyr.ll.clone();
    for bands in pyr.details.iter().rev() {
        cur = synthesize_level(&cur, Some(bands));
    }
    Ok(cur)
}

/// Inverse with every detail band zeroed (the "restored" smooth map).
pub fn idwt2_lowpass(ll: &Tensor, levels: usize) -> Result<Tensor> {
    ll.dims3()?;
    if levels == 0 {
        return Err(Error::config("lowpass inverse needs levels >= 1"));
    }
    let mut cur = ll.clone();
    for _ in 0..levels {
        cur = synthesize_level(&cur, None);
    }
    Ok(cur)
}

/// Adjoint of [`idwt2_lowpass`]: the LL band of the forward transform.
pub fn lowpass_adjoint(grad: &Tensor, levels: usize) -> Result<Tensor> {
    Ok(dwt2(grad, levels)?.ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::seeded_rng;
    use proptest::prelude::*;

    fn block(v: [f64; 4]) -> Tensor {
        Tensor::new(vec![1, 2, 2], v.to_vec()).unwrap()
    }

    #[test]
    fn constant_block_has_no_detail() {
        let p = dwt2(&block([1.0; 4]), 1).unwrap();
        assert_eq!(p.ll.data(), &[2.0]);
        let d = &p.details[0];
        assert_eq!((d.lh.data()[0], d.hl.data()[0], d.hh.data()[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_block() {
        let p = dwt2(&block([1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        let d = &p.details[0];
        assert_eq!(
            (p.ll.data()[0], d.lh.data()[0], d.hl.data()[0], d.hh.data()[0]),
            (5.0, -2.0, -1.0, 0.0)
        );
        assert_eq!(idwt2(&p).unwrap(), block([1.0, 2.0, 3.0, 4.0]));
        let low = idwt2_lowpass(&p.ll, 1).unwrap();
        assert_eq!(low.data(), &[2.5; 4]);
        assert_eq!(idwt2_lowpass(&Tensor::full(&[1, 1, 1], 2.0), 1).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn shapes() {
        let mut rng = seeded_rng(1);
        let x = Tensor::randn(&[64, 32, 32], &mut rng);
        let p = dwt2(&x, 2).unwrap();
        assert_eq!(p.ll.shape(), &[64, 8, 8]);
        assert_eq!(p.details[0].lh.shape(), &[64, 16, 16]);
        assert_eq!(p.details[1].hh.shape(), &[64, 8, 8]);
    }

    #[test]
    fn zero_pyramid_inverts_to_zero() {
        let ll = Tensor::zeros(&[2, 2, 2]);
        let pyr = SubbandPyramid {
            details: vec![DetailBands::zeros_like(&Tensor::zeros(&[2, 4, 4])), DetailBands::zeros_like(&ll)],
            ll,
        };
        assert_eq!(idwt2(&pyr).unwrap(), Tensor::zeros(&[2, 8, 8]));
    }

    #[test]
    fn errors() {
        assert!(matches!(dwt2(&Tensor::zeros(&[1, 6, 4]), 2), Err(Error::Shape(_))));
        assert!(dwt2(&Tensor::zeros(&[1, 16, 16]), 4).is_err());
        let mut p = dwt2(&Tensor::zeros(&[1, 4, 4]), 1).unwrap();
        p.details[0].hh = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(idwt2(&p), Err(Error::Shape(_))));
    }

    #[test]
    fn lowpass_idempotent() {
        let mut rng = seeded_rng(5);
        let x = Tensor::randn(&[3, 8, 8], &mut rng);
        let once = idwt2_lowpass(&dwt2(&x, 1).unwrap().ll, 1).unwrap();
        let twice = idwt2_lowpass(&dwt2(&once, 1).unwrap().ll, 1).unwrap();
        assert_eq!(once, twice);
    }

    /// 2x2 block means, replicated: independent of the Haar formulas.
    fn block_mean_oracle(x: &Tensor) -> Tensor {
        let (c, h, w) = x.dims3().unwrap();
        let mut out = Tensor::zeros(&[c, h, w]);
        for ch in 0..c {
            for y in (0..h).step_by(2) {
                for xx in (0..w).step_by(2) {
                    let m = (x.get3(ch, y, xx) + x.get3(ch, y, xx + 1) + x.get3(ch, y + 1, xx)
                        + x.get3(ch, y + 1, xx + 1))
                        / 4.0;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        out.set3(ch, y + dy, xx + dx, m);
                    }
                }
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reconstruction_energy_linearity(seed in any::<u64>(), levels in 1usize..=3, c in 1usize..4) {
            let mut rng = seeded_rng(seed);
            let x = Tensor::randn(&[c, 16, 8], &mut rng);
            let y = Tensor::randn(&[c, 16, 8], &mut rng);
            let px = dwt2(&x, levels).unwrap();
            prop_assert!(idwt2(&px).unwrap().max_abs_diff(&x) <= 1e-10);

            let e_in = x.sum_sq();
            let e_out: f64 = px.coefficients().map(|v| v * v).sum();
            prop_assert!((e_in - e_out).abs() <= 1e-10 * e_in);

            let (a, b) = (0.7, -1.3);
            let mix = x.scale(a).add(&y.scale(b)).unwrap();
            let pm = dwt2(&mix, levels).unwrap();
            let py = dwt2(&y, levels).unwrap();
            for ((m, u), v) in pm.coefficients().zip(px.coefficients()).zip(py.coefficients()) {
                prop_assert!((m - (a * u + b * v)).abs() <= 1e-10);
            }
        }

        #[test]
        fn lowpass_matches_block_means(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let x = Tensor::randn(&[2, 8, 12], &mut rng);
            let low = idwt2_lowpass(&dwt2(&x, 1).unwrap().ll, 1).unwrap();
            prop_assert!(low.max_abs_diff(&block_mean_oracle(&x)) <= 1e-12);
        }

        #[test]
        fn lowpass_adjoint_identity(seed in any::<u64>(), levels in 1usize..=3) {
            // <idwt_lowpass(ll), g> == <ll, lowpass_adjoint(g)>
            let mut rng = seeded_rng(seed);
            let n = 1 << levels;
            let ll = Tensor::randn(&[2, 2, 3], &mut rng);
            let g = Tensor::randn(&[2, 2 * n, 3 * n], &mut rng);
            let lhs: f64 = idwt2_lowpass(&ll, levels).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = ll.data().iter().zip(lowpass_adjoint(&g, levels).unwrap().data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
