//! Globally adaptive 7/15-point Gauss-Kronrod quadrature for scalar and
//! vector-valued integrands.
//!
//! Vector integrands are integrated componentwise on a shared subdivision;
//! the error estimate of an interval is the largest componentwise
//! `|K15 - G7|`, and refinement always bisects the interval with the largest
//! estimate until the summed estimate drops below `abs_tol`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Quadrature settings.
#[derive(Clone, Copy, Debug)]
pub struct QuadControl {
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadControl {
    fn default() -> Self {
        QuadControl {
            abs_tol: 1e-10,
            max_intervals: 2_000,
        }
    }
}

impl QuadControl {
    pub fn with_tol(abs_tol: f64) -> Self {
        QuadControl {
            abs_tol,
            ..Self::default()
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F>(f: &mut F, a: f64, b: f64) -> Segment
where
    F: FnMut(f64) -> Vec<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let len = fc.len();
    let mut k = fc.iter().map(|v| v * WGK[7]).collect::<Vec<_>>();
    let mut g = fc.iter().map(|v| v * WG[3]).collect::<Vec<_>>();
    for i in 0..7 {
        let dx = half * XGK[i];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        assert_eq!(f1.len(), len, "integrand length changed");
        for c in 0..len {
            let s = f1[c] + f2[c];
            k[c] += WGK[i] * s;
            if i % 2 == 1 {
                g[c] += WG[i / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    for c in 0..len {
        k[c] *= half;
        g[c] *= half;
        error = error.max((k[c] - g[c]).abs());
    }
    Segment {
        a,
        b,
        value: k,
        error,
    }
}

/// Integrate a vector-valued function over `[a, b]`.
///
/// Returns the componentwise integral and the final error estimate.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, ctl: &QuadControl) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64) -> Vec<f64>,
{
    if a == b {
        let len = f(a).len();
        return Ok((vec![0.0; len], 0.0));
    }
    let mut heap = BinaryHeap::new();
    let first = kronrod(&mut f, a, b);
    let mut total_err = first.error;
    heap.push(first);
    while total_err > ctl.abs_tol {
        if heap.len() >= ctl.max_intervals {
            return Err(Error::NonConvergent {
                what: "adaptive quadrature",
                terms: ctl.max_intervals,
            });
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval can no longer be split in floating point
            heap.push(worst);
            break;
        }
        let left = kronrod(&mut f, worst.a, mid);
        let right = kronrod(&mut f, mid, worst.b);
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // re-sum to keep the running total from drifting
        total_err = total_err.max(0.0);
    }
    let segments = heap.into_vec();
    let len = segments[0].value.len();
    let mut acc = vec![crate::specfun::CompensatedSum::new(); len];
    let mut err = 0.0;
    for s in &segments {
        err += s.error;
        for (c, v) in s.value.iter().enumerate() {
            acc[c].add(*v);
        }
    }
    Ok((acc.iter().map(|s| s.value()).collect(), err))
}

/// Integrate a scalar function over `[a, b]`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, ctl: &QuadControl) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x| vec![f(x)], a, b, ctl).map(|(v, _)| v[0])
}
