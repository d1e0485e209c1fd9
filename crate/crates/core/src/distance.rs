//! Squared-L2 kernels shared by the clustering and selection code.
//!
//! Accumulation uses a fixed number of independent lanes so the compiler can
//! vectorise without reassociating, and the result for a given pair of rows
//! never depends on thread count or call site.

const LANES32: usize = 8;
const LANES64: usize = 4;

#[inline]
pub fn sq_dist_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES32];
    let ca = a.chunks_exact(LANES32);
    let cb = b.chunks_exact(LANES32);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES32 {
            let t = x[l] - y[l];
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let t = x - y;
        tail += t * t;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES32];
    let ca = a.chunks_exact(LANES32);
    let cb = b.chunks_exact(LANES32);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES32 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Squared distance accumulated in `f64`.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    sq_dist_bounded(a, b, f64::INFINITY).unwrap_or(f64::INFINITY)
}

/// Squared distance in `f64`, or `None` as soon as a partial sum exceeds
/// `bound`. When it returns `Some`, the value is identical to [`sq_dist`].
#[inline]
pub fn sq_dist_bounded(a: &[f32], b: &[f32], bound: f64) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    const BLOCK: usize = 16;
    let mut acc = [0.0f64; LANES64];
    let ca = a.chunks_exact(BLOCK);
    let cb = b.chunks_exact(BLOCK);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for q in 0..BLOCK / LANES64 {
            for l in 0..LANES64 {
                let t = f64::from(x[q * LANES64 + l]) - f64::from(y[q * LANES64 + l]);
                acc[l] += t * t;
            }
        }
        if (acc[0] + acc[2]) + (acc[1] + acc[3]) > bound {
            return None;
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        let t = f64::from(*x) - f64::from(*y);
        tail += t * t;
    }
    let total = (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail;
    (total <= bound).then_some(total)
}

#[inline]
pub fn sq_norm_f32(a: &[f32]) -> f32 {
    dot_f32(a, a)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}
