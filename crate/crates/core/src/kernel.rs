//! The Euler–Maruyama update shared by the single-state integrator and the
//! lane-batched trajectory runner.
//!
//! States are stored lane-interleaved: entry `(i, j)` of lane `l` lives at
//! `re[(i+1)·s + (j+1)][l]` with `s = n + 2`, so `L` independent
//! trajectories advance with the same instruction stream. Every lane goes
//! through exactly the same scalar operations in the same order, hence a
//! trajectory's numbers do not depend on which lane, batch width or
//! instruction set ran it.

use crate::model::EffectiveModel;

pub(crate) type Lanes<const L: usize> = [f64; L];

/// Model coefficients in the padded layout.
#[derive(Debug, Clone)]
pub(crate) struct Coefficients {
    pub n: usize,
    pub diag: Vec<f64>,
    // bond[p] couples padded rows p and p+1; bond[0] = bond[n] = 0.
    pub bond: Vec<f64>,
    pub parity: Vec<f64>,
    pub dt: f64,
}

/// Measurement parameters of one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Measurement {
    /// `k · dt`.
    pub kdt: f64,
    /// `√(2ηk)`.
    pub noise_gain: f64,
}

impl Measurement {
    pub fn new(k: f64, efficiency: f64, dt: f64) -> Self {
        Self {
            kdt: k * dt,
            noise_gain: (2.0 * efficiency * k).sqrt(),
        }
    }
}

impl Coefficients {
    pub fn new(model: &EffectiveModel, dt: f64) -> Self {
        let n = model.n();
        let mut diag = vec![0.0; n + 2];
        let mut parity = vec![0.0; n + 2];
        let mut bond = vec![0.0; n + 1];
        diag[1..=n].copy_from_slice(&model.diag);
        parity[1..=n].copy_from_slice(&model.parity);
        bond[1..n].copy_from_slice(&model.offdiag);
        Self {
            n,
            diag,
            bond,
            parity,
            dt,
        }
    }

    pub fn stride(&self) -> usize {
        self.n + 2
    }
}

/// Per-lane scalars of one step.
pub(crate) struct LaneStep<const L: usize> {
    /// `⟨X⟩` before the step.
    pub expectation: Lanes<L>,
    /// False when the new state has a non-finite entry or trace.
    pub finite: [bool; L],
}

/// One step for every lane. Reads `re/im`, writes the new state into
/// `out_re/out_im`. The upper triangle and the first subdiagonal (the only
/// lower entries the stencil reads) are written; with `full_mirror` the
/// whole lower triangle is filled in as the conjugate of the upper.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn step_generic<const L: usize>(
    c: &Coefficients,
    re: &[Lanes<L>],
    im: &[Lanes<L>],
    out_re: &mut [Lanes<L>],
    out_im: &mut [Lanes<L>],
    kdt: &Lanes<L>,
    noise_gain: &Lanes<L>,
    dw: &Lanes<L>,
    full_mirror: bool,
) -> LaneStep<L> {
    let n = c.n;
    let s = n + 2;
    let dt = c.dt;
    assert!(re.len() == s * s && im.len() == s * s && out_re.len() == s * s && out_im.len() == s * s);
    assert!(c.diag.len() == s && c.parity.len() == s && c.bond.len() == n + 1);

    let mut expectation = [0.0; L];
    for i in 1..=n {
        let x = c.parity[i];
        let d = &re[i * s + i];
        for l in 0..L {
            expectation[l] += x * d[l];
        }
    }
    let mut innovation = [0.0; L];
    let mut two_e = [0.0; L];
    for l in 0..L {
        innovation[l] = noise_gain[l] * dw[l];
        two_e[l] = 2.0 * expectation[l];
    }

    let mut trace = [0.0; L];
    for i in 1..=n {
        let (di, bu, bd, xi) = (c.diag[i], c.bond[i - 1], c.bond[i], c.parity[i]);
        for j in i..=n {
            let p = i * s + j;
            let dd = di - c.diag[j];
            let (bl, br) = (c.bond[j - 1], c.bond[j]);
            let dx = xi - c.parity[j];
            let dx2 = dx * dx;
            let xs = xi + c.parity[j];
            let (cr, ur, dr, lr, rr) = (&re[p], &re[p - s], &re[p + s], &re[p - 1], &re[p + 1]);
            let (ci, ui, di_, li, ri) = (&im[p], &im[p - s], &im[p + s], &im[p - 1], &im[p + 1]);
            let mut nr = [0.0; L];
            let mut ni = [0.0; L];
            for l in 0..L {
                // [H, ρ]_ij for tridiagonal H.
                let comm_re = dd * cr[l] + bu * ur[l] + bd * dr[l] - bl * lr[l] - br * rr[l];
                let comm_im = dd * ci[l] + bu * ui[l] + bd * di_[l] - bl * li[l] - br * ri[l];
                // X is diagonal, so both measurement terms scale ρ_ij.
                let gain = (1.0 - kdt[l] * dx2) + innovation[l] * (xs - two_e[l]);
                nr[l] = gain * cr[l] + dt * comm_im;
                ni[l] = gain * ci[l] - dt * comm_re;
            }
            out_re[p] = nr;
            out_im[p] = ni;
        }
        let d = &out_re[i * s + i];
        for l in 0..L {
            trace[l] += d[l];
        }
    }

    let mut inv = [0.0; L];
    for l in 0..L {
        inv[l] = 1.0 / trace[l];
    }
    let mut total = trace;
    for i in 1..=n {
        let d = i * s + i;
        let mut v = out_re[d];
        for l in 0..L {
            v[l] *= inv[l];
            total[l] += v[l];
        }
        out_re[d] = v;
        out_im[d] = [0.0; L];
        for j in i + 1..=n {
            let p = i * s + j;
            let mut vr = out_re[p];
            let mut vi = out_im[p];
            let mut neg = [0.0; L];
            for l in 0..L {
                vr[l] *= inv[l];
                vi[l] *= inv[l];
                neg[l] = -vi[l];
                // Any NaN or infinity reaches the sum.
                total[l] += vr[l] + vi[l];
            }
            out_re[p] = vr;
            out_im[p] = vi;
            if full_mirror || j == i + 1 {
                let q = j * s + i;
                out_re[q] = vr;
                out_im[q] = neg;
            }
        }
    }

    let mut finite = [true; L];
    for l in 0..L {
        finite[l] = total[l].is_finite();
    }
    LaneStep { expectation, finite }
}

/// Single-state step on a plain padded `DensityMatrix` layout.
pub(crate) fn step_single(
    c: &Coefficients,
    re: &[f64],
    im: &[f64],
    out_re: &mut [f64],
    out_im: &mut [f64],
    m: Measurement,
    dw: f64,
) -> LaneStep<1> {
    fn as_lanes(v: &[f64]) -> &[Lanes<1>] {
        v.as_chunks::<1>().0
    }
    let (out_re, _) = out_re.as_chunks_mut::<1>();
    let (out_im, _) = out_im.as_chunks_mut::<1>();
    step_generic::<1>(c, as_lanes(re), as_lanes(im), out_re, out_im, &[m.kdt], &[m.noise_gain], &[dw], true)
}

/// Number of trajectories advanced together by the batched runner.
pub(crate) const BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Isa {
    Portable,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

fn detect_isa() -> Isa {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return Isa::Avx512;
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            return Isa::Avx2;
        }
    }
    Isa::Portable
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn step_batch_avx2(
    c: &Coefficients,
    re: &[Lanes<BATCH>],
    im: &[Lanes<BATCH>],
    out_re: &mut [Lanes<BATCH>],
    out_im: &mut [Lanes<BATCH>],
    kdt: &Lanes<BATCH>,
    noise_gain: &Lanes<BATCH>,
    dw: &Lanes<BATCH>,
) -> LaneStep<BATCH> {
    step_generic(c, re, im, out_re, out_im, kdt, noise_gain, dw, false)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn step_batch_avx512(
    c: &Coefficients,
    re: &[Lanes<BATCH>],
    im: &[Lanes<BATCH>],
    out_re: &mut [Lanes<BATCH>],
    out_im: &mut [Lanes<BATCH>],
    kdt: &Lanes<BATCH>,
    noise_gain: &Lanes<BATCH>,
    dw: &Lanes<BATCH>,
) -> LaneStep<BATCH> {
    step_generic(c, re, im, out_re, out_im, kdt, noise_gain, dw, false)
}

/// `BATCH` lane-interleaved states with double buffering.
pub(crate) struct LaneBlock {
    coef: Coefficients,
    isa: Isa,
    kdt: Lanes<BATCH>,
    noise_gain: Lanes<BATCH>,
    re: Vec<Lanes<BATCH>>,
    im: Vec<Lanes<BATCH>>,
    out_re: Vec<Lanes<BATCH>>,
    out_im: Vec<Lanes<BATCH>>,
}

impl LaneBlock {
    /// All lanes start on site 0, unmeasured.
    pub fn new(coef: Coefficients) -> Self {
        let s = coef.stride();
        let zero = vec![[0.0; BATCH]; s * s];
        let unmeasured = Measurement::new(0.0, 1.0, coef.dt);
        let mut block = Self {
            isa: detect_isa(),
            kdt: [0.0; BATCH],
            noise_gain: [0.0; BATCH],
            re: zero.clone(),
            im: zero.clone(),
            out_re: zero.clone(),
            out_im: zero,
            coef,
        };
        for l in 0..BATCH {
            block.reset_lane(l, unmeasured);
        }
        block
    }

    #[cfg(test)]
    fn force_portable(&mut self) {
        self.isa = Isa::Portable;
    }

    /// Puts lane `l` back on `|1⟩⟨1|` (site 0) with the given measurement.
    pub fn reset_lane(&mut self, l: usize, m: Measurement) {
        self.kdt[l] = m.kdt;
        self.noise_gain[l] = m.noise_gain;
        for v in self.re.iter_mut().chain(self.im.iter_mut()) {
            v[l] = 0.0;
        }
        let s = self.coef.stride();
        self.re[s + 1][l] = 1.0;
    }

    /// Loads a padded single-state layout into lane `l`.
    pub fn load_lane(&mut self, l: usize, re: &[f64], im: &[f64], m: Measurement) {
        self.kdt[l] = m.kdt;
        self.noise_gain[l] = m.noise_gain;
        for (dst, v) in self.re.iter_mut().zip(re) {
            dst[l] = *v;
        }
        for (dst, v) in self.im.iter_mut().zip(im) {
            dst[l] = *v;
        }
    }

    /// Overwrites lane `l` with NaN (fault injection).
    pub fn poison_lane(&mut self, l: usize) {
        let s = self.coef.stride();
        self.re[s + 1][l] = f64::NAN;
    }

    pub fn step(&mut self, dw: &Lanes<BATCH>) -> LaneStep<BATCH> {
        let (c, re, im) = (&self.coef, &self.re, &self.im);
        let (or, oi) = (&mut self.out_re, &mut self.out_im);
        let (kdt, gain) = (&self.kdt, &self.noise_gain);
        let result = match self.isa {
            Isa::Portable => step_generic(c, re, im, or, oi, kdt, gain, dw, false),
            // SAFETY: the feature was detected at runtime in `detect_isa`.
            #[cfg(target_arch = "x86_64")]
            Isa::Avx2 => unsafe { step_batch_avx2(c, re, im, or, oi, kdt, gain, dw) },
            // SAFETY: as above.
            #[cfg(target_arch = "x86_64")]
            Isa::Avx512 => unsafe { step_batch_avx512(c, re, im, or, oi, kdt, gain, dw) },
        };
        std::mem::swap(&mut self.re, &mut self.out_re);
        std::mem::swap(&mut self.im, &mut self.out_im);
        result
    }

    /// `ρ_NN` of lane `l`.
    pub fn fidelity(&self, l: usize) -> f64 {
        let n = self.coef.n;
        self.re[n * self.coef.stride() + n][l]
    }

    pub fn expect_parity(&self, l: usize) -> f64 {
        let s = self.coef.stride();
        (1..=self.coef.n).map(|i| self.coef.parity[i] * self.re[i * s + i][l]).sum()
    }

    /// Copies lane `l` into a padded single-state layout, filling the lower
    /// triangle from the upper.
    pub fn extract(&self, l: usize, re: &mut [f64], im: &mut [f64]) {
        let n = self.coef.n;
        let s = self.coef.stride();
        re.fill(0.0);
        im.fill(0.0);
        for i in 1..=n {
            for j in i..=n {
                let (vr, vi) = (self.re[i * s + j][l], self.im[i * s + j][l]);
                re[i * s + j] = vr;
                im[i * s + j] = vi;
                re[j * s + i] = vr;
                im[j * s + i] = -vi;
            }
        }
        for i in 1..=n {
            im[i * s + i] = 0.0;
        }
    }
}
