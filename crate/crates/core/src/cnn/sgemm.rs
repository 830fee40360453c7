//! Packed single-precision GEMM with an AVX-512 micro-kernel, used in place
//! of `matrixmultiply` when the CPU supports it (detected once at run time).
//!
//! Classic three-level blocking: `KC×NC` panels of B and `MC×KC` blocks of A
//! are packed into contiguous micro-panels, and an `MR×NR` register tile is
//! accumulated over each `KC` slice. Results are deterministic for a given
//! CPU: there is no threading and the summation order depends only on the
//! shapes.

use core::arch::x86_64::*;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU8, Ordering};
use std::vec::Vec;

const MR: usize = 8;
const NR: usize = 32;
const KC: usize = 192;
const MC: usize = 128;
const NC: usize = 2048;
const DI: usize = 2;
const DJ: usize = 8;
const KD: usize = 1024;
const DOT_MIN_K: usize = 64;

pub(crate) fn available() -> bool {
    static STATE: AtomicU8 = AtomicU8::new(0);
    match STATE.load(Ordering::Relaxed) {
        1 => true,
        2 => false,
        _ => {
            let ok = std::is_x86_feature_detected!("avx512f");
            STATE.store(if ok { 1 } else { 2 }, Ordering::Relaxed);
            ok
        }
    }
}

std::thread_local! {
    static PACKS: RefCell<(Vec<f32>, Vec<f32>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// `C ← α·A·B + β·C`. With `β = 0`, C is never read.
///
/// # Safety
/// Same contract as `matrixmultiply::sgemm`, and [`available`] must be true.
#[allow(clippy::too_many_arguments)]
pub(crate) unsafe fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: *const f32,
    rsa: isize,
    csa: isize,
    b: *const f32,
    rsb: isize,
    csb: isize,
    beta: f32,
    c: *mut f32,
    rsc: isize,
    csc: isize,
) {
    // SAFETY: forwarded caller contract.
    unsafe {
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            for i in 0..m as isize {
                for j in 0..n as isize {
                    let p = c.offset(i * rsc + j * csc);
                    *p = if beta == 0.0 { 0.0 } else { beta * *p };
                }
            }
            return;
        }
        if csa == 1 && rsb == 1 && k >= DOT_MIN_K {
            return dot_gemm(m, k, n, alpha, a, rsa, b, csb, beta, c, rsc, csc);
        }
        PACKS.with(|cell| {
            let (ap, bp) = &mut *cell.borrow_mut();
            for jc in (0..n).step_by(NC) {
                let nc = NC.min(n - jc);
                let npanels = nc.div_ceil(NR);
                for pc in (0..k).step_by(KC) {
                    let kc = KC.min(k - pc);
                    let beta_eff = if pc == 0 { beta } else { 1.0 };
                    bp.resize(npanels * kc * NR, 0.0);
                    pack_b(
                        kc,
                        nc,
                        b.offset(pc as isize * rsb + jc as isize * csb),
                        rsb,
                        csb,
                        bp,
                    );
                    for ic in (0..m).step_by(MC) {
                        let mc = MC.min(m - ic);
                        let mpanels = mc.div_ceil(MR);
                        ap.resize(mpanels * kc * MR, 0.0);
                        pack_a(
                            mc,
                            kc,
                            a.offset(ic as isize * rsa + pc as isize * csa),
                            rsa,
                            csa,
                            ap,
                        );
                        for jr in 0..npanels {
                            let nr = NR.min(nc - jr * NR);
                            for ir in 0..mpanels {
                                let mr = MR.min(mc - ir * MR);
                                let tile = c.offset(
                                    (ic + ir * MR) as isize * rsc + (jc + jr * NR) as isize * csc,
                                );
                                kernel(
                                    kc,
                                    ap.as_ptr().add(ir * kc * MR),
                                    bp.as_ptr().add(jr * kc * NR),
                                    tile,
                                    rsc,
                                    csc,
                                    mr,
                                    nr,
                                    alpha,
                                    beta_eff,
                                );
                            }
                        }
                    }
                }
            }
        });
    }
}

/// Both operands contiguous along `k`: packing either one would be a
/// transposing gather as costly as the product itself, so each output is a
/// dot product of two rows. Blocks of `DJ` rows of B (one `KD` slice each,
/// L1-resident) are swept by `DI` rows of A at a time.
#[allow(clippy::too_many_arguments)]
#[target_feature(enable = "avx512f")]
unsafe fn dot_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: *const f32,
    rsa: isize,
    b: *const f32,
    csb: isize,
    beta: f32,
    c: *mut f32,
    rsc: isize,
    csc: isize,
) {
    // SAFETY: forwarded caller contract; rows past the edge are clamped to
    // the last valid one and their results discarded.
    unsafe {
        for kc0 in (0..k).step_by(KD) {
            let kc = KD.min(k - kc0);
            let beta_eff = if kc0 == 0 { beta } else { 1.0 };
            for j0 in (0..n).step_by(DJ) {
                let br: [*const f32; DJ] = core::array::from_fn(|r| {
                    b.offset((j0 + r).min(n - 1) as isize * csb + kc0 as isize)
                });
                for i0 in (0..m).step_by(DI) {
                    let ar: [*const f32; DI] = core::array::from_fn(|r| {
                        a.offset((i0 + r).min(m - 1) as isize * rsa + kc0 as isize)
                    });
                    let mut acc = [[_mm512_setzero_ps(); DJ]; DI];
                    let step = |acc: &mut [[__m512; DJ]; DI], p: usize, mask: __mmask16| {
                        let av: [__m512; DI] =
                            core::array::from_fn(|r| _mm512_maskz_loadu_ps(mask, ar[r].add(p)));
                        for (s, &bp) in br.iter().enumerate() {
                            let bv = _mm512_maskz_loadu_ps(mask, bp.add(p));
                            for (row, &av) in acc.iter_mut().zip(&av) {
                                row[s] = _mm512_fmadd_ps(av, bv, row[s]);
                            }
                        }
                    };
                    let full = kc - kc % 16;
                    for p in (0..full).step_by(16) {
                        step(&mut acc, p, !0);
                    }
                    if full < kc {
                        step(&mut acc, full, (1u16 << (kc - full)) - 1);
                    }
                    for (r, row) in acc.iter().enumerate().take(m - i0) {
                        for (s, &x) in row.iter().enumerate().take(n - j0) {
                            let dst = c.offset((i0 + r) as isize * rsc + (j0 + s) as isize * csc);
                            let v = alpha * _mm512_reduce_add_ps(x);
                            *dst = if beta_eff == 0.0 {
                                v
                            } else {
                                beta_eff.mul_add(*dst, v)
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Micro-panels of `NR` columns, each stored `p`-major: `out[(jp·kc + p)·NR + j]`.
unsafe fn pack_b(kc: usize, nc: usize, b: *const f32, rsb: isize, csb: isize, out: &mut [f32]) {
    // SAFETY: forwarded caller contract.
    unsafe {
        for (jp, panel) in out.chunks_exact_mut(kc * NR).enumerate() {
            let j0 = jp * NR;
            let w = NR.min(nc - j0);
            if w < NR {
                panel.fill(0.0);
            }
            if csb == 1 {
                for p in 0..kc {
                    let src =
                        core::slice::from_raw_parts(b.offset(p as isize * rsb + j0 as isize), w);
                    panel[p * NR..p * NR + w].copy_from_slice(src);
                }
            } else {
                for j in 0..w {
                    let col = b.offset((j0 + j) as isize * csb);
                    for p in 0..kc {
                        panel[p * NR + j] = *col.offset(p as isize * rsb);
                    }
                }
            }
        }
    }
}

/// Micro-panels of `MR` rows: `out[(ip·kc + p)·MR + i]`.
unsafe fn pack_a(mc: usize, kc: usize, a: *const f32, rsa: isize, csa: isize, out: &mut [f32]) {
    // SAFETY: forwarded caller contract.
    unsafe {
        for (ip, panel) in out.chunks_exact_mut(kc * MR).enumerate() {
            let i0 = ip * MR;
            let h = MR.min(mc - i0);
            if h < MR {
                panel.fill(0.0);
            }
            if rsa == 1 {
                for p in 0..kc {
                    let src =
                        core::slice::from_raw_parts(a.offset(p as isize * csa + i0 as isize), h);
                    panel[p * MR..p * MR + h].copy_from_slice(src);
                }
            } else {
                for i in 0..h {
                    let row = a.offset((i0 + i) as isize * rsa);
                    for p in 0..kc {
                        panel[p * MR + i] = *row.offset(p as isize * csa);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[target_feature(enable = "avx512f")]
unsafe fn kernel(
    kc: usize,
    ap: *const f32,
    bp: *const f32,
    c: *mut f32,
    rsc: isize,
    csc: isize,
    mr: usize,
    nr: usize,
    alpha: f32,
    beta: f32,
) {
    // SAFETY: forwarded caller contract.
    unsafe {
        let mut acc = [[_mm512_setzero_ps(); 2]; MR];
        for p in 0..kc {
            let b0 = _mm512_loadu_ps(bp.add(p * NR));
            let b1 = _mm512_loadu_ps(bp.add(p * NR + 16));
            let a = ap.add(p * MR);
            for (i, row) in acc.iter_mut().enumerate() {
                let ai = _mm512_set1_ps(*a.add(i));
                row[0] = _mm512_fmadd_ps(ai, b0, row[0]);
                row[1] = _mm512_fmadd_ps(ai, b1, row[1]);
            }
        }
        let av = _mm512_set1_ps(alpha);
        if mr == MR && nr == NR && csc == 1 {
            for (i, row) in acc.iter().enumerate() {
                let dst = c.offset(i as isize * rsc);
                for (h, &v) in row.iter().enumerate() {
                    let mut v = _mm512_mul_ps(v, av);
                    if beta != 0.0 {
                        v = _mm512_fmadd_ps(
                            _mm512_set1_ps(beta),
                            _mm512_loadu_ps(dst.add(16 * h)),
                            v,
                        );
                    }
                    _mm512_storeu_ps(dst.add(16 * h), v);
                }
            }
        } else {
            let mut tile = [0f32; MR * NR];
            for (i, row) in acc.iter().enumerate() {
                _mm512_storeu_ps(tile.as_mut_ptr().add(i * NR), row[0]);
                _mm512_storeu_ps(tile.as_mut_ptr().add(i * NR + 16), row[1]);
            }
            for i in 0..mr {
                for j in 0..nr {
                    let dst = c.offset(i as isize * rsc + j as isize * csc);
                    let v = alpha * tile[i * NR + j];
                    *dst = if beta == 0.0 {
                        v
                    } else {
                        beta.mul_add(*dst, v)
                    };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    fn reference(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (usize, usize),
        b: &[f32],
        sb: (usize, usize),
    ) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k)
                    .map(|p| a[i * sa.0 + p * sa.1] as f64 * b[p * sb.0 + j * sb.1] as f64)
                    .sum();
            }
        }
        c
    }

    #[test]
    fn matches_reference_on_ragged_shapes() {
        if !available() {
            return;
        }
        let mut seed = 1u32;
        let mut next = move || {
            seed = seed.wrapping_mul(1664525).wrapping_add(1013904223);
            (seed >> 8) as f32 / (1u32 << 24) as f32 - 0.5
        };
        for &(m, k, n) in &[
            (1, 1, 1),
            (8, 192, 32),
            (9, 193, 33),
            (16, 4096, 27),
            (144, 32, 1024),
            (3, 500, 2100),
            (33, 7, 65),
        ] {
            let a: Vec<f32> = (0..m * k).map(|_| next()).collect();
            let b: Vec<f32> = (0..k * n).map(|_| next()).collect();
            for (sa, sb) in [
                ((k, 1), (n, 1)),
                ((1, m), (1, k)),
                ((k, 1), (1, k)),
                ((1, m), (n, 1)),
            ] {
                let want = reference(m, k, n, &a, sa, &b, sb);
                for beta in [0.0f32, 1.0] {
                    let mut c = vec![if beta == 0.0 { f32::NAN } else { 0.25 }; m * n];
                    unsafe {
                        sgemm(
                            m,
                            k,
                            n,
                            1.0,
                            a.as_ptr(),
                            sa.0 as isize,
                            sa.1 as isize,
                            b.as_ptr(),
                            sb.0 as isize,
                            sb.1 as isize,
                            beta,
                            c.as_mut_ptr(),
                            n as isize,
                            1,
                        )
                    };
                    for (x, w) in c.iter().zip(&want) {
                        let w = w + if beta == 0.0 { 0.0 } else { 0.25 };
                        assert!(
                            (*x as f64 - w).abs() <= 1e-4 * (1.0 + (k as f64).sqrt()),
                            "{m}x{k}x{n} {sa:?} {sb:?}: {x} vs {w}"
                        );
                    }
                }
            }
        }
    }
}
