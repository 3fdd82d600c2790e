//! Fused GRU sequence scan with back-propagation through time.
//!
//! Gate blocks are stacked as (update z, reset r, candidate n) along the
//! first axis of `W` (3H×I), `U` (3H×H) and `b` (3H):
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! n  = tanh(W_n x + U_n (r⊙h) + b_n)
//! h' = (1−z)⊙h + z⊙n
//! ```

use super::{axpy, dot, gemm_nt_acc, NumError, Real, Tensor};

/// Forward activations kept for the backward pass. All buffers are indexed by
/// frame position `t` (not by processing order).
#[derive(Debug, Clone)]
pub struct GruScanSaved<T> {
    pub hs: Tensor<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
}

pub(crate) struct GruScanGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub du: Vec<T>,
    pub db: Vec<T>,
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn check_shapes<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize), NumError> {
    let (steps, input) = x.dims2();
    let (g3, wi) = w.dims2();
    if w.ndim() != 2 || g3 % 3 != 0 || wi != input {
        return Err(NumError::Dimension {
            op: "gru_scan(x, W)",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let hidden = g3 / 3;
    if u.shape() != [g3, hidden] {
        return Err(NumError::Dimension {
            op: "gru_scan(W, U)",
            left: w.shape().to_vec(),
            right: u.shape().to_vec(),
        });
    }
    if b.len() != g3 {
        return Err(NumError::Dimension {
            op: "gru_scan(W, b)",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok((steps, input, hidden))
}

fn order(steps: usize, reverse: bool) -> impl Iterator<Item = usize> + Clone {
    (0..steps).map(move |p| if reverse { steps - 1 - p } else { p })
}

/// Runs the recurrence over all frames of `x` (T×I), starting from a zero
/// state. `reverse` scans from the last frame to the first; the output row `t`
/// is always the state after consuming frame `t`.
pub fn gru_scan_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    b: &Tensor<T>,
    reverse: bool,
) -> Result<GruScanSaved<T>, NumError> {
    let (steps, input, h) = check_shapes(x, w, u, b)?;
    let g3 = 3 * h;
    // input projections for every frame at once
    let mut gx = vec![T::zero(); steps * g3];
    gemm_nt_acc(x.data(), w.data(), &mut gx, steps, input, g3);
    let bias = b.data();
    for row in gx.chunks_mut(g3) {
        for (v, &bv) in row.iter_mut().zip(bias) {
            *v += bv;
        }
    }

    let ud = u.data();
    let mut hs = vec![T::zero(); steps * h];
    let mut zs = vec![T::zero(); steps * h];
    let mut rs = vec![T::zero(); steps * h];
    let mut ns = vec![T::zero(); steps * h];
    let mut hprev = vec![T::zero(); h];
    let mut rh = vec![T::zero(); h];

    for t in order(steps, reverse) {
        let g = &gx[t * g3..(t + 1) * g3];
        let zt = &mut zs[t * h..(t + 1) * h];
        let rt = &mut rs[t * h..(t + 1) * h];
        for j in 0..h {
            zt[j] = sigmoid(g[j] + dot(&ud[j * h..(j + 1) * h], &hprev));
            rt[j] = sigmoid(g[h + j] + dot(&ud[(h + j) * h..(h + j + 1) * h], &hprev));
            rh[j] = rt[j] * hprev[j];
        }
        let nt = &mut ns[t * h..(t + 1) * h];
        let ht = &mut hs[t * h..(t + 1) * h];
        for j in 0..h {
            nt[j] = (g[2 * h + j] + dot(&ud[(2 * h + j) * h..(2 * h + j + 1) * h], &rh)).tanh();
            ht[j] = (T::one() - zt[j]) * hprev[j] + zt[j] * nt[j];
        }
        hprev.copy_from_slice(ht);
    }

    Ok(GruScanSaved {
        hs: Tensor::from_vec(&[steps, h], hs)?,
        z: zs,
        r: rs,
        n: ns,
    })
}

pub(crate) fn gru_scan_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    u: &Tensor<T>,
    saved: &GruScanSaved<T>,
    d_hs: &[T],
    reverse: bool,
    need_dx: bool,
) -> GruScanGrads<T> {
    let (steps, input) = x.dims2();
    let h = saved.hs.cols();
    let g3 = 3 * h;
    let ud = u.data();
    let hs = saved.hs.data();
    let zero_h = vec![T::zero(); h];

    // gradient of the gate pre-activations per frame, [da_z, da_r, da_n]
    let mut da_all = vec![T::zero(); steps * g3];
    let mut du = vec![T::zero(); g3 * h];
    let mut dh_next = vec![T::zero(); h];
    let mut rh = vec![T::zero(); h];
    let mut drh = vec![T::zero(); h];

    let fwd: Vec<usize> = order(steps, reverse).collect();
    for p in (0..steps).rev() {
        let t = fwd[p];
        let hprev: &[T] = if p == 0 {
            &zero_h
        } else {
            let tp = fwd[p - 1];
            &hs[tp * h..(tp + 1) * h]
        };
        let z = &saved.z[t * h..(t + 1) * h];
        let r = &saved.r[t * h..(t + 1) * h];
        let n = &saved.n[t * h..(t + 1) * h];
        let da = &mut da_all[t * g3..(t + 1) * g3];

        let mut dh_prev = vec![T::zero(); h];
        for j in 0..h {
            let dh = d_hs[t * h + j] + dh_next[j];
            let dz = dh * (n[j] - hprev[j]);
            let dn = dh * z[j];
            dh_prev[j] = dh * (T::one() - z[j]);
            da[j] = dz * z[j] * (T::one() - z[j]);
            da[2 * h + j] = dn * (T::one() - n[j] * n[j]);
            rh[j] = r[j] * hprev[j];
        }
        // candidate block: d(r⊙h) = U_nᵀ da_n, dU_n += da_n ⊗ (r⊙h)
        drh.iter_mut().for_each(|v| *v = T::zero());
        for j in 0..h {
            let a = da[2 * h + j];
            let row = (2 * h + j) * h;
            axpy(a, &ud[row..row + h], &mut drh);
            axpy(a, &rh, &mut du[row..row + h]);
        }
        for j in 0..h {
            let dr = drh[j] * hprev[j];
            dh_prev[j] += drh[j] * r[j];
            da[h + j] = dr * r[j] * (T::one() - r[j]);
        }
        // update and reset blocks
        for j in 0..2 * h {
            let a = da[j];
            let row = j * h;
            axpy(a, &ud[row..row + h], &mut dh_prev);
            axpy(a, hprev, &mut du[row..row + h]);
        }
        dh_next = dh_prev;
    }

    // dW = daᵀ·X, db = Σ_t da, dx = da·W
    let mut dw = vec![T::zero(); g3 * input];
    super::gemm_tn_acc(&da_all, x.data(), &mut dw, g3, steps, input);
    let mut db = vec![T::zero(); g3];
    for row in da_all.chunks(g3) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); steps * input];
        super::gemm_acc(&da_all, w.data(), &mut dx, steps, g3, input);
        dx
    });
    GruScanGrads { dx, dw, du, db }
}
