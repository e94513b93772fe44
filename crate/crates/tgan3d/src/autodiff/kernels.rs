//! Direct convolution kernels shared by the tape ops and the bench suite.
//!
//! All variants are expressed over up to three spatial axes; lower-rank
//! convolutions pad the leading axes with extent-1 dummies. Forward passes
//! may run data-parallel over (sample, output-channel) slices; each slice is
//! written by exactly one task, so results are bit-identical to the
//! sequential path.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub in_sp: [usize; 3],
    pub k: [usize; 3],
    pub out_sp: [usize; 3],
    pub stride: usize,
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Geometry for a forward convolution: out = floor((in + 2p - k)/s) + 1.
    pub fn conv(
        n: usize,
        cin: usize,
        cout: usize,
        in_sp: [usize; 3],
        k: [usize; 3],
        stride: usize,
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut out_sp = [0; 3];
        for d in 0..3 {
            let numer = in_sp[d] + 2 * pad[d];
            if numer < k[d] {
                return Err(Error::invalid(format!(
                    "conv: input extent {} + 2*pad {} smaller than kernel {}",
                    in_sp[d], pad[d], k[d]
                )));
            }
            out_sp[d] = (numer - k[d]) / stride + 1;
        }
        Ok(ConvGeom {
            n,
            cin,
            cout,
            in_sp,
            k,
            out_sp,
            stride,
            pad,
        })
    }

    /// Geometry for a transposed convolution: out = (in - 1)s - 2p + k.
    pub fn conv_transpose(
        n: usize,
        cin: usize,
        cout: usize,
        in_sp: [usize; 3],
        k: [usize; 3],
        stride: usize,
        pad: [usize; 3],
    ) -> Result<Self> {
        let mut out_sp = [0; 3];
        for d in 0..3 {
            let grown = (in_sp[d] - 1) * stride + k[d];
            if grown < 2 * pad[d] + 1 {
                return Err(Error::invalid(format!(
                    "conv_transpose: output extent would be non-positive on axis {d}"
                )));
            }
            out_sp[d] = grown - 2 * pad[d];
        }
        Ok(ConvGeom {
            n,
            cin,
            cout,
            in_sp,
            k,
            out_sp,
            stride,
            pad,
        })
    }

    pub fn in_total(&self) -> usize {
        self.in_sp.iter().product()
    }

    pub fn out_total(&self) -> usize {
        self.out_sp.iter().product()
    }

    pub fn k_total(&self) -> usize {
        self.k.iter().product()
    }
}

/// Run `f` over equally sized chunks, in parallel when requested and the
/// `parallel` feature is enabled.
pub fn for_each_chunk(
    out: &mut [f64],
    chunk: usize,
    parallel: bool,
    f: impl Fn(usize, &mut [f64]) + Sync + Send,
) {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = parallel;
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Forward convolution. weight layout [cout, cin, k0, k1, k2].
pub fn conv_forward(input: &[f64], weight: &[f64], g: &ConvGeom, parallel: bool) -> Vec<f64> {
    let in_total = g.in_total();
    let out_total = g.out_total();
    let k_total = g.k_total();
    let [i1, i2] = [g.in_sp[1], g.in_sp[2]];
    let mut out = vec![0.0; g.n * g.cout * out_total];
    for_each_chunk(&mut out, out_total, parallel, |slot, chunk| {
        let n = slot / g.cout;
        let oc = slot % g.cout;
        let in_base = n * g.cin * in_total;
        let mut o = 0usize;
        for od0 in 0..g.out_sp[0] {
            for od1 in 0..g.out_sp[1] {
                for od2 in 0..g.out_sp[2] {
                    let mut acc = 0.0;
                    for ic in 0..g.cin {
                        let ib = in_base + ic * in_total;
                        let wb = (oc * g.cin + ic) * k_total;
                        for k0 in 0..g.k[0] {
                            let p0 = (od0 * g.stride + k0) as isize - g.pad[0] as isize;
                            if p0 < 0 || p0 >= g.in_sp[0] as isize {
                                continue;
                            }
                            for k1 in 0..g.k[1] {
                                let p1 = (od1 * g.stride + k1) as isize - g.pad[1] as isize;
                                if p1 < 0 || p1 >= i1 as isize {
                                    continue;
                                }
                                for k2 in 0..g.k[2] {
                                    let p2 = (od2 * g.stride + k2) as isize - g.pad[2] as isize;
                                    if p2 < 0 || p2 >= i2 as isize {
                                        continue;
                                    }
                                    let ii = ib
                                        + (p0 as usize * i1 + p1 as usize) * i2
                                        + p2 as usize;
                                    let wi = wb + (k0 * g.k[1] + k1) * g.k[2] + k2;
                                    acc += input[ii] * weight[wi];
                                }
                            }
                        }
                    }
                    chunk[o] = acc;
                    o += 1;
                }
            }
        }
    });
    out
}

/// Backward of `conv_forward`: gradients w.r.t. input and weight.
pub fn conv_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let in_total = g.in_total();
    let out_total = g.out_total();
    let k_total = g.k_total();
    let [i1, i2] = [g.in_sp[1], g.in_sp[2]];
    let mut d_in = vec![0.0; g.n * g.cin * in_total];
    let mut d_w = vec![0.0; g.cout * g.cin * k_total];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let out_base = (n * g.cout + oc) * out_total;
            let in_base = n * g.cin * in_total;
            let mut o = 0usize;
            for od0 in 0..g.out_sp[0] {
                for od1 in 0..g.out_sp[1] {
                    for od2 in 0..g.out_sp[2] {
                        let gv = grad_out[out_base + o];
                        o += 1;
                        if gv == 0.0 {
                            continue;
                        }
                        for ic in 0..g.cin {
                            let ib = in_base + ic * in_total;
                            let wb = (oc * g.cin + ic) * k_total;
                            for k0 in 0..g.k[0] {
                                let p0 = (od0 * g.stride + k0) as isize - g.pad[0] as isize;
                                if p0 < 0 || p0 >= g.in_sp[0] as isize {
                                    continue;
                                }
                                for k1 in 0..g.k[1] {
                                    let p1 = (od1 * g.stride + k1) as isize - g.pad[1] as isize;
                                    if p1 < 0 || p1 >= i1 as isize {
                                        continue;
                                    }
                                    for k2 in 0..g.k[2] {
                                        let p2 =
                                            (od2 * g.stride + k2) as isize - g.pad[2] as isize;
                                        if p2 < 0 || p2 >= i2 as isize {
                                            continue;
                                        }
                                        let ii = ib
                                            + (p0 as usize * i1 + p1 as usize) * i2
                                            + p2 as usize;
                                        let wi = wb + (k0 * g.k[1] + k1) * g.k[2] + k2;
                                        d_in[ii] += gv * weight[wi];
                                        d_w[wi] += gv * input[ii];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (d_in, d_w)
}

/// Forward transposed convolution. weight layout [cin, cout, k0, k1, k2].
pub fn conv_transpose_forward(
    input: &[f64],
    weight: &[f64],
    g: &ConvGeom,
    parallel: bool,
) -> Vec<f64> {
    let in_total = g.in_total();
    let out_total = g.out_total();
    let k_total = g.k_total();
    let [o1, o2] = [g.out_sp[1], g.out_sp[2]];
    let mut out = vec![0.0; g.n * g.cout * out_total];
    for_each_chunk(&mut out, out_total, parallel, |slot, chunk| {
        let n = slot / g.cout;
        let oc = slot % g.cout;
        let in_base = n * g.cin * in_total;
        for ic in 0..g.cin {
            let ib = in_base + ic * in_total;
            let wb = (ic * g.cout + oc) * k_total;
            let mut i = 0usize;
            for id0 in 0..g.in_sp[0] {
                for id1 in 0..g.in_sp[1] {
                    for id2 in 0..g.in_sp[2] {
                        let x = input[ib + i];
                        i += 1;
                        if x == 0.0 {
                            continue;
                        }
                        for k0 in 0..g.k[0] {
                            let p0 = (id0 * g.stride + k0) as isize - g.pad[0] as isize;
                            if p0 < 0 || p0 >= g.out_sp[0] as isize {
                                continue;
                            }
                            for k1 in 0..g.k[1] {
                                let p1 = (id1 * g.stride + k1) as isize - g.pad[1] as isize;
                                if p1 < 0 || p1 >= o1 as isize {
                                    continue;
                                }
                                for k2 in 0..g.k[2] {
                                    let p2 = (id2 * g.stride + k2) as isize - g.pad[2] as isize;
                                    if p2 < 0 || p2 >= o2 as isize {
                                        continue;
                                    }
                                    let oi = (p0 as usize * o1 + p1 as usize) * o2 + p2 as usize;
                                    let wi = wb + (k0 * g.k[1] + k1) * g.k[2] + k2;
                                    chunk[oi] += x * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Backward of `conv_transpose_forward`.
pub fn conv_transpose_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let in_total = g.in_total();
    let out_total = g.out_total();
    let k_total = g.k_total();
    let [o1, o2] = [g.out_sp[1], g.out_sp[2]];
    let mut d_in = vec![0.0; g.n * g.cin * in_total];
    let mut d_w = vec![0.0; g.cin * g.cout * k_total];
    for n in 0..g.n {
        for ic in 0..g.cin {
            let ib = (n * g.cin + ic) * in_total;
            let mut i = 0usize;
            for id0 in 0..g.in_sp[0] {
                for id1 in 0..g.in_sp[1] {
                    for id2 in 0..g.in_sp[2] {
                        let x = input[ib + i];
                        let mut dx = 0.0;
                        for oc in 0..g.cout {
                            let ob = (n * g.cout + oc) * out_total;
                            let wb = (ic * g.cout + oc) * k_total;
                            for k0 in 0..g.k[0] {
                                let p0 = (id0 * g.stride + k0) as isize - g.pad[0] as isize;
                                if p0 < 0 || p0 >= g.out_sp[0] as isize {
                                    continue;
                                }
                                for k1 in 0..g.k[1] {
                                    let p1 = (id1 * g.stride + k1) as isize - g.pad[1] as isize;
                                    if p1 < 0 || p1 >= o1 as isize {
                                        continue;
                                    }
                                    for k2 in 0..g.k[2] {
                                        let p2 =
                                            (id2 * g.stride + k2) as isize - g.pad[2] as isize;
                                        if p2 < 0 || p2 >= o2 as isize {
                                            continue;
                                        }
                                        let oi = ob
                                            + (p0 as usize * o1 + p1 as usize) * o2
                                            + p2 as usize;
                                        let wi = wb + (k0 * g.k[1] + k1) * g.k[2] + k2;
                                        dx += grad_out[oi] * weight[wi];
                                        d_w[wi] += x * grad_out[oi];
                                    }
                                }
                            }
                        }
                        d_in[ib + i] = dx;
                        i += 1;
                    }
                }
            }
        }
    }
    (d_in, d_w)
}
