//! Dense matmul and convolution kernels with their adjoints.
//!
//! Every kernel computes each output element with a fixed sequential
//! reduction order; parallelism only splits disjoint output regions across
//! workers, so results are bit-identical for any thread count.

use rayon::prelude::*;

use crate::threading;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 1 << 16;

/// c[i,j] = sum_k a[i,k] * b[k,j]; a is [m,k], b is [k,n].
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |i: usize, out: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    };
    if m * k * n < PAR_THRESHOLD || m == 1 {
        for i in 0..m {
            row(i, &mut c[i * n..(i + 1) * n]);
        }
    } else {
        threading::install(|| {
            c.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out)| row(i, out));
        });
    }
    c
}

/// c[i,j] = sum_k a[i,k] * b[j,k]; a is [m,k], b is [n,k] (i.e. a . b^T).
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |i: usize, out: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in out.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    };
    if m * k * n < PAR_THRESHOLD || m == 1 {
        for i in 0..m {
            row(i, &mut c[i * n..(i + 1) * n]);
        }
    } else {
        threading::install(|| {
            c.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out)| row(i, out));
        });
    }
    c
}

/// c[i,j] = sum_r a[r,i] * b[r,j]; a is [r,m], b is [r,n] (i.e. a^T . b).
pub fn matmul_tn(a: &[f64], b: &[f64], r: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |i: usize, out: &mut [f64]| {
        for rr in 0..r {
            let ari = a[rr * m + i];
            if ari == 0.0 {
                continue;
            }
            let brow = &b[rr * n..(rr + 1) * n];
            for (o, &bv) in out.iter_mut().zip(brow) {
                *o += ari * bv;
            }
        }
    };
    if r * m * n < PAR_THRESHOLD || m == 1 {
        for i in 0..m {
            row(i, &mut c[i * n..(i + 1) * n]);
        }
    } else {
        threading::install(|| {
            c.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, out)| row(i, out));
        });
    }
    c
}

/// Geometry of one conv / transposed-conv application.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvDims {
    fn in_sample(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }
    fn out_sample(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }
}

/// Valid cross-correlation plus bias. Input [N,H,W,Cin] NHWC, kernel
/// [kh,kw,Cin,Cout], bias [Cout].
pub fn conv2d_forward(input: &[f64], kernel: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.out_sample()];
    let sample = |n: usize, o: &mut [f64]| {
        let x = &input[n * d.in_sample()..(n + 1) * d.in_sample()];
        for i in 0..d.out_h {
            for j in 0..d.out_w {
                let acc = &mut o[(i * d.out_w + j) * d.out_c..(i * d.out_w + j + 1) * d.out_c];
                acc.copy_from_slice(bias);
                for ki in 0..d.k_h {
                    let ri = i * d.stride_h + ki;
                    for kj in 0..d.k_w {
                        let rj = j * d.stride_w + kj;
                        let xpix = &x[(ri * d.in_w + rj) * d.in_c..(ri * d.in_w + rj + 1) * d.in_c];
                        let kbase = (ki * d.k_w + kj) * d.in_c * d.out_c;
                        for (ci, &xv) in xpix.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let krow = &kernel[kbase + ci * d.out_c..kbase + (ci + 1) * d.out_c];
                            for (a, &kv) in acc.iter_mut().zip(krow) {
                                *a += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    };
    run_per_sample(&mut out, d.out_sample(), d.batch, sample);
    out
}

/// Gradients of `conv2d_forward` w.r.t. input, kernel, and bias.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_input = vec![0.0; input.len()];
    let sample = |n: usize, dx: &mut [f64]| {
        let g = &grad_out[n * d.out_sample()..(n + 1) * d.out_sample()];
        for i in 0..d.out_h {
            for j in 0..d.out_w {
                let gpix = &g[(i * d.out_w + j) * d.out_c..(i * d.out_w + j + 1) * d.out_c];
                for ki in 0..d.k_h {
                    let ri = i * d.stride_h + ki;
                    for kj in 0..d.k_w {
                        let rj = j * d.stride_w + kj;
                        let kbase = (ki * d.k_w + kj) * d.in_c * d.out_c;
                        let dpix =
                            &mut dx[(ri * d.in_w + rj) * d.in_c..(ri * d.in_w + rj + 1) * d.in_c];
                        for (ci, dv) in dpix.iter_mut().enumerate() {
                            let krow = &kernel[kbase + ci * d.out_c..kbase + (ci + 1) * d.out_c];
                            let mut acc = 0.0;
                            for (&gv, &kv) in gpix.iter().zip(krow) {
                                acc += gv * kv;
                            }
                            *dv += acc;
                        }
                    }
                }
            }
        }
    };
    run_per_sample(&mut d_input, d.in_sample(), d.batch, sample);

    // Kernel and bias gradients reduce over the batch; compute per-sample
    // partials in parallel, then fold in sample order.
    let ksize = d.k_h * d.k_w * d.in_c * d.out_c;
    let partials: Vec<(Vec<f64>, Vec<f64>)> = threading::install(|| {
        (0..d.batch)
            .into_par_iter()
            .map(|n| {
                let x = &input[n * d.in_sample()..(n + 1) * d.in_sample()];
                let g = &grad_out[n * d.out_sample()..(n + 1) * d.out_sample()];
                let mut dk = vec![0.0; ksize];
                let mut db = vec![0.0; d.out_c];
                for i in 0..d.out_h {
                    for j in 0..d.out_w {
                        let gpix =
                            &g[(i * d.out_w + j) * d.out_c..(i * d.out_w + j + 1) * d.out_c];
                        for (b, &gv) in db.iter_mut().zip(gpix) {
                            *b += gv;
                        }
                        for ki in 0..d.k_h {
                            let ri = i * d.stride_h + ki;
                            for kj in 0..d.k_w {
                                let rj = j * d.stride_w + kj;
                                let xpix = &x[(ri * d.in_w + rj) * d.in_c
                                    ..(ri * d.in_w + rj + 1) * d.in_c];
                                let kbase = (ki * d.k_w + kj) * d.in_c * d.out_c;
                                for (ci, &xv) in xpix.iter().enumerate() {
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let krow = &mut dk
                                        [kbase + ci * d.out_c..kbase + (ci + 1) * d.out_c];
                                    for (kv, &gv) in krow.iter_mut().zip(gpix) {
                                        *kv += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                (dk, db)
            })
            .collect()
    });
    let mut d_kernel = vec![0.0; ksize];
    let mut d_bias = vec![0.0; d.out_c];
    for (dk, db) in &partials {
        for (a, &v) in d_kernel.iter_mut().zip(dk) {
            *a += v;
        }
        for (a, &v) in d_bias.iter_mut().zip(db) {
            *a += v;
        }
    }
    (d_input, d_kernel, d_bias)
}

/// Transposed convolution: output extents are input extents times stride;
/// scatter contributions falling outside are clipped. Input [N,H,W,Cin],
/// kernel [kh,kw,Cout,Cin], bias [Cout]; `out_h = in_h * stride_h`.
pub fn conv2d_transpose_forward(
    input: &[f64],
    kernel: &[f64],
    bias: &[f64],
    d: &ConvDims,
) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.out_sample()];
    let sample = |n: usize, o: &mut [f64]| {
        for pix in o.chunks_exact_mut(d.out_c) {
            pix.copy_from_slice(bias);
        }
        let x = &input[n * d.in_sample()..(n + 1) * d.in_sample()];
        for i in 0..d.in_h {
            for j in 0..d.in_w {
                let xpix = &x[(i * d.in_w + j) * d.in_c..(i * d.in_w + j + 1) * d.in_c];
                for ki in 0..d.k_h {
                    let oi = i * d.stride_h + ki;
                    if oi >= d.out_h {
                        break;
                    }
                    for kj in 0..d.k_w {
                        let oj = j * d.stride_w + kj;
                        if oj >= d.out_w {
                            break;
                        }
                        let opix =
                            &mut o[(oi * d.out_w + oj) * d.out_c..(oi * d.out_w + oj + 1) * d.out_c];
                        let kbase = (ki * d.k_w + kj) * d.out_c * d.in_c;
                        for (co, ov) in opix.iter_mut().enumerate() {
                            let krow = &kernel[kbase + co * d.in_c..kbase + (co + 1) * d.in_c];
                            let mut acc = 0.0;
                            for (&xv, &kv) in xpix.iter().zip(krow) {
                                acc += xv * kv;
                            }
                            *ov += acc;
                        }
                    }
                }
            }
        }
    };
    run_per_sample(&mut out, d.out_sample(), d.batch, sample);
    out
}

/// Gradients of `conv2d_transpose_forward` w.r.t. input, kernel, and bias.
pub fn conv2d_transpose_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    d: &ConvDims,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_input = vec![0.0; input.len()];
    let sample = |n: usize, dx: &mut [f64]| {
        let g = &grad_out[n * d.out_sample()..(n + 1) * d.out_sample()];
        for i in 0..d.in_h {
            for j in 0..d.in_w {
                let dpix = &mut dx[(i * d.in_w + j) * d.in_c..(i * d.in_w + j + 1) * d.in_c];
                for ki in 0..d.k_h {
                    let oi = i * d.stride_h + ki;
                    if oi >= d.out_h {
                        break;
                    }
                    for kj in 0..d.k_w {
                        let oj = j * d.stride_w + kj;
                        if oj >= d.out_w {
                            break;
                        }
                        let gpix =
                            &g[(oi * d.out_w + oj) * d.out_c..(oi * d.out_w + oj + 1) * d.out_c];
                        let kbase = (ki * d.k_w + kj) * d.out_c * d.in_c;
                        for (co, &gv) in gpix.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let krow = &kernel[kbase + co * d.in_c..kbase + (co + 1) * d.in_c];
                            for (dv, &kv) in dpix.iter_mut().zip(krow) {
                                *dv += gv * kv;
                            }
                        }
                    }
                }
            }
        }
    };
    run_per_sample(&mut d_input, d.in_sample(), d.batch, sample);

    let ksize = d.k_h * d.k_w * d.out_c * d.in_c;
    let partials: Vec<(Vec<f64>, Vec<f64>)> = threading::install(|| {
        (0..d.batch)
            .into_par_iter()
            .map(|n| {
                let x = &input[n * d.in_sample()..(n + 1) * d.in_sample()];
                let g = &grad_out[n * d.out_sample()..(n + 1) * d.out_sample()];
                let mut dk = vec![0.0; ksize];
                let mut db = vec![0.0; d.out_c];
                for gpix in g.chunks_exact(d.out_c) {
                    for (b, &gv) in db.iter_mut().zip(gpix) {
                        *b += gv;
                    }
                }
                for i in 0..d.in_h {
                    for j in 0..d.in_w {
                        let xpix = &x[(i * d.in_w + j) * d.in_c..(i * d.in_w + j + 1) * d.in_c];
                        for ki in 0..d.k_h {
                            let oi = i * d.stride_h + ki;
                            if oi >= d.out_h {
                                break;
                            }
                            for kj in 0..d.k_w {
                                let oj = j * d.stride_w + kj;
                                if oj >= d.out_w {
                                    break;
                                }
                                let gpix = &g[(oi * d.out_w + oj) * d.out_c
                                    ..(oi * d.out_w + oj + 1) * d.out_c];
                                let kbase = (ki * d.k_w + kj) * d.out_c * d.in_c;
                                for (co, &gv) in gpix.iter().enumerate() {
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    let krow =
                                        &mut dk[kbase + co * d.in_c..kbase + (co + 1) * d.in_c];
                                    for (kv, &xv) in krow.iter_mut().zip(xpix) {
                                        *kv += gv * xv;
                                    }
                                }
                            }
                        }
                    }
                }
                (dk, db)
            })
            .collect()
    });
    let mut d_kernel = vec![0.0; ksize];
    let mut d_bias = vec![0.0; d.out_c];
    for (dk, db) in &partials {
        for (a, &v) in d_kernel.iter_mut().zip(dk) {
            *a += v;
        }
        for (a, &v) in d_bias.iter_mut().zip(db) {
            *a += v;
        }
    }
    (d_input, d_kernel, d_bias)
}

fn run_per_sample(
    out: &mut [f64],
    sample_len: usize,
    batch: usize,
    f: impl Fn(usize, &mut [f64]) + Sync,
) {
    if batch == 0 || sample_len == 0 {
        return;
    }
    if batch == 1 || batch * sample_len < PAR_THRESHOLD {
        for (n, chunk) in out.chunks_exact_mut(sample_len).enumerate() {
            f(n, chunk);
        }
    } else {
        threading::install(|| {
            out.par_chunks_exact_mut(sample_len)
                .enumerate()
                .for_each(|(n, chunk)| f(n, chunk));
        });
    }
}
