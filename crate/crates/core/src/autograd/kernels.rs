//! Raw loops behind the convolution and pooling primitives. Everything here
//! works on flat row-major slices; shape validation happens in the tape.

/// Geometry shared by conv3d and pool3d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub batch: usize,
    pub in_ch: usize,
    pub input: [usize; 3],
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub output: [usize; 3],
}

impl Geom {
    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Output positions `o` in `[lo, hi)` for which `o*stride + k - pad` lands in `[0, len)`.
#[inline]
fn valid_range(len: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // need o*stride + k - pad <= len - 1
    let hi = if len + pad < k + 1 {
        0
    } else {
        ((len - 1 + pad - k) / stride + 1).min(out)
    };
    (lo, hi.max(lo))
}

pub(crate) fn conv3d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Geom) -> Vec<f64> {
    let [it, ih, iw] = g.input;
    let [ot, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let (in_plane, out_plane, kvol) = (g.in_plane(), g.out_plane(), g.kernel_volume());
    let mut out = vec![0.0; g.batch * g.out_ch * out_plane];

    for n in 0..g.batch {
        for o in 0..g.out_ch {
            let obase = (n * g.out_ch + o) * out_plane;
            let dst = &mut out[obase..obase + out_plane];
            if let Some(b) = bias {
                dst.iter_mut().for_each(|v| *v = b[o]);
            }
            for c in 0..g.in_ch {
                let xbase = (n * g.in_ch + c) * in_plane;
                let src = &x[xbase..xbase + in_plane];
                let wbase = (o * g.in_ch + c) * kvol;
                for dt in 0..kt {
                    let (t_lo, t_hi) = valid_range(it, ot, dt, st, pt);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = valid_range(ih, oh, dh, sh, ph);
                        for dw in 0..kw {
                            let (w_lo, w_hi) = valid_range(iw, ow, dw, sw, pw);
                            let wv = w[wbase + (dt * kh + dh) * kw + dw];
                            for to in t_lo..t_hi {
                                let ti = to * st + dt - pt;
                                for ho in h_lo..h_hi {
                                    let hi = ho * sh + dh - ph;
                                    let srow = (ti * ih + hi) * iw;
                                    let drow = (to * oh + ho) * ow;
                                    for wo in w_lo..w_hi {
                                        dst[drow + wo] += wv * src[srow + wo * sw + dw - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias).
pub(crate) fn conv3d_backward(x: &[f64], w: &[f64], gout: &[f64], g: &Geom) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [it, ih, iw] = g.input;
    let [ot, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let (in_plane, out_plane, kvol) = (g.in_plane(), g.out_plane(), g.kernel_volume());
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; g.out_ch];

    for n in 0..g.batch {
        for (o, gbo) in gb.iter_mut().enumerate() {
            let obase = (n * g.out_ch + o) * out_plane;
            let go = &gout[obase..obase + out_plane];
            *gbo += go.iter().sum::<f64>();
            for c in 0..g.in_ch {
                let xbase = (n * g.in_ch + c) * in_plane;
                let src = &x[xbase..xbase + in_plane];
                let gsrc = &mut gx[xbase..xbase + in_plane];
                let wbase = (o * g.in_ch + c) * kvol;
                for dt in 0..kt {
                    let (t_lo, t_hi) = valid_range(it, ot, dt, st, pt);
                    for dh in 0..kh {
                        let (h_lo, h_hi) = valid_range(ih, oh, dh, sh, ph);
                        for dw in 0..kw {
                            let (w_lo, w_hi) = valid_range(iw, ow, dw, sw, pw);
                            let widx = wbase + (dt * kh + dh) * kw + dw;
                            let wv = w[widx];
                            let mut acc = 0.0;
                            for to in t_lo..t_hi {
                                let ti = to * st + dt - pt;
                                for ho in h_lo..h_hi {
                                    let hi = ho * sh + dh - ph;
                                    let srow = (ti * ih + hi) * iw;
                                    let drow = (to * oh + ho) * ow;
                                    for wo in w_lo..w_hi {
                                        let xi = srow + wo * sw + dw - pw;
                                        let gv = go[drow + wo];
                                        acc += gv * src[xi];
                                        gsrc[xi] += wv * gv;
                                    }
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Max pooling; returns the output and, per output element, the flat input
/// index that won (first maximum in scan order).
pub(crate) fn max_pool3d_forward(x: &[f64], g: &Geom) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.batch * g.in_ch * g.out_plane());
    let mut arg = Vec::with_capacity(out.capacity());
    pool_windows(g, |base, taps| {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = usize::MAX;
        for i in taps {
            let v = x[base + i];
            if v > best || best_i == usize::MAX {
                best = v;
                best_i = base + i;
            }
        }
        out.push(best);
        arg.push(best_i);
    });
    (out, arg)
}

/// Average pooling over the in-bounds taps of each window.
pub(crate) fn avg_pool3d_forward(x: &[f64], g: &Geom) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.batch * g.in_ch * g.out_plane());
    pool_windows(g, |base, taps| {
        let n = taps.len() as f64;
        out.push(taps.iter().map(|&i| x[base + i]).sum::<f64>() / n);
    });
    out
}

pub(crate) fn avg_pool3d_backward(gout: &[f64], in_len: usize, g: &Geom) -> Vec<f64> {
    let mut gx = vec![0.0; in_len];
    let mut k = 0;
    pool_windows(g, |base, taps| {
        let share = gout[k] / taps.len() as f64;
        for &i in taps {
            gx[base + i] += share;
        }
        k += 1;
    });
    gx
}

/// Visits every pooling window in output order, passing the plane base
/// offset and the in-plane offsets of the in-bounds taps.
fn pool_windows(g: &Geom, mut f: impl FnMut(usize, &[usize])) {
    let [it, ih, iw] = g.input;
    let [ot, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let plane = g.in_plane();
    let mut taps = Vec::with_capacity(g.kernel_volume());
    for nc in 0..g.batch * g.in_ch {
        let base = nc * plane;
        for to in 0..ot {
            for ho in 0..oh {
                for wo in 0..ow {
                    taps.clear();
                    for dt in 0..kt {
                        let t = (to * st + dt) as isize - pt as isize;
                        if t < 0 || t >= it as isize {
                            continue;
                        }
                        for dh in 0..kh {
                            let h = (ho * sh + dh) as isize - ph as isize;
                            if h < 0 || h >= ih as isize {
                                continue;
                            }
                            for dw in 0..kw {
                                let w = (wo * sw + dw) as isize - pw as isize;
                                if w < 0 || w >= iw as isize {
                                    continue;
                                }
                                taps.push((t as usize * ih + h as usize) * iw + w as usize);
                            }
                        }
                    }
                    f(base, &taps);
                }
            }
        }
    }
}
