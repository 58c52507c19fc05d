//! Grouped 3D convolution (cross-correlation) with autodiff.
//!
//! Padding is implicit "same" for odd kernels at stride 1: each spatial
//! axis is zero-padded by `kernel/2`, so kernel 3 preserves extents and
//! kernel 1 applies no padding.

use super::Tensor;
use crate::error::TensorError;
use crate::scalar::Scalar;

/// 3D convolution.
///
/// - `x`: (batch, in_channels, T, H, W)
/// - `w`: (out_channels, in_channels/groups, kT, kH, kW)
/// - `bias`: optional (out_channels,)
/// - `groups == in_channels` with one input channel per filter gives
///   depthwise behavior; `groups == 1` with a 1x1x1 kernel is a pointwise
///   channel mixer.
pub fn conv3d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: (usize, usize, usize),
    groups: usize,
) -> Result<Tensor<S>, TensorError> {
    let xs = x.shape().to_vec();
    let ws = w.shape().to_vec();
    if xs.len() != 5 || ws.len() != 5 {
        return Err(TensorError::ShapeMismatch {
            op: "conv3d",
            lhs: xs,
            rhs: ws,
        });
    }
    let (batch, cin, t, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (cout, cin_g, kt, kh, kw) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(TensorError::Config {
            op: "conv3d",
            msg: format!(
                "channels ({cin} in, {cout} out) not divisible by groups {groups}"
            ),
        });
    }
    if cin_g != cin / groups {
        return Err(TensorError::Config {
            op: "conv3d",
            msg: format!(
                "weight expects {cin_g} channels per group, input has {} ({cin}/{groups})",
                cin / groups
            ),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![cout],
            });
        }
    }
    let (st, sh, sw) = stride;
    if st == 0 || sh == 0 || sw == 0 {
        return Err(TensorError::Config {
            op: "conv3d",
            msg: "zero stride".into(),
        });
    }
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let out_dim = |n: usize, k: usize, p: usize, s: usize| -> Option<usize> {
        (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
    };
    let (ot, oh, ow) = match (
        out_dim(t, kt, pt, st),
        out_dim(h, kh, ph, sh),
        out_dim(wd, kw, pw, sw),
    ) {
        (Some(a), Some(b), Some(c)) if a > 0 && b > 0 && c > 0 => (a, b, c),
        _ => {
            return Err(TensorError::Config {
                op: "conv3d",
                msg: format!(
                    "input ({t}, {h}, {wd}) too small for kernel ({kt}, {kh}, {kw})"
                ),
            })
        }
    };

    let cpg_out = cout / groups;
    let geom = Geometry {
        batch,
        cin,
        t,
        h,
        w: wd,
        cout,
        cin_g,
        kt,
        kh,
        kw,
        st,
        sh,
        sw,
        pt,
        ph,
        pw,
        ot,
        oh,
        ow,
        cpg_out,
    };

    let mut data = vec![S::zero(); batch * cout * ot * oh * ow];
    {
        let xd = x.data();
        let wdod = w.data();
        forward_kernel(&geom, &xd, &wdod, &mut data);
        if let Some(b) = bias {
            let bd = b.data();
            let plane = ot * oh * ow;
            for bi in 0..batch {
                for co in 0..cout {
                    let base = (bi * cout + co) * plane;
                    let bv = bd[co];
                    for v in &mut data[base..base + plane] {
                        *v += bv;
                    }
                }
            }
        }
    }

    let px = x.clone();
    let pw_ = w.clone();
    let pb = bias.cloned();
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let backward = move |g: &[S]| {
        let xd = px.data();
        let wd_ = pw_.data();
        let mut dx = vec![S::zero(); xd.len()];
        let mut dw = vec![S::zero(); wd_.len()];
        backward_kernel(&geom, &xd, &wd_, g, &mut dx, &mut dw);
        drop(xd);
        drop(wd_);
        px.accumulate_grad(&dx);
        pw_.accumulate_grad(&dw);
        if let Some(b) = &pb {
            let plane = geom.ot * geom.oh * geom.ow;
            let mut dbias = vec![S::zero(); geom.cout];
            for bi in 0..geom.batch {
                for co in 0..geom.cout {
                    let base = (bi * geom.cout + co) * plane;
                    let mut acc = S::zero();
                    for v in &g[base..base + plane] {
                        acc += *v;
                    }
                    dbias[co] += acc;
                }
            }
            b.accumulate_grad(&dbias);
        }
    };

    Ok(Tensor::from_op(
        vec![batch, cout, ot, oh, ow],
        data,
        parents,
        backward,
    ))
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    t: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    st: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    ph: usize,
    pw: usize,
    ot: usize,
    oh: usize,
    ow: usize,
    cpg_out: usize,
}

fn forward_kernel<S: Scalar>(g: &Geometry, x: &[S], w: &[S], out: &mut [S]) {
    for b in 0..g.batch {
        for co in 0..g.cout {
            let group = co / g.cpg_out;
            let ci0 = group * g.cin_g;
            for zt in 0..g.ot {
                for zh in 0..g.oh {
                    for zw in 0..g.ow {
                        let mut acc = S::zero();
                        for dc in 0..g.cin_g {
                            let ci = ci0 + dc;
                            for kt in 0..g.kt {
                                let it = (zt * g.st + kt).wrapping_sub(g.pt);
                                if it >= g.t {
                                    continue;
                                }
                                for kh in 0..g.kh {
                                    let ih = (zh * g.sh + kh).wrapping_sub(g.ph);
                                    if ih >= g.h {
                                        continue;
                                    }
                                    let xrow =
                                        (((b * g.cin + ci) * g.t + it) * g.h + ih) * g.w;
                                    let wrow =
                                        (((co * g.cin_g + dc) * g.kt + kt) * g.kh + kh) * g.kw;
                                    for kw in 0..g.kw {
                                        let iw = (zw * g.sw + kw).wrapping_sub(g.pw);
                                        if iw >= g.w {
                                            continue;
                                        }
                                        acc += x[xrow + iw] * w[wrow + kw];
                                    }
                                }
                            }
                        }
                        out[(((b * g.cout + co) * g.ot + zt) * g.oh + zh) * g.ow + zw] = acc;
                    }
                }
            }
        }
    }
}

fn backward_kernel<S: Scalar>(
    g: &Geometry,
    x: &[S],
    w: &[S],
    gout: &[S],
    dx: &mut [S],
    dw: &mut [S],
) {
    for b in 0..g.batch {
        for co in 0..g.cout {
            let group = co / g.cpg_out;
            let ci0 = group * g.cin_g;
            for zt in 0..g.ot {
                for zh in 0..g.oh {
                    for zw in 0..g.ow {
                        let gv =
                            gout[(((b * g.cout + co) * g.ot + zt) * g.oh + zh) * g.ow + zw];
                        if gv == S::zero() {
                            continue;
                        }
                        for dc in 0..g.cin_g {
                            let ci = ci0 + dc;
                            for kt in 0..g.kt {
                                let it = (zt * g.st + kt).wrapping_sub(g.pt);
                                if it >= g.t {
                                    continue;
                                }
                                for kh in 0..g.kh {
                                    let ih = (zh * g.sh + kh).wrapping_sub(g.ph);
                                    if ih >= g.h {
                                        continue;
                                    }
                                    let xrow =
                                        (((b * g.cin + ci) * g.t + it) * g.h + ih) * g.w;
                                    let wrow =
                                        (((co * g.cin_g + dc) * g.kt + kt) * g.kh + kh) * g.kw;
                                    for kw in 0..g.kw {
                                        let iw = (zw * g.sw + kw).wrapping_sub(g.pw);
                                        if iw >= g.w {
                                            continue;
                                        }
                                        dx[xrow + iw] += gv * w[wrow + kw];
                                        dw[wrow + kw] += gv * x[xrow + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_identity_weight_preserves_input() {
        // 1x1x1 kernel, identity mixing across 2 channels.
        let x = Tensor::<f64>::from_vec(
            vec![1, 2, 2, 2, 2],
            (0..16).map(|v| v as f64).collect(),
        )
        .unwrap();
        let w = Tensor::<f64>::from_vec(
            vec![2, 2, 1, 1, 1],
            vec![1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let y = conv3d(&x, &w, None, (1, 1, 1), 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_center_counts_neighborhood() {
        // Single-channel 3x3x3 all-ones kernel over all-ones 3x3x3 input:
        // the center output element sees the full 27-tap neighborhood.
        let x = Tensor::<f64>::from_vec(vec![1, 1, 3, 3, 3], vec![1.0; 27]).unwrap();
        let w = Tensor::<f64>::from_vec(vec![1, 1, 3, 3, 3], vec![1.0; 27]).unwrap();
        let y = conv3d(&x, &w, None, (1, 1, 1), 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3, 3]);
        let center = ((1 * 3) + 1) * 3 + 1;
        assert_eq!(y.to_vec()[center], 27.0);
        // Corner sees a 2x2x2 window.
        assert_eq!(y.to_vec()[0], 8.0);
    }

    #[test]
    fn group_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 2, 2, 2]);
        let w = Tensor::<f64>::zeros(vec![2, 1, 1, 1, 1]);
        let err = conv3d(&x, &w, None, (1, 1, 1), 2).unwrap_err();
        assert!(matches!(err, TensorError::Config { .. }));
    }

    #[test]
    fn depthwise_equals_per_channel_conv() {
        // groups == channels on a 2x2x2 input must match independent
        // single-channel convolutions, brute-forced here.
        let mut rng = crate::rng::SeedRng::new(9);
        let c = 3;
        let xdata: Vec<f64> = (0..c * 8).map(|_| rng.normal()).collect();
        let wdata: Vec<f64> = (0..c * 27).map(|_| rng.normal()).collect();
        let x = Tensor::<f64>::from_vec(vec![1, c, 2, 2, 2], xdata.clone()).unwrap();
        let w = Tensor::<f64>::from_vec(vec![c, 1, 3, 3, 3], wdata.clone()).unwrap();
        let y = conv3d(&x, &w, None, (1, 1, 1), c).unwrap();
        for ch in 0..c {
            let xc = Tensor::<f64>::from_vec(
                vec![1, 1, 2, 2, 2],
                xdata[ch * 8..(ch + 1) * 8].to_vec(),
            )
            .unwrap();
            let wc = Tensor::<f64>::from_vec(
                vec![1, 1, 3, 3, 3],
                wdata[ch * 27..(ch + 1) * 27].to_vec(),
            )
            .unwrap();
            let yc = conv3d(&xc, &wc, None, (1, 1, 1), 1).unwrap();
            let yall = y.to_vec();
            for (i, v) in yc.to_vec().iter().enumerate() {
                assert!((yall[ch * 8 + i] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves_extents() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 8, 224, 224]);
        let w = Tensor::<f64>::zeros(vec![24, 2, 3, 3, 3]);
        let y = conv3d(&x, &w, None, (2, 2, 2), 1).unwrap();
        assert_eq!(y.shape(), &[1, 24, 4, 112, 112]);
    }
}
