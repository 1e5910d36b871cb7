//! Batched evaluation of the network on feature columns, with exact input
//! gradients, input Hessians and parameter gradients of gradient functionals.

use nalgebra::{DMatrix, DVector};

use super::{IcnnArchitecture, IcnnParameters, Layer, Mode};

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activation value and first two derivatives.
#[inline]
fn activation(mode: Mode, c_f: f64, x: f64) -> (f64, f64, f64) {
    match mode {
        Mode::ConvexSmooth => {
            // one exponential serves both softplus and the logistic function
            let e = (-x.abs()).exp();
            let sp = x.max(0.0) + e.ln_1p();
            let s = if x >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            (
                c_f * sp * sp,
                2.0 * c_f * sp * s,
                2.0 * c_f * (s * s + sp * s * (1.0 - s)),
            )
        }
        Mode::UnconstrainedRelu => {
            if x > 0.0 {
                (x, 1.0, 0.0)
            } else {
                (0.0, 0.0, 0.0)
            }
        }
    }
}

/// Weight transform applied to raw parameters and its derivative.
fn transform(mode: Mode, c_g: f64, raw: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    match mode {
        Mode::ConvexSmooth => (
            raw.map(|x| c_g * softplus(x)),
            raw.map(|x| c_g * sigmoid(x)),
        ),
        Mode::UnconstrainedRelu => (raw.clone(), DMatrix::from_element(raw.nrows(), raw.ncols(), 1.0)),
    }
}

/// Effective weights of one layer.
#[derive(Clone, Debug)]
struct EffLayer {
    ga: DMatrix<f64>,
    ga_t: DMatrix<f64>,
    b_t: DMatrix<f64>,
    ga_d: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Derivative of the skip-weight transform (output layer only).
    b_d: Option<DMatrix<f64>>,
    c: DVector<f64>,
}

/// Network with effective weights precomputed from one parameter state.
#[derive(Clone, Debug)]
pub struct Network {
    mode: Mode,
    c_f: f64,
    n_in: usize,
    layers: Vec<EffLayer>,
}

/// Stored forward pass over a batch of columns.
pub struct Forward {
    pub z0: DMatrix<f64>,
    z: Vec<DMatrix<f64>>,
    /// mask ⊙ 𝓕'(a)
    f1: Vec<DMatrix<f64>>,
    /// mask ⊙ 𝓕''(a)
    f2: Vec<DMatrix<f64>>,
    /// Network output per column.
    pub value: DVector<f64>,
}

fn add_bias(m: &mut DMatrix<f64>, c: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += c;
    }
}

fn broadcast(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(v.len(), n, |i, _| v[i])
}

fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.component_mul(b)
}

impl Network {
    pub fn new(arch: &IcnnArchitecture, params: &IcnnParameters) -> Self {
        let n_layers = params.layers.len();
        let layers = params
            .layers
            .iter()
            .enumerate()
            .map(|(k, Layer { a, b, c })| {
                let (ga, ga_d) = transform(arch.mode, arch.c_g, a);
                let output = k + 1 == n_layers;
                let (b, b_d) = if output {
                    let (gb, gb_d) = transform(arch.mode, arch.c_g, b);
                    (gb, Some(gb_d))
                } else {
                    (b.clone(), None)
                };
                EffLayer {
                    ga_t: ga.transpose(),
                    b_t: b.transpose(),
                    ga,
                    ga_d,
                    b,
                    b_d,
                    c: c.clone(),
                }
            })
            .collect();
        Network {
            mode: arch.mode,
            c_f: arch.c_f,
            n_in: arch.n_inputs(),
            layers,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_in
    }

    fn hidden(&self) -> &[EffLayer] {
        &self.layers[..self.layers.len() - 1]
    }

    fn output(&self) -> &EffLayer {
        self.layers.last().expect("at least one hidden layer and the output layer")
    }

    /// Forward pass; `masks[k]` (already scaled) multiplies hidden layer `k`.
    pub fn forward(&self, z0: DMatrix<f64>, masks: Option<&[DMatrix<f64>]>) -> Forward {
        let n = z0.ncols();
        let mut z_all: Vec<DMatrix<f64>> = Vec::new();
        let mut f1_all = Vec::new();
        let mut f2_all = Vec::new();
        for (k, layer) in self.hidden().iter().enumerate() {
            let prev = if k == 0 { &z0 } else { &z_all[k - 1] };
            let mut a = &layer.ga * prev;
            a.gemm(1.0, &layer.b, &z0, 1.0);
            add_bias(&mut a, &layer.c);
            let mut z = DMatrix::zeros(a.nrows(), n);
            let mut f1 = DMatrix::zeros(a.nrows(), n);
            let mut f2 = DMatrix::zeros(a.nrows(), n);
            let mask = masks.map(|ms| ms[k].as_slice());
            for (idx, (((zv, d1v), d2v), &x)) in z
                .as_mut_slice()
                .iter_mut()
                .zip(f1.as_mut_slice().iter_mut())
                .zip(f2.as_mut_slice().iter_mut())
                .zip(a.as_slice())
                .enumerate()
            {
                let (v, d1, d2) = activation(self.mode, self.c_f, x);
                let m = mask.map_or(1.0, |ms| ms[idx]);
                *zv = m * v;
                *d1v = m * d1;
                *d2v = m * d2;
            }
            z_all.push(z);
            f1_all.push(f1);
            f2_all.push(f2);
        }
        let out = self.output();
        let last = z_all.last().expect("hidden layer");
        let mut w = &out.ga * last;
        w.gemm(1.0, &out.b, &z0, 1.0);
        let value = DVector::from_fn(n, |j, _| w[(0, j)] + out.c[0]);
        Forward {
            z0,
            z: z_all,
            f1: f1_all,
            f2: f2_all,
            value,
        }
    }

    /// `∂W/∂z⁽⁰⁾` for every column (`n_in × n`).
    pub fn input_gradient(&self, fw: &Forward) -> DMatrix<f64> {
        let n = fw.z0.ncols();
        let out = self.output();
        let mut g = broadcast(&out.b.row(0).transpose(), n);
        let mut bar_z = broadcast(&out.ga.row(0).transpose(), n);
        for k in (0..self.hidden().len()).rev() {
            let layer = &self.hidden()[k];
            let bar_a = hadamard(&fw.f1[k], &bar_z);
            g.gemm(1.0, &layer.b_t, &bar_a, 1.0);
            if k == 0 {
                g.gemm(1.0, &layer.ga_t, &bar_a, 1.0);
            } else {
                bar_z = &layer.ga_t * &bar_a;
            }
        }
        g
    }

    /// Values, input gradients and input Hessians of every column, without
    /// dropout, by second-order forward propagation.
    pub fn hessian(&self, z0: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = z0.ncols();
        let m = self.n_in;
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
        let mut z = z0.clone();
        let mut zd: Vec<DMatrix<f64>> = Vec::new();
        let mut zdd: Vec<DMatrix<f64>> = Vec::new();
        for (k, layer) in self.hidden().iter().enumerate() {
            let mut a = &layer.ga * &z;
            a.gemm(1.0, &layer.b, z0, 1.0);
            add_bias(&mut a, &layer.c);
            let ad: Vec<DMatrix<f64>> = (0..m)
                .map(|i| {
                    let skip = layer.b.column(i).into_owned();
                    if k == 0 {
                        broadcast(&(skip + layer.ga.column(i)), n)
                    } else {
                        let mut t = &layer.ga * &zd[i];
                        for mut col in t.column_iter_mut() {
                            col += &skip;
                        }
                        t
                    }
                })
                .collect();
            let add: Vec<DMatrix<f64>> = if k == 0 {
                vec![DMatrix::zeros(a.nrows(), n); pairs.len()]
            } else {
                zdd.iter().map(|s| &layer.ga * s).collect()
            };
            let mut f1 = DMatrix::zeros(a.nrows(), n);
            let mut f2 = DMatrix::zeros(a.nrows(), n);
            let mut zn = DMatrix::zeros(a.nrows(), n);
            for idx in 0..a.len() {
                let (v, d1, d2) = activation(self.mode, self.c_f, a[idx]);
                zn[idx] = v;
                f1[idx] = d1;
                f2[idx] = d2;
            }
            zdd = pairs
                .iter()
                .zip(add)
                .map(|(&(i, j), mut s)| {
                    for idx in 0..s.len() {
                        s[idx] = f1[idx] * s[idx] + f2[idx] * ad[i][idx] * ad[j][idx];
                    }
                    s
                })
                .collect();
            zd = ad.into_iter().map(|t| hadamard(&f1, &t)).collect();
            z = zn;
        }
        let out = self.output();
        let mut w = &out.ga * &z;
        w.gemm(1.0, &out.b, z0, 1.0);
        let value = DVector::from_fn(n, |j, _| w[(0, j)] + out.c[0]);
        let mut grad = DMatrix::zeros(m, n);
        for i in 0..m {
            let gi = &out.ga * &zd[i];
            for j in 0..n {
                grad[(i, j)] = gi[(0, j)] + out.b[(0, i)];
            }
        }
        let mut hess = vec![DMatrix::zeros(m, m); n];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let hij = &out.ga * &zdd[p];
            for col in 0..n {
                hess[col][(i, j)] = hij[(0, col)];
                hess[col][(j, i)] = hij[(0, col)];
            }
        }
        (value, grad, hess)
    }

    /// Gradient of `s = Σ_columns wᵀ ∂W/∂z⁽⁰⁾` with respect to the raw
    /// parameters (`w` held fixed), and `∂s/∂z⁽⁰⁾` per column.
    pub fn gradient_functional_grad(&self, fw: &Forward, w: &DMatrix<f64>) -> (Vec<Layer>, DMatrix<f64>) {
        let n = w.ncols();
        let hidden = self.hidden();
        let n_hidden = hidden.len();

        // tangent of every hidden layer along w
        let mut ad: Vec<DMatrix<f64>> = Vec::with_capacity(n_hidden);
        let mut zd: Vec<DMatrix<f64>> = Vec::with_capacity(n_hidden);
        for (k, layer) in hidden.iter().enumerate() {
            let mut t = &layer.b * w;
            if k == 0 {
                t.gemm(1.0, &layer.ga, w, 1.0);
            } else {
                t.gemm(1.0, &layer.ga, &zd[k - 1], 1.0);
            }
            zd.push(hadamard(&fw.f1[k], &t));
            ad.push(t);
        }

        let out = self.output();
        let ones = DVector::from_element(n, 1.0);
        let mut grads: Vec<Layer> = Vec::with_capacity(n_hidden + 1);
        let last = &zd[n_hidden - 1];
        let gb_d = out.b_d.as_ref().expect("output transform");
        let out_grads = Layer {
            a: DMatrix::from_fn(1, last.nrows(), |_, i| last.row(i).sum() * out.ga_d[(0, i)]),
            b: DMatrix::from_fn(1, self.n_in, |_, i| w.row(i).sum() * gb_d[(0, i)]),
            c: DVector::zeros(1),
        };

        let mut bar_zd = broadcast(&out.ga.row(0).transpose(), n);
        let mut bar_z = DMatrix::zeros(bar_zd.nrows(), n);
        let mut bar_z0 = DMatrix::zeros(self.n_in, n);
        for k in (0..n_hidden).rev() {
            let layer = &hidden[k];
            let bar_ad = hadamard(&fw.f1[k], &bar_zd);
            let mut bar_a = hadamard(&fw.f1[k], &bar_z);
            for idx in 0..bar_a.len() {
                bar_a[idx] += fw.f2[k][idx] * ad[k][idx] * bar_zd[idx];
            }
            let (prev_z, prev_zd) = if k == 0 {
                (&fw.z0, w)
            } else {
                (&fw.z[k - 1], &zd[k - 1])
            };
            let mut bar_ga = &bar_ad * prev_zd.transpose();
            bar_ga.gemm(1.0, &bar_a, &prev_z.transpose(), 1.0);
            let mut bar_b = &bar_ad * w.transpose();
            bar_b.gemm(1.0, &bar_a, &fw.z0.transpose(), 1.0);
            let bar_c = &bar_a * &ones;
            bar_z0.gemm(1.0, &layer.b_t, &bar_a, 1.0);
            if k == 0 {
                bar_z0.gemm(1.0, &layer.ga_t, &bar_a, 1.0);
            } else {
                bar_zd = &layer.ga_t * &bar_ad;
                bar_z = &layer.ga_t * &bar_a;
            }
            grads.push(Layer {
                a: bar_ga.component_mul(&layer.ga_d),
                b: bar_b,
                c: bar_c,
            });
        }
        grads.reverse();
        grads.push(out_grads);
        (grads, bar_z0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::{init_parameters, IcnnArchitecture};

    fn arch(mode: Mode) -> IcnnArchitecture {
        IcnnArchitecture {
            hidden_sizes: vec![5, 4],
            n_fibers: 1,
            mode,
            ..IcnnArchitecture::default()
        }
    }

    fn columns() -> DMatrix<f64> {
        DMatrix::from_fn(4, 3, |i, j| 0.1 * (i as f64 + 1.0) - 0.07 * j as f64 + 0.02 * (i * j) as f64)
    }

    fn perturbed(params: &IcnnParameters, seed: u64) -> IcnnParameters {
        let mut p = params.clone();
        for (k, layer) in p.layers.iter_mut().enumerate() {
            for (i, c) in layer.c.iter_mut().enumerate() {
                *c = 0.3 * ((seed as f64 + k as f64 * 1.7 + i as f64) * 1.3).sin();
            }
        }
        p
    }

    #[test]
    fn activation_derivatives() {
        for &x in &[-3.0, -0.2, 0.0, 0.7, 5.0] {
            let h = 1e-6;
            let (v0, d1, d2) = activation(Mode::ConvexSmooth, 1.0 / 12.0, x);
            let (vp, d1p, _) = activation(Mode::ConvexSmooth, 1.0 / 12.0, x + h);
            let (vm, d1m, _) = activation(Mode::ConvexSmooth, 1.0 / 12.0, x - h);
            assert!(v0 >= 0.0);
            assert!(((vp - vm) / (2.0 * h) - d1).abs() < 1e-8);
            assert!(((d1p - d1m) / (2.0 * h) - d2).abs() < 1e-8);
        }
        assert_eq!(softplus(100.0), 100.0);
        assert!(softplus(-100.0) > 0.0);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        for mode in [Mode::ConvexSmooth, Mode::UnconstrainedRelu] {
            let a = arch(mode);
            let params = perturbed(&init_parameters(&a, 4), 1);
            let net = Network::new(&a, &params);
            let z0 = columns();
            let fw = net.forward(z0.clone(), None);
            let g = net.input_gradient(&fw);
            let (v, g2, hs) = net.hessian(&z0);
            assert!((&v - &fw.value).amax() < 1e-12);
            assert!((&g - &g2).amax() < 1e-12);
            let h = 1e-6;
            for i in 0..4 {
                let mut zp = z0.clone();
                let mut zm = z0.clone();
                zp.row_mut(i).add_scalar_mut(h);
                zm.row_mut(i).add_scalar_mut(-h);
                let vp = net.forward(zp.clone(), None).value;
                let vm = net.forward(zm.clone(), None).value;
                let gp = net.hessian(&zp).1;
                let gm = net.hessian(&zm).1;
                for c in 0..3 {
                    let fd = (vp[c] - vm[c]) / (2.0 * h);
                    assert!((fd - g[(i, c)]).abs() <= 1e-6 * (1.0 + fd.abs()), "{mode:?}");
                    if mode == Mode::ConvexSmooth {
                        for j in 0..4 {
                            let fd2 = (gp[(j, c)] - gm[(j, c)]) / (2.0 * h);
                            assert!((fd2 - hs[c][(j, i)]).abs() <= 1e-6 * (1.0 + fd2.abs()));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_of_gradient_functional() {
        let a = arch(Mode::ConvexSmooth);
        let params = perturbed(&init_parameters(&a, 9), 2);
        let z0 = columns();
        let w = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.77).cos());
        let s = |p: &IcnnParameters| -> f64 {
            let net = Network::new(&a, p);
            let fw = net.forward(z0.clone(), None);
            net.input_gradient(&fw).component_mul(&w).sum()
        };
        let net = Network::new(&a, &params);
        let fw = net.forward(z0.clone(), None);
        let (grads, bar_z0) = net.gradient_functional_grad(&fw, &w);
        let h = 1e-6;
        for k in 0..params.layers.len() {
            for which in 0..3 {
                let len = match which {
                    0 => params.layers[k].a.len(),
                    1 => params.layers[k].b.len(),
                    _ => params.layers[k].c.len(),
                };
                for idx in 0..len {
                    let mut pp = params.clone();
                    let mut pm = params.clone();
                    let (exact, fd) = {
                        let bump = |p: &mut IcnnParameters, d: f64| match which {
                            0 => p.layers[k].a[idx] += d,
                            1 => p.layers[k].b[idx] += d,
                            _ => p.layers[k].c[idx] += d,
                        };
                        bump(&mut pp, h);
                        bump(&mut pm, -h);
                        let exact = match which {
                            0 => grads[k].a[idx],
                            1 => grads[k].b[idx],
                            _ => grads[k].c[idx],
                        };
                        (exact, (s(&pp) - s(&pm)) / (2.0 * h))
                    };
                    assert!((exact - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "layer {k} part {which} idx {idx}: {exact} vs {fd}");
                }
            }
        }
        // ∂s/∂z⁽⁰⁾ equals the Hessian applied to w
        let (_, _, hs) = net.hessian(&z0);
        for c in 0..3 {
            let hw = &hs[c] * w.column(c);
            for i in 0..4 {
                assert!((hw[i] - bar_z0[(i, c)]).abs() < 1e-10);
            }
        }
    }
}
