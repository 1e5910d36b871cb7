//! Physics-consistent input-convex neural network material model.
//!
//! The network maps the invariant features `z⁽⁰⁾` of a deformation gradient to
//! a scalar energy. Energy and stress corrections make the reference
//! configuration energy- and stress-free; fiber directions are learned
//! through unconstrained angle variables.

mod features;
mod network;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ConstitutiveModel, PlaneResponse};
use crate::dual::Jet;
use crate::error::{Error, Result};
use crate::pipeline::{mix, stream_key};
use crate::tensor::{seed_jet9, Tensor4};

pub use features::{feature_batch, feature_vector, FeatureBatch};
pub use network::{Forward, Network};

pub const MODEL_FORMAT_VERSION: &str = "1";
/// Columns per batched network evaluation.
pub const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ConvexSmooth,
    UnconstrainedRelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcnnArchitecture {
    pub hidden_sizes: Vec<usize>,
    pub n_fibers: usize,
    pub c_g: f64,
    pub c_f: f64,
    pub mode: Mode,
    pub dropout_rate: f64,
}

impl Default for IcnnArchitecture {
    fn default() -> Self {
        IcnnArchitecture {
            hidden_sizes: vec![64, 64, 64],
            n_fibers: 0,
            c_g: 1.0,
            c_f: 1.0 / 12.0,
            mode: Mode::ConvexSmooth,
            dropout_rate: 0.2,
        }
    }
}

impl IcnnArchitecture {
    pub fn with_fibers(n_fibers: usize) -> Self {
        IcnnArchitecture {
            n_fibers,
            ..Self::default()
        }
    }

    pub fn n_inputs(&self) -> usize {
        3 + self.n_fibers
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must be nonempty and positive".into()));
        }
        if !(self.c_g > 0.0 && self.c_f > 0.0) {
            return Err(Error::Config("c_G and c_F must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.n_fibers > 2 {
            return Err(Error::Config(format!("{} fibers (at most 2)", self.n_fibers)));
        }
        Ok(())
    }

    /// `(rows, convex-path columns)` of every layer, output layer last.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut prev = self.n_inputs();
        let mut shapes = Vec::new();
        for &d in &self.hidden_sizes {
            shapes.push((d, prev));
            prev = d;
        }
        shapes.push((1, prev));
        shapes
    }
}

/// Weights of one layer: convex path `a`, skip connection `b`, bias `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            a: DMatrix::zeros(self.a.nrows(), self.a.ncols()),
            b: DMatrix::zeros(self.b.nrows(), self.b.ncols()),
            c: DVector::zeros(self.c.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcnnParameters {
    pub layers: Vec<Layer>,
    pub zeta: Vec<f64>,
}

impl IcnnParameters {
    pub fn zeros_like(&self) -> Self {
        IcnnParameters {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            zeta: vec![0.0; self.zeta.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.a.len() + l.b.len() + l.c.len())
            .sum::<usize>()
            + self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All values in a fixed order: per layer `a`, `b`, `c` (column-major),
    /// then `zeta`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for l in &self.layers {
            v.extend(l.a.iter());
            v.extend(l.b.iter());
            v.extend(l.c.iter());
        }
        v.extend(&self.zeta);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec) with `self` providing the shapes.
    pub fn set_from_slice(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.len(), "parameter vector length");
        let mut it = v.iter().copied();
        for l in &mut self.layers {
            for x in l.a.iter_mut().chain(l.b.iter_mut()).chain(l.c.iter_mut()) {
                *x = it.next().expect("length checked");
            }
        }
        for z in &mut self.zeta {
            *z = it.next().expect("length checked");
        }
    }

    pub fn validate(&self, arch: &IcnnArchitecture) -> Result<()> {
        let shapes = arch.layer_shapes();
        let bad = |m: String| Err(Error::schema("parameters", m));
        if self.layers.len() != shapes.len() {
            return bad(format!("{} layers, expected {}", self.layers.len(), shapes.len()));
        }
        for (k, (l, &(rows, cols))) in self.layers.iter().zip(&shapes).enumerate() {
            if l.a.shape() != (rows, cols) || l.b.shape() != (rows, arch.n_inputs()) || l.c.len() != rows {
                return bad(format!("layer {k} has the wrong shape"));
            }
        }
        if self.zeta.len() != arch.n_fibers {
            return bad(format!("{} fiber variables, expected {}", self.zeta.len(), arch.n_fibers));
        }
        if !self.to_vec().iter().all(|v| v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(())
    }
}

/// Fan-in uniform weights, zero biases and fiber variables in `(−2, 2)`.
pub fn init_parameters(arch: &IcnnArchitecture, seed: u64) -> IcnnParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = arch.n_inputs();
    let mut uniform = |rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
    };
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(rows, cols)| Layer {
            a: uniform(rows, cols),
            b: uniform(rows, n_in),
            c: DVector::zeros(rows),
        })
        .collect();
    let zeta = (0..arch.n_fibers).map(|_| rng.random_range(-2.0..2.0)).collect();
    IcnnParameters { layers, zeta }
}

/// `αᵢ = π σ(ζᵢ)`, each in `(0, π)`.
pub fn fiber_angles(zeta: &[f64]) -> Vec<f64> {
    zeta.iter().map(|&z| PI * network::sigmoid(z)).collect()
}

/// `dαᵢ/dζᵢ`.
pub fn fiber_angle_derivatives(zeta: &[f64]) -> Vec<f64> {
    zeta.iter()
        .map(|&z| {
            let s = network::sigmoid(z);
            PI * s * (1.0 - s)
        })
        .collect()
}

/// Feature vector `z⁽⁰⁾` of `F` for fiber variables `zeta`.
pub fn invariants_layer(f: &Matrix3<f64>, zeta: &[f64]) -> Result<Vec<f64>> {
    feature_vector(&crate::tensor::to_mat3::<f64>(f), &fiber_angles(zeta))
}

/// Inverted-dropout masks for hidden layers over columns
/// `col_offset..col_offset + n`, keyed by `(seed, layer, column)` and the unit.
pub fn dropout_masks(arch: &IcnnArchitecture, seed: u64, col_offset: usize, n: usize) -> Vec<DMatrix<f64>> {
    let p = arch.dropout_rate;
    let keep = 1.0 / (1.0 - p);
    arch.hidden_sizes
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let mut m = DMatrix::zeros(d, n);
            for (c, mut col) in m.column_iter_mut().enumerate() {
                let key = stream_key(&[seed, k as u64, (col_offset + c) as u64]);
                for (unit, v) in col.iter_mut().enumerate() {
                    let h = mix(key.wrapping_add((unit as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15)));
                    let u = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    *v = if u >= p { keep } else { 0.0 };
                }
            }
            m
        })
        .collect()
}

/// Raw network output `W_NN(F)`, with dropout when `training` is set.
pub fn forward(
    params: &IcnnParameters,
    arch: &IcnnArchitecture,
    f: &Matrix3<f64>,
    training: bool,
    dropout_seed: u64,
) -> Result<f64> {
    let z = invariants_layer(f, &params.zeta)?;
    let net = Network::new(arch, params);
    let masks = (training && arch.dropout_rate > 0.0).then(|| dropout_masks(arch, dropout_seed, 0, 1));
    let fw = net.forward(DMatrix::from_column_slice(z.len(), 1, &z), masks.as_deref());
    Ok(fw.value[0])
}

/// Offsets that make the corrected model energy- and stress-free at `F = I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectionTerms {
    pub w0: f64,
    pub h: Matrix3<f64>,
}

fn correction_terms(net: &Network, alphas: &[f64]) -> CorrectionTerms {
    let identity = Matrix3::identity();
    let fw = net.forward(DMatrix::zeros(net.n_inputs(), 1), None);
    let g = net.input_gradient(&fw);
    let a: Vec<Jet<9>> = alphas.iter().map(|&v| Jet::constant(v)).collect();
    let z = feature_vector(&seed_jet9(&identity), &a).expect("identity is admissible");
    let mut h = Matrix3::zeros();
    for (p, zp) in z.iter().enumerate() {
        h -= crate::tensor::jet_gradient(zp) * g[(p, 0)];
    }
    let h = 0.5 * (h + h.transpose());
    CorrectionTerms { w0: -fw.value[0], h }
}

pub fn corrections(params: &IcnnParameters, arch: &IcnnArchitecture) -> CorrectionTerms {
    correction_terms(&Network::new(arch, params), &fiber_angles(&params.zeta))
}

/// A trained (or freshly initialized) network usable as a material law.
#[derive(Clone, Debug)]
pub struct IcnnModel {
    pub arch: IcnnArchitecture,
    pub params: IcnnParameters,
    pub corrections: CorrectionTerms,
    alphas: Vec<f64>,
    net: Network,
}

impl IcnnModel {
    pub fn new(arch: IcnnArchitecture, params: IcnnParameters) -> Result<Self> {
        arch.validate()?;
        params.validate(&arch)?;
        let net = Network::new(&arch, &params);
        let alphas = fiber_angles(&params.zeta);
        let corrections = correction_terms(&net, &alphas);
        Ok(IcnnModel {
            arch,
            params,
            corrections,
            alphas,
            net,
        })
    }

    pub fn fiber_angles(&self) -> &[f64] {
        &self.alphas
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Network value, gradient and Hessian in feature space plus the
    /// feature jets of `F`.
    fn full_jets(&self, f: &Matrix3<f64>) -> Result<(Vec<Jet<9>>, f64, DVector<f64>, DMatrix<f64>)> {
        let a: Vec<Jet<9>> = self.alphas.iter().map(|&v| Jet::constant(v)).collect();
        let z = feature_vector(&seed_jet9(f), &a)?;
        let z0 = DMatrix::from_fn(z.len(), 1, |p, _| z[p].v);
        let (value, grad, mut hess) = self.net.hessian(&z0);
        Ok((z, value[0], grad.column(0).into_owned(), hess.remove(0)))
    }

    pub fn save(&self, path: &Path, provenance: &BTreeMap<String, serde_json::Value>) -> Result<()> {
        save_model(path, &self.arch, &self.params, provenance)
    }
}

fn green_lagrange(f: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (f.transpose() * f - Matrix3::identity())
}

impl ConstitutiveModel for IcnnModel {
    fn energy(&self, f: &Matrix3<f64>) -> Result<f64> {
        let z = invariants_layer(f, &self.params.zeta)?;
        let w = self.net.forward(DMatrix::from_column_slice(z.len(), 1, &z), None).value[0];
        Ok(w + self.corrections.w0 + self.corrections.h.dot(&green_lagrange(f)))
    }

    fn stress(&self, f: &Matrix3<f64>) -> Result<Matrix3<f64>> {
        let a: Vec<f64> = self.alphas.clone();
        let aj: Vec<Jet<9>> = a.iter().map(|&v| Jet::constant(v)).collect();
        let z = feature_vector(&seed_jet9(f), &aj)?;
        let z0 = DMatrix::from_fn(z.len(), 1, |p, _| z[p].v);
        let fw = self.net.forward(z0, None);
        let g = self.net.input_gradient(&fw);
        let mut p = f * self.corrections.h;
        for (q, zq) in z.iter().enumerate() {
            p += crate::tensor::jet_gradient(zq) * g[(q, 0)];
        }
        Ok(p)
    }

    fn tangent(&self, f: &Matrix3<f64>) -> Result<Tensor4> {
        let (z, _, g, hess) = self.full_jets(f)?;
        let mut c = Tensor4::zeros();
        for a in 0..9 {
            for b in 0..9 {
                let mut v = 0.0;
                for (p, zp) in z.iter().enumerate() {
                    v += g[p] * zp.h[a][b];
                    for (q, zq) in z.iter().enumerate() {
                        v += hess[(p, q)] * zp.g[a] * zq.g[b];
                    }
                }
                c.0[a * 9 + b] = v;
            }
        }
        let h = &self.corrections.h;
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    c.add_to(i, j, i, l, h[(l, j)]);
                }
            }
        }
        Ok(c)
    }

    fn plane_response_batch(&self, fs: &[Matrix3<f64>], with_tangent: bool) -> Result<Vec<PlaneResponse>> {
        let chunks: Vec<Vec<PlaneResponse>> = fs
            .par_chunks(CHUNK)
            .map(|chunk| self.plane_chunk(chunk, with_tangent))
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    fn plane_response(&self, f: &Matrix3<f64>, with_tangent: bool) -> Result<PlaneResponse> {
        Ok(self.plane_chunk(std::slice::from_ref(f), with_tangent)?.remove(0))
    }

    fn label(&self) -> String {
        match self.arch.mode {
            Mode::ConvexSmooth => "ICNN".into(),
            Mode::UnconstrainedRelu => "ICNN-relu".into(),
        }
    }
}

impl IcnnModel {
    fn plane_chunk(&self, fs: &[Matrix3<f64>], with_tangent: bool) -> Result<Vec<PlaneResponse>> {
        let batch = feature_batch(fs, &self.alphas)?;
        let n_in = batch.z0.nrows();
        let (grad, hess) = if with_tangent {
            let (_, g, h) = self.net.hessian(&batch.z0);
            (g, Some(h))
        } else {
            let fw = self.net.forward(batch.z0.clone(), None);
            (self.net.input_gradient(&fw), None)
        };
        let h = &self.corrections.h;
        Ok((0..fs.len())
            .map(|c| {
                let f = &fs[c];
                let d = &batch.d[c];
                let mut stress = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        let mut v: f64 = (0..3).map(|m| f[(i, m)] * h[(m, j)]).sum();
                        for p in 0..n_in {
                            v += grad[(p, c)] * d[p][2 * i + j];
                        }
                        stress[i][j] = v;
                    }
                }
                let mut tangent = [[0.0; 4]; 4];
                if let Some(hs) = &hess {
                    let hc = &hs[c];
                    for a in 0..4 {
                        for b in 0..4 {
                            let mut v = 0.0;
                            for p in 0..n_in {
                                v += grad[(p, c)] * batch.d2[c][p][a][b];
                                for q in 0..n_in {
                                    v += hc[(p, q)] * d[p][a] * d[q][b];
                                }
                            }
                            let (i, j, k, l) = (a / 2, a % 2, b / 2, b % 2);
                            if i == k {
                                v += h[(l, j)];
                            }
                            tangent[a][b] = v;
                        }
                    }
                }
                PlaneResponse { stress, tangent }
            })
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    architecture: IcnnArchitecture,
    layers: Vec<LayerFile>,
    zeta: Vec<f64>,
    #[serde(default)]
    provenance: BTreeMap<String, serde_json::Value>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != n) {
        return Err(Error::schema(what, "ragged matrix"));
    }
    Ok(DMatrix::from_fn(r.len(), n, |i, j| r[i][j]))
}

/// Writes architecture, parameters and provenance as one JSON document.
/// Numbers are written in shortest round-trip form, so reading back is
/// lossless.
pub fn save_model(
    path: &Path,
    arch: &IcnnArchitecture,
    params: &IcnnParameters,
    provenance: &BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION.into(),
        architecture: arch.clone(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerFile {
                a: rows(&l.a),
                b: rows(&l.b),
                c: l.c.iter().copied().collect(),
            })
            .collect(),
        zeta: params.zeta.clone(),
        provenance: provenance.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("model serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(IcnnArchitecture, IcnnParameters, BTreeMap<String, serde_json::Value>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::schema("model", e.to_string()))?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::schema("model/version", format!("unsupported version {:?}", file.version)));
    }
    file.architecture.validate()?;
    let layers = file
        .layers
        .iter()
        .enumerate()
        .map(|(k, l)| {
            Ok(Layer {
                a: from_rows(&l.a, &format!("model/layers/{k}/a"))?,
                b: from_rows(&l.b, &format!("model/layers/{k}/b"))?,
                c: DVector::from_vec(l.c.clone()),
            })
        })
        .collect::<Result<_>>()?;
    let params = IcnnParameters {
        layers,
        zeta: file.zeta,
    };
    params.validate(&file.architecture)?;
    Ok((file.architecture, params, file.provenance))
}

pub fn load_icnn(path: &Path) -> Result<IcnnModel> {
    let (arch, params, _) = load_model(path)?;
    IcnnModel::new(arch, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{plane_strain, rotation};
    use rand::Rng;

    fn small(n_fibers: usize, mode: Mode) -> IcnnArchitecture {
        IcnnArchitecture {
            hidden_sizes: vec![8, 6],
            n_fibers,
            mode,
            ..IcnnArchitecture::default()
        }
    }

    /// Parameters with nonzero biases so every layer is exercised.
    fn random_params(arch: &IcnnArchitecture, seed: u64) -> IcnnParameters {
        let mut p = init_parameters(arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for l in &mut p.layers {
            for c in l.c.iter_mut() {
                *c = rng.random_range(-0.5..0.5);
            }
        }
        p
    }

    fn random_f(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let mut f = Matrix3::identity();
        for i in 0..3 {
            for j in 0..3 {
                f[(i, j)] += rng.random_range(-0.2..0.2);
            }
        }
        f
    }

    #[test]
    fn fiber_angle_map() {
        assert!((fiber_angles(&[0.0])[0] - PI / 2.0).abs() < 1e-15);
        assert!((fiber_angles(&[-(3f64.ln())])[0] - PI / 4.0).abs() < 1e-15);
        let big = fiber_angles(&[30.0])[0];
        assert!(big < PI && PI - big < 1e-12);
        let h = 1e-6;
        let d = fiber_angle_derivatives(&[0.4])[0];
        let fd = (fiber_angles(&[0.4 + h])[0] - fiber_angles(&[0.4 - h])[0]) / (2.0 * h);
        assert!((d - fd).abs() < 1e-8);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = IcnnArchitecture::with_fibers(1);
        let p0 = init_parameters(&arch, 0);
        assert_eq!(p0, init_parameters(&arch, 0));
        assert_ne!(p0, init_parameters(&arch, 1));
        p0.validate(&arch).unwrap();
        for l in &p0.layers {
            let bound_a = 1.0 / (l.a.ncols() as f64).sqrt();
            assert!(l.a.amax() <= bound_a);
            assert!(l.b.amax() <= 1.0 / 2.0);
            assert_eq!(l.c.amax(), 0.0);
        }
        assert!(p0.zeta[0].abs() < 2.0);
        let mut q = p0.zeros_like();
        q.set_from_slice(&p0.to_vec());
        assert_eq!(q, p0);
    }

    #[test]
    fn invariants_layer_values() {
        assert!(invariants_layer(&Matrix3::identity(), &[1.7]).unwrap().iter().all(|v| *v == 0.0));
        let bad = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, 1.0, 1.0));
        assert!(matches!(invariants_layer(&bad, &[]), Err(Error::NonPositiveJacobian(_))));
    }

    #[test]
    fn corrected_reference_state() {
        for seed in 0..50 {
            let arch = small((seed % 3) as usize, Mode::ConvexSmooth);
            let model = IcnnModel::new(arch.clone(), random_params(&arch, seed)).unwrap();
            let i = Matrix3::identity();
            assert!(model.energy(&i).unwrap().abs() <= 1e-14);
            assert!(model.stress(&i).unwrap().amax() <= 1e-12);
            let h = model.corrections.h;
            assert!((h - h.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_weight_network() {
        let arch = small(0, Mode::UnconstrainedRelu);
        let mut p = init_parameters(&arch, 3).zeros_like();
        p.layers.last_mut().unwrap().c[0] = 0.37;
        let corr = corrections(&p, &arch);
        assert_eq!(corr.w0, -0.37);
        assert_eq!(corr.h, Matrix3::zeros());

        // raw zeros in convex mode: every effective weight is c_G ln 2
        let arch = IcnnArchitecture {
            hidden_sizes: vec![2],
            ..IcnnArchitecture::default()
        };
        let p = init_parameters(&arch, 0).zeros_like();
        let ln2 = 2f64.ln();
        let z1 = arch.c_f * ln2 * ln2;
        let expected = 2.0 * ln2 * z1;
        assert!((corrections(&p, &arch).w0 + expected).abs() < 1e-15);
    }

    #[test]
    fn dropout_is_keyed_and_scaled() {
        let arch = IcnnArchitecture::default();
        let m1 = dropout_masks(&arch, 5, 0, 300);
        assert_eq!(m1, dropout_masks(&arch, 5, 0, 300));
        assert_ne!(m1, dropout_masks(&arch, 6, 0, 300));
        // offsets select the same stream
        let tail = dropout_masks(&arch, 5, 100, 200);
        assert_eq!(m1[1].columns(100, 200), tail[1].columns(0, 200));
        let total: usize = m1.iter().map(|m| m.len()).sum();
        let kept = m1.iter().flat_map(|m| m.iter()).filter(|&&v| v > 0.0).count();
        let frac = kept as f64 / total as f64;
        assert!((frac - 0.8).abs() < 0.02, "{frac}");
        assert!(m1[0].iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));

        let p = init_parameters(&arch, 1);
        let f = plane_strain(1.1, 0.05, 0.0, 0.95);
        assert_eq!(forward(&p, &arch, &f, false, 1).unwrap(), forward(&p, &arch, &f, false, 2).unwrap());
        assert_ne!(forward(&p, &arch, &f, true, 1).unwrap(), forward(&p, &arch, &f, true, 2).unwrap());
    }

    #[test]
    fn midpoint_convexity_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let arch = small(trial % 3, Mode::ConvexSmooth);
            let net = Network::new(&arch, &random_params(&arch, trial as u64));
            let n = arch.n_inputs();
            let za = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
            let zb = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
            let zm = (&za + &zb) * 0.5;
            let masks = (trial % 2 == 1).then(|| dropout_masks(&arch, trial as u64, 0, 1));
            let v = |z: &DMatrix<f64>| net.forward(z.clone(), masks.as_deref()).value[0];
            assert!(v(&zm) <= 0.5 * v(&za) + 0.5 * v(&zb) + 1e-12);
        }
    }

    #[test]
    fn feature_hessian_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..100u64 {
            let arch = small((trial % 3) as usize, Mode::ConvexSmooth);
            let model = IcnnModel::new(arch.clone(), random_params(&arch, trial)).unwrap();
            let f = random_f(&mut rng);
            let z = invariants_layer(&f, &model.params.zeta).unwrap();
            let (_, _, h) = model.network().hessian(&DMatrix::from_column_slice(z.len(), 1, &z));
            let eig = h[0].clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-8);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..100u64 {
            let arch = small((trial % 3) as usize, Mode::ConvexSmooth);
            let model = IcnnModel::new(arch.clone(), random_params(&arch, trial)).unwrap();
            let f = random_f(&mut rng);
            let p = model.stress(&f).unwrap();
            let c = model.tangent(&f).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                for l in 0..3 {
                    let (mut fp, mut fm) = (f, f);
                    fp[(k, l)] += h;
                    fm[(k, l)] -= h;
                    let fd = (model.energy(&fp).unwrap() - model.energy(&fm).unwrap()) / (2.0 * h);
                    assert!((fd - p[(k, l)]).abs() <= 1e-5 * p.amax().max(1e-3));
                    let dp = (model.stress(&fp).unwrap() - model.stress(&fm).unwrap()) / (2.0 * h);
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!((dp[(i, j)] - c.get(i, j, k, l)).abs() <= 1e-4 * c.max_abs());
                        }
                    }
                }
            }
            assert!(c.major_asymmetry() <= 1e-10 * c.max_abs());
        }
    }

    #[test]
    fn plane_batch_agrees_with_full_tangent() {
        let arch = small(2, Mode::ConvexSmooth);
        let model = IcnnModel::new(arch.clone(), random_params(&arch, 4)).unwrap();
        let fs: Vec<_> = (0..5)
            .map(|k| plane_strain(1.0 + 0.03 * k as f64, 0.02 * k as f64, -0.01, 0.97))
            .collect();
        let batch = model.plane_response_batch(&fs, true).unwrap();
        for (f, r) in fs.iter().zip(&batch) {
            let full = PlaneResponse::from_full(&model.stress(f).unwrap(), Some(&model.tangent(f).unwrap()));
            for a in 0..4 {
                assert!((r.stress[a / 2][a % 2] - full.stress[a / 2][a % 2]).abs() < 1e-12);
                for b in 0..4 {
                    assert!((r.tangent[a][b] - full.tangent[a][b]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn objectivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let arch = small(1, Mode::ConvexSmooth);
        let model = IcnnModel::new(arch.clone(), random_params(&arch, 2)).unwrap();
        for _ in 0..100 {
            let f = random_f(&mut rng);
            let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)];
            let r = rotation(axis, rng.random_range(0.0..2.0 * PI));
            let w = model.energy(&f).unwrap();
            let wr = model.energy(&(r * f)).unwrap();
            assert!((w - wr).abs() <= 1e-10 * w.abs().max(1e-12));
        }
    }

    #[test]
    fn relu_tangent_fails_at_kink() {
        let arch = IcnnArchitecture {
            hidden_sizes: vec![1],
            mode: Mode::UnconstrainedRelu,
            ..IcnnArchitecture::default()
        };
        let mut p = init_parameters(&arch, 0).zeros_like();
        let stretch = |k: usize| plane_strain(1.0 + 0.002 * k as f64, 0.0, 0.0, 1.0);
        // one hidden unit switching on exactly at the 25th point of the path
        p.layers[0].a[(0, 0)] = 1.0;
        p.layers[0].c[0] = -invariants_layer(&stretch(25), &[]).unwrap()[0];
        p.layers[1].a[(0, 0)] = 1.0;
        let model = IcnnModel::new(arch, p).unwrap();
        let mut failures = 0;
        for k in 0..40 {
            let f = stretch(k);
            let h = 1e-6;
            let (mut fp, mut fm) = (f, f);
            fp[(0, 0)] += h;
            fm[(0, 0)] -= h;
            let fd = (model.stress(&fp).unwrap()[(0, 0)] - model.stress(&fm).unwrap()[(0, 0)]) / (2.0 * h);
            let c = model.tangent(&f).unwrap().get(0, 0, 0, 0);
            if (fd - c).abs() > 1e-4 * c.abs().max(fd.abs()).max(1e-8) {
                failures += 1;
            }
        }
        assert!(failures > 0, "expected a tangent mismatch at the kink");
    }

    #[test]
    fn relu_mode_admits_nonconvexity() {
        let arch = IcnnArchitecture {
            hidden_sizes: vec![1],
            n_fibers: 0,
            mode: Mode::UnconstrainedRelu,
            ..IcnnArchitecture::default()
        };
        let mut p = init_parameters(&arch, 0).zeros_like();
        p.layers[0].a[(0, 0)] = 1.0;
        p.layers[1].a[(0, 0)] = -1.0;
        let net = Network::new(&arch, &p);
        let v = |x: f64| net.forward(DMatrix::from_column_slice(3, 1, &[x, 0.0, 0.0]), None).value[0];
        assert!(v(0.0) > 0.5 * v(-1.0) + 0.5 * v(1.0));
    }

    #[test]
    fn model_file_round_trip() {
        let arch = IcnnArchitecture::with_fibers(2);
        let params = random_params(&arch, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut prov = BTreeMap::new();
        prov.insert("seed".to_string(), serde_json::json!(8));
        save_model(&path, &arch, &params, &prov).unwrap();
        let (a2, p2, prov2) = load_model(&path).unwrap();
        assert_eq!(a2, arch);
        assert_eq!(p2, params);
        assert_eq!(prov2, prov);

        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": \"1\"", "\"version\": \"9\"");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Schema { .. })));
    }
}
