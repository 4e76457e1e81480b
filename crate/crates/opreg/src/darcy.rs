//! Darcy-flow benchmark data factory.
//!
//! Permeability fields come from thresholding a Gaussian random field with
//! covariance (-Laplacian + shift*I)^(-power) under zero Neumann conditions,
//! sampled by a truncated Karhunen-Loeve expansion in the cosine basis.
//! Pressures solve -div(k grad h) = 1 on the unit square with homogeneous
//! Dirichlet boundary, discretized by a 5-point scheme with harmonic-mean
//! face permeabilities and solved by conjugate gradients.
//!
//! Grid convention: node (i, j) of an R x R lattice sits at
//! (x, y) = (j*dx, i*dx) with dx = 1/(R-1); fields flatten row-major, so
//! flat index = i*R + j. Observation grids store (x, y) pairs in the same
//! order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::kernels;
use crate::dataset::{DataMode, OperatorDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::threading;

pub const PERMEABILITY_HIGH: f64 = 12.0;
pub const PERMEABILITY_LOW: f64 = 3.0;

/// Derivation domains for per-sample substreams.
mod stream {
    pub const GRF: u64 = 0;
    pub const OBSERVATIONS: u64 = 1;
}

/// Deterministic per-(domain, index) stream under one master seed.
pub fn substream(master_seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((domain << 48) ^ index);
    rng
}

#[derive(Clone, Copy, Debug)]
pub struct GrfSpec {
    /// Grid points per axis.
    pub resolution: usize,
    /// Max wavenumber per axis; modes run over 0..=cutoff.
    pub mode_cutoff: usize,
    /// Covariance shift constant.
    pub shift: f64,
    /// Covariance exponent.
    pub power: f64,
}

impl GrfSpec {
    pub fn new(resolution: usize, mode_cutoff: usize) -> Self {
        Self {
            resolution,
            mode_cutoff,
            shift: 9.0,
            power: 2.0,
        }
    }

    /// KL eigenvalue of mode (m, n): (pi^2 (m^2 + n^2) + shift)^(-power).
    pub fn eigenvalue(&self, m: usize, n: usize) -> f64 {
        let lap = std::f64::consts::PI.powi(2) * ((m * m + n * n) as f64);
        (lap + self.shift).powf(-self.power)
    }

    /// Sum of all retained eigenvalues = spatially averaged field variance.
    pub fn total_variance(&self) -> f64 {
        let mut total = 0.0;
        for m in 0..=self.mode_cutoff {
            for n in 0..=self.mode_cutoff {
                total += self.eigenvalue(m, n);
            }
        }
        total
    }
}

/// Draw the KL coefficients sqrt(lambda_mn) * xi_mn, xi iid standard normal,
/// in fixed row-major (m, n) order.
pub fn sample_grf_coeffs(spec: &GrfSpec, rng: &mut impl Rng) -> Tensor {
    let m1 = spec.mode_cutoff + 1;
    let mut c = Tensor::zeros(&[m1, m1]);
    {
        let data = c.data_mut();
        for m in 0..m1 {
            for n in 0..m1 {
                let xi: f64 = rng.sample(StandardNormal);
                data[m * m1 + n] = spec.eigenvalue(m, n).sqrt() * xi;
            }
        }
    }
    c
}

/// Evaluate the expansion sum phi_m(x) phi_n(y) c_mn on the uniform node
/// grid, with phi_0 = 1 and phi_j(x) = sqrt(2) cos(pi j x).
pub fn grf_from_coeffs(spec: &GrfSpec, coeffs: &Tensor) -> Result<Tensor> {
    let m1 = spec.mode_cutoff + 1;
    if coeffs.shape() != [m1, m1] {
        return Err(Error::ShapeMismatch {
            op: "grf_from_coeffs",
            lhs: vec![m1, m1],
            rhs: coeffs.shape().to_vec(),
        });
    }
    let r = spec.resolution;
    let dx = 1.0 / (r - 1) as f64;
    // basis[i, j] = phi_j(t_i)
    let mut basis = vec![0.0; r * m1];
    for i in 0..r {
        let t = i as f64 * dx;
        basis[i * m1] = 1.0;
        for j in 1..m1 {
            basis[i * m1 + j] =
                std::f64::consts::SQRT_2 * (std::f64::consts::PI * j as f64 * t).cos();
        }
    }
    // field[i, j] = sum_n phi_n(y_i) sum_m c_mn phi_m(x_j)
    //             = (basis . C^T . basis^T)[i, j]
    let mut ct = vec![0.0; m1 * m1];
    for m in 0..m1 {
        for n in 0..m1 {
            ct[n * m1 + m] = coeffs.data()[m * m1 + n];
        }
    }
    let tmp = kernels::matmul_nn(&basis, &ct, r, m1, m1);
    let field = kernels::matmul_nt(&tmp, &basis, r, m1, r);
    Tensor::new(vec![r, r], field)
}

/// One GRF realization on the node grid from a seeded stream.
pub fn sample_grf(spec: &GrfSpec, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = sample_grf_coeffs(spec, &mut rng);
    grf_from_coeffs(spec, &coeffs).expect("coefficient shape is consistent")
}

/// Pointwise push-forward: 12 where the field is non-negative, 3 otherwise.
pub fn pushforward(mu: &Tensor) -> Tensor {
    Tensor::from_fn(mu.shape(), |i| {
        if mu.data()[i] >= 0.0 {
            PERMEABILITY_HIGH
        } else {
            PERMEABILITY_LOW
        }
    })
}

/// Pressure solve for -div(k grad h) = 1, h = 0 on the boundary.
///
/// Face permeabilities are harmonic means of the adjacent nodes; the system
/// is solved by conjugate gradients to a relative residual below 1e-10.
pub fn solve_darcy(k: &Tensor) -> Result<Tensor> {
    let [r, r2] = k.shape() else {
        return Err(Error::InvalidArgument(format!(
            "permeability must be square [R, R], got {:?}",
            k.shape()
        )));
    };
    if r != r2 || *r < 3 {
        return Err(Error::InvalidArgument(format!(
            "permeability must be square with R >= 3, got {:?}",
            k.shape()
        )));
    }
    let r = *r;
    if k.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "permeability must be strictly positive".into(),
        ));
    }
    let inner = r - 2;
    let n = inner * inner;
    let dx = 1.0 / (r - 1) as f64;
    let inv_dx2 = 1.0 / (dx * dx);
    let kd = k.data();
    let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);

    // Unknowns are interior nodes, index q = (i-1)*inner + (j-1).
    let apply = |h: &[f64], out: &mut [f64]| {
        let rows: Vec<(usize, f64)> = (0..n)
            .map(|q| {
                let i = q / inner + 1;
                let j = q % inner + 1;
                let kc = kd[i * r + j];
                let kn = harmonic(kc, kd[(i - 1) * r + j]);
                let ks = harmonic(kc, kd[(i + 1) * r + j]);
                let kw = harmonic(kc, kd[i * r + j - 1]);
                let ke = harmonic(kc, kd[i * r + j + 1]);
                let hc = h[q];
                let hn = if i > 1 { h[q - inner] } else { 0.0 };
                let hs = if i < inner { h[q + inner] } else { 0.0 };
                let hw = if j > 1 { h[q - 1] } else { 0.0 };
                let he = if j < inner { h[q + 1] } else { 0.0 };
                let val = (kn * (hc - hn) + ks * (hc - hs) + kw * (hc - hw) + ke * (hc - he))
                    * inv_dx2;
                (q, val)
            })
            .collect();
        for (q, val) in rows {
            out[q] = val;
        }
    };

    // CG on the SPD system A h = 1.
    let b = vec![1.0; n];
    let mut h = vec![0.0; n];
    let mut residual = b.clone();
    let mut direction = residual.clone();
    let mut rsq: f64 = residual.iter().map(|v| v * v).sum();
    let b_norm = (n as f64).sqrt();
    let tol = 1e-10 * b_norm;
    let max_iter = 20 * n.max(100);
    let mut ad = vec![0.0; n];
    let mut iter = 0;
    while rsq.sqrt() > tol {
        if iter >= max_iter {
            return Err(Error::CgDidNotConverge {
                residual: rsq.sqrt() / b_norm,
                iterations: iter,
            });
        }
        apply(&direction, &mut ad);
        let dad: f64 = direction.iter().zip(&ad).map(|(d, a)| d * a).sum();
        let alpha = rsq / dad;
        for q in 0..n {
            h[q] += alpha * direction[q];
            residual[q] -= alpha * ad[q];
        }
        let rsq_new: f64 = residual.iter().map(|v| v * v).sum();
        let beta = rsq_new / rsq;
        for q in 0..n {
            direction[q] = residual[q] + beta * direction[q];
        }
        rsq = rsq_new;
        iter += 1;
    }

    let mut full = Tensor::zeros(&[r, r]);
    {
        let out = full.data_mut();
        for q in 0..n {
            let i = q / inner + 1;
            let j = q % inner + 1;
            out[i * r + j] = h[q];
        }
    }
    Ok(full)
}

/// Permeability/pressure pair on the node grid.
#[derive(Clone, Debug)]
pub struct DarcyField {
    pub permeability: Tensor,
    pub pressure: Tensor,
    pub resolution: usize,
}

impl DarcyField {
    pub fn from_permeability(k: Tensor) -> Result<Self> {
        let resolution = k.shape()[0];
        let pressure = solve_darcy(&k)?;
        Ok(Self {
            permeability: k,
            pressure,
            resolution,
        })
    }
}

/// Generate `count` fields deterministically under `master_seed`; sample `i`
/// draws from its own substream, so scheduling does not affect output.
pub fn generate_fields(
    resolution: usize,
    count: usize,
    mode_cutoff: usize,
    master_seed: u64,
) -> Result<Vec<DarcyField>> {
    let spec = GrfSpec::new(resolution, mode_cutoff);
    threading::install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(master_seed, stream::GRF, i as u64);
                let coeffs = sample_grf_coeffs(&spec, &mut rng);
                let mu = grf_from_coeffs(&spec, &coeffs)?;
                DarcyField::from_permeability(pushforward(&mu))
            })
            .collect()
    })
}

/// Observation coordinates for one sample.
///
/// Aligned mode returns the fixed R x R node lattice (count must be R^2);
/// unaligned mode draws `count` iid uniform points in (0,1)^2 from the
/// (master seed, sample index) substream.
pub fn sample_observations(
    resolution: usize,
    count: usize,
    mode: DataMode,
    master_seed: u64,
    sample_index: usize,
) -> Result<Tensor> {
    match mode {
        DataMode::Aligned => {
            let r = resolution;
            if count != r * r {
                return Err(Error::InvalidArgument(format!(
                    "aligned observations need K = R^2 = {}, got {}",
                    r * r,
                    count
                )));
            }
            let dx = 1.0 / (r - 1) as f64;
            let mut pts = Tensor::zeros(&[count, 2]);
            {
                let d = pts.data_mut();
                for i in 0..r {
                    for j in 0..r {
                        d[(i * r + j) * 2] = j as f64 * dx;
                        d[(i * r + j) * 2 + 1] = i as f64 * dx;
                    }
                }
            }
            Ok(pts)
        }
        DataMode::Unaligned => {
            if count == 0 {
                return Err(Error::InvalidArgument(
                    "unaligned observations need K >= 1".into(),
                ));
            }
            let mut rng = substream(master_seed, stream::OBSERVATIONS, sample_index as u64);
            let mut draw = || loop {
                let v: f64 = rng.gen();
                if v > 0.0 {
                    return v;
                }
            };
            let mut pts = Tensor::zeros(&[count, 2]);
            {
                let d = pts.data_mut();
                for p in 0..count {
                    d[p * 2] = draw();
                    d[p * 2 + 1] = draw();
                }
            }
            Ok(pts)
        }
    }
}

/// Bilinear interpolation of a nodal field at (x, y) points in [0,1]^2.
pub fn interpolate_bilinear(field: &Tensor, points: &Tensor) -> Result<Tensor> {
    let [r, r2] = field.shape() else {
        return Err(Error::InvalidArgument(format!(
            "field must be [R, R], got {:?}",
            field.shape()
        )));
    };
    if r != r2 {
        return Err(Error::InvalidArgument("field must be square".into()));
    }
    let r = *r;
    let [k, two] = points.shape() else {
        return Err(Error::InvalidArgument(format!(
            "points must be [K, 2], got {:?}",
            points.shape()
        )));
    };
    if *two != 2 {
        return Err(Error::InvalidArgument("points must be 2-D".into()));
    }
    let k = *k;
    let step = 1.0 / (r - 1) as f64;
    let f = field.data();
    let mut out = Tensor::zeros(&[k]);
    {
        let o = out.data_mut();
        for p in 0..k {
            let x = points.data()[p * 2];
            let y = points.data()[p * 2 + 1];
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::InvalidArgument(format!(
                    "observation point ({x}, {y}) outside the unit square"
                )));
            }
            let cell_x = ((x / step) as usize).min(r - 2);
            let cell_y = ((y / step) as usize).min(r - 2);
            let fx = x / step - cell_x as f64;
            let fy = y / step - cell_y as f64;
            let v00 = f[cell_y * r + cell_x];
            let v01 = f[cell_y * r + cell_x + 1];
            let v10 = f[(cell_y + 1) * r + cell_x];
            let v11 = f[(cell_y + 1) * r + cell_x + 1];
            o[p] = v00 * (1.0 - fx) * (1.0 - fy)
                + v01 * fx * (1.0 - fy)
                + v10 * (1.0 - fx) * fy
                + v11 * fx * fy;
        }
    }
    Ok(out)
}

/// Pack fields into an operator dataset with the standard matrix shapes.
///
/// `mean_rows`, when given, stores the index-wise average of those output
/// rows in the dataset (the train-split mean field).
pub fn assemble_dataset(
    fields: &[DarcyField],
    mode: DataMode,
    observations: usize,
    master_seed: u64,
    mean_rows: Option<&[usize]>,
) -> Result<OperatorDataset> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("no fields to assemble".into()));
    }
    let r = fields[0].resolution;
    if fields.iter().any(|f| f.resolution != r) {
        return Err(Error::InvalidArgument(
            "all fields must share one resolution".into(),
        ));
    }
    let n = fields.len();
    let sensors = r * r;

    let mut function = Tensor::zeros(&[n, sensors]);
    {
        let fm = function.data_mut();
        for (row, field) in fields.iter().enumerate() {
            fm[row * sensors..(row + 1) * sensors].copy_from_slice(field.permeability.data());
        }
    }

    let (grid, output) = match mode {
        DataMode::Aligned => {
            let pts = sample_observations(r, sensors, mode, master_seed, 0)?;
            let mut output = Tensor::zeros(&[n, sensors]);
            {
                let om = output.data_mut();
                for (row, field) in fields.iter().enumerate() {
                    om[row * sensors..(row + 1) * sensors].copy_from_slice(field.pressure.data());
                }
            }
            (pts, output)
        }
        DataMode::Unaligned => {
            let k_obs = observations;
            let per_sample: Vec<(Tensor, Tensor)> = threading::install(|| {
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let pts = sample_observations(r, k_obs, mode, master_seed, i)?;
                        let vals = interpolate_bilinear(&fields[i].pressure, &pts)?;
                        Ok((pts, vals))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut grid = Tensor::zeros(&[n, k_obs, 2]);
            let mut output = Tensor::zeros(&[n, k_obs]);
            {
                let g = grid.data_mut();
                let o = output.data_mut();
                for (i, (pts, vals)) in per_sample.iter().enumerate() {
                    g[i * k_obs * 2..(i + 1) * k_obs * 2].copy_from_slice(pts.data());
                    o[i * k_obs..(i + 1) * k_obs].copy_from_slice(vals.data());
                }
            }
            (grid, output)
        }
    };

    let mut ds = OperatorDataset::new(mode, function, grid, output, None)?;
    if let Some(rows) = mean_rows {
        ds.mean_field = Some(ds.mean_field_of(rows)?);
    }
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Series solution of -Laplace(h) = 1 at the center of the unit square.
    fn poisson_center_oracle() -> f64 {
        let mut total = 0.0;
        let pi = std::f64::consts::PI;
        for m in (1..400).step_by(2) {
            for n in (1..400).step_by(2) {
                let smn = (m as f64 * pi / 2.0).sin() * (n as f64 * pi / 2.0).sin();
                total += 16.0 / (pi.powi(4) * (m * n) as f64 * ((m * m + n * n) as f64)) * smn;
            }
        }
        total
    }

    #[test]
    fn grf_zero_coeffs_zero_field() {
        let spec = GrfSpec::new(17, 4);
        let field = grf_from_coeffs(&spec, &Tensor::zeros(&[5, 5])).unwrap();
        assert!(field.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grf_constant_mode_value() {
        // Only xi_00 = 1 gives the constant field sqrt(lambda_00) = 1/9.
        let spec = GrfSpec::new(9, 3);
        let mut coeffs = Tensor::zeros(&[4, 4]);
        coeffs.data_mut()[0] = spec.eigenvalue(0, 0).sqrt();
        let field = grf_from_coeffs(&spec, &coeffs).unwrap();
        for &v in field.data() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn grf_variance_matches_spectrum() {
        // Spatially averaged empirical variance over many samples vs the
        // eigenvalue sum. Smaller than the acceptance-scale check but the
        // same oracle.
        let spec = GrfSpec::new(33, 16);
        let samples = 2000;
        let r2 = spec.resolution * spec.resolution;
        let mut sum = vec![0.0; r2];
        let mut sumsq = vec![0.0; r2];
        for s in 0..samples {
            let f = sample_grf(&spec, 1000 + s as u64);
            for (i, &v) in f.data().iter().enumerate() {
                sum[i] += v;
                sumsq[i] += v * v;
            }
        }
        let n = samples as f64;
        let avg_var: f64 = (0..r2)
            .map(|i| (sumsq[i] - sum[i] * sum[i] / n) / (n - 1.0))
            .sum::<f64>()
            / r2 as f64;
        let expect = spec.total_variance();
        assert!(
            (avg_var - expect).abs() / expect < 0.08,
            "avg var {avg_var} vs spectrum {expect}"
        );
    }

    #[test]
    fn pushforward_values_and_symmetry() {
        let mu = Tensor::new(vec![2], vec![0.5, -0.3]).unwrap();
        let k = pushforward(&mu);
        assert_eq!(k.data(), &[12.0, 3.0]);

        let zero = Tensor::zeros(&[4]);
        assert!(pushforward(&zero).data().iter().all(|&v| v == 12.0));

        // A sign flip swaps the 12/3 regions exactly, except at exact zeros.
        let spec = GrfSpec::new(9, 4);
        let mu = sample_grf(&spec, 3);
        let flipped = Tensor::from_fn(mu.shape(), |i| -mu.data()[i]);
        let k = pushforward(&mu);
        let kf = pushforward(&flipped);
        for i in 0..mu.len() {
            if mu.data()[i] == 0.0 {
                assert_eq!((k.data()[i], kf.data()[i]), (12.0, 12.0));
            } else {
                assert_eq!(k.data()[i] == 12.0, kf.data()[i] == 3.0);
            }
        }
    }

    #[test]
    fn poisson_center_value() {
        // k = 1 reduces to the Poisson problem; compare against the
        // double-sine series oracle at the center node.
        let oracle = poisson_center_oracle();
        assert!((oracle - 0.0736713).abs() < 1e-6, "oracle {oracle}");
        let r = 41;
        let k = Tensor::filled(&[r, r], 1.0);
        let h = solve_darcy(&k).unwrap();
        let center = h.at(&[r / 2, r / 2]);
        assert!(
            (center - oracle).abs() / oracle < 2e-3,
            "center {center} vs oracle {oracle}"
        );
    }

    #[test]
    fn constant_permeability_scaling() {
        let r = 21;
        let h1 = solve_darcy(&Tensor::filled(&[r, r], 1.0)).unwrap();
        let h5 = solve_darcy(&Tensor::filled(&[r, r], 5.0)).unwrap();
        for (a, b) in h1.data().iter().zip(h5.data()) {
            assert!((a / 5.0 - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mirror_symmetric_permeability() {
        let r = 21;
        let spec = GrfSpec::new(r, 6);
        let mu = sample_grf(&spec, 9);
        // Symmetrize left-right.
        let k = Tensor::from_fn(&[r, r], |idx| {
            let i = idx / r;
            let j = idx % r;
            let m = mu.at(&[i, j]) + mu.at(&[i, r - 1 - j]);
            if m >= 0.0 {
                12.0
            } else {
                3.0
            }
        });
        let h = solve_darcy(&k).unwrap();
        for i in 0..r {
            for j in 0..r {
                let a = h.at(&[i, j]);
                let b = h.at(&[i, r - 1 - j]);
                assert!((a - b).abs() < 1e-9, "asymmetry at ({i},{j}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn maximum_principle_on_generated_fields() {
        let fields = generate_fields(17, 8, 8, 77).unwrap();
        for f in &fields {
            let r = f.resolution;
            for i in 0..r {
                for j in 0..r {
                    let v = f.pressure.at(&[i, j]);
                    let boundary = i == 0 || j == 0 || i == r - 1 || j == r - 1;
                    if boundary {
                        assert_eq!(v, 0.0);
                    } else {
                        assert!(v > 0.0, "non-positive interior pressure {v} at ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn grid_refinement_monotone_for_poisson() {
        let oracle = poisson_center_oracle();
        let mut errs = Vec::new();
        for r in [29usize, 43, 61] {
            let h = solve_darcy(&Tensor::filled(&[r, r], 1.0)).unwrap();
            errs.push((h.at(&[r / 2, r / 2]) - oracle).abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn bilinear_nodal_linear_and_product() {
        let r = 5;
        let dx = 1.0 / (r - 1) as f64;
        // Exact at nodes.
        let field = Tensor::from_fn(&[r, r], |idx| (idx as f64).cos());
        let node = Tensor::new(vec![1, 2], vec![2.0 * dx, 3.0 * dx]).unwrap();
        let v = interpolate_bilinear(&field, &node).unwrap();
        assert_eq!(v.data()[0], field.at(&[3, 2]));

        // Linear in x reproduced exactly.
        let linear = Tensor::from_fn(&[r, r], |idx| (idx % r) as f64 * dx * 3.5 - 1.0);
        let pts = Tensor::new(vec![2, 2], vec![0.37, 0.61, 0.93, 0.08]).unwrap();
        let v = interpolate_bilinear(&linear, &pts).unwrap();
        assert!((v.data()[0] - (0.37 * 3.5 - 1.0)).abs() < 1e-12);
        assert!((v.data()[1] - (0.93 * 3.5 - 1.0)).abs() < 1e-12);

        // h = x*y at a cell center equals the product of midpoints.
        let prod = Tensor::from_fn(&[r, r], |idx| {
            let x = (idx % r) as f64 * dx;
            let y = (idx / r) as f64 * dx;
            x * y
        });
        let center = Tensor::new(vec![1, 2], vec![dx * 1.5, dx * 2.5]).unwrap();
        let v = interpolate_bilinear(&prod, &center).unwrap();
        assert!((v.data()[0] - dx * 1.5 * dx * 2.5).abs() < 1e-15);

        // Outside the unit square is rejected.
        let out = Tensor::new(vec![1, 2], vec![1.2, 0.5]).unwrap();
        assert!(interpolate_bilinear(&field, &out).is_err());
    }

    #[test]
    fn observation_determinism() {
        let a = sample_observations(29, 10, DataMode::Unaligned, 5, 3).unwrap();
        let b = sample_observations(29, 10, DataMode::Unaligned, 5, 3).unwrap();
        let c = sample_observations(29, 10, DataMode::Unaligned, 5, 4).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        assert!(a
            .data()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));

        let lattice = sample_observations(3, 9, DataMode::Aligned, 0, 0).unwrap();
        assert_eq!(lattice.shape(), &[9, 2]);
        assert_eq!(&lattice.data()[..4], &[0.0, 0.0, 0.5, 0.0]);
        assert!(sample_observations(3, 8, DataMode::Aligned, 0, 0).is_err());
    }

    #[test]
    fn assemble_shapes_both_modes() {
        let fields = generate_fields(9, 4, 4, 11).unwrap();
        let ds = assemble_dataset(&fields, DataMode::Unaligned, 81, 11, Some(&[0, 1, 2])).unwrap();
        assert_eq!(ds.function_matrix.shape(), &[4, 81]);
        assert_eq!(ds.grid_matrix.shape(), &[4, 81, 2]);
        assert_eq!(ds.output_matrix.shape(), &[4, 81]);
        assert_eq!(ds.mean_field.as_ref().unwrap().shape(), &[81]);
        let (f, g, o) = ds.prod_shapes();
        assert_eq!((f, g, o), ([324, 81], [324, 2], [324, 1]));

        let aligned = assemble_dataset(&fields, DataMode::Aligned, 81, 11, None).unwrap();
        assert_eq!(aligned.grid_matrix.shape(), &[81, 2]);
        assert_eq!(aligned.output_matrix.shape(), &[4, 81]);
    }

    #[test]
    fn generation_deterministic_and_thread_invariant() {
        let run = || {
            let fields = generate_fields(9, 6, 6, 123).unwrap();
            let ds =
                assemble_dataset(&fields, DataMode::Unaligned, 81, 123, None).unwrap();
            (
                ds.function_matrix.bit_checksum(),
                ds.grid_matrix.bit_checksum(),
                ds.output_matrix.bit_checksum(),
            )
        };
        crate::threading::set_threads(1);
        let a = run();
        crate::threading::set_threads(3);
        let b = run();
        assert_eq!(a, b);
    }
}
