//! Configuration-space evaluation of the energies of a Brownian core, the smoothed
//! self-intersection local time, and the point-like interaction of two filaments.
//!
//! Signs: `G_plus = -G^rho >= 0` is the Coulomb potential of `rho * rho`, so that
//! `int dnu(k) e^{ik.x} = G_plus(x) / 2`. With it the modified energy of a Brownian
//! path splits as
//!
//! ```text
//! H~ = int int_{s<t} G_plus(X_t - X_s) d^X_s . dX_t
//!    + 1/2 int [G_plus(X_T - X_t) + G_plus(X_t - X_0)] dt
//!    + 1/8 int int_{[0,T]^2} (rho*rho)(X_t - X_s) ds dt
//!    + G_plus(0) T / 2
//! ```
//!
//! where `d^X_s` is the backward Ito differential, and the transverse energy as
//! `H = 2 int int_{s<t} dX_t . B(X_t - X_s) d^X_s + tr B(0) T` with `tr B(0) = 2A`.
//!
//! Discretization: forward (left point) in `t`, backward (right point) in `s`, so the
//! double sums run over `sum_j sum_{i<j} K(X_j - X_{i+1}) dX_i . dX_j`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cross_section::{CantorConvolution, CrossSection, IsotropicKernels, RadialKernels, CANTOR_MOLLIFIER_FRACTION};
use crate::error::{Error, Result};
use crate::paths::Path;
use crate::vec3::{self, Vec3};

/// Largest number of steps accepted by the O(n^2) sums here.
pub const MAX_STEPS: usize = 1 << 13;

/// Separations below this count as coincident in the point-like interaction.
pub const COINCIDENCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub term_double: f64,
    pub term_boundary: f64,
    /// One eighth of the smoothed self-intersection over the full square.
    pub term_localtime: f64,
    pub term_const: f64,
    pub total: f64,
    /// False when the quadratic variation of the path is far from `T I`, i.e. the
    /// input does not look like a Brownian core and the identity need not hold.
    pub in_scope: bool,
}

/// Kernel values as functions of `w = r^2` for the pairs of one path.
///
/// The Gaussian kernels are entire in `w`, so they are tabulated on a uniform grid
/// that covers every squared separation of the path and read back by 4-point
/// Lagrange interpolation. The ball kernels are piecewise polynomials and are
/// evaluated directly.
enum PairKernels {
    Table(KernelTable),
    Direct(IsotropicKernels),
}

struct KernelTable {
    inv_h: f64,
    /// `[g_plus, alpha, beta_over_r2, rho2]` per node.
    values: Vec<[f64; 4]>,
    exact: IsotropicKernels,
}

const LANES: usize = 8;

/// Table nodes per `(12 sigma)^2` of squared separation.
const TABLE_NODES: usize = 4096;

impl KernelTable {
    fn new(exact: IsotropicKernels, w_max: f64, h: f64) -> Self {
        let nodes = (w_max / h).ceil() as usize + 4;
        let values = (0..nodes)
            .map(|k| {
                let v = exact.at((k as f64 * h).sqrt());
                [v.g_plus, v.alpha, v.beta_over_r2, v.rho2]
            })
            .collect();
        Self {
            inv_h: 1.0 / h,
            values,
            exact,
        }
    }

    /// Valid for `0 <= w <= w_max`; larger arguments are clamped to the last cell.
    #[inline(always)]
    fn at(&self, w: f64) -> [f64; 4] {
        let x = w * self.inv_h;
        let base = (x as usize).saturating_sub(1).min(self.values.len() - 4);
        let t = x - (base + 1) as f64;
        let tm = t - 1.0;
        let tp = t + 1.0;
        let t2 = t - 2.0;
        let l = [
            -t * tm * t2 / 6.0,
            tp * tm * t2 * 0.5,
            -tp * t * t2 * 0.5,
            tp * t * tm / 6.0,
        ];
        let v = &self.values[base..base + 4];
        let mut out = [0.0; 4];
        for c in 0..4 {
            out[c] = l[0] * v[0][c] + l[1] * v[1][c] + l[2] * v[2][c] + l[3] * v[3][c];
        }
        out
    }
}

impl PairKernels {
    fn for_path(cs: &CrossSection, path: &Path, operation: &'static str) -> Result<Self> {
        check_steps(path)?;
        cs.validate()?;
        let unsupported = || Error::Unsupported {
            operation,
            variant: cs.variant_name(),
        };
        match *cs {
            CrossSection::Gaussian { sigma, .. } => {
                let exact = cs.isotropic_kernels().ok_or_else(unsupported)?;
                let p = path.points();
                let reach = p.iter().map(|x| vec3::norm(&vec3::sub(x, &p[0]))).fold(0.0, f64::max);
                let w_ref = (12.0 * sigma).powi(2);
                let w_max = (2.0 * reach).powi(2).max(w_ref);
                Ok(PairKernels::Table(KernelTable::new(exact, w_max, w_ref / (TABLE_NODES - 1) as f64)))
            }
            CrossSection::UniformBall { .. } => {
                Ok(PairKernels::Direct(cs.isotropic_kernels().ok_or_else(unsupported)?))
            }
            _ => Err(unsupported()),
        }
    }

    fn exact(&self) -> &IsotropicKernels {
        match self {
            PairKernels::Table(t) => &t.exact,
            PairKernels::Direct(k) => k,
        }
    }

    fn at(&self, w: f64) -> [f64; 4] {
        match self {
            PairKernels::Table(t) => t.at(w),
            PairKernels::Direct(k) => direct(k, w),
        }
    }
}

#[inline(always)]
fn direct(k: &IsotropicKernels, w: f64) -> [f64; 4] {
    let RadialKernels {
        g_plus,
        alpha,
        beta_over_r2,
        rho2,
    } = k.at(w.sqrt());
    [g_plus, alpha, beta_over_r2, rho2]
}

fn check_steps(path: &Path) -> Result<()> {
    let n = path.grid().steps();
    if n > MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "{n} steps exceed the limit of {MAX_STEPS} for pairwise sums"
        )));
    }
    Ok(())
}

/// Every pair sum the decompositions need, in one O(n^2) sweep.
struct PairSums {
    /// `sum_j sum_{i<j} G_plus(X_j - X_{i+1}) dX_i . dX_j`
    double_g: f64,
    /// `sum_j sum_{i<j} dX_j . B(X_j - X_{i+1}) dX_i`
    double_b: f64,
    /// `sum_{i,j < n} (rho*rho)(X_i - X_j)` (times `dt^2` gives the local time).
    square_rho2: f64,
}

struct Soa {
    x: [Vec<f64>; 3],
    dx: [Vec<f64>; 3],
}

impl Soa {
    fn new(path: &Path) -> Self {
        let n = path.grid().steps();
        let p = path.points();
        Self {
            x: [0, 1, 2].map(|a| p[..n].iter().map(|v| v[a]).collect()),
            dx: [0, 1, 2].map(|a| p.windows(2).map(|w| w[1][a] - w[0][a]).collect()),
        }
    }
}

fn pair_sums(path: &Path, kernels: &PairKernels) -> PairSums {
    let soa = Soa::new(path);
    match kernels {
        PairKernels::Table(t) => sweep(&soa, |w| t.at(w)),
        PairKernels::Direct(k) => sweep(&soa, |w| direct(k, w)),
    }
}

#[inline(always)]
fn sweep(soa: &Soa, kernel: impl Fn(f64) -> [f64; 4]) -> PairSums {
    let [px, py, pz] = &soa.x;
    let [ux, uy, uz] = &soa.dx;
    let n = px.len();
    let diag = kernel(0.0);
    let mut double_g = 0.0;
    let mut double_b = 0.0;
    let mut off_diag_rho2 = 0.0;
    for j in 1..n {
        let (xj, yj, zj) = (px[j], py[j], pz[j]);
        let (ax, ay, az) = (ux[j], uy[j], uz[j]);
        let mut acc_g = 0.0;
        let mut acc_b = 0.0;
        let mut acc_r = kernel(
            (xj - px[0]).powi(2) + (yj - py[0]).powi(2) + (zj - pz[0]).powi(2),
        )[3];
        // l = i + 1 over 1..j; the l = j term sits on the kernel diagonal.
        let mut lane_g = [0.0; LANES];
        let mut lane_b = [0.0; LANES];
        let mut lane_r = [0.0; LANES];
        let blocks = (j - 1) / LANES;
        for blk in 0..blocks {
            let l0 = 1 + blk * LANES;
            for k in 0..LANES {
                let l = l0 + k;
                let (dx, dy, dz) = (xj - px[l], yj - py[l], zj - pz[l]);
                let [g, alpha, beta, rho2] = kernel(dx * dx + dy * dy + dz * dz);
                let (bx, by, bz) = (ux[l - 1], uy[l - 1], uz[l - 1]);
                let dot = ax * bx + ay * by + az * bz;
                lane_g[k] += g * dot;
                lane_b[k] += alpha * dot + beta * (dx * ax + dy * ay + dz * az) * (dx * bx + dy * by + dz * bz);
                lane_r[k] += rho2;
            }
        }
        for l in 1 + blocks * LANES..j {
            let (dx, dy, dz) = (xj - px[l], yj - py[l], zj - pz[l]);
            let [g, alpha, beta, rho2] = kernel(dx * dx + dy * dy + dz * dz);
            let (bx, by, bz) = (ux[l - 1], uy[l - 1], uz[l - 1]);
            let dot = ax * bx + ay * by + az * bz;
            acc_g += g * dot;
            acc_b += alpha * dot + beta * (dx * ax + dy * ay + dz * az) * (dx * bx + dy * by + dz * bz);
            acc_r += rho2;
        }
        acc_g += lane_g.iter().sum::<f64>();
        acc_b += lane_b.iter().sum::<f64>();
        acc_r += lane_r.iter().sum::<f64>();
        let dot = ax * ux[j - 1] + ay * uy[j - 1] + az * uz[j - 1];
        double_g += acc_g + diag[0] * dot;
        double_b += acc_b + diag[1] * dot;
        off_diag_rho2 += acc_r;
    }
    PairSums {
        double_g,
        double_b,
        square_rho2: 2.0 * off_diag_rho2 + n as f64 * diag[3],
    }
}

/// `sum_i sum_j (rho * rho)(X_{t_i} - X_{t_j}) dt^2` over the left nodes, diagonal included.
pub fn smoothed_self_intersection(path: &Path, cs: &CrossSection) -> Result<f64> {
    check_steps(path)?;
    let dt = path.grid().dt();
    let n = path.grid().steps();
    if let CrossSection::CantorProduct { scale, .. } = *cs {
        let p = &path.points()[..n];
        let conv = CantorConvolution::new(cs, scale * CANTOR_MOLLIFIER_FRACTION)?;
        let mut off = 0.0;
        for j in 0..n {
            for i in 0..j {
                off += conv.density(&vec3::sub(&p[j], &p[i]));
            }
        }
        return Ok((2.0 * off + n as f64 * conv.density(&vec3::ZERO)) * dt * dt);
    }
    let kernels = PairKernels::for_path(cs, path, "smoothed_self_intersection")?;
    Ok(pair_sums(path, &kernels).square_rho2 * dt * dt)
}

/// Whether the realized quadratic variation is within a generous band of `T I`.
fn brownian_quadratic_variation(path: &Path) -> bool {
    let t = path.grid().horizon();
    let n = path.grid().steps() as f64;
    // Each diagonal entry has relative standard deviation sqrt(2/n) for a Brownian path.
    let tol = 6.0 * (2.0 / n).sqrt() + 1e-12;
    (0..3).all(|a| {
        (0..3).all(|b| {
            let c = path.covariation(a, b) / t;
            if a == b {
                (c - 1.0).abs() <= tol
            } else {
                c.abs() <= tol
            }
        })
    })
}

fn boundary_sum(path: &Path, kernels: &PairKernels) -> f64 {
    let p = path.points();
    let n = path.grid().steps();
    let (x0, xt) = (p[0], p[n]);
    let mut s = 0.0;
    for x in &p[..n] {
        s += kernels.at(vec3::norm_sq(&vec3::sub(&xt, x)))[0];
        s += kernels.at(vec3::norm_sq(&vec3::sub(x, &x0)))[0];
    }
    0.5 * s * path.grid().dt()
}

fn decompose(path: &Path, kernels: &PairKernels) -> (DecompositionReport, f64) {
    let t = path.grid().horizon();
    let dt = path.grid().dt();
    let sums = pair_sums(path, kernels);
    let zero = kernels.exact().at(0.0);
    let term_double = sums.double_g;
    let term_boundary = boundary_sum(path, kernels);
    let term_localtime = sums.square_rho2 * dt * dt / 8.0;
    let term_const = 0.5 * zero.g_plus * t;
    let report = DecompositionReport {
        term_double,
        term_boundary,
        term_localtime,
        term_const,
        total: term_double + term_boundary + term_localtime + term_const,
        in_scope: brownian_quadratic_variation(path),
    };
    let projected = 2.0 * sums.double_b + 3.0 * zero.alpha * t;
    (report, projected)
}

/// `H~` of a Brownian core from configuration-space kernels.
pub fn energy_tilde_decomposed(path: &Path, cs: &CrossSection) -> Result<DecompositionReport> {
    let kernels = PairKernels::for_path(cs, path, "energy_tilde_decomposed")?;
    Ok(decompose(path, &kernels).0)
}

/// `H` of a Brownian core through the transverse kernel `B`.
pub fn energy_decomposed_projected(path: &Path, cs: &CrossSection) -> Result<f64> {
    let kernels = PairKernels::for_path(cs, path, "energy_decomposed_projected")?;
    Ok(decompose(path, &kernels).1)
}

/// Both decompositions with a single pass over the pairs.
pub fn energies_decomposed(path: &Path, cs: &CrossSection) -> Result<(DecompositionReport, f64)> {
    let kernels = PairKernels::for_path(cs, path, "energies_decomposed")?;
    Ok(decompose(path, &kernels))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DeltaEstimator {
    /// `int int phi_eps(X_t - Y_s) ds dt` with a Gaussian `phi_eps`; `eps` defaults to `dt^{1/2}`.
    DirectMollified { eps: Option<f64> },
    #[default]
    TanakaRosen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    /// `(1/4 pi) sum_j sum_i dY_i . dX_j / |X_j - Y_i|`
    pub ito_double: f64,
    /// Estimate of `int int delta(X_t - Y_s) ds dt`.
    pub collision_local_time: f64,
    pub boundary: f64,
    /// `ito_double - collision_local_time / 4 + boundary`
    pub total: f64,
    /// Node pairs closer than `COINCIDENCE`, left out of every sum.
    pub excluded_pairs: usize,
}

#[inline]
fn inv_dist(d: &Vec3, excluded: &mut usize) -> Option<f64> {
    let r = vec3::norm(d);
    if r < COINCIDENCE {
        *excluded += 1;
        None
    } else {
        Some(1.0 / r)
    }
}

/// Interaction energy of two point-like filaments,
///
/// `H_XY = (1/4 pi) int int dY_s . dX_t / |X_t - Y_s| - (1/4) int int delta(X_t - Y_s) ds dt
///        + (1/8 pi) int [f(X_t - Y_0) + f(X_0 - Y_t) - f(X_T - Y_t) - f(X_t - Y_T)] dt`
///
/// with `f = 1/|.|` and both stochastic integrals Ito (left point).
pub fn pointlike_interaction(x: &Path, y: &Path, mode: DeltaEstimator) -> Result<InteractionReport> {
    if x.grid() != y.grid() {
        return Err(Error::InvalidArgument("paths are sampled on different time grids".into()));
    }
    check_steps(x)?;
    let n = x.grid().steps();
    let dt = x.grid().dt();
    let px = x.points();
    let py = y.points();
    let dxs: Vec<Vec3> = x.increments().collect();
    let dys: Vec<Vec3> = y.increments().collect();
    let mut excluded = 0;

    let mut ito = 0.0;
    for j in 0..n {
        let mut acc = [0.0; 3];
        for i in 0..n {
            if let Some(f) = inv_dist(&vec3::sub(&px[j], &py[i]), &mut excluded) {
                for a in 0..3 {
                    acc[a] += f * dys[i][a];
                }
            }
        }
        ito += vec3::dot(&acc, &dxs[j]);
    }
    ito /= 4.0 * PI;

    let mut ignore = 0;
    let local_time = match mode {
        DeltaEstimator::DirectMollified { eps } => {
            let eps = eps.unwrap_or(dt.sqrt());
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("mollifier width must be positive, got {eps}")));
            }
            let inv2 = 0.5 / (eps * eps);
            let norm = (2.0 * PI * eps * eps).powf(-1.5);
            let mut s = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let w = vec3::norm_sq(&vec3::sub(&px[j], &py[i])) * inv2;
                    if w < 700.0 {
                        s += (-w).exp();
                    }
                }
            }
            s * norm * dt * dt
        }
        DeltaEstimator::TanakaRosen => {
            // 2 pi L = -int dX_t . int ds (X_t - Y_s)/|X_t - Y_s|^3
            //          - int ds [f(X_T - Y_s) - f(X_0 - Y_s)]
            let mut drift = 0.0;
            for j in 0..n {
                let mut acc = [0.0; 3];
                for i in 0..n {
                    let d = vec3::sub(&px[j], &py[i]);
                    if let Some(f) = inv_dist(&d, &mut ignore) {
                        let f3 = f * f * f;
                        for a in 0..3 {
                            acc[a] += d[a] * f3;
                        }
                    }
                }
                drift += vec3::dot(&acc, &dxs[j]);
            }
            let mut ends = 0.0;
            for yi in &py[..n] {
                let far = inv_dist(&vec3::sub(&px[n], yi), &mut ignore);
                let near = inv_dist(&vec3::sub(&px[0], yi), &mut ignore);
                if let (Some(a), Some(b)) = (far, near) {
                    ends += a - b;
                }
            }
            -(drift + ends) * dt / (2.0 * PI)
        }
    };

    let mut boundary = 0.0;
    for j in 0..n {
        let terms = [
            (vec3::sub(&px[j], &py[0]), 1.0),
            (vec3::sub(&px[0], &py[j]), 1.0),
            (vec3::sub(&px[n], &py[j]), -1.0),
            (vec3::sub(&px[j], &py[n]), -1.0),
        ];
        for (d, sign) in terms {
            if let Some(f) = inv_dist(&d, &mut ignore) {
                boundary += sign * f;
            }
        }
    }
    boundary *= dt / (8.0 * PI);

    Ok(InteractionReport {
        ito_double: ito,
        collision_local_time: local_time,
        boundary,
        total: ito - 0.25 * local_time + boundary,
        excluded_pairs: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::path_energies;
    use crate::kgrid::{KGrid, KGridSpec};
    use crate::paths::{sample_bm, SeedSpec, TimeGrid};

    fn gauss() -> CrossSection {
        CrossSection::gaussian(0.5, 1.0)
    }

    fn bm(n: usize, seed: u64, idx: u64) -> Path {
        sample_bm(TimeGrid::new(1.0, n).unwrap(), [0.0; 3], SeedSpec::new(seed, idx))
    }

    #[test]
    fn table_matches_closed_forms() {
        let cs = gauss();
        let exact = cs.isotropic_kernels().unwrap();
        let table = KernelTable::new(exact, 49.0, 36.0 / (TABLE_NODES - 1) as f64);
        let mut r = 0.0;
        while r < 7.0 {
            let v = table.at(r * r);
            let e = exact.at(r);
            for (a, b) in v.iter().zip([e.g_plus, e.alpha, e.beta_over_r2, e.rho2]) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "r={r}: {a} vs {b}");
            }
            r += 0.00731;
        }
    }

    #[test]
    fn constant_path_reduces_to_constants() {
        let cs = gauss();
        let x0 = [0.2, 0.1, -0.3];
        let p = Path::constant(TimeGrid::new(2.0, 256).unwrap(), x0);
        let a = cs.nu_mass_exact().unwrap();
        let g0 = cs.kernel_g_coulomb(&vec3::ZERO).unwrap();
        let rho0 = cs.kernel_rho2(&vec3::ZERO).unwrap();
        let (r, h) = energies_decomposed(&p, &cs).unwrap();
        assert_eq!(r.term_double, 0.0);
        let t = 2.0;
        assert!((r.term_boundary - g0 * t).abs() < 1e-12);
        assert!((r.term_localtime - rho0 * t * t / 8.0).abs() < 1e-12);
        assert!((r.term_const - a * t).abs() < 1e-12);
        assert_eq!(r.total, r.term_double + r.term_boundary + r.term_localtime + r.term_const);
        assert!((h - 2.0 * a * t).abs() < 1e-12);
        assert!(!r.in_scope);
        let ssi = smoothed_self_intersection(&p, &cs).unwrap();
        assert!((ssi - rho0 * t * t).abs() < 1e-12 * ssi);
    }

    #[test]
    fn dilated_path_has_vanishing_intersection() {
        let cs = gauss();
        let p = bm(512, 3, 0);
        let near = smoothed_self_intersection(&p, &cs).unwrap();
        let far = smoothed_self_intersection(&p.dilate(100.0), &cs).unwrap();
        assert!(near > 0.0);
        // Only the diagonal and the first few steps survive the dilation.
        assert!(far < 0.05 * near, "{far} vs {near}");
    }

    #[test]
    fn ball_and_cantor_intersections_are_finite() {
        let ball = CrossSection::UniformBall { radius: 0.5, mass: 1.0 };
        let cantor = CrossSection::CantorProduct {
            depth: 6,
            ratio: 1.0 / 3.0,
            scale: 1.0,
            mass: 1.0,
        };
        let p = bm(64, 4, 0);
        assert!(smoothed_self_intersection(&p, &ball).unwrap() > 0.0);
        assert!(smoothed_self_intersection(&p, &cantor).unwrap() > 0.0);
        assert!(energy_tilde_decomposed(&p, &cantor).is_err());
        assert!(energy_tilde_decomposed(&p, &CrossSection::Point { mass: 1.0 }).is_err());
    }

    #[test]
    fn decomposition_tracks_spectral_energies() {
        let cs = gauss();
        let kg = KGrid::new(&KGridSpec::default(), &cs).unwrap();
        let (mut st, mut sh, mut dt, mut dh) = (0.0, 0.0, 0.0, 0.0);
        let m = 12;
        for i in 0..m {
            let p = bm(1024, 21, i);
            let spec = path_energies(&p, &kg, &cs).unwrap();
            let (rep, h) = energies_decomposed(&p, &cs).unwrap();
            assert!(rep.in_scope);
            st += spec.h_tilde;
            sh += spec.h;
            dt += rep.total;
            dh += h;
        }
        assert!((st - dt).abs() < 0.05 * st, "{st} vs {dt}");
        assert!((sh - dh).abs() < 0.05 * sh, "{sh} vs {dh}");
    }

    #[test]
    fn projected_pair_sum_is_symmetric_under_transpose() {
        // dX_j . B dX_i = dX_i . B^T dX_j with B symmetric.
        let k = gauss().isotropic_kernels().unwrap();
        let x = [0.3, -0.2, 0.5];
        let (a, b) = ([0.1, 0.4, -0.2], [-0.3, 0.2, 0.7]);
        let m = k.b_matrix(&x);
        let lhs = vec3::dot(&a, &vec3::mat_vec(&m, &b));
        let mt = [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[c][r]));
        let rhs = vec3::dot(&b, &vec3::mat_vec(&mt, &a));
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn too_many_steps_rejected() {
        let p = Path::constant(TimeGrid::new(1.0, MAX_STEPS + 1).unwrap(), [0.0; 3]);
        assert!(energy_tilde_decomposed(&p, &gauss()).is_err());
    }

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    }

    #[test]
    fn interaction_estimators_for_shared_origin() {
        let n = 128;
        let (mut tr, mut mo) = (vec![], vec![]);
        for i in 0..300 {
            let x = bm(n, 8, 2 * i);
            let y = bm(n, 8, 2 * i + 1);
            let a = pointlike_interaction(&x, &y, DeltaEstimator::TanakaRosen).unwrap();
            let b = pointlike_interaction(&x, &y, DeltaEstimator::DirectMollified { eps: None }).unwrap();
            assert_eq!(a.excluded_pairs, 1);
            assert_eq!(a.ito_double, b.ito_double);
            tr.push(a.collision_local_time);
            mo.push(b.collision_local_time);
        }
        // E int int delta(X_t - Y_s) = int int (2 pi (t + s))^{-3/2} ds dt = 4 (2 - sqrt 2) (2 pi)^{-3/2}.
        let exact = 4.0 * (2.0 - 2f64.sqrt()) * (2.0 * PI).powf(-1.5);
        for (name, v) in [("tanaka-rosen", tr), ("mollified", mo)] {
            let (mean, se) = mean_and_se(&v);
            assert!((mean - exact).abs() < 4.0 * se + 0.1 * exact, "{name}: {mean} +- {se} vs {exact}");
        }
    }

    #[test]
    fn separated_filaments_match_direct_stratonovich_sum() {
        // Far apart the paths never meet, so the collision term vanishes and the
        // Ito sum plus the boundary terms must reproduce the midpoint double sum.
        let n = 1024;
        let grid = TimeGrid::new(0.05, n).unwrap();
        let x = sample_bm(grid, [0.0; 3], SeedSpec::new(9, 0));
        let y = sample_bm(grid, [1.5, 0.0, 0.0], SeedSpec::new(9, 1));
        let rep = pointlike_interaction(&x, &y, DeltaEstimator::TanakaRosen).unwrap();
        assert!(rep.collision_local_time.abs() < 1e-6);
        let (px, py) = (x.points(), y.points());
        let mut strat = 0.0;
        for j in 0..n {
            let mx = vec3::scale(&vec3::add(&px[j], &px[j + 1]), 0.5);
            for i in 0..n {
                let my = vec3::scale(&vec3::add(&py[i], &py[i + 1]), 0.5);
                strat += vec3::dot(&y.increment(i), &x.increment(j)) / vec3::norm(&vec3::sub(&mx, &my));
            }
        }
        strat /= 4.0 * PI;
        let scale = rep.ito_double.abs() + rep.boundary.abs();
        assert!((rep.total - strat).abs() < 0.05 * scale, "{} vs {strat}", rep.total);
    }

    #[test]
    fn interaction_rejects_mismatched_grids() {
        let x = bm(16, 1, 0);
        let y = bm(32, 1, 1);
        assert!(pointlike_interaction(&x, &y, DeltaEstimator::TanakaRosen).is_err());
    }
}
