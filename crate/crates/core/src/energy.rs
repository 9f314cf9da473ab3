//! Assembly of the rho-inertial energies from spectral transforms.
//!
//! With node weights `W` of [`KGrid`]:
//! `H = sum W |p_k Y|^2`, `H~ = sum W |Y|^2` and `H~ - H = sum W |k_hat . Y|^2`.
//! Shells flagged negligible by the grid (`|rho_hat|^2 < 1e-30 m^2` everywhere on the
//! shell) are left out of every sum.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cross_section::{nu_mass, CrossSection, TWO_PI_CUBED};
use crate::error::{Error, Result};
use crate::fastmath::sincos;
use crate::kgrid::KGrid;
use crate::paths::{Path, TimeGrid};
use crate::quadrature::{composite_rule, gauss_legendre, log_edges, spherical_bessel_012};
use crate::spectral::{for_each_direction, project_unit, Convention, FilamentTransform, PathSoa};
use crate::vec3::{self, CVec3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub h: f64,
    pub h_tilde: f64,
    /// `sum W |k_hat . Y|^2`
    pub diff_spectral: f64,
    pub diff_closed_form: f64,
    /// `S_i = sum_a v_a |rho_hat|^2 |p_k Y|^2` on shell `i`.
    pub shells: Vec<f64>,
    /// Same with `|Y|^2`.
    pub shells_tilde: Vec<f64>,
    pub displacement_norm: f64,
    /// `D = m^2 / (8 pi)`, so that `H~ - H <= D |X_T - X_0|`.
    pub d_bound: f64,
}

/// Per-shell accumulation shared by the transform-based and the fused paths.
/// `H~` and `H` are built from the same products in the same order, so `H~ >= H`
/// holds exactly in floating point.
struct ShellSums {
    perp: Vec<f64>,
    full: Vec<f64>,
    par: Vec<f64>,
}

impl ShellSums {
    fn new(n: usize) -> Self {
        Self {
            perp: vec![0.0; n],
            full: vec![0.0; n],
            par: vec![0.0; n],
        }
    }

    #[inline]
    fn add(&mut self, kgrid: &KGrid, shell: usize, dir: usize, y: &CVec3) {
        let node = kgrid.node(shell, dir);
        let u = kgrid.directions()[dir];
        let w = kgrid.angular_weights()[dir] * kgrid.rho_sq()[node];
        let par = vec3::rdot(&u, y).norm_sqr();
        let perp = vec3::cnorm_sq(&project_unit(&u, y));
        self.perp[shell] += w * perp;
        self.full[shell] += w * (perp + par);
        self.par[shell] += w * par;
    }

    fn finish(self, kgrid: &KGrid, cs: &CrossSection, displacement: &Vec3) -> Result<EnergyReport> {
        let mut h = 0.0;
        let mut h_tilde = 0.0;
        let mut diff = 0.0;
        for i in 0..self.perp.len() {
            let f = kgrid.shell_factor(i);
            h += f * self.perp[i];
            h_tilde += f * self.full[i];
            diff += f * self.par[i];
        }
        Ok(EnergyReport {
            h,
            h_tilde,
            diff_spectral: diff,
            diff_closed_form: energy_difference_closed_form(displacement, cs)?,
            shells: self.perp,
            shells_tilde: self.full,
            displacement_norm: vec3::norm(displacement),
            d_bound: difference_bound_constant(cs),
        })
    }
}

fn live_shells(kgrid: &KGrid) -> Vec<usize> {
    (0..kgrid.n_radial()).filter(|&i| kgrid.shell_is_live(i)).collect()
}

/// `H` from a stored transform.
pub fn energy(transform: &FilamentTransform, kgrid: &KGrid) -> Result<f64> {
    transform.check_grid(kgrid)?;
    let mut h = 0.0;
    for i in live_shells(kgrid) {
        let mut s = 0.0;
        for a in 0..kgrid.n_angular() {
            let node = kgrid.node(i, a);
            s += kgrid.angular_weights()[a] * kgrid.rho_sq()[node] * vec3::cnorm_sq(&transform.py[node]);
        }
        h += kgrid.shell_factor(i) * s;
    }
    Ok(h)
}

/// `H~` from a stored transform.
pub fn energy_tilde(transform: &FilamentTransform, kgrid: &KGrid) -> Result<f64> {
    transform.check_grid(kgrid)?;
    let mut h = 0.0;
    for i in live_shells(kgrid) {
        let mut s = 0.0;
        for a in 0..kgrid.n_angular() {
            let node = kgrid.node(i, a);
            s += kgrid.angular_weights()[a] * kgrid.rho_sq()[node] * vec3::cnorm_sq(&transform.y[node]);
        }
        h += kgrid.shell_factor(i) * s;
    }
    Ok(h)
}

/// Full report from a stored transform.
pub fn energy_report(
    transform: &FilamentTransform,
    kgrid: &KGrid,
    cs: &CrossSection,
) -> Result<EnergyReport> {
    transform.check_grid(kgrid)?;
    let mut sums = ShellSums::new(kgrid.n_radial());
    for i in live_shells(kgrid) {
        for a in 0..kgrid.n_angular() {
            sums.add(kgrid, i, a, &transform.y[kgrid.node(i, a)]);
        }
    }
    sums.finish(kgrid, cs, &transform.displacement)
}

/// Energies of one path without storing the transform (Stratonovich convention).
pub fn path_energies(path: &Path, kgrid: &KGrid, cs: &CrossSection) -> Result<EnergyReport> {
    let soa = PathSoa::new(path, Convention::Stratonovich);
    let mut sums = ShellSums::new(kgrid.n_radial());
    for_each_direction(&soa, kgrid, &live_shells(kgrid), |i, a, y| sums.add(kgrid, i, a, y));
    sums.finish(kgrid, cs, &path.displacement())
}

/// `D = m^2 / (8 pi)`.
pub fn difference_bound_constant(cs: &CrossSection) -> f64 {
    cs.mass() * cs.mass() / (8.0 * PI)
}

const OSCILLATORY_WINDOW: f64 = 200.0;

/// `1 - sin(x)/x`, accurate near zero.
fn one_minus_sinc(x: f64) -> f64 {
    if x < 1e-3 {
        let x2 = x * x;
        x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        1.0 - x.sin() / x
    }
}

/// `H~ - H` for a path with displacement `delta`:
/// `2 int dk/(2 pi)^3 |rho_hat(k)|^2 sin^2(k.delta/2) / |k|^4`.
///
/// For isotropic `rho` the angle to `delta` is integrated exactly, leaving
/// `(1 / 2 pi^2) int_0^inf |rho_hat(q)|^2 (1 - sinc(q d)) / q^2 dq`, `d = |delta|`.
pub fn energy_difference_closed_form(delta: &Vec3, cs: &CrossSection) -> Result<f64> {
    cs.validate()?;
    let d = vec3::norm(delta);
    if d == 0.0 {
        return Ok(0.0);
    }
    let m2 = cs.mass() * cs.mass();
    let q_hi = match cs.length_scale() {
        Some(l) => (40.0 / l).max(1e4 / d),
        None => 1e6 / d,
    };
    let q_lo = 1e-4 * cs.length_scale().map_or(1.0 / d, |l| (1.0 / d).min(1.0 / l));
    let edges = difference_edges(q_lo, q_hi, d);
    let (qs, ws) = composite_rule(&edges, 10);

    if cs.is_isotropic() {
        let rho2 = |q: f64| cs.radial_fourier_sq(q).unwrap();
        // Past the oscillatory window only the smooth part is integrated numerically;
        // the sinc part there is replaced by its leading asymptotic term.
        let osc_end = (OSCILLATORY_WINDOW / d).min(q_hi);
        let body: f64 = qs
            .iter()
            .zip(&ws)
            .map(|(&q, w)| {
                let osc = if q < osc_end { one_minus_sinc(q * d) } else { 1.0 };
                w * rho2(q) * osc / (q * q)
            })
            .sum();
        let sinc_tail = if osc_end < q_hi {
            rho2(osc_end) * (osc_end * d).cos() / (d * d * osc_end.powi(3))
        } else {
            0.0
        };
        let head = m2 * d * d * q_lo / 6.0;
        let tail = rho2(q_hi) / q_hi;
        return Ok((body - sinc_tail + head + tail) / (2.0 * PI * PI));
    }

    // General rho: polar angle about delta by Gauss-Legendre, azimuth uniform.
    let axis = vec3::scale(delta, 1.0 / d);
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = {
        let c = vec3::cross(&axis, &helper);
        vec3::scale(&c, 1.0 / vec3::norm(&c))
    };
    let e2 = vec3::cross(&axis, &e1);
    let (ct, wt) = gauss_legendre(48);
    let n_phi = 96;
    let mut body = 0.0;
    for (q, w) in qs.iter().zip(&ws) {
        let mut ang = 0.0;
        for (c, wc) in ct.iter().zip(&wt) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            let mut ring = 0.0;
            for b in 0..n_phi {
                let (sp, cp) = (2.0 * PI * (b as f64 + 0.5) / n_phi as f64).sin_cos();
                let dir: Vec3 = [0, 1, 2].map(|r| c * axis[r] + s * (cp * e1[r] + sp * e2[r]));
                ring += cs.fourier_real(&vec3::scale(&dir, *q)).powi(2);
            }
            ang += wc * ring / n_phi as f64 * (1.0 - (q * d * c).cos());
        }
        // 2 pi * (1/2) sum over cos(theta) rule = solid-angle integral.
        body += w * 2.0 * PI * ang / (q * q);
    }
    let head = m2 * d * d * q_lo / 6.0 * 4.0 * PI;
    let tail = 4.0 * PI * cs.spherical_avg(q_hi) / q_hi;
    Ok((body + head + tail) / TWO_PI_CUBED)
}

fn difference_edges(q_lo: f64, q_hi: f64, d: f64) -> Vec<f64> {
    let first = (1.0 / d).min(q_hi);
    let osc_end = (OSCILLATORY_WINDOW / d).min(q_hi);
    let mut edges = log_edges(q_lo, first, 8);
    if osc_end > first {
        let panels = ((osc_end - first) * d).ceil() as usize;
        let step = (osc_end - first) / panels as f64;
        edges.extend((1..=panels).map(|p| first + p as f64 * step));
    }
    if q_hi > osc_end {
        let tail = log_edges(osc_end, q_hi, 8);
        edges.extend_from_slice(&tail[1..]);
    }
    edges
}

/// `H_nm = Re int dnu <p_k Y^(n), p_k Y^(m)>`.
pub fn interaction_energy(
    a: &FilamentTransform,
    b: &FilamentTransform,
    kgrid: &KGrid,
) -> Result<f64> {
    a.check_grid(kgrid)?;
    b.check_grid(kgrid)?;
    let mut h = 0.0;
    for i in live_shells(kgrid) {
        let mut s = 0.0;
        for dir in 0..kgrid.n_angular() {
            let node = kgrid.node(i, dir);
            s += kgrid.angular_weights()[dir]
                * kgrid.rho_sq()[node]
                * vec3::cinner(&a.py[node], &b.py[node]).re;
        }
        h += kgrid.shell_factor(i) * s;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiVortexReport {
    pub pairwise: Vec<Vec<f64>>,
    /// `H_N` from the norm of the summed projected transforms.
    pub total: f64,
    /// `sum_{n,m} H_nm`.
    pub total_pairwise: f64,
}

impl MultiVortexReport {
    pub fn self_energy_sum(&self) -> f64 {
        (0..self.pairwise.len()).map(|n| self.pairwise[n][n]).sum()
    }
}

pub fn total_energy(transforms: &[FilamentTransform], kgrid: &KGrid) -> Result<MultiVortexReport> {
    if transforms.is_empty() {
        return Err(Error::Empty("filament collection"));
    }
    for t in transforms {
        t.check_grid(kgrid)?;
    }
    let n = transforms.len();
    let mut pairwise = vec![vec![0.0; n]; n];
    for r in 0..n {
        for c in r..n {
            let h = interaction_energy(&transforms[r], &transforms[c], kgrid)?;
            pairwise[r][c] = h;
            pairwise[c][r] = h;
        }
    }
    let mut total = 0.0;
    for i in live_shells(kgrid) {
        let mut s = 0.0;
        for dir in 0..kgrid.n_angular() {
            let node = kgrid.node(i, dir);
            let mut sum = vec3::CZERO;
            for t in transforms {
                sum = vec3::cadd(&sum, &t.py[node]);
            }
            s += kgrid.angular_weights()[dir] * kgrid.rho_sq()[node] * vec3::cnorm_sq(&sum);
        }
        total += kgrid.shell_factor(i) * s;
    }
    let total_pairwise = pairwise.iter().flatten().sum();
    Ok(MultiVortexReport {
        pairwise,
        total,
        total_pairwise,
    })
}

/// A deterministic curve given with its velocity.
pub struct SmoothCurve {
    position: Box<dyn Fn(f64) -> Vec3 + Send + Sync>,
    velocity: Box<dyn Fn(f64) -> Vec3 + Send + Sync>,
}

impl SmoothCurve {
    pub fn new(
        position: impl Fn(f64) -> Vec3 + Send + Sync + 'static,
        velocity: impl Fn(f64) -> Vec3 + Send + Sync + 'static,
    ) -> Self {
        Self {
            position: Box::new(position),
            velocity: Box::new(velocity),
        }
    }

    /// Circle of radius `r` in the (1,2)-plane traversed at unit angular speed.
    pub fn circle(r: f64) -> Self {
        Self::new(
            move |t| [r * t.cos(), r * t.sin(), 0.0],
            move |t| [-r * t.sin(), r * t.cos(), 0.0],
        )
    }

    /// Unit-speed segment along the first axis.
    pub fn segment() -> Self {
        Self::new(|t| [t, 0.0, 0.0], |_| [1.0, 0.0, 0.0])
    }

    pub fn sample(&self, grid: TimeGrid) -> Result<Path> {
        Path::from_fn(grid, &self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothCurveReport {
    pub h: f64,
    /// `int |gamma'| dt` by the same midpoint rule.
    pub length: f64,
    /// `length^2 * A` with `A` from the same grid.
    pub bound: f64,
}

/// `H = int dnu |p_k int e^{ik.gamma} gamma' dt|^2` with the time integral by the
/// midpoint rule on `grid`.
pub fn energy_smooth_curve(
    curve: &SmoothCurve,
    grid: TimeGrid,
    cs: &CrossSection,
    kgrid: &KGrid,
) -> Result<SmoothCurveReport> {
    let n = grid.steps();
    let dt = grid.dt();
    let mut x = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut dx = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut radius: f64 = 0.0;
    let mut length = 0.0;
    for j in 0..n {
        let t = (j as f64 + 0.5) * dt;
        let p = (curve.position)(t);
        let v = (curve.velocity)(t);
        if !vec3::is_finite(&p) || !vec3::is_finite(&v) {
            return Err(Error::InvalidArgument(format!("curve is not finite at t = {t}")));
        }
        for a in 0..3 {
            x[a][j] = p[a];
            dx[a][j] = v[a] * dt;
        }
        radius = radius.max(vec3::norm(&p));
        length += vec3::norm(&v) * dt;
    }
    let soa = PathSoa { x, dx, radius };
    let mut sums = ShellSums::new(kgrid.n_radial());
    for_each_direction(&soa, kgrid, &live_shells(kgrid), |i, a, y| sums.add(kgrid, i, a, y));
    let h: f64 = (0..kgrid.n_radial()).map(|i| kgrid.shell_factor(i) * sums.perp[i]).sum();
    let a = nu_mass(cs, kgrid)?;
    Ok(SmoothCurveReport {
        h,
        length,
        bound: length * length * a,
    })
}

/// `Psi(z) = cos(z)/z - sin(z)/z^2`, which is `-j_1(z)`.
pub fn psi(z: f64) -> f64 {
    -spherical_bessel_012(z).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaBound {
    pub value: f64,
    /// Nodes sitting exactly at the origin, left out of the sum.
    pub skipped_nodes: usize,
}

/// `int dnu_bar(k) | sum_j Psi(|k| |X_j|) / |X_j| (X_j ^ dX_j) |^2` with the radial
/// rule of `kgrid` and `dnu_bar = 4 pi rho_bar(q)^2 dq / (2 (2 pi)^3)`.
pub fn area_lower_bound(path: &Path, cs: &CrossSection, kgrid: &KGrid) -> Result<AreaBound> {
    cs.reject_point("area_lower_bound")?;
    let pts = path.points();
    let n = path.grid().steps();
    let mut skipped = 0;
    let mut radius = Vec::with_capacity(n);
    let mut wedge = Vec::with_capacity(n);
    for j in 0..n {
        let r = vec3::norm(&pts[j]);
        if r == 0.0 {
            skipped += 1;
            continue;
        }
        radius.push(r);
        wedge.push(vec3::scale(&vec3::cross(&pts[j], &path.increment(j)), 1.0 / r));
    }
    let mut value = 0.0;
    for (i, q) in kgrid.radii().iter().enumerate() {
        let rho_bar_sq = if kgrid.shell_is_live(i) { cs.spherical_avg(*q) } else { 0.0 };
        if rho_bar_sq == 0.0 {
            continue;
        }
        let mut acc = [0.0; 3];
        for (r, w) in radius.iter().zip(&wedge) {
            let z = q * r;
            let p = if z < 1.0 {
                -spherical_bessel_012(z).1
            } else {
                let (s, c) = sincos(z);
                c / z - s / (z * z)
            };
            for a in 0..3 {
                acc[a] += p * w[a];
            }
        }
        value += kgrid.radial_weights()[i] * 4.0 * PI * rho_bar_sq / (2.0 * TWO_PI_CUBED)
            * vec3::norm_sq(&acc);
    }
    Ok(AreaBound {
        value,
        skipped_nodes: skipped,
    })
}
