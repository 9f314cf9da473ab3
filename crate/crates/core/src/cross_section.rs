//! Cross-section measures `rho` and the kernels derived from them.
//!
//! Config schema (TOML), one of:
//!
//! ```toml
//! cross_section = { type = "gaussian", sigma = 0.5, mass = 1.0 }
//! cross_section = { type = "uniform_ball", radius = 0.5, mass = 1.0 }
//! cross_section = { type = "cantor_product", depth = 20, ratio = 0.3, scale = 1.0, mass = 1.0 }
//! cross_section = { type = "point", mass = 1.0 }
//! ```
//!
//! Sign conventions. `kernel_g` is the attractive form `G^rho = rho * G * rho` with
//! `G(x) = -1/(4 pi |x|)`, negative everywhere; `kernel_g_coulomb` is its negative.
//! Both are tied to the spectral measure by `int e^{ik.x} dnu(k) = -G^rho(x) / 2`.
//! For the transverse kernel `B^rho(x) = int p_k e^{ik.x} dnu(k)` the trace at the
//! origin is `2A = -G^rho(0)`: positive, as it must be for a positive measure.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgrid::KGrid;
use crate::quadrature::gauss_legendre;
use crate::vec3::{self, Mat3, Vec3};

/// `(2 pi)^3`
pub const TWO_PI_CUBED: f64 = 8.0 * PI * PI * PI;

/// Default Cantor mollifier width as a fraction of the scale `L`.
pub const CANTOR_MOLLIFIER_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CrossSection {
    Gaussian {
        sigma: f64,
        mass: f64,
    },
    UniformBall {
        radius: f64,
        mass: f64,
    },
    /// Product over the three axes of the symmetric Cantor measure on
    /// `[-scale/2, scale/2]` that keeps the two outer pieces of relative size
    /// `ratio` at each of `depth` levels.
    CantorProduct {
        depth: u32,
        ratio: f64,
        scale: f64,
        mass: f64,
    },
    Point {
        mass: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

impl CrossSection {
    pub fn gaussian(sigma: f64, mass: f64) -> Self {
        CrossSection::Gaussian { sigma, mass }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CrossSection::Gaussian { sigma, mass } => {
                positive("sigma", sigma)?;
                positive("mass", mass)
            }
            CrossSection::UniformBall { radius, mass } => {
                positive("radius", radius)?;
                positive("mass", mass)
            }
            CrossSection::CantorProduct {
                depth,
                ratio,
                scale,
                mass,
            } => {
                if depth == 0 {
                    return Err(Error::InvalidArgument("cantor depth must be at least 1".into()));
                }
                if !(ratio > 0.0 && ratio < 0.5) {
                    return Err(Error::InvalidArgument(format!(
                        "cantor ratio must lie in (0, 1/2), got {ratio}"
                    )));
                }
                positive("scale", scale)?;
                positive("mass", mass)
            }
            CrossSection::Point { mass } => positive("mass", mass),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            CrossSection::Gaussian { .. } => "gaussian",
            CrossSection::UniformBall { .. } => "uniform_ball",
            CrossSection::CantorProduct { .. } => "cantor_product",
            CrossSection::Point { .. } => "point",
        }
    }

    pub fn mass(&self) -> f64 {
        match *self {
            CrossSection::Gaussian { mass, .. }
            | CrossSection::UniformBall { mass, .. }
            | CrossSection::CantorProduct { mass, .. }
            | CrossSection::Point { mass } => mass,
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, CrossSection::Point { .. })
    }

    pub fn is_isotropic(&self) -> bool {
        !matches!(self, CrossSection::CantorProduct { .. })
    }

    /// Length that sets the default wavenumber range. For the Cantor product it is
    /// the size of the first-level pieces.
    pub fn length_scale(&self) -> Option<f64> {
        match *self {
            CrossSection::Gaussian { sigma, .. } => Some(sigma),
            CrossSection::UniformBall { radius, .. } => Some(radius),
            CrossSection::CantorProduct { ratio, scale, .. } => Some(ratio * scale),
            CrossSection::Point { .. } => None,
        }
    }

    pub(crate) fn reject_point(&self, operation: &'static str) -> Result<()> {
        if self.is_point() {
            Err(Error::Unsupported {
                operation,
                variant: "point",
            })
        } else {
            Ok(())
        }
    }

    /// One point drawn from `rho / m`. The Cantor product is sampled at its
    /// depth-`d` atoms, matching `fourier`.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match *self {
            CrossSection::Gaussian { sigma, .. } => {
                std::array::from_fn(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            }
            CrossSection::UniformBall { radius, .. } => loop {
                let p: Vec3 = std::array::from_fn(|_| radius * rng.random_range(-1.0..1.0));
                if vec3::norm_sq(&p) <= radius * radius {
                    break p;
                }
            },
            CrossSection::CantorProduct {
                depth, ratio, scale, ..
            } => std::array::from_fn(|_| {
                let mut half_gap = 0.5 * (1.0 - ratio) * scale;
                let mut x = 0.0;
                for _ in 0..depth {
                    x += if rng.random::<bool>() { half_gap } else { -half_gap };
                    half_gap *= ratio;
                }
                x
            }),
            CrossSection::Point { .. } => vec3::ZERO,
        }
    }

    /// `rho_hat(k) = int e^{ik.x} rho(dx)`.
    ///
    /// All variants are centred and symmetric, so the transform is real:
    /// - gaussian: `m exp(-sigma^2 |k|^2 / 2)`
    /// - uniform_ball: `m 3 (sin u - u cos u) / u^3`, `u = R |k|`
    /// - cantor_product: `m prod_{a=1..3} prod_{j=0..d-1} cos(k_a (1 - r) L r^j / 2)`.
    ///   The pieces left after `d` levels have width `L r^d` and are treated as atoms;
    ///   per axis this changes the transform by at most `(k_a L r^d)^2 / 8`.
    /// - point: `m`
    pub fn fourier(&self, k: &Vec3) -> Complex64 {
        Complex64::new(self.fourier_real(k), 0.0)
    }

    pub fn fourier_real(&self, k: &Vec3) -> f64 {
        match *self {
            CrossSection::Gaussian { sigma, mass } => {
                mass * (-0.5 * sigma * sigma * vec3::norm_sq(k)).exp()
            }
            CrossSection::UniformBall { radius, mass } => {
                mass * ball_profile(radius * vec3::norm(k))
            }
            CrossSection::CantorProduct {
                depth,
                ratio,
                scale,
                mass,
            } => {
                let mut prod = mass;
                for ka in k {
                    let mut half_gap = 0.5 * (1.0 - ratio) * scale * ka;
                    for _ in 0..depth {
                        prod *= half_gap.cos();
                        half_gap *= ratio;
                    }
                }
                prod
            }
            CrossSection::Point { mass } => mass,
        }
    }

    /// Upper bound on `|rho_hat(k) - rho_hat_truncated(k)|` for the Cantor product,
    /// zero for the other variants.
    pub fn truncation_bound(&self, k: &Vec3) -> f64 {
        match *self {
            CrossSection::CantorProduct {
                depth,
                ratio,
                scale,
                mass,
            } => {
                let w = scale * ratio.powi(depth as i32);
                mass * k.iter().map(|ka| (ka * w).powi(2) / 8.0).sum::<f64>()
            }
            _ => 0.0,
        }
    }

    /// `|rho_hat|^2` as a function of `|k|` for isotropic variants.
    pub fn radial_fourier_sq(&self, q: f64) -> Option<f64> {
        match *self {
            CrossSection::Gaussian { sigma, mass } => {
                Some(mass * mass * (-sigma * sigma * q * q).exp())
            }
            CrossSection::UniformBall { radius, mass } => Some((mass * ball_profile(radius * q)).powi(2)),
            CrossSection::Point { mass } => Some(mass * mass),
            CrossSection::CantorProduct { .. } => None,
        }
    }

    /// `rho_bar(q)^2`, the average of `|rho_hat|^2` over the sphere of radius `q`.
    pub fn spherical_avg(&self, q: f64) -> f64 {
        self.spherical_avg_with(q, 32, 64)
    }

    /// `spherical_avg` with an explicit `n_theta x n_phi` product rule
    /// (Gauss-Legendre in cos(theta), uniform in phi).
    pub fn spherical_avg_with(&self, q: f64, n_theta: usize, n_phi: usize) -> f64 {
        if let Some(v) = self.radial_fourier_sq(q) {
            return v;
        }
        let (ct, wt) = gauss_legendre(n_theta);
        let mut acc = 0.0;
        for (c, w) in ct.iter().zip(&wt) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            let mut ring = 0.0;
            for b in 0..n_phi {
                let phi = 2.0 * PI * (b as f64 + 0.5) / n_phi as f64;
                let k = [q * s * phi.cos(), q * s * phi.sin(), q * c];
                ring += self.fourier_real(&k).powi(2);
            }
            acc += w * ring / n_phi as f64;
        }
        0.5 * acc
    }

    /// `A = int dnu` in closed form where one exists.
    pub fn nu_mass_exact(&self) -> Option<f64> {
        match *self {
            CrossSection::Gaussian { sigma, mass } => {
                Some(mass * mass / (8.0 * PI.powf(1.5) * sigma))
            }
            CrossSection::UniformBall { radius, mass } => {
                Some(3.0 * mass * mass / (20.0 * PI * radius))
            }
            _ => None,
        }
    }

    pub fn isotropic_kernels(&self) -> Option<IsotropicKernels> {
        match *self {
            CrossSection::Gaussian { sigma, mass } => Some(IsotropicKernels::Gaussian { sigma, mass }),
            CrossSection::UniformBall { radius, mass } => {
                Some(IsotropicKernels::Ball { radius, mass })
            }
            _ => None,
        }
    }

    /// `G^rho(x)` from the closed radial forms (gaussian, uniform ball).
    pub fn kernel_g(&self, x: &Vec3) -> Result<f64> {
        self.reject_point("kernel_g")?;
        let k = self.isotropic_kernels().ok_or(Error::Unsupported {
            operation: "kernel_g without a wavenumber grid",
            variant: self.variant_name(),
        })?;
        Ok(-k.g_plus(vec3::norm(x)))
    }

    pub fn kernel_g_coulomb(&self, x: &Vec3) -> Result<f64> {
        Ok(-self.kernel_g(x)?)
    }

    /// Density of `rho * rho` (the law of the sum of two independent draws, with mass `m^2`).
    /// The Cantor product has no density; it is mollified per axis by a centred
    /// Gaussian of width `L * CANTOR_MOLLIFIER_FRACTION`.
    pub fn kernel_rho2(&self, x: &Vec3) -> Result<f64> {
        match *self {
            CrossSection::Gaussian { .. } | CrossSection::UniformBall { .. } => {
                Ok(self.isotropic_kernels().unwrap().rho2(vec3::norm(x)))
            }
            CrossSection::CantorProduct { scale, .. } => {
                Ok(CantorConvolution::new(self, scale * CANTOR_MOLLIFIER_FRACTION)?.density(x))
            }
            CrossSection::Point { .. } => Err(Error::Unsupported {
                operation: "kernel_rho2",
                variant: "point",
            }),
        }
    }

    /// `B^rho(x)` in closed form for isotropic variants.
    pub fn kernel_b_exact(&self, x: &Vec3) -> Result<Mat3> {
        self.reject_point("kernel_b")?;
        let k = self.isotropic_kernels().ok_or(Error::Unsupported {
            operation: "closed-form kernel_b",
            variant: self.variant_name(),
        })?;
        Ok(k.b_matrix(x))
    }
}

fn ball_profile(u: f64) -> f64 {
    if u < 0.5 {
        // 3 sum_n (-1)^n (2n + 2) u^{2n} / (2n + 3)!
        let u2 = u * u;
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..10 {
            let nf = n as f64;
            term *= -u2 * (2.0 * nf + 2.0) / (2.0 * nf * (2.0 * nf + 2.0) * (2.0 * nf + 3.0));
            sum += term;
        }
        sum
    } else {
        let (s, c) = u.sin_cos();
        3.0 * (s - u * c) / (u * u * u)
    }
}

/// `A = int dnu` by quadrature over `kgrid`.
pub fn nu_mass(cs: &CrossSection, kgrid: &KGrid) -> Result<f64> {
    cs.reject_point("nu_mass")?;
    Ok(kgrid.nu_weights().iter().sum())
}

/// `nu_bar` mass: the radial rule of `kgrid` applied to `4 pi rho_bar(q)^2 / (2 (2 pi)^3)`.
pub fn nu_bar_mass(cs: &CrossSection, kgrid: &KGrid) -> Result<f64> {
    cs.reject_point("nu_bar_mass")?;
    Ok(kgrid
        .radii()
        .iter()
        .zip(kgrid.radial_weights())
        .map(|(q, w)| w * 4.0 * PI * cs.spherical_avg(*q) / (2.0 * TWO_PI_CUBED))
        .sum())
}

/// `B^rho(x) = int p_k cos(k.x) dnu(k)` by quadrature over `kgrid`, any variant.
pub fn kernel_b(cs: &CrossSection, x: &Vec3, kgrid: &KGrid) -> Result<Mat3> {
    cs.reject_point("kernel_b")?;
    let mut b = [[0.0; 3]; 3];
    for node in 0..kgrid.len() {
        let w = kgrid.nu_weights()[node];
        if w == 0.0 {
            continue;
        }
        let k = kgrid.wavevector(node);
        let u = kgrid.direction(node);
        let c = w * vec3::dot(&k, x).cos();
        for r in 0..3 {
            for s in 0..3 {
                let delta = if r == s { 1.0 } else { 0.0 };
                b[r][s] += c * (delta - u[r] * u[s]);
            }
        }
    }
    Ok(b)
}

/// `G^rho(x) = -2 int cos(k.x) dnu(k)` by quadrature over `kgrid`, any variant.
pub fn kernel_g_quadrature(cs: &CrossSection, x: &Vec3, kgrid: &KGrid) -> Result<f64> {
    cs.reject_point("kernel_g")?;
    let mut acc = 0.0;
    for node in 0..kgrid.len() {
        let w = kgrid.nu_weights()[node];
        acc += w * vec3::dot(&kgrid.wavevector(node), x).cos();
    }
    Ok(-2.0 * acc)
}

/// Radial kernel values at one separation `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialKernels {
    /// `-G^rho(r)`, the positive Coulomb form.
    pub g_plus: f64,
    /// `B^rho(x) = alpha I + beta_over_r2 x x^T`.
    pub alpha: f64,
    pub beta_over_r2: f64,
    /// `(rho * rho)(r)`.
    pub rho2: f64,
}

/// Closed-form kernels of the isotropic cross-sections.
///
/// Writing `F(r) = m^-2 int |x - y| (rho * rho)(dy)` (a function of `r = |x|`), the
/// transverse kernel is `B = (g_plus / 2) I - (m^2 / 16 pi) Hess F`, and
/// `Hess F = F'' x_hat x_hat^T + (F' / r)(I - x_hat x_hat^T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IsotropicKernels {
    Gaussian { sigma: f64, mass: f64 },
    Ball { radius: f64, mass: f64 },
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

impl IsotropicKernels {
    pub fn g_plus(&self, r: f64) -> f64 {
        match *self {
            IsotropicKernels::Gaussian { sigma, mass } => {
                let z = r / (2.0 * sigma);
                mass * mass * erf_over_z(z) / (8.0 * PI * sigma)
            }
            IsotropicKernels::Ball { radius, mass } => {
                let u = r / radius;
                mass * mass * ball::coulomb(u) / (4.0 * PI * radius)
            }
        }
    }

    pub fn rho2(&self, r: f64) -> f64 {
        match *self {
            IsotropicKernels::Gaussian { sigma, mass } => {
                let v = 4.0 * PI * sigma * sigma;
                mass * mass * (-r * r / (4.0 * sigma * sigma)).exp() / (v * v.sqrt())
            }
            IsotropicKernels::Ball { radius, mass } => {
                if r >= 2.0 * radius {
                    return 0.0;
                }
                let vol = 4.0 * PI * radius.powi(3) / 3.0;
                let overlap = PI / 12.0 * (4.0 * radius + r) * (2.0 * radius - r).powi(2);
                mass * mass * overlap / (vol * vol)
            }
        }
    }

    pub fn at(&self, r: f64) -> RadialKernels {
        let g_plus = self.g_plus(r);
        let (fp_over_r, curvature_over_r2) = self.hessian_parts(r);
        let mass = match *self {
            IsotropicKernels::Gaussian { mass, .. } | IsotropicKernels::Ball { mass, .. } => mass,
        };
        let c = mass * mass / (16.0 * PI);
        RadialKernels {
            g_plus,
            alpha: 0.5 * g_plus - c * fp_over_r,
            beta_over_r2: -c * curvature_over_r2,
            rho2: self.rho2(r),
        }
    }

    /// `(F'(r)/r, (F''(r) - F'(r)/r) / r^2)`, both finite at `r = 0`.
    fn hessian_parts(&self, r: f64) -> (f64, f64) {
        match *self {
            IsotropicKernels::Gaussian { sigma, .. } => gaussian_hessian_parts(r, sigma),
            IsotropicKernels::Ball { radius, .. } => {
                let u = r / radius;
                (ball::fp_over_r(u) / radius, ball::curvature(u) / radius.powi(3))
            }
        }
    }

    pub fn b_matrix(&self, x: &Vec3) -> Mat3 {
        let k = self.at(vec3::norm(x));
        let mut m = [[0.0; 3]; 3];
        for r in 0..3 {
            for s in 0..3 {
                m[r][s] = k.beta_over_r2 * (x[r] * x[s]);
            }
            m[r][r] += k.alpha;
        }
        m
    }
}

/// `erf(z) / z` with its limit `2 / sqrt(pi)` at zero.
fn erf_over_z(z: f64) -> f64 {
    if z < 1e-3 {
        let z2 = z * z;
        2.0 / SQRT_PI * (1.0 - z2 / 3.0 + z2 * z2 / 10.0)
    } else {
        libm::erf(z) / z
    }
}

/// Coefficients `c_n` of `F'(r) = pi^{-1/2} sum_n c_n z^{2n+1}` for the Gaussian
/// case, `z = r / (2 sigma)`.
fn gaussian_series_coeff(n: usize) -> f64 {
    let nf = n as f64;
    let mut fact = 1.0;
    for i in 1..=n {
        fact *= i as f64;
    }
    let fact1 = fact * (nf + 1.0);
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    2.0 * sign / (fact * (2.0 * nf + 1.0)) + sign / (fact1 * (2.0 * nf + 3.0)) - sign / fact1
}

fn gaussian_hessian_parts(r: f64, sigma: f64) -> (f64, f64) {
    // Z ~ N(0, s^2 I) with s^2 = 2 sigma^2; z = r / (sqrt(2) s) = r / (2 sigma).
    let s = std::f64::consts::SQRT_2 * sigma;
    let z = r / (2.0 * sigma);
    if z < 0.5 {
        let z2 = z * z;
        // F'/r = base * sum c_n z^{2n};  (F'' - F'/r)/r^2 = base / (2 s^2) * sum 2n c_n z^{2n-2}.
        let mut fp_sum = 0.0;
        let mut curv = 0.0;
        let mut zp = 1.0;
        for n in 0..30 {
            let c = gaussian_series_coeff(n);
            fp_sum += c * zp;
            zp *= z2;
            if zp < 1e-18 {
                break;
            }
        }
        let mut zq = 1.0;
        for n in 1..30 {
            curv += 2.0 * n as f64 * gaussian_series_coeff(n) * zq;
            zq *= z2;
            if zq < 1e-18 {
                break;
            }
        }
        let base = 1.0 / (std::f64::consts::SQRT_2 * s * SQRT_PI);
        (base * fp_sum, base * curv / (2.0 * s * s))
    } else {
        let e = libm::erf(z);
        let g = (2.0 / PI).sqrt() * (-z * z).exp();
        let s2_r2 = s * s / (r * r);
        let fp = (1.0 - s2_r2) * e + (s / r) * g;
        let fpp = 2.0 * s * s / (r * r * r) * e - 2.0 * s / (r * r) * g;
        (fp / r, (fpp - fp / r) / (r * r))
    }
}

/// Polynomial kernels of the self-convolution of a uniform ball, in units of the radius.
mod ball {
    // Radial law of |x - y| / R for x, y uniform in the unit ball:
    // q(u) = 3u^2 - (9/4)u^3 + (3/16)u^5 on [0, 2].
    const INV_MEAN_TOTAL: f64 = 1.2;

    /// `int_0^u q / u'`.
    fn pm1(u: f64) -> f64 {
        1.5 * u * u - 0.75 * u.powi(3) + 3.0 / 80.0 * u.powi(5)
    }

    /// `(1/u) int_0^u q` and `u^-3 int_0^u q u'^2`, expanded so they are finite at zero.
    fn p0_over_u(u: f64) -> f64 {
        u * u - 9.0 / 16.0 * u.powi(3) + u.powi(5) / 32.0
    }

    fn p2_over_u3(u: f64) -> f64 {
        0.6 * u * u - 0.375 * u.powi(3) + 3.0 / 128.0 * u.powi(5)
    }

    /// `4 pi R G_plus / m^2`.
    pub fn coulomb(u: f64) -> f64 {
        if u >= 2.0 {
            1.0 / u
        } else {
            p0_over_u(u) + INV_MEAN_TOTAL - pm1(u)
        }
    }

    /// `R F'(r) / r`.
    pub fn fp_over_r(u: f64) -> f64 {
        if u >= 2.0 {
            1.0 / u - 0.4 / u.powi(3)
        } else {
            p0_over_u(u) - p2_over_u3(u) / 3.0 + 2.0 / 3.0 * (INV_MEAN_TOTAL - pm1(u))
        }
    }

    /// `R^3 (F'' - F'/r) / r^2`.
    pub fn curvature(u: f64) -> f64 {
        if u >= 2.0 {
            1.2 / u.powi(5) - 1.0 / u.powi(3)
        } else {
            -0.4 + 3.0 / 16.0 * u - u.powi(3) / 128.0
        }
    }

    #[cfg(test)]
    pub fn cumulative(u: f64) -> f64 {
        let u = u.min(2.0);
        u.powi(3) - 9.0 / 16.0 * u.powi(4) + u.powi(6) / 32.0
    }
}

/// Per-axis atoms of `mu * mu` for the Cantor product, with fine levels folded
/// into a Gaussian width.
#[derive(Debug, Clone)]
pub struct CantorConvolution {
    atoms: Vec<(f64, f64)>,
    width: f64,
    mass_sq: f64,
}

impl CantorConvolution {
    /// Levels whose half-gap `(1 - r) L r^j` is below `eps` are replaced by their
    /// variance `a_j^2 / 2`, which is added to `eps^2`.
    pub fn new(cs: &CrossSection, eps: f64) -> Result<Self> {
        let CrossSection::CantorProduct {
            depth,
            ratio,
            scale,
            mass,
        } = *cs
        else {
            return Err(Error::Unsupported {
                operation: "cantor convolution",
                variant: cs.variant_name(),
            });
        };
        positive("mollifier width", eps)?;
        let mut atoms = vec![(0.0, 1.0)];
        let mut var = eps * eps;
        let mut a = (1.0 - ratio) * scale;
        for _ in 0..depth {
            if a >= eps {
                let mut next = Vec::with_capacity(atoms.len() * 3);
                for &(x, w) in &atoms {
                    next.push((x - a, 0.25 * w));
                    next.push((x, 0.5 * w));
                    next.push((x + a, 0.25 * w));
                }
                atoms = next;
            } else {
                var += 0.5 * a * a;
            }
            a *= ratio;
        }
        Ok(Self {
            atoms,
            width: var.sqrt(),
            mass_sq: mass * mass,
        })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    fn axis_density(&self, x: f64) -> f64 {
        let inv = 1.0 / self.width;
        let norm = inv / (2.0 * PI).sqrt();
        self.atoms
            .iter()
            .map(|&(c, w)| {
                let t = (x - c) * inv;
                if t.abs() > 40.0 {
                    0.0
                } else {
                    w * norm * (-0.5 * t * t).exp()
                }
            })
            .sum()
    }

    pub fn density(&self, x: &Vec3) -> f64 {
        self.mass_sq * x.iter().map(|&c| self.axis_density(c)).product::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgrid::KGridSpec;
    use crate::quadrature::composite_rule;
    use proptest::prelude::*;

    #[test]
    fn sampled_points_reproduce_the_transform() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let k = [1.3, -0.4, 0.8];
        for cs in [gauss(), ball_cs(), cantor()] {
            let n = 200_000;
            let mean: f64 = (0..n)
                .map(|_| vec3::dot(&k, &cs.sample_point(&mut rng)).cos())
                .sum::<f64>()
                / n as f64;
            let exact = cs.fourier_real(&k) / cs.mass();
            assert!((mean - exact).abs() < 5.0 / (n as f64).sqrt(), "{cs:?}: {mean} vs {exact}");
        }
    }

    fn gauss() -> CrossSection {
        CrossSection::gaussian(0.5, 1.0)
    }

    fn ball_cs() -> CrossSection {
        CrossSection::UniformBall {
            radius: 0.7,
            mass: 1.3,
        }
    }

    fn cantor() -> CrossSection {
        CrossSection::CantorProduct {
            depth: 20,
            ratio: 0.3,
            scale: 1.0,
            mass: 1.0,
        }
    }

    #[test]
    fn transform_at_zero_is_mass() {
        for cs in [gauss(), ball_cs(), cantor(), CrossSection::Point { mass: 2.5 }] {
            assert_eq!(cs.fourier(&[0.0; 3]).re, cs.mass());
        }
    }

    #[test]
    fn gaussian_transform_matches_brute_force_quadrature() {
        // Separable: per axis int e^{i k x} N(0,1)(x) dx along k = e1, |k| = 1.
        let (x, w) = composite_rule(&(-40..=40).map(|i| i as f64 * 0.25).collect::<Vec<_>>(), 12);
        let one_d: f64 = x
            .iter()
            .zip(&w)
            .map(|(x, w)| w * x.cos() * (-0.5 * x * x).exp() / (2.0 * PI).sqrt())
            .sum();
        let cs = CrossSection::gaussian(1.0, 1.0);
        let v = cs.fourier_real(&[1.0, 0.0, 0.0]);
        assert!((v - one_d).abs() < 1e-12);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn ball_transform_is_continuous_at_zero() {
        let cs = ball_cs();
        let small = cs.fourier_real(&[1e-6, 0.0, 0.0]);
        assert!((small - cs.mass()).abs() < 1e-12);
        let below = ball_profile(0.5 - 1e-15);
        let above = ball_profile(0.5 + 1e-15);
        assert!((below - above).abs() < 1e-12);
    }

    #[test]
    fn cantor_truncation_bound_holds_against_deeper_product() {
        let shallow = CrossSection::CantorProduct {
            depth: 6,
            ratio: 0.3,
            scale: 1.0,
            mass: 1.0,
        };
        let deep = cantor();
        for k in [[3.0, -7.0, 11.0], [100.0, 0.0, 2.0], [0.5, 0.5, 0.5]] {
            let diff = (shallow.fourier_real(&k) - deep.fourier_real(&k)).abs();
            assert!(diff <= shallow.truncation_bound(&k) + 1e-15);
        }
    }

    #[test]
    fn exact_nu_mass_matches_configuration_space_formula() {
        let a = gauss().nu_mass_exact().unwrap();
        assert!((a - 1.0 / (8.0 * PI.powf(1.5) * 0.5)).abs() < 1e-15);
        let g0 = gauss().kernel_g(&[0.0; 3]).unwrap();
        assert!((a + g0 / 2.0).abs() < 1e-15);
        let b = ball_cs();
        let g0 = b.kernel_g(&[0.0; 3]).unwrap();
        assert!((b.nu_mass_exact().unwrap() + g0 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_g_far_field_and_sign() {
        let cs = gauss();
        let r = 20.0 * 0.5;
        let g = cs.kernel_g(&[r, 0.0, 0.0]).unwrap();
        let far = -1.0 / (4.0 * PI * r);
        assert!(((g - far) / far).abs() < 0.01);
        for r in [0.0, 0.1, 1.0, 3.0] {
            assert!(cs.kernel_g(&[0.0, r, 0.0]).unwrap() < 0.0);
            assert!(ball_cs().kernel_g(&[0.0, r, 0.0]).unwrap() < 0.0);
        }
    }

    #[test]
    fn ball_kernels_are_continuous_at_contact() {
        for f in [ball::coulomb, ball::fp_over_r, ball::curvature] {
            assert!((f(2.0 - 1e-12) - f(2.0 + 1e-12)).abs() < 1e-9);
        }
        assert!((ball::cumulative(2.0) - 1.0).abs() < 1e-15);
    }

    /// Oracle for `F'(r)/r` and `(F'' - F'/r)/r^2` from the radial law `p(s)` of `|Z|`:
    /// `F'(r) = int_0^r p (1 - s^2/(3r^2)) ds + int_r^inf p 2r/(3s) ds`,
    /// `F''(r) = int_0^r p 2s^2/(3r^3) ds + int_r^inf p 2/(3s) ds`.
    fn hessian_oracle(p: impl Fn(f64) -> f64, r: f64, s_max: f64) -> (f64, f64) {
        let mut edges: Vec<f64> = (0..=400).map(|i| r * i as f64 / 400.0).collect();
        let inner = composite_rule(&edges, 10);
        edges = (0..=800).map(|i| r + (s_max - r) * i as f64 / 800.0).collect();
        let outer = composite_rule(&edges, 10);
        let mut fp = 0.0;
        let mut fpp = 0.0;
        for (s, w) in inner.0.iter().zip(&inner.1) {
            fp += w * p(*s) * (1.0 - s * s / (3.0 * r * r));
            fpp += w * p(*s) * 2.0 * s * s / (3.0 * r.powi(3));
        }
        for (s, w) in outer.0.iter().zip(&outer.1) {
            fp += w * p(*s) * 2.0 * r / (3.0 * s);
            fpp += w * p(*s) * 2.0 / (3.0 * s);
        }
        (fp / r, (fpp - fp / r) / (r * r))
    }

    #[test]
    fn gaussian_hessian_matches_radial_oracle() {
        let sigma: f64 = 0.5;
        let s2 = 2.0 * sigma * sigma;
        let chi = |s: f64| (2.0 / PI).sqrt() * s * s / s2.powf(1.5) * (-s * s / (2.0 * s2)).exp();
        for r in [0.05, 0.3, 0.49, 0.51, 1.0, 2.5] {
            let (a, b) = gaussian_hessian_parts(r, sigma);
            let (ea, eb) = hessian_oracle(chi, r, 12.0);
            assert!((a - ea).abs() < 1e-9 * ea.abs().max(1.0), "r={r}: {a} vs {ea}");
            assert!((b - eb).abs() < 1e-7 * eb.abs().max(1.0), "r={r}: {b} vs {eb}");
        }
    }

    #[test]
    fn gaussian_series_and_closed_form_agree_at_switch() {
        let sigma = 0.5;
        let r_switch = 0.5 * 2.0 * sigma;
        let lo = gaussian_hessian_parts(r_switch * (1.0 - 1e-15), sigma);
        let hi = gaussian_hessian_parts(r_switch * (1.0 + 1e-15), sigma);
        assert!((lo.0 - hi.0).abs() < 1e-12, "{lo:?} {hi:?}");
        assert!((lo.1 - hi.1).abs() < 1e-9, "{lo:?} {hi:?}");
        assert!((gaussian_series_coeff(0) - 4.0 / 3.0).abs() < 1e-15);
        assert!((gaussian_series_coeff(1) + 4.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn ball_hessian_matches_radial_oracle() {
        let radius = 0.7;
        let p = |s: f64| {
            let u = s / radius;
            if u >= 2.0 {
                0.0
            } else {
                (3.0 * u * u - 2.25 * u.powi(3) + 3.0 / 16.0 * u.powi(5)) / radius
            }
        };
        let k = IsotropicKernels::Ball { radius, mass: 1.0 };
        for r in [0.1, 0.7, 1.3, 2.0, 3.0] {
            let (a, b) = k.hessian_parts(r);
            let (ea, eb) = hessian_oracle(p, r, 2.0 * radius + r);
            assert!((a - ea).abs() < 1e-8, "r={r}: {a} vs {ea}");
            assert!((b - eb).abs() < 1e-7, "r={r}: {b} vs {eb}");
        }
    }

    #[test]
    fn b_at_origin_is_two_thirds_a_identity() {
        for cs in [gauss(), ball_cs()] {
            let a = cs.nu_mass_exact().unwrap();
            let b = cs.kernel_b_exact(&[0.0; 3]).unwrap();
            assert!((vec3::trace(&b) - 2.0 * a).abs() < 1e-13);
            assert!((b[0][0] - 2.0 * a / 3.0).abs() < 1e-13);
            assert_eq!(b[0][1], 0.0);
        }
    }

    #[test]
    fn closed_form_kernels_match_grid_quadrature() {
        for cs in [gauss(), ball_cs()] {
            let grid = KGrid::new(&KGridSpec::default(), &cs).unwrap();
            for x in [[0.0, 0.0, 0.0], [0.3, -0.2, 0.1], [1.0, 0.5, -0.7]] {
                let exact = cs.kernel_b_exact(&x).unwrap();
                let quad = kernel_b(&cs, &x, &grid).unwrap();
                let scale = cs.nu_mass_exact().unwrap();
                for r in 0..3 {
                    for s in 0..3 {
                        assert!(
                            (exact[r][s] - quad[r][s]).abs() < 2e-3 * scale,
                            "{cs:?} x={x:?} [{r}][{s}]: {} vs {}",
                            exact[r][s],
                            quad[r][s]
                        );
                    }
                }
                let g = cs.kernel_g(&x).unwrap();
                let gq = kernel_g_quadrature(&cs, &x, &grid).unwrap();
                assert!((g - gq).abs() < 2e-3 * scale, "{g} vs {gq}");
            }
        }
    }

    #[test]
    fn rho2_gaussian_value_and_mass() {
        let cs = gauss();
        let v0 = cs.kernel_rho2(&[0.0; 3]).unwrap();
        assert!((v0 - (4.0 * PI * 0.25f64).powf(-1.5)).abs() < 1e-14);
        for cs in [gauss(), ball_cs()] {
            let k = cs.isotropic_kernels().unwrap();
            let (r, w) = composite_rule(&(0..=200).map(|i| i as f64 * 0.03).collect::<Vec<_>>(), 8);
            let mass: f64 = r.iter().zip(&w).map(|(r, w)| w * 4.0 * PI * r * r * k.rho2(*r)).sum();
            let m2 = cs.mass().powi(2);
            assert!((mass - m2).abs() < 1e-6 * m2, "{mass}");
        }
    }

    #[test]
    fn cantor_convolution_integrates_to_mass_squared() {
        let cs = cantor();
        let conv = CantorConvolution::new(&cs, 0.01).unwrap();
        let edges: Vec<f64> = (0..=400).map(|i| -1.2 + 2.4 * i as f64 / 400.0).collect();
        let (x, w) = composite_rule(&edges, 6);
        let axis: f64 = x.iter().zip(&w).map(|(x, w)| w * conv.axis_density(*x)).sum();
        assert!((axis - 1.0).abs() < 1e-6);
        assert!(conv.width() >= 0.01);
        assert!(CantorConvolution::new(&gauss(), 0.01).is_err());
        assert!(cs.kernel_rho2(&[0.1, 0.0, -0.1]).unwrap() >= 0.0);
        assert!(CrossSection::Point { mass: 1.0 }.kernel_rho2(&[0.0; 3]).is_err());
    }

    #[test]
    fn spherical_average_cantor_is_bounded_and_converged() {
        let cs = cantor();
        for q in [0.5, 3.0, 10.0] {
            let coarse = cs.spherical_avg_with(q, 32, 64);
            let fine = cs.spherical_avg_with(q, 64, 128);
            assert!(coarse <= 1.0 + 1e-12);
            assert!((coarse - fine).abs() <= 5e-3 * fine, "q={q}: {coarse} vs {fine}");
        }
        assert_eq!(gauss().spherical_avg(2.0), (-0.25f64 * 4.0).exp());
    }

    #[test]
    fn point_is_rejected_where_mass_is_infinite() {
        let p = CrossSection::Point { mass: 1.0 };
        assert!(p.kernel_g(&[1.0, 0.0, 0.0]).is_err());
        assert!(p.kernel_b_exact(&[1.0, 0.0, 0.0]).is_err());
        assert!(p.length_scale().is_none());
    }

    #[test]
    fn validation() {
        assert!(CrossSection::gaussian(0.0, 1.0).validate().is_err());
        assert!(CrossSection::CantorProduct { depth: 3, ratio: 0.5, scale: 1.0, mass: 1.0 }
            .validate()
            .is_err());
        assert!(cantor().validate().is_ok());
    }

    #[test]
    fn config_schema_round_trip() {
        let cs: CrossSection = toml::from_str("type = \"uniform_ball\"\nradius = 0.5\nmass = 2.0\n").unwrap();
        assert_eq!(cs, CrossSection::UniformBall { radius: 0.5, mass: 2.0 });
        let back: CrossSection = toml::from_str(&toml::to_string(&cs).unwrap()).unwrap();
        assert_eq!(back, cs);
    }

    proptest! {
        #[test]
        fn transform_is_bounded_by_mass(k in prop::array::uniform3(-50.0f64..50.0)) {
            for cs in [gauss(), ball_cs(), cantor()] {
                prop_assert!(cs.fourier_real(&k).abs() <= cs.mass() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn kernels_are_even(x in prop::array::uniform3(-3.0f64..3.0)) {
            let neg = vec3::scale(&x, -1.0);
            for cs in [gauss(), ball_cs()] {
                prop_assert_eq!(cs.kernel_g(&x).unwrap(), cs.kernel_g(&neg).unwrap());
                prop_assert_eq!(cs.kernel_rho2(&x).unwrap(), cs.kernel_rho2(&neg).unwrap());
                let b = cs.kernel_b_exact(&x).unwrap();
                let bn = cs.kernel_b_exact(&neg).unwrap();
                let a = cs.nu_mass_exact().unwrap();
                for r in 0..3 {
                    for s in 0..3 {
                        prop_assert_eq!(b[r][s], b[s][r]);
                        prop_assert_eq!(b[r][s], bn[r][s]);
                        prop_assert!(b[r][s].abs() <= 2.0 * a);
                    }
                }
            }
        }
    }
}
