//! Radial x angular quadrature over wavenumber space carrying the weights of `dnu`.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::cross_section::{CrossSection, TWO_PI_CUBED};
use crate::error::{Error, Result};
use crate::quadrature::{composite_rule, gauss_legendre, log_edges};
use crate::vec3::{self, Vec3};

/// Shells whose largest `|rho_hat|^2` falls below this fraction of `m^2` carry no
/// representable energy and may be skipped by the fused energy loops.
pub const NEGLIGIBLE_SHELL: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KGridSpec {
    pub radial: usize,
    /// Defaults to `1e-3 / l` with `l` the cross-section's length scale.
    pub q_min: Option<f64>,
    /// Defaults to `40 / l`.
    pub q_max: Option<f64>,
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for KGridSpec {
    fn default() -> Self {
        Self {
            radial: 64,
            q_min: None,
            q_max: None,
            n_theta: 16,
            n_phi: 32,
        }
    }
}

impl KGridSpec {
    pub fn with_radial(mut self, radial: usize) -> Self {
        self.radial = radial;
        self
    }

    pub fn with_angular(mut self, n_theta: usize, n_phi: usize) -> Self {
        self.n_theta = n_theta;
        self.n_phi = n_phi;
        self
    }

    pub fn with_range(mut self, q_min: f64, q_max: f64) -> Self {
        self.q_min = Some(q_min);
        self.q_max = Some(q_max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial < 2 {
            return Err(Error::InvalidGrid("at least two radial nodes are required".into()));
        }
        if self.n_theta == 0 || self.n_phi == 0 {
            return Err(Error::InvalidGrid("angular node counts must be positive".into()));
        }
        if let (Some(lo), Some(hi)) = (self.q_min, self.q_max) {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "need 0 < q_min < q_max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Nodes are indexed `i * n_angular + a` (shell `i`, direction `a`).
///
/// Radial rule: trapezoid in `ln q` on `q_min .. q_max`, i.e. weights `h q_i` halved at
/// both ends, with `q_min` added to the first weight for the piece `[0, q_min]` where
/// the `nu` integrand is flat. Angular rule: Gauss-Legendre in `cos(theta)` times uniform
/// `phi`, weights summing to `4 pi`. The node weight is
/// `w_i v_a |rho_hat(q_i w_a)|^2 / (2 (2 pi)^3)`.
#[derive(Debug, Clone)]
pub struct KGrid {
    spec: KGridSpec,
    q_min: f64,
    q_max: f64,
    radii: Vec<f64>,
    radial_w: Vec<f64>,
    dirs: Vec<Vec3>,
    ang_w: Vec<f64>,
    antipode: Option<Vec<usize>>,
    rho_sq: Vec<f64>,
    nu_w: Vec<f64>,
    shell_live: Vec<bool>,
    mass_sq: f64,
    tail: f64,
    fingerprint: u64,
}

impl KGrid {
    pub fn new(spec: &KGridSpec, cs: &CrossSection) -> Result<Self> {
        spec.validate()?;
        cs.validate()?;
        let scale = cs.length_scale();
        let q_min = spec
            .q_min
            .or(scale.map(|l| 1e-3 / l))
            .ok_or_else(|| Error::InvalidGrid("a point cross-section needs an explicit q range".into()))?;
        let q_max = spec
            .q_max
            .or(scale.map(|l| 40.0 / l))
            .ok_or_else(|| Error::InvalidGrid("a point cross-section needs an explicit q range".into()))?;
        if !(q_min > 0.0 && q_max > q_min) {
            return Err(Error::InvalidGrid(format!("bad q range [{q_min}, {q_max}]")));
        }

        let nr = spec.radial;
        let h = (q_max / q_min).ln() / (nr - 1) as f64;
        let radii: Vec<f64> = (0..nr)
            .map(|i| if i == nr - 1 { q_max } else { q_min * (i as f64 * h).exp() })
            .collect();
        let mut radial_w: Vec<f64> = radii.iter().map(|q| h * q).collect();
        radial_w[0] *= 0.5;
        radial_w[nr - 1] *= 0.5;
        radial_w[0] += q_min;

        let (dirs, ang_w, antipode) = angular_rule(spec.n_theta, spec.n_phi);
        let na = dirs.len();
        let mut rho_sq = Vec::with_capacity(nr * na);
        let mut nu_w = Vec::with_capacity(nr * na);
        let mut shell_live = Vec::with_capacity(nr);
        let mass_sq = cs.mass() * cs.mass();
        for (q, wq) in radii.iter().zip(&radial_w) {
            let mut live = false;
            for (d, wa) in dirs.iter().zip(&ang_w) {
                let r2 = cs.fourier_real(&vec3::scale(d, *q)).powi(2);
                live |= r2 >= NEGLIGIBLE_SHELL * mass_sq;
                rho_sq.push(r2);
                nu_w.push(wq * wa * r2 / (2.0 * TWO_PI_CUBED));
            }
            shell_live.push(live);
        }

        let tail = tail_estimate(cs, q_max, spec.n_theta, spec.n_phi);
        let mut hasher = DefaultHasher::new();
        (nr, spec.n_theta, spec.n_phi, q_min.to_bits(), q_max.to_bits()).hash(&mut hasher);
        serde_json::to_string(cs).unwrap_or_default().hash(&mut hasher);

        Ok(Self {
            spec: spec.clone(),
            q_min,
            q_max,
            radii,
            radial_w,
            dirs,
            ang_w,
            antipode,
            rho_sq,
            nu_w,
            shell_live,
            mass_sq,
            tail,
            fingerprint: hasher.finish(),
        })
    }

    pub fn spec(&self) -> &KGridSpec {
        &self.spec
    }

    pub fn q_range(&self) -> (f64, f64) {
        (self.q_min, self.q_max)
    }

    pub fn len(&self) -> usize {
        self.nu_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu_w.is_empty()
    }

    pub fn n_radial(&self) -> usize {
        self.radii.len()
    }

    pub fn n_angular(&self) -> usize {
        self.dirs.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn radial_weights(&self) -> &[f64] {
        &self.radial_w
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.dirs
    }

    pub fn angular_weights(&self) -> &[f64] {
        &self.ang_w
    }

    pub fn nu_weights(&self) -> &[f64] {
        &self.nu_w
    }

    /// `|rho_hat(k)|^2` at every node.
    pub fn rho_sq(&self) -> &[f64] {
        &self.rho_sq
    }

    pub fn node(&self, shell: usize, dir: usize) -> usize {
        shell * self.dirs.len() + dir
    }

    pub fn shell_of(&self, node: usize) -> usize {
        node / self.dirs.len()
    }

    pub fn direction(&self, node: usize) -> Vec3 {
        self.dirs[node % self.dirs.len()]
    }

    pub fn wavevector(&self, node: usize) -> Vec3 {
        vec3::scale(&self.direction(node), self.radii[self.shell_of(node)])
    }

    /// Index of the direction `-w_a`, when the angular rule is symmetric.
    pub fn antipode(&self, dir: usize) -> Option<usize> {
        self.antipode.as_ref().map(|a| a[dir])
    }

    pub fn has_antipodes(&self) -> bool {
        self.antipode.is_some()
    }

    /// Whether shell `i` has any node with `|rho_hat|^2 >= NEGLIGIBLE_SHELL m^2`.
    pub fn shell_is_live(&self, shell: usize) -> bool {
        self.shell_live[shell]
    }

    pub fn mass_sq(&self) -> f64 {
        self.mass_sq
    }

    /// Estimated `nu` mass beyond `q_max`.
    pub fn tail_estimate(&self) -> f64 {
        self.tail
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// The `i`-th shell's factor `w_i / (2 (2 pi)^3)` turning an angular sum
    /// `sum_a v_a (...)` into its share of `int dnu (...)`.
    pub fn shell_factor(&self, shell: usize) -> f64 {
        self.radial_w[shell] / (2.0 * TWO_PI_CUBED)
    }
}

fn angular_rule(n_theta: usize, n_phi: usize) -> (Vec<Vec3>, Vec<f64>, Option<Vec<usize>>) {
    let (ct, wt) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let symmetric_phi = n_phi.is_multiple_of(2);
    let half = n_phi / 2;
    let mut ring: Vec<(f64, f64)> = (0..n_phi)
        .map(|b| {
            let phi = (b as f64 + 0.5) * dphi;
            (phi.cos(), phi.sin())
        })
        .collect();
    if symmetric_phi {
        for b in 0..half {
            ring[b + half] = (-ring[b].0, -ring[b].1);
        }
    }
    let mut dirs = Vec::with_capacity(n_theta * n_phi);
    let mut w = Vec::with_capacity(n_theta * n_phi);
    for t in 0..n_theta {
        // Mirror rows are built by negation so that antipodes are exact.
        let (c, sign) = if t >= n_theta.div_ceil(2) && symmetric_phi {
            (ct[n_theta - 1 - t], -1.0)
        } else {
            (ct[t], 1.0)
        };
        let s = (1.0 - c * c).max(0.0).sqrt();
        for b in 0..n_phi {
            let src = if sign < 0.0 { (b + half) % n_phi } else { b };
            let (cp, sp) = ring[src];
            dirs.push([sign * s * cp, sign * s * sp, sign * c]);
            w.push(wt[t] * dphi);
        }
    }
    let antipode = symmetric_phi.then(|| {
        (0..n_theta * n_phi)
            .map(|a| {
                let (t, b) = (a / n_phi, a % n_phi);
                (n_theta - 1 - t) * n_phi + (b + half) % n_phi
            })
            .collect()
    });
    (dirs, w, antipode)
}

fn tail_estimate(cs: &CrossSection, q_max: f64, n_theta: usize, n_phi: usize) -> f64 {
    let edges = log_edges(q_max, 100.0 * q_max, 2);
    let (q, w) = composite_rule(&edges, 8);
    let body: f64 = q
        .iter()
        .zip(&w)
        .map(|(q, w)| w * cs.spherical_avg_with(*q, n_theta, n_phi))
        .sum();
    // Beyond 100 q_max the integrand is bounded by its last value.
    let last = cs.spherical_avg_with(100.0 * q_max, n_theta, n_phi) * 100.0 * q_max;
    (body + last) / (4.0 * PI * PI)
}
