//! Discrete line integrals `int e^{ik.X_t} dX_t` along a path and their
//! evaluation over a whole wavenumber grid.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastmath::{sincos, sincos_reduced, REDUCTION_LIMIT};
use crate::kgrid::KGrid;
use crate::paths::Path;
use crate::vec3::{self, CVec3, Vec3, CZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Left-point: `sum_j e^{ik.X_j} dX_j`.
    Ito,
    /// Midpoint of state: `sum_j e^{ik.(X_j + X_{j+1})/2} dX_j`.
    Stratonovich,
}

fn weighted_phase_sum(k: &Vec3, eval_points: impl Iterator<Item = Vec3>, path: &Path) -> CVec3 {
    let mut acc = CZERO;
    for (x, d) in eval_points.zip(path.increments()) {
        let (s, c) = sincos(vec3::dot(k, &x));
        for a in 0..3 {
            acc[a] += Complex64::new(c * d[a], s * d[a]);
        }
    }
    acc
}

pub fn ito_integral(path: &Path, k: &Vec3) -> CVec3 {
    weighted_phase_sum(k, path.points().iter().copied(), path)
}

pub fn strat_integral(path: &Path, k: &Vec3) -> CVec3 {
    let mids = path
        .points()
        .windows(2)
        .map(|w| vec3::scale(&vec3::add(&w[0], &w[1]), 0.5));
    weighted_phase_sum(k, mids, path)
}

/// Backward Ito sum anchored at node `t`:
/// `sum_{i < t} e^{ik.(X_t - X_{i+1})} dX_i`.
pub fn backward_ito_integral(path: &Path, k: &Vec3, t: usize) -> Result<CVec3> {
    let n = path.grid().steps();
    if t > n {
        return Err(Error::IndexOutOfRange { index: t, max: n });
    }
    let xt = path.points()[t];
    let mut acc = CZERO;
    for i in 0..t {
        let d = path.increment(i);
        let (s, c) = sincos(vec3::dot(k, &vec3::sub(&xt, &path.points()[i + 1])));
        for a in 0..3 {
            acc[a] += Complex64::new(c * d[a], s * d[a]);
        }
    }
    Ok(acc)
}

/// `p_k v = v - k (k.v) / |k|^2`.
pub fn project_transverse(k: &Vec3, v: &CVec3) -> Result<CVec3> {
    let kk = vec3::norm_sq(k);
    if kk == 0.0 {
        return Err(Error::ZeroWavenumber);
    }
    Ok(project_unit(&vec3::scale(k, 1.0 / kk.sqrt()), v))
}

/// Projection off a unit vector `u`.
#[inline]
pub fn project_unit(u: &Vec3, v: &CVec3) -> CVec3 {
    let par = vec3::rdot(u, v);
    [v[0] - par * u[0], v[1] - par * u[1], v[2] - par * u[2]]
}

/// Struct-of-arrays view of a path used by the grid kernels: the evaluation
/// points of one convention and the increments.
pub(crate) struct PathSoa {
    pub x: [Vec<f64>; 3],
    pub dx: [Vec<f64>; 3],
    pub radius: f64,
}

impl PathSoa {
    pub fn new(path: &Path, convention: Convention) -> Self {
        let n = path.grid().steps();
        let mut x = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut dx = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut radius: f64 = 0.0;
        let p = path.points();
        for j in 0..n {
            let e = match convention {
                Convention::Ito => p[j],
                Convention::Stratonovich => vec3::scale(&vec3::add(&p[j], &p[j + 1]), 0.5),
            };
            let d = vec3::sub(&p[j + 1], &p[j]);
            for a in 0..3 {
                x[a][j] = e[a];
                dx[a][j] = d[a];
            }
            radius = radius.max(vec3::norm(&e));
        }
        Self { x, dx, radius }
    }

    /// Projections `s_j = w . x_j` onto a direction.
    pub fn project(&self, dir: &Vec3, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.x[0]
                .iter()
                .zip(&self.x[1])
                .zip(&self.x[2])
                .map(|((a, b), c)| dir[0] * a + dir[1] * b + dir[2] * c),
        );
    }
}

const LANES: usize = 8;

/// `sum_j e^{i q s_j} dx_j` with lane-parallel accumulators.
pub(crate) fn phase_sum(q: f64, s: &[f64], dx: &[Vec<f64>; 3], fast: bool) -> CVec3 {
    let n = s.len();
    let mut re = [[0.0f64; LANES]; 3];
    let mut im = [[0.0f64; LANES]; 3];
    let chunks = n / LANES;
    let (d0, d1, d2) = (&dx[0][..n], &dx[1][..n], &dx[2][..n]);
    if fast {
        for c in 0..chunks {
            let base = c * LANES;
            let sc = &s[base..base + LANES];
            let a0 = &d0[base..base + LANES];
            let a1 = &d1[base..base + LANES];
            let a2 = &d2[base..base + LANES];
            for l in 0..LANES {
                let (sn, cs) = sincos_reduced(q * sc[l]);
                re[0][l] += cs * a0[l];
                im[0][l] += sn * a0[l];
                re[1][l] += cs * a1[l];
                im[1][l] += sn * a1[l];
                re[2][l] += cs * a2[l];
                im[2][l] += sn * a2[l];
            }
        }
    } else {
        for c in 0..chunks {
            for l in 0..LANES {
                let j = c * LANES + l;
                let (sn, cs) = (q * s[j]).sin_cos();
                re[0][l] += cs * d0[j];
                im[0][l] += sn * d0[j];
                re[1][l] += cs * d1[j];
                im[1][l] += sn * d1[j];
                re[2][l] += cs * d2[j];
                im[2][l] += sn * d2[j];
            }
        }
    }
    let mut out = CZERO;
    for a in 0..3 {
        let mut r: f64 = re[a].iter().sum();
        let mut i: f64 = im[a].iter().sum();
        for j in chunks * LANES..n {
            let (sn, cs) = sincos(q * s[j]);
            r += cs * dx[a][j];
            i += sn * dx[a][j];
        }
        out[a] = Complex64::new(r, i);
    }
    out
}

/// Per-node `Y_{k,T}` and `p_k Y_{k,T}` over a grid for one path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilamentTransform {
    pub grid_fingerprint: u64,
    pub convention: Convention,
    pub y: Vec<CVec3>,
    pub py: Vec<CVec3>,
    pub displacement: Vec3,
}

impl FilamentTransform {
    pub fn check_grid(&self, kgrid: &KGrid) -> Result<()> {
        if self.grid_fingerprint != kgrid.fingerprint() || self.y.len() != kgrid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Component along `k_hat`: `k_hat . Y`.
    pub fn parallel(&self, kgrid: &KGrid, node: usize) -> Complex64 {
        vec3::rdot(&kgrid.direction(node), &self.y[node])
    }
}

/// Shells with `q max_j |s_j| <= TAYLOR_REACH` are evaluated from power moments
/// `M_m = sum_j s_j^m dx_j` as `Y(q) = sum_m (iq)^m / m! M_m`, which costs a few
/// multiply-adds per step for all such shells together instead of one sine and
/// cosine per step and shell.
const TAYLOR_REACH: f64 = 2.0;
/// `2^m / m! < 1e-18` from here on.
const TAYLOR_TERMS: usize = 27;

type Moments = [[f64; 3]; TAYLOR_TERMS];

fn power_moments(s: &[f64], dx: &[Vec<f64>; 3]) -> Moments {
    let n = s.len();
    let chunks = n / LANES;
    let mut acc = [[[0.0f64; LANES]; 3]; TAYLOR_TERMS];
    for c in 0..chunks {
        let base = c * LANES;
        let mut p = [1.0f64; LANES];
        let sc = &s[base..base + LANES];
        let a0 = &dx[0][base..base + LANES];
        let a1 = &dx[1][base..base + LANES];
        let a2 = &dx[2][base..base + LANES];
        for m in acc.iter_mut() {
            for l in 0..LANES {
                m[0][l] += p[l] * a0[l];
                m[1][l] += p[l] * a1[l];
                m[2][l] += p[l] * a2[l];
                p[l] *= sc[l];
            }
        }
    }
    let mut out = [[0.0; 3]; TAYLOR_TERMS];
    for (o, m) in out.iter_mut().zip(&acc) {
        for a in 0..3 {
            o[a] = m[a].iter().sum();
        }
    }
    for j in chunks * LANES..n {
        let mut p = 1.0;
        for o in out.iter_mut() {
            for a in 0..3 {
                o[a] += p * dx[a][j];
            }
            p *= s[j];
        }
    }
    out
}

fn taylor_sum(q: f64, moments: &Moments) -> CVec3 {
    let mut re = [0.0; 3];
    let mut im = [0.0; 3];
    let mut c = 1.0;
    for (m, mom) in moments.iter().enumerate() {
        // (iq)^m / m! = c * i^m
        let (target, sign) = match m % 4 {
            0 => (&mut re, 1.0),
            1 => (&mut im, 1.0),
            2 => (&mut re, -1.0),
            _ => (&mut im, -1.0),
        };
        for a in 0..3 {
            target[a] += sign * c * mom[a];
        }
        c *= q / (m + 1) as f64;
    }
    [0, 1, 2].map(|a| Complex64::new(re[a], im[a]))
}

/// Evaluates the direction `a` (and its antipode by conjugation) on every shell.
pub(crate) fn for_each_direction<F>(
    soa: &PathSoa,
    kgrid: &KGrid,
    shells: &[usize],
    mut visit: F,
) where
    F: FnMut(usize, usize, &CVec3),
{
    let fast = soa.radius * kgrid.q_range().1 < REDUCTION_LIMIT;
    let mut s = Vec::with_capacity(soa.dx[0].len());
    let na = kgrid.n_angular();
    for a in 0..na {
        let mirror = kgrid.antipode(a);
        if let Some(b) = mirror {
            if b < a {
                continue;
            }
        }
        soa.project(&kgrid.directions()[a], &mut s);
        let reach = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let moments = shells
            .iter()
            .any(|&i| kgrid.radii()[i] * reach <= TAYLOR_REACH)
            .then(|| power_moments(&s, &soa.dx));
        for &i in shells {
            let q = kgrid.radii()[i];
            let y = match &moments {
                Some(m) if q * reach <= TAYLOR_REACH => taylor_sum(q, m),
                _ => phase_sum(q, &s, &soa.dx, fast),
            };
            visit(i, a, &y);
            if let Some(b) = mirror {
                if b != a {
                    visit(i, b, &vec3::cconj(&y));
                }
            }
        }
    }
}

pub fn transform(path: &Path, kgrid: &KGrid, convention: Convention) -> FilamentTransform {
    let soa = PathSoa::new(path, convention);
    let mut y = vec![CZERO; kgrid.len()];
    let shells: Vec<usize> = (0..kgrid.n_radial()).collect();
    for_each_direction(&soa, kgrid, &shells, |i, a, v| y[kgrid.node(i, a)] = *v);
    let py = y
        .iter()
        .enumerate()
        .map(|(node, v)| project_unit(&kgrid.direction(node), v))
        .collect();
    FilamentTransform {
        grid_fingerprint: kgrid.fingerprint(),
        convention,
        y,
        py,
        displacement: path.displacement(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::CrossSection;
    use crate::kgrid::KGridSpec;
    use crate::paths::{sample_bm, SeedSpec, TimeGrid};
    use proptest::prelude::*;

    fn bm(n: usize, idx: u64) -> Path {
        sample_bm(TimeGrid::new(1.0, n).unwrap(), [0.1, -0.2, 0.3], SeedSpec::new(99, idx))
    }

    fn cclose(a: &CVec3, b: &CVec3, tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).norm() <= tol)
    }

    #[test]
    fn zero_wavenumber_gives_displacement() {
        let p = bm(64, 0);
        let d = p.displacement();
        for v in [ito_integral(&p, &[0.0; 3]), strat_integral(&p, &[0.0; 3])] {
            let s: f64 = p.increments().map(|x| x[0]).sum();
            assert_eq!(v[0].re, s);
            assert!((v[1].re - d[1]).abs() < 1e-14);
            assert_eq!(v[2].im, 0.0);
        }
    }

    #[test]
    fn single_step_ito() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let p = Path::new(g, vec![[0.2, 0.0, 0.0], [1.0, 2.0, 3.0]]).unwrap();
        let k = [1.5, -0.5, 0.25];
        let ph = vec3::dot(&k, &p.origin());
        let d = p.displacement();
        let v = ito_integral(&p, &k);
        for a in 0..3 {
            assert!((v[a] - Complex64::from_polar(1.0, ph) * d[a]).norm() < 1e-15);
        }
    }

    #[test]
    fn backward_sum_edge_cases() {
        let p = bm(32, 1);
        let k = [0.7, 0.1, -2.0];
        assert_eq!(backward_ito_integral(&p, &k, 0).unwrap(), CZERO);
        let v = backward_ito_integral(&p, &[0.0; 3], 20).unwrap();
        let d = vec3::sub(&p.points()[20], &p.origin());
        for a in 0..3 {
            assert!((v[a].re - d[a]).abs() < 1e-14);
        }
        assert!(matches!(
            backward_ito_integral(&p, &k, 33),
            Err(Error::IndexOutOfRange { index: 33, max: 32 })
        ));
    }

    #[test]
    fn projector_properties() {
        let k = [1.0, 2.0, -0.5];
        let kv = [
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(-0.5, 0.0),
        ];
        assert!(cclose(&project_transverse(&k, &kv).unwrap(), &CZERO, 1e-15));
        let perp = [
            Complex64::new(2.0, 1.0),
            Complex64::new(-1.0, -0.5),
            Complex64::new(0.0, 0.0),
        ];
        assert!(cclose(&project_transverse(&k, &perp).unwrap(), &perp, 1e-15));
        assert!(matches!(project_transverse(&[0.0; 3], &perp), Err(Error::ZeroWavenumber)));
    }

    #[test]
    fn grid_transform_matches_direct_sums() {
        let cs = CrossSection::gaussian(0.5, 1.0);
        let spec = KGridSpec::default().with_radial(8).with_angular(4, 6);
        let kg = KGrid::new(&spec, &cs).unwrap();
        let p = bm(100, 3);
        for conv in [Convention::Ito, Convention::Stratonovich] {
            let t = transform(&p, &kg, conv);
            for node in 0..kg.len() {
                let k = kg.wavevector(node);
                let direct = match conv {
                    Convention::Ito => ito_integral(&p, &k),
                    Convention::Stratonovich => strat_integral(&p, &k),
                };
                assert!(cclose(&t.y[node], &direct, 1e-12), "node {node}");
                let pd = project_transverse(&k, &direct).unwrap();
                assert!(cclose(&t.py[node], &pd, 1e-12));
            }
        }
    }

    #[test]
    fn strat_chain_rule_on_smooth_curve() {
        // For a smooth curve ik.Y_strat -> e^{ik.X_T} - e^{ik.X_0} at second order.
        let k = [1.3, -0.4, 0.9];
        let gamma = |t: f64| [t.cos(), t.sin(), 0.3 * t];
        let mut last = f64::INFINITY;
        for n in [64, 128, 256] {
            let p = Path::from_fn(TimeGrid::new(3.0, n).unwrap(), gamma).unwrap();
            let y = strat_integral(&p, &k);
            let lhs = Complex64::new(0.0, 1.0) * vec3::rdot(&k, &y);
            let rhs = Complex64::from_polar(1.0, vec3::dot(&k, &p.endpoint()))
                - Complex64::from_polar(1.0, vec3::dot(&k, &p.origin()));
            let err = (lhs - rhs).norm();
            assert!(err < last / 3.5, "n={n}: {err} vs {last}");
            last = err;
        }
    }

    #[test]
    fn taylor_branch_matches_direct_phase_sum() {
        let p = bm(1000, 7);
        let soa = PathSoa::new(&p, Convention::Stratonovich);
        let mut s = Vec::new();
        soa.project(&[0.6, 0.0, 0.8], &mut s);
        let reach = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mom = power_moments(&s, &soa.dx);
        for frac in [1e-4, 0.1, 0.5, 1.0] {
            let q = frac * TAYLOR_REACH / reach;
            let a = taylor_sum(q, &mom);
            let b = phase_sum(q, &s, &soa.dx, false);
            assert!(cclose(&a, &b, 1e-13), "q={q}: {a:?} vs {b:?}");
        }
    }

    proptest! {
        #[test]
        fn shift_multiplies_ito_transform_by_phase(
            seed in 0u64..1000,
            shift in prop::array::uniform3(-5.0f64..5.0),
            k in prop::array::uniform3(-4.0f64..4.0),
        ) {
            let p = sample_bm(TimeGrid::new(1.0, 32).unwrap(), [0.0; 3], SeedSpec::new(seed, 0));
            let q = p.translate(&shift);
            let y = ito_integral(&p, &k);
            let yq = ito_integral(&q, &k);
            let ph = Complex64::from_polar(1.0, vec3::dot(&k, &shift));
            for a in 0..3 {
                prop_assert!((yq[a] - ph * y[a]).norm() < 1e-12);
            }
        }

        #[test]
        fn projection_is_idempotent_and_contracting(
            k in prop::array::uniform3(-4.0f64..4.0),
            re in prop::array::uniform3(-4.0f64..4.0),
            im in prop::array::uniform3(-4.0f64..4.0),
        ) {
            prop_assume!(vec3::norm(&k) > 1e-3);
            let v = [0, 1, 2].map(|i| Complex64::new(re[i], im[i]));
            let p1 = project_transverse(&k, &v).unwrap();
            let p2 = project_transverse(&k, &p1).unwrap();
            prop_assert!(cclose(&p1, &p2, 1e-12));
            prop_assert!(vec3::cnorm_sq(&p1) <= vec3::cnorm_sq(&v) * (1.0 + 1e-12));
        }
    }
}
