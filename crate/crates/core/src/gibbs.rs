//! Ensembles of sampled filaments and the Gibbs reweighting of the Wiener reference.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cross_section::{nu_mass, CrossSection};
use crate::energy::{path_energies, EnergyReport};
use crate::error::{Error, Result};
use crate::kgrid::KGrid;
use crate::paths::{Process, SeedSpec, TimeGrid};
use crate::vec3::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub sample_index: u64,
    pub h: f64,
    pub h_tilde: f64,
    pub diff_spectral: f64,
    pub diff_closed_form: f64,
    pub displacement: Vec3,
    /// `D` of the bound `H~ - H <= D |X_T - X_0|`.
    pub d_bound: f64,
    /// `S_i = sum_a v_a |rho_hat|^2 |p_k Y|^2` per radial shell.
    pub shells: Vec<f64>,
    /// Same with `|Y|^2`; reassembles `H~`.
    pub shells_tilde: Vec<f64>,
}

impl EnsembleRecord {
    pub fn from_report(sample_index: u64, displacement: Vec3, r: EnergyReport) -> Self {
        Self {
            sample_index,
            h: r.h,
            h_tilde: r.h_tilde,
            diff_spectral: r.diff_spectral,
            diff_closed_form: r.diff_closed_form,
            displacement,
            d_bound: r.d_bound,
            shells: r.shells,
            shells_tilde: r.shells_tilde,
        }
    }
}

/// What to sample: `samples` paths of `process` with indices `first_index..`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub process: Process,
    pub grid: TimeGrid,
    pub x0: Vec3,
    pub cross_section: CrossSection,
    pub master_seed: u64,
    pub samples: usize,
    pub first_index: u64,
}

/// Runs `f` over sample indices on `workers` threads and returns the results in index
/// order. Failures carry the index of the sample that produced them.
pub fn map_samples<T, F>(first: u64, count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let run = || {
        (0..count as u64)
            .into_par_iter()
            .map(|i| f(first + i).map_err(|e| e.at_sample(first + i)))
            .collect::<Result<Vec<T>>>()
    };
    if workers == 0 {
        return run();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))?;
    pool.install(run)
}

pub fn sample_record(spec: &EnsembleSpec, kgrid: &KGrid, index: u64) -> Result<EnsembleRecord> {
    let path = spec
        .process
        .sample(spec.grid, spec.x0, SeedSpec::new(spec.master_seed, index))?;
    let r = path_energies(&path, kgrid, &spec.cross_section)?;
    Ok(EnsembleRecord::from_report(index, path.displacement(), r))
}

/// `workers = 0` uses the global rayon pool.
pub fn run_ensemble(spec: &EnsembleSpec, kgrid: &KGrid, workers: usize) -> Result<Vec<EnsembleRecord>> {
    spec.cross_section.validate()?;
    if spec.samples == 0 {
        return Err(Error::Empty("ensemble"));
    }
    map_samples(spec.first_index, spec.samples, workers, |i| sample_record(spec, kgrid, i))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    H,
    HTilde,
}

impl EnergyKind {
    pub fn of(self, r: &EnsembleRecord) -> f64 {
        match self {
            EnergyKind::H => r.h,
            EnergyKind::HTilde => r.h_tilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsEstimate {
    pub beta: f64,
    pub z: f64,
    /// `ln Z`, finite even when `Z` itself overflows.
    pub log_z: f64,
    pub standard_error: f64,
    pub effective_sample_size: f64,
    /// The largest `ceil(N/100)` weights carry more than half of the total.
    pub flag_heavy_tail: bool,
}

/// Unnormalized weights `exp(-beta E - M)` with `M = max(-beta E)`.
fn scaled_weights(records: &[EnsembleRecord], beta: f64, kind: EnergyKind) -> (Vec<f64>, f64) {
    let logs: Vec<f64> = records
        .iter()
        .map(|r| {
            let e = kind.of(r);
            // 0 * inf is NaN; an infinite energy at beta = 0 still has weight 1.
            if beta == 0.0 {
                0.0
            } else {
                -beta * e
            }
        })
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (logs.iter().map(|l| (l - m).exp()).collect(), m)
}

/// Sum in ascending order, so the result does not depend on the order of the input.
fn ordered_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn ess(w: &[f64]) -> f64 {
    let s = ordered_sum(w.iter().copied());
    let s2 = ordered_sum(w.iter().map(|x| x * x));
    s * s / s2
}

fn heavy_tail(w: &[f64]) -> bool {
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = sorted.len().div_ceil(100);
    let total = ordered_sum(sorted.iter().copied());
    ordered_sum(sorted[..top].iter().copied()) > 0.5 * total
}

pub fn partition_function(records: &[EnsembleRecord], beta: f64) -> Result<GibbsEstimate> {
    partition_function_of(records, beta, EnergyKind::H)
}

/// `Z_beta = E exp(-beta E)` by the sample mean, with a jackknife standard error.
pub fn partition_function_of(
    records: &[EnsembleRecord],
    beta: f64,
    kind: EnergyKind,
) -> Result<GibbsEstimate> {
    if records.is_empty() {
        return Err(Error::Empty("record set"));
    }
    if !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be finite, got {beta}")));
    }
    let (w, m) = scaled_weights(records, beta, kind);
    let n = w.len() as f64;
    let sum = ordered_sum(w.iter().copied());
    let mean = sum / n;
    let standard_error = if w.len() > 1 {
        let loo: Vec<f64> = w.iter().map(|wi| (sum - wi) / (n - 1.0)).collect();
        let loo_mean = ordered_sum(loo.iter().copied()) / n;
        ((n - 1.0) / n * ordered_sum(loo.iter().map(|z| (z - loo_mean).powi(2)))).sqrt()
    } else {
        0.0
    };
    let scale = m.exp();
    Ok(GibbsEstimate {
        beta,
        z: mean * scale,
        log_z: mean.ln() + m,
        standard_error: standard_error * scale,
        effective_sample_size: ess(&w),
        flag_heavy_tail: heavy_tail(&w),
    })
}

pub const DEFAULT_ESS_THRESHOLD: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub standard_error: f64,
    pub effective_sample_size: f64,
    /// ESS fell below the requested threshold.
    pub unreliable: bool,
}

/// Self-normalized estimate of `E_{mu_beta}[f]` with a delta-method standard error.
pub fn gibbs_expectation(
    records: &[EnsembleRecord],
    beta: f64,
    observable: impl Fn(&EnsembleRecord) -> f64,
    ess_threshold: f64,
) -> Result<Expectation> {
    if records.is_empty() {
        return Err(Error::Empty("record set"));
    }
    let (w, _) = scaled_weights(records, beta, EnergyKind::H);
    let f: Vec<f64> = records.iter().map(observable).collect();
    let sw = ordered_sum(w.iter().copied());
    let value = ordered_sum(w.iter().zip(&f).map(|(w, f)| w * f)) / sw;
    let var = ordered_sum(w.iter().zip(&f).map(|(w, f)| (w * (f - value)).powi(2)));
    let e = ess(&w);
    Ok(Expectation {
        value,
        standard_error: var.sqrt() / sw,
        effective_sample_size: e,
        unreliable: e < ess_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub beta: f64,
    pub q: Vec<f64>,
    /// Gibbs mean of the transverse shell sums.
    pub e: Vec<f64>,
    /// Gibbs mean of the unprojected shell sums.
    pub e_tilde: Vec<f64>,
    pub effective_sample_size: f64,
    pub unreliable: bool,
}

impl Spectrum {
    /// `sum_i w_i E_i / (2 (2 pi)^3)`, the Gibbs mean of `H` rebuilt from the shells.
    pub fn reassemble(&self, kgrid: &KGrid) -> f64 {
        (0..self.q.len()).map(|i| kgrid.shell_factor(i) * self.e[i]).sum()
    }

    /// Same for `H~`.
    pub fn reassemble_tilde(&self, kgrid: &KGrid) -> f64 {
        (0..self.q.len()).map(|i| kgrid.shell_factor(i) * self.e_tilde[i]).sum()
    }

    /// Least-squares slope of `ln E` against `q^2` over shells with `lo <= q <= hi`
    /// and positive `E`.
    pub fn log_slope_in_q2(&self, lo: f64, hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .q
            .iter()
            .zip(&self.e)
            .filter(|(q, e)| **q >= lo && **q <= hi && **e > 0.0)
            .map(|(q, e)| (q * q, e.ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

pub fn energy_spectrum(
    records: &[EnsembleRecord],
    beta: f64,
    kgrid: &KGrid,
    ess_threshold: f64,
) -> Result<Spectrum> {
    if records.is_empty() {
        return Err(Error::Empty("record set"));
    }
    let shells = kgrid.n_radial();
    if records.iter().any(|r| r.shells.len() != shells || r.shells_tilde.len() != shells) {
        return Err(Error::GridMismatch);
    }
    let (w, _) = scaled_weights(records, beta, EnergyKind::H);
    let sw = ordered_sum(w.iter().copied());
    let shell_mean = |i: usize, tilde: bool| {
        let terms = records.iter().zip(&w).map(|(r, wr)| {
            wr * if tilde { r.shells_tilde[i] } else { r.shells[i] }
        });
        ordered_sum(terms) / sw
    };
    let e = (0..shells).map(|i| shell_mean(i, false)).collect();
    let e_tilde = (0..shells).map(|i| shell_mean(i, true)).collect();
    let ess = ess(&w);
    Ok(Spectrum {
        beta,
        q: kgrid.radii().to_vec(),
        e,
        e_tilde,
        effective_sample_size: ess,
        unreliable: ess < ess_threshold,
    })
}

/// `(1 / (2 A T), pi^2 / (2 A T))` with `A` from the grid. The partition function is
/// finite for `beta > -gamma_lower`; divergence is only known below `-gamma_upper`.
pub fn gamma_thresholds(cs: &CrossSection, kgrid: &KGrid, horizon: f64) -> Result<(f64, f64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let a = nu_mass(cs, kgrid)?;
    let lower = 1.0 / (2.0 * a * horizon);
    Ok((lower, PI * PI * lower))
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgrid::KGridSpec;
    use proptest::prelude::*;

    fn small_spec(samples: usize) -> (EnsembleSpec, KGrid) {
        let cs = CrossSection::gaussian(0.5, 1.0);
        let kg = KGrid::new(&KGridSpec::default().with_radial(16).with_angular(4, 8), &cs).unwrap();
        let spec = EnsembleSpec {
            process: Process::Bm,
            grid: TimeGrid::new(1.0, 64).unwrap(),
            x0: [0.0; 3],
            cross_section: cs,
            master_seed: 11,
            samples,
            first_index: 0,
        };
        (spec, kg)
    }

    fn fake(h: &[f64]) -> Vec<EnsembleRecord> {
        h.iter()
            .enumerate()
            .map(|(i, &h)| EnsembleRecord {
                sample_index: i as u64,
                h,
                h_tilde: h * 1.5,
                diff_spectral: 0.5 * h,
                diff_closed_form: 0.0,
                displacement: [0.0; 3],
                d_bound: 0.0,
                shells: vec![h],
                shells_tilde: vec![1.5 * h],
            })
            .collect()
    }

    #[test]
    fn single_record_ensemble() {
        let (spec, kg) = small_spec(1);
        let r = run_ensemble(&spec, &kg, 1).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].h >= 0.0 && r[0].h_tilde >= r[0].h);
        assert!(r[0].shells.iter().all(|s| *s >= 0.0));
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let (spec, kg) = small_spec(12);
        let a = run_ensemble(&spec, &kg, 1).unwrap();
        let b = run_ensemble(&spec, &kg, 4).unwrap();
        assert_eq!(a, b);
        let mut shifted = spec.clone();
        shifted.first_index = 5;
        shifted.samples = 3;
        assert_eq!(run_ensemble(&shifted, &kg, 2).unwrap(), a[5..8].to_vec());
    }

    #[test]
    fn sample_errors_carry_the_index() {
        let (mut spec, kg) = small_spec(3);
        spec.process = Process::Sde {
            drift: crate::paths::DriftSpec::Constant { c: [f64::NAN, 0.0, 0.0] },
        };
        match run_ensemble(&spec, &kg, 1) {
            Err(Error::Sample { index, source }) => {
                assert_eq!(index, 0);
                assert!(source.is_numerical());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn beta_zero_is_exact() {
        let recs = fake(&[0.1, 0.5, 3.0, 7.0]);
        let z = partition_function(&recs, 0.0).unwrap();
        assert_eq!(z.z, 1.0);
        assert_eq!(z.effective_sample_size, 4.0);
        assert_eq!(z.standard_error, 0.0);
        let one = gibbs_expectation(&recs, 2.0, |_| 1.0, 1.0).unwrap();
        assert_eq!(one.value, 1.0);
        let plain = gibbs_expectation(&recs, 0.0, |r| r.h, 1.0).unwrap();
        assert!((plain.value - 10.6 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn jackknife_matches_plain_standard_error() {
        let recs = fake(&[0.1, 0.2, 0.4, 0.8, 1.6]);
        let z = partition_function(&recs, 1.0).unwrap();
        let w: Vec<f64> = recs.iter().map(|r| (-r.h).exp()).collect();
        let (m, se) = mean_se(&w);
        assert!((z.z - m).abs() < 1e-15);
        assert!((z.standard_error - se).abs() < 1e-14);
    }

    #[test]
    fn log_space_survives_huge_weights() {
        let recs = fake(&[1.0, 2.0, 1e4]);
        let z = partition_function(&recs, -1.0).unwrap();
        assert!(z.z.is_infinite());
        assert!((z.log_z - (1e4 - 3f64.ln())).abs() < 1e-9);
        assert!(z.flag_heavy_tail);
        assert!((z.effective_sample_size - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_tail_flag_uses_top_percent() {
        let mut h = vec![1.0; 200];
        h[0] = 0.0;
        h[1] = 0.0;
        // Two of 200 records (the top 1%) at weight e^{beta} each.
        let recs = fake(&h);
        assert!(!partition_function(&recs, 1.0).unwrap().flag_heavy_tail);
        assert!(partition_function(&recs, 10.0).unwrap().flag_heavy_tail);
    }

    #[test]
    fn spectrum_reassembles_energies() {
        let (spec, kg) = small_spec(20);
        let recs = run_ensemble(&spec, &kg, 1).unwrap();
        for beta in [0.0, 3.0] {
            let s = energy_spectrum(&recs, beta, &kg, 5.0).unwrap();
            let h = gibbs_expectation(&recs, beta, |r| r.h, 5.0).unwrap().value;
            let ht = gibbs_expectation(&recs, beta, |r| r.h_tilde, 5.0).unwrap().value;
            assert!((s.reassemble(&kg) - h).abs() < 1e-12 * h);
            assert!((s.reassemble_tilde(&kg) - ht).abs() < 1e-12 * ht);
            assert!(s.e.iter().all(|e| *e >= 0.0));
            assert!(s.q.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(energy_spectrum(&recs, 0.0, &KGrid::new(&KGridSpec::default().with_radial(8).with_angular(4, 8), &spec.cross_section).unwrap(), 5.0).is_err());
    }

    #[test]
    fn thresholds() {
        let cs = CrossSection::gaussian(0.5, 1.0);
        let kg = KGrid::new(&KGridSpec::default(), &cs).unwrap();
        let (lo, hi) = gamma_thresholds(&cs, &kg, 1.0).unwrap();
        let a = cs.nu_mass_exact().unwrap();
        assert!((lo - 1.0 / (2.0 * a)).abs() < 1e-3 * lo);
        assert_eq!(hi, PI * PI * lo);
        let (lo2, hi2) = gamma_thresholds(&cs, &kg, 2.0).unwrap();
        assert!((lo2 - lo / 2.0).abs() < 1e-15 * lo && (hi2 - hi / 2.0).abs() < 1e-14 * hi);
        assert!(gamma_thresholds(&CrossSection::Point { mass: 1.0 }, &kg, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn z_monotone_and_log_convex(h in prop::collection::vec(0.0f64..5.0, 2..40)) {
            let recs = fake(&h);
            let betas = [-0.5, 0.0, 1.0, 2.0, 5.0];
            let zs: Vec<GibbsEstimate> = betas.iter().map(|b| partition_function(&recs, *b).unwrap()).collect();
            for w in zs.windows(2) {
                prop_assert!(w[1].z <= w[0].z);
            }
            for i in 1..betas.len() - 1 {
                let left = (zs[i].log_z - zs[i - 1].log_z) / (betas[i] - betas[i - 1]);
                let right = (zs[i + 1].log_z - zs[i].log_z) / (betas[i + 1] - betas[i]);
                prop_assert!(right >= left - 1e-12);
            }
            for b in [0.0, 1.0, 2.0] {
                let z = partition_function_of(&recs, b, EnergyKind::H).unwrap().z;
                let zt = partition_function_of(&recs, b, EnergyKind::HTilde).unwrap().z;
                prop_assert!(zt <= z);
            }
            let e0 = gibbs_expectation(&recs, 0.0, |r| r.h, 1.0).unwrap().value;
            let e2 = gibbs_expectation(&recs, 2.0, |r| r.h, 1.0).unwrap().value;
            prop_assert!(e2 <= e0 + 1e-12);
        }
    }
}
