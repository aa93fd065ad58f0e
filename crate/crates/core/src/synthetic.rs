//! Synthetic residual tensors: shared Gaussian anomalies mixed by a low-rank
//! per-source amplitude matrix, clustered station masks, and station noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ReceiverGrid, ResidualTensor, SamplingMask, SourceSet};
use crate::numerics::Rng;

const STREAM_FIELD: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_SOURCES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSpec {
    pub n_anomalies: usize,
    /// Anomaly centres in km; drawn uniformly over the grid when empty.
    pub centers: Vec<(f64, f64)>,
    /// Anomaly length scales in km; drawn from `width_range` when empty.
    pub widths: Vec<f64>,
    pub width_range: (f64, f64),
    /// Rank of the source-by-anomaly amplitude matrix.
    pub amplitude_rank: usize,
    /// Typical amplitude in seconds.
    pub amplitude_scale: f64,
    /// Per-source strength, log-uniform on this range; it scales the whole
    /// amplitude row.
    pub strength_range: (f64, f64),
    /// Weight of the source-specific columns of `G₁` relative to the
    /// strength column.
    pub variation: f64,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            n_anomalies: 12,
            centers: Vec::new(),
            widths: Vec::new(),
            width_range: (10.0, 25.0),
            amplitude_rank: 5,
            amplitude_scale: 0.3,
            strength_range: (0.25, 1.0),
            variation: 0.3,
            seed: 0,
        }
    }
}

impl FieldSpec {
    pub fn validate(&self, n_s: usize) -> Result<()> {
        if self.n_anomalies == 0 {
            return Err(Error::config("n_anomalies", "must be >= 1"));
        }
        if !self.centers.is_empty() && self.centers.len() != self.n_anomalies {
            return Err(Error::config(
                "centers",
                format!("{} centres for {} anomalies", self.centers.len(), self.n_anomalies),
            ));
        }
        if !self.widths.is_empty() && self.widths.len() != self.n_anomalies {
            return Err(Error::config(
                "widths",
                format!("{} widths for {} anomalies", self.widths.len(), self.n_anomalies),
            ));
        }
        if self.widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("widths", "must be positive"));
        }
        let (lo, hi) = self.width_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config("width_range", format!("invalid range ({lo}, {hi})")));
        }
        if self.amplitude_rank == 0 || self.amplitude_rank > self.n_anomalies.min(n_s) {
            return Err(Error::config(
                "amplitude_rank",
                format!(
                    "must lie in 1..={}, got {}",
                    self.n_anomalies.min(n_s),
                    self.amplitude_rank
                ),
            ));
        }
        if !(self.amplitude_scale >= 0.0) || !self.amplitude_scale.is_finite() {
            return Err(Error::config("amplitude_scale", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// Per-entry uncertainty used for the misfit budget.
    pub nominal_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_lo: 0.03,
            sigma_hi: 0.15,
            nominal_sigma: 0.06,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_lo >= 0.0 && self.sigma_lo <= self.sigma_hi && self.sigma_hi.is_finite()) {
            return Err(Error::config(
                "sigma_lo",
                format!(
                    "need 0 <= sigma_lo <= sigma_hi, got ({}, {})",
                    self.sigma_lo, self.sigma_hi
                ),
            ));
        }
        if !(self.nominal_sigma >= 0.0) || !self.nominal_sigma.is_finite() {
            return Err(Error::config("nominal_sigma", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    /// Fraction of gridpoints hosting a station.
    pub ratio: f64,
    pub cluster_count: usize,
    /// Per-source probability of losing each station's observation.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            ratio: 0.15,
            cluster_count: 12,
            dropout: 0.35,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::config(
                "ratio",
                format!("must lie in (0, 1], got {}", self.ratio),
            ));
        }
        if self.cluster_count == 0 {
            return Err(Error::config("cluster_count", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(
                "dropout",
                format!("must lie in [0, 1), got {}", self.dropout),
            ));
        }
        Ok(())
    }
}

/// `value(p,q,s) = Σ_a C[s,a]·exp(−‖x_pq − c_a‖²/(2w_a²))` with
/// `C = scale·G₁G₂ᵀ`. Row `s` of `G₁` (n_s×r) is `e_s·(1, v·z₁, …, v·z_{r−1})`
/// with log-uniform strength `e_s`, `v = variation` and standard Gaussian `z`;
/// `G₂` (n_anomalies×r) is standard Gaussian and
/// `scale = amplitude_scale/√(1 + v²(r−1))`.
pub fn generate_field(grid: &ReceiverGrid, sources: &SourceSet, spec: &FieldSpec) -> Result<ResidualTensor> {
    let ns = sources.len();
    spec.validate(ns)?;
    let mut rng = Rng::with_stream(spec.seed, STREAM_FIELD);
    let na = spec.n_anomalies;
    let (x0, y0) = grid.coords(0, 0);
    let (x1, y1) = grid.coords(grid.nx - 1, grid.ny - 1);
    let centers: Vec<(f64, f64)> = if spec.centers.is_empty() {
        (0..na).map(|_| (rng.uniform(x0, x1), rng.uniform(y0, y1))).collect()
    } else {
        spec.centers.clone()
    };
    let widths: Vec<f64> = if spec.widths.is_empty() {
        (0..na)
            .map(|_| rng.uniform(spec.width_range.0, spec.width_range.1))
            .collect()
    } else {
        spec.widths.clone()
    };
    let r = spec.amplitude_rank;
    let (slo, shi) = spec.strength_range;
    let mut g1 = vec![0.0; ns * r];
    for s in 0..ns {
        let e = rng.uniform(slo.ln(), shi.ln()).exp();
        g1[s * r] = e;
        for j in 1..r {
            g1[s * r + j] = e * spec.variation * rng.gaussian(0.0, 1.0);
        }
    }
    let g2: Vec<f64> = (0..na * r).map(|_| rng.gaussian(0.0, 1.0)).collect();
    let scale = spec.amplitude_scale / (1.0 + spec.variation.powi(2) * (r - 1) as f64).sqrt();
    let amp: Vec<f64> = (0..ns * na)
        .map(|idx| {
            let (s, a) = (idx / na, idx % na);
            scale * (0..r).map(|j| g1[s * r + j] * g2[a * r + j]).sum::<f64>()
        })
        .collect();

    let mut bumps = vec![0.0; grid.len() * na];
    for q in 0..grid.ny {
        for p in 0..grid.nx {
            let (x, y) = grid.coords(p, q);
            for (a, (&(cx, cy), &w)) in centers.iter().zip(&widths).enumerate() {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                bumps[(p + grid.nx * q) * na + a] = (-d2 / (2.0 * w * w)).exp();
            }
        }
    }
    let mut tensor = ResidualTensor::zeros(grid.clone(), sources.clone());
    for s in 0..ns {
        for q in 0..grid.ny {
            for p in 0..grid.nx {
                let phi = &bumps[(p + grid.nx * q) * na..][..na];
                let v: f64 = phi.iter().zip(&amp[s * na..(s + 1) * na]).map(|(a, b)| a * b).sum();
                tensor.set(p, q, s, v);
            }
        }
    }
    Ok(tensor)
}

/// Source epicentres drawn uniformly over the grid footprint enlarged by
/// half its extent on every side.
pub fn generate_sources(grid: &ReceiverGrid, n_s: usize, seed: u64) -> Result<SourceSet> {
    if n_s == 0 {
        return Err(Error::Argument("need at least one source".into()));
    }
    let mut rng = Rng::with_stream(seed, STREAM_SOURCES);
    let (x0, y0) = grid.coords(0, 0);
    let (x1, y1) = grid.coords(grid.nx - 1, grid.ny - 1);
    let (hx, hy) = (0.5 * (x1 - x0), 0.5 * (y1 - y0));
    let coords = (0..n_s)
        .map(|_| (rng.uniform(x0 - hx, x1 + hx), rng.uniform(y0 - hy, y1 + hy)))
        .collect();
    SourceSet::new(coords)
}

/// Stations shared by all sources, clustered around random centres, with
/// independent per-source dropout.
pub fn subsample_mask(grid: &ReceiverGrid, n_s: usize, spec: &MaskSpec) -> Result<SamplingMask> {
    spec.validate()?;
    let n_stations = (spec.ratio * grid.len() as f64).round() as usize;
    if n_stations == 0 {
        return Err(Error::Argument(format!(
            "ratio {} selects no stations on a {}x{} grid",
            spec.ratio, grid.nx, grid.ny
        )));
    }
    let stations = station_set(grid, n_stations, spec.cluster_count, spec.seed);
    let mut rng = Rng::with_stream(spec.seed, STREAM_MASK + 100);
    let plane = grid.len();
    let mut flags = vec![false; plane * n_s];
    for s in 0..n_s {
        for (g, &on) in stations.iter().enumerate() {
            if on {
                let keep = spec.dropout == 0.0 || rng.unit() >= spec.dropout;
                flags[g + plane * s] = keep;
            }
        }
    }
    SamplingMask::new((grid.nx, grid.ny, n_s), flags)
}

/// The `count` gridpoints nearest to any of `clusters` random centres.
fn station_set(grid: &ReceiverGrid, count: usize, clusters: usize, seed: u64) -> Vec<bool> {
    let mut rng = Rng::with_stream(seed, STREAM_MASK);
    let centres: Vec<(f64, f64)> = (0..clusters)
        .map(|_| {
            (
                rng.uniform(0.0, (grid.nx - 1) as f64),
                rng.uniform(0.0, (grid.ny - 1) as f64),
            )
        })
        .collect();
    let mut dist: Vec<(f64, usize)> = (0..grid.len())
        .map(|g| {
            let (p, q) = ((g % grid.nx) as f64, (g / grid.nx) as f64);
            let d = centres
                .iter()
                .map(|(cx, cy)| (p - cx).powi(2) + (q - cy).powi(2))
                .fold(f64::INFINITY, f64::min);
            (d, g)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut on = vec![false; grid.len()];
    for &(_, g) in dist.iter().take(count.min(grid.len())) {
        on[g] = true;
    }
    on
}

/// Noisy observations of a tensor on a mask.
#[derive(Debug, Clone)]
pub struct NoisyObservations {
    /// Observed values, zero off the mask.
    pub tensor: ResidualTensor,
    /// Observed values in tensor order (`p + nx(q + ny·s)`).
    pub values: Vec<f64>,
    /// Per-station standard deviation, indexed `p + nx·q`.
    pub station_sigmas: Vec<f64>,
    /// `‖b − 𝒜(X_true)‖₂`.
    pub true_misfit: f64,
}

/// Adds `N(0, σ_pq²)` noise to each observed entry, with one
/// `σ_pq ~ U(sigma_lo, sigma_hi)` per station.
pub fn add_noise(tensor: &ResidualTensor, mask: &SamplingMask, spec: &NoiseSpec) -> Result<NoisyObservations> {
    spec.validate()?;
    if tensor.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "tensor {:?} and mask {:?} differ",
            tensor.shape(),
            mask.shape()
        )));
    }
    let grid = tensor.grid();
    let mut rng = Rng::with_stream(spec.seed, STREAM_NOISE);
    let station_sigmas: Vec<f64> = (0..grid.len())
        .map(|_| rng.uniform(spec.sigma_lo, spec.sigma_hi))
        .collect();
    let mut noisy = ResidualTensor::zeros(grid.clone(), tensor.sources().clone());
    let mut values = Vec::with_capacity(mask.count());
    let mut sq = 0.0;
    let (nx, ny, ns) = tensor.shape();
    for s in 0..ns {
        for q in 0..ny {
            for p in 0..nx {
                if mask.get(p, q, s) {
                    let e = rng.gaussian(0.0, station_sigmas[p + nx * q]);
                    let v = tensor.get(p, q, s) + e;
                    noisy.set(p, q, s, v);
                    values.push(v);
                    sq += e * e;
                }
            }
        }
    }
    Ok(NoisyObservations {
        tensor: noisy,
        values,
        station_sigmas,
        true_misfit: sq.sqrt(),
    })
}

/// `nominal_sigma·√n_obs`.
pub fn misfit_budget(n_obs: usize, nominal_sigma: f64) -> Result<f64> {
    if n_obs == 0 {
        return Err(Error::Argument("need at least one observation".into()));
    }
    Ok(nominal_sigma * (n_obs as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub nx: usize,
    pub ny: usize,
    pub spacing_km: f64,
    pub origin_x_km: f64,
    pub origin_y_km: f64,
    pub n_sources: usize,
    pub field: FieldSpec,
    pub mask: MaskSpec,
    pub noise: NoiseSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let g = ReceiverGrid::standard();
        Self {
            nx: g.nx,
            ny: g.ny,
            spacing_km: g.spacing,
            origin_x_km: g.origin_x,
            origin_y_km: g.origin_y,
            n_sources: 64,
            field: FieldSpec::default(),
            mask: MaskSpec::default(),
            noise: NoiseSpec::default(),
        }
    }
}

/// A complete synthetic experiment: truth, mask and noisy data.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: ResidualTensor,
    pub mask: SamplingMask,
    pub observed: NoisyObservations,
    /// Budget from the nominal per-entry uncertainty.
    pub sigma: f64,
}

impl ScenarioSpec {
    /// The spec with every component seed set to `seed`; components use
    /// separate random streams.
    pub fn seeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.field.seed = seed;
        s.mask.seed = seed;
        s.noise.seed = seed;
        s
    }

    pub fn grid(&self) -> Result<ReceiverGrid> {
        ReceiverGrid::new(self.nx, self.ny, self.spacing_km, self.origin_x_km, self.origin_y_km)
    }

    pub fn generate(&self) -> Result<Scenario> {
        let grid = self.grid()?;
        let sources = generate_sources(&grid, self.n_sources, self.field.seed)?;
        let truth = generate_field(&grid, &sources, &self.field)?;
        let mask = subsample_mask(&grid, self.n_sources, &self.mask)?;
        mask.require_nonempty()?;
        let observed = add_noise(&truth, &mask, &self.noise)?;
        let sigma = misfit_budget(mask.count(), self.noise.nominal_sigma)?;
        Ok(Scenario {
            truth,
            mask,
            observed,
            sigma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{matricize_block, matricize_receiver_by_source, Layout};
    use crate::numerics::thin_svd;

    fn standard_sources(n: usize) -> SourceSet {
        generate_sources(&ReceiverGrid::standard(), n, 7).unwrap()
    }

    #[test]
    fn zero_amplitude_gives_zero_tensor() {
        let spec = FieldSpec {
            amplitude_scale: 0.0,
            ..FieldSpec::default()
        };
        let t = generate_field(&ReceiverGrid::standard(), &standard_sources(8), &spec).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_bump_peaks_at_nearest_gridpoint() {
        let grid = ReceiverGrid::standard();
        let spec = FieldSpec {
            n_anomalies: 1,
            centers: vec![(101.0, 118.0)],
            widths: vec![12.0],
            amplitude_rank: 1,
            amplitude_scale: 0.5,
            ..FieldSpec::default()
        };
        let t = generate_field(&grid, &standard_sources(1), &spec).unwrap();
        let (arg, _) = t
            .values()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        // 101 = 70 + 6·5 + 1, 118 = 70 + 9·5 + 3 → nearest gridpoint (6, 10)
        assert_eq!((arg % 20, arg / 20), (6, 10));
    }

    #[test]
    fn default_field_has_low_numerical_rank() {
        let grid = ReceiverGrid::standard();
        let sources = standard_sources(64);
        for seed in 0..3 {
            let spec = FieldSpec {
                seed,
                ..FieldSpec::default()
            };
            let t = generate_field(&grid, &sources, &spec).unwrap();
            let order: Vec<usize> = (0..64).collect();
            let view = matricize_receiver_by_source(&t, &order).unwrap();
            assert_eq!(view.matrix().shape(), (400, 64));
            let s = thin_svd(view.matrix()).unwrap().s;
            assert!(s.iter().skip(12).all(|&v| v <= 1e-10 * s[0]));
            let peak = t.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(peak > 0.1 && peak < 2.0, "peak {peak}");
        }
    }

    #[test]
    fn full_ratio_without_dropout_is_full_mask() {
        let spec = MaskSpec {
            ratio: 1.0,
            dropout: 0.0,
            ..MaskSpec::default()
        };
        let m = subsample_mask(&ReceiverGrid::standard(), 5, &spec).unwrap();
        assert_eq!(m.count(), 2000);
    }

    #[test]
    fn fifteen_percent_stations() {
        let grid = ReceiverGrid::standard();
        let spec = MaskSpec {
            dropout: 0.0,
            ..MaskSpec::default()
        };
        assert_eq!(subsample_mask(&grid, 64, &spec).unwrap().count(), 3840);
        let dropped = subsample_mask(&grid, 64, &MaskSpec::default()).unwrap();
        assert!(
            (2496 - 300..=2496 + 300).contains(&dropped.count()),
            "{}",
            dropped.count()
        );
    }

    #[test]
    fn mask_is_seed_deterministic() {
        let grid = ReceiverGrid::standard();
        let spec = MaskSpec {
            seed: 9,
            ..MaskSpec::default()
        };
        let a = subsample_mask(&grid, 16, &spec).unwrap();
        let b = subsample_mask(&grid, 16, &spec).unwrap();
        assert_eq!(a.flags(), b.flags());
        let other = subsample_mask(&grid, 16, &MaskSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.flags(), other.flags());
    }

    #[test]
    fn tiny_ratio_is_rejected() {
        let grid = ReceiverGrid::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let spec = MaskSpec {
            ratio: 0.01,
            ..MaskSpec::default()
        };
        assert!(subsample_mask(&grid, 1, &spec).is_err());
    }

    #[test]
    fn noiseless_observations_equal_truth() {
        let spec = ScenarioSpec {
            noise: NoiseSpec {
                sigma_lo: 0.0,
                sigma_hi: 0.0,
                ..NoiseSpec::default()
            },
            n_sources: 8,
            ..ScenarioSpec::default()
        };
        let sc = spec.generate().unwrap();
        let (nx, ny, ns) = sc.truth.shape();
        let mut k = 0;
        for s in 0..ns {
            for q in 0..ny {
                for p in 0..nx {
                    if sc.mask.get(p, q, s) {
                        assert_eq!(sc.observed.values[k], sc.truth.get(p, q, s));
                        k += 1;
                    }
                }
            }
        }
        assert_eq!(sc.observed.true_misfit, 0.0);
    }

    #[test]
    fn station_sigmas_in_range() {
        let sc = ScenarioSpec::default().seeded(3).generate().unwrap();
        assert_eq!(sc.observed.station_sigmas.len(), 400);
        assert!(sc.observed.station_sigmas.iter().all(|s| (0.03..=0.15).contains(s)));
    }

    #[test]
    fn station_noise_has_its_own_spread() {
        let grid = ReceiverGrid::standard();
        let sources = standard_sources(64);
        let truth = ResidualTensor::zeros(grid.clone(), sources);
        let mask = SamplingMask::full((20, 20, 64));
        let obs = add_noise(&truth, &mask, &NoiseSpec::default()).unwrap();
        for (p, q) in [(0, 0), (5, 7), (19, 19)] {
            let xs: Vec<f64> = (0..64).map(|s| obs.tensor.get(p, q, s)).collect();
            let mean = xs.iter().sum::<f64>() / 64.0;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 63.0).sqrt();
            let sigma = obs.station_sigmas[p + 20 * q];
            assert!((std - sigma).abs() <= 0.35 * sigma, "{std} vs {sigma}");
        }
    }

    #[test]
    fn noise_is_zero_mean_across_seeds() {
        let grid = ReceiverGrid::new(4, 4, 1.0, 0.0, 0.0).unwrap();
        let truth = ResidualTensor::zeros(grid, standard_sources(2));
        let mask = SamplingMask::full((4, 4, 2));
        let mut sums = vec![0.0; 32];
        let mut sig = vec![0.0; 32];
        for seed in 0..50 {
            let obs = add_noise(
                &truth,
                &mask,
                &NoiseSpec {
                    seed,
                    ..NoiseSpec::default()
                },
            )
            .unwrap();
            for (i, v) in obs.values.iter().enumerate() {
                sums[i] += v;
                sig[i] += obs.station_sigmas[i % 16].powi(2);
            }
        }
        for i in 0..32 {
            let sigma = (sig[i] / 50.0).sqrt();
            assert!((sums[i] / 50.0).abs() <= 5.0 * sigma / 50f64.sqrt());
        }
    }

    #[test]
    fn budget_arithmetic() {
        assert!((misfit_budget(3840, 0.06).unwrap() - 3.718).abs() < 1e-3);
        assert_eq!(misfit_budget(1, 0.06).unwrap(), 0.06);
        assert!((misfit_budget(100, 0.1).unwrap() - 1.0).abs() < 1e-15);
        assert!(misfit_budget(0, 0.06).is_err());
    }

    #[test]
    fn station_masks_zero_whole_rows_only_in_receiver_layout() {
        let sc = ScenarioSpec::default().seeded(1).generate().unwrap();
        let order: Vec<usize> = (0..64).collect();
        let ind = sc.mask.flags().iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let t = ResidualTensor::new(sc.truth.grid().clone(), sc.truth.sources().clone(), ind).unwrap();
        let rs = matricize_receiver_by_source(&t, &order).unwrap();
        let zero_rows = (0..400)
            .filter(|&i| rs.matrix().row(i).iter().all(|&v| v == 0.0))
            .count();
        assert!(zero_rows >= 340);
        let Layout::BlockTessellated { n_bx, n_by } = Layout::square_blocks(64) else {
            unreachable!()
        };
        let bl = matricize_block(&t, &order, n_bx, n_by).unwrap();
        let (n, _) = bl.matrix().shape();
        let block_zero_rows = (0..n).filter(|&i| bl.matrix().row(i).iter().all(|&v| v == 0.0)).count();
        assert!(block_zero_rows < zero_rows);
    }

    #[test]
    fn full_data_decays_faster_than_masked() {
        for seed in 1..=10 {
            let sc = ScenarioSpec::default().seeded(seed).generate().unwrap();
            let order: Vec<usize> = (0..64).collect();
            let full = matricize_receiver_by_source(&sc.truth, &order).unwrap();
            let masked = matricize_receiver_by_source(&sc.observed.tensor, &order).unwrap();
            let sf = thin_svd(full.matrix()).unwrap().s;
            let sm = thin_svd(masked.matrix()).unwrap().s;
            assert!(sf[19] / sf[0] < sm[19] / sm[0], "seed {seed}");
        }
    }
}
