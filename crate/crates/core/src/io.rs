//! Tensor CSV files with a TOML sidecar for grid and source metadata.
//!
//! `name.csv` has the header
//! `source_id,rx_index,ry_index,value,observed,sigma_station` with 1-based
//! indices, sorted by source then `rx` then `ry`. `name.toml` holds the grid
//! and source coordinates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ReceiverGrid, ResidualTensor, SamplingMask, SourceSet};
use crate::metrics::fmt_f64;

pub const TENSOR_HEADER: &str = "source_id,rx_index,ry_index,value,observed,sigma_station";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    pub spacing_km: f64,
    pub origin_x_km: f64,
    pub origin_y_km: f64,
    pub n_s: usize,
    pub source_x_km: Vec<f64>,
    pub source_y_km: Vec<f64>,
}

impl GridMeta {
    pub fn new(grid: &ReceiverGrid, sources: &SourceSet) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            spacing_km: grid.spacing,
            origin_x_km: grid.origin_x,
            origin_y_km: grid.origin_y,
            n_s: sources.len(),
            source_x_km: sources.coords().iter().map(|c| c.0).collect(),
            source_y_km: sources.coords().iter().map(|c| c.1).collect(),
        }
    }

    pub fn grid(&self) -> Result<ReceiverGrid> {
        ReceiverGrid::new(self.nx, self.ny, self.spacing_km, self.origin_x_km, self.origin_y_km)
    }

    pub fn sources(&self) -> Result<SourceSet> {
        if self.source_x_km.len() != self.n_s || self.source_y_km.len() != self.n_s {
            return Err(Error::config(
                "n_s",
                format!(
                    "{} sources declared but {} x and {} y coordinates given",
                    self.n_s,
                    self.source_x_km.len(),
                    self.source_y_km.len()
                ),
            ));
        }
        SourceSet::new(
            self.source_x_km
                .iter()
                .copied()
                .zip(self.source_y_km.iter().copied())
                .collect(),
        )
    }
}

/// Contents of one tensor file.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub tensor: ResidualTensor,
    pub mask: SamplingMask,
    /// Indexed `p + nx·q`.
    pub station_sigmas: Vec<f64>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("toml")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Serializes to TOML with a trailing newline.
pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Numerical(format!("toml encoding: {e}")))
}

pub fn from_toml<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Renders the CSV body.
pub fn tensor_csv(tensor: &ResidualTensor, mask: &SamplingMask, station_sigmas: &[f64]) -> Result<String> {
    let (nx, ny, ns) = tensor.shape();
    if mask.shape() != (nx, ny, ns) {
        return Err(Error::Dimension(format!(
            "mask {:?} does not match tensor {:?}",
            mask.shape(),
            (nx, ny, ns)
        )));
    }
    if station_sigmas.len() != nx * ny {
        return Err(Error::Dimension(format!(
            "{} station sigmas for {} stations",
            station_sigmas.len(),
            nx * ny
        )));
    }
    let mut out = String::with_capacity(64 * nx * ny * ns);
    out.push_str(TENSOR_HEADER);
    out.push('\n');
    for s in 0..ns {
        for p in 0..nx {
            for q in 0..ny {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s + 1,
                    p + 1,
                    q + 1,
                    fmt_f64(tensor.get(p, q, s)),
                    u8::from(mask.get(p, q, s)),
                    fmt_f64(station_sigmas[p + nx * q])
                );
            }
        }
    }
    Ok(out)
}

/// Writes `path` and its sidecar.
pub fn write_tensor(path: &Path, tensor: &ResidualTensor, mask: &SamplingMask, station_sigmas: &[f64]) -> Result<()> {
    write_text(path, &tensor_csv(tensor, mask, station_sigmas)?)?;
    let meta = GridMeta::new(tensor.grid(), tensor.sources());
    write_text(&sidecar_path(path), &to_toml(&meta)?)
}

/// Reads `path` and its sidecar. Every gridpoint of every source must
/// appear exactly once.
pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let side = sidecar_path(path);
    let meta: GridMeta = from_toml(&side, &read_text(&side)?)?;
    let grid = meta.grid()?;
    let sources = meta.sources()?;
    let (nx, ny, ns) = (grid.nx, grid.ny, sources.len());
    let text = read_text(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == TENSOR_HEADER => {}
        other => {
            return Err(Error::parse(
                path,
                format!("expected header `{TENSOR_HEADER}`, found `{}`", other.unwrap_or("")),
            ))
        }
    }
    let mut values = vec![0.0; nx * ny * ns];
    let mut flags = vec![false; nx * ny * ns];
    let mut seen = vec![false; nx * ny * ns];
    let mut sigmas = vec![f64::NAN; nx * ny];
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::parse(path, format!("row {}: {msg}", row + 2));
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let index = |v: &str, n: usize, name: &str| -> Result<usize> {
            let i: usize = v.parse().map_err(|_| bad(format!("{name} `{v}` is not an integer")))?;
            if i == 0 || i > n {
                return Err(bad(format!("{name} {i} outside 1..={n}")));
            }
            Ok(i - 1)
        };
        let s = index(f[0], ns, "source_id")?;
        let p = index(f[1], nx, "rx_index")?;
        let q = index(f[2], ny, "ry_index")?;
        let value: f64 = f[3]
            .parse()
            .map_err(|_| bad(format!("value `{}` is not a number", f[3])))?;
        let observed = match f[4] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("observed must be 0 or 1, found `{other}`"))),
        };
        let sigma: f64 = f[5]
            .parse()
            .map_err(|_| bad(format!("sigma `{}` is not a number", f[5])))?;
        let k = p + nx * (q + ny * s);
        if seen[k] {
            return Err(bad(format!("duplicate entry ({}, {}, {})", s + 1, p + 1, q + 1)));
        }
        seen[k] = true;
        values[k] = value;
        flags[k] = observed;
        sigmas[p + nx * q] = sigma;
    }
    if let Some(k) = seen.iter().position(|&v| !v) {
        return Err(Error::parse(
            path,
            format!(
                "missing entry source {} rx {} ry {}",
                k / (nx * ny) + 1,
                k % nx + 1,
                (k / nx) % ny + 1
            ),
        ));
    }
    Ok(TensorFile {
        tensor: ResidualTensor::new(grid, sources, values)?,
        mask: SamplingMask::new((nx, ny, ns), flags)?,
        station_sigmas: sigmas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> TensorFile {
        let grid = ReceiverGrid::new(3, 2, 5.0, 70.0, 70.0).unwrap();
        let sources = SourceSet::new(vec![(1.5, 2.0), (-3.0, 4.25)]).unwrap();
        let mut rng = Rng::new(1);
        let values = (0..12).map(|_| rng.gaussian(0.0, 1.0) / 3.0).collect();
        let tensor = ResidualTensor::new(grid, sources, values).unwrap();
        let flags = (0..12).map(|i| i % 3 != 1).collect();
        let mask = SamplingMask::new((3, 2, 2), flags).unwrap();
        TensorFile {
            tensor,
            mask,
            station_sigmas: (0..6).map(|i| 0.03 + 0.01 * i as f64).collect(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let f = sample();
        write_tensor(&path, &f.tensor, &f.mask, &f.station_sigmas).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.tensor, f.tensor);
        assert_eq!(back.mask.flags(), f.mask.flags());
        assert_eq!(back.station_sigmas, f.station_sigmas);
    }

    #[test]
    fn rows_are_sorted_and_one_based() {
        let f = sample();
        let text = tensor_csv(&f.tensor, &f.mask, &f.station_sigmas).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], TENSOR_HEADER);
        assert!(rows[1].starts_with("1,1,1,"));
        assert!(rows[2].starts_with("1,1,2,"));
        assert!(rows[3].starts_with("1,2,1,"));
        assert!(rows[12].starts_with("2,3,2,"));
        assert_eq!(rows.len(), 13);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let f = sample();
        write_tensor(&path, &f.tensor, &f.mask, &f.station_sigmas).unwrap();
        let good = fs::read_to_string(&path).unwrap();

        let missing: String = good.lines().take(12).map(|l| format!("{l}\n")).collect();
        fs::write(&path, missing).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Parse { .. })));

        fs::write(&path, good.replace("1,1,1,", "1,1,9,")).unwrap();
        assert!(read_tensor(&path).is_err());

        fs::write(&path, good.replacen("source_id", "src", 1)).unwrap();
        assert!(read_tensor(&path).is_err());

        fs::write(&path, &good).unwrap();
        fs::write(sidecar_path(&path), "nx = 3\n").unwrap();
        assert!(read_tensor(&path).is_err());
    }
}
