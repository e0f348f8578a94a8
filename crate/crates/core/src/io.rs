//! On-disk formats shared by the library and the CLI.
//!
//! Matrix files (`.mat`): an ASCII header line `rows cols\n` followed by
//! `rows·cols` little-endian `f64` values in row-major order.
//!
//! Scenario directories hold `view_0000.mat ...`, `labels.csv` (one 1-based
//! cluster index per line), `scenario.toml`, and, when ground truth is
//! available, `truth_00.mat ...` and `interference_0000.mat ...`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Result, ScosError};
use crate::subspace::SubspaceBasis;
use crate::synth::{Scenario, ScenarioConfig};

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let header = format!("{} {}\n", m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(header.len() + 8 * m.len());
    out.extend_from_slice(header.as_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ScosError::FormatError {
            offset: 0,
            msg: "missing header line".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| ScosError::FormatError {
        offset: 0,
        msg: "header is not text".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| ScosError::FormatError {
            offset: 0,
            msg: format!("bad header {header:?}"),
        })?;
    let [rows, cols] = dims[..] else {
        return Err(ScosError::FormatError {
            offset: 0,
            msg: format!("expected `rows cols`, got {header:?}"),
        });
    };
    let body = &bytes[nl + 1..];
    let expected = rows * cols * 8;
    if body.len() != expected {
        return Err(ScosError::FormatError {
            offset: (nl + 1 + body.len().min(expected)) as u64,
            msg: format!("expected {expected} data bytes, found {}", body.len()),
        });
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    decode_matrix(&read_bytes(path)?)
}

/// Reads a whole file, mapping a missing path to `FileNotFound`.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScosError::FileNotFound(path.to_path_buf()),
        _ => ScosError::Io(e),
    })
}

/// Reads a UTF-8 text file.
pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| ScosError::FormatError {
        offset: e.utf8_error().valid_up_to() as u64,
        msg: "not valid UTF-8".into(),
    })
}

/// Writes zero-based labels as 1-based integers, one per line.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in labels {
        writeln!(w, "{}", l + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a one-integer-per-line label file and returns zero-based labels.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let t = line.trim();
        if !t.is_empty() {
            let v: usize = t.parse().map_err(|_| ScosError::FormatError {
                offset,
                msg: format!("bad label {t:?}"),
            })?;
            if v == 0 {
                return Err(ScosError::FormatError {
                    offset,
                    msg: "labels are 1-based".into(),
                });
            }
            labels.push(v - 1);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(labels)
}

fn view_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("view_{k:04}.mat"))
}

/// Serializes a scenario into `dir`, creating it if needed.
pub fn save_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, v) in scenario.views.iter().enumerate() {
        write_matrix(&view_path(dir, k), v)?;
    }
    write_labels(&dir.join("labels.csv"), &scenario.labels)?;
    let toml = toml::to_string(&scenario.config)
        .map_err(|e| ScosError::InvalidArgument(format!("cannot encode config: {e}")))?;
    fs::write(dir.join("scenario.toml"), toml)?;
    for (r, g) in scenario.true_bases.iter().enumerate() {
        write_matrix(&dir.join(format!("truth_{r:02}.mat")), g.data())?;
    }
    for (k, h) in scenario.interference_bases.iter().enumerate() {
        write_matrix(&dir.join(format!("interference_{k:04}.mat")), h)?;
    }
    Ok(())
}

/// Reads the `view_XXXX.mat` files of a directory in index order.
pub fn load_views(dir: &Path) -> Result<Vec<DMatrix<f64>>> {
    if !dir.is_dir() {
        return Err(ScosError::FileNotFound(dir.to_path_buf()));
    }
    let mut views = Vec::new();
    loop {
        let p = view_path(dir, views.len());
        if !p.exists() {
            break;
        }
        views.push(read_matrix(&p)?);
    }
    if views.is_empty() {
        return Err(ScosError::FileNotFound(view_path(dir, 0)));
    }
    Ok(views)
}

/// Loads a scenario directory. Ground-truth bases and interference bases are
/// read when present; generative terms are not stored and come back empty.
pub fn load_scenario(dir: &Path) -> Result<Scenario> {
    let views = load_views(dir)?;
    let labels = read_labels(&dir.join("labels.csv"))?;
    if labels.len() != views.len() {
        return Err(ScosError::LengthMismatch {
            left: views.len(),
            right: labels.len(),
        });
    }
    let config_text = read_text(&dir.join("scenario.toml"))?;
    let config: ScenarioConfig = toml::from_str(&config_text).map_err(|e| ScosError::FormatError {
        offset: e.span().map_or(0, |s| s.start as u64),
        msg: e.message().to_string(),
    })?;
    let mut true_bases = Vec::new();
    loop {
        let p = dir.join(format!("truth_{:02}.mat", true_bases.len()));
        if !p.exists() {
            break;
        }
        true_bases.push(SubspaceBasis::orthonormal(read_matrix(&p)?)?);
    }
    let mut interference_bases = Vec::new();
    loop {
        let p = dir.join(format!("interference_{:04}.mat", interference_bases.len()));
        if !p.exists() {
            break;
        }
        interference_bases.push(read_matrix(&p)?);
    }
    Ok(Scenario {
        config,
        views,
        labels,
        true_bases,
        interference_bases,
        terms: Vec::new(),
    })
}

/// Minimal CSV writer: a header row followed by pre-formatted rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}
