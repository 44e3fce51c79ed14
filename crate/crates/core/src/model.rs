//! PLDA parameters `(μ, V, U, W)`: an observation of speaker `i`, session `j`,
//! channel `l` is
//!
//! ```text
//! φ_ijl = μ + V y_i + U x_ij + ε_ijl,   y ~ N(0, I), x ~ N(0, I), ε ~ N(0, W⁻¹)
//! ```
//!
//! `W` is the within-class *precision* of the residual.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{read_file, write_file};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, symmetrize, SpdFactor};
use crate::stats::GlobalStats;

pub const MODEL_MAGIC: &str = "plda2x";
pub const MODEL_VERSION: u32 = 1;

/// Relative tolerance on the symmetry of `W`.
pub const W_SYMMETRY_TOL: f64 = 1e-10;

const INIT_JITTER: f64 = 1e-10;
const INIT_JITTER_RETRIES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelDims {
    /// Observation dimension.
    pub d: usize,
    /// Speaker factor dimension.
    pub n_y: usize,
    /// Channel factor dimension; 0 gives single-source PLDA.
    pub n_x: usize,
}

impl ModelDims {
    pub fn new(d: usize, n_y: usize, n_x: usize) -> Result<Self> {
        let dims = ModelDims { d, n_y, n_x };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Invalid(
                "observation dimension must be positive".into(),
            ));
        }
        if self.n_y > self.d || self.n_x > self.d {
            return Err(Error::Invalid(format!(
                "latent dimensions n_y={} n_x={} must not exceed d={}",
                self.n_y, self.n_x, self.d
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    pub mu: DVector<f64>,
    /// Eigenvoices, `d × n_y`.
    pub v: DMatrix<f64>,
    /// Eigenchannels, `d × n_x`.
    pub u: DMatrix<f64>,
    /// Residual precision, `d × d` SPD.
    pub w: DMatrix<f64>,
}

impl PldaModel {
    /// Builds and validates a model.
    pub fn new(
        mu: DVector<f64>,
        v: DMatrix<f64>,
        u: DMatrix<f64>,
        w: DMatrix<f64>,
    ) -> Result<Self> {
        let m = PldaModel { mu, v, u, w };
        m.validate()?;
        Ok(m)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.mu.len(),
            n_y: self.v.ncols(),
            n_x: self.u.ncols(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        dims.validate()?;
        let d = dims.d;
        if self.v.nrows() != d || self.u.nrows() != d || self.w.shape() != (d, d) {
            return Err(Error::Dimension(format!(
                "model blocks disagree with d={d}: V {:?}, U {:?}, W {:?}",
                self.v.shape(),
                self.u.shape(),
                self.w.shape()
            )));
        }
        let finite = self.mu.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.u.iter().all(|x| x.is_finite())
            && self.w.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Invalid("model has non-finite entries".into()));
        }
        let asym = asymmetry(&self.w);
        if asym > W_SYMMETRY_TOL {
            return Err(Error::Invalid(format!(
                "W is not symmetric (relative asymmetry {asym:e})"
            )));
        }
        SpdFactor::with_jitter(&self.w, "W", 0.0, 0)?;
        Ok(())
    }

    /// Residual covariance `W⁻¹`.
    pub fn w_inv(&self) -> Result<DMatrix<f64>> {
        Ok(SpdFactor::new(&self.w, "W")?.inverse())
    }

    /// Text form; floats use the shortest representation that parses back
    /// to the same bits.
    pub fn to_text(&self) -> String {
        let dims = self.dims();
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "dims {} {} {}", dims.d, dims.n_y, dims.n_x);
        out.push_str("MU\n");
        write_row(&mut out, self.mu.iter());
        for (name, mat) in [("V", &self.v), ("U", &self.u), ("W", &self.w)] {
            let _ = writeln!(out, "{name}");
            if mat.ncols() > 0 {
                for r in 0..mat.nrows() {
                    write_row(&mut out, mat.row(r).iter());
                }
            }
        }
        out
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| {
                Error::parse(name, 0, format!("unexpected end of file, expected {what}"))
            })
        };

        let (ln, magic) = next("header")?;
        match magic.split_whitespace().collect::<Vec<_>>()[..] {
            [MODEL_MAGIC, ver] => {
                if ver.parse::<u32>().ok() != Some(MODEL_VERSION) {
                    return Err(Error::parse(
                        name,
                        ln,
                        format!("version mismatch: file has '{ver}', expected {MODEL_VERSION}"),
                    ));
                }
            }
            _ => {
                return Err(Error::parse(
                    name,
                    ln,
                    format!("expected '{MODEL_MAGIC} {MODEL_VERSION}'"),
                ))
            }
        }

        let (ln, dims_line) = next("dims")?;
        let dims: Vec<usize> = match dims_line.split_whitespace().collect::<Vec<_>>()[..] {
            ["dims", a, b, c] => [a, b, c]
                .iter()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(name, ln, "bad dims line"))?,
            _ => return Err(Error::parse(name, ln, "expected 'dims d n_y n_x'")),
        };
        let (d, n_y, n_x) = (dims[0], dims[1], dims[2]);

        let mut read_block = |section: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let (ln, head) = next(section)?;
            if head != section {
                return Err(Error::parse(
                    name,
                    ln,
                    format!("expected section '{section}'"),
                ));
            }
            let mut m = DMatrix::zeros(rows, cols);
            if cols == 0 {
                return Ok(m);
            }
            for r in 0..rows {
                let (ln, line) = next(section)?;
                let vals = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| Error::parse(name, ln, format!("bad number '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() != cols {
                    return Err(Error::parse(
                        name,
                        ln,
                        format!(
                            "dimension mismatch in {section}: {} values, expected {cols}",
                            vals.len()
                        ),
                    ));
                }
                for (c, v) in vals.into_iter().enumerate() {
                    m[(r, c)] = v;
                }
            }
            Ok(m)
        };

        let mu = read_block("MU", 1, d)?;
        let v = read_block("V", d, n_y)?;
        let u = read_block("U", d, n_x)?;
        let w = read_block("W", d, d)?;
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::parse(
                name,
                ln,
                format!("trailing content '{extra}'"),
            ));
        }
        PldaModel::new(DVector::from_iterator(d, mu.iter().copied()), v, u, w)
    }
}

fn write_row<'a>(out: &mut String, vals: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in vals {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

pub fn save_model(m: &PldaModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &m.to_text())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PldaModel> {
    let path = path.as_ref();
    PldaModel::parse(&read_file(path)?, &path.display().to_string())
}

/// Starting point for EM: global mean, inverse global covariance, and
/// seeded Gaussian loadings scaled to the data spread.
pub fn init_model(gs: &GlobalStats, dims: ModelDims, seed: u64) -> Result<PldaModel> {
    dims.validate()?;
    if gs.dim() != dims.d {
        return Err(Error::Dimension(format!(
            "statistics have dimension {}, model asks for {}",
            gs.dim(),
            dims.d
        )));
    }
    if gs.m < 2 {
        return Err(Error::Invalid(format!(
            "initialization needs at least 2 speakers, got {}",
            gs.m
        )));
    }
    let n = gs.n as f64;
    let mu = &gs.f / n;
    let cov = symmetrize(&(&gs.s / n - &mu * mu.transpose()));
    if cov.trace().is_nan() || cov.trace() <= 0.0 {
        return Err(Error::Singular(
            "global covariance is zero; the data have no spread".into(),
        ));
    }
    let factor =
        SpdFactor::with_jitter(&cov, "global covariance", INIT_JITTER, INIT_JITTER_RETRIES)
            .map_err(|_| {
                Error::Singular("global covariance is singular after jitter retries".into())
            })?;
    let w = factor.inverse();
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular(
            "global covariance is singular after jitter retries".into(),
        ));
    }

    let scale = 0.5 * (cov.trace() / dims.d as f64).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: usize, c: usize| {
        DMatrix::from_fn(r, c, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
    };
    let v = draw(dims.d, dims.n_y);
    let u = draw(dims.d, dims.n_x);
    PldaModel::new(mu, v, u, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> PldaModel {
        PldaModel::new(
            DVector::from_row_slice(&[0.1, -2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0 / 3.0, 2.5e-7]),
            DMatrix::from_row_slice(2, 1, &[0.7, -1e300]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = toy();
        let text = m.to_text();
        let back = PldaModel::parse(&text, "m").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn empty_channel_block_round_trips() {
        let mut m = toy();
        m.u = DMatrix::zeros(2, 0);
        let text = m.to_text();
        assert!(text.contains("U\nW\n"));
        assert_eq!(PldaModel::parse(&text, "m").unwrap(), m);
    }

    #[test]
    fn tampered_w_is_rejected() {
        let text = toy().to_text().replace("3e-1 1e0", "3.1e-1 1e0");
        let err = PldaModel::parse(&text, "m").unwrap_err();
        assert!(err.to_string().contains("not symmetric"), "{err}");
    }

    #[test]
    fn version_and_dims_checked() {
        let text = toy().to_text();
        assert!(
            PldaModel::parse(&text.replacen("plda2x 1", "plda2x 2", 1), "m")
                .unwrap_err()
                .to_string()
                .contains("version mismatch")
        );
        assert!(PldaModel::parse(&text.replacen("dims 2 1 1", "dims 2 2 1", 1), "m").is_err());
    }

    #[test]
    fn non_spd_w_is_rejected() {
        let mut m = toy();
        m.w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(m.validate(), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn latent_dims_bounded_by_d() {
        assert!(ModelDims::new(2, 3, 0).is_err());
        assert!(ModelDims::new(2, 2, 0).is_ok());
        assert!(ModelDims::new(0, 0, 0).is_err());
    }
}
