//! Closed-form posteriors of the latent factors, per-speaker marginal
//! likelihoods and the `ln Q` terms used for scoring.
//!
//! Notation follows the model docs: for a session with `L` channels
//!
//! ```text
//! Λx(L) = I + L UᵀWU        ζ̃ = UᵀW F̄_ij        J = UᵀWV
//! ```
//!
//! and for a speaker
//!
//! ```text
//! Λy = I + N VᵀWV − Σ_j L_j² Jᵀ Λx(L_j)⁻¹ J
//! γ  = VᵀW F̄ − Σ_j L_j Jᵀ Λx(L_j)⁻¹ ζ̃_j
//! ```

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{outer, symmetrize, SpdFactor};
use crate::model::PldaModel;
use crate::stats::{GlobalStats, SessionStats, SpeakerStats};

/// Factors of `Λx(L)` for one channel count `L`.
#[derive(Clone, Debug)]
pub struct CountFactors {
    pub lx: DMatrix<f64>,
    pub lx_inv: DMatrix<f64>,
    pub lx_logdet: f64,
    /// `Jᵀ Λx(L)⁻¹ J`
    pub jt_lxinv_j: DMatrix<f64>,
    factor: SpdFactor,
}

impl CountFactors {
    /// `Λx(L)⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve_vec(b)
    }
}

/// Model-dependent products shared by every speaker.
#[derive(Clone, Debug)]
pub struct SharedPrecomp {
    /// `J = UᵀWV`, `n_x × n_y`
    pub j: DMatrix<f64>,
    pub utwu: DMatrix<f64>,
    pub vtwv: DMatrix<f64>,
    pub wu: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub w_logdet: f64,
    pub per_count: BTreeMap<usize, CountFactors>,
}

/// Gaussian posterior of one session's channel factor given `y`.
#[derive(Clone, Debug)]
pub struct SessionPosterior {
    pub lx: DMatrix<f64>,
    pub zeta_tilde: DVector<f64>,
    pub zeta: DVector<f64>,
    pub xbar: DVector<f64>,
}

impl SessionPosterior {
    pub fn cov(&self) -> Result<DMatrix<f64>> {
        Ok(SpdFactor::new(&self.lx, "Λx")?.inverse())
    }
}

/// Gaussian posterior `N(ȳ, Λy⁻¹)` of a speaker factor.
#[derive(Clone, Debug)]
pub struct SpeakerPosterior {
    pub ly: DMatrix<f64>,
    pub ly_logdet: f64,
    pub gamma: DVector<f64>,
    pub gamma_tilde: DVector<f64>,
    pub ybar: DVector<f64>,
    /// `Λy⁻¹`
    pub ycov: DMatrix<f64>,
    /// `E[y yᵀ] = Λy⁻¹ + ȳ ȳᵀ`
    pub yy_t: DMatrix<f64>,
    /// `ζ̃_ij` per session, in session order.
    pub zeta_tilde: Vec<DVector<f64>>,
}

impl SpeakerPosterior {
    /// `γᵀ Λy⁻¹ γ`
    pub fn gamma_quad(&self) -> f64 {
        self.gamma.dot(&self.ybar)
    }

    /// `ln Q = ½(−ln det Λy + γᵀΛy⁻¹γ)`
    pub fn log_q(&self) -> f64 {
        0.5 * (-self.ly_logdet + self.gamma_quad())
    }
}

impl SharedPrecomp {
    /// Precomputes the model products and `Λx(L)` factors for `counts`.
    pub fn new(m: &PldaModel, counts: impl IntoIterator<Item = usize>) -> Result<Self> {
        let wf = SpdFactor::new(&m.w, "W")?;
        let wu = &m.w * &m.u;
        let wv = &m.w * &m.v;
        let mut sp = SharedPrecomp {
            j: m.u.transpose() * &wv,
            utwu: symmetrize(&(m.u.transpose() * &wu)),
            vtwv: symmetrize(&(m.v.transpose() * &wv)),
            wu,
            wv,
            w: m.w.clone(),
            w_logdet: wf.logdet(),
            per_count: BTreeMap::new(),
        };
        for l in counts.into_iter().collect::<BTreeSet<_>>() {
            let f = sp.compute_count(l)?;
            sp.per_count.insert(l, f);
        }
        Ok(sp)
    }

    /// Precompute for every channel count present in `gs`.
    pub fn for_stats(m: &PldaModel, gs: &GlobalStats) -> Result<Self> {
        Self::new(m, channel_counts(gs.speakers.iter()))
    }

    pub fn n_y(&self) -> usize {
        self.vtwv.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.utwu.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    fn compute_count(&self, l: usize) -> Result<CountFactors> {
        if l == 0 {
            return Err(Error::Invalid(
                "sessions must have at least one channel".into(),
            ));
        }
        let nx = self.n_x();
        let lx = DMatrix::identity(nx, nx) + &self.utwu * l as f64;
        let factor = SpdFactor::new(&lx, &format!("Λx(L={l})"))?;
        let lx_inv = factor.inverse();
        let jt_lxinv_j = symmetrize(&(self.j.transpose() * factor.solve_mat(&self.j)));
        Ok(CountFactors {
            lx,
            lx_inv,
            lx_logdet: factor.logdet(),
            jt_lxinv_j,
            factor,
        })
    }

    /// Cached factors for `l`, computed on the fly if `l` was not precomputed.
    pub fn count(&self, l: usize) -> Result<Cow<'_, CountFactors>> {
        match self.per_count.get(&l) {
            Some(f) => Ok(Cow::Borrowed(f)),
            None => Ok(Cow::Owned(self.compute_count(l)?)),
        }
    }

    fn check_dim(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{what} has length {}, model dimension is {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Distinct channel counts over the sessions of `speakers`.
pub fn channel_counts<'a>(speakers: impl Iterator<Item = &'a SpeakerStats>) -> BTreeSet<usize> {
    speakers
        .flat_map(|s| s.sessions.iter().map(|j| j.l))
        .collect()
}

pub fn shared_precompute(m: &PldaModel, counts: &BTreeSet<usize>) -> Result<SharedPrecomp> {
    SharedPrecomp::new(m, counts.iter().copied())
}

/// Posterior of `x_ij` given `y`: `N(Λx⁻¹(ζ̃ − L J y), Λx⁻¹)`.
pub fn x_posterior_given_y(
    sp: &SharedPrecomp,
    sess: &SessionStats,
    y: &DVector<f64>,
) -> Result<SessionPosterior> {
    sp.check_dim(&sess.fbar, "session statistic")?;
    if y.len() != sp.n_y() {
        return Err(Error::Dimension(format!(
            "y has length {}, model has n_y={}",
            y.len(),
            sp.n_y()
        )));
    }
    let cf = sp.count(sess.l)?;
    let zeta_tilde = sp.wu.transpose() * &sess.fbar;
    let zeta = &zeta_tilde - &sp.j * y * sess.l as f64;
    let xbar = cf.solve(&zeta);
    Ok(SessionPosterior {
        lx: cf.lx.clone(),
        zeta_tilde,
        zeta,
        xbar,
    })
}

/// Posterior of the speaker factor with the channel factors integrated out.
pub fn speaker_posterior(sp: &SharedPrecomp, spk: &SpeakerStats) -> Result<SpeakerPosterior> {
    sp.check_dim(&spk.fbar, "speaker statistic")?;
    let ny = sp.n_y();
    let mut ly = DMatrix::identity(ny, ny) + &sp.vtwv * spk.n as f64;
    let gamma_tilde = sp.wv.transpose() * &spk.fbar;
    let mut gamma = gamma_tilde.clone();
    let mut zeta_tilde = Vec::with_capacity(spk.sessions.len());
    for ses in &spk.sessions {
        let cf = sp.count(ses.l)?;
        let l = ses.l as f64;
        let zt = sp.wu.transpose() * &ses.fbar;
        ly -= &cf.jt_lxinv_j * (l * l);
        gamma -= sp.j.transpose() * cf.solve(&zt) * l;
        zeta_tilde.push(zt);
    }
    let ly = symmetrize(&ly);
    let factor = SpdFactor::new(&ly, &format!("Λy of speaker '{}'", spk.id))?;
    let ybar = factor.solve_vec(&gamma);
    let ycov = factor.inverse();
    let yy_t = symmetrize(&(&ycov + outer(&ybar, &ybar)));
    Ok(SpeakerPosterior {
        ly_logdet: factor.logdet(),
        ly,
        gamma,
        gamma_tilde,
        ybar,
        ycov,
        yy_t,
        zeta_tilde,
    })
}

/// Marginal log-likelihood `ln P(Φ_i | model)` from centered statistics.
pub fn speaker_log_marginal(sp: &SharedPrecomp, spk: &SpeakerStats) -> Result<f64> {
    let post = speaker_posterior(sp, spk)?;
    speaker_log_marginal_from(sp, spk, &post)
}

pub(crate) fn speaker_log_marginal_from(
    sp: &SharedPrecomp,
    spk: &SpeakerStats,
    post: &SpeakerPosterior,
) -> Result<f64> {
    let d = sp.dim() as f64;
    let n = spk.n as f64;
    let mut val = 0.5 * n * (sp.w_logdet - d * (2.0 * PI).ln());
    val -= 0.5 * sp.w.component_mul(&spk.sbar).sum();
    for (ses, zt) in spk.sessions.iter().zip(&post.zeta_tilde) {
        let cf = sp.count(ses.l)?;
        val += 0.5 * (-cf.lx_logdet + zt.dot(&cf.solve(zt)));
    }
    val += post.log_q();
    Ok(val)
}

/// Sum of speaker marginals; `gs` must be centered with `m.mu`.
pub fn corpus_log_marginal(m: &PldaModel, gs: &GlobalStats) -> Result<f64> {
    let sp = SharedPrecomp::for_stats(m, gs)?;
    let parts = gs
        .speakers
        .par_iter()
        .map(|s| speaker_log_marginal(&sp, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().sum())
}

/// `ln Q(Φ_i) = ½(−ln det Λy + γᵀ Λy⁻¹ γ)`; zero for a speaker without data.
pub fn log_q(sp: &SharedPrecomp, spk: &SpeakerStats) -> Result<f64> {
    Ok(speaker_posterior(sp, spk)?.log_q())
}

/// `ln P(Φ_i | y, X)` in the centered form: expanded with `F̄`, `S̄` and the
/// per-session cross terms.
pub fn conditional_log_likelihood_centered(
    m: &PldaModel,
    spk: &SpeakerStats,
    y: &DVector<f64>,
    xs: &[DVector<f64>],
) -> Result<f64> {
    check_latents(m, spk, y, xs)?;
    let wf = SpdFactor::new(&m.w, "W")?;
    let d = m.mu.len() as f64;
    let n = spk.n as f64;
    let vy = &m.v * y;
    let wvy = &m.w * &vy;
    let mut val = 0.5 * n * (wf.logdet() - d * (2.0 * PI).ln())
        - 0.5 * m.w.component_mul(&spk.sbar).sum()
        + wvy.dot(&spk.fbar)
        - 0.5 * n * vy.dot(&wvy);
    for (ses, x) in spk.sessions.iter().zip(xs) {
        let ux = &m.u * x;
        let wux = &m.w * &ux;
        let l = ses.l as f64;
        val += wux.dot(&ses.fbar) - l * vy.dot(&wux) - 0.5 * l * ux.dot(&wux);
    }
    Ok(val)
}

/// `ln P(Φ_i | y, X)` in the augmented form with `ỹ = [y; x; 1]`,
/// `Ṽ = [V U μ]` and raw statistics.
pub fn conditional_log_likelihood_augmented(
    m: &PldaModel,
    spk: &SpeakerStats,
    y: &DVector<f64>,
    xs: &[DVector<f64>],
) -> Result<f64> {
    check_latents(m, spk, y, xs)?;
    let wf = SpdFactor::new(&m.w, "W")?;
    let d = m.mu.len() as f64;
    let n = spk.n as f64;
    let vt = augmented_loading(m);
    let mut val =
        0.5 * n * (wf.logdet() - d * (2.0 * PI).ln()) - 0.5 * m.w.component_mul(&spk.s).sum();
    for (ses, x) in spk.sessions.iter().zip(xs) {
        let yt = augmented_latent(y, x);
        let m_ij = &vt * &yt;
        let wm = &m.w * &m_ij;
        val += wm.dot(&ses.f) - 0.5 * ses.l as f64 * m_ij.dot(&wm);
    }
    Ok(val)
}

/// `Ṽ = [V U μ]`
pub fn augmented_loading(m: &PldaModel) -> DMatrix<f64> {
    let (d, ny, nx) = (m.mu.len(), m.v.ncols(), m.u.ncols());
    let mut vt = DMatrix::zeros(d, ny + nx + 1);
    vt.columns_mut(0, ny).copy_from(&m.v);
    vt.columns_mut(ny, nx).copy_from(&m.u);
    vt.column_mut(ny + nx).copy_from(&m.mu);
    vt
}

/// `ỹ = [y; x; 1]`
pub fn augmented_latent(y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(y.len() + x.len() + 1);
    v.rows_mut(0, y.len()).copy_from(y);
    v.rows_mut(y.len(), x.len()).copy_from(x);
    v[y.len() + x.len()] = 1.0;
    v
}

fn check_latents(
    m: &PldaModel,
    spk: &SpeakerStats,
    y: &DVector<f64>,
    xs: &[DVector<f64>],
) -> Result<()> {
    let dims = m.dims();
    if y.len() != dims.n_y
        || xs.len() != spk.sessions.len()
        || xs.iter().any(|x| x.len() != dims.n_x)
    {
        return Err(Error::Dimension(
            "latent values do not match the model or the session list".into(),
        ));
    }
    Ok(())
}
