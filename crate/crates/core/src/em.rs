//! EM training: E-step accumulators, the maximum-likelihood M-step for
//! `Ṽ = [V U μ]` and `W`, and the minimum-divergence step that re-estimates a
//! general latent prior and folds it back into the loadings.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::{HierarchicalLabelling, IVectorSet};
use crate::error::{Error, Result};
use crate::inference::{corpus_log_marginal, speaker_posterior, SharedPrecomp, SpeakerPosterior};
use crate::linalg::{outer, symmetrize, SpdFactor};
use crate::model::{init_model, ModelDims, PldaModel};
use crate::stats::{accumulate_stats, center_stats, GlobalStats, SpeakerStats};

/// Relative slack allowed on the per-iteration objective before training aborts.
pub const MONOTONICITY_SLACK: f64 = 1e-8;

const MD_JITTER: f64 = 1e-10;
const MD_JITTER_RETRIES: usize = 8;

/// Sufficient statistics of one E-step.
///
/// `R`/`C` blocks are weighted by channel counts (`N_i`, `L_ij`) and feed the
/// ML step; `ρ` blocks count each session once and feed the MD step.
#[derive(Clone, Debug, PartialEq)]
pub struct EmAccumulators {
    pub ry: DMatrix<f64>,
    pub rx: DMatrix<f64>,
    pub rxy: DMatrix<f64>,
    pub ry1: DVector<f64>,
    pub rx1: DVector<f64>,
    pub cy: DMatrix<f64>,
    pub cx: DMatrix<f64>,
    pub f: DVector<f64>,
    pub rho_y: DMatrix<f64>,
    pub rho_x: DMatrix<f64>,
    pub rho_xy: DMatrix<f64>,
    pub rho_y1: DVector<f64>,
    pub rho_x1: DVector<f64>,
    pub sum_ybar: DVector<f64>,
    pub sum_yy_t: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub h: usize,
}

impl EmAccumulators {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims { d, n_y, n_x } = dims;
        EmAccumulators {
            ry: DMatrix::zeros(n_y, n_y),
            rx: DMatrix::zeros(n_x, n_x),
            rxy: DMatrix::zeros(n_x, n_y),
            ry1: DVector::zeros(n_y),
            rx1: DVector::zeros(n_x),
            cy: DMatrix::zeros(d, n_y),
            cx: DMatrix::zeros(d, n_x),
            f: DVector::zeros(d),
            rho_y: DMatrix::zeros(n_y, n_y),
            rho_x: DMatrix::zeros(n_x, n_x),
            rho_xy: DMatrix::zeros(n_x, n_y),
            rho_y1: DVector::zeros(n_y),
            rho_x1: DVector::zeros(n_x),
            sum_ybar: DVector::zeros(n_y),
            sum_yy_t: DMatrix::zeros(n_y, n_y),
            n: 0,
            m: 0,
            h: 0,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.f.len(),
            n_y: self.ry.nrows(),
            n_x: self.rx.nrows(),
        }
    }

    /// Adds another partial accumulation.
    pub fn merge(&mut self, o: &EmAccumulators) {
        self.ry += &o.ry;
        self.rx += &o.rx;
        self.rxy += &o.rxy;
        self.ry1 += &o.ry1;
        self.rx1 += &o.rx1;
        self.cy += &o.cy;
        self.cx += &o.cx;
        self.f += &o.f;
        self.rho_y += &o.rho_y;
        self.rho_x += &o.rho_x;
        self.rho_xy += &o.rho_xy;
        self.rho_y1 += &o.rho_y1;
        self.rho_x1 += &o.rho_x1;
        self.sum_ybar += &o.sum_ybar;
        self.sum_yy_t += &o.sum_yy_t;
        self.n += o.n;
        self.m += o.m;
        self.h += o.h;
    }

    /// `R_ỹ = Σ L_ij E[ỹ ỹᵀ]` assembled from its blocks, ordered `(y, x, 1)`.
    pub fn r_tilde(&self) -> DMatrix<f64> {
        let ModelDims { n_y, n_x, .. } = self.dims();
        let k = n_y + n_x + 1;
        let mut r = DMatrix::zeros(k, k);
        r.view_mut((0, 0), (n_y, n_y)).copy_from(&self.ry);
        r.view_mut((n_y, n_y), (n_x, n_x)).copy_from(&self.rx);
        r.view_mut((n_y, 0), (n_x, n_y)).copy_from(&self.rxy);
        r.view_mut((0, n_y), (n_y, n_x))
            .copy_from(&self.rxy.transpose());
        r.view_mut((0, k - 1), (n_y, 1)).copy_from(&self.ry1);
        r.view_mut((k - 1, 0), (1, n_y))
            .copy_from(&self.ry1.transpose());
        r.view_mut((n_y, k - 1), (n_x, 1)).copy_from(&self.rx1);
        r.view_mut((k - 1, n_y), (1, n_x))
            .copy_from(&self.rx1.transpose());
        r[(k - 1, k - 1)] = self.n as f64;
        symmetrize(&r)
    }

    /// `C = Σ F_ij E[ỹ]ᵀ = [C_y C_x F]`.
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let ModelDims { d, n_y, n_x } = self.dims();
        let mut c = DMatrix::zeros(d, n_y + n_x + 1);
        c.columns_mut(0, n_y).copy_from(&self.cy);
        c.columns_mut(n_y, n_x).copy_from(&self.cx);
        c.column_mut(n_y + n_x).copy_from(&self.f);
        c
    }
}

/// Posterior moments of one session's channel factor.
#[derive(Clone, Debug)]
pub struct SessionMoments {
    /// `E[x]`
    pub ex: DVector<f64>,
    /// `E[x yᵀ]`
    pub exy: DMatrix<f64>,
    /// `E[x xᵀ]`
    pub exx: DMatrix<f64>,
}

/// Speaker posterior plus the channel-factor moments of each session.
pub fn speaker_moments(
    sp: &SharedPrecomp,
    spk: &SpeakerStats,
) -> Result<(SpeakerPosterior, Vec<SessionMoments>)> {
    let post = speaker_posterior(sp, spk)?;
    let mut moments = Vec::with_capacity(spk.sessions.len());
    for (ses, zt) in spk.sessions.iter().zip(&post.zeta_tilde) {
        let cf = sp.count(ses.l)?;
        let l = ses.l as f64;
        let jy = &sp.j * &post.ybar;
        let ex = cf.solve(&(zt - &jy * l));
        let exy = &cf.lx_inv * (outer(zt, &post.ybar) - &sp.j * &post.yy_t * l);
        let zjy = outer(zt, &jy);
        let inner = outer(zt, zt) - (&zjy + zjy.transpose()) * l
            + &sp.j * &post.yy_t * sp.j.transpose() * (l * l);
        let exx = symmetrize(&(&cf.lx_inv + &cf.lx_inv * inner * &cf.lx_inv));
        moments.push(SessionMoments { ex, exy, exx });
    }
    Ok((post, moments))
}

fn speaker_accumulators(
    sp: &SharedPrecomp,
    spk: &SpeakerStats,
    dims: ModelDims,
) -> Result<EmAccumulators> {
    let (post, moments) = speaker_moments(sp, spk)?;
    let mut acc = EmAccumulators::zeros(dims);
    let n = spk.n as f64;
    let hi = spk.num_sessions() as f64;
    acc.ry = &post.yy_t * n;
    acc.ry1 = &post.ybar * n;
    acc.cy = outer(&spk.f, &post.ybar);
    acc.f = spk.f.clone();
    acc.rho_y = &post.yy_t * hi;
    acc.rho_y1 = &post.ybar * hi;
    acc.sum_ybar = post.ybar.clone();
    acc.sum_yy_t = post.yy_t.clone();
    for (ses, mo) in spk.sessions.iter().zip(&moments) {
        let l = ses.l as f64;
        acc.rx += &mo.exx * l;
        acc.rxy += &mo.exy * l;
        acc.rx1 += &mo.ex * l;
        acc.cx += outer(&ses.f, &mo.ex);
        acc.rho_x += &mo.exx;
        acc.rho_xy += &mo.exy;
        acc.rho_x1 += &mo.ex;
    }
    acc.n = spk.n;
    acc.m = 1;
    acc.h = spk.num_sessions();
    Ok(acc)
}

/// E-step over all speakers of `gs` (centered with `m.mu`). Speakers are
/// processed in parallel and merged in their stored order.
pub fn e_step(m: &PldaModel, gs: &GlobalStats) -> Result<EmAccumulators> {
    let sp = SharedPrecomp::for_stats(m, gs)?;
    e_step_with(&sp, &gs.speakers, m.dims())
}

pub fn e_step_with(
    sp: &SharedPrecomp,
    speakers: &[SpeakerStats],
    dims: ModelDims,
) -> Result<EmAccumulators> {
    let parts = speakers
        .par_iter()
        .map(|s| speaker_accumulators(sp, s, dims))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = EmAccumulators::zeros(dims);
    for p in &parts {
        acc.merge(p);
    }
    Ok(acc)
}

/// ML update: `Ṽ = C R_ỹ⁻¹`, `W⁻¹ = (S − Ṽ Cᵀ)/N`, with `S` the raw global
/// second-order statistic.
pub fn m_step_ml(acc: &EmAccumulators, gs: &GlobalStats) -> Result<PldaModel> {
    let ModelDims { d, n_y, n_x } = acc.dims();
    if gs.dim() != d || gs.n != acc.n {
        return Err(Error::Dimension(
            "accumulators do not match the statistics".into(),
        ));
    }
    if acc.n == 0 {
        return Err(Error::Singular("no observations".into()));
    }
    let r = acc.r_tilde();
    let c = acc.c_matrix();
    let rf = SpdFactor::new(&r, "R_ỹ").map_err(|_| Error::Singular("R_ỹ is singular".into()))?;
    let vt = rf.solve_mat(&c.transpose()).transpose();
    let cov = symmetrize(&((&gs.s - &vt * c.transpose()) / acc.n as f64));
    let w = SpdFactor::new(&cov, "W⁻¹")
        .map_err(|_| Error::Singular("updated residual covariance is singular".into()))?
        .inverse();
    if !w.iter().chain(vt.iter()).all(|v| v.is_finite()) {
        return Err(Error::Singular(
            "ML update produced non-finite parameters".into(),
        ));
    }
    let v = vt.columns(0, n_y).into_owned();
    let u = vt.columns(n_y, n_x).into_owned();
    let mu = vt.column(n_y + n_x).into_owned();
    PldaModel::new(mu, v, u, w)
}

/// ML auxiliary function `Q(Ṽ, W)` (constants included) from aggregated
/// accumulators; maximized by [`m_step_ml`].
pub fn ml_auxiliary(
    acc: &EmAccumulators,
    s: &DMatrix<f64>,
    vt: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<f64> {
    let c = acc.c_matrix();
    let r = acc.r_tilde();
    let k = s - (&c * vt.transpose()) * 2.0 + vt * r * vt.transpose();
    let wf = SpdFactor::new(w, "W")?;
    let d = w.nrows() as f64;
    let n = acc.n as f64;
    Ok(
        0.5 * n * (wf.logdet() - d * (2.0 * std::f64::consts::PI).ln())
            - 0.5 * w.component_mul(&k).sum(),
    )
}

/// Re-estimated latent prior `y ~ N(μ_y, Σ_y)`, `x | y ~ N(H y + μ_x, Σ_x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdParams {
    pub mu_y: DVector<f64>,
    pub sigma_y: DMatrix<f64>,
    /// Coupling of `x` on `y`, `n_x × n_y`.
    pub h: DMatrix<f64>,
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
}

impl MdParams {
    /// The standard prior; transforming by it leaves a model unchanged.
    pub fn identity(n_y: usize, n_x: usize) -> Self {
        MdParams {
            mu_y: DVector::zeros(n_y),
            sigma_y: DMatrix::identity(n_y, n_y),
            h: DMatrix::zeros(n_x, n_y),
            mu_x: DVector::zeros(n_x),
            sigma_x: DMatrix::identity(n_x, n_x),
        }
    }
}

/// Minimum-divergence estimate of the latent prior from E-step statistics.
pub fn m_step_md(acc: &EmAccumulators) -> Result<MdParams> {
    if acc.m < 2 || acc.h < 2 {
        return Err(Error::Invalid(format!(
            "minimum-divergence step needs M ≥ 2 and H ≥ 2 (M={}, H={})",
            acc.m, acc.h
        )));
    }
    let ModelDims { n_y, n_x, .. } = acc.dims();
    let m = acc.m as f64;
    let hc = acc.h as f64;

    let mu_y = &acc.sum_ybar / m;
    let sigma_y = symmetrize(&(&acc.sum_yy_t / m - outer(&mu_y, &mu_y)));

    let h = if n_x == 0 || n_y == 0 {
        DMatrix::zeros(n_x, n_y)
    } else {
        let lhs = &acc.rho_xy - outer(&acc.rho_x1, &acc.rho_y1) / hc;
        let gram = symmetrize(&(&acc.rho_y - outer(&acc.rho_y1, &acc.rho_y1) / hc));
        let gf = SpdFactor::new(&gram, "ρ_y − ρ_y1 ρ_1y / H").map_err(|_| {
            Error::Singular("centered ρ_y is singular; cannot estimate the coupling H".into())
        })?;
        gf.solve_mat(&lhs.transpose()).transpose()
    };
    let resid1 = &acc.rho_x1 - &h * &acc.rho_y1;
    let mu_x = &resid1 / hc;
    let hxy = &acc.rho_xy * h.transpose();
    let sigma_x = symmetrize(
        &((&acc.rho_x - &hxy - hxy.transpose() + &h * &acc.rho_y * h.transpose()
            - outer(&resid1, &mu_x))
            / hc),
    );

    SpdFactor::with_jitter(&sigma_y, "Σ_y", MD_JITTER, MD_JITTER_RETRIES)?;
    SpdFactor::with_jitter(&sigma_x, "Σ_x", MD_JITTER, MD_JITTER_RETRIES)?;
    Ok(MdParams {
        mu_y,
        sigma_y,
        h,
        mu_x,
        sigma_x,
    })
}

/// Folds a general latent prior into the loadings so the latents regain a
/// standard prior:
///
/// ```text
/// V' = (V + U H) R_y    U' = U R_x    μ' = μ + (V + U H) μ_y + U μ_x
/// ```
///
/// with `R` the lower Cholesky factor, `Σ = R Rᵀ`. `W` is unchanged.
pub fn md_transform_model(m: &PldaModel, md: &MdParams) -> Result<PldaModel> {
    let dims = m.dims();
    if md.mu_y.len() != dims.n_y
        || md.mu_x.len() != dims.n_x
        || md.h.shape() != (dims.n_x, dims.n_y)
    {
        return Err(Error::Dimension(
            "MD parameters do not match the model".into(),
        ));
    }
    let ry = SpdFactor::with_jitter(&md.sigma_y, "Σ_y", MD_JITTER, MD_JITTER_RETRIES)?.lower();
    let rx = SpdFactor::with_jitter(&md.sigma_x, "Σ_x", MD_JITTER, MD_JITTER_RETRIES)?.lower();
    let vuh = &m.v + &m.u * &md.h;
    let mu = &m.mu + &vuh * &md.mu_y + &m.u * &md.mu_x;
    PldaModel::new(mu, vuh * ry, &m.u * rx, m.w.clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub md_step: bool,
    pub seed: u64,
    /// Stop once the relative objective change falls below this; 0 runs all
    /// iterations.
    pub rel_tol: f64,
    pub dims: ModelDims,
}

impl TrainConfig {
    pub fn new(dims: ModelDims) -> Self {
        TrainConfig {
            iters: 10,
            md_step: true,
            seed: 0,
            rel_tol: 0.0,
            dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.iters == 0 {
            return Err(Error::Invalid("iters must be at least 1".into()));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::Invalid("rel_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Converged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIters => "max_iters",
            StopReason::Converged => "converged",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Corpus log marginal after each iteration.
    pub objectives: Vec<f64>,
    /// Wall-clock seconds per iteration.
    pub seconds: Vec<f64>,
    pub stop: StopReason,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    objective: &'a [f64],
    iters: usize,
    stop: &'static str,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ReportJson {
            objective: &self.objectives,
            iters: self.objectives.len(),
            stop: self.stop.as_str(),
        })
        .expect("report serializes")
    }
}

/// What one EM iteration produced; passed to the observer of [`train_stats`].
pub struct IterationEvent<'a> {
    /// 1-based.
    pub iteration: usize,
    /// Model after the ML step, before any MD transform.
    pub ml_model: &'a PldaModel,
    pub md: Option<&'a MdParams>,
    pub model: &'a PldaModel,
    pub objective: f64,
}

/// Runs EM from raw (uncentered) statistics.
pub fn train_stats(
    gs: &GlobalStats,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&IterationEvent<'_>),
) -> Result<(PldaModel, TrainReport)> {
    cfg.validate()?;
    let mut model = init_model(gs, cfg.dims, cfg.seed)?;
    let mut objectives: Vec<f64> = Vec::with_capacity(cfg.iters);
    let mut seconds = Vec::with_capacity(cfg.iters);
    let mut stop = StopReason::MaxIters;
    for it in 1..=cfg.iters {
        let t0 = Instant::now();
        let centered = center_stats(gs, &model.mu)?;
        let acc = e_step(&model, &centered)?;
        let ml = m_step_ml(&acc, gs)?;
        let md = if cfg.md_step {
            Some(m_step_md(&acc)?)
        } else {
            None
        };
        let next = match &md {
            Some(p) => md_transform_model(&ml, p)?,
            None => ml.clone(),
        };
        let objective = corpus_log_marginal(&next, &center_stats(gs, &next.mu)?)?;
        if !objective.is_finite() {
            return Err(Error::Singular(format!(
                "objective is not finite at iteration {it}"
            )));
        }
        observe(&IterationEvent {
            iteration: it,
            ml_model: &ml,
            md: md.as_ref(),
            model: &next,
            objective,
        });
        seconds.push(t0.elapsed().as_secs_f64());
        model = next;
        if let Some(&prev) = objectives.last() {
            let slack = MONOTONICITY_SLACK * prev.abs();
            if objective < prev - slack {
                return Err(Error::NonMonotonic {
                    iteration: it,
                    previous: prev,
                    current: objective,
                    slack,
                });
            }
            objectives.push(objective);
            if (objective - prev).abs() < cfg.rel_tol * prev.abs() {
                stop = StopReason::Converged;
                break;
            }
        } else {
            objectives.push(objective);
        }
    }
    Ok((
        model,
        TrainReport {
            objectives,
            seconds,
            stop,
        },
    ))
}

/// Accumulates statistics and runs EM.
pub fn train(
    ivs: &IVectorSet,
    labels: &HierarchicalLabelling,
    cfg: &TrainConfig,
) -> Result<(PldaModel, TrainReport)> {
    let gs = accumulate_stats(ivs, labels)?;
    train_stats(&gs, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(d: usize, n_y: usize, n_x: usize) -> ModelDims {
        ModelDims { d, n_y, n_x }
    }

    fn toy_stats() -> GlobalStats {
        let pts = [
            ("a", "1", [1.0, 0.5]),
            ("a", "1", [0.8, 0.2]),
            ("a", "2", [1.3, -0.1]),
            ("b", "1", [-1.0, 0.3]),
            ("b", "2", [-0.7, 0.9]),
            ("c", "1", [0.1, -1.2]),
            ("c", "2", [0.4, -0.8]),
            ("c", "2", [0.2, -1.0]),
        ];
        let mut speakers = Vec::new();
        for spk in ["a", "b", "c"] {
            let mut sessions: Vec<(String, Vec<DVector<f64>>)> = Vec::new();
            for (_, j, v) in pts.iter().filter(|p| p.0 == spk) {
                let v = DVector::from_row_slice(v);
                match sessions.iter_mut().find(|x| x.0 == *j) {
                    Some(x) => x.1.push(v),
                    None => sessions.push((j.to_string(), vec![v])),
                }
            }
            let refs: Vec<(String, Vec<&DVector<f64>>)> = sessions
                .iter()
                .map(|(j, vs)| (j.clone(), vs.iter().collect()))
                .collect();
            speakers.push(SpeakerStats::from_sessions(spk, 2, &refs).unwrap());
        }
        GlobalStats::from_speakers(2, speakers)
    }

    #[test]
    fn prior_posteriors_without_loadings() {
        let gs = toy_stats();
        let m = PldaModel::new(
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let acc = e_step(&m, &center_stats(&gs, &m.mu).unwrap()).unwrap();
        assert_eq!(acc.ry, DMatrix::from_element(1, 1, gs.n as f64));
        assert_eq!(acc.ry1.amax(), 0.0);
        assert_eq!(acc.rxy.amax(), 0.0);
        assert_eq!(acc.rx, DMatrix::from_element(1, 1, gs.n as f64));
        assert_eq!(acc.rho_x, DMatrix::from_element(1, 1, gs.h as f64));
        assert_eq!((acc.n, acc.m, acc.h), (8, 3, 6));
    }

    #[test]
    fn scalar_single_recording_accumulators() {
        let (v, u, w, phi) = (0.7, 0.4, 2.0, 1.3);
        let m = PldaModel::new(
            DVector::zeros(1),
            DMatrix::from_element(1, 1, v),
            DMatrix::from_element(1, 1, u),
            DMatrix::from_element(1, 1, w),
        )
        .unwrap();
        let p = DVector::from_element(1, phi);
        let spk = SpeakerStats::from_sessions("s", 1, &[("a".into(), vec![&p])]).unwrap();
        let gs = GlobalStats::from_speakers(1, vec![spk]);
        let acc = e_step(&m, &gs).unwrap();

        // (y, x) jointly Gaussian with prior I and φ = v y + u x + ε.
        let var = v * v + u * u + 1.0 / w;
        let ey = v * phi / var;
        let ex = u * phi / var;
        let cyy = 1.0 - v * v / var;
        let cxx = 1.0 - u * u / var;
        let cxy = -u * v / var;
        let tol = 1e-13;
        assert!((acc.ry1[0] - ey).abs() < tol);
        assert!((acc.ry[(0, 0)] - (cyy + ey * ey)).abs() < tol);
        assert!((acc.rx1[0] - ex).abs() < tol);
        assert!((acc.rx[(0, 0)] - (cxx + ex * ex)).abs() < tol);
        assert!((acc.rxy[(0, 0)] - (cxy + ex * ey)).abs() < tol);
        assert!((acc.cy[(0, 0)] - phi * ey).abs() < tol);
        assert!((acc.cx[(0, 0)] - phi * ex).abs() < tol);
    }

    #[test]
    fn identity_r_tilde_returns_c() {
        let mut acc = EmAccumulators::zeros(dims(2, 1, 1));
        acc.ry = DMatrix::identity(1, 1);
        acc.rx = DMatrix::identity(1, 1);
        acc.n = 1;
        acc.cy = DMatrix::from_row_slice(2, 1, &[0.3, 0.4]);
        acc.cx = DMatrix::from_row_slice(2, 1, &[-0.1, 0.2]);
        acc.f = DVector::from_row_slice(&[0.5, -0.6]);
        assert_eq!(acc.r_tilde(), DMatrix::identity(3, 3));
        let mut gs = GlobalStats::from_speakers(2, vec![]);
        gs.n = 1;
        gs.s = DMatrix::identity(2, 2) * 4.0;
        let m = m_step_ml(&acc, &gs).unwrap();
        assert_eq!(m.v, acc.cy);
        assert_eq!(m.u, acc.cx);
        assert_eq!(m.mu, acc.f);
    }

    #[test]
    fn degenerate_data_is_singular() {
        // Every recording equal: the residual covariance collapses.
        let p = DVector::from_row_slice(&[1.0, 2.0]);
        let speakers = (0..3)
            .map(|i| {
                SpeakerStats::from_sessions(
                    format!("s{i}"),
                    2,
                    &[("a".into(), vec![&p]), ("b".into(), vec![&p])],
                )
                .unwrap()
            })
            .collect();
        let gs = GlobalStats::from_speakers(2, speakers);
        let m = PldaModel::new(
            DVector::zeros(2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 0),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let acc = e_step(&m, &gs).unwrap();
        assert!(matches!(m_step_ml(&acc, &gs), Err(Error::Singular(_))));
    }

    #[test]
    fn md_fixed_point() {
        let mut acc = EmAccumulators::zeros(dims(3, 2, 2));
        acc.m = 4;
        acc.h = 10;
        acc.sum_yy_t = DMatrix::identity(2, 2) * 4.0;
        acc.rho_y = DMatrix::identity(2, 2) * 10.0;
        acc.rho_x = DMatrix::identity(2, 2) * 10.0;
        let md = m_step_md(&acc).unwrap();
        assert_eq!(md, MdParams::identity(2, 2));
    }

    #[test]
    fn md_symmetric_pair_of_speakers() {
        let a = DVector::from_row_slice(&[0.5, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let mut acc = EmAccumulators::zeros(dims(2, 2, 0));
        acc.m = 2;
        acc.h = 2;
        acc.sum_ybar = &a - &a;
        acc.sum_yy_t = (&cov + outer(&a, &a)) * 2.0;
        let md = m_step_md(&acc).unwrap();
        assert_eq!(md.mu_y.amax(), 0.0);
        assert!((&md.sigma_y - (&cov + outer(&a, &a))).amax() < 1e-15);
    }

    #[test]
    fn md_requires_two_speakers() {
        let mut acc = EmAccumulators::zeros(dims(2, 1, 1));
        acc.m = 1;
        acc.h = 3;
        assert!(m_step_md(&acc).is_err());
    }

    #[test]
    fn identity_md_leaves_model_unchanged() {
        let m = PldaModel::new(
            DVector::from_row_slice(&[0.1, 0.2]),
            DMatrix::from_row_slice(2, 1, &[0.5, -0.3]),
            DMatrix::from_row_slice(2, 1, &[0.2, 0.9]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]),
        )
        .unwrap();
        let t = md_transform_model(&m, &MdParams::identity(1, 1)).unwrap();
        assert_eq!(t, m);
    }

    #[test]
    fn md_without_channels() {
        let m = PldaModel::new(
            DVector::from_row_slice(&[0.1, 0.2]),
            DMatrix::from_row_slice(2, 1, &[0.5, -0.3]),
            DMatrix::zeros(2, 0),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let md = MdParams {
            mu_y: DVector::from_element(1, 0.4),
            sigma_y: DMatrix::from_element(1, 1, 4.0),
            ..MdParams::identity(1, 0)
        };
        let t = md_transform_model(&m, &md).unwrap();
        assert!((&t.v - &m.v * 2.0).amax() < 1e-15);
        assert!((&t.mu - (&m.mu + &m.v * 0.4)).amax() < 1e-15);
        assert_eq!(t.u.ncols(), 0);
    }

    #[test]
    fn train_config_validation() {
        let mut cfg = TrainConfig::new(dims(2, 1, 1));
        cfg.iters = 0;
        assert!(cfg.validate().is_err());
        cfg.iters = 1;
        cfg.rel_tol = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_json_shape() {
        let r = TrainReport {
            objectives: vec![-3.5, -3.25],
            seconds: vec![0.1, 0.1],
            stop: StopReason::MaxIters,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["iters"], 2);
        assert_eq!(v["stop"], "max_iters");
        assert_eq!(v["objective"][1], -3.25);
    }
}
