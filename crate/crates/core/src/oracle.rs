//! Brute-force reference computations on dense joint Gaussians.
//!
//! The stacked recordings of one speaker are jointly Gaussian once the
//! latents are integrated out. The routines here build that joint explicitly
//! (latent prior, design matrix, residual blocks) and evaluate densities and
//! conditionals with LU decompositions, sharing no algebra with the closed
//! forms in [`crate::inference`] and [`crate::em`]. They are `O((N d)³)` and
//! meant for small designs only.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::em::{speaker_moments, MdParams};
use crate::error::{Error, Result};
use crate::inference::{
    log_q, speaker_log_marginal, speaker_posterior, x_posterior_given_y, SharedPrecomp,
};
use crate::linalg::rel_err;
use crate::model::{ModelDims, PldaModel};
use crate::scoring::llr;
use crate::stats::SpeakerStats;
use crate::synth::{sample_model, sample_speaker};

/// Largest stacked dimension `N_i · d` the oracle accepts.
pub const MAX_STACKED_DIM: usize = 64;

pub const MARGINAL_REL_TOL: f64 = 1e-6;
pub const POSTERIOR_ABS_TOL: f64 = 1e-8;
pub const LLR_REL_TOL: f64 = 1e-6;
pub const DECOMPOSITION_TOL: f64 = 1e-9;
pub const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Stacked Gaussian over the recordings of one speaker.
#[derive(Clone, Debug)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `(session, channel)` of each `d`-sized block.
    pub layout: Vec<(usize, usize)>,
    pub dim: usize,
}

/// Prior over `z = (y, x_1, …, x_H)` and the loading `A` with
/// `φ_stacked = 1⊗μ + A z + ε`.
struct LatentDesign {
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    loading: DMatrix<f64>,
    offset: DVector<f64>,
    resid: DMatrix<f64>,
    layout: Vec<(usize, usize)>,
}

fn lu_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("oracle: {what} is singular")))
}

fn latent_design(m: &PldaModel, prior: &MdParams, design: &[usize]) -> Result<LatentDesign> {
    let ModelDims { d, n_y, n_x } = m.dims();
    if design.contains(&0) {
        return Err(Error::Invalid(
            "oracle: sessions need at least one channel".into(),
        ));
    }
    let n: usize = design.iter().sum();
    if n * d > MAX_STACKED_DIM {
        return Err(Error::Invalid(format!(
            "oracle: stacked dimension {} exceeds the bound {MAX_STACKED_DIM}",
            n * d
        )));
    }
    let hs = design.len();
    let k = n_y + hs * n_x;

    let mut prior_mean = DVector::zeros(k);
    let mut prior_cov = DMatrix::zeros(k, k);
    prior_mean.rows_mut(0, n_y).copy_from(&prior.mu_y);
    prior_cov
        .view_mut((0, 0), (n_y, n_y))
        .copy_from(&prior.sigma_y);
    let hsy = &prior.h * &prior.sigma_y;
    let hsyh = &hsy * prior.h.transpose();
    let mx = &prior.h * &prior.mu_y + &prior.mu_x;
    for j in 0..hs {
        let oj = n_y + j * n_x;
        prior_mean.rows_mut(oj, n_x).copy_from(&mx);
        prior_cov.view_mut((oj, 0), (n_x, n_y)).copy_from(&hsy);
        prior_cov
            .view_mut((0, oj), (n_y, n_x))
            .copy_from(&hsy.transpose());
        for k2 in 0..hs {
            let ok = n_y + k2 * n_x;
            let mut blk = hsyh.clone();
            if j == k2 {
                blk += &prior.sigma_x;
            }
            prior_cov.view_mut((oj, ok), (n_x, n_x)).copy_from(&blk);
        }
    }

    let w_inv = lu_inverse(&m.w, "W")?;
    let mut loading = DMatrix::zeros(n * d, k);
    let mut offset = DVector::zeros(n * d);
    let mut resid = DMatrix::zeros(n * d, n * d);
    let mut layout = Vec::with_capacity(n);
    let mut r = 0;
    for (j, &l) in design.iter().enumerate() {
        for c in 0..l {
            loading.view_mut((r * d, 0), (d, n_y)).copy_from(&m.v);
            loading
                .view_mut((r * d, n_y + j * n_x), (d, n_x))
                .copy_from(&m.u);
            offset.rows_mut(r * d, d).copy_from(&m.mu);
            resid.view_mut((r * d, r * d), (d, d)).copy_from(&w_inv);
            layout.push((j, c));
            r += 1;
        }
    }
    Ok(LatentDesign {
        prior_mean,
        prior_cov,
        loading,
        offset,
        resid,
        layout,
    })
}

/// Joint density of a speaker's stacked recordings under the standard prior.
/// `design[j]` is the channel count of session `j`.
pub fn oracle_joint(m: &PldaModel, design: &[usize]) -> Result<JointGaussian> {
    let dims = m.dims();
    oracle_joint_with_prior(m, &MdParams::identity(dims.n_y, dims.n_x), design)
}

/// As [`oracle_joint`] with the general prior `y ~ N(μ_y, Σ_y)`,
/// `x | y ~ N(H y + μ_x, Σ_x)`.
pub fn oracle_joint_with_prior(
    m: &PldaModel,
    prior: &MdParams,
    design: &[usize],
) -> Result<JointGaussian> {
    let ld = latent_design(m, prior, design)?;
    let mean = &ld.offset + &ld.loading * &ld.prior_mean;
    let cov = &ld.loading * &ld.prior_cov * ld.loading.transpose() + &ld.resid;
    Ok(JointGaussian {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
        layout: ld.layout,
        dim: m.mu.len(),
    })
}

fn stack(observations: &[DVector<f64>], dim: usize) -> Result<DVector<f64>> {
    if observations.iter().any(|o| o.len() != dim) {
        return Err(Error::Dimension(
            "oracle: observation of wrong length".into(),
        ));
    }
    let mut v = DVector::zeros(observations.len() * dim);
    for (i, o) in observations.iter().enumerate() {
        v.rows_mut(i * dim, dim).copy_from(o);
    }
    Ok(v)
}

/// Dense log-density of the stacked observations (ordered as `jg.layout`).
pub fn oracle_log_marginal(jg: &JointGaussian, observations: &[DVector<f64>]) -> Result<f64> {
    if observations.len() != jg.layout.len() {
        return Err(Error::Dimension(format!(
            "oracle: {} observations for a design of {}",
            observations.len(),
            jg.layout.len()
        )));
    }
    let x = stack(observations, jg.dim)? - &jg.mean;
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let lu = jg.cov.clone().lu();
    let u = lu.u();
    let mut logdet = 0.0;
    let mut sign = lu.p().determinant::<f64>();
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Singular(
                "oracle: joint covariance is singular".into(),
            ));
        }
        sign *= d.signum();
        logdet += d.abs().ln();
    }
    if sign <= 0.0 {
        return Err(Error::Singular(
            "oracle: joint covariance is not positive definite".into(),
        ));
    }
    let sol = lu
        .solve(&x)
        .ok_or_else(|| Error::Singular("oracle: joint covariance is singular".into()))?;
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&sol)))
}

/// Exact posterior over `(y, x_1, …, x_H)` by Gaussian conditioning.
#[derive(Clone, Debug)]
pub struct LatentPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_y: usize,
    pub n_x: usize,
}

impl LatentPosterior {
    fn x_off(&self, j: usize) -> usize {
        self.n_y + j * self.n_x
    }

    pub fn num_sessions(&self) -> usize {
        (self.mean.len() - self.n_y)
            .checked_div(self.n_x)
            .unwrap_or(0)
    }

    pub fn y_mean(&self) -> DVector<f64> {
        self.mean.rows(0, self.n_y).into_owned()
    }

    pub fn y_cov(&self) -> DMatrix<f64> {
        self.cov.view((0, 0), (self.n_y, self.n_y)).into_owned()
    }

    /// `E[y yᵀ]`
    pub fn eyy(&self) -> DMatrix<f64> {
        let m = self.y_mean();
        self.y_cov() + &m * m.transpose()
    }

    pub fn x_mean(&self, j: usize) -> DVector<f64> {
        self.mean.rows(self.x_off(j), self.n_x).into_owned()
    }

    pub fn x_cov(&self, j: usize) -> DMatrix<f64> {
        let o = self.x_off(j);
        self.cov.view((o, o), (self.n_x, self.n_x)).into_owned()
    }

    /// `E[x_j yᵀ]`
    pub fn exy(&self, j: usize) -> DMatrix<f64> {
        let o = self.x_off(j);
        self.cov.view((o, 0), (self.n_x, self.n_y)).into_owned()
            + self.x_mean(j) * self.y_mean().transpose()
    }

    /// `E[x_j x_jᵀ]`
    pub fn exx(&self, j: usize) -> DMatrix<f64> {
        let m = self.x_mean(j);
        self.x_cov(j) + &m * m.transpose()
    }
}

/// Posterior of the latents given a speaker's stacked recordings, via
/// `E[z|φ] = m_z + Σ_z Aᵀ Σ_φ⁻¹ (φ − m_φ)`, `Cov[z|φ] = Σ_z − Σ_z Aᵀ Σ_φ⁻¹ A Σ_z`.
pub fn oracle_posterior(
    m: &PldaModel,
    design: &[usize],
    observations: &[DVector<f64>],
) -> Result<LatentPosterior> {
    let dims = m.dims();
    let prior = MdParams::identity(dims.n_y, dims.n_x);
    let ld = latent_design(m, &prior, design)?;
    if observations.len() != ld.layout.len() {
        return Err(Error::Dimension(
            "oracle: observation count does not match the design".into(),
        ));
    }
    let post = if observations.is_empty() {
        LatentPosterior {
            mean: ld.prior_mean.clone(),
            cov: ld.prior_cov.clone(),
            n_y: dims.n_y,
            n_x: dims.n_x,
        }
    } else {
        let phi = stack(observations, dims.d)?;
        let m_phi = &ld.offset + &ld.loading * &ld.prior_mean;
        let cross = &ld.prior_cov * ld.loading.transpose();
        let s_phi = &ld.loading * &cross + &ld.resid;
        let s_inv = lu_inverse(&s_phi, "joint covariance")?;
        let gain = &cross * s_inv;
        let mean = &ld.prior_mean + &gain * (phi - m_phi);
        let cov = &ld.prior_cov - &gain * cross.transpose();
        LatentPosterior {
            mean,
            cov: (&cov + cov.transpose()) * 0.5,
            n_y: dims.n_y,
            n_x: dims.n_x,
        }
    };
    Ok(post)
}

/// Posterior of one session's channel factor with `y` held fixed: the
/// speaker term is folded into the mean and the remaining model conditioned.
pub fn oracle_x_posterior_given_y(
    m: &PldaModel,
    y: &DVector<f64>,
    observations: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = m.mu.len();
    let shifted = PldaModel {
        mu: &m.mu + &m.v * y,
        v: DMatrix::zeros(d, 0),
        u: m.u.clone(),
        w: m.w.clone(),
    };
    let post = oracle_posterior(&shifted, &[observations.len()], observations)?;
    Ok((post.x_mean(0), post.x_cov(0)))
}

/// Centered speaker statistics from recordings grouped per session.
pub fn speaker_stats_from_sessions(
    id: &str,
    m: &PldaModel,
    sessions: &[Vec<DVector<f64>>],
) -> Result<SpeakerStats> {
    let refs: Vec<(String, Vec<&DVector<f64>>)> = sessions
        .iter()
        .enumerate()
        .map(|(j, recs)| (format!("{id}-{j}"), recs.iter().collect()))
        .collect();
    SpeakerStats::from_sessions(id, m.mu.len(), &refs)?.center(&m.mu)
}

fn flatten(sessions: &[Vec<DVector<f64>>]) -> Vec<DVector<f64>> {
    sessions.iter().flatten().cloned().collect()
}

fn design_of(sessions: &[Vec<DVector<f64>>]) -> Vec<usize> {
    sessions.iter().map(Vec::len).collect()
}

/// Parameters of an adjudication run.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    /// Fixed dimensions, or `None` to draw `d ∈ 1..=6` and
    /// `n_y, n_x ∈ 0..=min(3, d)` per instance.
    pub dims: Option<ModelDims>,
    pub instances: usize,
    pub seed: u64,
    pub max_sessions: usize,
    pub max_channels: usize,
}

impl VerifyConfig {
    pub fn sweep(instances: usize, seed: u64) -> Self {
        VerifyConfig {
            dims: None,
            instances,
            seed,
            max_sessions: 3,
            max_channels: 3,
        }
    }
}

/// Worst deviations between the closed-form and the oracle routes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub instances: usize,
    /// Speaker log marginal, relative.
    pub marginal_rel: f64,
    /// `ȳ`, `Λy⁻¹`, `E[x]`, `E[x yᵀ]`, `E[x xᵀ]` and the conditional `x | y`, absolute.
    pub posterior_abs: f64,
    /// LLR against the oracle marginal ratio, relative.
    pub llr_rel: f64,
    /// `llr(a, b)` against `ln Q(a∪b) − ln Q(a) − ln Q(b)`, absolute.
    pub decomposition_abs: f64,
    /// `llr(a, b)` against `llr(b, a)`, relative.
    pub symmetry_rel: f64,
}

impl VerifyReport {
    /// `(name, deviation, tolerance)` per check.
    pub fn checks(&self) -> [(&'static str, f64, f64); 5] {
        [
            ("marginal (rel)", self.marginal_rel, MARGINAL_REL_TOL),
            (
                "posterior moments (abs)",
                self.posterior_abs,
                POSTERIOR_ABS_TOL,
            ),
            ("llr vs oracle (rel)", self.llr_rel, LLR_REL_TOL),
            (
                "llr decomposition (abs)",
                self.decomposition_abs,
                DECOMPOSITION_TOL,
            ),
            ("llr symmetry (rel)", self.symmetry_rel, SYMMETRY_REL_TOL),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|(_, dev, tol)| *dev <= *tol)
    }
}

fn max_abs_diff_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn max_abs_diff_m(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn random_design(rng: &mut ChaCha8Rng, max_sessions: usize, max_channels: usize) -> Vec<usize> {
    let h = rng.random_range(1..=max_sessions);
    (0..h).map(|_| rng.random_range(1..=max_channels)).collect()
}

/// Runs every adjudication check over seeded random instances.
pub fn verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.instances == 0 || cfg.max_sessions == 0 || cfg.max_channels == 0 {
        return Err(Error::Invalid(
            "verification needs positive instance, session and channel counts".into(),
        ));
    }
    if let Some(dims) = cfg.dims {
        dims.validate()?;
        let worst = cfg.max_sessions * cfg.max_channels * dims.d;
        if worst > MAX_STACKED_DIM {
            return Err(Error::Invalid(format!(
                "design too large for the oracle: up to {worst} stacked dimensions (bound {MAX_STACKED_DIM})"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = VerifyReport {
        instances: cfg.instances,
        ..Default::default()
    };
    for _ in 0..cfg.instances {
        let dims = match cfg.dims {
            Some(d) => d,
            None => {
                let d = rng.random_range(1..=6);
                let cap = d.min(3);
                ModelDims {
                    d,
                    n_y: rng.random_range(0..=cap),
                    n_x: rng.random_range(0..=cap),
                }
            }
        };
        let model = sample_model(dims, rng.random())?;
        let design = random_design(&mut rng, cfg.max_sessions, cfg.max_channels);
        let sessions = sample_speaker(&model, &design, &mut rng)?;
        let spk = speaker_stats_from_sessions("a", &model, &sessions)?;
        let sp = SharedPrecomp::new(&model, design.iter().copied())?;

        // marginal
        let analytic = speaker_log_marginal(&sp, &spk)?;
        let joint = oracle_joint(&model, &design)?;
        let dense = oracle_log_marginal(&joint, &flatten(&sessions))?;
        rep.marginal_rel = rep.marginal_rel.max(rel_err(analytic, dense));

        // posterior moments
        let (post, moments) = speaker_moments(&sp, &spk)?;
        let orc = oracle_posterior(&model, &design, &flatten(&sessions))?;
        let mut dev =
            max_abs_diff_v(&post.ybar, &orc.y_mean()).max(max_abs_diff_m(&post.ycov, &orc.y_cov()));
        for (j, mo) in moments.iter().enumerate() {
            dev = dev
                .max(max_abs_diff_v(&mo.ex, &orc.x_mean(j)))
                .max(max_abs_diff_m(&mo.exy, &orc.exy(j)))
                .max(max_abs_diff_m(&mo.exx, &orc.exx(j)));
        }
        let y: DVector<f64> = DVector::from_fn(dims.n_y, |_, _| rng.random_range(-1.0..1.0));
        let xp = x_posterior_given_y(&sp, &spk.sessions[0], &y)?;
        let (ox_mean, ox_cov) = oracle_x_posterior_given_y(&model, &y, &sessions[0])?;
        dev = dev
            .max(max_abs_diff_v(&xp.xbar, &ox_mean))
            .max(max_abs_diff_m(&xp.cov()?, &ox_cov));
        rep.posterior_abs = rep.posterior_abs.max(dev);

        // llr: two sides of at most 2 sessions × 2 channels each
        let side_sessions = cfg.max_sessions.min(2);
        let side_channels = cfg.max_channels.min(2);
        let da = random_design(&mut rng, side_sessions, side_channels);
        let db = random_design(&mut rng, side_sessions, side_channels);
        let same = rng.random_bool(0.5);
        let (sa, sb) = if same {
            let mut both: Vec<usize> = da.clone();
            both.extend(&db);
            let all = sample_speaker(&model, &both, &mut rng)?;
            (all[..da.len()].to_vec(), all[da.len()..].to_vec())
        } else {
            (
                sample_speaker(&model, &da, &mut rng)?,
                sample_speaker(&model, &db, &mut rng)?,
            )
        };
        let a = speaker_stats_from_sessions("a", &model, &sa)?;
        let b = speaker_stats_from_sessions("b", &model, &sb)?;
        let sp2 = SharedPrecomp::new(&model, da.iter().chain(&db).copied())?;
        let s_ab = llr(&sp2, &a, &b)?;
        let s_ba = llr(&sp2, &b, &a)?;
        let union = a.union(&b, "ab");
        let via_q = log_q(&sp2, &union)? - log_q(&sp2, &a)? - log_q(&sp2, &b)?;
        let mut both_design = design_of(&sa);
        both_design.extend(design_of(&sb));
        let mut both_obs = flatten(&sa);
        both_obs.extend(flatten(&sb));
        let oracle_llr = oracle_log_marginal(&oracle_joint(&model, &both_design)?, &both_obs)?
            - oracle_log_marginal(&oracle_joint(&model, &design_of(&sa))?, &flatten(&sa))?
            - oracle_log_marginal(&oracle_joint(&model, &design_of(&sb))?, &flatten(&sb))?;
        rep.llr_rel = rep.llr_rel.max(rel_err(s_ab, oracle_llr));
        rep.decomposition_abs = rep.decomposition_abs.max((s_ab - via_q).abs());
        rep.symmetry_rel = rep.symmetry_rel.max(rel_err(s_ab, s_ba));

        // sanity: posterior is SPD and finite
        let _ = speaker_posterior(&sp, &spk)?;
    }
    Ok(rep)
}
