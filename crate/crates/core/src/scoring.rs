//! Plug-in log-likelihood-ratio scoring of verification trials.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::datamodel::{read_file, write_file, IVectorSet, Trial, TrialKey, TrialList};
use crate::error::{Error, Result};
use crate::inference::{speaker_posterior, SharedPrecomp, SpeakerPosterior};
use crate::linalg::SpdFactor;
use crate::model::PldaModel;
use crate::stats::SpeakerStats;

/// How the utterances of a multi-utterance enrollment are grouped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SessionPolicy {
    /// Every enrollment utterance is its own session with one channel.
    #[default]
    IndependentSessions,
    /// All enrollment utterances are channels of a single session.
    OneSession,
}

impl SessionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionPolicy::IndependentSessions => "independent-sessions",
            SessionPolicy::OneSession => "one-session",
        }
    }
}

impl FromStr for SessionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent-sessions" => Ok(SessionPolicy::IndependentSessions),
            "one-session" => Ok(SessionPolicy::OneSession),
            _ => Err(Error::Invalid(format!(
                "unknown session policy '{s}' (expected independent-sessions or one-session)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub model_id: String,
    pub test_id: String,
    /// Natural-log likelihood ratio.
    pub llr: f64,
    /// `llr + ln(P_tar / P_non)` when a target prior was supplied.
    pub posterior_log_odds: Option<f64>,
    pub key: Option<TrialKey>,
}

impl ScoreRecord {
    /// The value written to score files.
    pub fn score(&self) -> f64 {
        self.posterior_log_odds.unwrap_or(self.llr)
    }
}

/// LLR between two sets given their speaker posteriors:
///
/// ```text
/// ½( ln|Λ₁| + ln|Λ₂| − ln|Λ₃| + 2γ₁ᵀΛ₃⁻¹γ₂ + γ₁ᵀ(Λ₃⁻¹ − Λ₁⁻¹)γ₁ + γ₂ᵀ(Λ₃⁻¹ − Λ₂⁻¹)γ₂ )
/// ```
///
/// with `γ₃ = γ₁ + γ₂` and `Λ₃ = Λ₁ + Λ₂ − I`.
pub fn llr_from_posteriors(p1: &SpeakerPosterior, p2: &SpeakerPosterior) -> Result<f64> {
    let n = p1.ly.nrows();
    if p2.ly.nrows() != n {
        return Err(Error::Dimension("posteriors of different dimension".into()));
    }
    let l3 = &p1.ly + &p2.ly - DMatrix::<f64>::identity(n, n);
    let f3 = SpdFactor::new(&l3, "Λ₃")?;
    let g13 = f3.solve_vec(&p1.gamma);
    let g23 = f3.solve_vec(&p2.gamma);
    let cross = p1.gamma.dot(&g23) + p2.gamma.dot(&g13);
    let own = (p1.gamma.dot(&g13) - p1.gamma_quad()) + (p2.gamma.dot(&g23) - p2.gamma_quad());
    Ok(0.5 * ((p1.ly_logdet + p2.ly_logdet) - f3.logdet() + cross + own))
}

/// LLR of same-speaker vs different-speaker for two centered statistic sets.
pub fn llr(sp: &SharedPrecomp, a: &SpeakerStats, b: &SpeakerStats) -> Result<f64> {
    llr_from_posteriors(&speaker_posterior(sp, a)?, &speaker_posterior(sp, b)?)
}

/// `llr + ln(p_tar / (1 − p_tar))`.
pub fn apply_prior_odds(llr: f64, p_tar: f64) -> Result<f64> {
    if !(p_tar > 0.0 && p_tar < 1.0) {
        return Err(Error::Invalid(format!(
            "p_tar must lie in (0, 1), got {p_tar}"
        )));
    }
    Ok(llr + (p_tar / (1.0 - p_tar)).ln())
}

fn enrollment_stats(
    model_id: &str,
    utts: &[String],
    ivs: &IVectorSet,
    policy: SessionPolicy,
    mu: &DVector<f64>,
) -> Result<SpeakerStats> {
    let vecs = utts
        .iter()
        .map(|u| {
            ivs.get(u)
                .ok_or_else(|| Error::Invalid(format!("missing utterance '{u}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sessions: Vec<(String, Vec<&DVector<f64>>)> = match policy {
        SessionPolicy::IndependentSessions => utts
            .iter()
            .cloned()
            .zip(vecs.into_iter().map(|v| vec![v]))
            .collect(),
        SessionPolicy::OneSession => vec![(model_id.to_string(), vecs)],
    };
    SpeakerStats::from_sessions(model_id, ivs.dim(), &sessions)?.center(mu)
}

/// Statistics of an enrollment model under `policy`, centered with `mu`.
pub fn enrollment_speaker_stats(
    model_id: &str,
    trials: &TrialList,
    ivs: &IVectorSet,
    policy: SessionPolicy,
    mu: &DVector<f64>,
) -> Result<SpeakerStats> {
    let utts = trials
        .enroll
        .get(model_id)
        .ok_or_else(|| Error::Invalid(format!("model '{model_id}' has no enrollment")))?;
    enrollment_stats(model_id, utts, ivs, policy, mu)
}

/// Scores every trial; output order follows `trials.trials`.
pub fn score_trials(
    m: &PldaModel,
    ivs: &IVectorSet,
    trials: &TrialList,
    policy: SessionPolicy,
    p_tar: Option<f64>,
) -> Result<Vec<ScoreRecord>> {
    if ivs.dim() != m.mu.len() {
        return Err(Error::Dimension(format!(
            "i-vectors have dimension {}, model has {}",
            ivs.dim(),
            m.mu.len()
        )));
    }
    if let Some(p) = p_tar {
        apply_prior_odds(0.0, p)?;
    }
    trials.validate(ivs)?;
    if trials.trials.is_empty() {
        return Ok(Vec::new());
    }

    let mut counts = vec![1usize];
    if policy == SessionPolicy::OneSession {
        counts.extend(trials.enroll.values().map(Vec::len));
    }
    let sp = SharedPrecomp::new(m, counts)?;

    let models: Vec<&String> = {
        let mut v: Vec<&String> = trials.trials.iter().map(|t| &t.model_id).collect();
        v.sort();
        v.dedup();
        v
    };
    let model_posts: HashMap<&str, SpeakerPosterior> = models
        .par_iter()
        .map(|id| {
            let stats = enrollment_stats(id, &trials.enroll[*id], ivs, policy, &m.mu)?;
            Ok((id.as_str(), speaker_posterior(&sp, &stats)?))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let tests: Vec<&String> = {
        let mut v: Vec<&String> = trials.trials.iter().map(|t| &t.test_id).collect();
        v.sort();
        v.dedup();
        v
    };
    let test_posts: HashMap<&str, SpeakerPosterior> = tests
        .par_iter()
        .map(|id| {
            let stats = enrollment_stats(
                id,
                std::slice::from_ref(*id),
                ivs,
                SessionPolicy::OneSession,
                &m.mu,
            )?;
            Ok((id.as_str(), speaker_posterior(&sp, &stats)?))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    trials
        .trials
        .par_iter()
        .map(|t| {
            let llr = llr_from_posteriors(
                &model_posts[t.model_id.as_str()],
                &test_posts[t.test_id.as_str()],
            )?;
            if !llr.is_finite() {
                return Err(Error::Singular(format!(
                    "non-finite score for trial {} {}",
                    t.model_id, t.test_id
                )));
            }
            Ok(ScoreRecord {
                model_id: t.model_id.clone(),
                test_id: t.test_id.clone(),
                llr,
                posterior_log_odds: p_tar.map(|p| apply_prior_odds(llr, p)).transpose()?,
                key: t.key,
            })
        })
        .collect()
}

/// Score-file text: a metadata comment, then `<model> <test> <score>` with
/// 12 significant digits.
pub fn scores_to_text(
    records: &[ScoreRecord],
    policy: SessionPolicy,
    p_tar: Option<f64>,
) -> String {
    let mut out = String::new();
    let ptar = p_tar.map_or_else(|| "none".to_string(), |p| p.to_string());
    let _ = writeln!(
        out,
        "# plda2x scores policy={} ptar={ptar}",
        policy.as_str()
    );
    for r in records {
        let _ = writeln!(out, "{} {} {:.11e}", r.model_id, r.test_id, r.score());
    }
    out
}

pub fn save_scores(
    path: impl AsRef<Path>,
    records: &[ScoreRecord],
    policy: SessionPolicy,
    p_tar: Option<f64>,
) -> Result<()> {
    write_file(path.as_ref(), &scores_to_text(records, policy, p_tar))
}

/// Parses a score file; keys are left empty.
pub fn parse_scores(text: &str, name: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        let [model, test, score] = toks[..] else {
            return Err(Error::parse(
                name,
                i + 1,
                "expected '<model_id> <test_id> <score>'",
            ));
        };
        let llr: f64 = score
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(name, i + 1, format!("bad score '{score}'")))?;
        out.push(ScoreRecord {
            model_id: model.into(),
            test_id: test.into(),
            llr,
            posterior_log_odds: None,
            key: None,
        });
    }
    Ok(out)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_scores(&read_file(path)?, &path.display().to_string())
}

/// Attaches keys from `trials` by `(model_id, test_id)`.
pub fn attach_keys(records: &mut [ScoreRecord], trials: &[Trial]) -> Result<()> {
    let keys: HashMap<(&str, &str), Option<TrialKey>> = trials
        .iter()
        .map(|t| ((t.model_id.as_str(), t.test_id.as_str()), t.key))
        .collect();
    for r in records.iter_mut() {
        match keys.get(&(r.model_id.as_str(), r.test_id.as_str())) {
            Some(k) => r.key = *k,
            None => {
                return Err(Error::Invalid(format!(
                    "no key for trial {} {}",
                    r.model_id, r.test_id
                )))
            }
        }
    }
    Ok(())
}

/// Equal error rate of keyed records, see [`eer`].
pub fn compute_eer(scores: &[ScoreRecord]) -> Result<f64> {
    let mut tar = Vec::new();
    let mut non = Vec::new();
    for r in scores {
        match r.key {
            Some(TrialKey::Target) => tar.push(r.score()),
            Some(TrialKey::Nontarget) => non.push(r.score()),
            None => {
                return Err(Error::Invalid(format!(
                    "trial {} {} has no key",
                    r.model_id, r.test_id
                )))
            }
        }
    }
    eer(&tar, &non)
}

/// `(P_miss, P_fa)` operating points of a threshold sweep, from accepting
/// everything to rejecting everything. Tied scores move together.
pub fn roc_points(tar: &[f64], non: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, bool)> = tar
        .iter()
        .map(|&s| (s, true))
        .chain(non.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let (mut miss, mut fa) = (0usize, non.len());
    let mut pts = vec![(0.0, 1.0)];
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        pts.push((miss as f64 / nt, fa as f64 / nn));
    }
    pts
}

/// Equal error rate on the convex hull of the ROC: the point where
/// `P_miss = P_fa`, interpolating linearly between hull vertices.
pub fn eer(tar: &[f64], non: &[f64]) -> Result<f64> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::Invalid(
            "EER needs at least one target and one nontarget score".into(),
        ));
    }
    if tar.iter().chain(non).any(|s| !s.is_finite()) {
        return Err(Error::Invalid("non-finite score".into()));
    }
    let mut pts = roc_points(tar, non);
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    for w in hull.windows(2) {
        let (p, q) = (w[0], w[1]);
        let (fp, fq) = (p.1 - p.0, q.1 - q.0);
        if fp >= 0.0 && fq <= 0.0 {
            if fp == fq {
                return Ok(p.0);
            }
            let alpha = fp / (fp - fq);
            return Ok(p.0 + alpha * (q.0 - p.0));
        }
    }
    // Single-vertex hull on the diagonal.
    Ok(hull[0].0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_odds() {
        assert_eq!(apply_prior_odds(1.25, 0.5).unwrap(), 1.25);
        assert!((apply_prior_odds(0.0, 0.9).unwrap() - 9.0_f64.ln()).abs() < 1e-15);
        let x = apply_prior_odds(-0.3, 0.2).unwrap();
        assert_eq!(apply_prior_odds(x, 0.5).unwrap(), x);
        assert!(apply_prior_odds(0.0, 0.0).is_err());
        assert!(apply_prior_odds(0.0, 1.0).is_err());
        assert!(apply_prior_odds(0.0, f64::NAN).is_err());
    }

    #[test]
    fn eer_reference_cases() {
        assert_eq!(eer(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(eer(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert!((eer(&[2.0, 0.0], &[1.0, -1.0]).unwrap() - 0.25).abs() < 1e-15);
        // Reversed scores: the hull falls back to the chance diagonal.
        assert_eq!(eer(&[0.0], &[1.0]).unwrap(), 0.5);
        assert!(eer(&[], &[1.0]).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "one-session".parse::<SessionPolicy>().unwrap(),
            SessionPolicy::OneSession
        );
        assert_eq!(
            "independent-sessions".parse::<SessionPolicy>().unwrap(),
            SessionPolicy::IndependentSessions
        );
        assert!("both".parse::<SessionPolicy>().is_err());
    }

    #[test]
    fn score_text_round_trip() {
        let recs = vec![ScoreRecord {
            model_id: "m".into(),
            test_id: "t".into(),
            llr: -1.0 / 3.0,
            posterior_log_odds: None,
            key: None,
        }];
        let text = scores_to_text(&recs, SessionPolicy::IndependentSessions, None);
        assert!(text.starts_with("# plda2x scores policy=independent-sessions ptar=none\n"));
        assert!(text.contains("m t -3.33333333333e-1"));
        let back = parse_scores(&text, "s").unwrap();
        assert!((back[0].llr + 1.0 / 3.0).abs() < 1e-12);
    }
}
