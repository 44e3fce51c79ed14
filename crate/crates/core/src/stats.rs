//! Zero-, first- and second-order statistics per session, per speaker and
//! over the whole corpus, raw and centered.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::datamodel::{HierarchicalLabelling, IVectorSet, SpeakerGroup};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, symmetrize};

/// Statistics of the channel recordings of one session.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionStats {
    pub id: String,
    /// Number of channel recordings, `L_ij ≥ 1`.
    pub l: usize,
    /// `F_ij = Σ_l φ_ijl`
    pub f: DVector<f64>,
    /// `F̄_ij = F_ij − L_ij μ`
    pub fbar: DVector<f64>,
}

/// Statistics of all recordings of one speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerStats {
    pub id: String,
    pub n: usize,
    pub f: DVector<f64>,
    pub s: DMatrix<f64>,
    pub fbar: DVector<f64>,
    pub sbar: DMatrix<f64>,
    pub sessions: Vec<SessionStats>,
}

impl SpeakerStats {
    /// Stats of a speaker with no recordings.
    pub fn empty(id: impl Into<String>, dim: usize) -> Self {
        SpeakerStats {
            id: id.into(),
            n: 0,
            f: DVector::zeros(dim),
            s: DMatrix::zeros(dim, dim),
            fbar: DVector::zeros(dim),
            sbar: DMatrix::zeros(dim, dim),
            sessions: Vec::new(),
        }
    }

    /// Raw statistics from explicit sessions; each inner slice holds the
    /// channel recordings of one session.
    pub fn from_sessions(
        id: impl Into<String>,
        dim: usize,
        sessions: &[(String, Vec<&DVector<f64>>)],
    ) -> Result<Self> {
        let mut spk = SpeakerStats::empty(id, dim);
        for (sid, recs) in sessions {
            if recs.is_empty() {
                return Err(Error::Invalid(format!("session '{sid}' has no recordings")));
            }
            let mut f = DVector::zeros(dim);
            for phi in recs {
                if phi.len() != dim {
                    return Err(Error::Dimension(format!(
                        "recording of length {} in session '{sid}', expected {dim}",
                        phi.len()
                    )));
                }
                f += *phi;
                spk.s.ger(1.0, phi, phi, 1.0);
            }
            spk.n += recs.len();
            spk.f += &f;
            spk.sessions.push(SessionStats {
                id: sid.clone(),
                l: recs.len(),
                fbar: f.clone(),
                f,
            });
        }
        spk.fbar = spk.f.clone();
        spk.sbar = spk.s.clone();
        Ok(spk)
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// `H_i`
    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Recenters around `mu`, recomputing every barred quantity from the raw sums.
    pub fn center(&self, mu: &DVector<f64>) -> Result<SpeakerStats> {
        if mu.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "centering vector has length {}, statistics have dimension {}",
                mu.len(),
                self.dim()
            )));
        }
        let n = self.n as f64;
        let mf = mu * self.f.transpose();
        let sbar = symmetrize(&(&self.s - &mf - mf.transpose() + mu * mu.transpose() * n));
        let sessions = self
            .sessions
            .iter()
            .map(|ses| SessionStats {
                fbar: &ses.f - mu * ses.l as f64,
                ..ses.clone()
            })
            .collect();
        Ok(SpeakerStats {
            fbar: &self.f - mu * n,
            sbar,
            sessions,
            ..self.clone()
        })
    }

    /// Union of two speakers' recordings, keeping their sessions distinct.
    pub fn union(&self, other: &SpeakerStats, id: impl Into<String>) -> SpeakerStats {
        let mut sessions = self.sessions.clone();
        sessions.extend(other.sessions.iter().cloned());
        SpeakerStats {
            id: id.into(),
            n: self.n + other.n,
            f: &self.f + &other.f,
            s: &self.s + &other.s,
            fbar: &self.fbar + &other.fbar,
            sbar: &self.sbar + &other.sbar,
            sessions,
        }
    }
}

/// Corpus statistics and their per-speaker breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalStats {
    pub n: usize,
    pub f: DVector<f64>,
    pub fbar: DVector<f64>,
    pub s: DMatrix<f64>,
    pub sbar: DMatrix<f64>,
    /// Number of speakers.
    pub m: usize,
    /// Total number of sessions.
    pub h: usize,
    pub speakers: Vec<SpeakerStats>,
}

impl GlobalStats {
    /// Sums per-speaker statistics in the given order.
    pub fn from_speakers(dim: usize, speakers: Vec<SpeakerStats>) -> Self {
        let mut gs = GlobalStats {
            n: 0,
            f: DVector::zeros(dim),
            fbar: DVector::zeros(dim),
            s: DMatrix::zeros(dim, dim),
            sbar: DMatrix::zeros(dim, dim),
            m: speakers.len(),
            h: 0,
            speakers: Vec::new(),
        };
        for spk in &speakers {
            gs.n += spk.n;
            gs.h += spk.num_sessions();
            gs.f += &spk.f;
            gs.fbar += &spk.fbar;
            gs.s += &spk.s;
            gs.sbar += &spk.sbar;
        }
        gs.speakers = speakers;
        gs
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    /// Speaker-wise concatenation of two corpora with disjoint speaker ids.
    pub fn merge(&self, other: &GlobalStats) -> Result<GlobalStats> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(
                "merging statistics of different dimension".into(),
            ));
        }
        let mut speakers: Vec<SpeakerStats> = self
            .speakers
            .iter()
            .chain(&other.speakers)
            .cloned()
            .collect();
        speakers.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = speakers.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Invalid(format!(
                "speaker '{}' present in both sets",
                w[0].id
            )));
        }
        Ok(GlobalStats::from_speakers(self.dim(), speakers))
    }
}

fn speaker_stats(group: &SpeakerGroup, ivs: &IVectorSet) -> Result<SpeakerStats> {
    let sessions = group
        .sessions
        .iter()
        .map(|ses| {
            let recs = ses
                .utts
                .iter()
                .map(|u| {
                    ivs.get(u)
                        .ok_or_else(|| Error::Invalid(format!("unknown utterance id '{u}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((ses.id.clone(), recs))
        })
        .collect::<Result<Vec<_>>>()?;
    let spk = SpeakerStats::from_sessions(group.id.clone(), ivs.dim(), &sessions)?;
    debug_assert!(asymmetry(&spk.s) <= 1e-12);
    Ok(spk)
}

/// Raw (uncentered) statistics; barred fields equal the raw ones until
/// [`center_stats`] is applied.
pub fn accumulate_stats(ivs: &IVectorSet, labels: &HierarchicalLabelling) -> Result<GlobalStats> {
    let speakers = labels
        .speakers()
        .par_iter()
        .map(|g| speaker_stats(g, ivs))
        .collect::<Result<Vec<_>>>()?;
    let gs = GlobalStats::from_speakers(ivs.dim(), speakers);
    let asym = asymmetry(&gs.s);
    if asym > 1e-12 {
        return Err(Error::Invalid(format!(
            "second-order statistics asymmetric by {asym:e}"
        )));
    }
    Ok(gs)
}

/// Centered statistics at every level around `mu`.
pub fn center_stats(gs: &GlobalStats, mu: &DVector<f64>) -> Result<GlobalStats> {
    let speakers = gs
        .speakers
        .iter()
        .map(|s| s.center(mu))
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalStats::from_speakers(gs.dim(), speakers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::LabelEntry;

    fn corpus(rows: &[(&str, &str, &str, &[f64])]) -> (IVectorSet, HierarchicalLabelling) {
        let dim = rows[0].3.len();
        let mut ivs = IVectorSet::new(dim).unwrap();
        let mut entries = Vec::new();
        for (u, s, j, v) in rows {
            ivs.push(*u, DVector::from_row_slice(v)).unwrap();
            entries.push(LabelEntry {
                utt: u.to_string(),
                speaker: s.to_string(),
                session: j.to_string(),
            });
        }
        let labels = HierarchicalLabelling::new(entries, &ivs).unwrap();
        (ivs, labels)
    }

    #[test]
    fn single_observation() {
        let (ivs, l) = corpus(&[("u1", "s", "a", &[1.0, 2.0])]);
        let gs = accumulate_stats(&ivs, &l).unwrap();
        assert_eq!(gs.n, 1);
        assert_eq!(gs.f.as_slice(), &[1.0, 2.0]);
        assert_eq!(gs.s, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn two_channels_one_session() {
        let (ivs, l) = corpus(&[("u1", "s", "a", &[1.0, 0.0]), ("u2", "s", "a", &[1.0, 0.0])]);
        let gs = accumulate_stats(&ivs, &l).unwrap();
        let ses = &gs.speakers[0].sessions[0];
        assert_eq!(ses.l, 2);
        assert_eq!(ses.f.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn zero_centering_is_identity() {
        let (ivs, l) = corpus(&[
            ("u1", "s", "a", &[1.0, 0.5]),
            ("u2", "s", "b", &[-1.0, 3.0]),
            ("u3", "t", "a", &[0.2, 0.1]),
        ]);
        let gs = accumulate_stats(&ivs, &l).unwrap();
        let c = center_stats(&gs, &DVector::zeros(2)).unwrap();
        for (a, b) in gs.speakers.iter().zip(&c.speakers) {
            assert_eq!(a.fbar, b.fbar);
            assert_eq!(a.sbar, b.sbar);
        }
        assert_eq!(c.fbar, gs.f);
    }

    #[test]
    fn centering_on_the_only_point_zeroes_everything() {
        let (ivs, l) = corpus(&[("u1", "s", "a", &[1.5, -2.0])]);
        let gs = accumulate_stats(&ivs, &l).unwrap();
        let c = center_stats(&gs, &DVector::from_row_slice(&[1.5, -2.0])).unwrap();
        assert_eq!(c.fbar.amax(), 0.0);
        assert_eq!(c.sbar.amax(), 0.0);
        assert_eq!(c.speakers[0].sessions[0].fbar.amax(), 0.0);
    }

    #[test]
    fn centering_dimension_mismatch() {
        let (ivs, l) = corpus(&[("u1", "s", "a", &[1.5, -2.0])]);
        let gs = accumulate_stats(&ivs, &l).unwrap();
        assert!(matches!(
            center_stats(&gs, &DVector::zeros(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn union_keeps_sessions_apart() {
        let a = DVector::from_row_slice(&[1.0]);
        let b = DVector::from_row_slice(&[2.0]);
        let x = SpeakerStats::from_sessions("x", 1, &[("a".into(), vec![&a])]).unwrap();
        let y = SpeakerStats::from_sessions("y", 1, &[("a".into(), vec![&b, &b])]).unwrap();
        let u = x.union(&y, "xy");
        assert_eq!(u.n, 3);
        assert_eq!(u.num_sessions(), 2);
        assert_eq!(u.f[0], 5.0);
        assert_eq!(u.s[(0, 0)], 9.0);
    }
}
