//! Observation sets, the speaker → session → channel labelling, and trial
//! lists, together with their text formats.
//!
//! All formats are whitespace-separated UTF-8; blank lines and lines whose
//! first non-blank character is `#` are ignored.
//!
//! * i-vectors: a `dim <d>` header, then `<utt_id> v1 .. vd` per line.
//! * labels: `<utt_id> <speaker_id> <session_id>` per line. Every line is one
//!   recording; recordings sharing `(speaker_id, session_id)` are the channels
//!   of one session.
//! * enrollment: `<model_id> <utt_id>+`.
//! * trials: `<model_id> <test_utt_id> [tar|non]`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') {
            None
        } else {
            Some((i + 1, t))
        }
    })
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// An ordered set of labelled-by-id observation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct IVectorSet {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<DVector<f64>>,
    index: HashMap<String, usize>,
}

impl IVectorSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("i-vector dimension must be positive".into()));
        }
        Ok(IVectorSet {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn push(&mut self, id: impl Into<String>, v: DVector<f64>) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "vector '{id}' has length {}, expected {}",
                v.len(),
                self.dim
            )));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Invalid(format!(
                "vector '{id}' has non-finite entries"
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Invalid(format!("duplicate utterance id '{id}'")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DVector<f64>> {
        self.index.get(id).map(|&i| &self.vectors[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DVector<f64>)> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter())
    }

    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(name, 1, "missing 'dim <d>' header"))?;
        let mut toks = header.split_whitespace();
        let dim = match (toks.next(), toks.next(), toks.next()) {
            (Some("dim"), Some(d), None) => {
                d.parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(|| {
                    Error::parse(
                        name,
                        hline,
                        format!("malformed header: bad dimension '{d}'"),
                    )
                })?
            }
            _ => {
                return Err(Error::parse(
                    name,
                    hline,
                    "malformed header: expected 'dim <d>'",
                ))
            }
        };
        let mut set = IVectorSet::new(dim)?;
        for (lineno, line) in lines {
            let mut toks = line.split_whitespace();
            let id = toks.next().expect("content lines are non-empty");
            let vals = toks
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(name, lineno, format!("bad number '{t}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != dim {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!(
                        "ragged row at line {lineno}: {} values, expected {dim}",
                        vals.len()
                    ),
                ));
            }
            if let Some(bad) = vals.iter().find(|v| !v.is_finite()) {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("non-finite value {bad}"),
                ));
            }
            if set.contains(id) {
                return Err(Error::parse(name, lineno, format!("duplicate id '{id}'")));
            }
            set.push(id, DVector::from_vec(vals))?;
        }
        Ok(set)
    }

    /// Text form; `comments` become leading `# ` lines.
    pub fn to_text(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "dim {}", self.dim);
        for (id, v) in self.iter() {
            out.push_str(id);
            for x in v.iter() {
                let _ = write!(out, " {x:e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_ivectors(path: impl AsRef<Path>) -> Result<IVectorSet> {
    let path = path.as_ref();
    IVectorSet::parse(&read_file(path)?, &path.display().to_string())
}

pub fn save_ivectors(path: impl AsRef<Path>, set: &IVectorSet, comments: &[String]) -> Result<()> {
    write_file(path.as_ref(), &set.to_text(comments))
}

/// One labels-file line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelEntry {
    pub utt: String,
    pub speaker: String,
    pub session: String,
}

/// Utterances of one session, i.e. its channel recordings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionGroup {
    pub id: String,
    pub utts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerGroup {
    pub id: String,
    pub sessions: Vec<SessionGroup>,
}

impl SpeakerGroup {
    /// `N_i`
    pub fn num_recordings(&self) -> usize {
        self.sessions.iter().map(|s| s.utts.len()).sum()
    }
}

/// Partition of utterances into speakers and sessions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierarchicalLabelling {
    entries: Vec<LabelEntry>,
    groups: Vec<SpeakerGroup>,
}

impl HierarchicalLabelling {
    /// Validates `entries` against `ivs` and builds the hierarchy. Speakers are
    /// ordered by id, sessions by id within a speaker, and channels by their
    /// order of appearance.
    pub fn new(entries: Vec<LabelEntry>, ivs: &IVectorSet) -> Result<Self> {
        let mut seen = HashMap::new();
        for (k, e) in entries.iter().enumerate() {
            if !ivs.contains(&e.utt) {
                return Err(Error::Invalid(format!("unknown utterance id '{}'", e.utt)));
            }
            if seen.insert(e.utt.as_str(), k).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate utterance id '{}'",
                    e.utt
                )));
            }
        }
        let mut tree: BTreeMap<&str, BTreeMap<&str, Vec<String>>> = BTreeMap::new();
        for e in &entries {
            tree.entry(e.speaker.as_str())
                .or_default()
                .entry(e.session.as_str())
                .or_default()
                .push(e.utt.clone());
        }
        let groups = tree
            .into_iter()
            .map(|(spk, sessions)| SpeakerGroup {
                id: spk.to_string(),
                sessions: sessions
                    .into_iter()
                    .map(|(ses, utts)| SessionGroup {
                        id: ses.to_string(),
                        utts,
                    })
                    .collect(),
            })
            .collect();
        Ok(HierarchicalLabelling { entries, groups })
    }

    pub fn parse(text: &str, name: &str, ivs: &IVectorSet) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (lineno, line) in content_lines(text) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let [utt, speaker, session] = toks[..] else {
                return Err(Error::parse(
                    name,
                    lineno,
                    "expected '<utt_id> <speaker_id> <session_id>'",
                ));
            };
            if !ivs.contains(utt) {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("unknown utterance id '{utt}'"),
                ));
            }
            if let Some(prev) = seen.insert(utt.to_string(), lineno) {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("duplicate utterance id '{utt}' (first seen at line {prev})"),
                ));
            }
            entries.push(LabelEntry {
                utt: utt.into(),
                speaker: speaker.into(),
                session: session.into(),
            });
        }
        Self::new(entries, ivs)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {}", e.utt, e.speaker, e.session);
        }
        out
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn speakers(&self) -> &[SpeakerGroup] {
        &self.groups
    }

    /// `M`
    pub fn num_speakers(&self) -> usize {
        self.groups.len()
    }

    /// `H = Σ_i H_i`
    pub fn num_sessions(&self) -> usize {
        self.groups.iter().map(|g| g.sessions.len()).sum()
    }

    /// `N`
    pub fn num_recordings(&self) -> usize {
        self.entries.len()
    }
}

pub fn load_labels(path: impl AsRef<Path>, ivs: &IVectorSet) -> Result<HierarchicalLabelling> {
    let path = path.as_ref();
    HierarchicalLabelling::parse(&read_file(path)?, &path.display().to_string(), ivs)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &HierarchicalLabelling) -> Result<()> {
    write_file(path.as_ref(), &labels.to_text())
}

/// Ground-truth key of a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrialKey {
    Target,
    Nontarget,
}

impl TrialKey {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialKey::Target => "tar",
            TrialKey::Nontarget => "non",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub model_id: String,
    pub test_id: String,
    pub key: Option<TrialKey>,
}

/// Enrollment map plus the trials to score against it.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TrialList {
    pub enroll: BTreeMap<String, Vec<String>>,
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn parse(enroll_text: &str, trials_text: &str, names: (&str, &str)) -> Result<Self> {
        let (enroll_name, trials_name) = names;
        let mut enroll = BTreeMap::new();
        for (lineno, line) in content_lines(enroll_text) {
            let mut toks = line.split_whitespace();
            let model = toks.next().expect("content lines are non-empty");
            let utts: Vec<String> = toks.map(str::to_string).collect();
            if utts.is_empty() {
                return Err(Error::parse(
                    enroll_name,
                    lineno,
                    format!("model '{model}' has an empty enrollment list"),
                ));
            }
            if enroll.insert(model.to_string(), utts).is_some() {
                return Err(Error::parse(
                    enroll_name,
                    lineno,
                    format!("duplicate model id '{model}'"),
                ));
            }
        }
        let mut trials = Vec::new();
        for (lineno, trial) in trial_lines(trials_text, trials_name)? {
            if !enroll.contains_key(&trial.model_id) {
                return Err(Error::parse(
                    trials_name,
                    lineno,
                    format!("model '{}' has no enrollment", trial.model_id),
                ));
            }
            trials.push(trial);
        }
        Ok(TrialList { enroll, trials })
    }

    /// Checks every referenced utterance exists in `ivs`.
    pub fn validate(&self, ivs: &IVectorSet) -> Result<()> {
        for (model, utts) in &self.enroll {
            if utts.is_empty() {
                return Err(Error::Invalid(format!(
                    "model '{model}' has an empty enrollment list"
                )));
            }
            if let Some(u) = utts.iter().find(|u| !ivs.contains(u)) {
                return Err(Error::Invalid(format!(
                    "enrollment of '{model}' references missing utterance '{u}'"
                )));
            }
        }
        for t in &self.trials {
            if !self.enroll.contains_key(&t.model_id) {
                return Err(Error::Invalid(format!(
                    "model '{}' has no enrollment",
                    t.model_id
                )));
            }
            if !ivs.contains(&t.test_id) {
                return Err(Error::Invalid(format!(
                    "trial references missing utterance '{}'",
                    t.test_id
                )));
            }
        }
        Ok(())
    }

    pub fn enroll_text(&self) -> String {
        let mut out = String::new();
        for (m, utts) in &self.enroll {
            let _ = writeln!(out, "{m} {}", utts.join(" "));
        }
        out
    }

    pub fn trials_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            match t.key {
                Some(k) => {
                    let _ = writeln!(out, "{} {} {}", t.model_id, t.test_id, k.as_str());
                }
                None => {
                    let _ = writeln!(out, "{} {}", t.model_id, t.test_id);
                }
            }
        }
        out
    }
}

fn trial_lines(text: &str, name: &str) -> Result<Vec<(usize, Trial)>> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let (model, test, key) = match toks[..] {
            [m, t] => (m, t, None),
            [m, t, "tar"] => (m, t, Some(TrialKey::Target)),
            [m, t, "non"] => (m, t, Some(TrialKey::Nontarget)),
            [_, _, k] => {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("bad key '{k}', expected 'tar' or 'non'"),
                ))
            }
            _ => {
                return Err(Error::parse(
                    name,
                    lineno,
                    "expected '<model_id> <test_id> [tar|non]'",
                ))
            }
        };
        out.push((
            lineno,
            Trial {
                model_id: model.into(),
                test_id: test.into(),
                key,
            },
        ));
    }
    Ok(out)
}

/// Parses a trial list on its own, without enrollment checks.
pub fn parse_trials(text: &str, name: &str) -> Result<Vec<Trial>> {
    Ok(trial_lines(text, name)?
        .into_iter()
        .map(|(_, t)| t)
        .collect())
}

pub fn load_trial_keys(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    parse_trials(&read_file(path)?, &path.display().to_string())
}

/// Loads trial and enrollment files and validates them against `ivs`.
pub fn load_trials(
    trials_path: impl AsRef<Path>,
    enroll_path: impl AsRef<Path>,
    ivs: &IVectorSet,
) -> Result<TrialList> {
    let (tp, ep) = (trials_path.as_ref(), enroll_path.as_ref());
    let list = TrialList::parse(
        &read_file(ep)?,
        &read_file(tp)?,
        (&ep.display().to_string(), &tp.display().to_string()),
    )?;
    list.validate(ivs)?;
    Ok(list)
}
