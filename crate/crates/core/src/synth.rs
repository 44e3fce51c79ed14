//! Seeded corpora drawn from a known model.
//!
//! All draws come from one `ChaCha8Rng` per call, consumed in a fixed order
//! (speaker factor, then per session the channel factor and the residual of
//! each channel), so a seed fully determines the output.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{HierarchicalLabelling, IVectorSet, LabelEntry, Trial, TrialKey, TrialList};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{ModelDims, PldaModel};

/// Generator description recorded in corpus file comments.
pub const GENERATOR: &str =
    "ChaCha8Rng (rand_chacha 0.9), standard normals via rand_distr::StandardNormal";

/// Eigenvalue range of sampled `W`; the condition number is at most 100.
pub const W_EIGEN_RANGE: (f64, f64) = (1.0, 100.0);

/// A count that is either fixed or cycles through a list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Count {
    Const(usize),
    Cycle(Vec<usize>),
}

impl Count {
    pub fn at(&self, i: usize) -> usize {
        match self {
            Count::Const(c) => *c,
            Count::Cycle(v) => v[i % v.len()],
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            Count::Const(c) => *c >= 1,
            Count::Cycle(v) => !v.is_empty() && v.iter().all(|&c| c >= 1),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "{what} counts must all be at least 1"
            )))
        }
    }
}

impl From<usize> for Count {
    fn from(c: usize) -> Self {
        Count::Const(c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthDesign {
    pub speakers: usize,
    /// Sessions of speaker `i` are `sessions.at(i)`.
    pub sessions: Count,
    /// Channels of the `k`-th session overall are `channels.at(k)`.
    pub channels: Count,
    pub seed: u64,
    /// Prepended to every speaker id.
    pub prefix: String,
}

impl SynthDesign {
    pub fn new(speakers: usize, sessions: usize, channels: usize, seed: u64) -> Self {
        SynthDesign {
            speakers,
            sessions: Count::Const(sessions),
            channels: Count::Const(channels),
            seed,
            prefix: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 {
            return Err(Error::Invalid(
                "synthetic design needs at least one speaker".into(),
            ));
        }
        self.sessions.validate("session")?;
        self.channels.validate("channel")
    }
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn standard_normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    // row-major fill so the draw order does not depend on storage layout
    let vals: Vec<f64> = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(r, c, &vals)
}

/// Random ground-truth model: standard normal `μ`, loadings with entries
/// `N(0, 1/n)`, and `W = Q diag(λ) Qᵀ` with `Q` a random orthogonal matrix and
/// `λ` log-uniform over [`W_EIGEN_RANGE`].
pub fn sample_model(dims: ModelDims, seed: u64) -> Result<PldaModel> {
    dims.validate()?;
    let ModelDims { d, n_y, n_x } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = standard_normal_vec(&mut rng, d);
    let v = standard_normal_mat(&mut rng, d, n_y) / (n_y.max(1) as f64).sqrt();
    let u = standard_normal_mat(&mut rng, d, n_x) / (n_x.max(1) as f64).sqrt();

    let q = standard_normal_mat(&mut rng, d, d).qr().q();
    let (lo, hi) = W_EIGEN_RANGE;
    let lambda = DVector::from_fn(d, |_, _| {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    });
    let w = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    PldaModel::new(mu, v, u, (&w + w.transpose()) * 0.5)
}

/// Draws residuals `ε ~ N(0, W⁻¹)` as `(Lᵀ)⁻¹ z` with `W = L Lᵀ`.
struct ResidualSampler {
    lt_inv: DMatrix<f64>,
}

impl ResidualSampler {
    fn new(m: &PldaModel) -> Result<Self> {
        let l = SpdFactor::new(&m.w, "W")?.lower();
        let lt_inv = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
            .ok_or_else(|| Error::Singular("Cholesky factor of W is singular".into()))?;
        Ok(ResidualSampler { lt_inv })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        &self.lt_inv * standard_normal_vec(rng, self.lt_inv.nrows())
    }
}

fn draw_speaker(
    m: &PldaModel,
    eps: &ResidualSampler,
    design: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<DVector<f64>>> {
    let dims = m.dims();
    let y = standard_normal_vec(rng, dims.n_y);
    let base = &m.mu + &m.v * y;
    design
        .iter()
        .map(|&l| {
            let x = standard_normal_vec(rng, dims.n_x);
            let sess = &base + &m.u * x;
            (0..l).map(|_| &sess + eps.draw(rng)).collect()
        })
        .collect()
}

/// Recordings of one new speaker; `design[j]` is the channel count of
/// session `j`. The channel factor is shared by the channels of a session.
pub fn sample_speaker(
    m: &PldaModel,
    design: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let eps = ResidualSampler::new(m)?;
    Ok(draw_speaker(m, &eps, design, rng))
}

fn speaker_id(prefix: &str, i: usize) -> String {
    format!("{prefix}spk{i:05}")
}

/// Training corpus with hierarchical labels.
pub fn sample_corpus(
    m: &PldaModel,
    design: &SynthDesign,
) -> Result<(IVectorSet, HierarchicalLabelling)> {
    design.validate()?;
    let eps = ResidualSampler::new(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let mut ivs = IVectorSet::new(m.mu.len())?;
    let mut entries = Vec::new();
    let mut k = 0;
    for i in 0..design.speakers {
        let spk = speaker_id(&design.prefix, i);
        let layout: Vec<usize> = (0..design.sessions.at(i))
            .map(|_| {
                k += 1;
                design.channels.at(k - 1)
            })
            .collect();
        for (j, recs) in draw_speaker(m, &eps, &layout, &mut rng)
            .into_iter()
            .enumerate()
        {
            let session = format!("{spk}-s{j:02}");
            for (c, phi) in recs.into_iter().enumerate() {
                let utt = format!("{session}-c{c:02}");
                ivs.push(utt.clone(), phi)?;
                entries.push(LabelEntry {
                    utt,
                    speaker: spk.clone(),
                    session: session.clone(),
                });
            }
        }
    }
    let labels = HierarchicalLabelling::new(entries, &ivs)?;
    Ok((ivs, labels))
}

/// Held-out verification set: every speaker gets `enroll_utts` single-channel
/// enrollment sessions and one test utterance from a further session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalDesign {
    pub speakers: usize,
    pub enroll_utts: usize,
    /// Each model is tried against the tests of the next this-many speakers.
    pub nontargets_per_model: usize,
    pub seed: u64,
    pub prefix: String,
}

impl EvalDesign {
    pub fn new(
        speakers: usize,
        enroll_utts: usize,
        nontargets_per_model: usize,
        seed: u64,
    ) -> Self {
        EvalDesign {
            speakers,
            enroll_utts,
            nontargets_per_model,
            seed,
            prefix: "eval-".into(),
        }
    }
}

/// Evaluation i-vectors and keyed trials for [`EvalDesign`].
pub fn sample_eval(m: &PldaModel, design: &EvalDesign) -> Result<(IVectorSet, TrialList)> {
    if design.speakers < 2 || design.enroll_utts == 0 {
        return Err(Error::Invalid(
            "evaluation design needs 2+ speakers and 1+ enrollment utterances".into(),
        ));
    }
    if design.nontargets_per_model >= design.speakers {
        return Err(Error::Invalid(format!(
            "{} nontargets per model need more than {} speakers",
            design.nontargets_per_model, design.speakers
        )));
    }
    let eps = ResidualSampler::new(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let mut ivs = IVectorSet::new(m.mu.len())?;
    let mut list = TrialList::default();
    let mut tests = Vec::with_capacity(design.speakers);
    let layout = vec![1; design.enroll_utts + 1];
    for i in 0..design.speakers {
        let spk = speaker_id(&design.prefix, i);
        let mut utts = Vec::new();
        for (j, mut recs) in draw_speaker(m, &eps, &layout, &mut rng)
            .into_iter()
            .enumerate()
        {
            let id = if j < design.enroll_utts {
                format!("{spk}-enr{j:02}")
            } else {
                format!("{spk}-test")
            };
            ivs.push(id.clone(), recs.remove(0))?;
            utts.push(id);
        }
        tests.push(utts.pop().expect("test utterance"));
        list.enroll.insert(spk, utts);
    }
    let models: Vec<String> = list.enroll.keys().cloned().collect();
    for (i, model) in models.iter().enumerate() {
        list.trials.push(Trial {
            model_id: model.clone(),
            test_id: tests[i].clone(),
            key: Some(TrialKey::Target),
        });
        for k in 1..=design.nontargets_per_model {
            list.trials.push(Trial {
                model_id: model.clone(),
                test_id: tests[(i + k) % design.speakers].clone(),
                key: Some(TrialKey::Nontarget),
            });
        }
    }
    Ok((ivs, list))
}

/// Comment lines describing how a corpus was generated.
pub fn corpus_comments(what: &str, seed: u64) -> Vec<String> {
    vec![format!("{what}; generator: {GENERATOR}; seed {seed}")]
}
