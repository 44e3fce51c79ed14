//! Posterior of the speaker and channel factors for one speaker.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use plda2x::em::speaker_moments;
use plda2x::inference::{x_posterior_given_y, SharedPrecomp};
use plda2x::model::ModelDims;
use plda2x::oracle::speaker_stats_from_sessions;
use plda2x::synth::{sample_model, sample_speaker};

fn main() -> plda2x::Result<()> {
    let model = sample_model(ModelDims::new(5, 2, 2)?, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    // three sessions with 1, 2 and 3 channel recordings
    let design = [1, 2, 3];
    let sessions = sample_speaker(&model, &design, &mut rng)?;
    let spk = speaker_stats_from_sessions("alice", &model, &sessions)?;
    let sp = SharedPrecomp::new(&model, design)?;

    let (post, moments) = speaker_moments(&sp, &spk)?;
    println!("E[y]       = {}", row(post.ybar.iter().copied()));
    for r in 0..post.ycov.nrows() {
        let label = if r == 0 {
            "Cov[y]     ="
        } else {
            "            "
        };
        println!("{label} {}", row(post.ycov.row(r).iter().copied()));
    }
    for (j, m) in moments.iter().enumerate() {
        println!(
            "session {j} (L={}): E[x] = {}",
            design[j],
            row(m.ex.iter().copied())
        );
    }

    // channel posterior with the speaker factor pinned at zero
    let y0 = DVector::zeros(2);
    let xp = x_posterior_given_y(&sp, &spk.sessions[2], &y0)?;
    println!(
        "E[x | y=0] for the 3-channel session = {}",
        row(xp.xbar.iter().copied())
    );
    println!(
        "Cov[x | y] diagonal                  = {}",
        row(xp.cov()?.diagonal().iter().copied())
    );
    Ok(())
}

fn row(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter()
        .map(|x| format!("{x:8.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}
