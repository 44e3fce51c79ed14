//! Closed-form speaker marginal likelihood against the dense joint Gaussian.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use plda2x::inference::{log_q, speaker_log_marginal, SharedPrecomp};
use plda2x::model::ModelDims;
use plda2x::oracle::{oracle_joint, oracle_log_marginal, speaker_stats_from_sessions};
use plda2x::synth::{sample_model, sample_speaker};

fn main() -> plda2x::Result<()> {
    let model = sample_model(ModelDims::new(4, 2, 1)?, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let design = [2, 1, 3];
    let sessions = sample_speaker(&model, &design, &mut rng)?;

    let spk = speaker_stats_from_sessions("s", &model, &sessions)?;
    let sp = SharedPrecomp::new(&model, design)?;
    let closed = speaker_log_marginal(&sp, &spk)?;

    let flat: Vec<DVector<f64>> = sessions.into_iter().flatten().collect();
    let joint = oracle_joint(&model, &design)?;
    let dense = oracle_log_marginal(&joint, &flat)?;

    println!("closed form   {closed:.12}");
    println!(
        "dense {:>2}x{:<2}  {dense:.12}",
        joint.cov.nrows(),
        joint.cov.ncols()
    );
    println!("difference    {:.2e}", (closed - dense).abs());
    println!("ln Q          {:.6}", log_q(&sp, &spk)?);
    Ok(())
}
