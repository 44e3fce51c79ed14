//! One ML update followed by a minimum-divergence step: the re-estimated
//! latent prior is folded into the loadings, and the corpus marginal of the
//! folded model equals that of the ML model under the re-estimated prior.

use nalgebra::DVector;

use plda2x::em::{e_step, m_step_md, m_step_ml, md_transform_model};
use plda2x::inference::corpus_log_marginal;
use plda2x::model::{init_model, ModelDims};
use plda2x::oracle::{oracle_joint_with_prior, oracle_log_marginal};
use plda2x::stats::{accumulate_stats, center_stats};
use plda2x::synth::{sample_corpus, sample_model, SynthDesign};

fn main() -> plda2x::Result<()> {
    let dims = ModelDims::new(4, 2, 1)?;
    let truth = sample_model(dims, 5)?;
    let (ivs, labels) = sample_corpus(&truth, &SynthDesign::new(40, 3, 2, 6))?;
    let gs = accumulate_stats(&ivs, &labels)?;

    let init = init_model(&gs, dims, 0)?;
    let acc = e_step(&init, &center_stats(&gs, &init.mu)?)?;
    let ml = m_step_ml(&acc, &gs)?;
    let md = m_step_md(&acc)?;
    println!("mu_y    = {}", row(md.mu_y.iter().copied()));
    for r in 0..md.sigma_y.nrows() {
        println!(
            "{} {}",
            if r == 0 { "Sigma_y =" } else { "         " },
            row(md.sigma_y.row(r).iter().copied())
        );
    }
    println!("H       = {}", row(md.h.iter().copied()));

    let folded = md_transform_model(&ml, &md)?;
    let closed = corpus_log_marginal(&folded, &center_stats(&gs, &folded.mu)?)?;
    let mut dense = 0.0;
    for spk in labels.speakers() {
        let design: Vec<usize> = spk.sessions.iter().map(|s| s.utts.len()).collect();
        let obs: Vec<DVector<f64>> = spk
            .sessions
            .iter()
            .flat_map(|s| s.utts.iter().map(|u| ivs.get(u).unwrap().clone()))
            .collect();
        dense += oracle_log_marginal(&oracle_joint_with_prior(&ml, &md, &design)?, &obs)?;
    }
    let plain = corpus_log_marginal(&ml, &center_stats(&gs, &ml.mu)?)?;
    println!("ML model, standard prior        {plain:.8}");
    println!("ML model, re-estimated prior    {dense:.8}");
    println!("folded model, standard prior    {closed:.8}");
    Ok(())
}

fn row(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter()
        .map(|x| format!("{x:8.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}
