//! Acceptance suite. Runs every criterion at its pinned tolerance, prints one
//! PASS/FAIL line each and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plda2x::datamodel::{HierarchicalLabelling, IVectorSet};
use plda2x::em::{e_step, m_step_ml, ml_auxiliary, train_stats, TrainConfig};
use plda2x::linalg::rel_err;
use plda2x::model::{ModelDims, PldaModel};
use plda2x::oracle::{
    oracle_joint_with_prior, oracle_log_marginal, verify, VerifyConfig, DECOMPOSITION_TOL,
    LLR_REL_TOL, MARGINAL_REL_TOL, POSTERIOR_ABS_TOL, SYMMETRY_REL_TOL,
};
use plda2x::scoring::{compute_eer, score_trials, scores_to_text, SessionPolicy};
use plda2x::stats::{accumulate_stats, center_stats, GlobalStats};
use plda2x::synth::{sample_corpus, sample_eval, sample_model, EvalDesign, SynthDesign};

const SWEEP_INSTANCES: usize = 100;
const SWEEP_SEED: u64 = 11;

const CORPUS_DIMS: ModelDims = ModelDims {
    d: 8,
    n_y: 3,
    n_x: 2,
};
const TRUTH_SEED: u64 = 2024;
const CORPUS_SEED: u64 = 2025;
const EVAL_SEED: u64 = 2026;
const TRAIN_SEED: u64 = 7;
const EM_ITERS: usize = 50;
const MONOTONE_SLACK: f64 = 1e-8;

const MD_INVARIANCE_TOL: f64 = 1e-6;
const STATIONARITY_INSTANCES: usize = 20;
const STATIONARITY_TOL: f64 = 1e-5;
const TRUTH_EER_MAX: f64 = 0.05;
const TRAINED_EER_GAP: f64 = 0.02;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn record(
    id: usize,
    name: &'static str,
    t0: Instant,
    result: Result<(bool, String), String>,
) -> Outcome {
    let (pass, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome {
        id,
        name,
        pass,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn corpus() -> (PldaModel, IVectorSet, HierarchicalLabelling) {
    let truth = sample_model(CORPUS_DIMS, TRUTH_SEED).expect("truth model");
    let (ivs, labels) =
        sample_corpus(&truth, &SynthDesign::new(200, 4, 2, CORPUS_SEED)).expect("corpus");
    (truth, ivs, labels)
}

/// Recordings of each speaker grouped by session, in label order.
fn grouped(
    ivs: &IVectorSet,
    labels: &HierarchicalLabelling,
) -> Vec<(Vec<usize>, Vec<DVector<f64>>)> {
    labels
        .speakers()
        .iter()
        .map(|spk| {
            let design = spk.sessions.iter().map(|s| s.utts.len()).collect();
            let obs = spk
                .sessions
                .iter()
                .flat_map(|s| {
                    s.utts
                        .iter()
                        .map(|u| ivs.get(u).expect("labelled utterance").clone())
                })
                .collect();
            (design, obs)
        })
        .collect()
}

struct TrainRun {
    objectives: Vec<f64>,
    md_worst: f64,
    model: PldaModel,
}

fn train_with_md_check(
    gs: &GlobalStats,
    groups: &[(Vec<usize>, Vec<DVector<f64>>)],
) -> Result<TrainRun, String> {
    let cfg = TrainConfig {
        iters: EM_ITERS,
        seed: TRAIN_SEED,
        ..TrainConfig::new(CORPUS_DIMS)
    };
    let mut md_worst = 0.0_f64;
    let mut oracle_err = None;
    let (model, rep) = train_stats(gs, &cfg, |ev| {
        let md = ev.md.expect("MD step enabled");
        let mut dense = 0.0;
        for (design, obs) in groups {
            let jg = match oracle_joint_with_prior(ev.ml_model, md, design) {
                Ok(j) => j,
                Err(e) => {
                    oracle_err = Some(e.to_string());
                    return;
                }
            };
            match oracle_log_marginal(&jg, obs) {
                Ok(v) => dense += v,
                Err(e) => {
                    oracle_err = Some(e.to_string());
                    return;
                }
            }
        }
        md_worst = md_worst.max(rel_err(ev.objective, dense));
    })
    .map_err(|e| e.to_string())?;
    if let Some(e) = oracle_err {
        return Err(e);
    }
    Ok(TrainRun {
        objectives: rep.objectives,
        md_worst,
        model,
    })
}

fn monotone(objectives: &[f64]) -> (bool, f64) {
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for w in objectives.windows(2) {
        let step = w[1] - w[0];
        worst = worst.min(step);
        if step < -MONOTONE_SLACK * w[0].abs() {
            ok = false;
        }
    }
    (ok, worst)
}

/// Largest central-difference partial derivative of the ML auxiliary
/// function at the M-step output, over the loadings and the precision.
fn stationarity_instance(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=4);
    let dims = ModelDims {
        d,
        n_y: rng.random_range(1..=d.min(2)),
        n_x: rng.random_range(0..=d.min(2)),
    };
    let model = sample_model(dims, rng.random()).map_err(|e| e.to_string())?;
    let design = SynthDesign::new(
        rng.random_range(6..=12),
        rng.random_range(2..=3),
        rng.random_range(1..=2),
        rng.random(),
    );
    let (ivs, labels) = sample_corpus(&model, &design).map_err(|e| e.to_string())?;
    let gs = accumulate_stats(&ivs, &labels).map_err(|e| e.to_string())?;
    let centered = center_stats(&gs, &model.mu).map_err(|e| e.to_string())?;
    let acc = e_step(&model, &centered).map_err(|e| e.to_string())?;
    let ml = m_step_ml(&acc, &gs).map_err(|e| e.to_string())?;

    let mut vt = DMatrix::zeros(d, dims.n_y + dims.n_x + 1);
    vt.columns_mut(0, dims.n_y).copy_from(&ml.v);
    vt.columns_mut(dims.n_y, dims.n_x).copy_from(&ml.u);
    vt.column_mut(dims.n_y + dims.n_x).copy_from(&ml.mu);
    let q =
        |vt: &DMatrix<f64>, w: &DMatrix<f64>| ml_auxiliary(&acc, &gs.s, vt, w).expect("auxiliary");

    let h = 1e-4;
    let mut worst = 0.0_f64;
    for idx in 0..vt.len() {
        let (mut p, mut m) = (vt.clone(), vt.clone());
        p[idx] += h;
        m[idx] -= h;
        worst = worst.max(((q(&p, &ml.w) - q(&m, &ml.w)) / (2.0 * h)).abs());
    }
    for r in 0..d {
        for c in r..d {
            let (mut p, mut m) = (ml.w.clone(), ml.w.clone());
            p[(r, c)] += h;
            m[(r, c)] -= h;
            if r != c {
                p[(c, r)] += h;
                m[(c, r)] -= h;
            }
            worst = worst.max(((q(&vt, &p) - q(&vt, &m)) / (2.0 * h)).abs());
        }
    }
    Ok(worst)
}

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

fn main() -> ExitCode {
    let mut out = Vec::new();

    // 1, 2, 6: closed forms against dense oracles over a random sweep
    let t0 = Instant::now();
    let sweep = verify(&VerifyConfig::sweep(SWEEP_INSTANCES, SWEEP_SEED));
    let secs = t0.elapsed().as_secs_f64();
    match sweep {
        Ok(rep) => {
            out.push(Outcome {
                id: 1,
                name: "oracle marginal equivalence",
                pass: rep.marginal_rel <= MARGINAL_REL_TOL,
                detail: format!(
                    "max rel {:.2e} (tol {MARGINAL_REL_TOL:.0e}), {SWEEP_INSTANCES} instances",
                    rep.marginal_rel
                ),
                seconds: secs,
            });
            out.push(Outcome {
                id: 2,
                name: "oracle posterior equivalence",
                pass: rep.posterior_abs <= POSTERIOR_ABS_TOL,
                detail: format!(
                    "max abs {:.2e} (tol {POSTERIOR_ABS_TOL:.0e})",
                    rep.posterior_abs
                ),
                seconds: secs,
            });
            out.push(Outcome {
                id: 6,
                name: "llr consistency",
                pass: rep.decomposition_abs <= DECOMPOSITION_TOL
                    && rep.llr_rel <= LLR_REL_TOL
                    && rep.symmetry_rel <= SYMMETRY_REL_TOL,
                detail: format!(
                    "decomposition {:.2e} (tol {DECOMPOSITION_TOL:.0e}), oracle rel {:.2e} (tol {LLR_REL_TOL:.0e}), symmetry rel {:.2e} (tol {SYMMETRY_REL_TOL:.0e})",
                    rep.decomposition_abs, rep.llr_rel, rep.symmetry_rel
                ),
                seconds: secs,
            });
        }
        Err(e) => {
            for (id, name) in [
                (1, "oracle marginal equivalence"),
                (2, "oracle posterior equivalence"),
                (6, "llr consistency"),
            ] {
                out.push(Outcome {
                    id,
                    name,
                    pass: false,
                    detail: format!("error: {e}"),
                    seconds: secs,
                });
            }
        }
    }

    // 3, 4: EM on the synthetic corpus, with the MD step checked every iteration
    let (truth, ivs, labels) = corpus();
    let gs = accumulate_stats(&ivs, &labels).expect("statistics");
    let groups = grouped(&ivs, &labels);
    let t0 = Instant::now();
    let run = train_with_md_check(&gs, &groups);
    let secs_md = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let plain = train_stats(
        &gs,
        &TrainConfig {
            iters: EM_ITERS,
            md_step: false,
            seed: TRAIN_SEED,
            ..TrainConfig::new(CORPUS_DIMS)
        },
        |_| {},
    );
    let secs_plain = t0.elapsed().as_secs_f64();
    let trained = run.as_ref().ok().map(|r| r.model.clone());
    out.push(Outcome {
        id: 3,
        name: "EM monotonicity",
        pass: false,
        detail: String::new(),
        seconds: secs_plain,
    });
    let o3 = out.last_mut().unwrap();
    match (&run, &plain) {
        (Ok(r), Ok((_, rep))) => {
            let (ok_md, worst_md) = monotone(&r.objectives);
            let (ok_plain, worst_plain) = monotone(&rep.objectives);
            o3.pass = ok_md
                && ok_plain
                && r.objectives.len() == EM_ITERS
                && rep.objectives.len() == EM_ITERS;
            o3.detail = format!(
                "{EM_ITERS} iters; smallest step {worst_md:.3e} (MD on), {worst_plain:.3e} (MD off); final objective {:.6e}",
                r.objectives.last().unwrap()
            );
        }
        (Err(e), _) => o3.detail = format!("error (MD on): {e}"),
        (_, Err(e)) => o3.detail = format!("error (MD off): {e}"),
    }
    out.push(record(
        4,
        "MD invariance",
        Instant::now(),
        run.as_ref().map_err(String::clone).map(|r| {
            (
                r.md_worst <= MD_INVARIANCE_TOL,
                format!(
                    "max rel {:.2e} (tol {MD_INVARIANCE_TOL:.0e}) over {EM_ITERS} MD steps",
                    r.md_worst
                ),
            )
        }),
    ));
    out.last_mut().unwrap().seconds = secs_md;

    // 5: stationarity of the ML auxiliary function
    let t0 = Instant::now();
    let worst: Result<f64, String> = (0..STATIONARITY_INSTANCES as u64)
        .map(|s| stationarity_instance(1000 + s))
        .try_fold(0.0_f64, |a, r| r.map(|v| a.max(v)));
    out.push(record(
        5,
        "M-step stationarity",
        t0,
        worst.map(|w| {
            (
                w <= STATIONARITY_TOL,
                format!("max |dQ| {w:.2e} (tol {STATIONARITY_TOL:.0e}), {STATIONARITY_INSTANCES} instances"),
            )
        }),
    ));

    // 7: discrimination on held-out trials
    let t0 = Instant::now();
    let eval = (|| -> Result<(bool, String), String> {
        let trained = trained.ok_or("training failed")?;
        let (eivs, trials) = sample_eval(&truth, &EvalDesign::new(200, 3, 10, EVAL_SEED))
            .map_err(|e| e.to_string())?;
        let policy = SessionPolicy::IndependentSessions;
        let eer_of = |m: &PldaModel| -> Result<f64, String> {
            let recs = score_trials(m, &eivs, &trials, policy, None).map_err(|e| e.to_string())?;
            compute_eer(&recs).map_err(|e| e.to_string())
        };
        let e_truth = eer_of(&truth)?;
        let e_trained = eer_of(&trained)?;
        Ok((
            e_truth < TRUTH_EER_MAX && (e_trained - e_truth).abs() <= TRAINED_EER_GAP,
            format!(
                "EER truth {:.2}% (max {:.0}%), trained {:.2}% (gap {:.2} pts, max {:.0})",
                100.0 * e_truth,
                100.0 * TRUTH_EER_MAX,
                100.0 * e_trained,
                100.0 * (e_trained - e_truth).abs(),
                100.0 * TRAINED_EER_GAP
            ),
        ))
    })();
    out.push(record(7, "end-to-end discrimination", t0, eval));

    // 8: byte-identical outputs across thread counts
    let t0 = Instant::now();
    let det = (|| -> Result<(bool, String), String> {
        let cfg = TrainConfig {
            iters: 5,
            seed: TRAIN_SEED,
            ..TrainConfig::new(CORPUS_DIMS)
        };
        let (eivs, trials) = sample_eval(&truth, &EvalDesign::new(50, 3, 5, EVAL_SEED))
            .map_err(|e| e.to_string())?;
        let policy = SessionPolicy::IndependentSessions;
        let produce = |threads: usize| {
            run_in_pool(threads, || -> Result<(String, String), String> {
                let (ivs, labels) =
                    sample_corpus(&truth, &SynthDesign::new(200, 4, 2, CORPUS_SEED))
                        .map_err(|e| e.to_string())?;
                let gs = accumulate_stats(&ivs, &labels).map_err(|e| e.to_string())?;
                let (m, _) = train_stats(&gs, &cfg, |_| {}).map_err(|e| e.to_string())?;
                let recs = score_trials(&m, &eivs, &trials, policy, Some(0.01))
                    .map_err(|e| e.to_string())?;
                Ok((m.to_text(), scores_to_text(&recs, policy, Some(0.01))))
            })
        };
        let a = produce(1)?;
        let b = produce(4)?;
        let c = produce(4)?;
        let same = a == b && b == c;
        Ok((
            same,
            format!("model and score text identical across 1/4/4 threads: {same}"),
        ))
    })();
    out.push(record(8, "determinism", t0, det));

    out.sort_by_key(|o| o.id);
    let mut all = true;
    for o in &out {
        all &= o.pass;
        println!(
            "[{}] {} {}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            o.seconds
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
