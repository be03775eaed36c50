//! Does an explanation help a student imitate its teacher?
//!
//! A cue-reading teacher labels synthetic reviews and explains each label.
//! Students are fitted on `k` teacher examples, once with the explanations
//! and once with the answers alone, and are then scored by F1 agreement with
//! the teacher on held-out reviews.

use pex::prompting::TaskSpec;
use pex::simeval::{
    build_teacher_records, run_matrix, teacher_predictions, ReviewRef, SimRunConfig, SystemInput,
    TeacherSampling, ToyStudentTrainer, PRED_ONLY, SFT,
};
use pex::toy::{cue_teacher, generate_corpus, student_init, CorpusSpec};

fn main() -> pex::Result<()> {
    let corpus = generate_corpus(&CorpusSpec::new(160, 1));
    let teacher = cue_teacher(&corpus, 0.9)?;
    let reviews: Vec<ReviewRef> = corpus.iter().map(ReviewRef::from).collect();
    let (pool, test) = reviews.split_at(60);

    let records = build_teacher_records(
        &teacher,
        &TaskSpec::hotel().zero_shot(),
        pool,
        SFT,
        &TeacherSampling::new(1),
        1,
    )?;
    println!(
        "teacher on {}: {} / {}",
        records[0].review, records[0].answer, records[0].explanation
    );
    let test_predictions = teacher_predictions(&teacher, test, 1)?;
    let systems = [
        SystemInput {
            name: PRED_ONLY.into(),
            records: records.iter().map(|r| r.pred_only()).collect(),
            test_predictions: test_predictions.clone(),
        },
        SystemInput {
            name: SFT.into(),
            records,
            test_predictions,
        },
    ];
    let trainer = ToyStudentTrainer {
        init: student_init(),
        lr: 0.05,
    };
    let configs: Vec<SimRunConfig> = [4, 10, 20]
        .iter()
        .map(|&k| SimRunConfig::for_k(k, 1))
        .collect();
    let matrix = run_matrix(&systems, test, &configs, &trainer, 2)?;

    println!("{:<10} {:>4} {:>8} {:>8}", "system", "k", "F1", "±95%");
    for r in &matrix.rows {
        println!(
            "{:<10} {:>4} {:>8.3} {:>8.3}",
            r.system, r.k, r.mean, r.ci95
        );
    }
    for (system, avg) in &matrix.averages {
        println!("average {system}: {avg:.3}");
    }
    Ok(())
}
