//! Diagnostic probe (ignored): for each planted regime, run every retrieval
//! strategy on a sample of evaluation queries and report how often the drafted
//! statements actually name the held-out target item. Run with:
//! `cargo test -p gkg-core --test draft_probe -- --ignored --nocapture`

use gkg_core::eval::{build_eval_set, EvalMode};
use gkg_core::synth::{generate, SynthConfig, CLASS_WORDS};
use gkg_core::{Expert, HashEncoder, Indexes, NullClock, Pipeline, RetrievalBudget};

#[test]
#[ignore = "diagnostic probe, run manually with --nocapture"]
fn draft_probe() {
    let cfg = SynthConfig {
        families_per_class: 12,
        eval_families_per_class: 4,
        train_users: 8,
        eval_users: 400,
        ..SynthConfig::default()
    };
    let world = generate(&cfg).unwrap();
    let encoder = HashEncoder::new(512, 7).unwrap();
    let indexes = Indexes::build(&world.kg, &encoder).unwrap();
    let mut pipe = Pipeline::new(&world.kg, &indexes, &encoder);
    pipe.budget = RetrievalBudget {
        triples_per_seed: 6,
        hop_k: 2,
        ppr_node_budget: 36,
        ..RetrievalBudget::default()
    };

    let eval = build_eval_set(
        &world.kg,
        &encoder,
        &world.eval_sequences,
        world.n_items,
        EvalMode::Standard,
        None,
        12,
    )
    .unwrap();
    println!(
        "eval instances {} (skipped {}, filtered {})",
        eval.instances.len(),
        eval.skipped_short,
        eval.filtered_warm
    );

    for class in 0..4 {
        let sample: Vec<_> = eval
            .instances
            .iter()
            .filter(|inst| world.eval_user_class[inst.user] == class)
            .take(25)
            .collect();
        println!("-- class {} ({} instances) --", CLASS_WORDS[class], sample.len());
        for expert_idx in 0..4 {
            let expert = Expert::from_index(expert_idx).unwrap();
            let mut total_statements = 0usize;
            let mut named_target = 0usize;
            let mut named_distractor = 0usize;
            for inst in &sample {
                let (_retrieved, statements) =
                    pipe.retrieve_and_draft(expert, &inst.zq, &NullClock).unwrap();
                total_statements += statements.len();
                let target_text = &inst.pool_texts[inst.target];
                if statements.iter().any(|s| s.contains(target_text.as_str())) {
                    named_target += 1;
                }
                let distractor = statements.iter().any(|s| {
                    inst.pool_texts
                        .iter()
                        .enumerate()
                        .any(|(i, t)| i != inst.target && s.contains(t.as_str()))
                });
                if distractor {
                    named_distractor += 1;
                }
            }
            println!(
                "  {:<10} mean statements {:5.1}  target named {:2}/{}  distractor named {:2}/{}",
                expert.name(),
                total_statements as f64 / sample.len().max(1) as f64,
                named_target,
                sample.len(),
                named_distractor,
                sample.len()
            );
        }
    }
}
