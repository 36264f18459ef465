//! The repo ships prompt templates and full-scale run configs as data files.
//! These tests pin them: every file must load, and the synthetic templates
//! must stay byte-equal to the in-code builders the experiments use.

use std::path::{Path, PathBuf};

use selfdistill::lab::{synthetic_cot_template, synthetic_eval_template};
use selfdistill::runcfg::{load_template, BackendChoice, RunConfigFile};
use selfdistill_core::prompt::PromptTemplate;
use selfdistill_core::types::Verdict;

fn repo_root() -> PathBuf {
    // CARGO_MANIFEST_DIR = crates/pipeline
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .unwrap()
        .to_path_buf()
}

#[test]
fn shipped_synthetic_templates_match_the_inline_builders() {
    let root = repo_root();
    let cot = load_template(&root.join("templates/synthetic_cot.json")).unwrap();
    assert_eq!(cot, synthetic_cot_template());
    let eva = load_template(&root.join("templates/synthetic_self_eval.json")).unwrap();
    assert_eq!(eva, synthetic_eval_template());
}

#[test]
fn task_templates_load_with_five_exemplars_each() {
    let root = repo_root();
    for task in ["svamp", "cqa", "anli"] {
        let cot = load_template(&root.join(format!("templates/{task}_cot.json"))).unwrap();
        assert!(cot.is_cot(), "{task} cot kind");
        assert_eq!(cot.shot_count(), 5, "{task} cot exemplars");

        let eva = load_template(&root.join(format!("templates/{task}_self_eval.json"))).unwrap();
        assert!(!eva.is_cot(), "{task} eval kind");
        assert_eq!(eva.shot_count(), 5, "{task} eval exemplars");
    }
}

#[test]
fn self_eval_templates_show_both_verdicts() {
    // A verdict template that only ever says "correct" teaches nothing about
    // catching flaws; each shipped one must exhibit both classes.
    let root = repo_root();
    for name in [
        "synthetic_self_eval",
        "svamp_self_eval",
        "cqa_self_eval",
        "anli_self_eval",
    ] {
        let t = load_template(&root.join(format!("templates/{name}.json"))).unwrap();
        let PromptTemplate::SelfEval { exemplars, .. } = t else {
            panic!("{name} is not a self-eval template");
        };
        let correct = exemplars.iter().filter(|e| e.verdict == Verdict::Correct).count();
        let incorrect = exemplars.len() - correct;
        assert!(correct > 0, "{name} lacks a correct exemplar");
        assert!(incorrect > 0, "{name} lacks an incorrect exemplar");
    }
}

#[test]
fn full_scale_configs_resolve_to_their_conditions() {
    let root = repo_root();
    // (file, n_cot, n_eval, lambda, has_eval_template)
    let rows = [
        ("standard", 1, 0, 0.0, false),
        ("cot1", 1, 0, 0.5, false),
        ("cot1_se", 1, 5, 0.5, true),
        ("cot5", 5, 0, 0.5, false),
        ("cot5_se", 5, 5, 0.5, true),
    ];
    for (name, n_cot, n_eval, lambda, has_eval) in rows {
        let path = root.join(format!("configs/table1/{name}.toml"));
        let resolved = RunConfigFile::load(&path).unwrap().resolve().unwrap();
        assert_eq!(resolved.harvest.n_cot, n_cot, "{name} n_cot");
        assert_eq!(resolved.harvest.n_eval, n_eval, "{name} n_eval");
        assert_eq!(resolved.train.lambda_weight, lambda, "{name} lambda");
        assert_eq!(resolved.teacher.backend, BackendChoice::Live, "{name} backend");
        assert_eq!(resolved.teacher.model_id, "gpt-3.5-turbo", "{name} model");
        assert_eq!(resolved.train.batch_size, 64, "{name} batch");
        assert_eq!(resolved.train.learning_rate, 5e-5, "{name} lr");
        assert_eq!(resolved.grid.seeds.len(), 3, "{name} seeds");
        assert_eq!(
            resolved.harvest.eval_template.is_some(),
            has_eval,
            "{name} eval template"
        );
        assert!(resolved.harvest.cot_template.is_some(), "{name} cot template");
        if n_eval > 0 {
            assert!(resolved.corpus_evals.is_some(), "{name} evals corpus path");
        }
        // A no-self-eval condition must not schedule a self-eval phase.
        if n_eval == 0 {
            assert_eq!(resolved.train.epochs_se, 0, "{name} epochs_se");
        } else {
            assert!(resolved.train.epochs_se > 0, "{name} epochs_se");
        }
    }
}

#[test]
fn config_digests_distinguish_every_condition() {
    let root = repo_root();
    let mut digests = std::collections::BTreeSet::new();
    for name in ["standard", "cot1", "cot1_se", "cot5", "cot5_se"] {
        let path = root.join(format!("configs/table1/{name}.toml"));
        let resolved = RunConfigFile::load(&path).unwrap().resolve().unwrap();
        assert!(
            digests.insert(resolved.digest()),
            "duplicate digest for {name}"
        );
    }
    assert_eq!(digests.len(), 5);
}
