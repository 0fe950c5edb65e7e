use std::collections::BTreeMap;

use labelforge::annotation::{export_cleaned, AttributeFormat};
use labelforge::project::Project;
use labelforge::synth::{generate, SynthConfig};
use labelforge::workflow::{Decision, WorkflowConfig, WorkflowStatus};
use labelforge::{Execution, LabelValue};

#[test]
fn workflow_through_project_store() {
    let ds = generate(&SynthConfig {
        n: 4000,
        seed: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.txt");
    let emb = dir.path().join("emb.txt");
    export_cleaned(&ds.observed_matrix(), &labels).unwrap();
    ds.store.save(&emb).unwrap();

    let root = dir.path().join("root");
    let mut p = Project::create(&root, "synth", &labels, AttributeFormat::Extended).unwrap();
    p.import_embeddings(&emb).unwrap();
    let (seed, _) = ds.seed_split(0.1);
    let config = WorkflowConfig {
        small_bin_threshold: 200,
        seed: 3,
        ..WorkflowConfig::default()
    };
    p.create_workflow("w1", &ds.attribute, &seed, config).unwrap();
    let truth = |id: &str| LabelValue::from_bool(ds.truth_of(id).unwrap());

    let mut rounds = 0;
    while p.check_convergence("w1").unwrap() == WorkflowStatus::Running {
        rounds += 1;
        assert!(rounds <= 10, "did not finish");
        let bins = p.run_round("w1", Execution::Parallel).unwrap();
        for bin in bins {
            let w = p.workflow("w1").unwrap();
            if w.audit_eligible(bin.votes) {
                let consensus: BTreeMap<_, _> = w
                    .bin_audit_sample(bin.votes)
                    .unwrap()
                    .into_iter()
                    .map(|id| {
                        let v = truth(&id);
                        (id, v)
                    })
                    .collect();
                p.audit_bin("w1", bin.votes, &consensus).unwrap();
            }
            let decided = p.workflow("w1").unwrap().bin(bin.votes).unwrap().clone();
            if decided.decision == Decision::Accepted {
                continue;
            }
            if decided.members.len() <= 200 {
                let manual = decided.members.iter().map(|id| (id.clone(), truth(id))).collect();
                p.mark_manual("w1", bin.votes, &manual).unwrap();
            } else if decided.decision == Decision::Undecided {
                p.defer_bin("w1", bin.votes).unwrap();
            }
        }
    }
    assert_eq!(p.check_convergence("w1").unwrap(), WorkflowStatus::Converged);

    let cleaned = p.workflow("w1").unwrap().labels();
    let wrong = cleaned.iter().filter(|(id, v)| **v != truth(id)).count();
    assert!((wrong as f64) / (cleaned.len() as f64) < 0.05, "{wrong} of {}", cleaned.len());

    let changed = p.apply_workflow("w1").unwrap();
    assert!(changed > 0);
    assert_eq!(p.log().len(), changed);

    // everything survives a reopen
    let q = Project::open(&root, "synth").unwrap();
    assert!(q.labels().labels_equal(p.labels()));
    assert_eq!(q.workflow("w1").unwrap().labels(), cleaned);
    for (id, v) in &cleaned {
        assert_eq!(q.labels().get(id, &ds.attribute).unwrap(), *v);
    }
}
