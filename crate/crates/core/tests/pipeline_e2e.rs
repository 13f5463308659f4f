use std::path::Path;

use viewfuse_core::gating::{read_flagged, FlaggedExport};
use viewfuse_core::pipeline::{annotate_corpus, build_providers, run_pipeline, PipelineConfig};
use viewfuse_core::providers::mock::synthetic_corpus;
use viewfuse_core::Exec;

fn write_corpus(dir: &Path, n: usize, mismatched: &[usize]) {
    for m in synthetic_corpus(n, mismatched, 32) {
        m.write_to_dir(&dir.join(&m.object_id)).unwrap();
    }
}

fn records(out: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = std::fs::read_dir(out.join("records"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn corrupt_manifest_is_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    write_corpus(&corpus, 100, &[]);
    std::fs::write(corpus.join("obj-042/manifest.json"), "{\"object_id\": ").unwrap();
    let out = annotate_corpus(&corpus, &PipelineConfig::default(), Some(&tmp.path().join("out"))).unwrap();
    assert_eq!(out.summary.objects, 100);
    assert_eq!(out.result.records.len(), 99);
    assert_eq!(out.result.failures.len(), 1);
    let f = &out.result.failures[0];
    assert_eq!(f.object_id, "obj-042");
    assert_eq!(f.stage, "ingest");
    assert_eq!(records(&tmp.path().join("out")).len(), 99);
}

#[test]
fn cache_does_not_change_records() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    write_corpus(&corpus, 6, &[2]);
    let plain = PipelineConfig::default();
    let cached = PipelineConfig {
        cache_dir: Some(tmp.path().join("cache")),
        ..PipelineConfig::default()
    };
    annotate_corpus(&corpus, &plain, Some(&tmp.path().join("a"))).unwrap();
    let cold = annotate_corpus(&corpus, &cached, Some(&tmp.path().join("b"))).unwrap();
    let warm = annotate_corpus(&corpus, &cached, Some(&tmp.path().join("c"))).unwrap();
    let a = records(&tmp.path().join("a"));
    assert_eq!(a, records(&tmp.path().join("b")));
    assert_eq!(a, records(&tmp.path().join("c")));
    assert!(cold.cache_stats.unwrap().misses > 0);
    let w = warm.cache_stats.unwrap();
    assert_eq!(w.misses, 0);
    assert!(w.hits > 0);
    assert_eq!(warm.provider_calls.unwrap().total(), 0);
    for name in ["a", "b", "c"] {
        let f = read_flagged(&tmp.path().join(name).join("flagged.jsonl")).unwrap();
        assert_eq!(f.iter().map(|r| r.object_id.as_str()).collect::<Vec<_>>(), ["obj-002"]);
    }
}

#[test]
fn records_replay_from_stored_fields() {
    let corpus = synthetic_corpus(5, &[0], 32);
    let cfg = PipelineConfig::default();
    let (providers, _) = build_providers(&cfg, &corpus).unwrap();
    let run = run_pipeline(&corpus, &cfg, &providers, Exec::Sequential, None).unwrap();
    assert_eq!(run.records.len(), 5);
    for rec in &run.records {
        let back: viewfuse_core::pipeline::AnnotationRecord = serde_json::from_str(&rec.to_json()).unwrap();
        let (global, gate) = back.replay().unwrap();
        assert_eq!(global, rec.global);
        assert_eq!(gate, rec.gating);
    }
}

#[test]
fn toml_config_changes_the_gate() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    write_corpus(&corpus, 4, &[]);
    let path = tmp.path().join("run.toml");
    std::fs::write(&path, "seed = 7\ngate_threshold = 0.999\nworkers = 1\n[providers]\nkind = \"mock\"\n").unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.seed, 7);
    let out = annotate_corpus(&corpus, &cfg, None).unwrap();
    // no caption matches its cloud that closely
    assert_eq!(out.summary.flagged, 4);
    assert_eq!(out.summary.passed_gate, 0);
}

#[test]
fn flagged_export_appends_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("flagged.jsonl");
    let corpus = synthetic_corpus(4, &[1, 3], 32);
    let cfg = PipelineConfig::default();
    let (providers, _) = build_providers(&cfg, &corpus).unwrap();
    for _ in 0..2 {
        let sink = FlaggedExport::create(&path).unwrap();
        run_pipeline(&corpus, &cfg, &providers, Exec::Sequential, Some(&sink)).unwrap();
    }
    let rows = read_flagged(&path).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.object_id == "obj-001" || r.object_id == "obj-003"));
}

#[test]
fn annotate_overwrites_previous_flagged_file() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    write_corpus(&corpus, 3, &[1]);
    let out = tmp.path().join("out");
    for _ in 0..2 {
        annotate_corpus(&corpus, &PipelineConfig::default(), Some(&out)).unwrap();
    }
    assert_eq!(read_flagged(&out.join("flagged.jsonl")).unwrap().len(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["flagged"], 1);
    assert_eq!(summary["succeeded"], 3);
}
