mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{full_chain, snapshot, vc, SMALL};
use voxcurate::layout::{read_json, Layout};
use voxcurate::provider::{Candidate, MediaKind, MediaProvider, MockProvider};
use voxcurate::stages::{CleaningSummary, EvalSummary, SweepSummary, TemplateStatus};
use voxcurate_core::model::{CorpusManifest, SegmentRecord, SegmentSource, SpeakerId, SpeakerInfo, VideoId};
use voxcurate_core::synth::{purity, CorpusTruth};

fn manifest(root: &std::path::Path) -> CorpusManifest {
    read_json(&root.join("manifest.json")).unwrap()
}

#[test]
fn small_chain_cleans_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let text = full_chain(root, SMALL, &[]);
    for needle in ["Corpus statistics", "Cleaning sweep", "before cleaning", "after cleaning", "speedup"] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    let m = manifest(root);
    assert_eq!(m.segments.len(), 12 * 15);
    assert!(m.segments.iter().all(|s| s.source != SegmentSource::Tracked));

    let cleaning: CleaningSummary = read_json(&root.join("work/cleaning.json")).unwrap();
    let kept: Vec<String> = m
        .segments
        .iter()
        .filter(|s| s.source == SegmentSource::DiarizationKept)
        .map(|s| s.utterance_id().to_string())
        .collect();
    assert_eq!(kept.len(), cleaning.kept);
    let listed: BTreeSet<String> =
        std::fs::read_to_string(root.join("work/finetune.txt")).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(listed, kept.iter().cloned().collect());

    let truth: CorpusTruth = read_json(&root.join("embeddings/utterances.truth.json")).unwrap();
    let all: Vec<_> = m.segments.iter().map(SegmentRecord::utterance_id).collect();
    let kept_ids: Vec<_> = kept.iter().map(|k| k.parse().unwrap()).collect();
    assert!(purity(&kept_ids, &truth) > purity(&all, &truth));

    let ev: EvalSummary = read_json(&root.join("reports/eval.json")).unwrap();
    assert!(ev.after.unwrap().report.eer < ev.before.report.eer);
    assert!(root.join("reports/trials_before.txt").is_file());
    assert!(root.join("reports/report.json").is_file());
}

#[test]
fn identity_switches_contaminate_at_the_scripted_rate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    vc(root, "synth", SMALL).unwrap();
    for c in ["template", "shots", "track", "segments", "synth --phase embed"] {
        vc(root, c, &[]).unwrap();
    }
    let m = manifest(root);
    let truth: CorpusTruth = read_json(&root.join("embeddings/utterances.truth.json")).unwrap();
    let rate = truth.foreign.len() as f64 / m.segments.len() as f64;
    assert!((rate - 0.2).abs() <= 0.05, "measured contamination {rate}");
}

#[test]
fn template_gate_drops_weak_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut args = SMALL.to_vec();
    args.extend(["--set", "synth.weak_speakers=2"]);
    vc(root, "synth", &args).unwrap();
    for c in ["template", "shots", "track", "segments"] {
        vc(root, c, &[]).unwrap();
    }
    let status: Vec<TemplateStatus> = read_json(&root.join("work/templates.json")).unwrap();
    let rejected: Vec<&SpeakerId> =
        status.iter().filter(|s| matches!(s, TemplateStatus::Rejected { .. })).map(TemplateStatus::speaker).collect();
    assert_eq!(rejected.iter().map(|s| s.as_str()).collect::<Vec<_>>(), ["spk0010", "spk0011"]);
    for s in &status {
        match s {
            TemplateStatus::Rejected { largest, photos, .. } => assert!(*largest <= 9 && *photos == 20),
            TemplateStatus::Accepted { support, .. } => assert!(*support >= 10),
        }
    }
    let m = manifest(root);
    assert!(m.videos.iter().all(|v| !rejected.contains(&&v.speaker)));
    assert!(m.segments.iter().all(|v| !rejected.contains(&&v.speaker)));
    assert_eq!(m.speakers.len(), 12);
}

#[test]
fn runs_are_byte_identical_regardless_of_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_chain(a.path(), SMALL, &["--jobs", "1"]);
    full_chain(b.path(), SMALL, &["--jobs", "4"]);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs");
    }
}

#[test]
fn rerunning_a_stage_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    full_chain(root, SMALL, &[]);
    let before = snapshot(root);
    for c in ["backend", "clean", "eval", "sweep", "report"] {
        vc(root, c, &[]).unwrap();
    }
    assert!(before == snapshot(root));
}

#[test]
fn seed_changes_the_corpus() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    vc(a.path(), "synth", SMALL).unwrap();
    let mut args = SMALL.to_vec();
    args.extend(["--seed", "1"]);
    vc(b.path(), "synth", &args).unwrap();
    let f = "videos/spk0000_v00.frf";
    assert_ne!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
}

#[test]
fn sweep_vsr_is_monotone_and_reaches_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    full_chain(root, SMALL, &[]);
    let sweep: SweepSummary = read_json(&root.join("reports/sweep.json")).unwrap();
    assert!(sweep.rows.windows(2).all(|w| w[0].mean_vsr <= w[1].mean_vsr));
    let last = sweep.rows.last().unwrap();
    assert_eq!(last.eps, 1.0);
    assert_eq!(last.mean_vsr, 1.0);
    assert_eq!(last.kept, last.total);
}

#[test]
fn fifty_speaker_chain_lowers_eer() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    full_chain(root, &[], &[]);
    let ev: EvalSummary = read_json(&root.join("reports/eval.json")).unwrap();
    let after = ev.after.unwrap();
    assert!(after.report.eer < ev.before.report.eer, "{} -> {}", ev.before.report.eer, after.report.eer);
}

#[test]
fn large_manifest_statistics_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut m = CorpusManifest::default();
    let counts = [("zh", 410), ("ja", 406), ("ko", 925)];
    let mut k = 0;
    for (nat, n) in counts {
        for _ in 0..n {
            m.speakers.push(SpeakerInfo {
                id: SpeakerId::new(format!("poi{k:04}")).unwrap(),
                name: format!("POI {k}"),
                nationality: nat.into(),
            });
            k += 1;
        }
    }
    // 76,522 segments of 8.4 s over the first 1,641 speakers.
    for i in 0..76_522u32 {
        let spk = &m.speakers[i as usize % 1641].id;
        let video = VideoId::new(format!("{spk}_v00")).unwrap();
        m.segments.push(SegmentRecord::new(video, spk.clone(), i, 0, 8_400, SegmentSource::Tracked).unwrap());
    }
    Layout::new(root).save_manifest(&m).unwrap();
    let text = vc(root, "report", &[]).unwrap();
    assert!(text.contains("# POI per nationality       ja 406, ko 925, zh 410"), "{text}");
    assert!(text.contains("# POI listed                1741"));
    assert!(text.contains("# POI with utterances       1641"));
    assert!(text.contains("# utterances                76522"));
    assert!(text.contains("Avg # utterances per POI    46.6"));
    assert!(text.contains("Avg duration per utt (s)    8.40"));
    assert!(text.contains("# total audio hours         178.55"));
}

#[test]
fn mock_provider_honours_limits_and_suffixes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut args = SMALL.to_vec();
    args.extend(["--set", r#"provider.suffixes.ko={"photo": "ko-photo", "video": "ko-interview"}"#]);
    vc(root, "synth", &args).unwrap();
    let layout = Layout::new(root);
    let index: BTreeMap<String, Vec<Candidate>> = read_json(&layout.provider_index()).unwrap();
    assert!(index.contains_key("Speaker 0002 ko-photo"));
    assert!(index.contains_key("Speaker 0000 photo"));

    let p = MockProvider::open(&layout).unwrap();
    let hits = p.search("Speaker 0002", "ko-photo", MediaKind::Image, 20).unwrap();
    assert_eq!(hits.len(), 20);
    assert_eq!(hits, p.search("Speaker 0002", "ko-photo", MediaKind::Image, 20).unwrap());
    assert!(p.search("Speaker 0002", "photo", MediaKind::Image, 20).unwrap().is_empty());
    assert!(p.search("Speaker 0002", "ko-photo", MediaKind::Video, 15).unwrap().is_empty());
    assert_eq!(p.search("Speaker 0002", "ko-interview", MediaKind::Video, 15).unwrap().len(), 1);
    let status = vc(root, "template", &[]).unwrap();
    assert_eq!(status, "template: 12 accepted, 0 rejected\n");
}
