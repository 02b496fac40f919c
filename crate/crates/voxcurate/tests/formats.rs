use std::io::Cursor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxcurate::formats::*;
use voxcurate_core::backend::{Backend, BackendParams, LabeledEmbeddingSet};
use voxcurate_core::eval::{Trial, TrialLabel};
use voxcurate_core::model::{Embedding, VideoId};
use voxcurate_core::synth::{gen_embeddings, gen_frame_stream, SpeakerWorld, StreamScript, WorldSpec};

fn random_embeddings(n: usize, dim: usize, seed: u64) -> Vec<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Embedding::new(format!("utt-{i}"), (0..dim).map(|_| rng.random_range(-10.0f32..10.0)).collect()).unwrap())
        .collect()
}

#[test]
fn empty_set_with_header_dim() {
    let mut bytes = b"EMB1".to_vec();
    bytes.extend_from_slice(&512u32.to_le_bytes());
    bytes.extend_from_slice(&0u32.to_le_bytes());
    assert!(decode_embeddings(&bytes).unwrap().is_empty());
}

#[test]
fn embeddings_round_trip_bitwise() {
    let mut set = random_embeddings(3, 512, 1);
    set[0].values[0] = -0.0;
    set[0].values[1] = f32::MIN_POSITIVE / 4.0;
    set[0].values[2] = f32::MAX;
    set[1].id = "spk/vid/00001 ünïcode".into();
    let back = decode_embeddings(&encode_embeddings(&set).unwrap()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in set.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        let bits = |e: &Embedding| e.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn embeddings_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.emb");
    let set = random_embeddings(5, 7, 2);
    write_embeddings(&path, &set).unwrap();
    assert_eq!(read_embeddings(&path).unwrap(), set);
    assert!(matches!(read_embeddings_with_dim(&path, 8), Err(FormatError::DimMismatch { expected: 8, got: 7 })));
}

#[test]
fn short_record_is_truncation() {
    let mut bytes = b"EMB1".to_vec();
    bytes.extend_from_slice(&512u32.to_le_bytes());
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes());
    bytes.push(b'a');
    for _ in 0..256 {
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
    }
    assert!(matches!(decode_embeddings(&bytes), Err(FormatError::Truncated(_))));
}

#[test]
fn each_defect_has_its_own_error() {
    let good = encode_embeddings(&random_embeddings(2, 4, 3)).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"EMB2");
    assert!(matches!(decode_embeddings(&bad_magic), Err(FormatError::BadMagic { .. })));

    let mut nan = good.clone();
    let at = good.len() - 4;
    nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_embeddings(&nan), Err(FormatError::NonFinite(_))));

    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(decode_embeddings(&trailing), Err(FormatError::TrailingData(1))));

    assert!(matches!(decode_embeddings(&good[..good.len() - 1]), Err(FormatError::Truncated(_))));
    assert!(matches!(decode_embeddings(b"EM"), Err(FormatError::BadMagic { .. })));

    let mixed = vec![Embedding::new("a", vec![1.0; 4]).unwrap(), Embedding::new("b", vec![1.0; 3]).unwrap()];
    assert!(matches!(encode_embeddings(&mixed), Err(FormatError::DimMismatch { expected: 4, got: 3 })));
}

#[test]
fn frames_and_sync_round_trip() {
    let mut script = StreamScript::new(VideoId::new("v").unwrap(), 80, 8, 4);
    script.cuts = vec![30, 60];
    script.presence = vec![(5, 50)];
    script.bystander = true;
    let g = gen_frame_stream(&script).unwrap();
    let back = decode_frames(&encode_frames(&g.frames).unwrap()).unwrap();
    assert_eq!(back, g.frames);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.syn");
    write_sync(&path, &g.sync).unwrap();
    assert_eq!(read_sync(&path, g.sync.video.clone()).unwrap(), g.sync);
}

#[test]
fn frames_without_detections_round_trip() {
    let mut frames = gen_frame_stream(&StreamScript::new(VideoId::new("v").unwrap(), 10, 4, 2)).unwrap().frames;
    frames[3].detections = None;
    let bytes = encode_frames(&frames).unwrap();
    assert_eq!(decode_frames(&bytes).unwrap(), frames);
    assert!(matches!(decode_frames(&bytes[..bytes.len() - 2]), Err(FormatError::Truncated(_))));
}

#[test]
fn frame_histogram_must_sum_to_one() {
    let mut frames = gen_frame_stream(&StreamScript::new(VideoId::new("v").unwrap(), 3, 4, 2)).unwrap().frames;
    frames[1].hsv_hist[0] += 0.5;
    assert!(matches!(decode_frames(&encode_frames(&frames).unwrap()), Err(FormatError::Invalid(_))));
}

#[test]
fn sync_rejects_non_finite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.syn");
    let mut bytes = b"SYN1".to_vec();
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&0.5f32.to_le_bytes());
    bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(read_sync(&path, VideoId::new("v").unwrap()), Err(FormatError::NonFinite(_))));
}

#[test]
fn backend_round_trip_scores_identically() {
    let world = SpeakerWorld::new(WorldSpec { n_speakers: 12, dim: 8, ..WorldSpec::default() }).unwrap();
    let data: LabeledEmbeddingSet = gen_embeddings(&world, 6, 4).unwrap();
    let (model, _) = Backend::train(&data, &BackendParams::default()).unwrap();
    let back = decode_backend(&encode_backend(&model).unwrap()).unwrap();
    assert_eq!(back, model);
    let (a, b) = (&data.items()[0].vector, &data.items()[7].vector);
    assert_eq!(back.score(a, b).unwrap().to_bits(), model.score(a, b).unwrap().to_bits());

    let bytes = encode_backend(&model).unwrap();
    assert!(matches!(decode_backend(&bytes[..bytes.len() - 8]), Err(FormatError::Truncated(_))));
    assert!(matches!(decode_backend(&bytes[1..]), Err(FormatError::BadMagic { .. })));
}

#[test]
fn trials_round_trip() {
    let t = |a: &str, b: &str, label| Trial { enroll: a.parse().unwrap(), test: b.parse().unwrap(), label };
    let trials = vec![
        t("s1/v1/00000", "s1/v2/00003", TrialLabel::Target),
        t("s1/v1/00000", "s2/v1/00001", TrialLabel::Nontarget),
    ];
    let mut buf = Vec::new();
    write_trials(&mut buf, &trials).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().next().unwrap(), "s1/v1/00000 s1/v2/00003 target");
    assert_eq!(read_trials(Cursor::new(buf)).unwrap(), trials);
    assert!(matches!(read_trials(Cursor::new("a/b/1 c/d/2 maybe\n")), Err(FormatError::Invalid(_))));
    assert!(matches!(read_trials(Cursor::new("a/b/1 target\n")), Err(FormatError::Invalid(_))));
}
