use mxmclr::grouping::AggregationMode;
use mxmclr::losses::SimilarityConfig;
use mxmclr::synthdata::{generate, GenConfig, MultifoldBatch};
use mxmclr::teacher::TeacherPair;
use mxmclr::train::{forward_similarity, EncoderConfig};
use mxmclr::EncoderPair;
use mxmclr::Tape;

fn pair(seed: u64) -> EncoderPair {
    EncoderPair::init(
        6,
        5,
        &EncoderConfig {
            hidden: 8,
            embed_dim: 4,
        },
        seed,
    )
}

#[test]
fn ema_contracts_towards_student() {
    let s = pair(1);
    let mut t = TeacherPair::init_from_student(&pair(2));
    let mu = 0.7;
    let before = t.clone();
    t.ema_update(&s, mu).unwrap();
    for ((a, b), st) in before
        .encoders
        .tensors()
        .iter()
        .zip(t.encoders.tensors())
        .zip(s.tensors())
    {
        for ((&x0, &x1), &th) in a.data().iter().zip(b.data()).zip(st.data()) {
            assert!(((x1 - th).abs() - mu * (x0 - th).abs()).abs() < 1e-15);
        }
    }
}

#[test]
fn teacher_matches_student_after_init_and_tracks_with_zero_momentum() {
    let d = generate(&GenConfig {
        instances: 4,
        image_dim: 6,
        text_dim: 5,
        ..GenConfig::default()
    })
    .unwrap();
    let batch = MultifoldBatch::from_ids(&d, &[0, 1, 2]).unwrap();
    let cfg = SimilarityConfig::default();
    let student = pair(3);
    let mut teacher = TeacherPair::init_from_student(&student);
    assert_eq!(TeacherPair::init_from_student(&student), teacher);

    let student_sim = |p: &EncoderPair| {
        let tape = Tape::new();
        let (s, _) = forward_similarity(&p.leaves(&tape), &batch, AggregationMode::None, false, &cfg).unwrap();
        s.value()
    };
    let t = teacher.similarity(&batch, AggregationMode::None, false, &cfg).unwrap();
    assert_eq!(t, student_sim(&student));

    let moved = pair(4);
    teacher.ema_update(&moved, 0.0).unwrap();
    let t = teacher.similarity(&batch, AggregationMode::None, false, &cfg).unwrap();
    assert_eq!(t, student_sim(&moved));
}
