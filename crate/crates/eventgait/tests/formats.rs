use eventgait::core::event::{voxelize, Event, EventStream, Polarity, Window};
use eventgait::core::model::{GaitModel, ModelConfig};
use eventgait::core::params;
use eventgait::core::sim::FrameSequence;
use eventgait::core::static_stream::TeacherFeatureSet;
use eventgait::formats::{ckpt, evs, frames, tfs, vox};
use eventgait::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn three_events() -> EventStream {
    let events = vec![
        Event::new(0, 0, 100, Polarity::On),
        Event::new(5, 2, 100, Polarity::Off),
        Event::new(7, 3, 2_000, Polarity::On),
    ];
    EventStream::new(8, 4, Window::new(50, 5_000), events).unwrap()
}

fn format_offset(err: Error) -> (u64, String) {
    match err {
        Error::Format { offset, message } => (offset, message),
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn evs1_round_trip_is_bit_exact() {
    let s = three_events();
    let bytes = evs::encode(&s);
    assert_eq!(bytes.len(), evs::HEADER_LEN + 3 * evs::RECORD_LEN);
    assert_eq!(&bytes[..4], b"EVS1");
    assert_eq!(evs::decode(&bytes).unwrap(), s);
    assert_eq!(evs::encode(&evs::decode(&bytes).unwrap()), bytes);
}

#[test]
fn evs1_layout() {
    let bytes = evs::encode(&three_events());
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 8);
    assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 4);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 50);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 5_000);
    assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
    let second = &bytes[32 + 16..32 + 32];
    assert_eq!(u16::from_le_bytes([second[0], second[1]]), 5);
    assert_eq!(u16::from_le_bytes([second[2], second[3]]), 2);
    assert_eq!(u64::from_le_bytes(second[4..12].try_into().unwrap()), 100);
    assert_eq!(second[12] as i8, -1);
    assert_eq!(&second[13..], &[0, 0, 0]);
}

#[test]
fn evs1_zero_polarity_is_rejected() {
    let mut bytes = evs::encode(&three_events());
    let at = 32 + 16 + 12;
    bytes[at] = 0;
    let (offset, message) = format_offset(evs::decode(&bytes).unwrap_err());
    assert_eq!(offset, 32 + 16);
    assert!(message.contains("record 1") && message.contains("polarity"), "{message}");
}

#[test]
fn evs1_decreasing_time_names_the_record() {
    let mut bytes = evs::encode(&three_events());
    let rec = 32 + 2 * 16;
    bytes[rec + 4..rec + 12].copy_from_slice(&60u64.to_le_bytes());
    let (offset, message) = format_offset(evs::decode(&bytes).unwrap_err());
    assert_eq!(offset, rec as u64);
    assert!(message.contains("record 2") && message.contains("decreases"), "{message}");
}

#[test]
fn evs1_structural_errors() {
    let bytes = evs::encode(&three_events());
    let mut coord = bytes.clone();
    coord[32..34].copy_from_slice(&8u16.to_le_bytes());
    assert!(format_offset(evs::decode(&coord).unwrap_err()).1.contains("outside"));
    let mut window = bytes.clone();
    window[32 + 4..32 + 12].copy_from_slice(&10u64.to_le_bytes());
    assert!(format_offset(evs::decode(&window).unwrap_err()).1.contains("window"));
    assert_eq!(format_offset(evs::decode(&bytes[..20]).unwrap_err()).0, 16);
    assert_eq!(format_offset(evs::decode(&bytes[..bytes.len() - 1]).unwrap_err()).0, 24);
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert_eq!(format_offset(evs::decode(&magic).unwrap_err()).0, 0);
    let mut pad = bytes.clone();
    pad[32 + 14] = 1;
    assert!(format_offset(evs::decode(&pad).unwrap_err()).1.contains("padding"));
}

#[test]
fn csv_round_trip_and_errors() {
    let s = three_events();
    let text = evs::encode_csv(&s);
    assert!(text.starts_with("# width=8 height=4 t_start=50 duration=5000\nx,y,t,p\n"));
    assert_eq!(evs::decode_csv(&text).unwrap(), s);
    let bad = text.replace("5,2,100,-1", "5,2,100,0");
    assert!(format_offset(evs::decode_csv(&bad).unwrap_err()).1.contains("record 1"));
    assert!(evs::decode_csv("x,y,t,p\n").is_err());
    let garbled = text.replace("7,3,2000,1", "7,3,two,1");
    let (offset, _) = format_offset(evs::decode_csv(&garbled).unwrap_err());
    assert_eq!(&garbled[offset as usize..offset as usize + 3], "7,3");
}

#[test]
fn files_pick_the_format_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let s = three_events();
    for name in ["a.evs1", "b.csv", "nested/c.evs1"] {
        let path = dir.path().join(name);
        evs::write(&path, &s).unwrap();
        assert_eq!(evs::read(&path).unwrap(), s);
    }
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(csv.starts_with('#'));
    let missing = evs::read(&dir.path().join("missing.evs1")).unwrap_err();
    assert_eq!(missing.exit_code(), 3);
}

fn arb_stream() -> impl Strategy<Value = EventStream> {
    (1u16..50, 1u16..50, 0u64..1_000_000, 1u64..100_000).prop_flat_map(|(w, h, start, len)| {
        let event = (0..w, 0..h, 0..=len, any::<bool>());
        prop::collection::vec(event, 0..60).prop_map(move |raw| {
            let events = raw
                .into_iter()
                .map(|(x, y, dt, on)| Event::new(x, y, start + dt, if on { Polarity::On } else { Polarity::Off }))
                .collect();
            EventStream::from_unsorted(w, h, Window::new(start, len), events).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn both_encodings_round_trip(s in arb_stream()) {
        prop_assert_eq!(&evs::decode(&evs::encode(&s)).unwrap(), &s);
        prop_assert_eq!(&evs::decode_csv(&evs::encode_csv(&s)).unwrap(), &s);
    }
}

fn teacher_set() -> TeacherFeatureSet {
    let mut set = TeacherFeatureSet::new(3, "t");
    set.insert("bright_id00_seq00", vec![0.5, -0.25, 1.0]).unwrap();
    set.insert("b", vec![0.0, 0.125, -1.0]).unwrap();
    set
}

#[test]
fn tfs1_round_trip() {
    let set = teacher_set();
    let bytes = tfs::encode(&set);
    assert_eq!(&bytes[..4], b"TFS1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(tfs::decode(&bytes, "t").unwrap(), set);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dino.tfs1");
    tfs::write(&path, &set).unwrap();
    let back = tfs::read(&path).unwrap();
    assert_eq!(back.teacher(), "dino");
    assert_eq!(back.get("b").unwrap(), set.get("b").unwrap());
}

#[test]
fn tfs1_errors() {
    let bytes = tfs::encode(&teacher_set());
    assert!(matches!(tfs::decode(&bytes[..bytes.len() - 2], "t"), Err(Error::Format { .. })));
    let mut nan = bytes.clone();
    let last = nan.len() - 4;
    nan[last..].copy_from_slice(&f32::NAN.to_le_bytes());
    let err = tfs::decode(&nan, "t").unwrap_err();
    assert!(err.to_string().contains("non-finite"), "{err}");
    let mut dup = TeacherFeatureSet::new(1, "t");
    dup.insert("a", vec![1.0]).unwrap();
    let mut twice = tfs::encode(&dup);
    twice[8..12].copy_from_slice(&2u32.to_le_bytes());
    twice.extend_from_within(12..);
    assert!(format_offset(tfs::decode(&twice, "t").unwrap_err()).1.contains("duplicate"));
}

fn small_model_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.static_stream.in_channels = 4;
    cfg.static_stream.input_size = 16;
    cfg.static_stream.widths = vec![4, 6, 8];
    cfg.static_stream.embed_dim = 8;
    cfg.static_stream.teacher_dim = 5;
    cfg.dynamic_stream.in_channels = 4;
    cfg.dynamic_stream.input_size = 16;
    cfg.dynamic_stream.widths = [4, 6];
    cfg.embed_dim = 8;
    cfg.n_classes = 3;
    cfg
}

#[test]
fn checkpoint_round_trip_with_momentum() {
    let cfg = small_model_config();
    let mut model = GaitModel::new(&mut ChaCha8Rng::seed_from_u64(3), cfg.clone()).unwrap();
    params::round_to_f32(&mut model);
    let mut velocity = GaitModel::new(&mut ChaCha8Rng::seed_from_u64(4), cfg.clone()).unwrap();
    params::round_to_f32(&mut velocity);

    let blobs = ckpt::blobs(&model, Some(&velocity));
    let bytes = ckpt::encode(&blobs);
    assert_eq!(&bytes[..5], b"CKPT1");
    let decoded = ckpt::decode(&bytes).unwrap();
    assert_eq!(decoded, blobs);
    let (m, v) = ckpt::restore(&cfg, decoded).unwrap();
    assert_eq!(params::flatten(&m), params::flatten(&model));
    assert_eq!(params::flatten(&v.unwrap()), params::flatten(&velocity));

    let (_, none) = ckpt::restore(&cfg, ckpt::blobs(&model, None)).unwrap();
    assert!(none.is_none());
}

#[test]
fn checkpoint_rejects_mismatched_models() {
    let cfg = small_model_config();
    let model = GaitModel::new(&mut ChaCha8Rng::seed_from_u64(3), cfg.clone()).unwrap();
    let blobs = ckpt::blobs(&model, None);
    let other = ModelConfig {
        embed_dim: 7,
        ..cfg
    };
    let err = ckpt::restore(&other, blobs).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let bytes = ckpt::encode(&ckpt::blobs(&model, None));
    assert!(matches!(ckpt::decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
}

#[test]
fn vox1_round_trip() {
    let s = three_events();
    let grids = vec![voxelize(&s, 3).unwrap(), voxelize(&s, 1).unwrap()];
    let bytes = vox::encode(&grids);
    let back = vox::decode(&bytes).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in grids.iter().zip(&back) {
        assert_eq!((a.bins(), a.height(), a.width(), a.origin()), (b.bins(), b.height(), b.width(), b.origin()));
        assert_eq!(a.delta_t(), b.delta_t());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}

#[test]
fn pgm_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<f64> = (0..3 * 6 * 4).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
    let seq = FrameSequence::new(6, 4, vec![0.0, 40_000.0, 80_000.0], data).unwrap();
    frames::write_dir(dir.path(), &seq).unwrap();
    let back = frames::read_dir(dir.path()).unwrap();
    assert_eq!(back, seq);
}

#[test]
fn pgm_sixteen_bit_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    for (i, px) in [[0u16, 65535], [65535, 0]].into_iter().enumerate() {
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, px.to_vec()).unwrap();
        img.save_with_format(dir.path().join(format!("{i}.pgm")), image::ImageFormat::Pnm).unwrap();
    }
    std::fs::write(dir.path().join(frames::TIMESTAMPS), "17\n40017\n").unwrap();
    let seq = frames::read_dir(dir.path()).unwrap();
    assert_eq!(seq.frame(0), &[0.0, 1.0]);
    assert_eq!(seq.timestamps(), &[17.0, 40017.0]);

    std::fs::write(dir.path().join(frames::TIMESTAMPS), "17\n").unwrap();
    assert!(matches!(frames::read_dir(dir.path()), Err(Error::Data(_))));
    std::fs::write(dir.path().join("x.pgm"), b"P5").unwrap();
    assert!(matches!(frames::read_dir(dir.path()), Err(Error::Data(_))));
}
