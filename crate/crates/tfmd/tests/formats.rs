use std::fs;

use tfmd::config::{load_motor_spec, load_run_config, RunConfig};
use tfmd::container;
use tfmd::formats::{self, CheckpointHeader};
use tfmd::Error;
use tfmd_core::cnn::{Architecture, EpochRecord, Network, TrainingHistory};
use tfmd_core::dsp::{make_window, TimeSeries, WindowKind};
use tfmd_core::imaging::{render, ImageConfig, RgbImage};
use tfmd_core::motorsim::{FaultClass, Load};
use tfmd_core::tfr::{stft, transform, Method, TfrConfig};

fn tone(n: usize) -> TimeSeries {
    TimeSeries::new(
        (0..n)
            .map(|i| (i as f64 * 0.37).sin() * 3.0 + 0.25)
            .collect(),
        10_000.0,
    )
    .unwrap()
}

#[test]
fn container_round_trip_and_layout() {
    let data = [1.5f32, -2.0, f32::MIN_POSITIVE, 0.0];
    let bytes = container::encode("thing", &serde_json::json!({"x": 7}), &data);
    assert_eq!(&bytes[..4], b"TFMD");
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
    assert_eq!(header["format"], "thing");
    assert_eq!(header["values"], 4);
    assert_eq!(header["x"], 7);
    assert_eq!(&bytes[8 + hlen..8 + hlen + 4], &1.5f32.to_le_bytes());

    let p = std::path::Path::new("mem");
    let (h, back): (serde_json::Value, Vec<f32>) = container::decode(&bytes, "thing", p).unwrap();
    assert_eq!(h["x"], 7);
    assert_eq!(back, data);
}

#[test]
fn container_rejects_corruption() {
    let p = std::path::Path::new("mem");
    let good = container::encode("thing", &serde_json::json!({}), &[1.0, 2.0]);
    let check = |bytes: &[u8], fmt: &str| {
        let r: tfmd::Result<(serde_json::Value, Vec<f32>)> = container::decode(bytes, fmt, p);
        assert!(matches!(r, Err(Error::Format { .. })), "{r:?}");
    };
    check(&good[..good.len() - 1], "thing");
    check(&good[..6], "thing");
    check(b"PNG\0\0\0\0\0", "thing");
    check(&good, "other");
    let mut bad_len = good.clone();
    bad_len[4] = 0xFF;
    check(&bad_len, "thing");
}

#[test]
fn timeseries_raw_file_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("a/b/sig.f32");
    let ts = tone(1000);
    formats::write_timeseries(
        &raw,
        &ts,
        Some(FaultClass::BrokenRotorBar),
        Some(Load::P50),
        Some(99),
    )
    .unwrap();
    assert_eq!(fs::metadata(&raw).unwrap().len(), 4000);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(formats::sidecar_path(&raw)).unwrap()).unwrap();
    assert_eq!(side["sample_rate_hz"], 10_000.0);
    assert_eq!(side["n_samples"], 1000);
    assert_eq!(side["seed"], 99);
    let (back, meta) = formats::read_timeseries(&raw).unwrap();
    assert_eq!(meta.label, Some(FaultClass::BrokenRotorBar));
    assert_eq!(meta.load, Some(Load::P50));
    for (a, b) in back.samples().iter().zip(ts.samples()) {
        assert_eq!(*a, *b as f32 as f64);
    }

    // sidecar disagreeing with the payload length
    fs::write(&raw, [0u8; 12]).unwrap();
    assert!(matches!(
        formats::read_timeseries(&raw),
        Err(Error::Format { .. })
    ));
}

#[test]
fn spectrogram_and_grid_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TfrConfig::default();
    let ts = tone(4096);
    let s = transform(&ts, Method::StftO, &cfg).unwrap();
    let p = dir.path().join("s.bin");
    formats::write_spectrogram(&p, &s).unwrap();
    let (h, v) = formats::read_spectrogram(&p).unwrap();
    assert_eq!((h.n_frames, h.n_bins), (s.n_frames(), s.n_bins()));
    assert_eq!(v.len(), h.n_frames * h.n_bins);
    // frame-major
    assert_eq!(v[h.n_bins + 3], s.energy.row(1)[3] as f32);

    let g = stft(&ts, &make_window(WindowKind::Hann, 256).unwrap(), 128, 256).unwrap();
    let p = dir.path().join("g.bin");
    formats::write_tfgrid(&p, &g).unwrap();
    let (h, v) = formats::read_tfgrid(&p).unwrap();
    assert_eq!(v.len(), 2 * h.n_frames * h.n_bins);
    let z = g.at(2, 5);
    let i = 2 * (2 * h.n_bins + 5);
    assert_eq!((v[i], v[i + 1]), (z.re as f32, z.im as f32));
    assert!(
        formats::read_spectrogram(&p).is_err(),
        "format tag is checked"
    );
}

#[test]
fn png_round_trip_is_lossless_and_deterministic() {
    let s = transform(&tone(8192), Method::Stft, &TfrConfig::default()).unwrap();
    let img = render(&s, &ImageConfig::default()).unwrap();
    let a = formats::encode_png(&img);
    assert_eq!(a, formats::encode_png(&img));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x/y.png");
    formats::write_png(&p, &img).unwrap();
    assert_eq!(fs::read(&p).unwrap(), a);
    assert_eq!(formats::read_png(&p).unwrap(), img);

    let small = RgbImage::new(2, 1, vec![0, 1, 2, 250, 251, 252]).unwrap();
    formats::write_png(&p, &small).unwrap();
    assert_eq!(formats::read_png(&p).unwrap(), small);
    fs::write(&p, b"not a png").unwrap();
    assert!(matches!(formats::read_png(&p), Err(Error::Format { .. })));
}

#[test]
fn checkpoint_round_trip() {
    let arch = Architecture::compact(3, 8, 8, 5);
    let net = Network::<f32>::new(arch.clone(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    let h = CheckpointHeader {
        architecture: arch,
        seed: 5,
        epoch: 3,
        note: None,
    };
    formats::write_checkpoint(&p, &h, &net).unwrap();
    let (h2, back) = formats::read_checkpoint(&p).unwrap();
    assert_eq!(h2, h);
    assert_eq!(back.params(), net.params());

    // header and payload that disagree on the parameter count
    let wrong = CheckpointHeader {
        architecture: Architecture::compact(3, 16, 16, 5),
        ..h
    };
    container::write(&p, "checkpoint", &wrong, net.params()).unwrap();
    assert!(formats::read_checkpoint(&p).is_err());
}

#[test]
fn history_csv_columns() {
    let h = TrainingHistory {
        epochs: vec![
            EpochRecord {
                epoch: 1,
                train_loss: 1.5,
                train_acc: 0.25,
                val_loss: Some(1.25),
                val_acc: Some(0.5),
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: None,
                val_acc: None,
            },
        ],
    };
    assert_eq!(
        formats::history_csv(&h),
        "epoch,train_loss,train_acc,val_loss,val_acc\n1,1.5,0.25,1.25,0.5\n2,0.5,0.75,,\n"
    );
}

#[test]
fn run_config_json_toml_and_strictness() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("c.toml");
    fs::write(
        &toml,
        "seed = 7\nk = 5\nmethods = [\"STFT-O\"]\n[train]\nepochs = 4\n",
    )
    .unwrap();
    let c = load_run_config(&toml).unwrap();
    assert_eq!((c.seed, c.k, c.train.epochs), (7, 5, 4));
    assert_eq!(c.methods, vec![Method::StftO]);
    assert_eq!(c.per_cell, RunConfig::default().per_cell);

    let json = dir.path().join("c.json");
    fs::write(&json, serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(load_run_config(&json).unwrap(), c);
    assert_eq!(load_motor_spec(&json).unwrap(), c.motor);

    fs::write(&json, r#"{"seeed": 1}"#).unwrap();
    assert!(load_run_config(&json).is_err(), "unknown keys are refused");
    fs::write(&json, r#"{"k": 1}"#).unwrap();
    assert!(matches!(load_run_config(&json), Err(Error::Config(_))));
    fs::write(&json, r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
    assert!(load_run_config(&json).is_err());
}

#[test]
fn error_json_is_machine_readable() {
    let e = Error::Config("k must be at least 2".into());
    let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
    assert_eq!(v["error"]["kind"], "invalid-config");
    assert!(v["error"]["message"]
        .as_str()
        .unwrap()
        .contains("k must be"));
    assert_eq!(e.exit_code(), 2);
    assert_eq!(
        Error::Stages {
            failed: 1,
            total: 3
        }
        .exit_code(),
        1
    );
}
