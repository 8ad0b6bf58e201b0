use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use spatialgrasp::dataset::{
    convert_episode, convert_episodes, load_index, load_manifest, oracle_detector, read_prompts_jsonl,
    write_prompts_jsonl, DetectorNoise, MissCurve, SceneSpec, SyntheticScene,
};
use spatialgrasp::error::Error;
use spatialgrasp::geometry::PromptOptions;
use spatialgrasp::io::{save_depth, save_image};
use spatialgrasp::{DepthMap, Image, RandomStream};
use tempfile::TempDir;

fn frame(rgb: &str, depth: &str, grasp_box: Value) -> Value {
    json!({
        "rgb_path": rgb,
        "depth_path": depth,
        "state": {"ee_position": [0.1, 0.0, 0.4], "ee_orientation": [0, 0, 0, 1], "gripper_status": 1.0},
        "grasp_box": grasp_box,
        "task_prompt": "pick_big"
    })
}

fn manifest(frames: Vec<Value>) -> Value {
    json!({
        "schema_version": 1,
        "episode_id": "ep",
        "intrinsics": {"fx": 600, "fy": 600, "cx": 320, "cy": 240},
        "depth_scale": 1.0,
        "frames": frames,
    })
}

fn fixture() -> TempDir {
    let dir = TempDir::new().unwrap();
    save_image(&Image::filled(640, 480, [0.4, 0.5, 0.6]).unwrap(), dir.path().join("rgb.ppm")).unwrap();
    save_depth(&DepthMap::uniform(640, 480, 0.5).unwrap(), dir.path().join("d.pfm")).unwrap();
    save_depth(&DepthMap::uniform(64, 48, 0.5).unwrap(), dir.path().join("small.pfm")).unwrap();
    dir
}

fn write(dir: &Path, name: &str, v: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn boxed(x: f64, conf: f64) -> Value {
    json!({"x": x, "y": 240, "w": 60, "h": 20, "theta": 0.0, "confidence": conf})
}

#[test]
fn one_prompt_per_annotated_frame() {
    let dir = fixture();
    let frames = vec![
        frame("rgb.ppm", "d.pfm", boxed(320.0, 0.9)),
        frame("rgb.ppm", "d.pfm", Value::Null),
        frame("rgb.ppm", "d.pfm", boxed(380.0, 0.5)),
    ];
    let path = write(dir.path(), "m.json", &manifest(frames));
    let m = load_manifest(&path).unwrap();
    let prompts = convert_episode(&m).unwrap();
    assert_eq!(prompts.len(), 2);
    assert_eq!(prompts[0].position, [0.0, 0.0, 0.5]);
    assert!((prompts[0].gripper_width - 0.05).abs() < 1e-15);
    assert_eq!(prompts[0].confidence, 0.9);
    assert!((prompts[1].position[0] - 60.0 * 0.5 / 600.0).abs() < 1e-15);

    let mut buf = Vec::new();
    write_prompts_jsonl(&prompts, &mut buf).unwrap();
    assert_eq!(read_prompts_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(), prompts);
}

#[test]
fn depth_scale_applies() {
    let dir = fixture();
    let mut m = manifest(vec![frame("rgb.ppm", "d.pfm", boxed(320.0, 1.0))]);
    m["depth_scale"] = json!(2.0);
    let prompts = convert_episode(&load_manifest(write(dir.path(), "m.json", &m)).unwrap()).unwrap();
    assert_eq!(prompts[0].position, [0.0, 0.0, 1.0]);
}

fn validation_field(err: &Error) -> (Option<usize>, &str) {
    match err {
        Error::Validation { frame, field, .. } => (*frame, field.as_str()),
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn validation_names_frame_and_field() {
    let dir = fixture();
    let mut zero_scale = manifest(vec![frame("rgb.ppm", "d.pfm", Value::Null)]);
    zero_scale["depth_scale"] = json!(0.0);
    let err = load_manifest(write(dir.path(), "a.json", &zero_scale)).unwrap_err();
    assert_eq!(validation_field(&err), (None, "depth_scale"));
    assert!(err.to_string().contains("depth_scale"));

    let missing = manifest(vec![frame("rgb.ppm", "d.pfm", Value::Null), frame("rgb.ppm", "nope.pfm", Value::Null)]);
    let err = load_manifest(write(dir.path(), "b.json", &missing)).unwrap_err();
    assert_eq!(validation_field(&err), (Some(1), "depth_path"));

    let mut bad_quat = frame("rgb.ppm", "d.pfm", Value::Null);
    bad_quat["state"]["ee_orientation"] = json!([0, 0, 0, 2]);
    let err = load_manifest(write(dir.path(), "c.json", &manifest(vec![bad_quat]))).unwrap_err();
    assert_eq!(validation_field(&err), (Some(0), "state.ee_orientation"));

    let mut gripper = frame("rgb.ppm", "d.pfm", Value::Null);
    gripper["state"]["gripper_status"] = json!(1.5);
    let err = load_manifest(write(dir.path(), "d.json", &manifest(vec![gripper]))).unwrap_err();
    assert_eq!(validation_field(&err), (Some(0), "state.gripper_status"));

    let err = load_manifest(write(dir.path(), "e.json", &manifest(vec![]))).unwrap_err();
    assert_eq!(validation_field(&err), (None, "frames"));

    let mut version = manifest(vec![frame("rgb.ppm", "d.pfm", Value::Null)]);
    version["schema_version"] = json!(2);
    let err = load_manifest(write(dir.path(), "f.json", &version)).unwrap_err();
    assert_eq!(validation_field(&err), (None, "schema_version"));

    let zero_w = json!({"x": 320, "y": 240, "w": 0, "h": 20, "theta": 0.0});
    let err = load_manifest(write(dir.path(), "g.json", &manifest(vec![frame("rgb.ppm", "d.pfm", zero_w)]))).unwrap_err();
    assert_eq!(validation_field(&err), (Some(0), "grasp_box"));
}

#[test]
fn conversion_is_all_or_nothing() {
    let dir = fixture();
    let frames = vec![
        frame("rgb.ppm", "d.pfm", boxed(320.0, 1.0)),
        frame("rgb.ppm", "small.pfm", boxed(320.0, 1.0)),
    ];
    let m = load_manifest(write(dir.path(), "m.json", &manifest(frames))).unwrap();
    match convert_episode(&m).unwrap_err() {
        Error::Frame { frame, .. } => assert_eq!(frame, 1),
        other => panic!("unexpected {other}"),
    }

    let outside = manifest(vec![frame("rgb.ppm", "d.pfm", boxed(900.0, 1.0))]);
    let m = load_manifest(write(dir.path(), "o.json", &outside)).unwrap();
    assert!(matches!(convert_episode(&m).unwrap_err(), Error::Frame { frame: 0, .. }));
}

#[test]
fn index_loads_episodes_in_order() {
    let dir = fixture();
    fs::create_dir(dir.path().join("ep1")).unwrap();
    write(dir.path(), "m0.json", &manifest(vec![frame("rgb.ppm", "d.pfm", boxed(320.0, 1.0))]));
    let mut second = manifest(vec![
        frame("../rgb.ppm", "../d.pfm", boxed(320.0, 1.0)),
        frame("../rgb.ppm", "../d.pfm", boxed(330.0, 1.0)),
    ]);
    second["episode_id"] = json!("ep1");
    write(&dir.path().join("ep1"), "m.json", &second);
    let index = write(dir.path(), "index.json", &json!({"schema_version": 1, "episodes": ["m0.json", "ep1/m.json"]}));
    let episodes = load_index(index).unwrap();
    assert_eq!(episodes.len(), 2);
    let converted = convert_episodes(&episodes, &PromptOptions::default()).unwrap();
    assert_eq!(converted.iter().map(Vec::len).collect::<Vec<_>>(), [1, 2]);
}

#[test]
fn miss_rate_monte_carlo() {
    let noise = DetectorNoise {
        miss: MissCurve::through(100.0, 0.0, 10.0, 0.5),
        ..DetectorNoise::default()
    };
    assert!((noise.miss_rate_at(10.0) - 0.5).abs() < 1e-12);
    let scene = SyntheticScene::generate(&SceneSpec::default(), &mut RandomStream::new(1)).unwrap();
    let base = RandomStream::new(2);
    let trials = 10_000;
    let misses = (0..trials)
        .filter(|&i| oracle_detector(&scene, 10.0, &noise, &mut base.fork_indexed("trial", i)).is_none())
        .count();
    let rate = misses as f64 / trials as f64;
    assert!((rate - 0.5).abs() <= 0.02, "empirical miss rate {rate}");
}

#[test]
fn detector_noise_is_log_symmetric() {
    let noise = DetectorNoise::default();
    for r in [1.1, 1.7, 2.5, 10.0] {
        let e0 = noise.reference_ms;
        assert!((noise.sigma_px_at(e0 * r) - noise.sigma_px_at(e0 / r)).abs() < 1e-12);
        assert!((noise.sigma_theta_at(e0 * r) - noise.sigma_theta_at(e0 / r)).abs() < 1e-12);
        assert!((noise.miss_rate_at(e0 * r) - noise.miss_rate_at(e0 / r)).abs() < 1e-12);
    }
}
