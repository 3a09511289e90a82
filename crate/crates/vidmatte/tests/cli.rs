use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vidmatte::cli::run;
use vidmatte::dataset::{self, Sources};
use vidmatte::pngio;
use vidmatte::report::EvaluationReport;
use vidmatte_core::compositor::SynthesisConfig;
use vidmatte_core::morphology::make_trimap;

fn vm(args: &[&str]) -> i32 {
    run(std::iter::once("vidmatte").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Relative path → bytes for every file below `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn synth(out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["synthesize", "--out", p(out), "--num", "2", "--frames", "5", "--size", "32", "--seed", "7"];
    args.extend_from_slice(extra);
    vm(&args)
}

const MATTING_CFG: &str = "net = matting\ntrain.epochs = 2\ntrain.steps_per_epoch = 1\ntrain.crop_size = 32\ntrain.crop_scales = 32\ntrain.n = 1\n";
const TRIMAP_CFG: &str = "net = trimap\ntrain.epochs = 1\ntrain.steps_per_epoch = 2\ntrain.crop_size = 32\n";

/// Writes groundtruth trimaps of sample 0 into `dir`.
fn write_gt_trimaps(data: &Path, dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let s = dataset::load_sample(&data.join("sample_00000")).unwrap();
    for (t, a) in s.alpha.frames().iter().enumerate() {
        pngio::write_trimap(&dir.join(pngio::frame_name(t)), &make_trimap(a, 3, 2).unwrap()).unwrap();
    }
}

#[test]
fn synthesize_is_deterministic_and_worker_invariant() {
    let d = tempfile::tempdir().unwrap();
    let (a, b, c) = (d.path().join("a"), d.path().join("b"), d.path().join("c"));
    assert_eq!(synth(&a, &[]), 0);
    assert_eq!(synth(&b, &[]), 0);
    assert_eq!(synth(&c, &["--workers", "2"]), 0);
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    assert_eq!(ta, tree(&c));
    // 2 samples × (5 composite + 5 fg + 5 bg + 5 alpha + 4 motion + manifest) + dataset manifest
    assert_eq!(ta.len(), 2 * 25 + 1);
}

#[test]
fn reloaded_dataset_matches_in_memory_synthesis() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(synth(d.path(), &[]), 0);
    let loaded = dataset::load_dataset(d.path()).unwrap();
    let cfg = SynthesisConfig { height: 32, width: 32, frames: 5, ..SynthesisConfig::default() };
    for (i, l) in loaded.iter().enumerate() {
        let fresh = dataset::synthesize_sample(&cfg, &Sources::default(), 7, i as u64).unwrap();
        for (x, y) in l.composite.frames().iter().zip(fresh.composite.frames()) {
            let worst = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(worst <= 1.0 / 255.0, "{worst}");
        }
        assert_eq!(l.motion, fresh.motion);
        assert_eq!(l.track, fresh.track);
    }
}

#[test]
fn usage_and_input_errors_exit_with_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(vm(&["--help"]), 0);
    assert_eq!(vm(&["synthesize"]), 2);
    assert_eq!(vm(&["no-such-command"]), 2);
    assert_eq!(synth(&d.path().join("x"), &["--fg-mode", "files"]), 2);
    assert_eq!(synth(&d.path().join("x"), &["--workers", "0"]), 2);
    let out = d.path().join("ck.bin");
    assert_eq!(vm(&["train", "--net", "matting", "--config", p(&d.path().join("missing.cfg")), "--synthetic", "1", "--out", p(&out)]), 2);
    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "train.epochs = zero\n").unwrap();
    assert_eq!(vm(&["train", "--net", "matting", "--config", p(&cfg), "--synthetic", "1", "--out", p(&out)]), 2);
    assert_eq!(vm(&["evaluate", "--pred", p(d.path()), "--data", p(&d.path().join("nothing")), "--json", p(&d.path().join("r.json"))]), 2);
    assert!(!out.exists());
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_vidmatte");
    let st = std::process::Command::new(bin).args(["train", "--net", "matting"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(!st.stderr.is_empty());
    let st = std::process::Command::new(bin).arg("--version").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
}

#[test]
fn train_resume_matte_and_evaluate() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let data = root.join("data");
    assert_eq!(synth(&data, &[]), 0);
    let cfg = root.join("m.cfg");
    std::fs::write(&cfg, MATTING_CFG).unwrap();
    let (ck1, ck2, log) = (root.join("m1.ckpt"), root.join("m2.ckpt"), root.join("log.csv"));
    assert_eq!(vm(&["train", "--net", "matting", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck1), "--log", p(&log)]), 0);
    let first = vidmatte::checkpoint::load(&ck1).unwrap();
    assert_eq!((first.step, first.epoch()), (2, 2));
    assert_eq!(vm(&["train", "--net", "matting", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck2), "--log", p(&log), "--resume", p(&ck1), "--set", "train.epochs=4"]), 0);
    let second = vidmatte::checkpoint::load(&ck2).unwrap();
    assert_eq!((second.step, second.epoch()), (4, 4));
    let rows: Vec<String> = std::fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("step,epoch,lr,loss"));
    assert!(rows[1].starts_with("0,0,") && rows[4].starts_with("3,3,"));
    // Resuming as the other network is refused.
    let tcfg = root.join("t.cfg");
    std::fs::write(&tcfg, TRIMAP_CFG).unwrap();
    assert_eq!(vm(&["train", "--net", "trimap", "--config", p(&tcfg), "--data", p(&data), "--out", p(&root.join("x.ckpt")), "--resume", p(&ck1)]), 2);

    let tri = root.join("tri");
    write_gt_trimaps(&data, &tri);
    let clip = data.join("sample_00000").join("composite");
    let (m1, m2) = (root.join("matte1"), root.join("matte2"));
    assert_eq!(vm(&["matte", "--checkpoint", p(&ck2), "--clip-dir", p(&clip), "--trimap-dir", p(&tri), "--out", p(&m1)]), 0);
    assert_eq!(vm(&["matte", "--checkpoint", p(&ck2), "--clip-dir", p(&clip), "--trimap-dir", p(&tri), "--out", p(&m2), "--n", "1"]), 0);
    let t1 = tree(&m1);
    assert_eq!(t1.len(), 5);
    assert_eq!(t1, tree(&m2));
    let decoder = png::Decoder::new(std::io::Cursor::new(t1.values().next().unwrap().clone()));
    let info = decoder.read_info().unwrap();
    assert_eq!(info.info().bit_depth, png::BitDepth::Sixteen);
    assert_eq!(vm(&["matte", "--checkpoint", p(&ck2), "--clip-dir", p(&clip), "--trimap-dir", p(&tri), "--out", p(&m2), "--n", "2"]), 2);

    // Groundtruth as prediction scores zero everywhere.
    let pred = root.join("pred");
    for s in ["sample_00000", "sample_00001"] {
        let dst = pred.join(s);
        std::fs::create_dir_all(&dst).unwrap();
        for (name, bytes) in tree(&data.join(s).join("alpha")) {
            std::fs::write(dst.join(name), bytes).unwrap();
        }
    }
    let (json, csv, summary) = (root.join("r.json"), root.join("frames.csv"), root.join("summary.csv"));
    let args = ["evaluate", "--pred", p(&pred), "--data", p(&data), "--json", p(&json), "--csv", p(&csv), "--summary-csv", p(&summary)];
    assert_eq!(vm(&args), 0);
    let rep: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(rep.clips.len(), 2);
    for m in rep.clips.iter().map(|c| &c.metrics).chain([&rep.aggregate]) {
        assert_eq!((m.sad, m.mse, m.grad, m.conn, m.dtssd, m.messddt), (0.0, 0.0, 0.0, 0.0, Some(0.0), Some(0.0)));
    }
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 5);
    assert_eq!(std::fs::read_to_string(&summary).unwrap().lines().count(), 1 + 2 + 1);

    // Trained predictions: aggregate is the clip mean, report follows the schema.
    for s in ["sample_00000", "sample_00001"] {
        let out = pred.join(s);
        std::fs::remove_dir_all(&out).unwrap();
        let t = root.join(format!("tri_{s}"));
        std::fs::create_dir_all(&t).unwrap();
        let sample = dataset::load_sample(&data.join(s)).unwrap();
        for (i, a) in sample.alpha.frames().iter().enumerate() {
            pngio::write_trimap(&t.join(pngio::frame_name(i)), &make_trimap(a, 3, 2).unwrap()).unwrap();
        }
        let c = data.join(s).join("composite");
        assert_eq!(vm(&["matte", "--checkpoint", p(&ck2), "--clip-dir", p(&c), "--trimap-dir", p(&t), "--out", p(&out)]), 0);
    }
    assert_eq!(vm(&args), 0);
    let text = std::fs::read_to_string(&json).unwrap();
    let rep: EvaluationReport = serde_json::from_str(&text).unwrap();
    let mean = |f: fn(&vidmatte::report::Metrics) -> f64| rep.clips.iter().map(|c| f(&c.metrics)).sum::<f64>() / rep.clips.len() as f64;
    assert!(rep.aggregate.sad > 0.0);
    assert!((rep.aggregate.sad - mean(|m| m.sad)).abs() < 1e-12);
    assert!((rep.aggregate.grad - mean(|m| m.grad)).abs() < 1e-12);
    assert!((rep.aggregate.messddt.unwrap() - mean(|m| m.messddt.unwrap())).abs() < 1e-12);
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("docs/report.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    assert!(v.is_valid(&serde_json::from_str(&text).unwrap()));

    // Worker count, motion source and mask options.
    let json2 = root.join("r2.json");
    assert_eq!(vm(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--json", p(&json2), "--workers", "2"]), 0);
    assert_eq!(std::fs::read(&json).unwrap(), std::fs::read(&json2).unwrap());
    assert_eq!(vm(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--json", p(&json2), "--motion", "none", "--mask", "full"]), 0);
    let rep2: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(&json2).unwrap()).unwrap();
    assert_eq!(rep2.aggregate.messddt, None);
    assert_eq!(rep2.aggregate.masked_pixels, 2 * 5 * 32 * 32);
    let motion_root = root.join("motion");
    for s in ["sample_00000", "sample_00001"] {
        let dst = motion_root.join(s);
        std::fs::create_dir_all(&dst).unwrap();
        for (name, bytes) in tree(&data.join(s).join("motion")) {
            std::fs::write(dst.join(name), bytes).unwrap();
        }
    }
    assert_eq!(vm(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--json", p(&json2), "--motion", "files", "--motion-dir", p(&motion_root)]), 0);
    let rep3: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(&json2).unwrap()).unwrap();
    assert_eq!(rep3.aggregate.messddt, rep.aggregate.messddt);
    assert_eq!(vm(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--json", p(&json2), "--motion", "files"]), 2);
}

#[test]
fn propagate_settings() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    let data = root.join("data");
    assert_eq!(vm(&["synthesize", "--out", p(&data), "--num", "1", "--frames", "9", "--size", "32", "--seed", "3"]), 0);
    let cfg = root.join("t.cfg");
    std::fs::write(&cfg, TRIMAP_CFG).unwrap();
    let ck = root.join("t.ckpt");
    assert_eq!(vm(&["train", "--net", "trimap", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck)]), 0);
    let tri = root.join("tri");
    write_gt_trimaps(&data, &tri);
    let clip = data.join("sample_00000").join("composite");

    let full = root.join("full");
    assert_eq!(vm(&["propagate", "--clip-dir", p(&clip), "--trimap-dir", p(&tri), "--setting", "full", "--out", p(&full)]), 0);
    assert_eq!(tree(&full), tree(&tri));

    // Only the first trimap is given to the single-trimap run.
    let one = root.join("one_in");
    std::fs::create_dir_all(&one).unwrap();
    std::fs::copy(tri.join(pngio::frame_name(0)), one.join(pngio::frame_name(0))).unwrap();
    let out = root.join("single");
    assert_eq!(vm(&["propagate", "--checkpoint", p(&ck), "--clip-dir", p(&clip), "--trimap-dir", p(&one), "--setting", "1-trimap", "--out", p(&out)]), 0);
    let written = tree(&out);
    assert_eq!(written.len(), 9);
    assert_eq!(written[Path::new("frame_00000.png")], std::fs::read(tri.join(pngio::frame_name(0))).unwrap());
    for t in 1..9 {
        // Reads back through the strict {0, 128, 255} decoder.
        pngio::read_trimap(&out.join(pngio::frame_name(t))).unwrap();
    }
    let again = root.join("single2");
    assert_eq!(vm(&["propagate", "--checkpoint", p(&ck), "--clip-dir", p(&clip), "--trimap-dir", p(&one), "--labeled", "0", "--out", p(&again)]), 0);
    assert_eq!(tree(&again), written);

    // Unlabelled frames need a checkpoint; labels must exist and lie inside the clip.
    assert_eq!(vm(&["propagate", "--clip-dir", p(&clip), "--trimap-dir", p(&one), "--setting", "1-trimap", "--out", p(&root.join("e1"))]), 2);
    assert_eq!(vm(&["propagate", "--checkpoint", p(&ck), "--clip-dir", p(&clip), "--trimap-dir", p(&one), "--labeled", "0,3", "--out", p(&root.join("e2"))]), 2);
    assert_eq!(vm(&["propagate", "--checkpoint", p(&ck), "--clip-dir", p(&clip), "--trimap-dir", p(&tri), "--labeled", "12", "--out", p(&root.join("e3"))]), 2);
    assert_eq!(vm(&["propagate", "--clip-dir", p(&clip), "--trimap-dir", p(&tri), "--setting", "sometimes", "--out", p(&root.join("e4"))]), 2);
}
