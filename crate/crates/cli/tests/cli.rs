use std::path::Path;
use std::process::{Command, Output};

use hidflow_core::io::{read_cube, write_cube};
use hidflow_core::HsiCube;

fn hidflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hidflow"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
seed = 11
[model]
bands = 4
[model.encoder]
width = 4
stages = 2
window = 2
heads = 2
[model.flow]
blocks = 2
transfer_width = 8
[train]
batch_size = 4
gaussian_epochs = 1
mixture_epochs = 1
patch_size = 8
patch_stride = 8
[data.synthetic]
count = 2
height = 16
width = 16
bands = 4
[output]
checkpoint_every = 2
"#;

#[test]
fn import_degrade_evaluate_export() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("scene.raw");
    let values: Vec<u16> = (0..16 * 16 * 3).map(|i| (i * 37 % 65536) as u16).collect();
    std::fs::write(
        &raw,
        values
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect::<Vec<u8>>(),
    )
    .unwrap();
    let clean = dir.path().join("clean.hsic");
    let out = hidflow(&[
        "import",
        "--height",
        "16",
        "--width",
        "16",
        "--bands",
        "3",
        "--dtype",
        "u16",
        "--scale",
        "65535",
        "--out",
        p(&clean),
        p(&raw),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    let cube = read_cube(&clean).unwrap();
    assert_eq!(cube.dims(), (16, 16, 3));
    assert_eq!(cube.get(0, 1, 0), ((3 * 37) as f64 / 65535.0) as f32 as f64);

    let noisy = dir.path().join("noisy.hsic");
    assert_eq!(
        code(&hidflow(&[
            "degrade",
            "--sigma",
            "30",
            "--seed",
            "4",
            "--out",
            p(&noisy),
            p(&clean)
        ])),
        0
    );
    let mixed = dir.path().join("mixed.hsic");
    assert_eq!(
        code(&hidflow(&[
            "degrade",
            "--mixture",
            "--seed",
            "4",
            "--out",
            p(&mixed),
            p(&clean)
        ])),
        0
    );
    assert!(dir.path().join("mixed.mixture.json").exists());

    let report = dir.path().join("report.csv");
    let pair = format!("{}={}", p(&noisy), p(&clean));
    assert_eq!(code(&hidflow(&["evaluate", "--out", p(&report), &pair])), 0);
    let csv = std::fs::read_to_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "name,psnr_db,ssim,sam_rad");
    let psnr: f64 = lines
        .next()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((psnr - 18.59).abs() < 0.5, "{psnr}");

    let png = dir.path().join("rgb.png");
    assert_eq!(
        code(&hidflow(&[
            "export-png",
            "--bands",
            "2,1,0",
            "--out",
            p(&png),
            p(&clean)
        ])),
        0
    );
    assert!(std::fs::read(&png).unwrap().starts_with(b"\x89PNG"));
    assert_eq!(
        code(&hidflow(&[
            "export-png",
            "--bands",
            "0,1,3",
            "--out",
            p(&png),
            p(&clean)
        ])),
        3
    );
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nlearning_rate = 3\n").unwrap();
    assert_eq!(code(&hidflow(&["train", "--config", p(&cfg)])), 2);
    assert_eq!(code(&hidflow(&["train"])), 2);

    let missing = dir.path().join("missing.hsic");
    let out = hidflow(&[
        "degrade",
        "--sigma",
        "10",
        "--out",
        p(&dir.path().join("o.hsic")),
        p(&missing),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.hsic"));

    let garbage = dir.path().join("garbage.hsic");
    std::fs::write(&garbage, b"not a cube").unwrap();
    let out = hidflow(&[
        "export-png",
        "--out",
        p(&dir.path().join("x.png")),
        p(&garbage),
    ]);
    assert_eq!(code(&out), 3);
    assert!(!dir.path().join("x.png").exists());

    let out = Command::new(env!("CARGO_BIN_EXE_hidflow"))
        .args(["verify"])
        .env("HIDFLOW_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn verify_passes() {
    let out = hidflow(&["verify", "--level", "quick"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    assert!(
        text.lines().filter(|l| l.starts_with("PASS")).count() >= 7,
        "{text}"
    );
    assert!(!text.contains("FAIL"));
}

#[test]
fn train_denoise_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run_a = dir.path().join("a");
    let out = hidflow(&["train", "--config", p(&cfg), "--out", p(&run_a)]);
    assert_eq!(code(&out), 0, "{out:?}");
    let model = run_a.join("final.hidf");
    for name in [
        "final.hidf",
        "checkpoint-0000002.hidf",
        "checkpoint-0000004.hidf",
        "train_log.csv",
        "config.toml",
    ] {
        assert!(run_a.join(name).exists(), "{name}");
    }

    // Same config and seed: same checkpoint, same printed hash.
    let run_b = dir.path().join("b");
    let out_b = hidflow(&["train", "--config", p(&cfg), "--out", p(&run_b)]);
    assert_eq!(
        std::fs::read(&model).unwrap(),
        std::fs::read(run_b.join("final.hidf")).unwrap()
    );
    let hash = |o: &Output| {
        stdout(o)
            .split("sha256 ")
            .nth(1)
            .unwrap()
            .trim()
            .to_string()
    };
    assert_eq!(hash(&out), hash(&out_b));

    // The written config snapshot trains again.
    assert_eq!(
        code(&hidflow(&[
            "train",
            "--config",
            p(&run_a.join("config.toml")),
            "--out",
            p(&dir.path().join("c"))
        ])),
        0
    );

    let noisy = dir.path().join("noisy.hsic");
    write_cube(
        &noisy,
        &HsiCube::from_fn(8, 8, 4, |r, c, b| ((r * 8 + c + b) % 7) as f64 / 7.0),
    )
    .unwrap();
    let d1 = dir.path().join("d1");
    let d2 = dir.path().join("d2");
    for d in [&d1, &d2] {
        let out = hidflow(&[
            "denoise",
            "--checkpoint",
            p(&model),
            "--samples",
            "3",
            "--out",
            p(d),
            p(&noisy),
        ]);
        assert_eq!(code(&out), 0, "{out:?}");
    }
    let a = std::fs::read(d1.join("noisy-denoised.hsic")).unwrap();
    assert_eq!(a, std::fs::read(d2.join("noisy-denoised.hsic")).unwrap());
    let samples: Vec<HsiCube> = (0..3)
        .map(|i| read_cube(&d1.join(format!("noisy-sample-{i}.hsic"))).unwrap())
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let diff: f64 = samples[i]
                .data()
                .iter()
                .zip(samples[j].data())
                .map(|(x, y)| (x - y).abs())
                .sum();
            assert!(diff > 0.0);
        }
    }

    let s = dir.path().join("s");
    let out = hidflow(&[
        "sample",
        "--checkpoint",
        p(&model),
        "--samples",
        "2",
        "--seed",
        "5",
        "--out",
        p(&s),
        p(&noisy),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(s.join("noisy-sample-1.hsic").exists());

    let out = hidflow(&["verify", "--checkpoint", p(&model)]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS checkpoint round trip"));

    // Resuming from the midpoint reproduces the final checkpoint.
    let resumed = dir.path().join("r");
    let out = hidflow(&[
        "train",
        "--checkpoint",
        p(&run_a.join("checkpoint-0000002.hidf")),
        "--out",
        p(&resumed),
    ]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert_eq!(
        std::fs::read(&model).unwrap(),
        std::fs::read(resumed.join("final.hidf")).unwrap()
    );

    // Wrong band count for this model.
    let wrong = dir.path().join("wrong.hsic");
    write_cube(&wrong, &HsiCube::filled(8, 8, 3, 0.5)).unwrap();
    assert_eq!(
        code(&hidflow(&[
            "denoise",
            "--checkpoint",
            p(&model),
            "--out",
            p(&d1),
            p(&wrong)
        ])),
        3
    );
}
