use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use vrd::linalg::Mat;
use vrd::vrd::{helmholtz_solve, VrdParams};
use vrd::{io, Field};

fn vrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vrd"))
        .args(args)
        .output()
        .expect("spawn vrd")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

fn identity_params() -> VrdParams {
    let mut params = VrdParams::zeros(1, 1);
    params.q_i = Mat::diag(&[1.0]);
    params
}

fn wavy(h: usize, w: usize) -> Field {
    Field::from_fn(h, w, 1, |i, j, _| ((i * 7 + j * 3) % 11) as f64 - 5.0).unwrap()
}

#[test]
fn infer_zero_input_gives_zero_output() {
    let d = TempDir::new().unwrap();
    io::write_params(p(&d, "a.vrdp"), &identity_params()).unwrap();
    io::write_field(p(&d, "in.vrdt"), &Field::zeros(5, 4, 1).unwrap()).unwrap();
    let o = vrd(&[
        "infer",
        "--params",
        &p(&d, "a.vrdp"),
        "--input",
        &p(&d, "in.vrdt"),
        "--output",
        &p(&d, "out.vrdt"),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(io::read_field(p(&d, "out.vrdt")).unwrap().max_abs(), 0.0);
}

#[test]
fn infer_identity_params_is_helmholtz_smoothing_and_deterministic() {
    let d = TempDir::new().unwrap();
    let input = wavy(9, 13);
    io::write_params(p(&d, "a.vrdp"), &identity_params()).unwrap();
    io::write_field(p(&d, "in.vrdt"), &input).unwrap();
    let run = |out: &str| {
        let o = vrd(&[
            "infer",
            "--params",
            &p(&d, "a.vrdp"),
            "--input",
            &p(&d, "in.vrdt"),
            "--output",
            &p(&d, out),
        ]);
        assert_eq!(code(&o), 0);
        fs::read(p(&d, out)).unwrap()
    };
    let (a, b) = (run("o1.vrdt"), run("o2.vrdt"));
    assert_eq!(a, b);
    let got = io::decode_field(&a).unwrap();
    let want = helmholtz_solve(&input, 1.0).unwrap();
    assert!(got.sub(&want).unwrap().max_abs() < 1e-12);
}

#[test]
fn infer_writes_argmax_labels() {
    let d = TempDir::new().unwrap();
    let mut params = VrdParams::zeros(2, 2);
    params.q_i = Mat::diag(&[-1.0, -1.0]);
    io::write_params(p(&d, "a.vrdp"), &params).unwrap();
    let input = Field::from_fn(
        6,
        6,
        2,
        |_, j, c| if (j < 3) == (c == 0) { 1.0 } else { 0.0 },
    )
    .unwrap();
    io::write_field(p(&d, "in.vrdt"), &input).unwrap();
    let o = vrd(&[
        "infer",
        "--params",
        &p(&d, "a.vrdp"),
        "--input",
        &p(&d, "in.vrdt"),
        "--output",
        &p(&d, "out.vrdt"),
        "--labels",
        &p(&d, "lab.vrdt"),
    ]);
    assert_eq!(code(&o), 0);
    let labels = io::read_field(p(&d, "lab.vrdt")).unwrap();
    assert_eq!(labels.channels(), 1);
    assert_eq!(labels.get(3, 0, 0), 0.0);
    assert_eq!(labels.get(3, 5, 0), 1.0);
}

#[test]
fn infer_truncated_file_exits_2_naming_offset() {
    let d = TempDir::new().unwrap();
    io::write_params(p(&d, "a.vrdp"), &identity_params()).unwrap();
    let bytes = io::encode_field(&wavy(3, 3));
    fs::write(p(&d, "in.vrdt"), &bytes[..bytes.len() - 5]).unwrap();
    let o = vrd(&[
        "infer",
        "--params",
        &p(&d, "a.vrdp"),
        "--input",
        &p(&d, "in.vrdt"),
        "--output",
        &p(&d, "out.vrdt"),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("offset"));
    assert!(!Path::new(&p(&d, "out.vrdt")).exists());
}

#[test]
fn infer_channel_mismatch_exits_3() {
    let d = TempDir::new().unwrap();
    io::write_params(p(&d, "a.vrdp"), &VrdParams::zeros(2, 1)).unwrap();
    io::write_field(p(&d, "in.vrdt"), &wavy(4, 4)).unwrap();
    let o = vrd(&[
        "infer",
        "--params",
        &p(&d, "a.vrdp"),
        "--input",
        &p(&d, "in.vrdt"),
        "--output",
        &p(&d, "out.vrdt"),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&vrd(&["infer", "--params", "x"])), 2);
    assert_eq!(code(&vrd(&["selftest", "--bogus"])), 2);
    assert_eq!(
        code(&vrd(&[
            "green",
            "--lambda",
            "0.1",
            "--size",
            "12",
            "--out",
            "/tmp/never.pgm"
        ])),
        2
    );
}

fn train_run(d: &TempDir, name: &str, config: &str) -> Output {
    fs::write(p(d, &format!("{name}.cfg")), config).unwrap();
    vrd(&[
        "train",
        "--config",
        &p(d, &format!("{name}.cfg")),
        "--out",
        &p(d, &format!("{name}.vrdp")),
    ])
}

const SMALL: &str =
    "epochs = 3\nlr = 0.05\nseed = 3\ngrid = 12x10\narch = mix:3,vrd:3,relu,mix:2\n";

#[test]
fn train_with_zero_epochs_writes_initial_params() {
    let d = TempDir::new().unwrap();
    let o = train_run(&d, "z", "epochs = 0\ngrid = 8\nseed = 5\narch = vrd:2\n");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(p(&d, "z.csv")).unwrap(), "epoch,loss\n");
    let params = io::read_params(p(&d, "z.vrdp")).unwrap();
    let net = vrd::model::Network::build(&vrd::model::parse_arch("vrd:2").unwrap(), 2, 5).unwrap();
    assert_eq!(net.layers[0], vrd::model::Layer::Vrd(params));
}

#[test]
fn train_is_deterministic() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&train_run(&d, "a", SMALL)), 0);
    assert_eq!(code(&train_run(&d, "b", SMALL)), 0);
    let csv = fs::read_to_string(p(&d, "a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv, fs::read_to_string(p(&d, "b.csv")).unwrap());
    assert_eq!(
        fs::read(p(&d, "a.vrdp")).unwrap(),
        fs::read(p(&d, "b.vrdp")).unwrap()
    );
}

#[test]
fn train_default_config_reduces_loss() {
    let d = TempDir::new().unwrap();
    let o = train_run(&d, "def", "# defaults\n");
    assert_eq!(code(&o), 0);
    let losses: Vec<f64> = fs::read_to_string(p(&d, "def.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 30);
    assert!(losses[29] < losses[0], "{losses:?}");
}

#[test]
fn train_config_errors_exit_2() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&train_run(&d, "u", "epochs = 1\nwidth = 3\n")), 2);
    assert_eq!(code(&train_run(&d, "m", "arch = mix:2\n")), 2);
}

#[test]
fn train_divergence_exits_4() {
    let d = TempDir::new().unwrap();
    let o = train_run(
        &d,
        "x",
        "epochs = 3\nlr = 1e200\ngrid = 6\narch = mix:2,vrd:2\n",
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

fn pgm_pixels(path: &str) -> (Vec<u8>, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let header_len = "P5\n255 255\n255\n".len();
    (bytes[..header_len].to_vec(), bytes[header_len..].to_vec())
}

#[test]
fn green_writes_pgm_and_csv() {
    let d = TempDir::new().unwrap();
    for (name, lambda) in [("narrow", "1e-2"), ("wide", "1e-6")] {
        let o = vrd(&[
            "green",
            "--lambda",
            lambda,
            "--size",
            "255x255",
            "--out",
            &p(&d, &format!("{name}.pgm")),
        ]);
        assert_eq!(code(&o), 0);
    }
    let (header, narrow) = pgm_pixels(&p(&d, "narrow.pgm"));
    assert_eq!(header, b"P5\n255 255\n255\n");
    assert_eq!(narrow.len(), 255 * 255);
    assert_eq!(narrow[127 * 255 + 127], 255);
    let (_, wide) = pgm_pixels(&p(&d, "wide.pgm"));
    let above = |px: &[u8]| px.iter().filter(|&&v| v > 64).count();
    assert!(above(&wide) > above(&narrow));
    let csv = fs::read_to_string(p(&d, "narrow.csv")).unwrap();
    assert_eq!(csv.lines().count(), 255);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 255);
}

#[test]
fn green_rejects_bad_size_and_lambda() {
    let d = TempDir::new().unwrap();
    assert_eq!(
        code(&vrd(&[
            "green",
            "--lambda",
            "0.1",
            "--size",
            "4x",
            "--out",
            &p(&d, "a.pgm")
        ])),
        2
    );
    assert_eq!(
        code(&vrd(&[
            "green",
            "--lambda",
            "-1",
            "--size",
            "4x4",
            "--out",
            &p(&d, "a.pgm")
        ])),
        2
    );
}

#[test]
fn bench_single_size_writes_one_row() {
    let d = TempDir::new().unwrap();
    let o = vrd(&[
        "bench",
        "--sizes",
        "16",
        "--ni",
        "2",
        "--no",
        "2",
        "--csv",
        &p(&d, "b.csv"),
    ]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(p(&d, "b.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines, ["L,t_fwd_ms,t_bwd_ms", lines[1]]);
    assert!(lines[1].starts_with("16,"));
    let o = vrd(&[
        "--threads",
        "1",
        "bench",
        "--rect",
        "9x5",
        "--ni",
        "1",
        "--no",
        "1",
        "--csv",
        &p(&d, "r.csv"),
    ]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(p(&d, "r.csv"))
        .unwrap()
        .contains("\n9x5,"));
}

#[test]
fn selftest_passes_and_mutation_fails() {
    let o = vrd(&["selftest"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{out}");
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(rows.len() > 10);
    assert!(rows
        .iter()
        .all(|l| l.starts_with("PASS") && l.contains("measured=")));

    let o = vrd(&["selftest", "--corrupt-phi"]);
    assert_eq!(code(&o), 1);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out
        .lines()
        .any(|l| l.starts_with("FAIL") && l.contains("expm_grad")));
}
