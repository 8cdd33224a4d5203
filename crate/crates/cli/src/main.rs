use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use vrd::model::{
    evaluate_accuracy, gen_synthetic, random_field, rng_from_seed, train, Layer, Network,
    TrainConfig, TrainOptions,
};
use vrd::oracle::selftest::{self, corrupted_phi, SelftestOptions};
use vrd::vrd::{green_function, vrd_backward, vrd_forward, VrdParams};
use vrd::{io, Field, VrdError};

#[derive(Parser, Debug)]
#[command(
    name = "vrd",
    version,
    about = "Variational reaction-diffusion inference and training"
)]
struct Cli {
    /// Worker threads (default: hardware parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one layer on a VRDT field
    Infer {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also write the per-pixel argmax as a 1-channel VRDT
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train on synthetic blob data
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the scalar Green's function as PGM and CSV
    Green {
        #[arg(long, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long)]
        out: PathBuf,
    },
    /// Time forward and backward passes
    Bench {
        /// Comma-separated square edge lengths
        #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
        sizes: Vec<usize>,
        /// Rectangular grid, overrides --sizes
        #[arg(long, value_parser = parse_size)]
        rect: Option<(usize, usize)>,
        #[arg(long, default_value_t = 16)]
        ni: usize,
        #[arg(long = "no", default_value_t = 8)]
        n_out: usize,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the invariant checks
    Selftest {
        #[arg(long, default_value_t = SelftestOptions::default().seed)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_phi: bool,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad size `{s}`, expected HxW"))
    };
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("bad size `{s}`, expected HxW"))?;
    Ok((dim(h)?, dim(w)?))
}

enum Failure {
    Lib(VrdError),
    Selftest,
}

impl From<VrdError> for Failure {
    fn from(e: VrdError) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(e: &VrdError) -> u8 {
    match e {
        VrdError::ShapeMismatch(_) => 3,
        VrdError::Divergence { .. } | VrdError::NonFinite(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("vrd: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Selftest) => ExitCode::from(1),
        Err(Failure::Lib(e)) => {
            eprintln!("vrd: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Infer {
            params,
            input,
            output,
            labels,
        } => infer(&params, &input, &output, labels.as_deref()),
        Command::Train { config, out } => train_cmd(&config, &out),
        Command::Green { lambda, size, out } => green(lambda, size, &out),
        Command::Bench {
            sizes,
            rect,
            ni,
            n_out,
            csv,
            seed,
        } => {
            let grids = match rect {
                Some(hw) => vec![hw],
                None => sizes.iter().map(|&l| (l, l)).collect(),
            };
            bench(&grids, ni, n_out, &csv, seed)
        }
        Command::Selftest { seed, corrupt_phi } => {
            let mut opts = SelftestOptions {
                seed,
                ..Default::default()
            };
            if corrupt_phi {
                opts.phi = corrupted_phi;
            }
            let checks = selftest::run(&opts)?;
            print!("{}", selftest::format_table(&checks));
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                Err(Failure::Selftest)
            }
        }
    }
}

fn infer(params: &Path, input: &Path, output: &Path, labels: Option<&Path>) -> Result<(), Failure> {
    let p = io::read_params(params)?;
    let s_i = io::read_field(input)?;
    let (s_o, _) = vrd_forward(&s_i, &p)?;
    io::write_field(output, &s_o)?;
    if let Some(path) = labels {
        let k = s_o.channels();
        let classes: Vec<f64> = s_o
            .data()
            .chunks_exact(k)
            .map(|px| {
                px.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (c, &v)| if v > b.1 { (c, v) } else { b },
                    )
                    .0 as f64
            })
            .collect();
        io::write_field(
            path,
            &Field::from_vec(s_o.height(), s_o.width(), 1, classes)?,
        )?;
    }
    Ok(())
}

fn first_vrd_layer(net: &Network) -> Option<&VrdParams> {
    net.layers.iter().find_map(|l| match l {
        Layer::Vrd(p) => Some(p),
        _ => None,
    })
}

fn train_cmd(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = TrainConfig::parse(&fs::read_to_string(config)?)?;
    let mut net = Network::build(&cfg.arch, cfg.classes, cfg.seed)?;
    if first_vrd_layer(&net).is_none() {
        return Err(VrdError::Config {
            line: 0,
            msg: "arch has no vrd layer to write".into(),
        }
        .into());
    }
    let data = gen_synthetic(
        cfg.seed,
        cfg.train_examples + cfg.test_examples,
        cfg.height,
        cfg.width,
        cfg.classes,
        cfg.noise_sigma,
    )?;
    let (train_set, test_set) = data.split_at(cfg.train_examples);
    let report = train(
        &mut net,
        train_set,
        &TrainOptions {
            epochs: cfg.epochs,
            learning_rate: cfg.lr,
            seed: cfg.seed,
            anneal: false,
        },
    )?;
    io::write_params(out, first_vrd_layer(&net).expect("checked above"))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{},{l:.17e}", e + 1);
    }
    fs::write(out.with_extension("csv"), csv)?;
    if !test_set.is_empty() {
        println!("test accuracy {:.4}", evaluate_accuracy(&net, test_set)?);
    }
    Ok(())
}

fn green(lambda: f64, (h, w): (usize, usize), out: &Path) -> Result<(), Failure> {
    let g = green_function(lambda, h, w)?;
    let peak = g.data().iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
    pgm.extend(
        g.data()
            .iter()
            .map(|&v| (255.0 * (v / peak).clamp(0.0, 1.0)).round() as u8),
    );
    fs::write(out, pgm)?;
    let mut csv = String::with_capacity(h * w * 24);
    for row in g.data().chunks_exact(w) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                csv.push(',');
            }
            let _ = write!(csv, "{v:.17e}");
        }
        csv.push('\n');
    }
    fs::write(out.with_extension("csv"), csv)?;
    Ok(())
}

fn median_ms(mut t: Vec<f64>) -> f64 {
    t.sort_by(f64::total_cmp);
    t[t.len() / 2]
}

fn bench(
    grids: &[(usize, usize)],
    ni: usize,
    n_out: usize,
    csv: &Path,
    seed: u64,
) -> Result<(), Failure> {
    const REPS: usize = 5;
    let mut rng = rng_from_seed(seed);
    let mut out = String::from("L,t_fwd_ms,t_bwd_ms\n");
    for &(h, w) in grids {
        let p = selftest::random_params(&mut rng, ni, n_out);
        let (mut fwd, mut bwd) = (Vec::new(), Vec::new());
        for _ in 0..REPS {
            let s_i = random_field(&mut rng, h, w, ni)?;
            let dl = random_field(&mut rng, h, w, n_out)?;
            let t = Instant::now();
            let (_, cache) = vrd_forward(&s_i, &p)?;
            fwd.push(t.elapsed().as_secs_f64() * 1e3);
            let t = Instant::now();
            vrd_backward(&dl, &cache, &s_i, &p)?;
            bwd.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let label = if h == w {
            h.to_string()
        } else {
            format!("{h}x{w}")
        };
        let (f, b) = (median_ms(fwd), median_ms(bwd));
        println!("{label}: forward {f:.2} ms, backward {b:.2} ms");
        let _ = writeln!(out, "{label},{f:.4},{b:.4}");
    }
    fs::write(csv, out)?;
    Ok(())
}
