//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the table always shows in `cargo test` output.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use vrd::linalg::phi_entry;
use vrd::model::{
    evaluate_accuracy, gen_synthetic, parse_arch, train, Network, TrainConfig, TrainOptions,
};
use vrd::oracle::selftest::{
    check_dst_identities, check_expm_grad, check_green_ordering, check_minimizer,
    check_network_gradients, check_oracle_equivalence, check_stationarity, check_submodularity,
    check_vrd_gradients, random_field, random_params, Check,
};
use vrd::vrd::vrd_forward;

struct Outcome {
    id: u32,
    passed: bool,
    detail: String,
}

fn from_checks(id: u32, checks: &[Check], extra: &str) -> Outcome {
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.3e}/{:.0e}", c.name, c.measured, c.threshold))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        id,
        passed: checks.iter().all(|c| c.passed),
        detail: format!("{detail}{extra}"),
    }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
        .install(f)
}

/// Median forward time per grid. Grids are timed round-robin so that
/// machine noise lands on every size alike.
fn median_forward_ms(
    grids: &[(usize, usize)],
    n_in: usize,
    n_out: usize,
    rounds: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let cases: Vec<_> = grids
        .iter()
        .map(|&(h, w)| {
            let p = random_params(&mut rng, n_in, n_out);
            let s_i = random_field(&mut rng, h, w, n_in);
            vrd_forward(&s_i, &p).expect("warm-up");
            (p, s_i)
        })
        .collect();
    let mut times = vec![Vec::with_capacity(rounds); grids.len()];
    for _ in 0..rounds {
        for ((p, s_i), t) in cases.iter().zip(&mut times) {
            let start = Instant::now();
            vrd_forward(s_i, p).expect("forward");
            t.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    times
        .into_iter()
        .map(|mut t| {
            t.sort_by(f64::total_cmp);
            t[t.len() / 2]
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let c = check_oracle_equivalence(20, 101).expect("oracle");
    let secs = t.elapsed().as_secs_f64();
    let mut o = from_checks(1, &[c], &format!("; {secs:.2} s (limit 5 s)"));
    o.passed &= secs < 5.0;
    o
}

fn criterion_2() -> Outcome {
    let sizes = [(1, 1), (3, 7), (32, 32), (100, 60), (256, 256)];
    from_checks(
        2,
        &[check_stationarity(&sizes, 3, 4, 202).expect("stationarity")],
        "",
    )
}

fn criterion_3() -> Outcome {
    let mut checks = Vec::new();
    for (k, &(h, w, ni, no)) in [(6, 6, 2, 3), (5, 3, 1, 1), (4, 6, 3, 4), (6, 5, 4, 2)]
        .iter()
        .enumerate()
    {
        checks.extend(
            check_vrd_gradients(h, w, ni, no, 300 + k as u64, phi_entry).expect("vrd grads"),
        );
    }
    checks.extend(check_network_gradients("mix:3,vrd:3,relu,mix:2", 6, 6, 310).expect("net grads"));
    checks.extend(check_network_gradients("vrd:2,relu,vrd:3", 5, 6, 311).expect("net grads"));
    let worst_solver = checks[..32].iter().map(|c| c.measured).fold(0.0, f64::max);
    let worst_net = checks[32..].iter().map(|c| c.measured).fold(0.0, f64::max);
    Outcome {
        id: 3,
        passed: checks.iter().all(|c| c.passed),
        detail: format!(
            "{} gradient checks; worst solver rel err {worst_solver:.3e} (limit 1e-4), worst network {worst_net:.3e} (limit 1e-3)",
            checks.len()
        ),
    }
}

fn criterion_7() -> Outcome {
    let t =
        single_thread(|| median_forward_ms(&[(128, 128), (256, 256), (512, 512)], 16, 8, 7, 707));
    let (r1, r2) = (t[1] / t[0], t[2] / t[1]);
    Outcome {
        id: 7,
        passed: r1 <= 5.5 && r2 <= 5.5,
        detail: format!(
            "forward ms {:.1}/{:.1}/{:.1} at 128²/256²/512²; ratios {r1:.2}, {r2:.2} (limit 5.5)",
            t[0], t[1], t[2]
        ),
    }
}

fn criterion_8() -> Outcome {
    let ms = single_thread(|| median_forward_ms(&[(511, 255)], 64, 32, 5, 808))[0];
    Outcome {
        id: 8,
        passed: ms <= 4080.0,
        detail: format!("511x255, Ni=64, No=32 forward {ms:.1} ms single-threaded (limit 4080 ms)"),
    }
}

fn held_out_accuracy(arch: &str, cfg: &TrainConfig) -> (f64, Duration) {
    let t = Instant::now();
    let data = gen_synthetic(
        cfg.seed,
        cfg.train_examples + cfg.test_examples,
        cfg.height,
        cfg.width,
        cfg.classes,
        cfg.noise_sigma,
    )
    .expect("data");
    let (tr, te) = data.split_at(cfg.train_examples);
    let mut net =
        Network::build(&parse_arch(arch).expect("arch"), cfg.classes, cfg.seed).expect("build");
    let opts = TrainOptions {
        epochs: cfg.epochs,
        learning_rate: cfg.lr,
        seed: cfg.seed,
        anneal: false,
    };
    train(&mut net, tr, &opts).expect("train");
    (evaluate_accuracy(&net, te).expect("eval"), t.elapsed())
}

// Calibrated once at these settings (margin 14.2 points); the bound stays at 3.
fn criterion_10() -> Outcome {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.seed, cfg.noise_sigma), (7, 1.5));
    let (acc_vrd, t_vrd) = held_out_accuracy("mix:8,vrd:8,relu,mix:2", &cfg);
    let (acc_mix, t_mix) = held_out_accuracy("mix:8,mix:8,relu,mix:2", &cfg);
    let margin = 100.0 * (acc_vrd - acc_mix);
    let limit = Duration::from_secs(600);
    Outcome {
        id: 10,
        passed: margin >= 3.0 && t_vrd < limit && t_mix < limit,
        detail: format!(
            "held-out accuracy vrd {:.2}% vs mix {:.2}%, margin {margin:.2} points (need 3); {:.1} s / {:.1} s",
            100.0 * acc_vrd,
            100.0 * acc_mix,
            t_vrd.as_secs_f64(),
            t_mix.as_secs_f64()
        ),
    }
}

fn main() {
    let outcomes = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        from_checks(4, &[check_expm_grad(50, 404, phi_entry).expect("expm")], ""),
        from_checks(5, &[check_minimizer(100, 505).expect("minimizer")], ""),
        from_checks(
            6,
            &[check_submodularity(1000, 606).expect("submodularity")],
            "",
        ),
        criterion_7(),
        criterion_8(),
        from_checks(9, &[check_green_ordering(255).expect("green")], ""),
        criterion_10(),
        from_checks(11, &check_dst_identities(100, 1111).expect("dst"), ""),
    ];
    for o in &outcomes {
        println!(
            "{} criterion {:>2}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.detail
        );
    }
    let failed: Vec<u32> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.id)
        .collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
