// Scratch harness for watching training dynamics while tuning defaults.
use ccrl_core::*;

/// Full trajectory with every value bumped by one: a confidently wrong
/// execution of the right strategy.
fn corrupted_full_tokens(p: &Problem, vocab: &Vocabulary) -> Vec<TokenId> {
    let bump = |v: i64| if v + 1 <= vocab.v_max() { v + 1 } else { v - 1 };
    let mut out = Vec::new();
    let templates = default_templates();
    let t = &templates[p.template_id as usize];
    let mut values: Vec<i64> = p.gold_intermediates.clone();
    values.push(p.gold_answer);
    for (op, &v) in t.ops.iter().zip(&values) {
        out.push(vocab.op(*op));
        out.push(vocab.number(bump(v)).unwrap());
    }
    out.push(vocab.marker(Marker::Ans));
    out.push(vocab.number(bump(p.gold_answer)).unwrap());
    out.push(vocab.marker(Marker::Eos));
    out
}

fn run_calibration_experiment(seed: u64, count: u32, iters: u32, sft_steps: u32, sft_lr: f64) {
    let vocab = Vocabulary::standard(400).unwrap();
    let problems = generate_problems(
        &default_templates(),
        (2, 9),
        count,
        &vocab,
        &mut rng_stream(seed, "gen"),
    )
    .unwrap();
    // SFT on full trajectories, half of them corrupted.
    let corrupted: Vec<Vec<TokenId>> = problems
        .iter()
        .map(|p| corrupted_full_tokens(p, &vocab))
        .collect();
    let dataset: Vec<(&Problem, &[TokenId])> = problems
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 2 == 0 {
                (p, corrupted[i].as_slice())
            } else {
                (p, p.gold_full_tokens.as_slice())
            }
        })
        .collect();
    let mut init = PolicyState::new(&vocab);
    let trace = train_sft(&mut init, &dataset, sft_steps, sft_lr, 1e9).unwrap();
    let (report, rows) = evaluate(&init, &problems, &vocab, 12).unwrap();
    let over = overconfidence(
        &rows.iter().map(|r| (r.correct, r.confidence)).collect::<Vec<_>>(),
        &[0.5],
    );
    println!(
        "seed {seed}: sft nll {:.4} -> {:.4}, init acc {:.3}, init over@0.5 {:?}",
        trace[0],
        trace.last().unwrap(),
        report.accuracy,
        over.rates["0.5"]
    );
    for mode in [TrainMode::Ccrl, TrainMode::OutcomeOnly] {
        let mut config = CcrlConfig::default();
        config.seed = seed;
        let mut state = init.clone();
        let out = train(
            &config,
            &problems,
            &vocab,
            &mut state,
            mode,
            &TrainOptions { iterations: iters, ..TrainOptions::default() },
        )
        .unwrap();
        let in_band: Vec<f64> = out
            .trace
            .iter()
            .filter(|r| r.accuracy >= 0.3 && r.accuracy <= 0.95)
            .filter_map(|r| r.overconf.get("0.5").copied().flatten())
            .collect();
        let m = in_band.iter().sum::<f64>() / in_band.len().max(1) as f64;
        let last = out.trace.last().unwrap();
        println!(
            "  {:?}: final acc {:.3}, band points {}, mean over@0.5 {:.4}",
            mode,
            last.accuracy,
            in_band.len(),
            m
        );
        for r in out.trace.iter().step_by(iters as usize / 10) {
            print!(
                " [{} a={:.2} o={}]",
                r.iter,
                r.accuracy,
                r.overconf.get("0.5").copied().flatten().map(|x| format!("{x:.2}")).unwrap_or("-".into())
            );
        }
        println!();
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let count: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let batch: u32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(256);
    let lr_a: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(20.0);
    let lr_c: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let iters: u32 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mode = match args.get(7).map(|s| s.as_str()) {
        Some("outcome") => TrainMode::OutcomeOnly,
        Some("calib") => {
            // args: seed count sft_steps sft_lr _ iters calib
            run_calibration_experiment(seed, count, iters, batch, lr_a);
            return;
        }
        _ => TrainMode::Ccrl,
    };

    let vocab = Vocabulary::standard(400).unwrap();
    let mut config = CcrlConfig::default();
    config.seed = seed;
    config.batch_size = batch;
    config.learning_rate_actor = lr_a;
    config.learning_rate_critic = lr_c;
    config.thresholds = vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7];
    let problems = generate_problems(
        &default_templates(),
        (2, 9),
        count,
        &vocab,
        &mut rng_stream(seed, "gen"),
    )
    .unwrap();
    let mut state = PolicyState::new(&vocab);
    let (init, _) = evaluate(&state, &problems, &vocab, 12).unwrap();
    println!("init accuracy {:.3}", init.accuracy);
    let t0 = std::time::Instant::now();
    let options = TrainOptions {
        iterations: iters,
        ..TrainOptions::default()
    };
    let out = train(&config, &problems, &vocab, &mut state, mode, &options).unwrap();
    for r in out.trace.iter().step_by(10) {
        let rate = |t: &str| {
            r.overconf
                .get(t)
                .copied()
                .flatten()
                .map(|x| format!("{x:.2}"))
                .unwrap_or_else(|| "-".into())
        };
        println!(
            "iter {:3} acc={:.3} reward={:+.3} clip={:.3} over: .05={} .1={} .2={} .3={} .5={} .7={}",
            r.iter, r.accuracy, r.mean_reward, r.clip_fraction,
            rate("0.05"), rate("0.1"), rate("0.2"), rate("0.3"), rate("0.5"), rate("0.7")
        );
    }
    let last = out.trace.last().unwrap();
    println!(
        "final acc {:.3} reward {:+.3} elapsed {:?}",
        last.accuracy,
        last.mean_reward,
        t0.elapsed()
    );
}
