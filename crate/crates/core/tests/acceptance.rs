//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_SHORTFALLS` are reported but do not fail the
//! target; any other failure exits non-zero. `ACCEPTANCE_ONLY=2,5` restricts
//! the run to the given criteria.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use drst::attribution::{attention_scores, mask_count, top_positions};
use drst::corpus::{StyleId, StyledSentence, Transform};
use drst::evaluation::{efficiency_report, geometric_mean, RunMetrics};
use drst::experiment::{ExperimentConfig, Workbench};
use drst::neural::{LabeledSequence, Model, ModelConfig, WeightedSequence};
use drst::rewards::{content_reward, ContentMatching, StrategyKind};
use drst::sampler::{generate_episode, nucleus_filter, policy_prompt, sample_index, Episode, SamplingConfig};
use drst::trainer::{compute_baseline, estimate_returns, reinforce_gradient, rl_train, sample_and_score, MetricsRecord, RLConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{content_reward_oracle, jitter, worst_fd_error};

/// Criteria whose targets the toy setup does not reach.
const KNOWN_SHORTFALLS: &[usize] = &[8, 10, 11];

const SEEDS: [u64; 3] = [1, 2, 3];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

/// Workbenches and pretrained policies, built on first use.
struct Lab {
    benches: Vec<Option<Workbench>>,
    noisy: Vec<Option<Model<f32>>>,
    identity: Vec<Option<Model<f32>>>,
    /// Final test style accuracy per (strategy, seed) from the strategy comparison.
    comparison: Option<Vec<(StrategyKind, u64, f64, Vec<MetricsRecord>)>>,
}

impl Lab {
    fn new() -> Self {
        Lab {
            benches: (0..SEEDS.len()).map(|_| None).collect(),
            noisy: (0..SEEDS.len()).map(|_| None).collect(),
            identity: (0..SEEDS.len()).map(|_| None).collect(),
            comparison: None,
        }
    }

    fn bench(&mut self, i: usize) -> &Workbench {
        if self.benches[i].is_none() {
            let config = ExperimentConfig { seed: SEEDS[i], ..Default::default() };
            self.benches[i] = Some(Workbench::build(config).expect("workbench"));
        }
        self.benches[i].as_ref().unwrap()
    }

    fn noisy_policy(&mut self, i: usize) -> Model<f32> {
        if self.noisy[i].is_none() {
            let wb = self.bench(i);
            let epochs = wb.config.policy_epochs;
            let (policy, _) = wb.config.train_policy(&wb.corpus, Transform::NoisySwap { p_noise: 0.5 }, epochs).expect("policy");
            self.noisy[i] = Some(policy);
        }
        self.noisy[i].clone().unwrap()
    }

    fn identity_policy(&mut self, i: usize) -> Model<f32> {
        if self.identity[i].is_none() {
            let wb = self.bench(i);
            let (policy, _) = wb.config.train_policy(&wb.corpus, Transform::Identity, 4).expect("policy");
            self.identity[i] = Some(policy);
        }
        self.identity[i].clone().unwrap()
    }
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn(&mut Lab) -> Verdict); 11] = [
        (1, "dense returns equal rewards", c1_dense_returns),
        (2, "REINFORCE matches the exact gradient", c2_reinforce),
        (3, "analytic gradients match finite differences", c3_gradient_check),
        (4, "content reward matches brute force", c4_content_oracle),
        (5, "nucleus sampling", c5_nucleus),
        (6, "style head precision", c6_head_precision),
        (7, "roll-out cost grows quadratically", c7_complexity),
        (8, "dense sample efficiency", c8_efficiency),
        (9, "dense RL improves the identity baseline", c9_improvement),
        (10, "geometric mean of reference table cells", c10_geometric_mean),
        (11, "attention-weighted variant ordering", c11_ordering),
    ];
    let mut lab = Lab::new();
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let verdict = run(&mut lab);
        let secs = started.elapsed().as_secs_f64();
        let known = KNOWN_SHORTFALLS.contains(&id);
        let tag = match (verdict.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known shortfall)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] criterion {id:>2}: {name}: {} ({secs:.1}s)", verdict.detail);
        if !verdict.pass && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

fn c1_dense_returns(lab: &mut Lab) -> Verdict {
    let wb = lab.bench(0);
    let policy = Model::<f32>::new(wb.config.policy_config(wb.corpus.vocab.len()), 7).unwrap();
    let models = wb.reward_models();
    let mut checked = 0usize;
    let mut mismatched = 0usize;
    for strategy in [StrategyKind::Dense, StrategyKind::DenseAttention] {
        let cfg = RLConfig { strategy, n: 8, seed: 3, ..Default::default() };
        let inputs: Vec<&StyledSentence> = wb.corpus.train.iter().take(cfg.n).collect();
        let scored = sample_and_score(&policy, &models, &inputs, &cfg, 0).unwrap();
        let mut episodes = scored.episodes;
        // Episodes emitted by the training loop itself.
        let mut trained = policy.clone();
        let cfg = RLConfig { max_episodes: 2 * cfg.episodes_per_step(), epsilon: 1e-12, ..cfg };
        rl_train(&mut trained, &models, &wb.corpus.train, &cfg, &mut |_, eps| {
            episodes.extend_from_slice(eps);
            Ok(())
        })
        .unwrap();
        for ep in &episodes {
            let r = &ep.rewards.as_ref().unwrap().r;
            checked += r.len();
            let same = r.len() == ep.returns.len() && r.iter().zip(&ep.returns).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                mismatched += 1;
            }
        }
    }
    Verdict::new(mismatched == 0 && checked > 0, format!("{checked} tokens, {mismatched} mismatching episodes"))
}

const MICRO_LEN: usize = 3;
const MICRO_VOCAB: usize = 4;

fn micro_index(y: &[usize]) -> usize {
    y.iter().fold(0, |acc, &t| acc * MICRO_VOCAB + t)
}

fn micro_outputs() -> Vec<Vec<usize>> {
    (0..MICRO_VOCAB.pow(MICRO_LEN as u32))
        .map(|i| (0..MICRO_LEN).map(|t| (i / MICRO_VOCAB.pow((MICRO_LEN - 1 - t) as u32)) % MICRO_VOCAB).collect())
        .collect()
}

fn micro_episode(prompt_source: &[usize], y: &[usize], returns: Vec<f64>) -> Episode<f64> {
    Episode {
        source: prompt_source.to_vec(),
        target_style: StyleId::ZERO,
        output: y.to_vec(),
        log_probs: vec![0.0; y.len()],
        rewards: None,
        returns,
        strategy: None,
        seed: 0,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Four-token vocabulary without END, so every output has exactly three
/// tokens and the 64 outcomes can be enumerated.
fn c2_reinforce(_: &mut Lab) -> Verdict {
    let source = [1usize];
    let cfg = ModelConfig {
        vocab_size: MICRO_VOCAB,
        width: 8,
        layers: 1,
        heads: 2,
        max_len: 8,
        ..ModelConfig::generator(MICRO_VOCAB, 8)
    };
    let mut policy = Model::<f64>::new(cfg, 21).unwrap();
    jitter(&mut policy, 22, 1.0);
    let prompt = policy_prompt(&source, StyleId::ZERO);

    // Per-token rewards depend on the prefix only, as the return estimator assumes.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let tables: Vec<Vec<f64>> = (1..=MICRO_LEN).map(|t| (0..MICRO_VOCAB.pow(t as u32)).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let outputs = micro_outputs();
    let rewards = |y: &[usize]| -> Vec<f64> { (0..MICRO_LEN).map(|t| tables[t][micro_index(&y[..=t])]).collect() };
    let total_reward: Vec<f64> = outputs.iter().map(|y| rewards(y).iter().sum()).collect();

    let objective = |m: &Model<f64>| -> f64 {
        outputs
            .iter()
            .zip(&total_reward)
            .map(|(y, r)| {
                let mut seq = prompt.clone();
                seq.extend_from_slice(y);
                let mut mask = vec![false; prompt.len()];
                mask.extend(std::iter::repeat_n(true, y.len()));
                let lp = m.sequence_log_probs(&seq, &mask).unwrap();
                lp.total().exp() * r
            })
            .sum()
    };
    let h = 1e-5;
    let exact: Vec<f64> = (0..policy.param_count())
        .map(|i| {
            let mut plus = policy.clone();
            plus.params_mut().unwrap()[i] += h;
            let mut minus = policy.clone();
            minus.params_mut().unwrap()[i] -= h;
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect();
    // reinforce_gradient descends on −J.
    let target: Vec<f64> = exact.iter().map(|g| -g).collect();
    let unit: Vec<f64> = target.iter().map(|g| g / norm(&target)).collect();

    // Single-episode gradients: with returns (b = 0), and the score term alone.
    let g_returns: Vec<Vec<f64>> = outputs
        .iter()
        .map(|y| reinforce_gradient(&policy, &[micro_episode(&source, y, estimate_returns(&rewards(y), 1.0))], 0.0).unwrap().0)
        .collect();
    let g_score: Vec<Vec<f64>> = outputs
        .iter()
        .map(|y| reinforce_gradient(&policy, &[micro_episode(&source, y, vec![0.0; MICRO_LEN])], -1.0).unwrap().0)
        .collect();

    let batches = 1000;
    let batch_size = 200;
    let p = policy.param_count();
    let mut mean_plain = vec![0.0; p];
    let mut mean_based = vec![0.0; p];
    let mut shifts = Vec::with_capacity(batches);
    let mut assembly_error: f64 = 0.0;
    for b in 0..batches {
        let mut counts = vec![0usize; outputs.len()];
        let mut episodes = Vec::new();
        for e in 0..batch_size {
            let sampling = SamplingConfig {
                p: 1.0,
                k: 1,
                max_output_len: MICRO_LEN,
                temperature: 1.0,
                seed: (b * batch_size + e) as u64,
            };
            let mut ep = generate_episode(&policy, &source, StyleId::ZERO, &sampling).unwrap();
            counts[micro_index(&ep.output)] += 1;
            if b == 0 {
                ep.returns = estimate_returns(&rewards(&ep.output), 1.0);
                episodes.push(ep);
            }
        }
        let q_sum: f64 = outputs.iter().zip(&counts).map(|(y, &c)| c as f64 * estimate_returns(&rewards(y), 1.0).iter().sum::<f64>()).sum();
        let baseline = q_sum / (batch_size * MICRO_LEN) as f64;
        let mut plain = vec![0.0; p];
        let mut score = vec![0.0; p];
        for (y, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let w = c as f64 / batch_size as f64;
            for j in 0..p {
                plain[j] += w * g_returns[y][j];
                score[j] += w * g_score[y][j];
            }
        }
        let based: Vec<f64> = plain.iter().zip(&score).map(|(a, s)| a - baseline * s).collect();
        if b == 0 {
            // The assembled estimate must equal the trainer's batch gradient.
            let b_real = compute_baseline(&episodes).unwrap();
            let (real, _) = reinforce_gradient(&policy, &episodes, b_real).unwrap();
            let scale = norm(&real).max(1e-300);
            assembly_error = real.iter().zip(&based).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max) / scale;
        }
        for j in 0..p {
            mean_plain[j] += plain[j] / batches as f64;
            mean_based[j] += based[j] / batches as f64;
        }
        shifts.push(dot(&unit, &based) - dot(&unit, &plain));
    }
    let cos_plain = dot(&mean_plain, &target) / (norm(&mean_plain) * norm(&target));
    let cos_based = dot(&mean_based, &target) / (norm(&mean_based) * norm(&target));
    let mean_shift = shifts.iter().sum::<f64>() / batches as f64;
    let var = shifts.iter().map(|s| (s - mean_shift).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();
    let pass = cos_plain >= 0.99 && cos_based >= 0.99 && mean_shift.abs() < 3.0 * se && assembly_error < 1e-10;
    Verdict::new(
        pass,
        format!(
            "cosine {cos_plain:.4} (baseline {cos_based:.4}), shift {mean_shift:.2e} = {:.2} SE, assembly error {assembly_error:.1e}",
            mean_shift / se
        ),
    )
}

fn toy_sequences(vocab: usize, seed: u64, count: usize, len: std::ops::Range<usize>) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(len.clone());
            (0..n).map(|_| rng.gen_range(7..vocab)).collect()
        })
        .collect()
}

fn c3_gradient_check(_: &mut Lab) -> Verdict {
    let cfg = ExperimentConfig::default();
    let vocab = 71;
    let mut worst = Vec::new();

    let mut generator = Model::<f64>::new(cfg.policy_config(vocab), 31).unwrap();
    jitter(&mut generator, 32, 0.2);
    let batch: Vec<WeightedSequence<f64>> = toy_sequences(vocab, 33, 3, 4..9)
        .into_iter()
        .zip(toy_sequences(vocab, 34, 3, 3..8))
        .map(|(x, y)| {
            let mut tokens = policy_prompt(&x, StyleId::ONE);
            let prompt = tokens.len();
            tokens.extend(y);
            let weights = (0..tokens.len()).map(|t| if t < prompt { 0.0 } else { 0.3 + 0.1 * t as f64 - 0.4 * (t % 3) as f64 }).collect();
            WeightedSequence { tokens, weights }
        })
        .collect();
    let (_, grad) = generator.weighted_nll_gradient(&batch).unwrap();
    worst.push(worst_fd_error(&generator, &grad, &|m| m.weighted_nll_gradient(&batch).unwrap().0, 35));

    let mut lm = Model::<f64>::new(cfg.lm_config(vocab), 36).unwrap();
    jitter(&mut lm, 37, 0.2);
    let batch: Vec<WeightedSequence<f64>> = toy_sequences(vocab, 38, 3, 3..9)
        .into_iter()
        .map(|s| drst::trainer::lm_example(&s))
        .collect();
    let (_, grad) = lm.weighted_nll_gradient(&batch).unwrap();
    worst.push(worst_fd_error(&lm, &grad, &|m| m.weighted_nll_gradient(&batch).unwrap().0, 39));

    let mut classifier = Model::<f64>::new(cfg.classifier_config(vocab), 40).unwrap();
    jitter(&mut classifier, 41, 0.2);
    let batch: Vec<LabeledSequence<f64>> = toy_sequences(vocab, 42, 4, 2..9)
        .into_iter()
        .enumerate()
        .map(|(i, tokens)| LabeledSequence { tokens, label: i % 2, weight: 1.0 })
        .collect();
    let (_, grad) = classifier.classification_gradient(&batch).unwrap();
    worst.push(worst_fd_error(&classifier, &grad, &|m| m.classification_gradient(&batch).unwrap().0, 43));

    let pass = worst.iter().all(|&w| w < 1e-4);
    Verdict::new(
        pass,
        format!("worst relative error generator {:.1e}, lm {:.1e}, classifier {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn c4_content_oracle(_: &mut Lab) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatches = 0;
    let mut past_source = 0usize;
    for _ in 0..1000 {
        let x: Vec<usize> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(7..11)).collect();
        let y: Vec<usize> = (0..rng.gen_range(1..14)).map(|_| rng.gen_range(7..11)).collect();
        let mask: Vec<f64> = y
            .iter()
            .map(|_| match rng.gen_range(0..3) {
                0 => 1.0,
                1 => 0.0,
                _ => rng.gen::<f64>(),
            })
            .collect();
        past_source += y.len().saturating_sub(x.len());
        if content_reward(&y, &x, &mask, ContentMatching::Windowed) != content_reward_oracle(&y, &x, &mask) {
            mismatches += 1;
        }
    }
    Verdict::new(mismatches == 0, format!("1000 triples, {past_source} tokens past the source end, {mismatches} mismatches"))
}

fn c5_nucleus(_: &mut Lab) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut violations = 0;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..30);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3)).collect();
        let total: f64 = raw.iter().sum();
        let dist: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let p = rng.gen_range(0.01..0.999);
        let filtered = nucleus_filter(&dist, p);
        let kept: Vec<usize> = (0..n).filter(|&i| filtered[i] > 0.0).collect();
        let mass: f64 = kept.iter().map(|&i| dist[i]).sum();
        let smallest = kept.iter().map(|&i| dist[i]).fold(f64::INFINITY, f64::min);
        let largest_dropped = (0..n).filter(|i| !kept.contains(i)).map(|i| dist[i]).fold(0.0, f64::max);
        let renormalized = kept.iter().all(|&i| (filtered[i] - dist[i] / mass).abs() < 1e-12);
        let ok = mass >= p - 1e-12 && mass - smallest < p && largest_dropped <= smallest && renormalized;
        if !ok {
            violations += 1;
        }
    }

    let dist = [0.31, 0.22, 0.16, 0.11, 0.08, 0.05, 0.04, 0.03];
    let filtered = nucleus_filter(&dist, 0.85);
    let draws = 100_000;
    let mut counts = [0usize; 8];
    let mut rng = drst::rng::rng_from_seed(56);
    for _ in 0..draws {
        counts[sample_index(&filtered, &mut rng)] += 1;
    }
    let mut worst_z: f64 = 0.0;
    let mut outside = 0;
    for (i, &q) in filtered.iter().enumerate() {
        if q == 0.0 {
            outside += counts[i];
            continue;
        }
        let expected = draws as f64 * q;
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        worst_z = worst_z.max((counts[i] as f64 - expected).abs() / sigma);
    }
    Verdict::new(
        violations == 0 && outside == 0 && worst_z < 3.0,
        format!("{violations} minimality violations in 10000, worst frequency deviation {worst_z:.2} sigma, {outside} draws outside the nucleus"),
    )
}

fn c6_head_precision(lab: &mut Lab) -> Verdict {
    let mut precisions = Vec::new();
    for i in 0..SEEDS.len() {
        let wb = lab.bench(i);
        let (mut hits, mut total) = (0usize, 0usize);
        for s in &wb.corpus.dev {
            let k = mask_count(wb.config.lambda, s.len());
            if k == 0 {
                continue;
            }
            let alpha = attention_scores(&wb.classifier, wb.selection.head, &s.tokens).unwrap();
            for pos in top_positions(&alpha, k) {
                total += 1;
                if wb.corpus.lexicon.is_style_word(s.tokens[pos]) {
                    hits += 1;
                }
            }
        }
        precisions.push(hits as f64 / total as f64);
    }
    let pass = precisions.iter().all(|&p| p >= 0.8);
    Verdict::new(pass, format!("precision per seed {}", fmt_list(&precisions, 3)))
}

fn fmt_list(values: &[f64], digits: usize) -> String {
    values.iter().map(|v| format!("{v:.digits$}")).collect::<Vec<_>>().join(", ")
}

/// Per-step records of a short run with outputs forced to exactly `len` tokens.
fn fixed_length_run(wb: &Workbench, strategy: StrategyKind, len: usize, steps: usize) -> Vec<MetricsRecord> {
    let mut policy = Model::<f32>::new(wb.config.policy_config(wb.corpus.vocab.len()), 71).unwrap();
    policy.segment_mut("head.b").unwrap()[drst::corpus::END] = -30.0;
    let cfg = RLConfig {
        strategy,
        n: 4,
        sampling: SamplingConfig { k: 2, max_output_len: len, ..Default::default() },
        epsilon: 1e-12,
        lr: 0.0,
        max_episodes: steps * 8,
        seed: 72,
        ..Default::default()
    };
    let mut records = Vec::new();
    rl_train(&mut policy, &wb.reward_models(), &wb.corpus.train, &cfg, &mut |r, _| {
        records.push(r.clone());
        Ok(())
    })
    .unwrap();
    records
}

fn c7_complexity(lab: &mut Lab) -> Verdict {
    let wb = lab.bench(0);
    let ratio = |len: usize| {
        let dense: u64 = fixed_length_run(wb, StrategyKind::Dense, len, 1).iter().map(|r| r.step_tokens).sum();
        let rollout: u64 = fixed_length_run(wb, StrategyKind::Rollout, len, 1).iter().map(|r| r.step_tokens).sum();
        rollout as f64 / dense as f64
    };
    let (r8, r16) = (ratio(8), ratio(16));
    let growth = r16 / r8;
    let wall = |strategy| {
        let records = fixed_length_run(wb, strategy, 12, 3);
        records.iter().map(|r| r.step_wall_ms).sum::<f64>() / records.len() as f64
    };
    let (dense_ms, rollout_ms) = (wall(StrategyKind::Dense), wall(StrategyKind::Rollout));
    let speedup = rollout_ms / dense_ms;
    Verdict::new(
        growth >= 1.8 && speedup >= 2.0,
        format!(
            "token ratio {r8:.2} at T=8, {r16:.2} at T=16, growth {growth:.2}; step wall clock at T=12 dense {dense_ms:.1}ms vs roll-out {rollout_ms:.1}ms ({speedup:.1}x)"
        ),
    )
}

const COMPARED: [StrategyKind; 4] = [StrategyKind::Dense, StrategyKind::Rollout, StrategyKind::DenseAttention, StrategyKind::NaiveSparse];

/// RL from the noisy-swap policy for every strategy and seed, 100 steps each.
fn strategy_comparison(lab: &mut Lab) -> &Vec<(StrategyKind, u64, f64, Vec<MetricsRecord>)> {
    if lab.comparison.is_none() {
        let mut results = Vec::new();
        for i in 0..SEEDS.len() {
            let base = lab.noisy_policy(i);
            let wb = lab.bench(i);
            for strategy in COMPARED {
                let mut policy = base.clone();
                let cfg = RLConfig {
                    strategy,
                    epsilon: 1e-12,
                    max_episodes: 100 * 64,
                    seed: SEEDS[i],
                    ..Default::default()
                };
                let mut records = Vec::new();
                rl_train(&mut policy, &wb.reward_models(), &wb.corpus.train, &cfg, &mut |r, _| {
                    records.push(r.clone());
                    Ok(())
                })
                .unwrap();
                let accuracy = wb.evaluate(&policy, &wb.corpus.test).unwrap().style_accuracy;
                results.push((strategy, SEEDS[i], accuracy, records));
            }
        }
        lab.comparison = Some(results);
    }
    lab.comparison.as_ref().unwrap()
}

fn c8_efficiency(lab: &mut Lab) -> Verdict {
    let runs: Vec<RunMetrics> = strategy_comparison(lab)
        .iter()
        .filter(|(s, ..)| matches!(s, StrategyKind::Dense | StrategyKind::Rollout))
        .map(|(strategy, seed, _, records)| RunMetrics { strategy: *strategy, seed: *seed, records: records.clone() })
        .collect();
    let report = efficiency_report(&runs, 0.9, 10);
    let seeds = report.compare(StrategyKind::Dense, StrategyKind::Rollout);
    let n = seeds.len() as f64;
    let mean_ratio = seeds.iter().map(|c| c.ratio).sum::<f64>() / n;
    let peak_dense = seeds.iter().map(|c| c.raw_peak_a).sum::<f64>() / n;
    let peak_rollout = seeds.iter().map(|c| c.raw_peak_b).sum::<f64>() / n;
    let ratios: Vec<f64> = seeds.iter().map(|c| c.ratio).collect();
    Verdict::new(
        mean_ratio <= 0.6 && peak_dense >= peak_rollout,
        format!(
            "episodes-to-90% ratio per seed {} (mean {mean_ratio:.2}, need <= 0.6); mean peak reward dense {peak_dense:.3} vs roll-out {peak_rollout:.3}",
            fmt_list(&ratios, 2)
        ),
    )
}

fn c9_improvement(lab: &mut Lab) -> Verdict {
    let mut lines = Vec::new();
    let mut all = true;
    for i in 0..SEEDS.len() {
        let mut policy = lab.identity_policy(i);
        let wb = lab.bench(i);
        let before = wb.evaluate(&policy, &wb.corpus.test).unwrap();
        let cfg = RLConfig {
            strategy: StrategyKind::Dense,
            epsilon: 1e-12,
            max_episodes: 40 * 64,
            seed: SEEDS[i],
            ..Default::default()
        };
        rl_train(&mut policy, &wb.reward_models(), &wb.corpus.train, &cfg, &mut |_, _| Ok(())).unwrap();
        let after = wb.evaluate(&policy, &wb.corpus.test).unwrap();
        let ok = after.style_accuracy - before.style_accuracy >= 20.0
            && before.content_bleu - after.content_bleu <= 2.0
            && after.perplexity <= 1.1 * before.perplexity;
        all &= ok;
        lines.push(format!(
            "seed {}: acc {:.1}->{:.1}, bleu {:.1}->{:.1}, ppl {:.2}->{:.2}",
            SEEDS[i], before.style_accuracy, after.style_accuracy, before.content_bleu, after.content_bleu, before.perplexity, after.perplexity
        ));
    }
    Verdict::new(all, lines.join("; "))
}

/// Automatic-evaluation rows: (style, content, overall) for both datasets.
const REFERENCE_TABLE: [(&str, [(f64, f64, f64); 2]); 9] = [
    ("MD", [(50.6, 42.9, 46.6), (26.1, 26.8, 26.4)]),
    ("BT", [(95.5, 25.6, 49.4), (51.5, 18.7, 31.0)]),
    ("DO", [(85.9, 44.4, 61.7), (26.0, 42.4, 33.2)]),
    ("BGST", [(86.7, 57.1, 70.4), (69.0, 47.4, 57.2)]),
    ("UnP", [(53.3, 46.3, 49.7), (68.5, 12.3, 29.0)]),
    ("RL-RO", [(55.7, 47.2, 50.2), (69.2, 14.8, 31.2)]),
    ("DuR", [(89.2, 59.5, 72.9), (60.1, 44.3, 51.6)]),
    ("DRL", [(96.8, 59.6, 75.7), (98.9, 47.7, 68.5)]),
    ("H", [(75.0, 70.3, 72.5), (86.4, 65.4, 75.2)]),
];

fn c10_geometric_mean(_: &mut Lab) -> Verdict {
    let mut off = Vec::new();
    let mut cells = 0;
    for (row, pairs) in REFERENCE_TABLE {
        for (dataset, (style, content, overall)) in ["YELP", "GYAFC"].iter().zip(pairs) {
            cells += 1;
            let gm = geometric_mean(style, content);
            if (gm - overall).abs() > 0.3 {
                off.push(format!("{row}/{dataset} {gm:.2} vs {overall}"));
            }
        }
    }
    let detail = if off.is_empty() {
        format!("{cells} cells within 0.3")
    } else {
        format!("{} of {cells} cells off by more than 0.3: {}", off.len(), off.join(", "))
    };
    Verdict::new(off.is_empty(), detail)
}

fn c11_ordering(lab: &mut Lab) -> Verdict {
    let results = strategy_comparison(lab);
    let accuracy = |strategy: StrategyKind, seed: u64| {
        results.iter().find(|(s, sd, ..)| *s == strategy && *sd == seed).map(|r| r.2).unwrap()
    };
    let mut ordered = 0;
    let mut lines = Vec::new();
    for seed in SEEDS {
        let (ns, da, de) = (accuracy(StrategyKind::NaiveSparse, seed), accuracy(StrategyKind::DenseAttention, seed), accuracy(StrategyKind::Dense, seed));
        if ns <= da && da <= de {
            ordered += 1;
        }
        lines.push(format!("seed {seed}: naive_sparse {ns:.1}, dense_attention {da:.1}, dense {de:.1}"));
    }
    Verdict::new(ordered >= 2, format!("{ordered}/3 seeds ordered; {}", lines.join("; ")))
}
