//! One function per subcommand.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use drst::attribution::{select_style_head, HeadSelection};
use drst::corpus::{
    load_records, read_gold_map, write_gold_map, write_records, GoldRecord, Lexicon, ParallelPair, StyledSentence, ToyCorpus, Vocab,
};
use drst::evaluation::{evaluate_transfer, EvalReport};
use drst::experiment::ModelRole;
use drst::neural::{load_checkpoint, save_checkpoint, Mode, Model};
use drst::rewards::{RewardModels, StrategyKind};
use drst::sampler::{greedy_decode, strip_end};
use drst::trainer::{read_metrics, rl_train, MetricsRecord, MleReport};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report;
use crate::run::{execute, Requirement, RunDir, Stage};
use crate::Failure;

pub struct Ctx {
    pub config: RunConfig,
    pub run: RunDir,
    pub out: PathBuf,
    pub force: bool,
    pub strategy: Option<StrategyKind>,
    pub debug_rewards: bool,
    pub input: Option<PathBuf>,
}

const SPLITS: [&str; 3] = ["train", "dev", "test"];
const VOCAB: &str = "data/vocab.txt";
const GOLD: &str = "data/gold.jsonl";
const HEAD: &str = "checkpoints/head-selection.json";

fn split_path(split: &str) -> String {
    format!("data/{split}.jsonl")
}

fn checkpoint(name: &str) -> String {
    format!("checkpoints/{name}.bin")
}

/// Checkpoint blob plus its manifest.
fn checkpoint_files(name: &str) -> [String; 2] {
    [checkpoint(name), format!("checkpoints/{name}.json")]
}

fn policy_name(strategy: Option<StrategyKind>) -> String {
    match strategy {
        Some(s) => format!("policy-{s}"),
        None => "policy-base".into(),
    }
}

fn write_json<T: Serialize>(ctx: &Ctx, rel: &str, value: &T) -> Result<(), Failure> {
    let path = ctx.run.path(rel);
    let body = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(&path, body).map_err(|e| Failure::io(&path, e))
}

fn load_corpus(ctx: &Ctx) -> Result<ToyCorpus, Failure> {
    let vocab = Vocab::load(&ctx.run.path(VOCAB))?;
    let lexicon = Lexicon::from_spec(&ctx.config.experiment.toy, &vocab)?;
    let max_len = ctx.config.experiment.sentence_max_len();
    let mut splits = SPLITS
        .iter()
        .map(|s| load_records(&ctx.run.path(&split_path(s)), &vocab, max_len).map(|l| l.sentences))
        .collect::<Result<Vec<_>, _>>()?;
    let test = splits.pop().unwrap();
    let dev = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(ToyCorpus { vocab, lexicon, train, dev, test })
}

fn load_frozen(ctx: &Ctx, name: &str) -> Result<Model<f32>, Failure> {
    Ok(load_checkpoint(&ctx.run.path(&checkpoint(name)), Mode::Frozen)?.0)
}

fn save_model(ctx: &Ctx, model: &Model<f32>, name: &str, corpus: &ToyCorpus, steps: usize, seed: u64) -> Result<Vec<String>, Failure> {
    save_checkpoint(model, &ctx.run.path(&checkpoint(name)), &corpus.vocab.content_hash(), steps as u64, seed)?;
    Ok(checkpoint_files(name).to_vec())
}

fn load_head(ctx: &Ctx) -> Result<HeadSelection, Failure> {
    let path = ctx.run.path(HEAD);
    let text = fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn gen_data(ctx: &Ctx) -> Result<(), Failure> {
    execute(&ctx.run, &ctx.config, Stage::GenData, None, &[], ctx.force, || {
        let corpus = ctx.config.experiment.corpus()?;
        corpus.vocab.save(&ctx.run.path(VOCAB))?;
        let mut outputs = vec![VOCAB.to_string()];
        for (split, sentences) in SPLITS.iter().zip([&corpus.train, &corpus.dev, &corpus.test]) {
            let rel = split_path(split);
            write_records(&ctx.run.path(&rel), &corpus.vocab, sentences)?;
            outputs.push(rel);
        }
        write_gold_map(&ctx.run.path(GOLD), &corpus.gold_records())?;
        outputs.push(GOLD.into());
        println!(
            "gen-data: vocab {}, train {}, dev {}, test {}",
            corpus.vocab.len(),
            corpus.train.len(),
            corpus.dev.len(),
            corpus.test.len()
        );
        Ok(outputs)
    })
}

fn print_mle(what: &str, report: &MleReport) {
    println!(
        "{what}: {} epochs, best dev loss {:.4} at epoch {}",
        report.dev_loss.len(),
        report.best_dev_loss(),
        report.best_epoch + 1
    );
}

pub fn pretrain_classifier(ctx: &Ctx) -> Result<(), Failure> {
    let requires = [Requirement::stage(Stage::GenData)];
    execute(&ctx.run, &ctx.config, Stage::PretrainClassifier, None, &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let exp = &ctx.config.experiment;
        let mut outputs = Vec::new();
        for (role, name) in [(ModelRole::RewardClassifier, "classifier"), (ModelRole::EvalClassifier, "eval-classifier")] {
            let (model, report) = exp.train_classifier(role, &corpus)?;
            print_mle(name, &report);
            outputs.extend(save_model(ctx, &model, name, &corpus, report.steps, exp.model_seed(role))?);
        }
        Ok(outputs)
    })
}

pub fn select_head(ctx: &Ctx) -> Result<(), Failure> {
    let requires = [Requirement::stage(Stage::GenData), Requirement::stage(Stage::PretrainClassifier)];
    execute(&ctx.run, &ctx.config, Stage::SelectHead, None, &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let classifier = load_frozen(ctx, "classifier")?;
        let selection = select_style_head(&classifier, &corpus.dev, ctx.config.experiment.lambda)?;
        write_json(ctx, HEAD, &selection)?;
        let table = "reports/head-selection.tsv";
        let path = ctx.run.path(table);
        fs::write(&path, selection.report()).map_err(|e| Failure::io(&path, e))?;
        println!("select-head: {} (deviation {:.4})", selection.head, selection.deviation(selection.head).unwrap_or(0.0));
        Ok(vec![HEAD.into(), table.into()])
    })
}

pub fn pretrain_lm(ctx: &Ctx) -> Result<(), Failure> {
    let requires = [Requirement::stage(Stage::GenData)];
    execute(&ctx.run, &ctx.config, Stage::PretrainLm, None, &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let exp = &ctx.config.experiment;
        let mut outputs = Vec::new();
        for (role, name) in [(ModelRole::RewardLm, "lm"), (ModelRole::EvalLm, "eval-lm")] {
            let (model, report) = exp.train_lm(role, &corpus)?;
            print_mle(name, &report);
            outputs.extend(save_model(ctx, &model, name, &corpus, report.steps, exp.model_seed(role))?);
        }
        Ok(outputs)
    })
}

fn pair_record(pair: &ParallelPair, vocab: &Vocab) -> GoldRecord {
    let styles = vocab.styles();
    GoldRecord {
        source: pair.source.raw_text.clone(),
        target: pair.target.raw_text.clone(),
        style_src: styles.name(pair.source.style).to_string(),
        style_tgt: styles.name(pair.target.style).to_string(),
    }
}

fn load_pairs(ctx: &Ctx, rel: &str, vocab: &Vocab) -> Result<Vec<ParallelPair>, Failure> {
    let path = ctx.run.path(rel);
    let provenance = ctx.config.transform.to_string();
    read_gold_map(&path)?
        .into_iter()
        .map(|r| {
            let style = |name: &str| {
                vocab
                    .styles()
                    .parse(name)
                    .ok_or_else(|| Failure::Runtime(format!("{}: unknown style {name:?}", path.display())))
            };
            Ok(ParallelPair {
                source: StyledSentence::from_text(vocab, &r.source, style(&r.style_src)?),
                target: StyledSentence::from_text(vocab, &r.target, style(&r.style_tgt)?),
                provenance: provenance.clone(),
            })
        })
        .collect()
}

pub fn synth_parallel(ctx: &Ctx) -> Result<(), Failure> {
    let requires = [Requirement::stage(Stage::GenData)];
    execute(&ctx.run, &ctx.config, Stage::SynthParallel, None, &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let (train, dev) = ctx.config.experiment.synthesize(&corpus, ctx.config.transform)?;
        let mut outputs = Vec::new();
        for (split, pairs) in [("train", &train), ("dev", &dev)] {
            let rel = format!("data/parallel-{split}.jsonl");
            let records: Vec<GoldRecord> = pairs.iter().map(|p| pair_record(p, &corpus.vocab)).collect();
            write_gold_map(&ctx.run.path(&rel), &records)?;
            outputs.push(rel);
        }
        println!("synth-parallel: {} train and {} dev pairs via {}", train.len(), dev.len(), ctx.config.transform);
        Ok(outputs)
    })
}

pub fn pretrain_policy(ctx: &Ctx) -> Result<(), Failure> {
    let requires = [Requirement::stage(Stage::GenData), Requirement::stage(Stage::SynthParallel)];
    execute(&ctx.run, &ctx.config, Stage::PretrainPolicy, None, &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let train = load_pairs(ctx, "data/parallel-train.jsonl", &corpus.vocab)?;
        let dev = load_pairs(ctx, "data/parallel-dev.jsonl", &corpus.vocab)?;
        let exp = &ctx.config.experiment;
        let (model, report) = exp.pretrain_policy_on(corpus.vocab.len(), &train, &dev, exp.policy_epochs)?;
        print_mle("policy", &report);
        save_model(ctx, &model, "policy-base", &corpus, report.steps, exp.model_seed(ModelRole::Policy))
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    step: usize,
    episode: usize,
    source: String,
    output: String,
    tokens: Vec<drst::rewards::TraceRecord>,
    returns: &'a [f32],
}

/// Rewrite the metrics stream without `strategy`'s records.
fn drop_strategy_records(ctx: &Ctx, strategy: StrategyKind) -> Result<(), Failure> {
    let path = ctx.run.metrics_path();
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<MetricsRecord> = read_metrics(&path)?.into_iter().filter(|r| r.strategy != strategy).collect();
    let body: String = kept.iter().map(|r| r.to_json_line() + "\n").collect();
    fs::write(&path, body).map_err(|e| Failure::io(&path, e))
}

pub fn train_rl(ctx: &Ctx) -> Result<(), Failure> {
    let strategy = ctx.config.strategy(ctx.strategy);
    let name = strategy.to_string();
    let requires = [
        Requirement::stage(Stage::GenData),
        Requirement::stage(Stage::PretrainPolicy),
        Requirement::stage(Stage::PretrainClassifier),
        Requirement::stage(Stage::SelectHead),
        Requirement::stage(Stage::PretrainLm),
    ];
    execute(&ctx.run, &ctx.config, Stage::TrainRl, Some(&name), &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let (mut policy, _) = load_checkpoint::<f32>(&ctx.run.path(&checkpoint("policy-base")), Mode::Trainable)?;
        let classifier = load_frozen(ctx, "classifier")?;
        let lm = load_frozen(ctx, "lm")?;
        let selection = load_head(ctx)?;
        let models = RewardModels {
            classifier: &classifier,
            head: selection.head,
            lm: &lm,
            lambda: ctx.config.experiment.lambda,
            weights: ctx.config.weights,
            matching: ctx.config.content_matching,
        };
        let cfg = drst::trainer::RLConfig { strategy, ..ctx.config.rl.clone() };

        drop_strategy_records(ctx, strategy)?;
        let metrics_path = ctx.run.metrics_path();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Failure::io(&metrics_path, e))?;
        let mut metrics = BufWriter::new(file);
        let trace_rel = format!("reports/reward-trace-{name}.jsonl");
        let mut trace = if ctx.debug_rewards {
            let path = ctx.run.path(&trace_rel);
            Some(BufWriter::new(fs::File::create(&path).map_err(|e| Failure::io(&path, e))?))
        } else {
            None
        };
        let vocab = &corpus.vocab;
        let outcome = rl_train(&mut policy, &models, &corpus.train, &cfg, &mut |record, episodes| {
            let io_err = |e: std::io::Error| drst::error::Error::Io { path: metrics_path.clone(), source: e };
            writeln!(metrics, "{}", record.to_json_line()).map_err(io_err)?;
            metrics.flush().map_err(io_err)?;
            if let Some(out) = trace.as_mut() {
                for (i, ep) in episodes.iter().enumerate() {
                    let line = TraceLine {
                        step: record.step,
                        episode: i,
                        source: vocab.decode_words(&ep.source),
                        output: vocab.decode(&ep.output),
                        tokens: ep.rewards.as_ref().map(|r| r.trace(&ep.output, vocab)).unwrap_or_default(),
                        returns: &ep.returns,
                    };
                    let json = serde_json::to_string(&line).expect("trace serializes");
                    writeln!(out, "{json}").map_err(io_err)?;
                }
            }
            if record.step % 10 == 0 {
                log::info!("{} step {}: mean reward {:.4}", record.strategy, record.step, record.mean_r);
            }
            Ok(())
        })?;
        if let Some(mut out) = trace {
            out.flush().map_err(|e| Failure::io(&ctx.run.path(&trace_rel), e))?;
        }
        println!(
            "train-rl {name}: {} steps, {} episodes, stopped by {:?}, {:.1}s",
            outcome.state.step,
            outcome.state.episodes,
            outcome.stop,
            outcome.state.wall_ms / 1e3
        );
        let mut outputs = save_model(ctx, &policy, &policy_name(Some(strategy)), &corpus, outcome.state.step, cfg.seed)?;
        outputs.push("metrics.records".into());
        if ctx.debug_rewards {
            outputs.push(trace_rel);
        }
        Ok(outputs)
    })
}

/// Requirements for using the policy selected by `--strategy`.
fn policy_requirements(strategy: Option<&str>) -> Vec<Requirement<'_>> {
    let mut requires = vec![Requirement::stage(Stage::GenData)];
    requires.push(match strategy {
        Some(name) => Requirement::variant(Stage::TrainRl, name),
        None => Requirement::stage(Stage::PretrainPolicy),
    });
    requires
}

#[derive(Serialize)]
struct TransferLine {
    source: String,
    source_style: String,
    target_style: String,
    output: String,
}

pub fn transfer(ctx: &Ctx) -> Result<(), Failure> {
    let strategy_name = ctx.strategy.map(|s| s.to_string());
    let policy = policy_name(ctx.strategy);
    let requires = policy_requirements(strategy_name.as_deref());
    // A custom input file is outside the manifest's view, so always rerun.
    let force = ctx.force || ctx.input.is_some();
    execute(&ctx.run, &ctx.config, Stage::Transfer, Some(&policy), &requires, force, || {
        let corpus = load_corpus(ctx)?;
        let model = load_frozen(ctx, &policy)?;
        let sources = match &ctx.input {
            Some(path) => load_records(path, &corpus.vocab, ctx.config.experiment.toy.max_len)?.sentences,
            None => corpus.test.clone(),
        };
        let styles = corpus.vocab.styles();
        let max_out = ctx.config.experiment.max_output_len;
        let mut body = String::new();
        for s in &sources {
            let target = s.style.opposite();
            let out = greedy_decode(&model, &s.tokens, target, max_out)?;
            let line = TransferLine {
                source: s.raw_text.clone(),
                source_style: styles.name(s.style).to_string(),
                target_style: styles.name(target).to_string(),
                output: corpus.vocab.decode_words(strip_end(&out)),
            };
            body.push_str(&serde_json::to_string(&line).expect("transfer line serializes"));
            body.push('\n');
        }
        let rel = format!("reports/transfer-{policy}.jsonl");
        let path = ctx.run.path(&rel);
        fs::write(&path, body).map_err(|e| Failure::io(&path, e))?;
        println!("transfer: {} sentences with {policy} -> {}", sources.len(), path.display());
        Ok(vec![rel])
    })
}

pub fn evaluate(ctx: &Ctx) -> Result<(), Failure> {
    let strategy_name = ctx.strategy.map(|s| s.to_string());
    let policy = policy_name(ctx.strategy);
    let mut requires = policy_requirements(strategy_name.as_deref());
    requires.push(Requirement::stage(Stage::PretrainClassifier));
    requires.push(Requirement::stage(Stage::PretrainLm));
    execute(&ctx.run, &ctx.config, Stage::Evaluate, Some(&policy), &requires, ctx.force, || {
        let corpus = load_corpus(ctx)?;
        let model = load_frozen(ctx, &policy)?;
        let eval_classifier = load_frozen(ctx, "eval-classifier")?;
        let eval_lm = load_frozen(ctx, "eval-lm")?;
        let references: Vec<StyledSentence> = corpus.test.iter().map(|s| corpus.gold(s)).collect();
        let report: EvalReport = evaluate_transfer(
            &model,
            &eval_classifier,
            &eval_lm,
            &corpus.vocab,
            &corpus.test,
            &references,
            ctx.config.experiment.max_output_len,
        )?;
        let rel = format!("reports/eval-{policy}.json");
        write_json(ctx, &rel, &report)?;
        println!(
            "evaluate {policy}: style accuracy {:.1}, BLEU {:.1}, perplexity {:.2}, GM {:.1}",
            report.style_accuracy, report.content_bleu, report.perplexity, report.gm_all
        );
        Ok(vec![rel])
    })
}

pub fn report(ctx: &Ctx) -> Result<(), Failure> {
    execute(&ctx.run, &ctx.config, Stage::Report, None, &[], true, || report::write_reports(ctx))
}
