use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reel::data::{
    extractive_summary, load_corpus, make_synthetic_corpus, split_for_continuation, split_for_extension, write_corpus,
    Corpus, CorpusConfig, TextSample, CONTINUATION_PROMPT,
};
use reel::image::Image;
use reel::layout::{layout_interleaved, LayoutOptions, Vocabulary};
use reel::mask::{compile_mask, render_mask};
use reel::model::{
    check_model_gradients, init_model, load_checkpoint, save_checkpoint, GenInput, MoTConfig, ModelInput, ModelParams,
    VitStub,
};
use reel::script::{parse_script, serialize_script, PromptStyle, Script, UserPrompt};
use reel::tensor::{GradCheckOptions, Tensor};
use reel::train::toy::{evaluate_ring, train_toy, ToyConfig};
use reel::train::{
    infer_script_pipeline, train_stage1, train_stage2, GenerationMode, InferenceConfig, TrainConfig, TrainError,
};

use crate::{
    failed, Cli, CliError, Command, CorpusCommand, DemoRfArgs, GradcheckArgs, KeyValues, MaskArgs, SampleArgs,
    SplitArgs, SplitMode, TrainArgs,
};

type Out<'a> = &'a mut dyn Write;

fn io_failed(e: std::io::Error) -> CliError {
    CliError::Failed(e.to_string())
}

/// Input files that cannot be read are usage errors.
fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Prints diagnostics and returns exit 1, or the parsed script.
fn load_script(path: &Path, err: Out) -> Result<Result<Script, i32>, CliError> {
    let source = read_input(path)?;
    match parse_script(&source) {
        Ok(s) => Ok(Ok(s)),
        Err(diags) => {
            let shown = path.display().to_string();
            for d in &diags {
                writeln!(err, "{}", d.render(&shown)).map_err(io_failed)?;
            }
            Ok(Err(1))
        }
    }
}

pub fn dispatch(cli: &Cli, out: Out, err: Out) -> Result<i32, CliError> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Validate { script } => Ok(load_script(script, err)?.err().unwrap_or(0)),
        Command::Canonicalize { script } => match load_script(script, err)? {
            Ok(s) => {
                write!(out, "{}", serialize_script(&s).map_err(failed)?).map_err(io_failed)?;
                Ok(0)
            }
            Err(code) => Ok(code),
        },
        Command::Split(a) => split(a, out, err),
        Command::Mask(a) => mask(a, out, err),
        Command::Corpus(CorpusCommand::Gen { config }) => corpus_gen(config, cli.seed, out),
        Command::Train(a) => train(a, cli.seed, out),
        Command::Sample(a) => sample(a, seed, out),
        Command::Gradcheck(a) => gradcheck(a, seed, out),
        Command::DemoRf(a) => demo_rf(a, seed, out),
    }
}

fn split(a: &SplitArgs, out: Out, err: Out) -> Result<i32, CliError> {
    let s = match load_script(&a.script, err)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let n = s.shots.len() as u32;
    let split = match a.mode {
        SplitMode::Ext => {
            let k = a.at.ok_or_else(|| CliError::Usage("--mode ext needs --at K".into()))?;
            if k < 1 || k >= n {
                return Err(CliError::Usage(format!("--at {k} outside 1..={} for a {n}-shot script", n.max(1) - 1)));
            }
            let prompt = match &a.prompt {
                Some(p) => p.clone(),
                None => extractive_summary(&s.shots[k as usize..]).map_err(failed)?,
            };
            split_for_extension(&s, k, &prompt)
        }
        SplitMode::Cont => {
            if a.prompt.is_some() {
                return Err(CliError::Usage("--mode cont uses the fixed system prompt; drop --prompt".into()));
            }
            if let Some(k) = a.at.filter(|&k| k + 1 != n) {
                return Err(CliError::Usage(format!(
                    "--mode cont splits before the last shot, so --at must be {} (got {k})",
                    n.saturating_sub(1)
                )));
            }
            split_for_continuation(&s, CONTINUATION_PROMPT)
        }
    }
    .map_err(failed)?;
    write!(out, "{}", serialize_script(&split).map_err(failed)?).map_err(io_failed)?;
    Ok(0)
}

/// Vocabulary fitted to one script.
fn script_vocabulary(s: &Script) -> Result<Vocabulary, CliError> {
    let corpus = Corpus { text: vec![TextSample { id: "input".into(), script: s.clone() }], ..Corpus::default() };
    corpus.vocabulary().map_err(failed)
}

fn mask(a: &MaskArgs, out: Out, err: Out) -> Result<i32, CliError> {
    let s = match load_script(&a.script, err)? {
        Ok(s) => s,
        Err(code) => return Ok(code),
    };
    let n = s.shots.len() as u32;
    if a.gen_shot < 1 || a.gen_shot > n {
        return Err(CliError::Usage(format!("--gen-shot {} outside 1..={n}", a.gen_shot)));
    }
    let opts = LayoutOptions { image_size: a.image_size, id_prompting: !a.no_id_prompts, ..LayoutOptions::default() };
    if a.image_size == 0 || a.image_size % (opts.latent_downsample * opts.latent_patch) != 0 {
        return Err(CliError::Usage(format!(
            "--image-size must be a positive multiple of {}",
            opts.latent_downsample * opts.latent_patch
        )));
    }
    let vocab = script_vocabulary(&s)?;
    // Only the token counts of earlier frames matter here.
    let frames = vec![Image::new(a.image_size, a.image_size); a.gen_shot as usize - 1];
    let layout = layout_interleaved(&s, &frames, &vocab, a.gen_shot, &opts).map_err(failed)?;
    let bitmap = render_mask(&compile_mask(&layout).map_err(failed)?);
    let dump = layout.dump();
    match &a.out {
        Some(prefix) => {
            let with_ext = |ext: &str| {
                let mut p = prefix.as_os_str().to_owned();
                p.push(ext);
                PathBuf::from(p)
            };
            fs::write(with_ext(".pbm"), bitmap).map_err(io_failed)?;
            fs::write(with_ext(".layout"), dump).map_err(io_failed)?;
        }
        None => write!(out, "{bitmap}{dump}").map_err(io_failed)?,
    }
    Ok(0)
}

/// `--seed` wins over a `seed` key; the key is still checked.
fn seed_of(kv: &KeyValues, flag: Option<u64>) -> Result<u64, CliError> {
    let key = kv.get::<u64>("seed")?;
    Ok(flag.or(key).unwrap_or(0))
}

fn corpus_gen(config: &Path, seed: Option<u64>, out: Out) -> Result<i32, CliError> {
    let kv = KeyValues::read(config)?;
    let d = CorpusConfig::default();
    let cfg = CorpusConfig {
        interleaved: kv.get_or("interleaved", d.interleaved)?,
        text_scripts: kv.get_or("text_scripts", d.text_scripts)?,
        image_pairs: kv.get_or("image_pairs", d.image_pairs)?,
        shots: kv.range("shots", d.shots)?,
        characters: kv.range("characters", d.characters)?,
        environments: kv.range("environments", d.environments)?,
        vocabulary: kv.get_or("vocabulary", d.vocabulary)?,
        image_size: kv.get_or("image_size", d.image_size)?,
        seed: seed_of(&kv, seed)?,
    };
    let dir = kv.path("out")?.ok_or_else(|| CliError::Usage(format!("{}: missing key \"out\"", config.display())))?;
    kv.finish()?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = make_synthetic_corpus(&cfg).map_err(failed)?;
    fs::create_dir_all(&dir).map_err(io_failed)?;
    write_corpus(&corpus, &dir).map_err(failed)?;
    writeln!(
        out,
        "wrote {} interleaved, {} text, {} pair samples to {}",
        corpus.interleaved.len(),
        corpus.text.len(),
        corpus.pairs.len(),
        dir.display()
    )
    .map_err(io_failed)?;
    Ok(0)
}

/// The vocabulary file stored next to a checkpoint.
pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut p: OsString = checkpoint.as_os_str().to_owned();
    p.push(".vocab");
    PathBuf::from(p)
}

fn read_vocab(checkpoint: &Path) -> Result<Vocabulary, CliError> {
    let path = vocab_path(checkpoint);
    Vocabulary::from_text(&read_input(&path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn corpus_image_size(c: &Corpus) -> Option<usize> {
    c.interleaved
        .iter()
        .flat_map(|s| s.keyframes.first())
        .chain(c.pairs.iter().map(|p| &p.keyframe))
        .next()
        .map(|i| i.height)
}

const MODEL_KEYS: [&str; 11] = [
    "layers",
    "width",
    "heads",
    "ffn_width",
    "max_positions",
    "image_size",
    "latent_patch",
    "vit_patch",
    "vit_width",
    "time_width",
    "qk_scale",
];

fn model_config(kv: &KeyValues, vocab: usize, image_size: usize) -> Result<MoTConfig, CliError> {
    let d = MoTConfig::default();
    let cfg = MoTConfig {
        layers: kv.get_or("layers", d.layers)?,
        width: kv.get_or("width", d.width)?,
        heads: kv.get_or("heads", d.heads)?,
        ffn_width: kv.get_or("ffn_width", d.ffn_width)?,
        vocab,
        max_positions: kv.get_or("max_positions", d.max_positions)?,
        image_size,
        latent_patch: kv.get_or("latent_patch", d.latent_patch)?,
        vit_patch: kv.get_or("vit_patch", d.vit_patch)?,
        vit_width: kv.get_or("vit_width", d.vit_width)?,
        time_width: kv.get_or("time_width", d.time_width)?,
        qk_scale: kv.get_or("qk_scale", d.qk_scale)?,
        ..d
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train(a: &TrainArgs, seed: Option<u64>, out: Out) -> Result<i32, CliError> {
    let kv = KeyValues::read(&a.config)?;
    let missing = |k: &str| CliError::Usage(format!("{}: missing key {k:?}", a.config.display()));
    let corpus_dir = kv.path("corpus")?.ok_or_else(|| missing("corpus"))?;
    let ckpt = kv.path("out")?.ok_or_else(|| missing("out"))?;
    let loss_csv = kv.path("loss_csv")?;
    let init = kv.path("init")?;
    let d = TrainConfig::default();
    let mix = match kv.list::<usize>("stage2_mix")? {
        None => d.stage2_mix,
        Some(v) => v.try_into().map_err(|_| CliError::Usage("stage2_mix takes three weights".into()))?,
    };
    let cfg = TrainConfig {
        learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
        steps: kv.get_or("steps", d.steps)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        beta1: kv.get_or("beta1", d.beta1)?,
        beta2: kv.get_or("beta2", d.beta2)?,
        eps: kv.get_or("eps", d.eps)?,
        seed: seed_of(&kv, seed)?,
        flow_weight: kv.get_or("flow_weight", d.flow_weight)?,
        stage2_mix: mix,
        detach: kv.get_or("detach", d.detach)?,
        id_prompting: kv.get_or("id_prompting", d.id_prompting)?,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !corpus_dir.is_dir() {
        return Err(CliError::Usage(format!("corpus directory {} does not exist", corpus_dir.display())));
    }
    let corpus = load_corpus(&corpus_dir).map_err(failed)?;

    let (model, vocab) = match &init {
        Some(path) => {
            if let Some(k) = MODEL_KEYS.iter().find(|k| kv.get::<String>(k).is_ok_and(|v| v.is_some())) {
                return Err(CliError::Usage(format!(
                    "{k:?} conflicts with init; the checkpoint fixes the model shape"
                )));
            }
            if !path.is_file() {
                return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
            }
            (load_checkpoint(path).map_err(failed)?, read_vocab(path)?)
        }
        None => {
            let vocab = corpus.vocabulary().map_err(failed)?;
            let image_size = kv.get("image_size")?.or_else(|| corpus_image_size(&corpus)).unwrap_or(16);
            let mcfg = model_config(&kv, vocab.len(), image_size)?;
            (init_model(&mcfg, cfg.seed).map_err(failed)?, vocab)
        }
    };
    kv.finish()?;

    let (model, trace) = match a.stage {
        1 => train_stage1(model, &corpus, &vocab, &cfg),
        _ => train_stage2(model, &corpus, &vocab, &cfg, |_, _| {}),
    }
    .map_err(failed)?;
    save_checkpoint(&ckpt, &model).map_err(failed)?;
    fs::write(vocab_path(&ckpt), vocab.to_text()).map_err(io_failed)?;
    let csv_path = loss_csv.unwrap_or_else(|| ckpt.with_extension("loss.csv"));
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).map_err(io_failed)?;
    fs::write(&csv_path, csv).map_err(io_failed)?;
    let last = trace.records.last();
    writeln!(
        out,
        "stage {} trained {} steps; last ntp {} rf {}; wrote {}",
        a.stage,
        trace.records.len(),
        last.and_then(|r| r.loss_ntp).map_or("-".into(), |l| format!("{l:.4}")),
        last.and_then(|r| r.loss_rf).map_or("-".into(), |l| format!("{l:.4}")),
        ckpt.display()
    )
    .map_err(io_failed)?;
    Ok(0)
}

fn sample(a: &SampleArgs, seed: u64, out: Out) -> Result<i32, CliError> {
    if !a.checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let text = read_input(&a.prompt_file)?;
    let style =
        PromptStyle::new(a.style).ok_or_else(|| CliError::Usage(format!("--style {} outside 1..=4", a.style)))?;
    let model = load_checkpoint(&a.checkpoint).map_err(failed)?;
    let vocab = read_vocab(&a.checkpoint)?;
    let prompt = UserPrompt { text: text.trim().to_string(), style };
    let cfg = InferenceConfig {
        max_new_tokens: a.max_tokens,
        ode_steps: a.ode_steps,
        temperature: a.temperature,
        seed,
        id_prompting: !a.no_id_prompts,
    };
    let result = infer_script_pipeline(&model, &vocab, &prompt, None, &GenerationMode::Draft, &cfg);
    let generated = match result {
        Ok(g) => g,
        Err(TrainError::BadConfig(m)) => return Err(CliError::Usage(m)),
        Err(e) => return Err(failed(e)),
    };
    let script = serialize_script(&generated.script).map_err(failed)?;
    write!(out, "{script}").map_err(io_failed)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(io_failed)?;
        fs::write(dir.join("script.txt"), &script).map_err(io_failed)?;
        for (shot, img) in generated.script.shots.iter().zip(&generated.keyframes) {
            fs::write(dir.join(format!("shot{}.ppm", shot.index)), img.to_ppm_bytes()).map_err(io_failed)?;
        }
    }
    Ok(0)
}

/// A tiny two-layer model and one interleaved sample for gradient checks.
fn gradcheck_fixture(seed: u64) -> Result<(ModelParams, Corpus, Vocabulary), CliError> {
    let corpus = make_synthetic_corpus(&CorpusConfig {
        interleaved: 1,
        text_scripts: 0,
        image_pairs: 0,
        shots: (2, 2),
        characters: (1, 2),
        environments: (1, 1),
        image_size: 16,
        seed,
        ..CorpusConfig::default()
    })
    .map_err(failed)?;
    let vocab = corpus.vocabulary().map_err(failed)?;
    let cfg = MoTConfig {
        layers: 2,
        width: 8,
        heads: 2,
        ffn_width: 12,
        vocab: vocab.len(),
        max_positions: 512,
        image_size: 16,
        latent_patch: 1,
        vit_width: 6,
        time_width: 4,
        qk_scale: 4.0,
        ..MoTConfig::default()
    };
    Ok((init_model(&cfg, seed).map_err(failed)?, corpus, vocab))
}

fn gradcheck(a: &GradcheckArgs, seed: u64, out: Out) -> Result<i32, CliError> {
    let (model, corpus, vocab) = gradcheck_fixture(seed)?;
    let s = &corpus.interleaved[0];
    let cfg = &model.config;
    let layout =
        layout_interleaved(&s.script, &s.keyframes[..1], &vocab, 2, &cfg.layout_options(true)).map_err(failed)?;
    let mask = compile_mask(&layout).map_err(failed)?;
    let vit = VitStub::for_config(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = cfg.layout_options(true).vae_tokens();
    let pd = cfg.patch_dim();
    let mut random = |rows| Tensor::matrix(rows, pd, (0..rows * pd).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let x_t = random(tokens).map_err(failed)?;
    let target = random(tokens).map_err(failed)?;
    let input = ModelInput::with_frames(&layout, &mask, &s.keyframes[..1], cfg, &vit, Some(GenInput { x_t, t: 0.37 }))
        .map_err(failed)?;
    let opts = GradCheckOptions { max_per_param: (!a.all).then_some(a.per_param), seed, ..GradCheckOptions::default() };
    let report = check_model_gradients(&model, &input, &target, opts).map_err(failed)?;
    write!(out, "{}", report.render()).map_err(io_failed)?;
    let passed = report.passed();
    writeln!(out, "{}", if passed { "PASS" } else { "FAIL" }).map_err(io_failed)?;
    Ok(if passed { 0 } else { 1 })
}

fn demo_rf(a: &DemoRfArgs, seed: u64, out: Out) -> Result<i32, CliError> {
    if a.steps == 0 || a.batch == 0 || a.hidden == 0 {
        return Err(CliError::Usage("--steps, --batch and --hidden must be positive".into()));
    }
    let cfg = ToyConfig { steps: a.steps, batch: a.batch, hidden: a.hidden, seed, ..ToyConfig::default() };
    let (field, losses) = train_toy(&cfg);
    let tail = &losses[losses.len().saturating_sub(100)..];
    let r = evaluate_ring(&field, &cfg.ring, 2000, seed.wrapping_add(1));
    let mut fields = BTreeMap::new();
    fields.insert("final_loss", tail.iter().sum::<f64>() / tail.len() as f64);
    fields.insert("energy_distance_64", r.energy_64);
    fields.insert("energy_distance_8", r.energy_8);
    fields.insert("relative_8_vs_64", r.relative_8_vs_64);
    for (k, v) in fields {
        writeln!(out, "{k} {v:.6}").map_err(io_failed)?;
    }
    Ok(0)
}
