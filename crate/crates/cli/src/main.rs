//! `ldit`: data generation, layouts, training, evaluation, ablations,
//! attention heatmaps and inference for the layout-conditioned DiT testbed.

mod commands;
mod config;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use serde_json::{json, Value};

const USAGE: &str = "\
usage: ldit <command> [--config FILE] [--out DIR] [--section.field=VALUE ...]

commands:
  gen-data     write the training and held-out scenes
  layout-gen   generate a page layout          --panels N --chars 2,1,0,3 --seed S --aspect R
  layout-eval  score a page layout              --in FILE
  train        train a model                    --seed S --resume CKPT
  eval         evaluate a checkpoint            --checkpoint CKPT
  ablate       loss-component grid and timestamp sweep   --budget scaled|paper --seeds 0,1,2
  cam-dump     write attention heatmaps         --checkpoint CKPT --scene K
  infer        generate one image               --checkpoint CKPT --boxes x0,y0,x1,y1;...

Every config field can be overridden with --section.field=VALUE, for example
--train.lr=1e-3. Exit status: 0 success, 1 invalid input, 2 runtime failure.
";

const COMMANDS: [&str; 8] = [
    "gen-data",
    "layout-gen",
    "layout-eval",
    "train",
    "eval",
    "ablate",
    "cam-dump",
    "infer",
];

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or config; usage goes to stderr.
    Usage(String),
    Core(ldit_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ldit_core::Error> for CliError {
    fn from(e: ldit_core::Error) -> Self {
        CliError::Core(e)
    }
}

struct Invocation {
    command: String,
    config: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

/// Short flags and the config keys they set. `list` wraps the value in
/// brackets so `--chars 2,1,0` reads as a JSON array.
fn alias(command: &str, flag: &str) -> Option<(&'static str, bool)> {
    Some(match (command, flag) {
        (_, "out") => ("paths.out", false),
        (_, "in") => ("paths.input", false),
        (_, "checkpoint") => ("paths.checkpoint", false),
        ("train", "resume") => ("paths.resume", false),
        ("layout-gen", "seed") => ("layout_gen.seed", false),
        ("infer", "seed") => ("infer.seed", false),
        (_, "seed") => ("train.seed", false),
        ("layout-gen", "panels") => ("layout_gen.panels", false),
        ("layout-gen", "chars") => ("layout_gen.chars", true),
        ("layout-eval", "chars") => ("layout_eval.chars", true),
        ("layout-gen", "aspect") => ("layout_gen.aspect_ratio", false),
        ("ablate", "budget") => ("ablate.budget", false),
        ("ablate", "seeds") => ("ablate.seeds", true),
        ("cam-dump", "scene") => ("cam.scene", false),
        ("infer", "refs") => ("infer.references", false),
        ("infer", "boxes") => ("infer.boxes", false),
        _ => return None,
    })
}

fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let command = args
        .first()
        .ok_or_else(|| CliError::Usage("missing command".into()))?
        .clone();
    if !COMMANDS.contains(&command.as_str()) {
        return Err(CliError::Usage(format!("unknown command {command:?}")));
    }
    let mut inv = Invocation {
        command,
        config: None,
        overrides: Vec::new(),
    };
    let mut rest = args[1..].iter();
    while let Some(arg) = rest.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument {arg:?}")))?;
        let (name, value) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => {
                let v = rest
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        if name == "config" {
            inv.config = Some(PathBuf::from(value));
            continue;
        }
        let (key, value) = match alias(&inv.command, &name) {
            Some(("infer.references", _)) => ("infer.references".to_string(), string_list(&value)),
            Some(("infer.boxes", _)) => ("infer.boxes".to_string(), box_list(&value)),
            Some((key, true)) if !value.starts_with('[') => (key.to_string(), format!("[{value}]")),
            Some((key, _)) => (key.to_string(), value),
            None if name.contains('.') => (name, value),
            None => return Err(CliError::Usage(format!("unknown flag --{name}"))),
        };
        inv.overrides.push((key, value));
    }
    Ok(inv)
}

fn string_list(v: &str) -> String {
    if v.starts_with('[') {
        return v.to_string();
    }
    let items: Vec<&str> = v.split(',').filter(|s| !s.is_empty()).collect();
    serde_json::to_string(&items).expect("strings serialize")
}

/// `x0,y0,x1,y1;x0,y0,x1,y1` → `[[x0,y0,x1,y1],[...]]`.
fn box_list(v: &str) -> String {
    if v.starts_with('[') {
        return v.to_string();
    }
    let boxes: Vec<String> = v
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|b| format!("[{b}]"))
        .collect();
    format!("[{}]", boxes.join(","))
}

fn run(args: &[String]) -> Result<(String, Value), (String, CliError)> {
    let inv = parse_args(args).map_err(|e| (String::new(), e))?;
    let cmd = inv.command.clone();
    let fail = |e: CliError| (cmd.clone(), e);
    let cfg = config::build(inv.config.as_deref(), &inv.overrides).map_err(fail)?;
    let out = cfg.out_dir().map_err(fail)?;
    std::fs::create_dir_all(&out).map_err(|e| fail(ldit_core::Error::io(&out, e).into()))?;
    let cfg_path = out.join("config.json");
    let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
    std::fs::write(&cfg_path, text + "\n").map_err(|e| fail(ldit_core::Error::io(&cfg_path, e).into()))?;
    let mut summary = commands::dispatch(&cmd, &cfg, &out).map_err(fail)?;
    summary["config"] = serde_json::to_value(&cfg).expect("config serializes");
    Ok((cmd, summary))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut stdout = std::io::stdout().lock();
    match run(&args) {
        Ok((cmd, mut summary)) => {
            summary["command"] = json!(cmd);
            summary["status"] = json!("ok");
            let _ = writeln!(stdout, "{summary}");
            ExitCode::SUCCESS
        }
        Err((cmd, e)) => {
            eprintln!("ldit: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprint!("\n{USAGE}");
            }
            let code = e.exit_code();
            let _ = writeln!(
                stdout,
                "{}",
                json!({"command": cmd, "status": "error", "exit_code": code, "message": e.to_string()})
            );
            ExitCode::from(code)
        }
    }
}
