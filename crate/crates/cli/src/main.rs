//! `wbr` — whole-body motion retargeting from the command line.
//!
//! Subcommands: `check-model` inspects a robot description, `fk` prints
//! link poses for a configuration, `calibrate` builds a correspondence
//! file from two reference poses, `gen` synthesizes a motion stream, and
//! `run` retargets a stream onto a robot.
//!
//! Exit codes: 0 success, 1 usage error, 2 input error (unreadable or
//! invalid files), 3 numerical failure inside the solver.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use wbr_core::ik::IkError;
use wbr_core::kinematics::{forward_kinematics, SystemState};
use wbr_core::model::{rotation_from_rpy, serialize_urdf, validate_model, KinematicModel};
use wbr_core::pipeline::{
    default_sinusoids, generate_synthetic_stream, load_model_ref, read_stream, run_stream,
    write_stream, FrameReader, RunError, StreamConfig, StreamRunner, StreamSpec,
};
use wbr_core::retarget::{
    calibrate, load_correspondence, save_correspondence, LinkMotion, MissingLinkPolicy,
    MotionFrame,
};
use wbr_core::so3::Rotation;

const EXIT_USAGE: i32 = 1;
const EXIT_INPUT: i32 = 2;
const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser)]
#[command(
    name = "wbr",
    version,
    about = "Whole-body kinematic motion retargeting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a robot model and report its structure and diagnostics.
    CheckModel {
        /// URDF path or preset:<name>[@<scale>].
        model: String,
    },
    /// Print link poses for a given configuration.
    Fk(FkArgs),
    /// Build a correspondence file from two reference-pose frames.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic sinusoid motion stream.
    Gen(GenArgs),
    /// Retarget a motion stream onto a robot, writing a joint CSV.
    Run(RunArgs),
}

#[derive(Args)]
struct FkArgs {
    /// URDF path or preset:<name>[@<scale>].
    model: String,
    /// Joint position override, repeatable: --joint name=radians.
    #[arg(long = "joint", value_name = "NAME=RAD")]
    joints: Vec<String>,
    /// Base position as x,y,z (default origin).
    #[arg(long, value_name = "X,Y,Z")]
    base_xyz: Option<String>,
    /// Base orientation as roll,pitch,yaw (default identity).
    #[arg(long, value_name = "R,P,Y")]
    base_rpy: Option<String>,
    /// Only these links, comma-separated (default: all).
    #[arg(long, value_name = "LINKS")]
    links: Option<String>,
    /// Emit one motion-stream JSON line instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Stream file whose first frame is the human reference pose.
    #[arg(long)]
    human: String,
    /// Stream file whose first frame is the robot reference pose.
    #[arg(long)]
    robot: String,
    /// Link pairing, repeatable: --pair human_link=robot_link.
    #[arg(long = "pair", value_name = "HUMAN=ROBOT", required = true)]
    pairs: Vec<String>,
    /// Correspondence file to write.
    #[arg(short, long)]
    output: String,
}

#[derive(Args)]
struct GenArgs {
    /// URDF path or preset:<name>[@<scale>].
    #[arg(long)]
    model: String,
    /// Stream file to write.
    #[arg(short, long)]
    output: String,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 200.0)]
    rate: f64,
    /// Base sinusoid amplitude (rad); per-joint amplitudes vary below it.
    #[arg(long, default_value_t = 0.3)]
    amplitude: f64,
    /// Base sinusoid frequency (Hz); per-joint frequencies vary below it.
    #[arg(long, default_value_t = 0.5)]
    frequency: f64,
    /// Only these links, comma-separated (default: all).
    #[arg(long, value_name = "LINKS")]
    links: Option<String>,
    /// Also write the generator model as URDF to this path.
    #[arg(long, value_name = "PATH")]
    emit_model: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file; flags below override its values.
    #[arg(short, long)]
    config: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    correspondence: Option<String>,
    /// Input stream file (ignored with --live).
    #[arg(long)]
    input: Option<String>,
    /// CSV output path (default: standard output).
    #[arg(short, long)]
    output: Option<String>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    smoothing_time: Option<f64>,
    /// Weld the base: solve for joint velocities only.
    #[arg(long)]
    fixed_base: bool,
    /// Missing mapped links: strict (error) or skip.
    #[arg(long, value_name = "POLICY")]
    missing_link: Option<String>,
    /// Read frames from standard input as they arrive.
    #[arg(long)]
    live: bool,
}

/// An error annotated with the process exit code it should produce.
struct CliError {
    code: i32,
    source: anyhow::Error,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            source: anyhow!(message.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(source: anyhow::Error) -> Self {
        CliError {
            code: EXIT_INPUT,
            source,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Ik(IkError::Qp(_)) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            source: anyhow::Error::new(e),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here too and must exit 0.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::CheckModel { model } => cmd_check_model(&model),
        Command::Fk(args) => cmd_fk(&args),
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::Gen(args) => cmd_gen(&args),
        Command::Run(args) => cmd_run(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.source);
        std::process::exit(e.code);
    }
}

fn cmd_check_model(reference: &str) -> Result<(), CliError> {
    let model = load_model_ref(reference).map_err(anyhow::Error::new)?;
    println!("model: {}", model.name);
    println!("links: {}", model.links().len());
    println!("joints: {}", model.joints().len());
    println!("n={}", model.n_dof());
    for diagnostic in validate_model(&model) {
        println!("warning: {diagnostic}");
    }
    Ok(())
}

fn cmd_fk(args: &FkArgs) -> Result<(), CliError> {
    let model = load_model_ref(&args.model).map_err(anyhow::Error::new)?;
    let mut state = SystemState::neutral(&model);
    if let Some(text) = &args.base_xyz {
        state.base_position = parse_triple(text)?.into();
    }
    if let Some(text) = &args.base_rpy {
        state.base_orientation = rotation_from_rpy(&parse_triple(text)?.into());
    }
    for assignment in &args.joints {
        let (name, value) = parse_assignment(assignment)?;
        let dof = (0..model.n_dof())
            .find(|&d| model.dof_joint(d).name == name)
            .ok_or_else(|| anyhow!("no movable joint named '{name}'"))?;
        state.s[dof] = value;
    }
    let poses = forward_kinematics(&model, &state)
        .map_err(|e| anyhow!("forward kinematics: {e}"))?;
    let selected = selected_links(&model, args.links.as_deref())?;

    if args.json {
        let links: BTreeMap<String, LinkMotion> = selected
            .into_iter()
            .map(|idx| {
                (
                    model.link_name(idx).to_string(),
                    LinkMotion {
                        orientation: poses[idx].rotation,
                        angular_velocity: Default::default(),
                    },
                )
            })
            .collect();
        let frame = MotionFrame { t: 0.0, links };
        println!("{}", wbr_core::pipeline::format_frame(&frame));
    } else {
        for idx in selected {
            let p = poses[idx].position;
            let [w, x, y, z] = poses[idx].rotation.to_quaternion();
            println!(
                "{}: pos [{} {} {}] quat [{} {} {} {}]",
                model.link_name(idx),
                p.x,
                p.y,
                p.z,
                w,
                x,
                y,
                z
            );
        }
    }
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let human = reference_orientations(&args.human)?;
    let robot = reference_orientations(&args.robot)?;
    let mut pairs = Vec::with_capacity(args.pairs.len());
    for pair in &args.pairs {
        let (human_link, robot_link) = split_assignment(pair)?;
        pairs.push((human_link, robot_link));
    }
    let map = calibrate(&human, &robot, &pairs).map_err(|e| anyhow!("calibrate: {e}"))?;
    fs::write(&args.output, save_correspondence(&map))
        .map_err(|e| anyhow!("writing {}: {e}", args.output))?;
    println!("wrote {} pairs to {}", map.pairs().len(), args.output);
    Ok(())
}

/// First frame of a stream file, as link → orientation.
fn reference_orientations(path: &str) -> Result<BTreeMap<String, Rotation>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| anyhow!("reading {path}: {e}"))?;
    let frames = read_stream(text.as_bytes()).map_err(|e| anyhow!("{path}: {e}"))?;
    let first = frames
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!("{path}: stream holds no frames"))?;
    Ok(first
        .links
        .into_iter()
        .map(|(name, motion)| (name, motion.orientation))
        .collect())
}

fn cmd_gen(args: &GenArgs) -> Result<(), CliError> {
    let model = load_model_ref(&args.model).map_err(anyhow::Error::new)?;
    if let Some(path) = &args.emit_model {
        fs::write(path, serialize_urdf(&model)).map_err(|e| anyhow!("writing {path}: {e}"))?;
    }
    let links = match &args.links {
        Some(text) => text.split(',').map(|s| s.trim().to_string()).collect(),
        None => Vec::new(),
    };
    let spec = StreamSpec {
        joints: default_sinusoids(&model, args.amplitude, args.frequency),
        duration: args.duration,
        rate: args.rate,
        links,
    };
    let frames = generate_synthetic_stream(&model, &spec).map_err(|e| anyhow!("gen: {e}"))?;
    let file = fs::File::create(&args.output)
        .map_err(|e| anyhow!("creating {}: {e}", args.output))?;
    let mut out = io::BufWriter::new(file);
    write_stream(&frames, &mut out).map_err(|e| anyhow!("writing {}: {e}", args.output))?;
    out.flush().map_err(|e| anyhow!("writing {}: {e}", args.output))?;
    println!("wrote {} frames to {}", frames.len(), args.output);
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| anyhow!("reading {path}: {e}"))?;
            StreamConfig::parse_toml(&text).map_err(|e| anyhow!("{path}: {e}"))?
        }
        None => StreamConfig::default(),
    };
    if let Some(v) = &args.model {
        config.model = v.clone();
    }
    if let Some(v) = &args.correspondence {
        config.correspondence = v.clone();
    }
    if let Some(v) = &args.input {
        config.input = Some(v.clone());
    }
    if let Some(v) = &args.output {
        config.output = Some(v.clone());
    }
    if let Some(v) = args.rate {
        config.rate = v;
    }
    if let Some(v) = args.gain {
        config.ik.gain = v;
    }
    if let Some(v) = args.lambda {
        config.ik.lambda = v;
    }
    if let Some(v) = args.smoothing_time {
        config.smoothing_time = v;
    }
    if args.fixed_base {
        config.ik.fixed_base = true;
    }
    if let Some(policy) = &args.missing_link {
        config.missing_link = match policy.as_str() {
            "strict" => MissingLinkPolicy::Strict,
            "skip" => MissingLinkPolicy::Skip,
            other => {
                return Err(CliError::usage(format!(
                    "--missing-link must be 'strict' or 'skip', got '{other}'"
                )))
            }
        };
    }

    if config.model.is_empty() {
        return Err(CliError::usage("no model: pass --model or set it in --config"));
    }
    if config.correspondence.is_empty() {
        return Err(CliError::usage(
            "no correspondence: pass --correspondence or set it in --config",
        ));
    }
    if !args.live && config.input.is_none() {
        return Err(CliError::usage(
            "no input: pass --input, set it in --config, or use --live",
        ));
    }

    if args.live {
        run_live(&config)
    } else {
        let summary = run_stream(&config)?;
        // Keep the CSV stream clean when it goes to standard output.
        if config.output.is_some() {
            println!("{summary}");
        } else {
            eprintln!("{summary}");
        }
        Ok(())
    }
}

/// Reads frames from standard input and emits rows as they are solved.
fn run_live(config: &StreamConfig) -> Result<(), CliError> {
    config.validate().map_err(RunError::Config)?;
    let model = load_model_ref(&config.model).map_err(RunError::Model)?;
    let text = fs::read_to_string(&config.correspondence)
        .map_err(|e| anyhow!("reading {}: {e}", config.correspondence))?;
    let map = load_correspondence(&text).map_err(RunError::Retarget)?;
    let mut runner = StreamRunner::new(model, map, config)?;

    let stdin = io::stdin();
    let frames = FrameReader::new(stdin.lock());
    let mut file_out = match &config.output {
        Some(path) => {
            Some(fs::File::create(path).map_err(|e| anyhow!("creating {path}: {e}"))?)
        }
        None => None,
    };
    let stdout = io::stdout();
    let mut emit = |line: &str| -> Result<(), CliError> {
        match &mut file_out {
            Some(f) => writeln!(f, "{line}").map_err(|e| anyhow!("writing output: {e}"))?,
            None => {
                let mut out = stdout.lock();
                writeln!(out, "{line}").map_err(|e| anyhow!("writing output: {e}"))?;
                out.flush().map_err(|e| anyhow!("writing output: {e}"))?;
            }
        }
        Ok(())
    };

    emit(&runner.csv_header())?;
    for frame in frames {
        let frame = frame.map_err(RunError::Stream)?;
        let row = runner.process(&frame)?;
        emit(&row)?;
    }
    eprintln!("{}", runner.summary());
    Ok(())
}

fn selected_links(
    model: &KinematicModel,
    selection: Option<&str>,
) -> Result<Vec<usize>, CliError> {
    match selection {
        None => Ok((0..model.links().len()).collect()),
        Some(text) => text
            .split(',')
            .map(|raw| {
                let name = raw.trim();
                model
                    .link_index(name)
                    .ok_or_else(|| CliError::from(anyhow!("no link named '{name}'")))
            })
            .collect(),
    }
}

fn parse_assignment(text: &str) -> Result<(String, f64), CliError> {
    let (name, raw) = split_assignment(text)?;
    let value = raw
        .parse::<f64>()
        .map_err(|_| CliError::usage(format!("'{raw}' is not a number in '{text}'")))?;
    Ok((name, value))
}

fn split_assignment(text: &str) -> Result<(String, String), CliError> {
    match text.split_once('=') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => {
            Ok((a.trim().to_string(), b.trim().to_string()))
        }
        _ => Err(CliError::usage(format!(
            "expected NAME=VALUE, got '{text}'"
        ))),
    }
}

fn parse_triple(text: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!(
            "expected three comma-separated numbers, got '{text}'"
        )));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::usage(format!("'{part}' is not a number in '{text}'")))?;
    }
    Ok(out)
}
