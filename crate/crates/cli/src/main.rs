use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vnafford::heads::EncoderKind;
use vnafford::sim::{ObjectFamily, PoseSetting};
use vnafford::PrimitiveType;

mod commands;
mod run;

#[derive(Parser, Debug)]
#[command(name = "vnafford", version, about = "Point-level affordance learning with vector-neuron networks")]
struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Root seed of every random stream used by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect interaction records into a dataset directory.
    Collect(CollectArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out objects.
    Eval(EvalArgs),
    /// Pick the best action on one object and export its affordance heatmap.
    Predict(PredictArgs),
    /// Write procedurally generated object specs to a TOML file.
    GenSpecs(GenSpecsArgs),
}

#[derive(Args, Debug)]
struct CollectArgs {
    #[arg(long, value_enum, default_value_t = Family::Drawer)]
    family: Family,
    #[arg(long, value_enum, default_value_t = Primitive::Pull)]
    primitive: Primitive,
    /// Number of records.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Collect with a trained model instead of at random.
    #[arg(long, requires = "checkpoint")]
    online: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Object instances to draw from.
    #[arg(long, default_value_t = 100)]
    objects: usize,
    /// Probability of drawing the contact point from the movable part.
    #[arg(long, default_value_t = vnafford::datagen::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = vnafford::datagen::DEFAULT_RENDER_POINTS)]
    points: usize,
    #[arg(long, value_enum, default_value_t = Pose::Z)]
    pose: Pose,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory written by `collect`.
    #[arg(long)]
    data: PathBuf,
    /// TOML training config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the architecture named in the config.
    #[arg(long, value_enum)]
    architecture: Option<Architecture>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_parser = parse_setting)]
    setting: PoseSetting,
    #[arg(long, default_value_t = 200)]
    n_episodes: usize,
    #[arg(long, value_enum, default_value_t = Family::Drawer)]
    family: Family,
    /// Held-out object instances.
    #[arg(long, default_value_t = 50)]
    objects: usize,
    /// Labeled records for the F1 score.
    #[arg(long, default_value_t = 2000)]
    f1_records: usize,
    /// Proposals per episode.
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = vnafford::datagen::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = vnafford::datagen::DEFAULT_RENDER_POINTS)]
    points: usize,
    /// Transforms in the equivariance-consistency check.
    #[arg(long, default_value_t = 4)]
    n_rot: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// TOML file with one or more `[[object]]` tables.
    #[arg(long)]
    object_spec: PathBuf,
    /// Which object of the file to use.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Defaults to the primitive the checkpoint was trained for.
    #[arg(long, value_enum)]
    primitive: Option<Primitive>,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = vnafford::datagen::DEFAULT_RENDER_POINTS)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenSpecsArgs {
    #[arg(long, value_enum, default_value_t = Family::Drawer)]
    family: Family,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Pose::Identity)]
    pose: Pose,
    #[arg(long)]
    out: PathBuf,
}

fn parse_setting(s: &str) -> Result<PoseSetting, String> {
    match s.parse()? {
        PoseSetting::Identity => Err("evaluation setting must be z or so3".into()),
        p => Ok(p),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Drawer,
    Door,
}

impl From<Family> for ObjectFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Drawer => ObjectFamily::Drawer,
            Family::Door => ObjectFamily::Door,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Primitive {
    Push,
    PushUp,
    PushLeft,
    Pull,
    PullUp,
    PullLeft,
}

impl From<Primitive> for PrimitiveType {
    fn from(p: Primitive) -> Self {
        match p {
            Primitive::Push => PrimitiveType::Push,
            Primitive::PushUp => PrimitiveType::PushUp,
            Primitive::PushLeft => PrimitiveType::PushLeft,
            Primitive::Pull => PrimitiveType::Pull,
            Primitive::PullUp => PrimitiveType::PullUp,
            Primitive::PullLeft => PrimitiveType::PullLeft,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Pose {
    Identity,
    Z,
    So3,
}

impl From<Pose> for PoseSetting {
    fn from(p: Pose) -> Self {
        match p {
            Pose::Identity => PoseSetting::Identity,
            Pose::Z => PoseSetting::Z,
            Pose::So3 => PoseSetting::So3,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Architecture {
    VectorNeuron,
    Baseline,
}

impl From<Architecture> for EncoderKind {
    fn from(a: Architecture) -> Self {
        match a {
            Architecture::VectorNeuron => EncoderKind::VectorNeuron,
            Architecture::Baseline => EncoderKind::Baseline,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().collect();
    let ctx = run::Context {
        args,
        seed: cli.seed,
        workers: cli.workers,
    };
    let result = match cli.command {
        Command::Collect(a) => commands::collect(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::GenSpecs(a) => commands::gen_specs(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
