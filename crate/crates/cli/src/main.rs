use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use kinemark::attacks::{apply_attack, bit_accuracy, AttackKind, AttackParam, AttackSpec};
use kinemark::io;
use kinemark::pde::{self, DEFAULT_GRID, DEFAULT_TOL};
use kinemark::pipeline::config::KEYS;
use kinemark::pipeline::experiment::{embed_inputs, load_config, run_ablation, run_experiment_with};
use kinemark::pipeline::report::{write_ablation, write_report};
use kinemark::pipeline::{generate_scene, ExperimentConfig};
use kinemark::splat::{render_with, Viewpoint};
use kinemark::watermark::{decode_image, embed};
use kinemark::Execution;

#[derive(Parser)]
#[command(name = "kinemark", version, about = "Curvature-gated watermarking of dynamic Gaussian-splat scenes")]
struct Cli {
    /// Run every data-parallel loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene and write it as text.
    GenScene {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the configured message into a scene file.
    Embed {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-epoch trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also write the decoder description.
        #[arg(long)]
        decoder_out: Option<PathBuf>,
        /// Also write the embedded message.
        #[arg(long)]
        message_out: Option<PathBuf>,
    },
    /// Render one frame of a scene from one azimuth.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Azimuth in degrees.
        #[arg(long, default_value_t = 0.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        #[arg(long)]
        pgm: Option<PathBuf>,
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// Apply one attack to a raw image.
    Attack {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long)]
        kind: AttackKind,
        /// Scalar or `lo:hi` range.
        #[arg(long, default_value = "0")]
        param: AttackParam,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pgm: Option<PathBuf>,
    },
    /// Decode the message from a raw image.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long)]
        decoder: PathBuf,
        /// Expected message; prints the bit accuracy when given.
        #[arg(long)]
        message: Option<PathBuf>,
    },
    /// Full pipeline: generate, embed, render, attack, decode, report.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Verify the diffusion-reaction solver and energy.
    PdeCheck {
        #[arg(long, default_value_t = DEFAULT_GRID)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the barrier problem and its solution as raw grids here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full configuration and its single-term ablations over scene seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

/// `--config FILE` plus one `--<key>` flag per config key; flags override
/// the file.
struct ConfigArgs {
    file: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
    output_dir: Option<String>,
}

fn flag_name(key: &'static str) -> &'static str {
    // Leaked once per key at startup so clap can hold a static name.
    Box::leak(key.replace('_', "-").into_boxed_str())
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let mut cmd = cmd
            .arg(Arg::new("config").long("config").value_name("FILE").value_parser(clap::value_parser!(PathBuf)).help("Config file of `key = value` lines"))
            .arg(Arg::new("output_dir").long("output-dir").value_name("DIR").help("Report directory"));
        for key in KEYS {
            cmd = cmd.arg(Arg::new(key).long(flag_name(key)).value_name("VALUE").action(ArgAction::Set).help_heading("Config keys"));
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        Ok(Self {
            file: m.get_one::<PathBuf>("config").cloned(),
            overrides: KEYS.iter().filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone()))).collect(),
            output_dir: m.get_one::<String>("output_dir").cloned(),
        })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.file.as_deref())
            .with_context(|| format!("config: {}", self.file.as_deref().unwrap_or(Path::new("-")).display()))?;
        for (k, v) in &self.overrides {
            cfg.set(k, v).with_context(|| format!("config: --{}", k.replace('_', "-")))?;
        }
        if let Some(dir) = &self.output_dir {
            cfg.set("output_dir", dir)?;
        }
        cfg.validate().context("config")?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match dispatch(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kinemark: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes already spelled out by
/// the message above them.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn dispatch(cmd: Cmd, exec: Execution) -> Result<()> {
    match cmd {
        Cmd::GenScene { config, out } => {
            let cfg = config.resolve()?;
            let g = generate_scene(&cfg.scene).context("scene")?;
            io::write_scene(&out, &g.scene).context("write scene")?;
            println!("wrote {} frames to {}", g.scene.len(), out.display());
        }
        Cmd::Embed { config, scene, out, trace, decoder_out, message_out } => {
            let cfg = config.resolve()?;
            let scene = io::read_scene(&scene).context("read scene")?;
            let inputs = embed_inputs(&scene, &cfg, exec)?;
            let views: Vec<Viewpoint> = inputs.supervised.iter().map(|&v| inputs.views[v]).collect();
            let outcome = embed(&scene, &inputs.message, &inputs.decoder, &views, &inputs.gates, &inputs.prior, &inputs.config)
                .context("embed")?;
            io::write_scene(&out, &outcome.scene).context("write scene")?;
            if let Some(p) = trace {
                std::fs::write(&p, io::trace_csv(&outcome.trace)).with_context(|| format!("write {}", p.display()))?;
            }
            if let Some(p) = decoder_out {
                io::write_decoder(&p, &inputs.decoder).context("write decoder")?;
            }
            if let Some(p) = message_out {
                io::write_message(&p, &inputs.message).context("write message")?;
            }
            let last = outcome.trace.last();
            println!(
                "epochs {} converged {} bit_acc {:.4}",
                outcome.epochs,
                outcome.converged,
                last.map_or(f64::NAN, |r| r.bit_acc)
            );
        }
        Cmd::Render { scene, frame, azimuth, size, extent, pgm, raw } => {
            let scene = io::read_scene(&scene).context("read scene")?;
            if frame >= scene.len() {
                bail!("render: frame {frame} out of range (scene has {})", scene.len());
            }
            let view = Viewpoint::new(azimuth, size, size, extent).context("render")?;
            let img = render_with(&scene.frames[frame], &view, exec);
            write_image(&img, pgm.as_deref(), raw.as_deref())?;
        }
        Cmd::Attack { input, channels, kind, param, seed, out, pgm } => {
            let img = io::read_raw_image(&input, channels).context("read image")?;
            let spec = AttackSpec::new(kind, param, seed).context("attack")?;
            let attacked = apply_attack(&img, &spec).context("attack")?;
            write_image(&attacked, pgm.as_deref(), Some(&out))?;
        }
        Cmd::Decode { input, channels, decoder, message } => {
            let img = io::read_raw_image(&input, channels).context("read image")?;
            let dec = io::read_decoder(&decoder).context("read decoder")?;
            let soft = decode_image(&img, &dec).context("decode")?;
            let bits: String = soft.iter().map(|&p| if p > 0.5 { '1' } else { '0' }).collect();
            println!("{bits}");
            if let Some(m) = message {
                let msg = io::read_message(&m).context("read message")?;
                println!("bit_acc {}", bit_accuracy(&soft, msg.bits()).context("decode")?);
            }
        }
        Cmd::Run { config } => {
            let cfg = config.resolve()?;
            let report = run_experiment_with(&cfg, exec)?;
            let written = write_report(&report, &cfg.output_dir).context("report")?;
            println!(
                "clean bit accuracy {:.4}, psnr {:.2} dB, epochs {}",
                report.clean_bit_acc, report.psnr, report.epochs
            );
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Cmd::PdeCheck { size, tol, seed, out } => {
            let check = pde::verification_suite(size, tol, seed, exec).context("pde")?;
            let el_ok = check.euler_lagrange_error <= 1e-6;
            let barrier_ok = check.barrier_ratio <= 1e-6;
            let residual_ok = check.converged && check.residual <= tol;
            let damping_ok = check.monotone_damping();
            let mark = |ok: bool| if ok { "ok  " } else { "FAIL" };
            println!("{} euler-lagrange relative error {:.3e}", mark(el_ok), check.euler_lagrange_error);
            println!("{} barrier ratio {:.3e}", mark(barrier_ok), check.barrier_ratio);
            println!("{} solver residual {:.3e} after {} sweeps", mark(residual_ok), check.residual, check.iterations);
            let sweep: Vec<String> = check.damping.iter().map(|(l, m)| format!("{l}:{m:.4e}")).collect();
            println!("{} monotone damping {}", mark(damping_ok), sweep.join(" "));
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let prob = pde::barrier_problem(size, 0.05, 1.0)?;
                let sol = pde::solve_steady_state_with(&prob, &pde::SolverParams { tol, ..Default::default() }, exec)?;
                io::write_raw_grid(&dir.join("diffusion.raw"), &prob.diffusion)?;
                io::write_raw_grid(&dir.join("source.raw"), &prob.source)?;
                io::write_raw_grid(&dir.join("solution.raw"), &sol.field.values)?;
            }
            if !(el_ok && barrier_ok && residual_ok && damping_ok) {
                bail!("pde-check: verification failed");
            }
        }
        Cmd::Ablate { config, seeds } => {
            let cfg = config.resolve()?;
            let rows = run_ablation(&cfg, &seeds, exec)?;
            let path = write_ablation(&rows, &cfg.output_dir).context("report")?;
            for r in &rows {
                println!(
                    "{:<13} seed {:<3} clean {:.4} attacked {:.4} psnr {:.2} flicker {:.3e}",
                    r.variant, r.seed, r.clean_bit_acc, r.mean_attacked_bit_acc, r.psnr, r.flicker
                );
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn write_image(img: &kinemark::splat::Image, pgm: Option<&Path>, raw: Option<&Path>) -> Result<()> {
    if pgm.is_none() && raw.is_none() {
        bail!("output: give --pgm and/or a raw output path");
    }
    if let Some(p) = pgm {
        io::write_pgm(p, img).with_context(|| format!("write {}", p.display()))?;
    }
    if let Some(p) = raw {
        io::write_raw_image(p, img).with_context(|| format!("write {}", p.display()))?;
    }
    Ok(())
}
