//! Command-line front end for the lenslet light-field codec.
//!
//! Exit codes: `0` success, `2` usage or configuration problems, `3`
//! broken or mismatched data (files, streams, geometry), `4` numeric
//! failures (divergence, non-finite values).

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sadn::codec::{decode_lightfield, encode_lightfield};
use sadn::imageio;
use sadn::lightfield::{estimate_epi_slope, generate_lightfield, LensletImage, SceneSpec};
use sadn::metrics::{bd_psnr, bd_rate, epi_psnr, psnr, ssim, RdCurve};
use sadn::model::{SadnConfig, SadnModel};
use sadn::train::{
    fit, load_checkpoint, save_checkpoint, AdamState, FitConfig,
};
use sadn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sadn",
    version,
    about = "Learned codec for lenslet light-field images",
    long_about = "Learned codec for lenslet light-field images.\n\n\
        Lenslet images travel as 8-bit PNG/PPM/PGM files with a sidecar\n\
        `<file>.meta` holding `a=<views per axis>`. Exit codes: 0 success,\n\
        2 usage, 3 bad data, 4 numeric failure."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic light field from a scene description file.
    Synth {
        /// Scene description (see `--help` for the format).
        #[arg(long_help = "Scene description file. Line format:\n  \
            a=4\n  channels=1\n  height=32\n  width=48\n  \
            layer: texture=checker period=4 lo=0.2 hi=0.9 disparity=0 mask=full\n  \
            layer: texture=noise seed=7 scale=3 disparity=2 mask=disk cx=24 cy=16 r=10\n\
            Textures: flat, checker, sine, noise. Masks: full, disk, rect.\n\
            Layers paint back to front; disparity shifts content between views.")]
        scene: PathBuf,
        /// Output lenslet image (`.png`/`.ppm`/`.pgm`; sidecar added).
        #[arg(long)]
        output: PathBuf,
    },
    /// Convert between lenslet images and per-view directories.
    Convert {
        #[command(subcommand)]
        direction: ConvertCmd,
    },
    /// Train a model on a directory of lenslet images and scene files.
    Train {
        /// Directory of `.png`+`.meta` lenslet images and/or `.scene` files.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write when done.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from (ignores the architecture flags).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Rate-distortion weight on the squared error.
        #[arg(long, default_value_t = 0.25)]
        lambda: f64,
        /// Optimization steps to run now.
        #[arg(long, default_value_t = 200)]
        steps: u64,
        /// Adam learning rate.
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Seed for init, patch order, and quantization noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training crop edge in lenslet pixels.
        #[arg(long, default_value_t = 32)]
        patch: usize,
        /// Feature channels per branch (fresh models only).
        #[arg(long, default_value_t = 16)]
        features: usize,
        /// Latent channels (fresh models only).
        #[arg(long, default_value_t = 16)]
        latents: usize,
        /// Stride-2 stages between features and latents (fresh models only).
        #[arg(long, default_value_t = 2)]
        stages: usize,
        /// Append per-step stats to this CSV (`step,loss,rate_bpp,mse`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Compress a lenslet image into a codec stream.
    Encode {
        /// Trained checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Lenslet image with sidecar.
        #[arg(long)]
        input: PathBuf,
        /// Stream file to write.
        #[arg(long)]
        output: PathBuf,
        /// Rate point label stored in the stream header.
        #[arg(long, default_value_t = 0)]
        lambda_index: u8,
    },
    /// Decompress a codec stream back to a lenslet image.
    Decode {
        /// The checkpoint the stream was encoded with.
        #[arg(long)]
        model: PathBuf,
        /// Stream file to read.
        #[arg(long)]
        input: PathBuf,
        /// Lenslet image to write (sidecar added).
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare two images: PSNR, SSIM, and for light fields the
    /// epipolar-slice PSNR.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Skip the epipolar comparison even for light fields.
        #[arg(long)]
        no_epi: bool,
    },
    /// Average rate difference between two rate-quality curves.
    Rdcurve {
        /// Baseline curve CSV (`bpp,psnr,ssim` with header).
        #[arg(long)]
        baseline: PathBuf,
        /// Curve under test, same format.
        #[arg(long)]
        test: PathBuf,
    },
    /// Estimate scene disparity from an epipolar slice.
    Epi {
        /// Lenslet image with sidecar.
        #[arg(long)]
        input: PathBuf,
        /// Angular row of the slice (default: centre).
        #[arg(long)]
        u: Option<usize>,
        /// Spatial row of the slice (default: centre).
        #[arg(long)]
        row: Option<usize>,
        /// Channel to slice.
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Largest per-view shift to consider.
        #[arg(long, default_value_t = 8)]
        max_lag: usize,
        /// Also write the slice as a grayscale image.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ConvertCmd {
    /// Split a lenslet image into one file per viewpoint.
    ToViews {
        /// Lenslet image with sidecar.
        input: PathBuf,
        /// Directory for `view_UU_VV.png` files (created).
        out_dir: PathBuf,
    },
    /// Reassemble a lenslet image from a directory of viewpoint files.
    ToLenslet {
        /// Directory of `view_UU_VV.png` files.
        input_dir: PathBuf,
        /// Lenslet image to write (sidecar added).
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Index(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { scene, output } => cmd_synth(&scene, &output),
        Cmd::Convert { direction } => match direction {
            ConvertCmd::ToViews { input, out_dir } => cmd_to_views(&input, &out_dir),
            ConvertCmd::ToLenslet { input_dir, output } => cmd_to_lenslet(&input_dir, &output),
        },
        Cmd::Train {
            data,
            out,
            resume,
            lambda,
            steps,
            lr,
            seed,
            patch,
            features,
            latents,
            stages,
            log,
        } => cmd_train(TrainArgs {
            data,
            out,
            resume,
            lambda,
            steps,
            lr,
            seed,
            patch,
            features,
            latents,
            stages,
            log,
        }),
        Cmd::Encode { model, input, output, lambda_index } => {
            cmd_encode(&model, &input, &output, lambda_index)
        }
        Cmd::Decode { model, input, output } => cmd_decode(&model, &input, &output),
        Cmd::Eval { reference, test, no_epi } => cmd_eval(&reference, &test, no_epi),
        Cmd::Rdcurve { baseline, test } => cmd_rdcurve(&baseline, &test),
        Cmd::Epi { input, u, row, channel, max_lag, output } => {
            cmd_epi(&input, u, row, channel, max_lag, output.as_deref())
        }
    }
}

fn cmd_synth(scene: &Path, output: &Path) -> Result<()> {
    let text = fs::read_to_string(scene)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", scene.display())))?;
    let spec: SceneSpec = text.parse()?;
    let stack = generate_lightfield(&spec)?;
    let li = stack.to_lenslet();
    imageio::save_lenslet(output, &li)?;
    let [_, c, h, w] = li.tensor().shape();
    println!("a={}", li.a());
    println!("channels={c}");
    println!("height={h}");
    println!("width={w}");
    Ok(())
}

fn cmd_to_views(input: &Path, out_dir: &Path) -> Result<()> {
    let li = imageio::load_lenslet(input)?;
    let stack = li.to_views();
    imageio::save_views(out_dir, &stack)?;
    println!("views={}", stack.a() * stack.a());
    Ok(())
}

fn cmd_to_lenslet(input_dir: &Path, output: &Path) -> Result<()> {
    let stack = imageio::load_views(input_dir)?;
    let li = stack.to_lenslet();
    imageio::save_lenslet(output, &li)?;
    let [_, _, h, w] = li.tensor().shape();
    println!("a={}", li.a());
    println!("height={h}");
    println!("width={w}");
    Ok(())
}

struct TrainArgs {
    data: PathBuf,
    out: PathBuf,
    resume: Option<PathBuf>,
    lambda: f64,
    steps: u64,
    lr: f64,
    seed: u64,
    patch: usize,
    features: usize,
    latents: usize,
    stages: usize,
    log: Option<PathBuf>,
}

/// Loads every training image in `dir`: lenslet files by sidecar,
/// scene files by rendering.
fn load_training_set(dir: &Path) -> Result<Vec<LensletImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    paths.sort();
    let mut images = Vec::new();
    for path in paths {
        match path.extension().and_then(|e| e.to_str()) {
            Some("png") | Some("ppm") | Some("pgm") => {
                images.push(imageio::load_lenslet(&path)?);
            }
            Some("scene") => {
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
                let spec: SceneSpec = text.parse()?;
                images.push(generate_lightfield(&spec)?.to_lenslet());
            }
            _ => {}
        }
    }
    if images.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no training data (looked for .png/.ppm/.pgm with sidecars, .scene)",
            dir.display()
        )));
    }
    Ok(images)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let images = load_training_set(&args.data)?;
    let a = images[0].a();
    let channels = images[0].tensor().shape()[1];
    for li in &images {
        if li.a() != a || li.tensor().shape()[1] != channels {
            return Err(Error::Data(format!(
                "training set mixes geometries: {0}x{0} views {channels} channels vs \
                 {1}x{1} views {2} channels",
                a,
                li.a(),
                li.tensor().shape()[1]
            )));
        }
    }

    let (mut model, mut adam) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.config.a != a || ckpt.model.config.channels != channels {
                return Err(Error::ModelMismatch(format!(
                    "checkpoint is for {0}x{0} views, {1} channels; data has {2}x{2}, {3}",
                    ckpt.model.config.a, ckpt.model.config.channels, a, channels
                )));
            }
            let adam = ckpt
                .adam
                .unwrap_or_else(|| AdamState::new(&ckpt.model, args.lr));
            (ckpt.model, adam)
        }
        None => {
            let config = SadnConfig {
                a,
                channels,
                n: args.features,
                m: args.latents,
                stages: args.stages,
            };
            let model = SadnModel::init(config, args.seed)?;
            let adam = AdamState::new(&model, args.lr);
            (model, adam)
        }
    };
    model.config.check_extent(args.patch, args.patch).map_err(|_| {
        Error::Config(format!(
            "patch edge {} must be a positive multiple of a={} and of the {}x reduction",
            args.patch,
            model.config.a,
            model.config.reduction()
        ))
    })?;

    let mut patches = Vec::new();
    for li in &images {
        for p in li.extract_patches(args.patch)? {
            patches.push(p.tensor().clone());
        }
    }
    if patches.is_empty() {
        return Err(Error::Data(format!(
            "no image is at least {0}x{0} lenslet pixels; lower --patch",
            args.patch
        )));
    }

    let mut log_file = match &args.log {
        Some(path) => {
            let fresh = !path.exists();
            let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(f, "step,loss,rate_bpp,mse")?;
            }
            Some(f)
        }
        None => None,
    };

    let cfg = FitConfig { lambda: args.lambda, steps: args.steps, lr: args.lr, seed: args.seed };
    let mut log_err = None;
    let report = fit(&mut model, &mut adam, &patches, &cfg, |step, stats| {
        if let Some(f) = &mut log_file {
            if let Err(e) = writeln!(f, "{step},{},{},{}", stats.loss, stats.bpp, stats.mse) {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }

    save_checkpoint(&args.out, &model, Some(&adam))?;
    println!("steps={}", report.steps_run);
    println!("total_steps={}", adam.step);
    println!("loss={}", report.last.loss);
    println!("rate_bpp={}", report.last.bpp);
    println!("mse={}", report.last.mse);
    Ok(())
}

fn cmd_encode(model: &Path, input: &Path, output: &Path, lambda_index: u8) -> Result<()> {
    let model = load_checkpoint(model)?.model;
    let li = imageio::load_lenslet(input)?;
    let stream = encode_lightfield(&model, &li, lambda_index)?;
    fs::write(output, &stream)?;
    let [_, _, h, w] = li.tensor().shape();
    println!("bytes={}", stream.len());
    println!("bpp={}", 8.0 * stream.len() as f64 / (h * w) as f64);
    Ok(())
}

fn cmd_decode(model: &Path, input: &Path, output: &Path) -> Result<()> {
    let model = load_checkpoint(model)?.model;
    let stream = fs::read(input)?;
    let li = decode_lightfield(&model, &stream)?;
    imageio::save_lenslet(output, &li)?;
    let [_, c, h, w] = li.tensor().shape();
    println!("a={}", li.a());
    println!("channels={c}");
    println!("height={h}");
    println!("width={w}");
    Ok(())
}

fn cmd_eval(reference: &Path, test: &Path, no_epi: bool) -> Result<()> {
    let ref_img = imageio::load_image(reference)?;
    let test_img = imageio::load_image(test)?;
    println!("psnr={}", psnr(&ref_img, &test_img, 1.0)?);
    println!("ssim={}", ssim(&ref_img, &test_img, 1.0)?);
    if no_epi {
        return Ok(());
    }
    let metas = (imageio::read_meta(reference), imageio::read_meta(test));
    if let (Ok(ar), Ok(at)) = metas {
        if ar != at {
            return Err(Error::Data(format!(
                "angular resolutions differ: {ar} vs {at}"
            )));
        }
        let ref_lf = LensletImage::new(ar, ref_img)?.to_views();
        let test_lf = LensletImage::new(at, test_img)?.to_views();
        println!("epi_psnr={}", epi_psnr(&ref_lf, &test_lf, 1.0)?);
    }
    Ok(())
}

fn cmd_rdcurve(baseline: &Path, test: &Path) -> Result<()> {
    let open = |p: &Path| -> Result<RdCurve> {
        let f = fs::File::open(p)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))?;
        RdCurve::read_csv(BufReader::new(f))
    };
    let base = open(baseline)?;
    let curve = open(test)?;
    println!("bd_rate_percent={}", bd_rate(&base.rate_psnr(), &curve.rate_psnr())?);
    println!("bd_psnr_db={}", bd_psnr(&base.rate_psnr(), &curve.rate_psnr())?);
    Ok(())
}

fn cmd_epi(
    input: &Path,
    u: Option<usize>,
    row: Option<usize>,
    channel: usize,
    max_lag: usize,
    output: Option<&Path>,
) -> Result<()> {
    let li = imageio::load_lenslet(input)?;
    let stack = li.to_views();
    let u = u.unwrap_or(stack.a() / 2);
    let s = row.unwrap_or(stack.view_height() / 2);
    let epi = stack.epi_horizontal(u, s, channel)?;
    if let Some(path) = output {
        let t = sadn::autodiff::Tensor::from_vec(
            [1, 1, epi.rows(), epi.cols()],
            epi.data().to_vec(),
        )?;
        imageio::save_image(path, &t)?;
    }
    println!("slope={}", estimate_epi_slope(&epi, max_lag)?);
    Ok(())
}
