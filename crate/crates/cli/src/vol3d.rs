//! `ctreport vol3d info`: report the token geometry of a volume/patch/crop
//! configuration as JSON — grid shapes, crop plans, per-stage token counts,
//! final sequence length, and (optionally) a seeded projector forward
//! fingerprint for reproducibility checks.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use ctreport_core::vol3d::{token_grid_shape, Axis, CropBox, TokenGrid};
use ctreport_core::{
    anyres_plan, anyres_token_budget, mlp_project, spp_project, tokenpacker3d_project, GridShape,
    Kernel3, PatchDims, Vol3dError, VolumeDims,
};

use crate::config::{pick, require, ConfigFile};
use crate::error::{data_err, validation, CliError};
use crate::output::write_payload;

#[derive(Debug, Subcommand)]
pub enum Vol3dCommand {
    /// Print a JSON geometry report for a volume/patch/projector setup.
    Info(Vol3dArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectorKind {
    Mlp,
    Spp,
    Tokenpacker,
}

impl ProjectorKind {
    fn name(self) -> &'static str {
        match self {
            ProjectorKind::Mlp => "mlp",
            ProjectorKind::Spp => "spp",
            ProjectorKind::Tokenpacker => "tokenpacker",
        }
    }

    fn from_setting(value: &str) -> Result<Self, CliError> {
        match value {
            "mlp" => Ok(ProjectorKind::Mlp),
            "spp" => Ok(ProjectorKind::Spp),
            "tokenpacker" => Ok(ProjectorKind::Tokenpacker),
            other => Err(validation(format!(
                "projector: unknown kind '{other}' (expected mlp, spp, or tokenpacker)"
            ))),
        }
    }
}

#[derive(Debug, Args)]
pub struct Vol3dArgs {
    /// Input volume as depth,height,width voxels.
    #[arg(long)]
    pub vol: Option<String>,
    /// Patch size as depth,height,width voxels.
    #[arg(long)]
    pub patch: Option<String>,
    /// Crop size for multi-crop planning (depth,height,width voxels).
    #[arg(long)]
    pub crop: Option<String>,
    /// Resize target for the extra whole-volume view; defaults to the crop
    /// size. Requires --crop.
    #[arg(long)]
    pub global: Option<String>,
    /// Projector applied per view (default mlp, which keeps the count).
    #[arg(long, value_enum)]
    pub projector: Option<ProjectorKind>,
    /// Pooling kernel for the spp projector (default 2,2,2).
    #[arg(long)]
    pub pool: Option<String>,
    /// Downsampling kernel for the tokenpacker projector (default 2,2,2).
    #[arg(long)]
    pub down: Option<String>,
    /// Embedding width for the optional forward fingerprint.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Projector output width (defaults to the embedding width).
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// Seed for the fingerprint's synthetic tokens and weights (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct AnyresReport {
    crop: VolumeDims,
    global_view: VolumeDims,
    crop_count: usize,
    crops: Vec<CropBox>,
    tokens_per_crop_view: usize,
    tokens_global_view: usize,
}

#[derive(Debug, Serialize)]
struct ProjectorReport {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pool: Option<Kernel3>,
    #[serde(skip_serializing_if = "Option::is_none")]
    down: Option<Kernel3>,
    tokens_per_view: usize,
}

#[derive(Debug, Serialize)]
struct ForwardReport {
    tokens: usize,
    dim: usize,
    value_sum: f64,
    first_value: f64,
}

#[derive(Debug, Serialize)]
struct GeometryReport {
    volume: VolumeDims,
    patch: PatchDims,
    vit_grid: GridShape,
    vit_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    anyres: Option<AnyresReport>,
    projector: ProjectorReport,
    sequence_length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    forward: Option<ForwardReport>,
}

/// Renders a divisibility failure as a validation error that names the axis
/// and the nearest sizes that would divide cleanly.
fn divisibility_hint(context: &str, err: Vol3dError) -> CliError {
    match err {
        Vol3dError::NonDivisible {
            axis,
            extent,
            divisor,
        } => {
            let floor = (extent / divisor) * divisor;
            let hint = if floor == 0 {
                format!("nearest valid size is {divisor}")
            } else {
                format!("nearest valid sizes are {floor} and {}", floor + divisor)
            };
            validation(format!(
                "{context}: {axis} extent {extent} is not divisible by {divisor}; {hint}"
            ))
        }
        other => validation(format!("{context}: {other}")),
    }
}

fn parse_setting<T: FromStr<Err = Vol3dError>>(value: &str, flag: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|e: Vol3dError| validation(format!("--{flag}: {e}")))
}

/// Divides a token grid by a kernel, reporting which axis fails and what
/// grid extents would succeed.
fn shrink_grid(grid: GridShape, kernel: Kernel3, context: &str) -> Result<GridShape, CliError> {
    let axes = [
        (grid.depth(), kernel.depth(), Axis::Depth),
        (grid.height(), kernel.height(), Axis::Height),
        (grid.width(), kernel.width(), Axis::Width),
    ];
    let mut out = [0usize; 3];
    for (slot, (extent, divisor, axis)) in out.iter_mut().zip(axes) {
        if extent % divisor != 0 {
            return Err(divisibility_hint(
                context,
                Vol3dError::NonDivisible {
                    axis,
                    extent,
                    divisor,
                },
            ));
        }
        *slot = extent / divisor;
    }
    GridShape::new(out[0], out[1], out[2]).map_err(|e| validation(format!("{context}: {e}")))
}

pub fn run_vol3d(command: Vol3dCommand, config: &ConfigFile) -> Result<(), CliError> {
    let Vol3dCommand::Info(args) = command;
    run_info(args, config)
}

fn run_info(args: Vol3dArgs, config: &ConfigFile) -> Result<(), CliError> {
    let vol_str = require(pick(args.vol, config.vol.clone()), "vol")?;
    let patch_str = require(pick(args.patch, config.patch.clone()), "patch")?;
    let vol: VolumeDims = parse_setting(&vol_str, "vol")?;
    let patch: PatchDims = parse_setting(&patch_str, "patch")?;

    let projector = match pick(
        args.projector.map(|p| p.name().to_string()),
        config.projector.clone(),
    ) {
        Some(name) => ProjectorKind::from_setting(&name)?,
        None => ProjectorKind::Mlp,
    };

    let pool_str = pick(args.pool, config.pool.clone());
    let down_str = pick(args.down, config.down.clone());
    if pool_str.is_some() && projector != ProjectorKind::Spp {
        return Err(validation("--pool only applies to the spp projector"));
    }
    if down_str.is_some() && projector != ProjectorKind::Tokenpacker {
        return Err(validation("--down only applies to the tokenpacker projector"));
    }
    let pool: Option<Kernel3> = match projector {
        ProjectorKind::Spp => Some(parse_setting(
            pool_str.as_deref().unwrap_or("2,2,2"),
            "pool",
        )?),
        _ => None,
    };
    let down: Option<Kernel3> = match projector {
        ProjectorKind::Tokenpacker => Some(parse_setting(
            down_str.as_deref().unwrap_or("2,2,2"),
            "down",
        )?),
        _ => None,
    };

    let crop_str = pick(args.crop, config.crop.clone());
    let global_str = pick(args.global, config.global.clone());
    if global_str.is_some() && crop_str.is_none() {
        return Err(validation("--global requires --crop"));
    }

    let vit_grid =
        token_grid_shape(vol, patch).map_err(|e| divisibility_hint("--vol/--patch", e))?;
    let vit_tokens = vit_grid.count();

    // Per-view geometry: with a crop plan every view is crop-sized (the
    // global view is resized to the same target); otherwise the whole
    // volume is the single view.
    let (anyres, per_view_grid) = match crop_str {
        Some(crop_str) => {
            let crop: VolumeDims = parse_setting(&crop_str, "crop")?;
            let global: VolumeDims = match global_str {
                Some(g) => parse_setting(&g, "global")?,
                None => crop,
            };
            let plan =
                anyres_plan(vol, crop, global).map_err(|e| divisibility_hint("--vol/--crop", e))?;
            let crop_grid = token_grid_shape(crop, patch)
                .map_err(|e| divisibility_hint("--crop/--patch", e))?;
            let global_grid = token_grid_shape(global, patch)
                .map_err(|e| divisibility_hint("--global/--patch", e))?;
            if global_grid != crop_grid {
                return Err(validation(format!(
                    "--global: the global view must produce the same token grid as a crop \
                     (crop grid {},{},{} vs global grid {},{},{})",
                    crop_grid.depth(),
                    crop_grid.height(),
                    crop_grid.width(),
                    global_grid.depth(),
                    global_grid.height(),
                    global_grid.width()
                )));
            }
            let report = AnyresReport {
                crop,
                global_view: plan.global_view(),
                crop_count: plan.crop_count(),
                crops: plan.crops().to_vec(),
                tokens_per_crop_view: crop_grid.count(),
                tokens_global_view: global_grid.count(),
            };
            (Some((plan, report)), crop_grid)
        }
        None => (None, vit_grid),
    };

    let projected_grid = match projector {
        ProjectorKind::Mlp => per_view_grid,
        ProjectorKind::Spp => shrink_grid(
            per_view_grid,
            pool.expect("pool resolved for spp"),
            "--pool",
        )?,
        ProjectorKind::Tokenpacker => shrink_grid(
            per_view_grid,
            down.expect("down resolved for tokenpacker"),
            "--down",
        )?,
    };
    let tokens_per_view = projected_grid.count();

    let sequence_length = match &anyres {
        Some((plan, _)) => anyres_token_budget(plan, tokens_per_view),
        None => tokens_per_view,
    };

    let forward = match (args.embed_dim.or(config.embed_dim), args.out_dim.or(config.out_dim)) {
        (None, Some(_)) => {
            return Err(validation("--out-dim requires --embed-dim"));
        }
        (None, None) => {
            if pick(args.seed, config.seed).is_some() {
                return Err(validation("--seed requires --embed-dim"));
            }
            None
        }
        (Some(embed_dim), out_dim) => {
            let seed = pick(args.seed, config.seed).unwrap_or(0);
            let out_dim = out_dim.unwrap_or(embed_dim);
            let tokens = TokenGrid::seeded(per_view_grid, embed_dim, seed)
                .map_err(|e| data_err("building tokens", e))?;
            let projected = match projector {
                ProjectorKind::Mlp => mlp_project(&tokens, out_dim, seed),
                ProjectorKind::Spp => spp_project(
                    &tokens,
                    pool.expect("pool resolved for spp"),
                    out_dim,
                    seed,
                ),
                ProjectorKind::Tokenpacker => tokenpacker3d_project(
                    &tokens,
                    down.expect("down resolved for tokenpacker"),
                    out_dim,
                    seed,
                ),
            }
            .map_err(|e| data_err("running projector", e))?;
            Some(ForwardReport {
                tokens: projected.count(),
                dim: projected.dim(),
                value_sum: projected.data().sum(),
                first_value: projected.data()[[0, 0]],
            })
        }
    };

    let report = GeometryReport {
        volume: vol,
        patch,
        vit_grid,
        vit_tokens,
        anyres: anyres.map(|(_, report)| report),
        projector: ProjectorReport {
            kind: projector.name(),
            pool,
            down,
            tokens_per_view,
        },
        sequence_length,
        forward,
    };
    let mut payload =
        serde_json::to_string_pretty(&report).map_err(|e| data_err("serializing report", e))?;
    payload.push('\n');
    write_payload(args.out.or(config.out.clone()).as_deref(), payload.as_bytes())
}
