//! Run settings merged from defaults, an optional `key = value` file and flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use tempovox_core::fusion::DEFAULT_THETA_D;
use tempovox_core::scenario::{
    default_fusion_range, default_intrinsics, FutureMode, ScenarioConfig, DEFAULT_PAST_FRAMES, STANDARD_SPEED,
};
use tempovox_core::synth::{Layout, SceneSpec, TrajectoryKind, TrajectorySpec, DEFAULT_FRAME_INTERVAL};
use tempovox_core::warp::RefinerKind;

use crate::CliError;

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// `key = value` file with defaults for any of these flags (flags win).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// empty, corridor, intersection or random_boxes.
    #[arg(long, global = true)]
    pub layout: Option<String>,
    /// straight, constant_turn or piecewise.
    #[arg(long, global = true)]
    pub trajectory: Option<String>,
    /// Meters per frame.
    #[arg(long, global = true)]
    pub speed: Option<f64>,
    /// Yaw radians per frame.
    #[arg(long, global = true)]
    pub turn_rate: Option<f64>,
    /// Class count including empty.
    #[arg(long, global = true)]
    pub classes: Option<usize>,
    #[arg(long, global = true)]
    pub voxel_size: Option<f64>,
    /// Raw frames written by `synth`.
    #[arg(long, global = true)]
    pub frames: Option<usize>,
    /// Frame interval between used frames.
    #[arg(long, global = true)]
    pub interval: Option<i64>,
    /// Visibility band half-width in meters.
    #[arg(long, global = true)]
    pub theta_d: Option<f64>,
    /// Past frames before the current one.
    #[arg(long, global = true)]
    pub past: Option<usize>,
    #[arg(long, global = true, value_parser = ["none", "pseudo", "gt"])]
    pub future: Option<String>,
    #[arg(long, global = true, value_parser = ["identity", "fill"])]
    pub refiner: Option<String>,
    /// Momentum window in steps; defaults to min(past, 3).
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub layout: Layout,
    pub trajectory: TrajectoryKind,
    pub speed: f64,
    pub turn_rate: f64,
    pub classes: usize,
    pub voxel_size: f64,
    pub frames: Option<usize>,
    pub interval: i64,
    pub theta_d: f64,
    pub past: usize,
    pub future: FutureMode,
    pub refiner: RefinerKind,
    pub window: Option<usize>,
    pub out_dir: PathBuf,
}

const KEYS: [&str; 15] = [
    "seed",
    "layout",
    "trajectory",
    "speed",
    "turn_rate",
    "classes",
    "voxel_size",
    "frames",
    "interval",
    "theta_d",
    "past",
    "future",
    "refiner",
    "window",
    "out_dir",
];

fn read_config(path: &Path) -> Result<BTreeMap<String, (usize, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| tempovox_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::config(format!("{}: line {}: {msg}", path.display(), i + 1));
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key = value, found {line:?}")))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(bad(format!("unknown key {key:?}")));
        }
        map.insert(key, (i + 1, v.trim().to_string()));
    }
    Ok(map)
}

struct Resolver {
    file: BTreeMap<String, (usize, String)>,
    path: PathBuf,
}

impl Resolver {
    fn file_value<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.file
            .get(key)
            .map(|(line, raw)| {
                raw.parse().map_err(|e| {
                    CliError::config(format!(
                        "{}: line {line}: invalid {key} {raw:?}: {e}",
                        self.path.display()
                    ))
                })
            })
            .transpose()
    }

    fn get<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get_opt(flag, key)?.unwrap_or(default))
    }

    fn get_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file_value(key),
        }
    }

    fn parsed<T>(&self, flag: Option<String>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr<Err = tempovox_core::Error>,
    {
        match flag {
            Some(f) => Ok(f.parse()?),
            None => Ok(self.file_value(key)?.unwrap_or(default)),
        }
    }
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let (file, path) = match &args.config {
            Some(p) => (read_config(p)?, p.clone()),
            None => (BTreeMap::new(), PathBuf::new()),
        };
        let r = Resolver { file, path };
        let s = Settings {
            seed: r.get(args.seed, "seed", 0)?,
            layout: r.parsed(args.layout.clone(), "layout", Layout::Corridor)?,
            trajectory: r.parsed(args.trajectory.clone(), "trajectory", TrajectoryKind::Straight)?,
            speed: r.get(args.speed, "speed", STANDARD_SPEED)?,
            turn_rate: r.get(args.turn_rate, "turn_rate", 0.0)?,
            classes: r.get(args.classes, "classes", SceneSpec::default().classes)?,
            voxel_size: r.get(args.voxel_size, "voxel_size", SceneSpec::default().voxel_size)?,
            frames: r.get_opt(args.frames, "frames")?,
            interval: r.get(args.interval, "interval", DEFAULT_FRAME_INTERVAL)?,
            theta_d: r.get(args.theta_d, "theta_d", DEFAULT_THETA_D)?,
            past: r.get(args.past, "past", DEFAULT_PAST_FRAMES)?,
            future: r.parsed(args.future.clone(), "future", FutureMode::Pseudo)?,
            refiner: r.parsed(args.refiner.clone(), "refiner", RefinerKind::Identity)?,
            window: r.get_opt(args.window, "window")?,
            out_dir: r.get(args.out_dir.clone(), "out_dir", PathBuf::from("out"))?,
        };
        if s.interval <= 0 {
            return Err(CliError::config("interval must be positive"));
        }
        if !(s.theta_d > 0.0 && s.theta_d.is_finite()) {
            return Err(CliError::config("theta_d must be positive"));
        }
        if !(s.voxel_size > 0.0 && s.voxel_size.is_finite()) {
            return Err(CliError::config("voxel_size must be positive"));
        }
        if s.window == Some(0) {
            return Err(CliError::config("window must be positive"));
        }
        if s.classes < 4 || s.classes > 20 {
            return Err(CliError::config("classes must be between 4 and 20"));
        }
        Ok(s)
    }

    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            layout: self.layout,
            classes: self.classes,
            voxel_size: self.voxel_size,
            ..SceneSpec::default()
        }
    }

    /// Raw frames written by `synth`: enough for the past, current and true next frames.
    pub fn raw_frames(&self) -> usize {
        self.frames.unwrap_or((self.past + 1) * self.interval as usize + 1)
    }

    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        Ok(ScenarioConfig {
            scene: self.scene(),
            trajectory: TrajectorySpec {
                kind: self.trajectory,
                speed: self.speed,
                turn_rate: self.turn_rate,
                frames: self.past + 2,
                frame_interval: self.interval,
            },
            past: self.past,
            intrinsics: default_intrinsics(),
            fusion_range: default_fusion_range(self.voxel_size)?,
            theta_d: self.theta_d,
            refiner: self.refiner,
            future: self.future,
            window: self.window,
        })
    }
}
