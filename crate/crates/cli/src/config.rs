//! Run configuration: one TOML file with a section per command. Relative
//! paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssm_bench_core::synthetic::{BoxBumpSpec, SideBumpSpec};

use crate::error::{CliError, CliResult};

pub const DEFAULT_OUT: &str = "ssm-bench-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every RNG-consuming command requires it.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub synth: SynthSection,
    pub evaluate: EvaluateSection,
    pub cluster: ClusterSection,
    pub landmarks: LandmarksSection,
    pub screen: ScreenSection,
    pub classify: ClassifySection,
    pub repro: ReproSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_shapes: usize,
    pub extents: [f64; 3],
    pub face_grid: [usize; 3],
    pub bump_sigma: f64,
    pub bump_height: f64,
    pub bump_travel: f64,
    pub bump_anchor: [f64; 2],
    pub grid_dims: [usize; 3],
    pub grid_margin: f64,
    pub write_volumes: bool,
    /// Also write one side-bump outlier at bump position 0.5.
    pub outlier: bool,
    pub side_center: [f64; 2],
    pub side_sigma: f64,
    pub side_height: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let spec = BoxBumpSpec::default();
        let side = SideBumpSpec::default();
        Self {
            n_shapes: 20,
            extents: spec.extents,
            face_grid: spec.face_grid,
            bump_sigma: spec.bump_sigma,
            bump_height: spec.bump_height,
            bump_travel: spec.bump_travel,
            bump_anchor: spec.bump_anchor,
            grid_dims: spec.grid_dims,
            grid_margin: spec.grid_margin,
            write_volumes: true,
            outlier: true,
            side_center: side.center,
            side_sigma: side.sigma,
            side_height: side.height,
        }
    }
}

impl SynthSection {
    pub fn spec(&self, seed: u64) -> BoxBumpSpec {
        BoxBumpSpec {
            extents: self.extents,
            face_grid: self.face_grid,
            bump_sigma: self.bump_sigma,
            bump_height: self.bump_height,
            bump_travel: self.bump_travel,
            bump_anchor: self.bump_anchor,
            grid_dims: self.grid_dims,
            grid_margin: self.grid_margin,
            seed,
        }
    }

    pub fn side_bump(&self) -> SideBumpSpec {
        SideBumpSpec {
            center: self.side_center,
            sigma: self.side_sigma,
            height: self.side_height,
        }
    }
}

/// A set of point files: every `*.pts` in `dir` (sorted by name) followed by
/// `files` in the given order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSource {
    pub name: String,
    pub dir: Option<PathBuf>,
    pub files: Vec<PathBuf>,
}

impl ShapeSource {
    pub fn is_empty(&self) -> bool {
        self.dir.is_none() && self.files.is_empty()
    }

    pub fn paths(&self) -> CliResult<Vec<PathBuf>> {
        let mut out = Vec::new();
        if let Some(dir) = &self.dir {
            let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pts"))
                .collect();
            found.sort();
            out.extend(found);
        }
        out.extend(self.files.iter().cloned());
        Ok(out)
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(d) = &mut self.dir {
            *d = base.join(&*d);
        }
        self.files.iter_mut().for_each(|f| *f = base.join(&*f));
    }

    fn check_exists(&self, what: &str) -> CliResult<()> {
        if self.is_empty() {
            return Err(CliError::config(format!("{what}: no shapes given (set dir or files)")));
        }
        self.dir.iter().chain(&self.files).try_for_each(|p| exists(p, what))
    }
}

fn exists(p: &Path, what: &str) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what}: path {} does not exist", p.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub models: Vec<ShapeSource>,
    /// Defaults to min(N − 2, 10).
    pub k_max: Option<usize>,
    pub specificity_samples: usize,
    /// Pose handling for leave-one-out reconstruction: none, rigid, similarity.
    pub loo_alignment: String,
    /// Generalized Procrustes alignment of the input before fitting.
    pub procrustes: bool,
    pub rms_per_point: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            k_max: None,
            specificity_samples: 1000,
            loo_alignment: "rigid".into(),
            procrustes: false,
            rms_per_point: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub shapes: ShapeSource,
    pub k_max: usize,
    /// Fixed cluster count; the elbow choice otherwise.
    pub k: Option<usize>,
    pub restarts: usize,
    /// Also select k-medoids representatives.
    pub medoids: bool,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            shapes: ShapeSource::default(),
            k_max: 8,
            k: None,
            restarts: 10,
            medoids: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub correspondences: PathBuf,
    /// Ground-truth landmarks for validation.
    pub landmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandmarksSection {
    /// Defaults to the mean of the training correspondences.
    pub mean_correspondences: Option<PathBuf>,
    /// Defaults to the groupwise average of the training landmarks warped
    /// into mean space.
    pub mean_landmarks: Option<PathBuf>,
    pub training: Vec<SubjectEntry>,
    pub subjects: Vec<SubjectEntry>,
    pub reg: f64,
    /// `tps` warps the mean landmarks; `procrustes` moves them rigidly with
    /// the transform aligning the mean correspondences to the subject.
    pub method: String,
    /// Curves whose fitted-ellipse diameters are measured.
    pub ellipse_curves: Vec<String>,
    pub t_test: bool,
}

impl Default for LandmarksSection {
    fn default() -> Self {
        Self {
            mean_correspondences: None,
            mean_landmarks: None,
            training: Vec::new(),
            subjects: Vec::new(),
            reg: 0.0,
            method: "tps".into(),
            ellipse_curves: Vec::new(),
            t_test: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub points: PathBuf,
    pub volume: PathBuf,
    /// 0 control, 1 pathology; carried into the feature table.
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenSection {
    pub controls: ShapeSource,
    pub samples: Vec<SampleEntry>,
    pub variance_fraction: f64,
    pub n_modes: Option<usize>,
    /// Fixed λ; the automatic rule with `lambda_factor` otherwise.
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    pub beta: f64,
    pub threshold: f64,
    pub tolerance: f64,
    pub max_iters: usize,
    pub align: bool,
}

impl Default for ScreenSection {
    fn default() -> Self {
        Self {
            controls: ShapeSource::default(),
            samples: Vec::new(),
            variance_fraction: 0.97,
            n_modes: None,
            lambda: None,
            lambda_factor: 0.1,
            beta: ssm_bench_core::screening::DEFAULT_BETA,
            threshold: ssm_bench_core::screening::DEFAULT_THRESHOLD,
            tolerance: 1e-6,
            max_iters: 10_000,
            align: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    /// Feature table as written by `screen` (sample,label,o_0,...).
    pub features: Option<PathBuf>,
    pub name: String,
    pub n_repeats: usize,
    pub test_fraction: f64,
    pub folds: usize,
    pub epochs: usize,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            features: None,
            name: "offsets".into(),
            n_repeats: 10,
            test_fraction: 0.3,
            folds: 3,
            epochs: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproSection {
    pub n_shapes: usize,
    pub specificity_samples: usize,
    pub clusters: usize,
    pub per_cluster: usize,
    pub n_controls: usize,
    pub n_lesions: usize,
    pub lambda: f64,
    pub n_repeats: usize,
}

impl Default for ReproSection {
    fn default() -> Self {
        Self {
            n_shapes: 20,
            specificity_samples: 200,
            clusters: 4,
            per_cluster: 10,
            n_controls: 20,
            n_lesions: 20,
            lambda: 0.5,
            n_repeats: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Evaluate,
    Cluster,
    InferLandmarks,
    Screen,
    Classify,
    Repro,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Evaluate => "evaluate",
            Command::Cluster => "cluster",
            Command::InferLandmarks => "infer-landmarks",
            Command::Screen => "screen",
            Command::Classify => "classify",
            Command::Repro => "repro",
        }
    }

    pub fn uses_rng(self) -> bool {
        !matches!(self, Command::InferLandmarks | Command::Screen)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(o) = &mut self.out {
            *o = base.join(&*o);
        }
        self.evaluate.models.iter_mut().for_each(|m| m.resolve(base));
        self.cluster.shapes.resolve(base);
        let lm = &mut self.landmarks;
        for p in lm.mean_correspondences.iter_mut().chain(lm.mean_landmarks.iter_mut()) {
            *p = base.join(&*p);
        }
        for s in lm.training.iter_mut().chain(lm.subjects.iter_mut()) {
            s.correspondences = base.join(&s.correspondences);
            if let Some(l) = &mut s.landmarks {
                *l = base.join(&*l);
            }
        }
        self.screen.controls.resolve(base);
        for s in &mut self.screen.samples {
            s.points = base.join(&s.points);
            s.volume = base.join(&s.volume);
        }
        if let Some(f) = &mut self.classify.features {
            *f = base.join(&*f);
        }
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.out = out;
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Root seed for a command, failing when the command needs one and
    /// none was given.
    pub fn root_seed(&self, cmd: Command) -> CliResult<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None if cmd.uses_rng() => Err(CliError::config(format!(
                "command '{}' requires an explicit seed (config key 'seed' or --seed)",
                cmd.name()
            ))),
            None => Ok(0),
        }
    }

    /// Checks the section used by `cmd`, including that referenced paths
    /// exist.
    pub fn validate(&self, cmd: Command) -> CliResult<()> {
        self.root_seed(cmd)?;
        match cmd {
            Command::Synth => {
                if self.synth.n_shapes < 2 {
                    return Err(CliError::config("synth.n_shapes must be at least 2"));
                }
                self.synth
                    .spec(0)
                    .validate()
                    .map_err(|e| CliError::config(format!("synth: {e}")))?;
            }
            Command::Evaluate => {
                let e = &self.evaluate;
                if e.models.is_empty() {
                    return Err(CliError::config("evaluate: no [[evaluate.models]] given"));
                }
                for (i, m) in e.models.iter().enumerate() {
                    if m.name.is_empty() {
                        return Err(CliError::config(format!("evaluate.models[{i}] needs a name")));
                    }
                    m.check_exists(&format!("evaluate model '{}'", m.name))?;
                }
                if e.specificity_samples == 0 {
                    return Err(CliError::config("evaluate.specificity_samples must be positive"));
                }
                parse_loo(&e.loo_alignment)?;
            }
            Command::Cluster => {
                self.cluster.shapes.check_exists("cluster.shapes")?;
                if self.cluster.k_max < 2 || self.cluster.restarts == 0 {
                    return Err(CliError::config("cluster.k_max must be >= 2 and restarts positive"));
                }
            }
            Command::InferLandmarks => {
                let l = &self.landmarks;
                if l.subjects.is_empty() {
                    return Err(CliError::config("landmarks: no subjects given"));
                }
                if l.mean_landmarks.is_none() && l.training.is_empty() {
                    return Err(CliError::config("landmarks: give mean_landmarks or training subjects"));
                }
                if l.mean_correspondences.is_none() && l.training.is_empty() {
                    return Err(CliError::config(
                        "landmarks: give mean_correspondences or training subjects",
                    ));
                }
                for p in l.mean_correspondences.iter().chain(&l.mean_landmarks) {
                    exists(p, "landmarks")?;
                }
                for s in l.training.iter().chain(&l.subjects) {
                    exists(&s.correspondences, &format!("landmarks subject '{}'", s.id))?;
                    if let Some(p) = &s.landmarks {
                        exists(p, &format!("landmarks subject '{}'", s.id))?;
                    }
                }
                if l.method != "tps" && l.method != "procrustes" {
                    return Err(CliError::config(format!(
                        "landmarks.method '{}' is not tps or procrustes",
                        l.method
                    )));
                }
                if !(l.reg >= 0.0) {
                    return Err(CliError::config("landmarks.reg must be >= 0"));
                }
                if l.training.iter().any(|s| s.landmarks.is_none()) && l.mean_landmarks.is_none() {
                    return Err(CliError::config("landmarks: training subjects need landmark files"));
                }
            }
            Command::Screen => {
                let s = &self.screen;
                s.controls.check_exists("screen.controls")?;
                if s.samples.is_empty() {
                    return Err(CliError::config("screen: no samples given"));
                }
                for e in &s.samples {
                    exists(&e.points, &format!("screen sample '{}'", e.id))?;
                    exists(&e.volume, &format!("screen sample '{}'", e.id))?;
                    if e.label.is_some_and(|l| l > 1) {
                        return Err(CliError::config(format!(
                            "screen sample '{}': label must be 0 or 1",
                            e.id
                        )));
                    }
                }
                if !(s.variance_fraction > 0.0 && s.variance_fraction <= 1.0) {
                    return Err(CliError::config("screen.variance_fraction must lie in (0, 1]"));
                }
            }
            Command::Classify => {
                let c = &self.classify;
                let f = c
                    .features
                    .as_ref()
                    .ok_or_else(|| CliError::config("classify.features is required"))?;
                exists(f, "classify.features")?;
                if c.n_repeats == 0 || c.folds < 2 || c.epochs == 0 {
                    return Err(CliError::config(
                        "classify: n_repeats, epochs must be positive and folds >= 2",
                    ));
                }
                if !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
                    return Err(CliError::config("classify.test_fraction must lie in (0, 1)"));
                }
            }
            Command::Repro => {
                let r = &self.repro;
                self.synth
                    .spec(0)
                    .validate()
                    .map_err(|e| CliError::config(format!("synth: {e}")))?;
                if r.n_shapes < 4 || r.n_controls < 5 || r.n_lesions < 5 || r.per_cluster < 2 {
                    return Err(CliError::config(
                        "repro needs n_shapes >= 4, n_controls and n_lesions >= 5, per_cluster >= 2",
                    ));
                }
                if !(2..=4).contains(&r.clusters) {
                    return Err(CliError::config("repro.clusters must be 2, 3 or 4"));
                }
                if !(r.lambda >= 0.0) || r.n_repeats == 0 || r.specificity_samples == 0 {
                    return Err(CliError::config(
                        "repro: lambda >= 0, n_repeats and specificity_samples > 0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_loo(s: &str) -> CliResult<ssm_bench_core::metrics::LooAlignment> {
    use ssm_bench_core::metrics::LooAlignment;
    match s {
        "none" => Ok(LooAlignment::None),
        "rigid" => Ok(LooAlignment::Rigid),
        "similarity" => Ok(LooAlignment::Similarity),
        _ => Err(CliError::config(format!(
            "unknown loo_alignment '{s}' (none, rigid, similarity)"
        ))),
    }
}
