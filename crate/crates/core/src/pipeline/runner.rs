//! Stream execution: frames in, joint-trajectory CSV out.
//!
//! [`StreamRunner`] holds everything that persists across frames — the
//! model, the correspondence map, the warm-started solver, the integrated
//! state and optional output smoothers — and turns one motion frame into
//! one CSV row. [`run_stream`] wraps it with file handling for the common
//! offline-replay case.
//!
//! CSV layout: `t`, one column per joint (position, rad), one `err_<link>`
//! column per mapped robot link (geodesic orientation error, rad), the
//! number of active velocity-constraint rows, and the wall-clock solve time.
//! Floats are printed with 17 significant digits so replays are comparable
//! bit for bit; only the solve-time column varies between identical runs.

use std::error::Error;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::time::Instant;

use crate::ik::{IkError, IkSolver};
use crate::kinematics::SystemState;
use crate::model::KinematicModel;
use crate::pipeline::config::{load_model_ref, ConfigError, ModelRefError, StreamConfig};
use crate::pipeline::smoother::MinJerkSmoother;
use crate::pipeline::stream::{FrameReader, StreamError};
use crate::retarget::{
    compute_targets, load_correspondence, CorrespondenceMap, MissingLinkPolicy, MotionFrame,
    RetargetError,
};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Model(ModelRefError),
    Stream(StreamError),
    Retarget(RetargetError),
    Ik(IkError),
    /// Frame timestamps must increase strictly.
    StreamOrder { prev: f64, t: f64 },
    Io { context: String, detail: String },
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Model(e) => write!(f, "{e}"),
            RunError::Stream(e) => write!(f, "{e}"),
            RunError::Retarget(e) => write!(f, "retargeting: {e}"),
            RunError::Ik(e) => write!(f, "ik: {e}"),
            RunError::StreamOrder { prev, t } => write!(
                f,
                "stream timestamp went backwards: {t} after {prev}"
            ),
            RunError::Io { context, detail } => write!(f, "i/o ({context}): {detail}"),
        }
    }
}

impl Error for RunError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            RunError::Config(e) => Some(e),
            RunError::Model(e) => Some(e),
            RunError::Stream(e) => Some(e),
            RunError::Retarget(e) => Some(e),
            RunError::Ik(e) => Some(e),
            _ => None,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<ModelRefError> for RunError {
    fn from(e: ModelRefError) -> Self {
        RunError::Model(e)
    }
}

impl From<StreamError> for RunError {
    fn from(e: StreamError) -> Self {
        RunError::Stream(e)
    }
}

impl From<RetargetError> for RunError {
    fn from(e: RetargetError) -> Self {
        RunError::Retarget(e)
    }
}

impl From<IkError> for RunError {
    fn from(e: IkError) -> Self {
        RunError::Ik(e)
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io {
            context: "output".to_string(),
            detail: e.to_string(),
        }
    }
}

/// Aggregate statistics for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    /// Mean geodesic orientation error (rad) over every (frame, link) pair.
    pub mean_geodesic_error: f64,
    pub max_geodesic_error: f64,
    /// Nearest-rank percentiles of the per-frame solve time (s).
    pub p50_solve_time_s: f64,
    pub p99_solve_time_s: f64,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "frames: {}", self.frames)?;
        writeln!(f, "mean_geodesic_error: {}", self.mean_geodesic_error)?;
        writeln!(f, "max_geodesic_error: {}", self.max_geodesic_error)?;
        writeln!(f, "p50_solve_time_s: {}", self.p50_solve_time_s)?;
        write!(f, "p99_solve_time_s: {}", self.p99_solve_time_s)
    }
}

/// Frame-by-frame retargeting engine.
pub struct StreamRunner {
    model: KinematicModel,
    map: CorrespondenceMap,
    policy: MissingLinkPolicy,
    solver: IkSolver,
    state: SystemState,
    /// One smoother per joint when output smoothing is on.
    smoothers: Vec<MinJerkSmoother>,
    nominal_dt: f64,
    last_t: Option<f64>,
    frames: usize,
    error_sum: f64,
    error_count: usize,
    error_max: f64,
    solve_times: Vec<f64>,
}

impl StreamRunner {
    /// Binds the correspondence map to the model and prepares the solver.
    /// The state starts at the model's neutral pose.
    pub fn new(
        model: KinematicModel,
        map: CorrespondenceMap,
        config: &StreamConfig,
    ) -> Result<Self, RunError> {
        config.validate()?;
        map.bind_to_model(&model)?;
        let solver = IkSolver::new(&model, config.ik.clone())?;
        let state = SystemState::neutral(&model);
        let smoothers = if config.smoothing_time > 0.0 {
            (0..model.n_dof())
                .map(|j| MinJerkSmoother::new(config.smoothing_time, state.s[j]))
                .collect()
        } else {
            Vec::new()
        };
        Ok(StreamRunner {
            model,
            map,
            policy: config.missing_link,
            solver,
            state,
            smoothers,
            nominal_dt: 1.0 / config.rate,
            last_t: None,
            frames: 0,
            error_sum: 0.0,
            error_count: 0,
            error_max: 0.0,
            solve_times: Vec::new(),
        })
    }

    pub fn model(&self) -> &KinematicModel {
        &self.model
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn csv_header(&self) -> String {
        let mut header = String::from("t");
        for dof in 0..self.model.n_dof() {
            header.push(',');
            header.push_str(&self.model.dof_joint(dof).name);
        }
        for pair in self.map.pairs() {
            header.push_str(",err_");
            header.push_str(&pair.robot_link);
        }
        header.push_str(",active_constraints,solve_time_s");
        header
    }

    /// Retargets one frame, advances the state and returns the CSV row.
    pub fn process(&mut self, frame: &MotionFrame) -> Result<String, RunError> {
        if let Some(prev) = self.last_t {
            if frame.t <= prev {
                return Err(RunError::StreamOrder { prev, t: frame.t });
            }
        }
        let dt = match self.last_t {
            Some(prev) => frame.t - prev,
            None => self.nominal_dt,
        };
        self.solver.set_dt(dt)?;
        let targets = compute_targets(frame, &self.map, self.policy)?;

        let clock = Instant::now();
        let outcome = self.solver.step(&self.model, &self.state, &targets)?;
        let solve_time = clock.elapsed().as_secs_f64();

        self.state = outcome.next_state;
        self.last_t = Some(frame.t);
        self.frames += 1;
        self.solve_times.push(solve_time);
        for &e in &outcome.diagnostics.link_errors {
            self.error_sum += e;
            self.error_count += 1;
            self.error_max = self.error_max.max(e);
        }

        let mut row = String::with_capacity(32 * (self.model.n_dof() + 4));
        row.push_str(&fmt17(frame.t));
        for dof in 0..self.model.n_dof() {
            let raw = self.state.s[dof];
            let value = match self.smoothers.get_mut(dof) {
                Some(sm) => sm.advance(raw, dt),
                None => raw,
            };
            row.push(',');
            row.push_str(&fmt17(value));
        }
        // Per-link errors in map order; links skipped this frame print NaN.
        let mut cursor = 0;
        for pair in self.map.pairs() {
            let value = if cursor < targets.targets.len()
                && targets.targets[cursor].robot_link == pair.robot_link
            {
                let e = outcome.diagnostics.link_errors[cursor];
                cursor += 1;
                e
            } else {
                f64::NAN
            };
            row.push(',');
            row.push_str(&fmt17(value));
        }
        row.push(',');
        row.push_str(&outcome.diagnostics.active_constraints().to_string());
        row.push(',');
        row.push_str(&fmt17(solve_time));
        Ok(row)
    }

    /// Runs a whole frame sequence, writing the header and one row per
    /// frame. Frames arrive as results so decode errors surface in order.
    pub fn run<I>(&mut self, frames: I, out: &mut dyn Write) -> Result<RunSummary, RunError>
    where
        I: IntoIterator<Item = Result<MotionFrame, StreamError>>,
    {
        writeln!(out, "{}", self.csv_header())?;
        for frame in frames {
            let row = self.process(&frame?)?;
            writeln!(out, "{row}")?;
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        let mut sorted = self.solve_times.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        RunSummary {
            frames: self.frames,
            mean_geodesic_error: if self.error_count == 0 {
                0.0
            } else {
                self.error_sum / self.error_count as f64
            },
            max_geodesic_error: self.error_max,
            p50_solve_time_s: percentile(&sorted, 0.50),
            p99_solve_time_s: percentile(&sorted, 0.99),
        }
    }
}

/// Nearest-rank percentile of an ascending slice; 0 for empty input.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Offline replay: loads the model, correspondence and input stream named
/// by `config`, writes the CSV to `config.output` (standard output when
/// unset) and returns the summary.
pub fn run_stream(config: &StreamConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let model = load_model_ref(&config.model)?;
    let text = fs::read_to_string(&config.correspondence).map_err(|e| RunError::Io {
        context: config.correspondence.clone(),
        detail: e.to_string(),
    })?;
    let map = load_correspondence(&text)?;
    let mut runner = StreamRunner::new(model, map, config)?;

    let input = config.input.as_ref().ok_or_else(|| {
        RunError::Config(ConfigError::BadValue(
            "input stream path required for offline runs".to_string(),
        ))
    })?;
    let file = File::open(input).map_err(|e| RunError::Io {
        context: input.clone(),
        detail: e.to_string(),
    })?;
    let frames = FrameReader::new(BufReader::new(file));

    match &config.output {
        Some(path) => {
            let file = File::create(path).map_err(|e| RunError::Io {
                context: path.clone(),
                detail: e.to_string(),
            })?;
            let mut out = BufWriter::new(file);
            let summary = runner.run(frames, &mut out)?;
            out.flush()?;
            Ok(summary)
        }
        None => {
            let stdout = io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            let summary = runner.run(frames, &mut out)?;
            out.flush()?;
            Ok(summary)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use crate::pipeline::harness::{
        default_sinusoids, generate_synthetic_stream, preset_model, StreamSpec,
    };
    use crate::pipeline::stream::write_stream;
    use crate::retarget::{save_correspondence, CorrespondencePair, LinkMotion};
    use crate::so3::Rotation;
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;
    use std::f64::consts::TAU;

    /// Identity-calibration map over the given robot links.
    fn identity_map(links: &[&str]) -> CorrespondenceMap {
        CorrespondenceMap::new(
            links
                .iter()
                .map(|name| CorrespondencePair {
                    human_link: name.to_string(),
                    robot_link: name.to_string(),
                    calibration: Rotation::identity(),
                    weight: 1.0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn all_link_names(model: &KinematicModel) -> Vec<String> {
        model.links().iter().map(|l| l.name.clone()).collect()
    }

    fn base_config() -> StreamConfig {
        StreamConfig {
            model: "unused".to_string(),
            correspondence: "unused".to_string(),
            ..StreamConfig::default()
        }
    }

    #[test]
    fn header_lists_joints_then_errors() {
        let model = preset_model("arms15", 1.0).unwrap();
        let map = identity_map(&["l_hand", "r_hand"]);
        let runner = StreamRunner::new(model, map, &base_config()).unwrap();
        let header = runner.csv_header();
        assert!(header.starts_with("t,neck_j0,"));
        assert!(header.ends_with("err_l_hand,err_r_hand,active_constraints,solve_time_s"));
        assert_eq!(header.split(',').count(), 1 + 15 + 2 + 2);
    }

    #[test]
    fn empty_stream_writes_header_only() {
        let model = preset_model("dof24", 1.0).unwrap();
        let map = identity_map(&["l_hand"]);
        let mut runner = StreamRunner::new(model, map, &base_config()).unwrap();
        let mut out = Vec::new();
        let summary = runner.run(Vec::new(), &mut out).unwrap();
        assert_eq!(summary.frames, 0);
        assert_eq!(summary.mean_geodesic_error, 0.0);
        assert_eq!(summary.p99_solve_time_s, 0.0);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("t,"));
    }

    #[test]
    fn neutral_pose_stream_has_negligible_error() {
        let model = preset_model("dof24", 1.0).unwrap();
        let poses = forward_kinematics(&model, &SystemState::neutral(&model)).unwrap();
        let links: Vec<String> = all_link_names(&model);
        let mut frames = Vec::new();
        for i in 0..20 {
            let mut frame_links = BTreeMap::new();
            for name in &links {
                let idx = model.link_index(name).unwrap();
                frame_links.insert(
                    name.clone(),
                    LinkMotion {
                        orientation: poses[idx].rotation,
                        angular_velocity: nalgebra::Vector3::zeros(),
                    },
                );
            }
            frames.push(MotionFrame {
                t: i as f64 * 0.005,
                links: frame_links,
            });
        }
        let link_refs: Vec<&str> = links.iter().map(String::as_str).collect();
        let map = identity_map(&link_refs);
        let mut runner = StreamRunner::new(model, map, &base_config()).unwrap();
        let mut out = Vec::new();
        let summary = runner.run(frames.into_iter().map(Ok), &mut out).unwrap();
        assert_eq!(summary.frames, 20);
        assert!(summary.max_geodesic_error < 1e-9);
    }

    #[test]
    fn round_trip_recovers_joint_trajectories() {
        let model = preset_model("dof24", 1.0).unwrap();
        let sines = default_sinusoids(&model, 0.3, 0.8);
        let rate = 200.0;
        let spec = StreamSpec {
            joints: sines.clone(),
            duration: 2.0,
            rate,
            links: Vec::new(), // every link: makes the recovery well posed
        };
        let frames = generate_synthetic_stream(&model, &spec).unwrap();
        let links = all_link_names(&model);
        let link_refs: Vec<&str> = links.iter().map(String::as_str).collect();
        let map = identity_map(&link_refs);
        let mut runner = StreamRunner::new(model.clone(), map, &base_config()).unwrap();

        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for (i, frame) in frames.iter().enumerate() {
            runner.process(frame).unwrap();
            if frame.t < 1.0 {
                continue; // settle-in period
            }
            let t = i as f64 / rate;
            for (dof, sine) in sines.iter().enumerate() {
                let w = TAU * sine.frequency_hz;
                let expected = sine.amplitude * (w * t + sine.phase).sin();
                let got = runner.state().s[dof];
                sq_sum += (got - expected) * (got - expected);
                count += 1;
            }
        }
        let rms = (sq_sum / count as f64).sqrt();
        assert!(rms < 0.02, "joint recovery rms {rms} exceeds 0.02 rad");
    }

    #[test]
    fn timestamp_regression_is_rejected() {
        let model = preset_model("dof24", 1.0).unwrap();
        let poses = forward_kinematics(&model, &SystemState::neutral(&model)).unwrap();
        let idx = model.link_index("l_hand").unwrap();
        let motion = LinkMotion {
            orientation: poses[idx].rotation,
            angular_velocity: nalgebra::Vector3::zeros(),
        };
        let frame_at = |t: f64| MotionFrame {
            t,
            links: BTreeMap::from([("l_hand".to_string(), motion.clone())]),
        };
        let map = identity_map(&["l_hand"]);
        let mut runner = StreamRunner::new(model, map, &base_config()).unwrap();
        runner.process(&frame_at(0.010)).unwrap();
        match runner.process(&frame_at(0.005)) {
            Err(RunError::StreamOrder { prev, t }) => {
                assert_eq!(prev, 0.010);
                assert_eq!(t, 0.005);
            }
            other => panic!("expected StreamOrder, got {other:?}"),
        }
    }

    #[test]
    fn replay_is_bit_identical_except_solve_time() {
        let model = preset_model("arms15", 1.0).unwrap();
        let spec = StreamSpec {
            joints: default_sinusoids(&model, 0.4, 0.9),
            duration: 0.5,
            rate: 100.0,
            links: Vec::new(),
        };
        let frames = generate_synthetic_stream(&model, &spec).unwrap();
        let links = all_link_names(&model);
        let link_refs: Vec<&str> = links.iter().map(String::as_str).collect();

        let mut outputs = Vec::new();
        for _ in 0..2 {
            let map = identity_map(&link_refs);
            let mut runner =
                StreamRunner::new(model.clone(), map, &base_config()).unwrap();
            let mut out = Vec::new();
            runner
                .run(frames.iter().cloned().map(Ok), &mut out)
                .unwrap();
            outputs.push(String::from_utf8(out).unwrap());
        }
        let strip = |text: &str| {
            text.lines()
                .map(|line| {
                    let cut = line.rfind(',').unwrap();
                    line[..cut].to_string()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&outputs[0]), strip(&outputs[1]));
    }

    #[test]
    fn skipped_links_print_nan_under_skip_policy() {
        let model = preset_model("dof24", 1.0).unwrap();
        let poses = forward_kinematics(&model, &SystemState::neutral(&model)).unwrap();
        let head_idx = model.link_index("head").unwrap();
        let frame = MotionFrame {
            t: 0.0,
            links: BTreeMap::from([(
                "head".to_string(),
                LinkMotion {
                    orientation: poses[head_idx].rotation,
                    angular_velocity: nalgebra::Vector3::zeros(),
                },
            )]),
        };
        let map = identity_map(&["head", "l_hand"]);

        let mut strict = StreamRunner::new(
            preset_model("dof24", 1.0).unwrap(),
            identity_map(&["head", "l_hand"]),
            &base_config(),
        )
        .unwrap();
        assert!(matches!(
            strict.process(&frame),
            Err(RunError::Retarget(RetargetError::MissingHumanLink { .. }))
        ));

        let config = StreamConfig {
            missing_link: MissingLinkPolicy::Skip,
            ..base_config()
        };
        let mut skip = StreamRunner::new(model, map, &config).unwrap();
        let row = skip.process(&frame).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        // t + 24 joints + 2 err columns + active + solve_time
        assert_eq!(fields.len(), 1 + 24 + 2 + 2);
        assert_ne!(fields[25], "NaN", "tracked link must have a number");
        assert_eq!(fields[26], "NaN", "skipped link must print NaN");
    }

    #[test]
    fn smoothing_lags_but_converges() {
        let model = preset_model("arms15", 1.0).unwrap();
        // Constant off-neutral target: a step the smoother must chase.
        let spec = StreamSpec {
            joints: vec![
                crate::pipeline::harness::SinusoidSpec {
                    amplitude: 0.6,
                    frequency_hz: 0.0,
                    phase: std::f64::consts::FRAC_PI_2, // sin(π/2) = 1: constant 0.6
                };
                15
            ],
            duration: 1.0,
            rate: 100.0,
            links: Vec::new(),
        };
        let frames = generate_synthetic_stream(&model, &spec).unwrap();
        let links = all_link_names(&model);
        let link_refs: Vec<&str> = links.iter().map(String::as_str).collect();

        let run_with = |smoothing_time: f64| {
            let config = StreamConfig {
                smoothing_time,
                ..base_config()
            };
            let mut runner = StreamRunner::new(
                preset_model("arms15", 1.0).unwrap(),
                identity_map(&link_refs),
                &config,
            )
            .unwrap();
            let mut rows = Vec::new();
            for frame in &frames {
                rows.push(runner.process(frame).unwrap());
            }
            rows
        };
        let plain = run_with(0.0);
        let smoothed = run_with(0.2);
        let joint0 = |rows: &[String], i: usize| -> f64 {
            rows[i].split(',').nth(1).unwrap().parse().unwrap()
        };
        // Early on the smoothed trajectory trails the raw one...
        assert!(joint0(&smoothed, 5).abs() < joint0(&plain, 5).abs());
        // ...but both settle on the commanded 0.6 rad.
        let last = frames.len() - 1;
        assert_relative_eq!(joint0(&plain, last), 0.6, epsilon = 1e-3);
        assert_relative_eq!(joint0(&smoothed, last), 0.6, epsilon = 1e-3);
    }

    #[test]
    fn run_stream_end_to_end_with_files() {
        let dir = tempfile::tempdir().unwrap();
        let model = preset_model("dof24", 1.0).unwrap();
        let spec = StreamSpec {
            joints: default_sinusoids(&model, 0.3, 0.7),
            duration: 0.5,
            rate: 100.0,
            links: Vec::new(),
        };
        let frames = generate_synthetic_stream(&model, &spec).unwrap();
        let stream_path = dir.path().join("human.jsonl");
        let mut f = File::create(&stream_path).unwrap();
        write_stream(&frames, &mut f).unwrap();

        let links = all_link_names(&model);
        let link_refs: Vec<&str> = links.iter().map(String::as_str).collect();
        let corr_path = dir.path().join("map.toml");
        fs::write(&corr_path, save_correspondence(&identity_map(&link_refs))).unwrap();

        let out_path = dir.path().join("run.csv");
        let config = StreamConfig {
            model: "preset:dof24".to_string(),
            correspondence: corr_path.to_str().unwrap().to_string(),
            input: Some(stream_path.to_str().unwrap().to_string()),
            output: Some(out_path.to_str().unwrap().to_string()),
            rate: 100.0,
            ..StreamConfig::default()
        };
        let summary = run_stream(&config).unwrap();
        assert_eq!(summary.frames, 50);
        assert!(summary.mean_geodesic_error < 0.5);
        assert!(summary.p99_solve_time_s > 0.0);

        let text = fs::read_to_string(&out_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 51);
        assert!(lines[0].starts_with("t,"));
        assert_eq!(lines[0].split(',').count(), 1 + 24 + links.len() + 2);
    }

    #[test]
    fn missing_input_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let corr_path = dir.path().join("map.toml");
        fs::write(&corr_path, save_correspondence(&identity_map(&["l_hand"]))).unwrap();
        let config = StreamConfig {
            model: "preset:dof24".to_string(),
            correspondence: corr_path.to_str().unwrap().to_string(),
            input: Some(dir.path().join("absent.jsonl").to_str().unwrap().to_string()),
            ..StreamConfig::default()
        };
        assert!(matches!(run_stream(&config), Err(RunError::Io { .. })));
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let times: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&times, 0.50), 50.0);
        assert_eq!(percentile(&times, 0.99), 99.0);
        assert_eq!(percentile(&times[..3], 0.50), 2.0);
        assert_eq!(percentile(&[], 0.50), 0.0);
    }
}
