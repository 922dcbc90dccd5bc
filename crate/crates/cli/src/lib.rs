//! Scenario runner for the `cqm` command.

pub mod error;
pub mod output;
pub mod scenario;
pub mod tasks;

use std::fs;
use std::path::{Path, PathBuf};

pub use error::CliError;
pub use scenario::{parse_scenario, Scenario, ScenarioFile};
pub use tasks::{Profile, Tolerances};

use output::{Constants, Manifest, OutputDir, TaskEntry, MANIFEST_FORMAT};
use scenario::{Task, TaskBody};
use tasks::{run_task, Context};

pub const DEFAULT_OUT_DIR: &str = "cqm-out";

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub profile: Profile,
    pub k_factor: Option<f64>,
    /// Run only validate tasks, adding one when the scenario has none.
    pub validate_only: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out_dir: None,
            profile: Profile::Grid,
            k_factor: None,
            validate_only: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.manifest.tasks.iter().all(|t| t.pass)
    }

    pub fn failed_checks(&self) -> Vec<String> {
        self.manifest
            .tasks
            .iter()
            .flat_map(|t| {
                t.checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(move |c| format!("{}: {} = {:e} (bound {:e})", t.id, c.name, c.value, c.bound))
            })
            .collect()
    }
}

pub fn load(config: &Path) -> Result<(Vec<u8>, Scenario), CliError> {
    let bytes = fs::read(config).map_err(|source| CliError::Read {
        path: config.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let scenario = parse_scenario(&text)?.build()?;
    Ok((bytes, scenario))
}

/// Execute a scenario file and write its outputs and manifest.
pub fn run(config: &Path, options: &RunOptions) -> Result<RunSummary, CliError> {
    let (bytes, scenario) = load(config)?;
    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| {
            scenario.output_dir.as_ref().map(|d| {
                let base = config.parent().unwrap_or(Path::new("."));
                base.join(d)
            })
        })
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let k = options.k_factor.unwrap_or(scenario.k_factor);
    let tolerances = options.profile.tolerances();
    let tasks: Vec<Task> = if options.validate_only {
        let v: Vec<Task> = scenario
            .tasks
            .iter()
            .filter(|t| matches!(t.body, TaskBody::Validate))
            .cloned()
            .collect();
        if v.is_empty() {
            vec![Task {
                id: "validate".into(),
                tolerance: None,
                body: TaskBody::Validate,
            }]
        } else {
            v
        }
    } else {
        scenario.tasks.clone()
    };

    let out = OutputDir::create(&out_dir)?;
    let ctx = Context {
        scenario: &scenario,
        k,
        tolerances,
    };
    let mut entries = Vec::new();
    for (index, task) in tasks.iter().enumerate() {
        let result = run_task(&ctx, task).map_err(|cause| CliError::Task {
            id: task.id.clone(),
            cause,
        })?;
        let stem = format!("{index:02}_{}", task.id);
        let mut files = vec![out.write_csv(&format!("{stem}.csv"), &result.csv)?];
        for (suffix, bytes) in &result.side_files {
            files.push(out.write(&format!("{stem}_{suffix}"), bytes)?);
        }
        let pass = result.checks.iter().all(|c| c.pass);
        entries.push(TaskEntry {
            id: task.id.clone(),
            kind: task.body.kind().to_string(),
            files,
            checks: result.checks,
            pass,
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT,
        cqm_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: output::sha256_hex(&bytes),
        profile: options.profile,
        tolerances,
        k_factor: k,
        constants: Constants {
            m_over_hbar: scenario.m_over_hbar,
            q_over_hbar: scenario.q_over_hbar,
        },
        tasks: entries,
    };
    out.write_manifest(&manifest)?;
    Ok(RunSummary {
        out_dir: out.root().to_path_buf(),
        manifest,
    })
}
