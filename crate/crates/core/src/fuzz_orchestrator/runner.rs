//! Launching target processes with a coverage region and sampler attached.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::config::TargetConfig;
use super::oracle::{ExitState, TargetRun};
use crate::coverage_attribution::{CounterRegion, KnownSet, SampleMode, SampleReport, Sampler};

/// Sampling requested for one run of a coverage-capable target.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    pub mode: SampleMode,
    pub known: KnownSet,
}

#[derive(Debug)]
pub struct RunResult {
    pub run: TargetRun,
    pub sample: Option<SampleReport>,
    pub workdir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
#[error("target {target}: {message}")]
pub struct LaunchError {
    pub target: String,
    pub message: String,
}

/// Runs `cfg` once against a repository. Output and logs go to `workdir`.
pub fn run_target(
    cfg: &TargetConfig,
    repo: &Path,
    tal: &Path,
    workdir: &Path,
    plan: Option<SamplePlan>,
) -> Result<RunResult, LaunchError> {
    let fail = |message: String| LaunchError { target: cfg.name.clone(), message };
    std::fs::create_dir_all(workdir).map_err(|e| fail(format!("{}: {e}", workdir.display())))?;
    // The target runs inside its working directory.
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| fail(format!("{}: {e}", p.display())));
    let (repo, tal, workdir) = (&abs(repo)?, &abs(tal)?, &abs(workdir)?);
    let output = workdir.join(&cfg.output_file);
    let _ = std::fs::remove_file(&output);
    let stdout_path = workdir.join("stdout.log");
    let stderr_path = workdir.join("stderr.log");
    let open = |p: &Path| std::fs::File::create(p).map_err(|e| fail(format!("{}: {e}", p.display())));

    let mut cmd = Command::new(&cfg.binary);
    cmd.args(cfg.command_args(repo, tal, &output, workdir))
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(open(&stdout_path)?)
        .stderr(open(&stderr_path)?);

    let region = match (&plan, cfg.coverage) {
        (Some(_), true) => {
            let r = CounterRegion::create(cfg.shm_transport, cfg.bitmap_size, workdir)
                .map_err(|e| fail(format!("coverage region: {e}")))?;
            cmd.env(&cfg.shm_env_var, r.env_value());
            Some(Arc::new(r))
        }
        _ => {
            cmd.env_remove(&cfg.shm_env_var);
            None
        }
    };
    let sampler = match (region, plan) {
        (Some(r), Some(p)) => Some(Sampler::spawn(r.clone(), cfg.bitmap_size, p.mode, p.known)),
        _ => None,
    };

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| fail(format!("launch {}: {e}", cfg.binary.display())))?;
    let pid = child.id() as libc::pid_t;
    let (done_tx, done_rx) = mpsc::channel::<()>();
    let timeout = Duration::from_secs_f64(cfg.timeout_secs);
    let watchdog = std::thread::spawn(move || {
        if done_rx.recv_timeout(timeout) == Err(mpsc::RecvTimeoutError::Timeout) {
            // SAFETY: signalling our own child, which has not been reaped yet.
            unsafe { libc::kill(pid, libc::SIGKILL) };
            return true;
        }
        false
    });
    let status = child.wait().map_err(|e| fail(format!("wait: {e}")));
    let runtime_secs = start.elapsed().as_secs_f64();
    let _ = done_tx.send(());
    let timed_out = watchdog.join().unwrap_or(false);
    let sample = sampler.map(Sampler::finish);
    let status = status?;

    let exit = if timed_out {
        ExitState::TimedOut
    } else {
        use std::os::unix::process::ExitStatusExt;
        match (status.code(), status.signal()) {
            (Some(c), _) => ExitState::Code(c),
            (None, Some(s)) => ExitState::Signal(s),
            (None, None) => ExitState::Code(-1),
        }
    };
    let read = |p: &Path| std::fs::read(p).map(|b| String::from_utf8_lossy(&b).into_owned());
    let log = format!("{}{}", read(&stdout_path).unwrap_or_default(), read(&stderr_path).unwrap_or_default());
    let run = TargetRun { target: cfg.name.clone(), exit, runtime_secs, output: read(&output).ok(), log };
    Ok(RunResult { run, sample, workdir: workdir.to_path_buf() })
}

/// Runs every target concurrently against the same repository and waits
/// for all of them. `plans[i]` belongs to `cfgs[i]`.
pub fn run_all(
    cfgs: &[TargetConfig],
    repo: &Path,
    tal: &Path,
    workdir: &Path,
    plans: Vec<Option<SamplePlan>>,
) -> Result<Vec<RunResult>, LaunchError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .zip(plans)
            .map(|(cfg, plan)| {
                let dir = workdir.join(&cfg.name);
                s.spawn(move || run_target(cfg, repo, tal, &dir, plan))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("runner thread panicked")).collect()
    })
}
