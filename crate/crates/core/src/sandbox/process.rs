use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

use super::trace::Tracer;
use super::{judge_output, BlockTraceReport, ExecStatus, ExecutionOutcome, Sandbox};
use crate::error::SandboxError;
use crate::problem::{IoMode, ProblemSpec, TestCase};

const RUNNER: &str = include_str!("runner.py");
const COMPILE_ERROR_EXIT: i32 = 113;
const OUTPUT_CAP: usize = 1 << 20;
const POLL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone)]
pub struct SandboxConfig {
    pub python: PathBuf,
    /// Address-space limit per test process.
    pub memory_limit_bytes: u64,
    /// Tests of one program executed concurrently.
    pub workers: usize,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        Self {
            python: PathBuf::from("python3"),
            memory_limit_bytes: 512 * 1024 * 1024,
            workers: thread::available_parallelism().map_or(1, |n| n.get().min(4)),
        }
    }
}

/// Subprocess sandbox for Python candidate programs.
pub struct ProcessSandbox {
    config: SandboxConfig,
    tracer: Option<Arc<dyn Tracer>>,
}

impl ProcessSandbox {
    pub fn new(config: SandboxConfig) -> Self {
        Self { config, tracer: None }
    }

    pub fn with_tracer(mut self, tracer: Arc<dyn Tracer>) -> Self {
        self.tracer = Some(tracer);
        self
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    fn run_one(
        &self,
        program: &str,
        test: &TestCase,
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<ExecutionOutcome, SandboxError> {
        let dir = tempfile::Builder::new().prefix("tsbox-").tempdir()?;
        let program_path = dir.path().join("program.py");
        let runner_path = dir.path().join("runner.py");
        let result_path = dir.path().join("result.json");
        let config_path = dir.path().join("config.json");
        std::fs::write(&program_path, program)?;
        std::fs::write(&runner_path, RUNNER)?;
        let io_mode = match problem.io_mode {
            IoMode::StdinStdout => "stdin_stdout",
            IoMode::Functional => "functional",
        };
        let cfg = json!({
            "program": program_path,
            "io_mode": io_mode,
            "entry_point": problem.entry_point,
            "expected": test.expected_output,
            "result": result_path,
        });
        std::fs::write(&config_path, serde_json::to_vec(&cfg).expect("static json"))?;

        let mut cmd = Command::new(&self.config.python);
        cmd.arg("-I").arg(&runner_path).arg(&config_path);
        hermetic(&mut cmd, dir.path(), self.config.memory_limit_bytes, timeout);
        let limit = Duration::from_secs_f64(timeout);
        let run = run_child(cmd, test.input.as_bytes(), limit)?;

        let duration = run.duration.as_secs_f64();
        if run.timed_out {
            return Ok(ExecutionOutcome {
                status: ExecStatus::Timeout,
                stdout: run.stdout,
                stderr: run.stderr,
                duration,
            });
        }
        let status = match run.status.and_then(|s| s.code()) {
            Some(0) => None,
            Some(COMPILE_ERROR_EXIT) => Some(ExecStatus::CompileError),
            _ => Some(ExecStatus::RuntimeError),
        };
        if let Some(status) = status {
            return Ok(ExecutionOutcome { status, stdout: run.stdout, stderr: run.stderr, duration });
        }
        match problem.io_mode {
            IoMode::StdinStdout => {
                let status = if judge_output(&run.stdout, &test.expected_output) {
                    ExecStatus::Ok
                } else {
                    ExecStatus::WrongOutput
                };
                Ok(ExecutionOutcome { status, stdout: run.stdout, stderr: run.stderr, duration })
            }
            IoMode::Functional => {
                let parsed =
                    std::fs::read(&result_path).ok().and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok());
                let Some(result) = parsed else {
                    return Ok(ExecutionOutcome {
                        status: ExecStatus::RuntimeError,
                        stdout: run.stdout,
                        stderr: format!("{}no return value recorded", run.stderr),
                        duration,
                    });
                };
                let actual = result["actual"].as_str().unwrap_or_default().to_string();
                let expected = result["expected"].as_str().unwrap_or_default();
                let status = if judge_output(&actual, expected) { ExecStatus::Ok } else { ExecStatus::WrongOutput };
                Ok(ExecutionOutcome { status, stdout: actual, stderr: run.stderr, duration })
            }
        }
    }
}

impl Default for ProcessSandbox {
    fn default() -> Self {
        Self::new(SandboxConfig::default())
    }
}

impl Sandbox for ProcessSandbox {
    fn execute_tests(
        &self,
        program: &str,
        tests: &[TestCase],
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<Vec<ExecutionOutcome>, SandboxError> {
        if program.trim().is_empty() {
            return Err(SandboxError::EmptyProgram);
        }
        let workers = self.config.workers.clamp(1, tests.len().max(1));
        if workers == 1 {
            return tests.iter().map(|t| self.run_one(program, t, problem, timeout)).collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<ExecutionOutcome, SandboxError>>> = (0..tests.len()).map(|_| None).collect();
        let done: Vec<Vec<(usize, Result<ExecutionOutcome, SandboxError>)>> = thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut local = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= tests.len() {
                                break;
                            }
                            local.push((i, self.run_one(program, &tests[i], problem, timeout)));
                        }
                        local
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sandbox worker panicked")).collect()
        });
        for (i, r) in done.into_iter().flatten() {
            slots[i] = Some(r);
        }
        slots.into_iter().map(|r| r.expect("every test executed")).collect()
    }

    fn execute_traced(
        &self,
        program: &str,
        test: &TestCase,
        problem: &ProblemSpec,
        timeout: f64,
    ) -> Result<BlockTraceReport, SandboxError> {
        match &self.tracer {
            Some(tracer) => tracer.trace(program, test, problem, timeout),
            None => Err(SandboxError::TraceHarness("no trace harness configured".into())),
        }
    }
}

pub(crate) struct ChildRun {
    pub status: Option<ExitStatus>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub duration: Duration,
}

/// Fixed environment allowlist, fresh working directory, own process group
/// and rlimits.
pub(crate) fn hermetic(cmd: &mut Command, dir: &Path, memory_limit: u64, timeout: f64) {
    let path = std::env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into());
    cmd.env_clear()
        .env("PATH", path)
        .env("HOME", dir)
        .env("LANG", "C.UTF-8")
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONIOENCODING", "utf-8")
        .current_dir(dir);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        let cpu_secs = timeout.ceil() as u64 + 1;
        // SAFETY: only async-signal-safe libc calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                libc::setsid();
                let set = |res, soft: u64| {
                    let lim = libc::rlimit { rlim_cur: soft as libc::rlim_t, rlim_max: soft as libc::rlim_t };
                    libc::setrlimit(res, &lim);
                };
                set(libc::RLIMIT_AS, memory_limit);
                set(libc::RLIMIT_CPU, cpu_secs);
                set(libc::RLIMIT_FSIZE, 64 * 1024 * 1024);
                set(libc::RLIMIT_CORE, 0);
                Ok(())
            });
        }
    }
}

fn kill_group(child: &mut Child) {
    #[cfg(unix)]
    // SAFETY: plain syscall on the child's process group (setsid made pgid == pid).
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

fn capture<R: Read + Send + 'static>(reader: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(r) = reader {
            let _ = r.take(OUTPUT_CAP as u64).read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Spawns `cmd`, feeds `stdin`, and kills the whole process group once `limit` elapses.
pub(crate) fn run_child(mut cmd: Command, stdin: &[u8], limit: Duration) -> std::io::Result<ChildRun> {
    cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let input = stdin.to_vec();
    let mut pipe = child.stdin.take();
    let writer = thread::spawn(move || {
        if let Some(p) = pipe.as_mut() {
            let _ = p.write_all(&input);
        }
    });
    let out = capture(child.stdout.take());
    let err = capture(child.stderr.take());

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= limit {
            timed_out = true;
            kill_group(&mut child);
            let _ = child.wait();
            break None;
        }
        thread::sleep(POLL);
    };
    let duration = start.elapsed();
    // Orphans sharing the pipes must not keep the readers alive.
    kill_group(&mut child);
    let _ = writer.join();
    Ok(ChildRun {
        status,
        timed_out,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        duration,
    })
}
