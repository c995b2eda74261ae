//! `code_interpreter`: pipe a snippet into an external executor under a
//! wall-clock limit.

use std::io::Write;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::ToolError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeOutcome {
    Passed,
    Failed(Option<i32>),
    TimedOut,
}

/// Counting semaphore over sandbox slots.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct CodeInterpreter {
    program: PathBuf,
    args: Vec<String>,
    timeout: Duration,
    slots: Slots,
}

fn resolve_program(program: &str) -> Option<PathBuf> {
    if program.contains('/') {
        let p = Path::new(program);
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|p| p.is_file())
    })
}

impl CodeInterpreter {
    /// `command` is the executor and its arguments; the snippet arrives on
    /// stdin. Fails if the executor cannot be found.
    pub fn new(command: &[String], timeout: Duration, parallelism: usize) -> Result<Self, ToolError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ToolError::Config("code executor command is empty".into()))?;
        let resolved = resolve_program(program)
            .ok_or_else(|| ToolError::Config(format!("code executor `{program}` not found")))?;
        if parallelism == 0 {
            return Err(ToolError::Config("code_parallelism must be at least 1".into()));
        }
        Ok(CodeInterpreter {
            program: resolved,
            args: args.to_vec(),
            timeout,
            slots: Slots {
                free: Mutex::new(parallelism),
                cv: Condvar::new(),
            },
        })
    }

    pub fn run(&self, code: &str) -> Result<CodeOutcome, ToolError> {
        let _slot = self.slots.acquire();
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .process_group(0)
            .spawn()
            .map_err(|e| ToolError::Exec(format!("failed to start executor: {e}")))?;
        let mut stdin = child.stdin.take().expect("stdin piped");
        let code = code.to_string();
        let writer = thread::spawn(move || {
            // Executors that exit early close the pipe; that is not our error.
            let _ = stdin.write_all(code.as_bytes());
        });
        let status = child
            .wait_timeout(self.timeout)
            .map_err(|e| ToolError::Exec(e.to_string()))?;
        let outcome = match status {
            Some(s) if s.success() => CodeOutcome::Passed,
            Some(s) => CodeOutcome::Failed(s.code()),
            None => {
                // Kill the whole process group so grandchildren die too.
                unsafe {
                    libc::kill(-(child.id() as i32), libc::SIGKILL);
                }
                let _ = child.wait();
                CodeOutcome::TimedOut
            }
        };
        let _ = writer.join();
        Ok(outcome)
    }
}
