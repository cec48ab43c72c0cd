//! Launching the action-execution server inside a container.

use std::path::Path;
use std::process::Command;

use super::RuntimeError;

/// Port the execution server listens on inside the container.
pub const CONTAINER_PORT: u16 = 8000;

/// A running sandbox container, removed on drop.
#[derive(Debug)]
pub struct ContainerSandbox {
    engine: String,
    id: String,
    host_port: u16,
}

impl ContainerSandbox {
    /// Starts `image` with `workspace` mounted at `/workspace`.
    pub fn launch(engine: &str, image: &str, workspace: &Path, host_port: u16) -> Result<Self, RuntimeError> {
        let mount = format!("{}:/workspace", workspace.display());
        let port = format!("127.0.0.1:{host_port}:{CONTAINER_PORT}");
        let listen = CONTAINER_PORT.to_string();
        let out = Command::new(engine)
            .args(["run", "-d", "--rm", "-p", &port, "-v", &mount, "-e", "AK_WORKSPACE=/workspace", image])
            .args(["agentkernel", "serve-runtime", "--port", &listen, "--workspace", "/workspace"])
            .output()
            .map_err(|e| RuntimeError::Unavailable(format!("{engine}: {e}")))?;
        if !out.status.success() {
            return Err(RuntimeError::Unavailable(format!(
                "{engine} run failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(ContainerSandbox {
            engine: engine.to_string(),
            id: String::from_utf8_lossy(&out.stdout).trim().to_string(),
            host_port,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.host_port)
    }
}

impl Drop for ContainerSandbox {
    fn drop(&mut self) {
        let _ = Command::new(&self.engine).args(["rm", "-f", &self.id]).output();
    }
}
