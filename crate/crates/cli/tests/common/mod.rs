#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use slicefab_server::{serve_on, ServerConfig, ServiceHandle};

/// An in-process service on an ephemeral port, driven by its own runtime.
pub struct Service {
    rt: tokio::runtime::Runtime,
    handle: Option<ServiceHandle>,
    pub url: String,
}

impl Service {
    pub fn start() -> Self {
        let rt = tokio::runtime::Runtime::new().unwrap();
        let handle = rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            serve_on(listener, ServerConfig::default()).await.unwrap()
        });
        let url = handle.url();
        Self {
            rt,
            handle: Some(handle),
            url,
        }
    }

    pub fn cli(&self, args: &[&str]) -> Output {
        cli_at(&self.url, None, args)
    }

    pub fn cli_as(&self, tenant: &str, args: &[&str]) -> Output {
        cli_at(&self.url, Some(tenant), args)
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        if let Some(h) = self.handle.take() {
            let _ = self.rt.block_on(h.shutdown());
        }
    }
}

pub fn cli_at(url: &str, tenant: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slicefab"));
    cmd.env_remove("SLICEFAB_TENANT")
        .env("SLICEFAB_SERVER", url)
        .args(args);
    if let Some(t) = tenant {
        cmd.args(["--tenant", t]);
    }
    cmd.output().unwrap()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

pub fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}
