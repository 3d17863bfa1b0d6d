//! Shared plumbing for remote model endpoints.

use std::io::Cursor;
use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEndpoint {
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    15.0
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: String::new(),
            token_env: None,
            timeout_s: default_timeout(),
        }
    }

    pub fn token(&self) -> Option<String> {
        self.token_env.as_ref().and_then(|k| std::env::var(k).ok())
    }

    pub fn client(&self) -> reqwest::Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(self.timeout_s))
            .build()
    }

    pub fn post_json(
        &self,
        client: &reqwest::blocking::Client,
        body: &serde_json::Value,
    ) -> reqwest::Result<reqwest::blocking::Response> {
        let mut req = client.post(&self.url).json(body);
        if let Some(tok) = self.token() {
            req = req.bearer_auth(tok);
        }
        req.send()?.error_for_status()
    }
}

pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

pub fn png_base64(img: &RgbImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(png_bytes(img))
}
