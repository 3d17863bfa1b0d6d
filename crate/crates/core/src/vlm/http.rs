use serde::{Deserialize, Serialize};

use crate::http::{png_base64, HttpEndpoint};
use crate::vlm::{VlmBackend, VlmError, VlmRequest};

/// Wire shape of a vision-chat endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VlmAdapter {
    /// Chat-completions style: `messages[0].content = [text, image_url(data URL)]`,
    /// reply in `choices[0].message.content`.
    #[default]
    OpenaiChat,
    /// `{"model", "prompt", "image_png_base64"}` in, `{"text"}` out.
    SimpleJson,
}

pub struct HttpVlmBackend {
    pub endpoint: HttpEndpoint,
    pub adapter: VlmAdapter,
    client: reqwest::blocking::Client,
}

impl HttpVlmBackend {
    pub fn new(endpoint: HttpEndpoint, adapter: VlmAdapter) -> Result<Self, VlmError> {
        let client = endpoint.client().map_err(|e| VlmError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint,
            adapter,
            client,
        })
    }

    fn body(&self, req: &VlmRequest) -> serde_json::Value {
        let image = png_base64(&req.marked_image);
        match self.adapter {
            VlmAdapter::OpenaiChat => serde_json::json!({
                "model": self.endpoint.model,
                "max_tokens": 200,
                "messages": [{
                    "role": "user",
                    "content": [
                        {"type": "text", "text": req.prompt},
                        {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{image}")}},
                    ],
                }],
            }),
            VlmAdapter::SimpleJson => serde_json::json!({
                "model": self.endpoint.model,
                "prompt": req.prompt,
                "image_png_base64": image,
                "request_id": req.request_id,
            }),
        }
    }

    fn extract(&self, v: &serde_json::Value) -> Option<String> {
        match self.adapter {
            VlmAdapter::OpenaiChat => v
                .pointer("/choices/0/message/content")
                .and_then(|c| c.as_str())
                .map(str::to_string),
            VlmAdapter::SimpleJson => v.get("text").and_then(|c| c.as_str()).map(str::to_string),
        }
    }
}

impl VlmBackend for HttpVlmBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &VlmRequest) -> Result<String, VlmError> {
        let resp = self
            .endpoint
            .post_json(&self.client, &self.body(req))
            .map_err(|e| {
                if e.is_timeout() {
                    VlmError::Timeout(self.endpoint.timeout_s)
                } else {
                    VlmError::Transport(e.to_string())
                }
            })?;
        let v: serde_json::Value = resp.json().map_err(|e| VlmError::Transport(e.to_string()))?;
        self.extract(&v)
            .ok_or_else(|| VlmError::Transport(format!("unexpected reply shape: {v}")))
    }
}
