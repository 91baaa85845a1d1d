//! Outbound captioning and summarization over HTTP.
//!
//! Captioner: `POST <url>` with a WAV body, answering `{"caption": "..."}`.
//! Summarizer: `POST <url>` with `{"model", "instruction", "captions"}`,
//! answering `{"summary": "..."}`. Keys travel as bearer tokens and are read
//! from the environment variable named in the config.

use std::time::Duration;

use cinetrack_core::audio::wav::wav_bytes;
use cinetrack_core::audio::AudioBuffer;
use cinetrack_core::pipeline::ClientConfig;
use cinetrack_core::prompts::{Captioner, DescriptorCaptioner, EchoSummarizer, Summarizer};
use cinetrack_core::{Error, Result};
use reqwest::blocking::{Client, RequestBuilder};
use serde::{Deserialize, Serialize};

struct Endpoint {
    client: Client,
    url: String,
    key: Option<String>,
}

impl Endpoint {
    fn new(url: &str, key_env: Option<&str>, timeout: Duration) -> Result<Self> {
        let key = match key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Client(e.to_string()))?;
        Ok(Self {
            client,
            url: url.to_string(),
            key,
        })
    }

    fn post(&self) -> RequestBuilder {
        let req = self.client.post(&self.url);
        match &self.key {
            Some(k) => req.bearer_auth(k),
            None => req,
        }
    }
}

fn client_err(e: reqwest::Error) -> Error {
    Error::Client(e.to_string())
}

pub struct HttpCaptioner(Endpoint);

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

impl Captioner for HttpCaptioner {
    fn caption(&self, audio: &AudioBuffer) -> Result<String> {
        let resp: CaptionResponse = self
            .0
            .post()
            .header(reqwest::header::CONTENT_TYPE, "audio/wav")
            .body(wav_bytes(audio)?)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(client_err)?;
        Ok(resp.caption)
    }
}

pub struct HttpSummarizer {
    endpoint: Endpoint,
    model: Option<String>,
}

#[derive(Serialize)]
struct SummaryRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    instruction: &'a str,
    captions: &'a [String],
}

#[derive(Deserialize)]
struct SummaryResponse {
    summary: String,
}

impl Summarizer for HttpSummarizer {
    fn summarize(&self, instruction: &str, captions: &[String]) -> Result<String> {
        let resp: SummaryResponse = self
            .endpoint
            .post()
            .json(&SummaryRequest {
                model: self.model.as_deref(),
                instruction,
                captions,
            })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(client_err)?;
        Ok(resp.summary)
    }
}

/// Remote clients where URLs are configured, offline stand-ins otherwise.
pub fn prompt_services(cfg: &ClientConfig) -> Result<(Box<dyn Captioner>, Box<dyn Summarizer>)> {
    let timeout = Duration::from_secs(cfg.timeout_seconds.max(1));
    let captioner: Box<dyn Captioner> = match &cfg.captioner_url {
        Some(url) => Box::new(HttpCaptioner(Endpoint::new(
            url,
            cfg.captioner_key_env.as_deref(),
            timeout,
        )?)),
        None => Box::new(DescriptorCaptioner),
    };
    let summarizer: Box<dyn Summarizer> = match &cfg.summarizer_url {
        Some(url) => Box::new(HttpSummarizer {
            endpoint: Endpoint::new(url, cfg.summarizer_key_env.as_deref(), timeout)?,
            model: cfg.summarizer_model.clone(),
        }),
        None => Box::new(EchoSummarizer::default()),
    };
    Ok((captioner, summarizer))
}
