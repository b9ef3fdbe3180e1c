//! Builds gateways, retrievers and engines from resolved settings.

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};

use factgraph_core::executor::Engine;
use factgraph_core::gateway::{
    Gateway, RemoteConfig, RemoteGateway, ScriptedGateway, ENV_LLM_API_KEY,
};
use factgraph_core::prompts::Prompts;
use factgraph_core::retrieval::{
    CorpusIndex, FixtureProvider, HttpProvider, HttpProviderConfig, Retriever, SearchProvider,
    Strategy, WebRetriever, WebSearchClient, WikiRetriever, ENV_SEARCH_API_KEY, ENV_SEARCH_PROXY,
};

use crate::config::Settings;

pub fn load_prompts(settings: &Settings) -> Result<Arc<Prompts>> {
    let prompts = match &settings.prompts {
        Some(dir) => Prompts::load_dir(dir)
            .with_context(|| format!("cannot read prompts from {}", dir.display()))?,
        None => Prompts::default(),
    };
    Ok(Arc::new(prompts))
}

pub fn scripted_gateway(path: &Path) -> Result<Arc<dyn Gateway>> {
    let g = ScriptedGateway::load(path).map_err(|e| anyhow!("cannot load script: {e}"))?;
    Ok(Arc::new(g))
}

pub fn remote_gateway(settings: &Settings) -> Result<Arc<dyn Gateway>> {
    let (Some(endpoint), Some(model)) = (&settings.llm_endpoint, &settings.llm_model) else {
        bail!("no LLM configured: pass --script, or set --llm-endpoint and --llm-model (or FACTGRAPH_LLM_ENDPOINT and FACTGRAPH_LLM_MODEL)");
    };
    let mut cfg = RemoteConfig::new(endpoint, model);
    cfg.api_key = std::env::var(ENV_LLM_API_KEY).ok();
    Ok(Arc::new(RemoteGateway::new(cfg)?))
}

/// A scripted gateway when `script` is given, the remote service otherwise.
pub fn gateway(settings: &Settings, script: Option<&Path>) -> Result<Arc<dyn Gateway>> {
    match script {
        Some(path) => scripted_gateway(path),
        None => remote_gateway(settings),
    }
}

/// The live retriever for the configured strategy.
pub fn retriever(settings: &Settings) -> Result<Arc<dyn Retriever>> {
    match settings.run.strategy {
        Strategy::Wiki => {
            let Some(corpus) = &settings.corpus else {
                bail!(
                    "{} mode with wiki retrieval requires --corpus PATH",
                    settings.run.mode
                );
            };
            let index = CorpusIndex::build(corpus)
                .with_context(|| format!("cannot index {}", corpus.display()))?;
            Ok(Arc::new(WikiRetriever::new(Arc::new(index))))
        }
        Strategy::Web => {
            let provider: Arc<dyn SearchProvider> = if let Some(dir) = &settings.search_fixtures {
                Arc::new(FixtureProvider::new(dir.clone()))
            } else if let Some(endpoint) = &settings.search_endpoint {
                let mut cfg = HttpProviderConfig::from_env().unwrap_or(HttpProviderConfig {
                    endpoint: endpoint.clone(),
                    api_key: std::env::var(ENV_SEARCH_API_KEY).ok(),
                    proxy: std::env::var(ENV_SEARCH_PROXY).ok(),
                    timeout: std::time::Duration::from_secs(15),
                });
                cfg.endpoint = endpoint.clone();
                Arc::new(
                    HttpProvider::new(cfg)
                        .map_err(|e| anyhow!("cannot build search client: {e}"))?,
                )
            } else {
                bail!("web retrieval requires --search-fixtures DIR or --search-endpoint URL");
            };
            Ok(Arc::new(WebRetriever::new(WebSearchClient::new(provider))))
        }
    }
}

pub fn engine(
    settings: &Settings,
    gateway: Arc<dyn Gateway>,
    retriever: Arc<dyn Retriever>,
    prompts: Arc<Prompts>,
) -> Result<Engine> {
    Ok(
        Engine::new(gateway, retriever, prompts, settings.run.clone())?
            .with_plan_constraints(settings.constraints()),
    )
}
