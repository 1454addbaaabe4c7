//! Plain-text checkpoints: a header, the embedded run config and one
//! parameter per line.

use std::fs;
use std::path::Path;

use super::net::PolicyNet;
use crate::config::RunConfig;
use crate::error::AgentError;
use crate::tasks::TaskKind;

const MAGIC: &str = "thrustsim-checkpoint 1";
const CONFIG_MARK: &str = "--- config";
const PARAMS_MARK: &str = "--- params";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub net: PolicyNet,
    pub epoch: usize,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(config: RunConfig, net: PolicyNet, epoch: usize) -> Self {
        let config_hash = config.hash();
        Self {
            config,
            net,
            epoch,
            config_hash,
        }
    }

    pub fn task(&self) -> TaskKind {
        self.config.task.kind
    }

    pub fn to_text(&self) -> String {
        let net = &self.net;
        let hidden: Vec<String> = net.hidden().iter().map(|h| h.to_string()).collect();
        let mut s = String::with_capacity(net.num_params() * 24 + 4096);
        s.push_str(MAGIC);
        s.push('\n');
        s.push_str(&format!("config_hash={}\n", self.config_hash));
        s.push_str(&format!("task={}\n", self.task()));
        s.push_str(&format!("obs_dim={}\n", net.obs_dim()));
        s.push_str(&format!("n_heads={}\n", net.n_heads()));
        s.push_str(&format!("hidden={}\n", hidden.join(",")));
        s.push_str(&format!("epoch={}\n", self.epoch));
        s.push_str(&format!("n_params={}\n", net.num_params()));
        s.push_str(CONFIG_MARK);
        s.push('\n');
        s.push_str(&self.config.resolved().to_toml());
        if !s.ends_with('\n') {
            s.push('\n');
        }
        s.push_str(PARAMS_MARK);
        s.push('\n');
        for p in net.params() {
            s.push_str(&p.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, AgentError> {
        let bad = |m: String| AgentError::Checkpoint(m);
        let (head, rest) = text
            .split_once(&format!("{CONFIG_MARK}\n"))
            .ok_or_else(|| bad("missing config section".into()))?;
        let (toml_text, params_text) = rest
            .split_once(&format!("{PARAMS_MARK}\n"))
            .ok_or_else(|| bad("missing params section".into()))?;
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let mut field = std::collections::HashMap::new();
        for l in lines {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
            field.insert(k, v);
        }
        let get = |k: &str| field.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
        let num = |k: &str| -> Result<usize, AgentError> {
            get(k)?
                .parse()
                .map_err(|_| bad(format!("header field {k} is not a count")))
        };
        let config = RunConfig::from_toml_str(toml_text).map_err(|e| bad(format!("embedded config: {}", e.message)))?;
        let task: TaskKind = get("task")?.parse().map_err(|_| bad("unknown task".into()))?;
        if task != config.task.kind {
            return Err(bad(format!("header task {task} disagrees with embedded config")));
        }
        let hidden: Vec<usize> = get("hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad("bad hidden widths".into())))
            .collect::<Result<_, _>>()?;
        let params: Vec<f64> = params_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.parse().map_err(|_| bad(format!("bad parameter {l:?}"))))
            .collect::<Result<_, _>>()?;
        if params.len() != num("n_params")? {
            return Err(bad(format!(
                "expected {} parameters, found {}",
                num("n_params")?,
                params.len()
            )));
        }
        let net = PolicyNet::from_params(num("obs_dim")?, num("n_heads")?, &hidden, params)?;
        Ok(Self {
            config,
            net,
            epoch: num("epoch")?,
            config_hash: get("config_hash")?.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}
