#![allow(dead_code)]

use foresight_core::config::RunConfig;
use foresight_service::protocol::{client_command_schema, server_message_schema};
use jsonschema::Validator;
use serde_json::Value;

pub fn small(steps: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.trainer.total_steps = steps;
    cfg.trainer.eval_every = 100;
    cfg.trainer.eval_episodes = 2;
    cfg.trainer.resume_every = 0;
    cfg.trainer.seed = 9;
    cfg
}

pub fn server_validator() -> Validator {
    jsonschema::validator_for(&server_message_schema()).unwrap()
}

pub fn client_validator() -> Validator {
    jsonschema::validator_for(&client_command_schema()).unwrap()
}

pub fn assert_valid(v: &Validator, msg: &Value) {
    let errors: Vec<String> = v.iter_errors(msg).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{msg}\n{errors:#?}");
}
