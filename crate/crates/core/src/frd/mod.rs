//! Federated reinforcement distillation on cart-pole: A2C agents exchange
//! policy memories (raw or clustered into proxy states) or actor weights.

mod a2c;
mod cartpole;
mod memory;
mod protocol;

pub use a2c::{a2c_gradients, a2c_update, actor_dims, advantage, A2cAgent, A2cGradients, Transition, ACTIONS};
pub use cartpole::{CartPole, CartPoleParams, State, Step};
pub use memory::{
    build_proxy_memory, cluster_state, distill_loss, merge_global, ClusterConfig, DistillSource,
    ExperienceRecord, MergeWeighting, ProxyEntry, ProxyExperienceMemory, ProxyState,
    RawExperienceMemory,
};
pub use protocol::{
    distill, frl_payload_bytes, matched_payloads, play_episode, run_drl, DrlConfig, DrlRun,
    DrlScheme, ExchangeReport, Mission,
};
