//! Pipelined real-time reinforcement-learning agents.
//!
//! Layers of an actor network run as a temporal pipeline: on every tick each
//! stage consumes the buffers its inputs wrote on the previous tick, so a chain
//! of `K` stages acts on observations `K` ticks old. Temporal skip connections
//! shorten that path; history-augmented observations restore the Markov
//! property of the delayed decision process.

pub mod numerics;
pub mod bench;
pub mod envs;
pub mod pipeline;
pub mod regret;
pub mod rl;
