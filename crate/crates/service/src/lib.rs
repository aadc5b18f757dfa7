//! Session server for human-in-the-loop training: a WebSocket stream of
//! world states and predicted rollouts out, takeover commands in.

pub mod error;
pub mod protocol;
pub mod server;
pub mod session;

pub use error::{ProtocolError, Result, ServiceError};
pub use server::{start, ServeOptions, ServerHandle, SessionResult, Status};
pub use session::{read_command_log, replay, write_command_log, LoggedCommand, Session};
