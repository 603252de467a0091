pub mod cli;
pub mod cvar;
pub mod dispatch;
pub mod flexload;
pub mod network;
pub mod oracle;
pub mod qp;
pub mod robust;
pub mod sixbus;
