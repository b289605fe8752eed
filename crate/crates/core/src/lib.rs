//! Maternal-care SMS gateway: facility assignment, review reminders,
//! trimester advice and emergency dispatch behind a line protocol.

pub mod dispatch;
pub mod geo;
pub mod messaging;
pub mod registry;
pub mod scheduler;
pub mod service;
pub mod sim;
