//! Command-line front end for `mishape`.
//!
//! Exit codes: 0 on success, 1 on runtime or numeric failure, 2 on usage or
//! configuration errors.

pub mod args;
pub mod commands;
pub mod verify;

pub use args::Cli;
pub use commands::run;

/// Process exit code for a command outcome.
pub fn exit_code(result: &mishape::Result<()>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_usage() => 2,
        Err(_) => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mishape::Error;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Ok(())), 0);
        assert_eq!(exit_code(&Err(Error::Config("bad".into()))), 2);
        assert_eq!(exit_code(&Err(Error::Numeric("nan".into()))), 1);
    }
}
