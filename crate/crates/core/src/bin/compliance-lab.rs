use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COMPLIANCE_LAB_LOG_LEVEL", "warn")).init();
    compliance_lab::harness::main_with_args(std::env::args_os())
}
