//! Binary entry point. All behavior lives in [`selfdistill::cli`].

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    std::process::exit(selfdistill::cli::run());
}
