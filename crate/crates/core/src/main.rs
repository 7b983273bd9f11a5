fn main() {
    std::process::exit(tutor_core::service::cli::cli_dispatch(std::env::args_os()));
}
