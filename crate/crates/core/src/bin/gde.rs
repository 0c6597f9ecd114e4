fn main() {
    std::process::exit(gde_core::cli::dispatch(std::env::args_os()));
}
