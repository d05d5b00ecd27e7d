fn main() {
    std::process::exit(bolus_app::cli::run(std::env::args_os()));
}
