fn main() {
    std::process::exit(ddstab::cli::run_from(std::env::args_os()));
}
