fn main() {
    std::process::exit(nurseforge::cli::dispatch(std::env::args_os()));
}
