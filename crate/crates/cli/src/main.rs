fn main() {
    std::process::exit(limetrain_cli::dispatch(std::env::args()));
}
