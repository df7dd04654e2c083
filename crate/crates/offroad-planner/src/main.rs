fn main() {
    env_logger::init();
    let code = offroad_planner::cli::dispatch(std::env::args());
    std::process::exit(code);
}
