fn main() {
    std::process::exit(cdk::cli::main());
}
