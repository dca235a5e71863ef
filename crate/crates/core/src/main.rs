fn main() {
    println!("lff: not wired up yet");
}
