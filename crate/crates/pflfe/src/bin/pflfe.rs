fn main() {
    // placeholder until the cli module lands
}
