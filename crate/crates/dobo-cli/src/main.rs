fn main() {
    println!("dobo");
}
