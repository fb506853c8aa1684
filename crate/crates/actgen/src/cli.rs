//! Command-line dispatcher.

pub fn run() -> i32 {
    2
}
