use crate::error::Result;
#[allow(dead_code)]
pub fn parse_and_dispatch<I: Iterator<Item = String>>(_argv: I) -> i32 { 0 }
#[allow(dead_code)]
fn _placeholder() -> Result<()> { Ok(()) }
