/// Canonical concept key: lowercase, punctuation replaced by spaces, trimmed,
/// internal whitespace collapsed to single spaces.
pub fn canonicalize(s: &str) -> String {
    let lowered: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(canonicalize("  Calcific   Deposits. "), "calcific deposits");
        assert_eq!(canonicalize("Orange-red lesion"), "orange red lesion");
        assert_eq!(canonicalize("!!!"), "");
        assert_eq!(canonicalize("Drusen\t(soft)"), "drusen soft");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = canonicalize(&s);
            prop_assert_eq!(canonicalize(&once), once);
        }
    }
}
