//! Holds the acceptance suite in `tests/acceptance.rs`. It is a separate
//! package so that it runs after every other test target in the workspace.
