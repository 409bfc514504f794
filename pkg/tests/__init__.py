"""PBD test suite."""
