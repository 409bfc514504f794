"""PBD utilities."""
