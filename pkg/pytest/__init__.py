"""unittest-backed stand-in used when pytest is not installed."""
