"""Report artifacts: the destabilizer PDF certificate."""
