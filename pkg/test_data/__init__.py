"""Sample geometries and configurations for tests and examples."""
