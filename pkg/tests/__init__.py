"""Unit test package for koopman_isc."""
