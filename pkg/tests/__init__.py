"""Tests package for the seclend-haircut engine."""
