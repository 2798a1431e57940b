"""Test package for mam.

This package contains tests for the mam module.
"""
