"""
Test suite for the MDC segmentation pipeline.

This package contains unit and integration tests.
"""
