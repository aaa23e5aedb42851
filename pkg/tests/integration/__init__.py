"""
Integration tests for component interactions and workflows.
"""

