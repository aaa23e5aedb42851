"""
Utility modules.

This package contains:
- Configuration loading
- Logging setup
- Data validation
"""
