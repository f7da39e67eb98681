"""
Blockcraft test suite.

Run tests with: pytest tests/
"""
