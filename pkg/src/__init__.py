# src/__init__.py
# Makes this folder a Python package.
# You can import from src like: from src.stopping import iterate_forest
