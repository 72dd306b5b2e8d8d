"""HTTP service exposing the harness operations."""
from .app import app, create_app

__all__ = ["app", "create_app"]
