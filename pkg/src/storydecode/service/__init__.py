"""HTTP face of the package: request/response schemas and the app."""

from .app import create_app

__all__ = ["create_app"]
