from .app import app, create_app
from .state import AppState

__all__ = ["app", "create_app", "AppState"]
