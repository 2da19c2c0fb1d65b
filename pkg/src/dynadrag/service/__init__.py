from dynadrag.service.app import create_app
from dynadrag.service.store import ServiceSettings, SessionStore

__all__ = ["ServiceSettings", "SessionStore", "create_app"]
