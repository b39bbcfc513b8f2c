from .app import create_app, result_to_json, serve, video_result_to_json
from .config import ServiceConfig, load_config
from .jobs import Job, JobManager

__all__ = [
    "Job",
    "JobManager",
    "ServiceConfig",
    "create_app",
    "load_config",
    "result_to_json",
    "serve",
    "video_result_to_json",
]
