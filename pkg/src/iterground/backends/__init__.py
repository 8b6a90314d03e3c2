from .base import BackendReply, GroundingBackend, IterationContext
from .cache import ResponseCache, cache_key
from .oracle import NoisyOracleModel, OutOfViewPolicy, oracle_predict
from .parsing import CoordinateScale, parse_point
from .remote import DEFAULT_PROMPT, RemoteBackend, RemoteBackendConfig, remote_predict
from .scripted import ScriptedBackend

__all__ = [
    "BackendReply", "GroundingBackend", "IterationContext", "ResponseCache", "cache_key",
    "NoisyOracleModel", "OutOfViewPolicy", "oracle_predict", "CoordinateScale",
    "parse_point", "DEFAULT_PROMPT", "RemoteBackend", "RemoteBackendConfig",
    "remote_predict", "ScriptedBackend",
]
