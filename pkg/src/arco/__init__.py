"""arco: server-authoritative scene synchronization for collaborative
outdoor AR authoring - relay, spatial capture, annotations, deterministic
replay, and a scripted in-situ simulator."""

__version__ = "0.1.0"
