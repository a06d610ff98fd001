"""Deterministic simulator for geo-distributed atomic commit (D2PC and layered 2PC)."""
from .cluster import Cluster
from .messages import ABORT, COMMIT, Outcome, TransactionId, Vote
from .simnet import TABLE1, THREE_DC, FailureEvent, LatencyMatrix, NodeId, Simulator, Trace
from .topology import Directory, ShardPlacement, Topology, default_placement

__all__ = ["Cluster", "ABORT", "COMMIT", "Outcome", "TransactionId", "Vote", "TABLE1",
           "THREE_DC", "FailureEvent", "LatencyMatrix", "NodeId", "Simulator", "Trace",
           "Directory", "ShardPlacement", "Topology", "default_placement"]
