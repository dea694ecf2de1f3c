"""Decentralized proximity tracing: three broadcast designs, backend, simulator."""

from .backend import Backend, Federation, PublishedBatch
from .crypto import EpochParams
from .cuckoo import CuckooFilter
from .device import Device, MatchResult
from .exposure import ExposureConfig, decide_notification, daily_scores
from .sharing import SharingParams
from .wire import Design

__version__ = "0.1.0"

__all__ = [
    "Backend", "CuckooFilter", "Design", "Device", "EpochParams", "ExposureConfig", "Federation",
    "MatchResult", "PublishedBatch", "SharingParams", "daily_scores", "decide_notification",
]
