"""
Shuffle manager: template registry, record log, clients and TCP service.
"""

from app.manager.client import LocalManagerClient, ManagerClient, RemoteManagerClient
from app.manager.store import Record, RecordKind, ShuffleManager, WorkerStatus
from app.manager.worker import ShuffleWorker
