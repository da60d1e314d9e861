from .fti import (FRESH_START, FTI, CheckpointError, CheckpointFailed, DuplicateId, FTIRank,
                  ProtectedObject, Status, Unrecoverable)
from .rs import ReedSolomon, TooManyErasures, rs_decode, rs_encode
from .store import (CheckpointMeta, CheckpointStore, CorruptCheckpoint, Level, StoreError,
                    groups, partner)

__all__ = [
    "FRESH_START", "FTI", "CheckpointError", "CheckpointFailed", "DuplicateId", "FTIRank",
    "ProtectedObject", "Status", "Unrecoverable", "ReedSolomon", "TooManyErasures",
    "rs_decode", "rs_encode", "CheckpointMeta", "CheckpointStore", "CorruptCheckpoint",
    "Level", "StoreError", "groups", "partner",
]
